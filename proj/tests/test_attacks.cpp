#include "doctest.h"
#include "test_support.hpp"

#include "advgnn/attacks.hpp"
#include "advgnn/error.hpp"

using namespace advgnn;

namespace {

Network linear_net(const Matrix& w, const Vector& b) { return Network({Layer{w, b}}); }

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_CASE("projection clamps to ball intersected with box") {
  const PerturbationBall ball(vec({0.5, 0.5}), 0.3, Vector::Zero(2), Vector::Ones(2));
  const Vector p = project(vec({0.9, 0.2}), ball);
  CHECK(p[0] == doctest::Approx(0.8));
  CHECK(p[1] == 0.2);
  CHECK(project(p, ball) == p);

  const PerturbationBall edge(vec({0.05, 0.95}), 0.2, Vector::Zero(2), Vector::Ones(2));
  CHECK(edge.lower()[0] == 0.0);
  CHECK(edge.upper()[1] == 1.0);
  CHECK_THROWS_AS(PerturbationBall(vec({2.0}), 0.1, Vector::Zero(1), Vector::Ones(1)), ConfigError);
  CHECK_THROWS_AS(PerturbationBall(vec({0.5}), -0.1, Vector::Zero(1), Vector::Ones(1)), ConfigError);
}

TEST_CASE("projection is the closest feasible point") {
  Rng rng = make_rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const PerturbationBall ball(testing::uniform_vector(rng, 4), 0.2, Vector::Zero(4), Vector::Ones(4));
    const Vector x = testing::uniform_vector(rng, 4, -1, 2);
    const Vector p = ball.project(x);
    CHECK(testing::in_feasible_set(ball, p));
    const double dist = (p - x).lpNorm<Eigen::Infinity>();
    for (int s = 0; s < 1000; ++s) {
      const Vector z = ball.sample(rng);
      CHECK(dist <= (z - x).lpNorm<Eigen::Infinity>() + 1e-12);
    }
  }
}

TEST_CASE("fgsm step on a linear net") {
  Matrix w(2, 2);
  w << 1, 2, 3, 1;
  const Network net = linear_net(w, Vector::Zero(2));
  const Vector out = fgsm_step(net, vec({0.5, 0.5}), 0, 1, 0.1);
  CHECK(out[0] == doctest::Approx(0.6));
  CHECK(out[1] == doctest::Approx(0.4));

  const Network flat = linear_net(Matrix::Zero(2, 2), Vector::Zero(2));
  CHECK(fgsm_step(flat, vec({0.3, 0.7}), 0, 1, 0.1) == vec({0.3, 0.7}));

  Rng rng = make_rng(9);
  const Network r = testing::random_network(rng, {6, 8, 4});
  const Vector x = testing::uniform_vector(rng, 6);
  const Vector d = fgsm_step(r, x, 0, 3, 0.25) - x;
  const Vector g = input_gradient(r, x, 0, 3);
  for (Index i = 0; i < 6; ++i) {
    const double expect = g[i] > 0 ? 0.25 : (g[i] < 0 ? -0.25 : 0.0);
    CHECK(d[i] == doctest::Approx(expect).epsilon(1e-15));
  }
}

TEST_CASE("pgd succeeds when the optimal vertex is adversarial") {
  Rng rng = make_rng(13);
  int tested = 0;
  while (tested < 10) {
    const Network net = testing::random_network(rng, {4, 3});
    const auto prop = testing::random_property(net, rng, 0.3);
    // the loss is linear: its maximum over the box sits at a vertex
    const Vector w = net.layer(0).weight.row(prop.y_tar) - net.layer(0).weight.row(prop.y);
    Vector best(4);
    for (Index i = 0; i < 4; ++i) best[i] = w[i] >= 0 ? prop.ball.upper()[i] : prop.ball.lower()[i];
    if (adversarial_loss(net, best, prop.y, prop.y_tar) <= 1e-6) continue;
    PgdConfig cfg;
    cfg.steps = 100;
    cfg.alpha = 0.01;
    cfg.run.seed = static_cast<std::uint64_t>(tested);
    const AttackOutcome out = pgd_attack(net, prop, cfg);
    CHECK(out.success);
    CHECK(out.iterations_used <= 100);
    CHECK(adversarial_loss(net, *out.adversarial_point, prop.y, prop.y_tar) >= 0.0);
    ++tested;
  }
}

TEST_CASE("pgd with zero epsilon fails and reports the center loss") {
  Rng rng = make_rng(4);
  const Network net = testing::random_network(rng, {3, 5, 3});
  const auto prop = testing::random_property(net, rng, 0.0);
  PgdConfig cfg;
  cfg.steps = 10;
  cfg.run.restarts = 3;
  const AttackOutcome out = pgd_attack(net, prop, cfg);
  CHECK_FALSE(out.success);
  CHECK(out.final_loss == adversarial_loss(net, prop.ball.center(), prop.y, prop.y_tar));
  CHECK(out.restarts_used == 3);
  CHECK(out.iterations_used == 30);
}

TEST_CASE("seeded attacks are deterministic") {
  Rng rng = make_rng(8);
  const Network net = testing::random_network(rng, {5, 8, 4});
  const auto prop = testing::random_property(net, rng, 0.05);
  std::vector<Vector> a, b;
  PgdConfig cfg;
  cfg.run.seed = 42;
  cfg.run.restarts = 2;
  cfg.run.observer = [&](const Vector& x) { a.push_back(x); };
  const AttackOutcome first = pgd_attack(net, prop, cfg);
  cfg.run.observer = [&](const Vector& x) { b.push_back(x); };
  const AttackOutcome second = pgd_attack(net, prop, cfg);
  CHECK(a == b);
  CHECK(first.success == second.success);
  CHECK(first.final_loss == second.final_loss);
  CHECK(first.iterations_used == second.iterations_used);
  CHECK(first.restarts_used == second.restarts_used);
}

TEST_CASE("mi-fgsm+ with zero momentum is pgd") {
  Rng rng = make_rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    const Network net = testing::random_network(rng, {4, 6, 3});
    const auto prop = testing::random_property(net, rng, 0.1);
    std::vector<Vector> a, b;
    PgdConfig pgd;
    pgd.alpha = 0.02;
    pgd.steps = 30;
    pgd.run.seed = static_cast<std::uint64_t>(trial);
    pgd.run.observer = [&](const Vector& x) { a.push_back(x); };
    MiFgsmConfig mi;
    mi.alpha = 0.02;
    mi.steps = 30;
    mi.mu = 0.0;
    mi.run = pgd.run;
    mi.run.observer = [&](const Vector& x) { b.push_back(x); };
    pgd_attack(net, prop, pgd);
    mi_fgsm_plus(net, prop, mi);
    CHECK(a == b);
  }
}

TEST_CASE("momentum accumulates normalized gradients") {
  Vector g = Vector::Zero(1);
  const Vector grad = vec({2.0});
  g = momentum_update(g, grad, 0.5);
  CHECK(g[0] == 1.0);
  g = momentum_update(g, grad, 0.5);
  CHECK(g[0] == 1.5);
  g = momentum_update(g, grad, 0.5);
  CHECK(g[0] == 1.75);
  g = momentum_update(g, Vector::Zero(1), 0.5);
  CHECK(g[0] == 0.875);
}

TEST_CASE("mi-fgsm+ with step eps/T from the center never leaves the ball") {
  Rng rng = make_rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = testing::random_network(rng, {5, 7, 3});
    const auto prop = testing::random_property(net, rng, 0.1);
    MiFgsmConfig cfg;
    cfg.steps = 20;
    cfg.alpha = 0.1 / 20;
    cfg.run.start = prop.ball.center();
    cfg.run.observer = [&](const Vector& x) {
      CHECK((x - prop.ball.center()).lpNorm<Eigen::Infinity>() <= 0.1 + 1e-15);
    };
    mi_fgsm_plus(net, prop, cfg);
  }
}

TEST_CASE("c&w hinge and objective") {
  CHECK(cw_hinge(vec({0.3, -0.1}), 0.2) == doctest::Approx(0.1));
  Matrix w(2, 1);
  w << 1.0, -1.0;
  const Network net = linear_net(w, Vector::Zero(2));
  const AttackProperty prop{PerturbationBall(vec({0.5}), 0.5, Vector::Zero(1), Vector::Ones(1)), 1, 0, {}};
  // center already adversarial: f_0 = 0.5 > f_1 = -0.5
  const AttackOutcome out = cw_attack(net, prop, {});
  CHECK(out.success);
  CHECK(*out.adversarial_point == prop.ball.center());
  CHECK(out.iterations_used == 0);
  // where the target wins only the hinge is left
  CHECK(cw_objective(net, prop, vec({0.4}), 10.0, 0.2) == doctest::Approx(0.2));
}

TEST_CASE("c&w finds an easy attack") {
  Matrix w(2, 2);
  w << 1, 0, 0, 1;
  Vector b(2);
  b << 0.05, 0.0;
  const Network net = linear_net(w, b);
  const AttackProperty prop{PerturbationBall(vec({0.5, 0.5}), 0.2, Vector::Zero(2), Vector::Ones(2)), 0, 1, {}};
  CwConfig cfg;
  cfg.alpha = 1e-2;
  cfg.c_init = 1.0;
  const AttackOutcome out = cw_attack(net, prop, cfg);
  REQUIRE(out.success);
  CHECK(prop.ball.contains(*out.adversarial_point));
  CHECK(adversarial_loss(net, *out.adversarial_point, 0, 1) >= 0.0);
}

TEST_CASE("deadline in the past times out immediately") {
  Rng rng = make_rng(6);
  const Network net = testing::random_network(rng, {3, 4, 3});
  const auto prop = testing::random_property(net, rng, 0.1);
  PgdConfig cfg;
  cfg.run.deadline = Clock::now() - std::chrono::seconds(1);
  const AttackOutcome out = pgd_attack(net, prop, cfg);
  CHECK(out.timed_out);
  CHECK_FALSE(out.success);
  CHECK(out.iterations_used == 0);
  CwConfig cw;
  cw.deadline = cfg.run.deadline;
  CHECK(cw_attack(net, prop, cw).timed_out);
}

TEST_CASE("unlimited restarts stop at the deadline") {
  Rng rng = make_rng(7);
  const Network net = testing::random_network(rng, {3, 4, 3});
  const auto prop = testing::random_property(net, rng, 0.0);
  PgdConfig cfg;
  cfg.steps = 5;
  cfg.run.restarts = 0;
  CHECK_THROWS_AS(pgd_attack(net, prop, cfg), ConfigError);
  cfg.run.deadline = deadline_after(0.05);
  const AttackOutcome out = pgd_attack(net, prop, cfg);
  CHECK(out.timed_out);
  CHECK(out.restarts_used > 1);
}

TEST_CASE("a successful start stays successful at a larger epsilon") {
  Rng rng = make_rng(15);
  int checked = 0;
  for (int trial = 0; trial < 50 && checked < 10; ++trial) {
    const Network net = testing::random_network(rng, {4, 8, 3});
    const auto prop = testing::random_property(net, rng, 0.1);
    PgdConfig cfg;
    cfg.run.restarts = 5;
    cfg.run.seed = static_cast<std::uint64_t>(trial);
    const AttackOutcome small = pgd_attack(net, prop, cfg);
    if (!small.success) continue;
    AttackProperty bigger = prop;
    bigger.ball = prop.ball.with_epsilon(0.2);
    cfg.run.start = small.adversarial_point;
    const AttackOutcome big = pgd_attack(net, bigger, cfg);
    CHECK(big.success);
    CHECK(big.iterations_used == 0);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("invalid configurations are rejected") {
  Rng rng = make_rng(1);
  const Network net = testing::random_network(rng, {3, 3});
  auto prop = testing::random_property(net, rng, 0.1);
  PgdConfig pgd;
  pgd.alpha = 0.0;
  CHECK_THROWS_AS(pgd_attack(net, prop, pgd), ConfigError);
  pgd.alpha = 0.1;
  pgd.steps = 0;
  CHECK_THROWS_AS(pgd_attack(net, prop, pgd), ConfigError);
  MiFgsmConfig mi;
  mi.mu = -1.0;
  CHECK_THROWS_AS(mi_fgsm_plus(net, prop, mi), ConfigError);
  CwConfig cw;
  cw.gamma_tau = 1.5;
  CHECK_THROWS_AS(cw_attack(net, prop, cw), ConfigError);
  prop.y_tar = prop.y;
  CHECK_THROWS_AS(pgd_attack(net, prop, {}), ConfigError);
}

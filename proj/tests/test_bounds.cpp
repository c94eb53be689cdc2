#include "doctest.h"
#include "test_support.hpp"

#include "advgnn/bounds.hpp"
#include "advgnn/error.hpp"

#include <nlohmann/json.hpp>

using namespace advgnn;

namespace {

template <class F>
void for_each_sample(const Network& net, const PerturbationBall& ball, Rng& rng, int n, F&& f) {
  for (int s = 0; s < n; ++s) f(forward(net, ball.sample(rng)));
}

std::size_t violations(const Network& net, const PerturbationBall& ball, const LayerBounds& b,
                       Rng& rng, int samples, double tol) {
  std::size_t bad = 0;
  for_each_sample(net, ball, rng, samples, [&](const ForwardTrace& t) {
    for (std::size_t k = 0; k < t.pre.size(); ++k)
      for (Index j = 0; j < t.pre[k].size(); ++j)
        if (t.pre[k][j] < b.lower[k][j] - tol || t.pre[k][j] > b.upper[k][j] + tol) ++bad;
  });
  return bad;
}

}  // namespace

TEST_CASE("interval arithmetic by hand") {
  Matrix w(1, 2);
  w << 1, -1;
  Matrix w2(1, 1);
  w2 << 1;
  const Network net({Layer{w, Vector::Zero(1)}, Layer{w2, Vector::Zero(1)}});
  Vector c(2);
  c << 0.5, 0.5;
  const PerturbationBall ball = PerturbationBall::around(net, c, 1.0);
  const LayerBounds b = ibp(net, ball);
  CHECK(b.lower[0][0] == -1.0);
  CHECK(b.upper[0][0] == 1.0);
  // relu([-1, 1]) = [0, 1]
  CHECK(b.lower[1][0] == 0.0);
  CHECK(b.upper[1][0] == 1.0);
}

TEST_CASE("ibp agrees with the scalar reference") {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = testing::random_architecture(rng, 4, 10);
    const auto prop = testing::random_property(net, rng, 0.1);
    const LayerBounds b = ibp(net, prop.ball);
    const auto ref = testing::reference_ibp(net, prop.ball);
    for (std::size_t k = 0; k < net.num_layers(); ++k)
      for (Index j = 0; j < b.lower[k].size(); ++j) {
        CHECK(std::abs(b.lower[k][j] - ref.lower[k][static_cast<std::size_t>(j)]) < 1e-12);
        CHECK(std::abs(b.upper[k][j] - ref.upper[k][static_cast<std::size_t>(j)]) < 1e-12);
      }
  }
}

TEST_CASE("zero epsilon gives the exact pre-activations") {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = testing::random_architecture(rng, 4, 12);
    const auto prop = testing::random_property(net, rng, 0.0);
    const ForwardTrace t = forward(net, prop.ball.center());
    for (const LayerBounds& b : {ibp(net, prop.ball), wk_bounds(net, prop.ball), best_bounds(net, prop.ball)}) {
      for (std::size_t k = 0; k < t.pre.size(); ++k) {
        CHECK((b.lower[k] - t.pre[k]).lpNorm<Eigen::Infinity>() <= 1e-12);
        CHECK((b.upper[k] - t.pre[k]).lpNorm<Eigen::Infinity>() <= 1e-12);
      }
    }
  }
}

TEST_CASE("wk layer-1 bounds are the interval bounds") {
  Rng rng = make_rng(6);
  const Network net = testing::random_network(rng, {5, 7, 3});
  const auto prop = testing::random_property(net, rng, 0.2);
  const LayerBounds a = ibp(net, prop.ball);
  const LayerBounds b = wk_bounds(net, prop.ball);
  CHECK(a.lower[0] == b.lower[0]);
  CHECK(a.upper[0] == b.upper[0]);
}

TEST_CASE("stable networks get exact affine bounds") {
  // positive weights and biases: every relu passes
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Layer> layers;
    std::vector<Index> dims{3, 4, 4, 2};
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      Matrix w = Matrix::NullaryExpr(dims[i + 1], dims[i], [&] {
        return std::uniform_real_distribution<double>(0, 1)(rng);
      });
      layers.push_back({w, Vector::Constant(dims[i + 1], 1.0)});
    }
    const Network net(layers);
    const auto prop = testing::random_property(net, rng, 0.1);
    const LayerBounds b = wk_bounds(net, prop.ball);
    // exact range of the composed affine map over the box
    Matrix m = Matrix::Identity(3, 3);
    Vector off = Vector::Zero(3);
    for (std::size_t k = 0; k < net.num_layers(); ++k) {
      m = net.layer(k).weight * m;
      off = net.layer(k).weight * off + net.layer(k).bias;
      REQUIRE(ibp(net, prop.ball).lower[k].minCoeff() > 0.0);
      for (Index j = 0; j < m.rows(); ++j) {
        double lo = off[j];
        double hi = off[j];
        for (Index i = 0; i < 3; ++i) {
          lo += std::min(m(j, i) * prop.ball.lower()[i], m(j, i) * prop.ball.upper()[i]);
          hi += std::max(m(j, i) * prop.ball.lower()[i], m(j, i) * prop.ball.upper()[i]);
        }
        CHECK(b.lower[k][j] == doctest::Approx(lo).epsilon(1e-12));
        CHECK(b.upper[k][j] == doctest::Approx(hi).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("stable diagonal networks: wk, ibp and exact coincide") {
  Vector d1(2), d2(2);
  d1 << 2.0, -3.0;
  d2 << 0.5, 1.5;
  const Network net({Layer{d1.asDiagonal().toDenseMatrix(), Vector::Constant(2, 5.0)},
                     Layer{d2.asDiagonal().toDenseMatrix(), Vector::Zero(2)}});
  Vector c(2);
  c << 0.4, 0.6;
  const PerturbationBall ball = PerturbationBall::around(net, c, 0.1);
  const LayerBounds a = ibp(net, ball);
  const LayerBounds b = wk_bounds(net, ball);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK((a.lower[k] - b.lower[k]).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((a.upper[k] - b.upper[k]).lpNorm<Eigen::Infinity>() < 1e-12);
  }
  CHECK(b.lower[1][0] == doctest::Approx(0.5 * (2.0 * 0.3 + 5.0)));
  CHECK(b.upper[1][1] == doctest::Approx(1.5 * (-3.0 * 0.5 + 5.0)));
}

TEST_CASE("2-2-1 bounds against a dense grid") {
  Rng rng = make_rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const Network net = testing::random_network(rng, {2, 2, 1}, 2.0);
    const Vector c = testing::uniform_vector(rng, 2);
    const PerturbationBall ball = PerturbationBall::around(net, c, 0.3);
    const LayerBounds b = best_bounds(net, ball);
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    Vector p(2);
    for (int i = 0; i <= 400; ++i)
      for (int j = 0; j <= 400; ++j) {
        p[0] = ball.lower()[0] + (ball.upper()[0] - ball.lower()[0]) * i / 400.0;
        p[1] = ball.lower()[1] + (ball.upper()[1] - ball.lower()[1]) * j / 400.0;
        const double v = static_cast<double>(testing::reference_forward(net, p).back()[0]);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    CHECK(lo - b.lower[1][0] >= -1e-9);
    CHECK(b.upper[1][0] - hi >= -1e-9);
  }
}

TEST_CASE("bounds contain sampled traces") {
  Rng rng = make_rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = testing::random_architecture(rng, 4, 16);
    std::uniform_real_distribution<double> eps(0.0, 0.3);
    const auto prop = testing::random_property(net, rng, eps(rng));
    CHECK(violations(net, prop.ball, ibp(net, prop.ball), rng, 2000, 1e-9) == 0);
    CHECK(violations(net, prop.ball, wk_bounds(net, prop.ball), rng, 2000, 1e-9) == 0);
    CHECK(violations(net, prop.ball, best_bounds(net, prop.ball), rng, 2000, 1e-9) == 0);
  }
}

TEST_CASE("bounds grow with epsilon") {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = testing::random_architecture(rng, 4, 12);
    const auto prop = testing::random_property(net, rng, 0.05);
    const PerturbationBall big = prop.ball.with_epsilon(0.15);
    for (auto method : {&ibp, &wk_bounds}) {
      const LayerBounds s = method(net, prop.ball);
      const LayerBounds l = method(net, big);
      for (std::size_t k = 0; k < s.num_layers(); ++k) {
        CHECK((s.lower[k] - l.lower[k]).minCoeff() >= -1e-12);
        CHECK((l.upper[k] - s.upper[k]).minCoeff() >= -1e-12);
      }
    }
  }
}

TEST_CASE("tightest merge") {
  LayerBounds a{{Vector::Constant(1, -2.0)}, {Vector::Constant(1, 3.0)}};
  LayerBounds b{{Vector::Constant(1, -1.0)}, {Vector::Constant(1, 4.0)}};
  const LayerBounds t = tightest(a, b);
  CHECK(t.lower[0][0] == -1.0);
  CHECK(t.upper[0][0] == 3.0);
  const LayerBounds same = tightest(a, a);
  CHECK(same.lower[0] == a.lower[0]);
  CHECK(same.upper[0] == a.upper[0]);
  LayerBounds c{{Vector::Constant(1, 5.0)}, {Vector::Constant(1, 6.0)}};
  CHECK_THROWS_AS(tightest(a, c), SoundnessError);
  LayerBounds wrong{{Vector::Zero(2)}, {Vector::Zero(2)}};
  CHECK_THROWS_AS(tightest(a, wrong), ShapeError);
}

TEST_CASE("bounds json layout") {
  Rng rng = make_rng(12);
  const Network net = testing::random_network(rng, {3, 4, 2});
  const auto prop = testing::random_property(net, rng, 0.1);
  const nlohmann::json j = bounds_to_json(ibp(net, prop.ball));
  REQUIRE(j.at("layers").size() == 2);
  CHECK(j["layers"][0]["layer"] == 1);
  CHECK(j["layers"][1]["lb"].size() == 2);
}

#include "advgnn/attacks.hpp"

#include "advgnn/error.hpp"
#include "advgnn/json_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>

namespace advgnn {

Deadline deadline_after(double seconds) {
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(
                            std::chrono::duration<double>(seconds));
}

bool expired(const Deadline& deadline) { return deadline && Clock::now() >= *deadline; }

nlohmann::json outcome_to_json(const AttackOutcome& outcome) {
  nlohmann::json doc = {{"success", outcome.success},
                        {"final_loss", outcome.final_loss},
                        {"iterations", outcome.iterations_used},
                        {"restarts", outcome.restarts_used},
                        {"wall_time", outcome.wall_time},
                        {"timed_out", outcome.timed_out}};
  if (outcome.adversarial_point)
    doc["adversarial_point"] = json_io::vector_to_json(*outcome.adversarial_point);
  return doc;
}

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

PerturbationBall::PerturbationBall(Vector center, double epsilon, Vector box_lo, Vector box_hi)
    : center_(std::move(center)),
      epsilon_(epsilon),
      box_lo_(std::move(box_lo)),
      box_hi_(std::move(box_hi)) {
  if (box_lo_.size() != center_.size() || box_hi_.size() != center_.size())
    throw ShapeError("perturbation ball: box and center dimensions differ");
  if (!(epsilon_ >= 0.0) || !std::isfinite(epsilon_))
    throw ConfigError("perturbation ball: epsilon must be finite and >= 0");
  lower_ = (center_.array() - epsilon_).matrix().cwiseMax(box_lo_);
  upper_ = (center_.array() + epsilon_).matrix().cwiseMin(box_hi_);
  for (Index i = 0; i < center_.size(); ++i) {
    if (!(lower_[i] <= upper_[i]))
      throw ConfigError("perturbation ball: empty feasible set at coordinate " + std::to_string(i));
  }
}

PerturbationBall PerturbationBall::around(const Network& net, Vector center, double epsilon) {
  if (center.size() != net.input_dim())
    throw ShapeError("perturbation ball: center has " + std::to_string(center.size()) +
                     " entries, network expects " + std::to_string(net.input_dim()));
  return PerturbationBall(std::move(center), epsilon, net.input_lo(), net.input_hi());
}

bool PerturbationBall::contains(const Vector& x) const {
  if (x.size() != center_.size()) return false;
  return (x.array() >= lower_.array()).all() && (x.array() <= upper_.array()).all();
}

Vector PerturbationBall::project(const Vector& x) const {
  if (x.size() != center_.size()) throw ShapeError("project: dimension mismatch");
  return x.cwiseMax(lower_).cwiseMin(upper_);
}

Vector PerturbationBall::sample(Rng& rng) const {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector out(center_.size());
  for (Index i = 0; i < out.size(); ++i) {
    const double u = unit(rng);
    out[i] = std::min(upper_[i], lower_[i] + (upper_[i] - lower_[i]) * u);
  }
  return out;
}

PerturbationBall PerturbationBall::with_epsilon(double epsilon) const {
  return PerturbationBall(center_, epsilon, box_lo_, box_hi_);
}

Vector project(const Vector& x, const PerturbationBall& ball) { return ball.project(x); }

void validate(const Network& net, const AttackProperty& prop) {
  if (prop.ball.dim() != net.input_dim())
    throw ShapeError("property: ball has dimension " + std::to_string(prop.ball.dim()) +
                     ", network expects " + std::to_string(net.input_dim()));
  check_classes(net, prop.y, prop.y_tar);
}

PgdConfig pgd_methods_preset() {
  PgdConfig cfg;
  cfg.alpha = 0.1;
  return cfg;
}

Vector fgsm_step(const Network& net, const Vector& x, Index y, Index y_tar, double step) {
  if (!(step >= 0.0)) throw ConfigError("fgsm: step must be >= 0");
  return x + step * sign(input_gradient(net, x, y, y_tar));
}

AttackOutcome run_iterative(const Network& net, const AttackProperty& prop, long steps,
                            const RunLimits& limits, Stepper& stepper,
                            Clock::time_point started) {
  validate(net, prop);
  if (steps < 1) throw ConfigError("attack: steps must be >= 1");
  if (limits.restarts < 0) throw ConfigError("attack: restarts must be >= 0");
  if (limits.restarts == 0 && !limits.deadline)
    throw ConfigError("attack: unlimited restarts need a deadline");

  AttackOutcome out;
  out.final_loss = -std::numeric_limits<double>::infinity();
  auto finish = [&]() {
    out.wall_time = seconds_since(started);
    return out;
  };

  if (expired(limits.deadline)) {
    out.timed_out = true;
    out.final_loss = adversarial_loss(net, prop.ball.project(prop.ball.center()), prop.y, prop.y_tar);
    return finish();
  }

  Rng rng = make_rng(limits.seed);
  for (long r = 0; limits.restarts == 0 || r < limits.restarts; ++r) {
    if (expired(limits.deadline)) {
      out.timed_out = true;
      return finish();
    }
    Vector x = (r == 0 && limits.start) ? prop.ball.project(*limits.start) : prop.ball.sample(rng);
    ++out.restarts_used;
    stepper.reset();
    for (long t = 0;; ++t) {
      if (limits.observer) limits.observer(x);
      const LossGradient lg = loss_and_gradient(net, x, prop.y, prop.y_tar);
      out.final_loss = std::max(out.final_loss, lg.loss);
      if (lg.loss >= 0.0) {
        out.success = true;
        out.adversarial_point = std::move(x);
        out.final_loss = lg.loss;
        return finish();
      }
      if (t == steps) break;
      if (expired(limits.deadline)) {
        out.timed_out = true;
        return finish();
      }
      x = stepper.step(x, lg);
      ++out.iterations_used;
    }
  }
  return finish();
}

namespace {

class SignStepper final : public Stepper {
 public:
  SignStepper(const PerturbationBall& ball, double alpha) : ball_(ball), alpha_(alpha) {}
  Vector step(const Vector& x, const LossGradient& lg) override {
    return ball_.project(x + alpha_ * sign(lg.gradient));
  }

 private:
  const PerturbationBall& ball_;
  double alpha_;
};

class MomentumStepper final : public Stepper {
 public:
  MomentumStepper(const PerturbationBall& ball, double alpha, double mu)
      : ball_(ball), alpha_(alpha), mu_(mu) {}
  void reset() override { momentum_ = Vector::Zero(ball_.dim()); }
  Vector step(const Vector& x, const LossGradient& lg) override {
    momentum_ = momentum_update(momentum_, lg.gradient, mu_);
    return ball_.project(x + alpha_ * sign(momentum_));
  }

 private:
  const PerturbationBall& ball_;
  double alpha_;
  double mu_;
  Vector momentum_;
};

}  // namespace

Vector momentum_update(const Vector& momentum, const Vector& gradient, double mu) {
  const double norm = gradient.lpNorm<1>();
  if (norm > 0.0) return mu * momentum + gradient / norm;
  return mu * momentum;
}

AttackOutcome pgd_attack(const Network& net, const AttackProperty& prop, const PgdConfig& cfg) {
  const auto started = Clock::now();
  if (!(cfg.alpha > 0.0)) throw ConfigError("pgd: alpha must be > 0");
  SignStepper stepper(prop.ball, cfg.alpha);
  return run_iterative(net, prop, cfg.steps, cfg.run, stepper, started);
}

AttackOutcome mi_fgsm_plus(const Network& net, const AttackProperty& prop,
                           const MiFgsmConfig& cfg) {
  const auto started = Clock::now();
  if (!(cfg.alpha > 0.0)) throw ConfigError("mi-fgsm+: alpha must be > 0");
  if (!(cfg.mu >= 0.0)) throw ConfigError("mi-fgsm+: mu must be >= 0");
  MomentumStepper stepper(prop.ball, cfg.alpha, cfg.mu);
  return run_iterative(net, prop, cfg.steps, cfg.run, stepper, started);
}

double cw_hinge(const Vector& delta, double tau) {
  return (delta.array().abs() - tau).cwiseMax(0.0).sum();
}

double cw_objective(const Network& net, const AttackProperty& prop, const Vector& delta, double c,
                    double tau) {
  const double margin = -adversarial_loss(net, prop.ball.center() + delta, prop.y, prop.y_tar);
  return c * std::max(margin, 0.0) + cw_hinge(delta, tau);
}

AttackOutcome cw_attack(const Network& net, const AttackProperty& prop, const CwConfig& cfg) {
  const auto started = Clock::now();
  validate(net, prop);
  if (cfg.steps < 1) throw ConfigError("cw: steps must be >= 1");
  if (!(cfg.gamma_tau > 0.0 && cfg.gamma_tau < 1.0 && cfg.gamma_c > 1.0))
    throw ConfigError("cw: need 0 < gamma_tau < 1 < gamma_c");
  if (!(cfg.c_init > 0.0 && cfg.c_init <= cfg.c_fin)) throw ConfigError("cw: need 0 < c_init <= c_fin");
  if (!(cfg.alpha > 0.0)) throw ConfigError("cw: alpha must be > 0");
  if (cfg.max_outer == 0 && !cfg.deadline)
    throw ConfigError("cw: unlimited outer rounds need a deadline");

  AttackOutcome out;
  out.restarts_used = 1;
  auto finish = [&]() {
    out.wall_time = std::chrono::duration<double>(Clock::now() - started).count();
    return out;
  };

  const PerturbationBall& ball = prop.ball;
  const Vector& x = ball.center();
  const Index d = ball.dim();

  // Checks the ball projection of x + delta; returns true on success.
  auto examine = [&](const Vector& delta) {
    Vector candidate = ball.project(x + delta);
    if (cfg.observer) cfg.observer(candidate);
    const double loss = adversarial_loss(net, candidate, prop.y, prop.y_tar);
    out.final_loss = std::max(out.final_loss, loss);
    if (loss >= 0.0) {
      out.success = true;
      out.final_loss = loss;
      out.adversarial_point = std::move(candidate);
      return true;
    }
    return false;
  };

  out.final_loss = -std::numeric_limits<double>::infinity();
  if (expired(cfg.deadline)) {
    out.timed_out = true;
    out.final_loss = adversarial_loss(net, ball.project(x), prop.y, prop.y_tar);
    return finish();
  }

  Vector delta = Vector::Zero(d);
  if (examine(delta)) return finish();

  double tau = ball.epsilon();
  double c = cfg.c_init;
  for (long outer = 0; cfg.max_outer == 0 || outer < cfg.max_outer; ++outer) {
    bool reached_target = false;
    for (long t = 0; t < cfg.steps; ++t) {
      if (expired(cfg.deadline)) {
        out.timed_out = true;
        return finish();
      }
      const Vector z = x + delta;
      const LossGradient lg = loss_and_gradient(net, z, prop.y, prop.y_tar);
      Vector grad = Vector::Zero(d);
      // h(z) = max(f_y - f_tar, 0) = max(-L, 0)
      if (-lg.loss > 0.0) grad = -c * lg.gradient;
      for (Index i = 0; i < d; ++i) {
        if (std::abs(delta[i]) > tau) grad[i] += delta[i] > 0.0 ? 1.0 : -1.0;
      }
      delta -= cfg.alpha * grad;
      // keep x + delta inside the input box
      delta = (x + delta).cwiseMax(ball.box_lo()).cwiseMin(ball.box_hi()) - x;
      ++out.iterations_used;
      if (examine(delta)) return finish();
      if (adversarial_loss(net, x + delta, prop.y, prop.y_tar) >= 0.0) reached_target = true;
    }
    if (reached_target) {
      tau *= cfg.gamma_tau;
    } else {
      c = std::min(c * cfg.gamma_c, cfg.c_fin);
    }
  }
  return finish();
}

}  // namespace advgnn

#pragma once

#include "advgnn/network.hpp"
#include "advgnn/random.hpp"

#include <nlohmann/json_fwd.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

namespace advgnn {

using Clock = std::chrono::steady_clock;
using Deadline = std::optional<Clock::time_point>;

Deadline deadline_after(double seconds);
bool expired(const Deadline& deadline);

// {x' : |x' - center|_inf <= epsilon} intersected with the input box.
class PerturbationBall {
 public:
  PerturbationBall(Vector center, double epsilon, Vector box_lo, Vector box_hi);
  // Uses the network's input box.
  static PerturbationBall around(const Network& net, Vector center, double epsilon);

  const Vector& center() const { return center_; }
  double epsilon() const { return epsilon_; }
  const Vector& box_lo() const { return box_lo_; }
  const Vector& box_hi() const { return box_hi_; }
  // Coordinatewise bounds of the feasible set.
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }
  Index dim() const { return center_.size(); }

  bool contains(const Vector& x) const;
  Vector project(const Vector& x) const;
  // Uniform over the feasible box.
  Vector sample(Rng& rng) const;
  PerturbationBall with_epsilon(double epsilon) const;

 private:
  Vector center_;
  double epsilon_;
  Vector box_lo_;
  Vector box_hi_;
  Vector lower_;
  Vector upper_;
};

Vector project(const Vector& x, const PerturbationBall& ball);

struct AttackProperty {
  PerturbationBall ball;
  Index y = 0;
  Index y_tar = 1;
  std::string net_ref;
};

// Throws ShapeError / ConfigError when the property does not fit the network.
void validate(const Network& net, const AttackProperty& prop);

struct AttackOutcome {
  bool success = false;
  std::optional<Vector> adversarial_point;
  // Largest adversarial loss seen over all examined points.
  double final_loss = 0.0;
  long iterations_used = 0;
  long restarts_used = 0;
  double wall_time = 0.0;
  bool timed_out = false;
};

// {success, final_loss, iterations, restarts, wall_time, timed_out, adversarial_point?}
nlohmann::json outcome_to_json(const AttackOutcome& outcome);

// Called with every point an attack evaluates.
using IterateObserver = std::function<void(const Vector&)>;

// Restart policy shared by the random-start attacks.
struct RunLimits {
  std::uint64_t seed = 0;
  // Maximum number of starts; 0 means keep restarting until the deadline.
  long restarts = 1;
  Deadline deadline;
  // Replaces the uniform draw for the first start (projected onto the ball).
  std::optional<Vector> start;
  IterateObserver observer;
};

struct PgdConfig {
  long steps = 100;
  double alpha = 0.01;
  RunLimits run;
};

// Step size 0.1 variant used for the headline comparison runs.
PgdConfig pgd_methods_preset();

struct MiFgsmConfig {
  long steps = 100;
  double alpha = 0.1;
  double mu = 0.5;
  RunLimits run;
};

struct CwConfig {
  long steps = 100;
  double c_init = 1e-5;
  double c_fin = 1000.0;
  double gamma_tau = 0.99;
  double gamma_c = 1.5;
  double alpha = 1e-4;
  // Outer rounds (each `steps` descent steps); 0 means until the deadline.
  long max_outer = 1000;
  Deadline deadline;
  IterateObserver observer;
};

// x + step * sgn(grad L(x)), no projection.
Vector fgsm_step(const Network& net, const Vector& x, Index y, Index y_tar, double step);

// mu * g + grad / |grad|_1, or mu * g when the gradient vanishes.
Vector momentum_update(const Vector& momentum, const Vector& gradient, double mu);

AttackOutcome pgd_attack(const Network& net, const AttackProperty& prop, const PgdConfig& cfg);
AttackOutcome mi_fgsm_plus(const Network& net, const AttackProperty& prop,
                           const MiFgsmConfig& cfg);
AttackOutcome cw_attack(const Network& net, const AttackProperty& prop, const CwConfig& cfg);

// sum_i (|delta_i| - tau)_+
double cw_hinge(const Vector& delta, double tau);
// c * max(f_y - f_tar, 0) + hinge, evaluated at center + delta.
double cw_objective(const Network& net, const AttackProperty& prop, const Vector& delta, double c,
                    double tau);

// One step of an iterative attack: maps the current point and its loss
// gradient to the next point. reset() is called at every restart.
class Stepper {
 public:
  virtual ~Stepper() = default;
  virtual void reset() {}
  virtual Vector step(const Vector& x, const LossGradient& lg) = 0;
};

// Random-start loop shared by PGD, MI-FGSM+ and AdvGNN: samples a start,
// runs up to `steps` updates, stops at loss >= 0, restarts per `limits`.
AttackOutcome run_iterative(const Network& net, const AttackProperty& prop, long steps,
                            const RunLimits& limits, Stepper& stepper,
                            Clock::time_point started);

}  // namespace advgnn

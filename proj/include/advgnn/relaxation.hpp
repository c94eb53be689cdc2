#pragma once

#include "advgnn/attacks.hpp"
#include "advgnn/bounds.hpp"
#include "advgnn/network.hpp"

#include <nlohmann/json_fwd.hpp>

#include <vector>

namespace advgnn {

enum class NeuronState { blocked, passing, ambiguous };

// Planet (triangle) relaxation of one ReLU given pre-activation bounds [l, u].
struct PlanetNeuron {
  NeuronState state = NeuronState::blocked;
  double lower = 0.0;
  double upper = 0.0;
  // Upper hull line z <= slope * x_hat + intercept (ambiguous neurons only).
  double slope = 0.0;
  double intercept = 0.0;

  static PlanetNeuron classify(double l, double u);
  // Box bounds on x_hat plus the hull constraints, with slack `tol`.
  bool contains(double x_hat, double z, double tol = 0.0) const;
  // Hull vertices (x_hat, z): 2 for stable neurons, 3 for ambiguous ones.
  int vertices(double (&xs)[3], double (&zs)[3]) const;
};

// Planet relaxation of min f(x)_y - f(x)_{y_tar} over the ball, with the final
// layer folded into the objective row.
struct Relaxation {
  PerturbationBall ball;
  // affine maps z_k -> x_hat_{k+1}, k = 0..H; the last one has a single row
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  // hidden layers 1..H
  std::vector<std::vector<PlanetNeuron>> neurons;

  std::size_t num_hidden() const { return neurons.size(); }
};

Relaxation build_relaxation(const Network& net, const AttackProperty& prop,
                            const LayerBounds& bounds);

// One point of the decomposed problem: input z_0, copies x_hat_A (layers 1..H+1,
// the last being the scalar objective), x_hat_B and z (layers 1..H).
struct DualAssignment {
  Vector input;
  std::vector<Vector> zhat_a;
  std::vector<Vector> zhat_b;
  std::vector<Vector> z;
};

// x_hat_A[H+1] + sum_k rho_k^T (x_hat_B[k] - x_hat_A[k])
double decomposed_objective(const Relaxation& relax, const std::vector<Vector>& rho,
                            const DualAssignment& point);
bool is_feasible(const Relaxation& relax, const DualAssignment& point, double tol = 1e-9);

struct InnerMinimum {
  double value = 0.0;
  DualAssignment argmin;
};

// Exact minimizer of the decomposed objective: the input block is solved at a box
// vertex coordinatewise, each hidden neuron over its hull vertices.
InnerMinimum dual_inner_min(const std::vector<Vector>& rho, const Relaxation& relax);

// x_hat_B[k] - x_hat_A[k] for k = 1..H.
std::vector<Vector> supergradient(const InnerMinimum& inner);

struct DualConfig {
  long steps = 100;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct DualState {
  std::vector<Vector> rho;  // best iterate
  double dual_value = 0.0;  // q(rho)
  Vector x_lp;              // input block of the inner minimizer at rho
  std::vector<double> history;  // q at every evaluated iterate, in order
};

std::vector<Vector> zero_multipliers(const Relaxation& relax);

// Adam-driven supergradient ascent on q; returns the best iterate seen.
DualState supergradient_ascent(const Network& net, const AttackProperty& prop,
                               const LayerBounds& bounds, const DualConfig& cfg = {});
DualState supergradient_ascent(const Relaxation& relax, const DualConfig& cfg = {});

nlohmann::json dual_to_json(const DualState& dual);

}  // namespace advgnn

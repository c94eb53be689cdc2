#pragma once

#include "advgnn/attacks.hpp"
#include "advgnn/network.hpp"

#include <nlohmann/json_fwd.hpp>

#include <vector>

namespace advgnn {

// Pre-activation bounds for layers 1..L; entry k-1 holds layer k.
struct LayerBounds {
  std::vector<Vector> lower;
  std::vector<Vector> upper;

  std::size_t num_layers() const { return lower.size(); }
};

// Interval bound propagation through affine layers and ReLUs.
LayerBounds ibp(const Network& net, const PerturbationBall& ball);

// Backward linear bounds with the ReLU relaxation of slope u / (u - l) on
// ambiguous neurons (both the lower and the upper line). Neuron states at
// earlier layers come from the running elementwise tightest of IBP and these
// bounds. Layer-1 bounds are the exact interval bounds.
LayerBounds wk_bounds(const Network& net, const PerturbationBall& ball);

// Elementwise max of lowers and min of uppers. Throws SoundnessError when the
// result crosses.
LayerBounds tightest(const LayerBounds& a, const LayerBounds& b);

// tightest(ibp, wk), the bounds used downstream.
LayerBounds best_bounds(const Network& net, const PerturbationBall& ball);

// Lower bound of min over the ball of c^T x_hat_k (k is 1-based) computed by the
// backward linear relaxation with the given earlier-layer bounds.
Vector linear_lower_bounds(const Network& net, const PerturbationBall& ball,
                           const LayerBounds& earlier, std::size_t k, const Matrix& objectives);

nlohmann::json bounds_to_json(const LayerBounds& bounds);

}  // namespace advgnn

#pragma once

#include "advgnn/attacks.hpp"
#include "advgnn/bounds.hpp"
#include "advgnn/network.hpp"
#include "advgnn/relaxation.hpp"

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace advgnn {

inline constexpr Index kInputFeatures = 5;
inline constexpr Index kHiddenFeatures = 3;

// Learnable parameters. Every matrix acts on column vectors (p x in), so an
// embedding row e maps to (M e^T)^T = e M^T.
struct GnnParams {
  Index p = 32;
  int T1 = 1;
  int T2 = 1;
  std::vector<Matrix> input_mlp;   // [0]: p x 5, [1..T1]: p x p
  std::vector<Matrix> hidden_mlp;  // [0]: p x 3, [1..T1]: p x p
  std::array<Matrix, 3> forward;   // own, linear, neighbour-mean terms
  std::array<Matrix, 3> backward;
  Vector score;                    // p

  static GnnParams zeros(Index p, int T1 = 1, int T2 = 1);

  // Throws ShapeError naming the offending field.
  void validate() const;

  // Flat views over every tensor in a fixed order, and matching names.
  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::size_t num_values() const;
};

nlohmann::json params_to_json(const GnnParams& params);
GnnParams params_from_json(const nlohmann::json& doc, std::string_view source = "params");
GnnParams load_params(const std::filesystem::path& path);
void save_params(const GnnParams& params, const std::filesystem::path& path);

enum class FeatureMode { dual, wk };

std::string_view to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(std::string_view name);

struct FeatureSet {
  Matrix input;                // d x 5: x_t, sgn(grad), l_0, u_0, x_lp
  std::vector<Matrix> layers;  // layer k at k-1: n_k x 3: l_k, u_k, rho_k
};

// Holds the parts of the node features that do not depend on the current point.
class FeatureBuilder {
 public:
  // `dual` is required in dual mode and ignored in wk mode.
  FeatureBuilder(const Network& net, const AttackProperty& prop, const LayerBounds& bounds,
                 const DualState* dual, FeatureMode mode);

  // Fills the point-dependent columns from x_t and the loss gradient at x_t.
  FeatureSet at(const Vector& x_t, const Vector& gradient) const;
  const FeatureSet& base() const { return base_; }

 private:
  FeatureSet base_;
};

FeatureSet compute_features(const Network& net, const AttackProperty& prop, const Vector& x_t,
                            const LayerBounds& bounds, const DualState* dual,
                            FeatureMode mode = FeatureMode::dual);

// Neighbour-mean operators. forward_mean[k-1] (n_k x n_{k-1}) averages the
// in-neighbours of each node of layer k; backward_mean[k-1] (n_{k-1} x n_k)
// averages the out-neighbours of each node of layer k-1. Neighbours are the
// nonzero weights; an isolated node gets a zero row.
struct NeighborNorms {
  std::vector<Vector> in_degree;   // layer k at k-1, length n_k
  std::vector<Vector> out_degree;  // layer k-1 at k-1, length n_{k-1}
  std::vector<Matrix> forward_mean;
  std::vector<Matrix> backward_mean;
};

NeighborNorms neighbor_norms(const Network& net);

// Embeddings per GNN layer 0..L, one row per node, p columns.
struct EmbeddingState {
  std::vector<Matrix> layers;
};

EmbeddingState init_embeddings(const FeatureSet& features, const GnnParams& params);

// T2 rounds of one forward sweep (layers 1..L, each reading the freshly
// updated previous layer) followed by one backward sweep (layers L-1..0, each
// reading the freshly updated next layer).
EmbeddingState message_pass(const EmbeddingState& state, const Network& net,
                            const GnnParams& params, const NeighborNorms& norms);

// direction[i] = <mu_0[i], score>
Vector readout(const EmbeddingState& state, const GnnParams& params);

// Intermediates recorded by gnn_direction for reverse-mode differentiation.
struct GnnTape {
  struct Mlp {
    std::vector<Matrix> inputs;  // input of each stage
    std::vector<Matrix> pre;     // pre-activation of each stage
  };
  struct Update {
    Matrix own;     // first-term input
    Matrix linear;  // second-term input
    Matrix mean;    // third-term input
    Matrix pre;     // pre-activation
  };
  std::vector<Mlp> mlp;                   // per GNN layer 0..L
  std::vector<std::vector<Update>> fwd;   // [round][k-1], k = 1..L
  std::vector<std::vector<Update>> bwd;   // [round][k], k = 0..L-1
  EmbeddingState final_state;
};

// Full GNN evaluation: embeddings, message passing, readout.
Vector gnn_direction(const Network& net, const NeighborNorms& norms, const GnnParams& params,
                     const FeatureSet& features, GnnTape* tape = nullptr);

// Reverse pass of gnn_direction. Accumulates parameter gradients into `grads`
// (same shapes as params) and returns the gradient w.r.t. the input-layer
// feature matrix (d x 5).
Matrix gnn_backward(const Network& net, const NeighborNorms& norms, const GnnParams& params,
                    const GnnTape& tape, const Vector& d_direction, GnnParams& grads);

struct AdvGnnConfig {
  double alpha = 1e-2;
  long steps = 100;
  RunLimits run;
  FeatureMode feature_mode = FeatureMode::dual;
  DualConfig dual;
};

// Bounds and the dual solve happen once inside the timed region, then
// x_{t+1} = project(x_t + alpha * gnn_direction(features(x_t))).
AttackOutcome advgnn_attack(const Network& net, const AttackProperty& prop,
                            const GnnParams& params, const AdvGnnConfig& cfg);

// Precomputed per-property state shared by inference and training.
struct PropertyContext {
  const Network* net = nullptr;
  AttackProperty prop;
  LayerBounds bounds;
  std::optional<DualState> dual;
  FeatureBuilder features;
  NeighborNorms norms;
};

PropertyContext make_context(const Network& net, const AttackProperty& prop,
                             FeatureMode mode = FeatureMode::dual, const DualConfig& dual = {});

AttackOutcome advgnn_attack(const PropertyContext& ctx, const GnnParams& params,
                            const AdvGnnConfig& cfg, Clock::time_point started);

// Parameters under which the direction equals sgn(grad L) on any network.
GnnParams simulate_fgsm_params(Index p, int T2 = 1);

}  // namespace advgnn

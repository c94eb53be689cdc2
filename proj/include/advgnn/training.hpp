#pragma once

#include "advgnn/gnn.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace advgnn {

struct TrainingSample {
  Vector x;
  Index y = 0;
  Index y_tar = 1;
  double epsilon = 0.0;
  std::string net_ref;
};

struct TrainConfig {
  int horizon = 40;  // K
  double gamma = 0.9;
  int starts = 5;  // s
  int epochs = 40;
  double lr = 0.01;
  double weight_decay = 0.001;
  std::vector<int> lr_milestones{20, 30, 35};
  double lr_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // step size of the unrolled AdvGNN iterations
  double alpha = 1e-2;
  Index p = 32;
  int T1 = 1;
  int T2 = 1;
  FeatureMode feature_mode = FeatureMode::dual;
  DualConfig dual;
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at(int epoch) const;
};

// Builds the per-sample context, checking that the net classifies x as y.
PropertyContext make_training_context(const Network& net, const TrainingSample& sample,
                                      const TrainConfig& cfg);
std::vector<PropertyContext> make_training_contexts(const Network& net,
                                                    const std::vector<TrainingSample>& samples,
                                                    const TrainConfig& cfg);

// Starts of sample `sample_index` in `epoch`, one stream per (sample, start, epoch).
std::vector<Vector> draw_starts(const PerturbationBall& ball, std::uint64_t seed,
                                std::size_t sample_index, int epoch, int starts);

// K iterations from `start` without early stopping.
struct Rollout {
  std::vector<Vector> points;   // x^0..x^K
  std::vector<double> losses;   // L(x^t), t = 0..K
  double objective = 0.0;       // -sum_{t=1..K} gamma^t L(x^t)
};

Rollout rollout(const PropertyContext& ctx, const GnnParams& params, const Vector& start,
                int horizon, double gamma, double alpha);
double unrolled_loss(const PropertyContext& ctx, const GnnParams& params, const Vector& start,
                     int horizon, double gamma, double alpha);

// Sum of unrolled losses over all samples and their `cfg.starts` starts for `epoch`.
double total_loss(const GnnParams& params, const std::vector<PropertyContext>& contexts,
                  const TrainConfig& cfg, int epoch = 0);

struct BatchItem {
  const PropertyContext* ctx = nullptr;
  std::vector<Vector> starts;
};

struct ParamGradient {
  double loss = 0.0;
  GnnParams grads;
};

// Reverse mode through the unrolled iterations. The sign feature is a
// constant per iteration, the clamp passes gradient only on unclamped
// coordinates, and ReLU has derivative 0 at 0.
ParamGradient param_gradients(const GnnParams& params, const std::vector<BatchItem>& batch,
                              const TrainConfig& cfg);

// Uniform in +-1/sqrt(fan_in) per matrix.
GnnParams random_params(Index p, int T1, int T2, std::uint64_t seed);

struct EpochLog {
  int epoch = 0;
  double total_loss = 0.0;
  double lr = 0.0;
  std::optional<double> validation_loss;
};

struct TrainResult {
  GnnParams params;
  std::vector<EpochLog> log;
};

// Adam with decoupled weight decay, one step per property (all its starts).
// Returns the best-validation parameters when `validation` is nonempty.
TrainResult train(const Network& net, const std::vector<TrainingSample>& dataset,
                  const TrainConfig& cfg, const std::vector<TrainingSample>& validation = {});

// Same loop from `init`, stopped once `budget_seconds` of wall clock have passed.
TrainResult fine_tune(const GnnParams& init, const Network& net,
                      const std::vector<TrainingSample>& dataset, const TrainConfig& cfg,
                      double budget_seconds);

void write_loss_log(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace advgnn

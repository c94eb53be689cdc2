#include "advgnn/training.hpp"

#include "advgnn/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace advgnn {

namespace {

constexpr std::uint64_t kStartStream = 0x5354;
constexpr std::uint64_t kOrderStream = 0x4f52;
constexpr std::uint64_t kInitStream = 0x494e;

void add_into(GnnParams& acc, const GnnParams& g) {
  auto dst = acc.tensors();
  const auto src = g.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += src[i][j];
  }
}

struct Step {
  GnnTape tape;
  Vector unclamped;
};

// Forward rollout; records what the reverse pass needs when `steps` is set.
Rollout run_rollout(const PropertyContext& ctx, const GnnParams& params, const Vector& start,
                    int horizon, double gamma, double alpha, std::vector<Step>* steps,
                    std::vector<Vector>* loss_grads) {
  const Network& net = *ctx.net;
  const PerturbationBall& ball = ctx.prop.ball;
  if (start.size() != ball.dim()) throw ShapeError("rollout: start has the wrong length");
  if (!ball.contains(start)) throw ConfigError("rollout: start is not in the feasible set");

  Rollout out;
  out.points.reserve(static_cast<std::size_t>(horizon) + 1);
  out.points.push_back(start);
  double weight = 1.0;
  for (int t = 0; t <= horizon; ++t) {
    const Vector& x = out.points.back();
    LossGradient lg = loss_and_gradient(net, x, ctx.prop.y, ctx.prop.y_tar);
    if (!std::isfinite(lg.loss))
      throw NumericError("rollout: non-finite loss at iteration " + std::to_string(t));
    out.losses.push_back(lg.loss);
    if (t > 0) out.objective -= weight * lg.loss;
    weight *= gamma;
    if (t == horizon) {
      if (loss_grads) loss_grads->push_back(std::move(lg.gradient));
      break;
    }
    const FeatureSet features = ctx.features.at(x, lg.gradient);
    if (loss_grads) loss_grads->push_back(std::move(lg.gradient));
    Step step;
    const Vector direction =
        gnn_direction(net, ctx.norms, params, features, steps ? &step.tape : nullptr);
    step.unclamped = x + alpha * direction;
    Vector next = ball.project(step.unclamped);
    if (steps) steps->push_back(std::move(step));
    out.points.push_back(std::move(next));
  }
  if (!std::isfinite(out.objective)) throw NumericError("rollout: non-finite objective");
  return out;
}

double unrolled_gradient(const PropertyContext& ctx, const GnnParams& params,
                         const Vector& start, const TrainConfig& cfg, GnnParams& grads) {
  std::vector<Step> steps;
  std::vector<Vector> loss_grads;
  const Rollout r =
      run_rollout(ctx, params, start, cfg.horizon, cfg.gamma, cfg.alpha, &steps, &loss_grads);
  const PerturbationBall& ball = ctx.prop.ball;
  const int K = cfg.horizon;

  // g holds dObjective/dx^t while walking t = K..1
  Vector g = -std::pow(cfg.gamma, K) * loss_grads[static_cast<std::size_t>(K)];
  for (int t = K - 1; t >= 0; --t) {
    const Step& step = steps[static_cast<std::size_t>(t)];
    Vector d_unclamped = g;
    for (Index i = 0; i < d_unclamped.size(); ++i) {
      const double v = step.unclamped[i];
      if (v < ball.lower()[i] || v > ball.upper()[i]) d_unclamped[i] = 0.0;
    }
    const Vector d_direction = cfg.alpha * d_unclamped;
    const Matrix d_features =
        gnn_backward(*ctx.net, ctx.norms, params, step.tape, d_direction, grads);
    if (t == 0) break;
    g = d_unclamped + d_features.col(0) -
        std::pow(cfg.gamma, t) * loss_grads[static_cast<std::size_t>(t)];
  }
  return r.objective;
}

struct Adam {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long t = 0;

  explicit Adam(const GnnParams& shape) {
    for (const auto& tensor : shape.tensors()) {
      m.emplace_back(tensor.size(), 0.0);
      v.emplace_back(tensor.size(), 0.0);
    }
  }

  void step(GnnParams& params, const GnnParams& grads, const TrainConfig& cfg, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    auto theta = params.tensors();
    const auto g = grads.tensors();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      for (std::size_t j = 0; j < theta[i].size(); ++j) {
        m[i][j] = cfg.beta1 * m[i][j] + (1.0 - cfg.beta1) * g[i][j];
        v[i][j] = cfg.beta2 * v[i][j] + (1.0 - cfg.beta2) * g[i][j] * g[i][j];
        const double update = (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + cfg.adam_eps);
        theta[i][j] = theta[i][j] * (1.0 - lr * cfg.weight_decay) - lr * update;
      }
    }
  }
};

TrainResult run_training(GnnParams params, const Network& net,
                         const std::vector<TrainingSample>& dataset, const TrainConfig& cfg,
                         const std::vector<TrainingSample>& validation, Deadline deadline) {
  cfg.validate();
  params.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  TrainResult result;
  if (expired(deadline)) {
    result.params = std::move(params);
    return result;
  }
  const std::vector<PropertyContext> contexts = make_training_contexts(net, dataset, cfg);
  const std::vector<PropertyContext> val_contexts = make_training_contexts(net, validation, cfg);

  Adam adam(params);
  std::optional<GnnParams> best;
  double best_val = 0.0;
  std::vector<std::size_t> order(contexts.size());
  bool out_of_time = false;
  for (int epoch = 0; epoch < cfg.epochs && !out_of_time; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng = make_rng(cfg.seed, {kOrderStream, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), order_rng);

    EpochLog entry{epoch, 0.0, lr, std::nullopt};
    std::size_t done = 0;
    for (const std::size_t i : order) {
      if (expired(deadline)) {
        out_of_time = true;
        break;
      }
      const BatchItem item{&contexts[i],
                           draw_starts(contexts[i].prop.ball, cfg.seed, i, epoch, cfg.starts)};
      const ParamGradient pg = param_gradients(params, {item}, cfg);
      entry.total_loss += pg.loss;
      adam.step(params, pg.grads, cfg, lr);
      ++done;
    }
    if (done == 0) break;
    if (!val_contexts.empty()) {
      const double val = total_loss(params, val_contexts, cfg, 0);
      entry.validation_loss = val;
      if (!best || val < best_val) {
        best = params;
        best_val = val;
      }
    }
    result.log.push_back(entry);
  }
  result.params = best ? std::move(*best) : std::move(params);
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (horizon < 1) throw ConfigError("train config: horizon must be >= 1");
  if (starts < 1) throw ConfigError("train config: starts must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("train config: gamma must be in (0, 1)");
  if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0))
    throw ConfigError("train config: lr and weight decay must be >= 0");
  if (!(alpha > 0.0)) throw ConfigError("train config: alpha must be > 0");
}

double TrainConfig::lr_at(int epoch) const {
  double out = lr;
  for (const int m : lr_milestones) {
    if (epoch >= m) out *= lr_factor;
  }
  return out;
}

PropertyContext make_training_context(const Network& net, const TrainingSample& sample,
                                      const TrainConfig& cfg) {
  if (!(sample.epsilon > 0.0)) throw ConfigError("training sample: epsilon must be > 0");
  if (sample.x.size() != net.input_dim()) throw ShapeError("training sample: x has the wrong length");
  check_classes(net, sample.y, sample.y_tar);
  Index predicted = 0;
  logits(net, sample.x).maxCoeff(&predicted);
  if (predicted != sample.y)
    throw ConfigError("training sample: network classifies x as " + std::to_string(predicted) +
                      ", not " + std::to_string(sample.y));
  AttackProperty prop{PerturbationBall::around(net, sample.x, sample.epsilon), sample.y,
                      sample.y_tar, sample.net_ref};
  return make_context(net, prop, cfg.feature_mode, cfg.dual);
}

std::vector<PropertyContext> make_training_contexts(const Network& net,
                                                    const std::vector<TrainingSample>& samples,
                                                    const TrainConfig& cfg) {
  std::vector<PropertyContext> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(make_training_context(net, s, cfg));
  return out;
}

std::vector<Vector> draw_starts(const PerturbationBall& ball, std::uint64_t seed,
                                std::size_t sample_index, int epoch, int starts) {
  std::vector<Vector> out;
  for (int j = 0; j < starts; ++j) {
    Rng rng = make_rng(seed, {kStartStream, static_cast<std::uint64_t>(sample_index),
                              static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(epoch)});
    out.push_back(ball.sample(rng));
  }
  return out;
}

Rollout rollout(const PropertyContext& ctx, const GnnParams& params, const Vector& start,
                int horizon, double gamma, double alpha) {
  if (horizon < 1) throw ConfigError("rollout: horizon must be >= 1");
  params.validate();
  return run_rollout(ctx, params, start, horizon, gamma, alpha, nullptr, nullptr);
}

double unrolled_loss(const PropertyContext& ctx, const GnnParams& params, const Vector& start,
                     int horizon, double gamma, double alpha) {
  return rollout(ctx, params, start, horizon, gamma, alpha).objective;
}

double total_loss(const GnnParams& params, const std::vector<PropertyContext>& contexts,
                  const TrainConfig& cfg, int epoch) {
  cfg.validate();
  params.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    for (const Vector& start : draw_starts(contexts[i].prop.ball, cfg.seed, i, epoch, cfg.starts))
      total += run_rollout(contexts[i], params, start, cfg.horizon, cfg.gamma, cfg.alpha, nullptr,
                           nullptr)
                   .objective;
  }
  return total;
}

ParamGradient param_gradients(const GnnParams& params, const std::vector<BatchItem>& batch,
                              const TrainConfig& cfg) {
  cfg.validate();
  params.validate();
  ParamGradient out{0.0, GnnParams::zeros(params.p, params.T1, params.T2)};
  for (const BatchItem& item : batch) {
    if (!item.ctx) throw ConfigError("param_gradients: batch item without a context");
    for (const Vector& start : item.starts) {
      GnnParams g = GnnParams::zeros(params.p, params.T1, params.T2);
      out.loss += unrolled_gradient(*item.ctx, params, start, cfg, g);
      add_into(out.grads, g);
    }
  }
  return out;
}

GnnParams random_params(Index p, int T1, int T2, std::uint64_t seed) {
  GnnParams out = GnnParams::zeros(p, T1, T2);
  Rng rng = make_rng(seed, {kInitStream});
  auto fill = [&](auto& m, Index fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  for (auto& m : out.input_mlp) fill(m, m.cols());
  for (auto& m : out.hidden_mlp) fill(m, m.cols());
  for (auto& m : out.forward) fill(m, m.cols());
  for (auto& m : out.backward) fill(m, m.cols());
  fill(out.score, p);
  return out;
}

TrainResult train(const Network& net, const std::vector<TrainingSample>& dataset,
                  const TrainConfig& cfg, const std::vector<TrainingSample>& validation) {
  return run_training(random_params(cfg.p, cfg.T1, cfg.T2, cfg.seed), net, dataset, cfg,
                      validation, std::nullopt);
}

TrainResult fine_tune(const GnnParams& init, const Network& net,
                      const std::vector<TrainingSample>& dataset, const TrainConfig& cfg,
                      double budget_seconds) {
  if (!(budget_seconds >= 0.0)) throw ConfigError("fine_tune: budget must be >= 0");
  if (budget_seconds == 0.0) {
    init.validate();
    return TrainResult{init, {}};
  }
  return run_training(init, net, dataset, cfg, {}, deadline_after(budget_seconds));
}

void write_loss_log(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  out << "epoch,total_loss,lr\n";
  for (const EpochLog& e : log) out << e.epoch << ',' << e.total_loss << ',' << e.lr << '\n';
}

}  // namespace advgnn

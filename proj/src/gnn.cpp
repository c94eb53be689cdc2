#include "advgnn/gnn.hpp"

#include "advgnn/error.hpp"
#include "advgnn/json_io.hpp"

#include <nlohmann/json.hpp>

namespace advgnn {

namespace {

Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

// d_out masked by the ReLU derivative at `pre` (0 at exactly 0).
Matrix relu_backward(const Matrix& d_out, const Matrix& pre) {
  return d_out.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
}

void check_shape(const Matrix& m, Index rows, Index cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols)
    throw ShapeError("gnn params: " + name + " is " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                     std::to_string(cols));
}

}  // namespace

GnnParams GnnParams::zeros(Index p, int T1, int T2) {
  if (p < 1 || T1 < 0 || T2 < 0) throw ConfigError("gnn params: need p >= 1, T1 >= 0, T2 >= 0");
  GnnParams out;
  out.p = p;
  out.T1 = T1;
  out.T2 = T2;
  out.input_mlp.push_back(Matrix::Zero(p, kInputFeatures));
  out.hidden_mlp.push_back(Matrix::Zero(p, kHiddenFeatures));
  for (int l = 0; l < T1; ++l) {
    out.input_mlp.push_back(Matrix::Zero(p, p));
    out.hidden_mlp.push_back(Matrix::Zero(p, p));
  }
  for (auto& m : out.forward) m = Matrix::Zero(p, p);
  for (auto& m : out.backward) m = Matrix::Zero(p, p);
  out.score = Vector::Zero(p);
  return out;
}

void GnnParams::validate() const {
  if (p < 1) throw ShapeError("gnn params: p must be >= 1");
  if (T1 < 0 || T2 < 0) throw ShapeError("gnn params: T1 and T2 must be >= 0");
  if (input_mlp.size() != static_cast<std::size_t>(T1) + 1)
    throw ShapeError("gnn params: input_mlp needs T1 + 1 matrices");
  if (hidden_mlp.size() != static_cast<std::size_t>(T1) + 1)
    throw ShapeError("gnn params: hidden_mlp needs T1 + 1 matrices");
  check_shape(input_mlp[0], p, kInputFeatures, "input_mlp[0]");
  check_shape(hidden_mlp[0], p, kHiddenFeatures, "hidden_mlp[0]");
  for (int l = 1; l <= T1; ++l) {
    check_shape(input_mlp[static_cast<std::size_t>(l)], p, p, "input_mlp[" + std::to_string(l) + "]");
    check_shape(hidden_mlp[static_cast<std::size_t>(l)], p, p, "hidden_mlp[" + std::to_string(l) + "]");
  }
  for (std::size_t i = 0; i < 3; ++i) {
    check_shape(forward[i], p, p, "forward[" + std::to_string(i) + "]");
    check_shape(backward[i], p, p, "backward[" + std::to_string(i) + "]");
  }
  if (score.size() != p) throw ShapeError("gnn params: score must have p entries");
}

std::vector<std::span<double>> GnnParams::tensors() {
  std::vector<std::span<double>> out;
  auto add = [&](auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
  for (auto& m : input_mlp) add(m);
  for (auto& m : hidden_mlp) add(m);
  for (auto& m : forward) add(m);
  for (auto& m : backward) add(m);
  add(score);
  return out;
}

std::vector<std::span<const double>> GnnParams::tensors() const {
  std::vector<std::span<const double>> out;
  auto add = [&](const auto& m) { out.emplace_back(m.data(), static_cast<std::size_t>(m.size())); };
  for (const auto& m : input_mlp) add(m);
  for (const auto& m : hidden_mlp) add(m);
  for (const auto& m : forward) add(m);
  for (const auto& m : backward) add(m);
  add(score);
  return out;
}

std::vector<std::string> GnnParams::tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < input_mlp.size(); ++l) out.push_back("input_mlp[" + std::to_string(l) + "]");
  for (std::size_t l = 0; l < hidden_mlp.size(); ++l) out.push_back("hidden_mlp[" + std::to_string(l) + "]");
  for (int i = 0; i < 3; ++i) out.push_back("forward[" + std::to_string(i) + "]");
  for (int i = 0; i < 3; ++i) out.push_back("backward[" + std::to_string(i) + "]");
  out.emplace_back("score");
  return out;
}

std::size_t GnnParams::num_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.size();
  return n;
}

nlohmann::json params_to_json(const GnnParams& params) {
  nlohmann::json doc;
  doc["p"] = params.p;
  doc["T1"] = params.T1;
  doc["T2"] = params.T2;
  auto list = [](const auto& mats) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Matrix& m : mats) arr.push_back(json_io::matrix_to_json(m));
    return arr;
  };
  doc["input_mlp"] = list(params.input_mlp);
  doc["hidden_mlp"] = list(params.hidden_mlp);
  doc["forward"] = list(params.forward);
  doc["backward"] = list(params.backward);
  doc["score"] = json_io::vector_to_json(params.score);
  return doc;
}

GnnParams params_from_json(const nlohmann::json& doc, std::string_view source) {
  const std::string src(source);
  if (!doc.is_object()) throw FormatError(src + ": expected a JSON object");
  for (const char* key : {"p", "T1", "T2", "input_mlp", "hidden_mlp", "forward", "backward", "score"}) {
    if (!doc.contains(key)) throw FormatError(src + ": missing '" + key + "'");
  }
  GnnParams out;
  out.p = doc.at("p").get<Index>();
  out.T1 = doc.at("T1").get<int>();
  out.T2 = doc.at("T2").get<int>();
  auto list = [&](const char* key) {
    const auto& arr = doc.at(key);
    if (!arr.is_array()) throw FormatError(src + ": " + key + " must be an array of matrices");
    std::vector<Matrix> mats;
    for (std::size_t i = 0; i < arr.size(); ++i)
      mats.push_back(json_io::matrix_from_json(arr[i], src + ": " + key + "[" + std::to_string(i) + "]"));
    return mats;
  };
  out.input_mlp = list("input_mlp");
  out.hidden_mlp = list("hidden_mlp");
  const auto fwd = list("forward");
  const auto bwd = list("backward");
  if (fwd.size() != 3 || bwd.size() != 3)
    throw FormatError(src + ": forward and backward need exactly 3 matrices each");
  for (std::size_t i = 0; i < 3; ++i) {
    out.forward[i] = fwd[i];
    out.backward[i] = bwd[i];
  }
  out.score = json_io::vector_from_json(doc.at("score"), src + ": score");
  try {
    out.validate();
  } catch (const ShapeError& e) {
    throw FormatError(src + ": " + e.what());
  }
  return out;
}

GnnParams load_params(const std::filesystem::path& path) {
  return params_from_json(json_io::read_file(path), path.string());
}

void save_params(const GnnParams& params, const std::filesystem::path& path) {
  json_io::write_file(path, params_to_json(params));
}

std::string_view to_string(FeatureMode mode) { return mode == FeatureMode::dual ? "dual" : "wk"; }

FeatureMode feature_mode_from_string(std::string_view name) {
  if (name == "dual") return FeatureMode::dual;
  if (name == "wk") return FeatureMode::wk;
  throw ConfigError("unknown feature mode '" + std::string(name) + "'");
}

FeatureBuilder::FeatureBuilder(const Network& net, const AttackProperty& prop,
                               const LayerBounds& bounds, const DualState* dual, FeatureMode mode) {
  validate(net, prop);
  const std::size_t L = net.num_layers();
  if (bounds.num_layers() != L) throw ShapeError("features: bounds need one entry per layer");
  if (mode == FeatureMode::dual && dual == nullptr)
    throw ConfigError("features: dual mode needs a dual state");
  if (mode == FeatureMode::dual && dual->rho.size() != L - 1)
    throw ShapeError("features: dual state has the wrong number of layers");

  const Index d = net.input_dim();
  base_.input = Matrix::Zero(d, kInputFeatures);
  base_.input.col(2) = prop.ball.lower();
  base_.input.col(3) = prop.ball.upper();
  if (mode == FeatureMode::dual) {
    if (dual->x_lp.size() != d) throw ShapeError("features: x_lp has the wrong length");
    base_.input.col(4) = dual->x_lp;
  } else {
    base_.input.col(4) = prop.ball.project(prop.ball.center());
  }
  for (std::size_t k = 1; k <= L; ++k) {
    const Index n = net.width(k);
    if (bounds.lower[k - 1].size() != n || bounds.upper[k - 1].size() != n)
      throw ShapeError("features: bounds for layer " + std::to_string(k) + " have wrong width");
    Matrix f = Matrix::Zero(n, kHiddenFeatures);
    f.col(0) = bounds.lower[k - 1];
    f.col(1) = bounds.upper[k - 1];
    if (mode == FeatureMode::dual && k < L) f.col(2) = dual->rho[k - 1];
    base_.layers.push_back(std::move(f));
  }
}

FeatureSet FeatureBuilder::at(const Vector& x_t, const Vector& gradient) const {
  if (x_t.size() != base_.input.rows() || gradient.size() != base_.input.rows())
    throw ShapeError("features: point or gradient has the wrong length");
  FeatureSet out = base_;
  out.input.col(0) = x_t;
  out.input.col(1) = sign(gradient);
  return out;
}

FeatureSet compute_features(const Network& net, const AttackProperty& prop, const Vector& x_t,
                            const LayerBounds& bounds, const DualState* dual, FeatureMode mode) {
  const FeatureBuilder builder(net, prop, bounds, dual, mode);
  return builder.at(x_t, input_gradient(net, x_t, prop.y, prop.y_tar));
}

NeighborNorms neighbor_norms(const Network& net) {
  NeighborNorms out;
  for (const Layer& layer : net.layers()) {
    const Matrix adj = (layer.weight.array() != 0.0).cast<double>().matrix();
    const Vector in_deg = adj.rowwise().sum();
    const Vector out_deg = adj.colwise().sum().transpose();
    Matrix fwd = adj;
    for (Index i = 0; i < fwd.rows(); ++i) {
      if (in_deg[i] > 0.0) fwd.row(i) /= in_deg[i];
    }
    Matrix bwd = adj.transpose();
    for (Index j = 0; j < bwd.rows(); ++j) {
      if (out_deg[j] > 0.0) bwd.row(j) /= out_deg[j];
    }
    out.in_degree.push_back(in_deg);
    out.out_degree.push_back(out_deg);
    out.forward_mean.push_back(std::move(fwd));
    out.backward_mean.push_back(std::move(bwd));
  }
  return out;
}

namespace {

Matrix run_mlp(const Matrix& features, const std::vector<Matrix>& mlp, GnnTape::Mlp* tape) {
  Matrix h = features;
  for (const Matrix& theta : mlp) {
    Matrix pre = h * theta.transpose();
    if (tape) {
      tape->inputs.push_back(h);
      tape->pre.push_back(pre);
    }
    h = relu(pre);
  }
  return h;
}

Matrix combine(const Matrix& own, const Matrix& linear, const Matrix& mean,
               const std::array<Matrix, 3>& theta, GnnTape::Update* tape) {
  Matrix pre = own * theta[0].transpose() + linear * theta[1].transpose() + mean * theta[2].transpose();
  Matrix out = relu(pre);
  if (tape) *tape = {own, linear, mean, std::move(pre)};
  return out;
}

void check_state(const EmbeddingState& state, const Network& net, Index p) {
  if (state.layers.size() != net.num_layers() + 1)
    throw ShapeError("gnn: embedding state needs one matrix per network layer plus the input");
  for (std::size_t k = 0; k < state.layers.size(); ++k) {
    if (state.layers[k].rows() != net.width(k) || state.layers[k].cols() != p)
      throw ShapeError("gnn: embedding of layer " + std::to_string(k) + " has the wrong shape");
  }
}

EmbeddingState embeddings_impl(const FeatureSet& features, const GnnParams& params, GnnTape* tape) {
  if (features.input.cols() != kInputFeatures) throw ShapeError("gnn: input features need 5 columns");
  EmbeddingState out;
  if (tape) tape->mlp.assign(features.layers.size() + 1, {});
  out.layers.push_back(run_mlp(features.input, params.input_mlp, tape ? &tape->mlp[0] : nullptr));
  for (std::size_t k = 0; k < features.layers.size(); ++k) {
    if (features.layers[k].cols() != kHiddenFeatures)
      throw ShapeError("gnn: layer features need 3 columns");
    out.layers.push_back(
        run_mlp(features.layers[k], params.hidden_mlp, tape ? &tape->mlp[k + 1] : nullptr));
  }
  return out;
}

EmbeddingState passes_impl(EmbeddingState state, const Network& net, const GnnParams& params,
                           const NeighborNorms& norms, GnnTape* tape) {
  const std::size_t L = net.num_layers();
  if (tape) {
    tape->fwd.assign(static_cast<std::size_t>(params.T2), std::vector<GnnTape::Update>(L));
    tape->bwd.assign(static_cast<std::size_t>(params.T2), std::vector<GnnTape::Update>(L));
  }
  for (int r = 0; r < params.T2; ++r) {
    const auto round = static_cast<std::size_t>(r);
    // forward sweep; state.layers[0] stays as is
    for (std::size_t k = 1; k <= L; ++k) {
      const Layer& layer = net.layer(k - 1);
      const Matrix& source = state.layers[k - 1];
      Matrix linear = layer.weight * source;
      linear.colwise() += layer.bias;
      const Matrix mean = norms.forward_mean[k - 1] * source;
      state.layers[k] = combine(state.layers[k], linear, mean, params.forward,
                                tape ? &tape->fwd[round][k - 1] : nullptr);
    }
    // backward sweep; layer L keeps its forward-sweep value
    for (std::size_t k = L; k-- > 0;) {
      const Layer& layer = net.layer(k);
      const Matrix& next = state.layers[k + 1];
      Matrix shifted = next;
      shifted.colwise() -= layer.bias;
      const Matrix linear = layer.weight.transpose() * shifted;
      const Matrix mean = norms.backward_mean[k] * next;
      state.layers[k] = combine(state.layers[k], linear, mean, params.backward,
                                tape ? &tape->bwd[round][k] : nullptr);
    }
  }
  return state;
}

}  // namespace

EmbeddingState init_embeddings(const FeatureSet& features, const GnnParams& params) {
  params.validate();
  return embeddings_impl(features, params, nullptr);
}

EmbeddingState message_pass(const EmbeddingState& state, const Network& net,
                            const GnnParams& params, const NeighborNorms& norms) {
  params.validate();
  check_state(state, net, params.p);
  return passes_impl(state, net, params, norms, nullptr);
}

Vector readout(const EmbeddingState& state, const GnnParams& params) {
  if (state.layers.empty() || state.layers[0].cols() != params.score.size())
    throw ShapeError("gnn readout: embedding width does not match score");
  return state.layers[0] * params.score;
}

Vector gnn_direction(const Network& net, const NeighborNorms& norms, const GnnParams& params,
                     const FeatureSet& features, GnnTape* tape) {
  EmbeddingState state = embeddings_impl(features, params, tape);
  check_state(state, net, params.p);
  state = passes_impl(std::move(state), net, params, norms, tape);
  Vector direction = readout(state, params);
  if (tape) tape->final_state = std::move(state);
  return direction;
}

namespace {

// Backward through combine(); returns dL/d(pre) and accumulates theta grads.
Matrix combine_backward(const Matrix& d_out, const GnnTape::Update& rec,
                        const std::array<Matrix, 3>& theta, std::array<Matrix, 3>& d_theta,
                        Matrix& d_own, Matrix& d_linear, Matrix& d_mean) {
  const Matrix d_pre = relu_backward(d_out, rec.pre);
  d_theta[0] += d_pre.transpose() * rec.own;
  d_theta[1] += d_pre.transpose() * rec.linear;
  d_theta[2] += d_pre.transpose() * rec.mean;
  d_own = d_pre * theta[0];
  d_linear = d_pre * theta[1];
  d_mean = d_pre * theta[2];
  return d_pre;
}

Matrix mlp_backward(Matrix d_out, const GnnTape::Mlp& rec, const std::vector<Matrix>& mlp,
                    std::vector<Matrix>& d_mlp) {
  for (std::size_t s = mlp.size(); s-- > 0;) {
    const Matrix d_pre = relu_backward(d_out, rec.pre[s]);
    d_mlp[s] += d_pre.transpose() * rec.inputs[s];
    d_out = d_pre * mlp[s];
  }
  return d_out;
}

}  // namespace

Matrix gnn_backward(const Network& net, const NeighborNorms& norms, const GnnParams& params,
                    const GnnTape& tape, const Vector& d_direction, GnnParams& grads) {
  const std::size_t L = net.num_layers();
  const Matrix& mu0 = tape.final_state.layers[0];
  grads.score += mu0.transpose() * d_direction;

  // gradient w.r.t. the current state, per layer
  std::vector<Matrix> g(L + 1);
  for (std::size_t k = 0; k <= L; ++k) g[k] = Matrix::Zero(net.width(k), params.p);
  g[0] = d_direction * params.score.transpose();

  Matrix d_own, d_linear, d_mean;
  for (int r = params.T2; r-- > 0;) {
    const auto round = static_cast<std::size_t>(r);
    // backward sweep ran k = L-1..0, so undo it for k = 0..L-1
    std::vector<Matrix> gp(L + 1);  // w.r.t. forward-sweep outputs
    gp[L] = g[L];
    for (std::size_t k = 0; k < L; ++k) {
      const GnnTape::Update& rec = tape.bwd[round][k];
      combine_backward(g[k], rec, params.backward, grads.backward, d_own, d_linear, d_mean);
      gp[k] = d_own;
      const Layer& layer = net.layer(k);
      // linear = W^T (next - b), mean = B next
      Matrix d_next = layer.weight * d_linear + norms.backward_mean[k].transpose() * d_mean;
      if (k + 1 < L) {
        g[k + 1] += d_next;
      } else {
        gp[L] += d_next;
      }
    }
    // forward sweep ran k = 1..L
    std::vector<Matrix> prev(L + 1);
    for (std::size_t k = 0; k <= L; ++k) prev[k] = Matrix::Zero(net.width(k), params.p);
    prev[0] = gp[0];
    for (std::size_t k = L; k >= 1; --k) {
      const GnnTape::Update& rec = tape.fwd[round][k - 1];
      combine_backward(gp[k], rec, params.forward, grads.forward, d_own, d_linear, d_mean);
      prev[k] += d_own;
      const Layer& layer = net.layer(k - 1);
      const Matrix d_source =
          layer.weight.transpose() * d_linear + norms.forward_mean[k - 1].transpose() * d_mean;
      if (k - 1 == 0) {
        prev[0] += d_source;
      } else {
        gp[k - 1] += d_source;
      }
    }
    g = std::move(prev);
  }

  Matrix d_input = mlp_backward(g[0], tape.mlp[0], params.input_mlp, grads.input_mlp);
  for (std::size_t k = 1; k <= L; ++k) mlp_backward(g[k], tape.mlp[k], params.hidden_mlp, grads.hidden_mlp);
  return d_input;
}

PropertyContext make_context(const Network& net, const AttackProperty& prop, FeatureMode mode,
                             const DualConfig& dual_cfg) {
  validate(net, prop);
  LayerBounds bounds = best_bounds(net, prop.ball);
  std::optional<DualState> dual;
  if (mode == FeatureMode::dual) dual = supergradient_ascent(net, prop, bounds, dual_cfg);
  FeatureBuilder features(net, prop, bounds, dual ? &*dual : nullptr, mode);
  return PropertyContext{&net, prop, std::move(bounds), std::move(dual), std::move(features),
                         neighbor_norms(net)};
}

namespace {

class GnnStepper final : public Stepper {
 public:
  GnnStepper(const PropertyContext& ctx, const GnnParams& params, double alpha)
      : ctx_(ctx), params_(params), alpha_(alpha) {}
  Vector step(const Vector& x, const LossGradient& lg) override {
    const FeatureSet features = ctx_.features.at(x, lg.gradient);
    const Vector direction = gnn_direction(*ctx_.net, ctx_.norms, params_, features);
    return ctx_.prop.ball.project(x + alpha_ * direction);
  }

 private:
  const PropertyContext& ctx_;
  const GnnParams& params_;
  double alpha_;
};

}  // namespace

AttackOutcome advgnn_attack(const PropertyContext& ctx, const GnnParams& params,
                            const AdvGnnConfig& cfg, Clock::time_point started) {
  params.validate();
  if (!(cfg.alpha > 0.0)) throw ConfigError("advgnn: alpha must be > 0");
  GnnStepper stepper(ctx, params, cfg.alpha);
  return run_iterative(*ctx.net, ctx.prop, cfg.steps, cfg.run, stepper, started);
}

AttackOutcome advgnn_attack(const Network& net, const AttackProperty& prop,
                            const GnnParams& params, const AdvGnnConfig& cfg) {
  const auto started = Clock::now();
  params.validate();
  if (expired(cfg.run.deadline)) {
    // no time for the precomputation either
    AttackOutcome out;
    out.timed_out = true;
    out.final_loss = adversarial_loss(net, prop.ball.project(prop.ball.center()), prop.y, prop.y_tar);
    out.wall_time = std::chrono::duration<double>(Clock::now() - started).count();
    return out;
  }
  const PropertyContext ctx = make_context(net, prop, cfg.feature_mode, cfg.dual);
  return advgnn_attack(ctx, params, cfg, started);
}

GnnParams simulate_fgsm_params(Index p, int T2) {
  if (p < 2) throw ConfigError("simulate_fgsm_params: p must be >= 2");
  GnnParams out = GnnParams::zeros(p, 1, T2);
  out.input_mlp[0](0, 1) = 1.0;
  out.input_mlp[0](1, 1) = -1.0;
  out.input_mlp[1] = Matrix::Identity(p, p);
  out.hidden_mlp[1] = Matrix::Identity(p, p);
  out.forward[0] = Matrix::Identity(p, p);
  out.backward[0] = Matrix::Identity(p, p);
  out.score[0] = 1.0;
  out.score[1] = -1.0;
  return out;
}

}  // namespace advgnn

#include "advgnn/relaxation.hpp"

#include "advgnn/error.hpp"
#include "advgnn/json_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>

namespace advgnn {

PlanetNeuron PlanetNeuron::classify(double l, double u) {
  if (!(l <= u)) throw SoundnessError("planet relaxation: crossing bounds");
  PlanetNeuron n;
  n.lower = l;
  n.upper = u;
  if (u <= 0.0) {
    n.state = NeuronState::blocked;
  } else if (l >= 0.0) {
    n.state = NeuronState::passing;
  } else {
    n.state = NeuronState::ambiguous;
    n.slope = u / (u - l);
    n.intercept = -u * l / (u - l);
  }
  return n;
}

bool PlanetNeuron::contains(double x_hat, double z, double tol) const {
  if (x_hat < lower - tol || x_hat > upper + tol) return false;
  switch (state) {
    case NeuronState::blocked:
      return std::abs(z) <= tol;
    case NeuronState::passing:
      return std::abs(z - x_hat) <= tol;
    case NeuronState::ambiguous:
      return z >= -tol && z >= x_hat - tol && z <= slope * x_hat + intercept + tol;
  }
  return false;
}

int PlanetNeuron::vertices(double (&xs)[3], double (&zs)[3]) const {
  switch (state) {
    case NeuronState::blocked:
      xs[0] = lower, zs[0] = 0.0;
      xs[1] = upper, zs[1] = 0.0;
      return 2;
    case NeuronState::passing:
      xs[0] = lower, zs[0] = lower;
      xs[1] = upper, zs[1] = upper;
      return 2;
    case NeuronState::ambiguous:
      xs[0] = lower, zs[0] = 0.0;
      xs[1] = 0.0, zs[1] = 0.0;
      xs[2] = upper, zs[2] = upper;
      return 3;
  }
  return 0;
}

Relaxation build_relaxation(const Network& net, const AttackProperty& prop,
                            const LayerBounds& bounds) {
  validate(net, prop);
  const std::size_t L = net.num_layers();
  if (bounds.num_layers() != L) throw ShapeError("relaxation: bounds need one entry per layer");
  Relaxation relax{prop.ball, {}, {}, {}};
  for (std::size_t i = 0; i + 1 < L; ++i) {
    relax.weights.push_back(net.layer(i).weight);
    relax.biases.push_back(net.layer(i).bias);
  }
  // objective row: x_hat_L[y] - x_hat_L[y_tar]
  const Layer& last = net.layer(L - 1);
  relax.weights.push_back(last.weight.row(prop.y) - last.weight.row(prop.y_tar));
  relax.biases.push_back(Vector::Constant(1, last.bias[prop.y] - last.bias[prop.y_tar]));

  for (std::size_t k = 1; k < L; ++k) {
    const Vector& l = bounds.lower[k - 1];
    const Vector& u = bounds.upper[k - 1];
    if (l.size() != net.width(k) || u.size() != net.width(k))
      throw ShapeError("relaxation: bounds for layer " + std::to_string(k) + " have wrong width");
    std::vector<PlanetNeuron> layer;
    layer.reserve(static_cast<std::size_t>(l.size()));
    for (Index j = 0; j < l.size(); ++j) {
      if (!(l[j] <= u[j]))
        throw SoundnessError("relaxation: layer " + std::to_string(k) + " neuron " +
                             std::to_string(j) + " has lb > ub");
      layer.push_back(PlanetNeuron::classify(l[j], u[j]));
    }
    relax.neurons.push_back(std::move(layer));
  }
  return relax;
}

namespace {

void check_rho(const Relaxation& relax, const std::vector<Vector>& rho) {
  if (rho.size() != relax.num_hidden()) throw ShapeError("dual: need one multiplier vector per hidden layer");
  for (std::size_t k = 0; k < rho.size(); ++k) {
    if (rho[k].size() != static_cast<Index>(relax.neurons[k].size()))
      throw ShapeError("dual: multiplier width mismatch at layer " + std::to_string(k + 1));
  }
}

// Coefficient on x_hat_A[k+1] (0-based k+1 in 1..H+1) in the decomposed objective.
Vector output_coefficient(const Relaxation& relax, const std::vector<Vector>& rho,
                          std::size_t next_layer) {
  if (next_layer == relax.num_hidden() + 1) return Vector::Ones(1);
  return -rho[next_layer - 1];
}

}  // namespace

std::vector<Vector> zero_multipliers(const Relaxation& relax) {
  std::vector<Vector> rho;
  for (const auto& layer : relax.neurons) rho.push_back(Vector::Zero(static_cast<Index>(layer.size())));
  return rho;
}

double decomposed_objective(const Relaxation& relax, const std::vector<Vector>& rho,
                            const DualAssignment& point) {
  check_rho(relax, rho);
  const std::size_t H = relax.num_hidden();
  double value = point.zhat_a.at(H)[0];
  for (std::size_t k = 0; k < H; ++k) value += rho[k].dot(point.zhat_b.at(k) - point.zhat_a.at(k));
  return value;
}

bool is_feasible(const Relaxation& relax, const DualAssignment& point, double tol) {
  const std::size_t H = relax.num_hidden();
  if (point.zhat_a.size() != H + 1 || point.zhat_b.size() != H || point.z.size() != H) return false;
  const PerturbationBall& ball = relax.ball;
  if (point.input.size() != ball.dim()) return false;
  for (Index i = 0; i < ball.dim(); ++i) {
    if (point.input[i] < ball.lower()[i] - tol || point.input[i] > ball.upper()[i] + tol) return false;
  }
  auto affine_ok = [&](std::size_t k, const Vector& source) {
    const Vector expect = relax.weights[k] * source + relax.biases[k];
    if (point.zhat_a[k].size() != expect.size()) return false;
    const double scale = 1.0 + expect.lpNorm<Eigen::Infinity>();
    return (point.zhat_a[k] - expect).lpNorm<Eigen::Infinity>() <= tol * scale;
  };
  if (!affine_ok(0, point.input)) return false;
  for (std::size_t k = 0; k < H; ++k) {
    const auto& layer = relax.neurons[k];
    if (point.zhat_b[k].size() != static_cast<Index>(layer.size())) return false;
    for (std::size_t j = 0; j < layer.size(); ++j) {
      const auto jj = static_cast<Index>(j);
      if (!layer[j].contains(point.zhat_b[k][jj], point.z[k][jj], tol)) return false;
    }
    if (!affine_ok(k + 1, point.z[k])) return false;
  }
  return true;
}

InnerMinimum dual_inner_min(const std::vector<Vector>& rho, const Relaxation& relax) {
  check_rho(relax, rho);
  const std::size_t H = relax.num_hidden();
  InnerMinimum out;
  out.argmin.zhat_a.resize(H + 1);
  out.argmin.zhat_b.resize(H);
  out.argmin.z.resize(H);

  // input block
  {
    const Vector g = output_coefficient(relax, rho, 1);
    const Vector a = relax.weights[0].transpose() * g;
    const PerturbationBall& ball = relax.ball;
    const Vector center = ball.project(ball.center());
    Vector z0(ball.dim());
    for (Index i = 0; i < z0.size(); ++i) {
      z0[i] = a[i] > 0.0 ? ball.lower()[i] : (a[i] < 0.0 ? ball.upper()[i] : center[i]);
    }
    out.argmin.zhat_a[0] = relax.weights[0] * z0 + relax.biases[0];
    out.value += g.dot(out.argmin.zhat_a[0]);
    out.argmin.input = std::move(z0);
  }

  // hidden blocks
  for (std::size_t k = 0; k < H; ++k) {
    const Vector g = output_coefficient(relax, rho, k + 2);
    const Vector a = relax.weights[k + 1].transpose() * g;
    const auto& layer = relax.neurons[k];
    Vector zhat(static_cast<Index>(layer.size()));
    Vector z(static_cast<Index>(layer.size()));
    double xs[3];
    double zs[3];
    for (std::size_t j = 0; j < layer.size(); ++j) {
      const auto jj = static_cast<Index>(j);
      const int count = layer[j].vertices(xs, zs);
      int best = 0;
      double best_value = std::numeric_limits<double>::infinity();
      for (int v = 0; v < count; ++v) {
        const double val = rho[k][jj] * xs[v] + a[jj] * zs[v];
        if (val < best_value) {
          best_value = val;
          best = v;
        }
      }
      zhat[jj] = xs[best];
      z[jj] = zs[best];
    }
    out.argmin.zhat_a[k + 1] = relax.weights[k + 1] * z + relax.biases[k + 1];
    out.value += rho[k].dot(zhat) + g.dot(out.argmin.zhat_a[k + 1]);
    out.argmin.zhat_b[k] = std::move(zhat);
    out.argmin.z[k] = std::move(z);
  }
  return out;
}

std::vector<Vector> supergradient(const InnerMinimum& inner) {
  std::vector<Vector> out;
  out.reserve(inner.argmin.zhat_b.size());
  for (std::size_t k = 0; k < inner.argmin.zhat_b.size(); ++k)
    out.push_back(inner.argmin.zhat_b[k] - inner.argmin.zhat_a[k]);
  return out;
}

DualState supergradient_ascent(const Relaxation& relax, const DualConfig& cfg) {
  if (cfg.steps < 1) throw ConfigError("supergradient ascent: steps must be >= 1");
  std::vector<Vector> rho = zero_multipliers(relax);
  std::vector<Vector> m = zero_multipliers(relax);
  std::vector<Vector> v = zero_multipliers(relax);

  DualState best;
  best.dual_value = -std::numeric_limits<double>::infinity();
  auto evaluate = [&](const std::vector<Vector>& at) {
    InnerMinimum inner = dual_inner_min(at, relax);
    best.history.push_back(inner.value);
    if (inner.value > best.dual_value) {
      best.dual_value = inner.value;
      best.rho = at;
      best.x_lp = inner.argmin.input;
    }
    return inner;
  };

  InnerMinimum inner = evaluate(rho);
  for (long s = 1; s <= cfg.steps && relax.num_hidden() > 0; ++s) {
    const std::vector<Vector> g = supergradient(inner);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s));
    for (std::size_t k = 0; k < rho.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k].cwiseProduct(g[k]);
      const Vector m_hat = m[k] / c1;
      const Vector v_hat = v[k] / c2;
      rho[k] += cfg.lr * (m_hat.array() / (v_hat.array().sqrt() + cfg.eps)).matrix();
    }
    inner = evaluate(rho);
  }
  return best;
}

DualState supergradient_ascent(const Network& net, const AttackProperty& prop,
                               const LayerBounds& bounds, const DualConfig& cfg) {
  return supergradient_ascent(build_relaxation(net, prop, bounds), cfg);
}

nlohmann::json dual_to_json(const DualState& dual) {
  nlohmann::json rho = nlohmann::json::array();
  for (const Vector& r : dual.rho) rho.push_back(json_io::vector_to_json(r));
  return {{"q", dual.dual_value}, {"rho", std::move(rho)}, {"x_lp", json_io::vector_to_json(dual.x_lp)}};
}

}  // namespace advgnn

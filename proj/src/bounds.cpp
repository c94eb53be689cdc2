#include "advgnn/bounds.hpp"

#include "advgnn/error.hpp"
#include "advgnn/json_io.hpp"

#include <nlohmann/json.hpp>

namespace advgnn {

namespace {

constexpr double kSlopeFloor = 1e-12;

double relaxed_slope(double l, double u) { return u / std::max(u - l, kSlopeFloor); }

void check_ball(const Network& net, const PerturbationBall& ball) {
  if (ball.dim() != net.input_dim())
    throw ShapeError("bounds: ball has dimension " + std::to_string(ball.dim()) +
                     ", network expects " + std::to_string(net.input_dim()));
}

void interval_affine(const Layer& layer, const Vector& lo, const Vector& hi, Vector& out_lo,
                     Vector& out_hi) {
  const Matrix pos = layer.weight.cwiseMax(0.0);
  const Matrix neg = layer.weight.cwiseMin(0.0);
  out_lo = pos * lo + neg * hi + layer.bias;
  out_hi = pos * hi + neg * lo + layer.bias;
}

}  // namespace

LayerBounds ibp(const Network& net, const PerturbationBall& ball) {
  check_ball(net, ball);
  LayerBounds out;
  Vector lo = ball.lower();
  Vector hi = ball.upper();
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    Vector pre_lo, pre_hi;
    interval_affine(net.layer(i), lo, hi, pre_lo, pre_hi);
    out.lower.push_back(pre_lo);
    out.upper.push_back(pre_hi);
    lo = pre_lo.cwiseMax(0.0);
    hi = pre_hi.cwiseMax(0.0);
  }
  return out;
}

Vector linear_lower_bounds(const Network& net, const PerturbationBall& ball,
                           const LayerBounds& earlier, std::size_t k, const Matrix& objectives) {
  check_ball(net, ball);
  if (k < 1 || k > net.num_layers()) throw ShapeError("linear bounds: layer index out of range");
  if (earlier.num_layers() + 1 < k) throw ShapeError("linear bounds: missing earlier-layer bounds");
  if (objectives.cols() != net.width(k)) throw ShapeError("linear bounds: objective width mismatch");

  // lambda: coefficients on x_hat_i, one row per objective
  Matrix lambda = objectives;
  Vector constant = Vector::Zero(objectives.rows());
  for (std::size_t i = k - 1; i >= 1; --i) {
    const Layer& layer = net.layer(i);  // maps x_i (post-ReLU of layer i) to x_hat_{i+1}
    constant += lambda * layer.bias;
    const Matrix coeff = lambda * layer.weight;  // on x_i
    const Vector& l = earlier.lower[i - 1];
    const Vector& u = earlier.upper[i - 1];
    Matrix next = Matrix::Zero(coeff.rows(), coeff.cols());
    for (Index j = 0; j < coeff.cols(); ++j) {
      if (u[j] <= 0.0) continue;
      if (l[j] >= 0.0) {
        next.col(j) = coeff.col(j);
        continue;
      }
      const double s = relaxed_slope(l[j], u[j]);
      for (Index r = 0; r < coeff.rows(); ++r) {
        const double a = coeff(r, j);
        next(r, j) = a * s;
        // a < 0 uses the upper line z <= s (x_hat - l)
        if (a < 0.0) constant[r] -= a * s * l[j];
      }
    }
    lambda = std::move(next);
  }
  const Layer& first = net.layer(0);
  constant += lambda * first.bias;
  const Matrix on_input = lambda * first.weight;
  const Vector& lo = ball.lower();
  const Vector& hi = ball.upper();
  Vector out = constant;
  for (Index r = 0; r < on_input.rows(); ++r) {
    double acc = 0.0;
    for (Index c = 0; c < on_input.cols(); ++c) {
      const double a = on_input(r, c);
      acc += a >= 0.0 ? a * lo[c] : a * hi[c];
    }
    out[r] += acc;
  }
  return out;
}

LayerBounds wk_bounds(const Network& net, const PerturbationBall& ball) {
  const LayerBounds interval = ibp(net, ball);
  LayerBounds out;
  LayerBounds running;
  for (std::size_t k = 1; k <= net.num_layers(); ++k) {
    if (k == 1) {
      out.lower.push_back(interval.lower[0]);
      out.upper.push_back(interval.upper[0]);
    } else {
      const Index n = net.width(k);
      Matrix objectives(2 * n, n);
      objectives << Matrix::Identity(n, n), -Matrix::Identity(n, n);
      const Vector both = linear_lower_bounds(net, ball, running, k, objectives);
      out.lower.push_back(both.head(n));
      out.upper.push_back(-both.tail(n));
    }
    Vector lo = out.lower.back().cwiseMax(interval.lower[k - 1]);
    Vector hi = out.upper.back().cwiseMin(interval.upper[k - 1]);
    // rounding can cross degenerate intervals by an ulp
    hi = hi.cwiseMax(lo);
    running.lower.push_back(std::move(lo));
    running.upper.push_back(std::move(hi));
  }
  return out;
}

LayerBounds tightest(const LayerBounds& a, const LayerBounds& b) {
  if (a.num_layers() != b.num_layers()) throw ShapeError("tightest: layer counts differ");
  LayerBounds out;
  for (std::size_t k = 0; k < a.num_layers(); ++k) {
    if (a.lower[k].size() != b.lower[k].size() || a.upper[k].size() != b.upper[k].size() ||
        a.lower[k].size() != a.upper[k].size())
      throw ShapeError("tightest: layer " + std::to_string(k + 1) + " widths differ");
    Vector lo = a.lower[k].cwiseMax(b.lower[k]);
    Vector hi = a.upper[k].cwiseMin(b.upper[k]);
    for (Index j = 0; j < lo.size(); ++j) {
      if (lo[j] <= hi[j]) continue;
      const double scale = std::max({1.0, std::abs(lo[j]), std::abs(hi[j])});
      if (lo[j] - hi[j] > 1e-9 * scale)
        throw SoundnessError("tightest: layer " + std::to_string(k + 1) + " neuron " +
                             std::to_string(j) + " has lb > ub after merging");
      hi[j] = lo[j];
    }
    out.lower.push_back(std::move(lo));
    out.upper.push_back(std::move(hi));
  }
  return out;
}

LayerBounds best_bounds(const Network& net, const PerturbationBall& ball) {
  return tightest(ibp(net, ball), wk_bounds(net, ball));
}

nlohmann::json bounds_to_json(const LayerBounds& bounds) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t k = 0; k < bounds.num_layers(); ++k) {
    layers.push_back({{"layer", k + 1},
                      {"lb", json_io::vector_to_json(bounds.lower[k])},
                      {"ub", json_io::vector_to_json(bounds.upper[k])}});
  }
  return {{"layers", std::move(layers)}};
}

}  // namespace advgnn

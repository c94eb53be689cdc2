#pragma once

// Random instance generators and reference implementations used as oracles.
// The oracles are written with scalar loops and long double on purpose so
// they share no code path with the library.

#include "advgnn/attacks.hpp"
#include "advgnn/network.hpp"
#include "advgnn/random.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace testing {

using advgnn::Index;
using advgnn::Matrix;
using advgnn::Vector;

inline advgnn::Network random_network(advgnn::Rng& rng, const std::vector<Index>& dims,
                                      double scale = 1.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<advgnn::Layer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    advgnn::Layer l;
    const double s = scale / std::sqrt(static_cast<double>(dims[i]));
    l.weight = Matrix(dims[i + 1], dims[i]);
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = s * gauss(rng);
    l.bias = Vector(dims[i + 1]);
    for (Index r = 0; r < l.bias.size(); ++r) l.bias[r] = 0.1 * gauss(rng);
    layers.push_back(std::move(l));
  }
  return advgnn::Network(std::move(layers));
}

// Random architecture with `min_layers..max_layers` affine layers of width
// 2..max_width, input width 2..max_width, 3..5 outputs.
inline advgnn::Network random_architecture(advgnn::Rng& rng, int max_layers, Index max_width,
                                           int min_layers = 1) {
  std::uniform_int_distribution<int> n_layers(min_layers, max_layers);
  std::uniform_int_distribution<Index> width(2, max_width);
  std::uniform_int_distribution<Index> outs(3, 5);
  const int L = n_layers(rng);
  std::vector<Index> dims{width(rng)};
  for (int i = 0; i + 1 < L; ++i) dims.push_back(width(rng));
  dims.push_back(outs(rng));
  return random_network(rng, dims);
}

inline Vector uniform_vector(advgnn::Rng& rng, Index n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = u(rng);
  return v;
}

inline Index argmax(const Vector& v) {
  Index best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

// Center uniform in the box, y = predicted class, random other target.
inline advgnn::AttackProperty random_property(const advgnn::Network& net, advgnn::Rng& rng,
                                              double eps) {
  const Vector x = uniform_vector(rng, net.input_dim());
  const Index y = argmax(advgnn::logits(net, x));
  std::uniform_int_distribution<Index> pick(0, net.output_dim() - 2);
  Index t = pick(rng);
  if (t >= y) ++t;
  return {advgnn::PerturbationBall::around(net, x, eps), y, t, {}};
}

// Scalar long-double forward pass; returns pre-activations of every layer.
inline std::vector<std::vector<long double>> reference_forward(const advgnn::Network& net,
                                                               const Vector& x) {
  std::vector<long double> a(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) a[static_cast<std::size_t>(i)] = x[i];
  std::vector<std::vector<long double>> pre;
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const auto& layer = net.layer(k);
    std::vector<long double> z(static_cast<std::size_t>(layer.out_dim()));
    for (Index r = 0; r < layer.out_dim(); ++r) {
      long double s = layer.bias[r];
      for (Index c = 0; c < layer.in_dim(); ++c) s += static_cast<long double>(layer.weight(r, c)) * a[static_cast<std::size_t>(c)];
      z[static_cast<std::size_t>(r)] = s;
    }
    pre.push_back(z);
    if (k + 1 < net.num_layers()) {
      for (auto& v : z) v = v > 0 ? v : 0;
      a = z;
    }
  }
  return pre;
}

inline long double reference_loss(const advgnn::Network& net, const Vector& x, Index y,
                                  Index y_tar) {
  const auto pre = reference_forward(net, x);
  return pre.back()[static_cast<std::size_t>(y_tar)] - pre.back()[static_cast<std::size_t>(y)];
}

// Central differences with per-coordinate step h.
inline Vector finite_difference(const std::function<double(const Vector&)>& f, const Vector& x,
                                double h) {
  Vector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector a = x;
    Vector b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double a, double n) {
  const double scale = std::max(std::abs(a), std::abs(n));
  if (scale < 1e-7) return std::abs(a - n);
  return std::abs(a - n) / scale;
}

// Smallest |pre-activation| of any hidden neuron at x: distance to a ReLU kink.
inline double kink_distance(const advgnn::Network& net, const Vector& x) {
  const auto pre = reference_forward(net, x);
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < pre.size(); ++k)
    for (const auto v : pre[k]) d = std::min(d, static_cast<double>(std::abs(v)));
  return d;
}

// Minimum of the adversarial margin f_y - f_tar over a (n+1)^2 grid covering
// the feasible box of a 2-input property.
inline double grid_minimum_margin(const advgnn::Network& net, const advgnn::AttackProperty& prop,
                                  int n) {
  const Vector& lo = prop.ball.lower();
  const Vector& hi = prop.ball.upper();
  double best = std::numeric_limits<double>::infinity();
  Vector p(2);
  for (int i = 0; i <= n; ++i) {
    p[0] = lo[0] + (hi[0] - lo[0]) * i / n;
    for (int j = 0; j <= n; ++j) {
      p[1] = lo[1] + (hi[1] - lo[1]) * j / n;
      best = std::min(best, static_cast<double>(-reference_loss(net, p, prop.y, prop.y_tar)));
    }
  }
  return best;
}

inline bool in_feasible_set(const advgnn::PerturbationBall& ball, const Vector& x) {
  for (Index i = 0; i < x.size(); ++i) {
    const double lo = std::max(ball.center()[i] - ball.epsilon(), ball.box_lo()[i]);
    const double hi = std::min(ball.center()[i] + ball.epsilon(), ball.box_hi()[i]);
    if (!(x[i] >= lo && x[i] <= hi)) return false;
  }
  return true;
}

// Independent interval propagation with scalar loops.
struct Interval {
  std::vector<std::vector<double>> lower;
  std::vector<std::vector<double>> upper;
};

inline Interval reference_ibp(const advgnn::Network& net, const advgnn::PerturbationBall& ball) {
  std::vector<double> lo(static_cast<std::size_t>(ball.dim()));
  std::vector<double> hi(lo.size());
  for (Index i = 0; i < ball.dim(); ++i) {
    lo[static_cast<std::size_t>(i)] = std::max(ball.center()[i] - ball.epsilon(), ball.box_lo()[i]);
    hi[static_cast<std::size_t>(i)] = std::min(ball.center()[i] + ball.epsilon(), ball.box_hi()[i]);
  }
  Interval out;
  for (std::size_t k = 0; k < net.num_layers(); ++k) {
    const auto& layer = net.layer(k);
    std::vector<double> zl(static_cast<std::size_t>(layer.out_dim()));
    std::vector<double> zu(zl.size());
    for (Index r = 0; r < layer.out_dim(); ++r) {
      double a = layer.bias[r];
      double b = layer.bias[r];
      for (Index c = 0; c < layer.in_dim(); ++c) {
        const double w = layer.weight(r, c);
        const auto cc = static_cast<std::size_t>(c);
        a += w >= 0 ? w * lo[cc] : w * hi[cc];
        b += w >= 0 ? w * hi[cc] : w * lo[cc];
      }
      zl[static_cast<std::size_t>(r)] = a;
      zu[static_cast<std::size_t>(r)] = b;
    }
    out.lower.push_back(zl);
    out.upper.push_back(zu);
    for (std::size_t i = 0; i < zl.size(); ++i) {
      zl[i] = std::max(zl[i], 0.0);
      zu[i] = std::max(zu[i], 0.0);
    }
    lo = zl;
    hi = zu;
  }
  return out;
}

}  // namespace testing

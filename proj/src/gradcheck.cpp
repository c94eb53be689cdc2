#include "advgnn/gradcheck.hpp"

#include "advgnn/error.hpp"

#include <cmath>

namespace advgnn {

namespace {

double checked(const Objective& objective, const Vector& x) {
  const double v = objective(x);
  if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite at a probe point");
  return v;
}

}  // namespace

Vector central_differences(const Objective& objective, const Vector& point, double h) {
  if (!(h > 0.0)) throw ConfigError("grad_check: step must be positive");
  Vector out(point.size());
  Vector probe = point;
  for (Index i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + h;
    const double up = checked(objective, probe);
    probe[i] = point[i] - h;
    const double down = checked(objective, probe);
    probe[i] = point[i];
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

double relative_error(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < 1e-10) return diff;
  return diff / scale;
}

double grad_check(const Objective& objective, const Gradient& gradient, const Vector& point,
                  double h) {
  checked(objective, point);
  const Vector numeric = central_differences(objective, point, h);
  const Vector analytic = gradient(point);
  if (analytic.size() != point.size()) throw ShapeError("grad_check: gradient has wrong length");
  double worst = 0.0;
  for (Index i = 0; i < point.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  return worst;
}

}  // namespace advgnn

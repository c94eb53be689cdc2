#pragma once

#include "advgnn/network.hpp"

#include <functional>

namespace advgnn {

using Objective = std::function<double(const Vector&)>;
using Gradient = std::function<Vector(const Vector&)>;

// Worst coordinatewise relative error between `gradient(point)` and central
// differences of `objective` with step h. Relative error of a coordinate is
// |a - n| / max(|a|, |n|), or |a - n| when both are below 1e-10.
// Throws NumericError if the objective is non-finite at a probe.
double grad_check(const Objective& objective, const Gradient& gradient, const Vector& point,
                  double h);

// Central-difference gradient, exposed for tests that compare other maps.
Vector central_differences(const Objective& objective, const Vector& point, double h);

double relative_error(double analytic, double numeric);

}  // namespace advgnn

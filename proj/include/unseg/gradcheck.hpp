#pragma once

// Finite-difference verification of the hand-written VJPs. Runs in double
// precision; the point is a list of arrays (all inputs of the operation).

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "unseg/tensor.hpp"

namespace unseg {

using ArrayList = std::vector<DenseArray<double>>;

struct Differentiable {
  std::function<DenseArray<double>(const ArrayList&)> forward;
  /// Returns one cotangent per input, same shapes as the inputs.
  std::function<ArrayList(const ArrayList&, const DenseArray<double>&)> vjp;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t input_index = 0;
  std::size_t coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Relative error with an absolute fallback for magnitudes below 1e-8.
inline double relative_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  const double diff = std::abs(a - b);
  return scale < 1e-8 ? diff : diff / scale;
}

namespace detail {

inline double dot(const DenseArray<double>& a, const DenseArray<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline DenseArray<double> random_like(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  DenseArray<double> u(shape);
  for (auto& v : u.values()) v = nd(rng);
  return u;
}

inline DenseArray<double> checked_forward(const Differentiable& f, const ArrayList& x,
                                          std::size_t input, std::size_t coord) {
  DenseArray<double> y = f.forward(x);
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!std::isfinite(y[i]))
      throw NumericError("gradient_check: non-finite output[" + std::to_string(i) +
                         "] when perturbing input " + std::to_string(input) + " coordinate " +
                         std::to_string(coord));
  return y;
}

}  // namespace detail

/// Compares the analytic VJP against central differences of ⟨u, f(x)⟩ for a
/// random cotangent u, coordinate by coordinate over every input.
inline GradCheckReport gradient_check(const Differentiable& f, ArrayList point, double step,
                                      std::uint64_t seed = 0) {
  if (!(step > 0.0)) throw InvalidArgument("gradient_check: step must be positive");
  std::mt19937_64 rng(seed);
  const DenseArray<double> y0 = detail::checked_forward(f, point, 0, 0);
  const DenseArray<double> u = detail::random_like(y0.shape(), rng);
  const ArrayList analytic = f.vjp(point, u);
  if (analytic.size() != point.size())
    throw InvalidArgument("gradient_check: vjp returned " + std::to_string(analytic.size()) +
                          " cotangents for " + std::to_string(point.size()) + " inputs");

  GradCheckReport report;
  for (std::size_t k = 0; k < point.size(); ++k) {
    if (analytic[k].shape() != point[k].shape())
      throw InvalidArgument("gradient_check: cotangent " + std::to_string(k) + " has shape " +
                            shape_str(analytic[k].shape()) + ", input has " +
                            shape_str(point[k].shape()));
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      const double orig = point[k][i];
      point[k][i] = orig + step;
      const double fp = detail::dot(u, detail::checked_forward(f, point, k, i));
      point[k][i] = orig - step;
      const double fm = detail::dot(u, detail::checked_forward(f, point, k, i));
      point[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = relative_error(analytic[k][i], numeric);
      if (!std::isfinite(analytic[k][i]))
        throw NumericError("gradient_check: non-finite analytic gradient at input " +
                           std::to_string(k) + " coordinate " + std::to_string(i));
      if (err > report.max_rel_error || (k == 0 && i == 0))
        report = {err, k, i, analytic[k][i], numeric};
    }
  }
  return report;
}

/// Checks ⟨vjp(u), δ⟩ == ⟨u, J·δ⟩ with J·δ from a central difference along a
/// random direction δ. Returns the relative discrepancy.
inline double transpose_check(const Differentiable& f, ArrayList point, double step,
                              std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  const DenseArray<double> y0 = f.forward(point);
  const DenseArray<double> u = detail::random_like(y0.shape(), rng);
  ArrayList delta;
  for (const auto& p : point) delta.push_back(detail::random_like(p.shape(), rng));

  const ArrayList g = f.vjp(point, u);
  double lhs = 0.0;
  for (std::size_t k = 0; k < point.size(); ++k) lhs += detail::dot(g[k], delta[k]);

  auto shifted = [&](double t) {
    ArrayList x = point;
    for (std::size_t k = 0; k < x.size(); ++k)
      for (std::size_t i = 0; i < x[k].size(); ++i) x[k][i] += t * delta[k][i];
    return f.forward(x);
  };
  const DenseArray<double> yp = shifted(step), ym = shifted(-step);
  double rhs = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) rhs += u[i] * (yp[i] - ym[i]) / (2.0 * step);
  return relative_error(lhs, rhs);
}

}  // namespace unseg

#pragma once

// Test-only oracles, kept independent of the implementation paths they check:
// central finite differences for derivatives and Jacobian-vector products, and
// a deterministic point sampler.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "expr.hpp"

namespace oracle {

// Central finite difference of an Expr-valued function of one coordinate.
inline double fd_partial(const sk::Expr& e, std::span<const double> point, int var,
                         double h = 1e-5) {
  std::vector<double> p(point.begin(), point.end());
  p[var] += h;
  double up = sk::evaluate(e, p);
  p[var] -= 2 * h;
  double dn = sk::evaluate(e, p);
  return (up - dn) / (2 * h);
}

// [a,b](z) ~ J_b(z) a(z) - J_a(z) b(z), Jacobians by central differences.
inline std::vector<double> fd_bracket(std::span<const sk::Expr> a,
                                      std::span<const sk::Expr> b,
                                      std::span<const double> z, double h = 1e-5) {
  size_t n = a.size();
  std::vector<double> av(n), bv(n), out(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    av[i] = sk::evaluate(a[i], z);
    bv[i] = sk::evaluate(b[i], z);
  }
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (size_t j = 0; j < n; ++j) {
      acc += fd_partial(b[i], z, static_cast<int>(j), h) * av[j];
      acc -= fd_partial(a[i], z, static_cast<int>(j), h) * bv[j];
    }
    out[i] = acc;
  }
  return out;
}

// Deterministic standard-normal sampler for test points.
struct PointSampler {
  std::mt19937_64 rng;
  explicit PointSampler(uint64_t seed) : rng(seed) {}
  std::vector<double> normal(size_t n, double scale = 1.0) {
    std::vector<double> p(n);
    for (auto& v : p) {
      // Box-Muller on raw 53-bit uniforms; deterministic across stdlibs.
      double u1 = ((rng() >> 11) + 1) * 0x1p-53;
      double u2 = ((rng() >> 11) + 1) * 0x1p-53;
      v = scale * std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
    return p;
  }
};

inline bool close(double a, double b, double rel, double abs_tol = 0.0) {
  return std::abs(a - b) <= abs_tol + rel * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

}  // namespace oracle

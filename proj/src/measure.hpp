#pragma once

// The explicit invariant density e^{-g(H)}, the adjoint-generator identity
// L* e^{-g(H)} = 0, empirical stationarity tests against quadrature or
// closed-form references, and a binned total-variation overlap diagnostic.

#include <optional>
#include <string>
#include <vector>

#include "sde.hpp"

namespace sk {

struct InvariantDensity {
  Expr unnormalized;              // e^{-g(H)}
  std::optional<double> normalization;  // Z, computed in dimension <= 3
  double z_error = 0;             // |Z at 2n nodes - Z at n nodes|
  double box_radius = 0;          // quadrature truncation box [-R, R]^N
};

/// Z by tensor Gauss-Legendre over an automatically chosen box whose boundary
/// density is below 1e-14 of the central value. Dimensions > 3 get no Z.
InvariantDensity invariant_density(const SdeSystem& s, int nodes = 96);

/// E_mu[fn] as a quadrature ratio (dimension <= 3).
double density_expectation(const SdeSystem& s, const Expr& fn, int nodes = 96);

struct AdjointReport {
  Expr residual;          // simplified L*F
  bool symbolic_zero = false;
  double max_abs = 0;     // over seeded sample points
  bool pass = false;
};

/// L*F = sum_i [ -d_i(b_i F) + d_i^2(a_i F) ] with diffusion coefficients
/// a_i given directly (a_i = sigma_i^2 / 2).
AdjointReport adjoint_generator_residual_coeff(int dim, const std::vector<Expr>& drift,
                                               const std::vector<Expr>& a, const Expr& F,
                                               double tol = 1e-8, int samples = 100,
                                               uint64_t seed = 31, double scale = 1.0);

AdjointReport adjoint_generator_residual(const DiffusionSystem& d, const Expr& F,
                                         double tol = 1e-8, int samples = 100,
                                         uint64_t seed = 31, double scale = 1.0);

/// Residual for the auxiliary SDE with F = e^{-g(H)}; uses the exact
/// coefficient e^{-2g(H)} rather than squaring the amplitude.
AdjointReport adjoint_generator_residual(const SdeSystem& s, double tol = 1e-8);

struct StationarityOptions {
  long long burn = -1;       // -1: 10% of the run
  int batches = 20;          // batch-means standard errors
  double allowance_rel = 0.02;  // discretization allowance, relative to |ref|
};

struct TestFnResult {
  std::string fn;
  double average = 0;
  double se = 0;
  double reference = 0;
  bool pass = false;
};

struct StationarityReport {
  std::vector<TestFnResult> fns;
  long long steps = 0, burn = 0;
  double dt = 0;
  uint64_t seed = 0;
  bool all_pass = false;
};

/// Single long trajectory; time averages after burn-in against references
/// (explicit, or quadrature when absent and dimension <= 3). Verdict:
/// |avg - ref| <= 3 SE + allowance.
StationarityReport stationarity_test(const SdeSystem& s,
                                     const std::vector<Expr>& test_fns,
                                     const std::vector<std::optional<double>>& references,
                                     std::span<const double> z0, long long steps, double dt,
                                     uint64_t seed, const StationarityOptions& opts = {});

struct OverlapCell {
  std::vector<double> center;
  double mass_a = 0, mass_b = 0;
};

struct OverlapReport {
  double estimate = 0;     // binned TV in [0, 2]
  double ci_lo = 0, ci_hi = 0;  // bootstrap 95% interval
  int bins_per_dim = 0;
  int paths = 0;
  std::vector<OverlapCell> histogram;  // occupied cells of the shared binning
  std::string note = "diagnostic: binned TV underestimates the true TV distance";
};

/// TV distance between the two time-t ensembles via a shared histogram.
OverlapReport kernel_overlap(const SdeSystem& s, std::span<const double> z,
                             std::span<const double> zp, double t, int paths, double dt,
                             int bins_per_dim, uint64_t seed);

/// Columns: center_<var> per dimension, then mass_a, mass_b.
void save_overlap_csv(const OverlapReport& rep, const std::vector<std::string>& vars,
                      const std::string& path);

}  // namespace sk

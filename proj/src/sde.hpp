#pragma once

// The auxiliary Ito SDE built from a model and a tempering function g:
//
//   d xi  = f_x dt - (3 g'(H) e^{-2g(H)} grad_x H) dt + sqrt(2) e^{-g(H)} dw
//   d eta = f_y dt
//
// with noise injected into the control block only, plus the fixed-step
// Euler-Maruyama integrator with recorded Gaussian increments.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "expr.hpp"
#include "model.hpp"

namespace sk {

enum class GKind { Linear, Logarithmic, Custom, None };

/// Tempering family. g must be smooth, increasing, g(0) = 0. `None` disables
/// tempering entirely (g == 0): used for models without a conserved quantity,
/// where the invariant-measure machinery does not apply.
struct GFamily {
  GKind kind = GKind::Linear;
  double alpha = 1.0;
  Expr custom;  // over one variable h, used when kind == Custom

  Expr g_of(const Expr& h) const;        // g(h)
  Expr gprime_of(const Expr& h) const;   // g'(h)
  /// g(0)==0 and g' > 0 sampled on [0, h_max].
  void validate(double h_max = 50.0, int samples = 200) const;
  static GFamily linear(double alpha) { return {GKind::Linear, alpha, {}}; }
  static GFamily logarithmic(double alpha) { return {GKind::Logarithmic, alpha, {}}; }
  static GFamily none() { return {GKind::None, 0.0, {}}; }
};

/// Generic diffusion dz = b(z) dt + diag(sigma)(z) dW used by the measure
/// module (the chain SDE is one of these; the auxiliary SDE converts to one).
struct DiffusionSystem {
  int dim = 0;
  std::vector<std::string> vars;
  std::vector<Expr> drift;
  std::vector<Expr> sigma;  // per-coordinate amplitude, Expr zero where no noise
};

struct NoiseRecord {
  uint64_t seed = 0;
  int noise_dim = 0;
  double dt = 0;
  std::vector<double> increments;  // steps x noise_dim, row-major
};

struct Trajectory {
  double t0 = 0;
  double dt = 0;
  std::vector<std::string> vars;
  std::vector<double> states;      // (steps+1) x dim, row-major
  std::vector<double> energy;      // H along the path when available, else empty
  NoiseRecord noise;
  int dim = 0;

  long long steps() const { return static_cast<long long>(states.size()) / dim - 1; }
  std::span<const double> state(long long k) const {
    return {states.data() + k * dim, static_cast<size_t>(dim)};
  }
  double time(long long k) const { return t0 + k * dt; }
};

struct GrowthConditionReport {
  bool checked = false;
  double constant = 0.0;   // fitted C with e^{-2g(H)} Delta_x H <= C + H on the grid
  double worst_gap = 0.0;  // max of (lhs - H); C = max(0, worst_gap)
  int samples = 0;
  // a huge fitted constant suggests the family tempers too slowly for this
  // model; increase alpha or switch family
  bool suspicious = false;
};

class SdeSystem {
public:
  SdeSystem(ModelSpec model, GFamily g);

  const ModelSpec& model() const { return model_; }
  const GFamily& g() const { return g_; }
  bool tempered() const { return g_.kind != GKind::None; }
  const std::vector<Expr>& drift() const { return drift_; }
  const Expr& amplitude() const { return amplitude_; }  // scalar, E-block only
  const std::vector<int>& noise_indices() const { return noise_idx_; }
  const GrowthConditionReport& growth() const { return growth_; }
  /// e^{-g(H)}; throws for untempered systems.
  Expr invariant_unnormalized() const;
  DiffusionSystem as_diffusion() const;

  // hot-loop evaluators (drift for all coords, amplitude, H)
  const CompiledField& drift_field() const { return drift_field_; }
  const CompiledField& amplitude_field() const { return amplitude_field_; }
  const CompiledField* energy_field() const {
    return model_.conserved ? &energy_field_ : nullptr;
  }

private:
  ModelSpec model_;
  GFamily g_;
  std::vector<Expr> drift_;
  Expr amplitude_;
  std::vector<int> noise_idx_;
  GrowthConditionReport growth_;
  CompiledField drift_field_;
  CompiledField amplitude_field_;
  CompiledField energy_field_;
};

SdeSystem build_sde(const ModelSpec& m, const GFamily& g);

struct IntegrateOptions {
  bool record_noise = true;
  bool record_energy = true;
  bool zero_noise = false;  // all increments forced to 0: the drift ODE alone
  double blowup_threshold = 1e12;
};

/// Euler-Maruyama with fixed step and per-step N(0, dt) increments in the
/// E-block. Fully determined by (seed, dt, steps, z0).
Trajectory integrate(const SdeSystem& s, std::span<const double> z0, double dt,
                     long long steps, uint64_t seed, const IntegrateOptions& opts = {});

// CSV (t, vars..., H) and the noise sidecar (little-endian: magic "SKNZ", u32
// version, u64 seed, u32 noise_dim, u64 steps, f64 dt, f64 increments).
void save_trajectory_csv(const Trajectory& t, const std::string& path);
void save_noise_record(const Trajectory& t, const std::string& path);
Trajectory load_trajectory_csv(const std::string& path);
NoiseRecord load_noise_record(const std::string& path);

struct EnergyBoundReport {
  std::vector<double> times;
  std::vector<double> mean_H;
  std::vector<double> stderr_H;
  std::vector<double> bound;  // H0 e^t + C(e^t - 1) + 3 SE
  double H0 = 0;
  double constant = 0;
  int paths = 0;
  bool pass = false;
};

/// Monte-Carlo check of E H_t <= H0 e^t + C (e^t - 1); paths run in parallel
/// with seeds derive_seed(seed, path).
EnergyBoundReport energy_bound_check(const SdeSystem& s, std::span<const double> z0,
                                     double t_end, int paths, double dt, uint64_t seed,
                                     int checkpoints = 10);

}  // namespace sk

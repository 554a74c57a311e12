#pragma once

// Open-loop control synthesis by noise harvesting: find SDE paths that hit a
// target ball, turn the non-drift part of the discrete x-updates into a
// piecewise-constant control, and verify the control on the deterministic
// system with a 4th-order integrator.

#include <string>
#include <vector>

#include "measure.hpp"
#include "model.hpp"
#include "sde.hpp"

namespace sk {

struct TargetSet {
  std::vector<double> center;
  double radius = 0;
  bool contains(std::span<const double> z) const;
};

struct HittingResult {
  bool hit = false;
  double hit_time = 0;
  long long hit_step = -1;
  int attempt_index = -1;     // lowest hitting attempt (deterministic)
  int attempts_used = 0;
  Trajectory trajectory;      // winning path truncated at the hit
  double closest = 0;         // diagnostics over all attempts
  double closest_time = 0;
  int closest_attempt = -1;
  bool radius_warning = false;  // target radius < 10x typical step displacement
};

/// Independent restarts from z0 with stream seeds derive_seed(seed, attempt);
/// attempts run in parallel, the winner is the lowest hitting attempt index.
HittingResult find_hitting_path(const SdeSystem& s, std::span<const double> z0,
                                const TargetSet& target, double dt, long long max_steps,
                                int max_attempts, uint64_t seed);

struct ControlSignal {
  double t0 = 0;
  double dt = 0;                 // coarse mesh step
  std::vector<int> e_indices;    // control coordinates
  std::vector<std::string> e_names;
  std::vector<double> values;    // steps x n, row-major, piecewise constant
  long long steps() const {
    return e_indices.empty() ? 0 : static_cast<long long>(values.size() / e_indices.size());
  }
  double duration() const { return steps() * dt; }
};

/// u_k = (x_{k+1} - (x_k + dt f_x(z_k))) / dt per control coordinate: the whole
/// non-f part of the discrete update becomes the control. Forward-Euler replay
/// under this control reproduces the discrete trajectory (exactly in exact
/// arithmetic; to ~ulp per step in floating point).
ControlSignal extract_control(const ModelSpec& m, const Trajectory& traj);

/// Forward-Euler replay of z' = f(z) + u(t) from z0 on the control mesh.
std::vector<double> replay_forward_euler(const ModelSpec& m, std::span<const double> z0,
                                         const ControlSignal& u);

struct VerifyReport {
  std::vector<double> terminal;
  double miss_distance = 0;    // to the target center
  bool hit = false;            // within the target radius
  double ode_dt = 0;
  double duration = 0;
};

/// RK4 on the refined mesh with u held constant per coarse interval.
VerifyReport verify_control(const ModelSpec& m, std::span<const double> z0,
                            const ControlSignal& u, const TargetSet& target, double ode_dt);

/// Optional smoothing: convolution with the standard mollifier of the given
/// half-width (default: one mesh step), sampled on a refined mesh. Endpoints
/// clamp to the first/last control value. Not used by the steering gates.
ControlSignal mollify_control(const ControlSignal& u, double half_width = -1,
                              int refine = 4);

struct SteerOptions {
  double dt0 = 1e-3;
  long long max_steps = 400000;  // per attempt at dt0; scaled to keep the horizon
  int max_attempts = 12;         // per budget round
  int ode_refine = 4;            // verification substeps per SDE step
  double hit_shrink = 0.5;       // SDE hits into radius hit_shrink * eps
  bool rank_gate = true;         // advisory only
  uint64_t rank_seed = 42;
};

struct SteerReport {
  bool success = false;
  int rounds_used = 0;
  double dt_used = 0;
  ControlSignal control;
  VerifyReport verify;
  bool rank_warning = false;     // some sampled point was not full rank
  bool untempered = false;       // model had no H; ran with g == 0
  double closest = 0;            // best approach across all rounds on failure
  std::vector<BarrierScanResult> barriers;  // declared certificates, on failure
  std::string message;
};

/// find_hitting_path -> extract_control -> verify_control with dt halving up
/// to `budget` rounds. The rank gate warns but never blocks.
SteerReport steer(const ModelSpec& m, const GFamily& g, std::span<const double> z0,
                  std::span<const double> z1, double eps, int budget, uint64_t seed,
                  const SteerOptions& opts = {});

void save_control_csv(const ControlSignal& u, const std::string& path);
ControlSignal load_control_csv(const std::string& path);

}  // namespace sk

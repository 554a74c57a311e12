#pragma once

// ModelSpec: a control system (field f, optional conserved quantity H, control
// subspace E) plus the model-file format and the combined assumption report.

#include <optional>
#include <string>
#include <vector>

#include "expr.hpp"
#include "field.hpp"

namespace sk {

/// A certificate band: f_coord has a fixed sign on coord in (lo, hi) whatever
/// the other coordinates do inside [box_lo, box_hi].
struct BarrierBand {
  int coord = 0;
  double lo = 0, hi = 0;
  int sign = +1;              // +1: f_coord > 0 on the band; -1: < 0
  double box_lo = -10, box_hi = 10;
};

struct ModelSpec {
  std::string name;
  std::vector<std::string> vars;
  VectorField f;
  std::optional<Expr> conserved;
  std::vector<int> control_indices;                 // index (coordinate) form
  std::vector<std::vector<double>> control_basis;   // orthonormal columns, alt form
  std::vector<BarrierBand> barriers;

  int dim() const { return f.dim; }
  int control_dim() const {
    return control_indices.empty() ? static_cast<int>(control_basis.size())
                                   : static_cast<int>(control_indices.size());
  }
  bool control_is_coordinate_aligned() const { return !control_indices.empty(); }
  /// E as explicit vectors in R^N regardless of representation.
  std::vector<std::vector<double>> control_vectors() const;
  /// Throws on malformed specs (bad indices, non-orthonormal basis, ...).
  void validate() const;
};

std::string serialize_model(const ModelSpec& m);
ModelSpec parse_model(const std::string& text);
ModelSpec load_model(const std::string& path);
void save_model(const ModelSpec& m, const std::string& path);

// --- assumption driver ----------------------------------------------------------

struct AssumptionOptions {
  double residual_tol = 1e-10;
  int sample_count = 100;
  uint64_t seed = 42;
  int rank_points = 10;
  int rank_depth = 6;
  double rank_tol = 1e-8;
  size_t rank_node_budget = 200000;
  std::vector<std::vector<double>> extra_rank_points;
  std::vector<double> level_radii = {1, 2, 4, 8, 16, 32};
  int level_directions = 64;
};

struct AssumptionReport {
  CheckReport divergence;
  CheckReport conserved;           // applicable=false when the model has no H
  std::vector<RankReport> ranks;   // one per sampled point
  bool rank_all_span = false;
  LevelSetReport level_set;        // heuristic, never gates
  bool level_set_applicable = false;
  bool pass = false;               // all non-heuristic checks pass
};

AssumptionReport check_assumptions(const ModelSpec& m, const AssumptionOptions& opts = {});

// --- barrier certificates ----------------------------------------------------------

struct BarrierScanResult {
  BarrierBand band;
  double extreme = 0;       // min of f_coord for sign +, max for sign -
  bool holds = false;
  long long samples = 0;
};

/// Grid scan of each declared band: band coordinate from lo+step to hi-step,
/// all other coordinates on [box_lo, box_hi] with the same step (tensor grid in
/// dimension <= 2, seeded random box samples otherwise).
std::vector<BarrierScanResult> scan_barriers(const ModelSpec& m, double step = 0.01,
                                             uint64_t seed = 17);

}  // namespace sk

#pragma once

// Vector fields as tuples of expressions, Lie brackets, and the assumption
// checkers: divergence-free, conserved quantity, and the Hormander rank test
// in the time-extended phase space R^(N+1).

#include <optional>
#include <string>
#include <vector>

#include "expr.hpp"

namespace sk {

struct VectorField {
  int dim = 0;                  // number of variables the components live over
  std::vector<Expr> comps;      // size == dim unless extended (see extend_field)

  VectorField() = default;
  VectorField(int n, std::vector<Expr> c);
};

/// [a,b]_i = sum_j (a_j d_j b_i - b_j d_j a_i), components simplified.
VectorField lie_bracket(const VectorField& a, const VectorField& b);

/// f~ on R^(N+1): (f, 1); the added time coordinate is variable index N.
VectorField extend_field(const VectorField& f);

struct CheckReport {
  bool applicable = true;
  bool symbolic_zero = false;
  bool pass = false;
  double max_residual = 0.0;    // over the sample set, when not symbolically zero
  Expr residual;                // simplified
  std::string note;
};

struct SampleSpec {
  int count = 100;
  uint64_t seed = 2024;
  double scale = 1.0;           // points ~ scale * N(0, I)
};

/// Divergence sum_i d_i f_i; pass if literally 0, else |residual| <= tol on samples.
CheckReport check_divergence_free(const VectorField& f, double tol = 1e-10,
                                  const SampleSpec& samples = {});

/// <grad H, f>; same pass criteria as the divergence check.
CheckReport check_conserved(const VectorField& f, const Expr& H, double tol = 1e-10,
                            const SampleSpec& samples = {});

enum class RankVerdict { Spans, Deficient, InconclusiveAtDepth };

struct BracketField {
  std::string word;             // derivation, e.g. "[e1,f~]"
  std::vector<Expr> comps;      // over N+1 variables
};

struct RankReport {
  std::vector<double> point;    // in R^(N+1), last entry = time
  int depth_reached = 0;
  std::vector<BracketField> fields;
  int rank = 0;
  std::vector<double> singular_values;
  RankVerdict verdict = RankVerdict::InconclusiveAtDepth;
  bool near_threshold = false;  // smallest kept/largest dropped gap within 10x of tol
  bool budget_exhausted = false;
};

struct RankOptions {
  int max_depth = 6;
  double rank_tol = 1e-8;       // relative to the largest singular value
  size_t node_budget = 200000;  // cap on total symbolic nodes in the closure
};

/// Breadth-first Lie closure of {f~, e_1..e_n} evaluated at (point, time).
/// Generated fields are bracketed against the generator set only.
RankReport hormander_rank(const VectorField& f, const std::vector<std::vector<double>>& e_basis,
                          std::span<const double> point, double time,
                          const RankOptions& opts = {});

struct LevelSetReport {
  std::vector<double> radii;
  std::vector<double> min_over_rays;   // min of H on the sphere of each radius
  bool increasing = false;
  bool unbounded_trend = false;        // last min exceeds first by > 1
  bool pass = false;                   // increasing && unbounded_trend; HEURISTIC
  std::string note = "heuristic: compactness of level sets is not decidable by sampling";
};

/// Samples H along random unit rays at the given radii. Advisory only.
LevelSetReport check_level_set_growth(const Expr& H, int dim, std::vector<double> radii,
                                      int directions, uint64_t seed = 7);

}  // namespace sk

#include "field.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <deque>

#include "rng.hpp"

namespace sk {

VectorField::VectorField(int n, std::vector<Expr> c) : dim(n), comps(std::move(c)) {
  if (static_cast<int>(comps.size()) != dim)
    throw Error(ErrorCode::Invalid, "vector field component count differs from dimension");
  for (const auto& e : comps)
    if (variable_span(e) > dim)
      throw Error(ErrorCode::Invalid, "vector field component references unknown variable");
}

VectorField lie_bracket(const VectorField& a, const VectorField& b) {
  if (a.comps.size() != b.comps.size())
    throw Error(ErrorCode::Invalid, "lie_bracket: dimension mismatch");
  const size_t n = a.comps.size();
  std::vector<Expr> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    std::vector<Expr> terms;
    for (size_t j = 0; j < n; ++j) {
      if (!a.comps[j].is_const(0.0))
        terms.push_back(a.comps[j] * differentiate(b.comps[i], static_cast<int>(j)));
      if (!b.comps[j].is_const(0.0))
        terms.push_back(neg(b.comps[j] * differentiate(a.comps[i], static_cast<int>(j))));
    }
    out.push_back(simplify(sum(std::move(terms))));
  }
  VectorField r;
  r.dim = a.dim;
  r.comps = std::move(out);
  return r;
}

VectorField extend_field(const VectorField& f) {
  VectorField r;
  r.dim = f.dim + 1;
  r.comps = f.comps;
  r.comps.push_back(constant(1.0));
  return r;
}

namespace {

CheckReport residual_check(Expr residual, int dim, double tol, const SampleSpec& samples) {
  CheckReport rep;
  rep.residual = simplify(residual);
  if (rep.residual.is_const(0.0)) {
    rep.symbolic_zero = true;
    rep.pass = true;
    return rep;
  }
  CompiledField f(std::vector<Expr>{rep.residual}, dim);
  GaussianRng rng(samples.seed);
  double worst = 0.0;
  for (int i = 0; i < samples.count; ++i) {
    auto z = rng.normal_vector(dim, samples.scale);
    worst = std::max(worst, std::abs(f.eval1(z)));
  }
  rep.max_residual = worst;
  rep.pass = worst <= tol;
  return rep;
}

}  // namespace

CheckReport check_divergence_free(const VectorField& f, double tol, const SampleSpec& samples) {
  std::vector<Expr> terms;
  for (int i = 0; i < f.dim; ++i) terms.push_back(differentiate(f.comps[i], i));
  return residual_check(sum(std::move(terms)), f.dim, tol, samples);
}

CheckReport check_conserved(const VectorField& f, const Expr& H, double tol,
                            const SampleSpec& samples) {
  std::vector<Expr> terms;
  for (int i = 0; i < f.dim; ++i) terms.push_back(differentiate(H, i) * f.comps[i]);
  return residual_check(sum(std::move(terms)), f.dim, tol, samples);
}

namespace {

size_t field_nodes(const std::vector<Expr>& comps) {
  // rough size measure: nodes counted with sharing ignored is fine for budgeting
  size_t total = 0;
  for (const auto& e : comps) {
    std::vector<const ExprNode*> stack = {e.ptr().get()};
    while (!stack.empty()) {
      const ExprNode* n = stack.back();
      stack.pop_back();
      ++total;
      for (const auto& k : n->kids) stack.push_back(k.ptr().get());
    }
  }
  return total;
}

bool is_zero_field(const std::vector<Expr>& comps) {
  for (const auto& e : comps)
    if (!e.is_const(0.0)) return false;
  return true;
}

// sign-normalized key so F and -F deduplicate to the same entry
std::string field_key(const std::vector<Expr>& comps, std::span<const std::string> names) {
  std::string plus, minus;
  for (const auto& e : comps) {
    plus += to_string(e, names);
    plus += ';';
    minus += to_string(simplify(neg(e)), names);
    minus += ';';
  }
  return std::min(plus, minus);
}

}  // namespace

RankReport hormander_rank(const VectorField& f, const std::vector<std::vector<double>>& e_basis,
                          std::span<const double> point, double time, const RankOptions& opts) {
  if (opts.max_depth < 1) throw Error(ErrorCode::Invalid, "hormander_rank: max_depth < 1");
  const int n_ext = f.dim + 1;

  RankReport rep;
  rep.point.assign(point.begin(), point.end());
  rep.point.push_back(time);

  VectorField ftil = extend_field(f);
  std::vector<BracketField> generators;
  generators.push_back({"f~", ftil.comps});
  for (size_t i = 0; i < e_basis.size(); ++i) {
    if (static_cast<int>(e_basis[i].size()) != f.dim)
      throw Error(ErrorCode::Invalid, "hormander_rank: basis vector of wrong dimension");
    std::vector<Expr> comps;
    for (double v : e_basis[i]) comps.push_back(constant(v));
    comps.push_back(constant(0.0));
    generators.push_back({"e" + std::to_string(i + 1), std::move(comps)});
  }

  std::vector<std::string> no_names;
  std::vector<std::string> seen;
  auto already_seen = [&](const std::string& key) {
    return std::find(seen.begin(), seen.end(), key) != seen.end();
  };

  std::deque<BracketField> frontier;
  size_t nodes_used = 0;
  for (const auto& g : generators) {
    std::string key = field_key(g.comps, no_names);
    if (is_zero_field(g.comps) || already_seen(key)) continue;
    seen.push_back(key);
    rep.fields.push_back(g);
    frontier.push_back(g);
    nodes_used += field_nodes(g.comps);
  }

  auto eval_rank = [&](RankReport& r) {
    Eigen::MatrixXd M(n_ext, static_cast<Eigen::Index>(r.fields.size()));
    for (size_t c = 0; c < r.fields.size(); ++c)
      for (int i = 0; i < n_ext; ++i)
        M(i, static_cast<Eigen::Index>(c)) = evaluate(r.fields[c].comps[i], r.point);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    auto sv = svd.singularValues();
    r.singular_values.assign(sv.data(), sv.data() + sv.size());
    double top = r.singular_values.empty() ? 0.0 : r.singular_values[0];
    double thresh = opts.rank_tol * top;
    int rank = 0;
    r.near_threshold = false;
    for (double s : r.singular_values) {
      if (s > thresh)
        ++rank;
      else if (top > 0 && s > thresh / 10.0)
        r.near_threshold = true;  // flagged, not silently classified
    }
    r.rank = rank;
  };

  rep.depth_reached = 1;
  eval_rank(rep);
  int depth = 1;
  bool saturated = false;
  while (rep.rank < n_ext && depth < opts.max_depth) {
    std::deque<BracketField> next;
    VectorField lhs, rhs;
    lhs.dim = rhs.dim = n_ext;
    for (const auto& fld : frontier) {
      for (const auto& g : generators) {
        if (nodes_used > opts.node_budget) {
          rep.budget_exhausted = true;
          break;
        }
        lhs.comps = fld.comps;
        rhs.comps = g.comps;
        VectorField br = lie_bracket(lhs, rhs);
        if (is_zero_field(br.comps)) continue;
        std::string key = field_key(br.comps, no_names);
        if (already_seen(key)) continue;
        seen.push_back(key);
        BracketField bf{"[" + fld.word + "," + g.word + "]", br.comps};
        nodes_used += field_nodes(bf.comps);
        rep.fields.push_back(bf);
        next.push_back(std::move(bf));
      }
      if (rep.budget_exhausted) break;
    }
    ++depth;
    rep.depth_reached = depth;
    eval_rank(rep);
    if (next.empty() && !rep.budget_exhausted) {
      saturated = true;  // closure complete: no new independent fields can appear
      break;
    }
    frontier = std::move(next);
    if (rep.budget_exhausted) break;
  }

  if (rep.rank >= n_ext)
    rep.verdict = RankVerdict::Spans;
  else if (saturated)
    rep.verdict = RankVerdict::Deficient;
  else
    rep.verdict = RankVerdict::InconclusiveAtDepth;
  return rep;
}

LevelSetReport check_level_set_growth(const Expr& H, int dim, std::vector<double> radii,
                                      int directions, uint64_t seed) {
  if (directions < 1) throw Error(ErrorCode::Invalid, "need at least one direction");
  for (size_t i = 1; i < radii.size(); ++i)
    if (radii[i] <= radii[i - 1])
      throw Error(ErrorCode::Invalid, "radii must be increasing");
  LevelSetReport rep;
  rep.radii = radii;

  GaussianRng rng(seed);
  std::vector<std::vector<double>> dirs(directions);
  for (auto& d : dirs) {
    d = rng.normal_vector(dim);
    double norm = 0;
    for (double v : d) norm += v * v;
    norm = std::sqrt(norm);
    if (norm == 0) { d.assign(dim, 0.0); d[0] = 1.0; norm = 1.0; }
    for (double& v : d) v /= norm;
  }

  CompiledField h(std::vector<Expr>{H}, dim);
  std::vector<double> pt(dim);
  for (double r : radii) {
    double mn = std::numeric_limits<double>::infinity();
    for (const auto& d : dirs) {
      for (int i = 0; i < dim; ++i) pt[i] = r * d[i];
      mn = std::min(mn, h.eval1(pt));
    }
    rep.min_over_rays.push_back(mn);
  }
  rep.increasing = true;
  for (size_t i = 1; i < rep.min_over_rays.size(); ++i)
    if (rep.min_over_rays[i] <= rep.min_over_rays[i - 1]) rep.increasing = false;
  rep.unbounded_trend = !rep.min_over_rays.empty() &&
                        rep.min_over_rays.back() > rep.min_over_rays.front() + 1.0;
  rep.pass = rep.increasing && rep.unbounded_trend;
  return rep;
}

}  // namespace sk

#include "model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "rng.hpp"

namespace sk {

std::vector<std::vector<double>> ModelSpec::control_vectors() const {
  std::vector<std::vector<double>> out;
  if (!control_indices.empty()) {
    for (int idx : control_indices) {
      std::vector<double> v(dim(), 0.0);
      v[idx] = 1.0;
      out.push_back(std::move(v));
    }
  } else {
    out = control_basis;
  }
  return out;
}

void ModelSpec::validate() const {
  if (static_cast<int>(vars.size()) != f.dim)
    throw Error(ErrorCode::Invalid, "model `" + name + "`: vars/field dimension mismatch");
  if (control_indices.empty() && control_basis.empty())
    throw Error(ErrorCode::Invalid, "model `" + name + "`: no control subspace declared");
  if (!control_indices.empty() && !control_basis.empty())
    throw Error(ErrorCode::Invalid,
                "model `" + name + "`: control subspace declared both by index and basis");
  std::vector<bool> used(dim(), false);
  for (int idx : control_indices) {
    if (idx < 0 || idx >= dim())
      throw Error(ErrorCode::Invalid, "model `" + name + "`: control index out of range");
    if (used[idx])
      throw Error(ErrorCode::Invalid, "model `" + name + "`: duplicate control index");
    used[idx] = true;
  }
  for (size_t i = 0; i < control_basis.size(); ++i) {
    if (static_cast<int>(control_basis[i].size()) != dim())
      throw Error(ErrorCode::Invalid, "model `" + name + "`: basis vector of wrong length");
    for (size_t j = 0; j <= i; ++j) {
      double dot = 0;
      for (int k = 0; k < dim(); ++k) dot += control_basis[i][k] * control_basis[j][k];
      double want = (i == j) ? 1.0 : 0.0;
      if (std::abs(dot - want) > 1e-12)
        throw Error(ErrorCode::Invalid,
                    "model `" + name + "`: control basis is not orthonormal");
    }
  }
  if (conserved && variable_span(*conserved) > dim())
    throw Error(ErrorCode::Invalid, "model `" + name + "`: H references unknown variable");
  for (const auto& b : barriers) {
    if (b.coord < 0 || b.coord >= dim() || b.lo >= b.hi || (b.sign != 1 && b.sign != -1))
      throw Error(ErrorCode::Invalid, "model `" + name + "`: malformed barrier band");
  }
}

// --- model file format -------------------------------------------------------------
//
//   # comment
//   model <name>
//   vars <v1> <v2> ...
//   field <var> = <expression>
//   conserved = <expression>           (optional)
//   control <var> ...                  (coordinate form)
//   control_basis <N floats>           (one line per basis vector, alt form)
//   barrier <var> <lo> <hi> <+|-> [<box_lo> <box_hi>]

std::string serialize_model(const ModelSpec& m) {
  std::ostringstream out;
  out << "model " << (m.name.empty() ? "unnamed" : m.name) << "\n";
  out << "vars";
  for (const auto& v : m.vars) out << " " << v;
  out << "\n";
  for (int i = 0; i < m.dim(); ++i)
    out << "field " << m.vars[i] << " = " << to_string(m.f.comps[i], m.vars) << "\n";
  if (m.conserved) out << "conserved = " << to_string(*m.conserved, m.vars) << "\n";
  if (!m.control_indices.empty()) {
    out << "control";
    for (int idx : m.control_indices) out << " " << m.vars[idx];
    out << "\n";
  }
  char buf[40];
  for (const auto& col : m.control_basis) {
    out << "control_basis";
    for (double v : col) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << " " << buf;
    }
    out << "\n";
  }
  for (const auto& b : m.barriers) {
    out << "barrier " << m.vars[b.coord] << " " << b.lo << " " << b.hi << " "
        << (b.sign > 0 ? "+" : "-") << " " << b.box_lo << " " << b.box_hi << "\n";
  }
  return out.str();
}

namespace {

[[noreturn]] void line_fail(int line, const std::string& msg) {
  throw Error(ErrorCode::Parse, "model file line " + std::to_string(line) + ": " + msg);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream iss(s);
  std::vector<std::string> out;
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

int var_index(const std::vector<std::string>& vars, const std::string& name, int line) {
  for (size_t i = 0; i < vars.size(); ++i)
    if (vars[i] == name) return static_cast<int>(i);
  line_fail(line, "unknown variable `" + name + "`");
}

}  // namespace

ModelSpec parse_model(const std::string& text) {
  ModelSpec m;
  std::vector<std::optional<Expr>> comps;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw.substr(0, raw.find('#'));
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    const std::string& kw = toks[0];
    if (kw == "model") {
      size_t at = line.find("model");
      m.name = line.substr(at + 5);
      size_t s = m.name.find_first_not_of(" \t");
      size_t e = m.name.find_last_not_of(" \t\r");
      m.name = (s == std::string::npos) ? "" : m.name.substr(s, e - s + 1);
    } else if (kw == "vars") {
      if (!m.vars.empty()) line_fail(lineno, "duplicate vars line");
      m.vars.assign(toks.begin() + 1, toks.end());
      if (m.vars.empty()) line_fail(lineno, "vars line declares nothing");
      comps.assign(m.vars.size(), std::nullopt);
    } else if (kw == "field") {
      if (m.vars.empty()) line_fail(lineno, "field before vars");
      if (toks.size() < 3 || toks[2] != "=") line_fail(lineno, "expected `field <var> = <expr>`");
      int idx = var_index(m.vars, toks[1], lineno);
      if (comps[idx]) line_fail(lineno, "duplicate field for `" + toks[1] + "`");
      size_t eq = line.find('=');
      try {
        comps[idx] = parse_expression(line.substr(eq + 1), m.vars);
      } catch (const Error& err) {
        line_fail(lineno, err.what());
      }
    } else if (kw == "conserved") {
      if (m.vars.empty()) line_fail(lineno, "conserved before vars");
      size_t eq = line.find('=');
      if (eq == std::string::npos) line_fail(lineno, "expected `conserved = <expr>`");
      try {
        m.conserved = parse_expression(line.substr(eq + 1), m.vars);
      } catch (const Error& err) {
        line_fail(lineno, err.what());
      }
    } else if (kw == "control") {
      if (m.vars.empty()) line_fail(lineno, "control before vars");
      for (size_t i = 1; i < toks.size(); ++i)
        m.control_indices.push_back(var_index(m.vars, toks[i], lineno));
      if (m.control_indices.empty()) line_fail(lineno, "control line declares nothing");
    } else if (kw == "control_basis") {
      if (m.vars.empty()) line_fail(lineno, "control_basis before vars");
      if (toks.size() != m.vars.size() + 1)
        line_fail(lineno, "control_basis needs one entry per variable");
      std::vector<double> col;
      for (size_t i = 1; i < toks.size(); ++i) {
        try {
          col.push_back(std::stod(toks[i]));
        } catch (...) {
          line_fail(lineno, "malformed number `" + toks[i] + "`");
        }
      }
      m.control_basis.push_back(std::move(col));
    } else if (kw == "barrier") {
      if (m.vars.empty()) line_fail(lineno, "barrier before vars");
      if (toks.size() != 5 && toks.size() != 7)
        line_fail(lineno, "expected `barrier <var> <lo> <hi> <+|-> [<box_lo> <box_hi>]`");
      BarrierBand b;
      b.coord = var_index(m.vars, toks[1], lineno);
      try {
        b.lo = std::stod(toks[2]);
        b.hi = std::stod(toks[3]);
        if (toks.size() == 7) {
          b.box_lo = std::stod(toks[5]);
          b.box_hi = std::stod(toks[6]);
        }
      } catch (...) {
        line_fail(lineno, "malformed number in barrier line");
      }
      if (toks[4] == "+")
        b.sign = 1;
      else if (toks[4] == "-")
        b.sign = -1;
      else
        line_fail(lineno, "barrier sign must be + or -");
      m.barriers.push_back(b);
    } else {
      line_fail(lineno, "unknown directive `" + kw + "`");
    }
  }
  if (m.vars.empty()) throw Error(ErrorCode::Parse, "model file has no vars line");
  std::vector<Expr> field;
  for (size_t i = 0; i < comps.size(); ++i) {
    if (!comps[i])
      throw Error(ErrorCode::Parse, "model file missing field for `" + m.vars[i] + "`");
    field.push_back(*comps[i]);
  }
  m.f = VectorField(static_cast<int>(m.vars.size()), std::move(field));
  m.validate();
  return m;
}

ModelSpec load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open model file `" + path + "`");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

void save_model(const ModelSpec& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write model file `" + path + "`");
  out << serialize_model(m);
}

// --- assumption driver ----------------------------------------------------------------

AssumptionReport check_assumptions(const ModelSpec& m, const AssumptionOptions& opts) {
  m.validate();
  AssumptionReport rep;
  SampleSpec samples{opts.sample_count, opts.seed, 1.0};
  rep.divergence = check_divergence_free(m.f, opts.residual_tol, samples);
  if (m.conserved) {
    rep.conserved = check_conserved(m.f, *m.conserved, opts.residual_tol, samples);
  } else {
    rep.conserved.applicable = false;
    rep.conserved.pass = false;
    rep.conserved.note = "not applicable (no conserved quantity declared)";
  }

  RankOptions ro;
  ro.max_depth = opts.rank_depth;
  ro.rank_tol = opts.rank_tol;
  ro.node_budget = opts.rank_node_budget;
  auto basis = m.control_vectors();
  GaussianRng rng(derive_seed(opts.seed, 1));
  std::vector<std::vector<double>> points = opts.extra_rank_points;
  for (int i = 0; i < opts.rank_points; ++i) points.push_back(rng.normal_vector(m.dim()));
  rep.rank_all_span = true;
  for (const auto& pt : points) {
    rep.ranks.push_back(hormander_rank(m.f, basis, pt, 0.0, ro));
    if (rep.ranks.back().verdict != RankVerdict::Spans) rep.rank_all_span = false;
  }

  if (m.conserved) {
    rep.level_set_applicable = true;
    rep.level_set = check_level_set_growth(*m.conserved, m.dim(), opts.level_radii,
                                           opts.level_directions, derive_seed(opts.seed, 2));
  }

  rep.pass = rep.divergence.pass && rep.conserved.applicable && rep.conserved.pass &&
             rep.rank_all_span;
  return rep;
}

// --- barrier scan ----------------------------------------------------------------------

std::vector<BarrierScanResult> scan_barriers(const ModelSpec& m, double step, uint64_t seed) {
  std::vector<BarrierScanResult> out;
  CompiledField f(m.f.comps, m.dim());
  std::vector<double> pt(m.dim(), 0.0);
  std::vector<double> fv(m.dim());
  std::vector<double> scratch;
  for (const auto& band : m.barriers) {
    BarrierScanResult res;
    res.band = band;
    res.extreme = band.sign > 0 ? std::numeric_limits<double>::infinity()
                                : -std::numeric_limits<double>::infinity();
    std::vector<double> band_vals;
    for (double v = band.lo + step; v < band.hi - step / 2; v += step) band_vals.push_back(v);

    std::vector<std::vector<double>> others;  // assignments for the other coordinates
    if (m.dim() == 1) {
      others.push_back({});
    } else if (m.dim() == 2) {
      for (double x = band.box_lo; x <= band.box_hi + step / 2; x += step)
        others.push_back({x});
    } else {
      GaussianRng rng(seed);
      for (int i = 0; i < 2000; ++i) {
        std::vector<double> v(m.dim() - 1);
        for (auto& x : v)
          x = band.box_lo + (band.box_hi - band.box_lo) * rng.uniform();
        others.push_back(std::move(v));
      }
    }

    for (double bv : band_vals) {
      for (const auto& rest : others) {
        size_t j = 0;
        for (int i = 0; i < m.dim(); ++i) {
          if (i == band.coord)
            pt[i] = bv;
          else
            pt[i] = rest[j++];
        }
        f.eval(pt, fv, scratch);
        double val = fv[band.coord];
        if (band.sign > 0)
          res.extreme = std::min(res.extreme, val);
        else
          res.extreme = std::max(res.extreme, val);
        ++res.samples;
      }
    }
    res.holds = band.sign > 0 ? res.extreme > 0.0 : res.extreme < 0.0;
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace sk

#include "sde.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "parallel.hpp"
#include "rng.hpp"

namespace sk {

Expr GFamily::g_of(const Expr& h) const {
  switch (kind) {
    case GKind::Linear:
      return constant(alpha) * h;
    case GKind::Logarithmic:
      return constant(alpha) * log_e(constant(1.0) + h);
    case GKind::Custom: {
      // substitute h for variable 0 of the stored template
      std::function<Expr(const Expr&)> subst = [&](const Expr& e) -> Expr {
        const ExprNode& n = e.node();
        if (n.kind == Kind::Var) return h;
        if (n.kids.empty()) return e;
        std::vector<Expr> kids;
        for (const auto& k : n.kids) kids.push_back(subst(k));
        ExprNode copy = n;
        copy.kids = std::move(kids);
        return Expr(std::make_shared<const ExprNode>(copy));
      };
      return simplify(subst(custom));
    }
    case GKind::None:
      return constant(0.0);
  }
  throw Error(ErrorCode::Invalid, "corrupt GFamily");
}

Expr GFamily::gprime_of(const Expr& h) const {
  switch (kind) {
    case GKind::Linear:
      return constant(alpha);
    case GKind::Logarithmic:
      return constant(alpha) / (constant(1.0) + h);
    case GKind::Custom: {
      Expr dg = simplify(differentiate(custom, 0));
      GFamily tmp{GKind::Custom, alpha, dg};
      return tmp.g_of(h);
    }
    case GKind::None:
      return constant(0.0);
  }
  throw Error(ErrorCode::Invalid, "corrupt GFamily");
}

void GFamily::validate(double h_max, int samples) const {
  if (kind == GKind::None) return;
  if ((kind == GKind::Linear || kind == GKind::Logarithmic) && !(alpha > 0.0))
    throw Error(ErrorCode::Invalid, "tempering family needs alpha > 0 (g' must be positive)");
  Expr h = variable(0);
  Expr g = g_of(h);
  Expr gp = gprime_of(h);
  std::vector<double> pt(1, 0.0);
  double g0 = evaluate(g, pt);
  if (std::abs(g0) > 1e-12)
    throw Error(ErrorCode::Invalid, "tempering function must satisfy g(0) = 0");
  for (int i = 0; i <= samples; ++i) {
    pt[0] = h_max * i / samples;
    if (!(evaluate(gp, pt) > 0.0))
      throw Error(ErrorCode::Invalid, "tempering function must be strictly increasing on [0, " +
                                          std::to_string(h_max) + "]");
  }
}

SdeSystem build_sde(const ModelSpec& m, const GFamily& g) { return SdeSystem(m, g); }

SdeSystem::SdeSystem(ModelSpec model, GFamily g)
    : model_(std::move(model)), g_(g) {
  model_.validate();
  g_.validate();
  if (!model_.control_is_coordinate_aligned())
    throw Error(ErrorCode::Invalid,
                "auxiliary SDE needs the control subspace in coordinate form; change "
                "coordinates so E is spanned by coordinate axes");
  noise_idx_ = model_.control_indices;

  if (g_.kind != GKind::None) {
    if (!model_.conserved)
      throw Error(ErrorCode::Invalid,
                  "model `" + model_.name +
                      "` has no conserved quantity; only the untempered SDE (g family "
                      "`none`) is available");
    CheckReport cons = check_conserved(model_.f, *model_.conserved);
    if (!cons.pass)
      throw Error(ErrorCode::Invalid,
                  "model `" + model_.name + "` fails the conservation check (residual " +
                      std::to_string(cons.max_residual) + "); not building the SDE");

    const Expr& H = *model_.conserved;
    Expr gH = simplify(g_.g_of(H));
    Expr gpH = simplify(g_.gprime_of(H));
    Expr damp2 = exp_e(constant(-2.0) * gH);  // e^{-2 g(H)}
    drift_ = model_.f.comps;
    for (int idx : noise_idx_) {
      Expr corr = constant(3.0) * gpH * damp2 * differentiate(H, idx);
      drift_[idx] = simplify(drift_[idx] - corr);
    }
    for (auto& d : drift_) d = simplify(d);
    amplitude_ = simplify(sqrt_e(constant(2.0)) * exp_e(neg(gH)));

    // growth condition e^{-2g(H)} Delta_x H <= C + H, fitted on a sample grid
    std::vector<Expr> lap_terms;
    for (int idx : noise_idx_)
      lap_terms.push_back(differentiate(differentiate(H, idx), idx));
    Expr lhs = simplify(damp2 * sum(std::move(lap_terms)));
    CompiledField lhs_f(std::vector<Expr>{lhs, H}, model_.dim());
    GaussianRng rng(20250901);
    double worst = -std::numeric_limits<double>::infinity();
    std::vector<double> out(2);
    const int n_samples = 400;
    for (int i = 0; i < n_samples; ++i) {
      double scale = 0.5 + 0.5 * (i % 8);  // rings of growing radius
      auto z = rng.normal_vector(model_.dim(), scale);
      lhs_f.eval(z, out);
      worst = std::max(worst, out[0] - out[1]);
    }
    growth_.checked = true;
    growth_.worst_gap = worst;
    growth_.constant = std::max(0.0, worst);
    growth_.samples = n_samples;
    growth_.suspicious = growth_.constant > 1e6;
  } else {
    drift_ = model_.f.comps;
    for (auto& d : drift_) d = simplify(d);
    amplitude_ = sqrt_e(constant(2.0));
  }

  drift_field_ = CompiledField(drift_, model_.dim());
  amplitude_field_ = CompiledField(std::vector<Expr>{amplitude_}, model_.dim());
  if (model_.conserved)
    energy_field_ = CompiledField(std::vector<Expr>{simplify(*model_.conserved)}, model_.dim());
}

Expr SdeSystem::invariant_unnormalized() const {
  if (!tempered() || !model_.conserved)
    throw Error(ErrorCode::Invalid, "no invariant density available for untempered systems");
  return simplify(exp_e(neg(g_.g_of(*model_.conserved))));
}

DiffusionSystem SdeSystem::as_diffusion() const {
  DiffusionSystem d;
  d.dim = model_.dim();
  d.vars = model_.vars;
  d.drift = drift_;
  d.sigma.assign(d.dim, constant(0.0));
  for (int idx : noise_idx_) d.sigma[idx] = amplitude_;
  return d;
}

Trajectory integrate(const SdeSystem& s, std::span<const double> z0, double dt,
                     long long steps, uint64_t seed, const IntegrateOptions& opts) {
  const int n = s.model().dim();
  if (static_cast<int>(z0.size()) != n)
    throw Error(ErrorCode::Invalid, "initial state has wrong dimension");
  if (!(dt > 0)) throw Error(ErrorCode::Invalid, "dt must be positive");
  for (double v : z0)
    if (!std::isfinite(v)) throw Error(ErrorCode::Invalid, "initial state must be finite");

  const auto& noise_idx = s.noise_indices();
  const int nw = static_cast<int>(noise_idx.size());
  Trajectory traj;
  traj.dt = dt;
  traj.dim = n;
  traj.vars = s.model().vars;
  traj.states.reserve((steps + 1) * n);
  traj.states.insert(traj.states.end(), z0.begin(), z0.end());
  traj.noise.seed = seed;
  traj.noise.noise_dim = nw;
  traj.noise.dt = dt;
  if (opts.record_noise) traj.noise.increments.reserve(steps * nw);

  const CompiledField& drift = s.drift_field();
  const CompiledField& amp = s.amplitude_field();
  const CompiledField* energy = s.energy_field();
  const bool record_energy = opts.record_energy && energy != nullptr;
  if (record_energy) traj.energy.reserve(steps + 1);

  GaussianRng rng(seed);
  std::vector<double> z(z0.begin(), z0.end());
  std::vector<double> dz(n), scratch;
  double a0 = 0;
  const double sqdt = std::sqrt(dt);

  if (record_energy) traj.energy.push_back(energy->eval1(z));
  for (long long k = 0; k < steps; ++k) {
    drift.eval(z, dz, scratch);
    a0 = amp.eval1(z);
    for (int i = 0; i < n; ++i) z[i] += dt * dz[i];
    for (int j = 0; j < nw; ++j) {
      double dw = opts.zero_noise ? 0.0 : sqdt * rng.normal();
      if (opts.record_noise) traj.noise.increments.push_back(dw);
      z[noise_idx[j]] += a0 * dw;
    }
    for (int i = 0; i < n; ++i) {
      if (!std::isfinite(z[i]) || std::abs(z[i]) > opts.blowup_threshold)
        throw Error(ErrorCode::Numeric,
                    "state became non-finite at step " + std::to_string(k + 1) +
                        " (coordinate " + s.model().vars[i] +
                        "); dt may be too large or the growth condition violated");
    }
    traj.states.insert(traj.states.end(), z.begin(), z.end());
    if (record_energy) traj.energy.push_back(energy->eval1(z));
  }
  return traj;
}

// --- file formats ---------------------------------------------------------------

void save_trajectory_csv(const Trajectory& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write `" + path + "`");
  out << "t";
  for (const auto& v : t.vars) out << "," << v;
  if (!t.energy.empty()) out << ",H";
  out << "\n";
  char buf[40];
  long long K = t.steps();
  for (long long k = 0; k <= K; ++k) {
    std::snprintf(buf, sizeof(buf), "%.17g", t.time(k));
    out << buf;
    auto st = t.state(k);
    for (double v : st) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << "," << buf;
    }
    if (!t.energy.empty()) {
      std::snprintf(buf, sizeof(buf), "%.17g", t.energy[k]);
      out << "," << buf;
    }
    out << "\n";
  }
}

namespace {
constexpr char kNoiseMagic[4] = {'S', 'K', 'N', 'Z'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace

void save_noise_record(const Trajectory& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write `" + path + "`");
  out.write(kNoiseMagic, 4);
  put<uint32_t>(out, 1);  // version
  put<uint64_t>(out, t.noise.seed);
  put<uint32_t>(out, static_cast<uint32_t>(t.noise.noise_dim));
  put<uint64_t>(out, t.noise.noise_dim == 0
                         ? 0
                         : t.noise.increments.size() / t.noise.noise_dim);
  put<double>(out, t.noise.dt);
  for (double v : t.noise.increments) put<double>(out, v);
}

NoiseRecord load_noise_record(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open `" + path + "`");
  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kNoiseMagic, 4) != 0)
    throw Error(ErrorCode::Parse, "`" + path + "` is not a noise record");
  uint32_t version = get<uint32_t>(in);
  if (version != 1) throw Error(ErrorCode::Parse, "unsupported noise record version");
  NoiseRecord r;
  r.seed = get<uint64_t>(in);
  r.noise_dim = static_cast<int>(get<uint32_t>(in));
  uint64_t steps = get<uint64_t>(in);
  r.dt = get<double>(in);
  r.increments.resize(steps * r.noise_dim);
  for (auto& v : r.increments) v = get<double>(in);
  if (!in) throw Error(ErrorCode::Parse, "truncated noise record `" + path + "`");
  return r;
}

Trajectory load_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open `" + path + "`");
  std::string header;
  if (!std::getline(in, header)) throw Error(ErrorCode::Parse, "empty trajectory file");
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  if (cols.size() < 2 || cols[0] != "t")
    throw Error(ErrorCode::Parse, "trajectory header must start with t");
  bool has_energy = cols.back() == "H";
  Trajectory t;
  t.vars.assign(cols.begin() + 1, cols.end() - (has_energy ? 1 : 0));
  t.dim = static_cast<int>(t.vars.size());
  std::vector<double> times;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != cols.size())
      throw Error(ErrorCode::Parse, "trajectory row has wrong column count");
    times.push_back(row[0]);
    for (int i = 0; i < t.dim; ++i) t.states.push_back(row[1 + i]);
    if (has_energy) t.energy.push_back(row.back());
  }
  if (times.size() < 2) throw Error(ErrorCode::Parse, "trajectory needs at least two rows");
  t.t0 = times[0];
  t.dt = times[1] - times[0];
  for (size_t k = 1; k < times.size(); ++k) {
    double expected = t.t0 + k * t.dt;
    if (std::abs(times[k] - expected) > 1e-9 * (1.0 + std::abs(expected)))
      throw Error(ErrorCode::Parse, "trajectory mesh is not uniform");
  }
  return t;
}

// --- a-priori bound ----------------------------------------------------------------

EnergyBoundReport energy_bound_check(const SdeSystem& s, std::span<const double> z0,
                                     double t_end, int paths, double dt, uint64_t seed,
                                     int checkpoints) {
  if (!s.model().conserved)
    throw Error(ErrorCode::Invalid, "energy bound check needs a conserved quantity");
  if (s.tempered() && !s.growth().checked)
    throw Error(ErrorCode::Invalid, "growth condition was not validated");

  long long total_steps = static_cast<long long>(std::llround(t_end / dt));
  if (total_steps < checkpoints) checkpoints = static_cast<int>(total_steps);
  std::vector<long long> marks;
  for (int c = 1; c <= checkpoints; ++c)
    marks.push_back(total_steps * c / checkpoints);

  EnergyBoundReport rep;
  rep.paths = paths;
  rep.constant = s.growth().constant;
  rep.H0 = s.energy_field()->eval1(z0);

  // per-path energies at each checkpoint; deterministic slot writes
  std::vector<std::vector<double>> H(paths, std::vector<double>(marks.size()));
  const auto& noise_idx = s.noise_indices();
  const int n = s.model().dim();
  const int nw = static_cast<int>(noise_idx.size());
  parallel_for(static_cast<size_t>(paths), [&](size_t p) {
    GaussianRng rng(derive_seed(seed, p));
    std::vector<double> z(z0.begin(), z0.end());
    std::vector<double> dz(n), scratch;
    const double sqdt = std::sqrt(dt);
    size_t next_mark = 0;
    for (long long k = 0; k < total_steps && next_mark < marks.size(); ++k) {
      s.drift_field().eval(z, dz, scratch);
      double a0 = s.amplitude_field().eval1(z);
      for (int i = 0; i < n; ++i) z[i] += dt * dz[i];
      for (int j = 0; j < nw; ++j) z[noise_idx[j]] += a0 * sqdt * rng.normal();
      for (int i = 0; i < n; ++i)
        if (!std::isfinite(z[i]) || std::abs(z[i]) > 1e12)
          throw Error(ErrorCode::Numeric,
                      "path " + std::to_string(p) + " blew up at step " + std::to_string(k));
      if (k + 1 == marks[next_mark]) {
        H[p][next_mark] = s.energy_field()->eval1(z);
        ++next_mark;
      }
    }
  });

  rep.pass = true;
  for (size_t mix = 0; mix < marks.size(); ++mix) {
    double t = marks[mix] * dt;
    double mean = 0;
    for (int p = 0; p < paths; ++p) mean += H[p][mix];
    mean /= paths;
    double var = 0;
    for (int p = 0; p < paths; ++p) var += (H[p][mix] - mean) * (H[p][mix] - mean);
    var /= std::max(1, paths - 1);
    double se = std::sqrt(var / paths);
    double bound = rep.H0 * std::exp(t) + rep.constant * (std::exp(t) - 1.0) + 3.0 * se;
    rep.times.push_back(t);
    rep.mean_H.push_back(mean);
    rep.stderr_H.push_back(se);
    rep.bound.push_back(bound);
    if (mean > bound) rep.pass = false;
  }
  return rep;
}

}  // namespace sk

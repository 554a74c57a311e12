#include "control.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include "parallel.hpp"
#include "rng.hpp"

namespace sk {

bool TargetSet::contains(std::span<const double> z) const {
  double d2 = 0;
  for (size_t i = 0; i < center.size(); ++i) d2 += (z[i] - center[i]) * (z[i] - center[i]);
  return d2 <= radius * radius;
}

namespace {

double dist(std::span<const double> a, std::span<const double> b) {
  double d2 = 0;
  for (size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(d2);
}

}  // namespace

HittingResult find_hitting_path(const SdeSystem& s, std::span<const double> z0,
                                const TargetSet& target, double dt, long long max_steps,
                                int max_attempts, uint64_t seed) {
  const int n = s.model().dim();
  if (static_cast<int>(target.center.size()) != n)
    throw Error(ErrorCode::Invalid, "target center has wrong dimension");
  if (!(target.radius > 0)) throw Error(ErrorCode::Invalid, "target radius must be positive");

  HittingResult res;
  res.closest = std::numeric_limits<double>::infinity();

  // advisory mesh-scale check: one step moves about |drift| dt + amp sqrt(n dt)
  {
    std::vector<double> dz(n);
    s.drift_field().eval(z0, dz);
    double dn = 0;
    for (double v : dz) dn += v * v;
    double amp = s.amplitude_field().eval1(z0);
    double typical = std::sqrt(dn) * dt + std::abs(amp) * std::sqrt(dt * s.noise_indices().size());
    res.radius_warning = target.radius < 10.0 * typical;
  }

  if (target.contains(z0)) {
    res.hit = true;
    res.hit_time = 0;
    res.hit_step = 0;
    res.attempt_index = -1;
    res.closest = dist(z0, target.center);
    res.trajectory.dim = n;
    res.trajectory.dt = dt;
    res.trajectory.vars = s.model().vars;
    res.trajectory.states.assign(z0.begin(), z0.end());
    res.trajectory.noise.noise_dim = static_cast<int>(s.noise_indices().size());
    res.trajectory.noise.dt = dt;
    return res;
  }

  struct AttemptOutcome {
    long long hit_step = -1;
    double closest = std::numeric_limits<double>::infinity();
    double closest_time = 0;
  };
  std::vector<AttemptOutcome> outcomes(max_attempts);
  const auto& noise_idx = s.noise_indices();
  const int nw = static_cast<int>(noise_idx.size());
  const double r2 = target.radius * target.radius;

  // attempts with an index above some already-hit attempt cannot win and may
  // abort; the winner (lowest hitting index) is scheduling-independent
  std::atomic<int> best_hit{max_attempts};
  parallel_for(static_cast<size_t>(max_attempts), [&](size_t a) {
    GaussianRng rng(derive_seed(seed, a));
    std::vector<double> z(z0.begin(), z0.end());
    std::vector<double> dz(n), scratch;
    const double sqdt = std::sqrt(dt);
    AttemptOutcome& out = outcomes[a];
    for (long long k = 0; k < max_steps; ++k) {
      if ((k & 0x3ff) == 0 && best_hit.load(std::memory_order_relaxed) < static_cast<int>(a))
        return;
      s.drift_field().eval(z, dz, scratch);
      double a0 = s.amplitude_field().eval1(z);
      for (int i = 0; i < n; ++i) z[i] += dt * dz[i];
      for (int j = 0; j < nw; ++j) z[noise_idx[j]] += a0 * sqdt * rng.normal();
      bool bad = false;
      double d2 = 0;
      for (int i = 0; i < n; ++i) {
        if (!std::isfinite(z[i]) || std::abs(z[i]) > 1e12) bad = true;
        double d = z[i] - target.center[i];
        d2 += d * d;
      }
      if (bad) break;  // abandoned attempt; diagnostics keep the closest approach
      if (d2 < out.closest * out.closest) {
        out.closest = std::sqrt(d2);
        out.closest_time = (k + 1) * dt;
      }
      if (d2 <= r2) {
        out.hit_step = k + 1;
        int prev = best_hit.load(std::memory_order_relaxed);
        while (static_cast<int>(a) < prev &&
               !best_hit.compare_exchange_weak(prev, static_cast<int>(a))) {
        }
        break;
      }
    }
  });

  int winner = -1;
  for (int a = 0; a < max_attempts; ++a) {
    if (outcomes[a].hit_step >= 0 && winner < 0) winner = a;
    if (outcomes[a].closest < res.closest) {
      res.closest = outcomes[a].closest;
      res.closest_time = outcomes[a].closest_time;
      res.closest_attempt = a;
    }
  }
  res.attempts_used = winner >= 0 ? winner + 1 : max_attempts;
  if (winner < 0) return res;

  res.hit = true;
  res.attempt_index = winner;
  res.hit_step = outcomes[winner].hit_step;
  res.hit_time = res.hit_step * dt;
  // re-run the winning stream with recording; same seed, same floats
  res.trajectory = integrate(s, z0, dt, res.hit_step, derive_seed(seed, winner));
  return res;
}

ControlSignal extract_control(const ModelSpec& m, const Trajectory& traj) {
  m.validate();
  if (!m.control_is_coordinate_aligned())
    throw Error(ErrorCode::Invalid, "control extraction needs a coordinate-aligned E");
  if (traj.dim != m.dim())
    throw Error(ErrorCode::Invalid, "trajectory dimension does not match the model");
  ControlSignal u;
  u.t0 = traj.t0;
  u.dt = traj.dt;
  u.e_indices = m.control_indices;
  for (int idx : u.e_indices) u.e_names.push_back(m.vars[idx]);
  const int nu = static_cast<int>(u.e_indices.size());
  const long long K = traj.steps();
  u.values.reserve(K * nu);

  std::vector<Expr> fx;
  for (int idx : u.e_indices) fx.push_back(simplify(m.f.comps[idx]));
  CompiledField fx_field(fx, m.dim());
  std::vector<double> fv(nu), scratch;
  for (long long k = 0; k < K; ++k) {
    auto zk = traj.state(k);
    auto zk1 = traj.state(k + 1);
    fx_field.eval(zk, fv, scratch);
    for (int j = 0; j < nu; ++j) {
      int idx = u.e_indices[j];
      // same arithmetic order as the replay: x + dt*f first, then the control
      double predicted = zk[idx] + traj.dt * fv[j];
      u.values.push_back((zk1[idx] - predicted) / traj.dt);
    }
  }
  return u;
}

std::vector<double> replay_forward_euler(const ModelSpec& m, std::span<const double> z0,
                                         const ControlSignal& u) {
  const int n = m.dim();
  std::vector<Expr> fs;
  for (const auto& c : m.f.comps) fs.push_back(simplify(c));
  CompiledField f(fs, n);
  const int nu = static_cast<int>(u.e_indices.size());
  std::vector<double> out(z0.begin(), z0.end());
  out.reserve((u.steps() + 1) * n);
  std::vector<double> z(z0.begin(), z0.end());
  std::vector<double> dz(n), scratch;
  for (long long k = 0; k < u.steps(); ++k) {
    f.eval(z, dz, scratch);
    for (int i = 0; i < n; ++i) z[i] += u.dt * dz[i];
    for (int j = 0; j < nu; ++j) z[u.e_indices[j]] += u.dt * u.values[k * nu + j];
    out.insert(out.end(), z.begin(), z.end());
  }
  return out;
}

VerifyReport verify_control(const ModelSpec& m, std::span<const double> z0,
                            const ControlSignal& u, const TargetSet& target, double ode_dt) {
  if (ode_dt > u.dt * (1 + 1e-12) && u.steps() > 0)
    throw Error(ErrorCode::Invalid, "verification step must not exceed the control mesh step");
  const int n = m.dim();
  std::vector<Expr> fs;
  for (const auto& c : m.f.comps) fs.push_back(simplify(c));
  CompiledField f(fs, n);
  const int nu = static_cast<int>(u.e_indices.size());
  int sub = u.steps() > 0 ? std::max(1, static_cast<int>(std::llround(u.dt / ode_dt))) : 1;
  double h = u.dt / sub;

  std::vector<double> z(z0.begin(), z0.end());
  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n), scratch;
  auto rhs = [&](const std::vector<double>& state, const double* uk, std::vector<double>& out) {
    f.eval(state, out, scratch);
    for (int j = 0; j < nu; ++j) out[u.e_indices[j]] += uk[j];
  };
  for (long long k = 0; k < u.steps(); ++k) {
    const double* uk = u.values.data() + k * nu;
    for (int ssub = 0; ssub < sub; ++ssub) {
      rhs(z, uk, k1);
      for (int i = 0; i < n; ++i) tmp[i] = z[i] + 0.5 * h * k1[i];
      rhs(tmp, uk, k2);
      for (int i = 0; i < n; ++i) tmp[i] = z[i] + 0.5 * h * k2[i];
      rhs(tmp, uk, k3);
      for (int i = 0; i < n; ++i) tmp[i] = z[i] + h * k3[i];
      rhs(tmp, uk, k4);
      for (int i = 0; i < n; ++i)
        z[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
      for (int i = 0; i < n; ++i)
        if (!std::isfinite(z[i]) || std::abs(z[i]) > 1e12)
          throw Error(ErrorCode::Numeric,
                      "verification integration blew up at t = " +
                          std::to_string(u.t0 + k * u.dt + (ssub + 1) * h));
    }
  }
  VerifyReport rep;
  rep.terminal = z;
  rep.miss_distance = dist(z, target.center);
  rep.hit = rep.miss_distance <= target.radius;
  rep.ode_dt = h;
  rep.duration = u.duration();
  return rep;
}

ControlSignal mollify_control(const ControlSignal& u, double half_width, int refine) {
  if (u.steps() == 0) return u;
  double h = half_width > 0 ? half_width : u.dt;
  const int nu = static_cast<int>(u.e_indices.size());
  ControlSignal out;
  out.t0 = u.t0;
  out.dt = u.dt / refine;
  out.e_indices = u.e_indices;
  out.e_names = u.e_names;

  // normalized bump exp(-1/(1-s^2)) on (-1,1), 64-point midpoint quadrature
  const int Q = 64;
  std::vector<double> qs(Q), qw(Q);
  double norm = 0;
  for (int i = 0; i < Q; ++i) {
    qs[i] = -1.0 + (2.0 * i + 1.0) / Q;
    qw[i] = std::exp(-1.0 / (1.0 - qs[i] * qs[i]));
    norm += qw[i];
  }
  for (double& w : qw) w /= norm;

  auto coarse_at = [&](double t) {
    long long k = static_cast<long long>(std::floor((t - u.t0) / u.dt));
    k = std::clamp<long long>(k, 0, u.steps() - 1);
    return u.values.data() + k * nu;
  };
  long long fine_steps = u.steps() * refine;
  out.values.resize(fine_steps * nu);
  for (long long k = 0; k < fine_steps; ++k) {
    double t = u.t0 + (k + 0.5) * out.dt;
    for (int j = 0; j < nu; ++j) {
      double acc = 0;
      for (int i = 0; i < Q; ++i) acc += qw[i] * coarse_at(t - h * qs[i])[j];
      out.values[k * nu + j] = acc;
    }
  }
  return out;
}

SteerReport steer(const ModelSpec& m, const GFamily& g, std::span<const double> z0,
                  std::span<const double> z1, double eps, int budget, uint64_t seed,
                  const SteerOptions& opts) {
  m.validate();
  if (!(eps > 0)) throw Error(ErrorCode::Invalid, "steer needs eps > 0");
  if (budget < 1) throw Error(ErrorCode::Invalid, "steer needs budget >= 1");
  const int n = m.dim();
  if (static_cast<int>(z0.size()) != n || static_cast<int>(z1.size()) != n)
    throw Error(ErrorCode::Invalid, "steer endpoints have wrong dimension");

  SteerReport rep;
  rep.closest = std::numeric_limits<double>::infinity();

  if (dist(z0, z1) <= eps) {
    // already there: empty control, T = 0
    rep.success = true;
    rep.dt_used = opts.dt0;
    rep.control.t0 = 0;
    rep.control.dt = opts.dt0;
    rep.control.e_indices = m.control_indices;
    for (int idx : m.control_indices) rep.control.e_names.push_back(m.vars[idx]);
    rep.verify.terminal.assign(z0.begin(), z0.end());
    rep.verify.miss_distance = dist(z0, z1);
    rep.verify.hit = true;
    rep.message = "start already inside the target ball";
    return rep;
  }

  if (opts.rank_gate) {
    auto basis = m.control_vectors();
    RankOptions ro;
    GaussianRng rng(derive_seed(opts.rank_seed, 3));
    std::vector<std::vector<double>> pts = {std::vector<double>(z0.begin(), z0.end()),
                                            std::vector<double>(z1.begin(), z1.end())};
    for (int i = 0; i < 5; ++i) pts.push_back(rng.normal_vector(n));
    for (const auto& pt : pts) {
      if (hormander_rank(m.f, basis, pt, 0.0, ro).verdict != RankVerdict::Spans) {
        rep.rank_warning = true;
        break;
      }
    }
  }

  GFamily geff = g;
  if (!m.conserved) {
    geff = GFamily::none();
    rep.untempered = true;
  }
  SdeSystem s = build_sde(m, geff);

  TargetSet hit_target{std::vector<double>(z1.begin(), z1.end()), opts.hit_shrink * eps};
  TargetSet verify_target{std::vector<double>(z1.begin(), z1.end()), eps};

  for (int round = 0; round < budget; ++round) {
    rep.rounds_used = round + 1;
    double dt = opts.dt0 / static_cast<double>(1LL << round);
    long long max_steps = opts.max_steps * (1LL << round);  // constant time horizon
    HittingResult hitres = find_hitting_path(s, z0, hit_target, dt, max_steps,
                                             opts.max_attempts, derive_seed(seed, 100 + round));
    rep.closest = std::min(rep.closest, hitres.closest);
    if (!hitres.hit) continue;
    ControlSignal u = extract_control(m, hitres.trajectory);
    VerifyReport v = verify_control(m, z0, u, verify_target, dt / opts.ode_refine);
    if (v.hit) {
      rep.success = true;
      rep.dt_used = dt;
      rep.control = std::move(u);
      rep.verify = std::move(v);
      rep.message = "verified control found";
      return rep;
    }
    rep.closest = std::min(rep.closest, v.miss_distance);
    rep.verify = std::move(v);  // keep the best attempt for the failure report
  }

  rep.message = rep.untempered
                    ? "budget exhausted; no conserved quantity was available, so the "
                      "untempered SDE was used"
                    : "budget exhausted without a verified control";
  if (!m.barriers.empty()) rep.barriers = scan_barriers(m);
  return rep;
}

void save_control_csv(const ControlSignal& u, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write `" + path + "`");
  out << "t";
  for (const auto& nm : u.e_names) out << ",u_" << nm;
  out << "\n";
  char buf[40];
  const int nu = static_cast<int>(u.e_indices.size());
  for (long long k = 0; k < u.steps(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.17g", u.t0 + k * u.dt);
    out << buf;
    for (int j = 0; j < nu; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", u.values[k * nu + j]);
      out << "," << buf;
    }
    out << "\n";
  }
}

ControlSignal load_control_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open `" + path + "`");
  std::string header;
  if (!std::getline(in, header)) throw Error(ErrorCode::Parse, "empty control file");
  ControlSignal u;
  {
    std::stringstream ss(header);
    std::string c;
    bool first = true;
    while (std::getline(ss, c, ',')) {
      if (first) {
        if (c != "t") throw Error(ErrorCode::Parse, "control header must start with t");
        first = false;
      } else {
        if (c.rfind("u_", 0) != 0)
          throw Error(ErrorCode::Parse, "control columns must be named u_<var>");
        u.e_names.push_back(c.substr(2));
        u.e_indices.push_back(static_cast<int>(u.e_indices.size()));  // positional
      }
    }
  }
  std::vector<double> times;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != u.e_names.size() + 1)
      throw Error(ErrorCode::Parse, "control row has wrong column count");
    times.push_back(row[0]);
    for (size_t j = 1; j < row.size(); ++j) u.values.push_back(row[j]);
  }
  if (times.empty()) throw Error(ErrorCode::Parse, "control file has no rows");
  u.t0 = times[0];
  u.dt = times.size() > 1 ? times[1] - times[0] : 1.0;
  return u;
}

}  // namespace sk

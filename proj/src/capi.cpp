#include "steerkit.h"

#include <cstring>
#include <json.hpp>
#include <string>

#include "control.hpp"
#include "measure.hpp"
#include "models_zoo.hpp"
#include "sde.hpp"

using json = nlohmann::json;

struct sk_model {
  sk::ModelSpec spec;
};
struct sk_sde {
  sk::SdeSystem sys;
};
struct sk_trajectory {
  sk::Trajectory traj;
};
struct sk_control {
  sk::ControlSignal sig;
};

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr const char* kSchema = "steerkit-report/1";

thread_local std::string g_last_error;

sk_status code_of(const sk::Error& e) {
  switch (e.code) {
    case sk::ErrorCode::Parse: return SK_PARSE_ERROR;
    case sk::ErrorCode::Domain: return SK_DOMAIN_ERROR;
    case sk::ErrorCode::Invalid: return SK_INVALID_ARGUMENT;
    case sk::ErrorCode::Numeric: return SK_NUMERIC_ERROR;
    case sk::ErrorCode::Io: return SK_IO_ERROR;
  }
  return SK_ERROR;
}

template <typename Fn>
sk_status guarded(Fn&& fn) {
  try {
    fn();
    return SK_OK;
  } catch (const sk::Error& e) {
    g_last_error = e.what();
    return code_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SK_ERROR;
  } catch (...) {
    g_last_error = "unknown error";
    return SK_ERROR;
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json report_shell(const char* kind, json parameters) {
  return json{{"schema", kSchema},
              {"tool", "steerkit"},
              {"version", kVersion},
              {"kind", kind},
              {"parameters", std::move(parameters)}};
}

json parse_options(const char* options_json) {
  if (!options_json || !*options_json) return json::object();
  json j = json::parse(options_json, nullptr, false);
  if (j.is_discarded())
    throw sk::Error(sk::ErrorCode::Parse, "options are not valid JSON");
  if (!j.is_object()) throw sk::Error(sk::ErrorCode::Parse, "options must be a JSON object");
  return j;
}

sk::GFamily gfamily_from_json(const char* g_json, const sk::ModelSpec& m) {
  json j = parse_options(g_json);
  std::string family = j.value("family", "auto");
  double alpha = j.value("alpha", 1.0);
  if (family == "auto") family = m.conserved ? "linear" : "none";
  if (family == "linear") return sk::GFamily::linear(alpha);
  if (family == "log") return sk::GFamily::logarithmic(alpha);
  if (family == "none") return sk::GFamily::none();
  if (family == "custom") {
    if (!j.contains("expr"))
      throw sk::Error(sk::ErrorCode::Invalid, "custom g family needs an \"expr\" key");
    const std::vector<std::string> hvar = {"h"};
    sk::GFamily g{sk::GKind::Custom, alpha,
                  sk::parse_expression(j["expr"].get<std::string>(), hvar)};
    return g;
  }
  throw sk::Error(sk::ErrorCode::Invalid, "unknown g family `" + family + "`");
}

json check_report_json(const sk::ModelSpec& m, const sk::AssumptionReport& rep,
                       const json& params) {
  json out = report_shell("check", params);
  auto residual_json = [&](const sk::CheckReport& c) {
    json r{{"applicable", c.applicable},
           {"pass", c.pass},
           {"symbolic_zero", c.symbolic_zero},
           {"max_residual", c.max_residual}};
    if (!c.note.empty()) r["note"] = c.note;
    if (c.applicable) r["residual"] = to_string(c.residual, m.vars);
    return r;
  };
  json ranks = json::array();
  for (const auto& r : rep.ranks) {
    json fields = json::array();
    for (const auto& f : r.fields) {
      std::string comps;
      for (size_t c = 0; c < f.comps.size(); ++c) {
        if (c) comps += ", ";
        comps += to_string(f.comps[c], m.vars);
        if (comps.size() > 2000) {
          comps.resize(2000);
          comps += " ...";
          break;
        }
      }
      fields.push_back(json{{"word", f.word}, {"components", "(" + comps + ")"}});
    }
    const char* verdict = r.verdict == sk::RankVerdict::Spans
                              ? "spans"
                              : (r.verdict == sk::RankVerdict::Deficient
                                     ? "deficient"
                                     : "inconclusive-at-depth");
    ranks.push_back(json{{"point", r.point},
                         {"rank", r.rank},
                         {"dimension_required", m.dim() + 1},
                         {"depth_reached", r.depth_reached},
                         {"singular_values", r.singular_values},
                         {"verdict", verdict},
                         {"near_threshold", r.near_threshold},
                         {"budget_exhausted", r.budget_exhausted},
                         {"fields", fields}});
  }
  out["results"] = json{
      {"divergence_free", residual_json(rep.divergence)},
      {"conserved", residual_json(rep.conserved)},
      {"rank", json{{"all_span", rep.rank_all_span}, {"points", ranks}}},
      {"level_set_growth",
       rep.level_set_applicable
           ? json{{"applicable", true},
                  {"heuristic", true},
                  {"pass", rep.level_set.pass},
                  {"increasing", rep.level_set.increasing},
                  {"radii", rep.level_set.radii},
                  {"min_over_rays", rep.level_set.min_over_rays},
                  {"note", rep.level_set.note}}
           : json{{"applicable", false}}},
      {"pass", rep.pass}};
  return out;
}

json barriers_json(const sk::ModelSpec& m, const std::vector<sk::BarrierScanResult>& scans) {
  json arr = json::array();
  for (const auto& s : scans) {
    arr.push_back(json{{"coordinate", m.vars[s.band.coord]},
                       {"band", {s.band.lo, s.band.hi}},
                       {"sign", s.band.sign},
                       {"box", {s.band.box_lo, s.band.box_hi}},
                       {"extreme", s.extreme},
                       {"holds", s.holds},
                       {"samples", s.samples}});
  }
  return arr;
}

}  // namespace

extern "C" {

const char* sk_version(void) { return kVersion; }

const char* sk_last_error(void) { return g_last_error.c_str(); }

void sk_string_free(char* s) { std::free(s); }

sk_status sk_model_builtin(const char* name, const char* options_json, sk_model** out) {
  return guarded([&] {
    if (!name || !out) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    json opts = parse_options(options_json);
    std::string n = name;
    sk::ModelSpec spec;
    if (n == "harmonic-pair") {
      spec = sk::build_harmonic_pair();
    } else if (n == "trap") {
      spec = sk::build_trap();
    } else if (n == "slow") {
      spec = sk::build_slow();
    } else if (n == "euler") {
      int nstar = opts.value("nstar", 1);
      std::vector<int> reps = opts.value("control_reps", std::vector<int>{0});
      spec = sk::build_euler_galerkin(nstar, reps);
    } else if (n == "chain") {
      sk::ChainSpec cs;
      cs.oscillators = opts.value("oscillators", cs.oscillators);
      cs.hs = opts.value("hs", cs.hs);
      cs.couplings = opts.value("couplings", cs.couplings);
      cs.gamma = opts.value("gamma", cs.gamma);
      cs.lambda = opts.value("lambda", cs.lambda);
      cs.temperature = opts.value("temperature", cs.temperature);
      spec = sk::build_chain(cs).model;
    } else {
      throw sk::Error(sk::ErrorCode::Invalid, "unknown builtin model `" + n + "`");
    }
    *out = new sk_model{std::move(spec)};
  });
}

sk_status sk_model_load(const char* path, sk_model** out) {
  return guarded([&] {
    if (!path || !out) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    *out = new sk_model{sk::load_model(path)};
  });
}

sk_status sk_model_parse(const char* text, sk_model** out) {
  return guarded([&] {
    if (!text || !out) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    *out = new sk_model{sk::parse_model(text)};
  });
}

sk_status sk_model_save(const sk_model* m, const char* path) {
  return guarded([&] {
    if (!m || !path) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    sk::save_model(m->spec, path);
  });
}

sk_status sk_model_text(const sk_model* m, char** out_text) {
  return guarded([&] {
    if (!m || !out_text) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    *out_text = dup_string(sk::serialize_model(m->spec));
  });
}

int sk_model_dim(const sk_model* m) { return m ? m->spec.dim() : 0; }

int sk_model_control_dim(const sk_model* m) { return m ? m->spec.control_dim() : 0; }

void sk_model_free(sk_model* m) { delete m; }

sk_status sk_model_check(const sk_model* m, const char* options_json, char** report_json,
                         int* all_pass) {
  return guarded([&] {
    if (!m) throw sk::Error(sk::ErrorCode::Invalid, "null model");
    json opts = parse_options(options_json);
    sk::AssumptionOptions ao;
    ao.seed = opts.value("seed", ao.seed);
    ao.rank_points = opts.value("points", ao.rank_points);
    ao.rank_depth = opts.value("depth", ao.rank_depth);
    ao.residual_tol = opts.value("tol", ao.residual_tol);
    ao.rank_tol = opts.value("rank_tol", ao.rank_tol);
    ao.sample_count = opts.value("samples", ao.sample_count);
    sk::AssumptionReport rep = sk::check_assumptions(m->spec, ao);
    if (all_pass) *all_pass = rep.pass ? 1 : 0;
    if (report_json) {
      json params{{"model", m->spec.name},   {"seed", ao.seed},
                  {"points", ao.rank_points}, {"depth", ao.rank_depth},
                  {"tol", ao.residual_tol},   {"rank_tol", ao.rank_tol},
                  {"samples", ao.sample_count}};
      *report_json = dup_string(check_report_json(m->spec, rep, params).dump(2));
    }
  });
}

sk_status sk_model_barriers(const sk_model* m, char** report_json, int* all_hold) {
  return guarded([&] {
    if (!m) throw sk::Error(sk::ErrorCode::Invalid, "null model");
    if (m->spec.barriers.empty())
      throw sk::Error(sk::ErrorCode::Invalid,
                      "model `" + m->spec.name + "` declares no barrier bands");
    auto scans = sk::scan_barriers(m->spec);
    bool hold = true;
    for (const auto& s : scans) hold = hold && s.holds;
    if (all_hold) *all_hold = hold ? 1 : 0;
    if (report_json) {
      json out = report_shell("barriers", json{{"model", m->spec.name}});
      out["results"] = json{{"bands", barriers_json(m->spec, scans)}, {"all_hold", hold}};
      *report_json = dup_string(out.dump(2));
    }
  });
}

sk_status sk_sde_build(const sk_model* m, const char* g_json, sk_sde** out) {
  return guarded([&] {
    if (!m || !out) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    sk::GFamily g = gfamily_from_json(g_json, m->spec);
    *out = new sk_sde{sk::build_sde(m->spec, g)};
  });
}

sk_status sk_sde_info(const sk_sde* s, char** info_json) {
  return guarded([&] {
    if (!s || !info_json) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    const auto& sys = s->sys;
    const auto& vars = sys.model().vars;
    json drift = json::array();
    for (const auto& d : sys.drift()) drift.push_back(sk::to_string(d, vars));
    json out = report_shell("sde-info", json{{"model", sys.model().name}});
    out["results"] =
        json{{"tempered", sys.tempered()},
             {"drift", drift},
             {"amplitude", sk::to_string(sys.amplitude(), vars)},
             {"noise_coordinates", sys.noise_indices()},
             {"growth_constant", sys.growth().checked ? json(sys.growth().constant)
                                                      : json()}};
    if (sys.growth().suspicious)
      out["results"]["growth_warning"] =
          "fitted growth constant is very large; increase alpha or switch the g family";
    *info_json = dup_string(out.dump(2));
  });
}

sk_status sk_sde_integrate(const sk_sde* s, const double* z0, int dim, double dt,
                           int64_t steps, uint64_t seed, sk_trajectory** out) {
  return guarded([&] {
    if (!s || !z0 || !out) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    *out = new sk_trajectory{
        sk::integrate(s->sys, std::span<const double>(z0, dim), dt, steps, seed)};
  });
}

sk_status sk_sde_energy_bound(const sk_sde* s, const double* z0, int dim, double t_end,
                              int paths, double dt, uint64_t seed, char** report_json,
                              int* pass) {
  return guarded([&] {
    if (!s || !z0) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    sk::EnergyBoundReport rep = sk::energy_bound_check(
        s->sys, std::span<const double>(z0, dim), t_end, paths, dt, seed);
    if (pass) *pass = rep.pass ? 1 : 0;
    if (report_json) {
      json out = report_shell("energy-bound",
                              json{{"model", s->sys.model().name},
                                   {"t_end", t_end},
                                   {"paths", paths},
                                   {"dt", dt},
                                   {"seed", seed}});
      out["results"] = json{{"H0", rep.H0},
                            {"constant", rep.constant},
                            {"times", rep.times},
                            {"mean_H", rep.mean_H},
                            {"stderr_H", rep.stderr_H},
                            {"bound", rep.bound},
                            {"pass", rep.pass}};
      *report_json = dup_string(out.dump(2));
    }
  });
}

sk_status sk_sde_adjoint_residual(const sk_sde* s, double tol, char** report_json,
                                  int* pass) {
  return guarded([&] {
    if (!s) throw sk::Error(sk::ErrorCode::Invalid, "null sde");
    sk::AdjointReport rep = sk::adjoint_generator_residual(s->sys, tol);
    if (pass) *pass = rep.pass ? 1 : 0;
    if (report_json) {
      json out = report_shell(
          "adjoint-residual", json{{"model", s->sys.model().name}, {"tol", tol}});
      out["results"] = json{{"pass", rep.pass},
                            {"symbolic_zero", rep.symbolic_zero},
                            {"max_abs", rep.max_abs}};
      *report_json = dup_string(out.dump(2));
    }
  });
}

sk_status sk_sde_stationarity(const sk_sde* s, const char* const* fns,
                              const double* refs_or_null, int nfns, const double* z0,
                              int dim, int64_t steps, int64_t burn, double dt,
                              uint64_t seed, char** report_json, int* pass) {
  return guarded([&] {
    if (!s || !fns || !z0) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    std::vector<sk::Expr> exprs;
    std::vector<std::optional<double>> refs;
    for (int i = 0; i < nfns; ++i) {
      exprs.push_back(sk::parse_expression(fns[i], s->sys.model().vars));
      refs.push_back(refs_or_null ? std::optional<double>(refs_or_null[i]) : std::nullopt);
    }
    sk::StationarityOptions opts;
    opts.burn = burn;
    sk::StationarityReport rep =
        sk::stationarity_test(s->sys, exprs, refs, std::span<const double>(z0, dim),
                              steps, dt, seed, opts);
    if (pass) *pass = rep.all_pass ? 1 : 0;
    if (report_json) {
      json frep = json::array();
      for (const auto& f : rep.fns)
        frep.push_back(json{{"fn", f.fn},
                            {"average", f.average},
                            {"se", f.se},
                            {"reference", f.reference},
                            {"pass", f.pass}});
      json out = report_shell("stationarity", json{{"model", s->sys.model().name},
                                                   {"steps", rep.steps},
                                                   {"burn", rep.burn},
                                                   {"dt", rep.dt},
                                                   {"seed", rep.seed}});
      out["results"] = json{{"functions", frep}, {"all_pass", rep.all_pass}};
      *report_json = dup_string(out.dump(2));
    }
  });
}

sk_status sk_sde_kernel_overlap(const sk_sde* s, const double* z, const double* zp,
                                int dim, double t, int paths, double dt, uint64_t seed,
                                char** report_json) {
  return guarded([&] {
    if (!s || !z || !zp) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    sk::OverlapReport rep =
        sk::kernel_overlap(s->sys, std::span<const double>(z, dim),
                           std::span<const double>(zp, dim), t, paths, dt, 0, seed);
    if (report_json) {
      json out = report_shell("kernel-overlap", json{{"model", s->sys.model().name},
                                                     {"t", t},
                                                     {"paths", paths},
                                                     {"dt", dt},
                                                     {"seed", seed}});
      out["results"] = json{{"tv_estimate", rep.estimate},
                            {"ci", {rep.ci_lo, rep.ci_hi}},
                            {"bins_per_dim", rep.bins_per_dim},
                            {"note", rep.note}};
      *report_json = dup_string(out.dump(2));
    }
  });
}

void sk_sde_free(sk_sde* s) { delete s; }

int64_t sk_trajectory_steps(const sk_trajectory* t) { return t ? t->traj.steps() : 0; }

int sk_trajectory_dim(const sk_trajectory* t) { return t ? t->traj.dim : 0; }

sk_status sk_trajectory_state(const sk_trajectory* t, int64_t k, double* out, int dim) {
  return guarded([&] {
    if (!t || !out) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    if (k < 0 || k > t->traj.steps() || dim != t->traj.dim)
      throw sk::Error(sk::ErrorCode::Invalid, "state index or dimension out of range");
    auto st = t->traj.state(k);
    std::copy(st.begin(), st.end(), out);
  });
}

double sk_trajectory_time(const sk_trajectory* t, int64_t k) {
  return t ? t->traj.time(k) : 0.0;
}

sk_status sk_trajectory_save_csv(const sk_trajectory* t, const char* path) {
  return guarded([&] {
    if (!t || !path) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    sk::save_trajectory_csv(t->traj, path);
  });
}

sk_status sk_trajectory_save_noise(const sk_trajectory* t, const char* path) {
  return guarded([&] {
    if (!t || !path) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    sk::save_noise_record(t->traj, path);
  });
}

sk_status sk_trajectory_load_csv(const char* path, sk_trajectory** out) {
  return guarded([&] {
    if (!path || !out) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    *out = new sk_trajectory{sk::load_trajectory_csv(path)};
  });
}

void sk_trajectory_free(sk_trajectory* t) { delete t; }

sk_status sk_extract_control(const sk_model* m, const sk_trajectory* t, sk_control** out) {
  return guarded([&] {
    if (!m || !t || !out) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    *out = new sk_control{sk::extract_control(m->spec, t->traj)};
  });
}

sk_status sk_verify_control(const sk_model* m, const double* z0, int dim,
                            const sk_control* u, const double* center, double eps,
                            double ode_dt, char** report_json, int* hit) {
  return guarded([&] {
    if (!m || !z0 || !u || !center) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    sk::TargetSet target{std::vector<double>(center, center + dim), eps};
    sk::VerifyReport rep = sk::verify_control(
        m->spec, std::span<const double>(z0, dim), u->sig, target, ode_dt);
    if (hit) *hit = rep.hit ? 1 : 0;
    if (report_json) {
      json out = report_shell("verify-control", json{{"model", m->spec.name},
                                                     {"eps", eps},
                                                     {"ode_dt", ode_dt}});
      out["results"] = json{{"terminal", rep.terminal},
                            {"miss_distance", rep.miss_distance},
                            {"hit", rep.hit},
                            {"duration", rep.duration}};
      *report_json = dup_string(out.dump(2));
    }
  });
}

sk_status sk_steer(const sk_model* m, const char* g_json, const double* z0,
                   const double* z1, int dim, double eps, int budget, uint64_t seed,
                   const char* options_json, sk_control** control_out,
                   char** report_json, int* success) {
  return guarded([&] {
    if (!m || !z0 || !z1) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    json opts = parse_options(options_json);
    sk::SteerOptions so;
    so.dt0 = opts.value("dt0", so.dt0);
    so.max_steps = opts.value("max_steps", so.max_steps);
    so.max_attempts = opts.value("max_attempts", so.max_attempts);
    so.ode_refine = opts.value("ode_refine", so.ode_refine);
    so.hit_shrink = opts.value("hit_shrink", so.hit_shrink);
    so.rank_gate = opts.value("rank_gate", so.rank_gate);
    sk::GFamily g = gfamily_from_json(g_json, m->spec);
    sk::SteerReport rep =
        sk::steer(m->spec, g, std::span<const double>(z0, dim),
                  std::span<const double>(z1, dim), eps, budget, seed, so);
    if (success) *success = rep.success ? 1 : 0;
    if (control_out) *control_out = rep.success ? new sk_control{rep.control} : nullptr;
    if (report_json) {
      json out = report_shell(
          "steer", json{{"model", m->spec.name},
                        {"z0", std::vector<double>(z0, z0 + dim)},
                        {"z1", std::vector<double>(z1, z1 + dim)},
                        {"eps", eps},
                        {"budget", budget},
                        {"seed", seed},
                        {"dt0", so.dt0},
                        {"max_steps", so.max_steps},
                        {"max_attempts", so.max_attempts}});
      json results{{"success", rep.success},
                   {"rounds_used", rep.rounds_used},
                   {"dt_used", rep.dt_used},
                   {"rank_warning", rep.rank_warning},
                   {"untempered", rep.untempered},
                   {"closest_approach", rep.closest},
                   {"message", rep.message}};
      if (rep.success) {
        results["duration"] = rep.control.duration();
        results["terminal"] = rep.verify.terminal;
        results["miss_distance"] = rep.verify.miss_distance;
      }
      if (!rep.barriers.empty())
        results["barrier_certificates"] = barriers_json(m->spec, rep.barriers);
      out["results"] = std::move(results);
      *report_json = dup_string(out.dump(2));
    }
  });
}

int64_t sk_control_steps(const sk_control* u) { return u ? u->sig.steps() : 0; }

double sk_control_duration(const sk_control* u) { return u ? u->sig.duration() : 0.0; }

sk_status sk_control_save_csv(const sk_control* u, const char* path) {
  return guarded([&] {
    if (!u || !path) throw sk::Error(sk::ErrorCode::Invalid, "null argument");
    sk::save_control_csv(u->sig, path);
  });
}

void sk_control_free(sk_control* u) { delete u; }

}  // extern "C"

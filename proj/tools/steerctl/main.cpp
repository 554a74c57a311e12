// steerctl - batch driver for the steerkit library.
//
// Subcommands: model, check, simulate, stationarity, steer. Every run can be
// described by a JSON manifest (--manifest) whose values act as defaults for
// the corresponding flags; each report echoes the resolved parameters so a
// run can be reproduced bit-for-bit from its own report.
//
// Exit codes: 0 pass, 1 check/steer failure, 2 usage or parse error,
// 3 numerical failure.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "steerkit.h"

using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFail = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

int exit_code_for(sk_status st) {
  switch (st) {
    case SK_OK: return kExitOk;
    case SK_NUMERIC_ERROR: return kExitNumeric;
    default: return kExitUsage;
  }
}

[[noreturn]] void die(sk_status st, const std::string& what) {
  std::cerr << "steerctl: " << what << ": " << sk_last_error() << "\n";
  std::exit(exit_code_for(st));
}

struct StringHolder {
  char* s = nullptr;
  ~StringHolder() { sk_string_free(s); }
};

std::vector<double> parse_point(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (...) {
      std::cerr << "steerctl: malformed coordinate list `" << text << "`\n";
      std::exit(kExitUsage);
    }
  }
  return out;
}

json load_manifest(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) {
    std::cerr << "steerctl: cannot open manifest `" << path << "`\n";
    std::exit(kExitUsage);
  }
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    std::cerr << "steerctl: manifest `" << path << "` is not a JSON object\n";
    std::exit(kExitUsage);
  }
  return j;
}

// manifest values fill in flags the user did not pass
template <typename T>
void fill(const CLI::Option* opt, const json& manifest, const char* key, T& value) {
  if (opt->count() == 0 && manifest.contains(key)) value = manifest[key].get<T>();
}

void write_report(const std::string& path, const std::string& body, const json& manifest) {
  if (path.empty()) return;
  json doc = json::parse(body);
  doc["manifest"] = manifest;
  std::ofstream out(path);
  if (!out) {
    std::cerr << "steerctl: cannot write report `" << path << "`\n";
    std::exit(kExitUsage);
  }
  out << doc.dump(2) << "\n";
}

std::string gfamily_json(const std::string& family, double alpha, const std::string& expr) {
  json g{{"family", family}, {"alpha", alpha}};
  if (!expr.empty()) g["expr"] = expr;
  return g.dump();
}

sk_model* load_model_or_die(const std::string& path) {
  sk_model* m = nullptr;
  sk_status st = sk_model_load(path.c_str(), &m);
  if (st != SK_OK) die(st, "loading model `" + path + "`");
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"steerkit driver: assumption checks, auxiliary-SDE simulation, "
               "invariant-measure tests, and noise-harvested steering"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // ---- model ------------------------------------------------------------------
  auto* cmd_model = app.add_subcommand("model", "emit a built-in model file");
  std::string model_name, model_out = "-", chain_config;
  int nstar = 1;
  std::vector<int> control_reps = {0};
  cmd_model->add_option("name", model_name,
                        "harmonic-pair | trap | slow | euler | chain")
      ->required();
  cmd_model->add_option("--out,-o", model_out, "output path (- for stdout)");
  cmd_model->add_option("--nstar", nstar, "euler: Fourier cutoff");
  cmd_model->add_option("--control-reps", control_reps,
                        "euler: representative modes whose coordinates form E");
  cmd_model->add_option("--config", chain_config, "chain: JSON spec file");

  // ---- check ------------------------------------------------------------------
  auto* cmd_check = app.add_subcommand("check", "run the assumption checks");
  std::string check_model, check_report, check_manifest;
  uint64_t check_seed = 42;
  int check_points = 10, check_depth = 6;
  cmd_check->add_option("model", check_model, "model file")->required();
  auto* o_cseed = cmd_check->add_option("--seed", check_seed, "sample seed");
  auto* o_cpts = cmd_check->add_option("--points", check_points, "rank sample points");
  auto* o_cdep = cmd_check->add_option("--depth", check_depth, "bracket depth cap");
  cmd_check->add_option("--report", check_report, "write the JSON report here");
  cmd_check->add_option("--manifest", check_manifest, "JSON defaults for the flags");

  // ---- simulate ---------------------------------------------------------------
  auto* cmd_sim = app.add_subcommand("simulate", "integrate the auxiliary SDE");
  std::string sim_model, sim_z0 = "", sim_out = "trajectory.csv", sim_noise, sim_report,
              sim_manifest, sim_family = "auto", sim_gexpr;
  double sim_dt = 1e-3, sim_alpha = 1.0;
  int64_t sim_steps = 10000;
  uint64_t sim_seed = 1;
  cmd_sim->add_option("model", sim_model, "model file")->required();
  auto* o_sz0 = cmd_sim->add_option("--z0", sim_z0, "initial state, comma separated");
  auto* o_sdt = cmd_sim->add_option("--dt", sim_dt, "time step");
  auto* o_sst = cmd_sim->add_option("--steps", sim_steps, "number of steps");
  auto* o_ssd = cmd_sim->add_option("--seed", sim_seed, "noise seed");
  auto* o_sal = cmd_sim->add_option("--alpha", sim_alpha, "tempering strength");
  auto* o_sfm = cmd_sim->add_option("--g-family", sim_family,
                                    "auto | linear | log | custom | none");
  cmd_sim->add_option("--g-expr", sim_gexpr, "custom family: g(h) expression");
  auto* o_sout = cmd_sim->add_option("--out", sim_out, "trajectory CSV path");
  cmd_sim->add_option("--noise-out", sim_noise, "noise sidecar path");
  cmd_sim->add_option("--report", sim_report, "write the JSON report here");
  cmd_sim->add_option("--manifest", sim_manifest, "JSON defaults for the flags");

  // ---- stationarity -------------------------------------------------------------
  auto* cmd_stat = app.add_subcommand("stationarity",
                                      "compare time averages with the invariant law");
  std::string stat_model, stat_z0 = "", stat_report, stat_manifest,
              stat_family = "auto", stat_gexpr;
  std::vector<std::string> stat_fns;
  std::vector<double> stat_refs;
  double stat_dt = 1e-3, stat_alpha = 1.0;
  int64_t stat_steps = 1000000, stat_burn = -1;
  uint64_t stat_seed = 1;
  cmd_stat->add_option("model", stat_model, "model file")->required();
  cmd_stat->add_option("--fn", stat_fns, "test function (repeatable)");
  cmd_stat->add_option("--ref", stat_refs,
                       "reference value per --fn (defaults to quadrature)");
  auto* o_tz0 = cmd_stat->add_option("--z0", stat_z0, "initial state");
  auto* o_tdt = cmd_stat->add_option("--dt", stat_dt, "time step");
  auto* o_tst = cmd_stat->add_option("--steps", stat_steps, "number of steps");
  auto* o_tbn = cmd_stat->add_option("--burn", stat_burn, "burn-in steps (-1: 10%)");
  auto* o_tsd = cmd_stat->add_option("--seed", stat_seed, "noise seed");
  auto* o_tal = cmd_stat->add_option("--alpha", stat_alpha, "tempering strength");
  auto* o_tfm = cmd_stat->add_option("--g-family", stat_family, "g family");
  cmd_stat->add_option("--g-expr", stat_gexpr, "custom family: g(h) expression");
  cmd_stat->add_option("--report", stat_report, "write the JSON report here");
  cmd_stat->add_option("--manifest", stat_manifest, "JSON defaults for the flags");

  // ---- steer ----------------------------------------------------------------------
  auto* cmd_steer = app.add_subcommand("steer",
                                       "synthesize an open-loop control by noise harvesting");
  std::string steer_model, steer_z0, steer_z1, steer_out = "control.csv", steer_report,
              steer_manifest, steer_family = "auto", steer_gexpr;
  double steer_eps = 0.5, steer_dt = 1e-3, steer_alpha = 1.0;
  int steer_budget = 3, steer_attempts = 12;
  int64_t steer_max_steps = 400000;
  uint64_t steer_seed = 1;
  cmd_steer->add_option("model", steer_model, "model file")->required();
  auto* o_rz0 = cmd_steer->add_option("--z0", steer_z0, "start state")->required(false);
  auto* o_rz1 = cmd_steer->add_option("--z1", steer_z1, "goal state")->required(false);
  auto* o_rep = cmd_steer->add_option("--eps", steer_eps, "target ball radius");
  auto* o_rbd = cmd_steer->add_option("--budget", steer_budget, "dt-halving rounds");
  auto* o_rdt = cmd_steer->add_option("--dt", steer_dt, "initial SDE step");
  auto* o_rat = cmd_steer->add_option("--attempts", steer_attempts, "attempts per round");
  auto* o_rms = cmd_steer->add_option("--max-steps", steer_max_steps,
                                      "steps per attempt at the initial dt");
  auto* o_rsd = cmd_steer->add_option("--seed", steer_seed, "search seed");
  auto* o_ral = cmd_steer->add_option("--alpha", steer_alpha, "tempering strength");
  auto* o_rfm = cmd_steer->add_option("--g-family", steer_family, "g family");
  cmd_steer->add_option("--g-expr", steer_gexpr, "custom family: g(h) expression");
  cmd_steer->add_option("--control-out", steer_out, "control CSV path");
  cmd_steer->add_option("--report", steer_report, "write the JSON report here");
  cmd_steer->add_option("--manifest", steer_manifest, "JSON defaults for the flags");

  CLI11_PARSE(app, argc, argv);

  // ---- model -----------------------------------------------------------------
  if (cmd_model->parsed()) {
    json opts = json::object();
    if (model_name == "euler") {
      opts["nstar"] = nstar;
      opts["control_reps"] = control_reps;
    } else if (model_name == "chain" && !chain_config.empty()) {
      std::ifstream in(chain_config);
      if (!in) {
        std::cerr << "steerctl: cannot open chain config `" << chain_config << "`\n";
        return kExitUsage;
      }
      opts = json::parse(in, nullptr, false);
      if (opts.is_discarded()) {
        std::cerr << "steerctl: chain config is not valid JSON\n";
        return kExitUsage;
      }
    }
    sk_model* m = nullptr;
    sk_status st = sk_model_builtin(model_name.c_str(), opts.dump().c_str(), &m);
    if (st != SK_OK) die(st, "building model `" + model_name + "`");
    if (model_out == "-") {
      StringHolder text;
      if (sk_model_text(m, &text.s) != SK_OK) die(SK_ERROR, "serializing model");
      std::cout << text.s;
    } else {
      st = sk_model_save(m, model_out.c_str());
      if (st != SK_OK) die(st, "writing `" + model_out + "`");
      std::cout << "wrote " << model_out << "\n";
    }
    sk_model_free(m);
    return kExitOk;
  }

  // ---- check -----------------------------------------------------------------
  if (cmd_check->parsed()) {
    json manifest = load_manifest(check_manifest);
    fill(o_cseed, manifest, "seed", check_seed);
    fill(o_cpts, manifest, "points", check_points);
    fill(o_cdep, manifest, "depth", check_depth);
    sk_model* m = load_model_or_die(check_model);
    json opts{{"seed", check_seed}, {"points", check_points}, {"depth", check_depth}};
    StringHolder report;
    int all_pass = 0;
    sk_status st = sk_model_check(m, opts.dump().c_str(), &report.s, &all_pass);
    if (st != SK_OK) die(st, "running checks");
    json rep = json::parse(report.s);
    const auto& res = rep["results"];
    auto line = [](const std::string& name, const json& j) {
      std::string verdict;
      if (j.contains("applicable") && !j["applicable"].get<bool>())
        verdict = "not applicable (no conserved quantity declared)";
      else
        verdict = j["pass"].get<bool>() ? "pass" : "FAIL";
      std::cout << "  " << name << ": " << verdict << "\n";
    };
    std::cout << "assumption checks for " << rep["parameters"]["model"].get<std::string>()
              << "\n";
    line("divergence-free   ", res["divergence_free"]);
    line("conserved quantity", res["conserved"]);
    bool spans = res["rank"]["all_span"].get<bool>();
    auto& pts = res["rank"]["points"];
    int min_rank = 1 << 30, dim_req = 0;
    for (const auto& p : pts) {
      min_rank = std::min(min_rank, p["rank"].get<int>());
      dim_req = p["dimension_required"].get<int>();
    }
    std::cout << "  bracket rank      : " << (spans ? "pass" : "FAIL") << " (min rank "
              << min_rank << " of " << dim_req << " over " << pts.size() << " points)\n";
    if (res["level_set_growth"]["applicable"].get<bool>())
      std::cout << "  level-set growth  : "
                << (res["level_set_growth"]["pass"].get<bool>() ? "pass" : "FAIL")
                << " (heuristic, advisory)\n";
    manifest["model"] = check_model;
    manifest["seed"] = check_seed;
    manifest["points"] = check_points;
    manifest["depth"] = check_depth;
    manifest["tool_version"] = sk_version();
    write_report(check_report, report.s, manifest);
    sk_model_free(m);
    std::cout << (all_pass ? "PASS" : "FAIL") << "\n";
    return all_pass ? kExitOk : kExitCheckFail;
  }

  // ---- simulate ---------------------------------------------------------------
  if (cmd_sim->parsed()) {
    json manifest = load_manifest(sim_manifest);
    fill(o_sz0, manifest, "z0", sim_z0);
    fill(o_sdt, manifest, "dt", sim_dt);
    fill(o_sst, manifest, "steps", sim_steps);
    fill(o_ssd, manifest, "seed", sim_seed);
    fill(o_sal, manifest, "alpha", sim_alpha);
    fill(o_sfm, manifest, "g_family", sim_family);
    fill(o_sout, manifest, "out", sim_out);
    sk_model* m = load_model_or_die(sim_model);
    int dim = sk_model_dim(m);
    std::vector<double> z0 =
        sim_z0.empty() ? std::vector<double>(dim, 0.0) : parse_point(sim_z0);
    if (static_cast<int>(z0.size()) != dim) {
      std::cerr << "steerctl: --z0 needs " << dim << " coordinates\n";
      return kExitUsage;
    }
    sk_sde* s = nullptr;
    sk_status st =
        sk_sde_build(m, gfamily_json(sim_family, sim_alpha, sim_gexpr).c_str(), &s);
    if (st != SK_OK) die(st, "building the SDE");
    {
      StringHolder info;
      if (sk_sde_info(s, &info.s) == SK_OK) {
        json ij = json::parse(info.s);
        if (ij["results"]["tempered"] == false)
          std::cout << "note: no conserved quantity; using the untempered SDE\n";
        if (ij["results"].contains("growth_warning"))
          std::cout << "note: " << ij["results"]["growth_warning"].get<std::string>()
                    << "\n";
      }
    }
    sk_trajectory* t = nullptr;
    st = sk_sde_integrate(s, z0.data(), dim, sim_dt, sim_steps, sim_seed, &t);
    if (st != SK_OK) die(st, "integrating");
    st = sk_trajectory_save_csv(t, sim_out.c_str());
    if (st != SK_OK) die(st, "writing `" + sim_out + "`");
    if (!sim_noise.empty()) {
      st = sk_trajectory_save_noise(t, sim_noise.c_str());
      if (st != SK_OK) die(st, "writing `" + sim_noise + "`");
    }
    manifest["model"] = sim_model;
    manifest["z0"] = z0;
    manifest["dt"] = sim_dt;
    manifest["steps"] = sim_steps;
    manifest["seed"] = sim_seed;
    manifest["alpha"] = sim_alpha;
    manifest["g_family"] = sim_family;
    manifest["out"] = sim_out;
    if (!sim_noise.empty()) manifest["noise_out"] = sim_noise;
    manifest["tool_version"] = sk_version();
    if (!sim_report.empty()) {
      StringHolder info;
      if (sk_sde_info(s, &info.s) != SK_OK) die(SK_ERROR, "describing the SDE");
      write_report(sim_report, info.s, manifest);
    }
    std::cout << "wrote " << sim_out << " (" << sim_steps << " steps)\n";
    sk_trajectory_free(t);
    sk_sde_free(s);
    sk_model_free(m);
    return kExitOk;
  }

  // ---- stationarity --------------------------------------------------------------
  if (cmd_stat->parsed()) {
    json manifest = load_manifest(stat_manifest);
    fill(o_tz0, manifest, "z0", stat_z0);
    fill(o_tdt, manifest, "dt", stat_dt);
    fill(o_tst, manifest, "steps", stat_steps);
    fill(o_tbn, manifest, "burn", stat_burn);
    fill(o_tsd, manifest, "seed", stat_seed);
    fill(o_tal, manifest, "alpha", stat_alpha);
    fill(o_tfm, manifest, "g_family", stat_family);
    if (stat_fns.empty() && manifest.contains("fns"))
      stat_fns = manifest["fns"].get<std::vector<std::string>>();
    if (stat_fns.empty()) {
      std::cerr << "steerctl: stationarity needs at least one --fn\n";
      return kExitUsage;
    }
    if (!stat_refs.empty() && stat_refs.size() != stat_fns.size()) {
      std::cerr << "steerctl: --ref count must match --fn count\n";
      return kExitUsage;
    }
    sk_model* m = load_model_or_die(stat_model);
    int dim = sk_model_dim(m);
    std::vector<double> z0 =
        stat_z0.empty() ? std::vector<double>(dim, 0.0) : parse_point(stat_z0);
    if (static_cast<int>(z0.size()) != dim) {
      std::cerr << "steerctl: --z0 needs " << dim << " coordinates\n";
      return kExitUsage;
    }
    sk_sde* s = nullptr;
    sk_status st =
        sk_sde_build(m, gfamily_json(stat_family, stat_alpha, stat_gexpr).c_str(), &s);
    if (st != SK_OK) die(st, "building the SDE");
    std::vector<const char*> fn_ptrs;
    for (const auto& f : stat_fns) fn_ptrs.push_back(f.c_str());
    StringHolder report;
    int pass = 0;
    st = sk_sde_stationarity(s, fn_ptrs.data(),
                             stat_refs.empty() ? nullptr : stat_refs.data(),
                             static_cast<int>(fn_ptrs.size()), z0.data(), dim, stat_steps,
                             stat_burn, stat_dt, stat_seed, &report.s, &pass);
    if (st != SK_OK) die(st, "running the stationarity test");
    json rep = json::parse(report.s);
    for (const auto& f : rep["results"]["functions"])
      std::printf("  <%s> = %.6g  (ref %.6g, se %.2g) %s\n",
                  f["fn"].get<std::string>().c_str(), f["average"].get<double>(),
                  f["reference"].get<double>(), f["se"].get<double>(),
                  f["pass"].get<bool>() ? "pass" : "FAIL");
    manifest["model"] = stat_model;
    manifest["fns"] = stat_fns;
    manifest["z0"] = z0;
    manifest["dt"] = stat_dt;
    manifest["steps"] = stat_steps;
    manifest["burn"] = stat_burn;
    manifest["seed"] = stat_seed;
    manifest["alpha"] = stat_alpha;
    manifest["g_family"] = stat_family;
    manifest["tool_version"] = sk_version();
    write_report(stat_report, report.s, manifest);
    sk_sde_free(s);
    sk_model_free(m);
    std::cout << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? kExitOk : kExitCheckFail;
  }

  // ---- steer -----------------------------------------------------------------------
  if (cmd_steer->parsed()) {
    json manifest = load_manifest(steer_manifest);
    fill(o_rz0, manifest, "z0", steer_z0);
    fill(o_rz1, manifest, "z1", steer_z1);
    fill(o_rep, manifest, "eps", steer_eps);
    fill(o_rbd, manifest, "budget", steer_budget);
    fill(o_rdt, manifest, "dt", steer_dt);
    fill(o_rat, manifest, "attempts", steer_attempts);
    fill(o_rms, manifest, "max_steps", steer_max_steps);
    fill(o_rsd, manifest, "seed", steer_seed);
    fill(o_ral, manifest, "alpha", steer_alpha);
    fill(o_rfm, manifest, "g_family", steer_family);
    if (steer_z0.empty() || steer_z1.empty()) {
      std::cerr << "steerctl: steer needs --z0 and --z1 (flag or manifest)\n";
      return kExitUsage;
    }
    sk_model* m = load_model_or_die(steer_model);
    int dim = sk_model_dim(m);
    std::vector<double> z0 = parse_point(steer_z0), z1 = parse_point(steer_z1);
    if (static_cast<int>(z0.size()) != dim || static_cast<int>(z1.size()) != dim) {
      std::cerr << "steerctl: endpoints need " << dim << " coordinates\n";
      return kExitUsage;
    }
    json opts{{"dt0", steer_dt},
              {"max_steps", steer_max_steps},
              {"max_attempts", steer_attempts}};
    sk_control* u = nullptr;
    StringHolder report;
    int success = 0;
    sk_status st = sk_steer(m, gfamily_json(steer_family, steer_alpha, steer_gexpr).c_str(),
                            z0.data(), z1.data(), dim, steer_eps, steer_budget, steer_seed,
                            opts.dump().c_str(), &u, &report.s, &success);
    if (st != SK_OK) die(st, "steering");
    json rep = json::parse(report.s);
    const auto& res = rep["results"];
    if (res["rank_warning"].get<bool>())
      std::cout << "note: bracket rank not full at some sampled point (advisory)\n";
    if (res["untempered"].get<bool>())
      std::cout << "note: no conserved quantity; using the untempered SDE\n";
    if (success) {
      std::printf("verified control: duration %.4g, terminal miss %.4g (eps %.4g)\n",
                  res["duration"].get<double>(), res["miss_distance"].get<double>(),
                  steer_eps);
      if (u && sk_control_save_csv(u, steer_out.c_str()) == SK_OK)
        std::cout << "wrote " << steer_out << "\n";
    } else {
      std::printf("steering failed: %s (closest approach %.4g)\n",
                  res["message"].get<std::string>().c_str(),
                  res["closest_approach"].get<double>());
      if (res.contains("barrier_certificates")) {
        for (const auto& b : res["barrier_certificates"]) {
          std::printf("  barrier: %s' %s 0 on (%g, %g) (extreme %.4g) -- %s\n",
                      b["coordinate"].get<std::string>().c_str(),
                      b["sign"].get<int>() > 0 ? ">" : "<",
                      b["band"][0].get<double>(), b["band"][1].get<double>(),
                      b["extreme"].get<double>(),
                      b["holds"].get<bool>() ? "certified" : "not certified");
        }
      }
    }
    manifest["model"] = steer_model;
    manifest["z0"] = z0;
    manifest["z1"] = z1;
    manifest["eps"] = steer_eps;
    manifest["budget"] = steer_budget;
    manifest["dt"] = steer_dt;
    manifest["attempts"] = steer_attempts;
    manifest["max_steps"] = steer_max_steps;
    manifest["seed"] = steer_seed;
    manifest["alpha"] = steer_alpha;
    manifest["g_family"] = steer_family;
    manifest["control_out"] = steer_out;
    manifest["tool_version"] = sk_version();
    write_report(steer_report, report.s, manifest);
    if (u) sk_control_free(u);
    sk_model_free(m);
    return success ? kExitOk : kExitCheckFail;
  }

  return kExitUsage;
}

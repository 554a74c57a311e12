// Exercises the public C interface the way an external client (or the CLI)
// would: through steerkit.h only.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "steerkit.h"

using json = nlohmann::json;

namespace {
std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

struct Str {
  char* s = nullptr;
  ~Str() { sk_string_free(s); }
};
}  // namespace

TEST_CASE("version and error reporting") {
  CHECK(std::string(sk_version()) == "0.1.0");
  sk_model* m = nullptr;
  CHECK(sk_model_builtin("no-such-model", nullptr, &m) == SK_INVALID_ARGUMENT);
  CHECK(std::string(sk_last_error()).find("no-such-model") != std::string::npos);
  CHECK(sk_model_parse("vars x\nfield x = oops(", &m) == SK_PARSE_ERROR);
}

TEST_CASE("builtin models round-trip through files") {
  for (const char* name : {"harmonic-pair", "trap", "slow", "chain"}) {
    sk_model* m = nullptr;
    REQUIRE(sk_model_builtin(name, nullptr, &m) == SK_OK);
    std::string path = tmp_path("sk_capi_model.model");
    REQUIRE(sk_model_save(m, path.c_str()) == SK_OK);
    sk_model* back = nullptr;
    REQUIRE(sk_model_load(path.c_str(), &back) == SK_OK);
    CHECK(sk_model_dim(back) == sk_model_dim(m));
    CHECK(sk_model_control_dim(back) == sk_model_control_dim(m));
    sk_model_free(m);
    sk_model_free(back);
    std::remove(path.c_str());
  }
}

TEST_CASE("euler builtin accepts options") {
  sk_model* m = nullptr;
  REQUIRE(sk_model_builtin("euler", R"({"nstar":1,"control_reps":[0,1]})", &m) == SK_OK);
  CHECK(sk_model_dim(m) == 52);
  CHECK(sk_model_control_dim(m) == 8);
  sk_model_free(m);
}

TEST_CASE("check report carries ranks with singular values") {
  sk_model* m = nullptr;
  REQUIRE(sk_model_builtin("harmonic-pair", nullptr, &m) == SK_OK);
  Str rep;
  int pass = -1;
  REQUIRE(sk_model_check(m, R"({"points":4,"depth":4,"seed":7})", &rep.s, &pass) == SK_OK);
  CHECK(pass == 0);
  json j = json::parse(rep.s);
  CHECK(j["schema"] == "steerkit-report/1");
  CHECK(j["kind"] == "check");
  CHECK(j["results"]["divergence_free"]["pass"] == true);
  CHECK(j["results"]["conserved"]["pass"] == true);
  CHECK(j["results"]["rank"]["all_span"] == false);
  auto& pts = j["results"]["rank"]["points"];
  REQUIRE(pts.size() == 4);
  for (auto& p : pts) {
    CHECK(p["rank"] == 3);
    CHECK(p["verdict"] == "deficient");
    CHECK(p["singular_values"].size() >= 3);
  }
  sk_model_free(m);
}

TEST_CASE("trap check reports conservation as not applicable") {
  sk_model* m = nullptr;
  REQUIRE(sk_model_builtin("trap", nullptr, &m) == SK_OK);
  Str rep;
  int pass = -1;
  REQUIRE(sk_model_check(m, R"({"points":3})", &rep.s, &pass) == SK_OK);
  json j = json::parse(rep.s);
  CHECK(j["results"]["conserved"]["applicable"] == false);
  std::string note = j["results"]["conserved"]["note"];
  CHECK(note.find("not applicable") != std::string::npos);
  CHECK(pass == 0);

  Str brep;
  int hold = 0;
  REQUIRE(sk_model_barriers(m, &brep.s, &hold) == SK_OK);
  CHECK(hold == 1);
  sk_model_free(m);

  sk_model* slow = nullptr;
  REQUIRE(sk_model_builtin("slow", nullptr, &slow) == SK_OK);
  CHECK(sk_model_barriers(slow, nullptr, &hold) == SK_INVALID_ARGUMENT);
  sk_model_free(slow);
}

TEST_CASE("sde build, info, integrate, trajectory access") {
  sk_model* m = nullptr;
  REQUIRE(sk_model_builtin("slow", nullptr, &m) == SK_OK);
  sk_sde* s = nullptr;
  REQUIRE(sk_sde_build(m, R"({"family":"linear","alpha":0.5})", &s) == SK_OK);
  Str info;
  REQUIRE(sk_sde_info(s, &info.s) == SK_OK);
  json j = json::parse(info.s);
  CHECK(j["results"]["tempered"] == true);
  CHECK(j["results"]["noise_coordinates"] == json::array({0}));

  std::vector<double> z0 = {0.1, -0.2};
  sk_trajectory* t = nullptr;
  REQUIRE(sk_sde_integrate(s, z0.data(), 2, 1e-3, 500, 9, &t) == SK_OK);
  CHECK(sk_trajectory_steps(t) == 500);
  CHECK(sk_trajectory_dim(t) == 2);
  double st0[2];
  REQUIRE(sk_trajectory_state(t, 0, st0, 2) == SK_OK);
  CHECK(st0[0] == 0.1);
  CHECK(sk_trajectory_time(t, 500) == doctest::Approx(0.5));
  CHECK(sk_trajectory_state(t, 501, st0, 2) == SK_INVALID_ARGUMENT);

  std::string csv = tmp_path("sk_capi_traj.csv");
  std::string noz = tmp_path("sk_capi_traj.noise");
  REQUIRE(sk_trajectory_save_csv(t, csv.c_str()) == SK_OK);
  REQUIRE(sk_trajectory_save_noise(t, noz.c_str()) == SK_OK);

  // the separate-process workflow: reload the trajectory, extract, verify
  sk_trajectory* loaded = nullptr;
  REQUIRE(sk_trajectory_load_csv(csv.c_str(), &loaded) == SK_OK);
  CHECK(sk_trajectory_steps(loaded) == 500);
  sk_control* u = nullptr;
  REQUIRE(sk_extract_control(m, loaded, &u) == SK_OK);
  CHECK(sk_control_steps(u) == 500);
  double term[2];
  REQUIRE(sk_trajectory_state(t, 500, term, 2) == SK_OK);
  Str vrep;
  int hit = 0;
  REQUIRE(sk_verify_control(m, z0.data(), 2, u, term, 0.05, 2.5e-4, &vrep.s, &hit) ==
          SK_OK);
  CHECK(hit == 1);  // RK4 replay lands on the discrete terminal state

  sk_control_free(u);
  sk_trajectory_free(loaded);
  sk_trajectory_free(t);
  sk_sde_free(s);
  sk_model_free(m);
  std::remove(csv.c_str());
  std::remove(noz.c_str());
}

TEST_CASE("untempered fallback needs an explicit or auto none family") {
  sk_model* m = nullptr;
  REQUIRE(sk_model_builtin("trap", nullptr, &m) == SK_OK);
  sk_sde* s = nullptr;
  CHECK(sk_sde_build(m, R"({"family":"linear"})", &s) == SK_INVALID_ARGUMENT);
  REQUIRE(sk_sde_build(m, nullptr, &s) == SK_OK);  // auto -> none
  Str info;
  REQUIRE(sk_sde_info(s, &info.s) == SK_OK);
  CHECK(json::parse(info.s)["results"]["tempered"] == false);
  sk_sde_free(s);
  sk_model_free(m);
}

TEST_CASE("adjoint, energy bound, stationarity, overlap through the C surface") {
  sk_model* m = nullptr;
  REQUIRE(sk_model_parse(
              "model g1\nvars x\nfield x = 0\nconserved = x^2/2\ncontrol x\n", &m) == SK_OK);
  sk_sde* s = nullptr;
  REQUIRE(sk_sde_build(m, R"({"family":"linear","alpha":1.0})", &s) == SK_OK);

  Str arep;
  int pass = 0;
  REQUIRE(sk_sde_adjoint_residual(s, 1e-12, &arep.s, &pass) == SK_OK);
  CHECK(pass == 1);

  std::vector<double> z0 = {0.0};
  Str erep;
  REQUIRE(sk_sde_energy_bound(s, z0.data(), 1, 1.0, 400, 1e-3, 3, &erep.s, &pass) == SK_OK);
  CHECK(pass == 1);
  CHECK(json::parse(erep.s)["results"]["mean_H"].size() == 10);

  const char* fns[] = {"x^2", "1"};
  double refs[] = {1.0, 1.0};
  Str srep;
  REQUIRE(sk_sde_stationarity(s, fns, refs, 2, z0.data(), 1, 300000, -1, 2e-3, 1,
                              &srep.s, &pass) == SK_OK);
  CHECK(pass == 1);

  std::vector<double> zp = {0.1};
  Str orep;
  REQUIRE(sk_sde_kernel_overlap(s, z0.data(), zp.data(), 1, 1.0, 2000, 1e-2, 5,
                                &orep.s) == SK_OK);
  json oj = json::parse(orep.s);
  CHECK(oj["results"]["tv_estimate"].get<double>() < 1.0);

  sk_sde_free(s);
  sk_model_free(m);
}

TEST_CASE("steer through the C surface: success and failure shapes") {
  sk_model* slow = nullptr;
  REQUIRE(sk_model_builtin("slow", nullptr, &slow) == SK_OK);
  std::vector<double> z0 = {0.0, 0.0}, z1 = {0.0, 2.0};
  sk_control* u = nullptr;
  Str rep;
  int success = 0;
  REQUIRE(sk_steer(slow, R"({"family":"linear","alpha":0.3})", z0.data(), z1.data(), 2,
                   0.4, 2, 7, R"({"dt0":1e-3,"max_steps":200000,"max_attempts":10})",
                   &u, &rep.s, &success) == SK_OK);
  CHECK(success == 1);
  REQUIRE(u != nullptr);
  CHECK(sk_control_duration(u) >= 1.2);
  std::string csv = tmp_path("sk_capi_ctrl.csv");
  REQUIRE(sk_control_save_csv(u, csv.c_str()) == SK_OK);
  json j = json::parse(rep.s);
  CHECK(j["results"]["miss_distance"].get<double>() <= 0.4);
  sk_control_free(u);
  sk_model_free(slow);
  std::remove(csv.c_str());

  sk_model* trap = nullptr;
  REQUIRE(sk_model_builtin("trap", nullptr, &trap) == SK_OK);
  std::vector<double> t0 = {0.0, 3.0}, t1 = {0.0, 0.0};
  sk_control* u2 = nullptr;
  Str rep2;
  REQUIRE(sk_steer(trap, nullptr, t0.data(), t1.data(), 2, 0.25, 1, 3,
                   R"({"dt0":1e-2,"max_steps":20000,"max_attempts":4})", &u2, &rep2.s,
                   &success) == SK_OK);
  CHECK(success == 0);
  CHECK(u2 == nullptr);
  json j2 = json::parse(rep2.s);
  CHECK(j2["results"]["untempered"] == true);
  REQUIRE(j2["results"].contains("barrier_certificates"));
  for (auto& b : j2["results"]["barrier_certificates"]) CHECK(b["holds"] == true);
  sk_model_free(trap);
}

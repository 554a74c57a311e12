#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "models_zoo.hpp"
#include "oracle.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "sde.hpp"

using namespace sk;

namespace {

// 1D model: f = 0, H = x^2 / 2; with g = id the invariant law is N(0,1)
ModelSpec gauss1d() {
  ModelSpec m;
  m.name = "gauss1d";
  m.vars = {"x"};
  m.f = VectorField(1, {constant(0.0)});
  m.conserved = simplify(0.5 * variable(0) * variable(0));
  m.control_indices = {0};
  m.validate();
  return m;
}

ModelSpec const_h_model(double c) {
  ModelSpec m;
  m.name = "flat";
  m.vars = {"x"};
  m.f = VectorField(1, {constant(0.0)});
  m.conserved = constant(c);
  m.control_indices = {0};
  m.validate();
  return m;
}

}  // namespace

TEST_CASE("gfamily validation") {
  CHECK_THROWS_AS((void)build_sde(gauss1d(), GFamily::linear(0.0)), Error);
  CHECK_THROWS_AS((void)build_sde(gauss1d(), GFamily::linear(-1.0)), Error);
  GFamily lg = GFamily::logarithmic(2.0);
  lg.validate();
  const std::vector<std::string> hvar = {"h"};
  GFamily custom{GKind::Custom, 1.0, parse_expression("h + h^3", hvar)};
  custom.validate();
  GFamily bad{GKind::Custom, 1.0, parse_expression("h^2 - h", hvar)};  // g' < 0 near 0
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("1D gaussian drift and amplitude match the hand-derived forms") {
  SdeSystem s = build_sde(gauss1d(), GFamily::linear(1.0));
  std::vector<double> pt(1);
  for (double x : {-2.0, -0.5, 0.0, 0.7, 1.9}) {
    pt[0] = x;
    double drift = evaluate(s.drift()[0], pt);
    double amp = evaluate(s.amplitude(), pt);
    CHECK(drift == doctest::Approx(-3.0 * x * std::exp(-x * x)).epsilon(1e-14));
    CHECK(amp == doctest::Approx(std::sqrt(2.0) * std::exp(-x * x / 2.0)).epsilon(1e-14));
  }
  // growth condition: e^{-2g(H)} * H'' = e^{-x^2} <= C + x^2/2 with small C
  CHECK(s.growth().checked);
  CHECK(s.growth().constant <= 1.0);
}

TEST_CASE("slow model y-drift is exactly f_y") {
  ModelSpec m = build_slow();
  SdeSystem s = build_sde(m, GFamily::linear(0.5));
  CHECK(struct_equal(s.drift()[1], simplify(m.f.comps[1])));
  CHECK_FALSE(struct_equal(s.drift()[0], simplify(m.f.comps[0])));
}

TEST_CASE("sde build requires coordinate-aligned control subspace") {
  ModelSpec m = build_slow();
  m.control_indices.clear();
  m.control_basis = {{1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)}};
  CHECK_THROWS_WITH_AS((void)build_sde(m, GFamily::linear(1.0)),
                       doctest::Contains("coordinate"), Error);
}

TEST_CASE("sde build requires a conserved quantity unless untempered") {
  ModelSpec trap = build_trap();
  CHECK_THROWS_AS((void)build_sde(trap, GFamily::linear(1.0)), Error);
  SdeSystem s = build_sde(trap, GFamily::none());
  CHECK_FALSE(s.tempered());
  std::vector<double> pt = {0.3, 1.4};
  CHECK(evaluate(s.amplitude(), pt) == doctest::Approx(std::sqrt(2.0)));
  CHECK_THROWS_AS((void)s.invariant_unnormalized(), Error);
}

TEST_CASE("integrate is deterministic and replays bit-identically") {
  SdeSystem s = build_sde(build_slow(), GFamily::linear(1.0));
  std::vector<double> z0 = {0.1, -0.2};
  Trajectory a = integrate(s, z0, 1e-3, 5000, 99);
  Trajectory b = integrate(s, z0, 1e-3, 5000, 99);
  REQUIRE(a.states.size() == b.states.size());
  for (size_t i = 0; i < a.states.size(); ++i) CHECK(a.states[i] == b.states[i]);
  Trajectory c = integrate(s, z0, 1e-3, 5000, 100);
  bool same = true;
  for (size_t i = 0; i < a.states.size(); ++i)
    if (a.states[i] != c.states[i]) { same = false; break; }
  CHECK_FALSE(same);
}

TEST_CASE("constant-H model is a scaled random walk with the exact variance") {
  const double c = 0.3, alpha = 1.0;
  SdeSystem s = build_sde(const_h_model(c), GFamily::linear(alpha));
  const double dt = 0.01;
  const long long K = 100;
  const int paths = 10000;
  double sum2 = 0;
  for (int p = 0; p < paths; ++p) {
    Trajectory t = integrate(s, std::vector<double>{0.0}, dt, K, derive_seed(7, p),
                             {.record_noise = false, .record_energy = false});
    double xK = t.state(K)[0];
    sum2 += xK * xK;
  }
  double want = 2.0 * std::exp(-2.0 * alpha * c) * K * dt;  // exact discrete law
  CHECK(sum2 / paths == doctest::Approx(want).epsilon(0.05));
}

TEST_CASE("zero-noise override reduces to the drift ODE at first order") {
  SdeSystem s = build_sde(build_slow(), GFamily::linear(1.0));
  std::vector<double> z0 = {0.4, 0.1};
  const double T = 1.0;
  // reference: fine RK4 on the drift (test-side oracle)
  auto drift_ref = [&](std::vector<double> z, double dt, long long steps) {
    std::vector<double> k1(2), k2(2), k3(2), k4(2), tmp(2), scratch;
    const CompiledField& f = s.drift_field();
    for (long long st = 0; st < steps; ++st) {
      f.eval(z, k1, scratch);
      for (int i = 0; i < 2; ++i) tmp[i] = z[i] + 0.5 * dt * k1[i];
      f.eval(tmp, k2, scratch);
      for (int i = 0; i < 2; ++i) tmp[i] = z[i] + 0.5 * dt * k2[i];
      f.eval(tmp, k3, scratch);
      for (int i = 0; i < 2; ++i) tmp[i] = z[i] + dt * k3[i];
      f.eval(tmp, k4, scratch);
      for (int i = 0; i < 2; ++i) z[i] += dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }
    return z;
  };
  auto ref = drift_ref(z0, 1e-4, 10000);
  IntegrateOptions opts;
  opts.zero_noise = true;
  auto err_at = [&](double dt) {
    Trajectory t = integrate(s, z0, dt, static_cast<long long>(T / dt), 1, opts);
    auto zT = t.state(t.steps());
    return std::hypot(zT[0] - ref[0], zT[1] - ref[1]);
  };
  double e1 = err_at(2e-3);
  double e2 = err_at(1e-3);
  CHECK(e1 / e2 == doctest::Approx(2.0).epsilon(0.25));  // first-order convergence
}

TEST_CASE("noise locality: updates off the control block are drift only") {
  SdeSystem s = build_sde(build_slow(), GFamily::linear(1.0));
  std::vector<double> z0 = {0.2, -0.4};
  Trajectory t = integrate(s, z0, 1e-3, 2000, 5);
  std::vector<double> dz(2), scratch;
  for (long long k = 0; k < t.steps(); ++k) {
    auto zk = t.state(k);
    auto zk1 = t.state(k + 1);
    s.drift_field().eval(zk, dz, scratch);
    double resid_y = zk1[1] - zk[1] - 1e-3 * dz[1];
    CHECK(std::abs(resid_y) <= 1e-15);
  }
}

TEST_CASE("blow-up is reported with a step index") {
  // huge dt on the slow model sends the drift correction far out
  ModelSpec m = gauss1d();
  SdeSystem s = build_sde(m, GFamily::linear(1.0));
  try {
    // absurd initial condition: amplitude is ~0 but the drift pushes inward;
    // use a custom blowup threshold to trip deterministically
    IntegrateOptions opts;
    opts.blowup_threshold = 1e-1;
    (void)integrate(s, std::vector<double>{0.0}, 10.0, 100, 3, opts);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code == ErrorCode::Numeric);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("trajectory csv and noise sidecar round-trip") {
  SdeSystem s = build_sde(build_slow(), GFamily::linear(1.0));
  Trajectory t = integrate(s, std::vector<double>{0.3, 0.0}, 1e-2, 200, 21);
  auto dir = std::filesystem::temp_directory_path();
  std::string csv = (dir / "sk_test_traj.csv").string();
  std::string noz = (dir / "sk_test_traj.noise").string();
  save_trajectory_csv(t, csv);
  save_noise_record(t, noz);

  Trajectory back = load_trajectory_csv(csv);
  REQUIRE(back.dim == 2);
  REQUIRE(back.steps() == t.steps());
  CHECK(back.vars == t.vars);
  for (size_t i = 0; i < t.states.size(); ++i)
    CHECK(back.states[i] == t.states[i]);  // %.17g round-trips doubles exactly
  CHECK(back.energy.size() == t.energy.size());

  NoiseRecord nr = load_noise_record(noz);
  CHECK(nr.seed == t.noise.seed);
  CHECK(nr.noise_dim == t.noise.noise_dim);
  CHECK(nr.dt == t.noise.dt);
  REQUIRE(nr.increments.size() == t.noise.increments.size());
  for (size_t i = 0; i < nr.increments.size(); ++i)
    CHECK(nr.increments[i] == t.noise.increments[i]);
  std::remove(csv.c_str());
  std::remove(noz.c_str());
}

TEST_CASE("increments have per-step variance dt") {
  SdeSystem s = build_sde(const_h_model(0.0), GFamily::linear(1.0));
  const double dt = 4e-3;
  Trajectory t = integrate(s, std::vector<double>{0.0}, dt, 50000, 77);
  double mean = 0, var = 0;
  for (double v : t.noise.increments) mean += v;
  mean /= t.noise.increments.size();
  for (double v : t.noise.increments) var += (v - mean) * (v - mean);
  var /= (t.noise.increments.size() - 1);
  CHECK(std::abs(mean) <= 1e-3);  // ~3.5 sigma for 5e4 N(0, dt) samples
  CHECK(var == doctest::Approx(dt).epsilon(0.02));
}

TEST_CASE("energy bound holds for the flat and gaussian models") {
  SdeSystem flat = build_sde(const_h_model(0.5), GFamily::linear(1.0));
  EnergyBoundReport r1 =
      energy_bound_check(flat, std::vector<double>{0.0}, 1.0, 200, 1e-2, 11);
  CHECK(r1.pass);  // H is literally constant along paths

  SdeSystem g = build_sde(gauss1d(), GFamily::linear(1.0));
  EnergyBoundReport r2 =
      energy_bound_check(g, std::vector<double>{0.0}, 1.0, 1000, 1e-3, 12);
  CHECK(r2.pass);
  CHECK(r2.mean_H.back() < 1.0);  // stationary E H = 1/2; far under e^t
}

TEST_CASE("energy bound holds for the slow model out to t = 2") {
  SdeSystem s = build_sde(build_slow(), GFamily::linear(1.0));
  EnergyBoundReport r =
      energy_bound_check(s, std::vector<double>{0.0, 0.0}, 2.0, 1000, 1e-3, 13);
  CHECK(r.pass);
  CHECK(r.H0 == doctest::Approx(1.0));
}

TEST_CASE("weak error is first order: Richardson extrapolation of E x^2") {
  // paths start from the known stationary law, so the ensemble of time
  // averages is unbiased up to the discretization error being measured
  SdeSystem s = build_sde(gauss1d(), GFamily::linear(1.0));
  const double T = 600.0;
  const int paths = 256;
  auto estimate = [&](double dt) {
    std::vector<double> avg(paths);
    parallel_for(paths, [&](size_t p) {
      GaussianRng init(derive_seed(4321, p));
      std::vector<double> x0 = {init.normal()};
      long long steps = static_cast<long long>(T / dt);
      Trajectory t = integrate(s, x0, dt, steps, derive_seed(1234, p),
                               {.record_noise = false, .record_energy = false});
      long long burn = steps / 10;
      double acc = 0;
      for (long long k = burn; k <= steps; ++k) acc += t.state(k)[0] * t.state(k)[0];
      avg[p] = acc / (steps - burn + 1);
    });
    double m = 0;
    for (double v : avg) m += v;
    return m / paths;
  };
  double e_coarse = estimate(0.02);
  double e_fine = estimate(0.01);
  double extrap = 2.0 * e_fine - e_coarse;
  CHECK(std::abs(extrap - 1.0) <= 0.02);
}

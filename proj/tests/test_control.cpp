#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "control.hpp"
#include "models_zoo.hpp"
#include "oracle.hpp"
#include "rng.hpp"

using namespace sk;

namespace {

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

double dist2(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("hitting: start inside the target returns immediately") {
  SdeSystem s = build_sde(gauss1d(), GFamily::linear(1.0));
  TargetSet target{{0.1}, 0.5};
  HittingResult r = find_hitting_path(s, std::vector<double>{0.0}, target, 1e-3, 1000, 4, 9);
  CHECK(r.hit);
  CHECK(r.hit_time == 0.0);
  CHECK(r.trajectory.steps() == 0);
}

TEST_CASE("hitting: the 1D gaussian reaches 1.5 +- 0.25 with probability one") {
  SdeSystem s = build_sde(gauss1d(), GFamily::linear(1.0));
  TargetSet target{{1.5}, 0.25};
  int hits = 0;
  double total_T = 0;
  for (int trial = 0; trial < 200; ++trial) {
    HittingResult r = find_hitting_path(s, std::vector<double>{0.0}, target, 1e-3,
                                        400000, 1, derive_seed(1000, trial));
    if (r.hit) {
      ++hits;
      total_T += r.hit_time;
      CHECK(dist2(r.trajectory.state(r.trajectory.steps()), target.center) <= 0.25);
    }
  }
  CHECK(hits == 200);
  double mean_T = total_T / hits;
  CHECK(mean_T > 0.0);
  CHECK(mean_T < 400.0);
}

TEST_CASE("hitting result is deterministic and the winner is the lowest index") {
  SdeSystem s = build_sde(gauss1d(), GFamily::linear(1.0));
  TargetSet target{{1.2}, 0.2};
  HittingResult a = find_hitting_path(s, std::vector<double>{0.0}, target, 1e-3, 50000, 8, 77);
  HittingResult b = find_hitting_path(s, std::vector<double>{0.0}, target, 1e-3, 50000, 8, 77);
  CHECK(a.hit == b.hit);
  CHECK(a.attempt_index == b.attempt_index);
  CHECK(a.hit_step == b.hit_step);
  if (a.hit)
    for (size_t i = 0; i < a.trajectory.states.size(); ++i)
      CHECK(a.trajectory.states[i] == b.trajectory.states[i]);
}

TEST_CASE("slow-model hits into B((0,5), 0.25) take at least T = 4.75") {
  // |dH/dx| <= 1 bounds |dy/dt|, so reaching y ~ 4.75 needs that much time
  SdeSystem s = build_sde(build_slow(), GFamily::linear(0.15));
  TargetSet target{{0.0, 5.0}, 0.25};
  HittingResult r = find_hitting_path(s, std::vector<double>{0.0, 0.0}, target, 1e-3,
                                      300000, 8, 20250807);
  REQUIRE(r.hit);
  CHECK(r.hit_time >= 4.75);
  auto zT = r.trajectory.state(r.trajectory.steps());
  CHECK(dist2(zT, target.center) <= 0.25);
}

TEST_CASE("halving the SDE step reduces the median replay miss") {
  // Wiener coupling: the coarse run consumes the summed fine increments, so
  // both discretize the same driving path and the terminal gap between the
  // discrete trajectory and its RK4 replay isolates the O(dt) error
  ModelSpec m = build_slow();
  SdeSystem s = build_sde(m, GFamily::linear(0.3));
  std::vector<double> z0 = {0.0, 0.0};
  const double dt_f = 1e-3, dt_c = 2e-3;
  const long long steps_f = 20000;  // T = 20

  auto gap_of = [&](const Trajectory& traj) {
    ControlSignal u = extract_control(m, traj);
    auto em = traj.state(traj.steps());
    TargetSet anywhere{std::vector<double>(em.begin(), em.end()), 1e9};
    VerifyReport v = verify_control(m, z0, u, anywhere, traj.dt / 4);
    return std::hypot(v.terminal[0] - em[0], v.terminal[1] - em[1]);
  };

  std::vector<double> ratios;
  for (uint64_t trial = 0; trial < 9; ++trial) {
    Trajectory fine = integrate(s, z0, dt_f, steps_f, derive_seed(900, trial));

    // rebuild the coarse path through the library's own field evaluators
    Trajectory coarse;
    coarse.dim = 2;
    coarse.dt = dt_c;
    coarse.vars = m.vars;
    std::vector<double> z = z0;
    coarse.states = z;
    std::vector<double> dz(2), scratch;
    for (long long k = 0; k < steps_f / 2; ++k) {
      s.drift_field().eval(z, dz, scratch);
      double a0 = s.amplitude_field().eval1(z);
      double dw = fine.noise.increments[2 * k] + fine.noise.increments[2 * k + 1];
      z[0] += dt_c * dz[0] + a0 * dw;
      z[1] += dt_c * dz[1];
      coarse.states.insert(coarse.states.end(), z.begin(), z.end());
    }
    double gf = gap_of(fine);
    double gc = gap_of(coarse);
    if (gf > 1e-12) ratios.push_back(gc / gf);
  }
  REQUIRE(ratios.size() >= 7);
  std::sort(ratios.begin(), ratios.end());
  double median_ratio = ratios[ratios.size() / 2];
  CHECK(median_ratio > 1.3);  // consistent with first-order shrinkage
}

TEST_CASE("radius warning fires when the target is below mesh scale") {
  SdeSystem s = build_sde(gauss1d(), GFamily::linear(1.0));
  TargetSet tiny{{1.5}, 1e-4};
  HittingResult r = find_hitting_path(s, std::vector<double>{0.0}, tiny, 1e-2, 10, 1, 3);
  CHECK(r.radius_warning);
}

TEST_CASE("extract/replay identity on the slow model") {
  ModelSpec m = build_slow();
  SdeSystem s = build_sde(m, GFamily::linear(0.5));
  Trajectory traj = integrate(s, std::vector<double>{0.2, -0.1}, 1e-3, 4000, 13);
  ControlSignal u = extract_control(m, traj);
  CHECK(u.steps() == 4000);
  CHECK(u.e_indices == std::vector<int>{0});
  auto replay = replay_forward_euler(m, traj.state(0), u);
  double worst = 0;
  for (long long k = 0; k <= traj.steps(); ++k)
    for (int i = 0; i < 2; ++i)
      worst = std::max(worst,
                       std::abs(replay[k * 2 + i] - traj.states[k * 2 + i]));
  CHECK(worst <= 1e-12);
}

TEST_CASE("extract/replay identity across every zoo model with an H") {
  struct Case {
    ModelSpec m;
    std::vector<double> z0;
  };
  std::vector<Case> cases;
  cases.push_back({build_harmonic_pair(), {0.3, -0.2, 0.5, 0.1}});
  cases.push_back({build_slow(), {0.0, 0.0}});
  {
    ModelSpec e = build_euler_galerkin(1);
    GaussianRng rng(8);
    cases.push_back({e, rng.normal_vector(e.dim(), 0.3)});
  }
  cases.push_back({build_chain(ChainSpec{}).model, {0.4, -0.3, 0.2, -0.1}});

  for (auto& [m, z0] : cases) {
    SdeSystem s = build_sde(m, GFamily::linear(0.5));
    Trajectory traj = integrate(s, z0, 1e-3, 2000, 17);
    ControlSignal u = extract_control(m, traj);
    auto replay = replay_forward_euler(m, traj.state(0), u);
    double worst = 0;
    for (size_t i = 0; i < traj.states.size(); ++i)
      worst = std::max(worst, std::abs(replay[i] - traj.states[i]));
    INFO("model ", m.name);
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("controls live in the E-block only and y follows f_y") {
  ModelSpec m = build_chain(ChainSpec{}).model;
  SdeSystem s = build_sde(m, GFamily::linear(1.0));
  Trajectory traj = integrate(s, std::vector<double>{0.1, 0.2, 0.0, 0.0}, 1e-3, 500, 23);
  ControlSignal u = extract_control(m, traj);
  CHECK(u.e_indices == m.control_indices);
  // replayed uncontrolled coordinates move by dt*f alone
  auto replay = replay_forward_euler(m, traj.state(0), u);
  std::vector<Expr> fs;
  for (const auto& c : m.f.comps) fs.push_back(simplify(c));
  CompiledField f(fs, m.dim());
  std::vector<double> dz(m.dim()), scratch;
  for (long long k = 0; k < u.steps(); ++k) {
    std::span<const double> zk(replay.data() + k * m.dim(), m.dim());
    f.eval(zk, dz, scratch);
    for (int i : {0, 1}) {  // q1, p1 are not controlled
      double expect = zk[i] + 1e-3 * dz[i];
      CHECK(replay[(k + 1) * m.dim() + i] == expect);
    }
  }
}

TEST_CASE("zero-noise control extraction is exactly zero when grad_x H = 0") {
  // H depends only on the uncontrolled coordinate: drift_x == f_x
  ModelSpec m;
  m.name = "decoupled";
  m.vars = {"x", "y"};
  m.f = VectorField(2, {constant(1.0), constant(0.0)});
  m.conserved = simplify(0.5 * variable(1) * variable(1));
  m.control_indices = {0};
  m.validate();
  SdeSystem s = build_sde(m, GFamily::linear(1.0));
  IntegrateOptions opts;
  opts.zero_noise = true;
  Trajectory traj = integrate(s, std::vector<double>{0.0, 1.0}, 1e-2, 100, 1, opts);
  ControlSignal u = extract_control(m, traj);
  for (double v : u.values) CHECK(v == 0.0);
}

TEST_CASE("verify_control: zero control on a zero field stays put") {
  ModelSpec m = gauss1d();
  ControlSignal u;
  u.dt = 1e-2;
  u.e_indices = {0};
  u.e_names = {"x"};
  u.values.assign(50, 0.0);
  TargetSet t{{0.0}, 0.1};
  VerifyReport rep = verify_control(m, std::vector<double>{0.0}, u, t, 1e-3);
  CHECK(rep.hit);
  CHECK(rep.terminal[0] == 0.0);
  CHECK(rep.duration == doctest::Approx(0.5));
}

TEST_CASE("verify_control rejects a coarser ode mesh") {
  ModelSpec m = gauss1d();
  ControlSignal u;
  u.dt = 1e-3;
  u.e_indices = {0};
  u.e_names = {"x"};
  u.values.assign(10, 0.0);
  TargetSet t{{0.0}, 0.1};
  CHECK_THROWS_AS((void)verify_control(m, std::vector<double>{0.0}, u, t, 1e-2), Error);
}

TEST_CASE("steer: trivial when the start is already at the goal") {
  ModelSpec m = build_slow();
  std::vector<double> z = {0.4, -0.2};
  SteerReport rep = steer(m, GFamily::linear(1.0), z, z, 0.5, 1, 42);
  CHECK(rep.success);
  CHECK(rep.control.steps() == 0);
  CHECK(rep.verify.duration == 0.0);
}

TEST_CASE("steer: slow model short hop succeeds and obeys the speed limit") {
  ModelSpec m = build_slow();
  std::vector<double> z0 = {0.0, 0.0}, z1 = {0.0, 2.0};
  const double eps = 0.4;
  SteerOptions opts;
  opts.dt0 = 1e-3;
  opts.max_steps = 200000;
  opts.max_attempts = 10;
  GFamily g = GFamily::linear(0.3);
  SteerReport rep = steer(m, g, z0, z1, eps, 2, 7, opts);
  REQUIRE(rep.success);
  CHECK(rep.verify.hit);
  CHECK(rep.verify.miss_distance <= eps);
  // |y1 - y0| - 2 eps lower bound from |dH/dx| <= 1
  CHECK(rep.control.duration() >= 2.0 - 2 * eps);
  CHECK_FALSE(rep.rank_warning);
  CHECK_FALSE(rep.untempered);
}

TEST_CASE("steer: the trap refuses to cross and emits its certificate") {
  ModelSpec m = build_trap();
  std::vector<double> z0 = {0.0, 3.0}, z1 = {0.0, 0.0};
  SteerOptions opts;
  opts.dt0 = 1e-2;
  opts.max_steps = 30000;
  opts.max_attempts = 6;
  SteerReport rep = steer(m, GFamily::linear(1.0), z0, z1, 0.25, 2, 3, opts);
  CHECK_FALSE(rep.success);
  CHECK(rep.untempered);
  CHECK_FALSE(rep.rank_warning);  // hypoellipticity holds; that is the point
  REQUIRE(rep.barriers.size() == 2);
  CHECK(rep.barriers[0].holds);
  CHECK(rep.barriers[1].holds);
  CHECK(rep.closest >= 0.75);  // y cannot get below ~1
}

TEST_CASE("mollified control stays within the coarse control's range") {
  ControlSignal u;
  u.dt = 0.1;
  u.e_indices = {0};
  u.e_names = {"x"};
  u.values = {1.0, 1.0, -2.0, 0.5, 1.5, 1.5, 0.0, -1.0};
  ControlSignal smooth = mollify_control(u);
  CHECK(smooth.steps() == u.steps() * 4);
  double lo = *std::min_element(u.values.begin(), u.values.end());
  double hi = *std::max_element(u.values.begin(), u.values.end());
  for (double v : smooth.values) {
    CHECK(v >= lo - 1e-12);
    CHECK(v <= hi + 1e-12);
  }
  // constant controls are preserved exactly up to quadrature normalization
  ControlSignal c;
  c.dt = 0.1;
  c.e_indices = {0};
  c.e_names = {"x"};
  c.values.assign(20, 3.25);
  ControlSignal cs = mollify_control(c);
  for (long long k = 4; k < cs.steps() - 4; ++k)
    CHECK(cs.values[k] == doctest::Approx(3.25).epsilon(1e-12));
}

TEST_CASE("control csv round-trip") {
  ControlSignal u;
  u.t0 = 0.0;
  u.dt = 0.25;
  u.e_indices = {0, 1};
  u.e_names = {"r1", "r2"};
  u.values = {0.5, -1.25, 3.0, 0.0, -0.125, 2.5};
  auto path = (std::filesystem::temp_directory_path() / "sk_test_ctrl.csv").string();
  save_control_csv(u, path);
  ControlSignal back = load_control_csv(path);
  CHECK(back.e_names == u.e_names);
  CHECK(back.dt == u.dt);
  REQUIRE(back.values.size() == u.values.size());
  for (size_t i = 0; i < u.values.size(); ++i) CHECK(back.values[i] == u.values[i]);
  std::remove(path.c_str());
}

#include "models_zoo.hpp"

#include <algorithm>
#include <cmath>

namespace sk {

namespace {
Expr V(int i) { return variable(i); }
}

ModelSpec build_harmonic_pair() {
  ModelSpec m;
  m.name = "harmonic-pair";
  m.vars = {"q1", "q2", "p1", "p2"};
  Expr H = simplify((V(2) * V(2) + V(3) * V(3)) / 2.0 + (V(0) * V(0) + V(1) * V(1)) / 2.0);
  // Hamiltonian field: q' = dH/dp, p' = -dH/dq
  std::vector<Expr> f = {
      simplify(differentiate(H, 2)),
      simplify(differentiate(H, 3)),
      simplify(neg(differentiate(H, 0))),
      simplify(neg(differentiate(H, 1))),
  };
  m.f = VectorField(4, std::move(f));
  m.conserved = H;
  m.control_indices = {2};  // p1
  m.validate();
  return m;
}

ModelSpec build_trap() {
  ModelSpec m;
  m.name = "trap";
  m.vars = {"x", "y"};
  m.f = VectorField(2, {simplify(neg(V(0))),
                        simplify(gsat(V(1) + gsat(V(0))) - V(1) * bump(V(1)))});
  m.control_indices = {0};
  m.barriers.push_back({1, 1.0, 2.0, +1, -10.0, 10.0});
  m.barriers.push_back({1, -2.0, -1.0, -1, -10.0, 10.0});
  m.validate();
  return m;
}

ModelSpec build_slow() {
  ModelSpec m;
  m.name = "slow";
  m.vars = {"x", "y"};
  Expr H = sqrt_e(1.0 + V(0) * V(0) + V(1) * V(1));
  m.f = VectorField(2, {simplify(neg(differentiate(H, 1))), simplify(differentiate(H, 0))});
  m.conserved = H;
  m.control_indices = {0};
  m.validate();
  return m;
}

// --- Galerkin Euler ---------------------------------------------------------------------

namespace {

bool retained(const std::array<int, 3>& k, int nstar) {
  if (k[0] == 0 && k[1] == 0 && k[2] == 0) return false;
  return std::abs(k[0]) <= nstar && std::abs(k[1]) <= nstar && std::abs(k[2]) <= nstar;
}

bool is_representative(const std::array<int, 3>& k) {
  if (k[0] != 0) return k[0] > 0;
  if (k[1] != 0) return k[1] > 0;
  return k[2] > 0;
}

std::array<double, 3> normalize3(std::array<double, 3> v) {
  double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

// Gram-Schmidt on the two coordinate axes least aligned with k, ties by index.
std::array<std::array<double, 3>, 2> perp_basis(const std::array<int, 3>& k) {
  std::array<double, 3> kd = {double(k[0]), double(k[1]), double(k[2])};
  std::array<double, 3> khat = normalize3(kd);
  std::array<int, 3> order = {0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    double aa = std::abs(kd[a]), ab = std::abs(kd[b]);
    if (aa != ab) return aa < ab;
    return a < b;
  });
  auto axis = [](int i) {
    std::array<double, 3> e = {0, 0, 0};
    e[i] = 1.0;
    return e;
  };
  std::array<double, 3> a = axis(order[0]);
  double ak = dot3(a, khat);
  for (int i = 0; i < 3; ++i) a[i] -= ak * khat[i];
  a = normalize3(a);
  std::array<double, 3> b = axis(order[1]);
  double bk = dot3(b, khat), ba = dot3(b, a);
  for (int i = 0; i < 3; ++i) b[i] -= bk * khat[i] + ba * a[i];
  b = normalize3(b);
  return {a, b};
}

}  // namespace

EulerTruncation EulerTruncation::build(int nstar) {
  if (nstar < 1) throw Error(ErrorCode::Invalid, "euler truncation needs nstar >= 1");
  EulerTruncation tr;
  tr.nstar = nstar;
  for (int kx = -nstar; kx <= nstar; ++kx)
    for (int ky = -nstar; ky <= nstar; ++ky)
      for (int kz = -nstar; kz <= nstar; ++kz) {
        std::array<int, 3> k = {kx, ky, kz};
        if (!retained(k, nstar) || !is_representative(k)) continue;
        tr.reps.push_back({k, perp_basis(k)});
      }
  return tr;
}

ModelSpec build_euler_galerkin(int nstar, std::vector<int> control_reps) {
  EulerTruncation tr = EulerTruncation::build(nstar);
  const int modes = static_cast<int>(tr.reps.size());
  const int N = 4 * modes;

  // index of representative with wavevector k (or -k); sign = +1/-1
  auto find_mode = [&](const std::array<int, 3>& k) -> std::pair<int, int> {
    for (int m = 0; m < modes; ++m) {
      const auto& r = tr.reps[m].k;
      if (r == k) return {m, +1};
      if (r[0] == -k[0] && r[1] == -k[1] && r[2] == -k[2]) return {m, -1};
    }
    return {-1, 0};
  };

  // coordinates per mode m: re_1, re_2, im_1, im_2 at 4m .. 4m+3
  auto re_var = [&](int m, int c) { return V(4 * m + c); };
  auto im_var = [&](int m, int c) { return V(4 * m + 2 + c); };

  ModelSpec model;
  model.name = "euler-galerkin-" + std::to_string(nstar);
  for (int m = 0; m < modes; ++m) {
    std::string suffix = std::to_string(m);
    model.vars.push_back("re" + suffix + "_1");
    model.vars.push_back("re" + suffix + "_2");
    model.vars.push_back("im" + suffix + "_1");
    model.vars.push_back("im" + suffix + "_2");
  }

  // complex linear form c_re + i c_im given by coefficients against (re, im) coords
  struct CForm {
    Expr re, im;
  };
  constexpr double kDropTol = 1e-13;

  // dot of u_h (h = sign * rep[m]) with a real 3-vector w
  auto mode_dot = [&](int m, int sign, const std::array<double, 3>& w) -> CForm {
    std::vector<Expr> re_terms, im_terms;
    for (int c = 0; c < 2; ++c) {
      double coeff = dot3(tr.reps[m].basis[c], w);
      if (std::abs(coeff) < kDropTol) continue;
      re_terms.push_back(constant(coeff) * re_var(m, c));
      im_terms.push_back(constant(sign > 0 ? coeff : -coeff) * im_var(m, c));
    }
    return {simplify(sum(std::move(re_terms))), simplify(sum(std::move(im_terms)))};
  };

  std::vector<std::vector<Expr>> comp_terms(N);
  for (int m = 0; m < modes; ++m) {
    const auto& k = tr.reps[m].k;
    std::array<double, 3> kd = {double(k[0]), double(k[1]), double(k[2])};
    // enumerate h + l = k over retained modes
    for (int hx = -nstar; hx <= nstar; ++hx)
      for (int hy = -nstar; hy <= nstar; ++hy)
        for (int hz = -nstar; hz <= nstar; ++hz) {
          std::array<int, 3> h = {hx, hy, hz};
          if (!retained(h, nstar)) continue;
          std::array<int, 3> l = {k[0] - hx, k[1] - hy, k[2] - hz};
          if (!retained(l, nstar)) continue;
          auto [hm, hs] = find_mode(h);
          auto [lm, ls] = find_mode(l);
          CForm S = mode_dot(hm, hs, kd);  // k . u_h
          if (S.re.is_const(0.0) && S.im.is_const(0.0)) continue;
          for (int c = 0; c < 2; ++c) {
            // (u_l . b_c(k)); the pressure projection drops against b_c since
            // b_c is orthogonal to k (basis orthogonality holds to ~1e-16)
            CForm W = mode_dot(lm, ls, tr.reps[m].basis[c]);
            if (W.re.is_const(0.0) && W.im.is_const(0.0)) continue;
            // -i S W: re = S_re W_im + S_im W_re, im = S_im W_im - S_re W_re
            comp_terms[4 * m + c].push_back(S.re * W.im + S.im * W.re);
            comp_terms[4 * m + 2 + c].push_back(S.im * W.im - S.re * W.re);
          }
        }
  }
  std::vector<Expr> f;
  f.reserve(N);
  for (int i = 0; i < N; ++i) f.push_back(simplify(sum(std::move(comp_terms[i]))));
  model.f = VectorField(N, std::move(f));

  // H = sum over all retained k of |u_k|^2 = 2 sum over representatives
  std::vector<Expr> h_terms;
  for (int m = 0; m < modes; ++m)
    for (int c = 0; c < 2; ++c) {
      h_terms.push_back(constant(2.0) * re_var(m, c) * re_var(m, c));
      h_terms.push_back(constant(2.0) * im_var(m, c) * im_var(m, c));
    }
  model.conserved = simplify(sum(std::move(h_terms)));

  for (int r : control_reps) {
    if (r < 0 || r >= modes)
      throw Error(ErrorCode::Invalid, "control representative index out of range");
    for (int j = 0; j < 4; ++j) model.control_indices.push_back(4 * r + j);
  }
  std::sort(model.control_indices.begin(), model.control_indices.end());
  model.validate();
  return model;
}

// --- heat-bath chain ---------------------------------------------------------------------

ChainBuild build_chain(const ChainSpec& spec) {
  const int N = spec.oscillators;
  const int M = static_cast<int>(spec.couplings.size());
  if (N < 1) throw Error(ErrorCode::Invalid, "chain needs at least one oscillator");
  if (M < 1) throw Error(ErrorCode::Invalid, "chain needs at least one bath");
  if (static_cast<int>(spec.gamma.size()) != M ||
      static_cast<int>(spec.lambda.size()) != M ||
      static_cast<int>(spec.temperature.size()) != M)
    throw Error(ErrorCode::Invalid, "chain constants must have one entry per bath");
  for (int i = 0; i < M; ++i) {
    if (!(spec.gamma[i] > 0)) throw Error(ErrorCode::Invalid, "gamma must be positive");
    if (spec.lambda[i] == 0) throw Error(ErrorCode::Invalid, "lambda must be nonzero");
    if (!(spec.temperature[i] > 0))
      throw Error(ErrorCode::Invalid, "temperature must be positive");
  }

  ModelSpec model;
  model.name = "chain";
  for (int j = 1; j <= N; ++j) model.vars.push_back("q" + std::to_string(j));
  for (int j = 1; j <= N; ++j) model.vars.push_back("p" + std::to_string(j));
  for (int i = 1; i <= M; ++i) model.vars.push_back("r" + std::to_string(i));
  const int dim = 2 * N + M;
  auto qi = [&](int j) { return j; };
  auto pi = [&](int j) { return N + j; };
  auto ri = [&](int i) { return 2 * N + i; };

  Expr HS = parse_expression(spec.hs, model.vars);
  std::vector<Expr> F;
  for (const auto& c : spec.couplings) F.push_back(parse_expression(c, model.vars));

  std::vector<Expr> f(dim, constant(0.0));
  for (int j = 0; j < N; ++j) {
    std::vector<Expr> qdot = {differentiate(HS, pi(j))};
    std::vector<Expr> pdot = {neg(differentiate(HS, qi(j)))};
    for (int i = 0; i < M; ++i) {
      qdot.push_back(neg(differentiate(F[i], pi(j)) * V(ri(i))));
      pdot.push_back(differentiate(F[i], qi(j)) * V(ri(i)));
    }
    f[qi(j)] = simplify(sum(std::move(qdot)));
    f[pi(j)] = simplify(sum(std::move(pdot)));
  }
  model.f = VectorField(dim, std::move(f));

  std::vector<Expr> h_terms = {HS};
  for (int i = 0; i < M; ++i) {
    h_terms.push_back(V(ri(i)) * V(ri(i)) / (2.0 * spec.lambda[i] * spec.lambda[i]));
    h_terms.push_back(neg(V(ri(i)) * F[i]));
  }
  model.conserved = simplify(sum(std::move(h_terms)));
  for (int i = 0; i < M; ++i) model.control_indices.push_back(ri(i));
  model.validate();

  // the literal heat-bath SDE: same (q, p) drift, OU-type r dynamics
  DiffusionSystem sde;
  sde.dim = dim;
  sde.vars = model.vars;
  sde.drift = model.f.comps;
  sde.sigma.assign(dim, constant(0.0));
  for (int i = 0; i < M; ++i) {
    sde.drift[ri(i)] = simplify(constant(-spec.gamma[i]) * V(ri(i)) +
                                constant(spec.gamma[i] * spec.lambda[i] * spec.lambda[i]) *
                                    F[i]);
    sde.sigma[ri(i)] = constant(std::sqrt(2.0 * spec.gamma[i] * spec.temperature[i]));
  }
  return {std::move(model), std::move(sde)};
}

std::vector<std::string> zoo_names() {
  return {"harmonic-pair", "trap", "slow", "euler", "chain"};
}

}  // namespace sk

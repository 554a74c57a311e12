#include "measure.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "parallel.hpp"
#include "rng.hpp"

namespace sk {

namespace {

// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration on P_n.
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * t * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (t * p0 - p1) / (t * t - 1.0);
      double dt_step = p0 / pp;
      t -= dt_step;
      if (std::abs(dt_step) < 1e-15) break;
    }
    x[i] = -t;
    x[n - 1 - i] = t;
    w[i] = 2.0 / ((1.0 - t * t) * pp * pp);
    w[n - 1 - i] = w[i];
  }
}

// tensor quadrature of several integrands over [-R, R]^dim
std::vector<double> box_quadrature(const CompiledField& f, int dim, double R, int nodes) {
  std::vector<double> x, w;
  gauss_legendre(nodes, x, w);
  std::vector<double> acc(f.dim(), 0.0);
  std::vector<double> pt(dim), out(f.dim()), scratch;
  std::vector<int> idx(dim, 0);
  for (;;) {
    double weight = 1.0;
    for (int d = 0; d < dim; ++d) {
      pt[d] = R * x[idx[d]];
      weight *= R * w[idx[d]];
    }
    f.eval(pt, out, scratch);
    for (int c = 0; c < f.dim(); ++c) acc[c] += weight * out[c];
    int d = 0;
    while (d < dim && ++idx[d] == nodes) idx[d++] = 0;
    if (d == dim) break;
  }
  return acc;
}

double pick_box_radius(const CompiledField& density, int dim, uint64_t seed = 911) {
  std::vector<double> origin(dim, 0.0);
  double center = density.eval1(origin);
  GaussianRng rng(seed);
  std::vector<std::vector<double>> dirs(64);
  for (auto& d : dirs) {
    d = rng.normal_vector(dim);
    double n = 0;
    for (double v : d) n += v * v;
    n = std::sqrt(n);
    for (double& v : d) v /= (n == 0 ? 1 : n);
  }
  std::vector<double> pt(dim);
  for (double R = 2.0; R <= (1 << 22); R *= 2.0) {
    double worst = 0;
    for (const auto& d : dirs) {
      for (int i = 0; i < dim; ++i) pt[i] = R * d[i];
      worst = std::max(worst, density.eval1(pt));
    }
    if (worst <= 1e-14 * center) return R;
  }
  throw Error(ErrorCode::Numeric, "could not find a truncation box: density decays too slowly");
}

}  // namespace

InvariantDensity invariant_density(const SdeSystem& s, int nodes) {
  InvariantDensity d;
  d.unnormalized = s.invariant_unnormalized();
  const int dim = s.model().dim();
  if (dim > 3) return d;  // no Z in high dimension; ratio tests only
  CompiledField f(std::vector<Expr>{d.unnormalized}, dim);
  d.box_radius = pick_box_radius(f, dim);
  double z1 = box_quadrature(f, dim, d.box_radius, nodes)[0];
  double z2 = box_quadrature(f, dim, d.box_radius, 2 * nodes)[0];
  d.normalization = z2;
  d.z_error = std::abs(z2 - z1);
  return d;
}

double density_expectation(const SdeSystem& s, const Expr& fn, int nodes) {
  const int dim = s.model().dim();
  if (dim > 3)
    throw Error(ErrorCode::Invalid, "quadrature references limited to dimension <= 3");
  Expr rho = s.invariant_unnormalized();
  std::vector<Expr> comps = {simplify(fn * rho), rho};
  CompiledField f(comps, dim);
  CompiledField frho(std::vector<Expr>{rho}, dim);
  double R = pick_box_radius(frho, dim);
  auto vals = box_quadrature(f, dim, R, 2 * nodes);
  if (vals[1] == 0) throw Error(ErrorCode::Numeric, "density integrates to zero");
  return vals[0] / vals[1];
}

AdjointReport adjoint_generator_residual_coeff(int dim, const std::vector<Expr>& drift,
                                               const std::vector<Expr>& a, const Expr& F,
                                               double tol, int samples, uint64_t seed,
                                               double scale) {
  std::vector<Expr> terms;
  for (int i = 0; i < dim; ++i) {
    terms.push_back(neg(differentiate(drift[i] * F, i)));
    if (!a[i].is_const(0.0))
      terms.push_back(differentiate(differentiate(a[i] * F, i), i));
  }
  AdjointReport rep;
  rep.residual = simplify(sum(std::move(terms)));
  if (rep.residual.is_const(0.0)) {
    rep.symbolic_zero = true;
    rep.pass = true;
    return rep;
  }
  CompiledField f(std::vector<Expr>{rep.residual}, dim);
  GaussianRng rng(seed);
  for (int i = 0; i < samples; ++i) {
    auto z = rng.normal_vector(dim, scale);
    rep.max_abs = std::max(rep.max_abs, std::abs(f.eval1(z)));
  }
  rep.pass = rep.max_abs <= tol;
  return rep;
}

AdjointReport adjoint_generator_residual(const DiffusionSystem& d, const Expr& F,
                                         double tol, int samples, uint64_t seed,
                                         double scale) {
  std::vector<Expr> a;
  for (int i = 0; i < d.dim; ++i)
    a.push_back(simplify(constant(0.5) * d.sigma[i] * d.sigma[i]));
  return adjoint_generator_residual_coeff(d.dim, d.drift, a, F, tol, samples, seed, scale);
}

AdjointReport adjoint_generator_residual(const SdeSystem& s, double tol) {
  const int n = s.model().dim();
  Expr gH = simplify(s.g().g_of(*s.model().conserved));
  Expr coeff = simplify(exp_e(constant(-2.0) * gH));
  std::vector<Expr> a(n, constant(0.0));
  for (int idx : s.noise_indices()) a[idx] = coeff;
  return adjoint_generator_residual_coeff(n, s.drift(), a, s.invariant_unnormalized(), tol);
}

StationarityReport stationarity_test(const SdeSystem& s, const std::vector<Expr>& test_fns,
                                     const std::vector<std::optional<double>>& references,
                                     std::span<const double> z0, long long steps, double dt,
                                     uint64_t seed, const StationarityOptions& opts) {
  if (!references.empty() && references.size() != test_fns.size())
    throw Error(ErrorCode::Invalid, "one reference per test function (or none)");
  StationarityReport rep;
  rep.steps = steps;
  rep.dt = dt;
  rep.seed = seed;
  rep.burn = opts.burn >= 0 ? opts.burn : steps / 10;
  if (rep.burn >= steps)
    throw Error(ErrorCode::Invalid, "burn-in consumes the whole run");

  const int n = s.model().dim();
  const int nf = static_cast<int>(test_fns.size());
  std::vector<Expr> fns;
  for (const auto& f : test_fns) fns.push_back(simplify(f));
  CompiledField fn_field(fns, n);

  const long long kept = steps - rep.burn;
  const int batches = std::max(20, opts.batches);  // batch-means floor
  std::vector<std::vector<double>> batch_sum(nf, std::vector<double>(batches, 0.0));
  std::vector<long long> batch_count(batches, 0);

  GaussianRng rng(seed);
  const auto& noise_idx = s.noise_indices();
  const int nw = static_cast<int>(noise_idx.size());
  std::vector<double> z(z0.begin(), z0.end());
  std::vector<double> dz(n), fv(nf), scratch, scratch2;
  const double sqdt = std::sqrt(dt);
  for (long long k = 0; k < steps; ++k) {
    s.drift_field().eval(z, dz, scratch);
    double a0 = s.amplitude_field().eval1(z);
    for (int i = 0; i < n; ++i) z[i] += dt * dz[i];
    for (int j = 0; j < nw; ++j) z[noise_idx[j]] += a0 * sqdt * rng.normal();
    for (int i = 0; i < n; ++i)
      if (!std::isfinite(z[i]) || std::abs(z[i]) > 1e12)
        throw Error(ErrorCode::Numeric,
                    "stationarity run blew up at step " + std::to_string(k));
    if (k >= rep.burn) {
      long long j = k - rep.burn;
      int b = static_cast<int>(j * batches / kept);
      fn_field.eval(z, fv, scratch2);
      for (int c = 0; c < nf; ++c) batch_sum[c][b] += fv[c];
      ++batch_count[b];
    }
  }

  rep.all_pass = true;
  std::vector<std::string> names = s.model().vars;
  for (int c = 0; c < nf; ++c) {
    TestFnResult r;
    r.fn = to_string(fns[c], names);
    double total = 0;
    long long count = 0;
    std::vector<double> means(batches);
    for (int b = 0; b < batches; ++b) {
      means[b] = batch_sum[c][b] / std::max<long long>(1, batch_count[b]);
      total += batch_sum[c][b];
      count += batch_count[b];
    }
    r.average = total / count;
    double var = 0;
    for (int b = 0; b < batches; ++b) var += (means[b] - r.average) * (means[b] - r.average);
    var /= (batches - 1);
    r.se = std::sqrt(var / batches);
    if (!references.empty() && references[c].has_value()) {
      r.reference = *references[c];
    } else {
      r.reference = density_expectation(s, test_fns[c]);
    }
    double allowance = opts.allowance_rel * std::abs(r.reference);
    r.pass = std::abs(r.average - r.reference) <= 3.0 * r.se + allowance;
    if (!r.pass) rep.all_pass = false;
    rep.fns.push_back(std::move(r));
  }
  return rep;
}

OverlapReport kernel_overlap(const SdeSystem& s, std::span<const double> z,
                             std::span<const double> zp, double t, int paths, double dt,
                             int bins_per_dim, uint64_t seed) {
  if (paths < 1000)
    throw Error(ErrorCode::Invalid, "kernel_overlap needs at least 1e3 paths");
  if (!(t > 0)) throw Error(ErrorCode::Invalid, "kernel_overlap needs t > 0");
  const int n = s.model().dim();
  long long steps = std::max<long long>(1, std::llround(t / dt));

  // terminal states of both ensembles; ensemble 1 uses odd stream indices
  std::vector<double> ends_a(static_cast<size_t>(paths) * n);
  std::vector<double> ends_b(static_cast<size_t>(paths) * n);
  const auto& noise_idx = s.noise_indices();
  const int nw = static_cast<int>(noise_idx.size());
  auto run_path = [&](std::span<const double> from, uint64_t path_seed, double* out) {
    GaussianRng rng(path_seed);
    std::vector<double> st(from.begin(), from.end());
    std::vector<double> dz(n), scratch;
    const double sqdt = std::sqrt(dt);
    for (long long k = 0; k < steps; ++k) {
      s.drift_field().eval(st, dz, scratch);
      double a0 = s.amplitude_field().eval1(st);
      for (int i = 0; i < n; ++i) st[i] += dt * dz[i];
      for (int j = 0; j < nw; ++j) st[noise_idx[j]] += a0 * sqdt * rng.normal();
    }
    std::copy(st.begin(), st.end(), out);
  };
  parallel_for(static_cast<size_t>(paths), [&](size_t p) {
    run_path(z, derive_seed(seed, 2 * p), ends_a.data() + p * n);
    run_path(zp, derive_seed(seed, 2 * p + 1), ends_b.data() + p * n);
  });

  OverlapReport rep;
  rep.paths = paths;
  rep.bins_per_dim = bins_per_dim > 0
                         ? bins_per_dim
                         : std::min(64, static_cast<int>(std::ceil(std::cbrt(paths))));
  // shared binning over the combined sample
  std::vector<double> lo(n, std::numeric_limits<double>::infinity());
  std::vector<double> hi(n, -std::numeric_limits<double>::infinity());
  for (int p = 0; p < 2 * paths; ++p) {
    const double* st = p < paths ? ends_a.data() + p * n : ends_b.data() + (p - paths) * n;
    for (int i = 0; i < n; ++i) {
      lo[i] = std::min(lo[i], st[i]);
      hi[i] = std::max(hi[i], st[i]);
    }
  }
  for (int i = 0; i < n; ++i)
    if (!(hi[i] > lo[i])) hi[i] = lo[i] + 1.0;

  auto cell_of = [&](const double* st) {
    uint64_t key = 0;
    for (int i = 0; i < n; ++i) {
      int b = static_cast<int>((st[i] - lo[i]) / (hi[i] - lo[i]) * rep.bins_per_dim);
      b = std::clamp(b, 0, rep.bins_per_dim - 1);
      key = key * static_cast<uint64_t>(rep.bins_per_dim + 1) + static_cast<uint64_t>(b);
    }
    return key;
  };

  auto tv_of = [&](const std::vector<int>& idx_a, const std::vector<int>& idx_b) {
    std::unordered_map<uint64_t, double> mass;
    double wa = 1.0 / idx_a.size(), wb = 1.0 / idx_b.size();
    for (int p : idx_a) mass[cell_of(ends_a.data() + static_cast<size_t>(p) * n)] += wa;
    for (int p : idx_b) mass[cell_of(ends_b.data() + static_cast<size_t>(p) * n)] -= wb;
    double tv = 0;
    for (const auto& [cell, m] : mass) tv += std::abs(m);
    return tv;  // in [0, 2]: mutually singular histograms give 2
  };

  std::vector<int> all(paths);
  for (int p = 0; p < paths; ++p) all[p] = p;
  rep.estimate = tv_of(all, all);

  {  // occupied cells for export
    std::unordered_map<uint64_t, OverlapCell> cells;
    auto center_of = [&](const double* st) {
      std::vector<double> c(n);
      for (int i = 0; i < n; ++i) {
        int b = static_cast<int>((st[i] - lo[i]) / (hi[i] - lo[i]) * rep.bins_per_dim);
        b = std::clamp(b, 0, rep.bins_per_dim - 1);
        c[i] = lo[i] + (b + 0.5) * (hi[i] - lo[i]) / rep.bins_per_dim;
      }
      return c;
    };
    double w = 1.0 / paths;
    for (int p = 0; p < paths; ++p) {
      const double* sa = ends_a.data() + static_cast<size_t>(p) * n;
      const double* sb = ends_b.data() + static_cast<size_t>(p) * n;
      auto& ca = cells[cell_of(sa)];
      if (ca.center.empty()) ca.center = center_of(sa);
      ca.mass_a += w;
      auto& cb = cells[cell_of(sb)];
      if (cb.center.empty()) cb.center = center_of(sb);
      cb.mass_b += w;
    }
    for (auto& [key, cell] : cells) rep.histogram.push_back(std::move(cell));
    std::sort(rep.histogram.begin(), rep.histogram.end(),
              [](const OverlapCell& a, const OverlapCell& b) {
                return a.center < b.center;
              });
  }

  // percentile bootstrap over path resampling
  const int B = 200;
  std::vector<double> boot(B);
  GaussianRng rng(derive_seed(seed, 0xb007));
  for (int b = 0; b < B; ++b) {
    std::vector<int> ia(paths), ib(paths);
    for (int p = 0; p < paths; ++p) {
      ia[p] = static_cast<int>(rng.bits() % paths);
      ib[p] = static_cast<int>(rng.bits() % paths);
    }
    boot[b] = tv_of(ia, ib);
  }
  std::sort(boot.begin(), boot.end());
  rep.ci_lo = boot[static_cast<int>(0.025 * B)];
  rep.ci_hi = boot[static_cast<int>(0.975 * B) - 1];
  return rep;
}

void save_overlap_csv(const OverlapReport& rep, const std::vector<std::string>& vars,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write `" + path + "`");
  for (const auto& v : vars) out << "center_" << v << ",";
  out << "mass_a,mass_b\n";
  char buf[40];
  for (const auto& cell : rep.histogram) {
    for (double c : cell.center) {
      std::snprintf(buf, sizeof(buf), "%.17g", c);
      out << buf << ",";
    }
    std::snprintf(buf, sizeof(buf), "%.17g", cell.mass_a);
    out << buf << ",";
    std::snprintf(buf, sizeof(buf), "%.17g", cell.mass_b);
    out << buf << "\n";
  }
}

}  // namespace sk

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "expr.hpp"
#include "oracle.hpp"

using namespace sk;

namespace {
const std::vector<std::string> kXY = {"x", "y"};
Expr X() { return variable(0); }
Expr Y() { return variable(1); }
}  // namespace

TEST_CASE("differentiate polynomial basics") {
  Expr e = pow(X(), 2);
  Expr d = simplify(differentiate(e, 0));
  CHECK(struct_equal(d, simplify(2.0 * X())));
  // d/dx (x^2) at a few points
  for (double v : {-2.0, 0.0, 3.5}) {
    std::vector<double> p = {v};
    CHECK(evaluate(d, p) == doctest::Approx(2 * v));
  }
}

TEST_CASE("derivative of sqrt(1+x^2+y^2) matches x/sqrt(1+x^2+y^2)") {
  Expr H = sqrt_e(1.0 + X() * X() + Y() * Y());
  Expr dH = simplify(differentiate(H, 0));
  oracle::PointSampler smp(42);
  for (int i = 0; i < 50; ++i) {
    auto z = smp.normal(2, 2.0);
    double expect = z[0] / std::sqrt(1 + z[0] * z[0] + z[1] * z[1]);
    CHECK(std::abs(evaluate(dH, z) - expect) <= 1e-12);
  }
}

TEST_CASE("chain rule through opaque primitives: d/dy g(y+g(x))") {
  Expr e = gsat(Y() + gsat(X()));
  Expr d = simplify(differentiate(e, 1));
  oracle::PointSampler smp(7);
  for (int i = 0; i < 100; ++i) {
    auto z = smp.normal(2, 2.0);
    double fd = oracle::fd_partial(e, z, 1);
    CHECK(std::abs(evaluate(d, z) - fd) <= 1e-6);
  }
}

TEST_CASE("unregistered primitive derivative errors with the primitive name") {
  static const Primitive* mystery = register_primitive(
      {"mystery_fn", [](double x) { return x * x; }, nullptr, std::nullopt});
  Expr e = apply(mystery, X());
  CHECK_THROWS_WITH_AS(differentiate(e, 0),
                       doctest::Contains("mystery_fn"), Error);
}

TEST_CASE("evaluate basics and domain errors") {
  CHECK(evaluate(X() * Y(), std::vector<double>{2, 3}) == 6);
  Expr H = sqrt_e(1.0 + X() * X() + Y() * Y());
  CHECK(evaluate(H, std::vector<double>{0, 0}) == 1.0);
  Expr bad = sqrt_e(X());
  CHECK_THROWS_AS((void)evaluate(bad, std::vector<double>{-1.0}), Error);
  try {
    (void)evaluate(bad, std::vector<double>{-1.0});
  } catch (const Error& err) {
    CHECK(err.code == ErrorCode::Domain);
    CHECK(std::string(err.what()).find("sqrt") != std::string::npos);
  }
  Expr lg = log_e(X());
  CHECK_THROWS_AS((void)evaluate(lg, std::vector<double>{0.0}), Error);
}

TEST_CASE("exp(-g(H)) composition identity") {
  Expr H = 0.5 * X() * X();
  Expr density = exp_e(neg(H));
  oracle::PointSampler smp(3);
  for (int i = 0; i < 50; ++i) {
    auto z = smp.normal(1, 2.0);
    double direct = evaluate(density, z);
    double composed = std::exp(-evaluate(H, z));
    CHECK(std::abs(direct - composed) <= 1e-14 * std::max(1.0, composed));
  }
}

TEST_CASE("simplify: identities and cancellation") {
  CHECK(struct_equal(simplify(X() + 0.0 * Y()), X()));
  CHECK(simplify(0.0 * Y()).is_const(0.0));
  CHECK(simplify(X() - X()).is_const(0.0));
  CHECK(simplify(X() / X()).is_const(1.0));
  // symplectic cancellation: dxH*(-dyH) + dyH*(dxH) == 0 exactly
  Expr H = sqrt_e(1.0 + X() * X() + Y() * Y());
  Expr hx = differentiate(H, 0), hy = differentiate(H, 1);
  Expr pairing = hx * neg(hy) + hy * hx;
  CHECK(simplify(pairing).is_const(0.0));
}

TEST_CASE("simplify preserves value") {
  Expr e = (X() + Y()) * (X() - Y()) + exp_e(X() * 0.5) * exp_e(X() * 0.5) +
           pow(X() * X() + 1.0, 3) / (X() * X() + 1.0) + gsat(X() * Y());
  Expr s = simplify(e);
  oracle::PointSampler smp(11);
  for (int i = 0; i < 100; ++i) {
    auto z = smp.normal(2, 1.5);
    double a = evaluate(e, z), b = evaluate(s, z);
    CHECK(std::abs(a - b) <= 1e-12 * (1.0 + std::abs(a)));
  }
}

TEST_CASE("simplify is idempotent") {
  std::vector<Expr> samples = {
      (X() + Y()) * (X() + Y()),
      X() * X() * Y() + 2.0 * Y() * X() * X() + exp_e(X()) * exp_e(neg(X())),
      sqrt_e(X() * X() + 1.0) * sqrt_e(X() * X() + 1.0),
      gsat(Y() + gsat(X())) - Y() * bump(Y()),
      pow(X(), 3) * pow(X(), -2),
  };
  for (const auto& e : samples) {
    Expr s1 = simplify(e);
    Expr s2 = simplify(s1);
    CHECK(struct_equal(s1, s2));
  }
}

TEST_CASE("differentiation agrees with finite differences on random trees") {
  // the module invariant: 100 random points, rel tol 1e-5, h = 1e-5
  std::vector<Expr> exprs = {
      X() * Y() + pow(X(), 3) - 2.0 * Y(),
      exp_e(neg(0.5 * (X() * X() + Y() * Y()))),
      sqrt_e(1.0 + X() * X() + Y() * Y()),
      gsat(X()) * Y() + bump(Y()),
      log_e(1.0 + X() * X()) * gsat(Y()),
  };
  oracle::PointSampler smp(99);
  for (const auto& e : exprs) {
    for (int v = 0; v < 2; ++v) {
      Expr d = simplify(differentiate(e, v));
      for (int i = 0; i < 100; ++i) {
        auto z = smp.normal(2, 1.2);
        double fd = oracle::fd_partial(e, z, v);
        double sym = evaluate(d, z);
        CHECK(std::abs(sym - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("differentiation is linear") {
  Expr e1 = exp_e(X() * Y());
  Expr e2 = pow(X() + Y(), 2);
  double a = 3.25;
  Expr lhs = simplify(differentiate(simplify(a * e1 + e2), 0));
  Expr rhs = simplify(a * differentiate(e1, 0) + differentiate(e2, 0));
  oracle::PointSampler smp(5);
  for (int i = 0; i < 40; ++i) {
    auto z = smp.normal(2);
    CHECK(std::abs(evaluate(lhs, z) - evaluate(rhs, z)) <= 1e-12);
  }
}

TEST_CASE("gsat and bump satisfy the advertised properties") {
  // odd, saturating, strictly positive derivative
  std::vector<double> pt(1);
  for (double x : {-50.0, -3.0, -0.5, 0.0, 0.5, 3.0, 50.0}) {
    pt[0] = x;
    double g = evaluate(gsat(X()), pt);
    pt[0] = -x;
    double gm = evaluate(gsat(X()), pt);
    CHECK(g == doctest::Approx(-gm));
    CHECK(std::abs(g) < 1.0);
  }
  Expr dg = simplify(differentiate(gsat(X()), 0));
  for (double x = -20; x <= 20; x += 0.25) {
    pt[0] = x;
    CHECK(evaluate(dg, pt) > 0.0);
  }
  // bump: 0 on |y|<=2, 1 on |y|>=3, inside (0,1) between
  Expr b = bump(X());
  for (double y = -2.0; y <= 2.0; y += 0.125) {
    pt[0] = y;
    CHECK(evaluate(b, pt) == 0.0);
  }
  for (double y : {3.0, 3.5, 10.0, -3.0, -8.0}) {
    pt[0] = y;
    CHECK(evaluate(b, pt) == doctest::Approx(1.0));
  }
  pt[0] = 2.5;
  double mid = evaluate(b, pt);
  CHECK(mid > 0.0);
  CHECK(mid < 1.0);
  // smooth through the seams: derivative exists and vanishes at |y|=2,3
  Expr db = simplify(differentiate(b, 0));
  for (double y : {2.0, 3.0, -2.0, -3.0}) {
    pt[0] = y;
    CHECK(std::abs(evaluate(db, pt)) <= 1e-12);
  }
  // derivative matches finite differences through the transition
  for (double y = 2.05; y < 3.0; y += 0.1) {
    pt[0] = y;
    double fd = oracle::fd_partial(b, pt, 0, 1e-6);
    CHECK(std::abs(evaluate(db, pt) - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("declared primitive ranges are honored by interval queries") {
  auto b = expr_bounds(gsat(X() * Y() + 3.0));
  REQUIRE(b.has_value());
  CHECK(b->lo >= -1.0);
  CHECK(b->hi <= 1.0);
  auto m = expr_bounds(apply(moll_primitive(0), X()));
  REQUIRE(m.has_value());
  CHECK(m->lo >= 0.0);
  CHECK(m->hi <= 1.0);
  auto prod = expr_bounds(gsat(X()) * gsat(Y()) + 1.0);
  REQUIRE(prod.has_value());
  CHECK(prod->lo >= 0.0);
  CHECK(prod->hi <= 2.0);
}

TEST_CASE("parser round trips and reports positions") {
  Expr e = parse_expression("gsat(y + gsat(x)) - y*bump(y)", kXY);
  Expr s = simplify(e);
  std::string printed = to_string(s, kXY);
  Expr back = simplify(parse_expression(printed, kXY));
  CHECK(struct_equal(s, back));

  CHECK_THROWS_WITH_AS(parse_expression("x + unknowns", kXY),
                       doctest::Contains("1:"), Error);
  try {
    parse_expression("x +\n  (y * )", kXY);
  } catch (const Error& err) {
    CHECK(std::string(err.what()).find("2:") != std::string::npos);
  }
}

TEST_CASE("parser handles numbers, powers, division") {
  Expr e = parse_expression("2.5e-1 * x^2 / (1 + y^(-2))", kXY);
  std::vector<double> z = {2.0, 4.0};
  double expect = 0.25 * 4.0 / (1.0 + 1.0 / 16.0);
  CHECK(evaluate(e, z) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("compiled evaluation matches tree walk") {
  std::vector<Expr> comps = {
      simplify(exp_e(neg(sqrt_e(1.0 + X() * X() + Y() * Y())))),
      simplify(gsat(Y() + gsat(X())) - Y() * bump(Y())),
      simplify(pow(X() + Y(), 3) / (1.0 + X() * X())),
  };
  CompiledField f(comps, 2);
  oracle::PointSampler smp(17);
  std::vector<double> out(3);
  for (int i = 0; i < 200; ++i) {
    auto z = smp.normal(2, 2.5);
    f.eval(z, out);
    for (int c = 0; c < 3; ++c) {
      double tw = evaluate(comps[c], z);
      CHECK(std::abs(out[c] - tw) <= 1e-12 * std::max(1.0, std::abs(tw)));
    }
  }
}

TEST_CASE("compiled evaluation raises the same domain errors") {
  Expr e = simplify(log_e(X()));
  CompiledField f(std::vector<Expr>{e}, 1);
  std::vector<double> z = {-1.0};
  CHECK_THROWS_AS((void)f.eval1(z), Error);
}

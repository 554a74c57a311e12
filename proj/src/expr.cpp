#include "expr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>

namespace sk {

namespace {

size_t mix_hash(size_t h, size_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

size_t node_hash(const ExprNode& n) {
  size_t h = static_cast<size_t>(n.kind) * 0x9e3779b97f4a7c15ull;
  switch (n.kind) {
    case Kind::Const: {
      uint64_t bits;
      double v = (n.cval == 0.0) ? 0.0 : n.cval;  // fold -0
      std::memcpy(&bits, &v, 8);
      h = mix_hash(h, bits);
      break;
    }
    case Kind::Var:
      h = mix_hash(h, static_cast<size_t>(n.var));
      break;
    case Kind::Pow:
      h = mix_hash(h, static_cast<size_t>(n.pnum));
      h = mix_hash(h, static_cast<size_t>(n.pden));
      break;
    case Kind::Prim:
      h = mix_hash(h, std::hash<std::string>{}(n.prim->name));
      break;
    default:
      break;
  }
  for (const auto& k : n.kids) h = mix_hash(h, k.hash());
  return h;
}

Expr make(ExprNode n) {
  n.hash = node_hash(n);
  return Expr(std::make_shared<const ExprNode>(std::move(n)));
}

const Expr& zero_expr() {
  static const Expr z = [] {
    ExprNode n;
    n.kind = Kind::Const;
    n.cval = 0.0;
    return make(n);
  }();
  return z;
}

}  // namespace

Expr::Expr() : n_(zero_expr().ptr()) {}
Kind Expr::kind() const { return n_->kind; }
bool Expr::is_const() const { return n_->kind == Kind::Const; }
bool Expr::is_const(double v) const { return n_->kind == Kind::Const && n_->cval == v; }
double Expr::const_value() const { return n_->cval; }
size_t Expr::hash() const { return n_->hash; }

Expr constant(double v) {
  ExprNode n;
  n.kind = Kind::Const;
  n.cval = (v == 0.0) ? 0.0 : v;
  return make(std::move(n));
}

Expr variable(int index) {
  if (index < 0) throw Error(ErrorCode::Invalid, "negative variable index");
  ExprNode n;
  n.kind = Kind::Var;
  n.var = index;
  return make(std::move(n));
}

Expr sum(std::vector<Expr> terms) {
  if (terms.empty()) return constant(0.0);
  if (terms.size() == 1) return terms[0];
  ExprNode n;
  n.kind = Kind::Sum;
  n.kids = std::move(terms);
  return make(std::move(n));
}

Expr product(std::vector<Expr> factors) {
  if (factors.empty()) return constant(1.0);
  if (factors.size() == 1) return factors[0];
  ExprNode n;
  n.kind = Kind::Prod;
  n.kids = std::move(factors);
  return make(std::move(n));
}

Expr pow(Expr base, long long num, long long den, bool positive_base) {
  if (den == 0) throw Error(ErrorCode::Invalid, "power with zero denominator");
  if (den < 0) { num = -num; den = -den; }
  long long g = std::gcd(num < 0 ? -num : num, den);
  if (g > 1) { num /= g; den /= g; }
  ExprNode n;
  n.kind = Kind::Pow;
  n.pnum = num;
  n.pden = den;
  n.guard = positive_base || den != 1;
  n.kids = {std::move(base)};
  return make(std::move(n));
}

static Expr unary(Kind k, Expr a) {
  ExprNode n;
  n.kind = k;
  n.kids = {std::move(a)};
  return make(std::move(n));
}

Expr exp_e(Expr a) { return unary(Kind::Exp, std::move(a)); }
Expr log_e(Expr a) { return unary(Kind::Log, std::move(a)); }
Expr sqrt_e(Expr a) { return unary(Kind::Sqrt, std::move(a)); }
Expr neg(Expr a) { return unary(Kind::Neg, std::move(a)); }

Expr apply(const Primitive* p, Expr arg) {
  if (!p) throw Error(ErrorCode::Invalid, "null primitive");
  ExprNode n;
  n.kind = Kind::Prim;
  n.prim = p;
  n.kids = {std::move(arg)};
  return make(std::move(n));
}

Expr operator+(const Expr& a, const Expr& b) { return sum({a, b}); }
Expr operator-(const Expr& a, const Expr& b) { return sum({a, neg(b)}); }
Expr operator*(const Expr& a, const Expr& b) { return product({a, b}); }
Expr operator/(const Expr& a, const Expr& b) { return product({a, pow(b, -1)}); }
Expr operator-(const Expr& a) { return neg(a); }

// --- structural order ---------------------------------------------------------

static int kind_rank(Kind k) {
  switch (k) {
    case Kind::Const: return 0;
    case Kind::Var: return 1;
    case Kind::Prim: return 2;
    case Kind::Exp: return 3;
    case Kind::Log: return 4;
    case Kind::Sqrt: return 5;
    case Kind::Pow: return 6;
    case Kind::Neg: return 7;
    case Kind::Prod: return 8;
    case Kind::Sum: return 9;
  }
  return 10;
}

int struct_compare(const Expr& a, const Expr& b) {
  if (a.ptr() == b.ptr()) return 0;
  const ExprNode& x = a.node();
  const ExprNode& y = b.node();
  if (x.kind != y.kind) return kind_rank(x.kind) < kind_rank(y.kind) ? -1 : 1;
  switch (x.kind) {
    case Kind::Const:
      if (x.cval < y.cval) return -1;
      if (x.cval > y.cval) return 1;
      return 0;
    case Kind::Var:
      return x.var < y.var ? -1 : (x.var > y.var ? 1 : 0);
    case Kind::Pow:
      if (x.pnum != y.pnum) return x.pnum < y.pnum ? -1 : 1;
      if (x.pden != y.pden) return x.pden < y.pden ? -1 : 1;
      break;
    case Kind::Prim: {
      int c = x.prim->name.compare(y.prim->name);
      if (c != 0) return c < 0 ? -1 : 1;
      break;
    }
    default:
      break;
  }
  if (x.kids.size() != y.kids.size()) return x.kids.size() < y.kids.size() ? -1 : 1;
  for (size_t i = 0; i < x.kids.size(); ++i) {
    int c = struct_compare(x.kids[i], y.kids[i]);
    if (c != 0) return c;
  }
  return 0;
}

bool struct_equal(const Expr& a, const Expr& b) {
  if (a.ptr() == b.ptr()) return true;
  if (a.hash() != b.hash()) return false;
  return struct_compare(a, b) == 0;
}

int variable_span(const Expr& e) {
  const ExprNode& n = e.node();
  int m = (n.kind == Kind::Var) ? n.var + 1 : 0;
  for (const auto& k : n.kids) m = std::max(m, variable_span(k));
  return m;
}

// --- evaluation -----------------------------------------------------------------

namespace {

[[noreturn]] void domain_error(const char* what, const ExprNode* n) {
  std::string msg = std::string("domain error: ") + what;
  if (n) {
    std::vector<std::string> no_names;
    msg += " in subexpression `";
    msg += to_string(Expr(std::make_shared<const ExprNode>(*n)), no_names);
    msg += "`";
  }
  throw Error(ErrorCode::Domain, msg);
}

double pow_int(double b, long long n) {
  if (n < 0) return 1.0 / pow_int(b, -n);
  double r = 1.0, p = b;
  while (n > 0) {
    if (n & 1) r *= p;
    p *= p;
    n >>= 1;
  }
  return r;
}

}  // namespace

double evaluate(const Expr& e, std::span<const double> point) {
  const ExprNode& n = e.node();
  switch (n.kind) {
    case Kind::Const:
      return n.cval;
    case Kind::Var:
      if (n.var >= static_cast<int>(point.size()))
        throw Error(ErrorCode::Invalid, "evaluation point shorter than variable list");
      return point[n.var];
    case Kind::Sum: {
      double s = 0.0;
      for (const auto& k : n.kids) s += evaluate(k, point);
      return s;
    }
    case Kind::Prod: {
      double p = 1.0;
      for (const auto& k : n.kids) p *= evaluate(k, point);
      return p;
    }
    case Kind::Pow: {
      double b = evaluate(n.kids[0], point);
      if (n.pden == 1) {
        if (b == 0.0 && n.pnum < 0) domain_error("zero base with negative exponent", &n);
        return pow_int(b, n.pnum);
      }
      if (b < 0.0) domain_error("negative base under rational power", &n);
      if (b == 0.0 && n.pnum < 0) domain_error("zero base with negative exponent", &n);
      return std::pow(b, static_cast<double>(n.pnum) / static_cast<double>(n.pden));
    }
    case Kind::Exp:
      return std::exp(evaluate(n.kids[0], point));
    case Kind::Log: {
      double a = evaluate(n.kids[0], point);
      if (a <= 0.0) domain_error("log of non-positive value", &n);
      return std::log(a);
    }
    case Kind::Sqrt: {
      double a = evaluate(n.kids[0], point);
      if (a < 0.0) domain_error("sqrt of negative value", &n);
      return std::sqrt(a);
    }
    case Kind::Neg:
      return -evaluate(n.kids[0], point);
    case Kind::Prim:
      return n.prim->eval(evaluate(n.kids[0], point));
  }
  throw Error(ErrorCode::Invalid, "corrupt expression node");
}

// --- differentiation --------------------------------------------------------------

namespace {

Expr diff_impl(const Expr& e, int var, std::unordered_map<const ExprNode*, Expr>& memo) {
  auto it = memo.find(e.ptr().get());
  if (it != memo.end()) return it->second;
  const ExprNode& n = e.node();
  Expr out;
  switch (n.kind) {
    case Kind::Const:
      out = constant(0.0);
      break;
    case Kind::Var:
      out = constant(n.var == var ? 1.0 : 0.0);
      break;
    case Kind::Sum: {
      std::vector<Expr> t;
      t.reserve(n.kids.size());
      for (const auto& k : n.kids) t.push_back(diff_impl(k, var, memo));
      out = sum(std::move(t));
      break;
    }
    case Kind::Prod: {
      std::vector<Expr> terms;
      for (size_t i = 0; i < n.kids.size(); ++i) {
        std::vector<Expr> f;
        f.reserve(n.kids.size());
        for (size_t j = 0; j < n.kids.size(); ++j)
          f.push_back(i == j ? diff_impl(n.kids[j], var, memo) : n.kids[j]);
        terms.push_back(product(std::move(f)));
      }
      out = sum(std::move(terms));
      break;
    }
    case Kind::Pow: {
      // d b^(p/q) = (p/q) b^(p/q - 1) db
      Expr db = diff_impl(n.kids[0], var, memo);
      double c = static_cast<double>(n.pnum) / static_cast<double>(n.pden);
      Expr reduced = pow(n.kids[0], n.pnum - n.pden, n.pden, n.guard);
      out = product({constant(c), reduced, db});
      break;
    }
    case Kind::Exp:
      out = product({e, diff_impl(n.kids[0], var, memo)});
      break;
    case Kind::Log:
      out = product({diff_impl(n.kids[0], var, memo), pow(n.kids[0], -1)});
      break;
    case Kind::Sqrt:
      out = product({constant(0.5), pow(n.kids[0], -1, 2, true),
                     diff_impl(n.kids[0], var, memo)});
      break;
    case Kind::Neg:
      out = neg(diff_impl(n.kids[0], var, memo));
      break;
    case Kind::Prim: {
      if (!n.prim->derivative)
        throw Error(ErrorCode::Invalid,
                    "no derivative rule registered for primitive `" + n.prim->name + "`");
      Expr outer = n.prim->derivative(n.kids[0]);
      out = product({outer, diff_impl(n.kids[0], var, memo)});
      break;
    }
  }
  memo.emplace(e.ptr().get(), out);
  return out;
}

}  // namespace

Expr differentiate(const Expr& e, int var) {
  std::unordered_map<const ExprNode*, Expr> memo;
  return diff_impl(e, var, memo);
}

// --- simplification ---------------------------------------------------------------
// Fixed rule set: constant folding, zero/one identities, flattening of nested
// sums/products, folding of negation into coefficients, canonical factor order
// with exponent collection, and like-term collection in sums. No distribution
// of products over sums.

namespace {

struct Rational {
  long long num = 0, den = 1;
  void normalize() {
    if (den < 0) { num = -num; den = -den; }
    long long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) { num /= g; den /= g; }
    if (num == 0) den = 1;
  }
};

Rational rat_add(Rational a, Rational b) {
  Rational r{a.num * b.den + b.num * a.den, a.den * b.den};
  r.normalize();
  return r;
}

struct ExprPtrHash {
  size_t operator()(const Expr& e) const { return e.hash(); }
};
struct ExprPtrEq {
  bool operator()(const Expr& a, const Expr& b) const { return struct_equal(a, b); }
};

class Simplifier {
public:
  Expr run(const Expr& e) {
    auto it = memo_.find(e.ptr().get());
    if (it != memo_.end()) return it->second;
    Expr out = canon(e);
    memo_.emplace(e.ptr().get(), out);
    return out;
  }

private:
  std::unordered_map<const ExprNode*, Expr> memo_;

  Expr canon(const Expr& e) {
    const ExprNode& n = e.node();
    switch (n.kind) {
      case Kind::Const:
        return n.cval == 0.0 ? constant(0.0) : e;
      case Kind::Var:
        return e;
      case Kind::Neg:
        return canon_product({run(n.kids[0])}, -1.0);
      case Kind::Sum:
        return canon_sum(n.kids);
      case Kind::Prod: {
        std::vector<Expr> kids;
        kids.reserve(n.kids.size());
        for (const auto& k : n.kids) kids.push_back(run(k));
        return canon_product(kids, 1.0);
      }
      case Kind::Sqrt:
        return canon_pow(run(n.kids[0]), Rational{1, 2}, true);
      case Kind::Pow:
        return canon_pow(run(n.kids[0]), Rational{n.pnum, n.pden}, n.guard);
      case Kind::Exp: {
        Expr a = run(n.kids[0]);
        if (a.is_const()) return constant(std::exp(a.const_value()));
        return exp_e(a);
      }
      case Kind::Log: {
        Expr a = run(n.kids[0]);
        if (a.is_const() && a.const_value() > 0.0)
          return constant(std::log(a.const_value()));
        return log_e(a);
      }
      case Kind::Prim: {
        Expr a = run(n.kids[0]);
        if (a.is_const()) return constant(n.prim->eval(a.const_value()));
        return apply(n.prim, a);
      }
    }
    return e;
  }

  // base assumed canonical
  Expr canon_pow(Expr base, Rational ex, bool guard) {
    ex.normalize();
    if (ex.num == 0) return constant(1.0);
    if (ex.num == 1 && ex.den == 1) return base;
    const ExprNode& bn = base.node();
    if (bn.kind == Kind::Const) {
      double b = bn.cval;
      if (ex.den == 1) {
        if (!(b == 0.0 && ex.num < 0)) return constant(pow_int(b, ex.num));
      } else if (b > 0.0) {
        return constant(std::pow(b, double(ex.num) / double(ex.den)));
      }
    }
    if (bn.kind == Kind::Pow) {
      // (b^(r/s))^(p/q) merges when the inner base is guarded positive or the
      // outer exponent is an integer applied to an integer inner power.
      bool inner_guard = bn.guard;
      if (inner_guard || (bn.pden == 1 && ex.den == 1)) {
        Rational merged{bn.pnum * ex.num, bn.pden * ex.den};
        merged.normalize();
        return canon_pow(bn.kids[0], merged, inner_guard || guard);
      }
    }
    if (bn.kind == Kind::Prod && ex.den == 1) {
      // (x*y)^n distributes for integer n
      std::vector<Expr> fs;
      fs.reserve(bn.kids.size());
      for (const auto& k : bn.kids) fs.push_back(canon_pow(k, ex, guard));
      return canon_product(fs, 1.0);
    }
    if (bn.kind == Kind::Exp && ex.den == 1) {
      // (e^a)^n = e^(n a)
      return canon(exp_e(product({constant(double(ex.num)), bn.kids[0]})));
    }
    ExprNode out;
    out.kind = Kind::Pow;
    out.pnum = ex.num;
    out.pden = ex.den;
    out.guard = guard || ex.den != 1;
    out.kids = {std::move(base)};
    return make(std::move(out));
  }

  // factors canonical; extra coefficient folded in
  Expr canon_product(const std::vector<Expr>& factors, double coeff0) {
    double coeff = coeff0;
    // base -> accumulated exponent (+ guard)
    std::vector<std::pair<Expr, Rational>> bases;
    std::vector<bool> guards;
    auto add_factor = [&](const Expr& f, Rational ex, bool guard, auto&& self) -> void {
      const ExprNode& fn = f.node();
      if (fn.kind == Kind::Const && ex.num == 1 && ex.den == 1) {
        coeff *= fn.cval;
        return;
      }
      if (fn.kind == Kind::Prod && ex.num == 1 && ex.den == 1) {
        for (const auto& k : fn.kids) self(k, Rational{1, 1}, false, self);
        return;
      }
      if (fn.kind == Kind::Neg && ex.num == 1 && ex.den == 1) {
        coeff = -coeff;
        self(fn.kids[0], Rational{1, 1}, false, self);
        return;
      }
      Expr base = f;
      bool g = guard;
      if (fn.kind == Kind::Pow) {
        Rational combined{fn.pnum * ex.num, fn.pden * ex.den};
        combined.normalize();
        self(fn.kids[0], combined, fn.guard, self);
        return;
      }
      for (size_t i = 0; i < bases.size(); ++i) {
        if (struct_equal(bases[i].first, base)) {
          bases[i].second = rat_add(bases[i].second, ex);
          guards[i] = guards[i] || g;
          return;
        }
      }
      bases.emplace_back(base, ex);
      guards.push_back(g);
    };
    for (const auto& f : factors) add_factor(f, Rational{1, 1}, false, add_factor);
    if (coeff == 0.0) return constant(0.0);

    std::vector<Expr> out;
    for (size_t i = 0; i < bases.size(); ++i) {
      bases[i].second.normalize();
      if (bases[i].second.num == 0) continue;
      out.push_back(canon_pow(bases[i].first, bases[i].second, guards[i]));
    }
    // merging may have produced new constants (e.g. exp(0))
    std::vector<Expr> clean;
    for (auto& f : out) {
      if (f.is_const())
        coeff *= f.const_value();
      else
        clean.push_back(f);
    }
    if (coeff == 0.0) return constant(0.0);
    std::sort(clean.begin(), clean.end(),
              [](const Expr& a, const Expr& b) { return struct_compare(a, b) < 0; });
    if (clean.empty()) return constant(coeff);
    if (coeff == 1.0 && clean.size() == 1) return clean[0];
    std::vector<Expr> kids;
    if (coeff != 1.0) kids.push_back(constant(coeff));
    for (auto& f : clean) kids.push_back(std::move(f));
    if (kids.size() == 1) return kids[0];
    ExprNode n;
    n.kind = Kind::Prod;
    n.kids = std::move(kids);
    return make(std::move(n));
  }

  // terms raw (uncanonicalized); collects like terms by canonical monomial key
  Expr canon_sum(const std::vector<Expr>& terms_in) {
    double const_part = 0.0;
    std::vector<std::pair<Expr, double>> terms;  // key -> coefficient
    std::unordered_map<size_t, std::vector<size_t>> index;  // hash -> positions

    auto add_term = [&](const Expr& t, auto&& self) -> void {
      const ExprNode& tn = t.node();
      if (tn.kind == Kind::Sum) {
        for (const auto& k : tn.kids) self(run(k), self);
        return;
      }
      if (tn.kind == Kind::Const) {
        const_part += tn.cval;
        return;
      }
      double coeff = 1.0;
      Expr key = t;
      if (tn.kind == Kind::Prod && !tn.kids.empty() && tn.kids[0].is_const()) {
        coeff = tn.kids[0].const_value();
        std::vector<Expr> rest(tn.kids.begin() + 1, tn.kids.end());
        if (rest.size() == 1) {
          key = rest[0];
        } else {
          ExprNode kn;
          kn.kind = Kind::Prod;
          kn.kids = std::move(rest);
          key = make(std::move(kn));
        }
      }
      auto& slot = index[key.hash()];
      for (size_t pos : slot) {
        if (struct_equal(terms[pos].first, key)) {
          terms[pos].second += coeff;
          return;
        }
      }
      slot.push_back(terms.size());
      terms.emplace_back(key, coeff);
    };
    for (const auto& t : terms_in) add_term(run(t), add_term);

    std::vector<std::pair<Expr, double>> kept;
    for (auto& [key, c] : terms)
      if (c != 0.0) kept.emplace_back(key, c);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
      return struct_compare(a.first, b.first) < 0;
    });

    std::vector<Expr> out;
    if (const_part != 0.0) out.push_back(constant(const_part));
    for (auto& [key, c] : kept) {
      if (c == 1.0) {
        out.push_back(key);
      } else if (key.node().kind == Kind::Prod) {
        std::vector<Expr> kids;
        kids.push_back(constant(c));
        for (const auto& k : key.node().kids) kids.push_back(k);
        ExprNode pn;
        pn.kind = Kind::Prod;
        pn.kids = std::move(kids);
        out.push_back(make(std::move(pn)));
      } else {
        ExprNode pn;
        pn.kind = Kind::Prod;
        pn.kids = {constant(c), key};
        out.push_back(make(std::move(pn)));
      }
    }
    if (out.empty()) return constant(0.0);
    if (out.size() == 1) return out[0];
    ExprNode n;
    n.kind = Kind::Sum;
    n.kids = std::move(out);
    return make(std::move(n));
  }
};

}  // namespace

Expr simplify(const Expr& e) {
  Simplifier s;
  return s.run(e);
}

// --- intervals -----------------------------------------------------------------

namespace {

const double kInf = std::numeric_limits<double>::infinity();

Interval iv(double lo, double hi) { return Interval{lo, hi}; }

Interval iv_add(Interval a, Interval b) { return iv(a.lo + b.lo, a.hi + b.hi); }

Interval iv_mul(Interval a, Interval b) {
  double c[4] = {a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi};
  double lo = c[0], hi = c[0];
  for (double v : c) {
    if (std::isnan(v)) return iv(-kInf, kInf);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return iv(lo, hi);
}

}  // namespace

std::optional<Interval> expr_bounds(const Expr& e) {
  const ExprNode& n = e.node();
  switch (n.kind) {
    case Kind::Const:
      return iv(n.cval, n.cval);
    case Kind::Var:
      return iv(-kInf, kInf);
    case Kind::Sum: {
      Interval acc = iv(0, 0);
      for (const auto& k : n.kids) {
        auto b = expr_bounds(k);
        if (!b) return std::nullopt;
        acc = iv_add(acc, *b);
      }
      return acc;
    }
    case Kind::Prod: {
      Interval acc = iv(1, 1);
      for (const auto& k : n.kids) {
        auto b = expr_bounds(k);
        if (!b) return std::nullopt;
        acc = iv_mul(acc, *b);
      }
      return acc;
    }
    case Kind::Neg: {
      auto b = expr_bounds(n.kids[0]);
      if (!b) return std::nullopt;
      return iv(-b->hi, -b->lo);
    }
    case Kind::Exp: {
      auto b = expr_bounds(n.kids[0]);
      if (!b) return iv(0, kInf);
      return iv(std::exp(b->lo), std::exp(b->hi));
    }
    case Kind::Sqrt: {
      auto b = expr_bounds(n.kids[0]);
      if (!b || b->hi < 0) return std::nullopt;
      return iv(std::sqrt(std::max(0.0, b->lo)), std::sqrt(b->hi));
    }
    case Kind::Log: {
      auto b = expr_bounds(n.kids[0]);
      if (!b || b->hi <= 0) return std::nullopt;
      return iv(b->lo > 0 ? std::log(b->lo) : -kInf, std::log(b->hi));
    }
    case Kind::Pow: {
      auto b = expr_bounds(n.kids[0]);
      if (!b) return std::nullopt;
      if (n.pden == 1 && n.pnum > 0 && n.pnum % 2 == 0) {
        double m = std::max(std::abs(b->lo), std::abs(b->hi));
        double lo = (b->lo <= 0 && b->hi >= 0) ? 0.0 : std::min(pow_int(b->lo, n.pnum), pow_int(b->hi, n.pnum));
        return iv(lo, pow_int(m, n.pnum));
      }
      if (n.pden == 1 && n.pnum > 0) {  // odd positive power: monotone
        return iv(pow_int(b->lo, n.pnum), pow_int(b->hi, n.pnum));
      }
      return std::nullopt;  // negative/rational exponents: give up
    }
    case Kind::Prim:
      if (n.prim->range) return iv(n.prim->range->first, n.prim->range->second);
      return std::nullopt;
  }
  return std::nullopt;
}

// --- printer -----------------------------------------------------------------

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void print_rec(const Expr& e, std::span<const std::string> names, std::string& out,
               int parent_prec);

void print_child(const Expr& e, std::span<const std::string> names, std::string& out,
                 int prec) {
  print_rec(e, names, out, prec);
}

// precedence: sum 1, product 2, unary-neg 2, power 3, atom 4
void print_rec(const Expr& e, std::span<const std::string> names, std::string& out,
               int parent_prec) {
  const ExprNode& n = e.node();
  auto open = [&](int prec) {
    if (prec < parent_prec) out += "(";
    return prec < parent_prec;
  };
  switch (n.kind) {
    case Kind::Const: {
      double v = n.cval;
      bool wrapped = (v < 0) && open(2);
      out += fmt_double(v);
      if (wrapped) out += ")";
      return;
    }
    case Kind::Var:
      if (n.var < static_cast<int>(names.size()))
        out += names[n.var];
      else
        out += "v" + std::to_string(n.var);
      return;
    case Kind::Sum: {
      bool wrapped = open(1);
      for (size_t i = 0; i < n.kids.size(); ++i) {
        if (i) out += " + ";
        print_child(n.kids[i], names, out, 1);
      }
      if (wrapped) out += ")";
      return;
    }
    case Kind::Prod: {
      bool wrapped = open(2);
      for (size_t i = 0; i < n.kids.size(); ++i) {
        if (i) out += "*";
        print_child(n.kids[i], names, out, 3);
      }
      if (wrapped) out += ")";
      return;
    }
    case Kind::Pow: {
      if (n.pnum == 1 && n.pden == 2) {
        out += "sqrt(";
        print_child(n.kids[0], names, out, 0);
        out += ")";
        return;
      }
      bool wrapped = open(3);
      print_child(n.kids[0], names, out, 4);
      out += "^";
      if (n.pden == 1) {
        if (n.pnum < 0) {
          out += "(" + std::to_string(n.pnum) + ")";
        } else {
          out += std::to_string(n.pnum);
        }
      } else {
        out += "(" + std::to_string(n.pnum) + "/" + std::to_string(n.pden) + ")";
      }
      if (wrapped) out += ")";
      return;
    }
    case Kind::Exp:
      out += "exp(";
      print_child(n.kids[0], names, out, 0);
      out += ")";
      return;
    case Kind::Log:
      out += "log(";
      print_child(n.kids[0], names, out, 0);
      out += ")";
      return;
    case Kind::Sqrt:
      out += "sqrt(";
      print_child(n.kids[0], names, out, 0);
      out += ")";
      return;
    case Kind::Neg: {
      bool wrapped = open(2);
      out += "-";
      print_child(n.kids[0], names, out, 3);
      if (wrapped) out += ")";
      return;
    }
    case Kind::Prim:
      out += n.prim->name;
      out += "(";
      print_child(n.kids[0], names, out, 0);
      out += ")";
      return;
  }
}

}  // namespace

std::string to_string(const Expr& e, std::span<const std::string> names) {
  std::string out;
  print_rec(e, names, out, 0);
  return out;
}

// --- primitive registry -----------------------------------------------------------

namespace {

std::mutex g_reg_mutex;
std::deque<Primitive>& registry_storage() {
  static std::deque<Primitive> store;
  return store;
}
std::map<std::string, Primitive*>& registry_index() {
  static std::map<std::string, Primitive*> idx;
  return idx;
}

// k-th derivative of the standard mollifier step m(t) = exp(-1/t) for t > 0,
// 0 otherwise. m^(k)(t) = m(t) P_k(t) / t^(2k) with P_1 = 1 and
// P_{k+1} = (1 - 2kt) P_k + t^2 P_k'.
// P_{j+1}(t) = (1 - 2 j t) P_j(t) + t^2 P_j'(t), P_1 = 1
std::vector<double> moll_poly(int k) {
  std::vector<double> p = {1.0};
  for (int j = 1; j < k; ++j) {
    std::vector<double> r(p.size() + 1, 0.0);
    for (size_t i = 0; i < p.size(); ++i) {
      r[i] += p[i];
      r[i + 1] += (-2.0 * j + double(i)) * p[i];  // t^2 d/dt(t^i) = i t^(i+1)
    }
    p = std::move(r);
  }
  return p;
}

Primitive* moll_prim_locked(int order);

Primitive* make_moll(int order) {
  Primitive p;
  p.name = order == 0 ? "moll" : ("moll_d" + std::to_string(order));
  if (order == 0) {
    p.eval = [](double t) { return t <= 0.0 ? 0.0 : std::exp(-1.0 / t); };
  } else {
    p.eval = [order, poly = moll_poly(order)](double t) {
      if (t <= 0.0) return 0.0;
      double pv = 0.0;
      for (size_t i = poly.size(); i-- > 0;) pv = pv * t + poly[i];
      return std::exp(-1.0 / t) * pv / pow_int(t, 2 * order);
    };
  }
  p.derivative = [order](const Expr& a) {
    std::lock_guard<std::mutex> lk(g_reg_mutex);
    return apply(moll_prim_locked(order + 1), a);
  };
  if (order == 0) p.range = std::make_pair(0.0, 1.0);
  registry_storage().push_back(std::move(p));
  Primitive* ptr = &registry_storage().back();
  registry_index()[ptr->name] = ptr;
  return ptr;
}

Primitive* moll_prim_locked(int order) {
  std::string name = order == 0 ? "moll" : ("moll_d" + std::to_string(order));
  auto it = registry_index().find(name);
  if (it != registry_index().end()) return it->second;
  return make_moll(order);
}

Primitive* gsat_d_prim_locked();

Primitive* gsat_prim_locked() {
  auto it = registry_index().find("gsat");
  if (it != registry_index().end()) return it->second;
  Primitive p;
  p.name = "gsat";
  p.eval = [](double x) { return x / std::sqrt(1.0 + x * x); };
  p.derivative = [](const Expr& a) {
    std::lock_guard<std::mutex> lk(g_reg_mutex);
    return apply(gsat_d_prim_locked(), a);
  };
  p.range = std::make_pair(-1.0, 1.0);
  registry_storage().push_back(std::move(p));
  Primitive* ptr = &registry_storage().back();
  registry_index()[ptr->name] = ptr;
  return ptr;
}

Primitive* gsat_d_prim_locked() {
  auto it = registry_index().find("gsat_d");
  if (it != registry_index().end()) return it->second;
  Primitive p;
  p.name = "gsat_d";
  p.eval = [](double x) { return std::pow(1.0 + x * x, -1.5); };
  p.derivative = [](const Expr& a) {
    // d/dx (1+x^2)^(-3/2) = -3 x (1+x^2)^(-5/2)
    Expr one_px2 = constant(1.0) + a * a;
    return product({constant(-3.0), a, pow(one_px2, -5, 2, true)});
  };
  p.range = std::make_pair(0.0, 1.0);
  registry_storage().push_back(std::move(p));
  Primitive* ptr = &registry_storage().back();
  registry_index()[ptr->name] = ptr;
  return ptr;
}

}  // namespace

const Primitive* gsat_primitive() {
  std::lock_guard<std::mutex> lk(g_reg_mutex);
  return gsat_prim_locked();
}

const Primitive* moll_primitive(int order) {
  std::lock_guard<std::mutex> lk(g_reg_mutex);
  return moll_prim_locked(order);
}

const Primitive* find_primitive(const std::string& name) {
  std::lock_guard<std::mutex> lk(g_reg_mutex);
  auto it = registry_index().find(name);
  if (it != registry_index().end()) return it->second;
  if (name == "gsat") return gsat_prim_locked();
  if (name == "gsat_d") return gsat_d_prim_locked();
  if (name == "moll") return moll_prim_locked(0);
  if (name.rfind("moll_d", 0) == 0) {
    try {
      int k = std::stoi(name.substr(6));
      if (k >= 1 && k <= 64) return moll_prim_locked(k);
    } catch (...) {
    }
  }
  return nullptr;
}

const Primitive* register_primitive(Primitive p) {
  std::lock_guard<std::mutex> lk(g_reg_mutex);
  auto it = registry_index().find(p.name);
  if (it != registry_index().end())
    throw Error(ErrorCode::Invalid, "primitive `" + p.name + "` already registered");
  registry_storage().push_back(std::move(p));
  Primitive* ptr = &registry_storage().back();
  registry_index()[ptr->name] = ptr;
  return ptr;
}

Expr gsat(Expr a) { return apply(gsat_primitive(), std::move(a)); }

Expr bump(Expr a) {
  // moll(y^2-4) / (moll(y^2-4) + moll(9-y^2)); denominator > 0 everywhere.
  const Primitive* m = moll_primitive(0);
  Expr y2 = a * a;
  Expr up = apply(m, y2 - 4.0);
  Expr down = apply(m, constant(9.0) - y2);
  return up / (up + down);
}

// --- parser --------------------------------------------------------------------

namespace {

struct Parser {
  const std::string& text;
  std::span<const std::string> names;
  size_t pos = 0;
  int line = 1, col = 1;

  [[noreturn]] void fail(const std::string& msg) {
    throw Error(ErrorCode::Parse, "parse error at " + std::to_string(line) + ":" +
                                      std::to_string(col) + ": " + msg);
  }

  char peek() { return pos < text.size() ? text[pos] : '\0'; }

  char take() {
    char c = peek();
    if (c) {
      ++pos;
      if (c == '\n') { ++line; col = 1; } else { ++col; }
    }
    return c;
  }

  void skip_ws() {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' ||
                                 text[pos] == '\r' || text[pos] == '\n'))
      take();
  }

  bool accept(char c) {
    skip_ws();
    if (peek() == c) {
      take();
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) fail(std::string("expected `") + c + "`");
  }

  Expr expression() {
    Expr acc = term();
    for (;;) {
      skip_ws();
      if (accept('+')) {
        acc = acc + term();
      } else if (peek() == '-') {
        take();
        acc = acc - term();
      } else {
        return acc;
      }
    }
  }

  Expr term() {
    Expr acc = unary_expr();
    for (;;) {
      skip_ws();
      if (accept('*')) {
        acc = acc * unary_expr();
      } else if (accept('/')) {
        acc = acc / unary_expr();
      } else {
        return acc;
      }
    }
  }

  Expr unary_expr() {
    skip_ws();
    if (accept('-')) return neg(unary_expr());
    return postfix();
  }

  Expr postfix() {
    Expr a = atom();
    for (;;) {
      skip_ws();
      if (!accept('^')) return a;
      auto [num, den] = exponent();
      a = pow(a, num, den);
    }
  }

  // integer exponent, or (p/q) for round-tripping printed rational powers
  std::pair<long long, long long> exponent() {
    skip_ws();
    bool paren = accept('(');
    skip_ws();
    bool negative = accept('-');
    skip_ws();
    if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected integer exponent");
    long long v = 0;
    while (std::isdigit(static_cast<unsigned char>(peek()))) v = v * 10 + (take() - '0');
    long long den = 1;
    skip_ws();
    if (paren && peek() == '/') {
      take();
      skip_ws();
      if (!std::isdigit(static_cast<unsigned char>(peek())))
        fail("expected denominator after `/`");
      den = 0;
      while (std::isdigit(static_cast<unsigned char>(peek()))) den = den * 10 + (take() - '0');
      if (den == 0) fail("zero denominator in exponent");
    }
    if (paren) expect(')');
    return {negative ? -v : v, den};
  }

  Expr atom() {
    skip_ws();
    char c = peek();
    if (c == '(') {
      take();
      Expr e = expression();
      expect(')');
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return name_ref();
    fail("unexpected character");
  }

  Expr number() {
    size_t start = pos;
    while (pos < text.size() &&
           (std::isdigit(static_cast<unsigned char>(text[pos])) || text[pos] == '.' ||
            text[pos] == 'e' || text[pos] == 'E' ||
            ((text[pos] == '+' || text[pos] == '-') && pos > start &&
             (text[pos - 1] == 'e' || text[pos - 1] == 'E'))))
      take();
    std::string tok = text.substr(start, pos - start);
    try {
      size_t used = 0;
      double v = std::stod(tok, &used);
      if (used != tok.size()) fail("malformed number `" + tok + "`");
      return constant(v);
    } catch (const Error&) {
      throw;
    } catch (...) {
      fail("malformed number `" + tok + "`");
    }
  }

  Expr name_ref() {
    size_t start = pos;
    while (pos < text.size() && (std::isalnum(static_cast<unsigned char>(text[pos])) ||
                                 text[pos] == '_'))
      take();
    std::string id = text.substr(start, pos - start);
    skip_ws();
    if (peek() == '(') {
      take();
      Expr arg = expression();
      expect(')');
      if (id == "sqrt") return sqrt_e(arg);
      if (id == "exp") return exp_e(arg);
      if (id == "log") return log_e(arg);
      if (id == "bump") return bump(arg);
      const Primitive* p = find_primitive(id);
      if (!p) fail("unknown function `" + id + "`");
      return apply(p, arg);
    }
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == id) return variable(static_cast<int>(i));
    fail("unknown identifier `" + id + "`");
  }
};

}  // namespace

Expr parse_expression(const std::string& text, std::span<const std::string> names) {
  Parser p{text, names};
  Expr e = p.expression();
  p.skip_ws();
  if (p.pos != text.size()) p.fail("trailing input");
  return e;
}

// --- compiled evaluation -----------------------------------------------------------

CompiledField::CompiledField(std::span<const Expr> comps, int nvars) : nvars_(nvars) {
  std::unordered_map<const ExprNode*, int> memo;
  roots_.assign(comps.begin(), comps.end());
  for (const auto& e : roots_) outputs_.push_back(compile(e, code_, memo));
}

int CompiledField::compile(const Expr& e, std::vector<Instr>& code,
                           std::unordered_map<const ExprNode*, int>& memo) {
  auto it = memo.find(e.ptr().get());
  if (it != memo.end()) return it->second;
  const ExprNode& n = e.node();
  auto emit = [&](Instr i) {
    i.src = &n;
    code.push_back(i);
    return static_cast<int>(code.size() - 1);
  };
  int r = -1;
  switch (n.kind) {
    case Kind::Const:
      r = emit({Op::Const, -1, -1, n.cval});
      break;
    case Kind::Var:
      r = emit({Op::Var, n.var, -1});
      break;
    case Kind::Sum: {
      int acc = compile(n.kids[0], code, memo);
      for (size_t i = 1; i < n.kids.size(); ++i) {
        int b = compile(n.kids[i], code, memo);
        acc = emit({Op::Add, acc, b});
      }
      r = acc;
      break;
    }
    case Kind::Prod: {
      int acc = compile(n.kids[0], code, memo);
      for (size_t i = 1; i < n.kids.size(); ++i) {
        int b = compile(n.kids[i], code, memo);
        acc = emit({Op::Mul, acc, b});
      }
      r = acc;
      break;
    }
    case Kind::Pow: {
      int b = compile(n.kids[0], code, memo);
      if (n.pden == 1) {
        Instr i{Op::PowInt, b, -1};
        i.ipow = n.pnum;
        r = emit(i);
      } else {
        Instr i{Op::PowReal, b, -1, double(n.pnum) / double(n.pden)};
        r = emit(i);
      }
      break;
    }
    case Kind::Exp:
      r = emit({Op::Exp, compile(n.kids[0], code, memo), -1});
      break;
    case Kind::Log:
      r = emit({Op::Log, compile(n.kids[0], code, memo), -1});
      break;
    case Kind::Sqrt:
      r = emit({Op::Sqrt, compile(n.kids[0], code, memo), -1});
      break;
    case Kind::Neg:
      r = emit({Op::Neg, compile(n.kids[0], code, memo), -1});
      break;
    case Kind::Prim: {
      Instr i{Op::Prim, compile(n.kids[0], code, memo), -1};
      i.prim = n.prim;
      r = emit(i);
      break;
    }
  }
  memo.emplace(e.ptr().get(), r);
  return r;
}

void CompiledField::eval(std::span<const double> point, std::span<double> out) const {
  std::vector<double> scratch;
  eval(point, out, scratch);
}

void CompiledField::eval(std::span<const double> point, std::span<double> out,
                         std::vector<double>& regs) const {
  regs.resize(code_.size());
  double* r = regs.data();
  for (size_t i = 0; i < code_.size(); ++i) {
    const Instr& in = code_[i];
    switch (in.op) {
      case Op::Const: r[i] = in.aux; break;
      case Op::Var: r[i] = point[in.a]; break;
      case Op::Add: r[i] = r[in.a] + r[in.b]; break;
      case Op::Mul: r[i] = r[in.a] * r[in.b]; break;
      case Op::Neg: r[i] = -r[in.a]; break;
      case Op::PowInt: {
        double b = r[in.a];
        if (b == 0.0 && in.ipow < 0) domain_error("zero base with negative exponent", in.src);
        r[i] = pow_int(b, in.ipow);
        break;
      }
      case Op::PowReal: {
        double b = r[in.a];
        if (b < 0.0) domain_error("negative base under rational power", in.src);
        if (b == 0.0 && in.aux < 0.0) domain_error("zero base with negative exponent", in.src);
        r[i] = std::pow(b, in.aux);
        break;
      }
      case Op::Exp: r[i] = std::exp(r[in.a]); break;
      case Op::Log: {
        double a = r[in.a];
        if (a <= 0.0) domain_error("log of non-positive value", in.src);
        r[i] = std::log(a);
        break;
      }
      case Op::Sqrt: {
        double a = r[in.a];
        if (a < 0.0) domain_error("sqrt of negative value", in.src);
        r[i] = std::sqrt(a);
        break;
      }
      case Op::Prim: r[i] = in.prim->eval(r[in.a]); break;
    }
  }
  for (size_t j = 0; j < outputs_.size(); ++j) out[j] = r[outputs_[j]];
}

double CompiledField::eval1(std::span<const double> point) const {
  double out;
  eval(point, std::span<double>(&out, 1));
  return out;
}

}  // namespace sk

#pragma once

// Minimal symbolic scalar-expression engine: exact differentiation, a fixed
// simplification rule set, tree-walk and compiled numeric evaluation, and a
// small infix grammar for model files.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sk {

enum class ErrorCode { Parse = 2, Domain = 3, Invalid = 4, Numeric = 5, Io = 6 };

class Error : public std::runtime_error {
public:
  Error(ErrorCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
  ErrorCode code;
};

class Expr;
struct ExprNode;

/// Arity-1 opaque scalar function. The derivative rule maps the argument
/// expression to d(prim)/d(arg); it must be registered before any
/// differentiation reaches the primitive.
struct Primitive {
  std::string name;
  std::function<double(double)> eval;
  std::function<Expr(const Expr&)> derivative;
  std::optional<std::pair<double, double>> range;  // declared bounds, if any
};

enum class Kind : uint8_t { Const, Var, Sum, Prod, Pow, Exp, Log, Sqrt, Neg, Prim };

class Expr {
public:
  Expr();  // constant 0
  explicit Expr(std::shared_ptr<const ExprNode> n) : n_(std::move(n)) {}
  const ExprNode& node() const { return *n_; }
  const std::shared_ptr<const ExprNode>& ptr() const { return n_; }
  Kind kind() const;
  bool is_const() const;
  bool is_const(double v) const;
  double const_value() const;
  size_t hash() const;

private:
  std::shared_ptr<const ExprNode> n_;
};

struct ExprNode {
  Kind kind;
  double cval = 0.0;                  // Const
  int var = -1;                       // Var
  long long pnum = 1, pden = 1;       // Pow exponent pnum/pden, pden >= 1
  bool guard = false;                 // Pow: base assumed positive (sqrt/log style domain)
  const Primitive* prim = nullptr;    // Prim
  std::vector<Expr> kids;             // Sum/Prod children; unary argument at kids[0]
  size_t hash = 0;
};

// --- constructors -----------------------------------------------------------
Expr constant(double v);
Expr variable(int index);
Expr sum(std::vector<Expr> terms);
Expr product(std::vector<Expr> factors);
Expr pow(Expr base, long long num, long long den = 1, bool positive_base = false);
Expr exp_e(Expr a);
Expr log_e(Expr a);
Expr sqrt_e(Expr a);
Expr neg(Expr a);
Expr apply(const Primitive* p, Expr arg);

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
inline Expr operator*(double c, const Expr& a) { return constant(c) * a; }
inline Expr operator*(const Expr& a, double c) { return a * constant(c); }
inline Expr operator+(const Expr& a, double c) { return a + constant(c); }
inline Expr operator+(double c, const Expr& a) { return constant(c) + a; }
inline Expr operator-(const Expr& a, double c) { return a - constant(c); }
inline Expr operator-(double c, const Expr& a) { return constant(c) - a; }
inline Expr operator/(double c, const Expr& a) { return constant(c) / a; }
inline Expr operator/(const Expr& a, double c) { return a / constant(c); }

// --- structure ---------------------------------------------------------------
bool struct_equal(const Expr& a, const Expr& b);
int struct_compare(const Expr& a, const Expr& b);  // total order, <0/0/>0
int variable_span(const Expr& e);                  // 1 + highest variable index, 0 if none

// --- core operations ---------------------------------------------------------
Expr differentiate(const Expr& e, int var);
Expr simplify(const Expr& e);
double evaluate(const Expr& e, std::span<const double> point);

struct Interval {
  double lo, hi;
};
// Best-effort interval propagation; declared primitive ranges are honored.
std::optional<Interval> expr_bounds(const Expr& e);

std::string to_string(const Expr& e, std::span<const std::string> names);

// --- primitive registry -------------------------------------------------------
// Lookup resolves built-ins (gsat, gsat_d, moll, moll_d<k>) lazily; returns
// nullptr for unknown names.
const Primitive* find_primitive(const std::string& name);
const Primitive* register_primitive(Primitive p);
const Primitive* gsat_primitive();
const Primitive* moll_primitive(int order);

Expr gsat(Expr a);  // odd saturating x/sqrt(1+x^2), range (-1,1)
Expr bump(Expr a);  // smooth, 0 on |y|<=2, 1 on |y|>=3 (mollifier ratio)

// --- parsing ------------------------------------------------------------------
// Infix grammar: + - * / ^(integer), sqrt/exp/log, registered primitive names,
// bump(...) sugar, variables by declared name. Errors carry line:column.
Expr parse_expression(const std::string& text, std::span<const std::string> names);

// --- compiled evaluation --------------------------------------------------------
// Straight-line tape over a register file; structurally shared subtrees are
// evaluated once. Evaluation matches the tree walk to <= 1e-12 relative.
class CompiledField {
public:
  CompiledField() = default;
  CompiledField(std::span<const Expr> comps, int nvars);
  int dim() const { return static_cast<int>(outputs_.size()); }
  int vars() const { return nvars_; }
  void eval(std::span<const double> point, std::span<double> out) const;
  void eval(std::span<const double> point, std::span<double> out,
            std::vector<double>& scratch) const;
  double eval1(std::span<const double> point) const;

private:
  enum class Op : uint8_t { Const, Var, Add, Mul, Neg, PowInt, PowReal, Exp, Log, Sqrt, Prim };
  struct Instr {
    Op op;
    int32_t a = -1, b = -1;
    double aux = 0.0;
    long long ipow = 0;
    const Primitive* prim = nullptr;
    const ExprNode* src = nullptr;  // for domain-error messages
  };
  int compile(const Expr& e, std::vector<Instr>& code,
              std::unordered_map<const ExprNode*, int>& memo);
  std::vector<Instr> code_;
  std::vector<int> outputs_;
  int nvars_ = 0;
  std::vector<Expr> roots_;  // keeps src pointers alive
};

}  // namespace sk

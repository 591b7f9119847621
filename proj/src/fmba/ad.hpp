#pragma once

// Reverse-mode automatic differentiation on a flat Wengert list.
//
// Every scalar operation on tracked values appends one node holding at most
// two parent ids and the local partials. Vector-valued kernels (dense
// layers, convolutions, Gram products, linear solves) register a custom
// backward callback instead of expanding into scalar nodes.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

namespace fmba::ad {

class Tape;

/// Scalar that records its arithmetic on a Tape. A Var with id < 0 is a
/// constant and never touches the tape.
struct Var {
  double val = 0.0;
  std::int32_t id = -1;
  Tape* tape = nullptr;

  Var() = default;
  template <typename A, typename = std::enable_if_t<std::is_arithmetic_v<A>>>
  Var(A v) : val(static_cast<double>(v)) {}  // NOLINT(google-explicit-constructor)
  Var(double v, std::int32_t node, Tape* t) : val(v), id(node), tape(t) {}

  bool tracked() const { return id >= 0; }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);
};

/// Adjoint buffer produced by a reverse sweep.
class Adjoints {
 public:
  explicit Adjoints(std::size_t n) : adj_(n, 0.0) {}
  double operator[](std::int32_t id) const { return id >= 0 ? adj_[static_cast<std::size_t>(id)] : 0.0; }
  double of(const Var& v) const { return (*this)[v.id]; }
  void add(std::int32_t id, double g) {
    if (id >= 0) adj_[static_cast<std::size_t>(id)] += g;
  }
  void add(const Var& v, double g) { add(v.id, g); }
  std::size_t size() const { return adj_.size(); }

 private:
  std::vector<double> adj_;
};

class Tape {
 public:
  /// Receives the adjoint buffer and the id of the op's first output.
  using Backward = std::function<void(Adjoints&, std::int32_t first)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// New independent leaf.
  Var variable(double v);

  std::int32_t push(std::int32_t p0, double d0, std::int32_t p1 = -1, double d1 = 0.0);

  /// Reserves `count` parentless output nodes whose adjoints are propagated
  /// by `backward` once every consumer of the outputs has been swept.
  std::int32_t custom(std::int32_t count, Backward backward);

  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  /// Seeds the given adjoints and sweeps the whole tape in reverse.
  Adjoints backward(std::span<const std::pair<std::int32_t, double>> seeds) const;
  Adjoints backward(const Var& output) const;

 private:
  struct Node {
    std::int32_t p0;
    std::int32_t p1;
    double d0;
    double d1;
  };
  std::vector<Node> nodes_;
  // Custom op index keyed by first output id; -1 elsewhere.
  std::vector<std::int32_t> custom_at_;
  std::vector<std::pair<std::int32_t, Backward>> customs_;
};

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.val; }

namespace detail {
inline Var unary(double v, const Var& a, double da) {
  if (a.id < 0) return Var(v);
  return Var(v, a.tape->push(a.id, da), a.tape);
}
inline Var binary(double v, const Var& a, double da, const Var& b, double db) {
  Tape* t = a.id >= 0 ? a.tape : b.tape;
  if (a.id < 0 && b.id < 0) return Var(v);
  return Var(v, t->push(a.id, da, b.id, db), t);
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary(a.val + b.val, a, 1.0, b, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary(a.val - b.val, a, 1.0, b, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return detail::binary(a.val * b.val, a, b.val, b, a.val); }
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.val;
  const double q = a.val * inv;
  return detail::binary(q, a, inv, b, -q * inv);
}
inline Var operator-(const Var& a) { return detail::unary(-a.val, a, -1.0); }
inline Var operator+(const Var& a) { return a; }

inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline bool operator<(const Var& a, const Var& b) { return a.val < b.val; }
inline bool operator>(const Var& a, const Var& b) { return a.val > b.val; }
inline bool operator<=(const Var& a, const Var& b) { return a.val <= b.val; }
inline bool operator>=(const Var& a, const Var& b) { return a.val >= b.val; }
inline bool operator==(const Var& a, const Var& b) { return a.val == b.val; }
inline bool operator!=(const Var& a, const Var& b) { return a.val != b.val; }

// sqrt'(0) is taken as 0 so that exactly-zero inputs (e.g. an all-zero
// Jacobian column) do not poison the sweep with inf * 0.
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.val);
  return detail::unary(s, a, s > 0.0 ? 0.5 / s : 0.0);
}
inline Var sin(const Var& a) { return detail::unary(std::sin(a.val), a, std::cos(a.val)); }
inline Var cos(const Var& a) { return detail::unary(std::cos(a.val), a, -std::sin(a.val)); }
inline Var exp(const Var& a) {
  const double e = std::exp(a.val);
  return detail::unary(e, a, e);
}
inline Var log(const Var& a) { return detail::unary(std::log(a.val), a, 1.0 / a.val); }
inline Var abs(const Var& a) {
  return detail::unary(std::abs(a.val), a, a.val > 0.0 ? 1.0 : (a.val < 0.0 ? -1.0 : 0.0));
}
inline Var atan2(const Var& y, const Var& x) {
  const double r2 = x.val * x.val + y.val * y.val;
  return detail::binary(std::atan2(y.val, x.val), y, x.val / r2, x, -y.val / r2);
}
inline bool isfinite(const Var& a) { return std::isfinite(a.val); }

/// ReLU with derivative 0 at exactly 0.
template <typename T>
inline T relu(const T& x) {
  return x > T(0) ? x : T(0);
}

template <typename T>
inline T max_of(const T& a, const T& b) {
  return a >= b ? a : b;
}

/// Square with a single tape node.
inline double square(double x) { return x * x; }
inline Var square(const Var& a) { return detail::unary(a.val * a.val, a, 2.0 * a.val); }

template <typename T>
inline constexpr bool is_var_v = std::is_same_v<std::remove_cvref_t<T>, Var>;

}  // namespace fmba::ad

namespace Eigen {

template <>
struct NumTraits<fmba::ad::Var> : NumTraits<double> {
  using Real = fmba::ad::Var;
  using NonInteger = fmba::ad::Var;
  using Nested = fmba::ad::Var;
  using Literal = fmba::ad::Var;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 2,
    MulCost = 2
  };
  static fmba::ad::Var epsilon() { return fmba::ad::Var(NumTraits<double>::epsilon()); }
  static fmba::ad::Var dummy_precision() { return fmba::ad::Var(1e-12); }
  static fmba::ad::Var highest() { return fmba::ad::Var(NumTraits<double>::highest()); }
  static fmba::ad::Var lowest() { return fmba::ad::Var(NumTraits<double>::lowest()); }
  static int digits10() { return NumTraits<double>::digits10(); }
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<fmba::ad::Var, double, BinaryOp> {
  using ReturnType = fmba::ad::Var;
};
template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, fmba::ad::Var, BinaryOp> {
  using ReturnType = fmba::ad::Var;
};

}  // namespace Eigen

#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fmenets/errors.hpp"

namespace fmenets::ad {

// ---------------------------------------------------------------------------
// Second-order dual number: value plus first and second derivative with
// respect to a single seed direction. Propagation is exact Taylor arithmetic,
// e.g. (f*g)'' = f''g + 2f'g' + fg''.
// ---------------------------------------------------------------------------
template <class T>
struct Dual2 {
  T v{};
  T d{};
  T dd{};

  Dual2() = default;
  Dual2(T value) : v(value), d(T{}), dd(T{}) {}  // NOLINT: implicit lift
  Dual2(T value, T d1, T d2) : v(value), d(d1), dd(d2) {}

  static Dual2 seed(T value, T direction) { return Dual2(value, direction, T{}); }
};

template <class T>
Dual2<T> operator+(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.v + b.v, a.d + b.d, a.dd + b.dd};
}
template <class T>
Dual2<T> operator-(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.v - b.v, a.d - b.d, a.dd - b.dd};
}
template <class T>
Dual2<T> operator-(const Dual2<T>& a) {
  return {-a.v, -a.d, -a.dd};
}
template <class T>
Dual2<T> operator*(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d, a.dd * b.v + 2.0 * (a.d * b.d) + a.v * b.dd};
}
template <class T>
Dual2<T> operator/(const Dual2<T>& a, const Dual2<T>& b) {
  const T w = a.v / b.v;
  const T d = (a.d - w * b.d) / b.v;
  const T dd = (a.dd - 2.0 * (d * b.d) - w * b.dd) / b.v;
  return {w, d, dd};
}

// mixed dual/scalar arithmetic (scalar enters as a constant)
template <class T>
Dual2<T> operator+(const Dual2<T>& a, const T& c) {
  return {a.v + c, a.d, a.dd};
}
template <class T>
Dual2<T> operator+(const T& c, const Dual2<T>& a) {
  return a + c;
}
template <class T>
Dual2<T> operator-(const Dual2<T>& a, const T& c) {
  return {a.v - c, a.d, a.dd};
}
template <class T>
Dual2<T> operator-(const T& c, const Dual2<T>& a) {
  return {c - a.v, -a.d, -a.dd};
}
template <class T>
Dual2<T> operator*(const Dual2<T>& a, const T& c) {
  return {a.v * c, a.d * c, a.dd * c};
}
template <class T>
Dual2<T> operator*(const T& c, const Dual2<T>& a) {
  return a * c;
}
template <class T>
Dual2<T> operator/(const Dual2<T>& a, const T& c) {
  return {a.v / c, a.d / c, a.dd / c};
}

template <class T>
  requires(!std::same_as<T, double>)
Dual2<T> operator+(const Dual2<T>& a, double c) {
  return {a.v + c, a.d, a.dd};
}
template <class T>
  requires(!std::same_as<T, double>)
Dual2<T> operator+(double c, const Dual2<T>& a) {
  return {a.v + c, a.d, a.dd};
}
template <class T>
  requires(!std::same_as<T, double>)
Dual2<T> operator-(const Dual2<T>& a, double c) {
  return {a.v - c, a.d, a.dd};
}
template <class T>
  requires(!std::same_as<T, double>)
Dual2<T> operator-(double c, const Dual2<T>& a) {
  return {c - a.v, -a.d, -a.dd};
}
template <class T>
  requires(!std::same_as<T, double>)
Dual2<T> operator*(const Dual2<T>& a, double c) {
  return {a.v * c, a.d * c, a.dd * c};
}
template <class T>
  requires(!std::same_as<T, double>)
Dual2<T> operator*(double c, const Dual2<T>& a) {
  return {a.v * c, a.d * c, a.dd * c};
}
template <class T>
  requires(!std::same_as<T, double>)
Dual2<T> operator/(const Dual2<T>& a, double c) {
  return {a.v / c, a.d / c, a.dd / c};
}

template <class T>
Dual2<T> tanh(const Dual2<T>& a) {
  using std::tanh;
  const T t = tanh(a.v);
  const T s = 1.0 - t * t;  // sech^2
  return {t, s * a.d, s * a.dd - 2.0 * (t * (s * (a.d * a.d)))};
}
template <class T>
Dual2<T> exp(const Dual2<T>& a) {
  using std::exp;
  const T e = exp(a.v);
  return {e, e * a.d, e * (a.dd + a.d * a.d)};
}
template <class T>
Dual2<T> log(const Dual2<T>& a) {
  using std::log;
  const T d = a.d / a.v;
  return {log(a.v), d, a.dd / a.v - d * d};
}
template <class T>
Dual2<T> sqrt(const Dual2<T>& a) {
  using std::sqrt;
  const T s = sqrt(a.v);
  const T d = a.d / (2.0 * s);
  return {s, d, a.dd / (2.0 * s) - (d * d) / s};
}
template <class T>
Dual2<T> sin(const Dual2<T>& a) {
  using std::cos;
  using std::sin;
  const T sn = sin(a.v);
  const T cs = cos(a.v);
  return {sn, cs * a.d, cs * a.dd - sn * (a.d * a.d)};
}
template <class T>
Dual2<T> cos(const Dual2<T>& a) {
  using std::cos;
  using std::sin;
  const T sn = sin(a.v);
  const T cs = cos(a.v);
  return {cs, -sn * a.d, -sn * a.dd - cs * (a.d * a.d)};
}

// ---------------------------------------------------------------------------
// Reverse-mode tape over plain scalars. Every primitive has at most two
// arguments whose local partials are stored at record time; replaying the
// node list backward accumulates dL/dx for every variable.
// ---------------------------------------------------------------------------
class Tape;

struct Var {
  Tape* tape = nullptr;
  int idx = -1;
  double val = 0.0;

  Var() = default;
  Var(Tape* t, int i, double v) : tape(t), idx(i), val(v) {}
};

class Tape {
public:
  struct Node {
    double pa;
    double pb;
    int ia;
    int ib;
  };

  Var leaf(double value) {
    nodes_.push_back(Node{0.0, 0.0, -1, -1});
    return Var{this, static_cast<int>(nodes_.size()) - 1, value};
  }

  int record(double pa, int ia, double pb, int ib) {
    nodes_.push_back(Node{pa, pb, ia, ib});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  void clear() { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // Adjoint sweep seeded at `output`; adj[i] = d output / d node_i.
  void gradient(const Var& output, std::vector<double>& adj) const {
    if (!std::isfinite(output.val)) {
      throw NumericError("tape gradient: output is not finite");
    }
    adj.assign(nodes_.size(), 0.0);
    if (output.idx < 0) return;  // constant output: all-zero gradient
    adj[output.idx] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      const double a = adj[i];
      if (a == 0.0) continue;
      const Node& n = nodes_[i];
      if (n.ia >= 0) adj[n.ia] += n.pa * a;
      if (n.ib >= 0) adj[n.ib] += n.pb * a;
    }
  }

private:
  std::vector<Node> nodes_;
};

// A Var with a null tape (or idx -1) is a constant; results become constants
// when no operand carries a tape.
inline Var var_node(Tape* t, double val, double pa, int ia, double pb, int ib) {
  if (!t) return {nullptr, -1, val};
  return {t, t->record(pa, ia, pb, ib), val};
}
inline Var var_node(Tape* t, double val, double pa, int ia) {
  if (!t || ia < 0) return {nullptr, -1, val};
  return {t, t->record(pa, ia, 0.0, -1), val};
}
inline Tape* tape_of(const Var& a, const Var& b) { return a.tape ? a.tape : b.tape; }

inline Var operator+(const Var& a, const Var& b) {
  return var_node(tape_of(a, b), a.val + b.val, 1.0, a.idx, 1.0, b.idx);
}
inline Var operator-(const Var& a, const Var& b) {
  return var_node(tape_of(a, b), a.val - b.val, 1.0, a.idx, -1.0, b.idx);
}
inline Var operator*(const Var& a, const Var& b) {
  return var_node(tape_of(a, b), a.val * b.val, b.val, a.idx, a.val, b.idx);
}
inline Var operator/(const Var& a, const Var& b) {
  const double inv = 1.0 / b.val;
  return var_node(tape_of(a, b), a.val * inv, inv, a.idx, -a.val * inv * inv, b.idx);
}
// adding a constant reuses the node: the adjoint passes through unchanged
inline Var operator+(const Var& a, double c) { return {a.tape, a.idx, a.val + c}; }
inline Var operator+(double c, const Var& a) { return {a.tape, a.idx, a.val + c}; }
inline Var operator-(const Var& a, double c) { return {a.tape, a.idx, a.val - c}; }
inline Var operator-(double c, const Var& a) {
  return var_node(a.tape, c - a.val, -1.0, a.idx);
}
inline Var operator-(const Var& a) { return var_node(a.tape, -a.val, -1.0, a.idx); }
inline Var operator*(const Var& a, double c) {
  return var_node(a.tape, a.val * c, c, a.idx);
}
inline Var operator*(double c, const Var& a) { return a * c; }
inline Var operator/(const Var& a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, const Var& a) {
  const double inv = 1.0 / a.val;
  return var_node(a.tape, c * inv, -c * inv * inv, a.idx);
}

inline Var tanh(const Var& a) {
  const double t = std::tanh(a.val);
  return var_node(a.tape, t, 1.0 - t * t, a.idx);
}
inline Var exp(const Var& a) {
  const double e = std::exp(a.val);
  return var_node(a.tape, e, e, a.idx);
}
inline Var log(const Var& a) {
  return var_node(a.tape, std::log(a.val), 1.0 / a.val, a.idx);
}
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.val);
  return var_node(a.tape, s, 0.5 / s, a.idx);
}
inline Var sin(const Var& a) {
  return var_node(a.tape, std::sin(a.val), std::cos(a.val), a.idx);
}
inline Var cos(const Var& a) {
  return var_node(a.tape, std::cos(a.val), -std::sin(a.val), a.idx);
}

// Gradient of a scalar loss with respect to a flat parameter vector. The
// closure receives the parameters already registered on the tape, in order,
// and must return the loss as a Var recorded on the same tape.
inline std::vector<double> grad_params(
    const std::function<Var(Tape&, std::span<const Var>)>& loss_eval,
    std::span<const double> params) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (double p : params) vars.push_back(tape.leaf(p));
  const Var loss = loss_eval(tape, vars);
  if (!std::isfinite(loss.val)) {
    throw NumericError("grad_params: loss is not finite");
  }
  std::vector<double> adj;
  tape.gradient(loss, adj);
  std::vector<double> grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grad[i] = adj[i];
  return grad;
}

// ---------------------------------------------------------------------------
// Jet: fused value + first/second derivatives along both input axes (r,z).
// No mixed partial is tracked; the axisymmetric residuals never need it.
// ---------------------------------------------------------------------------
struct Jet {
  double v = 0.0;
  double dr = 0.0;
  double dz = 0.0;
  double drr = 0.0;
  double dzz = 0.0;

  Jet() = default;
  Jet(double value) : v(value) {}  // NOLINT: implicit constant lift
  Jet(double value, double r1, double z1, double r2, double z2)
      : v(value), dr(r1), dz(z1), drr(r2), dzz(z2) {}

  static Jet seed_r(double value) { return {value, 1.0, 0.0, 0.0, 0.0}; }
  static Jet seed_z(double value) { return {value, 0.0, 1.0, 0.0, 0.0}; }
};

inline Jet operator+(const Jet& a, const Jet& b) {
  return {a.v + b.v, a.dr + b.dr, a.dz + b.dz, a.drr + b.drr, a.dzz + b.dzz};
}
inline Jet operator-(const Jet& a, const Jet& b) {
  return {a.v - b.v, a.dr - b.dr, a.dz - b.dz, a.drr - b.drr, a.dzz - b.dzz};
}
inline Jet operator-(const Jet& a) { return {-a.v, -a.dr, -a.dz, -a.drr, -a.dzz}; }
inline Jet operator*(const Jet& a, const Jet& b) {
  return {a.v * b.v,
          a.dr * b.v + a.v * b.dr,
          a.dz * b.v + a.v * b.dz,
          a.drr * b.v + 2.0 * a.dr * b.dr + a.v * b.drr,
          a.dzz * b.v + 2.0 * a.dz * b.dz + a.v * b.dzz};
}
inline Jet operator*(const Jet& a, double c) {
  return {a.v * c, a.dr * c, a.dz * c, a.drr * c, a.dzz * c};
}
inline Jet operator*(double c, const Jet& a) { return a * c; }
inline Jet operator+(const Jet& a, double c) { return {a.v + c, a.dr, a.dz, a.drr, a.dzz}; }
inline Jet operator+(double c, const Jet& a) { return a + c; }
inline Jet operator-(const Jet& a, double c) { return {a.v - c, a.dr, a.dz, a.drr, a.dzz}; }
inline Jet operator-(double c, const Jet& a) { return -(a - c); }
inline Jet operator/(const Jet& a, double c) { return a * (1.0 / c); }

inline Jet tanh(const Jet& a) {
  const double t = std::tanh(a.v);
  const double s = 1.0 - t * t;
  return {t, s * a.dr, s * a.dz, s * a.drr - 2.0 * t * s * a.dr * a.dr,
          s * a.dzz - 2.0 * t * s * a.dz * a.dz};
}
inline Jet exp(const Jet& a) {
  const double e = std::exp(a.v);
  return {e, e * a.dr, e * a.dz, e * (a.drr + a.dr * a.dr), e * (a.dzz + a.dz * a.dz)};
}

// ---------------------------------------------------------------------------
// eval_with_input_derivs: forward-mode evaluation of a closure over (r,z),
// one second-order dual pass per axis.
// ---------------------------------------------------------------------------
template <class F>
std::vector<Jet> eval_with_input_derivs(F&& model_eval, double r, double z) {
  using D = Dual2<double>;
  const std::vector<D> pass_r = model_eval(D::seed(r, 1.0), D(z));
  const std::vector<D> pass_z = model_eval(D(r), D::seed(z, 1.0));
  if (pass_r.size() != pass_z.size()) {
    throw ConfigError("eval_with_input_derivs: inconsistent output arity");
  }
  std::vector<Jet> out(pass_r.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = Jet{pass_r[k].v, pass_r[k].d, pass_z[k].d, pass_r[k].dd, pass_z[k].dd};
    const Jet& j = out[k];
    if (!std::isfinite(j.v) || !std::isfinite(j.dr) || !std::isfinite(j.dz) ||
        !std::isfinite(j.drr) || !std::isfinite(j.dzz)) {
      throw NumericError("eval_with_input_derivs: non-finite derivative at (r=" +
                         std::to_string(r) + ", z=" + std::to_string(z) + ")");
    }
  }
  return out;
}

}  // namespace fmenets::ad

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fmenets/autodiff.hpp"
#include "fmenets/rng.hpp"

namespace fmenets::models {

using ad::Dual2;
using ad::Jet;

// ---------------------------------------------------------------------------
// Output transforms: how a raw network output becomes a physical quantity.
//   identity       y = raw
//   adf_wall       y = bc_value + phi(r) * raw,  phi(r) = (R^2 - r^2)/R^2
//                  (phi vanishes only at the wall, so the Dirichlet value is
//                  met exactly there)
//   bounded        y = lo + (hi-lo) * (1 + tanh(raw)) / 2, a smooth
//                  surjection onto (lo, hi) with midpoint at raw = 0
// ---------------------------------------------------------------------------
struct OutputTransform {
  enum class Kind { identity, adf_wall, bounded };

  Kind kind = Kind::identity;
  double lo = 0.0;        // bounded
  double hi = 0.0;        // bounded
  double radius = 0.5;    // adf_wall
  double bc_value = 0.0;  // adf_wall
  // fixed gain on the raw network output, so nets operate at O(1) even for
  // wide-range quantities (the pressure drop spans ~10 dimensionless units)
  double in_scale = 1.0;

  static OutputTransform identity(double in_scale = 1.0) {
    OutputTransform t;
    t.in_scale = in_scale;
    return t;
  }
  static OutputTransform adf(double bc_value, double radius, double in_scale = 1.0) {
    OutputTransform t;
    t.kind = Kind::adf_wall;
    t.bc_value = bc_value;
    t.radius = radius;
    t.in_scale = in_scale;
    return t;
  }
  static OutputTransform bounded(double lo, double hi);
};

double apply_output_transform(const OutputTransform& t, double raw, double r, double z);
Jet apply_output_transform_jet(const OutputTransform& t, const Jet& raw, double r);
// Accumulates the raw-output adjoint corresponding to a physical-output
// adjoint (transpose of the jet forward map).
void output_transform_vjp(const OutputTransform& t, const Jet& raw, double r,
                          const Jet& phys_adj, Jet& raw_adj);

template <class T>
Dual2<T> apply_output_transform(const OutputTransform& t, const Dual2<T>& raw_in,
                                const Dual2<T>& r) {
  using ad::tanh;
  const Dual2<T> raw = raw_in * t.in_scale;
  switch (t.kind) {
    case OutputTransform::Kind::identity:
      return raw;
    case OutputTransform::Kind::adf_wall: {
      const double inv_r2 = 1.0 / (t.radius * t.radius);
      const Dual2<T> phi = (t.radius * t.radius - r * r) * inv_r2;
      return phi * raw + t.bc_value;
    }
    case OutputTransform::Kind::bounded: {
      const double mid = 0.5 * (t.lo + t.hi);
      const double half = 0.5 * (t.hi - t.lo);
      return tanh(raw) * half + mid;
    }
  }
  return raw;
}

// T_0..T_degree at zeta; requires |zeta| <= 1 + 1e-12
void chebyshev_eval(int degree, double zeta, std::span<double> out);

// ---------------------------------------------------------------------------
// Representation models. Both expose:
//  - a plain forward pass,
//  - a jet forward pass (value + d/dr, d/dz, d2/dr2, d2/dz2) that stores the
//    intermediates needed by the analytic backward pass,
//  - a backward pass accumulating parameter gradients from output-jet
//    adjoints into a per-workspace buffer (folded into the flat layout at
//    batch end),
//  - a generic scalar-templated forward used by the tape/dual reference
//    paths in tests.
// Inputs are affinely mapped to [-1,1]^2 before the first layer.
// ---------------------------------------------------------------------------
enum class ModelKind { mlp, ckan };

struct InputScaling {
  double r_lo = 0.0, r_hi = 0.5;
  double z_lo = 0.0, z_hi = 12.984;
};

class ModelWorkspace {
public:
  virtual ~ModelWorkspace() = default;
  virtual void zero_grad() = 0;
};

class Model {
public:
  virtual ~Model() = default;
  virtual ModelKind kind() const = 0;
  virtual int n_outputs() const = 0;
  virtual int n_params() const = 0;
  virtual std::span<double> params() = 0;
  virtual std::span<const double> params() const = 0;
  // must be called after any parameter mutation, before evaluation
  virtual void refresh() = 0;
  virtual std::unique_ptr<ModelWorkspace> make_workspace() const = 0;
  virtual void eval(double r, double z, ModelWorkspace& ws, std::span<double> out) const = 0;
  virtual void eval_jet(double r, double z, ModelWorkspace& ws, std::span<Jet> out) const = 0;
  virtual void backward_jet(ModelWorkspace& ws, std::span<const Jet> out_adj) const = 0;
  // adds the workspace-accumulated gradient (chained through any
  // reparameterization) onto `grad`, then clears the accumulator
  virtual void fold_grad(ModelWorkspace& ws, std::span<double> grad) const = 0;
};

struct MlpLayer {
  int in = 0;
  int out = 0;
};

// Weight-normalized multilayer perceptron, tanh activations, linear head.
// With weight_norm on, each row of the effective weight matrix is
// W_j = g_j * v_j / ||v_j||; parameters per layer are [v, g, b].
class MlpModel final : public Model {
public:
  MlpModel(std::vector<int> layer_sizes, bool weight_norm, InputScaling scaling);

  void init_params(Rng& rng);

  ModelKind kind() const override { return ModelKind::mlp; }
  int n_outputs() const override { return layer_sizes_.back(); }
  int n_params() const override { return static_cast<int>(params_.size()); }
  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  void refresh() override;
  std::unique_ptr<ModelWorkspace> make_workspace() const override;
  void eval(double r, double z, ModelWorkspace& ws, std::span<double> out) const override;
  void eval_jet(double r, double z, ModelWorkspace& ws, std::span<Jet> out) const override;
  void backward_jet(ModelWorkspace& ws, std::span<const Jet> out_adj) const override;
  void fold_grad(ModelWorkspace& ws, std::span<double> grad) const override;

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  bool weight_norm() const { return weight_norm_; }
  const InputScaling& scaling() const { return scaling_; }
  // effective row-major weight matrix of layer l (after refresh)
  std::span<const double> effective_weights(int layer) const;

  template <class S, class G>
  void eval_generic(const S& r, const S& z, G&& param, std::span<S> out) const;

private:
  std::vector<int> layer_sizes_;
  bool weight_norm_;
  InputScaling scaling_;
  std::vector<double> params_;
  std::vector<int> layer_offset_;     // offset of each layer's params
  std::vector<double> w_eff_;         // effective weights, all layers packed
  std::vector<double> v_norm_;        // per row, weight_norm only
  std::vector<int> w_offset_;         // offset of each layer in w_eff_
  int n_layers() const { return static_cast<int>(layer_sizes_.size()) - 1; }
  friend class MlpWorkspace;
};

// Chebyshev Kolmogorov-Arnold network: every edge carries a univariate
// polynomial in the Chebyshev basis, evaluated on tanh-squashed inputs, and
// node outputs are plain sums over incoming edges.
class CkanModel final : public Model {
public:
  CkanModel(std::vector<int> widths, int degree, InputScaling scaling);

  void init_params(Rng& rng);

  ModelKind kind() const override { return ModelKind::ckan; }
  int n_outputs() const override { return widths_.back(); }
  int n_params() const override { return static_cast<int>(params_.size()); }
  std::span<double> params() override { return params_; }
  std::span<const double> params() const override { return params_; }
  void refresh() override {}
  std::unique_ptr<ModelWorkspace> make_workspace() const override;
  void eval(double r, double z, ModelWorkspace& ws, std::span<double> out) const override;
  void eval_jet(double r, double z, ModelWorkspace& ws, std::span<Jet> out) const override;
  void backward_jet(ModelWorkspace& ws, std::span<const Jet> out_adj) const override;
  void fold_grad(ModelWorkspace& ws, std::span<double> grad) const override;

  const std::vector<int>& widths() const { return widths_; }
  int degree() const { return degree_; }
  const InputScaling& scaling() const { return scaling_; }

  template <class S, class G>
  void eval_generic(const S& r, const S& z, G&& param, std::span<S> out) const;

private:
  std::vector<int> widths_;
  int degree_;
  InputScaling scaling_;
  std::vector<double> params_;
  std::vector<int> layer_offset_;
  // flat index of coefficient (layer l, out j, in i, order n)
  int coef_index(int l, int j, int i, int n) const {
    return layer_offset_[l] + ((j * widths_[l] + i) * (degree_ + 1)) + n;
  }
  friend class CkanWorkspace;
};

std::unique_ptr<Model> make_mlp(const std::vector<int>& hidden, int n_out, bool weight_norm,
                                InputScaling scaling, std::uint64_t seed);
std::unique_ptr<Model> make_ckan(const std::vector<int>& hidden_widths, int n_out, int degree,
                                 InputScaling scaling, std::uint64_t seed);

// ---------------------------------------------------------------------------
// generic scalar-templated forward passes (reference implementations)
// ---------------------------------------------------------------------------

template <class S, class G>
void MlpModel::eval_generic(const S& r, const S& z, G&& param, std::span<S> out) const {
  using ad::sqrt;
  using ad::tanh;
  using std::sqrt;
  using std::tanh;
  const double ar = 2.0 / (scaling_.r_hi - scaling_.r_lo);
  const double az = 2.0 / (scaling_.z_hi - scaling_.z_lo);
  std::vector<S> act;
  act.push_back(r * ar - (1.0 + ar * scaling_.r_lo));
  act.push_back(z * az - (1.0 + az * scaling_.z_lo));
  for (int l = 0; l < n_layers(); ++l) {
    const int in = layer_sizes_[l];
    const int on = layer_sizes_[l + 1];
    const int base = layer_offset_[l];
    std::vector<S> next;
    next.reserve(on);
    for (int j = 0; j < on; ++j) {
      if (weight_norm_) {
        auto norm2 = param(base + j * in) * param(base + j * in);
        for (int i = 1; i < in; ++i) {
          norm2 = norm2 + param(base + j * in + i) * param(base + j * in + i);
        }
        const auto scale = param(base + in * on + j) / sqrt(norm2);  // g / ||v||
        S pre = (scale * param(base + j * in)) * act[0];
        for (int i = 1; i < in; ++i) {
          pre = pre + (scale * param(base + j * in + i)) * act[i];
        }
        pre = pre + param(base + in * on + on + j);  // bias
        next.push_back(l + 1 == n_layers() ? pre : tanh(pre));
      } else {
        S pre = param(base + j * in) * act[0];
        for (int i = 1; i < in; ++i) {
          pre = pre + param(base + j * in + i) * act[i];
        }
        pre = pre + param(base + in * on + j);
        next.push_back(l + 1 == n_layers() ? pre : tanh(pre));
      }
    }
    act = std::move(next);
  }
  for (int j = 0; j < n_outputs(); ++j) out[j] = act[j];
}

template <class S, class G>
void CkanModel::eval_generic(const S& r, const S& z, G&& param, std::span<S> out) const {
  using ad::tanh;
  using std::tanh;
  const double ar = 2.0 / (scaling_.r_hi - scaling_.r_lo);
  const double az = 2.0 / (scaling_.z_hi - scaling_.z_lo);
  std::vector<S> act;
  act.push_back(r * ar - (1.0 + ar * scaling_.r_lo));
  act.push_back(z * az - (1.0 + az * scaling_.z_lo));
  const int nl = static_cast<int>(widths_.size()) - 1;
  std::vector<S> cheb;
  for (int l = 0; l < nl; ++l) {
    const int in = widths_[l];
    const int on = widths_[l + 1];
    // T_0..T_deg of tanh(act_i), all inputs packed
    cheb.assign(static_cast<std::size_t>(in) * (degree_ + 1), S{});
    for (int i = 0; i < in; ++i) {
      S* t = &cheb[static_cast<std::size_t>(i) * (degree_ + 1)];
      const S zeta = tanh(act[i]);
      t[0] = zeta * 0.0 + 1.0;
      if (degree_ >= 1) t[1] = zeta;
      for (int n = 2; n <= degree_; ++n) {
        t[n] = 2.0 * (zeta * t[n - 1]) - t[n - 2];
      }
    }
    std::vector<S> next;
    next.reserve(on);
    for (int j = 0; j < on; ++j) {
      S sum = param(coef_index(l, j, 0, 0)) * cheb[0];
      for (int i = 0; i < in; ++i) {
        const S* t = &cheb[static_cast<std::size_t>(i) * (degree_ + 1)];
        for (int n = (i == 0 ? 1 : 0); n <= degree_; ++n) {
          sum = sum + param(coef_index(l, j, i, n)) * t[n];
        }
      }
      next.push_back(sum);
    }
    act = std::move(next);
  }
  for (int j = 0; j < n_outputs(); ++j) out[j] = act[j];
}

}  // namespace fmenets::models

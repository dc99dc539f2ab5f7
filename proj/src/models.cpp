#include "fmenets/models.hpp"

#include <algorithm>
#include <cmath>

#include "fmenets/errors.hpp"

namespace fmenets::models {

namespace {

// accumulate a . b over all five jet slots
inline double dot5(const Jet& a, const Jet& b) {
  return a.v * b.v + a.dr * b.dr + a.dz * b.dz + a.drr * b.drr + a.dzz * b.dzz;
}

// transpose of c = a*b with respect to b (a held fixed)
inline void mul_vjp_b(const Jet& c_adj, const Jet& a, Jet& b_adj) {
  b_adj.v += c_adj.v * a.v + c_adj.dr * a.dr + c_adj.dz * a.dz + c_adj.drr * a.drr +
             c_adj.dzz * a.dzz;
  b_adj.dr += c_adj.dr * a.v + 2.0 * c_adj.drr * a.dr;
  b_adj.dz += c_adj.dz * a.v + 2.0 * c_adj.dzz * a.dz;
  b_adj.drr += c_adj.drr * a.v;
  b_adj.dzz += c_adj.dzz * a.v;
}

// transpose of h = tanh(p); h must be the stored forward output
inline void tanh_vjp(const Jet& p, const Jet& h, const Jet& h_adj, Jet& p_adj) {
  const double t = h.v;
  const double s = 1.0 - t * t;
  const double ts2 = -2.0 * t * s;
  const double w = s * s - 2.0 * t * t * s;  // d(t*s)/dv
  p_adj.v = h_adj.v * s + (h_adj.dr * p.dr + h_adj.dz * p.dz) * ts2 +
            h_adj.drr * (ts2 * p.drr - 2.0 * p.dr * p.dr * w) +
            h_adj.dzz * (ts2 * p.dzz - 2.0 * p.dz * p.dz * w);
  p_adj.dr = h_adj.dr * s + 2.0 * ts2 * p.dr * h_adj.drr;
  p_adj.dz = h_adj.dz * s + 2.0 * ts2 * p.dz * h_adj.dzz;
  p_adj.drr = h_adj.drr * s;
  p_adj.dzz = h_adj.dzz * s;
}

}  // namespace

// ---------------------------------------------------------------------------
// output transforms
// ---------------------------------------------------------------------------

OutputTransform OutputTransform::bounded(double lo, double hi) {
  if (!(lo < hi)) throw ConfigError("bounded transform requires lo < hi");
  OutputTransform t;
  t.kind = Kind::bounded;
  t.lo = lo;
  t.hi = hi;
  return t;
}

double apply_output_transform(const OutputTransform& t, double raw, double r, double /*z*/) {
  raw *= t.in_scale;
  switch (t.kind) {
    case OutputTransform::Kind::identity:
      return raw;
    case OutputTransform::Kind::adf_wall: {
      const double phi = (t.radius * t.radius - r * r) / (t.radius * t.radius);
      return t.bc_value + phi * raw;
    }
    case OutputTransform::Kind::bounded:
      return 0.5 * (t.lo + t.hi) + 0.5 * (t.hi - t.lo) * std::tanh(raw);
  }
  return raw;
}

Jet apply_output_transform_jet(const OutputTransform& t, const Jet& raw_in, double r) {
  const Jet raw = raw_in * t.in_scale;
  switch (t.kind) {
    case OutputTransform::Kind::identity:
      return raw;
    case OutputTransform::Kind::adf_wall: {
      const double inv = 1.0 / (t.radius * t.radius);
      const Jet phi{(t.radius * t.radius - r * r) * inv, -2.0 * r * inv, 0.0, -2.0 * inv, 0.0};
      return phi * raw + t.bc_value;
    }
    case OutputTransform::Kind::bounded:
      return 0.5 * (t.hi - t.lo) * ad::tanh(raw) + 0.5 * (t.lo + t.hi);
  }
  return raw;
}

void output_transform_vjp(const OutputTransform& t, const Jet& raw_in, double r,
                          const Jet& phys_adj, Jet& raw_adj) {
  const double s = t.in_scale;
  const Jet raw = raw_in * s;
  switch (t.kind) {
    case OutputTransform::Kind::identity:
      raw_adj.v += s * phys_adj.v;
      raw_adj.dr += s * phys_adj.dr;
      raw_adj.dz += s * phys_adj.dz;
      raw_adj.drr += s * phys_adj.drr;
      raw_adj.dzz += s * phys_adj.dzz;
      return;
    case OutputTransform::Kind::adf_wall: {
      const double inv = 1.0 / (t.radius * t.radius);
      const Jet phi{s * (t.radius * t.radius - r * r) * inv, s * -2.0 * r * inv, 0.0,
                    s * -2.0 * inv, 0.0};
      mul_vjp_b(phys_adj, phi, raw_adj);
      return;
    }
    case OutputTransform::Kind::bounded: {
      const double half = s * 0.5 * (t.hi - t.lo);
      const Jet th = ad::tanh(raw);
      const Jet scaled{phys_adj.v * half, phys_adj.dr * half, phys_adj.dz * half,
                       phys_adj.drr * half, phys_adj.dzz * half};
      Jet tmp;
      tanh_vjp(raw, th, scaled, tmp);
      raw_adj.v += tmp.v;
      raw_adj.dr += tmp.dr;
      raw_adj.dz += tmp.dz;
      raw_adj.drr += tmp.drr;
      raw_adj.dzz += tmp.dzz;
      return;
    }
  }
}

void chebyshev_eval(int degree, double zeta, std::span<double> out) {
  if (degree < 0 || static_cast<int>(out.size()) < degree + 1) {
    throw ConfigError("chebyshev_eval: output buffer too small");
  }
  if (std::abs(zeta) > 1.0 + 1e-12) {
    throw std::domain_error("chebyshev_eval: |zeta| > 1");
  }
  out[0] = 1.0;
  if (degree >= 1) out[1] = zeta;
  for (int n = 2; n <= degree; ++n) {
    out[n] = 2.0 * zeta * out[n - 1] - out[n - 2];
  }
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

class MlpWorkspace final : public ModelWorkspace {
public:
  explicit MlpWorkspace(const MlpModel& m) {
    const int nl = static_cast<int>(m.layer_sizes_.size()) - 1;
    act.resize(nl + 1);
    pre.resize(nl);
    act[0].resize(m.layer_sizes_[0]);
    int maxw = 0;
    for (int l = 0; l < nl; ++l) {
      pre[l].resize(m.layer_sizes_[l + 1]);
      act[l + 1].resize(m.layer_sizes_[l + 1]);
      maxw = std::max(maxw, m.layer_sizes_[l]);
      maxw = std::max(maxw, m.layer_sizes_[l + 1]);
    }
    adj_a.resize(maxw);
    adj_b.resize(maxw);
    val_a.resize(maxw);
    val_b.resize(maxw);
    wbar.assign(m.w_eff_.size(), 0.0);
    int rows = 0;
    for (int l = 0; l < nl; ++l) rows += m.layer_sizes_[l + 1];
    bbar.assign(rows, 0.0);
  }

  void zero_grad() override {
    std::fill(wbar.begin(), wbar.end(), 0.0);
    std::fill(bbar.begin(), bbar.end(), 0.0);
  }

  std::vector<std::vector<Jet>> act;  // act[0] = scaled input
  std::vector<std::vector<Jet>> pre;
  std::vector<Jet> adj_a, adj_b;
  std::vector<double> val_a, val_b;
  std::vector<double> wbar;  // packed like w_eff_
  std::vector<double> bbar;  // packed rows over layers
};

MlpModel::MlpModel(std::vector<int> layer_sizes, bool weight_norm, InputScaling scaling)
    : layer_sizes_(std::move(layer_sizes)), weight_norm_(weight_norm), scaling_(scaling) {
  if (layer_sizes_.size() < 2 || layer_sizes_.front() != 2) {
    throw ConfigError("MlpModel: layer sizes must start at 2 inputs");
  }
  for (int s : layer_sizes_) {
    if (s <= 0) throw ConfigError("MlpModel: layer sizes must be positive");
  }
  int off = 0, woff = 0;
  for (int l = 0; l + 1 < static_cast<int>(layer_sizes_.size()); ++l) {
    layer_offset_.push_back(off);
    w_offset_.push_back(woff);
    const int in = layer_sizes_[l], on = layer_sizes_[l + 1];
    off += weight_norm_ ? in * on + 2 * on : in * on + on;
    woff += in * on;
  }
  params_.assign(off, 0.0);
  w_eff_.assign(woff, 0.0);
  int rows = 0;
  for (int l = 0; l + 1 < static_cast<int>(layer_sizes_.size()); ++l) rows += layer_sizes_[l + 1];
  v_norm_.assign(rows, 0.0);
}

void MlpModel::init_params(Rng& rng) {
  for (int l = 0; l < n_layers(); ++l) {
    const int in = layer_sizes_[l], on = layer_sizes_[l + 1];
    const int base = layer_offset_[l];
    const double s = std::sqrt(6.0 / (in + on));
    for (int j = 0; j < on; ++j) {
      double norm2 = 0.0;
      for (int i = 0; i < in; ++i) {
        const double w = rng.uniform(-s, s);
        params_[base + j * in + i] = w;
        norm2 += w * w;
      }
      if (weight_norm_) {
        params_[base + in * on + j] = std::sqrt(norm2);  // g = ||v||, so W = v at init
        params_[base + in * on + on + j] = 0.0;
      } else {
        params_[base + in * on + j] = 0.0;
      }
    }
  }
  refresh();
}

void MlpModel::refresh() {
  int row = 0;
  for (int l = 0; l < n_layers(); ++l) {
    const int in = layer_sizes_[l], on = layer_sizes_[l + 1];
    const int base = layer_offset_[l];
    for (int j = 0; j < on; ++j, ++row) {
      if (weight_norm_) {
        double norm2 = 0.0;
        for (int i = 0; i < in; ++i) {
          const double v = params_[base + j * in + i];
          norm2 += v * v;
        }
        const double norm = std::sqrt(norm2);
        v_norm_[row] = norm;
        const double scale = params_[base + in * on + j] / norm;
        for (int i = 0; i < in; ++i) {
          w_eff_[w_offset_[l] + j * in + i] = scale * params_[base + j * in + i];
        }
      } else {
        for (int i = 0; i < in; ++i) {
          w_eff_[w_offset_[l] + j * in + i] = params_[base + j * in + i];
        }
      }
    }
  }
}

std::span<const double> MlpModel::effective_weights(int layer) const {
  const int in = layer_sizes_[layer], on = layer_sizes_[layer + 1];
  return {w_eff_.data() + w_offset_[layer], static_cast<std::size_t>(in) * on};
}

std::unique_ptr<ModelWorkspace> MlpModel::make_workspace() const {
  return std::make_unique<MlpWorkspace>(*this);
}

void MlpModel::eval(double r, double z, ModelWorkspace& wsb, std::span<double> out) const {
  auto& ws = static_cast<MlpWorkspace&>(wsb);
  const double ar = 2.0 / (scaling_.r_hi - scaling_.r_lo);
  const double az = 2.0 / (scaling_.z_hi - scaling_.z_lo);
  double* cur = ws.val_a.data();
  double* nxt = ws.val_b.data();
  cur[0] = ar * (r - scaling_.r_lo) - 1.0;
  cur[1] = az * (z - scaling_.z_lo) - 1.0;
  for (int l = 0; l < n_layers(); ++l) {
    const int in = layer_sizes_[l], on = layer_sizes_[l + 1];
    const double* w = w_eff_.data() + w_offset_[l];
    const double* b = params_.data() + layer_offset_[l] +
                      (weight_norm_ ? in * on + on : in * on);
    const bool last = (l + 1 == n_layers());
    for (int j = 0; j < on; ++j) {
      double s = b[j];
      const double* wj = w + j * in;
      for (int i = 0; i < in; ++i) s += wj[i] * cur[i];
      nxt[j] = last ? s : std::tanh(s);
    }
    std::swap(cur, nxt);
  }
  for (int j = 0; j < n_outputs(); ++j) out[j] = cur[j];
}

void MlpModel::eval_jet(double r, double z, ModelWorkspace& wsb, std::span<Jet> out) const {
  auto& ws = static_cast<MlpWorkspace&>(wsb);
  const double ar = 2.0 / (scaling_.r_hi - scaling_.r_lo);
  const double az = 2.0 / (scaling_.z_hi - scaling_.z_lo);
  ws.act[0][0] = Jet{ar * (r - scaling_.r_lo) - 1.0, ar, 0.0, 0.0, 0.0};
  ws.act[0][1] = Jet{az * (z - scaling_.z_lo) - 1.0, 0.0, az, 0.0, 0.0};
  for (int l = 0; l < n_layers(); ++l) {
    const int in = layer_sizes_[l], on = layer_sizes_[l + 1];
    const double* w = w_eff_.data() + w_offset_[l];
    const double* b = params_.data() + layer_offset_[l] +
                      (weight_norm_ ? in * on + on : in * on);
    const std::vector<Jet>& x = ws.act[l];
    const bool last = (l + 1 == n_layers());
    for (int j = 0; j < on; ++j) {
      Jet p{b[j], 0.0, 0.0, 0.0, 0.0};
      const double* wj = w + j * in;
      for (int i = 0; i < in; ++i) {
        const double wji = wj[i];
        p.v += wji * x[i].v;
        p.dr += wji * x[i].dr;
        p.dz += wji * x[i].dz;
        p.drr += wji * x[i].drr;
        p.dzz += wji * x[i].dzz;
      }
      ws.pre[l][j] = p;
      ws.act[l + 1][j] = last ? p : ad::tanh(p);
    }
  }
  const auto& top = ws.act[n_layers()];
  for (int j = 0; j < n_outputs(); ++j) out[j] = top[j];
}

void MlpModel::backward_jet(ModelWorkspace& wsb, std::span<const Jet> out_adj) const {
  auto& ws = static_cast<MlpWorkspace&>(wsb);
  Jet* cur = ws.adj_a.data();
  Jet* nxt = ws.adj_b.data();
  for (int j = 0; j < n_outputs(); ++j) cur[j] = out_adj[j];
  int brow = static_cast<int>(ws.bbar.size());
  for (int l = n_layers() - 1; l >= 0; --l) {
    const int in = layer_sizes_[l], on = layer_sizes_[l + 1];
    const bool last = (l + 1 == n_layers());
    brow -= on;
    // through the activation
    if (!last) {
      for (int j = 0; j < on; ++j) {
        Jet pa;
        tanh_vjp(ws.pre[l][j], ws.act[l + 1][j], cur[j], pa);
        cur[j] = pa;
      }
    }
    // linear part: accumulate wbar/bbar, push adjoint to inputs
    const std::vector<Jet>& x = ws.act[l];
    double* wb = ws.wbar.data() + w_offset_[l];
    for (int i = 0; i < in; ++i) nxt[i] = Jet{};
    const double* w = w_eff_.data() + w_offset_[l];
    for (int j = 0; j < on; ++j) {
      const Jet& d = cur[j];
      ws.bbar[brow + j] += d.v;
      double* wbj = wb + j * in;
      const double* wj = w + j * in;
      for (int i = 0; i < in; ++i) {
        wbj[i] += dot5(d, x[i]);
        Jet& xi = nxt[i];
        const double wji = wj[i];
        xi.v += wji * d.v;
        xi.dr += wji * d.dr;
        xi.dz += wji * d.dz;
        xi.drr += wji * d.drr;
        xi.dzz += wji * d.dzz;
      }
    }
    std::swap(cur, nxt);
  }
}

void MlpModel::fold_grad(ModelWorkspace& wsb, std::span<double> grad) const {
  auto& ws = static_cast<MlpWorkspace&>(wsb);
  int row = 0;
  for (int l = 0; l < n_layers(); ++l) {
    const int in = layer_sizes_[l], on = layer_sizes_[l + 1];
    const int base = layer_offset_[l];
    const double* wb = ws.wbar.data() + w_offset_[l];
    for (int j = 0; j < on; ++j, ++row) {
      if (weight_norm_) {
        const double g = params_[base + in * on + j];
        const double norm = v_norm_[row];
        double wv = 0.0;
        for (int i = 0; i < in; ++i) wv += wb[j * in + i] * params_[base + j * in + i];
        grad[base + in * on + j] += wv / norm;  // dL/dg
        const double gn = g / norm;
        const double proj = wv / (norm * norm);
        for (int i = 0; i < in; ++i) {
          grad[base + j * in + i] += gn * (wb[j * in + i] - proj * params_[base + j * in + i]);
        }
        grad[base + in * on + on + j] += ws.bbar[row];
      } else {
        for (int i = 0; i < in; ++i) grad[base + j * in + i] += wb[j * in + i];
        grad[base + in * on + j] += ws.bbar[row];
      }
    }
  }
  ws.zero_grad();
}

// ---------------------------------------------------------------------------
// cKAN
// ---------------------------------------------------------------------------

class CkanWorkspace final : public ModelWorkspace {
public:
  explicit CkanWorkspace(const CkanModel& m) {
    const int nl = static_cast<int>(m.widths_.size()) - 1;
    const int deg = m.degree_;
    a.resize(nl + 1);
    zeta.resize(nl);
    cheb.resize(nl);
    a[0].resize(m.widths_[0]);
    int maxw = 0;
    for (int l = 0; l < nl; ++l) {
      a[l + 1].resize(m.widths_[l + 1]);
      zeta[l].resize(m.widths_[l]);
      cheb[l].resize(static_cast<std::size_t>(m.widths_[l]) * (deg + 1));
      maxw = std::max({maxw, m.widths_[l], m.widths_[l + 1]});
    }
    adj_a.resize(maxw);
    adj_b.resize(maxw);
    tbar.resize(static_cast<std::size_t>(maxw) * (deg + 1));
    val_a.resize(maxw);
    val_b.resize(maxw);
    val_cheb.resize(static_cast<std::size_t>(maxw) * (deg + 1));
    cbar.assign(m.params_.size(), 0.0);
  }

  void zero_grad() override { std::fill(cbar.begin(), cbar.end(), 0.0); }

  std::vector<std::vector<Jet>> a;     // node activations per layer
  std::vector<std::vector<Jet>> zeta;  // tanh-squashed activations
  std::vector<std::vector<Jet>> cheb;  // Chebyshev values per (input, order)
  std::vector<Jet> adj_a, adj_b, tbar;
  std::vector<double> val_a, val_b, val_cheb;
  std::vector<double> cbar;
};

CkanModel::CkanModel(std::vector<int> widths, int degree, InputScaling scaling)
    : widths_(std::move(widths)), degree_(degree), scaling_(scaling) {
  if (widths_.size() < 2 || widths_.front() != 2) {
    throw ConfigError("CkanModel: widths must start at 2 inputs");
  }
  if (degree_ < 1) throw ConfigError("CkanModel: polynomial degree must be >= 1");
  for (int w : widths_) {
    if (w <= 0) throw ConfigError("CkanModel: widths must be positive");
  }
  int off = 0;
  for (int l = 0; l + 1 < static_cast<int>(widths_.size()); ++l) {
    layer_offset_.push_back(off);
    off += widths_[l] * widths_[l + 1] * (degree_ + 1);
  }
  params_.assign(off, 0.0);
}

void CkanModel::init_params(Rng& rng) {
  const int nl = static_cast<int>(widths_.size()) - 1;
  for (int l = 0; l < nl; ++l) {
    const double sigma = 1.0 / std::sqrt(static_cast<double>(widths_[l]) * (degree_ + 1));
    const int count = widths_[l] * widths_[l + 1] * (degree_ + 1);
    for (int k = 0; k < count; ++k) params_[layer_offset_[l] + k] = sigma * rng.gaussian();
  }
}

std::unique_ptr<ModelWorkspace> CkanModel::make_workspace() const {
  return std::make_unique<CkanWorkspace>(*this);
}

void CkanModel::eval(double r, double z, ModelWorkspace& wsb, std::span<double> out) const {
  auto& ws = static_cast<CkanWorkspace&>(wsb);
  const double ar = 2.0 / (scaling_.r_hi - scaling_.r_lo);
  const double az = 2.0 / (scaling_.z_hi - scaling_.z_lo);
  double* cur = ws.val_a.data();
  double* nxt = ws.val_b.data();
  cur[0] = ar * (r - scaling_.r_lo) - 1.0;
  cur[1] = az * (z - scaling_.z_lo) - 1.0;
  const int nl = static_cast<int>(widths_.size()) - 1;
  for (int l = 0; l < nl; ++l) {
    const int in = widths_[l], on = widths_[l + 1];
    for (int i = 0; i < in; ++i) {
      const double zt = std::tanh(cur[i]);
      double* t = ws.val_cheb.data() + static_cast<std::size_t>(i) * (degree_ + 1);
      t[0] = 1.0;
      t[1] = zt;
      for (int n = 2; n <= degree_; ++n) t[n] = 2.0 * zt * t[n - 1] - t[n - 2];
    }
    const double* c = params_.data() + layer_offset_[l];
    for (int j = 0; j < on; ++j) {
      double s = 0.0;
      for (int i = 0; i < in; ++i) {
        const double* t = ws.val_cheb.data() + static_cast<std::size_t>(i) * (degree_ + 1);
        const double* cj = c + ((j * in + i) * (degree_ + 1));
        for (int n = 0; n <= degree_; ++n) s += cj[n] * t[n];
      }
      nxt[j] = s;
    }
    std::swap(cur, nxt);
  }
  for (int j = 0; j < n_outputs(); ++j) out[j] = cur[j];
}

void CkanModel::eval_jet(double r, double z, ModelWorkspace& wsb, std::span<Jet> out) const {
  auto& ws = static_cast<CkanWorkspace&>(wsb);
  const double ar = 2.0 / (scaling_.r_hi - scaling_.r_lo);
  const double az = 2.0 / (scaling_.z_hi - scaling_.z_lo);
  ws.a[0][0] = Jet{ar * (r - scaling_.r_lo) - 1.0, ar, 0.0, 0.0, 0.0};
  ws.a[0][1] = Jet{az * (z - scaling_.z_lo) - 1.0, 0.0, az, 0.0, 0.0};
  const int nl = static_cast<int>(widths_.size()) - 1;
  for (int l = 0; l < nl; ++l) {
    const int in = widths_[l], on = widths_[l + 1];
    for (int i = 0; i < in; ++i) {
      const Jet zt = ad::tanh(ws.a[l][i]);
      ws.zeta[l][i] = zt;
      Jet* t = ws.cheb[l].data() + static_cast<std::size_t>(i) * (degree_ + 1);
      t[0] = Jet{1.0, 0.0, 0.0, 0.0, 0.0};
      t[1] = zt;
      for (int n = 2; n <= degree_; ++n) t[n] = 2.0 * (zt * t[n - 1]) - t[n - 2];
    }
    const double* c = params_.data() + layer_offset_[l];
    for (int j = 0; j < on; ++j) {
      Jet s{};
      for (int i = 0; i < in; ++i) {
        const Jet* t = ws.cheb[l].data() + static_cast<std::size_t>(i) * (degree_ + 1);
        const double* cj = c + ((j * in + i) * (degree_ + 1));
        for (int n = 0; n <= degree_; ++n) {
          const double cn = cj[n];
          s.v += cn * t[n].v;
          s.dr += cn * t[n].dr;
          s.dz += cn * t[n].dz;
          s.drr += cn * t[n].drr;
          s.dzz += cn * t[n].dzz;
        }
      }
      ws.a[l + 1][j] = s;
    }
  }
  for (int j = 0; j < n_outputs(); ++j) out[j] = ws.a[nl][j];
}

void CkanModel::backward_jet(ModelWorkspace& wsb, std::span<const Jet> out_adj) const {
  auto& ws = static_cast<CkanWorkspace&>(wsb);
  const int nl = static_cast<int>(widths_.size()) - 1;
  Jet* ybar = ws.adj_a.data();
  Jet* abar = ws.adj_b.data();
  for (int j = 0; j < n_outputs(); ++j) ybar[j] = out_adj[j];
  for (int l = nl - 1; l >= 0; --l) {
    const int in = widths_[l], on = widths_[l + 1];
    const double* c = params_.data() + layer_offset_[l];
    double* cb = ws.cbar.data() + layer_offset_[l];
    Jet* tbar = ws.tbar.data();
    for (int i = 0; i < in * (degree_ + 1); ++i) tbar[i] = Jet{};
    for (int j = 0; j < on; ++j) {
      const Jet& d = ybar[j];
      for (int i = 0; i < in; ++i) {
        const Jet* t = ws.cheb[l].data() + static_cast<std::size_t>(i) * (degree_ + 1);
        const double* cj = c + ((j * in + i) * (degree_ + 1));
        double* cbj = cb + ((j * in + i) * (degree_ + 1));
        Jet* tb = tbar + static_cast<std::size_t>(i) * (degree_ + 1);
        for (int n = 0; n <= degree_; ++n) {
          cbj[n] += dot5(d, t[n]);
          const double cn = cj[n];
          tb[n].v += cn * d.v;
          tb[n].dr += cn * d.dr;
          tb[n].dz += cn * d.dz;
          tb[n].drr += cn * d.drr;
          tb[n].dzz += cn * d.dzz;
        }
      }
    }
    // reverse the Chebyshev recursion and the tanh squash
    for (int i = 0; i < in; ++i) {
      Jet* tb = tbar + static_cast<std::size_t>(i) * (degree_ + 1);
      const Jet* t = ws.cheb[l].data() + static_cast<std::size_t>(i) * (degree_ + 1);
      const Jet& zt = ws.zeta[l][i];
      Jet zbar{};
      for (int n = degree_; n >= 2; --n) {
        // T_n = 2 zeta T_{n-1} - T_{n-2}
        const Jet cadj = 2.0 * tb[n];
        mul_vjp_b(cadj, t[n - 1], zbar);      // d/d zeta
        mul_vjp_b(cadj, zt, tb[n - 1]);       // d/d T_{n-1}
        tb[n - 2] = tb[n - 2] - tb[n];
      }
      zbar = zbar + tb[1];
      Jet ab;
      tanh_vjp(ws.a[l][i], zt, zbar, ab);
      abar[i] = ab;
    }
    std::swap(ybar, abar);
  }
}

void CkanModel::fold_grad(ModelWorkspace& wsb, std::span<double> grad) const {
  auto& ws = static_cast<CkanWorkspace&>(wsb);
  for (std::size_t k = 0; k < ws.cbar.size(); ++k) grad[k] += ws.cbar[k];
  ws.zero_grad();
}

// ---------------------------------------------------------------------------
// factories
// ---------------------------------------------------------------------------

std::unique_ptr<Model> make_mlp(const std::vector<int>& hidden, int n_out, bool weight_norm,
                                InputScaling scaling, std::uint64_t seed) {
  std::vector<int> sizes;
  sizes.push_back(2);
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(n_out);
  auto m = std::make_unique<MlpModel>(sizes, weight_norm, scaling);
  Rng rng(seed);
  m->init_params(rng);
  return m;
}

std::unique_ptr<Model> make_ckan(const std::vector<int>& hidden_widths, int n_out, int degree,
                                 InputScaling scaling, std::uint64_t seed) {
  std::vector<int> widths;
  widths.push_back(2);
  widths.insert(widths.end(), hidden_widths.begin(), hidden_widths.end());
  widths.push_back(n_out);
  auto m = std::make_unique<CkanModel>(widths, degree, scaling);
  Rng rng(seed);
  m->init_params(rng);
  return m;
}

}  // namespace fmenets::models

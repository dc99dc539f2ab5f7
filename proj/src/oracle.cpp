#include "fmenets/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "fmenets/errors.hpp"
#include "fmenets/rng.hpp"

namespace fmenets::oracle {

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// analytic flow
// ---------------------------------------------------------------------------

double poiseuille_u(const ReactorCase& rc, double r) {
  const double q = r / rc.radius;
  return 2.0 * (1.0 - q * q);
}

double poiseuille_p(const ReactorCase& rc, double z) {
  return 32.0 / rc.groups.re * (rc.length - z);
}

FieldGrid analytic_poiseuille(const ReactorCase& rc, int nr_cells, int nz_cells) {
  FieldGrid g;
  g.case_id = rc.case_id;
  g.nr_cells = nr_cells;
  g.nz_cells = nz_cells;
  g.radius = rc.radius;
  g.length = rc.length;
  g.variables = {"u", "v", "p"};
  const int nr = g.nr_nodes(), nz = g.nz_nodes();
  std::vector<double> u(static_cast<std::size_t>(nr) * nz), v(u.size()), p(u.size());
  for (int j = 0; j < nz; ++j) {
    for (int i = 0; i < nr; ++i) {
      const std::size_t k = static_cast<std::size_t>(j) * nr + i;
      u[k] = poiseuille_u(rc, g.r(i));
      v[k] = 0.0;
      p[k] = poiseuille_p(rc, g.z(j));
    }
  }
  g.fields["u"] = std::move(u);
  g.fields["v"] = std::move(v);
  g.fields["p"] = std::move(p);
  return g;
}

double FieldGrid::sample(const std::string& var, double rr, double zz) const {
  const double tol = 1e-9;
  if (rr < -tol || rr > radius + tol || zz < -tol || zz > length + tol) {
    throw std::domain_error("FieldGrid::sample: point outside grid");
  }
  rr = std::clamp(rr, 0.0, radius);
  zz = std::clamp(zz, 0.0, length);
  const double fr = rr / radius * nr_cells;
  const double fz = zz / length * nz_cells;
  const int i0 = std::min(static_cast<int>(fr), nr_cells - 1);
  const int j0 = std::min(static_cast<int>(fz), nz_cells - 1);
  const double wr = fr - i0, wz = fz - j0;
  const auto& f = fields.at(var);
  const int nr = nr_nodes();
  const auto v = [&](int i, int j) { return f[static_cast<std::size_t>(j) * nr + i]; };
  return (1 - wr) * (1 - wz) * v(i0, j0) + wr * (1 - wz) * v(i0 + 1, j0) +
         (1 - wr) * wz * v(i0, j0 + 1) + wr * wz * v(i0 + 1, j0 + 1);
}

std::string SolverConfig::hash() const {
  json j;
  j["nr_cells"] = nr_cells;
  j["nz_cells"] = nz_cells;
  j["newton_tol"] = newton_tol;
  j["max_newton"] = max_newton;
  j["continuation_steps"] = continuation_steps;
  j["krylov_tol"] = krylov_tol;
  j["max_krylov"] = max_krylov;
  j["advection"] = advection;
  const std::string s = j.dump();
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
  return buf;
}

// ---------------------------------------------------------------------------
// small dense LU with partial pivoting (blocks are at most 7x7)
// ---------------------------------------------------------------------------
namespace {

constexpr int kMaxFields = 8;

void lu_factor(double* a, int* piv, int n) {
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::abs(a[k * n + k]);
    for (int i = k + 1; i < n; ++i) {
      const double m = std::abs(a[i * n + k]);
      if (m > best) {
        best = m;
        p = i;
      }
    }
    piv[k] = p;
    if (p != k) {
      for (int c = 0; c < n; ++c) std::swap(a[k * n + c], a[p * n + c]);
    }
    const double d = a[k * n + k];
    if (d == 0.0) throw NumericError("oracle: singular block in line factorization");
    const double inv = 1.0 / d;
    for (int i = k + 1; i < n; ++i) {
      const double m = a[i * n + k] * inv;
      a[i * n + k] = m;
      for (int c = k + 1; c < n; ++c) a[i * n + c] -= m * a[k * n + c];
    }
  }
}

void lu_solve(const double* a, const int* piv, int n, double* b) {
  for (int k = 0; k < n; ++k) {
    if (piv[k] != k) std::swap(b[k], b[piv[k]]);
    for (int i = k + 1; i < n; ++i) b[i] -= a[i * n + k] * b[k];
  }
  for (int k = n - 1; k >= 0; --k) {
    for (int c = k + 1; c < n; ++c) b[k] -= a[k * n + c] * b[c];
    b[k] /= a[k * n + k];
  }
}

// B := A * inv(LU) given LU factors of the right operand; done column-wise on A^T
void right_multiply_inverse(const double* lu, const int* piv, int n, const double* a,
                            double* out) {
  // solve X * LU = A  <=>  LU^T X^T = A^T; use LU^T solves per row instead:
  // we instead compute X = A * inv by solving inv columns. inv column c:
  double col[kMaxFields];
  double inv[kMaxFields * kMaxFields];
  for (int c = 0; c < n; ++c) {
    for (int i = 0; i < n; ++i) col[i] = (i == c) ? 1.0 : 0.0;
    lu_solve(lu, piv, n, col);
    for (int i = 0; i < n; ++i) inv[i * n + c] = col[i];
  }
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < n; ++c) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += a[i * n + k] * inv[k * n + c];
      out[i * n + c] = s;
    }
  }
}

// ---------------------------------------------------------------------------
// the transport solver
// ---------------------------------------------------------------------------

class TransportSolver {
public:
  TransportSolver(const ReactorCase& rc, const SolverConfig& cfg)
      : rc_(rc), cfg_(cfg), ns_(rc.n_species()), m_(ns_ + 1) {
    if (m_ > kMaxFields) throw ConfigError("oracle: too many species");
    nr_ = cfg.nr_cells + 1;
    nz_ = cfg.nz_cells + 1;
    if (nr_ < 4 || nz_ < 4) throw ConfigError("oracle: grid too coarse");
    dr_ = rc.radius / cfg.nr_cells;
    dz_ = rc.length / cfg.nz_cells;
    n_ = static_cast<std::size_t>(nr_) * nz_ * m_;
    r_.resize(nr_);
    u_.resize(nr_);
    for (int i = 0; i < nr_; ++i) {
      r_[i] = dr_ * i;
      u_[i] = poiseuille_u(rc, r_[i]);
    }
    cdiag_.resize(n_);
    crm_.resize(n_);
    crp_.resize(n_);
    czm_.resize(n_);
    czp_.resize(n_);
    crm2_.resize(n_);
    czm2_.resize(n_);
    bcvec_.resize(n_);
    dirichlet_.resize(n_);
    blocks_.resize(static_cast<std::size_t>(nr_) * nz_ * m_ * m_);
    dlu_.resize(blocks_.size());
    elim_.resize(blocks_.size());
    elim2_.resize(static_cast<std::size_t>(nz_) * m_ * m_);
    piv_.resize(n_);
    build_stencil(false);
  }

  void solve(std::vector<double>& x, SolveStats& stats);

  std::size_t n_unknowns() const { return n_; }
  int nr() const { return nr_; }
  int nz() const { return nz_; }

  std::size_t idx(int i, int j, int f) const {
    return (static_cast<std::size_t>(j) * nr_ + i) * m_ + f;
  }

private:
  void build_stencil(bool upwind);
  void add_rates(const std::vector<double>& x, double s, std::vector<double>& F) const;
  void residual(const std::vector<double>& x, double s, std::vector<double>& F) const;
  void build_blocks(const std::vector<double>& x, double s);
  void matvec(const std::vector<double>& v, std::vector<double>& y) const;
  void factor_lines();
  void precond(const std::vector<double>& rhs, std::vector<double>& y) const;
  void line_solve(int j, double* q) const;
  int bicgstab(const std::vector<double>& rhs, std::vector<double>& dx) const;
  bool newton(std::vector<double>& x, double s, SolveStats& stats);

  const ReactorCase& rc_;
  SolverConfig cfg_;
  int ns_, m_, nr_ = 0, nz_ = 0;
  double dr_ = 0, dz_ = 0;
  std::size_t n_ = 0;
  std::vector<double> r_, u_;
  // transport stencil per unknown (constant between Newton iterations);
  // crm2/czm2 carry the second-order one-sided Neumann closures at the wall
  // and outlet (coupling to i-2 / j-2)
  std::vector<double> cdiag_, crm_, crp_, czm_, czp_, crm2_, czm2_, bcvec_;
  std::vector<char> dirichlet_;
  // node-local rate Jacobian blocks (m x m, row-major) and line factors;
  // elim2_ eliminates the wall row's i-2 coupling (one block per line)
  std::vector<double> blocks_, dlu_, elim_, elim2_;
  std::vector<int> piv_;
  bool upwind_ = false;
};

void TransportSolver::build_stencil(bool upwind) {
  upwind_ = upwind;
  std::fill(cdiag_.begin(), cdiag_.end(), 0.0);
  std::fill(crm_.begin(), crm_.end(), 0.0);
  std::fill(crp_.begin(), crp_.end(), 0.0);
  std::fill(czm_.begin(), czm_.end(), 0.0);
  std::fill(czp_.begin(), czp_.end(), 0.0);
  std::fill(crm2_.begin(), crm2_.end(), 0.0);
  std::fill(czm2_.begin(), czm2_.end(), 0.0);
  std::fill(bcvec_.begin(), bcvec_.end(), 0.0);
  std::fill(dirichlet_.begin(), dirichlet_.end(), 0);

  for (int j = 0; j < nz_; ++j) {
    for (int i = 0; i < nr_; ++i) {
      for (int f = 0; f < m_; ++f) {
        const std::size_t k = idx(i, j, f);
        const bool is_temp = (f == ns_);
        const double pe = is_temp ? rc_.groups.pe_t : rc_.groups.pe;
        const double bc_inlet =
            is_temp ? rc_.inlet_temp_dimless : rc_.inlet_conc_dimless[f];

        if (j == 0) {  // inlet Dirichlet
          cdiag_[k] = 1.0;
          bcvec_[k] = bc_inlet;
          dirichlet_[k] = 1;
          continue;
        }
        if (is_temp && i == nr_ - 1) {  // isothermal wall
          cdiag_[k] = 1.0;
          bcvec_[k] = rc_.wall_temp_dimless;
          dirichlet_[k] = 1;
          continue;
        }

        const double u = u_[i];
        // axial advection, central with optional hybrid upwind blending
        if (j == nz_ - 1) {
          // outlet: d/dz = 0; one-sided second-order closure for d2/dz2,
          // x_zz = (-7 x_j + 8 x_{j-1} - x_{j-2}) / (2 dz^2)
          cdiag_[k] += 3.5 / (pe * dz_ * dz_);
          czm_[k] += -4.0 / (pe * dz_ * dz_);
          czm2_[k] += 0.5 / (pe * dz_ * dz_);
        } else {
          if (upwind) {
            // first-order hybrid fallback, blended by the cell Peclet number
            double beta = 0.0;
            const double cell_pe = u * dz_ * pe;
            if (cell_pe > 2.0) beta = 1.0 - 2.0 / cell_pe;
            const double cc = u / (2.0 * dz_) * (1.0 - beta);
            czp_[k] += cc;
            czm_[k] += -cc;
            cdiag_[k] += beta * u / dz_;
            czm_[k] += -beta * u / dz_;
          } else if (cfg_.advection == "lud2" && j >= 2) {
            // second-order upwind: u (3x_j - 4x_{j-1} + x_{j-2}) / (2 dz)
            cdiag_[k] += 1.5 * u / dz_;
            czm_[k] += -2.0 * u / dz_;
            czm2_[k] += 0.5 * u / dz_;
          } else if (cfg_.advection == "lud2") {
            // first interior row: monotone first-order upwind, one row only
            cdiag_[k] += u / dz_;
            czm_[k] += -u / dz_;
          } else {
            czp_[k] += u / (2.0 * dz_);
            czm_[k] += -u / (2.0 * dz_);
          }
          // axial diffusion
          czp_[k] += -1.0 / (pe * dz_ * dz_);
          czm_[k] += -1.0 / (pe * dz_ * dz_);
          cdiag_[k] += 2.0 / (pe * dz_ * dz_);
        }

        // radial operator -(1/pe)(x_rr + x_r/r)
        if (i == 0) {
          // axis: symmetry, 1/r x_r + x_rr -> 2 x_rr with mirrored ghost
          crp_[k] += -4.0 / (pe * dr_ * dr_);
          cdiag_[k] += 4.0 / (pe * dr_ * dr_);
        } else if (i == nr_ - 1) {
          // species zero-flux wall: x_r = 0 and the one-sided second-order
          // closure x_rr = (-7 x_i + 8 x_{i-1} - x_{i-2}) / (2 dr^2)
          cdiag_[k] += 3.5 / (pe * dr_ * dr_);
          crm_[k] += -4.0 / (pe * dr_ * dr_);
          crm2_[k] += 0.5 / (pe * dr_ * dr_);
        } else {
          const double a = 1.0 / (pe * dr_ * dr_);
          const double b = 1.0 / (pe * 2.0 * dr_ * r_[i]);
          crp_[k] += -(a + b);
          crm_[k] += -(a - b);
          cdiag_[k] += 2.0 * a;
        }
      }
    }
  }
}

void TransportSolver::add_rates(const std::vector<double>& x, double s,
                                std::vector<double>& F) const {
  if (s == 0.0) return;
  physics::RateEval ev;
  std::vector<double> conc(ns_);
  for (int j = 1; j < nz_; ++j) {
    for (int i = 0; i < nr_; ++i) {
      const std::size_t base = idx(i, j, 0);
      for (int f = 0; f < ns_; ++f) conc[f] = x[base + f];
      const double temp = std::max(x[base + ns_], 0.05);
      physics::reaction_rates_detail(rc_, conc, temp, {}, ev);
      for (int f = 0; f < ns_; ++f) {
        if (!dirichlet_[base + f]) F[base + f] += s * ev.consumption[f];
      }
      if (!dirichlet_[base + ns_]) {
        double src = 0.0;
        for (int jx = 0; jx < rc_.n_reactions(); ++jx) {
          src += rc_.dh_dimless[jx] * ev.rate[jx];
        }
        F[base + ns_] += s * src;
      }
    }
  }
}

void TransportSolver::residual(const std::vector<double>& x, double s,
                               std::vector<double>& F) const {
  F.assign(n_, 0.0);
  for (int j = 0; j < nz_; ++j) {
    for (int i = 0; i < nr_; ++i) {
      for (int f = 0; f < m_; ++f) {
        const std::size_t k = idx(i, j, f);
        double acc = cdiag_[k] * x[k] - bcvec_[k];
        if (i > 0) acc += crm_[k] * x[idx(i - 1, j, f)];
        if (i > 1 && crm2_[k] != 0.0) acc += crm2_[k] * x[idx(i - 2, j, f)];
        if (i + 1 < nr_) acc += crp_[k] * x[idx(i + 1, j, f)];
        if (j > 0) acc += czm_[k] * x[idx(i, j - 1, f)];
        if (j > 1 && czm2_[k] != 0.0) acc += czm2_[k] * x[idx(i, j - 2, f)];
        if (j + 1 < nz_) acc += czp_[k] * x[idx(i, j + 1, f)];
        F[k] = acc;
      }
    }
  }
  add_rates(x, s, F);
}

void TransportSolver::build_blocks(const std::vector<double>& x, double s) {
  std::fill(blocks_.begin(), blocks_.end(), 0.0);
  if (s == 0.0) return;
  physics::RateEval ev;
  std::vector<double> conc(ns_);
  const int nrx = rc_.n_reactions();
  for (int j = 1; j < nz_; ++j) {
    for (int i = 0; i < nr_; ++i) {
      const std::size_t base = idx(i, j, 0);
      double* b = blocks_.data() + base * m_;  // m_*m_ block at node
      for (int f = 0; f < ns_; ++f) conc[f] = x[base + f];
      const double raw_temp = x[base + ns_];
      const bool clamped = raw_temp < 0.05;
      const double temp = clamped ? 0.05 : raw_temp;
      physics::reaction_rates_detail(rc_, conc, temp, {}, ev);
      for (int jx = 0; jx < nrx; ++jx) {
        const auto [pf, ps] = rc_.reactions[jx].rate_form;
        const double d1 = s * ev.drate_dc_first[jx];
        const double d2 = s * ev.drate_dc_second[jx];
        const double dT = clamped ? 0.0 : s * ev.drate_dT[jx];
        for (int f = 0; f < ns_; ++f) {
          const double coef = -static_cast<double>(rc_.reactions[jx].stoich[f]);
          if (coef == 0.0 || dirichlet_[base + f]) continue;
          b[f * m_ + pf] += coef * d1;
          b[f * m_ + ps] += coef * d2;
          b[f * m_ + ns_] += coef * dT;
        }
        if (!dirichlet_[base + ns_]) {
          const double h = rc_.dh_dimless[jx];
          b[ns_ * m_ + pf] += h * d1;
          b[ns_ * m_ + ps] += h * d2;
          b[ns_ * m_ + ns_] += h * dT;
        }
      }
    }
  }
}

void TransportSolver::matvec(const std::vector<double>& v, std::vector<double>& y) const {
  for (int j = 0; j < nz_; ++j) {
    for (int i = 0; i < nr_; ++i) {
      const std::size_t base = idx(i, j, 0);
      const double* b = blocks_.data() + base * m_;
      for (int f = 0; f < m_; ++f) {
        const std::size_t k = base + f;
        double acc = cdiag_[k] * v[k];
        if (i > 0) acc += crm_[k] * v[k - m_];
        if (i > 1 && crm2_[k] != 0.0) acc += crm2_[k] * v[k - 2 * m_];
        if (i + 1 < nr_) acc += crp_[k] * v[k + m_];
        if (j > 0) acc += czm_[k] * v[k - static_cast<std::size_t>(nr_) * m_];
        if (j > 1 && czm2_[k] != 0.0) {
          acc += czm2_[k] * v[k - 2 * static_cast<std::size_t>(nr_) * m_];
        }
        if (j + 1 < nz_) acc += czp_[k] * v[k + static_cast<std::size_t>(nr_) * m_];
        const double* brow = b + f * m_;
        for (int g = 0; g < m_; ++g) acc += brow[g] * v[base + g];
        y[k] = acc;
      }
    }
  }
}

void TransportSolver::factor_lines() {
  double dwork[kMaxFields * kMaxFields];
  double awork[kMaxFields * kMaxFields];
  for (int j = 0; j < nz_; ++j) {
    for (int i = 0; i < nr_; ++i) {
      const std::size_t node = static_cast<std::size_t>(j) * nr_ + i;
      const std::size_t base = node * m_;
      double* dlu = dlu_.data() + base * m_;
      double* el = elim_.data() + base * m_;
      int* piv = piv_.data() + base;
      // D_i = diag(cdiag) + B
      const double* b = blocks_.data() + base * m_;
      for (int f = 0; f < m_ * m_; ++f) dwork[f] = b[f];
      for (int f = 0; f < m_; ++f) dwork[f * m_ + f] += cdiag_[base + f];
      if (i == 0) {
        std::memcpy(dlu, dwork, sizeof(double) * m_ * m_);
        lu_factor(dlu, piv, m_);
        std::memset(el, 0, sizeof(double) * m_ * m_);
        continue;
      }
      // E_i = A_i * inv(Dtil_{i-1}); A is diag(crm), except at the wall where
      // the i-2 coupling is eliminated first through Dtil_{i-2}
      const std::size_t prev = base - m_;
      const double* plu = dlu_.data() + prev * m_;
      const int* ppiv = piv_.data() + prev;
      for (int f = 0; f < m_ * m_; ++f) awork[f] = 0.0;
      for (int f = 0; f < m_; ++f) awork[f * m_ + f] = crm_[base + f];
      bool has_second = false;
      if (i >= 2) {
        for (int f = 0; f < m_; ++f) has_second = has_second || crm2_[base + f] != 0.0;
      }
      double* el2 = elim2_.data() + static_cast<std::size_t>(j) * m_ * m_;
      if (has_second) {
        const std::size_t prev2 = base - 2 * m_;
        double a2[kMaxFields * kMaxFields];
        for (int f = 0; f < m_ * m_; ++f) a2[f] = 0.0;
        for (int f = 0; f < m_; ++f) a2[f * m_ + f] = crm2_[base + f];
        right_multiply_inverse(dlu_.data() + prev2 * m_, piv_.data() + prev2, m_, a2, el2);
        // folding E2 through row i-2 shifts the subdiagonal coupling
        for (int f = 0; f < m_; ++f) {
          for (int g = 0; g < m_; ++g) {
            awork[f * m_ + g] -= el2[f * m_ + g] * crp_[prev2 + g];
          }
        }
      } else if (i == nr_ - 1) {
        std::memset(el2, 0, sizeof(double) * m_ * m_);
      }
      right_multiply_inverse(plu, ppiv, m_, awork, el);
      // Dtil_i = D_i - E_i * C_{i-1}, C_{i-1} = diag(crp at i-1)
      for (int f = 0; f < m_; ++f) {
        for (int g = 0; g < m_; ++g) {
          dwork[f * m_ + g] -= el[f * m_ + g] * crp_[prev + g];
        }
      }
      std::memcpy(dlu, dwork, sizeof(double) * m_ * m_);
      lu_factor(dlu, piv, m_);
    }
  }
}

// block-tridiagonal solve along one r-line; q holds the rhs on entry and the
// solution on exit (length nr_*m_)
void TransportSolver::line_solve(int j, double* q) const {
  const std::size_t row = static_cast<std::size_t>(j) * nr_;
  // forward: y_i = q_i - E_i y_{i-1} (- E2 y_{i-2} on the wall row)
  for (int i = 1; i < nr_; ++i) {
    const double* el = elim_.data() + (row + i) * m_ * m_;
    double* qi = q + i * m_;
    const double* qm = q + (i - 1) * m_;
    for (int f = 0; f < m_; ++f) {
      double s = 0.0;
      for (int g = 0; g < m_; ++g) s += el[f * m_ + g] * qm[g];
      qi[f] -= s;
    }
    if (i == nr_ - 1 && i >= 2) {
      const double* el2 = elim2_.data() + static_cast<std::size_t>(j) * m_ * m_;
      const double* qm2 = q + (i - 2) * m_;
      for (int f = 0; f < m_; ++f) {
        double s = 0.0;
        for (int g = 0; g < m_; ++g) s += el2[f * m_ + g] * qm2[g];
        qi[f] -= s;
      }
    }
  }
  // backward: x_i = Dtil_i^{-1} (y_i - C_i x_{i+1})
  for (int i = nr_ - 1; i >= 0; --i) {
    double* qi = q + i * m_;
    if (i + 1 < nr_) {
      const std::size_t k = (row + i) * m_;
      for (int f = 0; f < m_; ++f) qi[f] -= crp_[k + f] * q[(i + 1) * m_ + f];
    }
    lu_solve(dlu_.data() + (row + i) * m_ * m_, piv_.data() + (row + i) * m_, m_, qi);
  }
}

void TransportSolver::precond(const std::vector<double>& rhs, std::vector<double>& y) const {
  y.assign(n_, 0.0);
  const std::size_t stride = static_cast<std::size_t>(nr_) * m_;
  std::vector<double> line(stride);
  // forward sweep (downstream)
  for (int j = 0; j < nz_; ++j) {
    const std::size_t off = j * stride;
    for (std::size_t k = 0; k < stride; ++k) {
      double v = rhs[off + k];
      if (j > 0) v -= czm_[off + k] * y[off - stride + k];
      if (j > 1 && czm2_[off + k] != 0.0) v -= czm2_[off + k] * y[off - 2 * stride + k];
      // first pass: y at j+1 is still zero
      line[k] = v;
    }
    line_solve(j, line.data());
    std::copy(line.begin(), line.end(), y.begin() + off);
  }
  // backward sweep
  for (int j = nz_ - 1; j >= 0; --j) {
    const std::size_t off = j * stride;
    for (std::size_t k = 0; k < stride; ++k) {
      double v = rhs[off + k];
      if (j > 0) v -= czm_[off + k] * y[off - stride + k];
      if (j > 1 && czm2_[off + k] != 0.0) v -= czm2_[off + k] * y[off - 2 * stride + k];
      if (j + 1 < nz_) v -= czp_[off + k] * y[off + stride + k];
      line[k] = v;
    }
    line_solve(j, line.data());
    std::copy(line.begin(), line.end(), y.begin() + off);
  }
}

namespace {
double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }
}  // namespace

// right-preconditioned BiCGSTAB; returns iterations used, -1 on breakdown
int TransportSolver::bicgstab(const std::vector<double>& rhs, std::vector<double>& dx) const {
  const bool debug = std::getenv("FMENETS_DEBUG_KRYLOV") != nullptr;
  dx.assign(n_, 0.0);
  std::vector<double> r = rhs;
  const double bnorm = norm2(rhs);
  if (bnorm == 0.0) return 0;
  std::vector<double> rhat = r;
  std::vector<double> p(n_, 0.0), v(n_, 0.0), phat(n_), shat(n_), t(n_), s(n_);
  double rho = 1.0, alpha = 1.0, omega = 1.0;
  for (int it = 1; it <= cfg_.max_krylov; ++it) {
    const double rho1 = dot(rhat, r);
    if (rho1 == 0.0) return -1;
    if (it == 1) {
      p = r;
    } else {
      const double beta = (rho1 / rho) * (alpha / omega);
      for (std::size_t i = 0; i < n_; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    }
    precond(p, phat);
    matvec(phat, v);
    const double denom = dot(rhat, v);
    if (denom == 0.0) return -1;
    alpha = rho1 / denom;
    for (std::size_t i = 0; i < n_; ++i) s[i] = r[i] - alpha * v[i];
    if (norm2(s) < cfg_.krylov_tol * bnorm) {
      for (std::size_t i = 0; i < n_; ++i) dx[i] += alpha * phat[i];
      return it;
    }
    precond(s, shat);
    matvec(shat, t);
    const double tt = dot(t, t);
    if (tt == 0.0) return -1;
    omega = dot(t, s) / tt;
    for (std::size_t i = 0; i < n_; ++i) {
      dx[i] += alpha * phat[i] + omega * shat[i];
      r[i] = s[i] - omega * t[i];
    }
    if (debug) {
      std::fprintf(stderr, "    bicgstab it=%d |r|/|b|=%.3e alpha=%.3e omega=%.3e\n", it,
                   norm2(r) / bnorm, alpha, omega);
    }
    if (norm2(r) < cfg_.krylov_tol * bnorm) return it;
    rho = rho1;
  }
  return cfg_.max_krylov;
}

namespace {
double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}
}  // namespace

bool TransportSolver::newton(std::vector<double>& x, double s, SolveStats& stats) {
  const bool debug = std::getenv("FMENETS_DEBUG_ORACLE") != nullptr;
  std::vector<double> F, dx, xtrial, Ftrial;
  residual(x, s, F);
  double nrm = inf_norm(F);
  const double nrm0 = std::max(nrm, 1e-30);
  int iters = 0;
  stats.residual_history.push_back(nrm);
  while (nrm > cfg_.newton_tol && nrm / nrm0 > cfg_.newton_tol) {
    if (iters >= cfg_.max_newton) return false;
    build_blocks(x, s);
    factor_lines();
    std::vector<double> rhs(n_);
    for (std::size_t i = 0; i < n_; ++i) rhs[i] = -F[i];
    const int kry = bicgstab(rhs, dx);
    if (kry < 0) {
      if (debug) std::fprintf(stderr, "  newton: krylov breakdown at s=%.2f\n", s);
      return false;
    }
    bool dx_ok = true;
    for (double d : dx) dx_ok = dx_ok && std::isfinite(d);
    if (!dx_ok) {
      if (debug) std::fprintf(stderr, "  newton: non-finite step at s=%.2f\n", s);
      return false;
    }
    // backtracking line search on the residual norm
    double step = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 10; ++ls) {
      xtrial.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) xtrial[i] = x[i] + step * dx[i];
      double ntrial = std::numeric_limits<double>::infinity();
      try {
        residual(xtrial, s, Ftrial);
        ntrial = inf_norm(Ftrial);
      } catch (const NumericError&) {
        // non-finite trial state: treat as a rejected step
      } catch (const std::domain_error&) {
      }
      if (std::isfinite(ntrial) && ntrial < nrm * (1.0 + 1e-12)) {
        x.swap(xtrial);
        F.swap(Ftrial);
        nrm = ntrial;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (debug) {
      std::fprintf(stderr, "  newton it=%d s=%.2f nrm=%.3e krylov=%d step=%.3f%s\n", iters,
                   s, nrm, kry, step, accepted ? "" : " REJECTED");
    }
    if (!accepted) return false;
    ++iters;
    ++stats.newton_iterations_total;
    stats.residual_history.push_back(nrm);
  }
  stats.newton_iterations_worst_step = std::max(stats.newton_iterations_worst_step, iters);
  stats.final_residual = nrm;
  return true;
}

void TransportSolver::solve(std::vector<double>& x, SolveStats& stats) {
  // initial guess: inlet state everywhere
  x.assign(n_, 0.0);
  for (int j = 0; j < nz_; ++j) {
    for (int i = 0; i < nr_; ++i) {
      for (int f = 0; f < ns_; ++f) x[idx(i, j, f)] = rc_.inlet_conc_dimless[f];
      x[idx(i, j, ns_)] = rc_.inlet_temp_dimless;
    }
  }
  bool retried = false;
  for (int step = 0; step <= cfg_.continuation_steps;) {
    const double s = static_cast<double>(step) / cfg_.continuation_steps;
    if (newton(x, s, stats)) {
      ++step;
      continue;
    }
    if (cfg_.upwind_fallback && !retried) {
      // central convection oscillated; restart this continuation step with
      // hybrid upwind blending
      retried = true;
      stats.used_upwind = true;
      build_stencil(true);
      continue;
    }
    std::ostringstream os;
    os << "oracle: Newton failed at continuation s=" << s << "; residuals:";
    for (double r : stats.residual_history) os << " " << r;
    throw NumericError(os.str());
  }
}

}  // namespace

FieldGrid solve_reactive_transport(const ReactorCase& rc, const SolverConfig& cfg,
                                   SolveStats* stats_out) {
  TransportSolver solver(rc, cfg);
  std::vector<double> x;
  SolveStats stats;
  solver.solve(x, stats);

  FieldGrid g = analytic_poiseuille(rc, cfg.nr_cells, cfg.nz_cells);
  g.case_id = rc.case_id;
  g.solver_hash = cfg.hash();
  const int nr = g.nr_nodes(), nz = g.nz_nodes();
  const int ns = rc.n_species();
  for (int f = 0; f < ns; ++f) {
    std::vector<double> field(static_cast<std::size_t>(nr) * nz);
    for (int j = 0; j < nz; ++j) {
      for (int i = 0; i < nr; ++i) {
        field[static_cast<std::size_t>(j) * nr + i] = x[solver.idx(i, j, f)];
      }
    }
    const std::string name = "C_" + rc.species[f];
    g.variables.push_back(name);
    g.fields[name] = std::move(field);
  }
  std::vector<double> temp(static_cast<std::size_t>(nr) * nz);
  for (int j = 0; j < nz; ++j) {
    for (int i = 0; i < nr; ++i) {
      temp[static_cast<std::size_t>(j) * nr + i] = x[solver.idx(i, j, ns)];
    }
  }
  g.variables.push_back("T");
  g.fields["T"] = std::move(temp);

  // physical-bounds check
  for (int f = 0; f < ns; ++f) {
    for (double c : g.fields["C_" + rc.species[f]]) {
      if (c < -1e-10) {
        throw NumericError("oracle: negative concentration beyond tolerance in C_" +
                           rc.species[f]);
      }
    }
  }
  if (stats_out) *stats_out = stats;
  return g;
}

double max_stoich_invariant_drift(const FieldGrid& grid, const ReactorCase& rc) {
  const auto basis = physics::stoich_invariants(rc);
  double worst = 0.0;
  const int nr = grid.nr_nodes(), nz = grid.nz_nodes();
  for (const auto& w : basis) {
    double ref = 0.0;
    for (int f = 0; f < rc.n_species(); ++f) ref += w[f] * rc.inlet_conc_dimless[f];
    const double scale = std::max(std::abs(ref), 1e-30);
    for (int j = 0; j < nz; ++j) {
      for (int i = 0; i < nr; ++i) {
        double val = 0.0;
        for (int f = 0; f < rc.n_species(); ++f) {
          val += w[f] * grid.at("C_" + rc.species[f], i, j);
        }
        worst = std::max(worst, std::abs(val - ref) / scale);
      }
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// observations
// ---------------------------------------------------------------------------

MeasurementLayout MeasurementLayout::standard(const ReactorCase& rc,
                                              bool include_temperature) {
  MeasurementLayout lay;
  lay.sections = {{"inlet", 0.0},
                  {"quarter", rc.length * 0.25},
                  {"half", rc.length * 0.5},
                  {"outlet", rc.length}};
  lay.radial_points = 9;
  for (const auto& sp : rc.species) lay.quantities.push_back("C_" + sp);
  if (include_temperature) lay.quantities.push_back("T");
  return lay;
}

ObservationSet extract_observations(const FieldGrid& grid, const MeasurementLayout& layout) {
  ObservationSet set;
  for (const auto& [label, zpos] : layout.sections) {
    for (int k = 0; k < layout.radial_points; ++k) {
      const double r = grid.radius * k / (layout.radial_points - 1);
      for (const auto& q : layout.quantities) {
        Observation o;
        o.section = label;
        o.r = r;
        o.z = zpos;
        o.quantity = q;
        o.value = grid.sample(q, r, zpos);
        set.items.push_back(std::move(o));
      }
    }
  }
  return set;
}

NoiseLocation parse_noise_location(const std::string& s) {
  if (s == "inlet" || s == "INLET") return NoiseLocation::inlet;
  if (s == "outlet" || s == "OUTLET") return NoiseLocation::outlet;
  if (s == "both" || s == "BOTH") return NoiseLocation::both;
  throw ConfigError("unknown noise location '" + s + "'");
}

std::string to_string(NoiseLocation loc) {
  switch (loc) {
    case NoiseLocation::inlet:
      return "inlet";
    case NoiseLocation::outlet:
      return "outlet";
    case NoiseLocation::both:
      return "both";
  }
  return "?";
}

ObservationSet add_noise(const ObservationSet& obs, double level, NoiseLocation where,
                         std::uint64_t seed) {
  const double allowed[] = {0.0, 0.01, 0.05, 0.10};
  bool ok = false;
  for (double a : allowed) ok = ok || std::abs(level - a) < 1e-12;
  if (!ok) throw ConfigError("noise level must be one of {0, 1%, 5%, 10%}");

  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  ObservationSet out = obs;
  for (Observation& o : out.items) {
    const bool at_inlet = o.section == "inlet";
    const bool hit = (where == NoiseLocation::both) ||
                     (where == NoiseLocation::inlet && at_inlet) ||
                     (where == NoiseLocation::outlet && !at_inlet);
    // one draw per observation keeps the stream aligned across locations
    const double xi = rng.gaussian();
    if (hit && level > 0.0) {
      o.value *= 1.0 + level * xi;
      o.sigma = level * std::abs(o.value);
      o.seed = seed;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_field_grid(const FieldGrid& grid, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  json hdr;
  hdr["case_id"] = grid.case_id;
  hdr["nr_cells"] = grid.nr_cells;
  hdr["nz_cells"] = grid.nz_cells;
  hdr["radius"] = grid.radius;
  hdr["length"] = grid.length;
  hdr["variables"] = grid.variables;
  hdr["solver_hash"] = grid.solver_hash;
  f << "FMEGRID1\n" << hdr.dump() << "\n";
  for (const auto& var : grid.variables) {
    const auto& data = grid.fields.at(var);
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!f) throw IoError("write failed for '" + path + "'");
}

FieldGrid load_field_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string magic, header;
  std::getline(f, magic);
  if (magic != "FMEGRID1") throw IoError("'" + path + "' is not a field grid file");
  std::getline(f, header);
  json hdr = json::parse(header);
  FieldGrid g;
  g.case_id = hdr.at("case_id").get<std::string>();
  g.nr_cells = hdr.at("nr_cells").get<int>();
  g.nz_cells = hdr.at("nz_cells").get<int>();
  g.radius = hdr.at("radius").get<double>();
  g.length = hdr.at("length").get<double>();
  g.variables = hdr.at("variables").get<std::vector<std::string>>();
  g.solver_hash = hdr.at("solver_hash").get<std::string>();
  const std::size_t n = static_cast<std::size_t>(g.nr_nodes()) * g.nz_nodes();
  for (const auto& var : g.variables) {
    std::vector<double> data(n);
    f.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw IoError("truncated field grid file '" + path + "'");
    g.fields[var] = std::move(data);
  }
  return g;
}

void save_observations(const ObservationSet& obs, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << "section,r,z,quantity,value,sigma,seed\n";
  char buf[512];
  for (const Observation& o : obs.items) {
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%s,%.17g,%.17g,%llu\n",
                  o.section.c_str(), o.r, o.z, o.quantity.c_str(), o.value, o.sigma,
                  static_cast<unsigned long long>(o.seed));
    f << buf;
  }
  if (!f) throw IoError("write failed for '" + path + "'");
}

ObservationSet load_observations(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::getline(f, line);  // header
  ObservationSet set;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    Observation o;
    std::getline(ss, o.section, ',');
    std::getline(ss, field, ',');
    o.r = std::stod(field);
    std::getline(ss, field, ',');
    o.z = std::stod(field);
    std::getline(ss, o.quantity, ',');
    std::getline(ss, field, ',');
    o.value = std::stod(field);
    std::getline(ss, field, ',');
    o.sigma = std::stod(field);
    std::getline(ss, field, ',');
    o.seed = std::stoull(field);
    set.items.push_back(std::move(o));
  }
  return set;
}

}  // namespace fmenets::oracle

#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "fmenets/autodiff.hpp"
#include "fmenets/rng.hpp"

namespace fmenets::loss {

using ad::Jet;

// ---------------------------------------------------------------------------
// PDE residuals, written exactly as the dimensionless governing equations.
// All take jets of the physical fields at one point; r must stay positive
// (collocation sampling keeps a band r >= r_min away from the axis).
// ---------------------------------------------------------------------------

// momentum (z, r) and continuity
std::array<double, 3> ns_residuals(const Jet& u, const Jet& v, const Jet& p, double r,
                                   double re);

// advection - (1/Pe)(radial + axial diffusion) + net consumption rate
double mb_residual(double u, double v, const Jet& c, double rate, double pe, double r);

// advection - (1/Pe_T)(...) + sum_j dH_j rate_j
double eb_residual(double u, double v, const Jet& t, double heat_source, double pe_t,
                   double r);

// ---------------------------------------------------------------------------
// Collocation sampling
// ---------------------------------------------------------------------------

enum class Group { pde, boundary, data };

enum class Segment { interior, inlet, wall, outlet, axis };

struct Point {
  double r;
  double z;
};

struct Domain {
  double r_min = 1e-3;
  double radius = 0.5;
  double length = 12.984;
};

struct CollocationSet {
  Group group = Group::pde;
  Segment segment = Segment::interior;
  std::vector<Point> points;
};

// interior uniform in [r_min, R] x [0, L]
CollocationSet sample_interior(const Domain& d, int count, Rng& rng);
CollocationSet sample_boundary(const Domain& d, Segment seg, int count, Rng& rng);

// full deterministic draw: interior then inlet, wall, outlet, axis
std::vector<CollocationSet> sample_collocation(const Domain& d, int n_pde, int n_boundary,
                                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Residual-based attention weights. One state per loss term; lambda_i lives
// in [0, eta/(1-gamma)] for any update sequence.
// ---------------------------------------------------------------------------
struct RbaState {
  std::vector<double> lambda;
  double gamma = 0.999;
  double eta = 0.01;

  RbaState() = default;
  RbaState(int n, double gamma_, double eta_, double init = 1.0)
      : lambda(n, init), gamma(gamma_), eta(eta_) {}

  double bound() const { return eta / (1.0 - gamma); }
};

void rba_update(RbaState& state, std::span<const double> residuals);

// ---------------------------------------------------------------------------
// Loss assembly
// ---------------------------------------------------------------------------

struct LossComponent {
  std::string name;
  Group group = Group::pde;
  double weight = 1.0;         // global weight m_alpha
  double mean_weighted = 0.0;  // mean_i (lambda_i e_i)^q
  double mean_plain = 0.0;     // mean_i e_i^2, for logging/early stopping
  double contribution = 0.0;   // weight * mean_weighted
};

struct LossBreakdown {
  std::vector<LossComponent> components;
  double l_pde = 0.0;
  double l_b = 0.0;
  double l_d = 0.0;
  double total = 0.0;

  void add(LossComponent c);
};

// m * mean_i (lambda_i e_i)^q; lambda may be empty (treated as all ones)
LossComponent assemble_group_loss(const std::string& name, Group group,
                                  std::span<const double> residuals,
                                  std::span<const double> lambda, double weight, int q);

}  // namespace fmenets::loss

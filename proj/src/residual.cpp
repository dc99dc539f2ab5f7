#include "fmenets/residual.hpp"

#include <cmath>

#include "fmenets/errors.hpp"

namespace fmenets::loss {

std::array<double, 3> ns_residuals(const Jet& u, const Jet& v, const Jet& p, double r,
                                   double re) {
  if (!(r > 0.0)) throw std::domain_error("ns_residuals: r must be positive");
  const double inv_re = 1.0 / re;
  const double inv_r = 1.0 / r;
  const double e1 =
      u.v * u.dz + v.v * u.dr - inv_re * (inv_r * u.dr + u.drr + u.dzz) + p.dz;
  const double e2 = u.v * v.dz + v.v * v.dr -
                    inv_re * (inv_r * v.dr + v.drr + v.dzz - v.v * inv_r * inv_r) + p.dr;
  const double e3 = v.dr + v.v * inv_r + u.dz;
  return {e1, e2, e3};
}

double mb_residual(double u, double v, const Jet& c, double rate, double pe, double r) {
  if (!(r > 0.0)) throw std::domain_error("mb_residual: r must be positive");
  return u * c.dz + v * c.dr - (1.0 / pe) * (c.dr / r + c.drr + c.dzz) + rate;
}

double eb_residual(double u, double v, const Jet& t, double heat_source, double pe_t,
                   double r) {
  if (!(r > 0.0)) throw std::domain_error("eb_residual: r must be positive");
  return u * t.dz + v * t.dr - (1.0 / pe_t) * (t.dr / r + t.drr + t.dzz) + heat_source;
}

CollocationSet sample_interior(const Domain& d, int count, Rng& rng) {
  CollocationSet set;
  set.group = Group::pde;
  set.segment = Segment::interior;
  set.points.reserve(count);
  for (int i = 0; i < count; ++i) {
    set.points.push_back({rng.uniform(d.r_min, d.radius), rng.uniform(0.0, d.length)});
  }
  return set;
}

CollocationSet sample_boundary(const Domain& d, Segment seg, int count, Rng& rng) {
  CollocationSet set;
  set.group = Group::boundary;
  set.segment = seg;
  set.points.reserve(count);
  for (int i = 0; i < count; ++i) {
    switch (seg) {
      case Segment::inlet:
        set.points.push_back({rng.uniform(d.r_min, d.radius), 0.0});
        break;
      case Segment::wall:
        set.points.push_back({d.radius, rng.uniform(0.0, d.length)});
        break;
      case Segment::outlet:
        set.points.push_back({rng.uniform(d.r_min, d.radius), d.length});
        break;
      case Segment::axis:
        set.points.push_back({d.r_min, rng.uniform(0.0, d.length)});
        break;
      case Segment::interior:
        throw ConfigError("sample_boundary: interior is not a boundary segment");
    }
  }
  return set;
}

std::vector<CollocationSet> sample_collocation(const Domain& d, int n_pde, int n_boundary,
                                               std::uint64_t seed) {
  if (n_pde <= 0 || n_boundary <= 0) {
    throw ConfigError("sample_collocation: counts must be positive");
  }
  Rng rng(seed);
  std::vector<CollocationSet> sets;
  sets.push_back(sample_interior(d, n_pde, rng));
  for (Segment s : {Segment::inlet, Segment::wall, Segment::outlet, Segment::axis}) {
    sets.push_back(sample_boundary(d, s, n_boundary, rng));
  }
  return sets;
}

void rba_update(RbaState& state, std::span<const double> residuals) {
  if (residuals.size() != state.lambda.size()) {
    throw ConfigError("rba_update: residual count does not match weight count");
  }
  double norm = 0.0;
  for (double e : residuals) norm = std::max(norm, std::abs(e));
  if (norm == 0.0) {
    // no drive: pure decay
    for (double& l : state.lambda) l *= state.gamma;
    return;
  }
  const double scale = state.eta / norm;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    state.lambda[i] = state.gamma * state.lambda[i] + scale * std::abs(residuals[i]);
  }
}

void LossBreakdown::add(LossComponent c) {
  switch (c.group) {
    case Group::pde:
      l_pde += c.contribution;
      break;
    case Group::boundary:
      l_b += c.contribution;
      break;
    case Group::data:
      l_d += c.contribution;
      break;
  }
  total += c.contribution;
  components.push_back(std::move(c));
}

LossComponent assemble_group_loss(const std::string& name, Group group,
                                  std::span<const double> residuals,
                                  std::span<const double> lambda, double weight, int q) {
  LossComponent c;
  c.name = name;
  c.group = group;
  c.weight = weight;
  if (residuals.empty()) return c;
  if (!lambda.empty() && lambda.size() != residuals.size()) {
    throw ConfigError("assemble_group_loss: lambda size mismatch");
  }
  double acc = 0.0;
  double plain = 0.0;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    const double e = residuals[i];
    if (!std::isfinite(e)) {
      throw NumericError("assemble_group_loss: non-finite residual in term '" + name +
                         "' at point " + std::to_string(i));
    }
    const double le = lambda.empty() ? e : lambda[i] * e;
    double powed = 1.0;
    for (int k = 0; k < q; ++k) powed *= le;
    acc += std::abs(powed);
    plain += e * e;
  }
  c.mean_weighted = acc / static_cast<double>(residuals.size());
  c.mean_plain = plain / static_cast<double>(residuals.size());
  c.contribution = weight * c.mean_weighted;
  return c;
}

}  // namespace fmenets::loss

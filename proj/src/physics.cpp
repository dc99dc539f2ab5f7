#include "fmenets/physics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fmenets::physics {

namespace {

void require_positive(double x, const char* name) {
  if (!(x > 0.0) || !std::isfinite(x)) {
    throw std::domain_error(std::string(name) + " must be strictly positive");
  }
}

}  // namespace

double thermal_diffusivity(const FluidProperties& fluid) {
  require_positive(fluid.k_c, "k_c");
  require_positive(fluid.rho, "rho");
  require_positive(fluid.cp, "cp");
  return fluid.k_c / (fluid.rho * fluid.cp);
}

DimensionlessGroups compute_dimensionless_groups(const FluidProperties& fluid,
                                                 const CharacteristicScales& scales) {
  require_positive(fluid.mu, "mu");
  require_positive(fluid.rho, "rho");
  require_positive(fluid.cp, "cp");
  require_positive(fluid.d_ab, "d_ab");
  require_positive(fluid.k_c, "k_c");
  require_positive(scales.v_char, "v_char");
  require_positive(scales.d_char, "d_char");

  const double alpha = thermal_diffusivity(fluid);
  DimensionlessGroups g;
  g.re = fluid.rho * scales.v_char * scales.d_char / fluid.mu;
  g.pe = scales.v_char * scales.d_char / fluid.d_ab;
  g.pe_t = scales.v_char * scales.d_char / alpha;
  return g;
}

double arrhenius(double k0, double ea, double temperature) {
  if (!(temperature > 0.0)) {
    throw std::domain_error("arrhenius: temperature must be positive");
  }
  return k0 * std::exp(-ea / (kGasConstant * temperature));
}

double nondim_rate_constant(double k0, const CharacteristicScales& scales) {
  require_positive(scales.d_char, "d_char");
  require_positive(scales.v_char, "v_char");
  return k0 * scales.d_char * scales.c_char / scales.v_char;
}

double nondim_enthalpy(double dh, const CharacteristicScales& scales,
                       const FluidProperties& fluid) {
  require_positive(scales.t_char, "t_char");
  require_positive(fluid.rho, "rho");
  require_positive(fluid.cp, "cp");
  return dh * scales.c_char / (fluid.rho * fluid.cp * scales.t_char);
}

void ReactorCase::finalize() {
  const int ns = n_species();
  if (ns == 0) throw ConfigError("case '" + case_id + "': no species");
  if (static_cast<int>(inlet_conc.size()) != ns) {
    throw ConfigError("case '" + case_id + "': inlet concentration count mismatch");
  }
  for (double c : inlet_conc) {
    if (c < 0.0) throw ConfigError("case '" + case_id + "': negative inlet concentration");
  }
  for (const Reaction& rx : reactions) {
    if (static_cast<int>(rx.stoich.size()) != ns) {
      throw ConfigError("case '" + case_id + "': reaction stoichiometry size mismatch");
    }
    if (!(rx.k0 > 0.0)) throw ConfigError("case '" + case_id + "': k0 must be positive");
    const auto [p, q] = rx.rate_form;
    if (p < 0 || p >= ns || q < 0 || q >= ns) {
      throw ConfigError("case '" + case_id + "': rate_form species out of range");
    }
    if (rx.stoich[p] >= 0 || rx.stoich[q] >= 0) {
      throw ConfigError("case '" + case_id + "': rate_form species must be consumed");
    }
  }
  require_positive(length, "length");
  require_positive(radius, "radius");

  inlet_conc_dimless.resize(ns);
  for (int i = 0; i < ns; ++i) inlet_conc_dimless[i] = inlet_conc[i] / scales.c_char;
  inlet_temp_dimless = inlet_temp / scales.t_char;
  wall_temp_dimless = wall_temp / scales.t_char;

  k0_dimless.clear();
  dh_dimless.clear();
  for (const Reaction& rx : reactions) {
    k0_dimless.push_back(nondim_rate_constant(rx.k0, scales));
    dh_dimless.push_back(nondim_enthalpy(rx.dh, scales, fluid));
  }
}

void RateEval::resize(int n_reactions, int n_species) {
  rate.assign(n_reactions, 0.0);
  drate_dc_first.assign(n_reactions, 0.0);
  drate_dc_second.assign(n_reactions, 0.0);
  drate_dT.assign(n_reactions, 0.0);
  drate_dEa.assign(n_reactions, 0.0);
  consumption.assign(n_species, 0.0);
}

void reaction_rates_detail(const ReactorCase& rc, std::span<const double> conc,
                           double temperature, std::span<const double> ea_override,
                           RateEval& out) {
  const int nr = rc.n_reactions();
  const int ns = rc.n_species();
  if (static_cast<int>(conc.size()) != ns) {
    throw ConfigError("reaction_rates: concentration vector size mismatch");
  }
  for (double c : conc) {
    if (!std::isfinite(c)) throw NumericError("reaction_rates: non-finite concentration");
  }
  const double t_kelvin = temperature * rc.scales.t_char;
  if (!(t_kelvin > 0.0)) {
    throw std::domain_error("reaction_rates: temperature must be positive");
  }
  out.resize(nr, ns);
  for (int j = 0; j < nr; ++j) {
    const Reaction& rx = rc.reactions[j];
    const double ea = ea_override.empty() ? rx.ea : ea_override[j];
    const double k = rc.k0_dimless[j] * std::exp(-ea / (kGasConstant * t_kelvin));
    const double ca = conc[rx.rate_form.first];
    const double cb = conc[rx.rate_form.second];
    const double rate = k * ca * cb;
    out.rate[j] = rate;
    out.drate_dc_first[j] = k * cb;
    out.drate_dc_second[j] = k * ca;
    // d/dT_dimless of exp(-ea/(R t_char T)) = rate * ea/(R t_char T^2)
    out.drate_dT[j] = rate * ea * rc.scales.t_char / (kGasConstant * t_kelvin * t_kelvin);
    out.drate_dEa[j] = -rate / (kGasConstant * t_kelvin);
    for (int i = 0; i < ns; ++i) {
      out.consumption[i] -= rx.stoich[i] * rate;
    }
  }
}

std::vector<double> reaction_rates(const ReactorCase& rc, std::span<const double> conc,
                                   double temperature) {
  RateEval ev;
  reaction_rates_detail(rc, conc, temperature, {}, ev);
  return ev.consumption;
}

namespace {

long long igcd(long long a, long long b) {
  a = std::llabs(a);
  b = std::llabs(b);
  while (b) {
    const long long t = a % b;
    a = b;
    b = t;
  }
  return a;
}

void normalize_row(std::vector<long long>& row) {
  long long g = 0;
  for (long long v : row) g = igcd(g, v);
  if (g > 1) {
    for (long long& v : row) v /= g;
  }
  // sign convention: first nonzero positive
  for (long long v : row) {
    if (v != 0) {
      if (v < 0) {
        for (long long& w : row) w = -w;
      }
      break;
    }
  }
}

}  // namespace

std::vector<std::vector<int>> stoich_invariants(const ReactorCase& rc) {
  const int ns = rc.n_species();
  const int nr = rc.n_reactions();
  // rows of S^T: one per reaction, over species
  std::vector<std::vector<long long>> rows(nr, std::vector<long long>(ns, 0));
  for (int j = 0; j < nr; ++j) {
    for (int i = 0; i < ns; ++i) rows[j][i] = rc.reactions[j].stoich[i];
  }

  // integer Gaussian elimination; record pivot columns
  std::vector<int> pivot_col;
  int rank = 0;
  for (int c = 0; c < ns && rank < nr; ++c) {
    int sel = -1;
    for (int i = rank; i < nr; ++i) {
      if (rows[i][c] != 0) {
        sel = i;
        break;
      }
    }
    if (sel < 0) continue;
    std::swap(rows[sel], rows[rank]);
    for (int i = 0; i < nr; ++i) {
      if (i == rank || rows[i][c] == 0) continue;
      const long long a = rows[rank][c];
      const long long b = rows[i][c];
      for (int k = 0; k < ns; ++k) rows[i][k] = rows[i][k] * a - rows[rank][k] * b;
      normalize_row(rows[i]);
    }
    pivot_col.push_back(c);
    ++rank;
  }

  // each non-pivot column yields one basis vector by back-substitution
  std::vector<std::vector<int>> basis;
  for (int f = 0; f < ns; ++f) {
    if (std::find(pivot_col.begin(), pivot_col.end(), f) != pivot_col.end()) continue;
    // rational solve with common denominator: start w[f] = D where D is the
    // product of pivots so every entry stays integral
    long long denom = 1;
    for (int p = 0; p < rank; ++p) denom *= rows[p][pivot_col[p]];
    denom = std::llabs(denom) == 0 ? 1 : std::llabs(denom);
    std::vector<long long> w(ns, 0);
    w[f] = denom;
    for (int p = rank - 1; p >= 0; --p) {
      long long s = 0;
      for (int k = 0; k < ns; ++k) {
        if (k != pivot_col[p]) s += rows[p][k] * w[k];
      }
      if (s % rows[p][pivot_col[p]] != 0) {
        // denominator was not a multiple; scale everything up
        const long long piv = rows[p][pivot_col[p]];
        const long long g = igcd(s, piv);
        const long long scale = std::llabs(piv / g);
        for (long long& v : w) v *= scale;
        s *= scale;
      }
      w[pivot_col[p]] = -s / rows[p][pivot_col[p]];
    }
    normalize_row(w);
    std::vector<int> wi(ns);
    for (int i = 0; i < ns; ++i) wi[i] = static_cast<int>(w[i]);
    // exact verification
    for (int j = 0; j < nr; ++j) {
      long long dot = 0;
      for (int i = 0; i < ns; ++i) dot += static_cast<long long>(wi[i]) * rc.reactions[j].stoich[i];
      if (dot != 0) throw NumericError("stoich_invariants: basis verification failed");
    }
    basis.push_back(std::move(wi));
  }
  return basis;
}

namespace {

FluidProperties appendix_fluid() {
  return FluidProperties{
      .mu = 0.000654416,
      .rho = 993.0,
      .cp = 4200.0,
      .d_ab = 1.038e-7,
      .k_c = 0.5,
  };
}

CharacteristicScales appendix_scales() {
  return CharacteristicScales{
      .v_char = 0.0167,
      .d_char = 0.00158,
      .p_char = 0.27851,
      .t_char = 300.0,
      .c_char = 1300.0,
  };
}

// The tabulated Re/Pe/Pe_T are kept verbatim; recomputing them from the
// rounded property values lands within ~1% of these.
DimensionlessGroups appendix_groups() {
  return DimensionlessGroups{.re = 40.343, .pe = 256.008, .pe_t = 221.764};
}

}  // namespace

ReactorCase make_case(const std::string& case_id) {
  ReactorCase rc;
  rc.case_id = case_id;
  rc.fluid = appendix_fluid();
  rc.scales = appendix_scales();
  rc.groups = appendix_groups();

  if (case_id == "case1") {
    rc.species = {"a", "b"};
    rc.reactions = {
        Reaction{.stoich = {-1, 1}, .k0 = 400.0, .ea = 40230.0, .dh = -100000.0, .rate_form = {0, 0}},
    };
    rc.inlet_conc = {1300.0, 0.0};
  } else if (case_id == "case2") {
    rc.species = {"a", "b", "c"};
    rc.reactions = {
        Reaction{.stoich = {-1, 1, 0}, .k0 = 400.0, .ea = 40230.0, .dh = -100000.0, .rate_form = {0, 0}},
        Reaction{.stoich = {0, -1, 1}, .k0 = 400.0, .ea = 40230.0, .dh = -100000.0, .rate_form = {1, 1}},
    };
    rc.inlet_conc = {1300.0, 0.0, 0.0};
  } else if (case_id == "case3") {
    rc.species = {"a", "b", "c", "d", "e", "f"};
    rc.reactions = {
        // B + C -> D
        Reaction{.stoich = {0, -1, -1, 1, 0, 0}, .k0 = 284.0, .ea = 40230.0, .dh = -100000.0, .rate_form = {1, 2}},
        // A + B -> E
        Reaction{.stoich = {-1, -1, 0, 0, 1, 0}, .k0 = 142.0, .ea = 40230.0, .dh = -100000.0, .rate_form = {0, 1}},
        // A + B -> F
        Reaction{.stoich = {-1, -1, 0, 0, 0, 1}, .k0 = 227.0, .ea = 40230.0, .dh = -100000.0, .rate_form = {0, 1}},
    };
    rc.inlet_conc = {850.0, 1300.0, 1250.0, 0.0, 0.0, 0.0};
  } else {
    throw ConfigError("unknown case id '" + case_id + "'");
  }
  rc.finalize();
  return rc;
}

}  // namespace fmenets::physics

#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fmenets/errors.hpp"

namespace fmenets::physics {

inline constexpr double kGasConstant = 8.314;  // J/(mol K)

struct FluidProperties {
  double mu;    // dynamic viscosity [N s/m^2]
  double rho;   // density [kg/m^3]
  double cp;    // heat capacity [J/(kg K)]
  double d_ab;  // diffusivity [m^2/s]
  double k_c;   // thermal conductivity [W/(m K)]
};

struct CharacteristicScales {
  double v_char;  // velocity [m/s]
  double d_char;  // length (tube diameter) [m]
  double p_char;  // pressure
  double t_char;  // temperature [K]
  double c_char;  // concentration [mol/m^3]
};

struct DimensionlessGroups {
  double re;    // Reynolds
  double pe;    // mass Peclet
  double pe_t;  // thermal Peclet
};

// One irreversible second-order reaction. `stoich` is signed per species
// (negative = consumed, positive = produced); the rate is
// k(T) * C[rate_form.first] * C[rate_form.second].
struct Reaction {
  std::vector<int> stoich;
  double k0;  // pre-exponential factor [m^3/(s mol)]
  double ea;  // activation energy [J/mol]
  double dh;  // reaction enthalpy [J/mol]
  std::pair<int, int> rate_form;
};

struct ReactorCase {
  std::string case_id;  // "case1" | "case2" | "case3" (or custom)
  std::vector<std::string> species;
  std::vector<Reaction> reactions;

  // dimensionless geometry
  double length = 12.984;
  double radius = 0.5;

  // inlet / wall data, dimensional
  std::vector<double> inlet_conc;  // [mol/m^3]
  double inlet_temp = 400.0;       // [K]
  double wall_temp = 400.0;        // [K]

  FluidProperties fluid{};
  CharacteristicScales scales{};
  DimensionlessGroups groups{};

  // derived dimensionless quantities, filled by finalize()
  std::vector<double> inlet_conc_dimless;
  std::vector<double> k0_dimless;  // per reaction
  std::vector<double> dh_dimless;  // per reaction
  double inlet_temp_dimless = 0.0;
  double wall_temp_dimless = 0.0;

  int n_species() const { return static_cast<int>(species.size()); }
  int n_reactions() const { return static_cast<int>(reactions.size()); }

  // Validates invariants and computes the derived dimensionless fields.
  void finalize();
};

double thermal_diffusivity(const FluidProperties& fluid);

DimensionlessGroups compute_dimensionless_groups(const FluidProperties& fluid,
                                                 const CharacteristicScales& scales);

// k = k0 exp(-ea/(R T)), T in Kelvin
double arrhenius(double k0, double ea, double temperature);

double nondim_rate_constant(double k0, const CharacteristicScales& scales);

double nondim_enthalpy(double dh, const CharacteristicScales& scales,
                       const FluidProperties& fluid);

// Net consumption rate per species (positive = consumed), everything
// dimensionless; `temperature` is dimensionless and is mapped back to Kelvin
// through t_char before the Arrhenius evaluation.
std::vector<double> reaction_rates(const ReactorCase& rc, std::span<const double> conc,
                                   double temperature);

// Expanded evaluation used by the residual/training and oracle paths: per
// reaction rates and their partials, plus the per-species assembly.
struct RateEval {
  std::vector<double> rate;              // per reaction
  std::vector<double> drate_dc_first;    // d rate_j / d C[rate_form.first]
  std::vector<double> drate_dc_second;   // d rate_j / d C[rate_form.second]
  std::vector<double> drate_dT;          // d rate_j / d T_dimless
  std::vector<double> drate_dEa;         // d rate_j / d Ea_j [per J/mol]
  std::vector<double> consumption;       // per species r_i

  void resize(int n_reactions, int n_species);
};

// `ea_override` (optional, per reaction, J/mol) replaces the case activation
// energies; used when Ea is a trainable unknown.
void reaction_rates_detail(const ReactorCase& rc, std::span<const double> conc,
                           double temperature, std::span<const double> ea_override,
                           RateEval& out);

// Integer basis of the left null space of the species x reaction
// stoichiometric matrix: every returned w satisfies w . r(C,T) = 0.
std::vector<std::vector<int>> stoich_invariants(const ReactorCase& rc);

// Built-in presets for the three reference cases. Throws ConfigError for an
// unknown id.
ReactorCase make_case(const std::string& case_id);

}  // namespace fmenets::physics

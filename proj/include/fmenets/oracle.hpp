#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fmenets/physics.hpp"

namespace fmenets::oracle {

using physics::ReactorCase;

// ---------------------------------------------------------------------------
// FieldGrid: node-centred structured grid over [0,R] x [0,L] holding the
// reference solution fields. Resolution is given in cells; nodes = cells+1,
// including the axis r=0 and both ends.
// ---------------------------------------------------------------------------
struct FieldGrid {
  std::string case_id;
  int nr_cells = 0;
  int nz_cells = 0;
  double radius = 0.5;
  double length = 12.984;
  std::vector<std::string> variables;          // "u","v","p","C_a",...,"T"
  std::map<std::string, std::vector<double>> fields;  // row-major [j*nr_nodes+i]
  std::string solver_hash;

  int nr_nodes() const { return nr_cells + 1; }
  int nz_nodes() const { return nz_cells + 1; }
  double r(int i) const { return radius * i / nr_cells; }
  double z(int j) const { return length * j / nz_cells; }
  double at(const std::string& var, int i, int j) const {
    return fields.at(var)[static_cast<std::size_t>(j) * nr_nodes() + i];
  }
  // bilinear interpolation; throws if (r,z) leaves the domain
  double sample(const std::string& var, double r, double z) const;
};

struct SolverConfig {
  int nr_cells = 128;
  int nz_cells = 512;
  double newton_tol = 1e-10;      // absolute and relative
  int max_newton = 30;            // per continuation step
  int continuation_steps = 10;    // reaction-source ramp 0 -> 1
  double krylov_tol = 1e-4;       // relative, inner linear solves
  int max_krylov = 400;
  // axial advection: second-order upwind by default (the cell Peclet numbers
  // here put the plain central scheme far outside its stability range)
  std::string advection = "lud2";  // lud2 | central
  bool upwind_fallback = true;     // retry with first-order hybrid on failure

  std::string hash() const;
};

struct SolveStats {
  int newton_iterations_total = 0;
  int newton_iterations_worst_step = 0;
  double final_residual = 0.0;
  bool used_upwind = false;
  std::vector<double> residual_history;
};

// fully developed laminar profile with unit mean velocity
double poiseuille_u(const ReactorCase& rc, double r);
// linear pressure, slope -32/Re, outlet reference p(L) = 0
double poiseuille_p(const ReactorCase& rc, double z);

// writes u, v, p onto a grid of the given resolution
FieldGrid analytic_poiseuille(const ReactorCase& rc, int nr_cells, int nz_cells);

// Steady species + energy solve on the analytic flow, Newton iteration with
// reaction-source continuation. Throws NumericError when Newton fails or the
// solution leaves physical bounds.
FieldGrid solve_reactive_transport(const ReactorCase& rc, const SolverConfig& cfg,
                                   SolveStats* stats = nullptr);

// max over grid nodes and invariant vectors of |w.C - w.C_inlet| / |w.C_inlet|
double max_stoich_invariant_drift(const FieldGrid& grid, const ReactorCase& rc);

// ---------------------------------------------------------------------------
// Observations
// ---------------------------------------------------------------------------
struct Observation {
  std::string section;  // inlet | quarter | half | outlet
  double r = 0.0;
  double z = 0.0;
  std::string quantity;  // "C_a".."C_f","T"
  double value = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

struct ObservationSet {
  std::vector<Observation> items;
};

struct MeasurementLayout {
  // (label, axial position); defaults to the four reference cross-sections
  std::vector<std::pair<std::string, double>> sections;
  int radial_points = 9;
  std::vector<std::string> quantities;

  static MeasurementLayout standard(const ReactorCase& rc, bool include_temperature);
};

ObservationSet extract_observations(const FieldGrid& grid, const MeasurementLayout& layout);

enum class NoiseLocation { inlet, outlet, both };

NoiseLocation parse_noise_location(const std::string& s);
std::string to_string(NoiseLocation loc);

// multiplicative gaussian perturbation value*(1 + level*xi) applied at the
// designated sections; level must be one of {0, 0.01, 0.05, 0.10}
ObservationSet add_noise(const ObservationSet& obs, double level, NoiseLocation where,
                         std::uint64_t seed);

// the five canonical replicate seeds used by the noise study
inline constexpr std::uint64_t kNoiseSeeds[5] = {1, 2, 3, 4, 5};

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------
void save_field_grid(const FieldGrid& grid, const std::string& path);
FieldGrid load_field_grid(const std::string& path);

void save_observations(const ObservationSet& obs, const std::string& path);
ObservationSet load_observations(const std::string& path);

}  // namespace fmenets::oracle

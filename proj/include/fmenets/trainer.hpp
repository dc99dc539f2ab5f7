#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmenets/models.hpp"
#include "fmenets/oracle.hpp"
#include "fmenets/physics.hpp"
#include "fmenets/residual.hpp"

namespace fmenets::train {

using oracle::ObservationSet;
using physics::ReactorCase;

// ---------------------------------------------------------------------------
// Adam optimizer (used independently per sub-network)
// ---------------------------------------------------------------------------
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One Adam update; returns false (and leaves params untouched, moments
// decayed) when the gradient contains non-finite entries.
bool optimizer_step(std::span<double> params, std::span<const double> grads,
                    AdamState& state, double lr, const AdamConfig& cfg = {});

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------
struct LrPolicy {
  double lr0 = 1e-3;
  double decay = 0.9;
  int decay_every = 2000;

  double at(long iter) const;
};

struct StageConfig {
  int iterations = 30000;
  LrPolicy lr{};
  double ns_early_stop = 1e-6;  // stage 1; <= 0 disables
  double continuity_weight = 1.0;  // extra emphasis on the divergence residual
  double mb_weight = 10.0;      // global weights, MB:EB defaults to 10:1
  double eb_weight = 1.0;
  double bc_weight = 1.0;
  double data_weight = 1.0;
  double ramp_fraction = 0.0;  // fraction of stage over which mb/eb ramp up
  double ramp_floor = 1e-3;
  int resample_every = 0;  // 0 = fixed collocation pools
};

struct TrainSchedule {
  StageConfig stage1{};
  StageConfig stage2{};
  int pde_points = 2048;
  int boundary_points = 256;
  int q = 2;
  bool rba_enabled = true;
  double rba_gamma = 0.999;
  double rba_eta = 0.01;
  double rba_init = 1.0;
  bool sequential = true;  // false: joint training of every term in one stage
  int log_every = 500;
  double r_min = 1e-3;
};

// ---------------------------------------------------------------------------
// System of sub-networks. `monolithic` collapses everything into nn1 with
// outputs (u,v,p,{C_i},T) for the architecture ablation.
// ---------------------------------------------------------------------------
struct ModelSpec {
  models::ModelKind kind = models::ModelKind::mlp;
  std::vector<int> mlp_hidden = {64, 64, 64, 64};
  bool weight_norm = true;
  std::vector<int> ckan_hidden = {48, 48};
  int ckan_degree = 4;
  bool output_transform = true;
  bool monolithic = false;
};

struct FmeSystem {
  bool monolithic = false;
  std::unique_ptr<models::Model> nn1;  // u, v, p (all outputs when monolithic)
  std::unique_ptr<models::Model> nn2;  // {C_i}
  std::unique_ptr<models::Model> nn3;  // T
  std::vector<models::OutputTransform> tf1, tf2, tf3;

  std::uint64_t param_hash(int which) const;
};

FmeSystem build_system(const ReactorCase& rc, const ModelSpec& spec, std::uint64_t seed);

// Trainable activation energies, parameterized as Ea = exp(s) so positivity
// is structural. One entry per reaction.
struct InverseTarget {
  std::vector<double> log_ea;
  double ea_min = 1.0e3;
  double ea_max = 1.0e6;
  int projection_warnings = 0;

  static InverseTarget init_for(const ReactorCase& rc, double ea_init = 2.0e4);
  std::vector<double> ea() const;
};

// ---------------------------------------------------------------------------
// Histories and reports
// ---------------------------------------------------------------------------
struct LossRecord {
  long iteration = 0;
  int stage = 0;
  double lr = 0.0;
  double total = 0.0;
  double l_pde = 0.0;
  double l_b = 0.0;
  double l_d = 0.0;
  double ns_plain = 0.0;  // unweighted NS mean square, drives early stop
  std::vector<double> ea;
};

struct VarError {
  double rel_l2 = 0.0;
  double abs_l2 = 0.0;  // RMS
};

using EvalReport = std::map<std::string, VarError>;

struct TrainResult {
  std::vector<LossRecord> history;
  loss::LossBreakdown final_breakdown;
  std::vector<double> ea_final;
  std::vector<std::vector<double>> ea_trajectory;
  bool aborted = false;  // non-finite loss, rolled back to last good state
  long stage1_iterations = 0;
  long stage2_iterations = 0;
  int skipped_steps = 0;
};

// ---------------------------------------------------------------------------
// Training entry points. `on_stage_end` fires after each completed stage
// (1, 2, or 3 for joint runs) so callers can emit per-stage checkpoints.
// ---------------------------------------------------------------------------
using StageCallback = std::function<void(int stage)>;

TrainResult train_forward(const ReactorCase& rc, FmeSystem& system,
                          const TrainSchedule& schedule, const ObservationSet& data,
                          std::uint64_t seed, const StageCallback& on_stage_end = {});

TrainResult train_inverse(const ReactorCase& rc, FmeSystem& system,
                          const TrainSchedule& schedule, const ObservationSet& data,
                          InverseTarget& target, std::uint64_t seed,
                          const StageCallback& on_stage_end = {});

// relative L2 per variable on the oracle grid nodes; identically-zero
// reference fields (v) are reported as absolute RMS instead
EvalReport evaluate_model(const FmeSystem& system, const ReactorCase& rc,
                          const oracle::FieldGrid& grid);

// model predictions sampled on the oracle grid (used by reports/plots)
oracle::FieldGrid sample_system(const FmeSystem& system, const ReactorCase& rc,
                                int nr_cells, int nz_cells);

}  // namespace fmenets::train

#pragma once

#include <map>
#include <string>
#include <vector>

#include "fmenets/oracle.hpp"
#include "fmenets/trainer.hpp"

namespace fmenets::cli {

struct NoiseSpec {
  double level = 0.0;  // single training run
  std::string location = "both";
  std::uint64_t seed = 1;
  // sweep campaign axes
  std::vector<std::string> models = {"ckan", "mlp"};
  std::vector<double> levels = {0.01, 0.05, 0.10};
  std::vector<std::string> locations = {"inlet", "outlet", "both"};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

struct RunConfig {
  std::string case_id = "case1";
  std::string case_file;  // optional declarative case definition
  std::string model = "mlp";
  std::string mode = "forward";

  std::vector<int> mlp_hidden = {64, 64, 64, 64};
  std::vector<int> ckan_hidden = {48, 48};
  int ckan_degree = 4;

  train::TrainSchedule schedule{};
  bool weight_norm = true;
  bool output_transform = true;
  bool monolithic = false;
  double ramp_fraction = 0.4;  // inverse-mode global-weight ramp window

  NoiseSpec noise{};
  std::uint64_t seed = 42;
  int oracle_nr = 128;
  int oracle_nz = 512;
  std::string out_dir = "out";
  double ea_init = 2.0e4;
  std::map<std::string, double> thresholds;  // optional CI gate, var -> max rel L2

  physics::ReactorCase reactor_case() const;
  train::ModelSpec model_spec() const;
  train::TrainSchedule resolved_schedule() const;  // applies mode-driven ramp
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

// declarative reactor-case files
physics::ReactorCase load_case_config(const std::string& path);
void save_case_config(const physics::ReactorCase& rc, const std::string& path);

// checkpoints: architecture + transforms + flat parameters + stage tag
void save_checkpoint(const train::FmeSystem& system, const std::string& case_id,
                     const std::string& stage, const std::vector<double>& ea,
                     const std::string& path);

struct LoadedCheckpoint {
  train::FmeSystem system;
  std::string case_id;
  std::string stage;
  std::vector<double> ea;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace fmenets::cli

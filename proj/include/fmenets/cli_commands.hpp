#pragma once

#include <string>
#include <vector>

#include "fmenets/config.hpp"

namespace fmenets::cli {

// bounded worker count for sweep campaigns; FMENETS_THREADS overrides
int worker_threads();

std::string data_dir(const RunConfig& cfg);
std::string grid_path(const RunConfig& cfg);
std::string obs_path(const RunConfig& cfg, double level, const std::string& location,
                     std::uint64_t seed);
std::string run_tag(const RunConfig& cfg);
std::string run_dir(const RunConfig& cfg);

// forward mode keeps inlet/outlet concentrations; inverse mode keeps every
// section plus temperature (the multi-residence-time layout)
oracle::ObservationSet observations_for_mode(const oracle::ObservationSet& full,
                                             const std::string& mode,
                                             const physics::ReactorCase& rc);

struct TrainOutcome {
  train::TrainResult result;
  train::EvalReport report;
  std::vector<double> ea_true;
  std::vector<double> ea_inferred;
  std::string report_path;
  std::string checkpoint_path;
};

// load data, train per config, write checkpoints/metrics/report; shared by
// cmd_train, the sweep and the acceptance suite
TrainOutcome run_training(const RunConfig& cfg);

int cmd_generate(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_sweep_noise(const RunConfig& cfg);
int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& grid_file);
int cmd_report(const std::vector<std::string>& run_dirs);

}  // namespace fmenets::cli

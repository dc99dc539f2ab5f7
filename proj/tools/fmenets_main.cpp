#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fmenets/cli_commands.hpp"
#include "fmenets/errors.hpp"

namespace {

using fmenets::cli::RunConfig;

// flag overrides applied on top of an optional --config file
struct Overrides {
  std::string config_path;
  std::string case_id;
  std::string model;
  std::string mode;
  long seed = -1;
  double noise_level = -1.0;
  std::string noise_loc;
  long noise_seed = -1;
  bool no_rba = false;
  bool no_weight_norm = false;
  bool no_output_transform = false;
  bool no_sequential = false;
  bool monolithic = false;
  std::string oracle_grid;  // "NRxNZ"
  std::string out;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "run configuration file (JSON)");
  cmd->add_option("--case", o.case_id, "case id (case1|case2|case3) or case file path");
  cmd->add_option("--model", o.model, "representation model: mlp|ckan");
  cmd->add_option("--mode", o.mode, "forward|inverse");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--noise-level", o.noise_level, "observation noise level (0, 0.01, 0.05, 0.1)");
  cmd->add_option("--noise-loc", o.noise_loc, "noise location: inlet|outlet|both");
  cmd->add_option("--noise-seed", o.noise_seed, "noise replicate seed");
  cmd->add_flag("--no-rba", o.no_rba, "disable residual-based attention weights");
  cmd->add_flag("--no-weight-norm", o.no_weight_norm, "disable weight normalization");
  cmd->add_flag("--no-output-transform", o.no_output_transform,
                "disable bounded output transforms");
  cmd->add_flag("--no-sequential", o.no_sequential, "train all terms jointly in one stage");
  cmd->add_flag("--monolithic", o.monolithic, "single network for all outputs");
  cmd->add_option("--oracle-grid", o.oracle_grid, "oracle resolution, e.g. 128x512");
  cmd->add_option("--out", o.out, "output directory");
}

RunConfig build_config(const Overrides& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = fmenets::cli::load_run_config(o.config_path);
  if (!o.case_id.empty()) {
    if (o.case_id.find(".json") != std::string::npos) {
      cfg.case_file = o.case_id;
      cfg.case_id = fmenets::cli::load_case_config(o.case_id).case_id;
    } else {
      cfg.case_id = o.case_id;
      cfg.case_file.clear();
    }
  }
  if (!o.model.empty()) cfg.model = o.model;
  if (!o.mode.empty()) cfg.mode = o.mode;
  if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
  if (o.noise_level >= 0.0) cfg.noise.level = o.noise_level;
  if (!o.noise_loc.empty()) cfg.noise.location = o.noise_loc;
  if (o.noise_seed >= 0) cfg.noise.seed = static_cast<std::uint64_t>(o.noise_seed);
  if (o.no_rba) cfg.schedule.rba_enabled = false;
  if (o.no_weight_norm) cfg.weight_norm = false;
  if (o.no_output_transform) cfg.output_transform = false;
  if (o.no_sequential) cfg.schedule.sequential = false;
  if (o.monolithic) cfg.monolithic = true;
  if (!o.oracle_grid.empty()) {
    const auto x = o.oracle_grid.find('x');
    if (x == std::string::npos) {
      throw fmenets::ConfigError("--oracle-grid expects NRxNZ, e.g. 128x512");
    }
    cfg.oracle_nr = std::stoi(o.oracle_grid.substr(0, x));
    cfg.oracle_nz = std::stoi(o.oracle_grid.substr(x + 1));
  }
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (cfg.model != "mlp" && cfg.model != "ckan") {
    throw fmenets::ConfigError("model must be 'mlp' or 'ckan'");
  }
  if (cfg.mode != "forward" && cfg.mode != "inverse") {
    throw fmenets::ConfigError("mode must be 'forward' or 'inverse'");
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmenets: physics-informed solvers for non-ideal plug flow reactors"};
  app.require_subcommand(1);

  Overrides og, ot, os, oe;
  std::string eval_checkpoint, eval_grid;
  std::vector<std::string> report_dirs;

  auto* generate = app.add_subcommand("generate", "solve the reference problem and write datasets");
  add_common(generate, og);
  auto* tr = app.add_subcommand("train", "train a forward or inverse run");
  add_common(tr, ot);
  auto* sweep = app.add_subcommand("sweep-noise", "train across noise levels/locations/seeds");
  add_common(sweep, os);
  auto* evaluate = app.add_subcommand("evaluate", "recompute metrics for a checkpoint");
  add_common(evaluate, oe);
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  evaluate->add_option("--grid", eval_grid, "oracle grid file (defaults to the data dir)");
  auto* report = app.add_subcommand("report", "summarize run directories");
  report->add_option("dirs", report_dirs, "run directories containing report.json");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return fmenets::cli::cmd_generate(build_config(og));
    if (tr->parsed()) return fmenets::cli::cmd_train(build_config(ot));
    if (sweep->parsed()) return fmenets::cli::cmd_sweep_noise(build_config(os));
    if (evaluate->parsed()) {
      return fmenets::cli::cmd_evaluate(build_config(oe), eval_checkpoint, eval_grid);
    }
    if (report->parsed()) return fmenets::cli::cmd_report(report_dirs);
  } catch (const fmenets::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fmenets::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const fmenets::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

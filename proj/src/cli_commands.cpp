#include "fmenets/cli_commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "fmenets/errors.hpp"

namespace fmenets::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

int worker_threads() {
  if (const char* env = std::getenv("FMENETS_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

std::string data_dir(const RunConfig& cfg) { return cfg.out_dir + "/data"; }

namespace {
std::string res_suffix(const RunConfig& cfg) {
  return std::to_string(cfg.oracle_nr) + "x" + std::to_string(cfg.oracle_nz);
}
int level_percent(double level) { return static_cast<int>(std::lround(level * 100.0)); }
}  // namespace

std::string grid_path(const RunConfig& cfg) {
  return data_dir(cfg) + "/" + cfg.case_id + "_grid_" + res_suffix(cfg) + ".bin";
}

std::string obs_path(const RunConfig& cfg, double level, const std::string& location,
                     std::uint64_t seed) {
  if (level == 0.0) {
    return data_dir(cfg) + "/" + cfg.case_id + "_obs_clean_" + res_suffix(cfg) + ".csv";
  }
  return data_dir(cfg) + "/" + cfg.case_id + "_obs_noise" + std::to_string(level_percent(level)) +
         "_" + location + "_s" + std::to_string(seed) + "_" + res_suffix(cfg) + ".csv";
}

std::string run_tag(const RunConfig& cfg) {
  std::string tag = cfg.case_id + "_" + cfg.model + "_" + cfg.mode;
  if (cfg.monolithic) tag += "_mono";
  if (!cfg.schedule.sequential) tag += "_joint";
  if (!cfg.schedule.rba_enabled) tag += "_norba";
  if (!cfg.weight_norm) tag += "_nown";
  if (!cfg.output_transform) tag += "_noot";
  if (cfg.noise.level > 0.0) {
    tag += "_noise" + std::to_string(level_percent(cfg.noise.level)) + "_" +
           cfg.noise.location + "_n" + std::to_string(cfg.noise.seed);
  }
  tag += "_s" + std::to_string(cfg.seed);
  return tag;
}

std::string run_dir(const RunConfig& cfg) { return cfg.out_dir + "/runs/" + run_tag(cfg); }

oracle::ObservationSet observations_for_mode(const oracle::ObservationSet& full,
                                             const std::string& mode,
                                             const physics::ReactorCase& rc) {
  oracle::ObservationSet out;
  for (const auto& o : full.items) {
    bool keep = false;
    if (mode == "forward") {
      keep = (o.section == "inlet" || o.section == "outlet") && o.quantity != "T";
    } else if (mode == "inverse") {
      keep = true;
    } else {
      throw ConfigError("unknown mode '" + mode + "'");
    }
    if (!keep) continue;
    bool known = o.quantity == "T";
    for (const auto& sp : rc.species) known = known || o.quantity == "C_" + sp;
    if (!known) {
      throw ConfigError("observation quantity '" + o.quantity + "' unknown for case " +
                        rc.case_id);
    }
    out.items.push_back(o);
  }
  return out;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

int cmd_generate(const RunConfig& cfg) {
  const auto rc = cfg.reactor_case();
  std::error_code ec;
  fs::create_directories(data_dir(cfg), ec);
  if (ec) throw IoError("cannot create output directory '" + data_dir(cfg) + "'");

  oracle::SolverConfig scfg;
  scfg.nr_cells = cfg.oracle_nr;
  scfg.nz_cells = cfg.oracle_nz;
  oracle::SolveStats stats;
  const auto grid = oracle::solve_reactive_transport(rc, scfg, &stats);
  oracle::save_field_grid(grid, grid_path(cfg));
  std::cout << "wrote " << grid_path(cfg) << " (newton iters " << stats.newton_iterations_total
            << ", residual " << stats.final_residual << ")\n";

  const auto layout = oracle::MeasurementLayout::standard(rc, /*include_temperature=*/true);
  const auto clean = oracle::extract_observations(grid, layout);
  oracle::save_observations(clean, obs_path(cfg, 0.0, "both", 0));
  std::cout << "wrote " << obs_path(cfg, 0.0, "both", 0) << " (" << clean.items.size()
            << " observations)\n";

  int count = 0;
  for (double level : cfg.noise.levels) {
    for (const auto& loc : cfg.noise.locations) {
      for (std::uint64_t seed : cfg.noise.seeds) {
        const auto noisy =
            oracle::add_noise(clean, level, oracle::parse_noise_location(loc), seed);
        oracle::save_observations(noisy, obs_path(cfg, level, loc, seed));
        ++count;
      }
    }
  }
  std::cout << "wrote " << count << " noisy observation sets\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

void write_metrics_log(const train::TrainResult& result, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& rec : result.history) {
    json j;
    j["iteration"] = rec.iteration;
    j["stage"] = rec.stage;
    j["lr"] = rec.lr;
    j["total"] = rec.total;
    j["l_pde"] = rec.l_pde;
    j["l_b"] = rec.l_b;
    j["l_d"] = rec.l_d;
    j["ns_plain"] = rec.ns_plain;
    if (!rec.ea.empty()) j["ea"] = rec.ea;
    f << j.dump() << "\n";
  }
}

json report_to_json(const RunConfig& cfg, const train::TrainResult& result,
                    const train::EvalReport& report, const std::vector<double>& ea_true,
                    const std::vector<double>& ea_inferred) {
  json j;
  j["case"] = cfg.case_id;
  j["model"] = cfg.model;
  j["mode"] = cfg.mode;
  j["seed"] = cfg.seed;
  j["noise"] = {{"level", cfg.noise.level},
                {"location", cfg.noise.location},
                {"seed", cfg.noise.seed}};
  json errs;
  for (const auto& [var, e] : report) {
    errs[var] = {{"rel_l2", e.rel_l2}, {"abs_l2", e.abs_l2}};
  }
  j["errors"] = errs;
  if (!ea_inferred.empty()) {
    json ea;
    ea["true"] = ea_true;
    ea["inferred"] = ea_inferred;
    std::vector<double> rel;
    for (std::size_t i = 0; i < ea_true.size(); ++i) {
      rel.push_back(std::abs(ea_inferred[i] - ea_true[i]) / ea_true[i]);
    }
    ea["rel_err"] = rel;
    j["ea"] = ea;
  }
  j["aborted"] = result.aborted;
  j["stage1_iterations"] = result.stage1_iterations;
  j["stage2_iterations"] = result.stage2_iterations;
  j["skipped_steps"] = result.skipped_steps;
  if (!result.history.empty()) {
    const auto& last = result.history.back();
    j["final_loss"] = {{"total", last.total},
                       {"l_pde", last.l_pde},
                       {"l_b", last.l_b},
                       {"l_d", last.l_d}};
  }
  return j;
}

}  // namespace

TrainOutcome run_training(const RunConfig& cfg) {
  const auto rc = cfg.reactor_case();

  const std::string gpath = grid_path(cfg);
  if (!fs::exists(gpath)) {
    throw IoError("oracle grid not found at '" + gpath + "'; run `fmenets generate` first");
  }
  const auto grid = oracle::load_field_grid(gpath);

  const std::string opath = obs_path(cfg, cfg.noise.level, cfg.noise.location, cfg.noise.seed);
  if (!fs::exists(opath)) {
    throw IoError("observation set not found at '" + opath + "'; run `fmenets generate` first");
  }
  const auto full_obs = oracle::load_observations(opath);
  const auto obs = observations_for_mode(full_obs, cfg.mode, rc);

  const std::string rdir = run_dir(cfg);
  std::error_code ec;
  fs::create_directories(rdir, ec);
  if (ec) throw IoError("cannot create run directory '" + rdir + "'");

  auto system = train::build_system(rc, cfg.model_spec(), cfg.seed);
  const auto schedule = cfg.resolved_schedule();

  TrainOutcome outcome;
  std::vector<double> ea_inferred;
  auto stage_cb = [&](int stage) {
    save_checkpoint(system, rc.case_id, "stage" + std::to_string(stage), ea_inferred,
                    rdir + "/checkpoint_stage" + std::to_string(stage) + ".json");
  };

  if (cfg.mode == "inverse") {
    auto target = train::InverseTarget::init_for(rc, cfg.ea_init);
    auto cb = [&](int stage) {
      ea_inferred = target.ea();
      stage_cb(stage);
    };
    outcome.result = train::train_inverse(rc, system, schedule, obs, target, cfg.seed, cb);
    ea_inferred = target.ea();
    for (const auto& rx : rc.reactions) outcome.ea_true.push_back(rx.ea);
    outcome.ea_inferred = ea_inferred;
  } else {
    outcome.result = train::train_forward(rc, system, schedule, obs, cfg.seed, stage_cb);
  }

  outcome.report = train::evaluate_model(system, rc, grid);

  outcome.checkpoint_path = rdir + "/checkpoint_final.json";
  save_checkpoint(system, rc.case_id, "final", ea_inferred, outcome.checkpoint_path);
  write_metrics_log(outcome.result, rdir + "/metrics.jsonl");
  save_run_config(cfg, rdir + "/config.json");

  outcome.report_path = rdir + "/report.json";
  const json rep =
      report_to_json(cfg, outcome.result, outcome.report, outcome.ea_true, outcome.ea_inferred);
  std::ofstream f(outcome.report_path);
  if (!f) throw IoError("cannot open '" + outcome.report_path + "' for writing");
  f << rep.dump(2) << "\n";
  return outcome;
}

int cmd_train(const RunConfig& cfg) {
  const auto outcome = run_training(cfg);
  std::cout << "run " << run_tag(cfg) << (outcome.result.aborted ? " ABORTED" : "") << "\n";
  for (const auto& [var, e] : outcome.report) {
    std::printf("  %-4s rel_l2 %.4f%%  abs_l2 %.3e\n", var.c_str(), 100.0 * e.rel_l2,
                e.abs_l2);
  }
  for (std::size_t i = 0; i < outcome.ea_inferred.size(); ++i) {
    std::printf("  Ea[%zu] inferred %.1f true %.1f (err %.3f%%)\n", i,
                outcome.ea_inferred[i], outcome.ea_true[i],
                100.0 * std::abs(outcome.ea_inferred[i] - outcome.ea_true[i]) /
                    outcome.ea_true[i]);
  }
  std::cout << "report: " << outcome.report_path << "\n";
  return outcome.result.aborted ? 3 : 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

int cmd_sweep_noise(const RunConfig& cfg) {
  struct Job {
    std::string model;
    double level;
    std::string location;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& model : cfg.noise.models) {
    for (double level : cfg.noise.levels) {
      for (const auto& loc : cfg.noise.locations) {
        for (std::uint64_t seed : cfg.noise.seeds) {
          jobs.push_back({model, level, loc, seed});
        }
      }
    }
  }
  // verify datasets exist up front so failures name the missing path
  for (const auto& job : jobs) {
    const std::string p = obs_path(cfg, job.level, job.location, job.seed);
    if (job.level > 0.0 && !fs::exists(p)) {
      throw IoError("noisy observation set not found at '" + p +
                    "'; run `fmenets generate` first");
    }
  }

  std::vector<std::string> rows;
  std::mutex mu;
  std::vector<std::string> errors;
  std::size_t next = 0;

  auto work = [&]() {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next >= jobs.size()) return;
        k = next++;
      }
      const Job& job = jobs[k];
      RunConfig run = cfg;
      run.model = job.model;
      run.noise.level = job.level;
      run.noise.location = job.location;
      run.noise.seed = job.seed;
      run.seed = cfg.seed + 101 * job.seed;  // replicate: new data draw and new init
      try {
        const auto outcome = run_training(run);
        std::vector<std::string> local;
        for (const auto& [var, e] : outcome.report) {
          char buf[256];
          std::snprintf(buf, sizeof buf, "%s,%d,%s,%llu,%s,%.17g", job.model.c_str(),
                        level_percent(job.level), job.location.c_str(),
                        static_cast<unsigned long long>(job.seed), var.c_str(), e.rel_l2);
          local.push_back(buf);
        }
        std::lock_guard<std::mutex> lock(mu);
        rows.insert(rows.end(), local.begin(), local.end());
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        errors.push_back(std::string(e.what()));
      }
    }
  };

  const int nw = std::max(1, std::min<int>(worker_threads(), static_cast<int>(jobs.size())));
  std::vector<std::thread> pool;
  for (int i = 0; i < nw; ++i) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  if (!errors.empty()) {
    for (const auto& e : errors) std::cerr << "sweep error: " << e << "\n";
    throw NumericError("noise sweep failed for " + std::to_string(errors.size()) + " runs");
  }

  std::sort(rows.begin(), rows.end());
  const std::string csv = cfg.out_dir + "/sweep_noise.csv";
  std::ofstream f(csv);
  if (!f) throw IoError("cannot open '" + csv + "' for writing");
  f << "model,level,location,seed,variable,rel_l2\n";
  for (const auto& r : rows) f << r << "\n";
  std::cout << "wrote " << csv << " (" << rows.size() << " rows from " << jobs.size()
            << " runs)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate / report
// ---------------------------------------------------------------------------

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& grid_file) {
  auto loaded = load_checkpoint(checkpoint_path);
  const auto rc = cfg.case_file.empty() ? physics::make_case(loaded.case_id)
                                        : load_case_config(cfg.case_file);
  if (loaded.case_id != rc.case_id) {
    throw ConfigError("checkpoint case '" + loaded.case_id + "' does not match '" +
                      rc.case_id + "'");
  }
  const std::string gpath = grid_file.empty() ? grid_path(cfg) : grid_file;
  if (!fs::exists(gpath)) throw IoError("oracle grid not found at '" + gpath + "'");
  const auto grid = oracle::load_field_grid(gpath);
  const auto report = train::evaluate_model(loaded.system, rc, grid);

  bool gate_failed = false;
  for (const auto& [var, e] : report) {
    std::printf("%-4s rel_l2 %.4f%%  abs_l2 %.3e", var.c_str(), 100.0 * e.rel_l2, e.abs_l2);
    auto it = cfg.thresholds.find(var);
    if (it != cfg.thresholds.end()) {
      const double err = (var == "v") ? e.abs_l2 : e.rel_l2;
      const bool ok = err <= it->second;
      std::printf("  [gate %.4f: %s]", it->second, ok ? "pass" : "FAIL");
      gate_failed = gate_failed || !ok;
    }
    std::printf("\n");
  }
  if (!loaded.ea.empty()) {
    for (std::size_t i = 0; i < loaded.ea.size(); ++i) {
      std::printf("Ea[%zu] = %.2f\n", i, loaded.ea[i]);
    }
  }
  return gate_failed ? 4 : 0;
}

int cmd_report(const std::vector<std::string>& run_dirs) {
  std::printf("%-44s %-8s %-8s %s\n", "run", "mode", "model", "errors (rel L2 %)");
  for (const auto& dir : run_dirs) {
    const std::string path = dir + "/report.json";
    if (!fs::exists(path)) {
      std::printf("%-44s missing report.json\n", dir.c_str());
      continue;
    }
    std::ifstream f(path);
    json j = json::parse(f);
    std::string errs;
    for (auto it = j.at("errors").begin(); it != j.at("errors").end(); ++it) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s=%.2f ", it.key().c_str(),
                    100.0 * it.value().at("rel_l2").get<double>());
      errs += buf;
    }
    if (j.contains("ea")) {
      const auto rel = j.at("ea").at("rel_err").get<std::vector<double>>();
      for (double r : rel) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "Ea=%.2f%% ", 100.0 * r);
        errs += buf;
      }
    }
    std::printf("%-44s %-8s %-8s %s\n", fs::path(dir).filename().string().c_str(),
                j.at("mode").get<std::string>().c_str(),
                j.at("model").get<std::string>().c_str(), errs.c_str());
  }
  return 0;
}

}  // namespace fmenets::cli

// Acceptance gate: runs every release criterion end to end at desk scale and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fmenets/autodiff.hpp"
#include "fmenets/cli_commands.hpp"
#include "fmenets/config.hpp"
#include "fmenets/models.hpp"
#include "fmenets/oracle.hpp"
#include "fmenets/physics.hpp"
#include "fmenets/residual.hpp"
#include "fmenets/rng.hpp"
#include "fmenets/trainer.hpp"

using namespace fmenets;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;
std::chrono::steady_clock::time_point g_t0;

void start() { g_t0 = std::chrono::steady_clock::now(); }

void verdict(int criterion, bool pass, const std::string& what, const std::string& detail) {
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - g_t0).count();
  std::printf("[%s] criterion %2d: %s (%s; %.1fs)\n", pass ? "PASS" : "FAIL", criterion,
              what.c_str(), detail.c_str(), secs);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

std::string pct(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f%%", 100.0 * x);
  return buf;
}

const std::string kOut = "acceptance_out";

// ---------------------------------------------------------------------------
// desk-scale run profiles
// ---------------------------------------------------------------------------

cli::RunConfig base_config(const std::string& case_id) {
  cli::RunConfig cfg;
  cfg.case_id = case_id;
  cfg.out_dir = kOut;
  cfg.oracle_nr = 128;
  cfg.oracle_nz = 512;
  cfg.mlp_hidden = {24, 24, 24};
  cfg.ckan_hidden = {14, 14};
  cfg.ckan_degree = 4;
  cfg.schedule.pde_points = 384;
  cfg.schedule.boundary_points = 96;
  cfg.schedule.stage1.iterations = 30000;
  cfg.schedule.stage1.ns_early_stop = 1e-6;
  cfg.schedule.stage2.iterations = 12000;
  cfg.schedule.log_every = 1000;
  cfg.noise.levels = {0.01, 0.10};
  cfg.noise.locations = {"both"};
  cfg.noise.seeds = {1, 2};
  return cfg;
}

double rel(const train::EvalReport& r, const std::string& v) { return r.at(v).rel_l2; }

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

void criterion_1() {
  start();
  const auto rc = physics::make_case("case1");
  Rng rng(71);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double r = rng.uniform(1e-3, rc.radius);
    const double z = rng.uniform(0.0, rc.length);
    auto closure = [&](ad::Dual2<double> rr, ad::Dual2<double> zz) {
      using D = ad::Dual2<double>;
      const double q = 1.0 / (rc.radius * rc.radius);
      D u = 2.0 * (1.0 - rr * rr * q);
      D v(0.0);
      D p = (32.0 / rc.groups.re) * (rc.length - zz);
      return std::vector<D>{u, v, p};
    };
    const auto jets = ad::eval_with_input_derivs(closure, r, z);
    const auto e = loss::ns_residuals(jets[0], jets[1], jets[2], r, rc.groups.re);
    worst = std::max({worst, std::abs(e[0]), std::abs(e[1]), std::abs(e[2])});
  }
  verdict(1, worst <= 1e-8, "analytic-flow nullity of the momentum residuals",
          "max |e| = " + std::to_string(worst) + " over 1e4 points");
}

void criterion_2() {
  start();
  Rng rng(72);
  bool pass = true;
  std::string why = "100 random configurations within 1e-4 of finite differences";
  for (int cfg_i = 0; cfg_i < 100 && pass; ++cfg_i) {
    const bool use_ckan = cfg_i % 2 == 1;
    const int n_out = 1 + static_cast<int>(rng.next_u64() % 3);
    std::unique_ptr<models::Model> net;
    const models::InputScaling sc{0.0, 0.5, 0.0, 12.984};
    if (use_ckan) {
      const int w = 3 + static_cast<int>(rng.next_u64() % 6);
      const int deg = 2 + static_cast<int>(rng.next_u64() % 4);
      net = models::make_ckan({w, w}, n_out, deg, sc, 1000 + cfg_i);
    } else {
      const int w = 4 + static_cast<int>(rng.next_u64() % 8);
      net = models::make_mlp({w, w}, n_out, cfg_i % 4 != 0, sc, 2000 + cfg_i);
    }
    const double r = rng.uniform(0.05, 0.45);
    const double z = rng.uniform(0.5, 12.5);

    // input derivatives against central differences
    auto ws = net->make_workspace();
    std::vector<ad::Jet> jets(n_out);
    net->eval_jet(r, z, *ws, jets);
    const double h = 1e-4;
    std::vector<double> op(n_out), om(n_out), oc(n_out);
    auto evalv = [&](double rr, double zz, std::vector<double>& out) {
      net->eval(rr, zz, *ws, out);
    };
    evalv(r, z, oc);
    for (int o = 0; o < n_out && pass; ++o) {
      evalv(r + h, z, op);
      evalv(r - h, z, om);
      const double fdr = (op[o] - om[o]) / (2 * h);
      const double fdrr = (op[o] - 2 * oc[o] + om[o]) / (h * h);
      evalv(r, z + h, op);
      evalv(r, z - h, om);
      const double fdz = (op[o] - om[o]) / (2 * h);
      const double fdzz = (op[o] - 2 * oc[o] + om[o]) / (h * h);
      auto ok = [&](double got, double ref) {
        return std::abs(got - ref) <= 1e-4 * std::max({1.0, std::abs(got), std::abs(ref)});
      };
      if (!(ok(jets[o].dr, fdr) && ok(jets[o].dz, fdz) && ok(jets[o].drr, fdrr) &&
            ok(jets[o].dzz, fdzz))) {
        pass = false;
        why = "input-derivative mismatch on config " + std::to_string(cfg_i);
      }
    }

    // parameter gradient of a composite loss against finite differences
    std::vector<ad::Jet> adj(n_out);
    Rng arng(300 + cfg_i);
    for (auto& a : adj) {
      a = ad::Jet{arng.uniform(-1, 1), arng.uniform(-1, 1), arng.uniform(-1, 1),
                  arng.uniform(-1, 1), arng.uniform(-1, 1)};
    }
    ws->zero_grad();
    net->eval_jet(r, z, *ws, jets);
    net->backward_jet(*ws, adj);
    std::vector<double> grad(net->n_params(), 0.0);
    net->fold_grad(*ws, grad);
    auto scalar_loss = [&]() {
      std::vector<ad::Jet> js(n_out);
      net->eval_jet(r, z, *ws, js);
      double acc = 0.0;
      for (int o = 0; o < n_out; ++o) {
        acc += adj[o].v * js[o].v + adj[o].dr * js[o].dr + adj[o].dz * js[o].dz +
               adj[o].drr * js[o].drr + adj[o].dzz * js[o].dzz;
      }
      return acc;
    };
    for (int probe = 0; probe < 8 && pass; ++probe) {
      const int i = static_cast<int>(rng.next_u64() % net->n_params());
      const double hp = 1e-5;
      auto params = net->params();
      const double saved = params[i];
      params[i] = saved + hp;
      net->refresh();
      const double fp = scalar_loss();
      params[i] = saved - hp;
      net->refresh();
      const double fm = scalar_loss();
      params[i] = saved;
      net->refresh();
      const double fd = (fp - fm) / (2 * hp);
      if (std::abs(grad[i] - fd) > 1e-4 * std::max({1.0, std::abs(fd), std::abs(grad[i])})) {
        pass = false;
        why = "parameter-gradient mismatch on config " + std::to_string(cfg_i);
      }
    }
  }
  verdict(2, pass, "autodiff first/second derivatives and parameter gradients", why);
}

std::map<std::string, oracle::FieldGrid> g_grids;

void criterion_3() {
  start();
  bool pass = true;
  std::string detail;
  try {
    for (const char* id : {"case1", "case2", "case3"}) {
      const auto rc = physics::make_case(id);
      oracle::SolverConfig scfg;  // default 128x512, tol 1e-10
      oracle::SolveStats stats;
      const auto grid = oracle::solve_reactive_transport(rc, scfg, &stats);
      const double drift = oracle::max_stoich_invariant_drift(grid, rc);
      detail += std::string(id) + ": res " + std::to_string(stats.final_residual) +
                ", worst newton " + std::to_string(stats.newton_iterations_worst_step) +
                ", drift " + std::to_string(drift) + "; ";
      if (!(stats.final_residual < 1e-10 && stats.newton_iterations_worst_step <= 30 &&
            drift <= 1e-8)) {
        pass = false;
      }
      g_grids[id] = grid;
    }
    // observed order across three nested grids (case 1)
    const auto rc = physics::make_case("case1");
    oracle::SolverConfig c32, c64;
    c32.nr_cells = 32;
    c32.nz_cells = 128;
    c64.nr_cells = 64;
    c64.nz_cells = 256;
    const auto g32 = oracle::solve_reactive_transport(rc, c32);
    const auto g64 = oracle::solve_reactive_transport(rc, c64);
    const auto& g128 = g_grids["case1"];
    auto diff = [&](const oracle::FieldGrid& fine, const oracle::FieldGrid& coarse) {
      double acc = 0.0;
      int n = 0;
      const int rr = fine.nr_cells / coarse.nr_cells;
      const int rz = fine.nz_cells / coarse.nz_cells;
      for (const auto& var : {std::string("C_a"), std::string("C_b"), std::string("T")}) {
        for (int j = 0; j < coarse.nz_nodes(); ++j) {
          for (int i = 0; i < coarse.nr_nodes(); ++i) {
            const double d = fine.at(var, i * rr, j * rz) - coarse.at(var, i, j);
            acc += d * d;
            ++n;
          }
        }
      }
      return std::sqrt(acc / n);
    };
    const double e12 = diff(g64, g32);
    const double e23 = diff(g128, g64);
    const double order = std::log2(e12 / e23);
    detail += "order " + std::to_string(order);
    pass = pass && order >= 1.8;
  } catch (const std::exception& e) {
    pass = false;
    detail = e.what();
  }
  verdict(3, pass, "oracle convergence, conservation and observed order", detail);
}

// shared training artifacts reused by later criteria
std::map<std::string, train::EvalReport> g_reports;
std::map<std::string, std::vector<double>> g_ea;

cli::TrainOutcome run_and_stash(const cli::RunConfig& cfg, const std::string& key) {
  auto outcome = cli::run_training(cfg);
  g_reports[key] = outcome.report;
  if (!outcome.ea_inferred.empty()) g_ea[key] = outcome.ea_inferred;
  return outcome;
}

void criterion_4() {
  start();
  bool pass = true;
  std::string detail;
  try {
    auto cfg = base_config("case1");
    const auto outcome = run_and_stash(cfg, "case1_fwd");
    const auto& r = outcome.report;
    const double vabs = r.at("v").abs_l2;
    detail = "u " + pct(rel(r, "u")) + ", p " + pct(rel(r, "p")) + ", C_a " +
             pct(rel(r, "C_a")) + ", C_b " + pct(rel(r, "C_b")) + ", T " + pct(rel(r, "T")) +
             ", v abs " + std::to_string(vabs);
    pass = rel(r, "u") <= 0.05 && rel(r, "p") <= 0.05 && rel(r, "C_a") <= 0.05 &&
           rel(r, "C_b") <= 0.05 && rel(r, "T") <= 0.05 && vabs <= 1e-4 &&
           !outcome.result.aborted;
  } catch (const std::exception& e) {
    pass = false;
    detail = e.what();
  }
  verdict(4, pass, "case 1 forward solve at desk scale", detail);
}

void criterion_5() {
  start();
  bool pass = true;
  std::string detail;
  try {
    for (const char* id : {"case2", "case3"}) {
      auto cfg = base_config(id);
      const auto outcome = run_and_stash(cfg, std::string(id) + "_fwd");
      double worst = 0.0;
      std::string worst_var;
      for (const auto& [var, e] : outcome.report) {
        const double err = var == "v" ? e.abs_l2 : e.rel_l2;
        if (var != "v" && err > worst) {
          worst = err;
          worst_var = var;
        }
      }
      detail += std::string(id) + " worst " + worst_var + " " + pct(worst) + "; ";
      pass = pass && worst <= 0.10 && !outcome.result.aborted;
    }
  } catch (const std::exception& e) {
    pass = false;
    detail = e.what();
  }
  verdict(5, pass, "case 2/3 forward within 10% everywhere", detail);
}

void criterion_6() {
  start();
  bool pass = true;
  std::string detail;
  try {
    {
      auto cfg = base_config("case1");
      cfg.mode = "inverse";
      cfg.schedule.stage2.iterations = 20000;
      const auto outcome = run_and_stash(cfg, "case1_inv");
      const double err =
          std::abs(outcome.ea_inferred.at(0) - 40230.0) / 40230.0;
      detail += "case1 Ea err " + pct(err) + "; ";
      pass = pass && err <= 0.025;
    }
    {
      auto cfg = base_config("case2");
      cfg.mode = "inverse";
      cfg.schedule.stage2.iterations = 20000;
      const auto outcome = run_and_stash(cfg, "case2_inv");
      for (std::size_t j = 0; j < outcome.ea_inferred.size(); ++j) {
        const double err = std::abs(outcome.ea_inferred[j] - 40230.0) / 40230.0;
        detail += "case2 Ea" + std::to_string(j) + " err " + pct(err) + "; ";
        pass = pass && err <= 0.03;
      }
    }
  } catch (const std::exception& e) {
    pass = false;
    detail = e.what();
  }
  verdict(6, pass, "inverse activation-energy recovery", detail);
}

void criterion_7() {
  start();
  bool pass = true;
  std::string detail;
  try {
    // reduced sweep: 2 seeds x {1%,10%} x BOTH for both representations
    std::map<std::string, std::vector<double>> cb_at_10;  // model -> errors
    double ckan_1pct_worst = 0.0;
    for (const std::string model : {"ckan", "mlp"}) {
      for (double level : {0.01, 0.10}) {
        for (std::uint64_t nseed : {1ull, 2ull}) {
          auto cfg = base_config("case2");
          cfg.model = model;
          cfg.schedule.stage2.iterations = 8000;
          cfg.noise.level = level;
          cfg.noise.location = "both";
          cfg.noise.seed = nseed;
          cfg.seed = 42 + 101 * nseed;
          const auto outcome = cli::run_training(cfg);
          if (level == 0.10) cb_at_10[model].push_back(rel(outcome.report, "C_b"));
          if (model == "ckan" && level == 0.01) {
            for (const auto& [var, e] : outcome.report) {
              if (var == "v" || var == "u" || var == "p") continue;
              ckan_1pct_worst = std::max(ckan_1pct_worst, e.rel_l2);
            }
          }
        }
      }
    }
    auto mean = [](const std::vector<double>& v) {
      double a = 0.0;
      for (double x : v) a += x;
      return a / v.size();
    };
    const double ckan_cb = mean(cb_at_10["ckan"]);
    const double mlp_cb = mean(cb_at_10["mlp"]);
    detail = "C_b@10%: ckan " + pct(ckan_cb) + " vs mlp " + pct(mlp_cb) +
             "; ckan@1% worst " + pct(ckan_1pct_worst);
    pass = ckan_cb < mlp_cb && ckan_1pct_worst <= 0.06;
  } catch (const std::exception& e) {
    pass = false;
    detail = e.what();
  }
  verdict(7, pass, "noise robustness of the Chebyshev-KAN representation", detail);
}

void criterion_8() {
  start();
  bool pass = true;
  std::string detail;
  try {
    const auto& base = g_reports.at("case2_fwd");
    const double base_ca = rel(base, "C_a");
    const double base_cb = rel(base, "C_b");
    const double base_cc = rel(base, "C_c");

    auto cfg = base_config("case2");
    cfg.schedule.rba_enabled = false;
    const auto norba = cli::run_training(cfg).report;
    const bool rba_deg = rel(norba, "C_a") >= 2.0 * base_ca &&
                         rel(norba, "C_b") >= 2.0 * base_cb &&
                         rel(norba, "C_c") >= 2.0 * base_cc;
    detail += "no-rba C_a " + pct(rel(norba, "C_a")) + " vs " + pct(base_ca) + "; ";

    auto mono = base_config("case2");
    mono.monolithic = true;
    const auto monor = cli::run_training(mono).report;
    const bool mono_deg = rel(monor, "C_a") >= 5.0 * base_ca &&
                          rel(monor, "C_b") >= 5.0 * base_cb &&
                          rel(monor, "C_c") >= 5.0 * base_cc;
    detail += "monolithic C_a " + pct(rel(monor, "C_a")) + "; ";

    const auto& invb = g_reports.at("case2_inv");
    auto noseq = base_config("case2");
    noseq.mode = "inverse";
    noseq.schedule.stage2.iterations = 20000;
    noseq.schedule.sequential = false;
    const auto noseqr = cli::run_training(noseq).report;
    const bool seq_deg = rel(noseqr, "C_a") >= 2.0 * rel(invb, "C_a");
    detail += "inverse no-seq C_a " + pct(rel(noseqr, "C_a")) + " vs " +
              pct(rel(invb, "C_a"));

    pass = rba_deg && mono_deg && seq_deg;
  } catch (const std::exception& e) {
    pass = false;
    detail = e.what();
  }
  verdict(8, pass, "ablation directionality (RBA, architecture, sequential)", detail);
}

void criterion_9() {
  start();
  Rng rng(79);
  bool pass = true;
  long total_updates = 0;
  std::string detail = "1e6 randomized updates stayed inside [0, eta/(1-gamma)]";
  for (int seq = 0; seq < 1000 && pass; ++seq) {
    const double gamma = 0.999;
    const double eta = 0.01;
    loss::RbaState st(8, gamma, eta, rng.uniform(0.0, eta / (1.0 - gamma)));
    const double bound = st.bound() + 1e-12;
    std::vector<double> e(8);
    for (int k = 0; k < 1000; ++k) {
      const int mode = static_cast<int>(rng.next_u64() % 4);
      for (double& x : e) {
        x = mode == 0   ? 0.0
            : mode == 1 ? rng.uniform(-1e6, 1e6)
            : mode == 2 ? rng.uniform(-1e-9, 1e-9)
                        : rng.gaussian();
      }
      loss::rba_update(st, e);
      ++total_updates;
      for (double l : st.lambda) {
        if (!(l >= 0.0 && l <= bound)) {
          pass = false;
          detail = "violation after " + std::to_string(total_updates) + " updates";
          break;
        }
      }
    }
  }
  verdict(9, pass, "residual-attention weights respect the recurrence bound", detail);
}

void criterion_10() {
  start();
  bool pass = true;
  std::string detail = "two runs produced identical reports";
  try {
    auto cfg = base_config("case1");
    cfg.mlp_hidden = {8, 8};
    cfg.schedule.stage1.iterations = 150;
    cfg.schedule.stage1.ns_early_stop = 0.0;
    cfg.schedule.stage2.iterations = 250;
    cfg.schedule.pde_points = 64;
    cfg.schedule.boundary_points = 16;
    cfg.schedule.log_every = 50;
    cfg.seed = 777;
    auto slurp = [](const std::string& p) {
      std::ifstream f(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(f), {});
    };
    const auto o1 = cli::run_training(cfg);
    const auto rep1 = slurp(o1.report_path);
    const auto met1 = slurp(cli::run_dir(cfg) + "/metrics.jsonl");
    const auto ck1 = slurp(o1.checkpoint_path);
    const auto o2 = cli::run_training(cfg);
    const auto rep2 = slurp(o2.report_path);
    const auto met2 = slurp(cli::run_dir(cfg) + "/metrics.jsonl");
    const auto ck2 = slurp(o2.checkpoint_path);
    pass = rep1 == rep2 && met1 == met2 && ck1 == ck2 && !rep1.empty();
    if (!pass) detail = "byte mismatch between identical runs";
  } catch (const std::exception& e) {
    pass = false;
    detail = e.what();
  }
  verdict(10, pass, "bitwise-deterministic metric reports", detail);
}

}  // namespace

int main() {
  fs::create_directories(kOut);
  std::printf("fmenets acceptance suite (desk scale)\n");

  criterion_1();
  criterion_2();
  criterion_3();

  // persist the oracle grids + observation sets the training criteria consume
  {
    start();
    for (const char* id : {"case1", "case2", "case3"}) {
      auto cfg = base_config(id);
      fs::create_directories(cli::data_dir(cfg));
      if (g_grids.count(id)) {
        oracle::save_field_grid(g_grids[id], cli::grid_path(cfg));
        const auto rc = physics::make_case(id);
        const auto clean = oracle::extract_observations(
            g_grids[id], oracle::MeasurementLayout::standard(rc, true));
        oracle::save_observations(clean, cli::obs_path(cfg, 0.0, "both", 0));
        for (double level : cfg.noise.levels) {
          for (std::uint64_t s : cfg.noise.seeds) {
            oracle::save_observations(
                oracle::add_noise(clean, level, oracle::NoiseLocation::both, s),
                cli::obs_path(cfg, level, "both", s));
          }
        }
      }
    }
  }

  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();

  std::printf("%d of 10 criteria passed\n", 10 - g_failures);
  return g_failures == 0 ? 0 : 1;
}

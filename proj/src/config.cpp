#include "fmenets/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "fmenets/errors.hpp"

namespace fmenets::cli {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
    }
  }
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json stage_to_json(const train::StageConfig& s) {
  json j;
  j["iterations"] = s.iterations;
  j["lr0"] = s.lr.lr0;
  j["lr_decay"] = s.lr.decay;
  j["lr_decay_every"] = s.lr.decay_every;
  j["ns_early_stop"] = s.ns_early_stop;
  j["continuity_weight"] = s.continuity_weight;
  j["mb_weight"] = s.mb_weight;
  j["eb_weight"] = s.eb_weight;
  j["bc_weight"] = s.bc_weight;
  j["data_weight"] = s.data_weight;
  j["resample_every"] = s.resample_every;
  return j;
}

train::StageConfig stage_from_json(const json& j, const std::string& ctx) {
  check_keys(j,
             {"iterations", "lr0", "lr_decay", "lr_decay_every", "ns_early_stop",
              "continuity_weight", "mb_weight", "eb_weight", "bc_weight", "data_weight",
              "resample_every"},
             ctx);
  train::StageConfig s;
  get_if(j, "iterations", s.iterations);
  get_if(j, "lr0", s.lr.lr0);
  get_if(j, "lr_decay", s.lr.decay);
  get_if(j, "lr_decay_every", s.lr.decay_every);
  get_if(j, "ns_early_stop", s.ns_early_stop);
  get_if(j, "continuity_weight", s.continuity_weight);
  get_if(j, "mb_weight", s.mb_weight);
  get_if(j, "eb_weight", s.eb_weight);
  get_if(j, "bc_weight", s.bc_weight);
  get_if(j, "data_weight", s.data_weight);
  get_if(j, "resample_every", s.resample_every);
  return s;
}

void validate(const RunConfig& cfg) {
  if (cfg.model != "mlp" && cfg.model != "ckan") {
    throw ConfigError("model must be 'mlp' or 'ckan'");
  }
  if (cfg.mode != "forward" && cfg.mode != "inverse") {
    throw ConfigError("mode must be 'forward' or 'inverse'");
  }
  const std::set<double> levels = {0.0, 0.01, 0.05, 0.10};
  auto check_level = [&](double l) {
    bool ok = false;
    for (double a : levels) ok = ok || std::abs(l - a) < 1e-12;
    if (!ok) {
      throw ConfigError("noise level " + std::to_string(l) +
                        " is not one of {0, 0.01, 0.05, 0.10}");
    }
  };
  check_level(cfg.noise.level);
  for (double l : cfg.noise.levels) check_level(l);
  oracle::parse_noise_location(cfg.noise.location);
  for (const auto& l : cfg.noise.locations) oracle::parse_noise_location(l);
  for (const auto& m : cfg.noise.models) {
    if (m != "mlp" && m != "ckan") throw ConfigError("noise sweep model '" + m + "'");
  }
  if (cfg.schedule.pde_points <= 0 || cfg.schedule.boundary_points <= 0) {
    throw ConfigError("collocation counts must be positive");
  }
  if (cfg.ramp_fraction < 0.0 || cfg.ramp_fraction > 1.0) {
    throw ConfigError("ramp_fraction must lie in [0,1]");
  }
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["case"] = cfg.case_id;
  if (!cfg.case_file.empty()) j["case_file"] = cfg.case_file;
  j["model"] = cfg.model;
  j["mode"] = cfg.mode;
  json arch;
  arch["mlp_hidden"] = cfg.mlp_hidden;
  arch["ckan_hidden"] = cfg.ckan_hidden;
  arch["ckan_degree"] = cfg.ckan_degree;
  j["arch"] = arch;
  json sched;
  sched["stage1"] = stage_to_json(cfg.schedule.stage1);
  sched["stage2"] = stage_to_json(cfg.schedule.stage2);
  sched["pde_points"] = cfg.schedule.pde_points;
  sched["boundary_points"] = cfg.schedule.boundary_points;
  sched["q"] = cfg.schedule.q;
  sched["log_every"] = cfg.schedule.log_every;
  sched["r_min"] = cfg.schedule.r_min;
  sched["ramp_fraction"] = cfg.ramp_fraction;
  j["schedule"] = sched;
  json rba;
  rba["gamma"] = cfg.schedule.rba_gamma;
  rba["eta"] = cfg.schedule.rba_eta;
  rba["init"] = cfg.schedule.rba_init;
  j["rba"] = rba;
  json toggles;
  toggles["weight_norm"] = cfg.weight_norm;
  toggles["output_transform"] = cfg.output_transform;
  toggles["rba"] = cfg.schedule.rba_enabled;
  toggles["sequential"] = cfg.schedule.sequential;
  toggles["monolithic"] = cfg.monolithic;
  j["toggles"] = toggles;
  json noise;
  noise["level"] = cfg.noise.level;
  noise["location"] = cfg.noise.location;
  noise["seed"] = cfg.noise.seed;
  noise["models"] = cfg.noise.models;
  noise["levels"] = cfg.noise.levels;
  noise["locations"] = cfg.noise.locations;
  noise["seeds"] = cfg.noise.seeds;
  j["noise"] = noise;
  j["seed"] = cfg.seed;
  json og;
  og["nr"] = cfg.oracle_nr;
  og["nz"] = cfg.oracle_nz;
  j["oracle_grid"] = og;
  j["out"] = cfg.out_dir;
  j["ea_init"] = cfg.ea_init;
  if (!cfg.thresholds.empty()) j["thresholds"] = cfg.thresholds;
  return j;
}

RunConfig config_from_json(const json& j) {
  check_keys(j,
             {"case", "case_file", "model", "mode", "arch", "schedule", "rba", "toggles",
              "noise", "seed", "oracle_grid", "out", "ea_init", "thresholds"},
             "config");
  RunConfig cfg;
  get_if(j, "case", cfg.case_id);
  get_if(j, "case_file", cfg.case_file);
  get_if(j, "model", cfg.model);
  get_if(j, "mode", cfg.mode);
  if (j.contains("arch")) {
    const json& a = j.at("arch");
    check_keys(a, {"mlp_hidden", "ckan_hidden", "ckan_degree"}, "arch");
    get_if(a, "mlp_hidden", cfg.mlp_hidden);
    get_if(a, "ckan_hidden", cfg.ckan_hidden);
    get_if(a, "ckan_degree", cfg.ckan_degree);
  }
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    check_keys(s,
               {"stage1", "stage2", "pde_points", "boundary_points", "q", "log_every",
                "r_min", "ramp_fraction"},
               "schedule");
    if (s.contains("stage1")) cfg.schedule.stage1 = stage_from_json(s.at("stage1"), "stage1");
    if (s.contains("stage2")) cfg.schedule.stage2 = stage_from_json(s.at("stage2"), "stage2");
    get_if(s, "pde_points", cfg.schedule.pde_points);
    get_if(s, "boundary_points", cfg.schedule.boundary_points);
    get_if(s, "q", cfg.schedule.q);
    get_if(s, "log_every", cfg.schedule.log_every);
    get_if(s, "r_min", cfg.schedule.r_min);
    get_if(s, "ramp_fraction", cfg.ramp_fraction);
  }
  if (j.contains("rba")) {
    const json& r = j.at("rba");
    check_keys(r, {"gamma", "eta", "init"}, "rba");
    get_if(r, "gamma", cfg.schedule.rba_gamma);
    get_if(r, "eta", cfg.schedule.rba_eta);
    get_if(r, "init", cfg.schedule.rba_init);
  }
  if (j.contains("toggles")) {
    const json& t = j.at("toggles");
    check_keys(t, {"weight_norm", "output_transform", "rba", "sequential", "monolithic"},
               "toggles");
    get_if(t, "weight_norm", cfg.weight_norm);
    get_if(t, "output_transform", cfg.output_transform);
    get_if(t, "rba", cfg.schedule.rba_enabled);
    get_if(t, "sequential", cfg.schedule.sequential);
    get_if(t, "monolithic", cfg.monolithic);
  }
  if (j.contains("noise")) {
    const json& n = j.at("noise");
    check_keys(n, {"level", "location", "seed", "models", "levels", "locations", "seeds"},
               "noise");
    get_if(n, "level", cfg.noise.level);
    get_if(n, "location", cfg.noise.location);
    get_if(n, "seed", cfg.noise.seed);
    get_if(n, "models", cfg.noise.models);
    get_if(n, "levels", cfg.noise.levels);
    get_if(n, "locations", cfg.noise.locations);
    get_if(n, "seeds", cfg.noise.seeds);
  }
  get_if(j, "seed", cfg.seed);
  if (j.contains("oracle_grid")) {
    const json& g = j.at("oracle_grid");
    check_keys(g, {"nr", "nz"}, "oracle_grid");
    get_if(g, "nr", cfg.oracle_nr);
    get_if(g, "nz", cfg.oracle_nz);
  }
  get_if(j, "out", cfg.out_dir);
  get_if(j, "ea_init", cfg.ea_init);
  if (j.contains("thresholds")) {
    cfg.thresholds = j.at("thresholds").get<std::map<std::string, double>>();
  }
  validate(cfg);
  return cfg;
}

}  // namespace

physics::ReactorCase RunConfig::reactor_case() const {
  if (!case_file.empty()) return load_case_config(case_file);
  return physics::make_case(case_id);
}

train::ModelSpec RunConfig::model_spec() const {
  train::ModelSpec spec;
  spec.kind = model == "ckan" ? models::ModelKind::ckan : models::ModelKind::mlp;
  spec.mlp_hidden = mlp_hidden;
  spec.ckan_hidden = ckan_hidden;
  spec.ckan_degree = ckan_degree;
  spec.weight_norm = weight_norm;
  spec.output_transform = output_transform;
  spec.monolithic = monolithic;
  return spec;
}

train::TrainSchedule RunConfig::resolved_schedule() const {
  train::TrainSchedule s = schedule;
  s.stage2.ramp_fraction = (mode == "inverse") ? ramp_fraction : 0.0;
  s.stage2.ramp_floor = 1e-3;
  return s;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << config_to_json(cfg).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// case files
// ---------------------------------------------------------------------------

physics::ReactorCase load_case_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open case file '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("case file '" + path + "': " + e.what());
  }
  check_keys(j,
             {"case_id", "species", "reactions", "geometry", "inlet", "wall_temp", "fluid",
              "scales", "groups"},
             "case");
  physics::ReactorCase rc;
  try {
    rc.case_id = j.at("case_id").get<std::string>();
    rc.species = j.at("species").get<std::vector<std::string>>();
    for (const json& rj : j.at("reactions")) {
      check_keys(rj, {"stoich", "k0", "ea", "dh", "rate_form"}, "reaction");
      physics::Reaction rx;
      rx.stoich = rj.at("stoich").get<std::vector<int>>();
      rx.k0 = rj.at("k0").get<double>();
      rx.ea = rj.at("ea").get<double>();
      rx.dh = rj.at("dh").get<double>();
      const auto rf = rj.at("rate_form").get<std::vector<std::string>>();
      if (rf.size() != 2) throw ConfigError("rate_form must name two species");
      auto find = [&](const std::string& name) {
        for (std::size_t s = 0; s < rc.species.size(); ++s) {
          if (rc.species[s] == name) return static_cast<int>(s);
        }
        throw ConfigError("rate_form species '" + name + "' not in species list");
      };
      rx.rate_form = {find(rf[0]), find(rf[1])};
      rc.reactions.push_back(std::move(rx));
    }
    const json& g = j.at("geometry");
    check_keys(g, {"length", "radius"}, "geometry");
    rc.length = g.at("length").get<double>();
    rc.radius = g.at("radius").get<double>();
    const json& in = j.at("inlet");
    check_keys(in, {"concentrations", "temperature"}, "inlet");
    rc.inlet_conc = in.at("concentrations").get<std::vector<double>>();
    rc.inlet_temp = in.at("temperature").get<double>();
    rc.wall_temp = j.at("wall_temp").get<double>();
    const json& fl = j.at("fluid");
    check_keys(fl, {"mu", "rho", "cp", "d_ab", "k_c"}, "fluid");
    rc.fluid = {fl.at("mu").get<double>(), fl.at("rho").get<double>(),
                fl.at("cp").get<double>(), fl.at("d_ab").get<double>(),
                fl.at("k_c").get<double>()};
    const json& sc = j.at("scales");
    check_keys(sc, {"v_char", "d_char", "p_char", "t_char", "c_char"}, "scales");
    rc.scales = {sc.at("v_char").get<double>(), sc.at("d_char").get<double>(),
                 sc.at("p_char").get<double>(), sc.at("t_char").get<double>(),
                 sc.at("c_char").get<double>()};
    if (j.contains("groups")) {
      const json& gr = j.at("groups");
      check_keys(gr, {"re", "pe", "pe_t"}, "groups");
      rc.groups = {gr.at("re").get<double>(), gr.at("pe").get<double>(),
                   gr.at("pe_t").get<double>()};
    } else {
      rc.groups = physics::compute_dimensionless_groups(rc.fluid, rc.scales);
    }
  } catch (const json::exception& e) {
    throw ConfigError("case file '" + path + "': " + e.what());
  }
  rc.finalize();
  return rc;
}

void save_case_config(const physics::ReactorCase& rc, const std::string& path) {
  json j;
  j["case_id"] = rc.case_id;
  j["species"] = rc.species;
  json rxs = json::array();
  for (const auto& rx : rc.reactions) {
    json rj;
    rj["stoich"] = rx.stoich;
    rj["k0"] = rx.k0;
    rj["ea"] = rx.ea;
    rj["dh"] = rx.dh;
    rj["rate_form"] = std::vector<std::string>{rc.species[rx.rate_form.first],
                                               rc.species[rx.rate_form.second]};
    rxs.push_back(rj);
  }
  j["reactions"] = rxs;
  j["geometry"] = {{"length", rc.length}, {"radius", rc.radius}};
  j["inlet"] = {{"concentrations", rc.inlet_conc}, {"temperature", rc.inlet_temp}};
  j["wall_temp"] = rc.wall_temp;
  j["fluid"] = {{"mu", rc.fluid.mu},
                {"rho", rc.fluid.rho},
                {"cp", rc.fluid.cp},
                {"d_ab", rc.fluid.d_ab},
                {"k_c", rc.fluid.k_c}};
  j["scales"] = {{"v_char", rc.scales.v_char},
                 {"d_char", rc.scales.d_char},
                 {"p_char", rc.scales.p_char},
                 {"t_char", rc.scales.t_char},
                 {"c_char", rc.scales.c_char}};
  j["groups"] = {{"re", rc.groups.re}, {"pe", rc.groups.pe}, {"pe_t", rc.groups.pe_t}};
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

json transform_to_json(const models::OutputTransform& t) {
  json j;
  switch (t.kind) {
    case models::OutputTransform::Kind::identity:
      j["kind"] = "identity";
      break;
    case models::OutputTransform::Kind::adf_wall:
      j["kind"] = "adf_wall";
      j["bc_value"] = t.bc_value;
      j["radius"] = t.radius;
      break;
    case models::OutputTransform::Kind::bounded:
      j["kind"] = "bounded";
      j["lo"] = t.lo;
      j["hi"] = t.hi;
      break;
  }
  j["in_scale"] = t.in_scale;
  return j;
}

models::OutputTransform transform_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  models::OutputTransform t;
  if (kind == "identity") {
    t = models::OutputTransform::identity();
  } else if (kind == "adf_wall") {
    t = models::OutputTransform::adf(j.at("bc_value").get<double>(),
                                     j.at("radius").get<double>());
  } else if (kind == "bounded") {
    t = models::OutputTransform::bounded(j.at("lo").get<double>(),
                                         j.at("hi").get<double>());
  } else {
    throw ConfigError("unknown transform kind '" + kind + "'");
  }
  if (j.contains("in_scale")) t.in_scale = j.at("in_scale").get<double>();
  return t;
}

json model_to_json(const models::Model& m) {
  json j;
  if (m.kind() == models::ModelKind::mlp) {
    const auto& mm = static_cast<const models::MlpModel&>(m);
    j["kind"] = "mlp";
    j["layer_sizes"] = mm.layer_sizes();
    j["weight_norm"] = mm.weight_norm();
    const auto& sc = mm.scaling();
    j["scaling"] = {sc.r_lo, sc.r_hi, sc.z_lo, sc.z_hi};
  } else {
    const auto& cm = static_cast<const models::CkanModel&>(m);
    j["kind"] = "ckan";
    j["widths"] = cm.widths();
    j["degree"] = cm.degree();
    const auto& sc = cm.scaling();
    j["scaling"] = {sc.r_lo, sc.r_hi, sc.z_lo, sc.z_hi};
  }
  const auto p = m.params();
  j["params"] = std::vector<double>(p.begin(), p.end());
  return j;
}

std::unique_ptr<models::Model> model_from_json(const json& j) {
  const auto sc = j.at("scaling").get<std::vector<double>>();
  models::InputScaling scaling{sc.at(0), sc.at(1), sc.at(2), sc.at(3)};
  std::unique_ptr<models::Model> m;
  if (j.at("kind").get<std::string>() == "mlp") {
    m = std::make_unique<models::MlpModel>(j.at("layer_sizes").get<std::vector<int>>(),
                                           j.at("weight_norm").get<bool>(), scaling);
  } else {
    m = std::make_unique<models::CkanModel>(j.at("widths").get<std::vector<int>>(),
                                            j.at("degree").get<int>(), scaling);
  }
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != static_cast<std::size_t>(m->n_params())) {
    throw ConfigError("checkpoint parameter count mismatch");
  }
  std::copy(params.begin(), params.end(), m->params().begin());
  m->refresh();
  return m;
}

}  // namespace

void save_checkpoint(const train::FmeSystem& system, const std::string& case_id,
                     const std::string& stage, const std::vector<double>& ea,
                     const std::string& path) {
  json j;
  j["format"] = "fmenets-checkpoint-v1";
  j["case_id"] = case_id;
  j["stage"] = stage;
  j["monolithic"] = system.monolithic;
  j["nn1"] = model_to_json(*system.nn1);
  json t1 = json::array();
  for (const auto& t : system.tf1) t1.push_back(transform_to_json(t));
  j["tf1"] = t1;
  if (!system.monolithic) {
    j["nn2"] = model_to_json(*system.nn2);
    j["nn3"] = model_to_json(*system.nn3);
    json t2 = json::array(), t3 = json::array();
    for (const auto& t : system.tf2) t2.push_back(transform_to_json(t));
    for (const auto& t : system.tf3) t3.push_back(transform_to_json(t));
    j["tf2"] = t2;
    j["tf3"] = t3;
  }
  if (!ea.empty()) j["ea"] = ea;
  std::ofstream f(path);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << j.dump() << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint '" + path + "': " + e.what());
  }
  if (!j.contains("format") || j.at("format").get<std::string>() != "fmenets-checkpoint-v1") {
    throw ConfigError("'" + path + "' is not a fmenets checkpoint");
  }
  LoadedCheckpoint out;
  out.case_id = j.at("case_id").get<std::string>();
  out.stage = j.at("stage").get<std::string>();
  out.system.monolithic = j.at("monolithic").get<bool>();
  out.system.nn1 = model_from_json(j.at("nn1"));
  for (const json& t : j.at("tf1")) out.system.tf1.push_back(transform_from_json(t));
  if (!out.system.monolithic) {
    out.system.nn2 = model_from_json(j.at("nn2"));
    out.system.nn3 = model_from_json(j.at("nn3"));
    for (const json& t : j.at("tf2")) out.system.tf2.push_back(transform_from_json(t));
    for (const json& t : j.at("tf3")) out.system.tf3.push_back(transform_from_json(t));
  }
  if (j.contains("ea")) out.ea = j.at("ea").get<std::vector<double>>();
  return out;
}

}  // namespace fmenets::cli

#include "fmenets/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "fmenets/errors.hpp"

namespace fmenets::train {

using loss::Group;
using loss::Jet;
using loss::Point;
using models::OutputTransform;

double LrPolicy::at(long iter) const {
  if (decay_every <= 0 || decay == 1.0) return lr0;
  return lr0 * std::pow(decay, static_cast<double>(iter / decay_every));
}

bool optimizer_step(std::span<double> params, std::span<const double> grads,
                    AdamState& state, double lr, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ConfigError("optimizer_step: shape mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.t = 0;
  }
  for (double g : grads) {
    if (!std::isfinite(g)) return false;
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  return true;
}

std::uint64_t FmeSystem::param_hash(int which) const {
  const models::Model* m = which == 1 ? nn1.get() : which == 2 ? nn2.get() : nn3.get();
  if (!m) return 0;
  const auto p = m->params();
  return fnv1a(p.data(), p.size() * sizeof(double));
}

FmeSystem build_system(const ReactorCase& rc, const ModelSpec& spec, std::uint64_t seed) {
  FmeSystem sys;
  sys.monolithic = spec.monolithic;
  const int ns = rc.n_species();
  models::InputScaling scaling{0.0, rc.radius, 0.0, rc.length};

  double total_inlet = 0.0;
  for (double c : rc.inlet_conc_dimless) total_inlet += c;

  const double p_scale = 32.0 / rc.groups.re * rc.length;  // developed pressure drop
  std::vector<OutputTransform> tf_flow = {
      OutputTransform::adf(0.0, rc.radius),  // u: no-slip wall, exact
      OutputTransform::adf(0.0, rc.radius),  // v
      OutputTransform::identity(p_scale),    // p, anchored softly at the outlet
  };
  std::vector<OutputTransform> tf_c(
      ns, spec.output_transform ? OutputTransform::bounded(0.0, 1.1 * total_inlet)
                                : OutputTransform::identity());
  std::vector<OutputTransform> tf_t = {
      spec.output_transform ? OutputTransform::bounded(1.0, 2.0)
                            : OutputTransform::identity()};

  auto make = [&](int n_out, std::uint64_t s) -> std::unique_ptr<models::Model> {
    if (spec.kind == models::ModelKind::mlp) {
      return models::make_mlp(spec.mlp_hidden, n_out, spec.weight_norm, scaling, s);
    }
    return models::make_ckan(spec.ckan_hidden, n_out, spec.ckan_degree, scaling, s);
  };

  if (spec.monolithic) {
    sys.nn1 = make(3 + ns + 1, seed);
    sys.tf1 = tf_flow;
    sys.tf1.insert(sys.tf1.end(), tf_c.begin(), tf_c.end());
    sys.tf1.push_back(tf_t[0]);
  } else {
    sys.nn1 = make(3, seed);
    sys.nn2 = make(ns, seed + 1);
    sys.nn3 = make(1, seed + 2);
    sys.tf1 = tf_flow;
    sys.tf2 = tf_c;
    sys.tf3 = tf_t;
  }
  return sys;
}

InverseTarget InverseTarget::init_for(const ReactorCase& rc, double ea_init) {
  InverseTarget t;
  t.log_ea.assign(rc.n_reactions(), std::log(ea_init));
  return t;
}

std::vector<double> InverseTarget::ea() const {
  std::vector<double> out(log_ea.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(log_ea[i]);
  return out;
}

// ---------------------------------------------------------------------------
// training engine
// ---------------------------------------------------------------------------
namespace {

struct Term {
  std::string name;
  Group group = Group::pde;
  double weight = 1.0;
  bool ramped = false;  // scaled by the stage ramp factor (inverse MB/EB)
  int n = 0;
  std::vector<double> e;
  loss::RbaState rba;
};

struct DataTerm {
  std::string quantity;
  int species = -1;  // -1 for temperature
  std::vector<Point> pts;
  std::vector<double> targets;
};

// seeds d(total loss)/d(e_i) for term t at point i
inline double loss_seed(const Term& t, double ramp, int q, double e, double lambda) {
  const double m = t.weight * (t.ramped ? ramp : 1.0);
  const double le = std::abs(lambda * e);
  double p = lambda;  // q * lambda * |lambda e|^(q-1) * sign(e)
  for (int k = 0; k < q - 1; ++k) p *= le;
  return m * q * p * (e < 0.0 ? -1.0 : 1.0) / t.n;
}

class Engine {
public:
  Engine(const ReactorCase& rc, FmeSystem& sys, const TrainSchedule& sched,
         const ObservationSet& data, std::uint64_t seed, bool inverse,
         InverseTarget* target, const StageCallback& on_stage_end)
      : rc_(rc), sys_(sys), sched_(sched), seed_(seed), inverse_(inverse),
        target_(target), on_stage_end_(on_stage_end), ns_(rc.n_species()) {
    domain_ = {sched.r_min, rc.radius, rc.length};
    ws1_ = sys.nn1->make_workspace();
    grad1_.assign(sys.nn1->n_params(), 0.0);
    if (!sys.monolithic) {
      ws2_ = sys.nn2->make_workspace();
      ws3_ = sys.nn3->make_workspace();
      grad2_.assign(sys.nn2->n_params(), 0.0);
      grad3_.assign(sys.nn3->n_params(), 0.0);
    }
    build_data_terms(data);
    raw1_.resize(sys.nn1->n_outputs());
    adj1_.resize(sys.nn1->n_outputs());
    c_jets_.resize(ns_);
    c_adj_.resize(ns_);
    if (!sys.monolithic) {
      raw2_.resize(ns_);
      adj2_.resize(ns_);
      raw3_.resize(1);
      adj3_.resize(1);
    }
    dcons_dc_.assign(static_cast<std::size_t>(ns_) * ns_, 0.0);
    dcons_dt_.assign(ns_, 0.0);
    dsrc_dc_.assign(ns_, 0.0);
    ea_grad_.assign(rc.n_reactions(), 0.0);
  }

  TrainResult run() {
    TrainResult result;
    if (sched_.sequential && !sys_.monolithic) {
      run_stage(result, 1, sched_.stage1);
      if (result.aborted) return result;
      if (on_stage_end_) on_stage_end_(1);
      run_stage(result, 2, sched_.stage2);
      if (!result.aborted && on_stage_end_) on_stage_end_(2);
    } else {
      // joint training: every term active for the combined iteration budget
      StageConfig joint = sched_.stage2;
      joint.iterations = sched_.stage1.iterations + sched_.stage2.iterations;
      joint.ns_early_stop = 0.0;
      if (!inverse_) joint.ramp_fraction = 0.0;
      run_stage(result, 3, joint);
      if (!result.aborted && on_stage_end_) on_stage_end_(3);
    }
    result.ea_final = target_ ? target_->ea() : std::vector<double>{};
    return result;
  }

private:
  // --- pools and terms ---------------------------------------------------
  void sample_pools(std::uint64_t seed) {
    auto sets = loss::sample_collocation(domain_, sched_.pde_points,
                                         sched_.boundary_points, seed);
    pde_ = std::move(sets[0]);
    inlet_ = std::move(sets[1]);
    wall_ = std::move(sets[2]);
    outlet_ = std::move(sets[3]);
    axis_ = std::move(sets[4]);
  }

  void build_data_terms(const ObservationSet& data) {
    for (const auto& o : data.items) {
      DataTerm* dt = nullptr;
      for (auto& d : data_terms_) {
        if (d.quantity == o.quantity) dt = &d;
      }
      if (!dt) {
        DataTerm d;
        d.quantity = o.quantity;
        if (o.quantity == "T") {
          d.species = -1;
        } else {
          d.species = -2;
          for (int s = 0; s < ns_; ++s) {
            if (o.quantity == "C_" + rc_.species[s]) d.species = s;
          }
          if (d.species == -2) {
            throw ConfigError("observation quantity '" + o.quantity +
                              "' not present in case " + rc_.case_id);
          }
        }
        data_terms_.push_back(std::move(d));
        dt = &data_terms_.back();
      }
      dt->pts.push_back({o.r, o.z});
      dt->targets.push_back(o.value);
    }
  }

  Term make_term(std::string name, Group group, double weight, bool ramped, int n) {
    Term t;
    t.name = std::move(name);
    t.group = group;
    t.weight = weight;
    t.ramped = ramped;
    t.n = n;
    t.e.assign(n, 0.0);
    if (sched_.rba_enabled) {
      t.rba = loss::RbaState(n, sched_.rba_gamma, sched_.rba_eta, sched_.rba_init);
    }
    return t;
  }

  void build_terms(int stage, const StageConfig& cfg) {
    terms_.clear();
    const bool flow = stage != 2;
    const bool transport = stage != 1;
    const int npde = static_cast<int>(pde_.points.size());
    const int nb = static_cast<int>(inlet_.points.size());
    if (flow) {
      ns1_ = add(make_term("pde.ns1", Group::pde, 1.0, false, npde));
      ns2_ = add(make_term("pde.ns2", Group::pde, 1.0, false, npde));
      ns3_ = add(make_term("pde.ns3", Group::pde, cfg.continuity_weight, false, npde));
      in_u_ = add(make_term("bc.inlet.u", Group::boundary, cfg.bc_weight, false, nb));
      in_v_ = add(make_term("bc.inlet.v", Group::boundary, cfg.bc_weight, false, nb));
      ax_dudr_ = add(make_term("bc.axis.du_dr", Group::boundary, cfg.bc_weight, false, nb));
      ax_v_ = add(make_term("bc.axis.v", Group::boundary, cfg.bc_weight, false, nb));
      out_p_ = add(make_term("bc.outlet.p", Group::boundary, cfg.bc_weight, false, nb));
    }
    if (transport) {
      const bool ramped = cfg.ramp_fraction > 0.0;
      mb0_ = static_cast<int>(terms_.size());
      for (int s = 0; s < ns_; ++s) {
        add(make_term("pde.mb." + rc_.species[s], Group::pde, cfg.mb_weight, ramped, npde));
      }
      eb_ = add(make_term("pde.eb", Group::pde, cfg.eb_weight, ramped, npde));
      in_c0_ = static_cast<int>(terms_.size());
      for (int s = 0; s < ns_; ++s) {
        add(make_term("bc.inlet.C_" + rc_.species[s], Group::boundary, cfg.bc_weight,
                      false, nb));
      }
      in_t_ = add(make_term("bc.inlet.T", Group::boundary, cfg.bc_weight, false, nb));
      wall_t_ = add(make_term("bc.wall.T", Group::boundary, cfg.bc_weight, false, nb));
      wall_c0_ = static_cast<int>(terms_.size());
      for (int s = 0; s < ns_; ++s) {
        add(make_term("bc.wall.dC_" + rc_.species[s] + "_dr", Group::boundary,
                      cfg.bc_weight, false, nb));
      }
      out_c0_ = static_cast<int>(terms_.size());
      for (int s = 0; s < ns_; ++s) {
        add(make_term("bc.outlet.dC_" + rc_.species[s] + "_dz", Group::boundary,
                      cfg.bc_weight, false, nb));
      }
      out_t_ = add(make_term("bc.outlet.dT_dz", Group::boundary, cfg.bc_weight, false, nb));
      ax_c0_ = static_cast<int>(terms_.size());
      for (int s = 0; s < ns_; ++s) {
        add(make_term("bc.axis.dC_" + rc_.species[s] + "_dr", Group::boundary,
                      cfg.bc_weight, false, nb));
      }
      ax_t_ = add(make_term("bc.axis.dT_dr", Group::boundary, cfg.bc_weight, false, nb));
      data0_ = static_cast<int>(terms_.size());
      for (auto& d : data_terms_) {
        add(make_term("data." + d.quantity, Group::data, cfg.data_weight, false,
                      static_cast<int>(d.pts.size())));
      }
    }
  }

  int add(Term t) {
    terms_.push_back(std::move(t));
    return static_cast<int>(terms_.size()) - 1;
  }

  // --- model evaluation helpers -------------------------------------------
  // physical flow jets at a point (nn1 + transforms); raw jets kept in raw1_
  void eval_flow(const Point& pt, Jet& u, Jet& v, Jet& p) {
    sys_.nn1->eval_jet(pt.r, pt.z, *ws1_, raw1_);
    u = models::apply_output_transform_jet(sys_.tf1[0], raw1_[0], pt.r);
    v = models::apply_output_transform_jet(sys_.tf1[1], raw1_[1], pt.r);
    p = models::apply_output_transform_jet(sys_.tf1[2], raw1_[2], pt.r);
  }

  // physical transport jets; in monolithic mode they live on nn1's outputs
  void eval_transport(const Point& pt, bool with_flow_jets, Jet* u, Jet* v, Jet* p) {
    if (sys_.monolithic) {
      sys_.nn1->eval_jet(pt.r, pt.z, *ws1_, raw1_);
      if (u) *u = models::apply_output_transform_jet(sys_.tf1[0], raw1_[0], pt.r);
      if (v) *v = models::apply_output_transform_jet(sys_.tf1[1], raw1_[1], pt.r);
      if (p) *p = models::apply_output_transform_jet(sys_.tf1[2], raw1_[2], pt.r);
      for (int s = 0; s < ns_; ++s) {
        c_jets_[s] = models::apply_output_transform_jet(sys_.tf1[3 + s], raw1_[3 + s], pt.r);
      }
      t_jet_ = models::apply_output_transform_jet(sys_.tf1[3 + ns_], raw1_[3 + ns_], pt.r);
    } else {
      if (with_flow_jets) {
        sys_.nn1->eval_jet(pt.r, pt.z, *ws1_, raw1_);
        if (u) *u = models::apply_output_transform_jet(sys_.tf1[0], raw1_[0], pt.r);
        if (v) *v = models::apply_output_transform_jet(sys_.tf1[1], raw1_[1], pt.r);
        if (p) *p = models::apply_output_transform_jet(sys_.tf1[2], raw1_[2], pt.r);
      }
      sys_.nn2->eval_jet(pt.r, pt.z, *ws2_, raw2_);
      sys_.nn3->eval_jet(pt.r, pt.z, *ws3_, raw3_);
      for (int s = 0; s < ns_; ++s) {
        c_jets_[s] = models::apply_output_transform_jet(sys_.tf2[s], raw2_[s], pt.r);
      }
      t_jet_ = models::apply_output_transform_jet(sys_.tf3[0], raw3_[0], pt.r);
    }
  }

  void zero_adjoints() {
    std::fill(adj1_.begin(), adj1_.end(), Jet{});
    if (!sys_.monolithic) {
      std::fill(adj2_.begin(), adj2_.end(), Jet{});
      std::fill(adj3_.begin(), adj3_.end(), Jet{});
    }
    std::fill(c_adj_.begin(), c_adj_.end(), Jet{});
    t_adj_ = Jet{};
  }

  // push physical adjoints through transforms into raw adjoints and backward
  void backward_flow(const Point& pt, const Jet& uadj, const Jet& vadj, const Jet& padj) {
    models::output_transform_vjp(sys_.tf1[0], raw1_[0], pt.r, uadj, adj1_[0]);
    models::output_transform_vjp(sys_.tf1[1], raw1_[1], pt.r, vadj, adj1_[1]);
    models::output_transform_vjp(sys_.tf1[2], raw1_[2], pt.r, padj, adj1_[2]);
  }

  void backward_point_flow_only() {
    sys_.nn1->backward_jet(*ws1_, adj1_);
  }

  void backward_transport(const Point& pt, bool flow_live) {
    if (sys_.monolithic) {
      for (int s = 0; s < ns_; ++s) {
        models::output_transform_vjp(sys_.tf1[3 + s], raw1_[3 + s], pt.r, c_adj_[s],
                                     adj1_[3 + s]);
      }
      models::output_transform_vjp(sys_.tf1[3 + ns_], raw1_[3 + ns_], pt.r, t_adj_,
                                   adj1_[3 + ns_]);
      sys_.nn1->backward_jet(*ws1_, adj1_);
    } else {
      for (int s = 0; s < ns_; ++s) {
        models::output_transform_vjp(sys_.tf2[s], raw2_[s], pt.r, c_adj_[s], adj2_[s]);
      }
      models::output_transform_vjp(sys_.tf3[0], raw3_[0], pt.r, t_adj_, adj3_[0]);
      sys_.nn2->backward_jet(*ws2_, adj2_);
      sys_.nn3->backward_jet(*ws3_, adj3_);
      if (flow_live) sys_.nn1->backward_jet(*ws1_, adj1_);
    }
  }

  // --- passes --------------------------------------------------------------
  void flow_pass(bool trainable, double ramp) {
    const double re = rc_.groups.re;
    for (std::size_t k = 0; k < pde_.points.size(); ++k) {
      const Point& pt = pde_.points[k];
      Jet u, v, p;
      eval_flow(pt, u, v, p);
      const auto e = loss::ns_residuals(u, v, p, pt.r, re);
      Term& t1 = terms_[ns1_];
      Term& t2 = terms_[ns2_];
      Term& t3 = terms_[ns3_];
      t1.e[k] = e[0];
      t2.e[k] = e[1];
      t3.e[k] = e[2];
      if (!trainable) continue;
      const double l1 = sched_.rba_enabled ? t1.rba.lambda[k] : 1.0;
      const double l2 = sched_.rba_enabled ? t2.rba.lambda[k] : 1.0;
      const double l3 = sched_.rba_enabled ? t3.rba.lambda[k] : 1.0;
      const double s1 = loss_seed(t1, ramp, sched_.q, e[0], l1);
      const double s2 = loss_seed(t2, ramp, sched_.q, e[1], l2);
      const double s3 = loss_seed(t3, ramp, sched_.q, e[2], l3);
      const double inv_re = 1.0 / re;
      const double inv_r = 1.0 / pt.r;
      Jet uadj{}, vadj{}, padj{};
      uadj.v = s1 * u.dz + s2 * v.dz;
      uadj.dz = s1 * u.v + s3;
      uadj.dr = s1 * (v.v - inv_re * inv_r);
      uadj.drr = -s1 * inv_re;
      uadj.dzz = -s1 * inv_re;
      vadj.v = s1 * u.dr + s2 * (v.dr + inv_re * inv_r * inv_r) + s3 * inv_r;
      vadj.dz = s2 * u.v;
      vadj.dr = s2 * (v.v - inv_re * inv_r) + s3;
      vadj.drr = -s2 * inv_re;
      vadj.dzz = -s2 * inv_re;
      padj.dz = s1;
      padj.dr = s2;
      zero_adjoints();
      backward_flow(pt, uadj, vadj, padj);
      backward_point_flow_only();
    }

    // inlet: u matches the developed profile, v vanishes
    for (std::size_t k = 0; k < inlet_.points.size(); ++k) {
      const Point& pt = inlet_.points[k];
      Jet u, v, p;
      eval_flow(pt, u, v, p);
      const double target = oracle::poiseuille_u(rc_, pt.r);
      terms_[in_u_].e[k] = u.v - target;
      terms_[in_v_].e[k] = v.v;
      if (!trainable) continue;
      Jet uadj{}, vadj{};
      uadj.v = seed_for(in_u_, k, ramp);
      vadj.v = seed_for(in_v_, k, ramp);
      zero_adjoints();
      backward_flow(pt, uadj, vadj, Jet{});
      backward_point_flow_only();
    }
    // axis: symmetry du/dr = 0, v = 0
    for (std::size_t k = 0; k < axis_.points.size(); ++k) {
      const Point& pt = axis_.points[k];
      Jet u, v, p;
      eval_flow(pt, u, v, p);
      terms_[ax_dudr_].e[k] = u.dr;
      terms_[ax_v_].e[k] = v.v;
      if (!trainable) continue;
      Jet uadj{}, vadj{};
      uadj.dr = seed_for(ax_dudr_, k, ramp);
      vadj.v = seed_for(ax_v_, k, ramp);
      zero_adjoints();
      backward_flow(pt, uadj, vadj, Jet{});
      backward_point_flow_only();
    }
    // outlet: pressure reference
    for (std::size_t k = 0; k < outlet_.points.size(); ++k) {
      const Point& pt = outlet_.points[k];
      Jet u, v, p;
      eval_flow(pt, u, v, p);
      terms_[out_p_].e[k] = p.v;
      if (!trainable) continue;
      Jet padj{};
      padj.v = seed_for(out_p_, k, ramp);
      zero_adjoints();
      backward_flow(pt, Jet{}, Jet{}, padj);
      backward_point_flow_only();
    }
  }

  double seed_for(int term, std::size_t k, double ramp) {
    Term& t = terms_[term];
    const double l = sched_.rba_enabled ? t.rba.lambda[k] : 1.0;
    return loss_seed(t, ramp, sched_.q, t.e[k], l);
  }

  void transport_pass(bool flow_live, double ramp) {
    const double pe = rc_.groups.pe;
    const double pet = rc_.groups.pe_t;
    const int nrx = rc_.n_reactions();
    std::vector<double> conc(ns_);
    const std::vector<double> ea = target_ ? target_->ea() : std::vector<double>{};
    std::fill(ea_grad_.begin(), ea_grad_.end(), 0.0);

    for (std::size_t k = 0; k < pde_.points.size(); ++k) {
      const Point& pt = pde_.points[k];
      Jet u, v, p;
      if (flow_live) {
        eval_transport(pt, true, &u, &v, &p);
      } else {
        eval_transport(pt, false, nullptr, nullptr, nullptr);
        u = Jet{flow_u_[k]};
        v = Jet{flow_v_[k]};
      }
      for (int s = 0; s < ns_; ++s) conc[s] = c_jets_[s].v;
      const double temp = std::max(t_jet_.v, 0.05);
      physics::reaction_rates_detail(rc_, conc, temp, ea, rates_);
      double src = 0.0;
      for (int j = 0; j < nrx; ++j) src += rc_.dh_dimless[j] * rates_.rate[j];

      for (int s = 0; s < ns_; ++s) {
        terms_[mb0_ + s].e[k] =
            loss::mb_residual(u.v, v.v, c_jets_[s], rates_.consumption[s], pe, pt.r);
      }
      terms_[eb_].e[k] = loss::eb_residual(u.v, v.v, t_jet_, src, pet, pt.r);

      if (!train_transport_) continue;

      // local rate jacobian
      std::fill(dcons_dc_.begin(), dcons_dc_.end(), 0.0);
      std::fill(dcons_dt_.begin(), dcons_dt_.end(), 0.0);
      std::fill(dsrc_dc_.begin(), dsrc_dc_.end(), 0.0);
      double dsrc_dt = 0.0;
      const bool clamped = t_jet_.v < 0.05;
      for (int j = 0; j < nrx; ++j) {
        const auto [pf, ps] = rc_.reactions[j].rate_form;
        const double d1 = rates_.drate_dc_first[j];
        const double d2 = rates_.drate_dc_second[j];
        const double dT = clamped ? 0.0 : rates_.drate_dT[j];
        for (int s = 0; s < ns_; ++s) {
          const double coef = -static_cast<double>(rc_.reactions[j].stoich[s]);
          if (coef == 0.0) continue;
          dcons_dc_[s * ns_ + pf] += coef * d1;
          dcons_dc_[s * ns_ + ps] += coef * d2;
          dcons_dt_[s] += coef * dT;
        }
        dsrc_dc_[pf] += rc_.dh_dimless[j] * d1;
        dsrc_dc_[ps] += rc_.dh_dimless[j] * d2;
        dsrc_dt += rc_.dh_dimless[j] * dT;
      }

      zero_adjoints();
      Jet uadj{}, vadj{};
      double seeds[16];
      for (int s = 0; s < ns_; ++s) seeds[s] = seed_for(mb0_ + s, k, ramp);
      const double seb = seed_for(eb_, k, ramp);

      for (int s = 0; s < ns_; ++s) {
        const double sd = seeds[s];
        Jet& ca = c_adj_[s];
        ca.dz += sd * u.v;
        ca.dr += sd * (v.v - 1.0 / (pe * pt.r));
        ca.drr += -sd / pe;
        ca.dzz += -sd / pe;
        // value coupling through the rates
        double acc = seb * dsrc_dc_[s];
        for (int kk = 0; kk < ns_; ++kk) acc += seeds[kk] * dcons_dc_[kk * ns_ + s];
        ca.v += acc;
        if (flow_live) {
          uadj.v += sd * c_jets_[s].dz;
          vadj.v += sd * c_jets_[s].dr;
        }
      }
      {
        Jet& ta = t_adj_;
        ta.dz += seb * u.v;
        ta.dr += seb * (v.v - 1.0 / (pet * pt.r));
        ta.drr += -seb / pet;
        ta.dzz += -seb / pet;
        double acc = seb * dsrc_dt;
        for (int kk = 0; kk < ns_; ++kk) acc += seeds[kk] * dcons_dt_[kk];
        ta.v += acc;
        if (flow_live) {
          uadj.v += seb * t_jet_.dz;
          vadj.v += seb * t_jet_.dr;
        }
      }
      if (target_) {
        for (int j = 0; j < nrx; ++j) {
          double g = seb * rc_.dh_dimless[j] * rates_.drate_dEa[j];
          for (int s = 0; s < ns_; ++s) {
            const double coef = -static_cast<double>(rc_.reactions[j].stoich[s]);
            if (coef != 0.0) g += seeds[s] * coef * rates_.drate_dEa[j];
          }
          ea_grad_[j] += g;
        }
      }
      if (flow_live) backward_flow(pt, uadj, vadj, Jet{});
      backward_transport(pt, flow_live);
    }

    boundary_transport_pass(flow_live, ramp);
    data_pass(flow_live, ramp);
  }

  void boundary_transport_pass(bool flow_live, double ramp) {
    // inlet Dirichlet values
    for (std::size_t k = 0; k < inlet_.points.size(); ++k) {
      const Point& pt = inlet_.points[k];
      eval_transport(pt, false, nullptr, nullptr, nullptr);
      for (int s = 0; s < ns_; ++s) {
        terms_[in_c0_ + s].e[k] = c_jets_[s].v - rc_.inlet_conc_dimless[s];
      }
      terms_[in_t_].e[k] = t_jet_.v - rc_.inlet_temp_dimless;
      if (!train_transport_) continue;
      zero_adjoints();
      for (int s = 0; s < ns_; ++s) c_adj_[s].v = seed_for(in_c0_ + s, k, ramp);
      t_adj_.v = seed_for(in_t_, k, ramp);
      backward_transport(pt, false);
    }
    // wall: T Dirichlet, zero species flux
    for (std::size_t k = 0; k < wall_.points.size(); ++k) {
      const Point& pt = wall_.points[k];
      eval_transport(pt, false, nullptr, nullptr, nullptr);
      terms_[wall_t_].e[k] = t_jet_.v - rc_.wall_temp_dimless;
      for (int s = 0; s < ns_; ++s) terms_[wall_c0_ + s].e[k] = c_jets_[s].dr;
      if (!train_transport_) continue;
      zero_adjoints();
      t_adj_.v = seed_for(wall_t_, k, ramp);
      for (int s = 0; s < ns_; ++s) c_adj_[s].dr = seed_for(wall_c0_ + s, k, ramp);
      backward_transport(pt, false);
    }
    // outlet: zero axial gradients
    for (std::size_t k = 0; k < outlet_.points.size(); ++k) {
      const Point& pt = outlet_.points[k];
      eval_transport(pt, false, nullptr, nullptr, nullptr);
      for (int s = 0; s < ns_; ++s) terms_[out_c0_ + s].e[k] = c_jets_[s].dz;
      terms_[out_t_].e[k] = t_jet_.dz;
      if (!train_transport_) continue;
      zero_adjoints();
      for (int s = 0; s < ns_; ++s) c_adj_[s].dz = seed_for(out_c0_ + s, k, ramp);
      t_adj_.dz = seed_for(out_t_, k, ramp);
      backward_transport(pt, false);
    }
    // axis symmetry
    for (std::size_t k = 0; k < axis_.points.size(); ++k) {
      const Point& pt = axis_.points[k];
      eval_transport(pt, false, nullptr, nullptr, nullptr);
      for (int s = 0; s < ns_; ++s) terms_[ax_c0_ + s].e[k] = c_jets_[s].dr;
      terms_[ax_t_].e[k] = t_jet_.dr;
      if (!train_transport_) continue;
      zero_adjoints();
      for (int s = 0; s < ns_; ++s) c_adj_[s].dr = seed_for(ax_c0_ + s, k, ramp);
      t_adj_.dr = seed_for(ax_t_, k, ramp);
      backward_transport(pt, false);
    }
  }

  void data_pass(bool /*flow_live*/, double ramp) {
    for (std::size_t d = 0; d < data_terms_.size(); ++d) {
      DataTerm& dt = data_terms_[d];
      Term& t = terms_[data0_ + static_cast<int>(d)];
      for (std::size_t k = 0; k < dt.pts.size(); ++k) {
        const Point& pt = dt.pts[k];
        eval_transport(pt, false, nullptr, nullptr, nullptr);
        const double pred = dt.species < 0 ? t_jet_.v : c_jets_[dt.species].v;
        t.e[k] = pred - dt.targets[k];
        if (!train_transport_) continue;
        zero_adjoints();
        const double sd = seed_for(data0_ + static_cast<int>(d), k, ramp);
        if (dt.species < 0) {
          t_adj_.v = sd;
        } else {
          c_adj_[dt.species].v = sd;
        }
        backward_transport(pt, false);
      }
    }
  }

  // --- stage driver ----------------------------------------------------------
  void precompute_flow() {
    flow_u_.resize(pde_.points.size());
    flow_v_.resize(pde_.points.size());
    std::vector<double> out(sys_.nn1->n_outputs());
    for (std::size_t k = 0; k < pde_.points.size(); ++k) {
      const Point& pt = pde_.points[k];
      sys_.nn1->eval(pt.r, pt.z, *ws1_, out);
      flow_u_[k] = models::apply_output_transform(sys_.tf1[0], out[0], pt.r, pt.z);
      flow_v_[k] = models::apply_output_transform(sys_.tf1[1], out[1], pt.r, pt.z);
    }
  }

  void snapshot() {
    snap1_.assign(sys_.nn1->params().begin(), sys_.nn1->params().end());
    if (sys_.nn2) snap2_.assign(sys_.nn2->params().begin(), sys_.nn2->params().end());
    if (sys_.nn3) snap3_.assign(sys_.nn3->params().begin(), sys_.nn3->params().end());
    if (target_) snap_ea_ = target_->log_ea;
  }

  void rollback() {
    std::copy(snap1_.begin(), snap1_.end(), sys_.nn1->params().begin());
    sys_.nn1->refresh();
    if (sys_.nn2) {
      std::copy(snap2_.begin(), snap2_.end(), sys_.nn2->params().begin());
      sys_.nn2->refresh();
    }
    if (sys_.nn3) {
      std::copy(snap3_.begin(), snap3_.end(), sys_.nn3->params().begin());
      sys_.nn3->refresh();
    }
    if (target_) target_->log_ea = snap_ea_;
  }

  void run_stage(TrainResult& result, int stage, const StageConfig& cfg) {
    const bool flow = stage != 2;
    train_transport_ = stage != 1;
    const bool train_flow = flow;  // stage 1 or joint
    sample_pools(seed_ + stage * 7919);
    build_terms(stage, cfg);
    if (stage == 2) precompute_flow();
    snapshot();

    adam1_ = AdamState(sys_.nn1->n_params());
    if (sys_.nn2) adam2_ = AdamState(sys_.nn2->n_params());
    if (sys_.nn3) adam3_ = AdamState(sys_.nn3->n_params());
    if (target_) adam_ea_ = AdamState(target_->log_ea.size());

    for (long iter = 0; iter < cfg.iterations; ++iter) {
      if (cfg.resample_every > 0 && iter > 0 && iter % cfg.resample_every == 0) {
        sample_pools(seed_ + stage * 7919 + 1000003 * (iter / cfg.resample_every));
        build_terms(stage, cfg);
        if (stage == 2) precompute_flow();
      }
      const double lr = cfg.lr.at(iter);
      double ramp = 1.0;
      if (cfg.ramp_fraction > 0.0) {
        const double progress =
            static_cast<double>(iter) / (cfg.ramp_fraction * cfg.iterations);
        ramp = cfg.ramp_floor + (1.0 - cfg.ramp_floor) * std::min(1.0, progress);
      }

      std::fill(grad1_.begin(), grad1_.end(), 0.0);
      std::fill(grad2_.begin(), grad2_.end(), 0.0);
      std::fill(grad3_.begin(), grad3_.end(), 0.0);

      if (flow) flow_pass(train_flow, ramp);
      if (train_transport_) transport_pass(/*flow_live=*/flow, ramp);

      loss::LossBreakdown breakdown;
      bool finite = true;
      double ns_plain = 0.0;
      try {
        for (Term& t : terms_) {
          auto comp = loss::assemble_group_loss(
              t.name, t.group, t.e,
              sched_.rba_enabled ? std::span<const double>(t.rba.lambda)
                                 : std::span<const double>{},
              t.weight * (t.ramped ? ramp : 1.0), sched_.q);
          if (flow && (t.name == "pde.ns1" || t.name == "pde.ns2" || t.name == "pde.ns3")) {
            ns_plain += comp.mean_plain;
          }
          breakdown.add(std::move(comp));
        }
      } catch (const NumericError&) {
        finite = false;
      }
      if (!finite || !std::isfinite(breakdown.total)) {
        rollback();
        result.aborted = true;
        return;
      }

      // gradients -> optimizer
      if (train_flow) {
        sys_.nn1->fold_grad(*ws1_, grad1_);
        if (!optimizer_step(sys_.nn1->params(), grad1_, adam1_, lr)) ++result.skipped_steps;
        sys_.nn1->refresh();
      }
      if (train_transport_) {
        if (sys_.monolithic) {
          if (!train_flow) {
            sys_.nn1->fold_grad(*ws1_, grad1_);
            if (!optimizer_step(sys_.nn1->params(), grad1_, adam1_, lr)) {
              ++result.skipped_steps;
            }
            sys_.nn1->refresh();
          }
        } else {
          sys_.nn2->fold_grad(*ws2_, grad2_);
          sys_.nn3->fold_grad(*ws3_, grad3_);
          if (!optimizer_step(sys_.nn2->params(), grad2_, adam2_, lr)) ++result.skipped_steps;
          if (!optimizer_step(sys_.nn3->params(), grad3_, adam3_, lr)) ++result.skipped_steps;
          sys_.nn2->refresh();
          sys_.nn3->refresh();
        }
        if (target_) {
          // chain rule through Ea = exp(s)
          std::vector<double> g(target_->log_ea.size());
          const auto ea = target_->ea();
          for (std::size_t j = 0; j < g.size(); ++j) g[j] = ea_grad_[j] * ea[j];
          if (!optimizer_step(target_->log_ea, g, adam_ea_, lr)) ++result.skipped_steps;
          for (std::size_t j = 0; j < target_->log_ea.size(); ++j) {
            const double e = std::exp(target_->log_ea[j]);
            if (e < target_->ea_min) {
              target_->log_ea[j] = std::log(target_->ea_min);
              ++target_->projection_warnings;
            } else if (e > target_->ea_max) {
              target_->log_ea[j] = std::log(target_->ea_max);
              ++target_->projection_warnings;
            }
          }
        }
      }

      // RBA weight updates from the residuals just computed
      if (sched_.rba_enabled) {
        for (Term& t : terms_) loss::rba_update(t.rba, t.e);
      }

      const bool last = (iter + 1 == cfg.iterations);
      const bool early =
          flow && !train_transport_ && cfg.ns_early_stop > 0.0 && ns_plain < cfg.ns_early_stop;
      if (iter % sched_.log_every == 0 || last || early) {
        LossRecord rec;
        rec.iteration = iter;
        rec.stage = stage;
        rec.lr = lr;
        rec.total = breakdown.total;
        rec.l_pde = breakdown.l_pde;
        rec.l_b = breakdown.l_b;
        rec.l_d = breakdown.l_d;
        rec.ns_plain = ns_plain;
        if (target_) rec.ea = target_->ea();
        result.history.push_back(rec);
        if (target_) result.ea_trajectory.push_back(target_->ea());
        result.final_breakdown = breakdown;
        snapshot();
      }
      if (stage == 1 || (stage == 3 && !train_transport_)) {
        result.stage1_iterations = iter + 1;
      } else {
        result.stage2_iterations = iter + 1;
      }
      if (early) break;
    }
  }

  // --- members ---------------------------------------------------------------
  const ReactorCase& rc_;
  FmeSystem& sys_;
  const TrainSchedule& sched_;
  std::uint64_t seed_;
  bool inverse_;
  InverseTarget* target_;
  const StageCallback& on_stage_end_;
  int ns_;
  loss::Domain domain_;

  std::unique_ptr<models::ModelWorkspace> ws1_, ws2_, ws3_;
  std::vector<double> grad1_, grad2_, grad3_;
  AdamState adam1_{}, adam2_{}, adam3_{}, adam_ea_{};

  loss::CollocationSet pde_, inlet_, wall_, outlet_, axis_;
  std::vector<DataTerm> data_terms_;
  std::vector<Term> terms_;
  std::vector<double> flow_u_, flow_v_;

  std::vector<Jet> raw1_, raw2_, raw3_, adj1_, adj2_, adj3_, c_jets_, c_adj_;
  Jet t_jet_{}, t_adj_{};
  physics::RateEval rates_;
  std::vector<double> dcons_dc_, dcons_dt_, dsrc_dc_, ea_grad_;
  std::vector<double> snap1_, snap2_, snap3_, snap_ea_;

  bool train_transport_ = false;

  int ns1_ = -1, ns2_ = -1, ns3_ = -1, in_u_ = -1, in_v_ = -1, ax_dudr_ = -1, ax_v_ = -1,
      out_p_ = -1;
  int mb0_ = -1, eb_ = -1, in_c0_ = -1, in_t_ = -1, wall_t_ = -1, wall_c0_ = -1,
      out_c0_ = -1, out_t_ = -1, ax_c0_ = -1, ax_t_ = -1, data0_ = -1;
};

}  // namespace

TrainResult train_forward(const ReactorCase& rc, FmeSystem& system,
                          const TrainSchedule& schedule, const ObservationSet& data,
                          std::uint64_t seed, const StageCallback& on_stage_end) {
  Engine engine(rc, system, schedule, data, seed, false, nullptr, on_stage_end);
  return engine.run();
}

TrainResult train_inverse(const ReactorCase& rc, FmeSystem& system,
                          const TrainSchedule& schedule, const ObservationSet& data,
                          InverseTarget& target, std::uint64_t seed,
                          const StageCallback& on_stage_end) {
  if (target.log_ea.size() != static_cast<std::size_t>(rc.n_reactions())) {
    throw ConfigError("train_inverse: one Ea per reaction is required");
  }
  Engine engine(rc, system, schedule, data, seed, true, &target, on_stage_end);
  return engine.run();
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

namespace {

void system_values(const FmeSystem& sys, const ReactorCase& rc, double r, double z,
                   models::ModelWorkspace& w1, models::ModelWorkspace* w2,
                   models::ModelWorkspace* w3, std::vector<double>& vals) {
  const int ns = rc.n_species();
  vals.resize(3 + ns + 1);
  if (sys.monolithic) {
    std::vector<double> out(sys.nn1->n_outputs());
    sys.nn1->eval(r, z, w1, out);
    for (int i = 0; i < 3 + ns + 1; ++i) {
      vals[i] = models::apply_output_transform(sys.tf1[i], out[i], r, z);
    }
  } else {
    std::vector<double> o1(3), o2(ns), o3(1);
    sys.nn1->eval(r, z, w1, o1);
    sys.nn2->eval(r, z, *w2, o2);
    sys.nn3->eval(r, z, *w3, o3);
    for (int i = 0; i < 3; ++i) {
      vals[i] = models::apply_output_transform(sys.tf1[i], o1[i], r, z);
    }
    for (int s = 0; s < ns; ++s) {
      vals[3 + s] = models::apply_output_transform(sys.tf2[s], o2[s], r, z);
    }
    vals[3 + ns] = models::apply_output_transform(sys.tf3[0], o3[0], r, z);
  }
}

}  // namespace

EvalReport evaluate_model(const FmeSystem& system, const ReactorCase& rc,
                          const oracle::FieldGrid& grid) {
  if (grid.case_id != rc.case_id) {
    throw ConfigError("evaluate_model: case mismatch (grid '" + grid.case_id +
                      "' vs case '" + rc.case_id + "')");
  }
  if (std::abs(grid.radius - rc.radius) > 1e-12 || std::abs(grid.length - rc.length) > 1e-12) {
    throw ConfigError("evaluate_model: grid extents do not match the case domain");
  }
  const int ns = rc.n_species();
  std::vector<std::string> vars = {"u", "v", "p"};
  for (int s = 0; s < ns; ++s) vars.push_back("C_" + rc.species[s]);
  vars.push_back("T");

  auto w1 = system.nn1->make_workspace();
  std::unique_ptr<models::ModelWorkspace> w2, w3;
  if (!system.monolithic) {
    w2 = system.nn2->make_workspace();
    w3 = system.nn3->make_workspace();
  }

  const int nr = grid.nr_nodes(), nz = grid.nz_nodes();
  std::vector<double> vals;
  std::vector<double> num(vars.size(), 0.0), den(vars.size(), 0.0);
  for (int j = 0; j < nz; ++j) {
    for (int i = 0; i < nr; ++i) {
      system_values(system, rc, grid.r(i), grid.z(j), *w1, w2.get(), w3.get(), vals);
      for (std::size_t q = 0; q < vars.size(); ++q) {
        const double ref = grid.at(vars[q], i, j);
        const double diff = vals[q] - ref;
        num[q] += diff * diff;
        den[q] += ref * ref;
      }
    }
  }
  EvalReport report;
  const double n_nodes = static_cast<double>(nr) * nz;
  for (std::size_t q = 0; q < vars.size(); ++q) {
    VarError e;
    e.abs_l2 = std::sqrt(num[q] / n_nodes);
    e.rel_l2 = den[q] > 0.0 ? std::sqrt(num[q] / den[q]) : e.abs_l2;
    report[vars[q]] = e;
  }
  return report;
}

oracle::FieldGrid sample_system(const FmeSystem& system, const ReactorCase& rc,
                                int nr_cells, int nz_cells) {
  oracle::FieldGrid g;
  g.case_id = rc.case_id;
  g.nr_cells = nr_cells;
  g.nz_cells = nz_cells;
  g.radius = rc.radius;
  g.length = rc.length;
  const int ns = rc.n_species();
  g.variables = {"u", "v", "p"};
  for (int s = 0; s < ns; ++s) g.variables.push_back("C_" + rc.species[s]);
  g.variables.push_back("T");
  const int nr = g.nr_nodes(), nz = g.nz_nodes();
  for (const auto& v : g.variables) {
    g.fields[v].assign(static_cast<std::size_t>(nr) * nz, 0.0);
  }
  auto w1 = system.nn1->make_workspace();
  std::unique_ptr<models::ModelWorkspace> w2, w3;
  if (!system.monolithic) {
    w2 = system.nn2->make_workspace();
    w3 = system.nn3->make_workspace();
  }
  std::vector<double> vals;
  for (int j = 0; j < nz; ++j) {
    for (int i = 0; i < nr; ++i) {
      system_values(system, rc, g.r(i), g.z(j), *w1, w2.get(), w3.get(), vals);
      for (std::size_t q = 0; q < g.variables.size(); ++q) {
        g.fields[g.variables[q]][static_cast<std::size_t>(j) * nr + i] = vals[q];
      }
    }
  }
  return g;
}

}  // namespace fmenets::train

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fmenets/physics.hpp"
#include "fmenets/rng.hpp"

using namespace fmenets;
using namespace fmenets::physics;

namespace {

// span-membership via rank comparison, small matrices only
int rank_of(std::vector<std::vector<double>> rows) {
  int rank = 0;
  const int nc = rows.empty() ? 0 : static_cast<int>(rows[0].size());
  for (int c = 0; c < nc && rank < static_cast<int>(rows.size()); ++c) {
    int sel = -1;
    double best = 1e-9;
    for (int i = rank; i < static_cast<int>(rows.size()); ++i) {
      if (std::abs(rows[i][c]) > best) {
        best = std::abs(rows[i][c]);
        sel = i;
      }
    }
    if (sel < 0) continue;
    std::swap(rows[sel], rows[rank]);
    for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
      if (i == rank) continue;
      const double f = rows[i][c] / rows[rank][c];
      for (int k = 0; k < nc; ++k) rows[i][k] -= f * rows[rank][k];
    }
    ++rank;
  }
  return rank;
}

bool in_span(const std::vector<std::vector<int>>& basis, const std::vector<int>& vec) {
  std::vector<std::vector<double>> rows;
  for (const auto& b : basis) rows.emplace_back(b.begin(), b.end());
  const int r0 = rank_of(rows);
  rows.emplace_back(vec.begin(), vec.end());
  return rank_of(rows) == r0;
}

}  // namespace

TEST_CASE("dimensionless groups from the reference fluid land within 1%") {
  const auto rc = make_case("case1");
  const auto g = compute_dimensionless_groups(rc.fluid, rc.scales);
  CHECK(g.re == doctest::Approx(40.343).epsilon(0.01));
  CHECK(g.pe == doctest::Approx(256.008).epsilon(0.01));
  CHECK(g.pe_t == doctest::Approx(221.764).epsilon(0.01));
}

TEST_CASE("reynolds number is linear in 1/mu") {
  auto rc = make_case("case1");
  const auto g1 = compute_dimensionless_groups(rc.fluid, rc.scales);
  auto fluid = rc.fluid;
  fluid.mu *= 2.0;
  const auto g2 = compute_dimensionless_groups(fluid, rc.scales);
  CHECK(g2.re == doctest::Approx(0.5 * g1.re).epsilon(1e-14));
}

TEST_CASE("thermal diffusivity direct evaluation") {
  FluidProperties f{1.0, 993.0, 4200.0, 1.0, 0.5};
  CHECK(thermal_diffusivity(f) == doctest::Approx(1.19886e-7).epsilon(1e-4));
}

TEST_CASE("re is invariant under a compensating rescale") {
  const auto rc = make_case("case1");
  auto fluid = rc.fluid;
  auto scales = rc.scales;
  fluid.mu *= 3.7;
  fluid.rho *= 3.7;
  const auto a = compute_dimensionless_groups(rc.fluid, rc.scales);
  const auto b = compute_dimensionless_groups(fluid, scales);
  CHECK(b.re == doctest::Approx(a.re).epsilon(1e-12));
}

TEST_CASE("non-positive inputs are rejected") {
  const auto rc = make_case("case1");
  auto fluid = rc.fluid;
  fluid.mu = 0.0;
  CHECK_THROWS_AS(compute_dimensionless_groups(fluid, rc.scales), std::domain_error);
}

TEST_CASE("arrhenius") {
  SUBCASE("reference evaluation") {
    // 400 * exp(-40230 / (8.314 * 400)), evaluated directly
    CHECK(arrhenius(400.0, 40230.0, 400.0) == doctest::Approx(2.2303413e-3).epsilon(1e-6));
  }
  SUBCASE("zero activation energy returns k0 exactly") {
    CHECK(arrhenius(321.5, 0.0, 77.0) == 321.5);
  }
  SUBCASE("strictly increasing in T and log-form exact") {
    double prev = 0.0;
    for (double t = 200.0; t <= 2000.0; t += 50.0) {
      const double k = arrhenius(400.0, 40230.0, t);
      CHECK(k > prev);
      prev = k;
      CHECK(std::log(k / 400.0) ==
            doctest::Approx(-40230.0 / (kGasConstant * t)).epsilon(1e-12));
    }
  }
  SUBCASE("non-positive temperature is a domain error") {
    CHECK_THROWS_AS(arrhenius(400.0, 40230.0, 0.0), std::domain_error);
    CHECK_THROWS_AS(arrhenius(400.0, 40230.0, -5.0), std::domain_error);
  }
}

TEST_CASE("dimensionless rate constant and enthalpy") {
  const auto rc = make_case("case1");
  CHECK(nondim_rate_constant(400.0, rc.scales) == doctest::Approx(4.9198e4).epsilon(1e-4));
  auto scales = rc.scales;
  scales.c_char = 0.0;
  CHECK(nondim_rate_constant(400.0, scales) == 0.0);
  scales = rc.scales;
  scales.v_char *= 2.0;
  CHECK(nondim_rate_constant(400.0, scales) ==
        doctest::Approx(0.5 * nondim_rate_constant(400.0, rc.scales)).epsilon(1e-14));

  CHECK(nondim_enthalpy(-100000.0, rc.scales, rc.fluid) ==
        doctest::Approx(-0.10390).epsilon(1e-4));
  CHECK(nondim_enthalpy(0.0, rc.scales, rc.fluid) == 0.0);
  CHECK(nondim_enthalpy(-1.0, rc.scales, rc.fluid) < 0.0);
  CHECK(nondim_enthalpy(1.0, rc.scales, rc.fluid) > 0.0);
}

TEST_CASE("case presets match the reference tables") {
  const auto c1 = make_case("case1");
  CHECK(c1.species.size() == 2);
  CHECK(c1.length == doctest::Approx(12.984));
  CHECK(c1.radius == doctest::Approx(0.5));
  CHECK(c1.inlet_conc_dimless[0] == doctest::Approx(1.0));
  CHECK(c1.inlet_conc_dimless[1] == 0.0);
  CHECK(c1.inlet_temp_dimless == doctest::Approx(400.0 / 300.0));
  CHECK(c1.wall_temp_dimless == doctest::Approx(400.0 / 300.0));

  const auto c2 = make_case("case2");
  CHECK(c2.species.size() == 3);
  CHECK(c2.reactions.size() == 2);

  const auto c3 = make_case("case3");
  CHECK(c3.species.size() == 6);
  CHECK(c3.reactions.size() == 3);
  CHECK(c3.inlet_conc_dimless[0] == doctest::Approx(850.0 / 1300.0));
  CHECK(c3.inlet_conc_dimless[1] == doctest::Approx(1.0));
  CHECK(c3.inlet_conc_dimless[2] == doctest::Approx(1250.0 / 1300.0));
  CHECK(c3.reactions[0].k0 == 284.0);
  CHECK(c3.reactions[1].k0 == 142.0);
  CHECK(c3.reactions[2].k0 == 227.0);

  CHECK_THROWS_AS(make_case("case9"), ConfigError);
}

TEST_CASE("reaction rates, two-component case") {
  const auto rc = make_case("case1");
  SUBCASE("zero concentration kills the second-order rate") {
    const std::vector<double> c{0.0, 0.4};
    const auto r = reaction_rates(rc, c, 400.0 / 300.0);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 0.0);
  }
  SUBCASE("reference point") {
    const std::vector<double> c{1.0, 0.0};
    const auto r = reaction_rates(rc, c, 400.0 / 300.0);
    // k0_dimless * exp(-Ea/(R*400)) with C_a = 1: composition of the two
    // oracles above evaluated without intermediate rounding
    CHECK(r[0] == doctest::Approx(0.27431863).epsilon(1e-6));
    CHECK(r[1] == doctest::Approx(-r[0]).epsilon(1e-14));
  }
}

TEST_CASE("stoichiometric invariants span the expected conservation laws") {
  const auto c1 = make_case("case1");
  const auto b1 = stoich_invariants(c1);
  REQUIRE(b1.size() == 1);
  CHECK(in_span(b1, {1, 1}));

  const auto c2 = make_case("case2");
  const auto b2 = stoich_invariants(c2);
  REQUIRE(b2.size() == 1);
  CHECK(in_span(b2, {1, 1, 1}));

  const auto c3 = make_case("case3");
  const auto b3 = stoich_invariants(c3);
  REQUIRE(b3.size() == 3);
  CHECK(in_span(b3, {1, 0, 0, 0, 1, 1}));
  CHECK(in_span(b3, {0, 0, 1, 1, 0, 0}));
  CHECK(in_span(b3, {0, 1, 0, 1, 1, 1}));
}

TEST_CASE("invariants annihilate the reaction sources for random states") {
  Rng rng(7);
  for (const char* id : {"case1", "case2", "case3"}) {
    const auto rc = make_case(id);
    const auto basis = stoich_invariants(rc);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> c(rc.n_species());
      for (double& x : c) x = rng.uniform(0.0, 2.0);
      const double t = rng.uniform(1.0, 2.0);
      const auto r = reaction_rates(rc, c, t);
      double rnorm = 0.0;
      for (double x : r) rnorm += x * x;
      rnorm = std::sqrt(rnorm);
      for (const auto& w : basis) {
        double dot = 0.0;
        for (int i = 0; i < rc.n_species(); ++i) dot += w[i] * r[i];
        CHECK(std::abs(dot) <= 1e-12 * std::max(rnorm, 1.0));
      }
    }
  }
}

TEST_CASE("inlet rates are finite and products are only produced") {
  for (const char* id : {"case1", "case2"}) {
    const auto rc = make_case(id);
    const auto r = reaction_rates(rc, rc.inlet_conc_dimless, rc.inlet_temp_dimless);
    for (double x : r) CHECK(std::isfinite(x));
    // sole product species of the chain is not consumed at the pure feed
    CHECK(r.back() <= 0.0);
  }
  const auto c3 = make_case("case3");
  const auto r3 = reaction_rates(c3, c3.inlet_conc_dimless, c3.inlet_temp_dimless);
  for (double x : r3) CHECK(std::isfinite(x));
}

TEST_CASE("rate jacobian matches finite differences") {
  Rng rng(11);
  const auto rc = make_case("case3");
  std::vector<double> c(rc.n_species());
  for (double& x : c) x = rng.uniform(0.1, 1.5);
  const double t = 1.41;
  RateEval ev;
  reaction_rates_detail(rc, c, t, {}, ev);
  const double h = 1e-6;
  for (int j = 0; j < rc.n_reactions(); ++j) {
    auto cp = c;
    const auto [pf, ps] = rc.reactions[j].rate_form;
    cp[pf] += h;
    RateEval evp;
    reaction_rates_detail(rc, cp, t, {}, evp);
    const double fd = (evp.rate[j] - ev.rate[j]) / h;
    CHECK(ev.drate_dc_first[j] + (pf == ps ? ev.drate_dc_second[j] : 0.0) ==
          doctest::Approx(fd).epsilon(1e-5));
    RateEval evt;
    reaction_rates_detail(rc, c, t + h, {}, evt);
    CHECK(ev.drate_dT[j] == doctest::Approx((evt.rate[j] - ev.rate[j]) / h).epsilon(1e-4));
  }
}

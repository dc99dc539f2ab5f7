#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fmenets/autodiff.hpp"
#include "fmenets/models.hpp"
#include "fmenets/physics.hpp"
#include "fmenets/rng.hpp"

using namespace fmenets;
using namespace fmenets::ad;

namespace {

// central finite differences of a scalar function of (r,z)
template <class F>
Jet fd_jet(F&& f, double r, double z, double h = 1e-4) {
  Jet j;
  j.v = f(r, z);
  j.dr = (f(r + h, z) - f(r - h, z)) / (2 * h);
  j.dz = (f(r, z + h) - f(r, z - h)) / (2 * h);
  j.drr = (f(r + h, z) - 2 * j.v + f(r - h, z)) / (h * h);
  j.dzz = (f(r, z + h) - 2 * j.v + f(r, z - h)) / (h * h);
  return j;
}

double poly_eval(const std::vector<double>& c, double x) {
  double acc = 0.0;
  for (int i = static_cast<int>(c.size()) - 1; i >= 0; --i) acc = acc * x + c[i];
  return acc;
}

std::vector<double> poly_derive(const std::vector<double>& c) {
  std::vector<double> d;
  for (std::size_t i = 1; i < c.size(); ++i) d.push_back(c[i] * static_cast<double>(i));
  if (d.empty()) d.push_back(0.0);
  return d;
}

Dual2<double> poly_dual(const std::vector<double>& c, Dual2<double> x) {
  Dual2<double> acc(0.0);
  for (int i = static_cast<int>(c.size()) - 1; i >= 0; --i) acc = acc * x + c[i];
  return acc;
}

}  // namespace

TEST_CASE("dual polynomial derivatives: f = r^2 z") {
  auto f = [](Dual2<double> r, Dual2<double> z) {
    return std::vector<Dual2<double>>{r * r * z};
  };
  for (double r : {0.1, 0.37, 0.49}) {
    for (double z : {0.5, 6.0, 12.0}) {
      const auto out = eval_with_input_derivs(f, r, z);
      CHECK(out[0].v == doctest::Approx(r * r * z).epsilon(1e-14));
      CHECK(out[0].dr == doctest::Approx(2 * r * z).epsilon(1e-14));
      CHECK(out[0].dz == doctest::Approx(r * r).epsilon(1e-14));
      CHECK(out[0].drr == doctest::Approx(2 * z).epsilon(1e-14));
      CHECK(out[0].dzz == 0.0);
    }
  }
}

TEST_CASE("tanh at the origin is odd") {
  auto f = [](Dual2<double> r, Dual2<double>) {
    return std::vector<Dual2<double>>{tanh(r)};
  };
  const auto out = eval_with_input_derivs(f, 0.0, 0.0);
  CHECK(out[0].v == 0.0);
  CHECK(out[0].dr == 1.0);
  CHECK(out[0].drr == 0.0);
}

TEST_CASE("second-order propagation matches symbolic composition") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> f(4), g(3);
    for (double& c : f) c = rng.uniform(-1.0, 1.0);
    for (double& c : g) c = rng.uniform(-1.0, 1.0);
    const double x = rng.uniform(-1.5, 1.5);
    const auto fd1 = poly_derive(f), fd2 = poly_derive(fd1);
    const auto gd1 = poly_derive(g), gd2 = poly_derive(gd1);
    const double gx = poly_eval(g, x);
    const double expect_d = poly_eval(fd1, gx) * poly_eval(gd1, x);
    const double expect_dd = poly_eval(fd2, gx) * poly_eval(gd1, x) * poly_eval(gd1, x) +
                             poly_eval(fd1, gx) * poly_eval(gd2, x);
    const auto got = poly_dual(f, poly_dual(g, Dual2<double>::seed(x, 1.0)));
    CHECK(got.d == doctest::Approx(expect_d).epsilon(1e-12));
    CHECK(got.dd == doctest::Approx(expect_dd).epsilon(1e-12));
  }
}

TEST_CASE("dual division and elementary functions agree with finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const double r = rng.uniform(0.2, 0.8);
    const double z = rng.uniform(0.5, 2.0);
    auto f = [](Dual2<double> r_, Dual2<double> z_) {
      return std::vector<Dual2<double>>{exp(tanh(r_ * z_) / (1.0 + r_ * r_)) +
                                        log(z_ + 2.0) * sqrt(r_ + 1.0)};
    };
    auto fv = [](double r_, double z_) {
      return std::exp(std::tanh(r_ * z_) / (1.0 + r_ * r_)) +
             std::log(z_ + 2.0) * std::sqrt(r_ + 1.0);
    };
    const auto got = eval_with_input_derivs(f, r, z)[0];
    const auto ref = fd_jet(fv, r, z);
    CHECK(got.v == doctest::Approx(ref.v).epsilon(1e-12));
    CHECK(got.dr == doctest::Approx(ref.dr).epsilon(1e-6));
    CHECK(got.dz == doctest::Approx(ref.dz).epsilon(1e-6));
    CHECK(got.drr == doctest::Approx(ref.drr).epsilon(1e-4));
    CHECK(got.dzz == doctest::Approx(ref.dzz).epsilon(1e-4));
  }
}

TEST_CASE("random small MLP input derivatives match finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    models::MlpModel net({2, 8, 8, 2}, true, {0.0, 0.5, 0.0, 12.984});
    Rng init(100 + trial);
    net.init_params(init);
    auto param = [&](int i) { return net.params()[i]; };
    auto closure = [&](Dual2<double> r, Dual2<double> z) {
      std::vector<Dual2<double>> out(2);
      net.eval_generic(r, z, param, std::span<Dual2<double>>(out));
      return out;
    };
    const double r = rng.uniform(0.05, 0.45);
    const double z = rng.uniform(0.5, 12.0);
    const auto jets = eval_with_input_derivs(closure, r, z);
    for (int o = 0; o < 2; ++o) {
      auto fv = [&](double rr, double zz) {
        std::vector<double> out(2);
        auto p = [&](int i) { return net.params()[i]; };
        std::vector<double> o2(2);
        net.eval_generic(rr, zz, p, std::span<double>(o2));
        return o2[o];
        (void)out;
      };
      const auto ref = fd_jet(fv, r, z);
      CHECK(jets[o].v == doctest::Approx(ref.v).epsilon(1e-12));
      CHECK(jets[o].dr == doctest::Approx(ref.dr).epsilon(1e-5));
      CHECK(jets[o].dz == doctest::Approx(ref.dz).epsilon(1e-5));
      CHECK(jets[o].drr == doctest::Approx(ref.drr).epsilon(1e-5).scale(1.0));
      CHECK(jets[o].dzz == doctest::Approx(ref.dzz).epsilon(1e-5).scale(1.0));
    }
  }
}

TEST_CASE("tape gradients") {
  SUBCASE("quadratic loss gradient is the parameter vector") {
    std::vector<double> params = {0.3, -1.2, 2.5};
    auto grad = grad_params(
        [](Tape& tape, std::span<const Var> p) {
          Var acc = p[0] * p[0];
          for (std::size_t i = 1; i < p.size(); ++i) acc = acc + p[i] * p[i];
          return acc * 0.5;
        },
        params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      CHECK(grad[i] == doctest::Approx(params[i]).epsilon(1e-14));
    }
  }
  SUBCASE("constant loss has zero gradient") {
    std::vector<double> params = {1.0, 2.0};
    auto grad = grad_params(
        [](Tape& tape, std::span<const Var>) { return tape.leaf(3.14); }, params);
    CHECK(grad[0] == 0.0);
    CHECK(grad[1] == 0.0);
  }
  SUBCASE("nan loss raises a numeric error") {
    std::vector<double> params = {1.0};
    CHECK_THROWS_AS(grad_params(
                        [](Tape& tape, std::span<const Var> p) {
                          return log(p[0] - 2.0);  // log of a negative number
                        },
                        params),
                    NumericError);
  }
  SUBCASE("linearity of the gradient") {
    std::vector<double> params = {0.7, -0.4, 1.1};
    auto l1 = [](Tape&, std::span<const Var> p) { return p[0] * p[1] + p[2]; };
    auto l2 = [](Tape&, std::span<const Var> p) { return tanh(p[0]) * p[2]; };
    const double a = 2.5, b = -1.25;
    auto g1 = grad_params(l1, params);
    auto g2 = grad_params(l2, params);
    auto gc = grad_params(
        [&](Tape& t, std::span<const Var> p) { return a * l1(t, p) + b * l2(t, p); },
        params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      CHECK(gc[i] == doctest::Approx(a * g1[i] + b * g2[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("composed residual loss gradient matches finite differences") {
  // 2 -> 8 -> 2 network, five collocation points, squared-residual loss of a
  // toy pde residual built from the dual-over-tape evaluation
  models::MlpModel net({2, 8, 2}, true, {0.0, 0.5, 0.0, 12.984});
  Rng init(42);
  net.init_params(init);
  const std::vector<std::pair<double, double>> pts = {
      {0.1, 1.0}, {0.2, 3.0}, {0.3, 6.0}, {0.4, 9.0}, {0.45, 12.0}};

  auto loss_eval = [&](Tape& tape, std::span<const Var> p) {
    auto param = [&](int i) { return p[i]; };
    Var acc = tape.leaf(0.0);
    for (const auto& [r, z] : pts) {
      using D = Dual2<Var>;
      std::vector<D> pass_r(2), pass_z(2);
      net.eval_generic(D::seed(tape.leaf(r), tape.leaf(1.0)), D(tape.leaf(z)), param,
                       std::span<D>(pass_r));
      net.eval_generic(D(tape.leaf(r)), D::seed(tape.leaf(z), tape.leaf(1.0)), param,
                       std::span<D>(pass_z));
      // residual: u_z + u * u_r - 0.1 * u_rr
      const Var res =
          pass_z[0].d + pass_r[0].v * pass_r[0].d - 0.1 * pass_r[0].dd + pass_r[1].v;
      acc = acc + res * res;
    }
    return acc;
  };

  std::vector<double> params(net.params().begin(), net.params().end());
  const auto grad = grad_params(loss_eval, params);

  auto loss_value = [&](std::span<const double> p) {
    double acc = 0.0;
    auto param = [&](int i) { return p[i]; };
    for (const auto& [r, z] : pts) {
      using D = Dual2<double>;
      std::vector<D> pass_r(2), pass_z(2);
      net.eval_generic(D::seed(r, 1.0), D(z), param, std::span<D>(pass_r));
      net.eval_generic(D(r), D::seed(z, 1.0), param, std::span<D>(pass_z));
      const double res =
          pass_z[0].d + pass_r[0].v * pass_r[0].d - 0.1 * pass_r[0].dd + pass_r[1].v;
      acc += res * res;
    }
    return acc;
  };

  Rng pick(9);
  int checked = 0;
  for (int k = 0; k < 40; ++k) {
    const int i = static_cast<int>(pick.next_u64() % params.size());
    const double h = 1e-5;
    auto pp = params;
    pp[i] += h;
    const double fp = loss_value(pp);
    pp[i] -= 2 * h;
    const double fm = loss_value(pp);
    const double fd = (fp - fm) / (2 * h);
    if (std::abs(fd) < 1e-8) continue;
    CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-4));
    ++checked;
  }
  CHECK(checked > 10);
}

TEST_CASE("activation-energy gradient through arrhenius matches the closed form") {
  // k = k0 exp(-Ea/(R T)); dk/dEa = -k/(R T)
  const double k0 = 400.0, t = 412.0;
  std::vector<double> params = {40230.0};
  auto grad = grad_params(
      [&](Tape& tape, std::span<const Var> p) {
        return k0 * exp(-(p[0] / (physics::kGasConstant * t)));
      },
      params);
  const double k = physics::arrhenius(k0, params[0], t);
  CHECK(grad[0] == doctest::Approx(-k / (physics::kGasConstant * t)).epsilon(1e-10));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fmenets/models.hpp"
#include "fmenets/rng.hpp"

using namespace fmenets;
using namespace fmenets::models;
using ad::Dual2;
using ad::Jet;
using ad::Tape;
using ad::Var;

namespace {

const InputScaling kUnit{-1.0, 1.0, -1.0, 1.0};
const InputScaling kDomain{0.0, 0.5, 0.0, 12.984};

// independent route: Chebyshev via the trigonometric identity, nested sums
// written out directly
double ckan_reference(const CkanModel& m, double r, double z) {
  const double ar = 2.0 / (m.scaling().r_hi - m.scaling().r_lo);
  const double az = 2.0 / (m.scaling().z_hi - m.scaling().z_lo);
  std::vector<double> act = {ar * (r - m.scaling().r_lo) - 1.0,
                             az * (z - m.scaling().z_lo) - 1.0};
  const auto& widths = m.widths();
  int pidx = 0;
  const auto coef = [&](int l, int j, int i, int n) {
    int off = 0;
    for (int ll = 0; ll < l; ++ll) off += widths[ll] * widths[ll + 1] * (m.degree() + 1);
    return m.params()[off + (j * widths[l] + i) * (m.degree() + 1) + n];
  };
  (void)pidx;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    std::vector<double> next(widths[l + 1], 0.0);
    for (int j = 0; j < widths[l + 1]; ++j) {
      for (int i = 0; i < widths[l]; ++i) {
        const double zeta = std::tanh(act[i]);
        for (int n = 0; n <= m.degree(); ++n) {
          next[j] += coef(static_cast<int>(l), j, i, n) * std::cos(n * std::acos(zeta));
        }
      }
    }
    act = next;
  }
  return act[0];
}

}  // namespace

TEST_CASE("chebyshev basis values") {
  std::vector<double> t(8);
  chebyshev_eval(2, 0.5, t);
  CHECK(t[2] == doctest::Approx(-0.5).epsilon(1e-14));
  chebyshev_eval(7, 1.0, t);
  for (int n = 0; n <= 7; ++n) CHECK(t[n] == doctest::Approx(1.0).epsilon(1e-14));
  chebyshev_eval(5, 0.3, t);
  CHECK(t[5] == doctest::Approx(std::cos(5.0 * std::acos(0.3))).epsilon(1e-12));
  CHECK_THROWS_AS(chebyshev_eval(3, 1.0 + 1e-9, t), std::domain_error);
}

TEST_CASE("weight normalization: effective row norms equal |g|") {
  MlpModel net({2, 16, 16, 3}, true, kDomain);
  Rng rng(33);
  net.init_params(rng);
  // perturb away from the init where g = ||v|| holds trivially
  for (double& p : net.params()) p += 0.1 * std::sin(p * 17.0);
  net.refresh();
  const auto& sizes = net.layer_sizes();
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const auto w = net.effective_weights(static_cast<int>(l));
    int base = 0;
    for (std::size_t k = 0; k < l; ++k) {
      base += sizes[k] * sizes[k + 1] + 2 * sizes[k + 1];
    }
    for (int j = 0; j < sizes[l + 1]; ++j) {
      double norm2 = 0.0;
      for (int i = 0; i < sizes[l]; ++i) norm2 += w[j * sizes[l] + i] * w[j * sizes[l] + i];
      const double g = net.params()[base + sizes[l] * sizes[l + 1] + j];
      CHECK(std::sqrt(norm2) == doctest::Approx(std::abs(g)).epsilon(1e-10));
    }
  }
}

TEST_CASE("zero input with zero biases and odd activation gives zero output") {
  MlpModel net({2, 8, 8, 2}, true, kUnit);
  Rng rng(5);
  net.init_params(rng);  // biases start at zero
  auto ws = net.make_workspace();
  std::vector<double> out(2);
  net.eval(0.0, 0.0, *ws, out);
  CHECK(out[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  CHECK(out[1] == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
}

TEST_CASE("doubling g doubles the pre-activation exactly") {
  MlpModel net({2, 3}, true, kUnit);  // single linear layer
  Rng rng(7);
  net.init_params(rng);
  auto ws = net.make_workspace();
  std::vector<double> a(3), b(3);
  net.eval(0.3, -0.2, *ws, a);
  // double every g of the (only) layer: params layout [v(6), g(3), b(3)]
  for (int j = 0; j < 3; ++j) net.params()[6 + j] *= 2.0;
  net.refresh();
  net.eval(0.3, -0.2, *ws, b);
  for (int j = 0; j < 3; ++j) CHECK(b[j] == doctest::Approx(2.0 * a[j]).epsilon(1e-14));
}

TEST_CASE("weight-norm net equals a plain net with precomputed weights") {
  MlpModel wn({2, 10, 10, 2}, true, kDomain);
  Rng rng(42);
  wn.init_params(rng);
  for (double& p : wn.params()) p += 0.05 * std::cos(p * 31.0);
  wn.refresh();

  MlpModel plain({2, 10, 10, 2}, false, kDomain);
  // copy W = g v / ||v|| and biases
  const auto& sizes = wn.layer_sizes();
  int src = 0, dst = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l], on = sizes[l + 1];
    const auto w = wn.effective_weights(static_cast<int>(l));
    for (int k = 0; k < in * on; ++k) plain.params()[dst + k] = w[k];
    for (int j = 0; j < on; ++j) {
      plain.params()[dst + in * on + j] = wn.params()[src + in * on + on + j];
    }
    src += in * on + 2 * on;
    dst += in * on + on;
  }
  plain.refresh();

  auto wa = wn.make_workspace();
  auto wb = plain.make_workspace();
  std::vector<double> oa(2), ob(2);
  Rng pts(3);
  for (int k = 0; k < 20; ++k) {
    const double r = pts.uniform(0.0, 0.5), z = pts.uniform(0.0, 12.984);
    wn.eval(r, z, *wa, oa);
    plain.eval(r, z, *wb, ob);
    CHECK(oa[0] == doctest::Approx(ob[0]).epsilon(1e-12));
    CHECK(oa[1] == doctest::Approx(ob[1]).epsilon(1e-12));
  }
}

TEST_CASE("ckan basics") {
  SUBCASE("zero coefficients give zero output") {
    CkanModel net({2, 4, 1}, 4, kDomain);
    auto ws = net.make_workspace();
    std::vector<double> out(1);
    net.eval(0.2, 5.0, *ws, out);
    CHECK(out[0] == 0.0);
  }
  SUBCASE("single T1 edge reproduces tanh of the scaled input") {
    CkanModel net({2, 1}, 3, kUnit);
    // coefficient (out 0, in 0, order 1) = 1
    net.params()[1] = 1.0;
    auto ws = net.make_workspace();
    std::vector<double> out(1);
    for (double x : {-0.7, -0.1, 0.4, 0.9}) {
      net.eval(x, 0.5, *ws, out);
      CHECK(out[0] == doctest::Approx(std::tanh(x)).epsilon(1e-15));
    }
  }
  SUBCASE("degree below 1 is rejected") {
    CHECK_THROWS_AS(CkanModel({2, 4, 1}, 0, kDomain), ConfigError);
  }
}

TEST_CASE("ckan forward matches the direct nested-sum reference") {
  CkanModel net({2, 5, 4, 1}, 5, kDomain);
  Rng rng(88);
  net.init_params(rng);
  auto ws = net.make_workspace();
  std::vector<double> out(1);
  Rng pts(4);
  for (int k = 0; k < 25; ++k) {
    const double r = pts.uniform(0.0, 0.5), z = pts.uniform(0.0, 12.984);
    net.eval(r, z, *ws, out);
    CHECK(out[0] == doctest::Approx(ckan_reference(net, r, z)).epsilon(1e-12));
  }
}

TEST_CASE("output transforms") {
  SUBCASE("adf imposes the wall value exactly") {
    const auto t = OutputTransform::adf(0.0, 0.5);
    Rng rng(6);
    for (int k = 0; k < 1000; ++k) {
      const double raw = rng.uniform(-50.0, 50.0);
      const double z = rng.uniform(0.0, 12.984);
      CHECK(apply_output_transform(t, raw, 0.5, z) == 0.0);
    }
    const auto tw = OutputTransform::adf(1.25, 0.5);
    CHECK(apply_output_transform(tw, 17.0, 0.5, 3.0) == 1.25);
  }
  SUBCASE("bounded maps onto (lo,hi) with the midpoint at zero") {
    const auto t = OutputTransform::bounded(0.0, 1.1);
    CHECK(apply_output_transform(t, 400.0, 0.1, 0.0) == doctest::Approx(1.1).epsilon(1e-12));
    CHECK(apply_output_transform(t, -400.0, 0.1, 0.0) == doctest::Approx(0.0).scale(1.0));
    const auto m = OutputTransform::bounded(1.0, 2.0);
    CHECK(apply_output_transform(m, 0.0, 0.1, 0.0) == doctest::Approx(1.5).epsilon(1e-14));
    Rng rng(9);
    for (int k = 0; k < 100000; ++k) {
      const double y = apply_output_transform(t, rng.uniform(-1e3, 1e3), 0.2, 1.0);
      CHECK(y >= 0.0);
      CHECK(y <= 1.1);
    }
    CHECK_THROWS_AS(OutputTransform::bounded(2.0, 1.0), ConfigError);
  }
}

TEST_CASE("default configurations stay near the parameter budget") {
  for (int out : {1, 2, 3, 6}) {
    MlpModel mlp({2, 64, 64, 64, 64, out}, true, kDomain);
    CHECK(mlp.n_params() >= 13000 * 0.9);
    CHECK(mlp.n_params() <= 13000 * 1.1);
    CkanModel ckan({2, 48, 48, out}, 4, kDomain);
    CHECK(ckan.n_params() >= 13000 * 0.9);
    CHECK(ckan.n_params() <= 13000 * 1.1);
  }
}

// the analytic jet forward/backward pass is the training hot path; pin it
// against the generic dual evaluation and the reverse tape
namespace {

template <class M>
void check_jets_and_gradient(M& net, int n_out, double r, double z, std::uint64_t seed) {
  auto ws = net.make_workspace();
  std::vector<Jet> jets(n_out);
  net.eval_jet(r, z, *ws, jets);

  auto param = [&](int i) { return net.params()[i]; };
  using D = Dual2<double>;
  std::vector<D> pass_r(n_out), pass_z(n_out);
  net.eval_generic(D::seed(r, 1.0), D(z), param, std::span<D>(pass_r));
  net.eval_generic(D(r), D::seed(z, 1.0), param, std::span<D>(pass_z));
  for (int o = 0; o < n_out; ++o) {
    CHECK(jets[o].v == doctest::Approx(pass_r[o].v).epsilon(1e-12));
    CHECK(jets[o].dr == doctest::Approx(pass_r[o].d).epsilon(1e-11).scale(1.0));
    CHECK(jets[o].dz == doctest::Approx(pass_z[o].d).epsilon(1e-11).scale(1.0));
    CHECK(jets[o].drr == doctest::Approx(pass_r[o].dd).epsilon(1e-11).scale(1.0));
    CHECK(jets[o].dzz == doctest::Approx(pass_z[o].dd).epsilon(1e-11).scale(1.0));
  }

  // random adjoint seeds: fast backward vs tape gradient of sum_k <seed, jet_k>
  Rng rng(seed);
  std::vector<Jet> adj(n_out);
  for (auto& a : adj) {
    a = Jet{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
            rng.uniform(-1, 1)};
  }
  ws->zero_grad();
  net.eval_jet(r, z, *ws, jets);
  net.backward_jet(*ws, adj);
  std::vector<double> fast_grad(net.n_params(), 0.0);
  net.fold_grad(*ws, fast_grad);

  std::vector<double> params(net.params().begin(), net.params().end());
  const auto tape_grad = ad::grad_params(
      [&](Tape& tape, std::span<const Var> p) {
        auto pv = [&](int i) { return p[i]; };
        using DV = Dual2<Var>;
        std::vector<DV> pr(n_out), pz(n_out);
        net.eval_generic(DV::seed(tape.leaf(r), tape.leaf(1.0)), DV(tape.leaf(z)), pv,
                         std::span<DV>(pr));
        net.eval_generic(DV(tape.leaf(r)), DV::seed(tape.leaf(z), tape.leaf(1.0)), pv,
                         std::span<DV>(pz));
        Var acc = tape.leaf(0.0);
        for (int o = 0; o < n_out; ++o) {
          acc = acc + adj[o].v * pr[o].v + adj[o].dr * pr[o].d + adj[o].drr * pr[o].dd +
                adj[o].dz * pz[o].d + adj[o].dzz * pz[o].dd;
        }
        return acc;
      },
      params);

  double max_abs = 1e-8;
  for (double g : tape_grad) max_abs = std::max(max_abs, std::abs(g));
  for (int i = 0; i < net.n_params(); ++i) {
    CHECK(fast_grad[i] == doctest::Approx(tape_grad[i]).epsilon(1e-9).scale(max_abs));
  }
}

}  // namespace

TEST_CASE("mlp analytic backward equals the tape gradient") {
  for (bool wn : {true, false}) {
    MlpModel net({2, 7, 6, 3}, wn, kDomain);
    Rng rng(wn ? 21 : 22);
    net.init_params(rng);
    for (double& p : net.params()) p += 0.07 * std::sin(31.0 * p + 1.0);
    net.refresh();
    check_jets_and_gradient(net, 3, 0.31, 7.7, 1234);
    check_jets_and_gradient(net, 3, 0.05, 0.3, 777);
  }
}

TEST_CASE("ckan analytic backward equals the tape gradient") {
  CkanModel net({2, 6, 5, 2}, 4, kDomain);
  Rng rng(23);
  net.init_params(rng);
  check_jets_and_gradient(net, 2, 0.27, 4.5, 555);
  check_jets_and_gradient(net, 2, 0.49, 12.5, 556);
}

TEST_CASE("transform jets and vjps are consistent with dual evaluation") {
  Rng rng(64);
  const double r0 = 0.37;
  for (const auto& t :
       {OutputTransform::identity(), OutputTransform::identity(10.3),
        OutputTransform::adf(0.8, 0.5), OutputTransform::adf(0.0, 0.5, 2.5),
        OutputTransform::bounded(1.0, 2.0)}) {
    // forward jet vs Dual2 along r
    const Jet raw{0.4, -0.7, 0.25, 1.3, -0.2};
    const Jet phys = apply_output_transform_jet(t, raw, r0);
    // compare against dual composition: output of transform for a raw signal
    // s(r) with s(r0)=raw.v, s'(r0)=raw.dr, s''(r0)=raw.drr
    using D = Dual2<double>;
    const D rs = D::seed(r0, 1.0);
    const D sraw{raw.v, raw.dr, raw.drr};
    const D out = apply_output_transform(t, sraw, rs);
    CHECK(phys.v == doctest::Approx(out.v).epsilon(1e-13));
    CHECK(phys.dr == doctest::Approx(out.d).epsilon(1e-13));
    CHECK(phys.drr == doctest::Approx(out.dd).epsilon(1e-12).scale(1.0));

    // vjp: finite-difference the map raw-slots -> <adj, phys-slots>
    const Jet adj{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                  rng.uniform(-1, 1), rng.uniform(-1, 1)};
    Jet got{};
    output_transform_vjp(t, raw, r0, adj, got);
    auto scalarize = [&](const Jet& rw) {
      const Jet ph = apply_output_transform_jet(t, rw, r0);
      return adj.v * ph.v + adj.dr * ph.dr + adj.dz * ph.dz + adj.drr * ph.drr +
             adj.dzz * ph.dzz;
    };
    const double h = 1e-6;
    double* slots[5];
    Jet probe = raw;
    slots[0] = &probe.v;
    slots[1] = &probe.dr;
    slots[2] = &probe.dz;
    slots[3] = &probe.drr;
    slots[4] = &probe.dzz;
    const double fd_ref[5] = {got.v, got.dr, got.dz, got.drr, got.dzz};
    for (int s = 0; s < 5; ++s) {
      probe = raw;
      *slots[s] += h;
      const double fp = scalarize(probe);
      probe = raw;
      *slots[s] -= h;
      const double fm = scalarize(probe);
      CHECK(fd_ref[s] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-5).scale(1.0));
    }
  }
}

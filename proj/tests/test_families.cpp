#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "kflow/families.hpp"
#include "kflow/linalg.hpp"
#include "kflow/optim.hpp"
#include "kflow/random.hpp"
#include "oracle_constants.hpp"

using namespace kflow;
using kflow::testing::max_grad_rel_err;
using kflow::testing::numeric_gradients;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void randomize(Tensor t, RandomStream& rs, double scale) {
  auto& v = t.mutable_values();
  for (auto& x : v) x = scale * rs.normal();
}

// numeric log|det dvec(W)/dvec(eps)| via central differences
double numeric_transform_logdet(const WeightDistribution& dist, const Tensor& eps0) {
  NoGradGuard ng;
  const double h = 1e-5;
  long d = eps0.size();
  std::vector<double> jac(d * d);
  for (long j = 0; j < d; ++j) {
    std::vector<double> vp = eps0.values(), vm = eps0.values();
    vp[j] += h;
    vm[j] -= h;
    Tensor wp = dist.transform(Tensor(eps0.shape(), vp)).w;
    Tensor wm = dist.transform(Tensor(eps0.shape(), vm)).w;
    for (long i = 0; i < d; ++i) jac[i * d + j] = (wp.values()[i] - wm.values()[i]) / (2 * h);
  }
  return logabsdet(to_eigen(Tensor(Shape{d, d}, jac)));
}

// diagonal-vs-diagonal Gaussian KL with zero target mean:
// 0.5 * sum(r^2 - ln r^2 - 1 + m^2 / s^2), r = sigma_q / s
Tensor diag_target_kl(const Tensor& sigma_q, const Tensor& mean_q, const Tensor& target_std) {
  Tensor r2 = square(sigma_q / target_std);
  return 0.5 * sum(r2 - log(r2) - 1.0 + square(mean_q / target_std));
}

}  // namespace

TEST_SUITE("families") {
  TEST_CASE("default k_linear reduces to the identity map") {
    RandomStream rs(101);
    KroneckerLinear d(Shape{3, 4});
    SampleResult s = d.sample(rs);
    CHECK(max_abs_diff(s.w.values(), s.epsilon.values()) < 1e-12);
    CHECK(std::fabs(s.logdet) < 1e-12);
    double q = 0.0;
    for (double v : s.epsilon.values()) q += v * v;
    double want_base = -0.5 * q - 6.0 * std::log(2.0 * std::numbers::pi);
    CHECK(s.base_logdensity == doctest::Approx(want_base).epsilon(1e-12));
  }

  TEST_CASE("diag and k_diag sampling follow their stated forms") {
    RandomStream rs(103);
    DiagGaussian dg(Shape{2, 3});
    randomize(dg.mean_param(), rs, 1.0);
    randomize(dg.rho_param(), rs, 0.5);
    Tensor eps = Tensor::randn({2, 3}, rs);
    Tensor w = dg.transform(eps).w;
    for (long i = 0; i < 6; ++i) {
      double want = dg.mean_param().values()[i] + softplus_d(dg.rho_param().values()[i]) * eps.values()[i];
      CHECK(w.values()[i] == doctest::Approx(want).epsilon(1e-14));
    }

    KroneckerDiag kd(Shape{2, 3});
    auto ps = kd.parameters();  // M, then per-axis raw scales
    randomize(ps[0], rs, 1.0);
    randomize(ps[1], rs, 0.5);
    randomize(ps[2], rs, 0.5);
    Tensor w2 = kd.transform(eps).w;
    for (long i = 0; i < 2; ++i)
      for (long j = 0; j < 3; ++j) {
        double scale = softplus_d(ps[1].values()[i]) * softplus_d(ps[2].values()[j]);
        double want = ps[0].values()[i * 3 + j] + scale * eps.values()[i * 3 + j];
        CHECK(w2.values()[i * 3 + j] == doctest::Approx(want).epsilon(1e-14));
      }
    // entry stds are u_i * v_j by construction
    Tensor outer = kd.scale_outer_graph();
    CHECK(outer.values()[4] ==
          doctest::Approx(softplus_d(ps[1].values()[1]) * softplus_d(ps[2].values()[1])).epsilon(1e-14));
  }

  TEST_CASE("k_linear transform matches a dense reference computation") {
    RandomStream rs(107);
    KroneckerLinear d(Shape{3, 4});
    auto named = d.named_parameters();
    for (auto& [name, t] : named) randomize(t, rs, 0.6);
    Tensor eps = Tensor::randn({3, 4}, rs);
    Tensor w = d.transform(eps).w;

    Mat a = to_eigen(d.factor_graph(0));
    Mat b = to_eigen(d.factor_graph(1));
    Mat es = to_eigen(eps).cwiseProduct(to_eigen(d.scale_graph()));
    Mat want = a * es * b;
    for (long i = 0; i < 3; ++i)
      for (long j = 0; j < 4; ++j)
        CHECK(w.values()[i * 4 + j] ==
              doctest::Approx(want(i, j) + d.mean_param().values()[i * 4 + j]).epsilon(1e-12));

    // factors are unit lower triangular
    for (long i = 0; i < 3; ++i)
      for (long j = 0; j < 3; ++j) {
        double aij = a(i, j);
        if (i == j) CHECK(aij == 1.0);
        if (j > i) CHECK(aij == 0.0);
      }
  }

  TEST_CASE("covariance logdet example: unit-triangular factors leave only the scales") {
    KroneckerLinear d(Shape{2, 2});
    auto named = d.named_parameters();
    RandomStream rs(109);
    randomize(named[1].second, rs, 0.8);  // factor_raw_0
    randomize(named[2].second, rs, 0.8);  // factor_raw_1
    std::vector<double> s = {1, 2, 3, 4};
    for (int i = 0; i < 4; ++i) named[3].second.mutable_values()[i] = inv_softplus_d(s[i]);
    CHECK(d.cov_logdet_graph().item() == doctest::Approx(2.0 * std::log(24.0)).epsilon(1e-10));
  }

  TEST_CASE("covariance stats match the worked examples and the dense oracle") {
    // identity factors, unit scales
    Tensor m0 = Tensor::full({2, 2}, 0.0);
    CovarianceStats st0 = covariance_stats(m0, Tensor::eye(2), Tensor::eye(2), Tensor::full({2, 2}, 1.0));
    CHECK(st0.trace == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(st0.logdet == doctest::Approx(0.0).epsilon(1e-14));

    Tensor a(Shape{2, 2}, {1.0, 0.0, 0.5, 1.0});
    Tensor b(Shape{2, 2}, {1.0, 0.0, 0.3, 1.0});
    CovarianceStats st = covariance_stats(m0, a, b, Tensor::full({2, 2}, 1.0));
    CHECK(st.trace == doctest::Approx(kflow::testing::covariance_trace_example).epsilon(1e-12));

    // random configurations against the dense construction
    RandomStream rs(113);
    for (int t = 0; t < 10; ++t) {
      long n = 2 + (long)rs.uniform_below(5), p = 2 + (long)rs.uniform_below(5);
      Tensor am = Tensor::randn({n, n}, rs);
      Tensor bm = Tensor::randn({p, p}, rs);
      std::vector<double> sv(n * p);
      for (auto& x : sv) x = 0.3 + rs.uniform(0.0, 2.0);
      Tensor sm(Shape{n, p}, std::move(sv));
      Tensor mm = Tensor::randn({n, p}, rs);
      CovarianceStats got = covariance_stats(mm, am, bm, sm);
      Mat sigma = to_eigen(dense_covariance_oracle(am, bm, sm));
      double tr = sigma.trace();
      double ld = logabsdet(sigma);
      CHECK(std::fabs(got.trace - tr) / std::max(1.0, std::fabs(tr)) < 1e-8);
      CHECK(std::fabs(got.logdet - ld) / std::max(1.0, std::fabs(ld)) < 1e-8);
      for (long i = 0; i < n; ++i)
        for (long j = 0; j < p; ++j)
          CHECK(got.mean[i + j * n] == mm.values()[i * p + j]);
    }

    CHECK_THROWS_WITH_AS(
        covariance_stats(m0, Tensor::full({2, 2}, 0.0), b, Tensor::full({2, 2}, 1.0)),
        doctest::Contains("singular"), kflow::error);
  }

  TEST_CASE("dense covariance oracle: identity case, PSD, and Monte-Carlo agreement") {
    CHECK(max_abs_diff(dense_covariance_oracle(Tensor::eye(2), Tensor::eye(2), Tensor::full({2, 2}, 1.0)).values(),
                       Tensor::eye(4).values()) < 1e-14);

    RandomStream rs(127);
    Tensor a(Shape{2, 2}, {1.0, 0.0, -0.7, 1.0});
    Tensor b(Shape{3, 3}, {1.0, 0.0, 0.0, 0.4, 1.0, 0.0, -0.2, 0.6, 1.0});
    std::vector<double> sv = {1.1, 0.5, 0.8, 0.6, 1.4, 0.9};
    Tensor s(Shape{2, 3}, sv);
    Tensor sigma_t = dense_covariance_oracle(a, b, s);
    CHECK(min_eigenvalue(to_eigen(sigma_t)) >= -1e-10);

    // 10^6 reparameterized samples, accumulated in column-major vec order
    KroneckerLinear d(Shape{2, 3});
    auto named = d.named_parameters();
    named[1].second.mutable_values()[2] = -0.7;                     // A strict lower
    named[2].second.mutable_values() = {0.0, 0.0, 0.0, 0.4, 0.0, 0.0, -0.2, 0.6, 0.0};
    for (int i = 0; i < 6; ++i) named[3].second.mutable_values()[i] = inv_softplus_d(sv[i]);
    randomize(named[0].second, rs, 1.0);  // nonzero mean, must not affect covariance

    const long chunks = 10, chunk = 100000;
    const long dtot = 6;
    std::vector<double> mean(dtot, 0.0), second(dtot * dtot, 0.0);
    {
      NoGradGuard ng;
      for (long c = 0; c < chunks; ++c) {
        Tensor eps = Tensor::randn({chunk, 2, 3}, rs);
        Tensor w = d.transform_batch(eps).w;
        const auto& v = w.values();
        for (long r = 0; r < chunk; ++r) {
          double vec[6];
          for (long i = 0; i < 2; ++i)
            for (long j = 0; j < 3; ++j) vec[i + j * 2] = v[(r * 2 + i) * 3 + j];
          for (long i = 0; i < 6; ++i) {
            mean[i] += vec[i];
            for (long j = 0; j < 6; ++j) second[i * 6 + j] += vec[i] * vec[j];
          }
        }
      }
    }
    const double nsamp = (double)chunks * chunk;
    for (auto& x : mean) x /= nsamp;
    for (long i = 0; i < 6; ++i)
      for (long j = 0; j < 6; ++j) {
        double cov = second[i * 6 + j] / nsamp - mean[i] * mean[j];
        double truth = sigma_t.values()[i * 6 + j];
        double se = std::sqrt((sigma_t.values()[i * 6 + i] * sigma_t.values()[j * 6 + j] + truth * truth) / nsamp);
        CHECK(std::fabs(cov - truth) <= 3.0 * se);
      }

    CHECK_THROWS_WITH_AS(
        dense_covariance_oracle(Tensor::eye(80), Tensor::eye(80), Tensor::full({80, 80}, 1.0)),
        doctest::Contains("4096"), kflow::error);
  }

  TEST_CASE("logdet examples: diag at unit scale, k_linear closed form, k_nonlinear vs numeric") {
    RandomStream rs(131);
    DiagGaussian dg(Shape{2, 3});
    CHECK(std::fabs(logdet_jacobian(dg, Tensor::randn({2, 3}, rs))) < 1e-12);

    KroneckerLinear kl(Shape{2, 3});
    auto named = kl.named_parameters();
    for (int i = 0; i < 6; ++i) named.back().second.mutable_values()[i] = inv_softplus_d(2.0);
    randomize(named[1].second, rs, 0.5);
    randomize(named[2].second, rs, 0.5);
    CHECK(logdet_jacobian(kl, Tensor::randn({2, 3}, rs)) ==
          doctest::Approx(6.0 * std::log(2.0)).epsilon(1e-10));

    KroneckerNonlinear::Options opt;
    opt.scaled_layers = true;
    opt.outer_affine = false;
    opt.init_scale = 4.0;
    KroneckerNonlinear knl(Shape{3, 4}, opt, rs);
    Tensor eps = Tensor::randn({3, 4}, rs);
    double got = logdet_jacobian(knl, eps);
    CHECK(std::fabs(got - numeric_transform_logdet(knl, eps)) < 1e-4);
  }

  TEST_CASE("volume-preserving k_nonlinear reports an exactly zero logdet") {
    RandomStream rs(137);
    KroneckerNonlinear::Options opt;
    opt.outer_affine = false;
    KroneckerNonlinear knl(Shape{3, 4}, opt, rs);
    CHECK(knl.volume_preserving());
    TransformResult t = knl.transform(Tensor::randn({3, 4}, rs));
    CHECK(!t.logdet.defined());
    CHECK(knl.sample(rs).logdet == 0.0);
    // the affine-absorbing default is not volume preserving
    KroneckerNonlinear full(Shape{3, 4}, KroneckerNonlinear::Options{}, rs);
    CHECK(!full.volume_preserving());
  }

  TEST_CASE("inversion roundtrips per family") {
    RandomStream rs(139);
    // triangular-solve path
    for (int t = 0; t < 20; ++t) {
      KroneckerLinear d(Shape{4, 5});
      for (auto& [name, p] : d.named_parameters()) randomize(p, rs, 0.7);
      Tensor eps = Tensor::randn({4, 5}, rs);
      Tensor w = d.transform(eps).w;
      CHECK(max_abs_diff(d.inverse_noise(w).values(), eps.values()) < 1e-10);
    }
    // coupling flows, affine absorbed
    for (int t = 0; t < 5; ++t) {
      KroneckerNonlinear d(Shape{3, 4}, KroneckerNonlinear::Options{}, rs);
      randomize(d.mean_param(), rs, 0.8);
      randomize(d.scale_raw_param(), rs, 0.5);
      Tensor eps = Tensor::randn({3, 4}, rs);
      Tensor w = d.transform(eps).w;
      CHECK(max_abs_diff(d.inverse_noise(w).values(), eps.values()) < 1e-6);
    }
    // elementwise families invert exactly
    DiagGaussian dg(Shape{2, 3});
    for (auto& [name, p] : dg.named_parameters()) randomize(p, rs, 0.9);
    Tensor eps = Tensor::randn({2, 3}, rs);
    CHECK(max_abs_diff(dg.inverse_noise(dg.transform(eps).w).values(), eps.values()) < 1e-12);
    KroneckerDiag kd(Shape{2, 3});
    for (auto& [name, p] : kd.named_parameters()) randomize(p, rs, 0.9);
    CHECK(max_abs_diff(kd.inverse_noise(kd.transform(eps).w).values(), eps.values()) < 1e-12);
  }

  TEST_CASE("kronecker flow application: identity, chaining, and shape errors") {
    RandomStream rs(149);
    FlowStack ga, gb;
    ga.layers.push_back(make_affine_layer(3, true));  // zero shift: identity
    gb.layers.push_back(make_affine_layer(4, true));
    Tensor e = Tensor::randn({3, 4}, rs);
    CHECK(max_abs_diff(apply_kronecker_flow(e, ga, gb).values(), e.values()) == 0.0);

    FlowStack ca = make_axis_flow(3, "coupling", 2, false, rs);
    FlowStack cb = make_axis_flow(4, "coupling", 2, false, rs);
    Tensor y = apply_kronecker_flow(e, ca, cb);
    Tensor manual = apply_axis_flow(cb, apply_axis_flow(ca, e, 0).y, 1).y;
    CHECK(max_abs_diff(y.values(), manual.values()) == 0.0);

    CHECK_THROWS_WITH_AS(apply_kronecker_flow(Tensor::randn({4, 3}, rs), ca, cb),
                         doctest::Contains("does not match"), kflow::error);
  }

  TEST_CASE("over-determination: rank-one scales hit a positive floor, diag does not") {
    const double floor = kflow::testing::kdiag_overdetermination_floor;
    // stds in row-major order over the 2x3 shape
    Tensor target_std(Shape{2, 3}, {1.0, 0.1, 0.1, 1.0, 1.0, 1.0});

    KroneckerDiag kd(Shape{2, 3});
    Adam opt_kd(kd.parameters(), 0.03);
    double kl_kd = 0.0;
    for (int it = 0; it < 4000; ++it) {
      opt_kd.zero_grad();
      Tensor kl = diag_target_kl(kd.scale_outer_graph(), kd.mean_graph(), target_std);
      backward(kl);
      opt_kd.step();
      kl_kd = kl.item();
    }
    CHECK(kl_kd >= floor - 1e-9);
    CHECK(kl_kd <= floor + 0.02);

    DiagGaussian dg(Shape{2, 3});
    Adam opt_dg(dg.parameters(), 0.03);
    double kl_dg = 1.0;
    for (int it = 0; it < 4000; ++it) {
      opt_dg.zero_grad();
      Tensor kl = diag_target_kl(dg.sigma_graph(), dg.mean_graph(), target_std);
      backward(kl);
      opt_dg.step();
      kl_dg = kl.item();
    }
    CHECK(kl_dg < 1e-6);
  }

  TEST_CASE("k_linear with identity factors matches diag statistics") {
    RandomStream rs(151);
    DiagGaussian dg(Shape{3, 2});
    randomize(dg.rho_param(), rs, 0.7);
    KroneckerLinear kl(Shape{3, 2});
    auto named = kl.named_parameters();
    named.back().second.mutable_values() = dg.rho_param().values();
    CHECK(kl.cov_trace_graph().item() == doctest::Approx(dg.cov_trace_graph().item()).epsilon(1e-12));
    CHECK(kl.cov_logdet_graph().item() ==
          doctest::Approx(dg.cov_logdet_graph().item()).epsilon(1e-12));
  }

  TEST_CASE("parameter gradients are reparameterized: finite differences pass") {
    RandomStream rs(157);
    Tensor eps = Tensor::randn({2, 3}, rs);

    auto check_dist = [&](WeightDistribution& d, const Tensor& e) {
      auto params = d.parameters();
      auto loss_fn = [&]() {
        TransformResult t = d.transform(e);
        Tensor loss = sum(square(t.w));
        if (t.logdet.defined()) loss = loss + sum(t.logdet);
        return loss;
      };
      Tensor loss = loss_fn();
      backward(loss);
      auto num = numeric_gradients([&]() { return loss_fn().item(); }, params);
      CHECK(max_grad_rel_err(params, num) < 1e-4);
    };

    DiagGaussian dg(Shape{2, 3});
    for (auto& [n, p] : dg.named_parameters()) randomize(p, rs, 0.5);
    check_dist(dg, eps);

    KroneckerDiag kd(Shape{2, 3});
    for (auto& [n, p] : kd.named_parameters()) randomize(p, rs, 0.5);
    check_dist(kd, eps);

    KroneckerLinear kl(Shape{2, 3});
    for (auto& [n, p] : kl.named_parameters()) randomize(p, rs, 0.5);
    check_dist(kl, eps);

    KroneckerNonlinear::Options opt;
    opt.scaled_layers = true;
    opt.init_scale = 2.0;
    KroneckerNonlinear knl(Shape{2, 3}, opt, rs);
    randomize(knl.mean_param(), rs, 0.5);
    randomize(knl.scale_raw_param(), rs, 0.3);
    check_dist(knl, eps);
  }

  TEST_CASE("batched transform equals per-sample transforms") {
    RandomStream rs(163);
    std::vector<std::unique_ptr<WeightDistribution>> dists;
    dists.push_back(std::make_unique<DiagGaussian>(Shape{2, 3}));
    dists.push_back(std::make_unique<KroneckerDiag>(Shape{2, 3}));
    dists.push_back(std::make_unique<KroneckerLinear>(Shape{2, 3}));
    KroneckerNonlinear::Options opt;
    opt.scaled_layers = true;
    dists.push_back(std::make_unique<KroneckerNonlinear>(Shape{2, 3}, opt, rs));
    for (auto& d : dists) {
      for (auto& [n, p] : d->named_parameters()) randomize(p, rs, 0.5);
      Tensor eps = Tensor::randn({4, 2, 3}, rs);
      TransformResult batch = d->transform_batch(eps);
      REQUIRE(batch.logdet.defined());
      REQUIRE(batch.logdet.shape() == Shape{4, 1});
      for (long b = 0; b < 4; ++b) {
        std::vector<double> one(6);
        for (int i = 0; i < 6; ++i) one[i] = eps.values()[b * 6 + i];
        TransformResult single = d->transform(Tensor(Shape{2, 3}, one));
        for (int i = 0; i < 6; ++i)
          CHECK(batch.w.values()[b * 6 + i] == doctest::Approx(single.w.values()[i]).epsilon(1e-13));
        CHECK(batch.logdet.values()[b] == doctest::Approx(single.logdet.values()[0]).epsilon(1e-13));
      }
    }
  }

  TEST_CASE("three-axis shapes: mode products, outer scales, flows") {
    RandomStream rs(167);
    // k_linear: transform matches explicit mode products
    KroneckerLinear kl(Shape{2, 3, 2});
    for (auto& [n, p] : kl.named_parameters()) randomize(p, rs, 0.6);
    Tensor eps = Tensor::randn({2, 3, 2}, rs);
    Tensor w = kl.transform(eps).w;
    {
      NoGradGuard ng;
      Mat f0 = to_eigen(kl.factor_graph(0)), f1 = to_eigen(kl.factor_graph(1)),
          f2 = to_eigen(kl.factor_graph(2));
      std::vector<double> x(12);
      for (int i = 0; i < 12; ++i) x[i] = eps.values()[i] * softplus_d(kl.named_parameters().back().second.values()[i]);
      auto idx = [](int i, int j, int k) { return (i * 3 + j) * 2 + k; };
      std::vector<double> y(12, 0.0), z(12, 0.0), u(12, 0.0);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 2; ++k)
            for (int t = 0; t < 2; ++t) y[idx(i, j, k)] += f0(i, t) * x[idx(t, j, k)];
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 2; ++k)
            for (int t = 0; t < 3; ++t) z[idx(i, j, k)] += f1(j, t) * y[idx(i, t, k)];
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 2; ++k)
            for (int t = 0; t < 2; ++t) u[idx(i, j, k)] += f2(k, t) * z[idx(i, j, t)];
      for (int i = 0; i < 12; ++i)
        CHECK(w.values()[i] ==
              doctest::Approx(u[i] + kl.mean_graph().values()[i]).epsilon(1e-12));
    }
    CHECK(max_abs_diff(kl.inverse_noise(w).values(), eps.values()) < 1e-10);

    // k_diag: outer product of three axis scales
    KroneckerDiag kd(Shape{2, 3, 2});
    auto ps = kd.parameters();
    randomize(ps[1], rs, 0.4);
    randomize(ps[2], rs, 0.4);
    randomize(ps[3], rs, 0.4);
    Tensor outer = kd.scale_outer_graph();
    CHECK(outer.shape() == Shape{2, 3, 2});
    double want = softplus_d(ps[1].values()[1]) * softplus_d(ps[2].values()[2]) *
                  softplus_d(ps[3].values()[0]);
    CHECK(outer.values()[(1 * 3 + 2) * 2 + 0] == doctest::Approx(want).epsilon(1e-14));

    // k_nonlinear: scaled three-axis flow matches its numeric jacobian and inverts
    KroneckerNonlinear::Options opt;
    opt.scaled_layers = true;
    opt.outer_affine = true;
    opt.init_scale = 3.0;
    KroneckerNonlinear knl(Shape{2, 3, 2}, opt, rs);
    randomize(knl.mean_param(), rs, 0.5);
    randomize(knl.scale_raw_param(), rs, 0.3);
    Tensor e3 = Tensor::randn({2, 3, 2}, rs);
    double got = logdet_jacobian(knl, e3);
    CHECK(std::fabs(got - numeric_transform_logdet(knl, e3)) < 1e-4);
    Tensor w3 = knl.transform(e3).w;
    CHECK(max_abs_diff(knl.inverse_noise(w3).values(), e3.values()) < 1e-6);

    // reversed axis order applies the last axis first
    KroneckerNonlinear::Options ropt;
    ropt.outer_affine = false;
    ropt.reverse_axis_order = true;
    KroneckerNonlinear rknl(Shape{2, 3}, ropt, rs);
    Tensor e2 = Tensor::randn({2, 3}, rs);
    Tensor wr = rknl.transform(e2).w;
    Tensor manual =
        apply_axis_flow(rknl.axis_flows()[0], apply_axis_flow(rknl.axis_flows()[1], e2, 1).y, 0).y;
    CHECK(max_abs_diff(wr.values(), manual.values()) == 0.0);
  }

  TEST_CASE("checkpoint serialization round-trips every family exactly") {
    RandomStream rs(173);
    std::vector<std::unique_ptr<WeightDistribution>> dists;
    dists.push_back(std::make_unique<DiagGaussian>(Shape{2, 3}));
    dists.push_back(std::make_unique<KroneckerDiag>(Shape{3, 2}));
    dists.push_back(std::make_unique<KroneckerLinear>(Shape{2, 2, 3}));
    KroneckerNonlinear::Options opt;
    opt.scaled_layers = true;
    opt.reverse_axis_order = true;
    dists.push_back(std::make_unique<KroneckerNonlinear>(Shape{3, 4}, opt, rs));

    for (auto& d : dists) {
      for (auto& [n, p] : d->named_parameters()) randomize(p, rs, 0.8);
      std::ostringstream os;
      serialize_distribution(os, *d);
      std::istringstream is(os.str());
      DistPtr back = deserialize_distribution(is);
      CHECK(back->family() == d->family());
      CHECK(back->dims() == d->dims());
      Tensor eps = Tensor::randn(d->dims(), rs);
      TransformResult t0 = d->transform(eps);
      TransformResult t1 = back->transform(eps);
      CHECK(max_abs_diff(t0.w.values(), t1.w.values()) == 0.0);
      CHECK(t0.logdet.values()[0] == t1.logdet.values()[0]);
      // serializing the reconstruction reproduces the text exactly
      std::ostringstream os2;
      serialize_distribution(os2, *back);
      CHECK(os.str() == os2.str());
    }

    std::istringstream bad("kflow-dist v1\nfamily spline\ndims 2 2 2\n");
    CHECK_THROWS_WITH_AS(deserialize_distribution(bad), doctest::Contains("unknown family"),
                         kflow::error);
  }

  TEST_CASE("clone yields an independent copy") {
    RandomStream rs(179);
    KroneckerNonlinear d(Shape{3, 4}, KroneckerNonlinear::Options{}, rs);
    randomize(d.mean_param(), rs, 0.5);
    auto c = d.clone();
    Tensor eps = Tensor::randn({3, 4}, rs);
    CHECK(max_abs_diff(c->transform(eps).w.values(), d.transform(eps).w.values()) == 0.0);
    c->parameters()[0].mutable_values()[0] += 0.5;
    CHECK(max_abs_diff(c->transform(eps).w.values(), d.transform(eps).w.values()) > 0.0);
  }
}

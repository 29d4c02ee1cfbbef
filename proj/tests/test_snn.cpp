#include "kflow/snn.hpp"

#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "kflow/pacbayes.hpp"

using namespace kflow;
using kflow::testing::max_grad_rel_err;
using kflow::testing::numeric_gradients;

namespace {

StochasticMLP small_mlp(const std::vector<long>& widths, const std::string& family,
                        double init_sigma, std::uint64_t seed) {
  MlpOptions opt;
  opt.family = family;
  opt.init_sigma = init_sigma;
  RandomStream rs(seed);
  return StochasticMLP(widths, opt, rs);
}

std::vector<long> cycle_labels(long n, long classes) {
  std::vector<long> out(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) out[static_cast<size_t>(i)] = i % classes;
  return out;
}

double row_entropy(const double* p, long c) {
  double h = 0.0;
  for (long j = 0; j < c; ++j) {
    if (p[j] > 1e-300) h -= p[j] * std::log(p[j]);
  }
  return h;
}

}  // namespace

TEST_CASE("elbo with beta zero is the likelihood of the sampled network") {
  auto model = small_mlp({2, 8, 3}, "diag", 0.4, 11);
  RandomStream xs(3);
  Tensor x = Tensor::randn({6, 2}, xs);
  auto y = cycle_labels(6, 3);
  IsotropicPrior prior;

  RandomStream r1(7), r2(7);
  auto parts = elbo_objective(model, x, y, 0.0, prior, 600, r1);
  ForwardSample fs = model.forward_sampled(x, r2);
  double nll = mean(logsumexp_rows(fs.logits) - gather_labels(fs.logits, y)).item();
  CHECK(parts.loss.item() == nll);
  CHECK(parts.risk == nll);
  CHECK(parts.beta == 0.0);
}

TEST_CASE("vanishing noise scale recovers the deterministic network") {
  auto model = small_mlp({2, 6, 3}, "diag", 1e-12, 13);
  RandomStream xs(5);
  Tensor x = Tensor::randn({5, 2}, xs);
  auto y = cycle_labels(5, 3);
  IsotropicPrior prior;
  prior.center = StochasticMLP::flatten_centers(model.snapshot_centers());

  RandomStream r(9);
  auto parts = elbo_objective(model, x, y, 0.0, prior, 100, r);
  Tensor lm = model.forward_mean(x);
  double nll_mean = mean(logsumexp_rows(lm) - gather_labels(lm, y)).item();
  CHECK(std::abs(parts.loss.item() - nll_mean) < 1e-9);
}

TEST_CASE("elbo gradients match finite differences") {
  auto model = small_mlp({3, 8, 4}, "diag", 0.3, 17);
  RandomStream xs(21);
  Tensor x = Tensor::randn({5, 3}, xs);
  auto y = cycle_labels(5, 4);
  IsotropicPrior prior;
  prior.lambda = 0.7;
  RandomStream cs(23);
  for (long i = 0; i < model.weight_dim(); ++i) prior.center.push_back(0.3 * cs.normal());

  auto leaves = model.parameters();
  for (auto& p : leaves) p.zero_grad();
  RandomStream r(19);
  auto parts = elbo_objective(model, x, y, 0.8, prior, 100, r);
  backward(parts.loss);

  auto f = [&] {
    RandomStream rf(19);
    return elbo_objective(model, x, y, 0.8, prior, 100, rf).loss.item();
  };
  auto numeric = numeric_gradients(f, leaves);
  CHECK(max_grad_rel_err(leaves, numeric) < 1e-4);
}

TEST_CASE("catoni gradients match finite differences with trained beta and lambda") {
  auto model = small_mlp({3, 8, 4}, "diag", 0.3, 29);
  RandomStream xs(31);
  Tensor x = Tensor::randn({5, 3}, xs);
  auto y = cycle_labels(5, 4);
  IsotropicPrior prior;
  RandomStream cs(37);
  for (long i = 0; i < model.weight_dim(); ++i) prior.center.push_back(0.3 * cs.normal());

  Tensor beta_raw = Tensor::scalar(0.8);
  beta_raw.set_requires_grad();
  Tensor j_raw = Tensor::scalar(1.4);
  j_raw.set_requires_grad();

  auto eval = [&] {
    RandomStream rf(41);
    Tensor j = softplus(j_raw) + 1.0;
    Tensor lam = 0.1 * exp(j / (-100.0));
    Tensor extra = 2.0 * log(j);
    return catoni_objective(model, x, y, beta_raw, prior, 200, 0.05, rf, 1, &lam, &extra);
  };

  auto leaves = model.parameters();
  leaves.push_back(beta_raw);
  leaves.push_back(j_raw);
  for (auto& p : leaves) p.zero_grad();
  backward(eval().loss);

  auto f = [&] { return eval().loss.item(); };
  auto numeric = numeric_gradients(f, leaves);
  CHECK(max_grad_rel_err(leaves, numeric) < 1e-4);
}

TEST_CASE("nonlinear family objective gradients match finite differences") {
  MlpOptions opt;
  opt.family = "k_nonlinear";
  opt.init_sigma = 0.4;
  opt.flow.layers_per_axis = 1;
  opt.flow.scaled_layers = true;
  RandomStream ms(43);
  StochasticMLP model({3, 4, 2}, opt, ms);

  RandomStream xs(47);
  Tensor x = Tensor::randn({4, 3}, xs);
  auto y = cycle_labels(4, 2);
  IsotropicPrior prior;
  prior.lambda = 1.3;

  auto leaves = model.parameters();
  for (auto& p : leaves) p.zero_grad();
  RandomStream r(53);
  auto parts = elbo_objective(model, x, y, 0.6, prior, 80, r);
  backward(parts.loss);

  auto f = [&] {
    RandomStream rf(53);
    return elbo_objective(model, x, y, 0.6, prior, 80, rf).loss.item();
  };
  auto numeric = numeric_gradients(f, leaves);
  CHECK(max_grad_rel_err(leaves, numeric) < 1e-4);
}

TEST_CASE("catoni objective equals the closed-form bound on recorded inputs") {
  auto model = small_mlp({2, 5, 3}, "diag", 1.0, 59);
  // confident correct outputs keep the recorded surrogate risk inside [0, 1],
  // and a posterior matching the prior keeps the bound away from its clamp
  for (auto& [name, p] : model.named_parameters()) {
    if (name == "layer1.bias.M") p.mutable_values() = {5.0, 0.0, 0.0};
  }
  RandomStream xs(61);
  Tensor x = Tensor::randn({8, 2}, xs);
  std::vector<long> y(8, 0);
  IsotropicPrior prior;
  prior.center = StochasticMLP::flatten_centers(model.snapshot_centers());

  Tensor beta_raw = Tensor::scalar(inv_softplus_d(2.0 - 0.5));
  RandomStream r(67);
  auto parts = catoni_objective(model, x, y, beta_raw, prior, 200, 0.05, r);
  BoundReport b = catoni_bound({parts.risk, parts.kl, 200, 0.05, parts.beta});
  CHECK(!b.clamped);
  CHECK(std::abs(b.value - parts.loss.item()) < 1e-12);

  Tensor extra = Tensor::scalar(3.7);
  RandomStream r2(67);
  auto parts2 =
      catoni_objective(model, x, y, beta_raw, prior, 200, 0.05, r2, 1, nullptr, &extra);
  BoundReport b2 = catoni_bound({parts2.risk, parts2.kl + 3.7, 200, 0.05, parts2.beta});
  CHECK(std::abs(b2.value - parts2.loss.item()) < 1e-12);
}

TEST_CASE("posterior predictive rows form a simplex") {
  auto model = small_mlp({2, 6, 3}, "diag", 1.0, 71);
  RandomStream xs(73);
  Tensor x = Tensor::randn({9, 2}, xs);
  RandomStream r(79);
  Tensor probs = predict_posterior(model, x, 5, r);
  for (long i = 0; i < 9; ++i) {
    double s = 0.0;
    for (long j = 0; j < 3; ++j) {
      double p = probs.at({i, j});
      CHECK(p >= 0.0);
      s += p;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("single draw from a collapsed posterior is the mean network") {
  auto model = small_mlp({2, 6, 3}, "diag", 1e-12, 83);
  RandomStream xs(89);
  Tensor x = Tensor::randn({7, 2}, xs);
  RandomStream r(97);
  Tensor probs = predict_posterior(model, x, 1, r);
  Tensor lm = model.forward_mean(x);
  Tensor ref = exp(lm - logsumexp_rows(lm));
  double worst = 0.0;
  for (size_t i = 0; i < probs.values().size(); ++i) {
    worst = std::max(worst, std::abs(probs.values()[i] - ref.values()[i]));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("wide posterior raises predictive entropy") {
  auto narrow = small_mlp({2, 6, 3}, "diag", 1e-6, 101);
  StochasticMLP wide(narrow);
  for (auto& [name, p] : wide.named_parameters()) {
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, ".rho") == 0) {
      for (double& v : p.mutable_values()) v = inv_softplus_d(1.5);
    }
  }
  RandomStream xs(103);
  Tensor x = Tensor::randn({100, 2}, xs);
  RandomStream r1(107), r2(107);
  Tensor pn = predict_posterior(narrow, x, 30, r1);
  Tensor pw = predict_posterior(wide, x, 30, r2);
  double hn = 0.0, hw = 0.0;
  for (long i = 0; i < 100; ++i) {
    hn += row_entropy(pn.values().data() + 3 * i, 3);
    hw += row_entropy(pw.values().data() + 3 * i, 3);
  }
  CHECK(hw / 100.0 > hn / 100.0);
}

TEST_CASE("single-draw divergence integrand averages to the closed form") {
  auto model = small_mlp({2, 4, 3}, "diag", 0.6, 109);
  IsotropicPrior prior;
  prior.lambda = 0.8;
  RandomStream cs(113);
  for (long i = 0; i < model.weight_dim(); ++i) prior.center.push_back(0.4 * cs.normal());

  double exact = 0.0;
  auto centers = model.split_center(prior.center);
  for (size_t i = 0; i < model.block_count(); ++i) {
    IsotropicPrior pb;
    pb.center = centers[i].values();
    pb.lambda = prior.lambda;
    exact += kl_gaussian_analytic(model.block(i), pb);
  }

  Tensor x = Tensor({1, 2}, {0.3, -0.6});
  std::vector<long> y{1};
  const long draws = 100000;
  RandomStream r(127);
  double sum = 0.0, sumsq = 0.0;
  {
    NoGradGuard ng;
    for (long k = 0; k < draws; ++k) {
      double v = elbo_objective(model, x, y, 1.0, prior, 1000, r).kl;
      sum += v;
      sumsq += v * v;
    }
  }
  double mean_kl = sum / draws;
  double se = std::sqrt((sumsq / draws - mean_kl * mean_kl) / (draws - 1));
  CHECK(std::abs(mean_kl - exact) < 3.0 * se);
}

TEST_CASE("training fits synthetic blobs") {
  RandomStream ds(3);
  Dataset data = make_blobs(600, 3, ds);
  auto model = small_mlp({2, 32, 3}, "diag", 0.05, 5);

  TrainConfig cfg;
  cfg.lr = 0.02;
  cfg.epochs = 80;
  cfg.batch_size = 128;
  cfg.anneal_iters = 200;
  cfg.seed = 17;
  auto result = train(model, data, cfg);

  CHECK(result.trace.records.size() == 80);
  RandomStream er(131);
  CHECK(classification_error(model, data, 30, er) <= 0.05);
  CHECK(result.trace.records.back().objective < result.trace.records.front().objective);
}

TEST_CASE("zero epochs leave the model untouched") {
  auto model = small_mlp({2, 4, 3}, "diag", 0.2, 137);
  std::vector<std::vector<double>> before;
  for (auto& p : model.parameters()) before.push_back(p.values());

  RandomStream ds(139);
  Dataset data = make_blobs(60, 3, ds);
  TrainConfig cfg;
  auto result = train(model, data, cfg);
  CHECK(result.trace.records.empty());

  auto after = model.parameters();
  auto poly = result.polyak.parameters();
  double worst = 0.0;
  for (size_t i = 0; i < after.size(); ++i) {
    for (size_t j = 0; j < before[i].size(); ++j) {
      worst = std::max(worst, std::abs(after[i].values()[j] - before[i][j]));
      worst = std::max(worst, std::abs(poly[i].values()[j] - before[i][j]));
    }
  }
  CHECK(worst == 0.0);
}

TEST_CASE("zero polyak coefficient tracks the live parameters") {
  auto model = small_mlp({2, 4, 3}, "diag", 0.2, 149);
  RandomStream ds(151);
  Dataset data = make_blobs(90, 3, ds);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.polyak = 0.0;
  cfg.seed = 7;
  auto result = train(model, data, cfg);

  auto mp = model.parameters();
  auto pp = result.polyak.parameters();
  double worst = 0.0;
  for (size_t i = 0; i < mp.size(); ++i) {
    for (size_t j = 0; j < mp[i].values().size(); ++j) {
      worst = std::max(worst, std::abs(mp[i].values()[j] - pp[i].values()[j]));
    }
  }
  CHECK(worst == 0.0);
}

TEST_CASE("a fixed seed reproduces the trace") {
  RandomStream ds(157);
  Dataset data = make_blobs(120, 3, ds);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.seed = 23;

  auto m1 = small_mlp({2, 6, 3}, "diag", 0.1, 163);
  auto m2 = small_mlp({2, 6, 3}, "diag", 0.1, 163);
  auto r1 = train(m1, data, cfg);
  auto r2 = train(m2, data, cfg);

  REQUIRE(r1.trace.records.size() == r2.trace.records.size());
  for (size_t i = 0; i < r1.trace.records.size(); ++i) {
    CHECK(r1.trace.records[i].objective == r2.trace.records[i].objective);
    CHECK(r1.trace.records[i].risk == r2.trace.records[i].risk);
    CHECK(r1.trace.records[i].kl == r2.trace.records[i].kl);
    CHECK(r1.trace.records[i].beta == r2.trace.records[i].beta);
  }
}

TEST_CASE("beta follows the linear warmup schedule") {
  RandomStream ds(167);
  Dataset data = make_blobs(40, 2, ds);
  auto model = small_mlp({2, 4, 2}, "diag", 0.1, 173);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 10;
  cfg.anneal_iters = 10;
  cfg.beta_start = 0.0;
  cfg.beta_end = 1.0;
  cfg.seed = 11;
  auto result = train(model, data, cfg);

  REQUIRE(result.trace.records.size() == 4);
  CHECK(result.trace.records[0].beta == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(result.trace.records[1].beta == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(result.trace.records[2].beta == 1.0);
  CHECK(result.trace.records[3].beta == 1.0);
  CHECK(result.trace.final_lambda == cfg.prior.lambda);

  std::ostringstream os;
  result.trace.write_csv(os);
  CHECK(os.str().substr(0, 30) == "epoch,objective,risk,kl,beta\n0");
}

TEST_CASE("catoni training moves beta and keeps lambda on the grid range") {
  RandomStream ds(179);
  Dataset data = make_blobs(120, 3, ds);
  auto model = small_mlp({2, 8, 3}, "diag", 0.05, 181);
  TrainConfig cfg;
  cfg.objective = "catoni";
  cfg.epochs = 3;
  cfg.batch_size = 64;
  cfg.seed = 13;
  cfg.delta = 0.05;
  cfg.catoni_beta = 2.0;
  cfg.train_beta = true;
  cfg.train_lambda = true;
  cfg.prior.lambda = 0.05;
  auto result = train(model, data, cfg);

  CHECK(result.trace.final_beta > 0.5);
  CHECK(result.trace.final_beta != 2.0);
  CHECK(result.trace.final_lambda > 0.0);
  CHECK(result.trace.final_lambda < 0.1);
  CHECK(std::isfinite(result.trace.records.back().kl));
  CHECK(result.trace.records.back().kl >= 0.0);
}

TEST_CASE("checkpoint roundtrip preserves the network") {
  MlpOptions opt;
  opt.family = "k_nonlinear";
  opt.init_sigma = 0.3;
  opt.flow.layers_per_axis = 2;
  RandomStream ms(191);
  StochasticMLP model({3, 5, 2}, opt, ms);

  std::stringstream ss;
  serialize_mlp(ss, model);
  StochasticMLP back = deserialize_mlp(ss);

  auto np1 = model.named_parameters();
  auto np2 = back.named_parameters();
  REQUIRE(np1.size() == np2.size());
  double worst = 0.0;
  for (size_t i = 0; i < np1.size(); ++i) {
    CHECK(np1[i].first == np2[i].first);
    for (size_t j = 0; j < np1[i].second.values().size(); ++j) {
      worst = std::max(worst, std::abs(np1[i].second.values()[j] - np2[i].second.values()[j]));
    }
  }
  CHECK(worst == 0.0);

  RandomStream xs(193);
  Tensor x = Tensor::randn({6, 3}, xs);
  Tensor l1 = model.forward_mean(x);
  Tensor l2 = back.forward_mean(x);
  for (size_t i = 0; i < l1.values().size(); ++i) CHECK(l1.values()[i] == l2.values()[i]);
}

TEST_CASE("divergent training aborts with the offending step") {
  auto model = small_mlp({2, 4, 3}, "diag", 0.2, 197);
  for (auto& [name, p] : model.named_parameters()) {
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".M") == 0) {
      for (double& v : p.mutable_values()) v = 1e200;
    }
  }
  RandomStream ds(199);
  Dataset data = make_blobs(40, 3, ds);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 40;
  cfg.prior.center.assign(static_cast<size_t>(model.weight_dim()), 0.0);
  CHECK_THROWS_WITH_AS(train(model, data, cfg),
                       doctest::Contains("training aborted at epoch 0 step 0"), kflow::error);
}

TEST_CASE("objective validation rejects malformed calls") {
  auto model = small_mlp({2, 4, 3}, "diag", 0.2, 211);
  RandomStream xs(223);
  Tensor x = Tensor::randn({4, 2}, xs);
  auto y = cycle_labels(4, 3);
  IsotropicPrior prior;
  RandomStream r(227);
  CHECK_THROWS_WITH_AS(elbo_objective(model, x, y, -0.5, prior, 100, r),
                       doctest::Contains("beta must be nonnegative"), kflow::error);
  CHECK_THROWS_WITH_AS(elbo_objective(model, x, {0, 1}, 1.0, prior, 100, r),
                       doctest::Contains("one label per batch row"), kflow::error);
  Tensor braw = Tensor::scalar(1.0);
  CHECK_THROWS_WITH_AS(catoni_objective(model, x, y, braw, prior, 100, 1.5, r),
                       doctest::Contains("delta must lie in (0, 1)"), kflow::error);

  RandomStream ds(229);
  Dataset data = make_blobs(30, 3, ds);
  TrainConfig bad;
  bad.objective = "sgd";
  CHECK_THROWS_WITH_AS(train(model, data, bad),
                       doctest::Contains("objective must be elbo or catoni"), kflow::error);
  TrainConfig badp;
  badp.polyak = 1.0;
  CHECK_THROWS_WITH_AS(train(model, data, badp),
                       doctest::Contains("polyak coefficient must lie in [0, 1)"), kflow::error);
}

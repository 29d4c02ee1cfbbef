#include "kflow/snn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>

#include "kflow/optim.hpp"
#include "kflow/pacbayes.hpp"

namespace kflow {

namespace {

Tensor apply_activation(const Tensor& h, const std::string& tag) {
  if (tag == "tanh") return tanh(h);
  if (tag == "relu") return relu(h);
  if (tag == "identity") return h;
  fail("unknown activation '" + tag + "'");
}

MlpLayer clone_layer(const MlpLayer& l) {
  MlpLayer out;
  out.weight = l.weight->clone();
  out.bias = l.bias->clone();
  out.activation = l.activation;
  return out;
}

std::string next_token(std::istream& is, const char* what) {
  std::string tok;
  if (!(is >> tok)) fail(std::string("checkpoint: missing ") + what);
  return tok;
}

void expect_token(std::istream& is, const std::string& want) {
  std::string tok = next_token(is, want.c_str());
  require(tok == want, "checkpoint: expected '" + want + "', got '" + tok + "'");
}

long next_long(std::istream& is, const char* what) {
  long v = 0;
  if (!(is >> v)) fail(std::string("checkpoint: bad ") + what);
  return v;
}

}  // namespace

DistPtr make_weight_distribution(const std::string& family, Shape dims, double init_sigma,
                                 const KroneckerNonlinear::Options& flow_opt,
                                 RandomStream& rs) {
  if (family == "diag") return std::make_unique<DiagGaussian>(dims, init_sigma);
  if (family == "k_diag") return std::make_unique<KroneckerDiag>(dims, init_sigma);
  if (family == "k_linear") return std::make_unique<KroneckerLinear>(dims, init_sigma);
  if (family == "k_nonlinear") {
    KroneckerNonlinear::Options opt = flow_opt;
    opt.init_sigma = init_sigma;
    return std::make_unique<KroneckerNonlinear>(dims, opt, rs);
  }
  fail("unknown weight family '" + family + "'");
}

StochasticMLP::StochasticMLP(const std::vector<long>& widths, const MlpOptions& opt,
                             RandomStream& rs) {
  require(widths.size() >= 2, "mlp needs at least input and output widths");
  for (long w : widths) require(w >= 1, "mlp widths must be positive");
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    long in = widths[i], out = widths[i + 1];
    MlpLayer layer;
    layer.weight = make_weight_distribution(opt.family, {in, out}, opt.init_sigma, opt.flow, rs);
    layer.bias = std::make_unique<DiagGaussian>(Shape{1, out}, opt.init_sigma);
    layer.activation = (i + 2 == widths.size()) ? "identity" : opt.hidden_activation;

    // fan-in scaled random means; biases stay at zero
    double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& [name, p] : layer.weight->named_parameters()) {
      if (name != "M") continue;
      for (double& v : p.mutable_values()) v = scale * rs.normal();
    }
    layers_.push_back(std::move(layer));
  }
}

StochasticMLP::StochasticMLP(std::vector<MlpLayer> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), "mlp needs at least one layer");
  for (size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    require(l.weight && l.bias, "mlp layer missing a distribution");
    require(l.weight->dims().size() == 2, "mlp weight blocks must be matrices");
    require(l.bias->dims() == Shape{1, l.weight->dims()[1]},
            "bias shape must be (1, out) for its layer");
    if (i + 1 < layers_.size()) {
      require(layers_[i + 1].weight->dims()[0] == l.weight->dims()[1],
              "adjacent mlp layer shapes must compose");
    }
  }
}

StochasticMLP::StochasticMLP(const StochasticMLP& other) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(clone_layer(l));
}

StochasticMLP& StochasticMLP::operator=(const StochasticMLP& other) {
  if (this == &other) return *this;
  std::vector<MlpLayer> copy;
  copy.reserve(other.layers_.size());
  for (const auto& l : other.layers_) copy.push_back(clone_layer(l));
  layers_ = std::move(copy);
  return *this;
}

long StochasticMLP::input_dim() const { return layers_.front().weight->dims()[0]; }
long StochasticMLP::output_dim() const { return layers_.back().weight->dims()[1]; }

long StochasticMLP::weight_dim() const {
  long total = 0;
  for (size_t i = 0; i < block_count(); ++i) total += block(i).dim();
  return total;
}

WeightDistribution& StochasticMLP::block(size_t i) {
  require(i < block_count(), "block index out of range");
  auto& l = layers_[i / 2];
  return (i % 2 == 0) ? *l.weight : *l.bias;
}

const WeightDistribution& StochasticMLP::block(size_t i) const {
  require(i < block_count(), "block index out of range");
  const auto& l = layers_[i / 2];
  return (i % 2 == 0) ? *l.weight : *l.bias;
}

bool StochasticMLP::gaussian_analytic() const {
  for (size_t i = 0; i < block_count(); ++i) {
    if (!block(i).gaussian_analytic()) return false;
  }
  return true;
}

std::vector<Tensor> StochasticMLP::parameters() {
  std::vector<Tensor> out;
  for (size_t i = 0; i < block_count(); ++i) {
    for (auto& p : block(i).parameters()) out.push_back(p);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> StochasticMLP::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < block_count(); ++i) {
    std::string prefix =
        "layer" + std::to_string(i / 2) + (i % 2 == 0 ? ".weight." : ".bias.");
    for (auto& [name, p] : block(i).named_parameters()) out.emplace_back(prefix + name, p);
  }
  return out;
}

ForwardSample StochasticMLP::forward_sampled(const Tensor& x, RandomStream& rs) const {
  require(x.ndim() == 2 && x.dim(1) == input_dim(), "input must be (batch, features)");
  ForwardSample out;
  Tensor h = x;
  for (const auto& l : layers_) {
    Tensor ew = Tensor::randn(l.weight->dims(), rs);
    TransformResult tw = l.weight->transform(ew);
    out.draws.push_back({ew, tw.w, tw.logdet});
    Tensor eb = Tensor::randn(l.bias->dims(), rs);
    TransformResult tb = l.bias->transform(eb);
    out.draws.push_back({eb, tb.w, tb.logdet});
    h = apply_activation(matmul(h, tw.w) + tb.w, l.activation);
  }
  out.logits = h;
  return out;
}

Tensor StochasticMLP::forward_mean(const Tensor& x) const {
  require(x.ndim() == 2 && x.dim(1) == input_dim(), "input must be (batch, features)");
  Tensor h = x;
  for (const auto& l : layers_) {
    Tensor w = l.weight->transform(Tensor(l.weight->dims())).w;
    Tensor b = l.bias->transform(Tensor(l.bias->dims())).w;
    h = apply_activation(matmul(h, w) + b, l.activation);
  }
  return h;
}

std::vector<Tensor> StochasticMLP::snapshot_centers() const {
  NoGradGuard ng;
  std::vector<Tensor> out;
  for (size_t i = 0; i < block_count(); ++i) {
    const auto& b = block(i);
    out.push_back(b.transform(Tensor(b.dims())).w.detach());
  }
  return out;
}

std::vector<double> StochasticMLP::flatten_centers(const std::vector<Tensor>& centers) {
  std::vector<double> flat;
  for (const auto& c : centers) flat.insert(flat.end(), c.values().begin(), c.values().end());
  return flat;
}

std::vector<Tensor> StochasticMLP::split_center(const std::vector<double>& flat) const {
  std::vector<Tensor> out;
  if (flat.empty()) {
    for (size_t i = 0; i < block_count(); ++i) out.emplace_back(block(i).dims());
    return out;
  }
  require(static_cast<long>(flat.size()) == weight_dim(),
          "prior center size " + std::to_string(flat.size()) +
              " does not match model weight count " + std::to_string(weight_dim()));
  size_t off = 0;
  for (size_t i = 0; i < block_count(); ++i) {
    const auto& b = block(i);
    auto n = static_cast<size_t>(b.dim());
    out.emplace_back(b.dims(), std::vector<double>(flat.begin() + static_cast<long>(off),
                                                   flat.begin() + static_cast<long>(off + n)));
    off += n;
  }
  return out;
}

Tensor mc_kl_integrand(const std::vector<BlockDraw>& draws, const std::vector<Tensor>& centers,
                       const Tensor& lambda) {
  require(!draws.empty(), "integrand needs at least one block draw");
  require(draws.size() == centers.size(), "one prior center per block draw required");
  Tensor total;
  for (size_t i = 0; i < draws.size(); ++i) {
    const auto& d = draws[i];
    double half_dim = 0.5 * static_cast<double>(d.eps.size());
    double esq;
    {
      NoGradGuard ng;
      esq = 0.5 * sum(square(d.eps)).item();
    }
    Tensor term = sum(square(d.w - centers[i])) * 0.5 / lambda + log(lambda) * half_dim - esq;
    if (d.logdet.defined()) term = term - d.logdet;
    total = total.defined() ? total + term : term;
  }
  return total;
}

Tensor analytic_kl_graph(StochasticMLP& model, const std::vector<Tensor>& centers,
                         const Tensor& lambda) {
  require(model.gaussian_analytic(),
          "closed-form divergence needs gaussian-analytic blocks throughout");
  require(centers.size() == model.block_count(), "one prior center per block required");
  Tensor total;
  for (size_t i = 0; i < model.block_count(); ++i) {
    Tensor term = kl_gaussian_analytic_graph(model.block(i), centers[i], lambda);
    total = total.defined() ? total + term : term;
  }
  return total;
}

ObjectiveParts elbo_objective(StochasticMLP& model, const Tensor& x,
                              const std::vector<long>& labels, double beta,
                              const IsotropicPrior& prior, long m, RandomStream& rs,
                              long k_samples) {
  require(x.ndim() == 2 && x.dim(0) >= 1, "batch must be nonempty");
  require(static_cast<size_t>(x.dim(0)) == labels.size(), "one label per batch row");
  require(beta >= 0.0, "beta must be nonnegative");
  require(m >= 1, "dataset size m must be positive");
  require(k_samples >= 1, "need at least one draw per step");
  require(prior.lambda > 0.0, "prior lambda must be positive");

  auto centers = model.split_center(prior.center);
  Tensor lambda = Tensor::scalar(prior.lambda);
  Tensor loss;
  double risk = 0.0, kl = 0.0;
  for (long k = 0; k < k_samples; ++k) {
    ForwardSample fs = model.forward_sampled(x, rs);
    Tensor nll = mean(logsumexp_rows(fs.logits) - gather_labels(fs.logits, labels));
    Tensor integrand = mc_kl_integrand(fs.draws, centers, lambda);
    Tensor step = nll + integrand * (beta / static_cast<double>(m));
    loss = loss.defined() ? loss + step : step;
    risk += nll.item();
    kl += integrand.item();
  }
  if (k_samples > 1) loss = loss / static_cast<double>(k_samples);
  return {loss, risk / static_cast<double>(k_samples), kl / static_cast<double>(k_samples),
          beta};
}

ObjectiveParts catoni_objective(StochasticMLP& model, const Tensor& x,
                                const std::vector<long>& labels, const Tensor& beta_raw,
                                const IsotropicPrior& prior, long m, double delta,
                                RandomStream& rs, long k_samples,
                                const Tensor* lambda_graph, const Tensor* kl_extra_graph) {
  require(x.ndim() == 2 && x.dim(0) >= 1, "batch must be nonempty");
  require(static_cast<size_t>(x.dim(0)) == labels.size(), "one label per batch row");
  require(m >= 1, "dataset size m must be positive");
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
  require(k_samples >= 1, "need at least one draw per step");
  require(beta_raw.defined() && beta_raw.size() == 1, "beta parameter must be a scalar");
  if (!lambda_graph) require(prior.lambda > 0.0, "prior lambda must be positive");

  auto centers = model.split_center(prior.center);
  Tensor lambda = lambda_graph ? *lambda_graph : Tensor::scalar(prior.lambda);
  Tensor beta = softplus(beta_raw) + 0.5;

  Tensor risk, kl;
  if (model.gaussian_analytic()) {
    for (long k = 0; k < k_samples; ++k) {
      ForwardSample fs = model.forward_sampled(x, rs);
      Tensor r = surrogate_loss(fs.logits, labels);
      risk = risk.defined() ? risk + r : r;
    }
    kl = analytic_kl_graph(model, centers, lambda);
  } else {
    for (long k = 0; k < k_samples; ++k) {
      ForwardSample fs = model.forward_sampled(x, rs);
      Tensor r = surrogate_loss(fs.logits, labels);
      Tensor i = mc_kl_integrand(fs.draws, centers, lambda);
      risk = risk.defined() ? risk + r : r;
      kl = kl.defined() ? kl + i : i;
    }
    if (k_samples > 1) kl = kl / static_cast<double>(k_samples);
  }
  if (k_samples > 1) risk = risk / static_cast<double>(k_samples);

  Tensor budget = kl_extra_graph ? kl + *kl_extra_graph : kl;
  budget = budget + std::log(1.0 / delta);
  Tensor coef = 1.0 - 1.0 / (2.0 * beta);
  Tensor loss = (risk + beta / static_cast<double>(m) * budget) / coef;
  return {loss, risk.item(), kl.item(), beta.item()};
}

Tensor predict_posterior(const StochasticMLP& model, const Tensor& x, long k,
                         RandomStream& rs) {
  require(k >= 1, "need at least one posterior draw");
  NoGradGuard ng;
  long b = x.dim(0), c = model.output_dim();
  std::vector<double> acc(static_cast<size_t>(b * c), 0.0);
  for (long i = 0; i < k; ++i) {
    ForwardSample fs = model.forward_sampled(x, rs);
    Tensor probs = exp(fs.logits - logsumexp_rows(fs.logits));
    const auto& pv = probs.values();
    for (size_t j = 0; j < acc.size(); ++j) acc[j] += pv[j];
  }
  for (double& v : acc) v /= static_cast<double>(k);
  return Tensor({b, c}, std::move(acc));
}

double classification_error(const StochasticMLP& model, const Dataset& data, long k,
                            RandomStream& rs) {
  Tensor probs = predict_posterior(model, data.x, k, rs);
  long c = model.output_dim();
  long wrong = 0;
  for (long i = 0; i < data.size(); ++i) {
    const auto* row = probs.values().data() + i * c;
    long arg = static_cast<long>(std::max_element(row, row + c) - row);
    if (arg != data.labels[static_cast<size_t>(i)]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

void TrainTrace::write_csv(std::ostream& os) const {
  os << "epoch,objective,risk,kl,beta\n";
  for (const auto& r : records) {
    os << r.epoch << "," << format_double(r.objective) << "," << format_double(r.risk) << ","
       << format_double(r.kl) << "," << format_double(r.beta) << "\n";
  }
}

namespace {

std::pair<Tensor, std::vector<long>> gather_batch(const Dataset& data,
                                                  const std::vector<long>& order, long start,
                                                  long count) {
  long f = data.features();
  std::vector<double> vals(static_cast<size_t>(count * f));
  std::vector<long> labels(static_cast<size_t>(count));
  const auto& xv = data.x.values();
  for (long i = 0; i < count; ++i) {
    long src = order[static_cast<size_t>(start + i)];
    std::copy_n(xv.begin() + src * f, f, vals.begin() + i * f);
    labels[static_cast<size_t>(i)] = data.labels[static_cast<size_t>(src)];
  }
  return {Tensor({count, f}, std::move(vals)), std::move(labels)};
}

void check_config(const TrainConfig& cfg, const Dataset& data) {
  require(data.size() >= 1, "training data must be nonempty");
  require(cfg.epochs >= 0, "epochs must be nonnegative");
  require(cfg.batch_size >= 1, "batch size must be positive");
  require(cfg.lr > 0.0, "learning rate must be positive");
  require(cfg.polyak >= 0.0 && cfg.polyak < 1.0, "polyak coefficient must lie in [0, 1)");
  require(cfg.train_samples >= 1, "train samples per step must be positive");
  require(cfg.anneal_iters >= 0, "anneal iterations must be nonnegative");
  require(cfg.beta_start >= 0.0 && cfg.beta_end >= 0.0, "beta schedule must stay nonnegative");
  require(cfg.objective == "elbo" || cfg.objective == "catoni",
          "objective must be elbo or catoni, got '" + cfg.objective + "'");
  require(cfg.prior.lambda > 0.0, "prior lambda must be positive");
  require(cfg.pretrain_epochs >= 0, "pretrain epochs must be nonnegative");
  if (cfg.objective == "catoni") {
    require(cfg.delta > 0.0 && cfg.delta < 1.0, "delta must lie in (0, 1)");
    require(cfg.catoni_beta > 0.5, "catoni beta must exceed 1/2");
    if (cfg.train_lambda) {
      require(cfg.lambda_b > 0.0 && cfg.lambda_c > 0.0, "lambda grid needs positive b and c");
    }
  }
}

}  // namespace

TrainResult train(StochasticMLP& model, const Dataset& data, const TrainConfig& cfg) {
  check_config(cfg, data);
  RandomStream rs(cfg.seed);
  RandomStream shuffle_rs = rs.sub(1);
  RandomStream draw_rs = rs.sub(2);

  long n = data.size();
  std::vector<long> order(static_cast<size_t>(n));
  for (long i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  auto reshuffle = [&] {
    for (long i = n - 1; i > 0; --i) {
      long j = static_cast<long>(shuffle_rs.uniform_below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
  };

  // deterministic warmup of the means before the prior center is fixed
  if (cfg.pretrain_epochs > 0) {
    std::vector<Tensor> means;
    for (auto& [name, p] : model.named_parameters()) {
      if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".M") == 0) means.push_back(p);
    }
    if (!means.empty()) {
      Adam opt(means, cfg.lr);
      for (long ep = 0; ep < cfg.pretrain_epochs; ++ep) {
        reshuffle();
        for (long start = 0; start < n; start += cfg.batch_size) {
          long count = std::min(cfg.batch_size, n - start);
          auto [xb, yb] = gather_batch(data, order, start, count);
          Tensor logits = model.forward_mean(xb);
          Tensor nll = mean(logsumexp_rows(logits) - gather_labels(logits, yb));
          backward(nll);
          opt.step();
          opt.zero_grad();
        }
      }
    }
  }

  IsotropicPrior prior = cfg.prior;
  if (prior.center.empty()) {
    prior.center = StochasticMLP::flatten_centers(model.snapshot_centers());
  }
  auto centers_check = model.split_center(prior.center);  // validates the size
  (void)centers_check;

  bool catoni = cfg.objective == "catoni";
  Tensor beta_raw = Tensor::scalar(inv_softplus_d(cfg.catoni_beta - 0.5));
  if (catoni && cfg.train_beta) beta_raw.set_requires_grad();

  // prior scale moves on the grid lambda_j = c exp(-j/b); the union cost
  // 2 ln j plus the pi^2/6 delta share enter the budget directly
  Tensor j_raw;
  bool train_lambda = catoni && cfg.train_lambda;
  double delta_used = cfg.delta;
  if (train_lambda) {
    double lam0 = std::min(cfg.prior.lambda, cfg.lambda_c * std::exp(-1.0 / cfg.lambda_b));
    double j0 = cfg.lambda_b * std::log(cfg.lambda_c / lam0);
    j_raw = Tensor::scalar(inv_softplus_d(std::max(j0 - 1.0, 1e-3)));
    j_raw.set_requires_grad();
    delta_used = cfg.delta * 6.0 / (std::numbers::pi * std::numbers::pi);
  }

  std::vector<Tensor> params = model.parameters();
  for (auto& p : params) p.zero_grad();
  std::vector<Tensor> opt_params = params;
  if (catoni && cfg.train_beta) opt_params.push_back(beta_raw);
  if (train_lambda) opt_params.push_back(j_raw);
  Adam opt(opt_params, cfg.lr);

  StochasticMLP poly(model);
  std::vector<Tensor> poly_params = poly.parameters();
  require(poly_params.size() == params.size(), "polyak copy must mirror the parameter list");

  long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  long total_steps = cfg.epochs * steps_per_epoch;
  long global_step = 0;

  TrainTrace trace;
  trace.prior = prior;
  trace.final_beta = catoni ? cfg.catoni_beta : cfg.beta_end;
  trace.final_lambda = prior.lambda;

  for (long ep = 0; ep < cfg.epochs; ++ep) {
    reshuffle();
    double sum_obj = 0.0, sum_risk = 0.0, sum_kl = 0.0, last_beta = 0.0;
    for (long start = 0; start < n; start += cfg.batch_size) {
      long count = std::min(cfg.batch_size, n - start);
      auto [xb, yb] = gather_batch(data, order, start, count);

      if (cfg.cosine_lr && total_steps > 0) {
        double t = static_cast<double>(global_step) / static_cast<double>(total_steps);
        opt.set_lr(cfg.lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * t))));
      }

      try {
        ObjectiveParts parts;
        if (catoni) {
          Tensor lambda_graph, kl_extra;
          if (train_lambda) {
            Tensor j = softplus(j_raw) + 1.0;
            lambda_graph = cfg.lambda_c * exp(-j / cfg.lambda_b);
            kl_extra = 2.0 * log(j);
            parts = catoni_objective(model, xb, yb, beta_raw, prior, n, delta_used, draw_rs,
                                     cfg.train_samples, &lambda_graph, &kl_extra);
            trace.final_lambda = lambda_graph.item();
          } else {
            parts = catoni_objective(model, xb, yb, beta_raw, prior, n, delta_used, draw_rs,
                                     cfg.train_samples);
          }
        } else {
          double beta = cfg.beta_end;
          if (cfg.anneal_iters > 0 && global_step < cfg.anneal_iters) {
            beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) *
                                        static_cast<double>(global_step) /
                                        static_cast<double>(cfg.anneal_iters);
          }
          parts = elbo_objective(model, xb, yb, beta, prior, n, draw_rs, cfg.train_samples);
        }
        double lv = parts.loss.item();
        if (!std::isfinite(lv)) fail("loss is not finite");
        backward(parts.loss);
        opt.step();
        opt.zero_grad();
        sum_obj += lv;
        sum_risk += parts.risk;
        sum_kl += parts.kl;
        last_beta = parts.beta;
        trace.final_beta = parts.beta;
      } catch (const error& e) {
        fail("training aborted at epoch " + std::to_string(ep) + " step " +
             std::to_string(global_step) + ": " + e.what());
      }

      for (size_t i = 0; i < params.size(); ++i) {
        const auto& cur = params[i].values();
        auto& avg = poly_params[i].mutable_values();
        for (size_t j = 0; j < avg.size(); ++j) {
          avg[j] = cfg.polyak * avg[j] + (1.0 - cfg.polyak) * cur[j];
        }
      }
      ++global_step;
    }
    double spe = static_cast<double>(steps_per_epoch);
    trace.records.push_back({ep, sum_obj / spe, sum_risk / spe, sum_kl / spe, last_beta});
  }

  return {std::move(poly), std::move(trace)};
}

void serialize_mlp(std::ostream& os, StochasticMLP& model) {
  os << "kflow-mlp v1\n";
  os << "layers " << model.layers().size() << "\n";
  for (size_t i = 0; i < model.layers().size(); ++i) {
    os << "activation " << model.layers()[i].activation << "\n";
    serialize_distribution(os, model.block(2 * i));
    serialize_distribution(os, model.block(2 * i + 1));
  }
  os << "end\n";
}

StochasticMLP deserialize_mlp(std::istream& is) {
  expect_token(is, "kflow-mlp");
  expect_token(is, "v1");
  expect_token(is, "layers");
  long count = next_long(is, "layer count");
  require(count >= 1, "checkpoint: mlp needs at least one layer");
  std::vector<MlpLayer> layers;
  for (long i = 0; i < count; ++i) {
    expect_token(is, "activation");
    MlpLayer l;
    l.activation = next_token(is, "activation tag");
    l.weight = deserialize_distribution(is);
    l.bias = deserialize_distribution(is);
    layers.push_back(std::move(l));
  }
  expect_token(is, "end");
  return StochasticMLP(std::move(layers));
}

}  // namespace kflow

#pragma once
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "kflow/datasets.hpp"
#include "kflow/families.hpp"
#include "kflow/kl.hpp"
#include "kflow/random.hpp"
#include "kflow/tensor.hpp"

namespace kflow {

// weight family for a layer block, by name; rs is only consulted for
// k_nonlinear (flow permutations)
DistPtr make_weight_distribution(const std::string& family, Shape dims, double init_sigma,
                                 const KroneckerNonlinear::Options& flow_opt,
                                 RandomStream& rs);

struct MlpOptions {
  std::string family = "diag";  // diag, k_diag, k_linear, k_nonlinear
  std::string hidden_activation = "tanh";
  double init_sigma = 0.05;
  KroneckerNonlinear::Options flow;  // consulted for k_nonlinear weights
};

struct MlpLayer {
  DistPtr weight;          // (in, out)
  DistPtr bias;            // (1, out), always diag
  std::string activation;  // tanh, relu, identity
};

// one reparameterized draw through a single block
struct BlockDraw {
  Tensor eps;     // weight-shaped constant
  Tensor w;       // sample graph
  Tensor logdet;  // length-1 graph, undefined means zero
};

struct ForwardSample {
  Tensor logits;                 // (batch, out)
  std::vector<BlockDraw> draws;  // weight then bias per layer
};

class StochasticMLP {
 public:
  // widths = {in, hidden..., out}; means start at N(0, 1/fan_in), biases at 0
  StochasticMLP(const std::vector<long>& widths, const MlpOptions& opt, RandomStream& rs);
  explicit StochasticMLP(std::vector<MlpLayer> layers);
  StochasticMLP(const StochasticMLP& other);
  StochasticMLP& operator=(const StochasticMLP& other);
  StochasticMLP(StochasticMLP&&) = default;
  StochasticMLP& operator=(StochasticMLP&&) = default;

  long input_dim() const;
  long output_dim() const;
  long weight_dim() const;  // total scalar weights across blocks
  size_t block_count() const { return 2 * layers_.size(); }
  const std::vector<MlpLayer>& layers() const { return layers_; }
  WeightDistribution& block(size_t i);
  const WeightDistribution& block(size_t i) const;
  bool gaussian_analytic() const;  // every block has closed-form statistics

  std::vector<Tensor> parameters();
  // "layer0.weight.M", "layer1.bias.rho", ...
  std::vector<std::pair<std::string, Tensor>> named_parameters();

  // fresh weight draw per block, shared across the batch
  ForwardSample forward_sampled(const Tensor& x, RandomStream& rs) const;
  // forward at the zero-noise point (exact mean for the linear families)
  Tensor forward_mean(const Tensor& x) const;

  // per-block prior centers: current zero-noise weights, detached
  std::vector<Tensor> snapshot_centers() const;
  // flat row-major concatenation across blocks
  static std::vector<double> flatten_centers(const std::vector<Tensor>& centers);
  // split and validate a flat prior center (empty means zeros)
  std::vector<Tensor> split_center(const std::vector<double>& flat) const;

 private:
  std::vector<MlpLayer> layers_;
};

// sum over blocks of the single-draw divergence integrand
// log q(w) - log p(w) = (d/2) ln lambda + |w - c|^2/(2 lambda) - |eps|^2/2 - logdet
Tensor mc_kl_integrand(const std::vector<BlockDraw>& draws, const std::vector<Tensor>& centers,
                       const Tensor& lambda);
// sum over blocks of the closed-form divergence (linear-family models only)
Tensor analytic_kl_graph(StochasticMLP& model, const std::vector<Tensor>& centers,
                         const Tensor& lambda);

struct ObjectiveParts {
  Tensor loss;        // scalar graph
  double risk = 0.0;  // detached value of the risk term
  double kl = 0.0;    // detached value of the divergence term (without extras)
  double beta = 0.0;  // beta in effect
};

// mean negative log-likelihood plus (beta/m) times the single-draw divergence
// integrand, averaged over k_samples independent draws
ObjectiveParts elbo_objective(StochasticMLP& model, const Tensor& x,
                              const std::vector<long>& labels, double beta,
                              const IsotropicPrior& prior, long m, RandomStream& rs,
                              long k_samples = 1);

// scaled-risk bound objective; beta = 1/2 + softplus(beta_raw) trains jointly
// when beta_raw requires gradients; lambda_graph (with kl_extra_graph holding
// any union penalty) overrides prior.lambda when the prior scale trains too
ObjectiveParts catoni_objective(StochasticMLP& model, const Tensor& x,
                                const std::vector<long>& labels, const Tensor& beta_raw,
                                const IsotropicPrior& prior, long m, double delta,
                                RandomStream& rs, long k_samples = 1,
                                const Tensor* lambda_graph = nullptr,
                                const Tensor* kl_extra_graph = nullptr);

// (1/K) sum of softmax outputs over K independent weight draws; rows sum to 1
Tensor predict_posterior(const StochasticMLP& model, const Tensor& x, long k,
                         RandomStream& rs);
// argmax mismatch rate of the posterior predictive
double classification_error(const StochasticMLP& model, const Dataset& data, long k,
                            RandomStream& rs);

struct TrainConfig {
  double lr = 0.001;
  long epochs = 0;
  long batch_size = 128;
  double beta_start = 0.0;  // elbo annealing
  double beta_end = 1.0;
  long anneal_iters = 0;  // 0 means constant beta_end
  double polyak = 0.995;
  long train_samples = 1;
  std::string objective = "elbo";  // or catoni
  IsotropicPrior prior;            // empty center means snapshot at start
  std::uint64_t seed = 0;
  double delta = 0.025;       // catoni only
  double catoni_beta = 2.0;   // initial (or fixed) beta
  bool train_beta = true;     // catoni only
  bool train_lambda = false;  // catoni only: discretized prior-scale grid
  double lambda_b = 100.0;
  double lambda_c = 0.1;
  bool cosine_lr = false;
  long pretrain_epochs = 0;  // deterministic warmup of the means
};

struct TrainRecord {
  long epoch = 0;
  double objective = 0.0;
  double risk = 0.0;
  double kl = 0.0;
  double beta = 0.0;
};

struct TrainTrace {
  std::vector<TrainRecord> records;
  IsotropicPrior prior;      // resolved prior actually used
  double final_beta = 0.0;   // trained (or fixed) beta, catoni only
  double final_lambda = 0.0;
  void write_csv(std::ostream& os) const;
};

struct TrainResult {
  StochasticMLP polyak;
  TrainTrace trace;
};

// mini-batch adaptive-moment training; model updates in place and the
// returned copy holds the exponential moving average of every parameter
TrainResult train(StochasticMLP& model, const Dataset& data, const TrainConfig& cfg);

void serialize_mlp(std::ostream& os, StochasticMLP& model);
StochasticMLP deserialize_mlp(std::istream& is);

}  // namespace kflow

#pragma once
#include <string>
#include <vector>

#include "kflow/families.hpp"
#include "kflow/kl.hpp"
#include "kflow/linalg.hpp"
#include "kflow/random.hpp"
#include "kflow/tensor.hpp"

namespace kflow {

// dense zero-mean gaussian fitting target; covariance is G G^T + 1e-6 I for a
// standard normal draw G, or a fixed diagonal
struct GaussianTarget {
  std::vector<long> dims;  // factor shape, product is the flat dimension
  Mat cov;                 // d x d symmetric positive definite
  Mat white;               // inverse cholesky factor, white cov white^T = I
  double logdet = 0.0;     // ln det cov
  long discarded = 0;      // non-pd draws regenerated before this one
};

GaussianTarget random_gaussian_target(const std::vector<long>& dims, RandomStream& rs);
GaussianTarget diagonal_gaussian_target(const std::vector<long>& dims,
                                        const std::vector<double>& stds);

// full-covariance gaussian over the whole weight matrix, parameterized by a
// lower-triangular root with softplus diagonal; it can match any dense target
// exactly, which makes it the zero-gap reference family in simulations
class DenseGaussian final : public WeightDistribution {
 public:
  DenseGaussian(Shape dims, double init_sigma = 1.0);

  std::string family() const override { return "dense"; }
  TransformResult transform_batch(const Tensor& eps) const override;
  Tensor inverse_noise(const Tensor& w) const override;
  std::vector<Tensor> parameters() override;
  std::vector<std::pair<std::string, Tensor>> named_parameters() override;
  std::unique_ptr<WeightDistribution> clone() const override;

  bool gaussian_analytic() const override { return true; }
  Tensor mean_graph() const override { return m_; }
  Tensor cov_trace_graph() const override;
  Tensor cov_logdet_graph() const override;
  Tensor chol_graph() const;  // (d, d) lower triangular with positive diagonal

 private:
  Tensor m_;      // weight-shaped mean
  Tensor lraw_;   // free entries, strictly lower part is used as is
  Tensor draw_;   // (1, d), diagonal is softplus of this
  Tensor lmask_;  // constant strictly-lower mask
  Tensor eye_;    // constant identity
};

// family factory for simulations: diag, k_diag, k_linear, or dense
DistPtr make_simulate_family(const std::string& family, const Shape& dims);

// analytic kl(q || target) as a graph over q's parameters; q must be gaussian
Tensor dense_kl_graph(const WeightDistribution& q, const GaussianTarget& target);

// reparameterized monte-carlo estimate of the same kl, for consistency checks
KlEstimate dense_kl_monte_carlo(const WeightDistribution& q, const GaussianTarget& target,
                                long k, RandomStream& rs, long batch = 4096);

struct FitOptions {
  long steps = 1200;  // total, split evenly across rounds
  double lr = 0.05;
  long rounds = 3;        // fresh optimizer state per round; rescues stiff targets
  bool cosine_lr = true;  // decay within each round
};

// adaptive-moment minimization of the analytic kl; returns the final value
double fit_to_target(WeightDistribution& q, const GaussianTarget& target,
                     const FitOptions& opt);

struct SimulateRow {
  std::string shape;  // e.g. 8x16
  long d = 0;
  std::string family;
  long trial = 0;
  double kl = 0.0;
};

struct SimulateSummary {
  std::string shape;
  long d = 0;
  std::string family;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation across trials
};

struct SimulateResults {
  std::vector<SimulateRow> rows;        // one per (shape, family, trial)
  std::vector<SimulateSummary> summary;  // one per (shape, family)
};

// fits every family to shared per-(shape, trial) random targets; shapes are
// processed in order of increasing flat dimension
SimulateResults simulate_kl(const std::vector<Shape>& shapes,
                            const std::vector<std::string>& families, long trials,
                            const FitOptions& fit, RandomStream& rs);

}  // namespace kflow

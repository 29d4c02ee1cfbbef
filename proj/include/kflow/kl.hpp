#pragma once
#include <vector>

#include "kflow/families.hpp"
#include "kflow/flow_layers.hpp"
#include "kflow/random.hpp"
#include "kflow/tensor.hpp"

namespace kflow {

// N(theta0, lambda I) over the flattened weight tensor (row-major layout,
// matching Tensor value order). An empty center means the zero vector.
struct IsotropicPrior {
  std::vector<double> center;
  double lambda = 1.0;
};

struct KlEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  long k = 0;
  // per-sample decomposition: kl_i = base[i] - logdet[i] - prior[i]
  std::vector<double> term_base;    // log q0(eps_i)
  std::vector<double> term_logdet;  // log|det dW/deps| at eps_i
  std::vector<double> term_prior;   // log p(W_i)
  std::vector<double> quad;         // ||W_i - theta0||^2 / (2 lambda), for the certificate
};

struct ConcentrationCert {
  double l0 = 0.0;       // Lipschitz bound of the standardized map
  double l = 0.0;        // l0 / sqrt(2)
  long d = 0;
  double inv_zero_norm = 0.0;
  double c = 0.0;        // (6 l^2 + (l / sqrt(ln 2)) (sqrt(d) + inv_zero_norm))^2
  double epsilon = 0.0;
  long k = 0;
  double failure_prob = 1.0;  // exp(-K eps^2 / (2 (4 c^2 + c eps)))
};

struct CertifiedKl {
  double kl_upper = 0.0;     // holds with probability >= 1 - delta over the draw
  double quad_mean = 0.0;    // empirical mean of the standardized quadratic term
  double deterministic = 0.0;  // -d/2 + (d/2) ln(lambda) - logdet
  ConcentrationCert cert;
  KlEstimate estimate;
};

// 0.5 [ (trace + ||vec M - theta0||^2) / lambda - d + d ln(lambda) - logdet ]
double kl_gaussian_analytic(const WeightDistribution& q, const IsotropicPrior& prior);
// graph version for training; center is weight-shaped, lambda a length-1 graph
Tensor kl_gaussian_analytic_graph(const WeightDistribution& q, const Tensor& center,
                                  const Tensor& lambda);

// unbiased Monte-Carlo estimate of KL(q || prior) for any family
KlEstimate kl_monte_carlo(const WeightDistribution& q, const IsotropicPrior& prior, long k,
                          RandomStream& rs, long batch = 4096);
// mean per-sample KL integrand over a fixed noise batch, as a graph
Tensor kl_monte_carlo_graph(const WeightDistribution& q, const Tensor& center,
                            const Tensor& lambda, const Tensor& eps_batch);

// conservative product bound; throws for layer kinds without a bound
double lipschitz_upper_bound(const FlowStack& g);
// whole-map bound for the axis-flow family (affine scale included)
double lipschitz_upper_bound(const KroneckerNonlinear& q);

// exact evaluation of the concentration bound for the standardized map
ConcentrationCert concentration_certificate(double l0, long d, double inv_zero_norm, long k,
                                            double epsilon);
// smallest epsilon whose certificate fails with probability at most delta
ConcentrationCert epsilon_for_failure_prob(double l0, long d, double inv_zero_norm, long k,
                                           double delta);

// Monte-Carlo KL upper bound certified at level delta; requires every axis
// flow to be volume preserving so that only the quadratic term is random
CertifiedKl certified_kl_upper(const KroneckerNonlinear& q, const IsotropicPrior& prior, long k,
                               double delta, RandomStream& rs, long batch = 4096);

}  // namespace kflow

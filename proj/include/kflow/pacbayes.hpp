#pragma once
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kflow/kl.hpp"
#include "kflow/tensor.hpp"

namespace kflow {

struct BoundInputs {
  double q_hat = 0.0;  // empirical risk in [0,1]
  double kl = 0.0;     // full kl budget term (prior penalty already folded in)
  long m = 0;          // training set size
  double delta = 0.0;  // confidence parameter in (0,1)
  double beta = 0.0;   // catoni only, must exceed 1/2
};

struct RiskEstimation {
  long samples = 0;    // posterior draws behind q_hat
  double slack = 0.0;  // convergence inflation included in q_hat
};

struct BoundReport {
  std::string bound_type;  // mcallester, pinsker, or catoni
  double value = 0.0;
  bool clamped = false;  // the raw bound exceeded 1 and was cut back
  BoundInputs inputs;
  double prior_penalty = 0.0;  // union-bound share of inputs.kl
  std::optional<ConcentrationCert> certificate;
  RiskEstimation risk;
};

// q ln(q/p) + (1-q) ln((1-q)/(1-p)) with 0 ln 0 = 0; +infinity when p sits
// on the boundary away from q
double bernoulli_kl(double q, double p);

// largest p in [q_hat, 1) with bernoulli_kl(q_hat, p) <= budget; Newton from
// q_hat + sqrt(budget/2) safeguarded by bisection
double invert_bernoulli_kl(double q_hat, double budget);

BoundReport mcallester_bound(const BoundInputs& in);
BoundReport pinsker_bound(const BoundInputs& in);
BoundReport catoni_bound(const BoundInputs& in);

// closed-form minimizer of the catoni bound over beta
double optimal_catoni_beta(double q_hat, double kl, long m, double delta);

// union-bound accounting for a continuously tuned prior scale lambda < c:
// grid index j = max(1, b ln(c/lambda)), kl_penalty = 2 ln j, and the series
// correction is returned as delta_effective = delta * 6 / pi^2
struct PriorPenalty {
  double kl_penalty = 0.0;
  double delta_effective = 0.0;
  double j = 1.0;
};
PriorPenalty union_bound_prior_penalty(double lambda, double delta, double b = 100.0,
                                       double c = 0.1);

// cross-entropy scaled by 1/ln(classes); training surrogate only, never used
// in a certificate
double surrogate_loss(const std::vector<double>& logits, long label);
// batched graph version: mean over rows of (logsumexp - true logit) / ln(classes)
Tensor surrogate_loss(const Tensor& logits, const std::vector<long>& labels);

// flat key-value record, one "key value" pair per line
void write_report(std::ostream& os, const BoundReport& r);
std::string report_csv_header();
std::string report_csv_row(const BoundReport& r);

}  // namespace kflow

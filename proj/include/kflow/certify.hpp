#pragma once
#include <cstdint>
#include <ostream>
#include <string>

#include "kflow/pacbayes.hpp"
#include "kflow/snn.hpp"

namespace kflow {

struct CertifyOptions {
  double delta_total = 0.035;
  long risk_samples = 1000;          // posterior draws behind the zero-one risk
  long kl_samples = 20000;           // monte-carlo-certified mode only
  std::string kl_mode = "analytic";  // or monte-carlo-certified
  bool lambda_tuned = false;         // prior scale was optimized, pay the union bound
  double lambda_b = 100.0;
  double lambda_c = 0.1;
  std::uint64_t seed = 0;
};

struct CertifiedBound {
  BoundReport report;        // final mcallester report, penalties folded in
  double gibbs_risk = 0.0;   // raw monte-carlo zero-one risk before inflation
  double risk_budget = 0.0;  // bernoulli budget used to inflate it
  double kl_value = 0.0;     // divergence before the prior penalty
  double delta_risk = 0.0;   // half of the total budget
  double delta_cert = 0.0;   // quarter, spread over the flow blocks
  double delta_bound = 0.0;  // quarter, spent on the final inversion
};

// end-to-end certificate for a trained model on its training set: zero-one
// risk from posterior draws inflated by a bernoulli convergence term, the
// divergence taken in closed form or as a certified monte-carlo upper bound,
// a union-bound penalty when the prior scale was tuned, and a mcallester
// inversion of the combined budget
CertifiedBound certify(const StochasticMLP& model, const Dataset& train,
                       const IsotropicPrior& prior, const CertifyOptions& opt);

// write_report plus the certify-specific lines (raw risk, budgets, deltas)
void write_certified_report(std::ostream& os, const CertifiedBound& c);

}  // namespace kflow

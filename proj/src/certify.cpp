#include "kflow/certify.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "kflow/common.hpp"

namespace kflow {

namespace {

// mean argmax mismatch of one weight draw over the whole set
double zero_one_risk(const Tensor& logits, const std::vector<long>& labels) {
  const auto& sh = logits.shape();
  require(sh.size() == 2, "risk estimation expects (batch, classes) logits");
  const long n = sh[0], classes = sh[1];
  require(n == static_cast<long>(labels.size()), "logit rows and labels differ");
  const auto& v = logits.values();
  long wrong = 0;
  for (long i = 0; i < n; ++i) {
    long best = 0;
    for (long c = 1; c < classes; ++c) {
      if (v[static_cast<size_t>(i * classes + c)] > v[static_cast<size_t>(i * classes + best)]) {
        best = c;
      }
    }
    if (best != labels[static_cast<size_t>(i)]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(n);
}

}  // namespace

CertifiedBound certify(const StochasticMLP& model, const Dataset& train,
                       const IsotropicPrior& prior, const CertifyOptions& opt) {
  require(opt.delta_total > 0.0 && opt.delta_total < 1.0, "delta must lie in (0,1)");
  require(opt.risk_samples >= 1, "risk estimation needs at least one draw");
  require(opt.kl_mode == "analytic" || opt.kl_mode == "monte-carlo-certified",
          "kl mode must be analytic or monte-carlo-certified, got " + opt.kl_mode);
  const long m = static_cast<long>(train.labels.size());
  require(m > 1, "certification needs at least two training points");

  CertifiedBound out;
  out.delta_risk = 0.5 * opt.delta_total;
  out.delta_cert = 0.25 * opt.delta_total;
  out.delta_bound = 0.25 * opt.delta_total;

  RandomStream rs(opt.seed, 91);

  // zero-one gibbs risk over the full set, one forward pass per weight draw
  {
    NoGradGuard ng;
    RandomStream rr = rs.sub(1);
    double total = 0.0;
    for (long s = 0; s < opt.risk_samples; ++s) {
      ForwardSample fs = model.forward_sampled(train.x, rr);
      total += zero_one_risk(fs.logits, train.labels);
    }
    out.gibbs_risk = total / static_cast<double>(opt.risk_samples);
  }
  const double kk = static_cast<double>(opt.risk_samples);
  out.risk_budget = std::log(2.0 * std::sqrt(kk) / out.delta_risk) / kk;
  // a model that misses everything certifies vacuously, the inversion itself
  // is only defined below 1
  const double q_up = out.gibbs_risk >= 1.0
                          ? 1.0
                          : invert_bernoulli_kl(out.gibbs_risk, out.risk_budget);

  // divergence to the isotropic prior, block by block
  std::vector<Tensor> centers = model.split_center(prior.center);
  std::optional<ConcentrationCert> worst_cert;
  if (opt.kl_mode == "analytic") {
    require(model.gaussian_analytic(),
            "analytic kl mode needs closed-form blocks, use monte-carlo-certified");
    double kl = 0.0;
    for (size_t b = 0; b < model.block_count(); ++b) {
      IsotropicPrior pb{centers[b].values(), prior.lambda};
      kl += kl_gaussian_analytic(model.block(b), pb);
    }
    out.kl_value = kl;
  } else {
    size_t flow_blocks = 0;
    for (size_t b = 0; b < model.block_count(); ++b) {
      if (!model.block(b).gaussian_analytic()) ++flow_blocks;
    }
    double kl = 0.0;
    for (size_t b = 0; b < model.block_count(); ++b) {
      const WeightDistribution& blk = model.block(b);
      IsotropicPrior pb{centers[b].values(), prior.lambda};
      if (blk.gaussian_analytic()) {
        kl += kl_gaussian_analytic(blk, pb);
        continue;
      }
      const auto* flow = dynamic_cast<const KroneckerNonlinear*>(&blk);
      require(flow != nullptr, "monte-carlo certification covers gaussian blocks and axis flows");
      RandomStream cs = rs.sub(1000 + static_cast<std::uint64_t>(b));
      CertifiedKl ck = certified_kl_upper(*flow, pb, opt.kl_samples,
                                          out.delta_cert / static_cast<double>(flow_blocks), cs);
      kl += ck.kl_upper;
      if (!worst_cert || ck.cert.epsilon > worst_cert->epsilon) worst_cert = ck.cert;
    }
    out.kl_value = kl;
  }

  // union-bound accounting when the prior scale was tuned rather than fixed
  double kl_total = out.kl_value;
  double delta_eff = out.delta_bound;
  PriorPenalty pen;
  if (opt.lambda_tuned) {
    pen = union_bound_prior_penalty(prior.lambda, out.delta_bound, opt.lambda_b, opt.lambda_c);
    kl_total += pen.kl_penalty;
    delta_eff = pen.delta_effective;
  }

  BoundInputs in;
  in.q_hat = q_up;
  in.kl = kl_total;
  in.m = m;
  in.delta = delta_eff;
  if (q_up >= 1.0) {
    out.report.bound_type = "mcallester";
    out.report.value = 1.0;
    out.report.inputs = in;
  } else {
    out.report = mcallester_bound(in);
  }
  out.report.prior_penalty = pen.kl_penalty;
  out.report.certificate = worst_cert;
  out.report.risk.samples = opt.risk_samples;
  out.report.risk.slack = q_up - out.gibbs_risk;
  return out;
}

void write_certified_report(std::ostream& os, const CertifiedBound& c) {
  write_report(os, c.report);
  os << "gibbs_risk " << format_double(c.gibbs_risk) << '\n';
  os << "risk_budget " << format_double(c.risk_budget) << '\n';
  os << "kl_divergence " << format_double(c.kl_value) << '\n';
  os << "delta_risk " << format_double(c.delta_risk) << '\n';
  os << "delta_certificate " << format_double(c.delta_cert) << '\n';
  os << "delta_bound " << format_double(c.delta_bound) << '\n';
}

}  // namespace kflow

#include "kflow/pacbayes.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "kflow/common.hpp"

namespace kflow {

namespace {

void check_inputs(const BoundInputs& in) {
  require(in.q_hat >= 0.0 && in.q_hat <= 1.0, "empirical risk must lie in [0,1], got " +
                                                  std::to_string(in.q_hat));
  require(in.kl >= 0.0, "kl value must be nonnegative, got " + std::to_string(in.kl));
  require(in.m > 1, "m must exceed 1, got " + std::to_string(in.m));
  require(in.delta > 0.0 && in.delta < 1.0,
          "delta must lie in (0,1), got " + std::to_string(in.delta));
}

double mcallester_budget(const BoundInputs& in) {
  return (in.kl + std::log(static_cast<double>(in.m) / in.delta)) /
         (static_cast<double>(in.m) - 1.0);
}

}  // namespace

double bernoulli_kl(double q, double p) {
  require(q >= 0.0 && q <= 1.0, "bernoulli kl: q must lie in [0,1], got " + std::to_string(q));
  require(p >= 0.0 && p <= 1.0, "bernoulli kl: p must lie in [0,1], got " + std::to_string(p));
  const double t1 = q == 0.0 ? 0.0 : q * std::log(q / p);
  const double t2 = q == 1.0 ? 0.0 : (1.0 - q) * std::log((1.0 - q) / (1.0 - p));
  return t1 + t2;
}

double invert_bernoulli_kl(double q_hat, double budget) {
  require(q_hat >= 0.0 && q_hat < 1.0,
          "inversion needs q in [0,1), got " + std::to_string(q_hat));
  require(budget >= 0.0, "kl budget must be nonnegative, got " + std::to_string(budget));
  if (budget == 0.0) return q_hat;
  double lo = q_hat;
  double hi = 1.0;
  double p = q_hat + std::sqrt(budget / 2.0);
  if (p >= hi) p = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double diff = bernoulli_kl(q_hat, p) - budget;
    if (std::abs(diff) < 1e-12) return p;
    if (diff > 0.0) {
      hi = p;
    } else {
      lo = p;
    }
    if (hi - lo < 1e-12) break;
    const double grad = (p - q_hat) / (p * (1.0 - p));
    double next = grad > 0.0 ? p - diff / grad : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    p = next;
  }
  return 0.5 * (lo + hi);
}

BoundReport mcallester_bound(const BoundInputs& in) {
  check_inputs(in);
  BoundReport r;
  r.bound_type = "mcallester";
  r.inputs = in;
  r.value = invert_bernoulli_kl(in.q_hat, mcallester_budget(in));
  return r;
}

BoundReport pinsker_bound(const BoundInputs& in) {
  check_inputs(in);
  BoundReport r;
  r.bound_type = "pinsker";
  r.inputs = in;
  r.value = in.q_hat + std::sqrt(mcallester_budget(in) / 2.0);
  if (r.value > 1.0) {
    r.value = 1.0;
    r.clamped = true;
  }
  return r;
}

BoundReport catoni_bound(const BoundInputs& in) {
  check_inputs(in);
  require(in.beta > 0.5, "catoni beta must exceed 1/2, got " + std::to_string(in.beta));
  BoundReport r;
  r.bound_type = "catoni";
  r.inputs = in;
  r.value = 1.0 / (1.0 - 1.0 / (2.0 * in.beta)) *
            (in.q_hat + in.beta / static_cast<double>(in.m) *
                            (in.kl + std::log(1.0 / in.delta)));
  if (r.value > 1.0) {
    r.value = 1.0;
    r.clamped = true;
  }
  return r;
}

double optimal_catoni_beta(double q_hat, double kl, long m, double delta) {
  const double t = kl + std::log(1.0 / delta);
  require(t > 0.0, "optimal beta needs kl + ln(1/delta) > 0, got " + std::to_string(t));
  return 0.5 * (1.0 + std::sqrt(1.0 + 2.0 * q_hat * static_cast<double>(m) / t));
}

PriorPenalty union_bound_prior_penalty(double lambda, double delta, double b, double c) {
  require(lambda > 0.0, "lambda must be positive, got " + std::to_string(lambda));
  require(lambda < c, "lambda must lie below c, got " + std::to_string(lambda));
  require(b > 0.0, "b must be positive");
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
  PriorPenalty out;
  // grid index of the tuned scale; indices below 1 carry no union cost
  out.j = std::max(1.0, b * std::log(c / lambda));
  out.kl_penalty = 2.0 * std::log(out.j);
  out.delta_effective = delta * 6.0 / (std::numbers::pi * std::numbers::pi);
  return out;
}

double surrogate_loss(const std::vector<double>& logits, long label) {
  const long classes = static_cast<long>(logits.size());
  require(classes >= 2, "surrogate loss needs at least 2 classes, got " +
                            std::to_string(classes));
  require(label >= 0 && label < classes, "label out of range");
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double se = 0.0;
  for (double v : logits) se += std::exp(v - mx);
  const double lse = mx + std::log(se);
  return (lse - logits[static_cast<size_t>(label)]) / std::log(static_cast<double>(classes));
}

Tensor surrogate_loss(const Tensor& logits, const std::vector<long>& labels) {
  require(logits.shape().size() == 2, "surrogate loss expects (batch, classes) logits");
  const long classes = logits.shape()[1];
  require(classes >= 2, "surrogate loss needs at least 2 classes, got " +
                            std::to_string(classes));
  Tensor lse = logsumexp_rows(logits);
  Tensor truth = gather_labels(logits, labels);
  return mean(lse - truth) / std::log(static_cast<double>(classes));
}

namespace {

void kv(std::ostream& os, const std::string& key, const std::string& val) {
  os << key << ' ' << val << '\n';
}

}  // namespace

void write_report(std::ostream& os, const BoundReport& r) {
  kv(os, "bound_type", r.bound_type);
  kv(os, "value", format_double(r.value));
  kv(os, "clamped", r.clamped ? "1" : "0");
  kv(os, "q_hat", format_double(r.inputs.q_hat));
  kv(os, "kl", format_double(r.inputs.kl));
  kv(os, "m", std::to_string(r.inputs.m));
  kv(os, "delta", format_double(r.inputs.delta));
  kv(os, "beta", format_double(r.inputs.beta));
  kv(os, "prior_penalty", format_double(r.prior_penalty));
  kv(os, "risk_samples", std::to_string(r.risk.samples));
  kv(os, "risk_slack", format_double(r.risk.slack));
  if (r.certificate) {
    const ConcentrationCert& c = *r.certificate;
    kv(os, "cert_l0", format_double(c.l0));
    kv(os, "cert_d", std::to_string(c.d));
    kv(os, "cert_inv_zero_norm", format_double(c.inv_zero_norm));
    kv(os, "cert_c", format_double(c.c));
    kv(os, "cert_epsilon", format_double(c.epsilon));
    kv(os, "cert_k", std::to_string(c.k));
    kv(os, "cert_failure_prob", format_double(c.failure_prob));
  }
}

std::string report_csv_header() {
  return "bound_type,value,clamped,q_hat,kl,m,delta,beta,prior_penalty,risk_samples,"
         "risk_slack,cert_epsilon,cert_failure_prob,cert_k";
}

std::string report_csv_row(const BoundReport& r) {
  std::string row = r.bound_type;
  row += ',' + format_double(r.value);
  row += ',' + std::string(r.clamped ? "1" : "0");
  row += ',' + format_double(r.inputs.q_hat);
  row += ',' + format_double(r.inputs.kl);
  row += ',' + std::to_string(r.inputs.m);
  row += ',' + format_double(r.inputs.delta);
  row += ',' + format_double(r.inputs.beta);
  row += ',' + format_double(r.prior_penalty);
  row += ',' + std::to_string(r.risk.samples);
  row += ',' + format_double(r.risk.slack);
  if (r.certificate) {
    row += ',' + format_double(r.certificate->epsilon);
    row += ',' + format_double(r.certificate->failure_prob);
    row += ',' + std::to_string(r.certificate->k);
  } else {
    row += ",,,";
  }
  return row;
}

}  // namespace kflow

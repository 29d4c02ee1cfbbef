#include "kflow/kl.hpp"

#include <cmath>
#include <string>

#include "kflow/common.hpp"

namespace kflow {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_prior(const WeightDistribution& q, const IsotropicPrior& prior) {
  require(prior.lambda > 0.0,
          "prior lambda must be positive, got " + std::to_string(prior.lambda));
  require(prior.center.empty() || static_cast<long>(prior.center.size()) == q.dim(),
          "prior center size " + std::to_string(prior.center.size()) +
              " does not match distribution dim " + std::to_string(q.dim()));
}

Tensor center_tensor(const WeightDistribution& q, const IsotropicPrior& prior) {
  const auto& dims = q.dims();
  Shape shape(dims.begin(), dims.end());
  if (prior.center.empty()) {
    return Tensor(shape, std::vector<double>(static_cast<size_t>(q.dim()), 0.0));
  }
  return Tensor(shape, prior.center);
}

}  // namespace

double kl_gaussian_analytic(const WeightDistribution& q, const IsotropicPrior& prior) {
  check_prior(q, prior);
  require(q.gaussian_analytic(), "analytic kl needs a gaussian family");
  NoGradGuard ng;
  const double d = static_cast<double>(q.dim());
  const double trace = q.cov_trace_graph().item();
  const double logdet = q.cov_logdet_graph().item();
  Tensor mg = q.mean_graph();
  const auto& m = mg.values();
  double msq = 0.0;
  for (size_t i = 0; i < m.size(); ++i) {
    const double c = prior.center.empty() ? 0.0 : prior.center[i];
    const double diff = m[i] - c;
    msq += diff * diff;
  }
  return 0.5 * ((trace + msq) / prior.lambda - d + d * std::log(prior.lambda) - logdet);
}

Tensor kl_gaussian_analytic_graph(const WeightDistribution& q, const Tensor& center,
                                  const Tensor& lambda) {
  require(q.gaussian_analytic(), "analytic kl needs a gaussian family");
  const double d = static_cast<double>(q.dim());
  Tensor trace = q.cov_trace_graph();
  Tensor logdet = q.cov_logdet_graph();
  Tensor diff = q.mean_graph() - center;
  Tensor msq = sum(square(diff));
  return ((trace + msq) / lambda - d + log(lambda) * d - logdet) * 0.5;
}

KlEstimate kl_monte_carlo(const WeightDistribution& q, const IsotropicPrior& prior, long k,
                          RandomStream& rs, long batch) {
  check_prior(q, prior);
  require(k >= 1, "monte carlo sample count must be at least 1, got " + std::to_string(k));
  if (batch < 1) batch = 1;
  NoGradGuard ng;
  const long d = q.dim();
  const auto& dims = q.dims();
  const double half_d_log2pi = 0.5 * static_cast<double>(d) * kLog2Pi;
  const double log_lambda = std::log(prior.lambda);

  KlEstimate est;
  est.k = k;
  est.term_base.reserve(static_cast<size_t>(k));
  est.term_logdet.reserve(static_cast<size_t>(k));
  est.term_prior.reserve(static_cast<size_t>(k));
  est.quad.reserve(static_cast<size_t>(k));

  long done = 0;
  while (done < k) {
    const long b = std::min(batch, k - done);
    Shape eshape;
    eshape.push_back(b);
    for (long dim : dims) eshape.push_back(dim);
    Tensor eps = Tensor::randn(eshape, rs);
    TransformResult tr = q.transform_batch(eps);
    const auto& ev = eps.values();
    const auto& wv = tr.w.values();
    const long per = d;
    for (long i = 0; i < b; ++i) {
      double esq = 0.0;
      double wsq = 0.0;
      for (long j = 0; j < per; ++j) {
        const double e = ev[static_cast<size_t>(i * per + j)];
        esq += e * e;
        const double c = prior.center.empty() ? 0.0 : prior.center[static_cast<size_t>(j)];
        const double wd = wv[static_cast<size_t>(i * per + j)] - c;
        wsq += wd * wd;
      }
      const double ld = tr.logdet.defined() ? tr.logdet.values()[static_cast<size_t>(i)] : 0.0;
      est.term_base.push_back(-half_d_log2pi - 0.5 * esq);
      est.term_logdet.push_back(ld);
      est.term_prior.push_back(-half_d_log2pi - 0.5 * static_cast<double>(d) * log_lambda -
                               0.5 * wsq / prior.lambda);
      est.quad.push_back(0.5 * wsq / prior.lambda);
    }
    done += b;
  }

  double mean = 0.0;
  for (long i = 0; i < k; ++i) {
    mean += est.term_base[static_cast<size_t>(i)] - est.term_logdet[static_cast<size_t>(i)] -
            est.term_prior[static_cast<size_t>(i)];
  }
  mean /= static_cast<double>(k);
  double var = 0.0;
  for (long i = 0; i < k; ++i) {
    const double v = est.term_base[static_cast<size_t>(i)] -
                     est.term_logdet[static_cast<size_t>(i)] -
                     est.term_prior[static_cast<size_t>(i)] - mean;
    var += v * v;
  }
  est.mean = mean;
  est.std_error = k > 1 ? std::sqrt(var / static_cast<double>(k - 1) / static_cast<double>(k))
                        : 0.0;
  return est;
}

Tensor kl_monte_carlo_graph(const WeightDistribution& q, const Tensor& center,
                            const Tensor& lambda, const Tensor& eps_batch) {
  const long b = eps_batch.shape()[0];
  const double d = static_cast<double>(q.dim());
  TransformResult tr = q.transform_batch(eps_batch);
  Shape flat;
  flat.push_back(b);
  flat.push_back(q.dim());
  Tensor wsq = sum(square(reshape(tr.w - center, flat)), 1, true);
  Tensor esq;
  {
    NoGradGuard ng;
    esq = sum(square(reshape(eps_batch, flat)), 1, true);
  }
  Tensor per = wsq / lambda * 0.5 + log(lambda) * (0.5 * d) - esq * 0.5;
  if (tr.logdet.defined()) per = per - tr.logdet;
  return mean(per);
}

double lipschitz_upper_bound(const FlowStack& g) { return g.lipschitz_upper_bound(); }

double lipschitz_upper_bound(const KroneckerNonlinear& q) {
  double bound = 1.0;
  for (const auto& stack : q.axis_flows()) bound *= stack.lipschitz_upper_bound();
  if (q.outer_affine()) {
    NoGradGuard ng;
    Tensor s = softplus(q.scale_raw_param());
    double mx = 0.0;
    for (double v : s.values()) mx = std::max(mx, std::abs(v));
    bound *= mx;
  }
  return bound;
}

ConcentrationCert concentration_certificate(double l0, long d, double inv_zero_norm, long k,
                                            double epsilon) {
  require(l0 > 0.0 && d >= 1 && k >= 1 && epsilon > 0.0 && inv_zero_norm >= 0.0,
          "concentration certificate inputs must be positive");
  ConcentrationCert cert;
  cert.l0 = l0;
  cert.l = l0 / std::sqrt(2.0);
  cert.d = d;
  cert.inv_zero_norm = inv_zero_norm;
  const double root = 6.0 * cert.l * cert.l +
                      cert.l / std::sqrt(std::log(2.0)) *
                          (std::sqrt(static_cast<double>(d)) + inv_zero_norm);
  cert.c = root * root;
  cert.epsilon = epsilon;
  cert.k = k;
  const double exponent = static_cast<double>(k) * epsilon * epsilon /
                          (2.0 * (4.0 * cert.c * cert.c + cert.c * epsilon));
  cert.failure_prob = std::exp(-exponent);
  return cert;
}

ConcentrationCert epsilon_for_failure_prob(double l0, long d, double inv_zero_norm, long k,
                                           double delta) {
  require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1), got " + std::to_string(delta));
  // solve k eps^2 = 2 t (4 c^2 + c eps) for eps with t = ln(1/delta)
  ConcentrationCert probe = concentration_certificate(l0, d, inv_zero_norm, k, 1.0);
  const double t = std::log(1.0 / delta);
  const double c = probe.c;
  const double kk = static_cast<double>(k);
  const double epsilon = c / kk * (t + std::sqrt(t * t + 8.0 * kk * t));
  return concentration_certificate(l0, d, inv_zero_norm, k, epsilon);
}

CertifiedKl certified_kl_upper(const KroneckerNonlinear& q, const IsotropicPrior& prior, long k,
                               double delta, RandomStream& rs, long batch) {
  check_prior(q, prior);
  for (const auto& stack : q.axis_flows()) {
    require(stack.volume_preserving(),
            "certified kl upper bound requires volume-preserving axis flows");
  }
  CertifiedKl out;
  out.estimate = kl_monte_carlo(q, prior, k, rs, batch);
  double quad = 0.0;
  for (double v : out.estimate.quad) quad += v;
  quad /= static_cast<double>(k);
  out.quad_mean = quad;

  NoGradGuard ng;
  const long d = q.dim();
  // volume-preserving stacks make the logdet deterministic, read it off one draw
  const auto& dims = q.dims();
  Shape zshape;
  zshape.push_back(1);
  for (long dim : dims) zshape.push_back(dim);
  Tensor zero(zshape, std::vector<double>(static_cast<size_t>(q.dim()), 0.0));
  TransformResult tz = q.transform_batch(zero);
  const double logdet = tz.logdet.defined() ? tz.logdet.values()[0] : 0.0;

  Tensor center = center_tensor(q, prior);
  Tensor inv0 = q.inverse_noise(center);
  double inv_norm = 0.0;
  for (double v : inv0.values()) inv_norm += v * v;
  inv_norm = std::sqrt(inv_norm);

  const double l0 = lipschitz_upper_bound(q) / std::sqrt(prior.lambda);
  out.cert = epsilon_for_failure_prob(l0, d, inv_norm, k, delta);
  out.deterministic = -0.5 * static_cast<double>(d) +
                      0.5 * static_cast<double>(d) * std::log(prior.lambda) - logdet;
  out.kl_upper = quad + out.cert.epsilon + out.deterministic;
  return out;
}

}  // namespace kflow

#include "kflow/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "kflow/common.hpp"
#include "kflow/optim.hpp"

namespace kflow {

namespace {

std::string shape_label(const Shape& dims) {
  std::string s;
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(dims[i]);
  }
  return s;
}

long flat_dim(const Shape& dims) {
  long d = 1;
  for (long v : dims) {
    require(v >= 1, "shape axes must be positive");
    d *= v;
  }
  return d;
}

}  // namespace

GaussianTarget random_gaussian_target(const std::vector<long>& dims, RandomStream& rs) {
  long d = flat_dim(dims);
  GaussianTarget t;
  t.dims = dims;
  for (int attempt = 0; attempt < 100 && t.cov.size() == 0; ++attempt) {
    Mat g(d, d);
    for (long i = 0; i < d; ++i) {
      for (long j = 0; j < d; ++j) g(i, j) = rs.normal();
    }
    Mat cov = g * g.transpose() + 1e-6 * Mat::Identity(d, d);
    if (min_eigenvalue(cov) <= 0.0) {
      ++t.discarded;
      continue;
    }
    t.cov = cov;
  }
  require(t.cov.size() > 0, "could not draw a positive definite target covariance");
  Mat lp = cholesky_lower(t.cov);
  t.white = lp.triangularView<Eigen::Lower>().solve(Mat::Identity(d, d));
  t.logdet = 0.0;
  for (long i = 0; i < d; ++i) t.logdet += 2.0 * std::log(lp(i, i));
  return t;
}

GaussianTarget diagonal_gaussian_target(const std::vector<long>& dims,
                                        const std::vector<double>& stds) {
  long d = flat_dim(dims);
  require(static_cast<long>(stds.size()) == d, "need one std per coordinate");
  for (double s : stds) require(s > 0.0, "target stds must be positive");
  GaussianTarget t;
  t.dims = dims;
  t.cov = Mat::Zero(d, d);
  t.white = Mat::Zero(d, d);
  t.logdet = 0.0;
  for (long i = 0; i < d; ++i) {
    t.cov(i, i) = stds[static_cast<size_t>(i)] * stds[static_cast<size_t>(i)];
    t.white(i, i) = 1.0 / stds[static_cast<size_t>(i)];
    t.logdet += 2.0 * std::log(stds[static_cast<size_t>(i)]);
  }
  return t;
}

DenseGaussian::DenseGaussian(Shape dims, double init_sigma)
    : WeightDistribution(std::move(dims)) {
  require(init_sigma > 0.0, "dense family: init sigma must be positive");
  long d = dim_;
  m_ = Tensor(dims_);
  lraw_ = Tensor({d, d});
  draw_ = Tensor::full({1, d}, inv_softplus_d(init_sigma));
  m_.set_requires_grad();
  lraw_.set_requires_grad();
  draw_.set_requires_grad();
  std::vector<double> lower(static_cast<size_t>(d) * static_cast<size_t>(d), 0.0);
  std::vector<double> ident(lower.size(), 0.0);
  for (long r = 0; r < d; ++r) {
    for (long c = 0; c < r; ++c) lower[static_cast<size_t>(r * d + c)] = 1.0;
    ident[static_cast<size_t>(r * d + r)] = 1.0;
  }
  lmask_ = Tensor({d, d}, lower);
  eye_ = Tensor({d, d}, ident);
}

Tensor DenseGaussian::chol_graph() const {
  return mul(lraw_, lmask_) + mul(eye_, softplus(draw_));
}

TransformResult DenseGaussian::transform_batch(const Tensor& eps) const {
  require(eps.shape().size() == dims_.size() + 1, "transform_batch: expected a batch dimension");
  long b = eps.shape()[0];
  Tensor flat = reshape(eps, {b, dim_});
  Tensor l = chol_graph();
  Tensor wf = matmul(flat, transpose(l)) + reshape(m_, {1, dim_});
  Shape out = dims_;
  out.insert(out.begin(), b);
  TransformResult r;
  r.w = reshape(wf, out);
  r.logdet = Tensor::full({b, 1}, 1.0) * sum(log(softplus(draw_)));
  return r;
}

Tensor DenseGaussian::inverse_noise(const Tensor& w) const {
  NoGradGuard ng;
  require(w.shape() == dims_, "inverse_noise expects a weight-shaped sample");
  Mat l = to_eigen(chol_graph());
  Vec rhs(dim_);
  const auto& wv = w.values();
  const auto& mv = m_.values();
  for (long i = 0; i < dim_; ++i) rhs(i) = wv[static_cast<size_t>(i)] - mv[static_cast<size_t>(i)];
  Vec x = l.triangularView<Eigen::Lower>().solve(rhs);
  std::vector<double> out(static_cast<size_t>(dim_));
  for (long i = 0; i < dim_; ++i) out[static_cast<size_t>(i)] = x(i);
  return Tensor(dims_, out);
}

std::vector<Tensor> DenseGaussian::parameters() { return {m_, lraw_, draw_}; }

std::vector<std::pair<std::string, Tensor>> DenseGaussian::named_parameters() {
  return {{"M", m_}, {"L_raw", lraw_}, {"diag_raw", draw_}};
}

std::unique_ptr<WeightDistribution> DenseGaussian::clone() const {
  auto copy = std::make_unique<DenseGaussian>(dims_);
  copy->m_.mutable_values() = m_.values();
  copy->lraw_.mutable_values() = lraw_.values();
  copy->draw_.mutable_values() = draw_.values();
  return copy;
}

Tensor DenseGaussian::cov_trace_graph() const { return sum(square(chol_graph())); }

Tensor DenseGaussian::cov_logdet_graph() const {
  return 2.0 * sum(log(softplus(draw_)));
}

DistPtr make_simulate_family(const std::string& family, const Shape& dims) {
  if (family == "diag") return std::make_unique<DiagGaussian>(dims, 1.0);
  if (family == "k_diag") return std::make_unique<KroneckerDiag>(dims, 1.0);
  if (family == "k_linear") return std::make_unique<KroneckerLinear>(dims, 1.0);
  if (family == "dense") return std::make_unique<DenseGaussian>(dims, 1.0);
  fail("simulate family must be diag, k_diag, k_linear, or dense, got " + family);
}

Tensor dense_kl_graph(const WeightDistribution& q, const GaussianTarget& target) {
  require(q.gaussian_analytic(), "dense-target kl needs a gaussian family");
  require(q.dims() == target.dims, "family and target shapes differ");
  long d = q.dim();
  require(target.cov.rows() == d && target.cov.cols() == d, "target covariance has the wrong size");

  Mat precision = target.white.transpose() * target.white;
  Tensor mu = reshape(q.mean_graph(), {1, d});
  Tensor quad = sum(matmul(matmul(mu, from_eigen(precision)), transpose(mu)));

  Tensor trace_term;
  const std::string fam = q.family();
  if (fam == "diag" || fam == "k_diag") {
    Tensor sig = fam == "diag" ? dynamic_cast<const DiagGaussian&>(q).sigma_graph()
                               : dynamic_cast<const KroneckerDiag&>(q).scale_outer_graph();
    std::vector<double> pd(static_cast<size_t>(d));
    for (long i = 0; i < d; ++i) pd[static_cast<size_t>(i)] = precision(i, i);
    trace_term = sum(square(reshape(sig, {1, d})) * Tensor({1, d}, pd));
  } else if (fam == "k_linear") {
    const auto& kq = dynamic_cast<const KroneckerLinear&>(q);
    Tensor k;
    if (q.dims().size() == 2) {
      // W = M + A (S . E) B, so the flattened root is (A x B^T) diag(vec S)
      k = kron(kq.factor_graph(0), transpose(kq.factor_graph(1)));
    } else {
      // mode products act on each axis from the left
      k = kq.factor_graph(0);
      for (size_t axis = 1; axis < q.dims().size(); ++axis) {
        k = kron(k, kq.factor_graph(static_cast<int>(axis)));
      }
    }
    Tensor ks = k * reshape(kq.scale_graph(), {1, d});
    trace_term = sum(square(matmul(from_eigen(target.white), ks)));
  } else if (fam == "dense") {
    const auto& dq = dynamic_cast<const DenseGaussian&>(q);
    trace_term = sum(square(matmul(from_eigen(target.white), dq.chol_graph())));
  } else {
    fail("no dense-target kl for family " + fam);
  }

  return 0.5 * (trace_term + quad - static_cast<double>(d) + target.logdet - q.cov_logdet_graph());
}

KlEstimate dense_kl_monte_carlo(const WeightDistribution& q, const GaussianTarget& target,
                                long k, RandomStream& rs, long batch) {
  require(k >= 2, "monte-carlo kl needs at least two draws");
  require(batch >= 1, "batch must be positive");
  NoGradGuard ng;
  long d = q.dim();
  const double half_log2pi = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  KlEstimate est;
  est.k = k;
  est.term_base.reserve(static_cast<size_t>(k));
  est.term_logdet.reserve(static_cast<size_t>(k));
  est.term_prior.reserve(static_cast<size_t>(k));
  long left = k;
  while (left > 0) {
    long b = std::min(batch, left);
    Shape es = q.dims();
    es.insert(es.begin(), b);
    Tensor eps = Tensor::randn(es, rs);
    TransformResult r = q.transform_batch(eps);
    const auto& ev = eps.values();
    const auto& wv = r.w.values();
    for (long i = 0; i < b; ++i) {
      double esq = 0.0;
      Vec w(d);
      for (long j = 0; j < d; ++j) {
        double e = ev[static_cast<size_t>(i * d + j)];
        esq += e * e;
        w(j) = wv[static_cast<size_t>(i * d + j)];
      }
      double ld = r.logdet.defined() ? r.logdet.values()[static_cast<size_t>(i)] : 0.0;
      double quad = (target.white * w).squaredNorm();
      est.term_base.push_back(-half_log2pi - 0.5 * esq);
      est.term_logdet.push_back(ld);
      est.term_prior.push_back(-half_log2pi - 0.5 * target.logdet - 0.5 * quad);
    }
    left -= b;
  }
  double mean = 0.0;
  for (long i = 0; i < k; ++i) {
    size_t s = static_cast<size_t>(i);
    mean += est.term_base[s] - est.term_logdet[s] - est.term_prior[s];
  }
  mean /= static_cast<double>(k);
  double var = 0.0;
  for (long i = 0; i < k; ++i) {
    size_t s = static_cast<size_t>(i);
    double v = est.term_base[s] - est.term_logdet[s] - est.term_prior[s] - mean;
    var += v * v;
  }
  var /= static_cast<double>(k - 1);
  est.mean = mean;
  est.std_error = std::sqrt(var / static_cast<double>(k));
  return est;
}

double fit_to_target(WeightDistribution& q, const GaussianTarget& target,
                     const FitOptions& opt) {
  require(opt.steps >= 1, "fit needs at least one step");
  require(opt.lr > 0.0, "fit lr must be positive");
  require(opt.rounds >= 1, "fit needs at least one round");
  long base = opt.steps / opt.rounds;
  long extra = opt.steps % opt.rounds;
  for (long r = 0; r < opt.rounds; ++r) {
    long span = base + (r < extra ? 1 : 0);
    if (span == 0) continue;
    // a fresh optimizer per round: the huge first-step gradients of a stiff
    // target otherwise pin the moment estimates and stall convergence
    Adam adam(q.parameters(), opt.lr);
    for (long s = 0; s < span; ++s) {
      if (opt.cosine_lr) {
        double frac = static_cast<double>(s) / static_cast<double>(span);
        adam.set_lr(opt.lr *
                    (1e-4 + (1.0 - 1e-4) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac))));
      }
      Tensor kl = dense_kl_graph(q, target);
      backward(kl);
      adam.step();
      adam.zero_grad();
    }
  }
  NoGradGuard ng;
  return dense_kl_graph(q, target).item();
}

SimulateResults simulate_kl(const std::vector<Shape>& shapes,
                            const std::vector<std::string>& families, long trials,
                            const FitOptions& fit, RandomStream& rs) {
  require(!shapes.empty(), "simulate needs at least one shape");
  require(!families.empty(), "simulate needs at least one family");
  require(trials >= 0, "trial count must be nonnegative");
  std::vector<long> ds;
  for (const Shape& s : shapes) {
    long d = flat_dim(s);
    require(d <= 256, "shape " + shape_label(s) + " exceeds the dense-target limit of 256");
    ds.push_back(d);
  }
  std::vector<size_t> order(shapes.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return ds[a] < ds[b]; });

  SimulateResults out;
  for (size_t si = 0; si < order.size(); ++si) {
    const Shape& dims = shapes[order[si]];
    long d = ds[order[si]];
    std::string label = shape_label(dims);

    // one target per trial, shared by every family for a paired comparison
    std::vector<GaussianTarget> targets;
    targets.reserve(static_cast<size_t>(trials));
    for (long t = 0; t < trials; ++t) {
      RandomStream ts = rs.sub(static_cast<std::uint64_t>(si) * 1048576ull +
                               static_cast<std::uint64_t>(t));
      targets.push_back(random_gaussian_target(dims, ts));
    }

    for (const std::string& fam : families) {
      double sum_kl = 0.0, sumsq = 0.0;
      for (long t = 0; t < trials; ++t) {
        DistPtr q = make_simulate_family(fam, dims);
        double kl = fit_to_target(*q, targets[static_cast<size_t>(t)], fit);
        out.rows.push_back({label, d, fam, t, kl});
        sum_kl += kl;
        sumsq += kl * kl;
      }
      if (trials > 0) {
        double mean = sum_kl / static_cast<double>(trials);
        double var = trials > 1 ? std::max(0.0, (sumsq - static_cast<double>(trials) * mean * mean) /
                                                    static_cast<double>(trials - 1))
                                : 0.0;
        out.summary.push_back({label, d, fam, mean, std::sqrt(var)});
      }
    }
  }
  return out;
}

}  // namespace kflow

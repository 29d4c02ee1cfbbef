#include "kflow/families.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "kflow/common.hpp"
#include "kflow/linalg.hpp"

namespace kflow {

namespace {

Tensor zeros(Shape s) { return Tensor::full(std::move(s), 0.0); }

Tensor ones_col(long b) { return Tensor(Shape{b, 1}, std::vector<double>(b, 1.0)); }

std::vector<int> invert_perm(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = (int)i;
  return inv;
}

// f (k,k) applied to every fiber along the given axis (left multiplication)
Tensor mode_product(const Tensor& x, const Tensor& f, int axis) {
  size_t nd = x.shape().size();
  std::vector<int> perm;
  perm.push_back(axis);
  for (size_t i = 0; i < nd; ++i)
    if ((int)i != axis) perm.push_back((int)i);
  Tensor xp = permute(x, perm);
  Shape ps = xp.shape();
  long k = ps[0];
  Tensor y = matmul(f, reshape(xp, Shape{k, xp.size() / k}));
  return permute(reshape(y, ps), invert_perm(perm));
}

// right multiplication on the trailing axis: rows (.) f
Tensor trailing_matmul(const Tensor& x, const Tensor& f) {
  Shape s = x.shape();
  long k = s.back();
  Tensor y = matmul(reshape(x, Shape{x.size() / k, k}), f);
  return reshape(y, s);
}

// per-sample sum of per-fiber logdets: (B*fibers,1) -> (B,1)
Tensor regroup_fiber_ld(const Tensor& fiber_ld, long b) {
  long fibers = fiber_ld.size() / b;
  return sum(reshape(fiber_ld, Shape{b, fibers}), 1, /*keepdim=*/true);
}

void add_ld(Tensor& acc, const Tensor& c) { acc = acc.defined() ? acc + c : c; }

Tensor strict_lower_mask(long k) {
  std::vector<double> v(k * k, 0.0);
  for (long i = 0; i < k; ++i)
    for (long j = 0; j < i; ++j) v[i * k + j] = 1.0;
  return Tensor(Shape{k, k}, std::move(v));
}

void check_dims(const Shape& dims) {
  require(dims.size() == 2 || dims.size() == 3,
          "weight distribution: dims must have rank 2 or 3, got rank " +
              std::to_string(dims.size()));
  for (long d : dims) require(d >= 1, "weight distribution: dims must be positive");
}

Shape batched(const Shape& dims, long b) {
  Shape s = dims;
  s.insert(s.begin(), b);
  return s;
}

}  // namespace

WeightDistribution::WeightDistribution(Shape dims) : dims_(std::move(dims)) {
  check_dims(dims_);
  dim_ = 1;
  for (long d : dims_) dim_ *= d;
}

TransformResult WeightDistribution::transform(const Tensor& eps) const {
  require(eps.shape() == dims_, "transform: noise shape " + shape_str(eps.shape()) +
                                    " does not match weight shape " + shape_str(dims_));
  TransformResult r = transform_batch(reshape(eps, batched(dims_, 1)));
  TransformResult out;
  out.w = reshape(r.w, dims_);
  if (r.logdet.defined()) out.logdet = reshape(r.logdet, Shape{1});
  return out;
}

Tensor WeightDistribution::mean_graph() const {
  fail("mean_graph: family '" + family() + "' has no analytic Gaussian form");
}
Tensor WeightDistribution::cov_trace_graph() const {
  fail("cov_trace_graph: family '" + family() + "' has no analytic Gaussian form");
}
Tensor WeightDistribution::cov_logdet_graph() const {
  fail("cov_logdet_graph: family '" + family() + "' has no analytic Gaussian form");
}

SampleResult WeightDistribution::sample(RandomStream& rs) const {
  Tensor eps = Tensor::randn(dims_, rs);
  TransformResult t = transform(eps);
  SampleResult s;
  s.w = t.w;
  s.epsilon = eps;
  s.logdet = t.logdet.defined() ? t.logdet.values()[0] : 0.0;
  double q = 0.0;
  for (double v : eps.values()) q += v * v;
  s.base_logdensity = -0.5 * q - 0.5 * (double)dim_ * std::log(2.0 * std::numbers::pi);
  return s;
}

// ---------------------------------------------------------------- DiagGaussian

DiagGaussian::DiagGaussian(Shape dims, double init_sigma) : WeightDistribution(std::move(dims)) {
  require(init_sigma > 0, "diag family: init sigma must be positive");
  m_ = zeros(dims_);
  rho_ = Tensor::full(dims_, inv_softplus_d(init_sigma));
  m_.set_requires_grad();
  rho_.set_requires_grad();
}

Tensor DiagGaussian::sigma_graph() const { return softplus(rho_); }

TransformResult DiagGaussian::transform_batch(const Tensor& eps) const {
  require(eps.shape().size() == dims_.size() + 1, "transform_batch: expected a batch dimension");
  long b = eps.shape()[0];
  Tensor sigma = sigma_graph();
  TransformResult r;
  r.w = eps * sigma + m_;
  r.logdet = ones_col(b) * sum(log(sigma));
  return r;
}

Tensor DiagGaussian::inverse_noise(const Tensor& w) const {
  NoGradGuard ng;
  return (w.detach() - m_.detach()) / softplus(rho_.detach());
}

std::vector<Tensor> DiagGaussian::parameters() { return {m_, rho_}; }
std::vector<std::pair<std::string, Tensor>> DiagGaussian::named_parameters() {
  return {{"M", m_}, {"rho", rho_}};
}

std::unique_ptr<WeightDistribution> DiagGaussian::clone() const {
  auto c = std::make_unique<DiagGaussian>(dims_);
  c->m_.mutable_values() = m_.values();
  c->rho_.mutable_values() = rho_.values();
  return c;
}

Tensor DiagGaussian::cov_trace_graph() const { return sum(square(sigma_graph())); }
Tensor DiagGaussian::cov_logdet_graph() const { return 2.0 * sum(log(sigma_graph())); }

// --------------------------------------------------------------- KroneckerDiag

KroneckerDiag::KroneckerDiag(Shape dims, double init_scale) : WeightDistribution(std::move(dims)) {
  require(init_scale > 0, "k_diag family: init scale must be positive");
  m_ = zeros(dims_);
  m_.set_requires_grad();
  double per_axis = std::pow(init_scale, 1.0 / (double)dims_.size());
  for (long k : dims_) {
    Tensor r = Tensor::full(Shape{k}, inv_softplus_d(per_axis));
    r.set_requires_grad();
    raw_.push_back(r);
  }
}

Tensor KroneckerDiag::axis_scale_graph(int axis) const {
  require(axis >= 0 && (size_t)axis < raw_.size(), "k_diag: axis out of range");
  return softplus(raw_[axis]);
}

Tensor KroneckerDiag::scale_outer_graph() const {
  Tensor outer;
  for (size_t a = 0; a < dims_.size(); ++a) {
    Shape s(dims_.size(), 1);
    s[a] = dims_[a];
    Tensor piece = reshape(axis_scale_graph((int)a), s);
    outer = outer.defined() ? outer * piece : piece;
  }
  return outer;
}

TransformResult KroneckerDiag::transform_batch(const Tensor& eps) const {
  require(eps.shape().size() == dims_.size() + 1, "transform_batch: expected a batch dimension");
  long b = eps.shape()[0];
  Tensor outer = scale_outer_graph();
  TransformResult r;
  r.w = eps * outer + m_;
  r.logdet = ones_col(b) * sum(log(outer));
  return r;
}

Tensor KroneckerDiag::inverse_noise(const Tensor& w) const {
  NoGradGuard ng;
  return (w.detach() - m_.detach()) / scale_outer_graph();
}

std::vector<Tensor> KroneckerDiag::parameters() {
  std::vector<Tensor> ps = {m_};
  for (auto& r : raw_) ps.push_back(r);
  return ps;
}
std::vector<std::pair<std::string, Tensor>> KroneckerDiag::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> ps = {{"M", m_}};
  for (size_t a = 0; a < raw_.size(); ++a)
    ps.push_back({"scale_raw_" + std::to_string(a), raw_[a]});
  return ps;
}

std::unique_ptr<WeightDistribution> KroneckerDiag::clone() const {
  auto c = std::make_unique<KroneckerDiag>(dims_);
  c->m_.mutable_values() = m_.values();
  for (size_t a = 0; a < raw_.size(); ++a) c->raw_[a].mutable_values() = raw_[a].values();
  return c;
}

Tensor KroneckerDiag::cov_trace_graph() const {
  Tensor t;
  for (size_t a = 0; a < raw_.size(); ++a) {
    Tensor s = sum(square(axis_scale_graph((int)a)));
    t = t.defined() ? t * s : s;
  }
  return t;
}

Tensor KroneckerDiag::cov_logdet_graph() const {
  Tensor t;
  for (size_t a = 0; a < raw_.size(); ++a) {
    double mult = 2.0 * (double)(dim_ / dims_[a]);
    Tensor s = mult * sum(log(axis_scale_graph((int)a)));
    t = t.defined() ? t + s : s;
  }
  return t;
}

// -------------------------------------------------------------- KroneckerLinear

KroneckerLinear::KroneckerLinear(Shape dims, double init_sigma)
    : WeightDistribution(std::move(dims)) {
  require(init_sigma > 0, "k_linear family: init sigma must be positive");
  m_ = zeros(dims_);
  s_raw_ = Tensor::full(dims_, inv_softplus_d(init_sigma));
  m_.set_requires_grad();
  s_raw_.set_requires_grad();
  for (long k : dims_) {
    Tensor r = zeros({k, k});
    r.set_requires_grad();
    factor_raw_.push_back(r);
  }
}

Tensor KroneckerLinear::factor_graph(int axis) const {
  require(axis >= 0 && (size_t)axis < factor_raw_.size(), "k_linear: axis out of range");
  long k = dims_[axis];
  return Tensor::eye(k) + strict_lower_mask(k) * factor_raw_[axis];
}

Tensor KroneckerLinear::scale_graph() const { return softplus(s_raw_); }

Tensor KroneckerLinear::apply_factors(const Tensor& x) const {
  if (dims_.size() == 2) {
    // W = A X B with A and B unit lower triangular, B right-multiplying
    Tensor y = mode_product(x, factor_graph(0), 1);
    return trailing_matmul(y, factor_graph(1));
  }
  Tensor y = x;
  for (size_t a = 0; a < dims_.size(); ++a) y = mode_product(y, factor_graph((int)a), (int)a + 1);
  return y;
}

TransformResult KroneckerLinear::transform_batch(const Tensor& eps) const {
  require(eps.shape().size() == dims_.size() + 1, "transform_batch: expected a batch dimension");
  long b = eps.shape()[0];
  Tensor s = scale_graph();
  TransformResult r;
  r.w = apply_factors(eps * s) + m_;
  r.logdet = ones_col(b) * sum(log(s));
  return r;
}

Tensor KroneckerLinear::inverse_noise(const Tensor& w) const {
  NoGradGuard ng;
  Tensor x = w.detach() - m_.detach();
  if (dims_.size() == 2) {
    Mat a = to_eigen(factor_graph(0));
    Mat bm = to_eigen(factor_graph(1));
    Mat z = to_eigen(x);
    Mat z1 = a.triangularView<Eigen::Lower>().solve(z);
    Mat z2 = bm.transpose()
                 .triangularView<Eigen::Upper>()
                 .solve(z1.transpose())
                 .transpose();  // solve Z2 B = Z1
    return from_eigen(z2) / scale_graph();
  }
  // undo each mode product with a triangular solve along that axis
  for (int a = (int)dims_.size() - 1; a >= 0; --a) {
    size_t nd = x.shape().size();
    std::vector<int> perm;
    perm.push_back(a);
    for (size_t i = 0; i < nd; ++i)
      if ((int)i != a) perm.push_back((int)i);
    Tensor xp = permute(x, perm);
    Shape ps = xp.shape();
    long k = ps[0];
    long rest = xp.size() / k;
    Mat f = to_eigen(factor_graph(a));
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mx(
        xp.values().data(), k, rest);
    Mat solved = f.triangularView<Eigen::Lower>().solve(Mat(mx));
    std::vector<double> out(k * rest);
    for (long i = 0; i < k; ++i)
      for (long j = 0; j < rest; ++j) out[i * rest + j] = solved(i, j);
    x = permute(reshape(Tensor(Shape{k, rest}, std::move(out)), ps), invert_perm(perm));
  }
  return x / scale_graph();
}

std::vector<Tensor> KroneckerLinear::parameters() {
  std::vector<Tensor> ps = {m_};
  for (auto& r : factor_raw_) ps.push_back(r);
  ps.push_back(s_raw_);
  return ps;
}
std::vector<std::pair<std::string, Tensor>> KroneckerLinear::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> ps = {{"M", m_}};
  for (size_t a = 0; a < factor_raw_.size(); ++a)
    ps.push_back({"factor_raw_" + std::to_string(a), factor_raw_[a]});
  ps.push_back({"S_raw", s_raw_});
  return ps;
}

std::unique_ptr<WeightDistribution> KroneckerLinear::clone() const {
  auto c = std::make_unique<KroneckerLinear>(dims_);
  c->m_.mutable_values() = m_.values();
  c->s_raw_.mutable_values() = s_raw_.values();
  for (size_t a = 0; a < factor_raw_.size(); ++a)
    c->factor_raw_[a].mutable_values() = factor_raw_[a].values();
  return c;
}

Tensor KroneckerLinear::cov_trace_graph() const {
  Tensor t = square(scale_graph());
  if (dims_.size() == 2) {
    t = matmul(matmul(square(factor_graph(0)), t), square(factor_graph(1)));
    return sum(t);
  }
  for (size_t a = 0; a < dims_.size(); ++a) t = mode_product(t, square(factor_graph((int)a)), (int)a);
  return sum(t);
}

Tensor KroneckerLinear::cov_logdet_graph() const {
  // unit-triangular factors contribute nothing to the determinant
  return 2.0 * sum(log(scale_graph()));
}

// ------------------------------------------------------------ KroneckerNonlinear

KroneckerNonlinear::KroneckerNonlinear(Shape dims, const Options& opt, RandomStream& rs)
    : WeightDistribution(std::move(dims)), affine_(opt.outer_affine), reverse_(opt.reverse_axis_order) {
  require(opt.layers_per_axis >= 1, "k_nonlinear family: need at least one layer per axis");
  require(opt.init_sigma > 0, "k_nonlinear family: init sigma must be positive");
  for (long k : dims_)
    flows_.push_back(
        make_axis_flow(k, opt.layer_type, opt.layers_per_axis, opt.scaled_layers, rs, opt.init_scale));
  if (affine_) {
    m_ = zeros(dims_);
    s_raw_ = Tensor::full(dims_, inv_softplus_d(opt.init_sigma));
    m_.set_requires_grad();
    s_raw_.set_requires_grad();
  }
}

KroneckerNonlinear::KroneckerNonlinear(Shape dims, std::vector<FlowStack> flows, bool outer_affine,
                                       bool reverse_axis_order)
    : WeightDistribution(std::move(dims)),
      flows_(std::move(flows)),
      affine_(outer_affine),
      reverse_(reverse_axis_order) {
  require(flows_.size() == dims_.size(), "k_nonlinear family: one flow per axis required");
  for (size_t a = 0; a < dims_.size(); ++a)
    require(flows_[a].dim() == dims_[a], "k_nonlinear family: flow dim mismatch on axis " +
                                             std::to_string(a));
  if (affine_) {
    m_ = zeros(dims_);
    s_raw_ = Tensor::full(dims_, inv_softplus_d(1.0));
    m_.set_requires_grad();
    s_raw_.set_requires_grad();
  }
}

std::vector<int> KroneckerNonlinear::axis_order() const {
  std::vector<int> order(dims_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = (int)i;
  if (reverse_) std::reverse(order.begin(), order.end());
  return order;
}

TransformResult KroneckerNonlinear::transform_batch(const Tensor& eps) const {
  require(eps.shape().size() == dims_.size() + 1, "transform_batch: expected a batch dimension");
  long b = eps.shape()[0];
  Tensor x = eps;
  Tensor ld;
  for (int a : axis_order()) {
    AxisResult r = apply_axis_flow(flows_[a], x, a + 1);
    x = r.y;
    if (r.fiber_ld.defined()) add_ld(ld, regroup_fiber_ld(r.fiber_ld, b));
  }
  if (affine_) {
    Tensor s = softplus(s_raw_);
    x = x * s + m_;
    add_ld(ld, ones_col(b) * sum(log(s)));
  }
  return {x, ld};
}

Tensor KroneckerNonlinear::inverse_noise(const Tensor& w) const {
  NoGradGuard ng;
  Tensor x = w.detach();
  if (affine_) x = (x - m_.detach()) / softplus(s_raw_.detach());
  auto order = axis_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    x = apply_axis_inverse(flows_[*it], x, *it);
  return x;
}

std::vector<Tensor> KroneckerNonlinear::parameters() {
  std::vector<Tensor> ps;
  for (auto& g : flows_)
    for (auto& t : g.parameters()) ps.push_back(t);
  if (affine_) {
    ps.push_back(m_);
    ps.push_back(s_raw_);
  }
  return ps;
}

std::vector<std::pair<std::string, Tensor>> KroneckerNonlinear::named_parameters() {
  std::vector<std::pair<std::string, Tensor>> ps;
  for (size_t a = 0; a < flows_.size(); ++a) {
    auto fp = flows_[a].parameters();
    for (size_t i = 0; i < fp.size(); ++i)
      ps.push_back({"flow" + std::to_string(a) + ".p" + std::to_string(i), fp[i]});
  }
  if (affine_) {
    ps.push_back({"M", m_});
    ps.push_back({"S_raw", s_raw_});
  }
  return ps;
}

std::unique_ptr<WeightDistribution> KroneckerNonlinear::clone() const {
  std::vector<FlowStack> fl;
  for (const auto& g : flows_) fl.push_back(g.clone());
  auto c = std::make_unique<KroneckerNonlinear>(dims_, std::move(fl), affine_, reverse_);
  if (affine_) {
    c->m_.mutable_values() = m_.values();
    c->s_raw_.mutable_values() = s_raw_.values();
  }
  return c;
}

bool KroneckerNonlinear::volume_preserving() const {
  if (affine_) return false;
  for (const auto& g : flows_)
    if (!g.volume_preserving()) return false;
  return true;
}

// -------------------------------------------------------------- free functions

Tensor apply_kronecker_flow(const Tensor& e, const FlowStack& g_a, const FlowStack& g_b) {
  require(e.shape().size() == 2, "apply_kronecker_flow: expected a matrix");
  AxisResult cols = apply_axis_flow(g_a, e, 0);
  AxisResult rows = apply_axis_flow(g_b, cols.y, 1);
  return rows.y;
}

double logdet_jacobian(const WeightDistribution& dist, const Tensor& eps) {
  TransformResult t = dist.transform(eps);
  return t.logdet.defined() ? t.logdet.values()[0] : 0.0;
}

CovarianceStats covariance_stats(const Tensor& m, const Tensor& a, const Tensor& b,
                                 const Tensor& s) {
  const Shape& ms = m.shape();
  require(ms.size() == 2, "covariance_stats: mean must be a matrix");
  long n = ms[0], p = ms[1];
  require(a.shape() == Shape{n, n}, "covariance_stats: A must be n x n");
  require(b.shape() == Shape{p, p}, "covariance_stats: B must be p x p");
  require(s.shape() == ms, "covariance_stats: S must match the mean shape");
  for (double v : s.values()) require(v > 0, "covariance_stats: S must be positive");

  CovarianceStats st;
  st.mean.resize(n * p);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < p; ++j) st.mean[i + j * n] = m.values()[i * p + j];

  double lds = 0.0;
  for (double v : s.values()) lds += 2.0 * std::log(v);
  st.logdet = 2.0 * (double)p * logabsdet(to_eigen(a)) + 2.0 * (double)n * logabsdet(to_eigen(b)) + lds;

  Mat a2 = to_eigen(a).array().square().matrix();
  Mat b2 = to_eigen(b).array().square().matrix();
  Mat s2 = to_eigen(s).array().square().matrix();
  st.trace = (a2 * s2 * b2).sum();
  return st;
}

Tensor dense_covariance_oracle(const Tensor& a, const Tensor& b, const Tensor& s) {
  const Shape& ss = s.shape();
  require(ss.size() == 2, "dense_covariance_oracle: S must be a matrix");
  long n = ss[0], p = ss[1];
  require(a.shape() == Shape{n, n} && b.shape() == Shape{p, p},
          "dense_covariance_oracle: factor shape mismatch");
  long d = n * p;
  require(d <= 4096, "dense_covariance_oracle: np exceeds the 4096 test guard");
  Mat am = to_eigen(a), bm = to_eigen(b), sm = to_eigen(s);
  // K = (B^T (x) A), column-major vec convention; Sigma = K diag(vec S^2) K^T
  Mat kmat(d, d);
  for (long jb = 0; jb < p; ++jb)
    for (long ib = 0; ib < p; ++ib)
      for (long ja = 0; ja < n; ++ja)
        for (long ia = 0; ia < n; ++ia)
          kmat(ib * n + ia, jb * n + ja) = bm(jb, ib) * am(ia, ja);
  Vec dvec(d);
  for (long j = 0; j < p; ++j)
    for (long i = 0; i < n; ++i) dvec(i + j * n) = sm(i, j) * sm(i, j);
  Mat sigma = kmat * dvec.asDiagonal() * kmat.transpose();
  return from_eigen(sigma);
}

// ---------------------------------------------------------------- serialization

namespace {

void write_params(std::ostream& os, WeightDistribution& dist) {
  auto named = dist.named_parameters();
  os << "params " << named.size() << "\n";
  for (auto& [name, t] : named) {
    os << "param " << name << " " << t.size() << "\n";
    const auto& v = t.values();
    for (size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << format_double(v[i]);
    os << "\n";
  }
}

std::string next_token(std::istream& is, const char* what) {
  std::string tok;
  if (!(is >> tok)) fail(std::string("checkpoint: unexpected end of input reading ") + what);
  return tok;
}

long next_long(std::istream& is, const char* what) {
  std::string tok = next_token(is, what);
  char* end = nullptr;
  long v = std::strtol(tok.c_str(), &end, 10);
  if (end == tok.c_str() || *end != '\0')
    fail(std::string("checkpoint: expected an integer for ") + what + ", got '" + tok + "'");
  return v;
}

double next_double(std::istream& is, const char* what) {
  std::string tok = next_token(is, what);
  char* end = nullptr;
  double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0')
    fail(std::string("checkpoint: expected a number for ") + what + ", got '" + tok + "'");
  return v;
}

void expect_token(std::istream& is, const std::string& want) {
  std::string tok = next_token(is, want.c_str());
  if (tok != want) fail("checkpoint: expected '" + want + "', got '" + tok + "'");
}

void read_params(std::istream& is, WeightDistribution& dist) {
  expect_token(is, "params");
  long count = next_long(is, "parameter count");
  auto named = dist.named_parameters();
  require((size_t)count == named.size(), "checkpoint: parameter count mismatch");
  for (auto& [name, t] : named) {
    expect_token(is, "param");
    std::string got = next_token(is, "parameter name");
    if (got != name) fail("checkpoint: expected parameter '" + name + "', got '" + got + "'");
    long sz = next_long(is, "parameter size");
    require(sz == t.size(), "checkpoint: size mismatch for parameter '" + name + "'");
    auto& v = t.mutable_values();
    for (long i = 0; i < sz; ++i) v[i] = next_double(is, name.c_str());
  }
}

}  // namespace

void serialize_distribution(std::ostream& os, WeightDistribution& dist) {
  os << "kflow-dist v1\n";
  os << "family " << dist.family() << "\n";
  os << "dims " << dist.dims().size();
  for (long d : dist.dims()) os << " " << d;
  os << "\n";
  if (auto* knl = dynamic_cast<KroneckerNonlinear*>(&dist)) {
    os << "affine " << (knl->outer_affine() ? 1 : 0) << "\n";
    os << "reverse " << (knl->reverse_axis_order() ? 1 : 0) << "\n";
    const auto& flows = knl->axis_flows();
    os << "flows " << flows.size() << "\n";
    for (size_t a = 0; a < flows.size(); ++a) {
      os << "flow " << a << " " << flows[a].layers.size() << "\n";
      for (const auto& l : flows[a].layers) {
        os << "layer " << l->tag();
        for (long h : l->hyper()) os << " " << h;
        os << "\n";
      }
    }
  }
  write_params(os, dist);
  os << "end\n";
}

DistPtr deserialize_distribution(std::istream& is) {
  expect_token(is, "kflow-dist");
  expect_token(is, "v1");
  expect_token(is, "family");
  std::string family = next_token(is, "family");
  expect_token(is, "dims");
  long rank = next_long(is, "dims rank");
  require(rank == 2 || rank == 3, "checkpoint: dims rank must be 2 or 3");
  Shape dims;
  for (long i = 0; i < rank; ++i) dims.push_back(next_long(is, "dim"));

  DistPtr dist;
  if (family == "diag") {
    dist = std::make_unique<DiagGaussian>(dims);
  } else if (family == "k_diag") {
    dist = std::make_unique<KroneckerDiag>(dims);
  } else if (family == "k_linear") {
    dist = std::make_unique<KroneckerLinear>(dims);
  } else if (family == "k_nonlinear") {
    expect_token(is, "affine");
    bool affine = next_long(is, "affine flag") != 0;
    expect_token(is, "reverse");
    bool reverse = next_long(is, "reverse flag") != 0;
    expect_token(is, "flows");
    long nf = next_long(is, "flow count");
    require(nf == rank, "checkpoint: flow count must match dims rank");
    std::vector<FlowStack> flows;
    for (long a = 0; a < nf; ++a) {
      expect_token(is, "flow");
      long idx = next_long(is, "flow axis");
      require(idx == a, "checkpoint: flows out of order");
      long nl = next_long(is, "layer count");
      FlowStack g;
      for (long l = 0; l < nl; ++l) {
        expect_token(is, "layer");
        std::string tag = next_token(is, "layer tag");
        std::vector<long> hyper;
        if (tag == "affine" || tag == "autoregressive")
          hyper = {next_long(is, "hyper"), next_long(is, "hyper")};
        else if (tag == "coupling")
          hyper = {next_long(is, "hyper"), next_long(is, "hyper"), next_long(is, "hyper")};
        else
          fail("checkpoint: unknown layer tag '" + tag + "'");
        g.layers.push_back(FlowLayer::create(tag, hyper));
      }
      flows.push_back(std::move(g));
    }
    dist = std::make_unique<KroneckerNonlinear>(dims, std::move(flows), affine, reverse);
  } else {
    fail("checkpoint: unknown family '" + family + "'");
  }
  read_params(is, *dist);
  expect_token(is, "end");
  return dist;
}

}  // namespace kflow

#include "kflow/flow_layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kflow/common.hpp"

namespace kflow {

namespace {

// cheap operator-norm upper bound: min(frobenius, sqrt(norm1 * norminf))
double opnorm_ub(const Tensor& w) {
  const auto& s = w.shape();
  require(s.size() == 2, "opnorm_ub: expected a matrix");
  const long r = s[0], c = s[1];
  const auto& v = w.values();
  double fro2 = 0.0;
  std::vector<double> rowsum(r, 0.0), colsum(c, 0.0);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) {
      double a = std::fabs(v[i * c + j]);
      fro2 += a * a;
      rowsum[i] += a;
      colsum[j] += a;
    }
  double ninf = r ? *std::max_element(rowsum.begin(), rowsum.end()) : 0.0;
  double n1 = c ? *std::max_element(colsum.begin(), colsum.end()) : 0.0;
  return std::min(std::sqrt(fro2), std::sqrt(n1 * ninf));
}

Tensor randn_scaled(Shape shape, RandomStream& rs, double scale) {
  long n = 1;
  for (long d : shape) n *= d;
  std::vector<double> v = rs.normals(n);
  for (double& x : v) x *= scale;
  return Tensor(std::move(shape), std::move(v));
}

void add_ld(Tensor& acc, const Tensor& c) { acc = acc.defined() ? acc + c : c; }

class AffineElementwise final : public FlowLayer {
 public:
  AffineElementwise(long k, bool vp) : k_(k), vp_(vp) {
    require(k >= 1, "affine layer: dim must be positive");
    shift_ = Tensor(Shape{1, k}, std::vector<double>(k, 0.0));
    shift_.set_requires_grad();
    if (!vp_) {
      // softplus(raw) = 1 at init, so the layer starts as a pure shift
      sraw_ = Tensor(Shape{1, k}, std::vector<double>(k, inv_softplus_d(1.0)));
      sraw_.set_requires_grad();
    }
  }

  long dim() const override { return k_; }

  Tensor forward(const Tensor& x, Tensor& ld_acc) const override {
    if (vp_) return x + shift_;
    Tensor s = softplus(sraw_);
    // the row logdet is the same for every batch row; broadcast it to (B,1)
    Tensor ones(Shape{x.shape()[0], 1}, std::vector<double>(x.shape()[0], 1.0));
    add_ld(ld_acc, ones * sum(log(s), 1, true));
    return x * s + shift_;
  }

  Tensor inverse(const Tensor& y) const override {
    NoGradGuard ng;
    Tensor yd = y.detach();
    if (vp_) return yd - shift_.detach();
    return (yd - shift_.detach()) / softplus(sraw_.detach());
  }

  bool volume_preserving() const override { return vp_; }

  double lipschitz_upper_bound() const override {
    if (vp_) return 1.0;
    double m = 0.0;
    for (double r : sraw_.values()) m = std::max(m, softplus_d(r));
    return m;
  }

  std::vector<Tensor> parameters() override {
    if (vp_) return {shift_};
    return {shift_, sraw_};
  }

  std::string tag() const override { return "affine"; }
  std::vector<long> hyper() const override { return {k_, vp_ ? 1L : 0L}; }

  std::shared_ptr<FlowLayer> clone() const override {
    auto c = std::make_shared<AffineElementwise>(k_, vp_);
    c->shift_.mutable_values() = shift_.values();
    if (!vp_) c->sraw_.mutable_values() = sraw_.values();
    return c;
  }

 private:
  long k_;
  bool vp_;
  Tensor shift_, sraw_;
};

class CouplingLayer final : public FlowLayer {
 public:
  CouplingLayer(long k, bool swap, bool scaled, RandomStream& rs, double init_scale)
      : k_(k), swap_(swap), scaled_(scaled) {
    require(k >= 2, "coupling layer: dim must be at least 2");
    h_ = std::max<long>(16, 2 * k);
    long half = (k + 1) / 2;  // size of the leading block
    p_len_ = swap_ ? k - half : half;
    a_len_ = k - p_len_;
    w1_ = randn_scaled({p_len_, h_}, rs, 1.0 / std::sqrt((double)p_len_));
    b1_ = Tensor(Shape{1, h_}, std::vector<double>(h_, 0.0));
    w2_ = randn_scaled({h_, a_len_}, rs, 0.1 * init_scale / std::sqrt((double)h_));
    b2_ = Tensor(Shape{1, a_len_}, std::vector<double>(a_len_, 0.0));
    if (scaled_) {
      w3_ = randn_scaled({h_, a_len_}, rs, 0.1 * init_scale / std::sqrt((double)h_));
      b3_ = Tensor(Shape{1, a_len_}, std::vector<double>(a_len_, 0.0));
    }
    for (Tensor* t : param_ptrs()) t->set_requires_grad();
  }

  long dim() const override { return k_; }

  Tensor forward(const Tensor& x, Tensor& ld_acc) const override {
    long p_off = swap_ ? a_len_ : 0;
    long a_off = swap_ ? 0 : p_len_;
    Tensor xp = slice(x, 1, p_off, p_len_);
    Tensor xa = slice(x, 1, a_off, a_len_);
    Tensor hh = tanh(matmul(xp, w1_) + b1_);
    Tensor t = matmul(hh, w2_) + b2_;
    Tensor ya;
    if (scaled_) {
      Tensor u = tanh(matmul(hh, w3_) + b3_);
      ya = xa * exp(u) + t;
      add_ld(ld_acc, sum(u, 1, true));
    } else {
      ya = xa + t;
    }
    return swap_ ? concat({ya, xp}, 1) : concat({xp, ya}, 1);
  }

  Tensor inverse(const Tensor& y) const override {
    NoGradGuard ng;
    long p_off = swap_ ? a_len_ : 0;
    long a_off = swap_ ? 0 : p_len_;
    Tensor yp = slice(y.detach(), 1, p_off, p_len_);
    Tensor ya = slice(y.detach(), 1, a_off, a_len_);
    Tensor hh = tanh(matmul(yp, w1_.detach()) + b1_.detach());
    Tensor t = matmul(hh, w2_.detach()) + b2_.detach();
    Tensor xa;
    if (scaled_) {
      Tensor u = tanh(matmul(hh, w3_.detach()) + b3_.detach());
      xa = (ya - t) * exp(neg(u));
    } else {
      xa = ya - t;
    }
    return swap_ ? concat({xa, yp}, 1) : concat({yp, xa}, 1);
  }

  bool volume_preserving() const override { return !scaled_; }

  double lipschitz_upper_bound() const override {
    require(!scaled_, "lipschitz bound: unsupported layer kind 'scaled coupling'");
    return 1.0 + opnorm_ub(w1_) * opnorm_ub(w2_);
  }

  std::vector<Tensor> parameters() override {
    std::vector<Tensor> ps;
    for (Tensor* t : param_ptrs()) ps.push_back(*t);
    return ps;
  }

  std::string tag() const override { return "coupling"; }
  std::vector<long> hyper() const override {
    return {k_, swap_ ? 1L : 0L, scaled_ ? 1L : 0L};
  }

  std::shared_ptr<FlowLayer> clone() const override {
    RandomStream dummy(0);
    auto c = std::make_shared<CouplingLayer>(k_, swap_, scaled_, dummy, 1.0);
    auto src = const_cast<CouplingLayer*>(this)->param_ptrs();
    auto dst = c->param_ptrs();
    for (size_t i = 0; i < src.size(); ++i) dst[i]->mutable_values() = src[i]->values();
    return c;
  }

 private:
  std::vector<Tensor*> param_ptrs() {
    std::vector<Tensor*> ps = {&w1_, &b1_, &w2_, &b2_};
    if (scaled_) {
      ps.push_back(&w3_);
      ps.push_back(&b3_);
    }
    return ps;
  }
  std::vector<const Tensor*> param_ptrs() const {
    auto ps = const_cast<CouplingLayer*>(this)->param_ptrs();
    return std::vector<const Tensor*>(ps.begin(), ps.end());
  }

  long k_, h_, p_len_, a_len_;
  bool swap_, scaled_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

// Masked MLP with one hidden layer; input i feeds hidden units of degree >= i+1,
// output i depends only on inputs with degree < i+1, i.e. strictly earlier
// coordinates.
class AutoregressiveLayer final : public FlowLayer {
 public:
  AutoregressiveLayer(long k, bool scaled, RandomStream& rs, double init_scale)
      : k_(k), scaled_(scaled) {
    require(k >= 2, "autoregressive layer: dim must be at least 2");
    h_ = std::max<long>(16, 2 * k);
    std::vector<long> deg_h(h_);
    for (long j = 0; j < h_; ++j) deg_h[j] = 1 + (j % (k - 1));  // in 1..k-1
    std::vector<double> m1(k * h_, 0.0), m2(h_ * k, 0.0);
    for (long i = 0; i < k; ++i)
      for (long j = 0; j < h_; ++j)
        if (i + 1 <= deg_h[j]) m1[i * h_ + j] = 1.0;
    for (long j = 0; j < h_; ++j)
      for (long o = 0; o < k; ++o)
        if (deg_h[j] < o + 1) m2[j * k_ + o] = 1.0;
    mask1_ = Tensor(Shape{k, h_}, std::move(m1));
    mask2_ = Tensor(Shape{h_, k}, std::move(m2));
    w1_ = randn_scaled({k, h_}, rs, 1.0 / std::sqrt((double)k));
    b1_ = Tensor(Shape{1, h_}, std::vector<double>(h_, 0.0));
    w2_ = randn_scaled({h_, k}, rs, 0.1 * init_scale / std::sqrt((double)h_));
    b2_ = Tensor(Shape{1, k}, std::vector<double>(k, 0.0));
    if (scaled_) {
      w3_ = randn_scaled({h_, k}, rs, 0.1 * init_scale / std::sqrt((double)h_));
      b3_ = Tensor(Shape{1, k}, std::vector<double>(k, 0.0));
    }
    for (Tensor* t : param_ptrs()) t->set_requires_grad();
  }

  long dim() const override { return k_; }

  Tensor forward(const Tensor& x, Tensor& ld_acc) const override {
    Tensor hh = tanh(matmul(x, w1_ * mask1_) + b1_);
    Tensor t = matmul(hh, w2_ * mask2_) + b2_;
    if (!scaled_) return x + t;
    Tensor u = tanh(matmul(hh, w3_ * mask2_) + b3_);
    add_ld(ld_acc, sum(u, 1, true));
    return x * exp(u) + t;
  }

  Tensor inverse(const Tensor& y) const override {
    NoGradGuard ng;
    const auto& ys = y.shape();
    require(ys.size() == 2 && ys[1] == k_, "autoregressive inverse: bad shape");
    long bsz = ys[0];
    std::vector<double> xv = y.values();
    const auto& yv = y.values();
    // coordinate i depends only on x[:, :i], so solve left to right
    for (long i = 0; i < k_; ++i) {
      Tensor xt(Shape{bsz, k_}, xv);
      Tensor hh = tanh(matmul(xt, w1_.detach() * mask1_) + b1_.detach());
      Tensor t = matmul(hh, w2_.detach() * mask2_) + b2_.detach();
      if (scaled_) {
        Tensor u = tanh(matmul(hh, w3_.detach() * mask2_) + b3_.detach());
        for (long b = 0; b < bsz; ++b)
          xv[b * k_ + i] =
              (yv[b * k_ + i] - t.values()[b * k_ + i]) * std::exp(-u.values()[b * k_ + i]);
      } else {
        for (long b = 0; b < bsz; ++b) xv[b * k_ + i] = yv[b * k_ + i] - t.values()[b * k_ + i];
      }
    }
    return Tensor(Shape{bsz, k_}, std::move(xv));
  }

  bool volume_preserving() const override { return !scaled_; }

  double lipschitz_upper_bound() const override {
    require(!scaled_, "lipschitz bound: unsupported layer kind 'scaled autoregressive'");
    Tensor mw1 = w1_.detach() * mask1_;
    Tensor mw2 = w2_.detach() * mask2_;
    return 1.0 + opnorm_ub(mw1) * opnorm_ub(mw2);
  }

  std::vector<Tensor> parameters() override {
    std::vector<Tensor> ps;
    for (Tensor* t : param_ptrs()) ps.push_back(*t);
    return ps;
  }

  std::string tag() const override { return "autoregressive"; }
  std::vector<long> hyper() const override { return {k_, scaled_ ? 1L : 0L}; }

  std::shared_ptr<FlowLayer> clone() const override {
    RandomStream dummy(0);
    auto c = std::make_shared<AutoregressiveLayer>(k_, scaled_, dummy, 1.0);
    auto src = const_cast<AutoregressiveLayer*>(this)->param_ptrs();
    auto dst = c->param_ptrs();
    for (size_t i = 0; i < src.size(); ++i) dst[i]->mutable_values() = src[i]->values();
    return c;
  }

 private:
  std::vector<Tensor*> param_ptrs() {
    std::vector<Tensor*> ps = {&w1_, &b1_, &w2_, &b2_};
    if (scaled_) {
      ps.push_back(&w3_);
      ps.push_back(&b3_);
    }
    return ps;
  }

  long k_, h_;
  bool scaled_;
  Tensor mask1_, mask2_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

}  // namespace

FlowLayerPtr make_affine_layer(long k, bool vp) {
  return std::make_shared<AffineElementwise>(k, vp);
}

FlowLayerPtr make_coupling_layer(long k, bool swap, bool scaled, RandomStream& rs,
                                 double init_scale) {
  return std::make_shared<CouplingLayer>(k, swap, scaled, rs, init_scale);
}

FlowLayerPtr make_autoregressive_layer(long k, bool scaled, RandomStream& rs, double init_scale) {
  return std::make_shared<AutoregressiveLayer>(k, scaled, rs, init_scale);
}

FlowLayerPtr FlowLayer::create(const std::string& tag, const std::vector<long>& hyper) {
  RandomStream dummy(0);
  if (tag == "affine") {
    require(hyper.size() == 2, "flow layer create: affine expects 2 hyperparameters");
    return make_affine_layer(hyper[0], hyper[1] != 0);
  }
  if (tag == "coupling") {
    require(hyper.size() == 3, "flow layer create: coupling expects 3 hyperparameters");
    return make_coupling_layer(hyper[0], hyper[1] != 0, hyper[2] != 0, dummy);
  }
  if (tag == "autoregressive") {
    require(hyper.size() == 2, "flow layer create: autoregressive expects 2 hyperparameters");
    return make_autoregressive_layer(hyper[0], hyper[1] != 0, dummy);
  }
  fail("flow layer create: unknown tag '" + tag + "'");
}

long FlowStack::dim() const {
  require(!layers.empty(), "flow stack: empty");
  return layers.front()->dim();
}

FlowResult FlowStack::forward(const Tensor& rows) const {
  Tensor y = rows;
  Tensor ld;
  for (const auto& l : layers) y = l->forward(y, ld);
  return {y, ld};
}

Tensor FlowStack::inverse(const Tensor& rows) const {
  Tensor x = rows;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) x = (*it)->inverse(x);
  return x;
}

bool FlowStack::volume_preserving() const {
  for (const auto& l : layers)
    if (!l->volume_preserving()) return false;
  return true;
}

double FlowStack::lipschitz_upper_bound() const {
  double p = 1.0;
  for (const auto& l : layers) p *= l->lipschitz_upper_bound();
  return p;
}

std::vector<Tensor> FlowStack::parameters() const {
  std::vector<Tensor> ps;
  for (const auto& l : layers)
    for (auto& t : l->parameters()) ps.push_back(t);
  return ps;
}

FlowStack FlowStack::clone() const {
  FlowStack c;
  for (const auto& l : layers) c.layers.push_back(l->clone());
  return c;
}

FlowStack make_axis_flow(long k, const std::string& layer_type, int layer_count, bool scaled,
                         RandomStream& rs, double init_scale) {
  require(k >= 1, "axis flow: dim must be positive");
  require(layer_count >= 1, "axis flow: need at least one layer");
  FlowStack g;
  if (k == 1) {
    // couplings need two coordinates; fall back to an elementwise map
    g.layers.push_back(make_affine_layer(1, /*vp=*/!scaled));
    return g;
  }
  for (int i = 0; i < layer_count; ++i) {
    if (layer_type == "coupling")
      g.layers.push_back(make_coupling_layer(k, /*swap=*/(i % 2) == 1, scaled, rs, init_scale));
    else if (layer_type == "autoregressive")
      g.layers.push_back(make_autoregressive_layer(k, scaled, rs, init_scale));
    else
      fail("axis flow: unknown layer type '" + layer_type + "'");
  }
  return g;
}

namespace {

std::vector<int> axis_last_perm(size_t nd, int axis) {
  std::vector<int> perm;
  for (size_t i = 0; i < nd; ++i)
    if ((int)i != axis) perm.push_back((int)i);
  perm.push_back(axis);
  return perm;
}

std::vector<int> invert_perm(const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = (int)i;
  return inv;
}

}  // namespace

AxisResult apply_axis_flow(const FlowStack& g, const Tensor& x, int axis) {
  const auto& s = x.shape();
  size_t nd = s.size();
  require(axis >= 0 && (size_t)axis < nd, "axis flow apply: axis out of range");
  long k = s[axis];
  require(k == g.dim(), "axis flow apply: axis length does not match flow dim");
  auto perm = axis_last_perm(nd, axis);
  Tensor xp = nd == 1 ? reshape(x, Shape{1, k}) : permute(x, perm);
  Shape pshape = xp.shape();
  long rows = xp.size() / k;
  Tensor flat = reshape(xp, Shape{rows, k});
  FlowResult r = g.forward(flat);
  Tensor y = reshape(r.y, pshape);
  if (nd == 1)
    y = reshape(y, s);
  else
    y = permute(y, invert_perm(perm));
  return {y, r.row_ld};
}

Tensor apply_axis_inverse(const FlowStack& g, const Tensor& y, int axis) {
  NoGradGuard ng;
  const auto& s = y.shape();
  size_t nd = s.size();
  require(axis >= 0 && (size_t)axis < nd, "axis flow apply: axis out of range");
  long k = s[axis];
  require(k == g.dim(), "axis flow apply: axis length does not match flow dim");
  auto perm = axis_last_perm(nd, axis);
  Tensor yp = nd == 1 ? reshape(y, Shape{1, k}) : permute(y, perm);
  Shape pshape = yp.shape();
  long rows = yp.size() / k;
  Tensor x = g.inverse(reshape(yp, Shape{rows, k}));
  x = reshape(x, pshape);
  return nd == 1 ? reshape(x, s) : permute(x, invert_perm(perm));
}

}  // namespace kflow

#include "kflow/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace kflow {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

long numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace {

std::atomic<std::uint64_t> g_node_id{1};
thread_local bool g_grad_enabled = true;
thread_local bool g_strict = true;

void check_shape(const Shape& s, const char* op) {
  for (long d : s) require(d >= 1, std::string(op) + ": nonpositive dimension in shape " + shape_str(s));
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) fail(std::string("non-finite values produced by op '") + op + "'");
  }
}

// strides of a shape, row-major; broadcast dims (extent 1) get stride 0 so an
// odometer walk re-reads the same element
std::vector<long> padded_strides(const Shape& s, int out_nd, const Shape& out) {
  std::vector<long> st(out_nd, 0);
  int off = out_nd - static_cast<int>(s.size());
  long run = 1;
  for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
    st[off + d] = (s[d] == 1 && out[off + d] != 1) ? 0 : run;
    run *= s[d];
  }
  return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  int nd = static_cast<int>(std::max(a.size(), b.size()));
  Shape out(nd);
  for (int i = 0; i < nd; ++i) {
    int ia = i - (nd - static_cast<int>(a.size()));
    int ib = i - (nd - static_cast<int>(b.size()));
    long da = ia < 0 ? 1 : a[ia];
    long db = ib < 0 ? 1 : b[ib];
    if (da == db)
      out[i] = da;
    else if (da == 1)
      out[i] = db;
    else if (db == 1)
      out[i] = da;
    else
      fail(std::string(op) + ": shapes not broadcastable " + shape_str(a) + " vs " + shape_str(b));
  }
  return out;
}

Tensor make_op(const char* op, Shape shape, std::vector<double> values,
               std::vector<NodePtr> parents, std::function<void(Node&)> bwd) {
  if (strict_mode()) check_finite(values, op);
  auto n = std::make_shared<Node>(std::move(shape), std::move(values));
  n->op = op;
  bool track = grad_enabled();
  if (track) {
    track = false;
    for (auto& p : parents)
      if (p->requires_grad) {
        track = true;
        break;
      }
  }
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(bwd);
  }
  return Tensor(n);
}

// elementwise binary op with numpy-style broadcasting; DFA/DFB produce the
// local partials given (a, b); the out-gradient factor is applied outside
template <class F, class DFA, class DFB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, F f, DFA dfa, DFB dfb) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape out = broadcast_shape(sa, sb, op);
  int nd = static_cast<int>(out.size());
  long total = numel(out);
  std::vector<double> r(total);
  const auto& va = a.values();
  const auto& vb = b.values();

  if (sa == sb) {
    for (long i = 0; i < total; ++i) r[i] = f(va[i], vb[i]);
  } else {
    auto stA = padded_strides(sa, nd, out);
    auto stB = padded_strides(sb, nd, out);
    std::vector<long> idx(nd, 0);
    long offA = 0, offB = 0;
    for (long c = 0; c < total; ++c) {
      r[c] = f(va[offA], vb[offB]);
      for (int d = nd - 1; d >= 0; --d) {
        ++idx[d];
        offA += stA[d];
        offB += stB[d];
        if (idx[d] < out[d]) break;
        offA -= stA[d] * out[d];
        offB -= stB[d] * out[d];
        idx[d] = 0;
      }
    }
  }

  auto na = a.node();
  auto nb = b.node();
  Shape outs = out;
  return make_op(op, std::move(out), std::move(r), {na, nb},
                 [na, nb, dfa, dfb, outs](Node& self) {
                   int nd2 = static_cast<int>(outs.size());
                   long total2 = numel(outs);
                   auto stA = padded_strides(na->shape, nd2, outs);
                   auto stB = padded_strides(nb->shape, nd2, outs);
                   bool ga = na->requires_grad;
                   bool gb = nb->requires_grad;
                   if (ga) na->ensure_grad();
                   if (gb) nb->ensure_grad();
                   const auto& va = na->values;
                   const auto& vb = nb->values;
                   std::vector<long> idx(nd2, 0);
                   long offA = 0, offB = 0;
                   for (long c = 0; c < total2; ++c) {
                     double g = self.grad[c];
                     if (ga) na->grad[offA] += g * dfa(va[offA], vb[offB]);
                     if (gb) nb->grad[offB] += g * dfb(va[offA], vb[offB]);
                     for (int d = nd2 - 1; d >= 0; --d) {
                       ++idx[d];
                       offA += stA[d];
                       offB += stB[d];
                       if (idx[d] < outs[d]) break;
                       offA -= stA[d] * outs[d];
                       offB -= stB[d] * outs[d];
                       idx[d] = 0;
                     }
                   }
                 });
}

template <class F, class DF>
Tensor unary_op(const char* op, const Tensor& a, F f, DF df) {
  const auto& va = a.values();
  std::vector<double> r(va.size());
  for (size_t i = 0; i < va.size(); ++i) r[i] = f(va[i]);
  auto na = a.node();
  return make_op(op, a.shape(), std::move(r), {na}, [na, df](Node& self) {
    na->ensure_grad();
    const auto& va = na->values;
    for (size_t i = 0; i < va.size(); ++i) na->grad[i] += self.grad[i] * df(va[i], self.values[i]);
  });
}

}  // namespace

Node::Node(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  id = g_node_id.fetch_add(1);
}

void Node::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape) {
  check_shape(shape, "tensor");
  long n = numel(shape);
  n_ = std::make_shared<Node>(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor::Tensor(Shape shape, std::vector<double> values) {
  check_shape(shape, "tensor");
  require(numel(shape) == static_cast<long>(values.size()),
          "tensor: values length " + std::to_string(values.size()) + " does not match shape " +
              shape_str(shape));
  n_ = std::make_shared<Node>(std::move(shape), std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(Shape shape, double v) {
  long n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::eye(long n) {
  Tensor t({n, n});
  for (long i = 0; i < n; ++i) t.n_->values[i * n + i] = 1.0;
  return t;
}

Tensor Tensor::randn(Shape shape, RandomStream& rs) {
  long n = numel(shape);
  return Tensor(std::move(shape), rs.normals(static_cast<size_t>(n)));
}

const Shape& Tensor::shape() const {
  require(defined(), "tensor: use of an undefined tensor");
  return n_->shape;
}

long Tensor::size() const { return numel(shape()); }
int Tensor::ndim() const { return static_cast<int>(shape().size()); }
long Tensor::dim(int i) const { return shape().at(i); }

const std::vector<double>& Tensor::values() const {
  require(defined(), "tensor: use of an undefined tensor");
  return n_->values;
}

std::vector<double>& Tensor::mutable_values() {
  require(defined(), "tensor: use of an undefined tensor");
  require(is_leaf(), "tensor: values of a non-leaf node are read-only");
  return n_->values;
}

double Tensor::item() const {
  require(size() == 1, "tensor: item() needs a single-element tensor, got " + shape_str(shape()));
  return values()[0];
}

double Tensor::at(std::initializer_list<long> idx) const {
  const Shape& s = shape();
  require(idx.size() == s.size(), "tensor: at() rank mismatch");
  long off = 0, run = 1;
  auto it = idx.end();
  for (int d = static_cast<int>(s.size()) - 1; d >= 0; --d) {
    --it;
    off += *it * run;
    run *= s[d];
  }
  return values()[off];
}

Tensor& Tensor::set_requires_grad(bool b) {
  require(is_leaf(), "tensor: requires_grad can only be toggled on leaves");
  n_->requires_grad = b;
  return *this;
}

bool Tensor::requires_grad() const { return defined() && n_->requires_grad; }
bool Tensor::is_leaf() const { return defined() && n_->parents.empty(); }

std::vector<double> Tensor::grad() const {
  require(defined(), "tensor: use of an undefined tensor");
  if (n_->grad.size() != n_->values.size()) return std::vector<double>(n_->values.size(), 0.0);
  return n_->grad;
}

void Tensor::zero_grad() {
  if (defined() && !n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), values()); }

std::uint64_t Tensor::id() const { return n_ ? n_->id : 0; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }
bool grad_enabled() { return g_grad_enabled; }

StrictModeGuard::StrictModeGuard(bool on) : prev(g_strict) { g_strict = on; }
StrictModeGuard::~StrictModeGuard() { g_strict = prev; }
bool strict_mode() { return g_strict; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0),
          "matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  long m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> r(static_cast<size_t>(m * n));
  {
    MapCM ma(a.values().data(), m, k);
    MapCM mb(b.values().data(), k, n);
    MapM mr(r.data(), m, n);
    mr.noalias() = ma * mb;
  }
  auto na = a.node();
  auto nb = b.node();
  return make_op("matmul", {m, n}, std::move(r), {na, nb}, [na, nb, m, k, n](Node& self) {
    MapCM g(self.grad.data(), m, n);
    if (na->requires_grad) {
      na->ensure_grad();
      MapCM mb(nb->values.data(), k, n);
      MapM ga(na->grad.data(), m, k);
      ga.noalias() += g * mb.transpose();
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      MapCM ma(na->values.data(), m, k);
      MapM gb(nb->grad.data(), k, n);
      gb.noalias() += ma.transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require(a.ndim() == 2, "transpose: expected a matrix, got " + shape_str(a.shape()));
  long m = a.dim(0), n = a.dim(1);
  std::vector<double> r(a.values().size());
  const auto& v = a.values();
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < n; ++j) r[j * m + i] = v[i * n + j];
  auto na = a.node();
  return make_op("transpose", {n, m}, std::move(r), {na}, [na, m, n](Node& self) {
    na->ensure_grad();
    for (long j = 0; j < n; ++j)
      for (long i = 0; i < m; ++i) na->grad[i * n + j] += self.grad[j * m + i];
  });
}

Tensor permute(const Tensor& a, const std::vector<int>& axes) {
  int nd = a.ndim();
  require(static_cast<int>(axes.size()) == nd, "permute: axes rank mismatch for " + shape_str(a.shape()));
  std::vector<bool> seen(nd, false);
  for (int ax : axes) {
    require(ax >= 0 && ax < nd && !seen[ax], "permute: invalid axes");
    seen[ax] = true;
  }
  const Shape& s = a.shape();
  Shape out(nd);
  for (int d = 0; d < nd; ++d) out[d] = s[axes[d]];
  std::vector<long> in_strides(nd, 1);
  for (int d = nd - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * s[d + 1];
  std::vector<long> walk(nd);  // stride in the input for each output axis
  for (int d = 0; d < nd; ++d) walk[d] = in_strides[axes[d]];
  long total = numel(out);
  std::vector<double> r(total);
  const auto& v = a.values();
  std::vector<long> idx(nd, 0);
  long off = 0;
  std::vector<long> src_of(total);
  for (long c = 0; c < total; ++c) {
    r[c] = v[off];
    src_of[c] = off;
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[d];
      off += walk[d];
      if (idx[d] < out[d]) break;
      off -= walk[d] * out[d];
      idx[d] = 0;
    }
  }
  auto na = a.node();
  return make_op("permute", std::move(out), std::move(r), {na},
                 [na, src_of = std::move(src_of)](Node& self) {
                   na->ensure_grad();
                   for (size_t c = 0; c < src_of.size(); ++c) na->grad[src_of[c]] += self.grad[c];
                 });
}

Tensor reshape(const Tensor& a, Shape s) {
  check_shape(s, "reshape");
  require(numel(s) == a.size(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(s));
  auto na = a.node();
  return make_op("reshape", std::move(s), a.values(), {na}, [na](Node& self) {
    na->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
  return unary_op(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor softplus(const Tensor& a) {
  return unary_op(
      "softplus", a, [](double x) { return softplus_d(x); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor tanh(const Tensor& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary_op(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary_op(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto na = a.node();
  return make_op("sum", {1}, {s}, {na}, [na](Node& self) {
    na->ensure_grad();
    double g = self.grad[0];
    for (auto& gv : na->grad) gv += g;
  });
}

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  int nd = a.ndim();
  require(axis >= 0 && axis < nd, "sum: axis out of range for " + shape_str(a.shape()));
  const Shape& s = a.shape();
  Shape out;
  for (int d = 0; d < nd; ++d) {
    if (d == axis) {
      if (keepdim) out.push_back(1);
    } else {
      out.push_back(s[d]);
    }
  }
  if (out.empty()) out.push_back(1);
  long inner = 1;
  for (int d = axis + 1; d < nd; ++d) inner *= s[d];
  long outer = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  long k = s[axis];
  std::vector<double> r(static_cast<size_t>(outer * inner), 0.0);
  const auto& v = a.values();
  for (long o = 0; o < outer; ++o)
    for (long j = 0; j < k; ++j) {
      const double* src = v.data() + (o * k + j) * inner;
      double* dst = r.data() + o * inner;
      for (long i = 0; i < inner; ++i) dst[i] += src[i];
    }
  auto na = a.node();
  return make_op("sum_axis", std::move(out), std::move(r), {na},
                 [na, outer, inner, k](Node& self) {
                   na->ensure_grad();
                   for (long o = 0; o < outer; ++o)
                     for (long j = 0; j < k; ++j) {
                       double* dst = na->grad.data() + (o * k + j) * inner;
                       const double* g = self.grad.data() + o * inner;
                       for (long i = 0; i < inner; ++i) dst[i] += g[i];
                     }
                 });
}

Tensor mean(const Tensor& a) {
  long n = a.size();
  double s = 0.0;
  for (double v : a.values()) s += v;
  auto na = a.node();
  return make_op("mean", {1}, {s / static_cast<double>(n)}, {na}, [na, n](Node& self) {
    na->ensure_grad();
    double g = self.grad[0] / static_cast<double>(n);
    for (auto& gv : na->grad) gv += g;
  });
}

Tensor slice(const Tensor& a, int axis, long start, long len) {
  int nd = a.ndim();
  const Shape& s = a.shape();
  require(axis >= 0 && axis < nd, "slice: axis out of range for " + shape_str(s));
  require(start >= 0 && len >= 1 && start + len <= s[axis],
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") out of bounds for axis extent " + std::to_string(s[axis]));
  long inner = 1;
  for (int d = axis + 1; d < nd; ++d) inner *= s[d];
  long outer = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  long k = s[axis];
  Shape out = s;
  out[axis] = len;
  std::vector<double> r(static_cast<size_t>(outer * len * inner));
  const auto& v = a.values();
  for (long o = 0; o < outer; ++o)
    std::memcpy(r.data() + o * len * inner, v.data() + (o * k + start) * inner,
                sizeof(double) * static_cast<size_t>(len * inner));
  auto na = a.node();
  return make_op("slice", std::move(out), std::move(r), {na},
                 [na, outer, inner, k, start, len](Node& self) {
                   na->ensure_grad();
                   for (long o = 0; o < outer; ++o) {
                     double* dst = na->grad.data() + (o * k + start) * inner;
                     const double* g = self.grad.data() + o * len * inner;
                     for (long i = 0; i < len * inner; ++i) dst[i] += g[i];
                   }
                 });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  int nd = parts[0].ndim();
  require(axis >= 0 && axis < nd, "concat: axis out of range");
  Shape out = parts[0].shape();
  long total_axis = 0;
  for (const auto& p : parts) {
    require(p.ndim() == nd, "concat: rank mismatch");
    for (int d = 0; d < nd; ++d)
      if (d != axis)
        require(p.dim(d) == out[d], "concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                        shape_str(parts[0].shape()));
    total_axis += p.dim(axis);
  }
  out[axis] = total_axis;
  long inner = 1;
  for (int d = axis + 1; d < nd; ++d) inner *= out[d];
  long outer = 1;
  for (int d = 0; d < axis; ++d) outer *= out[d];
  std::vector<double> r(static_cast<size_t>(numel(out)));
  std::vector<NodePtr> ns;
  std::vector<long> widths;
  for (const auto& p : parts) {
    ns.push_back(p.node());
    widths.push_back(p.dim(axis));
  }
  long pos = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& v = parts[pi].values();
    long w = widths[pi];
    for (long o = 0; o < outer; ++o)
      std::memcpy(r.data() + (o * total_axis + pos) * inner, v.data() + o * w * inner,
                  sizeof(double) * static_cast<size_t>(w * inner));
    pos += w;
  }
  return make_op("concat", std::move(out), std::move(r), ns,
                 [ns, widths, outer, inner, total_axis](Node& self) {
                   long pos2 = 0;
                   for (size_t pi = 0; pi < ns.size(); ++pi) {
                     long w = widths[pi];
                     if (ns[pi]->requires_grad) {
                       ns[pi]->ensure_grad();
                       for (long o = 0; o < outer; ++o) {
                         const double* g = self.grad.data() + (o * total_axis + pos2) * inner;
                         double* dst = ns[pi]->grad.data() + o * w * inner;
                         for (long i = 0; i < w * inner; ++i) dst[i] += g[i];
                       }
                     }
                     pos2 += w;
                   }
                 });
}

Tensor kron(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2,
          "kron: expected matrices, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  long m = a.dim(0), n = a.dim(1), p = b.dim(0), q = b.dim(1);
  std::vector<double> r(static_cast<size_t>(m * p * n * q));
  const auto& va = a.values();
  const auto& vb = b.values();
  long cols = n * q;
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < n; ++j) {
      double aij = va[i * n + j];
      for (long u = 0; u < p; ++u)
        for (long w = 0; w < q; ++w) r[(i * p + u) * cols + (j * q + w)] = aij * vb[u * q + w];
    }
  auto na = a.node();
  auto nb = b.node();
  return make_op("kron", {m * p, n * q}, std::move(r), {na, nb}, [na, nb, m, n, p, q](Node& self) {
    long cols = n * q;
    if (na->requires_grad) {
      na->ensure_grad();
      for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) {
          double acc = 0.0;
          for (long u = 0; u < p; ++u)
            for (long w = 0; w < q; ++w)
              acc += self.grad[(i * p + u) * cols + (j * q + w)] * nb->values[u * q + w];
          na->grad[i * n + j] += acc;
        }
    }
    if (nb->requires_grad) {
      nb->ensure_grad();
      for (long u = 0; u < p; ++u)
        for (long w = 0; w < q; ++w) {
          double acc = 0.0;
          for (long i = 0; i < m; ++i)
            for (long j = 0; j < n; ++j)
              acc += self.grad[(i * p + u) * cols + (j * q + w)] * na->values[i * n + j];
          nb->grad[u * q + w] += acc;
        }
    }
  });
}

Tensor logsumexp_rows(const Tensor& a) {
  require(a.ndim() == 2, "logsumexp_rows: expected a matrix, got " + shape_str(a.shape()));
  long B = a.dim(0), C = a.dim(1);
  std::vector<double> r(static_cast<size_t>(B));
  const auto& v = a.values();
  for (long i = 0; i < B; ++i) {
    const double* row = v.data() + i * C;
    double mx = row[0];
    for (long j = 1; j < C; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (long j = 0; j < C; ++j) s += std::exp(row[j] - mx);
    r[i] = mx + std::log(s);
  }
  auto na = a.node();
  std::vector<double> lse = r;
  return make_op("logsumexp_rows", {B, 1}, std::move(r), {na},
                 [na, B, C, lse = std::move(lse)](Node& self) {
                   na->ensure_grad();
                   for (long i = 0; i < B; ++i) {
                     double g = self.grad[i];
                     const double* row = na->values.data() + i * C;
                     double* gr = na->grad.data() + i * C;
                     for (long j = 0; j < C; ++j) gr[j] += g * std::exp(row[j] - lse[i]);
                   }
                 });
}

Tensor gather_labels(const Tensor& a, const std::vector<long>& labels) {
  require(a.ndim() == 2, "gather_labels: expected a matrix, got " + shape_str(a.shape()));
  long B = a.dim(0), C = a.dim(1);
  require(static_cast<long>(labels.size()) == B, "gather_labels: label count mismatch");
  std::vector<double> r(static_cast<size_t>(B));
  const auto& v = a.values();
  for (long i = 0; i < B; ++i) {
    require(labels[i] >= 0 && labels[i] < C, "gather_labels: label out of range");
    r[i] = v[i * C + labels[i]];
  }
  auto na = a.node();
  return make_op("gather_labels", {B, 1}, std::move(r), {na}, [na, C, labels](Node& self) {
    na->ensure_grad();
    for (size_t i = 0; i < labels.size(); ++i)
      na->grad[static_cast<long>(i) * C + labels[i]] += self.grad[i];
  });
}

Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
Tensor operator/(const Tensor& a, double b) { return divide(a, Tensor::scalar(b)); }
Tensor operator/(double a, const Tensor& b) { return divide(Tensor::scalar(a), b); }
Tensor operator-(const Tensor& a) { return neg(a); }

void backward(const Tensor& loss) {
  require(loss.defined(), "backward: undefined loss");
  require(loss.size() == 1, "backward: loss must be scalar, got " + shape_str(loss.shape()));
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // iterative post-order over the grad-tracked subgraph
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> st;
  st.emplace_back(root, 0);
  seen.insert(root);
  while (!st.empty()) {
    Node* n = st.back().first;
    size_t i = st.back().second;
    bool descended = false;
    while (i < n->parents.size()) {
      Node* p = n->parents[i].get();
      ++i;
      if (p->requires_grad && !seen.count(p)) {
        st.back().second = i;
        seen.insert(p);
        st.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (descended) continue;
    topo.push_back(n);
    st.pop_back();
  }

  for (Node* n : topo) n->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace kflow

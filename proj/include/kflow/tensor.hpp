#pragma once
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "kflow/common.hpp"
#include "kflow/random.hpp"

namespace kflow {

using Shape = std::vector<long>;

long numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the computation record: values plus the reverse rule that
// scatters this node's gradient into its parents.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
  std::uint64_t id;

  Node(Shape s, std::vector<double> v);
  void ensure_grad();
};

// Dense row-major tensor handle. Copies share the underlying node, so a
// Tensor is cheap to pass around; fresh leaves are made explicitly.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);
  static Tensor scalar(double v);
  static Tensor full(Shape shape, double v);
  static Tensor eye(long n);
  static Tensor randn(Shape shape, RandomStream& rs);

  bool defined() const { return static_cast<bool>(n_); }
  const Shape& shape() const;
  long size() const;
  int ndim() const;
  long dim(int i) const;
  const std::vector<double>& values() const;
  std::vector<double>& mutable_values();  // leaves only
  double item() const;
  double at(std::initializer_list<long> idx) const;

  Tensor& set_requires_grad(bool b = true);  // leaves only
  bool requires_grad() const;
  bool is_leaf() const;
  std::vector<double> grad() const;  // zeros if never reached by backward
  void zero_grad();

  // detached copy of the values as a fresh constant leaf
  Tensor detach() const;

  NodePtr node() const { return n_; }
  std::uint64_t id() const;

  explicit Tensor(NodePtr n) : n_(std::move(n)) {}

 private:
  NodePtr n_;
};

// Gradient recording is on by default; scope this to run inference-only math.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};
bool grad_enabled();

// Strict mode (default on) checks every op result for NaN/Inf.
struct StrictModeGuard {
  explicit StrictModeGuard(bool on);
  ~StrictModeGuard();
  bool prev;
};
bool strict_mode();

// primitives
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor reshape(const Tensor& a, Shape s);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor slice(const Tensor& a, int axis, long start, long len);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor kron(const Tensor& a, const Tensor& b);
// row-wise logsumexp of a (B,C) matrix -> (B,1)
Tensor logsumexp_rows(const Tensor& a);
// picks a[i, labels[i]] from a (B,C) matrix -> (B,1)
Tensor gather_labels(const Tensor& a, const std::vector<long>& labels);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(const Tensor& a, double b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(const Tensor& a, double b);
Tensor operator*(double a, const Tensor& b);
Tensor operator/(const Tensor& a, double b);
Tensor operator/(double a, const Tensor& b);
Tensor operator-(const Tensor& a);

// Reverse pass from a scalar loss: fills .grad on every grad-tracked leaf
// reachable from the loss. Unreachable leaves keep zero gradients.
void backward(const Tensor& loss);

}  // namespace kflow

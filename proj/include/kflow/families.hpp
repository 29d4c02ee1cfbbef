#pragma once
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "kflow/flow_layers.hpp"
#include "kflow/random.hpp"
#include "kflow/tensor.hpp"

namespace kflow {

// Weight distributions over n x p matrices (and their 3-axis tensor
// generalization). Every family is a reparameterized bijection W(eps) of
// entrywise standard normal noise, with exact log-determinant accounting.

struct TransformResult {
  Tensor w;
  Tensor logdet;  // batched: (B,1); single: (1); undefined means exactly zero
};

struct SampleResult {
  Tensor w;
  Tensor epsilon;
  double logdet = 0.0;
  double base_logdensity = 0.0;  // log N(epsilon; 0, I)
};

class WeightDistribution {
 public:
  explicit WeightDistribution(Shape dims);
  virtual ~WeightDistribution() = default;

  const Shape& dims() const { return dims_; }
  long dim() const { return dim_; }
  virtual std::string family() const = 0;

  // eps has the weight shape; logdet is a length-1 tensor (or undefined)
  TransformResult transform(const Tensor& eps) const;
  // eps is (B, dims...); logdet is (B,1) (or undefined)
  virtual TransformResult transform_batch(const Tensor& eps) const = 0;
  virtual Tensor inverse_noise(const Tensor& w) const = 0;  // no-grad

  virtual std::vector<Tensor> parameters() = 0;
  virtual std::vector<std::pair<std::string, Tensor>> named_parameters() = 0;
  virtual std::unique_ptr<WeightDistribution> clone() const = 0;

  // analytic Gaussian statistics (graph mode); only for the linear families
  virtual bool gaussian_analytic() const { return false; }
  virtual Tensor mean_graph() const;        // weight-shaped
  virtual Tensor cov_trace_graph() const;   // (1)
  virtual Tensor cov_logdet_graph() const;  // (1)

  SampleResult sample(RandomStream& rs) const;

 protected:
  Shape dims_;
  long dim_;
};

using DistPtr = std::unique_ptr<WeightDistribution>;

// W = M + softplus(rho) (.) E
class DiagGaussian final : public WeightDistribution {
 public:
  explicit DiagGaussian(Shape dims, double init_sigma = 1.0);
  std::string family() const override { return "diag"; }
  TransformResult transform_batch(const Tensor& eps) const override;
  Tensor inverse_noise(const Tensor& w) const override;
  std::vector<Tensor> parameters() override;
  std::vector<std::pair<std::string, Tensor>> named_parameters() override;
  std::unique_ptr<WeightDistribution> clone() const override;
  bool gaussian_analytic() const override { return true; }
  Tensor mean_graph() const override { return m_; }
  Tensor cov_trace_graph() const override;
  Tensor cov_logdet_graph() const override;
  Tensor sigma_graph() const;  // weight-shaped positive scales
  Tensor mean_param() { return m_; }
  Tensor rho_param() { return rho_; }

 private:
  Tensor m_, rho_;
};

// W = M + diag(u) E diag(v): the entry (i,j) marginal std is u_i v_j
// (per-axis positive scale vectors; three axes for 3-D shapes)
class KroneckerDiag final : public WeightDistribution {
 public:
  explicit KroneckerDiag(Shape dims, double init_scale = 1.0);
  std::string family() const override { return "k_diag"; }
  TransformResult transform_batch(const Tensor& eps) const override;
  Tensor inverse_noise(const Tensor& w) const override;
  std::vector<Tensor> parameters() override;
  std::vector<std::pair<std::string, Tensor>> named_parameters() override;
  std::unique_ptr<WeightDistribution> clone() const override;
  bool gaussian_analytic() const override { return true; }
  Tensor mean_graph() const override { return m_; }
  Tensor cov_trace_graph() const override;
  Tensor cov_logdet_graph() const override;
  Tensor axis_scale_graph(int axis) const;  // positive scale vector, shape (dims[axis])
  Tensor scale_outer_graph() const;         // weight-shaped product of axis scales

 private:
  Tensor m_;
  std::vector<Tensor> raw_;  // one free vector per axis
};

// W = M + A (E (.) S) B with unit-lower-triangular A (n x n) and B (p x p).
// For 3-axis shapes each axis gets a unit-lower-triangular factor applied as
// a mode product along that axis.
class KroneckerLinear final : public WeightDistribution {
 public:
  explicit KroneckerLinear(Shape dims, double init_sigma = 1.0);
  std::string family() const override { return "k_linear"; }
  TransformResult transform_batch(const Tensor& eps) const override;
  Tensor inverse_noise(const Tensor& w) const override;
  std::vector<Tensor> parameters() override;
  std::vector<std::pair<std::string, Tensor>> named_parameters() override;
  std::unique_ptr<WeightDistribution> clone() const override;
  bool gaussian_analytic() const override { return true; }
  Tensor mean_graph() const override { return m_; }
  Tensor cov_trace_graph() const override;
  Tensor cov_logdet_graph() const override;
  Tensor factor_graph(int axis) const;  // I + strictly-lower free entries
  Tensor scale_graph() const;           // softplus(S_raw), weight-shaped
  Tensor mean_param() { return m_; }

 private:
  Tensor apply_factors(const Tensor& x) const;  // batched (B, dims...)
  Tensor m_, s_raw_;
  std::vector<Tensor> factor_raw_;  // per-axis (k,k) free matrices, strict lower used
};

// Axis-wise invertible maps over the noise tensor, optionally followed by an
// elementwise affine map absorbing the mean and scale.
class KroneckerNonlinear final : public WeightDistribution {
 public:
  struct Options {
    std::string layer_type = "coupling";  // or "autoregressive"
    int layers_per_axis = 2;
    bool scaled_layers = false;  // true gives non-volume-preserving stacks
    bool outer_affine = true;    // absorb M and S after the axis maps
    bool reverse_axis_order = false;
    double init_scale = 1.0;
    double init_sigma = 1.0;
  };

  KroneckerNonlinear(Shape dims, const Options& opt, RandomStream& rs);
  // structure-only constructor used by deserialization
  KroneckerNonlinear(Shape dims, std::vector<FlowStack> flows, bool outer_affine,
                     bool reverse_axis_order);

  std::string family() const override { return "k_nonlinear"; }
  TransformResult transform_batch(const Tensor& eps) const override;
  Tensor inverse_noise(const Tensor& w) const override;
  std::vector<Tensor> parameters() override;
  std::vector<std::pair<std::string, Tensor>> named_parameters() override;
  std::unique_ptr<WeightDistribution> clone() const override;

  bool volume_preserving() const;  // all stacks VP and no scaling affine
  bool outer_affine() const { return affine_; }
  bool reverse_axis_order() const { return reverse_; }
  const std::vector<FlowStack>& axis_flows() const { return flows_; }
  Tensor mean_param() const { return m_; }
  Tensor scale_raw_param() const { return s_raw_; }

 private:
  std::vector<int> axis_order() const;
  std::vector<FlowStack> flows_;  // one per axis
  bool affine_, reverse_;
  Tensor m_, s_raw_;  // defined only when affine_
};

// g_A applied to every column of E, then g_B to every row of the result
Tensor apply_kronecker_flow(const Tensor& e, const FlowStack& g_a, const FlowStack& g_b);

// scalar log-determinant of dW/d(vec eps) at the given noise draw
double logdet_jacobian(const WeightDistribution& dist, const Tensor& eps);

struct CovarianceStats {
  std::vector<double> mean;  // vec(M), column-major
  double logdet = 0.0;
  double trace = 0.0;
};

// Property-style statistics for W = M + A (E (.) S) B with general square A
// and B (values only, no graph). Throws if A or B is singular.
CovarianceStats covariance_stats(const Tensor& m, const Tensor& a, const Tensor& b,
                                 const Tensor& s);

// dense np x np covariance of vec(W) (column-major), test-scale only
Tensor dense_covariance_oracle(const Tensor& a, const Tensor& b, const Tensor& s);

// checkpoint serialization (text, lossless round-trip)
void serialize_distribution(std::ostream& os, WeightDistribution& dist);
DistPtr deserialize_distribution(std::istream& is);

}  // namespace kflow

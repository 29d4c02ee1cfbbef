#pragma once
#include <memory>
#include <string>
#include <vector>

#include "kflow/random.hpp"
#include "kflow/tensor.hpp"

namespace kflow {

// An invertible layer acting on rows of a (batch, k) matrix. Volume-preserving
// layers never touch the log-determinant accumulator, so a stack of them
// reports a log-determinant of exactly zero.
class FlowLayer {
 public:
  virtual ~FlowLayer() = default;
  virtual long dim() const = 0;
  // y = f(x); per-row logdet added into ld_acc ((B,1), possibly undefined)
  virtual Tensor forward(const Tensor& x, Tensor& ld_acc) const = 0;
  virtual Tensor inverse(const Tensor& y) const = 0;  // no-grad
  virtual bool volume_preserving() const = 0;
  virtual double lipschitz_upper_bound() const = 0;
  virtual std::vector<Tensor> parameters() = 0;
  virtual std::string tag() const = 0;
  virtual std::vector<long> hyper() const = 0;
  virtual std::shared_ptr<FlowLayer> clone() const = 0;

  // reconstructs a zero-initialized layer from its tag and hyperparameters;
  // parameter values are expected to be loaded afterwards
  static std::shared_ptr<FlowLayer> create(const std::string& tag, const std::vector<long>& hyper);
};

using FlowLayerPtr = std::shared_ptr<FlowLayer>;

// y = x (.) s + t elementwise; the volume-preserving variant is shift-only
FlowLayerPtr make_affine_layer(long k, bool vp);
// additive (or affine when scaled) coupling: the first ceil(k/2) coordinates
// condition the rest; swap exchanges the two roles
FlowLayerPtr make_coupling_layer(long k, bool swap, bool scaled, RandomStream& rs,
                                 double init_scale = 1.0);
// masked autoregressive shift (strictly lower-triangular dependence)
FlowLayerPtr make_autoregressive_layer(long k, bool scaled, RandomStream& rs,
                                       double init_scale = 1.0);

struct FlowResult {
  Tensor y;
  Tensor row_ld;  // (B,1); undefined means identically zero
};

// A sequential stack of layers over length-k vectors.
struct FlowStack {
  std::vector<FlowLayerPtr> layers;

  long dim() const;
  FlowResult forward(const Tensor& rows) const;
  Tensor inverse(const Tensor& rows) const;
  bool volume_preserving() const;
  double lipschitz_upper_bound() const;  // product of layer bounds; 1 if empty
  std::vector<Tensor> parameters() const;
  FlowStack clone() const;
};

// layer_type "coupling" or "autoregressive"; k = 1 degenerates to an affine
// map on that axis
FlowStack make_axis_flow(long k, const std::string& layer_type, int layer_count, bool scaled,
                         RandomStream& rs, double init_scale = 1.0);

struct AxisResult {
  Tensor y;
  Tensor fiber_ld;  // (fiber-count, 1) in fiber-major order; undefined if zero
};

// Applies a flow along one axis of a 2-D or 3-D tensor: every fiber along
// that axis passes through g as one batch row. The Jacobian of the whole map
// is block-diagonal, one block per fiber.
AxisResult apply_axis_flow(const FlowStack& g, const Tensor& x, int axis);
Tensor apply_axis_inverse(const FlowStack& g, const Tensor& y, int axis);

}  // namespace kflow

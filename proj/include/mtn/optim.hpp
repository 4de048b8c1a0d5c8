#pragma once

// Adan optimizer, feature-grid regularizers and gradient clipping.

#include "mtn/field.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mtn {

struct AdanHyper {
  double lr = 1e-3;
  double weight_decay = 2e-5;
  double beta1 = 0.98;  // gradient EMA
  double beta2 = 0.92;  // gradient-difference EMA
  double beta3 = 0.99;  // squared-update EMA
  double eps = 1e-8;

  /// Throws ConfigError unless lr, weight_decay >= 0, betas in [0, 1), eps > 0.
  void validate() const;
};

struct AdanTensorState {
  std::vector<double> m;          // first moment
  std::vector<double> v;          // gradient-difference moment
  std::vector<double> n;          // second moment
  std::vector<double> prev_grad;
  std::int64_t step = 0;

  explicit AdanTensorState(std::size_t size = 0)
      : m(size, 0.0), v(size, 0.0), n(size, 0.0), prev_grad(size, 0.0) {}
};

/// One Adan update of `param` in place. Weight decay is applied in the
/// proximal form param <- (param - lr * update) / (1 + lr * wd).
/// Throws ContractError on size mismatch.
void adan_update(const AdanHyper& hyper, AdanTensorState& state, std::span<double> param,
                 std::span<const double> grad);

/// Adan over every tensor of a field. A tensor is stepped only while it is
/// trainable at the given stage (unfrozen and level <= stage), so each tensor
/// keeps its own step count starting from the first stage that trains it.
class AdanOptimizer {
 public:
  AdanOptimizer(const MultiScaleField& field, const AdanHyper& hyper);

  void step(MultiScaleField& field, const FieldGradients& grads, int stage);
  const AdanTensorState& state(std::size_t tensor) const { return states_.at(tensor); }
  const AdanHyper& hyper() const { return hyper_; }

 private:
  AdanHyper hyper_;
  std::vector<AdanTensorState> states_;
};

/// True when a tensor receives gradients at `stage`: decoder tensors always,
/// feature tensors when unfrozen with level <= stage.
bool tensor_trainable(const ConstParamRef& ref, int stage);

struct RegLoss {
  double value = 0.0;
  std::vector<double> grad;
};

/// Mean over channels and adjacent texel pairs (horizontal and vertical) of
/// squared differences. `texels` is [row][col][channel] of an N x N plane.
RegLoss tv_reg_plane(std::span<const double> texels, int resolution, int channels);
/// 1-D analog over [index][channel].
RegLoss tv_reg_line(std::span<const double> values, int resolution, int channels);

/// Mean of squared values over all elements of all tensors; gradient 2x/count
/// laid out tensor after tensor.
RegLoss l2_reg(std::span<const std::span<const double>> tensors);

/// Adds lambda_tv * TV (summed over trainable planes and axes) and
/// lambda_l2 * L2 (over trainable feature tensors) into `grads`; returns the
/// weighted regularizer value.
double add_regularizers(const MultiScaleField& field, int stage, double lambda_tv,
                        double lambda_l2, FieldGradients& grads);

/// Rescales `grads` to global norm `max_norm` when above it (max_norm <= 0
/// disables). Returns the norm before clipping.
double clip_global_norm(FieldGradients& grads, double max_norm);

}  // namespace mtn

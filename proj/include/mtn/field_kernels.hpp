#pragma once

// Batched field evaluation with a recorded tape for reverse-mode gradients.
// The MLP runs as dense matrix products over all points of a batch.

#include "mtn/field.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mtn {

class FieldTape {
 public:
  /// Evaluates field_forward for every point and records intermediates.
  void forward(const MultiScaleField& field, std::span<const Vec3> points, int stage);

  std::size_t size() const { return points_.size(); }
  int stage() const { return stage_; }
  std::span<const Vec3> points() const { return points_; }
  std::span<const FieldSample> samples() const { return samples_; }

  /// Backward through decoder and Fourier encoding. Adds decoder gradients
  /// into `grads` and writes dL/dh for every point into `d_features`
  /// (C x P; zero columns for points outside the domain).
  ///
  /// Throws UsageError if no forward pass was recorded, the adjoint count
  /// differs from the recorded point count, or the field changed since.
  void backward_decoder(const MultiScaleField& field, std::span<const double> d_sigma,
                        std::span<const Rgb> d_rgb, FieldGradients& grads,
                        Eigen::MatrixXd& d_features) const;

 private:
  const MultiScaleField* field_ = nullptr;
  std::uint64_t generation_ = 0;
  int stage_ = 0;
  std::vector<Vec3> points_;
  std::vector<int> column_;                    // point -> column, -1 outside the domain
  Eigen::MatrixXd features_;                   // C x P_in
  std::vector<Eigen::MatrixXd> layer_inputs_;  // input of each decoder layer
  Eigen::MatrixXd raw_;                        // 4 x P_in
  Eigen::VectorXd density_bias_;
  std::vector<FieldSample> samples_;
};

/// Adds per-point feature adjoints into the gradients of every trainable
/// feature tensor reachable at `stage`. Frozen tensors and levels above the
/// stage are left untouched. Points are visited in order.
void scatter_feature_adjoints(const MultiScaleField& field, std::span<const Vec3> points,
                             const Eigen::MatrixXd& d_features, int stage, FieldGradients& grads);

/// Same result, bit for bit, as scatter_feature_adjoints. Work is split
/// across tensors and texel row bands; each texel still receives its
/// contributions in point order.
void scatter_feature_adjoints_parallel(const MultiScaleField& field, std::span<const Vec3> points,
                                       const Eigen::MatrixXd& d_features, int stage,
                                       FieldGradients& grads);

/// Exact parameter gradients for a recorded batch given per-sample adjoints.
FieldGradients field_backward(const MultiScaleField& field, const FieldTape& tape,
                              std::span<const double> d_sigma, std::span<const Rgb> d_rgb);

}  // namespace mtn

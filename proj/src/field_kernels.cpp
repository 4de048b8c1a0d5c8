#include "mtn/field_kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mtn {

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// A feature tensor that receives gradient at the given stage.
struct ScatterTarget {
  std::size_t tensor;
  int level;
  PlaneOrientation orientation;  // planes only
  Axis axis;                     // trivector only
  bool is_plane;
  int resolution;
};

std::vector<ScatterTarget> scatter_targets(const MultiScaleField& field, int stage) {
  std::vector<ScatterTarget> targets;
  for (int level = 1; level <= std::min(stage, kNumPlaneLevels); ++level) {
    for (int o = 0; o < 3; ++o) {
      const auto orientation = static_cast<PlaneOrientation>(o);
      const FeaturePlane& plane = field.plane(level, orientation);
      if (plane.frozen) continue;
      targets.push_back({MultiScaleField::plane_tensor(level, orientation), level, orientation,
                         Axis::kX, true, plane.resolution});
    }
  }
  if (stage >= kNumLevels) {
    for (int a = 0; a < 3; ++a) {
      const FeatureVectorAxis& axis = field.trivector()[a];
      if (axis.frozen) continue;
      targets.push_back({MultiScaleField::axis_tensor(axis.axis), kNumLevels,
                         PlaneOrientation::kXY, axis.axis, false, axis.resolution});
    }
  }
  return targets;
}

// Adds one point's contribution to a target restricted to texel rows
// [row_begin, row_end). Rows are the v index for planes, the only index for axes.
void scatter_point(const ScatterTarget& target, const Vec3& p, const double* dh, int channels,
                   int row_begin, int row_end, std::vector<double>& grad) {
  if (target.is_plane) {
    const auto uv = plane_coords(target.orientation, p);
    const BilinearStencil st = bilinear_stencil(target.resolution, uv[0], uv[1]);
    for (int k = 0; k < 4; ++k) {
      const int row = st.texel[k] / target.resolution;
      if (row < row_begin || row >= row_end) continue;
      double* dst = grad.data() + static_cast<std::size_t>(st.texel[k]) * channels;
      const double w = st.weight[k];
      for (int c = 0; c < channels; ++c) dst[c] += w * dh[c];
    }
  } else {
    const LinearStencil st = linear_stencil(target.resolution, p[static_cast<int>(target.axis)]);
    for (int k = 0; k < 2; ++k) {
      const int row = st.index[k];
      if (row < row_begin || row >= row_end) continue;
      double* dst = grad.data() + static_cast<std::size_t>(row) * channels;
      const double w = st.weight[k];
      for (int c = 0; c < channels; ++c) dst[c] += w * dh[c];
    }
  }
}

}  // namespace

void FieldTape::forward(const MultiScaleField& field, std::span<const Vec3> points, int stage) {
  if (stage < 1 || stage > kNumLevels) {
    throw ContractError("stage must be in 1..4, got " + std::to_string(stage));
  }
  field_ = &field;
  generation_ = field.generation();
  stage_ = stage;
  points_.assign(points.begin(), points.end());
  column_.assign(points.size(), -1);

  int inside = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (inside_domain(points[i])) column_[i] = inside++;
  }

  const int C = field.config().channels;
  const int D = field.config().encoded_dim();
  features_.setZero(C, inside);
  density_bias_.resize(inside);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int j = column_[i];
    if (j < 0) continue;
    std::span<double> h(features_.col(j).data(), static_cast<std::size_t>(C));
    for (int level = 1; level <= stage; ++level) accumulate_level_feature(field, level, points[i], h);
    density_bias_[j] = field.density_bias(points[i]);
  }

  const auto& layers = field.decoder().layers;
  layer_inputs_.resize(layers.size());
  layer_inputs_[0].resize(D, inside);
  for (int j = 0; j < inside; ++j) {
    field.encode(std::span<const double>(features_.col(j).data(), static_cast<std::size_t>(C)),
                 std::span<double>(layer_inputs_[0].col(j).data(), static_cast<std::size_t>(D)));
  }
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    Eigen::MatrixXd z = layers[l].weight * layer_inputs_[l];
    z.colwise() += layers[l].bias;
    layer_inputs_[l + 1] = z.cwiseMax(0.0);
  }
  raw_ = layers.back().weight * layer_inputs_.back();
  raw_.colwise() += layers.back().bias;

  samples_.assign(points.size(), FieldSample{});
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int j = column_[i];
    if (j < 0) continue;
    FieldSample& s = samples_[i];
    s.sigma = softplus(raw_(0, j) + density_bias_[j]);
    for (int c = 0; c < 3; ++c) s.rgb[c] = sigmoid(raw_(1 + c, j));
  }
}

void FieldTape::backward_decoder(const MultiScaleField& field, std::span<const double> d_sigma,
                                 std::span<const Rgb> d_rgb, FieldGradients& grads,
                                 Eigen::MatrixXd& d_features) const {
  if (field_ == nullptr) throw UsageError("field backward called without a recorded forward pass");
  if (field_ != &field || generation_ != field.generation()) {
    throw UsageError("field backward: parameters changed since the forward pass");
  }
  if (d_sigma.size() != points_.size() || d_rgb.size() != points_.size()) {
    throw UsageError("field backward: adjoint count does not match the recorded batch");
  }
  const int C = field.config().channels;
  const Eigen::Index inside = raw_.cols();

  Eigen::MatrixXd d_out(4, inside);
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const int j = column_[i];
    if (j < 0) continue;
    d_out(0, j) = d_sigma[i] * sigmoid(raw_(0, j) + density_bias_[j]);
    for (int c = 0; c < 3; ++c) {
      const double s = samples_[i].rgb[c];
      d_out(1 + c, j) = d_rgb[i][c] * s * (1.0 - s);
    }
  }

  const auto& layers = field.decoder().layers;
  Eigen::MatrixXd d_z = std::move(d_out);
  for (std::size_t l = layers.size(); l-- > 0;) {
    auto& gw = grads.tensors.at(MultiScaleField::decoder_weight_tensor(l));
    auto& gb = grads.tensors.at(MultiScaleField::decoder_bias_tensor(l));
    Eigen::Map<Eigen::MatrixXd> grad_w(gw.data(), layers[l].weight.rows(), layers[l].weight.cols());
    Eigen::Map<Eigen::VectorXd> grad_b(gb.data(), layers[l].bias.size());
    // Products go through Eigen-owned (aligned) temporaries: summation order
    // inside Eigen kernels can depend on the destination's alignment.
    const Eigen::MatrixXd step_w = d_z * layer_inputs_[l].transpose();
    const Eigen::VectorXd step_b = d_z.rowwise().sum();
    grad_w += step_w;
    grad_b += step_b;
    Eigen::MatrixXd d_in = layers[l].weight.transpose() * d_z;
    if (l > 0) {
      d_z = (layer_inputs_[l].array() > 0.0).select(d_in, 0.0);
    } else {
      d_z = std::move(d_in);
    }
  }

  d_features.setZero(C, static_cast<Eigen::Index>(points_.size()));
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const int j = column_[i];
    if (j < 0) continue;
    field.encode_backward(
        std::span<const double>(features_.col(j).data(), static_cast<std::size_t>(C)),
        std::span<const double>(d_z.col(j).data(), static_cast<std::size_t>(d_z.rows())),
        std::span<double>(d_features.col(static_cast<Eigen::Index>(i)).data(),
                          static_cast<std::size_t>(C)));
  }
}

void scatter_feature_adjoints(const MultiScaleField& field, std::span<const Vec3> points,
                              const Eigen::MatrixXd& d_features, int stage, FieldGradients& grads) {
  const int C = field.config().channels;
  const auto targets = scatter_targets(field, stage);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!inside_domain(points[i])) continue;
    const double* dh = d_features.col(static_cast<Eigen::Index>(i)).data();
    for (const auto& target : targets) {
      scatter_point(target, points[i], dh, C, 0, target.resolution, grads.tensors[target.tensor]);
    }
  }
}

void scatter_feature_adjoints_parallel(const MultiScaleField& field, std::span<const Vec3> points,
                                       const Eigen::MatrixXd& d_features, int stage,
                                       FieldGradients& grads) {
  const int C = field.config().channels;
  const auto targets = scatter_targets(field, stage);
  int workers = 1;
#ifdef _OPENMP
  workers = omp_get_max_threads();
#endif
  struct Task {
    std::size_t target;
    int row_begin;
    int row_end;
  };
  std::vector<Task> tasks;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const int rows = targets[t].resolution;
    const int bands = std::clamp(workers, 1, rows);
    for (int b = 0; b < bands; ++b) {
      tasks.push_back({t, rows * b / bands, rows * (b + 1) / bands});
    }
  }
  const auto task_count = static_cast<long>(tasks.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long k = 0; k < task_count; ++k) {
    const Task& task = tasks[static_cast<std::size_t>(k)];
    const ScatterTarget& target = targets[task.target];
    auto& grad = grads.tensors[target.tensor];
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!inside_domain(points[i])) continue;
      scatter_point(target, points[i], d_features.col(static_cast<Eigen::Index>(i)).data(), C,
                    task.row_begin, task.row_end, grad);
    }
  }
}

FieldGradients field_backward(const MultiScaleField& field, const FieldTape& tape,
                              std::span<const double> d_sigma, std::span<const Rgb> d_rgb) {
  FieldGradients grads = FieldGradients::zeros_like(field);
  Eigen::MatrixXd d_features;
  tape.backward_decoder(field, d_sigma, d_rgb, grads, d_features);
  scatter_feature_adjoints(field, tape.points(), d_features, tape.stage(), grads);
  return grads;
}

}  // namespace mtn

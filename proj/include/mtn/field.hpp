#pragma once

// Multi-scale triplane field: three feature-plane triplanes of increasing
// resolution, one trivector, Fourier feature encoding and an MLP decoder.

#include "mtn/common.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mtn {

inline constexpr int kNumLevels = 4;
inline constexpr int kNumPlaneLevels = 3;

enum class PlaneOrientation : int { kXY = 0, kXZ = 1, kYZ = 2 };
enum class Axis : int { kX = 0, kY = 1, kZ = 2 };

enum class FourierMode {
  kLogBands,        // [h, sin(2^k pi h), cos(2^k pi h)] per channel
  kRandomGaussian,  // [h, sin(2 pi B h), cos(2 pi B h)], B fixed Gaussian
};

using Rgb = std::array<double, 3>;

struct FieldConfig {
  std::array<int, 3> plane_resolution{64, 128, 256};
  int vector_resolution = 512;
  int channels = 32;
  int fourier_bands = 2;
  FourierMode fourier_mode = FourierMode::kLogBands;
  double fourier_scale = 1.0;
  int hidden_width = 64;
  int hidden_layers = 3;
  bool density_blob = false;
  double blob_strength = 5.0;
  double blob_radius = 0.2;

  int encoded_dim() const { return channels * (2 * fourier_bands + 1); }
  int resolution(int level) const {
    return level <= kNumPlaneLevels ? plane_resolution[level - 1] : vector_resolution;
  }
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

struct FeaturePlane {
  int level = 1;
  PlaneOrientation orientation = PlaneOrientation::kXY;
  int resolution = 0;
  int channels = 0;
  std::vector<double> texels;  // [row (v)][col (u)][channel]
  bool frozen = false;

  FeaturePlane() = default;
  FeaturePlane(int level, PlaneOrientation orientation, int resolution, int channels);

  double& at(int row, int col, int channel) {
    return texels[(static_cast<std::size_t>(row) * resolution + col) * channels + channel];
  }
  double at(int row, int col, int channel) const {
    return texels[(static_cast<std::size_t>(row) * resolution + col) * channels + channel];
  }
};

struct FeatureVectorAxis {
  Axis axis = Axis::kX;
  int resolution = 0;
  int channels = 0;
  std::vector<double> values;  // [index][channel]
  bool frozen = false;

  FeatureVectorAxis() = default;
  FeatureVectorAxis(Axis axis, int resolution, int channels);
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct DecoderParams {
  std::vector<DenseLayer> layers;

  /// Hidden layers of `width` with ReLU, final layer of 4 outputs.
  static DecoderParams zeros(int input_dim, int width, int hidden_layers);
  int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols()); }
  /// Throws ConfigError if consecutive layer shapes disagree or values are not finite.
  void validate() const;
};

struct FieldSample {
  double sigma = 0.0;
  Rgb rgb{0.0, 0.0, 0.0};
};

// Interpolation stencils. Texel centers sit at (i + 0.5) / N mapped onto
// [-1, 1]; queries past the outermost centers clamp to the edge.

struct LinearStencil {
  std::array<int, 2> index{0, 0};
  std::array<double, 2> weight{1.0, 0.0};
};

struct BilinearStencil {
  std::array<int, 4> texel{0, 0, 0, 0};  // flattened row * N + col
  std::array<double, 4> weight{1.0, 0.0, 0.0, 0.0};
};

LinearStencil linear_stencil(int resolution, double coord);
BilinearStencil bilinear_stencil(int resolution, double u, double v);

/// Coordinates of p projected onto a plane: xy -> (x, y), xz -> (x, z), yz -> (y, z).
inline std::array<double, 2> plane_coords(PlaneOrientation o, const Vec3& p) {
  switch (o) {
    case PlaneOrientation::kXY: return {p.x(), p.y()};
    case PlaneOrientation::kXZ: return {p.x(), p.z()};
    case PlaneOrientation::kYZ: return {p.y(), p.z()};
  }
  return {0.0, 0.0};
}

std::vector<double> sample_plane(const FeaturePlane& plane, double u, double v);
void accumulate_plane(const FeaturePlane& plane, double u, double v, std::span<double> out);

std::vector<double> sample_trivector(std::span<const FeatureVectorAxis, 3> axes, const Vec3& p);
void accumulate_trivector(std::span<const FeatureVectorAxis, 3> axes, const Vec3& p,
                          std::span<double> out);

/// Deterministic log-spaced per-channel encoding of size C * (2L + 1).
std::vector<double> fourier_encode(std::span<const double> h, int bands);

/// sigma = softplus(raw0 + density_bias), rgb = sigmoid(raw1..3).
FieldSample decode(const DecoderParams& decoder, std::span<const double> encoded,
                   double density_bias = 0.0);

enum class ParamGroup { kPlane, kTrivector, kDecoder };

struct ParamRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> values;
  ParamGroup group;
  int level;            // 1..4 for feature tensors, 0 for the decoder
  bool* frozen;         // nullptr for decoder tensors (never frozen)

  bool is_frozen() const { return frozen != nullptr && *frozen; }
};

struct ConstParamRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<const double> values;
  ParamGroup group;
  int level;
  bool frozen;
};

class MultiScaleField {
 public:
  /// Random initialization: features ~ U(-1e-2, 1e-2), decoder weights by
  /// fan-in scaling, biases zero.
  MultiScaleField(const FieldConfig& config, std::uint64_t seed);

  /// All parameters zero.
  static MultiScaleField zeros(const FieldConfig& config);

  const FieldConfig& config() const { return config_; }

  const FeaturePlane& plane(int level, PlaneOrientation o) const {
    return planes_[plane_slot(level, o)];
  }
  FeaturePlane& plane(int level, PlaneOrientation o) {
    ++generation_;
    return planes_[plane_slot(level, o)];
  }
  std::span<const FeatureVectorAxis, 3> trivector() const { return trivector_; }
  std::span<FeatureVectorAxis, 3> trivector() {
    ++generation_;
    return trivector_;
  }
  const DecoderParams& decoder() const { return decoder_; }
  DecoderParams& decoder() {
    ++generation_;
    return decoder_;
  }

  /// Row-major (C * L) x C projection used by FourierMode::kRandomGaussian.
  const std::vector<double>& fourier_projection() const { return projection_; }
  void set_fourier_projection(std::vector<double> projection);

  /// Fourier encoding according to the configured mode.
  void encode(std::span<const double> h, std::span<double> out) const;
  std::vector<double> encode(std::span<const double> h) const;
  /// Chain rule through encode(): adds d(loss)/dh given d(loss)/d(encoded).
  void encode_backward(std::span<const double> h, std::span<const double> d_encoded,
                       std::span<double> d_h) const;

  /// Additive raw-density bias (centered Gaussian blob) when enabled.
  double density_bias(const Vec3& p) const;

  /// Feature tensors of level-m are frozen for m < stage, trainable otherwise.
  void freeze_below(int stage);
  bool level_frozen(int level) const;

  /// Every tensor, in a fixed order: planes level 1..3 (xy, xz, yz), trivector
  /// x, y, z, then decoder weight/bias pairs.
  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  std::size_t tensor_count() const { return 12 + 2 * decoder_.layers.size(); }

  static constexpr std::size_t plane_tensor(int level, PlaneOrientation o) {
    return static_cast<std::size_t>(level - 1) * 3 + static_cast<std::size_t>(o);
  }
  static constexpr std::size_t axis_tensor(Axis a) { return 9 + static_cast<std::size_t>(a); }
  static constexpr std::size_t decoder_weight_tensor(std::size_t layer) { return 12 + 2 * layer; }
  static constexpr std::size_t decoder_bias_tensor(std::size_t layer) { return 13 + 2 * layer; }

  /// Bumped whenever a mutable accessor is used; lets recorded forward
  /// passes detect stale parameters.
  std::uint64_t generation() const { return generation_; }
  void touch() { ++generation_; }

  /// FNV-1a over the bytes of one tensor.
  std::uint64_t checksum(std::size_t tensor) const;

 private:
  explicit MultiScaleField(const FieldConfig& config);
  static std::size_t plane_slot(int level, PlaneOrientation o) { return plane_tensor(level, o); }
  template <class Self, class Visit>
  static void visit_tensors(Self& self, Visit&& visit);

  FieldConfig config_;
  std::array<FeaturePlane, 9> planes_;
  std::array<FeatureVectorAxis, 3> trivector_;
  DecoderParams decoder_;
  std::vector<double> projection_;
  std::uint64_t generation_ = 0;
};

/// f^k(p): sum of the three level-k plane samples (k <= 3) or the trivector sample (k = 4).
std::vector<double> level_feature(const MultiScaleField& field, int level, const Vec3& p);
void accumulate_level_feature(const MultiScaleField& field, int level, const Vec3& p,
                              std::span<double> out);

/// h^m(p) = sum_{k<=m} f^k(p).
std::vector<double> fuse_features(const MultiScaleField& field, const Vec3& p, int stage);

/// fuse -> encode -> decode. Outside [-1, 1]^3 returns sigma = 0, rgb = 0.
FieldSample field_forward(const MultiScaleField& field, const Vec3& p, int stage);

/// Parameter gradients, one flat buffer per tensor in MultiScaleField::parameters() order.
struct FieldGradients {
  std::vector<std::vector<double>> tensors;

  static FieldGradients zeros_like(const MultiScaleField& field);
  void set_zero();
  double squared_norm() const;
  void scale(double factor);
  void add(const FieldGradients& other, double factor = 1.0);
  bool all_finite() const;
};

}  // namespace mtn

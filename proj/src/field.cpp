#include "mtn/field.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace mtn {

namespace {

constexpr const char* kOrientationNames[] = {"xy", "xz", "yz"};
constexpr const char* kAxisNames[] = {"x", "y", "z"};

double continuous_index(int resolution, double coord) {
  const double s = (coord + 1.0) * 0.5 * resolution - 0.5;
  return std::clamp(s, 0.0, static_cast<double>(resolution - 1));
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

void FieldConfig::validate() const {
  for (int level = 0; level < kNumPlaneLevels; ++level) {
    if (plane_resolution[level] < 1) {
      throw ConfigError("plane resolution must be >= 1 at level " + std::to_string(level + 1));
    }
  }
  if (vector_resolution < 1) throw ConfigError("vector resolution must be >= 1");
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (fourier_bands < 0) throw ConfigError("fourier bands must be >= 0");
  if (hidden_width < 1) throw ConfigError("hidden width must be >= 1");
  if (hidden_layers < 0) throw ConfigError("hidden layers must be >= 0");
  if (!(blob_radius > 0.0)) throw ConfigError("blob radius must be positive");
  if (!(fourier_scale > 0.0)) throw ConfigError("fourier scale must be positive");
}

FeaturePlane::FeaturePlane(int level_, PlaneOrientation orientation_, int resolution_, int channels_)
    : level(level_),
      orientation(orientation_),
      resolution(resolution_),
      channels(channels_),
      texels(static_cast<std::size_t>(resolution_) * resolution_ * channels_, 0.0) {}

FeatureVectorAxis::FeatureVectorAxis(Axis axis_, int resolution_, int channels_)
    : axis(axis_),
      resolution(resolution_),
      channels(channels_),
      values(static_cast<std::size_t>(resolution_) * channels_, 0.0) {}

DecoderParams DecoderParams::zeros(int input_dim, int width, int hidden_layers) {
  DecoderParams params;
  int fan_in = input_dim;
  for (int l = 0; l < hidden_layers; ++l) {
    params.layers.push_back({Eigen::MatrixXd::Zero(width, fan_in), Eigen::VectorXd::Zero(width)});
    fan_in = width;
  }
  params.layers.push_back({Eigen::MatrixXd::Zero(4, fan_in), Eigen::VectorXd::Zero(4)});
  return params;
}

void DecoderParams::validate() const {
  if (layers.empty()) throw ConfigError("decoder has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.bias.size() != layer.weight.rows()) {
      throw ConfigError("decoder layer " + std::to_string(l) + ": bias size does not match rows");
    }
    if (l > 0 && layer.weight.cols() != layers[l - 1].weight.rows()) {
      throw ConfigError("decoder layer " + std::to_string(l) + ": input width mismatch");
    }
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) {
      throw ConfigError("decoder layer " + std::to_string(l) + " has non-finite values");
    }
  }
  if (layers.back().weight.rows() != 4) throw ConfigError("decoder output dimension must be 4");
}

LinearStencil linear_stencil(int resolution, double coord) {
  LinearStencil st;
  if (resolution == 1) return st;
  const double s = continuous_index(resolution, coord);
  const int i0 = std::min(static_cast<int>(std::floor(s)), resolution - 2);
  const double f = s - i0;
  st.index = {i0, i0 + 1};
  st.weight = {1.0 - f, f};
  return st;
}

BilinearStencil bilinear_stencil(int resolution, double u, double v) {
  const LinearStencil col = linear_stencil(resolution, u);
  const LinearStencil row = linear_stencil(resolution, v);
  BilinearStencil st;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      st.texel[2 * r + c] = row.index[r] * resolution + col.index[c];
      st.weight[2 * r + c] = row.weight[r] * col.weight[c];
    }
  }
  return st;
}

void accumulate_plane(const FeaturePlane& plane, double u, double v, std::span<double> out) {
  const BilinearStencil st = bilinear_stencil(plane.resolution, u, v);
  const int C = plane.channels;
  for (int k = 0; k < 4; ++k) {
    const double w = st.weight[k];
    if (w == 0.0) continue;
    const double* texel = plane.texels.data() + static_cast<std::size_t>(st.texel[k]) * C;
    for (int c = 0; c < C; ++c) out[c] += w * texel[c];
  }
}

std::vector<double> sample_plane(const FeaturePlane& plane, double u, double v) {
  std::vector<double> out(plane.channels, 0.0);
  accumulate_plane(plane, u, v, out);
  return out;
}

void accumulate_trivector(std::span<const FeatureVectorAxis, 3> axes, const Vec3& p,
                          std::span<double> out) {
  for (int a = 0; a < 3; ++a) {
    const FeatureVectorAxis& axis = axes[a];
    const LinearStencil st = linear_stencil(axis.resolution, p[static_cast<int>(axis.axis)]);
    const int C = axis.channels;
    for (int k = 0; k < 2; ++k) {
      const double w = st.weight[k];
      if (w == 0.0) continue;
      const double* row = axis.values.data() + static_cast<std::size_t>(st.index[k]) * C;
      for (int c = 0; c < C; ++c) out[c] += w * row[c];
    }
  }
}

std::vector<double> sample_trivector(std::span<const FeatureVectorAxis, 3> axes, const Vec3& p) {
  std::vector<double> out(axes[0].channels, 0.0);
  accumulate_trivector(axes, p, out);
  return out;
}

std::vector<double> fourier_encode(std::span<const double> h, int bands) {
  if (bands < 0) throw ContractError("fourier band count must be >= 0");
  const std::size_t stride = 2 * static_cast<std::size_t>(bands) + 1;
  std::vector<double> out(h.size() * stride);
  for (std::size_t c = 0; c < h.size(); ++c) {
    double* block = out.data() + c * stride;
    block[0] = h[c];
    double freq = std::numbers::pi;
    for (int k = 0; k < bands; ++k) {
      block[1 + 2 * k] = std::sin(freq * h[c]);
      block[2 + 2 * k] = std::cos(freq * h[c]);
      freq *= 2.0;
    }
  }
  return out;
}

FieldSample decode(const DecoderParams& decoder, std::span<const double> encoded,
                   double density_bias) {
  if (static_cast<int>(encoded.size()) != decoder.input_dim()) {
    throw ContractError("decode: encoded size " + std::to_string(encoded.size()) +
                        " does not match decoder input " + std::to_string(decoder.input_dim()));
  }
  Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(encoded.data(), encoded.size());
  const std::size_t last = decoder.layers.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    a = (decoder.layers[l].weight * a + decoder.layers[l].bias).cwiseMax(0.0);
  }
  const Eigen::VectorXd raw = decoder.layers[last].weight * a + decoder.layers[last].bias;
  FieldSample s;
  s.sigma = softplus(raw[0] + density_bias);
  for (int c = 0; c < 3; ++c) s.rgb[c] = sigmoid(raw[1 + c]);
  return s;
}

MultiScaleField::MultiScaleField(const FieldConfig& config) : config_(config) {
  config_.validate();
  const int C = config_.channels;
  for (int level = 1; level <= kNumPlaneLevels; ++level) {
    for (int o = 0; o < 3; ++o) {
      planes_[plane_slot(level, static_cast<PlaneOrientation>(o))] =
          FeaturePlane(level, static_cast<PlaneOrientation>(o), config_.resolution(level), C);
    }
  }
  for (int a = 0; a < 3; ++a) {
    trivector_[a] = FeatureVectorAxis(static_cast<Axis>(a), config_.vector_resolution, C);
  }
  decoder_ = DecoderParams::zeros(config_.encoded_dim(), config_.hidden_width, config_.hidden_layers);
  if (config_.fourier_mode == FourierMode::kRandomGaussian) {
    projection_.assign(static_cast<std::size_t>(C) * config_.fourier_bands * C, 0.0);
  }
}

MultiScaleField MultiScaleField::zeros(const FieldConfig& config) { return MultiScaleField(config); }

MultiScaleField::MultiScaleField(const FieldConfig& config, std::uint64_t seed)
    : MultiScaleField(config) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> feature(-1e-2, 1e-2);
  for (auto& plane : planes_) {
    for (double& x : plane.texels) x = feature(rng);
  }
  for (auto& axis : trivector_) {
    for (double& x : axis.values) x = feature(rng);
  }
  const std::size_t last = decoder_.layers.size() - 1;
  for (std::size_t l = 0; l < decoder_.layers.size(); ++l) {
    auto& w = decoder_.layers[l].weight;
    const double fan_in = static_cast<double>(w.cols());
    const double limit = l == last ? std::sqrt(1.0 / fan_in) : std::sqrt(6.0 / fan_in);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  }
  std::normal_distribution<double> gaussian(0.0, config_.fourier_scale);
  for (double& b : projection_) b = gaussian(rng);
}

void MultiScaleField::set_fourier_projection(std::vector<double> projection) {
  if (projection.size() != projection_.size()) {
    throw ConfigError("fourier projection has " + std::to_string(projection.size()) +
                      " entries, expected " + std::to_string(projection_.size()));
  }
  projection_ = std::move(projection);
  ++generation_;
}

void MultiScaleField::encode(std::span<const double> h, std::span<double> out) const {
  const int C = config_.channels;
  const int L = config_.fourier_bands;
  if (config_.fourier_mode == FourierMode::kLogBands) {
    const int stride = 2 * L + 1;
    for (int c = 0; c < C; ++c) {
      double* block = out.data() + static_cast<std::size_t>(c) * stride;
      block[0] = h[c];
      double freq = std::numbers::pi;
      for (int k = 0; k < L; ++k) {
        block[1 + 2 * k] = std::sin(freq * h[c]);
        block[2 + 2 * k] = std::cos(freq * h[c]);
        freq *= 2.0;
      }
    }
    return;
  }
  const int K = C * L;
  for (int c = 0; c < C; ++c) out[c] = h[c];
  for (int k = 0; k < K; ++k) {
    double s = 0.0;
    const double* row = projection_.data() + static_cast<std::size_t>(k) * C;
    for (int c = 0; c < C; ++c) s += row[c] * h[c];
    s *= 2.0 * std::numbers::pi;
    out[C + k] = std::sin(s);
    out[C + K + k] = std::cos(s);
  }
}

std::vector<double> MultiScaleField::encode(std::span<const double> h) const {
  std::vector<double> out(config_.encoded_dim());
  encode(h, out);
  return out;
}

void MultiScaleField::encode_backward(std::span<const double> h, std::span<const double> d_encoded,
                                      std::span<double> d_h) const {
  const int C = config_.channels;
  const int L = config_.fourier_bands;
  if (config_.fourier_mode == FourierMode::kLogBands) {
    const int stride = 2 * L + 1;
    for (int c = 0; c < C; ++c) {
      const double* d = d_encoded.data() + static_cast<std::size_t>(c) * stride;
      double acc = d[0];
      double freq = std::numbers::pi;
      for (int k = 0; k < L; ++k) {
        const double a = freq * h[c];
        acc += freq * (std::cos(a) * d[1 + 2 * k] - std::sin(a) * d[2 + 2 * k]);
        freq *= 2.0;
      }
      d_h[c] += acc;
    }
    return;
  }
  const int K = C * L;
  for (int c = 0; c < C; ++c) d_h[c] += d_encoded[c];
  for (int k = 0; k < K; ++k) {
    const double* row = projection_.data() + static_cast<std::size_t>(k) * C;
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += row[c] * h[c];
    s *= 2.0 * std::numbers::pi;
    const double g = 2.0 * std::numbers::pi *
                     (std::cos(s) * d_encoded[C + k] - std::sin(s) * d_encoded[C + K + k]);
    for (int c = 0; c < C; ++c) d_h[c] += row[c] * g;
  }
}

double MultiScaleField::density_bias(const Vec3& p) const {
  if (!config_.density_blob) return 0.0;
  const double s = config_.blob_radius;
  return config_.blob_strength * std::exp(-p.squaredNorm() / (2.0 * s * s));
}

void MultiScaleField::freeze_below(int stage) {
  for (auto& plane : planes_) plane.frozen = plane.level < stage;
  for (auto& axis : trivector_) axis.frozen = kNumLevels < stage;
  ++generation_;
}

bool MultiScaleField::level_frozen(int level) const {
  if (level <= kNumPlaneLevels) return planes_[plane_slot(level, PlaneOrientation::kXY)].frozen;
  return trivector_[0].frozen;
}

template <class Self, class Visit>
void MultiScaleField::visit_tensors(Self& self, Visit&& visit) {
  for (auto& plane : self.planes_) {
    const auto n = static_cast<std::size_t>(plane.resolution);
    visit("plane." + std::to_string(plane.level) + "." +
              kOrientationNames[static_cast<int>(plane.orientation)],
          std::vector<std::size_t>{n, n, static_cast<std::size_t>(plane.channels)},
          std::span(plane.texels), ParamGroup::kPlane, plane.level, &plane.frozen);
  }
  for (auto& axis : self.trivector_) {
    visit(std::string("trivector.") + kAxisNames[static_cast<int>(axis.axis)],
          std::vector<std::size_t>{static_cast<std::size_t>(axis.resolution),
                                   static_cast<std::size_t>(axis.channels)},
          std::span(axis.values), ParamGroup::kTrivector, kNumLevels, &axis.frozen);
  }
  for (std::size_t l = 0; l < self.decoder_.layers.size(); ++l) {
    auto& layer = self.decoder_.layers[l];
    visit("decoder." + std::to_string(l) + ".weight",
          std::vector<std::size_t>{static_cast<std::size_t>(layer.weight.cols()),
                                   static_cast<std::size_t>(layer.weight.rows())},
          std::span(layer.weight.data(), static_cast<std::size_t>(layer.weight.size())),
          ParamGroup::kDecoder, 0, static_cast<decltype(&self.planes_[0].frozen)>(nullptr));
    visit("decoder." + std::to_string(l) + ".bias",
          std::vector<std::size_t>{static_cast<std::size_t>(layer.bias.size())},
          std::span(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())),
          ParamGroup::kDecoder, 0, static_cast<decltype(&self.planes_[0].frozen)>(nullptr));
  }
}

std::vector<ParamRef> MultiScaleField::parameters() {
  ++generation_;
  std::vector<ParamRef> refs;
  refs.reserve(tensor_count());
  visit_tensors(*this, [&](std::string name, std::vector<std::size_t> shape, std::span<double> values,
                           ParamGroup group, int level, bool* frozen) {
    refs.push_back({std::move(name), std::move(shape), values, group, level, frozen});
  });
  return refs;
}

std::vector<ConstParamRef> MultiScaleField::parameters() const {
  std::vector<ConstParamRef> refs;
  refs.reserve(tensor_count());
  visit_tensors(*this, [&](std::string name, std::vector<std::size_t> shape,
                           std::span<const double> values, ParamGroup group, int level,
                           const bool* frozen) {
    refs.push_back({std::move(name), std::move(shape), values, group, level,
                    frozen != nullptr && *frozen});
  });
  return refs;
}

std::uint64_t MultiScaleField::checksum(std::size_t tensor) const {
  const auto refs = parameters();
  const auto bytes = std::as_bytes(refs.at(tensor).values);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

void accumulate_level_feature(const MultiScaleField& field, int level, const Vec3& p,
                              std::span<double> out) {
  // f^m is summed on its own before being added, so that
  // h^m - h^{m-1} == f^m holds exactly in floating point.
  constexpr std::size_t kStackChannels = 128;
  std::array<double, kStackChannels> stack;
  std::vector<double> heap;
  std::span<double> f;
  if (out.size() <= kStackChannels) {
    f = std::span<double>(stack.data(), out.size());
    std::fill(f.begin(), f.end(), 0.0);
  } else {
    heap.assign(out.size(), 0.0);
    f = heap;
  }
  if (level <= kNumPlaneLevels) {
    for (int o = 0; o < 3; ++o) {
      const auto orientation = static_cast<PlaneOrientation>(o);
      const auto uv = plane_coords(orientation, p);
      accumulate_plane(field.plane(level, orientation), uv[0], uv[1], f);
    }
  } else {
    accumulate_trivector(field.trivector(), p, f);
  }
  for (std::size_t c = 0; c < out.size(); ++c) out[c] += f[c];
}

std::vector<double> level_feature(const MultiScaleField& field, int level, const Vec3& p) {
  std::vector<double> out(field.config().channels, 0.0);
  accumulate_level_feature(field, level, p, out);
  return out;
}

std::vector<double> fuse_features(const MultiScaleField& field, const Vec3& p, int stage) {
  if (stage < 1 || stage > kNumLevels) {
    throw ContractError("stage must be in 1..4, got " + std::to_string(stage));
  }
  std::vector<double> h(field.config().channels, 0.0);
  for (int level = 1; level <= stage; ++level) accumulate_level_feature(field, level, p, h);
  return h;
}

FieldSample field_forward(const MultiScaleField& field, const Vec3& p, int stage) {
  if (!inside_domain(p)) return {};
  const auto h = fuse_features(field, p, stage);
  const auto encoded = field.encode(h);
  return decode(field.decoder(), encoded, field.density_bias(p));
}

FieldGradients FieldGradients::zeros_like(const MultiScaleField& field) {
  FieldGradients g;
  for (const auto& ref : field.parameters()) g.tensors.emplace_back(ref.values.size(), 0.0);
  return g;
}

void FieldGradients::set_zero() {
  for (auto& t : tensors) std::fill(t.begin(), t.end(), 0.0);
}

double FieldGradients::squared_norm() const {
  double s = 0.0;
  for (const auto& t : tensors) {
    for (double x : t) s += x * x;
  }
  return s;
}

void FieldGradients::scale(double factor) {
  for (auto& t : tensors) {
    for (double& x : t) x *= factor;
  }
}

void FieldGradients::add(const FieldGradients& other, double factor) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& dst = tensors[i];
    const auto& src = other.tensors.at(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += factor * src[j];
  }
}

bool FieldGradients::all_finite() const {
  for (const auto& t : tensors) {
    for (double x : t) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

}  // namespace mtn

#include "mtn/renderer.hpp"

#include "mtn/field_kernels.hpp"
#include "mtn/volume_render.hpp"

#include <algorithm>
#include <exception>

namespace mtn {

namespace {

// All samples of one image row. Only samples inside the domain become
// field evaluation points; the rest have zero density.
struct RowSamples {
  std::vector<double> t;
  std::vector<double> delta;
  std::vector<int> point;  // sample -> index into points, -1 outside the domain
  std::vector<Vec3> points;
};

RowSamples build_row(const CameraPose& pose, const RenderOptions& options, int row) {
  const int W = options.width;
  const int S = options.samples;
  RowSamples rs;
  rs.t.assign(static_cast<std::size_t>(W) * S, 0.0);
  rs.delta.assign(rs.t.size(), 0.0);
  rs.point.assign(rs.t.size(), -1);
  for (int col = 0; col < W; ++col) {
    const Ray ray = generate_ray(pose, W, options.height, row, col);
    if (!ray.hits()) continue;
    const std::size_t index = static_cast<std::size_t>(row) * W + col;
    const RaySamples samples =
        sample_along_ray(ray, S, ray_seed(options.seed, index), options.stratified);
    const std::size_t base = static_cast<std::size_t>(col) * S;
    for (int i = 0; i < S; ++i) {
      rs.t[base + i] = samples.t[i];
      rs.delta[base + i] = samples.delta[i];
      const Vec3 p = ray.at(samples.t[i]);
      if (inside_domain(p)) {
        rs.point[base + i] = static_cast<int>(rs.points.size());
        rs.points.push_back(p);
      }
    }
  }
  return rs;
}

struct RaySlice {
  std::vector<double> sigma;
  std::vector<Rgb> rgb;
};

void gather_ray(const RowSamples& rs, std::span<const FieldSample> values, int col, int S,
                RaySlice& slice) {
  slice.sigma.assign(S, 0.0);
  slice.rgb.assign(S, Rgb{0.0, 0.0, 0.0});
  const std::size_t base = static_cast<std::size_t>(col) * S;
  for (int i = 0; i < S; ++i) {
    const int p = rs.point[base + i];
    if (p < 0) continue;
    slice.sigma[i] = values[p].sigma;
    slice.rgb[i] = values[p].rgb;
  }
}

void validate_options(const CameraPose& pose, const RenderOptions& options) {
  pose.validate();
  if (options.width < 1 || options.height < 1) throw ContractError("image size must be >= 1x1");
  if (options.samples < 1) throw ContractError("samples per ray must be >= 1");
}

RenderedImage blank_image(const RenderOptions& options) {
  RenderedImage img;
  img.width = options.width;
  img.height = options.height;
  img.rgb = Image(options.width, options.height, 3);
  const auto pixels = static_cast<std::size_t>(options.width) * options.height;
  img.opacity.assign(pixels, 0.0);
  img.depth.assign(pixels, 0.0);
  return img;
}

void write_pixel(RenderedImage& img, int row, int col, const Composite& c) {
  for (int k = 0; k < 3; ++k) img.rgb.at(row, col, k) = c.rgb[k];
  const std::size_t px = static_cast<std::size_t>(row) * img.width + col;
  img.opacity[px] = c.opacity;
  img.depth[px] = c.depth;
}

FieldGradients decoder_gradient_buffer(const MultiScaleField& field) {
  FieldGradients g;
  for (const auto& ref : field.parameters()) {
    g.tensors.emplace_back(ref.group == ParamGroup::kDecoder ? ref.values.size() : 0, 0.0);
  }
  return g;
}

// Exceptions must not escape an OpenMP region; the first one is kept and
// rethrown after the loop.
class ExceptionSlot {
 public:
  template <class F>
  void run(F&& f) {
    try {
      f();
    } catch (...) {
#pragma omp critical(mtn_render_exception)
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::exception_ptr error_;
};

void check_gradient_buffer(const MultiScaleField& field, const FieldGradients& grads) {
  if (grads.tensors.size() != field.tensor_count()) {
    throw ContractError("gradient buffer does not match the field");
  }
}

void check_adjoint(const RenderOptions& options, const ImageAdjoint& adjoint) {
  if (adjoint.d_rgb.width != options.width || adjoint.d_rgb.height != options.height ||
      adjoint.d_rgb.channels != 3) {
    throw ContractError("image adjoint shape does not match the render size");
  }
  const auto pixels = static_cast<std::size_t>(options.width) * options.height;
  if (!adjoint.d_opacity.empty() && adjoint.d_opacity.size() != pixels) {
    throw ContractError("opacity adjoint size does not match the render size");
  }
}

}  // namespace

void FieldSource::evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const {
  FieldTape tape;
  tape.forward(field_, points, stage_);
  std::copy(tape.samples().begin(), tape.samples().end(), out.begin());
}

std::uint64_t ray_seed(std::uint64_t render_seed, std::size_t index) {
  return splitmix64(render_seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

RenderedImage render_source(const RadianceSource& source, const CameraPose& pose,
                            const RenderOptions& options) {
  validate_options(pose, options);
  RenderedImage img = blank_image(options);
  const int S = options.samples;
  ExceptionSlot errors;
#pragma omp parallel for schedule(dynamic, 1) if (options.parallel)
  for (int row = 0; row < options.height; ++row) errors.run([&] {
    const RowSamples rs = build_row(pose, options, row);
    std::vector<FieldSample> values(rs.points.size());
    source.evaluate(rs.points, values);
    RaySlice slice;
    for (int col = 0; col < options.width; ++col) {
      gather_ray(rs, values, col, S, slice);
      const std::size_t base = static_cast<std::size_t>(col) * S;
      const Composite c = volume_render(slice.sigma, slice.rgb,
                                        std::span(rs.delta).subspan(base, S),
                                        std::span(rs.t).subspan(base, S), options.background);
      write_pixel(img, row, col, c);
    }
  });
  errors.rethrow();
  return img;
}

RenderedImage render_image(const MultiScaleField& field, const CameraPose& pose, int stage,
                           const RenderOptions& options) {
  return render_source(FieldSource(field, stage), pose, options);
}

struct RenderPass::Rows {
  std::vector<RowSamples> samples;
  std::vector<FieldTape> tapes;
};

RenderPass::RenderPass(const MultiScaleField& field, const CameraPose& pose, int stage,
                       const RenderOptions& options)
    : field_(&field), stage_(stage), options_(options), rows_(std::make_unique<Rows>()) {
  validate_options(pose, options);
  const int H = options.height;
  const int S = options.samples;
  image_ = blank_image(options);
  rows_->samples.resize(H);
  rows_->tapes.resize(H);
  ExceptionSlot errors;
#pragma omp parallel for schedule(dynamic, 1) if (options.parallel)
  for (int row = 0; row < H; ++row) errors.run([&] {
    RowSamples& rs = rows_->samples[row];
    rs = build_row(pose, options, row);
    FieldTape& tape = rows_->tapes[row];
    tape.forward(field, rs.points, stage);
    RaySlice slice;
    for (int col = 0; col < options.width; ++col) {
      gather_ray(rs, tape.samples(), col, S, slice);
      const std::size_t base = static_cast<std::size_t>(col) * S;
      const Composite c = volume_render(slice.sigma, slice.rgb,
                                        std::span<const double>(rs.delta).subspan(base, S),
                                        std::span<const double>(rs.t).subspan(base, S),
                                        options.background);
      write_pixel(image_, row, col, c);
    }
  });
  errors.rethrow();
}

RenderPass::RenderPass(RenderPass&&) noexcept = default;
RenderPass& RenderPass::operator=(RenderPass&&) noexcept = default;
RenderPass::~RenderPass() = default;

void RenderPass::backward(const ImageAdjoint& adjoint, FieldGradients& grads) const {
  const MultiScaleField& field = *field_;
  const RenderOptions& options = options_;
  check_adjoint(options, adjoint);
  check_gradient_buffer(field, grads);

  const int H = options.height;
  const int W = options.width;
  const int S = options.samples;
  const int C = field.config().channels;
  std::vector<FieldGradients> row_grads(H);
  std::vector<Eigen::MatrixXd> row_features(H);

  ExceptionSlot errors;
#pragma omp parallel for schedule(dynamic, 1) if (options.parallel)
  for (int row = 0; row < H; ++row) errors.run([&] {
    const RowSamples& rs = rows_->samples[row];
    const FieldTape& tape = rows_->tapes[row];
    const auto values = tape.samples();
    std::vector<double> d_sigma_point(rs.points.size(), 0.0);
    std::vector<Rgb> d_rgb_point(rs.points.size(), Rgb{0.0, 0.0, 0.0});
    std::vector<double> d_sigma(S);
    std::vector<Rgb> d_rgb(S);
    RaySlice slice;
    for (int col = 0; col < W; ++col) {
      gather_ray(rs, values, col, S, slice);
      const std::size_t base = static_cast<std::size_t>(col) * S;
      const auto delta = std::span<const double>(rs.delta).subspan(base, S);
      const Rgb d_color{adjoint.d_rgb.at(row, col, 0), adjoint.d_rgb.at(row, col, 1),
                        adjoint.d_rgb.at(row, col, 2)};
      const double d_opacity = adjoint.d_opacity.empty()
                                   ? 0.0
                                   : adjoint.d_opacity[static_cast<std::size_t>(row) * W + col];
      volume_render_backward(slice.sigma, slice.rgb, delta, options.background, d_color, d_opacity,
                             d_sigma, d_rgb);
      for (int i = 0; i < S; ++i) {
        const int p = rs.point[base + i];
        if (p < 0) continue;
        d_sigma_point[p] = d_sigma[i];
        d_rgb_point[p] = d_rgb[i];
      }
    }
    row_grads[row] = decoder_gradient_buffer(field);
    tape.backward_decoder(field, d_sigma_point, d_rgb_point, row_grads[row], row_features[row]);
  });
  errors.rethrow();

  std::size_t total = 0;
  for (const auto& rs : rows_->samples) total += rs.points.size();
  std::vector<Vec3> points;
  points.reserve(total);
  Eigen::MatrixXd d_features(C, static_cast<Eigen::Index>(total));
  Eigen::Index offset = 0;
  for (int row = 0; row < H; ++row) {
    for (std::size_t t = 0; t < grads.tensors.size(); ++t) {
      const auto& src = row_grads[row].tensors[t];
      auto& dst = grads.tensors[t];
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
    const auto& pts = rows_->samples[row].points;
    points.insert(points.end(), pts.begin(), pts.end());
    const Eigen::Index n = row_features[row].cols();
    if (n > 0) d_features.middleCols(offset, n) = row_features[row];
    offset += n;
  }
  if (options.parallel) {
    scatter_feature_adjoints_parallel(field, points, d_features, stage_, grads);
  } else {
    scatter_feature_adjoints(field, points, d_features, stage_, grads);
  }
}

namespace {

// Forward and reverse pass row by row, each row's tape consumed while it is
// still in cache. `pixel_adjoint(row, col, composite, d_rgb, d_opacity)`
// supplies the loss adjoint of each pixel.
template <class PixelAdjoint>
RenderedImage fused_backward(const MultiScaleField& field, const CameraPose& pose, int stage,
                             const RenderOptions& options, PixelAdjoint&& pixel_adjoint,
                             FieldGradients& grads) {
  const int H = options.height;
  const int W = options.width;
  const int S = options.samples;
  const int C = field.config().channels;
  RenderedImage img = blank_image(options);
  std::vector<FieldGradients> row_grads(H);
  std::vector<std::vector<Vec3>> row_points(H);
  std::vector<Eigen::MatrixXd> row_features(H);

  ExceptionSlot errors;
#pragma omp parallel for schedule(dynamic, 1) if (options.parallel)
  for (int row = 0; row < H; ++row) errors.run([&] {
    RowSamples rs = build_row(pose, options, row);
    FieldTape tape;
    tape.forward(field, rs.points, stage);
    const auto values = tape.samples();

    std::vector<double> d_sigma_point(rs.points.size(), 0.0);
    std::vector<Rgb> d_rgb_point(rs.points.size(), Rgb{0.0, 0.0, 0.0});
    std::vector<double> d_sigma(S);
    std::vector<Rgb> d_rgb(S);
    RaySlice slice;
    for (int col = 0; col < W; ++col) {
      gather_ray(rs, values, col, S, slice);
      const std::size_t base = static_cast<std::size_t>(col) * S;
      const auto delta = std::span<const double>(rs.delta).subspan(base, S);
      const Composite c = volume_render(slice.sigma, slice.rgb, delta,
                                        std::span<const double>(rs.t).subspan(base, S),
                                        options.background);
      write_pixel(img, row, col, c);

      Rgb d_color{0.0, 0.0, 0.0};
      double d_opacity = 0.0;
      pixel_adjoint(row, col, c, d_color, d_opacity);
      volume_render_backward(slice.sigma, slice.rgb, delta, options.background, d_color, d_opacity,
                             d_sigma, d_rgb);
      for (int i = 0; i < S; ++i) {
        const int p = rs.point[base + i];
        if (p < 0) continue;
        d_sigma_point[p] = d_sigma[i];
        d_rgb_point[p] = d_rgb[i];
      }
    }
    row_grads[row] = decoder_gradient_buffer(field);
    tape.backward_decoder(field, d_sigma_point, d_rgb_point, row_grads[row], row_features[row]);
    row_points[row] = std::move(rs.points);
  });
  errors.rethrow();

  std::size_t total = 0;
  for (const auto& pts : row_points) total += pts.size();
  std::vector<Vec3> points;
  points.reserve(total);
  Eigen::MatrixXd d_features(C, static_cast<Eigen::Index>(total));
  Eigen::Index offset = 0;
  for (int row = 0; row < H; ++row) {
    for (std::size_t t = 0; t < grads.tensors.size(); ++t) {
      const auto& src = row_grads[row].tensors[t];
      auto& dst = grads.tensors[t];
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
    points.insert(points.end(), row_points[row].begin(), row_points[row].end());
    const Eigen::Index n = row_features[row].cols();
    if (n > 0) d_features.middleCols(offset, n) = row_features[row];
    offset += n;
  }
  if (options.parallel) {
    scatter_feature_adjoints_parallel(field, points, d_features, stage, grads);
  } else {
    scatter_feature_adjoints(field, points, d_features, stage, grads);
  }
  return img;
}

}  // namespace

RenderedImage render_backward(const MultiScaleField& field, const CameraPose& pose, int stage,
                              const RenderOptions& options, const ImageAdjoint& adjoint,
                              FieldGradients& grads) {
  validate_options(pose, options);
  check_adjoint(options, adjoint);
  check_gradient_buffer(field, grads);
  const int W = options.width;
  return fused_backward(
      field, pose, stage, options,
      [&](int row, int col, const Composite&, Rgb& d_color, double& d_opacity) {
        for (int k = 0; k < 3; ++k) d_color[k] = adjoint.d_rgb.at(row, col, k);
        if (!adjoint.d_opacity.empty()) d_opacity = adjoint.d_opacity[static_cast<std::size_t>(row) * W + col];
      },
      grads);
}

RenderedImage render_backward(const MultiScaleField& field, const CameraPose& pose, int stage,
                              const RenderOptions& options, const PixelAdjointFn& pixel_adjoint,
                              FieldGradients& grads) {
  validate_options(pose, options);
  check_gradient_buffer(field, grads);
  return fused_backward(field, pose, stage, options, pixel_adjoint, grads);
}

}  // namespace mtn

#pragma once

// Image rendering and its reverse pass. Each image row is an independent
// work chunk; with `parallel` set, rows are distributed over OpenMP threads.
// Gradient contributions are reduced in row order, so results are
// bit-identical for any thread count.

#include "mtn/camera.hpp"
#include "mtn/field.hpp"
#include "mtn/image.hpp"
#include "mtn/volume_render.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace mtn {

struct RenderOptions {
  int width = 64;
  int height = 64;
  int samples = 64;
  bool stratified = true;
  std::uint64_t seed = 0;
  Rgb background{1.0, 1.0, 1.0};
  bool parallel = true;
};

struct RenderedImage {
  int width = 0;
  int height = 0;
  Image rgb;
  std::vector<double> opacity;  // H x W
  std::vector<double> depth;    // H x W
};

/// Anything that maps points to density and color.
class RadianceSource {
 public:
  virtual ~RadianceSource() = default;
  /// Evaluates every point; points outside [-1, 1]^3 must yield sigma = 0.
  virtual void evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const = 0;
};

/// A field evaluated at a fixed stage.
class FieldSource final : public RadianceSource {
 public:
  FieldSource(const MultiScaleField& field, int stage) : field_(field), stage_(stage) {}
  void evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const override;

 private:
  const MultiScaleField& field_;
  int stage_;
};

/// Jitter seed for the samples of ray `index`.
std::uint64_t ray_seed(std::uint64_t render_seed, std::size_t index);

RenderedImage render_source(const RadianceSource& source, const CameraPose& pose,
                            const RenderOptions& options);

RenderedImage render_image(const MultiScaleField& field, const CameraPose& pose, int stage,
                           const RenderOptions& options);

/// Adjoint of a scalar loss with respect to a rendered image. An empty
/// `d_opacity` means no opacity term.
struct ImageAdjoint {
  Image d_rgb;
  std::vector<double> d_opacity;
};

/// A recorded render of a field: the image plus everything its reverse pass
/// needs, so a loss can look at the image before gradients are taken.
class RenderPass {
 public:
  RenderPass(const MultiScaleField& field, const CameraPose& pose, int stage,
             const RenderOptions& options);
  RenderPass(RenderPass&&) noexcept;
  RenderPass& operator=(RenderPass&&) noexcept;
  ~RenderPass();

  const RenderedImage& image() const { return image_; }
  /// Adds dLoss/dTheta into `grads`. May be called more than once; throws
  /// UsageError if the field changed since the forward pass.
  void backward(const ImageAdjoint& adjoint, FieldGradients& grads) const;

 private:
  struct Rows;
  const MultiScaleField* field_;
  int stage_;
  RenderOptions options_;
  RenderedImage image_;
  std::unique_ptr<Rows> rows_;
};

/// Renders (identically to render_image) and accumulates dLoss/dTheta
/// into `grads`. Returns the image it rendered.
RenderedImage render_backward(const MultiScaleField& field, const CameraPose& pose, int stage,
                              const RenderOptions& options, const ImageAdjoint& adjoint,
                              FieldGradients& grads);

/// Per-pixel loss adjoint: given the composited pixel, writes dLoss/dRgb and
/// dLoss/dOpacity. Called once per pixel, possibly from several threads.
using PixelAdjointFn =
    std::function<void(int row, int col, const Composite& pixel, Rgb& d_rgb, double& d_opacity)>;

/// Single-pass variant for losses that are a sum of per-pixel terms.
RenderedImage render_backward(const MultiScaleField& field, const CameraPose& pose, int stage,
                              const RenderOptions& options, const PixelAdjointFn& pixel_adjoint,
                              FieldGradients& grads);

}  // namespace mtn

#pragma once

// Serial scalar reference implementation of rendering and its gradient.
// One ray at a time, one point at a time, explicit loops for the decoder.
// Kept for testing the batched/parallel kernels and for benchmarking.

#include "mtn/renderer.hpp"

namespace mtn::reference {

/// Adds the parameter gradient of one field evaluation at p.
void point_backward(const MultiScaleField& field, const Vec3& p, int stage, double d_sigma,
                    const Rgb& d_rgb, FieldGradients& grads);

RenderedImage render_image(const MultiScaleField& field, const CameraPose& pose, int stage,
                           const RenderOptions& options);

RenderedImage render_backward(const MultiScaleField& field, const CameraPose& pose, int stage,
                              const RenderOptions& options, const ImageAdjoint& adjoint,
                              FieldGradients& grads);

}  // namespace mtn::reference

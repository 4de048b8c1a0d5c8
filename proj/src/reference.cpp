#include "mtn/reference.hpp"

#include "mtn/volume_render.hpp"

#include <cmath>

namespace mtn::reference {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct RaySamplesAt {
  RaySamples samples;
  std::vector<Vec3> points;
  std::vector<bool> inside;
};

RaySamplesAt ray_samples(const CameraPose& pose, const RenderOptions& options, int row, int col) {
  RaySamplesAt out;
  const Ray ray = generate_ray(pose, options.width, options.height, row, col);
  const int S = options.samples;
  if (!ray.hits()) {
    out.samples.t.assign(S, 0.0);
    out.samples.delta.assign(S, 0.0);
    out.points.assign(S, Vec3::Zero());
    out.inside.assign(S, false);
    return out;
  }
  const std::size_t index = static_cast<std::size_t>(row) * options.width + col;
  out.samples = sample_along_ray(ray, S, ray_seed(options.seed, index), options.stratified);
  for (double t : out.samples.t) {
    out.points.push_back(ray.at(t));
    out.inside.push_back(inside_domain(out.points.back()));
  }
  return out;
}

}  // namespace

void point_backward(const MultiScaleField& field, const Vec3& p, int stage, double d_sigma,
                    const Rgb& d_rgb, FieldGradients& grads) {
  if (!inside_domain(p)) return;
  const auto& layers = field.decoder().layers;
  const int C = field.config().channels;

  const std::vector<double> h = fuse_features(field, p, stage);
  std::vector<std::vector<double>> inputs{field.encode(h)};
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& w = layers[l].weight;
    std::vector<double> z(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index o = 0; o < w.rows(); ++o) {
      double acc = layers[l].bias[o];
      for (Eigen::Index i = 0; i < w.cols(); ++i) acc += w(o, i) * inputs[l][i];
      z[o] = l + 1 < layers.size() ? std::max(acc, 0.0) : acc;
    }
    inputs.push_back(std::move(z));
  }
  const std::vector<double>& raw = inputs.back();

  std::vector<double> d_z(4);
  d_z[0] = d_sigma * sigmoid(raw[0] + field.density_bias(p));
  for (int c = 0; c < 3; ++c) {
    const double s = sigmoid(raw[1 + c]);
    d_z[1 + c] = d_rgb[c] * s * (1.0 - s);
  }
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& w = layers[l].weight;
    auto& gw = grads.tensors[MultiScaleField::decoder_weight_tensor(l)];
    auto& gb = grads.tensors[MultiScaleField::decoder_bias_tensor(l)];
    const auto& a = inputs[l];
    std::vector<double> d_a(static_cast<std::size_t>(w.cols()), 0.0);
    for (Eigen::Index o = 0; o < w.rows(); ++o) {
      gb[o] += d_z[o];
      for (Eigen::Index i = 0; i < w.cols(); ++i) {
        gw[static_cast<std::size_t>(o + i * w.rows())] += d_z[o] * a[i];
        d_a[i] += w(o, i) * d_z[o];
      }
    }
    if (l > 0) {
      for (std::size_t i = 0; i < d_a.size(); ++i) {
        if (a[i] <= 0.0) d_a[i] = 0.0;
      }
    }
    d_z = std::move(d_a);
  }

  std::vector<double> d_h(C, 0.0);
  field.encode_backward(h, d_z, d_h);

  for (int level = 1; level <= std::min(stage, kNumPlaneLevels); ++level) {
    for (int o = 0; o < 3; ++o) {
      const auto orientation = static_cast<PlaneOrientation>(o);
      const FeaturePlane& plane = field.plane(level, orientation);
      if (plane.frozen) continue;
      const auto uv = plane_coords(orientation, p);
      const BilinearStencil st = bilinear_stencil(plane.resolution, uv[0], uv[1]);
      auto& g = grads.tensors[MultiScaleField::plane_tensor(level, orientation)];
      for (int k = 0; k < 4; ++k) {
        for (int c = 0; c < C; ++c) {
          g[static_cast<std::size_t>(st.texel[k]) * C + c] += st.weight[k] * d_h[c];
        }
      }
    }
  }
  if (stage >= kNumLevels) {
    for (const FeatureVectorAxis& axis : field.trivector()) {
      if (axis.frozen) continue;
      const LinearStencil st = linear_stencil(axis.resolution, p[static_cast<int>(axis.axis)]);
      auto& g = grads.tensors[MultiScaleField::axis_tensor(axis.axis)];
      for (int k = 0; k < 2; ++k) {
        for (int c = 0; c < C; ++c) {
          g[static_cast<std::size_t>(st.index[k]) * C + c] += st.weight[k] * d_h[c];
        }
      }
    }
  }
}

RenderedImage render_image(const MultiScaleField& field, const CameraPose& pose, int stage,
                           const RenderOptions& options) {
  pose.validate();
  RenderedImage img;
  img.width = options.width;
  img.height = options.height;
  img.rgb = Image(options.width, options.height, 3);
  img.opacity.assign(static_cast<std::size_t>(options.width) * options.height, 0.0);
  img.depth = img.opacity;
  const int S = options.samples;
  for (int row = 0; row < options.height; ++row) {
    for (int col = 0; col < options.width; ++col) {
      const RaySamplesAt rs = ray_samples(pose, options, row, col);
      std::vector<double> sigma(S, 0.0);
      std::vector<Rgb> rgb(S, Rgb{0.0, 0.0, 0.0});
      for (int i = 0; i < S; ++i) {
        if (!rs.inside[i]) continue;
        const FieldSample s = field_forward(field, rs.points[i], stage);
        sigma[i] = s.sigma;
        rgb[i] = s.rgb;
      }
      const Composite c = volume_render(sigma, rgb, rs.samples.delta, rs.samples.t, options.background);
      const std::size_t px = static_cast<std::size_t>(row) * options.width + col;
      for (int k = 0; k < 3; ++k) img.rgb.at(row, col, k) = c.rgb[k];
      img.opacity[px] = c.opacity;
      img.depth[px] = c.depth;
    }
  }
  return img;
}

RenderedImage render_backward(const MultiScaleField& field, const CameraPose& pose, int stage,
                              const RenderOptions& options, const ImageAdjoint& adjoint,
                              FieldGradients& grads) {
  RenderedImage img = reference::render_image(field, pose, stage, options);
  const int S = options.samples;
  std::vector<double> d_sigma(S);
  std::vector<Rgb> d_rgb(S);
  for (int row = 0; row < options.height; ++row) {
    for (int col = 0; col < options.width; ++col) {
      const RaySamplesAt rs = ray_samples(pose, options, row, col);
      std::vector<double> sigma(S, 0.0);
      std::vector<Rgb> rgb(S, Rgb{0.0, 0.0, 0.0});
      for (int i = 0; i < S; ++i) {
        if (!rs.inside[i]) continue;
        const FieldSample s = field_forward(field, rs.points[i], stage);
        sigma[i] = s.sigma;
        rgb[i] = s.rgb;
      }
      const std::size_t px = static_cast<std::size_t>(row) * options.width + col;
      const Rgb d_color{adjoint.d_rgb.at(row, col, 0), adjoint.d_rgb.at(row, col, 1),
                        adjoint.d_rgb.at(row, col, 2)};
      const double d_opacity = adjoint.d_opacity.empty() ? 0.0 : adjoint.d_opacity[px];
      volume_render_backward(sigma, rgb, rs.samples.delta, options.background, d_color, d_opacity,
                             d_sigma, d_rgb);
      for (int i = 0; i < S; ++i) {
        if (rs.inside[i]) point_backward(field, rs.points[i], stage, d_sigma[i], d_rgb[i], grads);
      }
    }
  }
  return img;
}

}  // namespace mtn::reference

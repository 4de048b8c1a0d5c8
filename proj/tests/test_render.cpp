#include "mtn/camera.hpp"
#include "mtn/reference.hpp"
#include "mtn/renderer.hpp"
#include "mtn/volume_render.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <omp.h>

#include <cmath>
#include <random>

using namespace mtn;

namespace {

// Opaque sphere of radius r at the origin with a fixed color.
class BallSource final : public RadianceSource {
 public:
  explicit BallSource(double r) : r_(r) {}
  void evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const override {
    for (std::size_t i = 0; i < points.size(); ++i) {
      out[i] = {};
      if (inside_domain(points[i]) && points[i].norm() < r_) out[i] = {200.0, {0.2, 0.4, 0.6}};
    }
  }

 private:
  double r_;
};

class EmptySource final : public RadianceSource {
 public:
  void evaluate(std::span<const Vec3>, std::span<FieldSample> out) const override {
    std::fill(out.begin(), out.end(), FieldSample{});
  }
};

RenderOptions small_options() {
  RenderOptions o;
  o.width = 6;
  o.height = 5;
  o.samples = 12;
  o.seed = 42;
  return o;
}

}  // namespace

TEST_CASE("sample_camera stays within the pose distribution") {
  std::mt19937_64 rng(1);
  double az_lo = 1e9, az_hi = -1e9, po_lo = 1e9, po_hi = -1e9, fv_lo = 1e9, fv_hi = -1e9;
  double r_lo = 1e9, r_hi = -1e9;
  for (int i = 0; i < 10000; ++i) {
    const CameraPose pose = sample_camera(rng, {3.0, 3.5});
    az_lo = std::min(az_lo, pose.azimuth_deg);
    az_hi = std::max(az_hi, pose.azimuth_deg);
    po_lo = std::min(po_lo, pose.polar_deg);
    po_hi = std::max(po_hi, pose.polar_deg);
    fv_lo = std::min(fv_lo, pose.fovy_deg);
    fv_hi = std::max(fv_hi, pose.fovy_deg);
    r_lo = std::min(r_lo, pose.radius);
    r_hi = std::max(r_hi, pose.radius);
  }
  CHECK(az_lo >= -180.0);
  CHECK(az_hi <= 180.0);
  CHECK(po_lo >= 45.0);
  CHECK(po_hi <= 105.0);
  CHECK(fv_lo >= 10.0);
  CHECK(fv_hi <= 30.0);
  CHECK(r_lo >= 3.0);
  CHECK(r_hi <= 3.5);
  // the ranges are actually covered
  CHECK(az_hi - az_lo > 350.0);
  CHECK(po_hi - po_lo > 58.0);
  CHECK(fv_hi - fv_lo > 19.0);
  CHECK(r_hi - r_lo > 0.48);
}

TEST_CASE("sample_camera is deterministic and validates the interval") {
  std::mt19937_64 a(99), b(99);
  for (int i = 0; i < 10; ++i) {
    const CameraPose p = sample_camera(a, {1.8, 2.1});
    const CameraPose q = sample_camera(b, {1.8, 2.1});
    CHECK(p.azimuth_deg == q.azimuth_deg);
    CHECK(p.polar_deg == q.polar_deg);
    CHECK(p.fovy_deg == q.fovy_deg);
    CHECK(p.radius == q.radius);
  }
  CHECK_THROWS_AS(sample_camera(a, {0.0, 1.0}), ConfigError);
  CHECK_THROWS_AS(sample_camera(a, {2.0, 1.0}), ConfigError);
  CHECK_NOTHROW(sample_camera(a, {2.0, 2.0}));
}

TEST_CASE("camera pose validation") {
  CameraPose pose;
  CHECK_NOTHROW(pose.validate());
  pose.polar_deg = 30.0;
  CHECK_THROWS_AS(pose.validate(), ContractError);
  pose = {};
  pose.fovy_deg = 40.0;
  CHECK_THROWS_AS(pose.validate(), ContractError);
  pose = {};
  pose.radius = 0.0;
  CHECK_THROWS_AS(pose.validate(), ContractError);
  pose = {};
  pose.azimuth_deg = 181.0;
  CHECK_THROWS_AS(pose.validate(), ContractError);
}

TEST_CASE("camera position uses +z up and polar angle from +z") {
  CameraPose pose;
  pose.azimuth_deg = 90.0;
  pose.polar_deg = 90.0;
  pose.radius = 2.0;
  const Vec3 p = pose.position();
  CHECK(p.x() == doctest::Approx(0.0).scale(1.0));
  CHECK(p.y() == doctest::Approx(2.0));
  CHECK(p.z() == doctest::Approx(0.0).scale(1.0));
  pose.polar_deg = 45.0;
  CHECK(pose.position().z() == doctest::Approx(2.0 * std::cos(std::numbers::pi / 4)));
}

TEST_CASE("generate_rays") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    CameraPose pose = sample_camera(rng, {2.0, 4.0});
    const int W = 7, H = 5;  // odd sizes have a central pixel
    const auto rays = generate_rays(pose, W, H);
    REQUIRE(rays.size() == static_cast<std::size_t>(W * H));
    for (const Ray& r : rays) {
      CHECK(std::abs(r.direction.norm() - 1.0) < 1e-9);
      CHECK(r.t_near >= 0.0);
      CHECK((r.origin - pose.position()).norm() < 1e-12);
    }
    const Ray& center = rays[(H / 2) * W + W / 2];
    const Vec3 closest = center.origin - center.origin.dot(center.direction) * center.direction;
    CHECK(closest.norm() < 1e-9);
    CHECK(center.t_near == doctest::Approx(pose.radius - std::sqrt(3.0)).epsilon(1e-12));
    CHECK(center.t_far == doctest::Approx(pose.radius + std::sqrt(3.0)).epsilon(1e-12));
  }
  CameraPose pose;
  pose.radius = 3.0;
  const Ray c = generate_ray(pose, 1, 1, 0, 0);
  CHECK(c.t_near == doctest::Approx(3.0 - std::sqrt(3.0)));
  CHECK(c.t_far == doctest::Approx(3.0 + std::sqrt(3.0)));
}

TEST_CASE("generate_ray: image orientation") {
  // Camera on +x looking at the origin; top rows look up (+z), the first
  // column looks toward -y... i.e. image right is forward x up.
  CameraPose pose;
  const Ray top = generate_ray(pose, 9, 9, 0, 4);
  const Ray bottom = generate_ray(pose, 9, 9, 8, 4);
  CHECK(top.direction.z() > 0.0);
  CHECK(bottom.direction.z() < 0.0);
  const Ray left = generate_ray(pose, 9, 9, 4, 0);
  const Ray right = generate_ray(pose, 9, 9, 4, 8);
  CHECK(left.direction.y() * right.direction.y() < 0.0);
  // vertical half angle equals fovy / 2 at the image edge
  const Ray edge = generate_ray(pose, 1, 2, 0, 0);
  const double angle = std::atan2(edge.direction.z(), -edge.direction.x());
  CHECK(angle == doctest::Approx(std::atan(0.5 * std::tan(pose.fovy_deg / 2 * std::numbers::pi / 180))));
}

TEST_CASE("rays that miss the bounding sphere are empty") {
  CameraPose pose;
  pose.radius = 100.0;
  pose.fovy_deg = 30.0;
  const Ray corner = generate_ray(pose, 64, 64, 0, 0);
  CHECK_FALSE(corner.hits());
}

TEST_CASE("sample_along_ray") {
  Ray ray;
  ray.t_near = 0.0;
  ray.t_far = 1.0;
  SUBCASE("midpoints") {
    const RaySamples s = sample_along_ray(ray, 4, 0, false);
    REQUIRE(s.t.size() == 4);
    CHECK(s.t[0] == doctest::Approx(0.125));
    CHECK(s.t[1] == doctest::Approx(0.375));
    CHECK(s.t[2] == doctest::Approx(0.625));
    CHECK(s.t[3] == doctest::Approx(0.875));
    CHECK(s.delta[3] == doctest::Approx(0.125));
  }
  SUBCASE("stratified: one draw per bin, telescoping deltas, reproducible") {
    ray.t_near = 1.3;
    ray.t_far = 4.7;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const RaySamples s = sample_along_ray(ray, 16, seed, true);
      const double bin = (ray.t_far - ray.t_near) / 16;
      double sum = 0.0;
      for (int i = 0; i < 16; ++i) {
        CHECK(s.t[i] >= ray.t_near + i * bin - 1e-12);
        CHECK(s.t[i] <= ray.t_near + (i + 1) * bin + 1e-12);
        CHECK(s.delta[i] >= 0.0);
        sum += s.delta[i];
      }
      CHECK(std::abs(sum - (ray.t_far - s.t[0])) < 1e-9);
      const RaySamples again = sample_along_ray(ray, 16, seed, true);
      CHECK(again.t == s.t);
    }
    CHECK(sample_along_ray(ray, 16, 1, true).t != sample_along_ray(ray, 16, 2, true).t);
  }
  CHECK_THROWS_AS(sample_along_ray(ray, 0, 0, false), ContractError);
}

TEST_CASE("volume_render examples") {
  const Rgb bg{0.1, 0.7, 0.3};
  SUBCASE("empty space") {
    const std::vector<double> sigma(8, 0.0), delta(8, 0.1), t(8, 1.0);
    const std::vector<Rgb> rgb(8, Rgb{1, 0, 0});
    const Composite c = volume_render(sigma, rgb, delta, t, bg);
    CHECK(c.rgb == bg);
    CHECK(c.opacity == 0.0);
  }
  SUBCASE("opaque first sample") {
    const std::vector<double> sigma{1e6, 3.0, 3.0}, delta{1.0, 1.0, 1.0}, t{0.0, 1.0, 2.0};
    const std::vector<Rgb> rgb{Rgb{0.9, 0.2, 0.4}, Rgb{0, 1, 0}, Rgb{0, 0, 1}};
    const Composite c = volume_render(sigma, rgb, delta, t, bg);
    for (int k = 0; k < 3; ++k) CHECK(c.rgb[k] == doctest::Approx(rgb[0][k]));
    CHECK(c.opacity == doctest::Approx(1.0));
    CHECK(c.depth == doctest::Approx(0.0).scale(1.0));
  }
  SUBCASE("homogeneous slab") {
    const int n = 256;
    const std::vector<double> sigma(n, 2.0), delta(n, 1.0 / n);
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = (i + 0.5) / n;
    const std::vector<Rgb> rgb(n, Rgb{0.5, 0.5, 0.5});
    const Composite c = volume_render(sigma, rgb, delta, t, bg);
    CHECK(std::abs(c.opacity - (1.0 - std::exp(-2.0))) <= 1e-3);
  }
  SUBCASE("contract violations") {
    const std::vector<Rgb> rgb(2, Rgb{0, 0, 0});
    const std::vector<double> t{0, 1};
    CHECK_THROWS_AS(volume_render(std::vector<double>{1.0, -1.0}, rgb, std::vector<double>{1, 1}, t, bg),
                    ContractError);
    CHECK_THROWS_AS(volume_render(std::vector<double>{1.0, 1.0}, rgb, std::vector<double>{1, -1}, t, bg),
                    ContractError);
    CHECK_THROWS_AS(volume_render(std::vector<double>{1.0, NAN}, rgb, std::vector<double>{1, 1}, t, bg),
                    ContractError);
  }
}

TEST_CASE("property: compositing weights") {
  std::mt19937_64 rng(3);
  std::exponential_distribution<double> ex(0.5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 40);
    std::vector<double> sigma(n), delta(n), t(n);
    std::vector<Rgb> rgb(n);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      sigma[i] = trial % 5 == 0 ? 1e4 * ex(rng) : ex(rng);
      delta[i] = 0.2 * u(rng);
      acc += delta[i];
      t[i] = acc;
      rgb[i] = {u(rng), u(rng), u(rng)};
    }
    const auto w = composite_weights(sigma, delta);
    double sum = 0.0, transmittance = 1.0;
    for (int i = 0; i < n; ++i) {
      CHECK(w[i] >= 0.0);
      CHECK(w[i] <= 1.0);
      sum += w[i];
      transmittance *= std::exp(-sigma[i] * delta[i]);
    }
    CHECK(std::abs(sum - (1.0 - transmittance)) < 1e-12);
    const Composite c = volume_render(sigma, rgb, delta, t, Rgb{u(rng), u(rng), u(rng)});
    CHECK(c.opacity >= 0.0);
    CHECK(c.opacity <= 1.0);
    for (double x : c.rgb) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0 + 1e-12);
    }
    CHECK(c.depth >= 0.0);
  }
}

TEST_CASE("property: splitting a sample in two leaves the composite unchanged") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 10;
    std::vector<double> sigma(n), delta(n), t(n);
    std::vector<Rgb> rgb(n);
    for (int i = 0; i < n; ++i) {
      sigma[i] = 5 * u(rng);
      delta[i] = 0.1 + 0.1 * u(rng);
      t[i] = i;
      rgb[i] = {u(rng), u(rng), u(rng)};
    }
    const int k = static_cast<int>(rng() % n);
    auto s2 = sigma, d2 = delta, t2 = t;
    auto c2 = rgb;
    d2[k] = delta[k] / 2;
    s2.insert(s2.begin() + k, sigma[k]);
    d2.insert(d2.begin() + k, delta[k] / 2);
    t2.insert(t2.begin() + k, t[k]);
    c2.insert(c2.begin() + k, rgb[k]);
    const Rgb bg{u(rng), u(rng), u(rng)};
    const Composite a = volume_render(sigma, rgb, delta, t, bg);
    const Composite b = volume_render(s2, c2, d2, t2, bg);
    for (int c = 0; c < 3; ++c) CHECK(std::abs(a.rgb[c] - b.rgb[c]) < 1e-12);
    CHECK(std::abs(a.opacity - b.opacity) < 1e-12);
  }
}

TEST_CASE("volume_render_backward matches central differences") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  const int n = 9;
  std::vector<double> sigma(n), delta(n), t(n);
  std::vector<Rgb> rgb(n);
  for (int i = 0; i < n; ++i) {
    sigma[i] = 3 * u(rng);
    delta[i] = 0.05 + 0.2 * u(rng);
    t[i] = i;
    rgb[i] = {u(rng), u(rng), u(rng)};
  }
  const Rgb bg{0.3, 0.6, 0.9};
  const Rgb dc{0.7, -1.2, 0.4};
  const double dop = -0.8;
  auto loss = [&](const std::vector<double>& s, const std::vector<Rgb>& c) {
    const Composite out = volume_render(s, c, delta, t, bg);
    return dc[0] * out.rgb[0] + dc[1] * out.rgb[1] + dc[2] * out.rgb[2] + dop * out.opacity;
  };
  std::vector<double> ds(n);
  std::vector<Rgb> drgb(n);
  volume_render_backward(sigma, rgb, delta, bg, dc, dop, ds, drgb);
  const double h = 1e-6;
  for (int i = 0; i < n; ++i) {
    auto up = sigma, down = sigma;
    up[i] += h;
    down[i] -= h;
    CHECK(test::rel_error(ds[i], (loss(up, rgb) - loss(down, rgb)) / (2 * h)) < 1e-6);
    for (int c = 0; c < 3; ++c) {
      auto cu = rgb, cd = rgb;
      cu[i][c] += h;
      cd[i][c] -= h;
      CHECK(test::rel_error(drgb[i][c], (loss(sigma, cu) - loss(sigma, cd)) / (2 * h)) < 1e-6);
    }
  }
}

TEST_CASE("render_source: empty field gives the background") {
  RenderOptions o = small_options();
  o.background = {0.25, 0.5, 0.75};
  const RenderedImage img = render_source(EmptySource(), CameraPose{}, o);
  for (int r = 0; r < o.height; ++r) {
    for (int c = 0; c < o.width; ++c) {
      for (int k = 0; k < 3; ++k) CHECK(img.rgb.at(r, c, k) == o.background[k]);
      CHECK(img.opacity[r * o.width + c] == 0.0);
    }
  }
}

TEST_CASE("render_source: opaque centered sphere occludes the center only") {
  RenderOptions o;
  o.width = 33;
  o.height = 33;
  o.samples = 128;
  CameraPose pose;
  pose.radius = 3.0;
  pose.fovy_deg = 30.0;
  const RenderedImage img = render_source(BallSource(0.5), pose, o);
  CHECK(img.opacity[16 * 33 + 16] > 0.999);
  for (int idx : {0, 32, 32 * 33, 33 * 33 - 1}) CHECK(img.opacity[idx] < 1e-9);
  // front surface of the sphere is at depth R - r
  CHECK(img.depth[16 * 33 + 16] == doctest::Approx(2.5).epsilon(0.02));
  for (int k = 0; k < 3; ++k) CHECK(img.rgb.at(16, 16, k) == doctest::Approx(0.2 + 0.2 * k).epsilon(1e-3));
}

TEST_CASE("render_image: zero-density field is the background") {
  FieldConfig config = test::small_config();
  MultiScaleField field = MultiScaleField::zeros(config);
  // drive sigma to ~0: softplus(-60)
  field.decoder().layers.back().bias[0] = -60.0;
  const RenderedImage img = render_image(field, CameraPose{}, 4, small_options());
  for (double x : img.rgb.data) CHECK(x == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("render_image agrees with the reference and is deterministic") {
  const MultiScaleField field = test::random_field(test::small_config(), 5);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 3; ++trial) {
    const CameraPose pose = sample_camera(rng, {1.8, 3.5});
    RenderOptions o = small_options();
    o.seed = trial;
    const RenderedImage a = render_image(field, pose, 1 + trial, o);
    const RenderedImage b = reference::render_image(field, pose, 1 + trial, o);
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
      CHECK(a.rgb.data[i] == doctest::Approx(b.rgb.data[i]).epsilon(1e-12));
    }
    for (std::size_t i = 0; i < a.opacity.size(); ++i) {
      CHECK(a.opacity[i] == doctest::Approx(b.opacity[i]).epsilon(1e-12));
      CHECK(a.opacity[i] >= 0.0);
      CHECK(a.opacity[i] <= 1.0);
    }
    const RenderedImage again = render_image(field, pose, 1 + trial, o);
    CHECK(again.rgb.data == a.rgb.data);
    o.parallel = false;
    CHECK(render_image(field, pose, 1 + trial, o).rgb.data == a.rgb.data);
  }
}

TEST_CASE("render_backward: pixel gradients match central differences") {
  FieldConfig config = test::small_config();
  config.density_blob = true;
  MultiScaleField field = test::random_field(config, 6);
  CameraPose pose;
  pose.azimuth_deg = 30.0;
  pose.polar_deg = 70.0;
  pose.radius = 2.2;
  RenderOptions o = small_options();
  o.background = {0.2, 0.3, 0.4};

  std::mt19937_64 rng(6);
  std::normal_distribution<double> g;
  ImageAdjoint adj{Image(o.width, o.height, 3), std::vector<double>(o.width * o.height)};
  for (double& x : adj.d_rgb.data) x = g(rng);
  for (double& x : adj.d_opacity) x = g(rng);
  auto loss = [&](const MultiScaleField& f) {
    const RenderedImage img = render_image(f, pose, 4, o);
    double l = 0.0;
    for (std::size_t i = 0; i < img.rgb.size(); ++i) l += adj.d_rgb.data[i] * img.rgb.data[i];
    for (std::size_t i = 0; i < img.opacity.size(); ++i) l += adj.d_opacity[i] * img.opacity[i];
    return l;
  };
  FieldGradients grads = FieldGradients::zeros_like(field);
  render_backward(field, pose, 4, o, adj, grads);

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < grads.tensors.size(); ++t) {
    for (std::size_t i = 0; i < grads.tensors[t].size(); ++i) {
      if (std::abs(grads.tensors[t][i]) > 1e-8) coords.emplace_back(t, i);
    }
  }
  REQUIRE(coords.size() >= 20);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(20);
  for (const auto& [t, i] : coords) {
    INFO("tensor " << t << " index " << i);
    CHECK(test::rel_error(grads.tensors[t][i], test::central_difference(field, t, i, loss)) <= 1e-4);
  }

  SUBCASE("reference and serial paths agree") {
    FieldGradients ref = FieldGradients::zeros_like(field);
    reference::render_backward(field, pose, 4, o, adj, ref);
    FieldGradients serial = FieldGradients::zeros_like(field);
    RenderOptions so = o;
    so.parallel = false;
    render_backward(field, pose, 4, so, adj, serial);
    CHECK(serial.tensors == grads.tensors);
    const int threads = omp_get_max_threads();
    for (int n : {2, 3, 5}) {
      omp_set_num_threads(n);
      FieldGradients many = FieldGradients::zeros_like(field);
      const RenderedImage img = render_backward(field, pose, 4, o, adj, many);
      CHECK(many.tensors == grads.tensors);
      CHECK(img.rgb.data == render_image(field, pose, 4, so).rgb.data);
    }
    omp_set_num_threads(threads);
    for (std::size_t t = 0; t < ref.tensors.size(); ++t) {
      for (std::size_t i = 0; i < ref.tensors[t].size(); ++i) {
        CHECK(grads.tensors[t][i] == doctest::Approx(ref.tensors[t][i]).epsilon(1e-9).scale(1e-6));
      }
    }
  }
}

TEST_CASE("render_backward validates its inputs") {
  const MultiScaleField field = test::random_field(test::small_config(), 1);
  const RenderOptions o = small_options();
  FieldGradients grads = FieldGradients::zeros_like(field);
  ImageAdjoint wrong{Image(o.width + 1, o.height, 3), {}};
  CHECK_THROWS_AS(render_backward(field, CameraPose{}, 4, o, wrong, grads), ContractError);
  ImageAdjoint ok{Image(o.width, o.height, 3), {}};
  FieldGradients empty;
  CHECK_THROWS_AS(render_backward(field, CameraPose{}, 4, o, ok, empty), ContractError);
  CameraPose bad;
  bad.polar_deg = 10.0;
  CHECK_THROWS_AS(render_backward(field, bad, 4, o, ok, grads), ContractError);
}

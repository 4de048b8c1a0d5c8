#include "mtn/field.hpp"
#include "mtn/field_kernels.hpp"
#include "mtn/reference.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace mtn;
using mtn::test::small_config;

namespace {

double texel_center(int i, int n) { return (i + 0.5) / n * 2.0 - 1.0; }

// Independent bilinear oracle: weights from distances to the four nearest
// texel centers, clamped at the border.
double bilinear_oracle(const FeaturePlane& plane, double u, double v, int c) {
  const int n = plane.resolution;
  auto axis = [n](double x, int& i0, int& i1, double& f) {
    const double g = std::clamp((x + 1.0) / 2.0 * n - 0.5, 0.0, n - 1.0);
    i0 = static_cast<int>(std::floor(g));
    i1 = std::min(i0 + 1, n - 1);
    f = g - i0;
  };
  int c0, c1, r0, r1;
  double fu, fv;
  axis(u, c0, c1, fu);
  axis(v, r0, r1, fv);
  return (1 - fu) * (1 - fv) * plane.at(r0, c0, c) + fu * (1 - fv) * plane.at(r0, c1, c) +
         (1 - fu) * fv * plane.at(r1, c0, c) + fu * fv * plane.at(r1, c1, c);
}

double weighted_loss(const MultiScaleField& field, const std::vector<Vec3>& points, int stage,
                     const std::vector<double>& a, const std::vector<Rgb>& b) {
  double loss = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const FieldSample s = field_forward(field, points[i], stage);
    loss += a[i] * s.sigma;
    for (int c = 0; c < 3; ++c) loss += b[i][c] * s.rgb[c];
  }
  return loss;
}

struct Adjoints {
  std::vector<Vec3> points;
  std::vector<double> d_sigma;
  std::vector<Rgb> d_rgb;
};

Adjoints random_adjoints(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Adjoints adj;
  for (std::size_t i = 0; i < n; ++i) {
    adj.points.push_back(test::random_point(rng));
    adj.d_sigma.push_back(g(rng));
    adj.d_rgb.push_back({g(rng), g(rng), g(rng)});
  }
  return adj;
}

bool tensor_is_zero(const std::vector<double>& t) {
  return std::all_of(t.begin(), t.end(), [](double x) { return x == 0.0; });
}

}  // namespace

TEST_CASE("sample_plane: constant plane reproduces the constant") {
  FeaturePlane plane(1, PlaneOrientation::kXY, 2, 3);
  std::fill(plane.texels.begin(), plane.texels.end(), 7.0);
  for (double u : {-1.0, -0.3, 0.0, 0.77, 1.0}) {
    for (double v : {-1.0, 0.2, 1.0}) {
      for (double x : sample_plane(plane, u, v)) CHECK(x == doctest::Approx(7.0).epsilon(1e-15));
    }
  }
}

TEST_CASE("sample_plane: texel centers return stored texels") {
  FeaturePlane plane(2, PlaneOrientation::kXZ, 5, 2);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& x : plane.texels) x = u(rng);
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) {
      const auto f = sample_plane(plane, texel_center(c, 5), texel_center(r, 5));
      for (int k = 0; k < 2; ++k) CHECK(f[k] == doctest::Approx(plane.at(r, c, k)).epsilon(1e-12));
    }
  }
}

TEST_CASE("sample_plane: 2x2 patch midpoint is the mean") {
  FeaturePlane plane(1, PlaneOrientation::kXY, 2, 1);
  plane.texels = {0.0, 1.0, 2.0, 3.0};
  CHECK(sample_plane(plane, 0.0, 0.0)[0] == doctest::Approx(1.5));
}

TEST_CASE("sample_plane: matches the brute-force oracle and clamps outside [-1,1]") {
  FeaturePlane plane(1, PlaneOrientation::kYZ, 7, 2);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  for (double& x : plane.texels) x = u(rng);
  std::uniform_real_distribution<double> q(-1.4, 1.4);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = q(rng);
    const double b = q(rng);
    const auto f = sample_plane(plane, a, b);
    for (int c = 0; c < 2; ++c) {
      CHECK(f[c] == doctest::Approx(bilinear_oracle(plane, a, b, c)).epsilon(1e-12));
    }
    const auto clamped = sample_plane(plane, std::clamp(a, -1.0, 1.0), std::clamp(b, -1.0, 1.0));
    CHECK(f == clamped);
  }
}

TEST_CASE("property: interpolation stays within the contributing texel range") {
  FeaturePlane plane(1, PlaneOrientation::kXY, 6, 1);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (double& x : plane.texels) x = u(rng);
  std::uniform_real_distribution<double> q(-1, 1);
  for (int trial = 0; trial < 500; ++trial) {
    const double a = q(rng);
    const double b = q(rng);
    const BilinearStencil st = bilinear_stencil(6, a, b);
    double lo = 1e300, hi = -1e300;
    double wsum = 0.0;
    for (int k = 0; k < 4; ++k) {
      CHECK(st.weight[k] >= 0.0);
      wsum += st.weight[k];
      if (st.weight[k] > 0.0) {
        lo = std::min(lo, plane.texels[st.texel[k]]);
        hi = std::max(hi, plane.texels[st.texel[k]]);
      }
    }
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-14));
    const double f = sample_plane(plane, a, b)[0];
    CHECK(f >= lo - 1e-12);
    CHECK(f <= hi + 1e-12);
  }
}

TEST_CASE("sample_trivector examples") {
  std::array<FeatureVectorAxis, 3> axes{FeatureVectorAxis(Axis::kX, 2, 1),
                                        FeatureVectorAxis(Axis::kY, 2, 1),
                                        FeatureVectorAxis(Axis::kZ, 2, 1)};
  SUBCASE("all zero") {
    CHECK(sample_trivector(axes, Vec3(0.3, -0.2, 0.9))[0] == 0.0);
  }
  SUBCASE("constant x axis") {
    axes[0].values = {2.5, 2.5};
    for (double x : {-1.0, 0.1, 1.0}) {
      CHECK(sample_trivector(axes, Vec3(x, 0.4, -0.6))[0] == doctest::Approx(2.5));
    }
  }
  SUBCASE("values {0,1} on each axis at the origin") {
    for (auto& a : axes) a.values = {0.0, 1.0};
    CHECK(sample_trivector(axes, Vec3::Zero())[0] == doctest::Approx(1.5));
  }
  SUBCASE("1-D oracle") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& a : axes) {
      a = FeatureVectorAxis(a.axis, 9, 1);
      for (double& x : a.values) x = u(rng);
    }
    for (int trial = 0; trial < 50; ++trial) {
      const Vec3 p = test::random_point(rng, 1.0);
      double expect = 0.0;
      for (int d = 0; d < 3; ++d) {
        const double g = std::clamp((p[d] + 1.0) / 2.0 * 9 - 0.5, 0.0, 8.0);
        const int i0 = static_cast<int>(std::floor(g));
        const int i1 = std::min(i0 + 1, 8);
        expect += (1 - (g - i0)) * axes[d].values[i0] + (g - i0) * axes[d].values[i1];
      }
      CHECK(sample_trivector(axes, p)[0] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("fuse_features") {
  const MultiScaleField field = test::random_field(small_config(), 21);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const Vec3 p = test::random_point(rng);
    CHECK(fuse_features(field, p, 1) == level_feature(field, 1, p));
    // f^1 + f^2 + f^3 computed level by level.
    const auto f1 = level_feature(field, 1, p);
    const auto f2 = level_feature(field, 2, p);
    const auto f3 = level_feature(field, 3, p);
    const auto h3 = fuse_features(field, p, 3);
    for (int c = 0; c < 3; ++c) CHECK(h3[c] == doctest::Approx(f1[c] + f2[c] + f3[c]).epsilon(1e-14));
    // recurrence h^m = h^{m-1} + f^m, bit for bit
    for (int m = 2; m <= 4; ++m) {
      const auto prev = fuse_features(field, p, m - 1);
      const auto fm = level_feature(field, m, p);
      const auto hm = fuse_features(field, p, m);
      for (int c = 0; c < 3; ++c) CHECK(hm[c] == prev[c] + fm[c]);
    }
  }
  const MultiScaleField zero = MultiScaleField::zeros(small_config());
  for (int m = 1; m <= 4; ++m) {
    for (double x : fuse_features(zero, Vec3(0.1, 0.2, -0.3), m)) CHECK(x == 0.0);
  }
  CHECK_THROWS_AS(fuse_features(field, Vec3::Zero(), 0), ContractError);
  CHECK_THROWS_AS(fuse_features(field, Vec3::Zero(), 5), ContractError);
}

TEST_CASE("fourier_encode") {
  SUBCASE("zero input") {
    const std::vector<double> h(4, 0.0);
    const auto e = fourier_encode(h, 2);
    REQUIRE(e.size() == 20);
    for (int c = 0; c < 4; ++c) {
      CHECK(e[c * 5 + 0] == 0.0);
      CHECK(e[c * 5 + 1] == 0.0);
      CHECK(e[c * 5 + 2] == 1.0);
      CHECK(e[c * 5 + 3] == 0.0);
      CHECK(e[c * 5 + 4] == 1.0);
    }
  }
  SUBCASE("L = 0 is the identity") {
    const std::vector<double> h{0.3, -2.0, 5.5};
    CHECK(fourier_encode(h, 0) == h);
  }
  SUBCASE("C = 1, h = 0.5, L = 1") {
    const std::vector<double> h{0.5};
    const auto e = fourier_encode(h, 1);
    REQUIRE(e.size() == 3);
    CHECK(e[0] == 0.5);
    CHECK(e[1] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(e[2]) < 1e-15);
  }
  SUBCASE("dimension is C(2L+1)") {
    std::mt19937_64 rng(9);
    for (int c = 1; c <= 5; ++c) {
      for (int l = 0; l <= 4; ++l) {
        std::vector<double> h(c);
        for (double& x : h) x = std::normal_distribution<double>()(rng);
        CHECK(fourier_encode(h, l).size() == static_cast<std::size_t>(c * (2 * l + 1)));
      }
    }
  }
  CHECK_THROWS_AS(fourier_encode(std::vector<double>{1.0}, -1), ContractError);
}

TEST_CASE("decode") {
  SUBCASE("zero decoder gives softplus(0) and gray") {
    const DecoderParams d = DecoderParams::zeros(15, 8, 2);
    const FieldSample s = decode(d, std::vector<double>(15, 0.4));
    CHECK(s.sigma == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
    for (double c : s.rgb) CHECK(c == 0.5);
  }
  SUBCASE("outputs stay in range") {
    MultiScaleField field(small_config(), 4);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 50.0);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> e(15);
      for (double& x : e) x = g(rng);
      const FieldSample s = decode(field.decoder(), e);
      CHECK(s.sigma >= 0.0);
      CHECK(std::isfinite(s.sigma));
      for (double c : s.rgb) {
        CHECK(c >= 0.0);
        CHECK(c <= 1.0);
      }
    }
  }
  SUBCASE("dimension mismatch") {
    const DecoderParams d = DecoderParams::zeros(15, 8, 2);
    CHECK_THROWS_AS(decode(d, std::vector<double>(14, 0.0)), ContractError);
  }
}

TEST_CASE("field configuration is validated at construction") {
  FieldConfig c = small_config();
  c.channels = 0;
  CHECK_THROWS_AS(MultiScaleField(c, 1), ConfigError);
  c = small_config();
  c.plane_resolution[1] = 0;
  CHECK_THROWS_AS(MultiScaleField(c, 1), ConfigError);
  c = small_config();
  c.fourier_bands = -1;
  CHECK_THROWS_AS(MultiScaleField(c, 1), ConfigError);
  c = small_config();
  c.blob_radius = 0.0;
  CHECK_THROWS_AS(MultiScaleField(c, 1), ConfigError);
}

TEST_CASE("default configuration shapes") {
  const FieldConfig c;
  const MultiScaleField field = MultiScaleField::zeros(c);
  CHECK(field.plane(1, PlaneOrientation::kXY).resolution == 64);
  CHECK(field.plane(2, PlaneOrientation::kXZ).resolution == 128);
  CHECK(field.plane(3, PlaneOrientation::kYZ).resolution == 256);
  for (const auto& a : field.trivector()) {
    CHECK(a.resolution == 512);
    CHECK(a.channels == 32);
  }
  CHECK(field.decoder().input_dim() == 32 * 5);
  CHECK(field.decoder().layers.back().weight.rows() == 4);
  // every scalar has exactly one owner
  std::size_t total = 0;
  for (const auto& ref : field.parameters()) total += ref.values.size();
  const std::size_t planes = 3 * (64 * 64 + 128 * 128 + 256 * 256) * 32;
  const std::size_t axes = 3 * 512 * 32;
  std::size_t decoder = 0;
  for (const auto& l : field.decoder().layers) decoder += l.weight.size() + l.bias.size();
  CHECK(total == planes + axes + decoder);
}

TEST_CASE("initialization") {
  const MultiScaleField field(small_config(), 17);
  for (const auto& ref : field.parameters()) {
    if (ref.group == ParamGroup::kDecoder) {
      if (ref.name.ends_with(".bias")) {
        for (double x : ref.values) CHECK(x == 0.0);
      }
      continue;
    }
    for (double x : ref.values) CHECK(std::abs(x) <= 1e-2);
  }
  const MultiScaleField again(small_config(), 17);
  for (std::size_t t = 0; t < field.tensor_count(); ++t) CHECK(field.checksum(t) == again.checksum(t));
}

TEST_CASE("field_forward") {
  const MultiScaleField zero = MultiScaleField::zeros(small_config());
  SUBCASE("zero parameters") {
    const FieldSample s = field_forward(zero, Vec3(0.2, -0.5, 0.9), 4);
    CHECK(s.sigma == doctest::Approx(std::numbers::ln2));
    for (double c : s.rgb) CHECK(c == 0.5);
  }
  SUBCASE("outside the cube") {
    const MultiScaleField field = test::random_field(small_config(), 2);
    for (const Vec3& p : {Vec3(1.01, 0, 0), Vec3(0, -1.5, 0), Vec3(0, 0, 3)}) {
      const FieldSample s = field_forward(field, p, 4);
      CHECK(s.sigma == 0.0);
      CHECK(s.rgb == Rgb{0.0, 0.0, 0.0});
    }
  }
  SUBCASE("density blob") {
    FieldConfig c = small_config();
    c.density_blob = true;
    const MultiScaleField blob = MultiScaleField::zeros(c);
    const double expect = std::log1p(std::exp(5.0));
    CHECK(field_forward(blob, Vec3::Zero(), 1).sigma == doctest::Approx(expect));
    const Vec3 p(0.2, 0.0, 0.0);
    const double bias = 5.0 * std::exp(-0.04 / (2 * 0.04));
    CHECK(field_forward(blob, p, 1).sigma == doctest::Approx(std::log1p(std::exp(bias))));
  }
}

TEST_CASE("batched tape agrees with the scalar forward") {
  const MultiScaleField field = test::random_field(small_config(), 8);
  std::mt19937_64 rng(8);
  std::vector<Vec3> points;
  for (int i = 0; i < 64; ++i) points.push_back(test::random_point(rng, 1.3));
  for (int stage = 1; stage <= 4; ++stage) {
    FieldTape tape;
    tape.forward(field, points, stage);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const FieldSample s = field_forward(field, points[i], stage);
      CHECK(tape.samples()[i].sigma == doctest::Approx(s.sigma).epsilon(1e-12));
      for (int c = 0; c < 3; ++c) {
        CHECK(tape.samples()[i].rgb[c] == doctest::Approx(s.rgb[c]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("field_backward: zero adjoints give zero gradients") {
  const MultiScaleField field = test::random_field(small_config(), 3);
  const Adjoints adj = random_adjoints(16, 3);
  FieldTape tape;
  tape.forward(field, adj.points, 4);
  const FieldGradients g = field_backward(field, tape, std::vector<double>(16, 0.0),
                                          std::vector<Rgb>(16, Rgb{0, 0, 0}));
  for (const auto& t : g.tensors) CHECK(tensor_is_zero(t));
}

TEST_CASE("field_backward: levels above the stage and frozen tensors get no gradient") {
  MultiScaleField field = test::random_field(small_config(), 4);
  const Adjoints adj = random_adjoints(32, 4);
  FieldTape tape;
  tape.forward(field, adj.points, 2);
  FieldGradients g = field_backward(field, tape, adj.d_sigma, adj.d_rgb);
  for (int o = 0; o < 3; ++o) {
    const auto orient = static_cast<PlaneOrientation>(o);
    CHECK(tensor_is_zero(g.tensors[MultiScaleField::plane_tensor(3, orient)]));
    CHECK_FALSE(tensor_is_zero(g.tensors[MultiScaleField::plane_tensor(2, orient)]));
  }
  for (int a = 0; a < 3; ++a) CHECK(tensor_is_zero(g.tensors[MultiScaleField::axis_tensor(static_cast<Axis>(a))]));

  field.freeze_below(3);
  CHECK(field.level_frozen(1));
  CHECK(field.level_frozen(2));
  CHECK_FALSE(field.level_frozen(3));
  tape.forward(field, adj.points, 3);
  g = field_backward(field, tape, adj.d_sigma, adj.d_rgb);
  for (int o = 0; o < 3; ++o) {
    const auto orient = static_cast<PlaneOrientation>(o);
    CHECK(tensor_is_zero(g.tensors[MultiScaleField::plane_tensor(1, orient)]));
    CHECK(tensor_is_zero(g.tensors[MultiScaleField::plane_tensor(2, orient)]));
    CHECK_FALSE(tensor_is_zero(g.tensors[MultiScaleField::plane_tensor(3, orient)]));
  }
  CHECK_FALSE(tensor_is_zero(g.tensors[MultiScaleField::decoder_weight_tensor(0)]));
}

TEST_CASE("field_backward: usage faults") {
  MultiScaleField field = test::random_field(small_config(), 5);
  const Adjoints adj = random_adjoints(4, 5);
  FieldTape tape;
  CHECK_THROWS_AS(field_backward(field, tape, adj.d_sigma, adj.d_rgb), UsageError);
  tape.forward(field, adj.points, 4);
  CHECK_THROWS_AS(field_backward(field, tape, std::vector<double>(3, 0.0), adj.d_rgb), UsageError);
  field.plane(1, PlaneOrientation::kXY).texels[0] += 1.0;
  CHECK_THROWS_AS(field_backward(field, tape, adj.d_sigma, adj.d_rgb), UsageError);
  const MultiScaleField other = test::random_field(small_config(), 6);
  tape.forward(field, adj.points, 4);
  CHECK_THROWS_AS(field_backward(other, tape, adj.d_sigma, adj.d_rgb), UsageError);
}

TEST_CASE("field_backward matches central differences") {
  for (FourierMode mode : {FourierMode::kLogBands, FourierMode::kRandomGaussian}) {
    FieldConfig config = small_config();
    config.fourier_mode = mode;
    config.density_blob = true;
    MultiScaleField field = test::random_field(config, 31);
    const Adjoints adj = random_adjoints(24, 31);
    FieldTape tape;
    tape.forward(field, adj.points, 4);
    const FieldGradients g = field_backward(field, tape, adj.d_sigma, adj.d_rgb);
    const auto loss = [&](const MultiScaleField& f) {
      return weighted_loss(f, adj.points, 4, adj.d_sigma, adj.d_rgb);
    };

    // 20 random coordinates among those with a non-negligible gradient, plus
    // a sweep over one entry of every tensor.
    std::mt19937_64 rng(77);
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t t = 0; t < g.tensors.size(); ++t) {
      for (std::size_t i = 0; i < g.tensors[t].size(); ++i) {
        if (std::abs(g.tensors[t][i]) > 1e-8) coords.emplace_back(t, i);
      }
    }
    REQUIRE(coords.size() > 20);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(20);
    for (std::size_t t = 0; t < g.tensors.size(); ++t) {
      auto it = std::max_element(g.tensors[t].begin(), g.tensors[t].end(),
                                 [](double a, double b) { return std::abs(a) < std::abs(b); });
      coords.emplace_back(t, static_cast<std::size_t>(it - g.tensors[t].begin()));
    }
    for (const auto& [t, i] : coords) {
      const double fd = test::central_difference(field, t, i, loss);
      INFO("tensor " << field.parameters()[t].name << " index " << i);
      CHECK(test::rel_error(g.tensors[t][i], fd) <= 1e-4);
    }
  }
}

TEST_CASE("parallel scatter is bitwise identical to the serial scatter") {
  const FieldConfig config = small_config();
  const MultiScaleField field = test::random_field(config, 12);
  const Adjoints adj = random_adjoints(500, 12);
  for (int stage = 1; stage <= 4; ++stage) {
    FieldTape tape;
    tape.forward(field, adj.points, stage);
    FieldGradients a = FieldGradients::zeros_like(field);
    Eigen::MatrixXd d_features;
    tape.backward_decoder(field, adj.d_sigma, adj.d_rgb, a, d_features);
    FieldGradients b = a;
    scatter_feature_adjoints(field, adj.points, d_features, stage, a);
    scatter_feature_adjoints_parallel(field, adj.points, d_features, stage, b);
    CHECK(a.tensors == b.tensors);
  }
}

TEST_CASE("reference point gradient agrees with the batched gradient") {
  const MultiScaleField field = test::random_field(small_config(), 13);
  const Adjoints adj = random_adjoints(40, 13);
  for (int stage = 1; stage <= 4; ++stage) {
    FieldTape tape;
    tape.forward(field, adj.points, stage);
    const FieldGradients batched = field_backward(field, tape, adj.d_sigma, adj.d_rgb);
    FieldGradients scalar = FieldGradients::zeros_like(field);
    for (std::size_t i = 0; i < adj.points.size(); ++i) {
      reference::point_backward(field, adj.points[i], stage, adj.d_sigma[i], adj.d_rgb[i], scalar);
    }
    for (std::size_t t = 0; t < batched.tensors.size(); ++t) {
      for (std::size_t i = 0; i < batched.tensors[t].size(); ++i) {
        CHECK(batched.tensors[t][i] ==
              doctest::Approx(scalar.tensors[t][i]).epsilon(1e-10).scale(1.0));
      }
    }
  }
}

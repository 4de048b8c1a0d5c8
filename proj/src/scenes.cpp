#include "mtn/scenes.hpp"

#include "mc_tables.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <unordered_map>

namespace mtn {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Rgb clamp01(Rgb c) {
  for (double& v : c) v = std::clamp(v, 0.0, 1.0);
  return c;
}

double sphere_sdf(const Vec3& p, const Vec3& center, double radius) { return (p - center).norm() - radius; }

}  // namespace

FieldSample AnalyticScene::density(const Vec3& p) const {
  FieldSample s;
  s.sigma = kappa * stable_sigmoid(-kappa * sdf(p));
  s.rgb = albedo(p);
  return s;
}

std::array<int, 2> checker_cell(const Vec3& p) {
  const double r = p.norm();
  const double azimuth = std::atan2(p.y(), p.x()) + std::numbers::pi;  // [0, 2 pi]
  const double polar = r > 0.0 ? std::acos(std::clamp(p.z() / r, -1.0, 1.0)) : 0.0;
  const int i = std::min(7, static_cast<int>(azimuth / (2.0 * std::numbers::pi) * 8.0));
  const int j = std::min(7, static_cast<int>(polar / std::numbers::pi * 8.0));
  return {i, j};
}

std::vector<std::string> scene_names() {
  return {"empty", "sphere", "torus", "checker_sphere", "two_spheres"};
}

AnalyticScene make_scene(const std::string& name, double kappa) {
  if (!(kappa > 0.0)) throw ConfigError("scene kappa must be positive");
  AnalyticScene s;
  s.name = name;
  s.kappa = kappa;
  if (name == "empty") {
    s.sdf = [](const Vec3&) { return std::numeric_limits<double>::infinity(); };
    s.albedo = [](const Vec3&) { return Rgb{0.0, 0.0, 0.0}; };
  } else if (name == "sphere") {
    s.sdf = [](const Vec3& p) { return p.norm() - 0.5; };
    s.albedo = [](const Vec3& p) {
      return clamp01({0.55 + 0.25 * p.x(), 0.45 + 0.25 * p.y(), 0.5 + 0.25 * p.z()});
    };
  } else if (name == "torus") {
    s.sdf = [](const Vec3& p) {
      const double ring = std::hypot(p.x(), p.y()) - 0.5;
      return std::hypot(ring, p.z()) - 0.2;
    };
    s.albedo = [](const Vec3& p) { return clamp01({0.85, 0.45 + 0.3 * p.z(), 0.2}); };
  } else if (name == "checker_sphere") {
    s.sdf = [](const Vec3& p) { return p.norm() - 0.5; };
    s.albedo = [](const Vec3& p) {
      const auto [i, j] = checker_cell(p);
      return (i + j) % 2 == 0 ? Rgb{0.95, 0.55, 0.1} : Rgb{0.1, 0.3, 0.8};
    };
  } else if (name == "two_spheres") {
    const Vec3 a(-0.4, 0.0, 0.0), b(0.4, 0.0, 0.0);
    s.sdf = [a, b](const Vec3& p) { return std::min(sphere_sdf(p, a, 0.35), sphere_sdf(p, b, 0.35)); };
    s.albedo = [a, b](const Vec3& p) {
      return sphere_sdf(p, a, 0.35) <= sphere_sdf(p, b, 0.35) ? Rgb{0.8, 0.2, 0.2} : Rgb{0.2, 0.7, 0.3};
    };
  } else {
    throw ConfigError("unknown scene '" + name + "'");
  }
  return s;
}

void SceneSource::evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[i] = inside_domain(points[i]) ? scene_.density(points[i]) : FieldSample{};
  }
}

std::vector<CameraPose> sample_poses(int count, std::uint64_t seed, RadiusInterval radius) {
  std::mt19937_64 rng(seed);
  std::vector<CameraPose> poses;
  for (int i = 0; i < count; ++i) poses.push_back(sample_camera(rng, radius));
  return poses;
}

std::vector<RenderedImage> make_targets(const AnalyticScene& scene, const std::vector<CameraPose>& poses,
                                        const RenderOptions& options) {
  const SceneSource source(scene);
  std::vector<RenderedImage> images;
  for (const auto& pose : poses) images.push_back(render_source(source, pose, options));
  return images;
}

void write_targets(const std::filesystem::path& dir, const AnalyticScene& scene,
                   const std::vector<CameraPose>& poses, const std::vector<RenderedImage>& images,
                   const RenderOptions& options) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["scene"] = scene.name;
  manifest["kappa"] = scene.kappa;
  manifest["width"] = options.width;
  manifest["height"] = options.height;
  manifest["samples"] = options.samples;
  manifest["stratified"] = options.stratified;
  manifest["seed"] = options.seed;
  manifest["background"] = options.background;
  manifest["views"] = nlohmann::json::array();
  for (std::size_t i = 0; i < poses.size(); ++i) {
    char file[32];
    std::snprintf(file, sizeof file, "target_%03zu.png", i);
    write_png(dir / file, images.at(i).rgb);
    manifest["views"].push_back({{"file", file},
                                 {"azimuth_deg", poses[i].azimuth_deg},
                                 {"polar_deg", poses[i].polar_deg},
                                 {"radius", poses[i].radius},
                                 {"fovy_deg", poses[i].fovy_deg}});
  }
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw ContractError("failed to write " + (dir / "manifest.json").string());
}

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ContractError("psnr: image shapes differ");
  if (a.size() == 0) throw ContractError("psnr: empty images");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

std::vector<double> density_grid(const RadianceSource& source, int n) {
  if (n < 2) throw ContractError("density_grid: n must be >= 2");
  const auto N = static_cast<std::size_t>(n);
  std::vector<double> grid(N * N * N);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < n; ++k) {
    std::vector<Vec3> points(N * N);
    std::vector<FieldSample> samples(N * N);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        points[static_cast<std::size_t>(j) * N + i] = {lattice_coord(i, n), lattice_coord(j, n), lattice_coord(k, n)};
      }
    }
    source.evaluate(points, samples);
    for (std::size_t q = 0; q < N * N; ++q) grid[static_cast<std::size_t>(k) * N * N + q] = samples[q].sigma;
  }
  return grid;
}

double occupancy_iou(const RadianceSource& field, const AnalyticScene& scene, int n, double tau) {
  if (n < 8) throw ContractError("occupancy_iou: n must be >= 8");
  const std::vector<double> grid = density_grid(field, n);
  std::size_t both = 0, either = 0;
  std::size_t q = 0;
  for (int k = 0; k < n; ++k) {
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i, ++q) {
        const bool a = grid[q] > tau;
        const bool b = scene.sdf({lattice_coord(i, n), lattice_coord(j, n), lattice_coord(k, n)}) < 0.0;
        both += a && b;
        either += a || b;
      }
    }
  }
  return either == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(either);
}

namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
// Edge e joins corners kEdgeCorners[e]; the first corner is the one with the
// smaller lattice coordinate along the edge's axis.
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {3, 2}, {0, 3}, {4, 5}, {5, 6},
                                     {7, 6}, {4, 7}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
constexpr int kEdgeAxis[12] = {0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2};

}  // namespace

Mesh marching_cubes(std::span<const double> grid, int n, double iso) {
  if (n < 2) throw ContractError("marching_cubes: n must be >= 2");
  const auto N = static_cast<std::size_t>(n);
  if (grid.size() != N * N * N) throw ContractError("marching_cubes: grid size does not match n^3");
  auto at = [&](int i, int j, int k) { return grid[(static_cast<std::size_t>(k) * N + j) * N + i]; };
  Mesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;
  for (int k = 0; k + 1 < n; ++k) {
    for (int j = 0; j + 1 < n; ++j) {
      for (int i = 0; i + 1 < n; ++i) {
        double value[8];
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          value[c] = at(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
          if (value[c] < iso) cube |= 1 << c;
        }
        const std::uint16_t edges = detail::kEdgeTable[cube];
        if (edges == 0) continue;
        std::uint32_t vertex[12];
        for (int e = 0; e < 12; ++e) {
          if (!(edges & (1 << e))) continue;
          const int c0 = kEdgeCorners[e][0], c1 = kEdgeCorners[e][1];
          const int bi = i + kCorner[c0][0], bj = j + kCorner[c0][1], bk = k + kCorner[c0][2];
          const std::uint64_t key = ((static_cast<std::uint64_t>(bk) * N + bj) * N + bi) * 3 + kEdgeAxis[e];
          const auto found = edge_vertex.find(key);
          if (found != edge_vertex.end()) {
            vertex[e] = found->second;
            continue;
          }
          const double a = value[c0], b = value[c1];
          const double f = a == b ? 0.5 : std::clamp((iso - a) / (b - a), 0.0, 1.0);
          Vec3 p(lattice_coord(bi, n), lattice_coord(bj, n), lattice_coord(bk, n));
          p[kEdgeAxis[e]] += f * 2.0 / n;
          vertex[e] = static_cast<std::uint32_t>(mesh.vertices.size());
          mesh.vertices.push_back(p);
          edge_vertex.emplace(key, vertex[e]);
        }
        for (int t = 0; detail::kTriTable[cube][t] != -1; t += 3) {
          // With corners flagged below iso, the table winding faces away
          // from the dense side.
          const std::array<std::uint32_t, 3> tri{vertex[detail::kTriTable[cube][t]],
                                                 vertex[detail::kTriTable[cube][t + 1]],
                                                 vertex[detail::kTriTable[cube][t + 2]]};
          const Vec3& p0 = mesh.vertices[tri[0]];
          const double area2 = (mesh.vertices[tri[1]] - p0).cross(mesh.vertices[tri[2]] - p0).norm();
          if (area2 > 2e-12) mesh.triangles.push_back(tri);
        }
      }
    }
  }
  return mesh;
}

Mesh marching_cubes(const RadianceSource& source, int n, double iso) {
  if (n < 8) throw ContractError("marching_cubes: n must be >= 8");
  return marching_cubes(density_grid(source, n), n, iso);
}

void write_obj(std::ostream& out, const Mesh& mesh) {
  char line[96];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(line, sizeof line, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out << line;
  }
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

void write_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot open " + path.string() + " for writing");
  write_obj(out, mesh);
}

}  // namespace mtn

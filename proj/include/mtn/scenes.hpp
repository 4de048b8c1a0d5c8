#pragma once

// Analytic ground-truth scenes and evaluation: target views, PSNR,
// occupancy IoU and marching-cubes mesh extraction.

#include "mtn/renderer.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace mtn {

/// A signed-distance shape with albedo. Density is the soft interior
/// indicator sigma = kappa * sigmoid(-kappa * sdf).
struct AnalyticScene {
  std::string name;
  std::function<double(const Vec3&)> sdf;
  std::function<Rgb(const Vec3&)> albedo;
  double kappa = 30.0;

  FieldSample density(const Vec3& p) const;
};

/// Built-ins: "empty", "sphere" (radius 0.5), "torus" (radii 0.5 / 0.2 around
/// z), "checker_sphere" (radius 0.5, 8 x 8 angular cells), "two_spheres".
/// Throws ConfigError for other names.
AnalyticScene make_scene(const std::string& name, double kappa = 30.0);
std::vector<std::string> scene_names();

/// Cell of the checker texture: azimuth and polar angle each split into 8.
std::array<int, 2> checker_cell(const Vec3& p);

/// The scene as a render source (zero density outside [-1, 1]^3).
class SceneSource final : public RadianceSource {
 public:
  explicit SceneSource(const AnalyticScene& scene) : scene_(scene) {}
  void evaluate(std::span<const Vec3> points, std::span<FieldSample> out) const override;

 private:
  const AnalyticScene& scene_;
};

/// `count` camera poses drawn from the training pose distribution with
/// radius in `radius`.
std::vector<CameraPose> sample_poses(int count, std::uint64_t seed, RadiusInterval radius);

/// Renders the scene at every pose with the shared renderer.
std::vector<RenderedImage> make_targets(const AnalyticScene& scene, const std::vector<CameraPose>& poses,
                                        const RenderOptions& options);

/// Writes target_NNN.png per pose and manifest.json describing scene and poses.
void write_targets(const std::filesystem::path& dir, const AnalyticScene& scene,
                   const std::vector<CameraPose>& poses, const std::vector<RenderedImage>& images,
                   const RenderOptions& options);

/// 10 log10(1 / MSE) over all channels; +infinity when the images are equal.
/// Throws ContractError on shape mismatch.
double psnr(const Image& a, const Image& b);

/// Lattice point i of an n-point axis: cell centers -1 + (2i + 1) / n.
inline double lattice_coord(int i, int n) { return -1.0 + (2.0 * i + 1.0) / n; }

/// Density of `source` at the n^3 lattice, index (k * n + j) * n + i for (x_i, y_j, z_k).
std::vector<double> density_grid(const RadianceSource& source, int n);

/// |{sigma > tau} & {sdf < 0}| / |{sigma > tau} | {sdf < 0}| on the n^3 lattice;
/// 1 when both sets are empty. Throws ContractError when n < 8.
double occupancy_iou(const RadianceSource& field, const AnalyticScene& scene, int n, double tau);

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;  // counter-clockwise seen from outside
};

/// Isosurface sigma = iso of a density lattice from density_grid(). The
/// inside (sigma > iso) is enclosed by outward-facing triangles.
Mesh marching_cubes(std::span<const double> grid, int n, double iso);
Mesh marching_cubes(const RadianceSource& source, int n, double iso);

/// ASCII OBJ: "v x y z" lines then 1-based "f i j k" lines.
void write_obj(std::ostream& out, const Mesh& mesh);
void write_obj(const std::filesystem::path& path, const Mesh& mesh);

}  // namespace mtn

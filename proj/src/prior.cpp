// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/prior.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "exnerf/error.hpp"

namespace exnerf {

namespace {

// Camera-space clip distance in front of the center of projection.
constexpr double kNearClip = 1e-6;

double edge_fn(const std::array<double, 2> &a, const std::array<double, 2> &b, double px, double py) {
  return (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
}

// For positively oriented triangles (screen y down) this selects the top
// and left edges; an edge and its reverse never agree.
bool owns_edge(const std::array<double, 2> &a, const std::array<double, 2> &b) {
  const double dx = b[0] - a[0];
  const double dy = b[1] - a[1];
  return dy < 0 || (dy == 0 && dx > 0);
}

bool edge_accepts(const std::array<double, 2> &a, const std::array<double, 2> &b, double px, double py) {
  const double e = edge_fn(a, b, px, py);
  return e > 0 || (e == 0 && owns_edge(a, b));
}

std::vector<Vec3> clip_near(const std::array<Vec3, 3> &tri) {
  // Sutherland-Hodgman against z <= -kNearClip
  std::vector<Vec3> out;
  for (int i = 0; i < 3; ++i) {
    const Vec3 &p = tri[i];
    const Vec3 &q = tri[(i + 1) % 3];
    const bool pin = p.z() <= -kNearClip;
    const bool qin = q.z() <= -kNearClip;
    if (pin) out.push_back(p);
    if (pin != qin) {
      const double s = (-kNearClip - p.z()) / (q.z() - p.z());
      out.push_back(p + s * (q - p));
    }
  }
  return out;
}

}  // namespace

void TriangleMesh::validate() {
  for (const auto &v : vertices)
    if (!v.allFinite()) throw InvalidArgument("mesh: non-finite vertex");
  const int nv = static_cast<int>(vertices.size());
  std::vector<std::array<int, 3>> kept;
  kept.reserve(triangles.size());
  for (const auto &t : triangles) {
    for (int idx : t)
      if (idx < 0 || idx >= nv)
        throw InvalidArgument("mesh: vertex index " + std::to_string(idx) + " out of range");
    const Vec3 n = (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
    if (n.norm() > 0) kept.push_back(t);
  }
  triangles = std::move(kept);
}

double TriangleMesh::triangle_area(std::size_t i) const {
  const auto &t = triangles.at(i);
  return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

std::size_t SilhouetteMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

bool covers_pixel_center(const std::array<double, 2> &a, const std::array<double, 2> &b0,
                         const std::array<double, 2> &c0, double px, double py) {
  const double area = edge_fn(a, b0, c0[0], c0[1]);
  if (area == 0) return false;
  const auto &b = area > 0 ? b0 : c0;
  const auto &c = area > 0 ? c0 : b0;
  return edge_accepts(a, b, px, py) && edge_accepts(b, c, px, py) && edge_accepts(c, a, px, py);
}

void rasterize_screen_triangle(const std::array<double, 2> &a, const std::array<double, 2> &b,
                               const std::array<double, 2> &c, SilhouetteMask &mask) {
  const double xmin = std::min({a[0], b[0], c[0]});
  const double xmax = std::max({a[0], b[0], c[0]});
  const double ymin = std::min({a[1], b[1], c[1]});
  const double ymax = std::max({a[1], b[1], c[1]});
  if (!(xmax >= 0 && ymax >= 0 && xmin <= mask.width && ymin <= mask.height)) return;
  // pixel center x = col + 0.5; clamp before converting, near-plane clipped
  // vertices can project far outside the int range
  auto clamp_index = [](double v, int hi) { return static_cast<int>(std::clamp(v, 0.0, static_cast<double>(hi))); };
  const int c0 = clamp_index(std::floor(xmin - 0.5), mask.width - 1);
  const int c1 = clamp_index(std::ceil(xmax - 0.5), mask.width - 1);
  const int r0 = clamp_index(std::floor(ymin - 0.5), mask.height - 1);
  const int r1 = clamp_index(std::ceil(ymax - 0.5), mask.height - 1);
  for (int r = r0; r <= r1; ++r)
    for (int col = c0; col <= c1; ++col)
      if (covers_pixel_center(a, b, c, col + 0.5, r + 0.5)) mask.set(r, col, true);
}

SilhouetteMask rasterize_silhouette(const TriangleMesh &mesh, const Camera &camera) {
  camera.validate();
  if (mesh.triangles.empty() || mesh.vertices.empty())
    throw InvalidArgument("rasterize_silhouette: empty mesh");
  SilhouetteMask mask(camera.width, camera.height);
  std::vector<Vec3> cam_vertices;
  cam_vertices.reserve(mesh.vertices.size());
  for (const auto &v : mesh.vertices) cam_vertices.push_back(camera.to_camera(v));
  auto to_screen = [&](const Vec3 &p) {
    const double inv = 1.0 / (-p.z());
    return std::array<double, 2>{camera.cx + camera.fx * p.x() * inv, camera.cy - camera.fy * p.y() * inv};
  };
  for (const auto &t : mesh.triangles) {
    const std::array<Vec3, 3> tri{cam_vertices[t[0]], cam_vertices[t[1]], cam_vertices[t[2]]};
    const auto poly = clip_near(tri);
    if (poly.size() < 3) continue;
    const auto s0 = to_screen(poly[0]);
    for (std::size_t k = 1; k + 1 < poly.size(); ++k)
      rasterize_screen_triangle(s0, to_screen(poly[k]), to_screen(poly[k + 1]), mask);
  }
  return mask;
}

bool classify_ray(PixelCoord pixel, const SilhouetteMask &mask) {
  if (pixel.row < 0 || pixel.row >= mask.height || pixel.col < 0 || pixel.col >= mask.width)
    throw InvalidArgument("classify_ray: pixel (" + std::to_string(pixel.row) + "," + std::to_string(pixel.col) +
                          ") outside the mask");
  return mask.at(pixel.row, pixel.col);
}

std::vector<double> gate_expression(std::span<const double> beta, bool inside) {
  if (!inside) return std::vector<double>(beta.size(), 0.0);
  return {beta.begin(), beta.end()};
}

std::vector<Vec3> sample_mesh_points(const TriangleMesh &mesh, int n, CounterRng &rng) {
  if (n < 1) throw InvalidArgument("sample_mesh_points: need at least one sample");
  if (mesh.triangles.empty()) throw InvalidArgument("sample_mesh_points: empty mesh");
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0;
  for (std::size_t i = 0; i < mesh.triangles.size(); ++i) {
    total += mesh.triangle_area(i);
    cumulative[i] = total;
  }
  if (!(total > 0)) throw InvalidArgument("sample_mesh_points: mesh has zero area");
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (int k = 0; k < n; ++k) {
    const double pick = rng.uniform() * total;
    std::size_t tri = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), pick) -
                                               cumulative.begin());
    tri = std::min(tri, cumulative.size() - 1);
    const auto &t = mesh.triangles[tri];
    const double s = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    pts.push_back((1 - s) * mesh.vertices[t[0]] + s * (1 - r2) * mesh.vertices[t[1]] +
                  s * r2 * mesh.vertices[t[2]]);
  }
  return pts;
}

}  // namespace exnerf

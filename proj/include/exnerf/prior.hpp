// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "exnerf/camera.hpp"
#include "exnerf/rng.hpp"

namespace exnerf {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  /// Throws on out-of-range indices or non-finite vertices; drops
  /// zero-area triangles.
  void validate();
  double triangle_area(std::size_t i) const;
};

/// Binary silhouette, row-major, one byte per pixel (0 or 1).
struct SilhouetteMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  SilhouetteMask() = default;
  SilhouetteMask(int w, int h, bool fill = false)
      : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

  bool at(int row, int col) const { return bits[static_cast<std::size_t>(row) * width + col] != 0; }
  void set(int row, int col, bool v) { bits[static_cast<std::size_t>(row) * width + col] = v ? 1 : 0; }
  std::size_t count() const;
};

/// Edge-function coverage test of a screen point against a screen-space
/// triangle, with a top-left ownership rule on shared edges. Degenerate
/// (zero screen area) triangles cover nothing.
bool covers_pixel_center(const std::array<double, 2> &a, const std::array<double, 2> &b,
                         const std::array<double, 2> &c, double px, double py);

/// Sets every pixel whose center lies inside the projection of a triangle.
/// Triangles crossing the near plane are clipped in camera space first.
SilhouetteMask rasterize_silhouette(const TriangleMesh &mesh, const Camera &camera);

/// Rasterizes triangles already given in screen space.
void rasterize_screen_triangle(const std::array<double, 2> &a, const std::array<double, 2> &b,
                               const std::array<double, 2> &c, SilhouetteMask &mask);

/// Whether the ray through `pixel` is inside the silhouette.
bool classify_ray(PixelCoord pixel, const SilhouetteMask &mask);

/// Returns beta when `inside`, otherwise a zero vector of the same length.
std::vector<double> gate_expression(std::span<const double> beta, bool inside);

/// Area-weighted uniform points on the mesh surface.
std::vector<Vec3> sample_mesh_points(const TriangleMesh &mesh, int n, CounterRng &rng);

}  // namespace exnerf

// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>
#include <vector>

#include "exnerf/types.hpp"

namespace exnerf {

/// Pinhole camera. Camera space is right-handed and looks down -z with +y
/// up; pixel (row, col) has its center at (col + 0.5, row + 0.5).
struct Camera {
  int width = 0;
  int height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat4 camera_to_world = Mat4::Identity();

  /// Throws InvalidArgument unless the rotation block is orthonormal
  /// (1e-6), focal lengths are positive and the image is non-empty.
  void validate() const;

  Mat3 rotation() const { return camera_to_world.topLeftCorner<3, 3>(); }
  Vec3 position() const { return camera_to_world.topRightCorner<3, 1>(); }
  /// World point to camera space.
  Vec3 to_camera(const Vec3 &world) const { return rotation().transpose() * (world - position()); }
};

/// Camera at `eye` looking at `target` with the given world up vector.
Camera look_at_camera(int width, int height, double fx, double fy, const Vec3 &eye,
                      const Vec3 &target, const Vec3 &up = Vec3::UnitY());

struct PixelCoord {
  int row = 0;
  int col = 0;
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = -Vec3::UnitZ();
  double t_near = 0;
  double t_far = 1;
  PixelCoord pixel;
  std::array<double, 3> target_color{0, 0, 0};
  bool in_silhouette = false;
};

/// Unit direction (world space) through the center of a pixel.
Vec3 pixel_direction(const Camera &camera, PixelCoord pixel);

/// One ray per pixel through its center, bounded by [t_near, t_far].
std::vector<Ray> generate_rays(const Camera &camera, std::span<const PixelCoord> pixels,
                               double t_near, double t_far);

/// All pixels of the camera in row-major order.
std::vector<PixelCoord> all_pixels(const Camera &camera);

/// Projects a world point to continuous screen coordinates (x right, y down,
/// pixel centers at half-integers). Returns false for points not strictly in
/// front of the camera.
bool project_to_screen(const Camera &camera, const Vec3 &world, double &sx, double &sy);

}  // namespace exnerf

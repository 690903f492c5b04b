// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/camera.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <string>

#include "exnerf/error.hpp"

namespace exnerf {

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw InvalidArgument("camera: image size must be positive");
  if (!(fx > 0) || !(fy > 0)) throw InvalidArgument("camera: focal lengths must be positive");
  if (!camera_to_world.allFinite()) throw InvalidArgument("camera: non-finite pose");
  const Mat3 r = rotation();
  if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
    throw InvalidArgument("camera: rotation block is not orthonormal");
  if (std::abs(r.determinant() - 1.0) > 1e-6) throw InvalidArgument("camera: rotation is a reflection");
  const Eigen::RowVector4d last = camera_to_world.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-12)
    throw InvalidArgument("camera: last row of camera_to_world must be (0,0,0,1)");
}

Camera look_at_camera(int width, int height, double fx, double fy, const Vec3 &eye,
                      const Vec3 &target, const Vec3 &up) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  const Vec3 back = (eye - target).normalized();
  const Vec3 right = up.cross(back).normalized();
  const Vec3 true_up = back.cross(right);
  cam.camera_to_world.setIdentity();
  cam.camera_to_world.block<3, 1>(0, 0) = right;
  cam.camera_to_world.block<3, 1>(0, 1) = true_up;
  cam.camera_to_world.block<3, 1>(0, 2) = back;
  cam.camera_to_world.block<3, 1>(0, 3) = eye;
  return cam;
}

Vec3 pixel_direction(const Camera &camera, PixelCoord pixel) {
  const Vec3 d_cam((pixel.col + 0.5 - camera.cx) / camera.fx, -(pixel.row + 0.5 - camera.cy) / camera.fy, -1.0);
  return (camera.rotation() * d_cam).normalized();
}

std::vector<Ray> generate_rays(const Camera &camera, std::span<const PixelCoord> pixels, double t_near,
                               double t_far) {
  if (!(t_near > 0) || !(t_far > t_near)) throw InvalidArgument("generate_rays: need 0 < t_near < t_far");
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  const Vec3 origin = camera.position();
  for (const auto &p : pixels) {
    if (p.row < 0 || p.row >= camera.height || p.col < 0 || p.col >= camera.width)
      throw InvalidArgument("generate_rays: pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                            ") outside the image");
    Ray r;
    r.origin = origin;
    r.direction = pixel_direction(camera, p);
    r.t_near = t_near;
    r.t_far = t_far;
    r.pixel = p;
    rays.push_back(r);
  }
  return rays;
}

std::vector<PixelCoord> all_pixels(const Camera &camera) {
  std::vector<PixelCoord> px;
  px.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int r = 0; r < camera.height; ++r)
    for (int c = 0; c < camera.width; ++c) px.push_back({r, c});
  return px;
}

bool project_to_screen(const Camera &camera, const Vec3 &world, double &sx, double &sy) {
  const Vec3 p = camera.to_camera(world);
  if (!(p.z() < 0)) return false;
  const double inv = 1.0 / (-p.z());
  sx = camera.cx + camera.fx * p.x() * inv;
  sy = camera.cy - camera.fy * p.y() * inv;
  return true;
}

}  // namespace exnerf

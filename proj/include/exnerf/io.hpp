// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "exnerf/camera.hpp"
#include "exnerf/image.hpp"
#include "exnerf/prior.hpp"
#include "json.hpp"

namespace exnerf {

namespace fs = std::filesystem;

/// round(clamp(v, 0, 1) * 255) per channel.
std::vector<std::uint8_t> quantize(const Image &img);
std::uint8_t quantize_channel(double v);
Image dequantize(int width, int height, const std::vector<std::uint8_t> &rgb);

void write_png_rgb(const fs::path &path, const Image &img);
/// Reads any 8-bit PNG and expands it to RGB; values are bytes / 255.
Image read_png_rgb(const fs::path &path);

void write_png_gray8(const fs::path &path, int width, int height, const std::vector<std::uint8_t> &pixels);
std::vector<std::uint8_t> read_png_gray8(const fs::path &path, int &width, int &height);
void write_png_gray16(const fs::path &path, int width, int height, const std::vector<std::uint16_t> &pixels);
std::vector<std::uint16_t> read_png_gray16(const fs::path &path, int &width, int &height);

/// Silhouette masks are stored as 8-bit grayscale, 255 inside.
void write_mask_png(const fs::path &path, const SilhouetteMask &mask);
SilhouetteMask read_mask_png(const fs::path &path);

/// 16-bit depth normalized by (t_far - t_near), clamped to [0, 1], plus a
/// `<path>.json` sidecar holding the bounds and scale.
void write_depth_png(const fs::path &path, const ScalarImage &depth, double t_near, double t_far);

void write_obj(const fs::path &path, const TriangleMesh &mesh);
TriangleMesh read_obj(const fs::path &path);

/// {"width","height","fx","fy","cx","cy","c2w": 16 numbers, row-major}
nlohmann::json camera_to_json(const Camera &camera);
Camera camera_from_json(const nlohmann::json &j);

nlohmann::json read_json(const fs::path &path);
/// Writes through a temporary file and renames it into place.
void write_text_atomic(const fs::path &path, const std::string &text);

}  // namespace exnerf

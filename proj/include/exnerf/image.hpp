// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <vector>

namespace exnerf {

/// Interleaved RGB float image, values nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0f) {}

  float *pixel(int row, int col) { return rgb.data() + (static_cast<std::size_t>(row) * width + col) * 3; }
  const float *pixel(int row, int col) const {
    return rgb.data() + (static_cast<std::size_t>(row) * width + col) * 3;
  }
};

/// Single-channel float image.
struct ScalarImage {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  ScalarImage() = default;
  ScalarImage(int w, int h) : width(w), height(h), values(static_cast<std::size_t>(w) * h, 0.0f) {}
  float &at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  float at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }
};

}  // namespace exnerf

// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <vector>

namespace exnerf {

/// Row-major dynamic matrix. Batched tensors put one sample per row.
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// std::vector with Eigen's maximum alignment. Eigen picks scalar or packet
/// code paths from the runtime address of mapped buffers, so buffers that
/// feed Eigen maps must be aligned identically on every run for results to
/// be bit-reproducible.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

/// Number of expression parameters carried per frame.
inline constexpr int kBetaDim = 50;

}  // namespace exnerf

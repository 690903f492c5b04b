// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "exnerf/types.hpp"

namespace exnerf {

/// A named trainable array with a gradient buffer of the same length.
/// Two-dimensional tensors are stored row-major.
template <typename T>
struct ParameterTensor {
  std::string name;
  std::vector<int> shape;
  AlignedVector<T> values;
  AlignedVector<T> gradient;

  ParameterTensor() = default;
  ParameterTensor(std::string name, std::vector<int> shape);

  std::size_t size() const { return values.size(); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  Eigen::Map<Mat<T>> matrix() { return {values.data(), rows(), cols()}; }
  Eigen::Map<const Mat<T>> matrix() const { return {values.data(), rows(), cols()}; }
  Eigen::Map<Mat<T>> grad_matrix() { return {gradient.data(), rows(), cols()}; }

  void zero_grad();
  bool all_finite() const;
};

/// Ordered collection of parameters with stable addresses. Iteration order
/// is insertion order, which is also checkpoint order.
template <typename T>
class ParameterSet {
 public:
  ParameterTensor<T> &add(std::string name, std::vector<int> shape);

  ParameterTensor<T> *find(const std::string &name);
  const ParameterTensor<T> *find(const std::string &name) const;
  ParameterTensor<T> &at(const std::string &name);

  std::size_t count() const { return tensors_.size(); }
  std::size_t total_size() const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  void zero_grad();
  /// FNV-1a over the raw value bytes; used to prove parameters were not touched.
  std::uint64_t checksum(const std::function<bool(const ParameterTensor<T> &)> &filter = {}) const;

 private:
  std::deque<ParameterTensor<T>> tensors_;
};

/// Per-frame trainable codes: deformation codes (frames x deform_dim) and
/// appearance codes (frames x appearance_dim).
template <typename T>
struct LatentTable {
  ParameterTensor<T> *deformation = nullptr;
  ParameterTensor<T> *appearance = nullptr;

  int frames() const { return deformation ? deformation->rows() : 0; }
  int deformation_dim() const { return deformation->cols(); }
  int appearance_dim() const { return appearance->cols(); }
};

template <typename T>
struct LatentCodes {
  Vec<T> deformation;
  Vec<T> appearance;
};

/// Allocates zero-initialized code tables inside `set`.
template <typename T>
LatentTable<T> make_latent_table(ParameterSet<T> &set, int frames, int deformation_dim = 128,
                                 int appearance_dim = 8);

/// Copies out the codes of `frame`. The tape-facing path is Tape::gather_rows
/// on the same tables.
template <typename T>
LatentCodes<T> latent_lookup(const LatentTable<T> &table, int frame);

extern template struct ParameterTensor<float>;
extern template struct ParameterTensor<double>;
extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace exnerf

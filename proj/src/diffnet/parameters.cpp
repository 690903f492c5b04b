// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/diffnet/parameters.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include "exnerf/error.hpp"

namespace exnerf {

template <typename T>
ParameterTensor<T>::ParameterTensor(std::string name_, std::vector<int> shape_)
    : name(std::move(name_)), shape(std::move(shape_)) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw InvalidArgument("parameter '" + name + "' has a non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  values.assign(n, T(0));
  gradient.assign(n, T(0));
}

template <typename T>
void ParameterTensor<T>::zero_grad() {
  std::fill(gradient.begin(), gradient.end(), T(0));
}

template <typename T>
bool ParameterTensor<T>::all_finite() const {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename T>
ParameterTensor<T> &ParameterSet<T>::add(std::string name, std::vector<int> shape) {
  if (find(name)) throw InvalidArgument("duplicate parameter name '" + name + "'");
  return tensors_.emplace_back(std::move(name), std::move(shape));
}

template <typename T>
ParameterTensor<T> *ParameterSet<T>::find(const std::string &name) {
  for (auto &t : tensors_)
    if (t.name == name) return &t;
  return nullptr;
}

template <typename T>
const ParameterTensor<T> *ParameterSet<T>::find(const std::string &name) const {
  for (auto &t : tensors_)
    if (t.name == name) return &t;
  return nullptr;
}

template <typename T>
ParameterTensor<T> &ParameterSet<T>::at(const std::string &name) {
  auto *p = find(name);
  if (!p) throw InvalidArgument("unknown parameter '" + name + "'");
  return *p;
}

template <typename T>
std::size_t ParameterSet<T>::total_size() const {
  std::size_t n = 0;
  for (auto &t : tensors_) n += t.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto &t : tensors_) t.zero_grad();
}

template <typename T>
std::uint64_t ParameterSet<T>::checksum(
    const std::function<bool(const ParameterTensor<T> &)> &filter) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto &t : tensors_) {
    if (filter && !filter(t)) continue;
    const auto *bytes = reinterpret_cast<const unsigned char *>(t.values.data());
    for (std::size_t i = 0; i < t.values.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

template <typename T>
LatentTable<T> make_latent_table(ParameterSet<T> &set, int frames, int deformation_dim,
                                 int appearance_dim) {
  if (frames <= 0) throw InvalidArgument("latent table needs at least one frame");
  LatentTable<T> table;
  table.deformation = &set.add("latent.deformation", {frames, deformation_dim});
  table.appearance = &set.add("latent.appearance", {frames, appearance_dim});
  return table;
}

template <typename T>
LatentCodes<T> latent_lookup(const LatentTable<T> &table, int frame) {
  if (frame < 0 || frame >= table.frames())
    throw InvalidArgument("latent_lookup: frame " + std::to_string(frame) + " outside [0," +
                          std::to_string(table.frames()) + ")");
  LatentCodes<T> codes;
  codes.deformation = table.deformation->matrix().row(frame).transpose();
  codes.appearance = table.appearance->matrix().row(frame).transpose();
  return codes;
}

template struct ParameterTensor<float>;
template struct ParameterTensor<double>;
template class ParameterSet<float>;
template class ParameterSet<double>;
template LatentTable<float> make_latent_table(ParameterSet<float> &, int, int, int);
template LatentTable<double> make_latent_table(ParameterSet<double> &, int, int, int);
template LatentCodes<float> latent_lookup(const LatentTable<float> &, int);
template LatentCodes<double> latent_lookup(const LatentTable<double> &, int);

}  // namespace exnerf

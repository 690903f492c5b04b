// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "exnerf/diffnet/parameters.hpp"
#include "exnerf/diffnet/tape.hpp"
#include "exnerf/rng.hpp"

namespace exnerf {

enum class Activation { none, sigmoid, softplus };

/// `depth` ReLU hidden layers of `hidden_width`, then a linear output layer.
/// The hidden layer at `skip_layer` additionally receives the network input.
struct MlpSpec {
  int input_dim = 0;
  int hidden_width = 0;
  int depth = 0;
  std::optional<int> skip_layer;
  int output_dim = 0;
  Activation final_activation = Activation::none;

  void validate() const;
  int layer_input_dim(int layer) const;
};

/// Parameters of one MLP, registered in a ParameterSet as
/// `<prefix>.l<i>.weight` (in x out) and `<prefix>.l<i>.bias`.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet<T> &set, const std::string &prefix, MlpSpec spec);

  const MlpSpec &spec() const { return spec_; }
  int layers() const { return static_cast<int>(weights_.size()); }
  ParameterTensor<T> &weight(int layer) { return *weights_.at(layer); }
  ParameterTensor<T> &bias(int layer) { return *biases_.at(layer); }
  const ParameterTensor<T> &weight(int layer) const { return *weights_.at(layer); }
  const ParameterTensor<T> &bias(int layer) const { return *biases_.at(layer); }
  std::vector<ParameterTensor<T> *> parameters() const;

  /// Uniform fan-in init: bound sqrt(6/fan_in) before ReLU, sqrt(3/fan_in)
  /// on the output layer. Biases zero.
  void init_uniform(CounterRng &rng);
  void zero_output_layer();

  Var forward(Tape<T> &tape, std::span<const LinearInput> inputs) const;
  Var forward(Tape<T> &tape, Var input) const;

 private:
  MlpSpec spec_;
  std::vector<ParameterTensor<T> *> weights_;
  std::vector<ParameterTensor<T> *> biases_;
};

/// Single-input evaluation that records onto `tape`; checks the input width.
template <typename T>
Var mlp_forward(const Mlp<T> &net, Tape<T> &tape, Var input);

extern template class Mlp<float>;
extern template class Mlp<double>;

}  // namespace exnerf

// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/diffnet/mlp.hpp"

#include <cmath>

#include "exnerf/error.hpp"

namespace exnerf {

void MlpSpec::validate() const {
  if (input_dim <= 0 || output_dim <= 0) throw InvalidArgument("MlpSpec: dimensions must be positive");
  if (depth < 0) throw InvalidArgument("MlpSpec: negative depth");
  if (depth > 0 && hidden_width <= 0) throw InvalidArgument("MlpSpec: hidden width must be positive");
  if (skip_layer && (*skip_layer <= 0 || *skip_layer >= depth))
    throw InvalidArgument("MlpSpec: skip layer must lie strictly inside (0, depth)");
}

int MlpSpec::layer_input_dim(int layer) const {
  if (layer == 0) return input_dim;
  if (skip_layer && layer == *skip_layer) return hidden_width + input_dim;
  return hidden_width;
}

template <typename T>
Mlp<T>::Mlp(ParameterSet<T> &set, const std::string &prefix, MlpSpec spec) : spec_(spec) {
  spec_.validate();
  for (int l = 0; l <= spec_.depth; ++l) {
    const int in = spec_.layer_input_dim(l);
    const int out = l == spec_.depth ? spec_.output_dim : spec_.hidden_width;
    const std::string base = prefix + ".l" + std::to_string(l);
    weights_.push_back(&set.add(base + ".weight", {in, out}));
    biases_.push_back(&set.add(base + ".bias", {out}));
  }
}

template <typename T>
std::vector<ParameterTensor<T> *> Mlp<T>::parameters() const {
  std::vector<ParameterTensor<T> *> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(weights_[i]);
    out.push_back(biases_[i]);
  }
  return out;
}

template <typename T>
void Mlp<T>::init_uniform(CounterRng &rng) {
  for (int l = 0; l < layers(); ++l) {
    auto &w = *weights_[l];
    const double gain = l == spec_.depth ? 3.0 : 6.0;
    const double bound = std::sqrt(gain / w.rows());
    for (auto &v : w.values) v = static_cast<T>(rng.uniform(-bound, bound));
    std::fill(biases_[l]->values.begin(), biases_[l]->values.end(), T(0));
  }
}

template <typename T>
void Mlp<T>::zero_output_layer() {
  std::fill(weights_.back()->values.begin(), weights_.back()->values.end(), T(0));
  std::fill(biases_.back()->values.begin(), biases_.back()->values.end(), T(0));
}

template <typename T>
Var Mlp<T>::forward(Tape<T> &tape, std::span<const LinearInput> inputs) const {
  Var h = tape.linear(inputs, *weights_[0], *biases_[0]);
  if (spec_.depth > 0) h = tape.relu(h);
  for (int l = 1; l <= spec_.depth; ++l) {
    if (spec_.skip_layer && l == *spec_.skip_layer) {
      std::vector<LinearInput> parts;
      parts.push_back({h, 1});
      parts.insert(parts.end(), inputs.begin(), inputs.end());
      h = tape.linear(parts, *weights_[l], *biases_[l]);
    } else {
      h = tape.linear(h, *weights_[l], *biases_[l]);
    }
    if (l < spec_.depth) h = tape.relu(h);
  }
  switch (spec_.final_activation) {
    case Activation::sigmoid: return tape.sigmoid(h);
    case Activation::softplus: return tape.softplus(h);
    case Activation::none: break;
  }
  return h;
}

template <typename T>
Var Mlp<T>::forward(Tape<T> &tape, Var input) const {
  const LinearInput part{input, 1};
  return forward(tape, std::span<const LinearInput>(&part, 1));
}

template <typename T>
Var mlp_forward(const Mlp<T> &net, Tape<T> &tape, Var input) {
  if (tape.value(input).cols() != net.spec().input_dim)
    throw InvalidArgument("mlp_forward: input has " + std::to_string(tape.value(input).cols()) +
                          " columns, network expects " + std::to_string(net.spec().input_dim));
  return net.forward(tape, input);
}

template class Mlp<float>;
template class Mlp<double>;
template Var mlp_forward(const Mlp<float> &, Tape<float> &, Var);
template Var mlp_forward(const Mlp<double> &, Tape<double> &, Var);

}  // namespace exnerf

// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "exnerf/diffnet/parameters.hpp"
#include "exnerf/encoding.hpp"
#include "exnerf/types.hpp"

namespace exnerf {

/// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// One operand of Tape::linear. A part with group g > 1 holds one row per
/// g consecutive output rows (e.g. one latent code per ray, broadcast to all
/// samples of that ray), which avoids materializing the broadcast.
struct LinearInput {
  Var var;
  int group = 1;
};

/// Reverse-mode tape over row-batched matrices.
///
/// Every op appends a node; backward() walks the nodes in reverse and adds
/// parameter gradients into ParameterTensor::gradient. Gradients are first
/// collected in tape-local buffers and flushed in first-touch order, so the
/// result only depends on the order ops were recorded.
template <typename T>
class Tape {
 public:
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;
  Tape(Tape &&) = default;
  Tape &operator=(Tape &&) = default;

  bool recording() const { return record_; }

  /// Parameters listed here never receive gradient from this tape.
  void freeze(const ParameterTensor<T> *param) { frozen_.insert(param); }

  Var constant(Mat<T> value);
  /// Differentiable input; its gradient is readable via grad() after backward.
  Var leaf(Mat<T> value);

  const Mat<T> &value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of a node after backward (empty matrix if none reached it).
  const Mat<T> &grad(Var v) const { return nodes_.at(v.id).grad; }
  std::size_t size() const { return nodes_.size(); }

  /// y = concat(parts) * W + b with W stored (in x out) row-major.
  Var linear(std::span<const LinearInput> parts, ParameterTensor<T> &weight,
             ParameterTensor<T> &bias);
  Var linear(Var x, ParameterTensor<T> &weight, ParameterTensor<T> &bias);

  Var relu(Var x);
  Var sigmoid(Var x);
  Var softplus(Var x);
  Var add(Var a, Var b);
  Var scale(Var x, T factor);
  Var slice_cols(Var x, int start, int count);

  /// Positional encoding of an N x 3 node with optional per-band weights.
  Var encode(Var x, const EncodingSpec &spec, std::vector<T> band_weights = {});

  /// Rows of a parameter table (e.g. per-frame latent codes).
  Var gather_rows(ParameterTensor<T> &table, std::vector<int> rows);

  struct CompositeResult {
    Var color;       ///< rays x 3
    Mat<T> weights;  ///< rays x samples
    Vec<T> depth;
    Vec<T> opacity;
  };
  /// Volume-rendering quadrature: sigma is (rays*samples) x 1, color is
  /// (rays*samples) x 3, t is rays x samples.
  CompositeResult composite(Var sigma, Var color, const Mat<T> &t, const Vec<T> &t_far,
                            T background);

  /// Scalar mean of squared differences against a constant target.
  Var mse(Var pred, const Mat<T> &target);
  /// Scalar sum_r weight_r * ||x_r||_2. The norm's gradient at 0 is taken as 0.
  Var weighted_row_norm_sum(Var x, Vec<T> row_weights);
  /// Scalar a + b.
  Var add_scalars(Var a, Var b);

  /// Backpropagate from `output` seeded with `seed` (same shape as its value),
  /// then add the collected parameter gradients into the parameters.
  void backward(Var output, const Mat<T> &seed);
  /// Scalar convenience form (seed = 1).
  void backward(Var scalar_output);

  /// Two-phase form of backward for concurrent tapes: propagate() touches only
  /// tape-local state; flush() adds into the shared parameters.
  void propagate(Var output, const Mat<T> &seed);
  void flush();

  bool consumed() const { return consumed_; }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool requires_grad = false;
    std::function<void(Tape &, int)> backward;
  };

  Var push(Mat<T> value, bool requires_grad, std::function<void(Tape &, int)> backward);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  Mat<T> &grad_ref(int id);
  /// grad(id) += expr, assigning directly when no gradient has arrived yet.
  template <typename Expr>
  void accumulate(int id, const Expr &expr) {
    Mat<T> &g = nodes_[id].grad;
    if (g.size() == 0)
      g.noalias() = expr;
    else
      g.noalias() += expr;
  }
  T *param_grad(ParameterTensor<T> &p);
  bool trainable(const ParameterTensor<T> &p) const {
    return record_ && frozen_.find(&p) == frozen_.end();
  }

  bool record_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  std::vector<std::pair<ParameterTensor<T> *, AlignedVector<T>>> param_grads_;
  std::unordered_set<const ParameterTensor<T> *> frozen_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace exnerf

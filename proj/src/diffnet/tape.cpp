// Copyright Contributors to the exnerf project
// SPDX-License-Identifier: Apache-2.0

#include "exnerf/diffnet/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "exnerf/composite.hpp"
#include "exnerf/error.hpp"

namespace exnerf {

namespace {

template <typename T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Var Tape<T>::push(Mat<T> value, bool requires_grad, std::function<void(Tape &, int)> backward) {
  if (consumed_) throw StateError("tape already consumed by backward");
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Mat<T> &Tape<T>::grad_ref(int id) {
  Node &n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename T>
T *Tape<T>::param_grad(ParameterTensor<T> &p) {
  for (auto &[ptr, buf] : param_grads_)
    if (ptr == &p) return buf.data();
  param_grads_.emplace_back(&p, AlignedVector<T>(p.size(), T(0)));
  return param_grads_.back().second.data();
}

template <typename T>
Var Tape<T>::constant(Mat<T> value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
Var Tape<T>::leaf(Mat<T> value) {
  return push(std::move(value), true, [](Tape &, int) {});
}

template <typename T>
Var Tape<T>::linear(Var x, ParameterTensor<T> &weight, ParameterTensor<T> &bias) {
  const LinearInput part{x, 1};
  return linear(std::span<const LinearInput>(&part, 1), weight, bias);
}

template <typename T>
Var Tape<T>::linear(std::span<const LinearInput> parts_in, ParameterTensor<T> &weight,
                    ParameterTensor<T> &bias) {
  if (parts_in.empty()) throw InvalidArgument("linear: no inputs");
  std::vector<LinearInput> parts(parts_in.begin(), parts_in.end());
  const Eigen::Index out = weight.cols();
  if (static_cast<Eigen::Index>(bias.size()) != out)
    throw InvalidArgument("linear: bias '" + bias.name + "' does not match weight width");
  Eigen::Index in_total = 0;
  Eigen::Index n = -1;
  bool any_grad = trainable(weight) || trainable(bias);
  for (const auto &p : parts) {
    if (p.group < 1) throw InvalidArgument("linear: group must be >= 1");
    const auto &v = value(p.var);
    in_total += v.cols();
    const Eigen::Index rows = v.rows() * p.group;
    if (n < 0) n = rows;
    if (rows != n) throw InvalidArgument("linear: inputs disagree on batch size");
    any_grad = any_grad || needs(p.var);
  }
  if (in_total != weight.rows())
    throw InvalidArgument("linear: input width " + std::to_string(in_total) +
                          " does not match weight '" + weight.name + "' (" +
                          std::to_string(weight.rows()) + " rows)");

  const auto w = weight.matrix();
  Mat<T> y(n, out);
  y.rowwise() = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.values.data(), out);
  Eigen::Index offset = 0;
  for (const auto &p : parts) {
    const auto &xv = value(p.var);
    const auto wb = w.middleRows(offset, xv.cols());
    if (p.group == 1) {
      y.noalias() += xv * wb;
    } else {
      Mat<T> z = xv * wb;
      for (Eigen::Index r = 0; r < z.rows(); ++r)
        y.middleRows(r * p.group, p.group).rowwise() += z.row(r);
    }
    offset += xv.cols();
  }

  return push(std::move(y), any_grad, [parts, &weight, &bias](Tape &tape, int self) {
    const Mat<T> &dy = tape.nodes_[self].grad;
    if (tape.trainable(bias)) {
      T *bg = tape.param_grad(bias);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bg, dy.cols()) += dy.colwise().sum();
    }
    const bool train_w = tape.trainable(weight);
    T *wg = train_w ? tape.param_grad(weight) : nullptr;
    const auto w = weight.matrix();
    Eigen::Index offset = 0;
    for (const auto &p : parts) {
      const Mat<T> &xv = tape.nodes_[p.var.id].value;
      const Eigen::Index width = xv.cols();
      const auto wb = w.middleRows(offset, width);
      Mat<T> grouped;
      if (p.group > 1) {
        grouped.resize(xv.rows(), dy.cols());
        for (Eigen::Index r = 0; r < xv.rows(); ++r)
          grouped.row(r) = dy.middleRows(r * p.group, p.group).colwise().sum();
      }
      const Mat<T> &g = p.group > 1 ? grouped : dy;
      if (train_w) {
        Eigen::Map<Mat<T>> wgm(wg + offset * weight.cols(), width, weight.cols());
        wgm.noalias() += xv.transpose() * g;
      }
      if (tape.needs(p.var)) tape.accumulate(p.var.id, g * wb.transpose());
      offset += width;
    }
  });
}

template <typename T>
Var Tape<T>::relu(Var x) {
  Mat<T> y = value(x).cwiseMax(T(0));
  return push(std::move(y), needs(x), [x](Tape &tape, int self) {
    const Mat<T> &dy = tape.nodes_[self].grad;
    const Mat<T> &xv = tape.nodes_[x.id].value;
    tape.accumulate(x.id, (xv.array() > T(0)).select(dy.array(), T(0)).matrix());
  });
}

template <typename T>
Var Tape<T>::sigmoid(Var x) {
  Mat<T> y = value(x).unaryExpr([](T v) { return stable_sigmoid(v); });
  return push(std::move(y), needs(x), [x](Tape &tape, int self) {
    const Node &me = tape.nodes_[self];
    tape.grad_ref(x.id).array() +=
        me.grad.array() * me.value.array() * (T(1) - me.value.array());
  });
}

template <typename T>
Var Tape<T>::softplus(Var x) {
  Mat<T> y = value(x).unaryExpr([](T v) { return stable_softplus(v); });
  return push(std::move(y), needs(x), [x](Tape &tape, int self) {
    const Mat<T> &dy = tape.nodes_[self].grad;
    const Mat<T> &xv = tape.nodes_[x.id].value;
    tape.grad_ref(x.id).array() +=
        dy.array() * xv.unaryExpr([](T v) { return stable_sigmoid(v); }).array();
  });
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw InvalidArgument("add: shape mismatch");
  Mat<T> y = value(a) + value(b);
  return push(std::move(y), needs(a) || needs(b), [a, b](Tape &tape, int self) {
    if (tape.needs(a)) tape.accumulate(a.id, tape.nodes_[self].grad);
    if (tape.needs(b)) tape.accumulate(b.id, tape.nodes_[self].grad);
  });
}

template <typename T>
Var Tape<T>::add_scalars(Var a, Var b) {
  if (value(a).size() != 1 || value(b).size() != 1) throw InvalidArgument("add_scalars: not scalars");
  return add(a, b);
}

template <typename T>
Var Tape<T>::scale(Var x, T factor) {
  Mat<T> y = value(x) * factor;
  return push(std::move(y), needs(x), [x, factor](Tape &tape, int self) {
    tape.grad_ref(x.id) += tape.nodes_[self].grad * factor;
  });
}

template <typename T>
Var Tape<T>::slice_cols(Var x, int start, int count) {
  const auto &xv = value(x);
  if (start < 0 || count < 0 || start + count > xv.cols()) throw InvalidArgument("slice_cols: out of range");
  Mat<T> y = xv.middleCols(start, count);
  return push(std::move(y), needs(x), [x, start, count](Tape &tape, int self) {
    tape.grad_ref(x.id).middleCols(start, count) += tape.nodes_[self].grad;
  });
}

template <typename T>
Var Tape<T>::encode(Var x, const EncodingSpec &spec, std::vector<T> band_weights) {
  spec.validate();
  const auto &xv = value(x);
  if (xv.cols() != 3) throw InvalidArgument("encode: expects N x 3 input");
  if (!band_weights.empty() && static_cast<int>(band_weights.size()) != spec.bands)
    throw InvalidArgument("encode: band weight count mismatch");
  Mat<T> y;
  encode_rows<T>(xv, spec, band_weights, y);
  return push(std::move(y), needs(x), [x, spec, band_weights](Tape &tape, int self) {
    encode_rows_backward<T>(tape.nodes_[x.id].value, spec, band_weights, tape.nodes_[self].grad,
                            tape.grad_ref(x.id));
  });
}

template <typename T>
Var Tape<T>::gather_rows(ParameterTensor<T> &table, std::vector<int> rows) {
  const int cols = table.cols();
  Mat<T> y(static_cast<Eigen::Index>(rows.size()), cols);
  const auto m = table.matrix();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= table.rows())
      throw InvalidArgument("gather_rows: row " + std::to_string(rows[i]) + " outside table '" +
                            table.name + "'");
    y.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  }
  return push(std::move(y), trainable(table), [rows = std::move(rows), &table](Tape &tape, int self) {
    const Mat<T> &dy = tape.nodes_[self].grad;
    T *g = tape.param_grad(table);
    const int cols = table.cols();
    for (std::size_t i = 0; i < rows.size(); ++i)
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(g + static_cast<std::size_t>(rows[i]) * cols, cols) +=
          dy.row(static_cast<Eigen::Index>(i));
  });
}

template <typename T>
typename Tape<T>::CompositeResult Tape<T>::composite(Var sigma, Var color, const Mat<T> &t,
                                                     const Vec<T> &t_far, T background) {
  const Eigen::Index rays = t.rows();
  const Eigen::Index samples = t.cols();
  const auto &sv = value(sigma);
  const auto &cv = value(color);
  if (sv.rows() != rays * samples || sv.cols() != 1 || cv.rows() != rays * samples || cv.cols() != 3 ||
      t_far.size() != rays)
    throw InvalidArgument("composite: inconsistent shapes");

  CompositeResult res;
  res.weights.resize(rays, samples);
  res.depth.resize(rays);
  res.opacity.resize(rays);
  Mat<T> trans_next(rays, samples);
  Mat<T> rgb(rays, 3);
  for (Eigen::Index r = 0; r < rays; ++r) {
    T out[3];
    composite_kernel<T>(t.row(r).data(), sv.data() + r * samples, cv.data() + r * samples * 3,
                        static_cast<int>(samples), t_far[r], background, res.weights.row(r).data(),
                        trans_next.row(r).data(), out, res.depth[r], res.opacity[r]);
    rgb(r, 0) = out[0];
    rgb(r, 1) = out[1];
    rgb(r, 2) = out[2];
  }
  res.color = push(std::move(rgb), needs(sigma) || needs(color),
                   [sigma, color, t, t_far, background, weights = res.weights,
                    trans_next = std::move(trans_next)](Tape &tape, int self) {
                     const Mat<T> &dy = tape.nodes_[self].grad;
                     const Mat<T> &cv = tape.nodes_[color.id].value;
                     Mat<T> gs = Mat<T>::Zero(cv.rows(), 1);
                     Mat<T> gc = Mat<T>::Zero(cv.rows(), 3);
                     const Eigen::Index samples = t.cols();
                     for (Eigen::Index r = 0; r < t.rows(); ++r) {
                       const T g[3] = {dy(r, 0), dy(r, 1), dy(r, 2)};
                       composite_kernel_backward<T>(
                           t.row(r).data(), cv.data() + r * samples * 3, static_cast<int>(samples),
                           t_far[r], background, weights.row(r).data(), trans_next.row(r).data(), g,
                           gs.data() + r * samples, gc.data() + r * samples * 3);
                     }
                     if (tape.needs(sigma)) tape.grad_ref(sigma.id) += gs;
                     if (tape.needs(color)) tape.grad_ref(color.id) += gc;
                   });
  return res;
}

template <typename T>
Var Tape<T>::mse(Var pred, const Mat<T> &target) {
  const auto &pv = value(pred);
  if (pv.rows() != target.rows() || pv.cols() != target.cols())
    throw InvalidArgument("mse: prediction and target sizes differ");
  Mat<T> y(1, 1);
  y(0, 0) = (pv - target).squaredNorm() / static_cast<T>(pv.size());
  return push(std::move(y), needs(pred), [pred, target](Tape &tape, int self) {
    const T s = tape.nodes_[self].grad(0, 0);
    const Mat<T> &pv = tape.nodes_[pred.id].value;
    tape.grad_ref(pred.id) += (pv - target) * (T(2) * s / static_cast<T>(pv.size()));
  });
}

template <typename T>
Var Tape<T>::weighted_row_norm_sum(Var x, Vec<T> row_weights) {
  const auto &xv = value(x);
  if (row_weights.size() != xv.rows()) throw InvalidArgument("weighted_row_norm_sum: weight count mismatch");
  Mat<T> y(1, 1);
  y(0, 0) = T(0);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) y(0, 0) += row_weights[r] * xv.row(r).norm();
  return push(std::move(y), needs(x), [x, row_weights = std::move(row_weights)](Tape &tape, int self) {
    const T s = tape.nodes_[self].grad(0, 0);
    const Mat<T> &xv = tape.nodes_[x.id].value;
    Mat<T> &gx = tape.grad_ref(x.id);
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
      const T nrm = xv.row(r).norm();
      if (nrm > T(0)) gx.row(r) += xv.row(r) * (s * row_weights[r] / nrm);
    }
  });
}

template <typename T>
void Tape<T>::propagate(Var output, const Mat<T> &seed) {
  if (consumed_) throw StateError("tape already consumed by backward");
  if (!record_) throw StateError("backward on a tape that does not record gradients");
  if (!output.valid() || output.id >= static_cast<int>(nodes_.size()))
    throw InvalidArgument("backward: unknown output node");
  const auto &ov = nodes_[output.id].value;
  if (seed.rows() != ov.rows() || seed.cols() != ov.cols())
    throw InvalidArgument("backward: seed shape does not match output");
  consumed_ = true;
  if (!nodes_[output.id].requires_grad) return;
  grad_ref(output.id) += seed;
  for (int id = output.id; id >= 0; --id) {
    Node &n = nodes_[id];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
}

template <typename T>
void Tape<T>::flush() {
  for (auto &[param, buf] : param_grads_) {
    T *dst = param->gradient.data();
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] += buf[i];
  }
  param_grads_.clear();
}

template <typename T>
void Tape<T>::backward(Var output, const Mat<T> &seed) {
  propagate(output, seed);
  flush();
}

template <typename T>
void Tape<T>::backward(Var scalar_output) {
  backward(scalar_output, Mat<T>::Ones(1, 1));
}

template class Tape<float>;
template class Tape<double>;

}  // namespace exnerf

// Copyright 2026 The cvqa Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cvqa/nn/graph.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "cvqa/errors.hpp"

namespace cvqa::nn {
namespace {

std::string shape_str(const Eigen::Index r, const Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
  }
}

template <typename T>
void require_row(const Var<T>& row, Eigen::Index cols, const char* op) {
  if (row.rows() != 1 || row.cols() != cols) {
    throw ShapeError(std::string(op) + ": expected 1x" + std::to_string(cols) + " row, got " +
                     shape_str(row.rows(), row.cols()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterStore

const char* dtype_name(DType d) { return d == DType::kFloat32 ? "float32" : "float64"; }

template <typename T>
int ParameterStore<T>::add(const std::string& name, Matrix<T> init, bool decay) {
  if (index_.count(name)) throw ShapeError("duplicate parameter name '" + name + "'");
  const int id = static_cast<int>(params_.size());
  Parameter<T> p;
  p.name = name;
  p.grad = Matrix<T>::Zero(init.rows(), init.cols());
  p.value = std::move(init);
  p.decay = decay;
  params_.push_back(std::move(p));
  index_[name] = id;
  return id;
}

template <typename T>
int ParameterStore<T>::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ShapeError("unknown parameter '" + name + "'");
  return it->second;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

template <typename T>
void ParameterStore<T>::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& p : params_) {
    if (p.name.rfind(prefix, 0) == 0) p.trainable = trainable;
  }
}

template <typename T>
std::size_t ParameterStore<T>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

template <typename T>
std::vector<TensorSpec> ParameterStore<T>::specs() const {
  std::vector<TensorSpec> out;
  for (const auto& p : params_) {
    out.push_back({p.name, {static_cast<int>(p.value.rows()), static_cast<int>(p.value.cols())}, dtype_of<T>()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var<T> Graph<T>::constant(Matrix<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Graph<T>::input(Matrix<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Graph<T>::param(int id) {
  if (params_ == nullptr) throw ShapeError("graph has no parameter store");
  if (param_nodes_.size() < params_->size()) param_nodes_.resize(params_->size(), -1);
  auto& slot = param_nodes_[static_cast<std::size_t>(id)];
  if (slot >= 0) return Var<T>(this, slot);
  const auto& p = (*params_)[id];
  Node n;
  n.value = p.value;
  n.param_id = id;
  n.requires_grad = grad_enabled_ && p.trainable;
  nodes_.push_back(std::move(n));
  slot = static_cast<int>(nodes_.size()) - 1;
  return Var<T>(this, slot);
}

template <typename T>
Var<T> Graph<T>::param(const std::string& name) {
  if (params_ == nullptr) throw ShapeError("graph has no parameter store");
  return param(params_->id(name));
}

template <typename T>
const Matrix<T>& Graph<T>::grad(int id) const {
  const auto& n = nodes_[static_cast<std::size_t>(id)];
  return n.has_grad ? n.grad : empty_;
}

template <typename T>
Var<T> Graph<T>::push(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
}

template <typename T>
Var<T> Graph<T>::push(Matrix<T> value, std::span<const Var<T>> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (in.valid() && requires_grad(in.id())) {
      n.requires_grad = true;
      break;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
void Graph<T>::backward(Var<T> root) {
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward needs a 1x1 root");
  if (!requires_grad(root.id())) return;
  accumulate(root.id(), Matrix<T>::Ones(1, 1));
  for (int id = root.id(); id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
  if (params_ == nullptr) return;
  for (const auto& n : nodes_) {
    if (n.param_id >= 0 && n.has_grad) (*params_)[n.param_id].grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Ops

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.rows(), a.cols()) + " * " + shape_str(b.rows(), b.cols()));
  }
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return a.graph()->push(std::move(out), {a, b}, [ia, ib](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(ia)) g.accumulate(ia, gy * g.value(ib).transpose());
    if (g.requires_grad(ib)) g.accumulate(ib, g.value(ia).transpose() * gy);
  });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + shape_str(a.rows(), a.cols()) + " * (" +
                     shape_str(b.rows(), b.cols()) + ")^T");
  }
  Matrix<T> out;
  out.noalias() = a.value() * b.value().transpose();
  const int ia = a.id(), ib = b.id();
  return a.graph()->push(std::move(out), {a, b}, [ia, ib](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(ia)) g.accumulate(ia, gy * g.value(ib));
    if (g.requires_grad(ib)) g.accumulate(ib, gy.transpose() * g.value(ia));
  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias) {
  if (x.cols() != w.rows()) {
    throw ShapeError("linear: input " + shape_str(x.rows(), x.cols()) + " vs weight " +
                     shape_str(w.rows(), w.cols()));
  }
  Matrix<T> out;
  out.noalias() = x.value() * w.value();
  if (bias.valid()) {
    require_row(bias, w.cols(), "linear bias");
    out.rowwise() += bias.value().row(0);
  }
  const int ix = x.id(), iw = w.id(), ib = bias.valid() ? bias.id() : -1;
  return x.graph()->push(std::move(out), {x, w, bias}, [ix, iw, ib](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(ix)) g.accumulate(ix, gy * g.value(iw).transpose());
    if (g.requires_grad(iw)) g.accumulate(iw, g.value(ix).transpose() * gy);
    if (ib >= 0 && g.requires_grad(ib)) g.accumulate(ib, gy.colwise().sum());
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "add");
  Matrix<T> out = a.value() + b.value();
  const int ia = a.id(), ib = b.id();
  return a.graph()->push(std::move(out), {a, b}, [ia, ib](Graph<T>& g, int self) {
    g.accumulate(ia, g.grad(self));
    g.accumulate(ib, g.grad(self));
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "sub");
  Matrix<T> out = a.value() - b.value();
  const int ia = a.id(), ib = b.id();
  return a.graph()->push(std::move(out), {a, b}, [ia, ib](Graph<T>& g, int self) {
    g.accumulate(ia, g.grad(self));
    g.accumulate(ib, -g.grad(self));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a, b, "mul");
  Matrix<T> out = a.value().cwiseProduct(b.value());
  const int ia = a.id(), ib = b.id();
  return a.graph()->push(std::move(out), {a, b}, [ia, ib](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(ia)) g.accumulate(ia, gy.cwiseProduct(g.value(ib)));
    if (g.requires_grad(ib)) g.accumulate(ib, gy.cwiseProduct(g.value(ia)));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Matrix<T> out = a.value() * factor;
  const int ia = a.id();
  return a.graph()->push(std::move(out), {a}, [ia, factor](Graph<T>& g, int self) {
    g.accumulate(ia, g.grad(self) * factor);
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T offset) {
  Matrix<T> out = a.value().array() + offset;
  const int ia = a.id();
  return a.graph()->push(std::move(out), {a}, [ia](Graph<T>& g, int self) {
    g.accumulate(ia, g.grad(self));
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> row) {
  require_row(row, a.cols(), "add_row");
  Matrix<T> out = a.value();
  out.rowwise() += row.value().row(0);
  const int ia = a.id(), ir = row.id();
  return a.graph()->push(std::move(out), {a, row}, [ia, ir](Graph<T>& g, int self) {
    g.accumulate(ia, g.grad(self));
    if (g.requires_grad(ir)) g.accumulate(ir, g.grad(self).colwise().sum());
  });
}

template <typename T>
Var<T> scale_by(Var<T> a, Var<T> s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("scale_by: factor must be 1x1");
  const T factor = s.scalar();
  Matrix<T> out = a.value() * factor;
  const int ia = a.id(), is = s.id();
  return a.graph()->push(std::move(out), {a, s}, [ia, is, factor](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    if (g.requires_grad(ia)) g.accumulate(ia, gy * factor);
    if (g.requires_grad(is)) {
      Matrix<T> d(1, 1);
      d(0, 0) = gy.cwiseProduct(g.value(ia)).sum();
      g.accumulate(is, d);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  const Eigen::Index n = x.rows(), d = x.cols();
  require_row(gamma, d, "layer_norm gamma");
  require_row(beta, d, "layer_norm beta");
  const auto& xv = x.value();
  Matrix<T> xhat(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = xv.row(r).mean();
    const T var = (xv.row(r).array() - mean).square().mean();
    inv(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv(r);
  }
  Matrix<T> out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  const int ix = x.id(), igm = gamma.id(), ib = beta.id();
  return x.graph()->push(
      std::move(out), {x, gamma, beta},
      [ix, igm, ib, xhat = std::move(xhat), inv = std::move(inv)](Graph<T>& g, int self) {
        const auto& gy = g.grad(self);
        if (g.requires_grad(igm)) g.accumulate(igm, gy.cwiseProduct(xhat).colwise().sum());
        if (g.requires_grad(ib)) g.accumulate(ib, gy.colwise().sum());
        if (g.requires_grad(ix)) {
          Matrix<T> dxhat = gy.array().rowwise() * g.value(igm).row(0).array();
          Matrix<T> dx(dxhat.rows(), dxhat.cols());
          for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
            const T m1 = dxhat.row(r).mean();
            const T m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            dx.row(r) = inv(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
          }
          g.accumulate(ix, dx);
        }
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  static constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  static constexpr T k = static_cast<T>(0.044715);
  const auto& xv = x.value();
  Matrix<T> t = (c * (xv.array() + k * xv.array().cube())).tanh().matrix();
  Matrix<T> out = (T(0.5) * xv.array() * (T(1) + t.array())).matrix();
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix, t = std::move(t)](Graph<T>& g, int self) {
    const auto xa = g.value(ix).array();
    const auto ta = t.array();
    auto dydx = T(0.5) * (T(1) + ta) +
                T(0.5) * xa * (T(1) - ta.square()) * c * (T(1) + T(3) * k * xa.square());
    g.accumulate(ix, (g.grad(self).array() * dydx).matrix());
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Matrix<T> out = (T(1) / (T(1) + (-x.value().array()).exp())).matrix();
  const int ix = x.id();
  return x.graph()->push(out, {x}, [ix](Graph<T>& g, int self) {
    const auto ya = g.value(self).array();
    g.accumulate(ix, (g.grad(self).array() * ya * (T(1) - ya)).matrix());
  });
}

template <typename T>
Var<T> log_eps(Var<T> x, T eps) {
  Matrix<T> out = (x.value().array() + eps).log().matrix();
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix, eps](Graph<T>& g, int self) {
    const auto& xv = g.value(ix);
    g.accumulate(ix, (g.grad(self).array() / (xv.array() + eps)).matrix());
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Matrix<T> out = x.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r).array() -= out.row(r).maxCoeff();
    out.row(r) = out.row(r).array().exp();
    out.row(r) /= out.row(r).sum();
  }
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix](Graph<T>& g, int self) {
    const auto& y = g.value(self);
    const auto& gy = g.grad(self);
    Eigen::Matrix<T, Eigen::Dynamic, 1> dots = gy.cwiseProduct(y).rowwise().sum();
    Matrix<T> dx = y.array() * (gy.array().colwise() - dots.array());
    g.accumulate(ix, dx);
  });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> x) {
  Matrix<T> out = x.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const T m = out.row(r).maxCoeff();
    const T lse = m + std::log((out.row(r).array() - m).exp().sum());
    out.row(r).array() -= lse;
  }
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    Matrix<T> p = g.value(self).array().exp();
    Eigen::Matrix<T, Eigen::Dynamic, 1> sums = gy.rowwise().sum();
    Matrix<T> dx = gy - (p.array().colwise() * sums.array()).matrix();
    g.accumulate(ix, dx);
  });
}

template <typename T>
Var<T> mean_rows(Var<T> x) {
  Matrix<T> out = x.value().colwise().mean();
  const int ix = x.id();
  const Eigen::Index n = x.rows();
  return x.graph()->push(std::move(out), {x}, [ix, n](Graph<T>& g, int self) {
    g.accumulate(ix, g.grad(self).replicate(n, 1) / static_cast<T>(n));
  });
}

template <typename T>
Var<T> broadcast_rows(Var<T> x, Eigen::Index n) {
  if (x.rows() != 1) throw ShapeError("broadcast_rows: input must be a single row");
  Matrix<T> out = x.value().replicate(n, 1);
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix](Graph<T>& g, int self) {
    g.accumulate(ix, g.grad(self).colwise().sum());
  });
}

template <typename T>
Var<T> pool_rows(Var<T> x, Eigen::Index stride) {
  if (stride <= 0 || x.rows() % stride != 0) {
    throw ShapeError("pool_rows: " + std::to_string(x.rows()) + " rows not divisible by stride " +
                     std::to_string(stride));
  }
  const Eigen::Index groups = x.rows() / stride;
  Matrix<T> out(groups, x.cols());
  for (Eigen::Index gi = 0; gi < groups; ++gi) {
    out.row(gi) = x.value().middleRows(gi * stride, stride).colwise().mean();
  }
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix, stride, groups](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    Matrix<T> dx(groups * stride, gy.cols());
    for (Eigen::Index gi = 0; gi < groups; ++gi) {
      dx.middleRows(gi * stride, stride) = gy.row(gi).replicate(stride, 1) / static_cast<T>(stride);
    }
    g.accumulate(ix, dx);
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: nothing to concatenate");
  const Eigen::Index n = parts[0].rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row counts differ");
    total += p.cols();
  }
  Matrix<T> out(n, total);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    layout.emplace_back(p.id(), off);
    off += p.cols();
  }
  return parts[0].graph()->push(std::move(out), parts, [layout](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    for (const auto& [id, o] : layout) {
      if (g.requires_grad(id)) g.accumulate(id, gy.middleCols(o, g.value(id).cols()));
    }
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: nothing to concatenate");
  const Eigen::Index d = parts[0].cols();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != d) throw ShapeError("concat_rows: column counts differ");
    total += p.rows();
  }
  Matrix<T> out(total, d);
  std::vector<std::pair<int, Eigen::Index>> layout;
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    layout.emplace_back(p.id(), off);
    off += p.rows();
  }
  return parts[0].graph()->push(std::move(out), parts, [layout](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    for (const auto& [id, o] : layout) {
      if (g.requires_grad(id)) g.accumulate(id, gy.middleRows(o, g.value(id).rows()));
    }
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const int> rows) {
  Matrix<T> out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= x.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(rows[k]) + " out of " +
                       std::to_string(x.rows()));
    }
    out.row(static_cast<Eigen::Index>(k)) = x.value().row(rows[k]);
  }
  const int ix = x.id();
  std::vector<int> idx(rows.begin(), rows.end());
  return x.graph()->push(std::move(out), {x}, [ix, idx = std::move(idx)](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    Matrix<T> dx = Matrix<T>::Zero(g.value(ix).rows(), g.value(ix).cols());
    for (std::size_t k = 0; k < idx.size(); ++k) dx.row(idx[k]) += gy.row(static_cast<Eigen::Index>(k));
    g.accumulate(ix, dx);
  });
}

template <typename T>
Var<T> slice_rows(Var<T> x, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) throw ShapeError("slice_rows: out of range");
  Matrix<T> out = x.value().middleRows(begin, count);
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix, begin, count](Graph<T>& g, int self) {
    Matrix<T> dx = Matrix<T>::Zero(g.value(ix).rows(), g.value(ix).cols());
    dx.middleRows(begin, count) = g.grad(self);
    g.accumulate(ix, dx);
  });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  Matrix<T> out(1, 1);
  out(0, 0) = x.value().sum();
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix](Graph<T>& g, int self) {
    const T s = g.grad(self)(0, 0);
    g.accumulate(ix, Matrix<T>::Constant(g.value(ix).rows(), g.value(ix).cols(), s));
  });
}

template <typename T>
Var<T> element(Var<T> x, Eigen::Index r, Eigen::Index c) {
  if (r < 0 || c < 0 || r >= x.rows() || c >= x.cols()) throw ShapeError("element: out of range");
  Matrix<T> out(1, 1);
  out(0, 0) = x.value()(r, c);
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix, r, c](Graph<T>& g, int self) {
    Matrix<T> dx = Matrix<T>::Zero(g.value(ix).rows(), g.value(ix).cols());
    dx(r, c) = g.grad(self)(0, 0);
    g.accumulate(ix, dx);
  });
}

template <typename T>
Var<T> diagonal(Var<T> x) {
  if (x.rows() != x.cols()) throw ShapeError("diagonal: matrix must be square");
  Matrix<T> out = x.value().diagonal();
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix](Graph<T>& g, int self) {
    const auto n = g.value(ix).rows();
    Matrix<T> dx = Matrix<T>::Zero(n, n);
    dx.diagonal() = g.grad(self).col(0);
    g.accumulate(ix, dx);
  });
}

template <typename T>
Var<T> detach(Var<T> x) {
  return x.graph()->constant(x.value());
}

Offsets uniform_offsets(int count, int length) {
  Offsets off(static_cast<std::size_t>(count) + 1);
  for (int s = 0; s <= count; ++s) off[static_cast<std::size_t>(s)] = s * length;
  return off;
}

namespace {

void check_offsets(const Offsets& off, Eigen::Index rows, const char* op) {
  if (off.size() < 2 || off.front() != 0 || off.back() != rows) {
    throw ShapeError(std::string(op) + ": offsets do not cover " + std::to_string(rows) + " rows");
  }
  for (std::size_t s = 1; s < off.size(); ++s) {
    if (off[s] <= off[s - 1]) throw ShapeError(std::string(op) + ": empty or decreasing segment");
  }
}

}  // namespace

template <typename T>
Var<T> segment_mean(Var<T> x, const Offsets& offsets) {
  check_offsets(offsets, x.rows(), "segment_mean");
  const Eigen::Index segs = static_cast<Eigen::Index>(offsets.size()) - 1;
  Matrix<T> out(segs, x.cols());
  for (Eigen::Index s = 0; s < segs; ++s) {
    out.row(s) = x.value().middleRows(offsets[s], offsets[s + 1] - offsets[s]).colwise().mean();
  }
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix, offsets](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    Matrix<T> dx(offsets.back(), gy.cols());
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      const int len = offsets[s + 1] - offsets[s];
      dx.middleRows(offsets[s], len) = gy.row(static_cast<Eigen::Index>(s)).replicate(len, 1) / static_cast<T>(len);
    }
    g.accumulate(ix, dx);
  });
}

template <typename T>
Var<T> segment_broadcast(Var<T> x, const Offsets& offsets) {
  if (static_cast<Eigen::Index>(offsets.size()) != x.rows() + 1) {
    throw ShapeError("segment_broadcast: " + std::to_string(x.rows()) + " rows for " +
                     std::to_string(offsets.size() - 1) + " segments");
  }
  check_offsets(offsets, offsets.back(), "segment_broadcast");
  Matrix<T> out(offsets.back(), x.cols());
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    out.middleRows(offsets[s], offsets[s + 1] - offsets[s]) =
        x.value().row(static_cast<Eigen::Index>(s)).replicate(offsets[s + 1] - offsets[s], 1);
  }
  const int ix = x.id();
  return x.graph()->push(std::move(out), {x}, [ix, offsets](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    Matrix<T> dx(static_cast<Eigen::Index>(offsets.size()) - 1, gy.cols());
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
      dx.row(static_cast<Eigen::Index>(s)) = gy.middleRows(offsets[s], offsets[s + 1] - offsets[s]).colwise().sum();
    }
    g.accumulate(ix, dx);
  });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, int heads, bool causal, AttentionMaps<T>* maps,
                 const Offsets* q_offsets, const Offsets* kv_offsets) {
  const Eigen::Index d = q.cols();
  if (heads <= 0 || d % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.cols() != d || v.cols() != d || v.rows() != k.rows()) {
    throw ShapeError("attention: q " + shape_str(q.rows(), d) + ", k " + shape_str(k.rows(), k.cols()) + ", v " +
                     shape_str(v.rows(), v.cols()));
  }
  if ((q_offsets == nullptr) != (kv_offsets == nullptr)) {
    throw ShapeError("attention: query and key offsets must be given together");
  }
  Offsets qo = q_offsets ? *q_offsets : Offsets{0, static_cast<int>(q.rows())};
  Offsets ko = kv_offsets ? *kv_offsets : Offsets{0, static_cast<int>(k.rows())};
  check_offsets(qo, q.rows(), "attention queries");
  check_offsets(ko, k.rows(), "attention keys");
  if (qo.size() != ko.size()) throw ShapeError("attention: query and key segment counts differ");
  const std::size_t segs = qo.size() - 1;

  const Eigen::Index dh = d / heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  auto probs = std::make_shared<AttentionMaps<T>>(segs * static_cast<std::size_t>(heads));
  Matrix<T> out(q.rows(), d);
  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  for (std::size_t s = 0; s < segs; ++s) {
    const Eigen::Index q0 = qo[s], n = qo[s + 1] - qo[s];
    const Eigen::Index k0 = ko[s], m = ko[s + 1] - ko[s];
    const Eigen::Index shift = m - n;
    for (int h = 0; h < heads; ++h) {
      Matrix<T>& p = (*probs)[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
      p.noalias() = qv.block(q0, h * dh, n, dh) * kv.block(k0, h * dh, m, dh).transpose();
      p *= sc;
      for (Eigen::Index r = 0; r < n; ++r) {
        if (causal) {
          for (Eigen::Index c = std::max<Eigen::Index>(r + shift + 1, 0); c < m; ++c) {
            p(r, c) = -std::numeric_limits<T>::infinity();
          }
        }
        p.row(r).array() -= p.row(r).maxCoeff();
        p.row(r) = p.row(r).array().exp();
        p.row(r) /= p.row(r).sum();
      }
      out.block(q0, h * dh, n, dh).noalias() = p * vv.block(k0, h * dh, m, dh);
    }
  }
  if (maps != nullptr) *maps = *probs;
  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.graph()->push(std::move(out), {q, k, v},
                         [iq, ik, iv, heads, dh, sc, probs, qo = std::move(qo), ko = std::move(ko)](Graph<T>& g, int self) {
    const auto& gy = g.grad(self);
    const auto& qv = g.value(iq);
    const auto& kv = g.value(ik);
    const auto& vv = g.value(iv);
    Matrix<T> dq(qv.rows(), qv.cols()), dk(kv.rows(), kv.cols()), dv(vv.rows(), vv.cols());
    Matrix<T> dp, ds;
    for (std::size_t s = 0; s + 1 < qo.size(); ++s) {
      const Eigen::Index q0 = qo[s], n = qo[s + 1] - qo[s];
      const Eigen::Index k0 = ko[s], m = ko[s + 1] - ko[s];
      for (int h = 0; h < heads; ++h) {
        const Matrix<T>& p = (*probs)[s * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
        const auto go = gy.block(q0, h * dh, n, dh);
        dv.block(k0, h * dh, m, dh).noalias() = p.transpose() * go;
        dp.noalias() = go * vv.block(k0, h * dh, m, dh).transpose();
        Eigen::Matrix<T, Eigen::Dynamic, 1> dots = dp.cwiseProduct(p).rowwise().sum();
        ds = p.array() * (dp.array().colwise() - dots.array());
        dq.block(q0, h * dh, n, dh).noalias() = sc * (ds * kv.block(k0, h * dh, m, dh));
        dk.block(k0, h * dh, m, dh).noalias() = sc * (ds.transpose() * qv.block(q0, h * dh, n, dh));
      }
    }
    g.accumulate(iq, dq);
    g.accumulate(ik, dk);
    g.accumulate(iv, dv);
  });
}

// ---------------------------------------------------------------------------
// Explicit instantiations

#define CVQA_INSTANTIATE(T)                                                                   \
  template class ParameterStore<T>;                                                           \
  template class Graph<T>;                                                                    \
  template Var<T> matmul(Var<T>, Var<T>);                                                     \
  template Var<T> matmul_nt(Var<T>, Var<T>);                                                  \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                             \
  template Var<T> add(Var<T>, Var<T>);                                                        \
  template Var<T> sub(Var<T>, Var<T>);                                                        \
  template Var<T> mul(Var<T>, Var<T>);                                                        \
  template Var<T> scale(Var<T>, T);                                                           \
  template Var<T> add_scalar(Var<T>, T);                                                      \
  template Var<T> add_row(Var<T>, Var<T>);                                                    \
  template Var<T> scale_by(Var<T>, Var<T>);                                                   \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                      \
  template Var<T> gelu(Var<T>);                                                               \
  template Var<T> sigmoid(Var<T>);                                                            \
  template Var<T> log_eps(Var<T>, T);                                                         \
  template Var<T> softmax_rows(Var<T>);                                                       \
  template Var<T> log_softmax_rows(Var<T>);                                                   \
  template Var<T> mean_rows(Var<T>);                                                          \
  template Var<T> broadcast_rows(Var<T>, Eigen::Index);                                       \
  template Var<T> pool_rows(Var<T>, Eigen::Index);                                            \
  template Var<T> concat_cols(std::span<const Var<T>>);                                       \
  template Var<T> concat_rows(std::span<const Var<T>>);                                       \
  template Var<T> gather_rows(Var<T>, std::span<const int>);                                  \
  template Var<T> slice_rows(Var<T>, Eigen::Index, Eigen::Index);                             \
  template Var<T> sum_all(Var<T>);                                                            \
  template Var<T> element(Var<T>, Eigen::Index, Eigen::Index);                                \
  template Var<T> diagonal(Var<T>);                                                           \
  template Var<T> detach(Var<T>);                                                             \
  template Var<T> segment_mean(Var<T>, const Offsets&);                                       \
  template Var<T> segment_broadcast(Var<T>, const Offsets&);                                  \
  template Var<T> attention(Var<T>, Var<T>, Var<T>, int, bool, AttentionMaps<T>*, const Offsets*, \
                            const Offsets*);

CVQA_INSTANTIATE(float)
CVQA_INSTANTIATE(double)

}  // namespace cvqa::nn

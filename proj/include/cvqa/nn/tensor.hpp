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

#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace cvqa::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class DType { kFloat32, kFloat64 };

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::kFloat32 : DType::kFloat64;
}

const char* dtype_name(DType d);

/// Shape and element type of a named tensor. All tensors here are rank 2;
/// a vector is a 1 x n row.
struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  DType dtype = DType::kFloat32;
};

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool trainable = true;
  /// Decoupled weight decay applies only to matrices, not biases or norms.
  bool decay = true;
};

/// Ordered, name-indexed parameter container. Value-copyable, which is how
/// checkpoints and best-model snapshots are taken.
template <typename T>
class ParameterStore {
 public:
  int add(const std::string& name, Matrix<T> init, bool decay = true);
  int id(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Parameter<T>& operator[](int id) { return params_[static_cast<std::size_t>(id)]; }
  const Parameter<T>& operator[](int id) const { return params_[static_cast<std::size_t>(id)]; }
  Parameter<T>& at(const std::string& name) { return (*this)[id(name)]; }
  const Parameter<T>& at(const std::string& name) const { return (*this)[id(name)]; }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  /// Marks every parameter whose name starts with `prefix` as (non-)trainable.
  void set_trainable(const std::string& prefix, bool trainable);
  std::size_t num_scalars() const;
  std::vector<TensorSpec> specs() const;

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& p : params_) {
      int id = out.add(p.name, p.value.template cast<U>(), p.decay);
      out[id].trainable = p.trainable;
    }
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, int> index_;
};

}  // namespace cvqa::nn

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

#include "cvqa/train/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cvqa::train {

double CosineSchedule::at(long step) const {
  if (total_steps <= 1) return lr_final;
  const double frac = static_cast<double>(std::clamp(step, 0L, total_steps - 1)) / static_cast<double>(total_steps - 1);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(std::numbers::pi * frac));
}

template <typename T>
AdamW<T>::AdamW(nn::ParameterStore<T>& store, AdamWOptions options) : store_(store), opt_(options) {
  for (const auto& p : store_) {
    m_.push_back(nn::Matrix<T>::Zero(p.value.rows(), p.value.cols()));
    v_.push_back(nn::Matrix<T>::Zero(p.value.rows(), p.value.cols()));
  }
}

template <typename T>
double AdamW<T>::step(double lr) {
  ++t_;
  double sq = 0.0;
  for (const auto& p : store_) {
    if (p.trainable) sq += p.grad.template cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double clip = (opt_.clip_norm > 0.0 && norm > opt_.clip_norm) ? opt_.clip_norm / norm : 1.0;
  const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(opt_.beta1, static_cast<double>(t_)));
  const T c2 = static_cast<T>(1.0 - std::pow(opt_.beta2, static_cast<double>(t_)));
  const T step_lr = static_cast<T>(lr);
  const T eps = static_cast<T>(opt_.eps);
  const T decay = static_cast<T>(lr * opt_.weight_decay);
  std::size_t i = 0;
  for (auto& p : store_) {
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (!p.trainable) continue;
    const nn::Matrix<T> g = p.grad * static_cast<T>(clip);
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    if (p.decay) p.value -= decay * p.value;
    p.value.array() -= step_lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace cvqa::train

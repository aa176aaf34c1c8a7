#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <vector>

#include "sparsenet/tape.hpp"
#include "sparsenet/tensor.hpp"

namespace sparsenet {

// Per-channel affine parameters plus running statistics.
// running <- momentum * running + (1 - momentum) * batch, with the biased
// batch variance (the same one used for normalization).
template <typename T>
struct BatchNormState {
  Var<T> gamma;
  Var<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.9);

  explicit BatchNormState(std::size_t channels)
      : gamma(make_var(Tensor<T>({channels}, T{1}))),
        beta(make_var(Tensor<T>({channels}, T{0}))),
        running_mean(channels, T{0}),
        running_var(channels, T{1}) {}

  std::size_t channels() const { return running_mean.size(); }
};

template <typename T>
Var<T> batch_norm(Tape<T>* tape, const Var<T>& x, BatchNormState<T>& state, bool training) {
  const Shape& s = x->shape();
  if (s.size() != 4) throw ShapeError("batch_norm: input must be rank 4 [N,C,H,W], got " + to_string(s));
  if (s[1] != state.channels()) {
    throw ShapeError("batch_norm: channels (dim 1) = " + std::to_string(s[1]) + " but state has " +
                     std::to_string(state.channels()));
  }
  const std::size_t batch = s[0], channels = s[1], area = s[2] * s[3];
  const std::size_t count = batch * area;
  if (training && count < 2) {
    throw std::invalid_argument("batch_norm: training mode needs N*H*W >= 2, got " + std::to_string(count));
  }

  auto out = make_var(Tensor<T>(s));
  // Normalized input and 1/sqrt(var + eps) per channel, kept for backward.
  auto xhat = std::make_shared<std::vector<T>>(x->size());
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  const T* in = x->data();
  T* o = out->data();

  for (std::size_t c = 0; c < channels; ++c) {
    T mean, var;
    if (training) {
      T sum{0};
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < area; ++i) sum += in[(n * channels + c) * area + i];
      mean = sum / static_cast<T>(count);
      T sq{0};
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < area; ++i) {
          const T d = in[(n * channels + c) * area + i] - mean;
          sq += d * d;
        }
      var = sq / static_cast<T>(count);
      state.running_mean[c] = state.momentum * state.running_mean[c] + (T{1} - state.momentum) * mean;
      state.running_var[c] = state.momentum * state.running_var[c] + (T{1} - state.momentum) * var;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const T istd = T{1} / std::sqrt(var + state.epsilon);
    (*inv_std)[c] = istd;
    const T g = (*state.gamma)[c], b = (*state.beta)[c];
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t i = 0; i < area; ++i) {
        const std::size_t idx = (n * channels + c) * area + i;
        const T xh = (in[idx] - mean) * istd;
        (*xhat)[idx] = xh;
        o[idx] = g * xh + b;
      }
    }
  }
  check_finite<T>(out->values(), "batch_norm");

  if (tape) {
    auto gamma = state.gamma, beta = state.beta;
    tape->record([x, out, gamma, beta, xhat, inv_std, training, batch, channels, area, count] {
      if (!out->has_grad()) return;
      const T* go = out->grad().data();
      T* gx = grad_sink(x);
      T* gg = grad_sink(gamma);
      T* gb = grad_sink(beta);
      for (std::size_t c = 0; c < channels; ++c) {
        T sum_dy{0}, sum_dy_xhat{0};
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t i = 0; i < area; ++i) {
            const std::size_t idx = (n * channels + c) * area + i;
            sum_dy += go[idx];
            sum_dy_xhat += go[idx] * (*xhat)[idx];
          }
        if (gg) gg[c] += sum_dy_xhat;
        if (gb) gb[c] += sum_dy;
        if (!gx) continue;
        const T scale = (*gamma)[c] * (*inv_std)[c];
        if (training) {
          const T m = static_cast<T>(count);
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t i = 0; i < area; ++i) {
              const std::size_t idx = (n * channels + c) * area + i;
              gx[idx] += scale / m * (m * go[idx] - sum_dy - (*xhat)[idx] * sum_dy_xhat);
            }
        } else {
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t i = 0; i < area; ++i) {
              const std::size_t idx = (n * channels + c) * area + i;
              gx[idx] += scale * go[idx];
            }
        }
      }
    });
  }
  return out;
}

}  // namespace sparsenet

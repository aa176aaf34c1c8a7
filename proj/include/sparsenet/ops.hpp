#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sparsenet/parallel.hpp"
#include "sparsenet/tape.hpp"
#include "sparsenet/tensor.hpp"

// Differentiable primitives. Every op takes an optional tape: with a tape the
// backward closure is recorded, with nullptr the op is forward-only.

namespace sparsenet {

// ---------------------------------------------------------------------------
// GEMM helpers. Fixed loop order, so the summation order of every output
// element is independent of the worker count.
// ---------------------------------------------------------------------------

namespace detail {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T{0}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[M,N] += A^T * B with A stored [K,M], B stored [K,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      if (av == T{0}) continue;
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

struct ConvGeometry {
  std::size_t batch = 0, in_channels = 0, height = 0, width = 0;
  std::size_t out_channels = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, padding = 0;
  std::size_t out_h = 0, out_w = 0;

  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
  std::size_t out_plane() const { return out_h * out_w; }
  std::size_t in_sample() const { return in_channels * height * width; }
  bool pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && padding == 0; }
};

inline ConvGeometry conv_geometry(const Shape& input, const Shape& weight, std::size_t stride,
                                  std::size_t padding) {
  if (input.size() != 4) throw ShapeError("conv2d: input must be rank 4 [N,C,H,W], got " + to_string(input));
  if (weight.size() != 4) throw ShapeError("conv2d: weight must be rank 4 [Cout,Cin,kh,kw], got " + to_string(weight));
  if (weight[1] != input[1]) {
    throw ShapeError("conv2d: input channels (dim 1) = " + std::to_string(input[1]) +
                     " but weight expects Cin = " + std::to_string(weight[1]));
  }
  for (std::size_t axis : {2u, 3u}) {
    if (weight[axis] != 1 && weight[axis] != 3) {
      throw ShapeError("conv2d: kernel extent (weight dim " + std::to_string(axis) + ") must be 1 or 3, got " +
                       std::to_string(weight[axis]));
    }
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.out_channels = weight[0];
  g.kernel_h = weight[2];
  g.kernel_w = weight[3];
  g.stride = stride;
  g.padding = padding;
  const std::size_t ph = g.height + 2 * padding, pw = g.width + 2 * padding;
  if (ph < g.kernel_h || (ph - g.kernel_h) % stride != 0) {
    throw ShapeError("conv2d: height (dim 2) = " + std::to_string(g.height) + " gives no integral output extent");
  }
  if (pw < g.kernel_w || (pw - g.kernel_w) % stride != 0) {
    throw ShapeError("conv2d: width (dim 3) = " + std::to_string(g.width) + " gives no integral output extent");
  }
  g.out_h = (ph - g.kernel_h) / stride + 1;
  g.out_w = (pw - g.kernel_w) / stride + 1;
  return g;
}

namespace detail {

// col[(c*kh + ki)*kw + kj, oy*OW + ox]
template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* col) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? T{0} : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* img) {
  const std::size_t plane = g.out_plane();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* row = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* in, const T* w, T* out) {
  const std::size_t ckk = g.patch_size(), plane = g.out_plane();
  parallel_for(g.batch, [&](std::size_t n) {
    std::vector<T> col;
    const T* cols = in + n * g.in_sample();
    if (!g.pointwise()) {
      col.resize(ckk * plane);
      im2col(g, cols, col.data());
      cols = col.data();
    }
    T* o = out + n * g.out_channels * plane;
    std::fill(o, o + g.out_channels * plane, T{0});
    gemm_nn(g.out_channels, plane, ckk, w, cols, o);
  });
}

// Accumulates into gin / gw when non-null. Weight gradients are formed per
// sample and reduced in sample order.
template <typename T>
void conv2d_backward(const ConvGeometry& g, const T* in, const T* w, const T* gout, T* gin, T* gw) {
  const std::size_t ckk = g.patch_size(), plane = g.out_plane();
  const std::size_t wsize = g.out_channels * ckk;
  std::vector<T> partial(gw ? g.batch * wsize : 0, T{0});
  parallel_for(g.batch, [&](std::size_t n) {
    const T* go = gout + n * g.out_channels * plane;
    const T* sample = in + n * g.in_sample();
    std::vector<T> col;
    if (gw) {
      const T* cols = sample;
      if (!g.pointwise()) {
        col.resize(ckk * plane);
        im2col(g, sample, col.data());
        cols = col.data();
      }
      std::vector<T> col_t(ckk * plane);
      transpose(cols, ckk, plane, col_t.data());
      gemm_nn(g.out_channels, ckk, plane, go, col_t.data(), partial.data() + n * wsize);
    }
    if (gin) {
      T* gi = gin + n * g.in_sample();
      if (g.pointwise()) {
        gemm_tn(ckk, plane, g.out_channels, w, go, gi);
      } else {
        std::vector<T> dcol(ckk * plane, T{0});
        gemm_tn(ckk, plane, g.out_channels, w, go, dcol.data());
        col2im_add(g, dcol.data(), gi);
      }
    }
  });
  if (gw) {
    parallel_for(g.out_channels, [&](std::size_t co) {
      for (std::size_t e = co * ckk; e < (co + 1) * ckk; ++e) {
        T acc = gw[e];
        for (std::size_t n = 0; n < g.batch; ++n) acc += partial[n * wsize + e];
        gw[e] = acc;
      }
    });
  }
}

}  // namespace detail

// Cross-correlation without bias. Weight layout [Cout, Cin, kh, kw].
template <typename T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& x, const Var<T>& w, std::size_t stride = 1, std::size_t padding = 0) {
  const ConvGeometry g = conv_geometry(x->shape(), w->shape(), stride, padding);
  auto out = make_var(Tensor<T>({g.batch, g.out_channels, g.out_h, g.out_w}));
  detail::conv2d_forward(g, x->data(), w->data(), out->data());
  check_finite<T>(out->values(), "conv2d");
  if (tape) {
    tape->record([g, x, w, out] {
      if (!out->has_grad()) return;
      detail::conv2d_backward(g, x->data(), w->data(), out->grad().data(), grad_sink(x), grad_sink(w));
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise and pooling
// ---------------------------------------------------------------------------

template <typename T>
Var<T> relu(Tape<T>* tape, const Var<T>& x) {
  auto out = make_var(Tensor<T>(x->shape()));
  auto in = x->values();
  auto o = out->values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = in[i] > T{0} ? in[i] : T{0};
  check_finite<T>(o, "relu");
  if (tape) {
    tape->record([x, out] {
      if (!out->has_grad() || !x->requires_grad()) return;
      auto gx = x->ensure_grad();
      auto go = out->grad();
      auto in = x->values();
      for (std::size_t i = 0; i < in.size(); ++i)
        if (in[i] > T{0}) gx[i] += go[i];
    });
  }
  return out;
}

template <typename T>
Var<T> avg_pool_2x2(Tape<T>* tape, const Var<T>& x) {
  const Shape& s = x->shape();
  if (s.size() != 4) throw ShapeError("avg_pool_2x2: input must be rank 4, got " + to_string(s));
  if (s[2] % 2 != 0) throw ShapeError("avg_pool_2x2: height (dim 2) = " + std::to_string(s[2]) + " is odd");
  if (s[3] % 2 != 0) throw ShapeError("avg_pool_2x2: width (dim 3) = " + std::to_string(s[3]) + " is odd");
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  auto out = make_var(Tensor<T>({s[0], s[1], oh, ow}));
  const T* in = x->data();
  T* o = out->data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T* base = in + (p * h + 2 * y) * w + 2 * xx;
        o[(p * oh + y) * ow + xx] = (base[0] + base[1] + base[w] + base[w + 1]) * T(0.25);
      }
    }
  }
  check_finite<T>(out->values(), "avg_pool_2x2");
  if (tape) {
    tape->record([x, out, planes, h, w, oh, ow] {
      if (!out->has_grad() || !x->requires_grad()) return;
      T* gi = x->ensure_grad().data();
      const T* go = out->grad().data();
      for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const T g = go[(p * oh + y) * ow + xx] * T(0.25);
            T* base = gi + (p * h + 2 * y) * w + 2 * xx;
            base[0] += g;
            base[1] += g;
            base[w] += g;
            base[w + 1] += g;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> global_avg_pool(Tape<T>* tape, const Var<T>& x) {
  const Shape& s = x->shape();
  if (s.size() != 4) throw ShapeError("global_avg_pool: input must be rank 4, got " + to_string(s));
  const std::size_t planes = s[0] * s[1], area = s[2] * s[3];
  auto out = make_var(Tensor<T>({s[0], s[1], 1, 1}));
  const T* in = x->data();
  for (std::size_t p = 0; p < planes; ++p) {
    T acc{0};
    for (std::size_t i = 0; i < area; ++i) acc += in[p * area + i];
    (*out)[p] = acc / static_cast<T>(area);
  }
  check_finite<T>(out->values(), "global_avg_pool");
  if (tape) {
    tape->record([x, out, planes, area] {
      if (!out->has_grad() || !x->requires_grad()) return;
      T* gi = x->ensure_grad().data();
      const T* go = out->grad().data();
      for (std::size_t p = 0; p < planes; ++p) {
        const T g = go[p] / static_cast<T>(area);
        for (std::size_t i = 0; i < area; ++i) gi[p * area + i] += g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

// Copies channels [begin, begin + count) of a rank-4 tensor.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (s.size() != 4 || begin + count > s[1]) throw ShapeError("slice_channels: range outside " + to_string(s));
  const std::size_t area = s[2] * s[3];
  Tensor<T> out({s[0], count, s[2], s[3]});
  for (std::size_t n = 0; n < s[0]; ++n) {
    const T* src = x.data() + (n * s[1] + begin) * area;
    std::copy(src, src + count * area, out.data() + n * count * area);
  }
  return out;
}

template <typename T>
Var<T> concat_channels(Tape<T>* tape, const std::vector<Var<T>>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: empty input list");
  const Shape& first = inputs.front()->shape();
  if (first.size() != 4) throw ShapeError("concat_channels: inputs must be rank 4, got " + to_string(first));
  std::size_t channels = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Shape& s = inputs[i]->shape();
    if (s.size() != 4) throw ShapeError("concat_channels: input " + std::to_string(i) + " is not rank 4");
    static constexpr const char* kAxis[] = {"batch (dim 0)", "", "height (dim 2)", "width (dim 3)"};
    for (std::size_t axis : {0u, 2u, 3u}) {
      if (s[axis] != first[axis]) {
        throw ShapeError(std::string("concat_channels: ") + kAxis[axis] + " of input " + std::to_string(i) +
                         " is " + std::to_string(s[axis]) + ", expected " + std::to_string(first[axis]));
      }
    }
    channels += s[1];
  }
  const std::size_t batch = first[0], area = first[2] * first[3];
  auto out = make_var(Tensor<T>({batch, channels, first[2], first[3]}));
  for (std::size_t n = 0; n < batch; ++n) {
    T* dst = out->data() + n * channels * area;
    for (const auto& in : inputs) {
      const std::size_t block = in->dim(1) * area;
      const T* src = in->data() + n * block;
      dst = std::copy(src, src + block, dst);
    }
  }
  if (tape) {
    tape->record([inputs, out, batch, channels, area] {
      if (!out->has_grad()) return;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* src = out->grad().data() + n * channels * area;
        for (const auto& in : inputs) {
          const std::size_t block = in->dim(1) * area;
          if (in->requires_grad()) {
            T* dst = in->ensure_grad().data() + n * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
          }
          src += block;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classifier head
// ---------------------------------------------------------------------------

// [N,C,1,1] (or any [N,...]) viewed as [N, C*...].
template <typename T>
Var<T> flatten(Tape<T>* tape, const Var<T>& x) {
  Tensor<T> copy(Shape{x->dim(0), x->size() / std::max<std::size_t>(1, x->dim(0))},
                 std::vector<T>(x->values().begin(), x->values().end()));
  auto out = make_var(std::move(copy));
  if (tape) {
    tape->record([x, out] {
      if (!out->has_grad() || !x->requires_grad()) return;
      auto gx = x->ensure_grad();
      auto go = out->grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

// out[n,k] = bias[k] + sum_c x[n,c] * weight[k,c]
template <typename T>
Var<T> linear(Tape<T>* tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  if (x->rank() != 2) throw ShapeError("linear: input must be rank 2 [N,C], got " + to_string(x->shape()));
  if (weight->rank() != 2 || weight->dim(1) != x->dim(1)) {
    throw ShapeError("linear: weight " + to_string(weight->shape()) + " does not match input features (dim 1) = " +
                     std::to_string(x->dim(1)));
  }
  if (bias->rank() != 1 || bias->dim(0) != weight->dim(0)) {
    throw ShapeError("linear: bias " + to_string(bias->shape()) + " does not match output features (dim 0 of weight) = " +
                     std::to_string(weight->dim(0)));
  }
  const std::size_t batch = x->dim(0), in_f = x->dim(1), out_f = weight->dim(0);
  auto out = make_var(Tensor<T>({batch, out_f}));
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t k = 0; k < out_f; ++k) {
      T acc = (*bias)[k];
      for (std::size_t c = 0; c < in_f; ++c) acc += (*x)[n * in_f + c] * (*weight)[k * in_f + c];
      (*out)[n * out_f + k] = acc;
    }
  }
  check_finite<T>(out->values(), "linear");
  if (tape) {
    tape->record([x, weight, bias, out, batch, in_f, out_f] {
      if (!out->has_grad()) return;
      const T* go = out->grad().data();
      if (T* gx = grad_sink(x)) {
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t k = 0; k < out_f; ++k)
            for (std::size_t c = 0; c < in_f; ++c) gx[n * in_f + c] += go[n * out_f + k] * (*weight)[k * in_f + c];
      }
      if (T* gw = grad_sink(weight)) {
        for (std::size_t k = 0; k < out_f; ++k)
          for (std::size_t c = 0; c < in_f; ++c) {
            T acc = gw[k * in_f + c];
            for (std::size_t n = 0; n < batch; ++n) acc += go[n * out_f + k] * (*x)[n * in_f + c];
            gw[k * in_f + c] = acc;
          }
      }
      if (T* gb = grad_sink(bias)) {
        for (std::size_t k = 0; k < out_f; ++k)
          for (std::size_t n = 0; n < batch; ++n) gb[k] += go[n * out_f + k];
      }
    });
  }
  return out;
}

template <typename T>
struct CrossEntropyResult {
  T loss{};
  Tensor<T> grad;  // d(loss)/d(logits)
};

// Mean negative log-likelihood of softmax(logits) at the labels, and its
// logits gradient (softmax - onehot) / N. Max-subtracted for stability.
template <typename T>
CrossEntropyResult<T> softmax_cross_entropy_value(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: logits must be rank 2 [N,K]");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch (dim 0) = " +
                     std::to_string(batch));
  }
  CrossEntropyResult<T> r{T{0}, Tensor<T>({batch, classes})};
  T total{0};
  for (std::size_t n = 0; n < batch; ++n) {
    if (labels[n] >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[n]) + " at row " +
                              std::to_string(n) + " outside [0," + std::to_string(classes) + ")");
    }
    const T* row = logits.data() + n * classes;
    const T peak = *std::max_element(row, row + classes);
    T denom{0};
    for (std::size_t k = 0; k < classes; ++k) denom += std::exp(row[k] - peak);
    const T log_denom = std::log(denom);
    total += log_denom - (row[labels[n]] - peak);
    T* g = r.grad.data() + n * classes;
    for (std::size_t k = 0; k < classes; ++k) {
      g[k] = std::exp(row[k] - peak - log_denom) / static_cast<T>(batch);
    }
    g[labels[n]] -= T{1} / static_cast<T>(batch);
  }
  r.loss = total / static_cast<T>(batch);
  if (!std::isfinite(r.loss)) throw NonFiniteError("softmax_cross_entropy: non-finite loss");
  return r;
}

// Scalar loss var of shape [1].
template <typename T>
Var<T> softmax_cross_entropy(Tape<T>* tape, const Var<T>& logits, std::span<const std::size_t> labels) {
  auto result = softmax_cross_entropy_value(*logits, labels);
  auto out = make_var(Tensor<T>({1}, std::vector<T>{result.loss}));
  if (tape) {
    auto grad = std::make_shared<Tensor<T>>(std::move(result.grad));
    tape->record([logits, out, grad] {
      if (!out->has_grad() || !logits->requires_grad()) return;
      const T upstream = out->grad()[0];
      auto gl = logits->ensure_grad();
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += upstream * (*grad)[i];
    });
  }
  return out;
}

// Row-wise argmax; ties resolve to the lowest index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits) {
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<std::size_t> out(batch);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* row = logits.data() + n * classes;
    out[n] = static_cast<std::size_t>(std::max_element(row, row + classes) - row);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention gating and utilities
// ---------------------------------------------------------------------------

// h + h * f with f [N,C,1,1] broadcast over the spatial extent of h [N,C,H,W].
template <typename T>
Var<T> gated_residual(Tape<T>* tape, const Var<T>& h, const Var<T>& f) {
  const Shape& hs = h->shape();
  const Shape& fs = f->shape();
  if (hs.size() != 4 || fs.size() != 4 || fs[0] != hs[0] || fs[1] != hs[1] || fs[2] != 1 || fs[3] != 1) {
    throw ShapeError("gated_residual: gate " + to_string(fs) + " does not broadcast onto " + to_string(hs));
  }
  const std::size_t planes = hs[0] * hs[1], area = hs[2] * hs[3];
  auto out = make_var(Tensor<T>(hs));
  for (std::size_t p = 0; p < planes; ++p) {
    const T fv = (*f)[p];
    for (std::size_t i = 0; i < area; ++i) {
      const T hv = (*h)[p * area + i];
      (*out)[p * area + i] = hv + hv * fv;
    }
  }
  check_finite<T>(out->values(), "gated_residual");
  if (tape) {
    tape->record([h, f, out, planes, area] {
      if (!out->has_grad()) return;
      const T* go = out->grad().data();
      T* gh = grad_sink(h);
      T* gf = grad_sink(f);
      for (std::size_t p = 0; p < planes; ++p) {
        const T fv = (*f)[p];
        T acc{0};
        for (std::size_t i = 0; i < area; ++i) {
          const T g = go[p * area + i];
          if (gh) gh[p * area + i] += g * (T{1} + fv);
          acc += g * (*h)[p * area + i];
        }
        if (gf) gf[p] += acc;
      }
    });
  }
  return out;
}

// sum(x * weights) as a [1] scalar; used to project outputs for gradient checks.
template <typename T>
Var<T> dot_with(Tape<T>* tape, const Var<T>& x, const Tensor<T>& weights) {
  if (weights.size() != x->size()) throw ShapeError("dot_with: size mismatch");
  T acc{0};
  for (std::size_t i = 0; i < x->size(); ++i) acc += (*x)[i] * weights[i];
  auto out = make_var(Tensor<T>({1}, std::vector<T>{acc}));
  if (tape) {
    auto w = std::make_shared<Tensor<T>>(weights);
    tape->record([x, out, w] {
      if (!out->has_grad() || !x->requires_grad()) return;
      const T upstream = out->grad()[0];
      auto gx = x->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += upstream * (*w)[i];
    });
  }
  return out;
}

}  // namespace sparsenet

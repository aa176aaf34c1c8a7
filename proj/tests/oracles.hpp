#pragma once

// Direct-loop reference implementations used as independent oracles.
// They share nothing with the optimized kernels under include/.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <random>
#include <set>
#include <vector>

#include "sparsenet/tensor.hpp"

namespace sparsenet::oracle {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

// Six nested loops over (n, co, oy, ox, ci, ky, kx), accumulated in double.
template <typename T>
Tensor<T> conv2d_direct(const Tensor<T>& in, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
  const std::size_t n_ = in.dim(0), ci_ = in.dim(1), h = in.dim(2), wd = in.dim(3);
  const std::size_t co_ = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor<T> out({n_, co_, oh, ow});
  for (std::size_t n = 0; n < n_; ++n)
    for (std::size_t co = 0; co < co_; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < ci_; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(in.at(n, ci, iy, ix)) * static_cast<double>(w.at(co, ci, ky, kx));
              }
          out.at(n, co, oy, ox) = static_cast<T>(acc);
        }
  return out;
}

template <typename T>
Tensor<T> avg_pool_direct(const Tensor<T>& in) {
  Tensor<T> out({in.dim(0), in.dim(1), in.dim(2) / 2, in.dim(3) / 2});
  for (std::size_t n = 0; n < in.dim(0); ++n)
    for (std::size_t c = 0; c < in.dim(1); ++c)
      for (std::size_t y = 0; y < in.dim(2) / 2; ++y)
        for (std::size_t x = 0; x < in.dim(3) / 2; ++x) {
          double s = 0.0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) s += in.at(n, c, 2 * y + dy, 2 * x + dx);
          out.at(n, c, y, x) = static_cast<T>(s / 4.0);
        }
  return out;
}

template <typename T>
Tensor<T> matmul_bias_direct(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> out({x.dim(0), w.dim(0)});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t k = 0; k < w.dim(0); ++k) {
      double acc = b[k];
      for (std::size_t c = 0; c < x.dim(1); ++c) acc += static_cast<double>(x[n * x.dim(1) + c]) * w[k * w.dim(1) + c];
      out[n * w.dim(0) + k] = static_cast<T>(acc);
    }
  return out;
}

// Farthest f and nearest r sources of layer i, enumerated literally:
// keep j in [0, i) when j is among the first f or the last r candidates.
inline std::set<std::size_t> sources_by_definition(std::size_t i, std::size_t f, std::size_t r) {
  std::set<std::size_t> s;
  for (std::size_t j = 0; j < i; ++j) {
    const bool farthest = j < f;
    const bool nearest = i - j <= r;
    if (farthest || nearest) s.insert(j);
  }
  return s;
}

// Parameter and FLOP totals by literal per-layer arithmetic: every layer's
// input width is summed from its source set, every conv costs
// 2*H*W*Cout*Cin*kh*kw FLOPs.
struct CountOracle {
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

inline CountOracle count_by_definition(bool bottleneck, bool attention, const std::vector<std::size_t>& blocks,
                                       std::uint64_t k, std::size_t f, std::size_t r, std::uint64_t classes = 10,
                                       std::uint64_t hw = 32, std::uint64_t reduction = 8) {
  const double theta = bottleneck ? 0.5 : 1.0;
  const std::uint64_t stem = bottleneck ? 2 * k : 16;
  const std::uint64_t d = std::max<std::uint64_t>(4, k / reduction);
  CountOracle o;
  o.params += 27 * stem;
  o.flops += 2 * hw * hw * stem * 27;
  std::uint64_t c0 = stem, h = hw;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 1; i <= blocks[b]; ++i) {
      std::uint64_t cin = 0;
      for (std::size_t j : sources_by_definition(i, f, r)) cin += j == 0 ? c0 : k;
      if (bottleneck) {
        o.params += 2 * cin + 4 * k * cin + 2 * 4 * k + 9 * 4 * k * k;
        o.flops += 2 * h * h * (4 * k * cin + 9 * 4 * k * k);
      } else {
        o.params += 2 * cin + 9 * cin * k;
        o.flops += 2 * h * h * 9 * cin * k;
      }
      if (attention) {
        const std::uint64_t ca = 4 * k;
        o.params += 2 * ca + ca * d + 2 * (ca + d) + (ca + d) * k;
        o.flops += 2 * (ca * d + (ca + d) * k);
      }
    }
    const std::uint64_t c = c0 + blocks[b] * k;
    if (b + 1 < blocks.size()) {
      const auto out = static_cast<std::uint64_t>(std::floor(theta * static_cast<double>(c)));
      o.params += 2 * c + c * out;
      o.flops += 2 * h * h * c * out;
      c0 = out;
      h /= 2;
    } else {
      o.params += 2 * c + c * classes + classes;
      o.flops += 2 * c * classes;
    }
  }
  return o;
}

}  // namespace sparsenet::oracle

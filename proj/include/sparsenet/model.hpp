#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sparsenet/batch_norm.hpp"
#include "sparsenet/init.hpp"
#include "sparsenet/ops.hpp"
#include "sparsenet/optim.hpp"
#include "sparsenet/topology.hpp"

namespace sparsenet {

// Non-trainable per-channel state saved with checkpoints (BN running stats).
template <typename T>
struct NamedBuffer {
  std::string name;
  std::vector<T>* values;
};

// Owns nothing; indexes the trainable tensors and buffers of a model by
// unique path-like names.
template <typename T>
class ParameterRegistry {
 public:
  Var<T> add(std::string name, Var<T> tensor, bool decay_enabled = true) {
    for (const auto& p : params_) {
      if (p.name == name) throw std::logic_error("duplicate parameter name " + name);
    }
    params_.push_back({std::move(name), tensor, decay_enabled});
    return tensor;
  }
  void add_buffer(std::string name, std::vector<T>* values) { buffers_.push_back({std::move(name), values}); }

  void add_batch_norm(const std::string& prefix, BatchNormState<T>& bn) {
    add(prefix + ".gamma", bn.gamma);
    add(prefix + ".beta", bn.beta);
    add_buffer(prefix + ".running_mean", &bn.running_mean);
    add_buffer(prefix + ".running_var", &bn.running_var);
  }

  std::span<const Parameter<T>> parameters() const { return params_; }
  const std::vector<NamedBuffer<T>>& buffers() const { return buffers_; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.tensor->size();
    return total;
  }

  Var<T> find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    return nullptr;
  }

  void zero_grad() {
    for (const auto& p : params_) p.tensor->drop_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
};

// BN -> ReLU -> conv (no bias), the pre-activation unit used everywhere.
template <typename T>
struct ConvUnit {
  BatchNormState<T> bn;
  Var<T> weight;
  std::size_t padding;

  ConvUnit(std::size_t in_channels, std::size_t out_channels, std::size_t kernel)
      : bn(in_channels), weight(make_var(Tensor<T>({out_channels, in_channels, kernel, kernel}))), padding(kernel / 2) {}

  void register_with(ParameterRegistry<T>& reg, const std::string& prefix, const std::string& conv_name,
                     const std::string& bn_name) {
    reg.add_batch_norm(prefix + "." + bn_name, bn);
    reg.add(prefix + "." + conv_name + ".weight", weight);
  }

  Var<T> forward(Tape<T>* tape, const Var<T>& x, bool training) {
    return conv2d(tape, relu(tape, batch_norm(tape, x, bn, training)), weight, 1, padding);
  }
};

// F(x): global average pool, then two BN-ReLU-1x1 conv modules; the second
// sees the pooled input concatenated with the first module's output.
template <typename T>
struct AttentionGate {
  std::size_t in_channels;
  std::size_t hidden;
  std::size_t out_channels;
  ConvUnit<T> first;
  ConvUnit<T> second;

  AttentionGate(std::size_t in, std::size_t d, std::size_t k)
      : in_channels(in), hidden(d), out_channels(k), first(in, d, 1), second(in + d, k, 1) {}

  Var<T> forward(Tape<T>* tape, const Var<T>& x, bool training) {
    if (x->rank() != 4 || x->dim(1) != in_channels) {
      throw ShapeError("attention gate expects " + std::to_string(in_channels) + " channels (dim 1), got " +
                       to_string(x->shape()));
    }
    auto pooled = global_avg_pool(tape, x);
    auto u = first.forward(tape, pooled, training);
    return second.forward(tape, concat_channels(tape, {pooled, u}), training);
  }
};

// H for one layer: basic = BN-ReLU-3x3; bottleneck = BN-ReLU-1x1(4k)-BN-ReLU-3x3(k).
// With a gate attached the output is H + H * F, F fed by the 3x3 conv's
// input (the concatenated sources for basic, the 1x1 output for bottleneck).
template <typename T>
struct CompositeLayer {
  LayerWiring wiring;
  std::optional<ConvUnit<T>> reduce;
  ConvUnit<T> conv;
  std::unique_ptr<AttentionGate<T>> gate;

  explicit CompositeLayer(const LayerWiring& w)
      : wiring(w),
        conv(w.bottleneck_channels ? w.bottleneck_channels : w.in_channels, w.out_channels, 3) {
    if (w.bottleneck_channels) reduce.emplace(w.in_channels, w.bottleneck_channels, 1);
    if (w.gate_hidden) {
      const std::size_t gate_in = w.bottleneck_channels ? w.bottleneck_channels : w.in_channels;
      gate = std::make_unique<AttentionGate<T>>(gate_in, w.gate_hidden, w.out_channels);
    }
  }

  void register_with(ParameterRegistry<T>& reg, const std::string& prefix) {
    if (reduce) {
      reduce->register_with(reg, prefix, "conv1", "bn1");
      conv.register_with(reg, prefix, "conv2", "bn2");
    } else {
      conv.register_with(reg, prefix, "conv", "bn");
    }
    if (gate) {
      gate->first.register_with(reg, prefix + ".gate", "conv1", "bn1");
      gate->second.register_with(reg, prefix + ".gate", "conv2", "bn2");
    }
  }

  Var<T> forward(Tape<T>* tape, const std::vector<Var<T>>& sources, bool training) {
    if (sources.size() != wiring.sources.size()) {
      throw ShapeError("layer " + std::to_string(wiring.index) + ": expected " + std::to_string(wiring.sources.size()) +
                       " sources, got " + std::to_string(sources.size()));
    }
    auto x = sources.size() == 1 ? sources.front() : concat_channels(tape, sources);
    if (x->dim(1) != wiring.in_channels) {
      throw ShapeError("layer " + std::to_string(wiring.index) + ": input has " + std::to_string(x->dim(1)) +
                       " channels, wiring expects " + std::to_string(wiring.in_channels));
    }
    auto gate_input = reduce ? reduce->forward(tape, x, training) : x;
    auto h = conv.forward(tape, gate_input, training);
    if (!gate) return h;
    return gated_residual(tape, h, gate->forward(tape, gate_input, training));
  }
};

// BN-ReLU-1x1 conv to floor(theta * C) channels, then 2x2 average pooling.
template <typename T>
struct Transition {
  ConvUnit<T> unit;
  Transition(std::size_t in, std::size_t out) : unit(in, out, 1) {}
  Var<T> forward(Tape<T>* tape, const Var<T>& x, bool training) {
    if (x->rank() == 4 && (x->dim(2) % 2 || x->dim(3) % 2)) {
      throw ShapeError("transition: odd spatial extent " + to_string(x->shape()));
    }
    return avg_pool_2x2(tape, unit.forward(tape, x, training));
  }
};

template <typename T>
struct DenseBlock {
  BlockWiring wiring;
  std::vector<std::unique_ptr<CompositeLayer<T>>> layers;
  std::unique_ptr<Transition<T>> transition;
};

// Executable SparseNet / DenseNet: stem 3x3 conv, blocks joined by
// transitions, BN-ReLU head, global pooling and a linear classifier.
template <typename T>
class SparseNet {
 public:
  SparseNet(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec), graph_(build_layer_graph(spec)) {
    stem_ = make_var(Tensor<T>({graph_.stem_out, graph_.stem_in, 3, 3}));
    registry_.add("stem.conv.weight", stem_);
    for (std::size_t b = 0; b < graph_.blocks.size(); ++b) {
      auto block = std::make_unique<DenseBlock<T>>();
      block->wiring = graph_.blocks[b];
      const std::string prefix = "block" + std::to_string(b + 1);
      for (const auto& lw : block->wiring.layers) {
        auto layer = std::make_unique<CompositeLayer<T>>(lw);
        layer->register_with(registry_, prefix + ".layer" + std::to_string(lw.index));
        block->layers.push_back(std::move(layer));
      }
      if (block->wiring.transition) {
        block->transition = std::make_unique<Transition<T>>(block->wiring.transition->in_channels,
                                                            block->wiring.transition->out_channels);
        block->transition->unit.register_with(registry_, "transition" + std::to_string(b + 1), "conv", "bn");
      }
      blocks_.push_back(std::move(block));
    }
    head_bn_ = std::make_unique<BatchNormState<T>>(graph_.classifier_in);
    registry_.add_batch_norm("head.bn", *head_bn_);
    fc_weight_ = registry_.add("head.fc.weight", make_var(Tensor<T>({graph_.num_classes, graph_.classifier_in})));
    fc_bias_ = registry_.add("head.fc.bias", make_var(Tensor<T>({graph_.num_classes})));
    initialize(seed);
  }

  SparseNet(const SparseNet&) = delete;
  SparseNet& operator=(const SparseNet&) = delete;
  SparseNet(SparseNet&&) noexcept = default;
  SparseNet& operator=(SparseNet&&) noexcept = default;

  // He-normal conv and linear weights in registration order; BN gamma 1,
  // beta 0; classifier bias 0. Deterministic in the seed.
  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (const auto& p : registry_.parameters()) {
      Tensor<T>& t = *p.tensor;
      const std::string& n = p.name;
      if (n.ends_with(".gamma")) {
        std::fill(t.values().begin(), t.values().end(), T{1});
      } else if (n.ends_with(".beta") || n.ends_with(".bias")) {
        std::fill(t.values().begin(), t.values().end(), T{0});
      } else {
        std::size_t fan_in = 1;
        for (std::size_t a = 1; a < t.rank(); ++a) fan_in *= t.dim(a);
        he_init(t, fan_in, rng);
      }
    }
    for (const auto& b : registry_.buffers()) {
      const bool is_var = b.name.ends_with(".running_var");
      std::fill(b.values->begin(), b.values->end(), is_var ? T{1} : T{0});
    }
  }

  // Logits [N, num_classes] for images [N, 3, H, W].
  Var<T> forward(Tape<T>* tape, const Var<T>& images, bool training) {
    if (images->rank() != 4 || images->dim(1) != graph_.stem_in) {
      throw ShapeError("model input must be [N,3,H,W], got " + to_string(images->shape()));
    }
    auto x = conv2d(tape, images, stem_, 1, 1);
    for (auto& block : blocks_) {
      std::vector<Var<T>> features{x};
      for (auto& layer : block->layers) {
        std::vector<Var<T>> sources;
        for (std::size_t s : layer->wiring.sources) sources.push_back(features[s]);
        features.push_back(layer->forward(tape, sources, training));
      }
      x = concat_channels(tape, features);
      if (block->transition) x = block->transition->forward(tape, x, training);
    }
    x = relu(tape, batch_norm(tape, x, *head_bn_, training));
    x = flatten(tape, global_avg_pool(tape, x));
    return linear(tape, x, fc_weight_, fc_bias_);
  }

  const NetworkSpec& spec() const { return spec_; }
  const LayerGraph& graph() const { return graph_; }
  ParameterRegistry<T>& registry() { return registry_; }
  const ParameterRegistry<T>& registry() const { return registry_; }
  std::span<const Parameter<T>> parameters() const { return registry_.parameters(); }
  std::size_t parameter_count() const { return registry_.parameter_count(); }

  DenseBlock<T>& block(std::size_t b) { return *blocks_.at(b); }
  CompositeLayer<T>& layer(std::size_t b, std::size_t index) { return *blocks_.at(b)->layers.at(index - 1); }

 private:
  NetworkSpec spec_;
  LayerGraph graph_;
  ParameterRegistry<T> registry_;
  Var<T> stem_;
  std::vector<std::unique_ptr<DenseBlock<T>>> blocks_;
  std::unique_ptr<BatchNormState<T>> head_bn_;
  Var<T> fc_weight_;
  Var<T> fc_bias_;
};

// Copies every parameter and buffer that exists under the same name and
// shape in `from`. Returns the number of tensors copied.
template <typename T>
std::size_t copy_matching_weights(const SparseNet<T>& from, SparseNet<T>& to) {
  std::size_t copied = 0;
  for (const auto& p : to.parameters()) {
    auto src = from.registry().find(p.name);
    if (src && src->shape() == p.tensor->shape()) {
      std::copy(src->values().begin(), src->values().end(), p.tensor->values().begin());
      ++copied;
    }
  }
  for (const auto& b : to.registry().buffers()) {
    for (const auto& s : from.registry().buffers()) {
      if (s.name == b.name && s.values->size() == b.values->size()) {
        *b.values = *s.values;
        ++copied;
      }
    }
  }
  return copied;
}

}  // namespace sparsenet

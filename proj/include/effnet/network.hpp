#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "effnet/architecture.hpp"
#include "effnet/ops.hpp"
#include "effnet/random.hpp"
#include "effnet/tensor.hpp"

namespace effnet {

template <typename T> struct NamedTensor {
  std::string name;
  BasicTensor<T> value;
};

// Ordered collection of named tensors. Insertion order is the canonical order
// used by initialization, the optimizer and checkpoints.
//
// Naming: "layers.<i>.weight|bias" for conv and dense layers,
// "layers.<i>.depthwise.*" / "layers.<i>.pointwise.*" for separable convs and
// "layers.<i>.<repeat>.expand|depthwise|project.*" inside MBConv blocks.
template <typename T> class BasicParameterSet {
public:
  void add(std::string name, BasicTensor<T> value);

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }
  BasicTensor<T>& at(std::string_view name);
  const BasicTensor<T>& at(std::string_view name) const;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t element_count() const;

  auto begin() noexcept { return entries_.begin(); }
  auto end() noexcept { return entries_.end(); }
  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

  // Same names and shapes, all zeros.
  BasicParameterSet zeros_like() const;

  bool operator==(const BasicParameterSet& other) const { return entries_ == other.entries_; }

private:
  std::vector<NamedTensor<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T> bool operator==(const NamedTensor<T>& a, const NamedTensor<T>& b) {
  return a.name == b.name && a.value == b.value;
}

using ParameterSet = BasicParameterSet<float>;
using ParameterSet64 = BasicParameterSet<double>;

template <typename To, typename From>
BasicParameterSet<To> parameter_cast(const BasicParameterSet<From>& params) {
  BasicParameterSet<To> out;
  for (const auto& p : params) out.add(p.name, tensor_cast<To>(p.value));
  return out;
}

// He-uniform fan-in initialization: weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)),
// biases 0. Values are drawn in parameter order from Rng(seed).
template <typename T>
BasicParameterSet<T> init_params(const ArchitectureSpec& arch, std::uint64_t seed);

// Tensors a layer keeps from its forward pass for the backward pass.
template <typename T> struct LayerCache {
  std::vector<BasicTensor<T>> saved;
};

template <typename T> struct LayerOutput {
  BasicTensor<T> output;
  LayerCache<T> cache;
};

// Runs one layer. `rng` is required only for dropout in Train mode.
template <typename T>
LayerOutput<T> forward_layer(const LayerSpec& spec, std::size_t index,
                             const BasicParameterSet<T>& params, const BasicTensor<T>& input,
                             Mode mode, Rng* rng = nullptr);

// Backpropagates one layer, accumulating parameter gradients into `grads`
// and returning the gradient with respect to the layer input.
template <typename T>
BasicTensor<T> backward_layer(const LayerSpec& spec, std::size_t index,
                              const BasicParameterSet<T>& params, const LayerCache<T>& cache,
                              const BasicTensor<T>& grad_output, BasicParameterSet<T>& grads);

template <typename T> struct ForwardPass {
  BasicTensor<T> output;
  std::vector<LayerCache<T>> caches;
  std::vector<Shape> shapes; // output shape of every layer
};

template <typename T> struct BackwardPass {
  BasicTensor<T> input_grad;
  BasicParameterSet<T> grads;
};

template <typename T>
ForwardPass<T> forward(const ArchitectureSpec& arch, const BasicParameterSet<T>& params,
                       const BasicTensor<T>& input, Mode mode, Rng* rng = nullptr);

// Backward through layers [0, layer_count). `grad_output` is the gradient
// with respect to the output of layer `layer_count - 1`; passing
// layer_count = layers - 1 starts below a trailing softmax, which is how the
// fused softmax + cross-entropy gradient enters the network.
template <typename T>
BackwardPass<T> backward(const ArchitectureSpec& arch, const BasicParameterSet<T>& params,
                         const ForwardPass<T>& pass, const BasicTensor<T>& grad_output,
                         std::size_t layer_count);

template <typename T>
BackwardPass<T> backward(const ArchitectureSpec& arch, const BasicParameterSet<T>& params,
                         const ForwardPass<T>& pass, const BasicTensor<T>& grad_output) {
  return backward(arch, params, pass, grad_output, arch.layers.size());
}

} // namespace effnet

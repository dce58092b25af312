#include "effnet/network.hpp"

#include <cmath>

namespace effnet {

template <typename T> void BasicParameterSet<T>::add(std::string name, BasicTensor<T> value) {
  if (index_.count(name)) throw ArgumentError("parameter '" + name + "' already exists");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value)});
}

template <typename T> BasicTensor<T>& BasicParameterSet<T>::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ArgumentError("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].value;
}

template <typename T>
const BasicTensor<T>& BasicParameterSet<T>::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ArgumentError("no parameter named '" + std::string(name) + "'");
  return entries_[it->second].value;
}

template <typename T> std::size_t BasicParameterSet<T>::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T> BasicParameterSet<T> BasicParameterSet<T>::zeros_like() const {
  BasicParameterSet out;
  for (const auto& e : entries_) out.add(e.name, BasicTensor<T>(e.value.shape()));
  return out;
}

namespace {

std::string pname(std::size_t layer, const std::string& rest) {
  return "layers." + std::to_string(layer) + "." + rest;
}

std::string pname(std::size_t layer, std::size_t repeat, const std::string& rest) {
  return "layers." + std::to_string(layer) + "." + std::to_string(repeat) + "." + rest;
}

template <typename T>
BasicTensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  BasicTensor<T> t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

template <typename T>
void add_conv(BasicParameterSet<T>& ps, const std::string& prefix, std::size_t out_c,
              std::size_t k, std::size_t in_c, Rng& rng) {
  ps.add(prefix + "weight", he_uniform<T>({out_c, k, k, in_c}, k * k * in_c, rng));
  ps.add(prefix + "bias", BasicTensor<T>({out_c}));
}

template <typename T>
void add_depthwise(BasicParameterSet<T>& ps, const std::string& prefix, std::size_t ch,
                   std::size_t k, Rng& rng) {
  ps.add(prefix + "weight", he_uniform<T>({ch, k, k}, k * k, rng));
  ps.add(prefix + "bias", BasicTensor<T>({ch}));
}

ConvGeometry spatial(std::size_t kernel, std::size_t stride) {
  return {kernel, kernel, stride, Padding::Same};
}

const ConvGeometry kPointwise{1, 1, 1, Padding::Same};

template <typename T> BasicTensor<T> activate(const BasicTensor<T>& x, Activation act) {
  return act == Activation::Relu ? relu(x) : x;
}

template <typename T>
BasicTensor<T> activate_backward(const BasicTensor<T>& pre, const BasicTensor<T>& grad,
                                 Activation act) {
  return act == Activation::Relu ? relu_backward(pre, grad) : grad;
}

template <typename T>
void accumulate(BasicParameterSet<T>& grads, const std::string& name, const BasicTensor<T>& g) {
  auto& dst = grads.at(name);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

} // namespace

template <typename T>
BasicParameterSet<T> init_params(const ArchitectureSpec& arch, std::uint64_t seed) {
  Rng rng(seed);
  BasicParameterSet<T> ps;
  const auto trace = shape_infer(arch, arch.input_shape());
  Shape in = arch.input_shape();
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& l = arch.layers[i];
    switch (l.kind) {
    case LayerKind::Conv:
      add_conv(ps, pname(i, ""), l.filters, l.kernel, in[3], rng);
      break;
    case LayerKind::DepthwiseSepConv:
      add_depthwise(ps, pname(i, "depthwise."), in[3], l.kernel, rng);
      add_conv(ps, pname(i, "pointwise."), l.filters, 1, in[3], rng);
      break;
    case LayerKind::MBConvBlock: {
      std::size_t ch = in[3];
      for (std::size_t r = 0; r < l.repeats; ++r) {
        const std::size_t wide = ch * l.expansion;
        add_conv(ps, pname(i, r, "expand."), wide, 1, ch, rng);
        add_depthwise(ps, pname(i, r, "depthwise."), wide, l.kernel, rng);
        add_conv(ps, pname(i, r, "project."), l.filters, 1, wide, rng);
        ch = l.filters;
      }
      break;
    }
    case LayerKind::Dense:
      ps.add(pname(i, "weight"), he_uniform<T>({in[1], l.units}, in[1], rng));
      ps.add(pname(i, "bias"), BasicTensor<T>({l.units}));
      break;
    default:
      break;
    }
    in = trace[i];
  }
  return ps;
}

template <typename T>
LayerOutput<T> forward_layer(const LayerSpec& spec, std::size_t index,
                             const BasicParameterSet<T>& params, const BasicTensor<T>& input,
                             Mode mode, Rng* rng) {
  // Validates shapes up front so errors carry the layer index.
  (void)layer_output_shape(spec, input.shape(), index);
  LayerOutput<T> r;
  auto& saved = r.cache.saved;
  switch (spec.kind) {
  case LayerKind::Conv: {
    BasicTensor<T> pre = conv2d_im2col(input, params.at(pname(index, "weight")),
                                       params.at(pname(index, "bias")),
                                       spatial(spec.kernel, spec.stride));
    r.output = activate(pre, spec.activation);
    saved = {input, std::move(pre)};
    break;
  }
  case LayerKind::DepthwiseSepConv: {
    BasicTensor<T> dw = depthwise_conv2d(input, params.at(pname(index, "depthwise.weight")),
                                         params.at(pname(index, "depthwise.bias")),
                                         spatial(spec.kernel, spec.stride));
    BasicTensor<T> pw = conv2d_im2col(dw, params.at(pname(index, "pointwise.weight")),
                                      params.at(pname(index, "pointwise.bias")), kPointwise);
    r.output = activate(pw, spec.activation);
    saved = {input, std::move(dw), std::move(pw)};
    break;
  }
  case LayerKind::MaxPool:
    r.output = maxpool2d(input);
    saved = {input};
    break;
  case LayerKind::MBConvBlock: {
    // Five tensors per repeat: x, expand pre-act, expand act, depthwise
    // pre-act, depthwise act.
    BasicTensor<T> x = input;
    for (std::size_t rep = 0; rep < spec.repeats; ++rep) {
      const std::size_t stride = rep == 0 ? spec.stride : 1;
      BasicTensor<T> e = conv2d_im2col(x, params.at(pname(index, rep, "expand.weight")),
                                       params.at(pname(index, rep, "expand.bias")), kPointwise);
      BasicTensor<T> ea = relu(e);
      BasicTensor<T> d = depthwise_conv2d(ea, params.at(pname(index, rep, "depthwise.weight")),
                                          params.at(pname(index, rep, "depthwise.bias")),
                                          spatial(spec.kernel, stride));
      BasicTensor<T> da = relu(d);
      BasicTensor<T> p = conv2d_im2col(da, params.at(pname(index, rep, "project.weight")),
                                       params.at(pname(index, rep, "project.bias")), kPointwise);
      if (spec.skip && p.shape() == x.shape()) p = add(p, x);
      saved.push_back(std::move(x));
      saved.push_back(std::move(e));
      saved.push_back(std::move(ea));
      saved.push_back(std::move(d));
      saved.push_back(std::move(da));
      x = std::move(p);
    }
    r.output = std::move(x);
    break;
  }
  case LayerKind::GlobalAvgPool:
    r.output = global_avg_pool(input);
    saved = {BasicTensor<T>(input.shape())};
    break;
  case LayerKind::Dense: {
    BasicTensor<T> pre =
        dense(input, params.at(pname(index, "weight")), params.at(pname(index, "bias")));
    r.output = activate(pre, spec.activation);
    saved = {input, std::move(pre)};
    break;
  }
  case LayerKind::Dropout:
    if (mode == Mode::Train && spec.rate > 0.0) {
      if (!rng) throw ArgumentError("layer " + std::to_string(index) + ": dropout needs an Rng in Train mode");
      BasicTensor<T> mask = dropout_mask<T>(input.shape(), spec.rate, *rng);
      r.output = multiply(input, mask);
      saved = {std::move(mask)};
    } else {
      r.output = input;
    }
    break;
  case LayerKind::Softmax:
    r.output = softmax(input);
    saved = {r.output};
    break;
  }
  return r;
}

template <typename T>
BasicTensor<T> backward_layer(const LayerSpec& spec, std::size_t index,
                              const BasicParameterSet<T>& params, const LayerCache<T>& cache,
                              const BasicTensor<T>& grad_output, BasicParameterSet<T>& grads) {
  const auto& saved = cache.saved;
  switch (spec.kind) {
  case LayerKind::Conv: {
    const BasicTensor<T> g = activate_backward(saved[1], grad_output, spec.activation);
    auto cg = conv2d_backward(saved[0], params.at(pname(index, "weight")),
                              spatial(spec.kernel, spec.stride), g);
    accumulate(grads, pname(index, "weight"), cg.kernels);
    accumulate(grads, pname(index, "bias"), cg.bias);
    return std::move(cg.input);
  }
  case LayerKind::DepthwiseSepConv: {
    const BasicTensor<T> g = activate_backward(saved[2], grad_output, spec.activation);
    auto pg = conv2d_backward(saved[1], params.at(pname(index, "pointwise.weight")), kPointwise, g);
    accumulate(grads, pname(index, "pointwise.weight"), pg.kernels);
    accumulate(grads, pname(index, "pointwise.bias"), pg.bias);
    auto dg = depthwise_conv2d_backward(saved[0], params.at(pname(index, "depthwise.weight")),
                                        spatial(spec.kernel, spec.stride), pg.input);
    accumulate(grads, pname(index, "depthwise.weight"), dg.kernels);
    accumulate(grads, pname(index, "depthwise.bias"), dg.bias);
    return std::move(dg.input);
  }
  case LayerKind::MaxPool:
    return maxpool2d_backward(saved[0], grad_output);
  case LayerKind::MBConvBlock: {
    BasicTensor<T> g = grad_output;
    for (std::size_t rep = spec.repeats; rep-- > 0;) {
      const BasicTensor<T>& x = saved[5 * rep];
      const BasicTensor<T>& e = saved[5 * rep + 1];
      const BasicTensor<T>& ea = saved[5 * rep + 2];
      const BasicTensor<T>& d = saved[5 * rep + 3];
      const BasicTensor<T>& da = saved[5 * rep + 4];
      const std::size_t stride = rep == 0 ? spec.stride : 1;
      const bool residual = spec.skip && g.shape() == x.shape();

      auto pg = conv2d_backward(da, params.at(pname(index, rep, "project.weight")), kPointwise, g);
      accumulate(grads, pname(index, rep, "project.weight"), pg.kernels);
      accumulate(grads, pname(index, rep, "project.bias"), pg.bias);
      auto dg = depthwise_conv2d_backward(ea, params.at(pname(index, rep, "depthwise.weight")),
                                          spatial(spec.kernel, stride), relu_backward(d, pg.input));
      accumulate(grads, pname(index, rep, "depthwise.weight"), dg.kernels);
      accumulate(grads, pname(index, rep, "depthwise.bias"), dg.bias);
      auto eg = conv2d_backward(x, params.at(pname(index, rep, "expand.weight")), kPointwise,
                                relu_backward(e, dg.input));
      accumulate(grads, pname(index, rep, "expand.weight"), eg.kernels);
      accumulate(grads, pname(index, rep, "expand.bias"), eg.bias);
      g = residual ? add(eg.input, g) : std::move(eg.input);
    }
    return g;
  }
  case LayerKind::GlobalAvgPool:
    return global_avg_pool_backward(saved[0].shape(), grad_output);
  case LayerKind::Dense: {
    const BasicTensor<T> g = activate_backward(saved[1], grad_output, spec.activation);
    auto dg = dense_backward(saved[0], params.at(pname(index, "weight")), g);
    accumulate(grads, pname(index, "weight"), dg.weights);
    accumulate(grads, pname(index, "bias"), dg.bias);
    return std::move(dg.input);
  }
  case LayerKind::Dropout:
    return saved.empty() ? grad_output : multiply(grad_output, saved[0]);
  case LayerKind::Softmax:
    return softmax_backward(saved[0], grad_output);
  }
  return grad_output;
}

template <typename T>
ForwardPass<T> forward(const ArchitectureSpec& arch, const BasicParameterSet<T>& params,
                       const BasicTensor<T>& input, Mode mode, Rng* rng) {
  ForwardPass<T> pass;
  pass.caches.reserve(arch.layers.size());
  BasicTensor<T> x = input;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    LayerOutput<T> out = forward_layer(arch.layers[i], i, params, x, mode, rng);
    pass.shapes.push_back(out.output.shape());
    pass.caches.push_back(std::move(out.cache));
    x = std::move(out.output);
  }
  pass.output = std::move(x);
  return pass;
}

template <typename T>
BackwardPass<T> backward(const ArchitectureSpec& arch, const BasicParameterSet<T>& params,
                         const ForwardPass<T>& pass, const BasicTensor<T>& grad_output,
                         std::size_t layer_count) {
  if (layer_count > arch.layers.size() || pass.caches.size() != arch.layers.size()) {
    throw ArgumentError("backward: forward pass does not match the architecture");
  }
  const Shape expected = layer_count == 0 ? Shape{} : pass.shapes[layer_count - 1];
  if (layer_count > 0 && grad_output.shape() != expected) {
    throw ShapeError("backward", "upstream gradient " + shape_string(grad_output.shape()) +
                                     " does not match layer output " + shape_string(expected));
  }
  BackwardPass<T> r{grad_output, params.zeros_like()};
  for (std::size_t i = layer_count; i-- > 0;) {
    r.input_grad = backward_layer(arch.layers[i], i, params, pass.caches[i], r.input_grad, r.grads);
  }
  return r;
}

template class BasicParameterSet<float>;
template class BasicParameterSet<double>;

#define EFFNET_INSTANTIATE_NETWORK(T)                                                           \
  template BasicParameterSet<T> init_params<T>(const ArchitectureSpec&, std::uint64_t);        \
  template LayerOutput<T> forward_layer(const LayerSpec&, std::size_t,                         \
                                        const BasicParameterSet<T>&, const BasicTensor<T>&,    \
                                        Mode, Rng*);                                           \
  template BasicTensor<T> backward_layer(const LayerSpec&, std::size_t,                        \
                                         const BasicParameterSet<T>&, const LayerCache<T>&,    \
                                         const BasicTensor<T>&, BasicParameterSet<T>&);        \
  template ForwardPass<T> forward(const ArchitectureSpec&, const BasicParameterSet<T>&,        \
                                  const BasicTensor<T>&, Mode, Rng*);                          \
  template BackwardPass<T> backward(const ArchitectureSpec&, const BasicParameterSet<T>&,      \
                                    const ForwardPass<T>&, const BasicTensor<T>&, std::size_t);

EFFNET_INSTANTIATE_NETWORK(float)
EFFNET_INSTANTIATE_NETWORK(double)

#undef EFFNET_INSTANTIATE_NETWORK

} // namespace effnet

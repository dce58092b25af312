#include "effnet/architecture.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace effnet {

using nlohmann::json;

const char* to_string(LayerKind kind) {
  switch (kind) {
  case LayerKind::Conv: return "conv";
  case LayerKind::DepthwiseSepConv: return "depthwise_sep_conv";
  case LayerKind::MaxPool: return "max_pool";
  case LayerKind::MBConvBlock: return "mbconv";
  case LayerKind::GlobalAvgPool: return "global_avg_pool";
  case LayerKind::Dense: return "dense";
  case LayerKind::Dropout: return "dropout";
  case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

const char* to_string(Activation act) { return act == Activation::Relu ? "relu" : "none"; }

LayerSpec LayerSpec::conv(std::size_t filters, std::size_t kernel, std::size_t stride,
                          Activation act) {
  LayerSpec l;
  l.kind = LayerKind::Conv;
  l.filters = filters;
  l.kernel = kernel;
  l.stride = stride;
  l.activation = act;
  return l;
}

LayerSpec LayerSpec::depthwise_sep_conv(std::size_t filters, std::size_t kernel,
                                        std::size_t stride, Activation act) {
  LayerSpec l = conv(filters, kernel, stride, act);
  l.kind = LayerKind::DepthwiseSepConv;
  return l;
}

LayerSpec LayerSpec::max_pool() {
  LayerSpec l;
  l.kind = LayerKind::MaxPool;
  return l;
}

LayerSpec LayerSpec::mbconv(std::size_t filters, std::size_t stride, std::size_t repeats,
                            bool skip, std::size_t expansion, std::size_t kernel) {
  LayerSpec l;
  l.kind = LayerKind::MBConvBlock;
  l.filters = filters;
  l.stride = stride;
  l.repeats = repeats;
  l.skip = skip;
  l.expansion = expansion;
  l.kernel = kernel;
  return l;
}

LayerSpec LayerSpec::global_avg_pool() {
  LayerSpec l;
  l.kind = LayerKind::GlobalAvgPool;
  return l;
}

LayerSpec LayerSpec::dense(std::size_t units, Activation act) {
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.units = units;
  l.activation = act;
  return l;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec l;
  l.kind = LayerKind::Dropout;
  l.rate = rate;
  return l;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec l;
  l.kind = LayerKind::Softmax;
  return l;
}

namespace {

std::string layer_label(const LayerSpec& layer, std::size_t index) {
  return "layer " + std::to_string(index) + " (" + to_string(layer.kind) + ")";
}

void require(bool ok, const LayerSpec& layer, std::size_t index, const std::string& what) {
  if (!ok) throw ArgumentError(layer_label(layer, index) + ": " + what);
}

} // namespace

void validate_layer(const LayerSpec& layer, std::size_t index) {
  switch (layer.kind) {
  case LayerKind::MBConvBlock:
    require(layer.repeats >= 1, layer, index, "repeats must be >= 1");
    require(layer.expansion >= 1, layer, index, "expansion must be >= 1");
    [[fallthrough]];
  case LayerKind::Conv:
  case LayerKind::DepthwiseSepConv:
    require(layer.filters >= 1, layer, index, "filters must be >= 1");
    require(layer.kernel >= 1, layer, index, "kernel must be >= 1");
    require(layer.stride >= 1, layer, index, "stride must be >= 1");
    break;
  case LayerKind::Dense:
    require(layer.units >= 1, layer, index, "units must be >= 1");
    break;
  case LayerKind::Dropout:
    require(layer.rate >= 0.0 && layer.rate < 1.0, layer, index, "rate must be in [0, 1)");
    break;
  case LayerKind::MaxPool:
  case LayerKind::GlobalAvgPool:
  case LayerKind::Softmax:
    break;
  }
}

Shape layer_output_shape(const LayerSpec& layer, const Shape& input, std::size_t index) {
  validate_layer(layer, index);
  try {
    switch (layer.kind) {
    case LayerKind::Conv:
      return conv2d_output_shape(input, layer.filters,
                                 {layer.kernel, layer.kernel, layer.stride, Padding::Same});
    case LayerKind::DepthwiseSepConv: {
      const Shape dw =
          depthwise_output_shape(input, {layer.kernel, layer.kernel, layer.stride, Padding::Same});
      return conv2d_output_shape(dw, layer.filters, {1, 1, 1, Padding::Same});
    }
    case LayerKind::MaxPool:
      return maxpool2d_output_shape(input);
    case LayerKind::MBConvBlock: {
      Shape cur = input;
      for (std::size_t r = 0; r < layer.repeats; ++r) {
        if (cur.size() != 4) throw ShapeError("mbconv", "input must be rank 4");
        const std::size_t stride = r == 0 ? layer.stride : 1;
        const Shape expanded =
            conv2d_output_shape(cur, cur[3] * layer.expansion, {1, 1, 1, Padding::Same});
        const Shape dw =
            depthwise_output_shape(expanded, {layer.kernel, layer.kernel, stride, Padding::Same});
        const Shape out = conv2d_output_shape(dw, layer.filters, {1, 1, 1, Padding::Same});
        if (layer.skip && layer.repeats == 1 && out != cur) {
          throw ShapeError("mbconv", "skip connection needs identical input and output shapes, "
                                     "got " + shape_string(cur) + " -> " + shape_string(out));
        }
        cur = out;
      }
      return cur;
    }
    case LayerKind::GlobalAvgPool:
      return global_avg_pool_output_shape(input);
    case LayerKind::Dense:
      return dense_output_shape(input, layer.units);
    case LayerKind::Dropout:
      return input;
    case LayerKind::Softmax:
      if (input.size() != 2) throw ShapeError("softmax", "input must be rank 2");
      return input;
    }
  } catch (const ShapeError& e) {
    throw ShapeError(layer_label(layer, index),
                     std::string(e.what()) + " (input " + shape_string(input) + ")");
  }
  return input;
}

std::vector<Shape> shape_infer(const ArchitectureSpec& arch, const Shape& input_shape) {
  if (input_shape.size() != 4) {
    throw ShapeError("shape_infer", "input shape must be rank 4, got " + shape_string(input_shape));
  }
  std::vector<Shape> trace;
  trace.reserve(arch.layers.size());
  Shape cur = input_shape;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    cur = layer_output_shape(arch.layers[i], cur, i);
    trace.push_back(cur);
  }
  return trace;
}

Shape output_shape(const ArchitectureSpec& arch, const Shape& input_shape) {
  const auto trace = shape_infer(arch, input_shape);
  return trace.empty() ? input_shape : trace.back();
}

void validate_architecture(const ArchitectureSpec& arch) {
  if (arch.num_classes < 1) throw ArgumentError(arch.name + ": num_classes must be >= 1");
  const Shape out = output_shape(arch, arch.input_shape());
  if (out != Shape{1, arch.num_classes}) {
    throw ShapeError(arch.name, "network output " + shape_string(out) + " is not [N, " +
                                    std::to_string(arch.num_classes) + "]");
  }
}

double ScalingCoefficients::depth_multiplier() const { return std::pow(alpha, phi); }
double ScalingCoefficients::width_multiplier() const { return std::pow(beta, phi); }
double ScalingCoefficients::resolution_multiplier() const { return std::pow(gamma, phi); }
double ScalingCoefficients::flops_constraint() const { return alpha * beta * beta * gamma * gamma; }

void validate_scaling(const ScalingCoefficients& c) {
  if (!(c.alpha >= 1.0 && c.beta >= 1.0 && c.gamma >= 1.0)) {
    throw ArgumentError("scaling: alpha, beta and gamma must be >= 1");
  }
  if (!(c.phi >= 0.0)) throw ArgumentError("scaling: phi must be >= 0");
}

namespace {
// Absorbs representation error such as 5 * 1.2 = 6.000000000000001.
constexpr double kRoundingSlack = 1e-9;
} // namespace

std::size_t scale_repeats(std::size_t repeats, double multiplier) {
  const double x = static_cast<double>(repeats) * multiplier;
  return static_cast<std::size_t>(std::ceil(x - kRoundingSlack));
}

std::size_t scale_filters(std::size_t filters, double multiplier) {
  const double x = static_cast<double>(filters) * multiplier;
  const auto rounded = static_cast<std::size_t>(std::floor(x / 8.0 + 0.5 + kRoundingSlack)) * 8;
  return std::max<std::size_t>(rounded, 8);
}

std::size_t scale_resolution(std::size_t resolution, double multiplier) {
  const double x = static_cast<double>(resolution) * multiplier;
  const auto rounded = static_cast<std::size_t>(std::floor(x / 2.0 + 0.5 + kRoundingSlack)) * 2;
  return std::max<std::size_t>(rounded, 2);
}

ArchitectureSpec compound_scale(const ArchitectureSpec& base, const ScalingCoefficients& coeffs) {
  validate_scaling(coeffs);
  if (coeffs.phi == 0.0) return base;
  const double depth = coeffs.depth_multiplier();
  const double width = coeffs.width_multiplier();
  const double res = coeffs.resolution_multiplier();

  ArchitectureSpec out = base;
  out.input.height = scale_resolution(base.input.height, res);
  out.input.width = scale_resolution(base.input.width, res);
  for (auto& layer : out.layers) {
    switch (layer.kind) {
    case LayerKind::MBConvBlock:
      layer.repeats = scale_repeats(layer.repeats, depth);
      layer.filters = scale_filters(layer.filters, width);
      break;
    case LayerKind::Conv:
    case LayerKind::DepthwiseSepConv:
      layer.filters = scale_filters(layer.filters, width);
      break;
    default:
      break;
    }
  }
  return out;
}

// ---- JSON -------------------------------------------------------------

namespace {

LayerKind kind_from_string(const std::string& s, const std::string& source) {
  for (LayerKind k : {LayerKind::Conv, LayerKind::DepthwiseSepConv, LayerKind::MaxPool,
                      LayerKind::MBConvBlock, LayerKind::GlobalAvgPool, LayerKind::Dense,
                      LayerKind::Dropout, LayerKind::Softmax}) {
    if (s == to_string(k)) return k;
  }
  throw FormatError(source, "unknown layer kind '" + s + "'");
}

Activation activation_from_string(const std::string& s, const std::string& source) {
  if (s == "relu") return Activation::Relu;
  if (s == "none") return Activation::None;
  throw FormatError(source, "unknown activation '" + s + "'");
}

std::set<std::string> allowed_keys(LayerKind kind) {
  switch (kind) {
  case LayerKind::Conv:
  case LayerKind::DepthwiseSepConv:
    return {"kind", "filters", "kernel", "stride", "activation"};
  case LayerKind::MBConvBlock:
    return {"kind", "filters", "kernel", "stride", "expansion", "repeats", "skip"};
  case LayerKind::Dense:
    return {"kind", "units", "activation"};
  case LayerKind::Dropout:
    return {"kind", "rate"};
  default:
    return {"kind"};
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where,
                    const std::string& source) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw FormatError(source, where + ": unknown key '" + it.key() + "'");
    }
  }
}

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = to_string(l.kind);
  switch (l.kind) {
  case LayerKind::Conv:
  case LayerKind::DepthwiseSepConv:
    j["filters"] = l.filters;
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["activation"] = to_string(l.activation);
    break;
  case LayerKind::MBConvBlock:
    j["filters"] = l.filters;
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["expansion"] = l.expansion;
    j["repeats"] = l.repeats;
    j["skip"] = l.skip;
    break;
  case LayerKind::Dense:
    j["units"] = l.units;
    j["activation"] = to_string(l.activation);
    break;
  case LayerKind::Dropout:
    j["rate"] = l.rate;
    break;
  default:
    break;
  }
  return j;
}

LayerSpec layer_from_json(const json& j, std::size_t index, const std::string& source) {
  const std::string where = "layers[" + std::to_string(index) + "]";
  if (!j.is_object() || !j.contains("kind")) {
    throw FormatError(source, where + ": expected an object with a 'kind'");
  }
  LayerSpec l;
  l.kind = kind_from_string(j.at("kind").get<std::string>(), source);
  reject_unknown(j, allowed_keys(l.kind), where, source);
  if (l.kind == LayerKind::Conv || l.kind == LayerKind::DepthwiseSepConv ||
      l.kind == LayerKind::MBConvBlock) {
    l.filters = j.at("filters").get<std::size_t>();
    l.kernel = j.value("kernel", std::size_t{3});
    l.stride = j.value("stride", std::size_t{1});
  }
  if (l.kind == LayerKind::MBConvBlock) {
    l.expansion = j.value("expansion", std::size_t{6});
    l.repeats = j.value("repeats", std::size_t{1});
    l.skip = j.value("skip", false);
  }
  if (l.kind == LayerKind::Dense) l.units = j.at("units").get<std::size_t>();
  if (l.kind == LayerKind::Dropout) l.rate = j.at("rate").get<double>();
  if (j.contains("activation")) {
    l.activation = activation_from_string(j.at("activation").get<std::string>(), source);
  }
  validate_layer(l, index);
  return l;
}

} // namespace

std::string architecture_to_json(const ArchitectureSpec& arch, int indent) {
  json j;
  j["name"] = arch.name;
  j["input"] = {{"height", arch.input.height},
                {"width", arch.input.width},
                {"channels", arch.input.channels}};
  j["num_classes"] = arch.num_classes;
  j["layers"] = json::array();
  for (const auto& l : arch.layers) j["layers"].push_back(layer_to_json(l));
  return j.dump(indent);
}

ArchitectureSpec architecture_from_json(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(source, std::string("invalid JSON: ") + e.what());
  }
  try {
    if (!j.is_object()) throw FormatError(source, "architecture must be a JSON object");
    reject_unknown(j, {"name", "input", "num_classes", "layers"}, "architecture", source);
    ArchitectureSpec arch;
    arch.name = j.value("name", std::string{});
    if (j.contains("input")) {
      const json& in = j.at("input");
      reject_unknown(in, {"height", "width", "channels"}, "input", source);
      arch.input.height = in.value("height", std::size_t{224});
      arch.input.width = in.value("width", std::size_t{224});
      arch.input.channels = in.value("channels", std::size_t{3});
    }
    arch.num_classes = j.value("num_classes", std::size_t{2});
    const json& layers = j.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      arch.layers.push_back(layer_from_json(layers[i], i, source));
    }
    return arch;
  } catch (const json::exception& e) {
    throw FormatError(source, std::string("bad architecture document: ") + e.what());
  }
}

ArchitectureSpec load_architecture(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path, "cannot open architecture file");
  std::stringstream ss;
  ss << in.rdbuf();
  return architecture_from_json(ss.str(), path);
}

void save_architecture(const std::string& path, const ArchitectureSpec& arch) {
  std::ofstream out(path);
  if (!out) throw FormatError(path, "cannot write architecture file");
  out << architecture_to_json(arch) << "\n";
}

} // namespace effnet

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "effnet/ops.hpp"
#include "effnet/tensor.hpp"

namespace effnet {

enum class LayerKind {
  Conv,
  DepthwiseSepConv,
  MaxPool,
  MBConvBlock,
  GlobalAvgPool,
  Dense,
  Dropout,
  Softmax,
};

enum class Activation { None, Relu };

const char* to_string(LayerKind kind);
const char* to_string(Activation act);

// One entry of an architecture. Only the fields relevant to `kind` are
// meaningful:
//   Conv              filters, kernel, stride, activation
//   DepthwiseSepConv  filters, kernel, stride, activation (after pointwise)
//   MBConvBlock       filters, kernel, stride, expansion, repeats, skip
//   Dense             units, activation
//   Dropout           rate
//
// An MBConv block runs `repeats` copies of expand(1x1) -> relu ->
// depthwise(kxk) -> relu -> project(1x1). Only the first copy uses `stride`
// and changes the channel count; with `skip` every copy whose input and
// output shapes agree adds its input to the projection.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t expansion = 6;
  std::size_t repeats = 1;
  bool skip = false;
  std::size_t units = 0;
  double rate = 0.0;
  Activation activation = Activation::Relu;

  static LayerSpec conv(std::size_t filters, std::size_t kernel = 3, std::size_t stride = 1,
                        Activation act = Activation::Relu);
  static LayerSpec depthwise_sep_conv(std::size_t filters, std::size_t kernel = 3,
                                      std::size_t stride = 1, Activation act = Activation::Relu);
  static LayerSpec max_pool();
  static LayerSpec mbconv(std::size_t filters, std::size_t stride, std::size_t repeats,
                          bool skip, std::size_t expansion = 6, std::size_t kernel = 3);
  static LayerSpec global_avg_pool();
  static LayerSpec dense(std::size_t units, Activation act = Activation::Relu);
  static LayerSpec dropout(double rate);
  static LayerSpec softmax();

  bool operator==(const LayerSpec&) const = default;
};

struct InputSpec {
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t channels = 3;
  bool operator==(const InputSpec&) const = default;
};

struct ArchitectureSpec {
  std::string name;
  InputSpec input;
  std::size_t num_classes = 2;
  std::vector<LayerSpec> layers;

  // [batch, h, w, c] for the declared input.
  Shape input_shape(std::size_t batch = 1) const {
    return {batch, input.height, input.width, input.channels};
  }

  bool operator==(const ArchitectureSpec&) const = default;
};

// Checks per-layer parameter invariants (filters >= 1, repeats >= 1,
// expansion >= 1, rate in [0,1), ...). Throws ArgumentError with the index.
void validate_layer(const LayerSpec& layer, std::size_t index);

// Output shape of a single layer, without touching data. Errors name the
// layer index and the offending shape.
Shape layer_output_shape(const LayerSpec& layer, const Shape& input, std::size_t index = 0);

// Output shape after every layer, in order. An empty architecture yields
// an empty trace (the input passes through unchanged).
std::vector<Shape> shape_infer(const ArchitectureSpec& arch, const Shape& input_shape);

// Final output shape of the whole network.
Shape output_shape(const ArchitectureSpec& arch, const Shape& input_shape);

// shape_infer on the declared input plus a check that the network ends in
// [N, num_classes].
void validate_architecture(const ArchitectureSpec& arch);

struct ScalingCoefficients {
  double alpha = 1.2;  // depth base
  double beta = 1.1;   // width base
  double gamma = 1.15; // resolution base
  double phi = 0.0;    // compound exponent

  double depth_multiplier() const;
  double width_multiplier() const;
  double resolution_multiplier() const;
  // alpha * beta^2 * gamma^2; reported only.
  double flops_constraint() const;
};

void validate_scaling(const ScalingCoefficients& coeffs);

// Rounding helpers used by compound_scale.
std::size_t scale_repeats(std::size_t repeats, double multiplier);
std::size_t scale_filters(std::size_t filters, double multiplier);
std::size_t scale_resolution(std::size_t resolution, double multiplier);

// Depth: repeats -> ceil(repeats * alpha^phi).
// Width: conv/MBConv filters -> nearest multiple of 8 of filters * beta^phi
//        (halves round up), never below 8.
// Resolution: input extents -> nearest even integer of extent * gamma^phi.
// Dense, dropout and softmax layers are left alone. phi == 0 returns the
// base architecture unchanged.
ArchitectureSpec compound_scale(const ArchitectureSpec& base, const ScalingCoefficients& coeffs);

// JSON document:
//   {"name": ..., "input": {"height", "width", "channels"}, "num_classes": ...,
//    "layers": [{"kind": "conv", "filters": 32, "kernel": 3, "stride": 1,
//                "activation": "relu"}, ...]}
// Layer kinds: conv, depthwise_sep_conv, max_pool, mbconv, global_avg_pool,
// dense, dropout, softmax. Unknown keys are rejected; only the fields that
// apply to a kind are written.
std::string architecture_to_json(const ArchitectureSpec& arch, int indent = 2);
ArchitectureSpec architecture_from_json(const std::string& text,
                                        const std::string& source = "<architecture>");
ArchitectureSpec load_architecture(const std::string& path);
void save_architecture(const std::string& path, const ArchitectureSpec& arch);

} // namespace effnet

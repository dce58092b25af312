#pragma once

#include <cstddef>

#include "effnet/random.hpp"
#include "effnet/tensor.hpp"

// Differentiable primitives. Every forward op has a matching *_backward that
// takes the upstream gradient (shaped like the forward output) and returns
// gradients shaped like the forward inputs. All ops are instantiated for
// float (training) and double (gradient checks).
namespace effnet {

enum class Padding { Same, Valid };

enum class Mode { Train, Infer };

struct ConvGeometry {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  Padding padding = Padding::Same;
};

// Output extent along one spatial axis.
//   SAME:  ceil(in / stride)
//   VALID: floor((in - kernel) / stride) + 1, error when in < kernel
// SAME splits the total padding with the smaller half on the top/left.
struct AxisPlan {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};
AxisPlan plan_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding,
                   const char* where);

// Pure shape functions; the data ops below use the same rules.
Shape conv2d_output_shape(const Shape& input, std::size_t out_channels, const ConvGeometry& geom);
Shape depthwise_output_shape(const Shape& input, const ConvGeometry& geom);
Shape maxpool2d_output_shape(const Shape& input);
Shape global_avg_pool_output_shape(const Shape& input);
Shape dense_output_shape(const Shape& input, std::size_t units);

template <typename T> struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> kernels;
  BasicTensor<T> bias;
};

template <typename T> struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

/// Cross-correlation by its literal definition, NHWC input and
/// [out_c, kh, kw, in_c] kernels. Reference path for conv2d_im2col.
template <typename T>
BasicTensor<T> conv2d_direct(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                             const BasicTensor<T>& bias, const ConvGeometry& geom);

/// Same contract as conv2d_direct, computed as one patch matrix times the
/// reshaped kernel matrix per image. Products are accumulated in the same
/// order as the direct path, so the two agree bit for bit.
template <typename T>
BasicTensor<T> conv2d_im2col(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                             const BasicTensor<T>& bias, const ConvGeometry& geom);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                             const ConvGeometry& geom, const BasicTensor<T>& grad_output);

// Per-channel spatial filter; kernels are [c, kh, kw].
template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                const BasicTensor<T>& bias, const ConvGeometry& geom);

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                       const ConvGeometry& geom,
                                       const BasicTensor<T>& grad_output);

// 2x2 window, stride 2, trailing odd row/column dropped.
template <typename T> BasicTensor<T> maxpool2d(const BasicTensor<T>& input);

// Gradient goes to the first maximum of each window in row-major order.
template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output);

template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape,
                                        const BasicTensor<T>& grad_output);

// [N, in] x [in, out] + bias[out]
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                     const BasicTensor<T>& bias);

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             const BasicTensor<T>& grad_output);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output);

// Row-wise softmax over a rank-2 tensor, with the row max subtracted first.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_output);

// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
// 1/(1-rate). One uniform draw per element, in row-major order.
template <typename T> BasicTensor<T> dropout_mask(const Shape& shape, double rate, Rng& rng);

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& input, double rate, Mode mode, Rng& rng);

template <typename T>
BasicTensor<T> multiply(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

void check_dropout_rate(double rate);

} // namespace effnet

#include "effnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"

namespace effnet {

namespace {

std::string str(std::size_t v) { return std::to_string(v); }

void require_rank(const Shape& s, std::size_t rank, const char* where, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(where, std::string(what) + " must be rank " + str(rank) + ", got " +
                                shape_string(s));
  }
}

struct ConvPlan {
  std::size_t batch, in_h, in_w, in_c;
  std::size_t out_h, out_w, out_c;
  std::size_t pad_top, pad_left;
  std::size_t kh, kw, stride;
};

ConvPlan plan_conv(const Shape& input, std::size_t out_c, const ConvGeometry& geom,
                   const char* where) {
  require_rank(input, 4, where, "input");
  if (geom.kernel_h == 0 || geom.kernel_w == 0 || geom.stride == 0) {
    throw ShapeError(where, "kernel extents and stride must be positive");
  }
  const AxisPlan rows = plan_axis(input[1], geom.kernel_h, geom.stride, geom.padding, where);
  const AxisPlan cols = plan_axis(input[2], geom.kernel_w, geom.stride, geom.padding, where);
  return {input[0],       input[1],        input[2],    input[3],      rows.out,
          cols.out,       out_c,           rows.pad_before, cols.pad_before, geom.kernel_h,
          geom.kernel_w,  geom.stride};
}

template <typename T>
ConvPlan check_conv(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                    const BasicTensor<T>& bias, const ConvGeometry& geom, const char* where) {
  require_rank(kernels.shape(), 4, where, "kernels");
  const Shape& k = kernels.shape();
  if (input.rank() == 4 && k[3] != input.extent(3)) {
    throw ShapeError(where, "input channels (input axis 3) = " + str(input.extent(3)) +
                                " but kernel in_c (kernel axis 3) = " + str(k[3]));
  }
  if (k[1] != geom.kernel_h || k[2] != geom.kernel_w) {
    throw ShapeError(where, "kernel spatial axes 1,2 are " + str(k[1]) + "x" + str(k[2]) +
                                " but geometry says " + str(geom.kernel_h) + "x" +
                                str(geom.kernel_w));
  }
  if (bias.rank() != 1 || bias.extent(0) != k[0]) {
    throw ShapeError(where, "bias must be [" + str(k[0]) + "] (kernel axis 0), got " +
                                shape_string(bias.shape()));
  }
  return plan_conv(input.shape(), k[0], geom, where);
}

// Patch matrix for one image: row = output site, column = (kh, kw, ic).
template <typename T>
void im2col(const T* image, const ConvPlan& p, T* cols) {
  const std::size_t kdim = p.kh * p.kw * p.in_c;
  for (std::size_t oh = 0; oh < p.out_h; ++oh) {
    for (std::size_t ow = 0; ow < p.out_w; ++ow) {
      T* row = cols + (oh * p.out_w + ow) * kdim;
      for (std::size_t i = 0; i < p.kh; ++i) {
        const std::ptrdiff_t ih =
            static_cast<std::ptrdiff_t>(oh * p.stride + i) - static_cast<std::ptrdiff_t>(p.pad_top);
        for (std::size_t j = 0; j < p.kw; ++j) {
          const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * p.stride + j) -
                                    static_cast<std::ptrdiff_t>(p.pad_left);
          T* dst = row + (i * p.kw + j) * p.in_c;
          if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(p.in_h) ||
              iw >= static_cast<std::ptrdiff_t>(p.in_w)) {
            std::fill(dst, dst + p.in_c, T(0));
          } else {
            const T* src = image + (static_cast<std::size_t>(ih) * p.in_w +
                                    static_cast<std::size_t>(iw)) * p.in_c;
            std::copy(src, src + p.in_c, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvPlan& p, T* image) {
  const std::size_t kdim = p.kh * p.kw * p.in_c;
  for (std::size_t oh = 0; oh < p.out_h; ++oh) {
    for (std::size_t ow = 0; ow < p.out_w; ++ow) {
      const T* row = cols + (oh * p.out_w + ow) * kdim;
      for (std::size_t i = 0; i < p.kh; ++i) {
        const std::ptrdiff_t ih =
            static_cast<std::ptrdiff_t>(oh * p.stride + i) - static_cast<std::ptrdiff_t>(p.pad_top);
        if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(p.in_h)) continue;
        for (std::size_t j = 0; j < p.kw; ++j) {
          const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * p.stride + j) -
                                    static_cast<std::ptrdiff_t>(p.pad_left);
          if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(p.in_w)) continue;
          const T* src = row + (i * p.kw + j) * p.in_c;
          T* dst = image + (static_cast<std::size_t>(ih) * p.in_w + static_cast<std::size_t>(iw)) *
                               p.in_c;
          for (std::size_t c = 0; c < p.in_c; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

bool is_pointwise(const ConvPlan& p) {
  return p.kh == 1 && p.kw == 1 && p.stride == 1 && p.pad_top == 0 && p.pad_left == 0;
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const Shape& expected, const char* where,
                        const char* what) {
  if (a.shape() != expected) {
    throw ShapeError(where, std::string(what) + " shape " + shape_string(a.shape()) +
                                " does not match " + shape_string(expected));
  }
}

} // namespace

AxisPlan plan_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding,
                   const char* where) {
  if (padding == Padding::Same) {
    const std::size_t out = (in + stride - 1) / stride;
    const std::size_t needed = (out - 1) * stride + kernel;
    const std::size_t total = needed > in ? needed - in : 0;
    return {out, total / 2};
  }
  if (in < kernel) {
    throw ShapeError(where, "VALID output would be empty: extent " + str(in) + " < kernel " +
                                str(kernel));
  }
  return {(in - kernel) / stride + 1, 0};
}

Shape conv2d_output_shape(const Shape& input, std::size_t out_channels, const ConvGeometry& geom) {
  const ConvPlan p = plan_conv(input, out_channels, geom, "conv2d");
  return {p.batch, p.out_h, p.out_w, out_channels};
}

Shape depthwise_output_shape(const Shape& input, const ConvGeometry& geom) {
  const ConvPlan p = plan_conv(input, input.size() == 4 ? input[3] : 0, geom, "depthwise_conv2d");
  return {p.batch, p.out_h, p.out_w, p.in_c};
}

Shape maxpool2d_output_shape(const Shape& input) {
  require_rank(input, 4, "maxpool2d", "input");
  if (input[1] < 2 || input[2] < 2) {
    throw ShapeError("maxpool2d", "spatial extents (axes 1,2) must be >= 2, got " +
                                      shape_string(input));
  }
  return {input[0], input[1] / 2, input[2] / 2, input[3]};
}

Shape global_avg_pool_output_shape(const Shape& input) {
  require_rank(input, 4, "global_avg_pool", "input");
  return {input[0], input[3]};
}

Shape dense_output_shape(const Shape& input, std::size_t units) {
  require_rank(input, 2, "dense", "input");
  return {input[0], units};
}

template <typename T>
BasicTensor<T> conv2d_direct(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                             const BasicTensor<T>& bias, const ConvGeometry& geom) {
  const ConvPlan p = check_conv(input, kernels, bias, geom, "conv2d_direct");
  BasicTensor<T> out({p.batch, p.out_h, p.out_w, p.out_c});
  if (p.batch == 0) return out;
  const std::size_t kdim = p.kh * p.kw * p.in_c;
  for (std::size_t n = 0; n < p.batch; ++n) {
    for (std::size_t oh = 0; oh < p.out_h; ++oh) {
      for (std::size_t ow = 0; ow < p.out_w; ++ow) {
        for (std::size_t oc = 0; oc < p.out_c; ++oc) {
          T acc = T(0);
          for (std::size_t i = 0; i < p.kh; ++i) {
            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * p.stride + i) -
                                      static_cast<std::ptrdiff_t>(p.pad_top);
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(p.in_h)) continue;
            for (std::size_t j = 0; j < p.kw; ++j) {
              const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * p.stride + j) -
                                        static_cast<std::ptrdiff_t>(p.pad_left);
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(p.in_w)) continue;
              const T* x = &input.at(n, static_cast<std::size_t>(ih),
                                     static_cast<std::size_t>(iw), 0);
              const T* w = &kernels[oc * kdim + (i * p.kw + j) * p.in_c];
              for (std::size_t c = 0; c < p.in_c; ++c) acc += x[c] * w[c];
            }
          }
          out.at(n, oh, ow, oc) = acc + bias[oc];
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_im2col(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                             const BasicTensor<T>& bias, const ConvGeometry& geom) {
  const ConvPlan p = check_conv(input, kernels, bias, geom, "conv2d_im2col");
  BasicTensor<T> out({p.batch, p.out_h, p.out_w, p.out_c});
  if (p.batch == 0) return out;
  const std::size_t kdim = p.kh * p.kw * p.in_c;
  const std::size_t sites = p.out_h * p.out_w;
  std::vector<T> wt(kdim * p.out_c);
  detail::transpose(p.out_c, kdim, kernels.data().data(), wt.data());
  const bool pointwise = is_pointwise(p);
  std::vector<T> cols(pointwise ? 0 : sites * kdim);
  const std::size_t in_image = p.in_h * p.in_w * p.in_c;
  for (std::size_t n = 0; n < p.batch; ++n) {
    const T* image = input.data().data() + n * in_image;
    const T* a = image;
    if (!pointwise) {
      im2col(image, p, cols.data());
      a = cols.data();
    }
    T* c = out.data().data() + n * sites * p.out_c;
    detail::gemm_accumulate(sites, p.out_c, kdim, a, wt.data(), c);
    for (std::size_t s = 0; s < sites; ++s)
      for (std::size_t oc = 0; oc < p.out_c; ++oc) c[s * p.out_c + oc] += bias[oc];
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                             const ConvGeometry& geom, const BasicTensor<T>& grad_output) {
  const BasicTensor<T> no_bias({kernels.rank() == 4 ? kernels.extent(0) : 1});
  const ConvPlan p = check_conv(input, kernels, no_bias, geom, "conv2d_backward");
  require_same_shape(grad_output, {p.batch, p.out_h, p.out_w, p.out_c}, "conv2d_backward",
                     "upstream gradient");
  const std::size_t kdim = p.kh * p.kw * p.in_c;
  const std::size_t sites = p.out_h * p.out_w;
  const std::size_t in_image = p.in_h * p.in_w * p.in_c;

  ConvGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(kernels.shape()),
                 BasicTensor<T>({p.out_c})};
  std::vector<T> dwt(kdim * p.out_c, T(0));
  const bool pointwise = is_pointwise(p);
  std::vector<T> cols(pointwise ? 0 : sites * kdim);
  std::vector<T> dcols(pointwise ? 0 : sites * kdim);

  for (std::size_t n = 0; n < p.batch; ++n) {
    const T* image = input.data().data() + n * in_image;
    const T* dy = grad_output.data().data() + n * sites * p.out_c;
    T* dx = g.input.data().data() + n * in_image;
    for (std::size_t s = 0; s < sites; ++s)
      for (std::size_t oc = 0; oc < p.out_c; ++oc) g.bias[oc] += dy[s * p.out_c + oc];
    if (pointwise) {
      detail::gemm_tn_accumulate(sites, p.out_c, kdim, image, dy, dwt.data());
      detail::gemm_accumulate(sites, kdim, p.out_c, dy, kernels.data().data(), dx);
    } else {
      im2col(image, p, cols.data());
      detail::gemm_tn_accumulate(sites, p.out_c, kdim, cols.data(), dy, dwt.data());
      std::fill(dcols.begin(), dcols.end(), T(0));
      detail::gemm_accumulate(sites, kdim, p.out_c, dy, kernels.data().data(), dcols.data());
      col2im_add(dcols.data(), p, dx);
    }
  }
  detail::transpose(kdim, p.out_c, dwt.data(), g.kernels.data().data());
  return g;
}

template <typename T>
BasicTensor<T> depthwise_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                const BasicTensor<T>& bias, const ConvGeometry& geom) {
  constexpr const char* where = "depthwise_conv2d";
  require_rank(input.shape(), 4, where, "input");
  require_rank(kernels.shape(), 3, where, "kernels");
  const std::size_t ch = input.extent(3);
  if (kernels.extent(0) != ch) {
    throw ShapeError(where, "input channels (input axis 3) = " + str(ch) +
                                " but kernel channels (kernel axis 0) = " + str(kernels.extent(0)));
  }
  if (kernels.extent(1) != geom.kernel_h || kernels.extent(2) != geom.kernel_w) {
    throw ShapeError(where, "kernel spatial axes 1,2 do not match geometry");
  }
  if (bias.rank() != 1 || bias.extent(0) != ch) {
    throw ShapeError(where, "bias must be [" + str(ch) + "], got " + shape_string(bias.shape()));
  }
  const ConvPlan p = plan_conv(input.shape(), ch, geom, where);
  BasicTensor<T> out({p.batch, p.out_h, p.out_w, ch});
  // [kh, kw, c] so the channel loop is contiguous.
  std::vector<T> wt(p.kh * p.kw * ch);
  detail::transpose(ch, p.kh * p.kw, kernels.data().data(), wt.data());
  std::vector<T> acc(ch);
  for (std::size_t n = 0; n < p.batch; ++n) {
    for (std::size_t oh = 0; oh < p.out_h; ++oh) {
      for (std::size_t ow = 0; ow < p.out_w; ++ow) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (std::size_t i = 0; i < p.kh; ++i) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * p.stride + i) -
                                    static_cast<std::ptrdiff_t>(p.pad_top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(p.in_h)) continue;
          for (std::size_t j = 0; j < p.kw; ++j) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * p.stride + j) -
                                      static_cast<std::ptrdiff_t>(p.pad_left);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(p.in_w)) continue;
            const T* x = &input.at(n, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), 0);
            const T* w = wt.data() + (i * p.kw + j) * ch;
            for (std::size_t c = 0; c < ch; ++c) acc[c] += x[c] * w[c];
          }
        }
        T* y = &out.at(n, oh, ow, 0);
        for (std::size_t c = 0; c < ch; ++c) y[c] = acc[c] + bias[c];
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> depthwise_conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                                       const ConvGeometry& geom,
                                       const BasicTensor<T>& grad_output) {
  constexpr const char* where = "depthwise_conv2d_backward";
  require_rank(input.shape(), 4, where, "input");
  require_rank(kernels.shape(), 3, where, "kernels");
  const std::size_t ch = input.extent(3);
  if (kernels.extent(0) != ch) throw ShapeError(where, "kernel channel count mismatch");
  const ConvPlan p = plan_conv(input.shape(), ch, geom, where);
  require_same_shape(grad_output, {p.batch, p.out_h, p.out_w, ch}, where, "upstream gradient");

  ConvGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(kernels.shape()),
                 BasicTensor<T>({ch})};
  std::vector<T> wt(p.kh * p.kw * ch);
  detail::transpose(ch, p.kh * p.kw, kernels.data().data(), wt.data());
  std::vector<T> dwt(p.kh * p.kw * ch, T(0));
  for (std::size_t n = 0; n < p.batch; ++n) {
    for (std::size_t oh = 0; oh < p.out_h; ++oh) {
      for (std::size_t ow = 0; ow < p.out_w; ++ow) {
        const T* dy = &grad_output.at(n, oh, ow, 0);
        for (std::size_t c = 0; c < ch; ++c) g.bias[c] += dy[c];
        for (std::size_t i = 0; i < p.kh; ++i) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * p.stride + i) -
                                    static_cast<std::ptrdiff_t>(p.pad_top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(p.in_h)) continue;
          for (std::size_t j = 0; j < p.kw; ++j) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * p.stride + j) -
                                      static_cast<std::ptrdiff_t>(p.pad_left);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(p.in_w)) continue;
            const std::size_t off = (i * p.kw + j) * ch;
            const T* x = &input.at(n, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), 0);
            T* dx = &g.input.at(n, static_cast<std::size_t>(ih), static_cast<std::size_t>(iw), 0);
            for (std::size_t c = 0; c < ch; ++c) {
              dx[c] += dy[c] * wt[off + c];
              dwt[off + c] += dy[c] * x[c];
            }
          }
        }
      }
    }
  }
  detail::transpose(p.kh * p.kw, ch, dwt.data(), g.kernels.data().data());
  return g;
}

template <typename T> BasicTensor<T> maxpool2d(const BasicTensor<T>& input) {
  const Shape os = maxpool2d_output_shape(input.shape());
  BasicTensor<T> out(os);
  const std::size_t ch = os[3];
  for (std::size_t n = 0; n < os[0]; ++n)
    for (std::size_t oh = 0; oh < os[1]; ++oh)
      for (std::size_t ow = 0; ow < os[2]; ++ow) {
        const T* a = &input.at(n, 2 * oh, 2 * ow, 0);
        const T* b = &input.at(n, 2 * oh, 2 * ow + 1, 0);
        const T* c = &input.at(n, 2 * oh + 1, 2 * ow, 0);
        const T* d = &input.at(n, 2 * oh + 1, 2 * ow + 1, 0);
        T* y = &out.at(n, oh, ow, 0);
        for (std::size_t k = 0; k < ch; ++k) y[k] = std::max(std::max(a[k], b[k]), std::max(c[k], d[k]));
      }
  return out;
}

template <typename T>
BasicTensor<T> maxpool2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output) {
  const Shape os = maxpool2d_output_shape(input.shape());
  require_same_shape(grad_output, os, "maxpool2d_backward", "upstream gradient");
  BasicTensor<T> dx(input.shape());
  for (std::size_t n = 0; n < os[0]; ++n)
    for (std::size_t oh = 0; oh < os[1]; ++oh)
      for (std::size_t ow = 0; ow < os[2]; ++ow)
        for (std::size_t k = 0; k < os[3]; ++k) {
          std::size_t bh = 2 * oh, bw = 2 * ow;
          T best = input.at(n, bh, bw, k);
          for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
              const T v = input.at(n, 2 * oh + i, 2 * ow + j, k);
              if (v > best) {
                best = v;
                bh = 2 * oh + i;
                bw = 2 * ow + j;
              }
            }
          dx.at(n, bh, bw, k) += grad_output.at(n, oh, ow, k);
        }
  return dx;
}

template <typename T> BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
  const Shape os = global_avg_pool_output_shape(input.shape());
  BasicTensor<T> out(os);
  const std::size_t sites = input.extent(1) * input.extent(2);
  const std::size_t ch = os[1];
  for (std::size_t n = 0; n < os[0]; ++n) {
    T* y = &out[n * ch];
    const T* x = input.data().data() + n * sites * ch;
    for (std::size_t s = 0; s < sites; ++s)
      for (std::size_t c = 0; c < ch; ++c) y[c] += x[s * ch + c];
    for (std::size_t c = 0; c < ch; ++c) y[c] /= static_cast<T>(sites);
  }
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input_shape,
                                        const BasicTensor<T>& grad_output) {
  require_same_shape(grad_output, global_avg_pool_output_shape(input_shape),
                     "global_avg_pool_backward", "upstream gradient");
  BasicTensor<T> dx(input_shape);
  const std::size_t sites = input_shape[1] * input_shape[2];
  const std::size_t ch = input_shape[3];
  const T scale = T(1) / static_cast<T>(sites);
  for (std::size_t n = 0; n < input_shape[0]; ++n)
    for (std::size_t s = 0; s < sites; ++s)
      for (std::size_t c = 0; c < ch; ++c)
        dx[(n * sites + s) * ch + c] = grad_output[n * ch + c] * scale;
  return dx;
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                     const BasicTensor<T>& bias) {
  constexpr const char* where = "dense";
  require_rank(input.shape(), 2, where, "input");
  require_rank(weights.shape(), 2, where, "weights");
  const std::size_t in = input.extent(1), out_units = weights.extent(1);
  if (weights.extent(0) != in) {
    throw ShapeError(where, "input features (input axis 1) = " + str(in) +
                                " but weights rows (weights axis 0) = " + str(weights.extent(0)));
  }
  if (bias.rank() != 1 || bias.extent(0) != out_units) {
    throw ShapeError(where, "bias must be [" + str(out_units) + "], got " +
                                shape_string(bias.shape()));
  }
  BasicTensor<T> out({input.extent(0), out_units});
  detail::gemm_accumulate(input.extent(0), out_units, in, input.data().data(),
                          weights.data().data(), out.data().data());
  for (std::size_t n = 0; n < input.extent(0); ++n)
    for (std::size_t j = 0; j < out_units; ++j) out[n * out_units + j] += bias[j];
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                             const BasicTensor<T>& grad_output) {
  constexpr const char* where = "dense_backward";
  require_rank(input.shape(), 2, where, "input");
  require_rank(weights.shape(), 2, where, "weights");
  if (weights.extent(0) != input.extent(1)) throw ShapeError(where, "inner extents disagree");
  const std::size_t batch = input.extent(0), in = input.extent(1), out_units = weights.extent(1);
  require_same_shape(grad_output, {batch, out_units}, where, "upstream gradient");
  DenseGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weights.shape()),
                  BasicTensor<T>({out_units})};
  std::vector<T> wt(out_units * in);
  detail::transpose(in, out_units, weights.data().data(), wt.data());
  detail::gemm_accumulate(batch, in, out_units, grad_output.data().data(), wt.data(),
                          g.input.data().data());
  detail::gemm_tn_accumulate(batch, out_units, in, input.data().data(),
                             grad_output.data().data(), g.weights.data().data());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t j = 0; j < out_units; ++j) g.bias[j] += grad_output[n * out_units + j];
  return g;
}

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& input, const BasicTensor<T>& grad_output) {
  require_same_shape(grad_output, input.shape(), "relu_backward", "upstream gradient");
  BasicTensor<T> dx = grad_output;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(input[i] > T(0))) dx[i] = T(0);
  return dx;
}

template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& input) {
  require_rank(input.shape(), 2, "softmax", "input");
  BasicTensor<T> out(input.shape());
  const std::size_t rows = input.extent(0), cols = input.extent(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = &input[r * cols];
    T* y = &out[r * cols];
    const T mx = *std::max_element(x, x + cols);
    T sum = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= sum;
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& output, const BasicTensor<T>& grad_output) {
  require_rank(output.shape(), 2, "softmax_backward", "output");
  require_same_shape(grad_output, output.shape(), "softmax_backward", "upstream gradient");
  BasicTensor<T> dx(output.shape());
  const std::size_t rows = output.extent(0), cols = output.extent(1);
  for (std::size_t r = 0; r < rows; ++r) {
    T dot = T(0);
    for (std::size_t c = 0; c < cols; ++c) dot += grad_output[r * cols + c] * output[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c)
      dx[r * cols + c] = output[r * cols + c] * (grad_output[r * cols + c] - dot);
  }
  return dx;
}

void check_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ArgumentError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
}

template <typename T> BasicTensor<T> dropout_mask(const Shape& shape, double rate, Rng& rng) {
  check_dropout_rate(rate);
  BasicTensor<T> mask(shape, T(1));
  if (rate == 0.0) return mask;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask.data()) m = rng.uniform() < rate ? T(0) : keep_scale;
  return mask;
}

template <typename T>
BasicTensor<T> dropout(const BasicTensor<T>& input, double rate, Mode mode, Rng& rng) {
  check_dropout_rate(rate);
  if (mode == Mode::Infer || rate == 0.0) return input;
  return multiply(input, dropout_mask<T>(input.shape(), rate, rng));
}

template <typename T>
BasicTensor<T> multiply(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(b, a.shape(), "multiply", "rhs");
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(b, a.shape(), "add", "rhs");
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

#define EFFNET_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> conv2d_direct(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        const BasicTensor<T>&, const ConvGeometry&);           \
  template BasicTensor<T> conv2d_im2col(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        const BasicTensor<T>&, const ConvGeometry&);           \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        const ConvGeometry&, const BasicTensor<T>&);           \
  template BasicTensor<T> depthwise_conv2d(const BasicTensor<T>&, const BasicTensor<T>&,       \
                                           const BasicTensor<T>&, const ConvGeometry&);        \
  template ConvGrads<T> depthwise_conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                  const ConvGeometry&, const BasicTensor<T>&); \
  template BasicTensor<T> maxpool2d(const BasicTensor<T>&);                                    \
  template BasicTensor<T> maxpool2d_backward(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                              \
  template BasicTensor<T> global_avg_pool_backward(const Shape&, const BasicTensor<T>&);       \
  template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                const BasicTensor<T>&);                                        \
  template DenseGrads<T> dense_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                        const BasicTensor<T>&);                                \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                         \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                      \
  template BasicTensor<T> softmax_backward(const BasicTensor<T>&, const BasicTensor<T>&);      \
  template BasicTensor<T> dropout_mask<T>(const Shape&, double, Rng&);                         \
  template BasicTensor<T> dropout(const BasicTensor<T>&, double, Mode, Rng&);                  \
  template BasicTensor<T> multiply(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);

EFFNET_INSTANTIATE_OPS(float)
EFFNET_INSTANTIATE_OPS(double)

#undef EFFNET_INSTANTIATE_OPS

} // namespace effnet

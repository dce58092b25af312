#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "effnet/random.hpp"
#include "effnet/tensor.hpp"

// Single images are rank-3 tensors [height, width, channels] holding values in
// [0, 255] until normalized.
namespace effnet {

// Binary PPM (P6, or P5 grayscale) and PNG (any bit depth/colour type that
// libpng can convert to 8-bit RGB). Grayscale is replicated to 3 channels.
// Throws FormatError naming the path on unsupported or truncated files.
Tensor decode_image(const std::string& path);
Tensor decode_image_bytes(std::span<const std::uint8_t> bytes, const std::string& source);

// Values are rounded and clamped to [0, 255]. PPM needs 3 channels; PNG
// takes 1 (gray) or 3.
void write_ppm(const std::string& path, const Tensor& image);
std::vector<std::uint8_t> encode_ppm(const Tensor& image);
void write_png(const std::string& path, const Tensor& image);

// Bilinear resampling with half-pixel centres:
//   src = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1]
// and interpolation written as a + t * (b - a), so constant regions and
// same-size resizes come back bit-identical.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

enum class NormalizeMode { UnitRange, Standardize };

const char* to_string(NormalizeMode mode);
NormalizeMode normalize_mode_from_string(const std::string& text);

// UnitRange: x / 255. Standardize: (x - mean) / max(std, 1e-7) with mean and
// std taken over the whole image.
Tensor normalize(const Tensor& image, NormalizeMode mode);

struct AugmentConfig {
  bool enabled = false;
  double rotation_max_deg = 15.0;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double hflip_prob = 0.5;
  double vflip_prob = 0.0;
};

void validate_augment(const AugmentConfig& cfg);

// Geometric primitives used by augment. Sampling outside the image repeats
// the nearest border pixel. Positive angles turn the content
// counter-clockwise as displayed.
Tensor rotate(const Tensor& image, double degrees);
Tensor rescale_about_center(const Tensor& image, double scale);
Tensor flip_horizontal(const Tensor& image);
Tensor flip_vertical(const Tensor& image);

// Rotation by U(-max, max) degrees, then scale by U(lo, hi) (crop or pad back
// to the original size), then horizontal and vertical flips with their
// probabilities. When enabled, exactly four draws are taken from `rng` per
// image; a disabled config takes none and returns the input.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng);

// Normalized 1-D Gaussian taps, radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

// Separable Gaussian blur with edge-replicate padding.
Tensor gaussian_blur(const Tensor& image, double sigma);

// Per-channel median over an odd square window, edge-replicate padding.
Tensor median_filter(const Tensor& image, std::size_t window);

struct PreprocessConfig {
  std::size_t height = 224;
  std::size_t width = 224;
  NormalizeMode normalization = NormalizeMode::UnitRange;
  double gaussian_sigma = 0.0;   // 0 disables
  std::size_t median_window = 0; // 0 disables
};

// resize -> median -> gaussian -> normalize.
Tensor preprocess(const Tensor& decoded, const PreprocessConfig& cfg);

} // namespace effnet

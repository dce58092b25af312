#include "effnet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include <png.h>

namespace effnet {

namespace {

void require_image(const Tensor& image, const char* where) {
  if (image.rank() != 3 || image.extent(0) == 0) {
    throw ShapeError(where, "expected an [h, w, c] image, got " + shape_string(image.shape()));
  }
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path, "cannot open file for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path, "write failed");
}

std::uint8_t to_byte(float v) {
  const float r = std::round(v);
  return static_cast<std::uint8_t>(std::clamp(r, 0.0f, 255.0f));
}

class PnmReader {
public:
  PnmReader(std::span<const std::uint8_t> bytes, const std::string& source)
      : bytes_(bytes), source_(source) {}

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw FormatError(source_, "malformed PNM header");
    }
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (1u << 24)) throw FormatError(source_, "PNM header value too large");
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the raster.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError(source_, "malformed PNM header");
    }
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

Tensor decode_pnm(std::span<const std::uint8_t> bytes, const std::string& source) {
  const bool color = bytes[1] == '6';
  PnmReader r(bytes, source);
  r.seek(2);
  const std::size_t w = r.number();
  const std::size_t h = r.number();
  const std::size_t maxval = r.number();
  r.end_header();
  if (w == 0 || h == 0) throw FormatError(source, "PNM image has zero extent");
  if (maxval == 0 || maxval > 65535) throw FormatError(source, "PNM maxval out of range");
  const std::size_t channels = color ? 3 : 1;
  const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
  const std::size_t need = w * h * channels * sample_bytes;
  if (bytes.size() - r.pos() < need) {
    throw FormatError(source, "truncated PNM raster: expected " + std::to_string(need) +
                                  " bytes, found " + std::to_string(bytes.size() - r.pos()));
  }
  Tensor img({h, w, 3});
  const std::uint8_t* p = bytes.data() + r.pos();
  const float scale = 255.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::size_t v;
      if (sample_bytes == 1) {
        v = *p++;
      } else {
        v = (static_cast<std::size_t>(p[0]) << 8) | p[1];
        p += 2;
      }
      const float f = maxval == 255 ? static_cast<float>(v) : static_cast<float>(v) * scale;
      if (color) {
        img[i * 3 + c] = f;
      } else {
        img[i * 3] = img[i * 3 + 1] = img[i * 3 + 2] = f;
      }
    }
  }
  return img;
}

Tensor decode_png(std::span<const std::uint8_t> bytes, const std::string& source) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError(source, std::string("PNG decode failed: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw FormatError(source, "PNG decode failed: " + msg);
  }
  Tensor img({image.height, image.width, 3});
  for (std::size_t i = 0; i < buffer.size(); ++i) img[i] = static_cast<float>(buffer[i]);
  return img;
}

// Clamped-coordinate bilinear sample of every channel at (y, x).
void sample(const Tensor& img, double y, double x, float* out) {
  const std::size_t h = img.extent(0), w = img.extent(1), ch = img.extent(2);
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(y);
  const auto x0 = static_cast<std::size_t>(x);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const auto ty = static_cast<float>(y - static_cast<double>(y0));
  const auto tx = static_cast<float>(x - static_cast<double>(x0));
  const float* a = &img[(y0 * w + x0) * ch];
  const float* b = &img[(y0 * w + x1) * ch];
  const float* c = &img[(y1 * w + x0) * ch];
  const float* d = &img[(y1 * w + x1) * ch];
  for (std::size_t k = 0; k < ch; ++k) {
    const float top = a[k] + tx * (b[k] - a[k]);
    const float bottom = c[k] + tx * (d[k] - c[k]);
    out[k] = top + ty * (bottom - top);
  }
}

std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) return 0;
  if (static_cast<std::size_t>(i) >= n) return n - 1;
  return static_cast<std::size_t>(i);
}

} // namespace

Tensor decode_image_bytes(std::span<const std::uint8_t> bytes, const std::string& source) {
  static constexpr std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '5')) {
    return decode_pnm(bytes, source);
  }
  if (bytes.size() >= 8 && std::equal(kPngSig, kPngSig + 8, bytes.begin())) {
    return decode_png(bytes, source);
  }
  throw FormatError(source, "unsupported image format (expected binary PPM or PNG)");
}

Tensor decode_image(const std::string& path) {
  const auto bytes = read_file(path);
  return decode_image_bytes(bytes, path);
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  require_image(image, "encode_ppm");
  if (image.extent(2) != 3) throw ShapeError("encode_ppm", "PPM output needs 3 channels");
  const std::string header = "P6\n" + std::to_string(image.extent(1)) + " " +
                             std::to_string(image.extent(0)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.size());
  for (float v : image.data()) out.push_back(to_byte(v));
  return out;
}

void write_ppm(const std::string& path, const Tensor& image) {
  const auto bytes = encode_ppm(image);
  write_file(path, bytes);
}

void write_png(const std::string& path, const Tensor& image) {
  require_image(image, "write_png");
  const std::size_t ch = image.extent(2);
  if (ch != 1 && ch != 3) throw ShapeError("write_png", "PNG output needs 1 or 3 channels");
  std::vector<std::uint8_t> buffer(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) buffer[i] = to_byte(image[i]);
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.extent(1));
  png.height = static_cast<png_uint_32>(image.extent(0));
  png.format = ch == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw FormatError(path, std::string("PNG encode failed: ") + png.message);
  }
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  require_image(image, "resize_bilinear");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear", "output extents must be >= 1");
  const std::size_t in_h = image.extent(0), in_w = image.extent(1), ch = image.extent(2);
  Tensor out({out_h, out_w, ch});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double src_y = (static_cast<double>(y) + 0.5) * sy - 0.5;
    for (std::size_t x = 0; x < out_w; ++x) {
      const double src_x = (static_cast<double>(x) + 0.5) * sx - 0.5;
      sample(image, src_y, src_x, &out[(y * out_w + x) * ch]);
    }
  }
  return out;
}

const char* to_string(NormalizeMode mode) {
  return mode == NormalizeMode::UnitRange ? "unit_range" : "standardize";
}

NormalizeMode normalize_mode_from_string(const std::string& text) {
  if (text == "unit_range") return NormalizeMode::UnitRange;
  if (text == "standardize") return NormalizeMode::Standardize;
  throw ArgumentError("unknown normalization '" + text + "' (expected unit_range or standardize)");
}

Tensor normalize(const Tensor& image, NormalizeMode mode) {
  if (image.empty()) throw ShapeError("normalize", "image is empty");
  Tensor out = image;
  if (mode == NormalizeMode::UnitRange) {
    for (auto& v : out.data()) v /= 255.0f;
    return out;
  }
  double mean = 0.0;
  for (float v : image.data()) mean += v;
  mean /= static_cast<double>(image.size());
  double var = 0.0;
  for (float v : image.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(image.size());
  const double denom = std::max(std::sqrt(var), 1e-7);
  for (auto& v : out.data()) v = static_cast<float>((v - mean) / denom);
  return out;
}

void validate_augment(const AugmentConfig& cfg) {
  if (!(cfg.rotation_max_deg >= 0.0)) throw ArgumentError("augment: rotation_max_deg must be >= 0");
  if (!(cfg.scale_lo > 0.0 && cfg.scale_lo <= cfg.scale_hi)) {
    throw ArgumentError("augment: scale range must satisfy 0 < lo <= hi");
  }
  for (double p : {cfg.hflip_prob, cfg.vflip_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("augment: probabilities must be in [0, 1]");
  }
}

Tensor rotate(const Tensor& image, double degrees) {
  require_image(image, "rotate");
  const std::size_t h = image.extent(0), w = image.extent(1), ch = image.extent(2);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      sample(image, cy + s * dx + c * dy, cx + c * dx - s * dy, &out[(y * w + x) * ch]);
    }
  }
  return out;
}

Tensor rescale_about_center(const Tensor& image, double scale) {
  require_image(image, "rescale_about_center");
  if (!(scale > 0.0)) throw ArgumentError("rescale_about_center: scale must be > 0");
  const std::size_t h = image.extent(0), w = image.extent(1), ch = image.extent(2);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      sample(image, cy + (static_cast<double>(y) - cy) / scale,
             cx + (static_cast<double>(x) - cx) / scale, &out[(y * w + x) * ch]);
    }
  }
  return out;
}

Tensor flip_horizontal(const Tensor& image) {
  require_image(image, "flip_horizontal");
  const std::size_t h = image.extent(0), w = image.extent(1), ch = image.extent(2);
  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      std::copy_n(&image[(y * w + (w - 1 - x)) * ch], ch, &out[(y * w + x) * ch]);
  return out;
}

Tensor flip_vertical(const Tensor& image) {
  require_image(image, "flip_vertical");
  const std::size_t h = image.extent(0), row = image.extent(1) * image.extent(2);
  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y) std::copy_n(&image[(h - 1 - y) * row], row, &out[y * row]);
  return out;
}

Tensor augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng) {
  validate_augment(cfg);
  if (!cfg.enabled) return image;
  const double angle = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg);
  const double scale = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  const bool hflip = rng.bernoulli(cfg.hflip_prob);
  const bool vflip = rng.bernoulli(cfg.vflip_prob);
  Tensor out = image;
  if (angle != 0.0) out = rotate(out, angle);
  if (scale != 1.0) out = rescale_about_center(out, scale);
  if (hflip) out = flip_horizontal(out);
  if (vflip) out = flip_vertical(out);
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ArgumentError("gaussian: sigma must be > 0");
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  require_image(image, "gaussian_blur");
  const auto k = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(k.size() / 2);
  const std::size_t h = image.extent(0), w = image.extent(1), ch = image.extent(2);
  Tensor tmp(image.shape());
  Tensor out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          const std::size_t xx = clamp_index(static_cast<std::ptrdiff_t>(x) + t, w);
          acc += k[static_cast<std::size_t>(t + radius)] * image[(y * w + xx) * ch + c];
        }
        tmp[(y * w + x) * ch + c] = static_cast<float>(acc);
      }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < ch; ++c) {
        double acc = 0.0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          const std::size_t yy = clamp_index(static_cast<std::ptrdiff_t>(y) + t, h);
          acc += k[static_cast<std::size_t>(t + radius)] * tmp[(yy * w + x) * ch + c];
        }
        out[(y * w + x) * ch + c] = static_cast<float>(acc);
      }
  return out;
}

Tensor median_filter(const Tensor& image, std::size_t window) {
  require_image(image, "median_filter");
  if (window < 3 || window % 2 == 0) {
    throw ArgumentError("median_filter: window must be odd and >= 3, got " + std::to_string(window));
  }
  const auto r = static_cast<std::ptrdiff_t>(window / 2);
  const std::size_t h = image.extent(0), w = image.extent(1), ch = image.extent(2);
  Tensor out(image.shape());
  std::vector<float> buf(window * window);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < ch; ++c) {
        std::size_t n = 0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const std::size_t yy = clamp_index(static_cast<std::ptrdiff_t>(y) + dy, h);
            const std::size_t xx = clamp_index(static_cast<std::ptrdiff_t>(x) + dx, w);
            buf[n++] = image[(yy * w + xx) * ch + c];
          }
        auto mid = buf.begin() + static_cast<std::ptrdiff_t>(n / 2);
        std::nth_element(buf.begin(), mid, buf.end());
        out[(y * w + x) * ch + c] = *mid;
      }
  return out;
}

Tensor preprocess(const Tensor& decoded, const PreprocessConfig& cfg) {
  Tensor img = resize_bilinear(decoded, cfg.height, cfg.width);
  if (cfg.median_window != 0) img = median_filter(img, cfg.median_window);
  if (cfg.gaussian_sigma > 0.0) img = gaussian_blur(img, cfg.gaussian_sigma);
  return normalize(img, cfg.normalization);
}

} // namespace effnet

#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <unistd.h>

#include "effnet/model_zoo.hpp"
#include "effnet/network.hpp"
#include "effnet/training.hpp"

namespace fs = std::filesystem;

namespace effnet::testkit {

std::string make_temp_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  const fs::path base = fs::temp_directory_path() / "effnet-tests";
  for (;;) {
    const fs::path dir = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    if (fs::exists(dir)) continue;
    fs::create_directories(dir);
    return dir.string();
  }
}

Tensor64 naive_conv2d(const Tensor64& input, const Tensor64& kernels, const Tensor64& bias,
                      const ConvGeometry& g) {
  const std::size_t n = input.extent(0), h = input.extent(1), w = input.extent(2), ci = input.extent(3);
  const std::size_t co = kernels.extent(0), kh = g.kernel_h, kw = g.kernel_w, s = g.stride;
  std::size_t oh, ow;
  long pad_t = 0, pad_l = 0;
  if (g.padding == Padding::Same) {
    oh = (h + s - 1) / s;
    ow = (w + s - 1) / s;
    const long th = std::max(0L, static_cast<long>((oh - 1) * s + kh) - static_cast<long>(h));
    const long tw = std::max(0L, static_cast<long>((ow - 1) * s + kw) - static_cast<long>(w));
    pad_t = th / 2;
    pad_l = tw / 2;
  } else {
    oh = (h - kh) / s + 1;
    ow = (w - kw) / s + 1;
  }
  Tensor64 out({n, oh, ow, co});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = bias[o];
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long iy = static_cast<long>(y * s + i) - pad_t;
              const long ix = static_cast<long>(x * s + j) - pad_l;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              for (std::size_t c = 0; c < ci; ++c) {
                acc += input.at(b, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), c) *
                       kernels[((o * kh + i) * kw + j) * ci + c];
              }
            }
          out.at(b, y, x, o) = acc;
        }
  return out;
}

std::vector<ConvCase> random_conv_cases(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ConvCase> cases;
  const std::size_t kernels[] = {1, 2, 3, 5};
  while (cases.size() < count) {
    ConvCase c;
    const std::size_t k = kernels[rng.below(4)];
    const std::size_t stride = 1 + rng.below(3);
    const Padding pad = rng.bernoulli(0.5) ? Padding::Same : Padding::Valid;
    const std::size_t lo = pad == Padding::Valid ? k : 1;
    const std::size_t h = lo + rng.below(13), w = lo + rng.below(13);
    c.input = {1 + rng.below(3), h, w, 1 + rng.below(8)};
    c.out_channels = 1 + rng.below(8);
    c.geom = {k, k, stride, pad};
    c.label = "random#" + std::to_string(cases.size()) + " " + shape_string(c.input) + " k" +
              std::to_string(k) + " s" + std::to_string(stride) +
              (pad == Padding::Same ? " same" : " valid") + " ->" + std::to_string(c.out_channels);
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<ConvCase> preset_conv_cases() {
  std::vector<ConvCase> cases;
  for (PresetName p : {PresetName::ChestCancer, PresetName::SkinCancer}) {
    const ArchitectureSpec arch = build_preset(p).arch;
    Shape cur = arch.input_shape(1);
    const std::string tag = to_string(p);
    auto add = [&](const Shape& in, std::size_t out, std::size_t k, std::size_t stride, const std::string& what) {
      cases.push_back({tag + " " + what + " " + shape_string(in) + "->" + std::to_string(out), in, out,
                       ConvGeometry{k, k, stride, Padding::Same}});
    };
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
      const LayerSpec& l = arch.layers[i];
      const std::string at = "layer" + std::to_string(i);
      if (l.kind == LayerKind::Conv) {
        add(cur, l.filters, l.kernel, l.stride, at + " conv");
      } else if (l.kind == LayerKind::DepthwiseSepConv) {
        const Shape dw = depthwise_output_shape(cur, {l.kernel, l.kernel, l.stride, Padding::Same});
        add(dw, l.filters, 1, 1, at + " pointwise");
      } else if (l.kind == LayerKind::MBConvBlock) {
        Shape x = cur;
        for (std::size_t r = 0; r < l.repeats; ++r) {
          const std::size_t wide = x[3] * l.expansion;
          add(x, wide, 1, 1, at + " expand" + std::to_string(r));
          Shape d = depthwise_output_shape({x[0], x[1], x[2], wide},
                                           {l.kernel, l.kernel, r == 0 ? l.stride : 1, Padding::Same});
          add(d, l.filters, 1, 1, at + " project" + std::to_string(r));
          x = {d[0], d[1], d[2], l.filters};
        }
      }
      cur = layer_output_shape(l, cur, i);
    }
  }
  return cases;
}

double rel_diff(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

ConvComparison compare_conv_paths(const std::vector<ConvCase>& cases, std::uint64_t seed, bool with_naive) {
  ConvComparison out;
  Rng rng(seed);
  for (const auto& c : cases) {
    const Tensor x = random_tensor<float>(c.input, rng);
    const Tensor k = random_tensor<float>({c.out_channels, c.geom.kernel_h, c.geom.kernel_w, c.input[3]}, rng);
    const Tensor b = random_tensor<float>({c.out_channels}, rng);
    const Tensor direct = conv2d_direct(x, k, b, c.geom);
    const Tensor fast = conv2d_im2col(x, k, b, c.geom);
    if (direct.shape() != fast.shape()) {
      out.max_rel_im2col_vs_direct = INFINITY;
      out.worst_case = c.label + " (shape mismatch)";
      continue;
    }
    for (std::size_t i = 0; i < direct.size(); ++i) {
      const double r = rel_diff(direct[i], fast[i]);
      if (r > out.max_rel_im2col_vs_direct) {
        out.max_rel_im2col_vs_direct = r;
        out.worst_case = c.label;
      }
    }
    if (with_naive) {
      const Tensor64 ref = naive_conv2d(tensor_cast<double>(x), tensor_cast<double>(k), tensor_cast<double>(b), c.geom);
      if (ref.shape() != direct.shape()) {
        out.max_rel_direct_vs_naive = INFINITY;
        continue;
      }
      // Float accumulation error scales with the sum of |terms|, so compare
      // against that bound rather than the (possibly cancelling) result.
      const double terms = static_cast<double>(c.geom.kernel_h * c.geom.kernel_w * c.input[3] + 1);
      for (std::size_t i = 0; i < ref.size(); ++i) {
        const double err = std::abs(ref[i] - direct[i]) / terms;
        out.max_rel_direct_vs_naive = std::max(out.max_rel_direct_vs_naive, err);
      }
    }
    ++out.cases;
  }
  return out;
}

GradCheck check_gradient(const std::string& name, Tensor64& x, const Tensor64& analytic,
                         const std::function<double()>& loss, double tol, double h,
                         std::size_t max_points, double floor) {
  GradCheck r;
  r.name = name;
  if (analytic.shape() != x.shape()) {
    r.max_rel = INFINITY;
    return r;
  }
  const std::size_t stride = std::max<std::size_t>(1, (x.size() + max_points - 1) / max_points);
  for (std::size_t i = 0; i < x.size(); i += stride) {
    const double saved = x[i];
    x[i] = saved + h;
    const double lp = loss();
    x[i] = saved - h;
    const double lm = loss();
    x[i] = saved;
    const double numeric = (lp - lm) / (2 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    r.max_rel = std::max(r.max_rel, std::abs(a - numeric) / denom);
    ++r.checked;
  }
  r.passed = r.max_rel <= tol;
  return r;
}

namespace {

double weighted_sum(const Tensor64& y, const Tensor64& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
  return s;
}

// Values spaced far apart relative to the step so window maxima never swap.
Tensor64 spaced_tensor(const Shape& shape, Rng& rng) {
  Tensor64 t(shape);
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(perm[i]) - 0.3;
  return t;
}

// Values at least 0.05 away from the ReLU kink.
Tensor64 off_kink_tensor(const Shape& shape, Rng& rng) {
  Tensor64 t(shape);
  for (auto& v : t.data()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.bernoulli(0.5) ? m : -m;
  }
  return t;
}

} // namespace

std::vector<GradCheck> op_gradient_checks(double tol) {
  std::vector<GradCheck> out;
  Rng rng(2024);

  struct ConvGradCase {
    Shape in;
    std::size_t co;
    ConvGeometry g;
  };
  const ConvGradCase conv_cases[] = {
      {{2, 5, 6, 3}, 4, {3, 3, 1, Padding::Same}},
      {{1, 7, 7, 2}, 3, {3, 3, 2, Padding::Same}},
      {{1, 6, 5, 2}, 2, {2, 2, 2, Padding::Valid}},
      {{2, 5, 5, 3}, 2, {1, 1, 1, Padding::Same}},
  };
  for (const auto& c : conv_cases) {
    Tensor64 x = random_tensor<double>(c.in, rng);
    Tensor64 k = random_tensor<double>({c.co, c.g.kernel_h, c.g.kernel_w, c.in[3]}, rng);
    Tensor64 b = random_tensor<double>({c.co}, rng);
    const Tensor64 w = random_tensor<double>(conv2d_output_shape(c.in, c.co, c.g), rng);
    const auto grads = conv2d_backward(x, k, c.g, w);
    auto loss = [&] { return weighted_sum(conv2d_im2col(x, k, b, c.g), w); };
    const std::string tag = "conv2d " + shape_string(c.in) + " k" + std::to_string(c.g.kernel_h) + " s" +
                            std::to_string(c.g.stride) + (c.g.padding == Padding::Same ? " same" : " valid");
    out.push_back(check_gradient(tag + " input", x, grads.input, loss, tol));
    out.push_back(check_gradient(tag + " kernels", k, grads.kernels, loss, tol));
    out.push_back(check_gradient(tag + " bias", b, grads.bias, loss, tol));
  }

  for (std::size_t stride : {1, 2}) {
    const Shape in{2, 6, 7, 3};
    const ConvGeometry g{3, 3, stride, Padding::Same};
    Tensor64 x = random_tensor<double>(in, rng);
    Tensor64 k = random_tensor<double>({3, 3, 3}, rng);
    Tensor64 b = random_tensor<double>({3}, rng);
    const Tensor64 w = random_tensor<double>(depthwise_output_shape(in, g), rng);
    const auto grads = depthwise_conv2d_backward(x, k, g, w);
    auto loss = [&] { return weighted_sum(depthwise_conv2d(x, k, b, g), w); };
    const std::string tag = "depthwise s" + std::to_string(stride);
    out.push_back(check_gradient(tag + " input", x, grads.input, loss, tol));
    out.push_back(check_gradient(tag + " kernels", k, grads.kernels, loss, tol));
    out.push_back(check_gradient(tag + " bias", b, grads.bias, loss, tol));
  }

  {
    Tensor64 x = spaced_tensor({2, 5, 6, 3}, rng);
    const Tensor64 w = random_tensor<double>(maxpool2d_output_shape(x.shape()), rng);
    const auto g = maxpool2d_backward(x, w);
    out.push_back(check_gradient("maxpool2d", x, g, [&] { return weighted_sum(maxpool2d(x), w); }, tol));
  }
  {
    Tensor64 x = random_tensor<double>({2, 3, 4, 5}, rng);
    const Tensor64 w = random_tensor<double>({2, 5}, rng);
    const auto g = global_avg_pool_backward(x.shape(), w);
    out.push_back(check_gradient("global_avg_pool", x, g, [&] { return weighted_sum(global_avg_pool(x), w); }, tol));
  }
  {
    Tensor64 x = random_tensor<double>({3, 6}, rng);
    Tensor64 wt = random_tensor<double>({6, 4}, rng);
    Tensor64 b = random_tensor<double>({4}, rng);
    const Tensor64 w = random_tensor<double>({3, 4}, rng);
    const auto g = dense_backward(x, wt, w);
    auto loss = [&] { return weighted_sum(dense(x, wt, b), w); };
    out.push_back(check_gradient("dense input", x, g.input, loss, tol));
    out.push_back(check_gradient("dense weights", wt, g.weights, loss, tol));
    out.push_back(check_gradient("dense bias", b, g.bias, loss, tol));
  }
  {
    Tensor64 x = off_kink_tensor({4, 7}, rng);
    const Tensor64 w = random_tensor<double>({4, 7}, rng);
    const auto g = relu_backward(x, w);
    out.push_back(check_gradient("relu", x, g, [&] { return weighted_sum(relu(x), w); }, tol));
  }
  {
    Tensor64 x = random_tensor<double>({3, 5}, rng, -2.0, 2.0);
    const Tensor64 w = random_tensor<double>({3, 5}, rng);
    const auto g = softmax_backward(softmax(x), w);
    out.push_back(check_gradient("softmax", x, g, [&] { return weighted_sum(softmax(x), w); }, tol));
  }
  {
    // Dropout as a network layer: the mask depends only on the RNG state,
    // so re-seeding gives the same mask on every evaluation.
    const LayerSpec spec = LayerSpec::dropout(0.4);
    const ParameterSet64 none;
    Tensor64 x = random_tensor<double>({3, 6}, rng);
    const Tensor64 w = random_tensor<double>({3, 6}, rng);
    auto run = [&] {
      Rng r(77);
      return forward_layer(spec, 0, none, x, Mode::Train, &r);
    };
    ParameterSet64 grads;
    const auto fwd = run();
    const Tensor64 g = backward_layer(spec, 0, none, fwd.cache, w, grads);
    out.push_back(check_gradient("dropout", x, g, [&] { return weighted_sum(run().output, w); }, tol));
  }
  {
    // MBConv layer with a residual on the second repeat.
    const LayerSpec spec = LayerSpec::mbconv(3, 1, 2, true, 2);
    const Shape in{2, 5, 5, 3};
    ParameterSet64 params;
    ArchitectureSpec a;
    a.input = {5, 5, 3};
    a.num_classes = 3;
    a.layers = {spec};
    params = init_params<double>(a, 9);
    for (auto& p : params)
      for (auto& v : p.value.data()) v += rng.uniform(-0.2, 0.2); // non-zero biases
    Tensor64 x = off_kink_tensor(in, rng);
    const Tensor64 w = random_tensor<double>(layer_output_shape(spec, in), rng);
    auto run = [&] { return forward_layer(spec, 0, params, x, Mode::Infer); };
    ParameterSet64 grads = params.zeros_like();
    const auto fwd = run();
    const Tensor64 gx = backward_layer(spec, 0, params, fwd.cache, w, grads);
    auto loss = [&] { return weighted_sum(run().output, w); };
    out.push_back(check_gradient("mbconv input", x, gx, loss, tol));
    for (auto& p : params) {
      out.push_back(check_gradient("mbconv " + p.name, p.value, grads.at(p.name), loss, tol));
    }
  }
  {
    // Fused softmax + cross-entropy against the logits.
    Tensor64 z = random_tensor<double>({4, 3}, rng, -2.0, 2.0);
    Tensor64 t({4, 3});
    for (std::size_t i = 0; i < 4; ++i) t[i * 3 + rng.below(3)] = 1.0;
    const auto res = cross_entropy(softmax(z), t);
    out.push_back(check_gradient("softmax+cross_entropy", z, res.logits_grad,
                                 [&] { return cross_entropy(softmax(z), t).loss; }, std::min(tol, 1e-5)));
  }
  return out;
}

ArchitectureSpec micro_network() {
  ArchitectureSpec a;
  a.name = "micro";
  a.input = {8, 8, 3};
  a.num_classes = 3;
  a.layers = {
      LayerSpec::conv(4),
      LayerSpec::depthwise_sep_conv(6),
      LayerSpec::mbconv(6, 1, 2, true, 2),
      LayerSpec::mbconv(8, 2, 2, true, 2),
      LayerSpec::max_pool(),
      LayerSpec::global_avg_pool(),
      LayerSpec::dense(5),
      LayerSpec::dropout(0.25),
      LayerSpec::dense(3, Activation::None),
      LayerSpec::softmax(),
  };
  return a;
}

std::vector<GradCheck> network_gradient_checks(double tol) {
  const ArchitectureSpec arch = micro_network();
  ParameterSet64 params = init_params<double>(arch, 31);
  Rng rng(99);
  for (auto& p : params)
    if (p.name.ends_with("bias"))
      for (auto& v : p.value.data()) v = rng.uniform(-0.1, 0.1);
  Tensor64 x = random_tensor<double>(arch.input_shape(2), rng);
  Tensor64 t({2, 3});
  t[0 * 3 + 1] = 1.0;
  t[1 * 3 + 2] = 1.0;

  auto run = [&] {
    Rng r(5);
    return forward(arch, params, x, Mode::Train, &r);
  };
  auto loss = [&] { return cross_entropy(run().output, t).loss; };
  const auto pass = run();
  const auto ce = cross_entropy(pass.output, t);
  const auto back = backward(arch, params, pass, ce.logits_grad, arch.layers.size() - 1);

  std::vector<GradCheck> out;
  out.push_back(check_gradient("network input", x, back.input_grad, loss, tol));
  for (auto& p : params) {
    out.push_back(check_gradient("network " + p.name, p.value, back.grads.at(p.name), loss, tol));
  }
  return out;
}

OracleMetrics brute_force_metrics(const std::vector<std::vector<std::uint64_t>>& counts) {
  const std::size_t c = counts.size();
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::uint64_t k = 0; k < counts[i][j]; ++k) samples.emplace_back(i, j);

  OracleMetrics m;
  std::size_t correct = 0;
  for (const auto& [t, p] : samples) correct += t == p;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& [t, p] : samples) {
      if (t == k && p == k) ++tp;
      else if (t != k && p == k) ++fp;
      else if (t == k && p != k) ++fn;
    }
    const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    m.precision.push_back(prec);
    m.recall.push_back(rec);
    m.f1.push_back(f1);
  }
  const double n = static_cast<double>(c);
  m.macro_precision = std::accumulate(m.precision.begin(), m.precision.end(), 0.0) / n;
  m.macro_recall = std::accumulate(m.recall.begin(), m.recall.end(), 0.0) / n;
  m.macro_f1 = std::accumulate(m.f1.begin(), m.f1.end(), 0.0) / n;
  return m;
}

std::vector<std::vector<std::uint64_t>> random_confusion(Rng& rng, std::size_t max_classes,
                                                         std::uint64_t max_count) {
  for (;;) {
    const std::size_t c = 2 + rng.below(max_classes - 1);
    std::vector<std::vector<std::uint64_t>> m(c, std::vector<std::uint64_t>(c));
    const bool sparse = rng.bernoulli(0.3);
    std::uint64_t total = 0;
    for (auto& row : m)
      for (auto& v : row) {
        v = sparse && rng.bernoulli(0.5) ? 0 : rng.below(max_count + 1);
        total += v;
      }
    if (total > 0) return m;
  }
}

std::vector<SplitCase> split_cases() {
  return {
      {"brain", {826, 822, 395, 444}, 1670, 419, 398},
      {"breast", {357, 212}, 484, 43, 42},
      {"chest", {1250, 1000, 961}, 2729, 241, 241},
      {"skin", {6705, 1113, 1099, 514, 327, 142, 115}, 8013, 1001, 1001},
  };
}

DatasetManifest synthetic_manifest(const std::vector<std::size_t>& class_sizes) {
  std::vector<ManifestRecord> records;
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    for (std::size_t i = 0; i < class_sizes[c]; ++i) {
      records.push_back({"c" + std::to_string(c) + "/img" + std::to_string(i) + ".ppm",
                         "class_" + std::to_string(c)});
    }
  }
  // Interleave so manifest order is not grouped by class.
  Rng rng(123);
  rng.shuffle(std::span<ManifestRecord>(records));
  return make_manifest(std::move(records));
}

double max_class_deviation(const DatasetManifest& full, const SplitResult& split) {
  const DatasetManifest* parts[] = {&split.train, &split.val, &split.test};
  const double n = static_cast<double>(full.size());
  double worst = 0.0;
  for (const auto& cls : full.classes) {
    const double class_size = static_cast<double>(
        std::count_if(full.records.begin(), full.records.end(), [&](const auto& r) { return r.label == cls; }));
    for (const DatasetManifest* part : parts) {
      const double got = static_cast<double>(std::count_if(
          part->records.begin(), part->records.end(), [&](const auto& r) { return r.label == cls; }));
      const double expected = class_size * static_cast<double>(part->size()) / n;
      worst = std::max(worst, std::abs(got - expected));
    }
  }
  return worst;
}

} // namespace effnet::testkit

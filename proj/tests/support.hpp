#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "effnet/architecture.hpp"
#include "effnet/dataset.hpp"
#include "effnet/ops.hpp"
#include "effnet/random.hpp"
#include "effnet/tensor.hpp"

namespace effnet::testkit {

template <typename T>
BasicTensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Fresh empty directory under the system temp dir.
std::string make_temp_dir(const std::string& tag);

// ---- convolution oracle ---------------------------------------------------

struct ConvCase {
  std::string label;
  Shape input; // NHWC
  std::size_t out_channels;
  ConvGeometry geom;
};

// Textbook cross-correlation in double precision, written independently of
// the library's padding helpers.
Tensor64 naive_conv2d(const Tensor64& input, const Tensor64& kernels, const Tensor64& bias,
                      const ConvGeometry& geom);

std::vector<ConvCase> random_conv_cases(std::size_t count, std::uint64_t seed);

// Every full convolution a preset runs (stem convs, pointwise halves of
// separable convs, MBConv expand/project) at batch 1.
std::vector<ConvCase> preset_conv_cases();

struct ConvComparison {
  std::size_t cases = 0;
  double max_rel_im2col_vs_direct = 0.0;
  double max_rel_direct_vs_naive = 0.0;
  std::string worst_case;
};

// Relative difference |a - b| / max(|a|, |b|), 0 when both are 0.
double rel_diff(double a, double b);

ConvComparison compare_conv_paths(const std::vector<ConvCase>& cases, std::uint64_t seed,
                                  bool with_naive);

// ---- finite differences ----------------------------------------------------

struct GradCheck {
  std::string name;
  std::size_t checked = 0;
  double max_rel = 0.0;
  bool passed = false;
};

// Central differences with step h on every element of `x` (or a strided
// subset when there are more than `max_points`). Entries where both the
// numeric and analytic values are below `floor` in magnitude are compared
// absolutely against `floor * tol`.
GradCheck check_gradient(const std::string& name, Tensor64& x, const Tensor64& analytic,
                         const std::function<double()>& loss, double tol, double h = 1e-5,
                         std::size_t max_points = 4000, double floor = 1e-7);

// Individual op checks (conv, depthwise, pooling, dense, activations,
// dropout, softmax, softmax + cross-entropy).
std::vector<GradCheck> op_gradient_checks(double tol);

// End-to-end check on an 8x8 two-MBConv-block network, all parameters and
// the input.
std::vector<GradCheck> network_gradient_checks(double tol);

ArchitectureSpec micro_network();

// ---- metrics oracle --------------------------------------------------------

struct OracleMetrics {
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1;
  double macro_precision = 0.0, macro_recall = 0.0, macro_f1 = 0.0;
};

// Expands the matrix into individual (true, predicted) samples and counts
// outcomes sample by sample.
OracleMetrics brute_force_metrics(const std::vector<std::vector<std::uint64_t>>& counts);

std::vector<std::vector<std::uint64_t>> random_confusion(Rng& rng, std::size_t max_classes,
                                                         std::uint64_t max_count);

// ---- split fixtures --------------------------------------------------------

struct SplitCase {
  std::string name;
  std::vector<std::size_t> class_sizes;
  std::size_t train, val, test;
};

// Fixed split-count cases; class mixes are chosen for the fixtures.
std::vector<SplitCase> split_cases();

DatasetManifest synthetic_manifest(const std::vector<std::size_t>& class_sizes);

// Largest deviation, in records, between a class's count in a split and the
// class size times that split's share of the records.
double max_class_deviation(const DatasetManifest& full, const SplitResult& split);

} // namespace effnet::testkit

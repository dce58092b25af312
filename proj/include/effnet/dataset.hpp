#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "effnet/image.hpp"
#include "effnet/tensor.hpp"

namespace effnet {

struct ManifestRecord {
  std::string path;
  std::string label;
  bool operator==(const ManifestRecord&) const = default;
};

// Labeled image list. Record paths are relative to `base_dir` unless
// absolute. `classes` is the sorted set of labels.
struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::vector<std::string> classes;
  std::string base_dir = ".";

  std::size_t size() const noexcept { return records.size(); }
  // Index of `label` in `classes`; throws ArgumentError if absent.
  std::size_t class_index(const std::string& label) const;
  std::string resolve(const ManifestRecord& record) const;
  // Every label in classes, classes unique and non-empty, paths unique.
  void validate() const;
};

// Builds a manifest from records, deriving the sorted class vocabulary.
DatasetManifest make_manifest(std::vector<ManifestRecord> records, std::string base_dir = ".");

// CSV with header "path,label" (RFC 4180 quoting). Relative paths resolve
// against the CSV's directory.
DatasetManifest read_manifest(const std::string& csv_path);

// Paths are rewritten relative to the CSV's directory.
void write_manifest(const std::string& csv_path, const DatasetManifest& manifest);

struct SplitSpec {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
  std::uint64_t seed = 0;

  // Fractions count/total, for reproducing exact split sizes.
  static SplitSpec from_counts(std::size_t train, std::size_t val, std::size_t test,
                               std::uint64_t seed);
};

void validate_split(const SplitSpec& spec);

struct SplitResult {
  DatasetManifest train;
  DatasetManifest val;
  DatasetManifest test;
};

// Split sizes: largest-remainder rounding of N * fraction (ties go to the
// earlier split). Per class, records are shuffled with Rng(seed) and the
// class-by-split count table is rounded so that every cell is the floor or
// ceiling of class_size * split_size / N while rows sum to class sizes and
// columns to the split sizes. Each output keeps the manifest order of its records
// within a class, classes in vocabulary order.
SplitResult stratified_split(const DatasetManifest& manifest, const SplitSpec& spec);

// Global split sizes alone.
std::array<std::size_t, 3> split_sizes(std::size_t total, const SplitSpec& spec);

// Writes train.csv, val.csv, test.csv and split.json (seed, fractions, counts).
void write_split(const std::string& out_dir, const SplitResult& split, const SplitSpec& spec);

template <typename T = float> BasicTensor<T> one_hot(std::size_t index, std::size_t num_classes);

// Writes `per_class` PPM images per class under out_dir/<label>/ plus
// out_dir/manifest.csv. Each class has its own stripe orientation and
// frequency, blob position and colour tint; phase, jitter and pixel noise are
// random. Output bytes depend only on the arguments.
DatasetManifest generate_synthetic_dataset(std::size_t num_classes, std::size_t per_class,
                                           std::size_t image_size, std::uint64_t seed,
                                           const std::string& out_dir);

struct LabeledImages {
  std::vector<Tensor> images; // preprocessed [h, w, c]
  std::vector<std::size_t> labels;
  std::size_t size() const noexcept { return images.size(); }
};

// Decodes and preprocesses every record in manifest order. Labels index into
// `classes`.
LabeledImages load_images(const DatasetManifest& manifest, const std::vector<std::string>& classes,
                          const PreprocessConfig& cfg);

// Stacks images[indices[i]] into an [N, h, w, c] batch.
Tensor stack_batch(const std::vector<Tensor>& images, std::span<const std::size_t> indices);

} // namespace effnet

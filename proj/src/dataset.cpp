#include "effnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "csv.hpp"
#include "effnet/random.hpp"

namespace fs = std::filesystem;
using effnet::detail::csv_escape;
using effnet::detail::read_csv_row;

namespace effnet {

std::size_t DatasetManifest::class_index(const std::string& label) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), label);
  if (it == classes.end() || *it != label) {
    throw ArgumentError("label '" + label + "' is not in the class vocabulary");
  }
  return static_cast<std::size_t>(it - classes.begin());
}

std::string DatasetManifest::resolve(const ManifestRecord& record) const {
  const fs::path p(record.path);
  if (p.is_absolute()) return p.string();
  return (fs::path(base_dir) / p).lexically_normal().string();
}

void DatasetManifest::validate() const {
  if (classes.empty()) throw ArgumentError("manifest: class vocabulary is empty");
  if (!std::is_sorted(classes.begin(), classes.end()) ||
      std::adjacent_find(classes.begin(), classes.end()) != classes.end()) {
    throw ArgumentError("manifest: classes must be sorted and unique");
  }
  std::set<std::string> seen;
  for (const auto& r : records) {
    (void)class_index(r.label);
    if (!seen.insert(r.path).second) throw ArgumentError("manifest: duplicate path '" + r.path + "'");
  }
}

DatasetManifest make_manifest(std::vector<ManifestRecord> records, std::string base_dir) {
  DatasetManifest m;
  std::set<std::string> labels;
  for (const auto& r : records) labels.insert(r.label);
  m.classes.assign(labels.begin(), labels.end());
  m.records = std::move(records);
  m.base_dir = std::move(base_dir);
  m.validate();
  return m;
}

namespace {

std::string parent_dir(const std::string& path) {
  fs::path parent = fs::path(path).parent_path();
  return parent.empty() ? "." : parent.string();
}

} // namespace

DatasetManifest read_manifest(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw FormatError(csv_path, "cannot open manifest");
  std::vector<std::string> fields;
  if (!read_csv_row(in, fields, csv_path)) throw FormatError(csv_path, "empty manifest");
  if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) fields[0].erase(0, 3);
  if (fields != std::vector<std::string>{"path", "label"}) {
    throw FormatError(csv_path, "header must be 'path,label'");
  }
  std::vector<ManifestRecord> records;
  std::size_t line = 1;
  while (read_csv_row(in, fields, csv_path)) {
    ++line;
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw FormatError(csv_path, "line " + std::to_string(line) + ": expected 'path,label'");
    }
    records.push_back({fields[0], fields[1]});
  }
  try {
    return make_manifest(std::move(records), parent_dir(csv_path));
  } catch (const ArgumentError& e) {
    throw FormatError(csv_path, e.what());
  }
}

void write_manifest(const std::string& csv_path, const DatasetManifest& manifest) {
  const fs::path out_dir = fs::absolute(parent_dir(csv_path));
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw FormatError(csv_path, "cannot write manifest");
  out << "path,label\n";
  for (const auto& r : manifest.records) {
    const fs::path abs = fs::absolute(manifest.resolve(r)).lexically_normal();
    fs::path rel = abs.lexically_relative(out_dir.lexically_normal());
    if (rel.empty()) rel = abs;
    out << csv_escape(rel.generic_string()) << ',' << csv_escape(r.label) << '\n';
  }
  if (!out) throw FormatError(csv_path, "write failed");
}

SplitSpec SplitSpec::from_counts(std::size_t train, std::size_t val, std::size_t test,
                                 std::uint64_t seed) {
  const double total = static_cast<double>(train + val + test);
  if (total == 0) throw ArgumentError("split counts must not all be zero");
  return {static_cast<double>(train) / total, static_cast<double>(val) / total,
          static_cast<double>(test) / total, seed};
}

void validate_split(const SplitSpec& s) {
  for (double f : {s.train, s.val, s.test}) {
    if (!(f >= 0.0)) throw ArgumentError("split fractions must be nonnegative");
  }
  if (std::abs(s.train + s.val + s.test - 1.0) > 1e-9) {
    throw ArgumentError("split fractions must sum to 1");
  }
}

namespace {

// Absorbs representation error in products like 3211 * (2729 / 3211.).
constexpr double kSlack = 1e-9;

struct Apportioned {
  std::size_t whole;
  double remainder;
};

Apportioned apportion(double quota) {
  const double fl = std::floor(quota + kSlack);
  return {static_cast<std::size_t>(fl), std::max(0.0, quota - fl)};
}

// Bipartite class -> split assignment of the leftover units, one unit per
// cell at most. Plain augmenting paths; candidate cells are tried in
// descending remainder order so the largest remainders win.
class ExtraUnits {
public:
  ExtraUnits(std::vector<std::size_t> row_need, std::array<std::size_t, 3> col_need,
             std::vector<std::array<double, 3>> remainders, bool any_cell)
      : row_need_(std::move(row_need)), col_need_(col_need), rem_(std::move(remainders)),
        any_cell_(any_cell), assigned_(rem_.size(), {false, false, false}) {
    order_.resize(rem_.size());
    for (std::size_t c = 0; c < rem_.size(); ++c) {
      order_[c] = {0, 1, 2};
      std::stable_sort(order_[c].begin(), order_[c].end(),
                       [&](std::size_t a, std::size_t b) { return rem_[c][a] > rem_[c][b]; });
    }
  }

  // Returns false if the leftovers cannot be placed.
  bool solve() {
    for (std::size_t c = 0; c < rem_.size(); ++c) {
      while (row_need_[c] > 0) {
        std::vector<bool> visited(rem_.size(), false);
        if (!augment(c, visited)) return false;
        --row_need_[c];
      }
    }
    return true;
  }

  const std::vector<std::array<bool, 3>>& assigned() const { return assigned_; }

private:
  bool usable(std::size_t c, std::size_t s) const { return any_cell_ || rem_[c][s] > kSlack; }

  // Finds room for one more unit in row c, possibly moving units of other
  // rows to different columns.
  bool augment(std::size_t c, std::vector<bool>& visited) {
    visited[c] = true;
    for (std::size_t s : order_[c]) {
      if (assigned_[c][s] || !usable(c, s)) continue;
      if (col_need_[s] > 0) {
        assigned_[c][s] = true;
        --col_need_[s];
        return true;
      }
    }
    for (std::size_t s : order_[c]) {
      if (assigned_[c][s] || !usable(c, s)) continue;
      // Column s is full: move some other row's unit elsewhere and take
      // its slot. The column's free capacity is unchanged either way.
      for (std::size_t other = 0; other < rem_.size(); ++other) {
        if (visited[other] || !assigned_[other][s]) continue;
        assigned_[other][s] = false;
        if (augment(other, visited)) {
          assigned_[c][s] = true;
          return true;
        }
        assigned_[other][s] = true;
      }
    }
    return false;
  }

  std::vector<std::size_t> row_need_;
  std::array<std::size_t, 3> col_need_;
  std::vector<std::array<double, 3>> rem_;
  bool any_cell_;
  std::vector<std::array<bool, 3>> assigned_;
  std::vector<std::array<std::size_t, 3>> order_;
};

} // namespace

std::array<std::size_t, 3> split_sizes(std::size_t total, const SplitSpec& spec) {
  validate_split(spec);
  const std::array<double, 3> f{spec.train, spec.val, spec.test};
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t used = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const auto a = apportion(static_cast<double>(total) * f[s]);
    out[s] = a.whole;
    rem[s] = a.remainder;
    used += a.whole;
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; used < total; ++i, ++used) ++out[order[i % 3]];
  return out;
}

SplitResult stratified_split(const DatasetManifest& manifest, const SplitSpec& spec) {
  validate_split(spec);
  manifest.validate();
  const std::size_t num_classes = manifest.classes.size();
  std::vector<std::vector<std::size_t>> members(num_classes);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    members[manifest.class_index(manifest.records[i].label)].push_back(i);
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (members[c].empty()) {
      throw ArgumentError("stratified_split: class '" + manifest.classes[c] + "' has no records");
    }
  }

  // Quotas use the realized split shares, so every column of the table
  // already sums to an integer and a floor/ceiling rounding always exists.
  const auto targets = split_sizes(manifest.size(), spec);
  std::array<double, 3> f{};
  for (std::size_t s = 0; s < 3; ++s) {
    f[s] = static_cast<double>(targets[s]) / static_cast<double>(manifest.size());
  }
  std::vector<std::array<std::size_t, 3>> cells(num_classes);
  std::vector<std::array<double, 3>> rem(num_classes);
  std::vector<std::size_t> row_need(num_classes);
  std::array<std::size_t, 3> col_floor{};
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t used = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      const auto a = apportion(static_cast<double>(members[c].size()) * f[s]);
      cells[c][s] = a.whole;
      rem[c][s] = a.remainder;
      used += a.whole;
      col_floor[s] += a.whole;
    }
    if (used > members[c].size()) throw Error("stratified_split: rounding overflow");
    row_need[c] = members[c].size() - used;
  }
  std::array<std::size_t, 3> col_need{};
  for (std::size_t s = 0; s < 3; ++s) {
    if (col_floor[s] > targets[s]) throw Error("stratified_split: rounding overflow");
    col_need[s] = targets[s] - col_floor[s];
  }

  // Floor/ceiling cells first; fall back to allowing any cell, which still
  // keeps every class within one record of its quota.
  ExtraUnits extra(row_need, col_need, rem, false);
  bool ok = extra.solve();
  if (!ok) {
    extra = ExtraUnits(row_need, col_need, rem, true);
    ok = extra.solve();
  }
  if (!ok) throw Error("stratified_split: no consistent rounding of the class table");
  for (std::size_t c = 0; c < num_classes; ++c)
    for (std::size_t s = 0; s < 3; ++s)
      if (extra.assigned()[c][s]) ++cells[c][s];

  Rng rng(spec.seed);
  std::array<std::vector<ManifestRecord>, 3> parts;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t> idx = members[c];
    rng.shuffle(std::span<std::size_t>(idx));
    std::size_t pos = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<std::size_t> chunk(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                                     idx.begin() + static_cast<std::ptrdiff_t>(pos + cells[c][s]));
      std::sort(chunk.begin(), chunk.end());
      for (std::size_t i : chunk) parts[s].push_back(manifest.records[i]);
      pos += cells[c][s];
    }
  }

  auto build = [&](std::vector<ManifestRecord> recs) {
    DatasetManifest m;
    m.records = std::move(recs);
    m.classes = manifest.classes;
    m.base_dir = manifest.base_dir;
    return m;
  };
  return {build(std::move(parts[0])), build(std::move(parts[1])), build(std::move(parts[2]))};
}

void write_split(const std::string& out_dir, const SplitResult& split, const SplitSpec& spec) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_manifest((dir / "train.csv").string(), split.train);
  write_manifest((dir / "val.csv").string(), split.val);
  write_manifest((dir / "test.csv").string(), split.test);
  nlohmann::ordered_json j;
  j["seed"] = spec.seed;
  j["fractions"] = {{"train", spec.train}, {"val", spec.val}, {"test", spec.test}};
  j["counts"] = {{"train", split.train.size()},
                 {"val", split.val.size()},
                 {"test", split.test.size()}};
  j["classes"] = split.train.classes;
  std::ofstream out(dir / "split.json");
  if (!out) throw FormatError((dir / "split.json").string(), "cannot write split sidecar");
  out << j.dump(2) << "\n";
}

template <typename T> BasicTensor<T> one_hot(std::size_t index, std::size_t num_classes) {
  if (index >= num_classes) {
    throw ArgumentError("one_hot: index " + std::to_string(index) + " out of range for " +
                        std::to_string(num_classes) + " classes");
  }
  BasicTensor<T> t({num_classes});
  t[index] = T(1);
  return t;
}

template BasicTensor<float> one_hot<float>(std::size_t, std::size_t);
template BasicTensor<double> one_hot<double>(std::size_t, std::size_t);

DatasetManifest generate_synthetic_dataset(std::size_t num_classes, std::size_t per_class,
                                           std::size_t image_size, std::uint64_t seed,
                                           const std::string& out_dir) {
  if (num_classes < 1 || per_class < 1 || image_size < 2) {
    throw ArgumentError("synthetic dataset needs num_classes >= 1, per_class >= 1, size >= 2");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw FormatError(out_dir, "cannot create directory: " + ec.message());

  Rng rng(seed);
  std::vector<ManifestRecord> records;
  const double n = static_cast<double>(image_size);
  const double pi = std::numbers::pi;
  for (std::size_t k = 0; k < num_classes; ++k) {
    const std::string label = "class_" + std::to_string(k);
    fs::create_directories(fs::path(out_dir) / label, ec);
    if (ec) throw FormatError(out_dir, "cannot create directory: " + ec.message());
    const double kk = static_cast<double>(k);
    const double orient = kk * pi / static_cast<double>(num_classes);
    const double freq = 2.0 + kk;
    const double blob_angle = 2.0 * pi * kk / static_cast<double>(num_classes);
    const std::array<double, 3> tint{40.0 * std::cos(blob_angle), 40.0 * std::sin(blob_angle),
                                     kk * 15.0 - 20.0};
    for (std::size_t i = 0; i < per_class; ++i) {
      const double phase = rng.uniform(0.0, 2.0 * pi);
      const double by = n / 2 + n / 4 * std::sin(blob_angle) + rng.uniform(-n / 16, n / 16);
      const double bx = n / 2 + n / 4 * std::cos(blob_angle) + rng.uniform(-n / 16, n / 16);
      const double radius = n / 8;
      Tensor img({image_size, image_size, 3});
      for (std::size_t y = 0; y < image_size; ++y) {
        for (std::size_t x = 0; x < image_size; ++x) {
          const double u = (std::cos(orient) * static_cast<double>(x) +
                            std::sin(orient) * static_cast<double>(y)) / n;
          const double stripes = 50.0 * std::sin(2.0 * pi * freq * u + phase);
          const double dy = static_cast<double>(y) - by, dx = static_cast<double>(x) - bx;
          const double blob = 70.0 * std::exp(-(dx * dx + dy * dy) / (2 * radius * radius));
          for (std::size_t c = 0; c < 3; ++c) {
            const double v = 128.0 + stripes + blob + tint[c] + 12.0 * rng.normal();
            img[(y * image_size + x) * 3 + c] = static_cast<float>(v);
          }
        }
      }
      char name[64];
      std::snprintf(name, sizeof name, "%s_%04zu.ppm", label.c_str(), i);
      const std::string rel = label + "/" + name;
      write_ppm((fs::path(out_dir) / rel).string(), img);
      records.push_back({rel, label});
    }
  }
  DatasetManifest m = make_manifest(std::move(records), out_dir);
  write_manifest((fs::path(out_dir) / "manifest.csv").string(), m);
  return m;
}

LabeledImages load_images(const DatasetManifest& manifest, const std::vector<std::string>& classes,
                          const PreprocessConfig& cfg) {
  LabeledImages out;
  out.images.reserve(manifest.size());
  out.labels.reserve(manifest.size());
  for (const auto& r : manifest.records) {
    auto it = std::find(classes.begin(), classes.end(), r.label);
    if (it == classes.end()) {
      throw ArgumentError("record '" + r.path + "' has label '" + r.label +
                          "' unknown to the model");
    }
    out.images.push_back(preprocess(decode_image(manifest.resolve(r)), cfg));
    out.labels.push_back(static_cast<std::size_t>(it - classes.begin()));
  }
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& images, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("stack_batch: empty batch");
  const Shape& s = images.at(indices[0]).shape();
  Tensor batch({indices.size(), s[0], s[1], s[2]});
  const std::size_t per = shape_size(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = images.at(indices[i]);
    if (img.shape() != s) throw ShapeError("stack_batch", "images differ in shape");
    std::copy(img.data().begin(), img.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return batch;
}

} // namespace effnet

#include "run_config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "effnet/error.hpp"
#include "effnet/model_zoo.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace effnet::cli {

namespace {

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
public:
  Section(const json& j, std::string path, const std::string& source)
      : j_(j), path_(std::move(path)), source_(source) {
    if (!j.is_object()) fail("must be an object");
  }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(source_, path_ + ": " + what); }

  const json* find(const std::string& key) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return nullptr;
    return &*it;
  }

  template <typename V> void get(const std::string& key, V& out) {
    if (const json* v = find(key)) {
      try {
        out = read<V>(*v);
      } catch (const json::exception&) {
        throw FormatError(source_, path_ + "." + key + ": wrong type");
      }
    }
  }

  template <typename V> void get(const std::string& key, std::optional<V>& out) {
    known_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_null()) {
      out.reset();
      return;
    }
    V value{};
    get(key, value);
    out = value;
  }

  Section sub(const std::string& key) {
    static const json empty = json::object();
    const json* v = find(key);
    return Section(v ? *v : empty, path_ + "." + key, source_);
  }

  bool has(const std::string& key) {
    known_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!known_.count(it.key())) fail("unknown key '" + it.key() + "'");
    }
  }

  const std::string& source() const { return source_; }

private:
  template <typename V> static V read(const json& v) {
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) throw json::type_error::create(302, "expected boolean", nullptr);
    } else if constexpr (std::is_integral_v<V>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw json::type_error::create(302, "expected nonnegative integer", nullptr);
      }
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) throw json::type_error::create(302, "expected number", nullptr);
    } else {
      if (!v.is_string()) throw json::type_error::create(302, "expected string", nullptr);
    }
    return v.get<V>();
  }

  const json& j_;
  std::string path_;
  std::string source_;
  std::set<std::string> known_;
};

std::string resolve_path(const std::string& p, const std::string& base) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

} // namespace

RunConfig parse_run_config(const std::string& json_text, const std::string& source,
                           const std::string& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(source, std::string("invalid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section top(root, "config", source);

  {
    Section d = top.sub("dataset");
    d.get("manifest", cfg.dataset.manifest);
    d.get("val_manifest", cfg.dataset.val_manifest);
    std::string norm = to_string(cfg.dataset.normalization);
    d.get("normalization", norm);
    try {
      cfg.dataset.normalization = normalize_mode_from_string(norm);
    } catch (const ArgumentError& e) {
      d.fail(e.what());
    }
    d.get("gaussian_sigma", cfg.dataset.gaussian_sigma);
    d.get("median_window", cfg.dataset.median_window);
    Section a = d.sub("augmentation");
    auto& aug = cfg.dataset.augmentation;
    a.get("enabled", aug.enabled);
    a.get("rotation_max_deg", aug.rotation_max_deg);
    a.get("scale_lo", aug.scale_lo);
    a.get("scale_hi", aug.scale_hi);
    a.get("hflip_prob", aug.hflip_prob);
    a.get("vflip_prob", aug.vflip_prob);
    a.finish();
    d.finish();
  }
  {
    Section s = top.sub("split");
    s.get("train", cfg.split.train);
    s.get("val", cfg.split.val);
    s.get("test", cfg.split.test);
    s.get("seed", cfg.split.seed);
    s.finish();
  }
  {
    Section m = top.sub("model");
    m.get("preset", cfg.model.preset);
    m.get("architecture_file", cfg.model.architecture_file);
    if (cfg.model.architecture_file && !m.has("preset")) cfg.model.preset.reset();
    m.get("num_classes", cfg.model.num_classes);
    m.get("input_size", cfg.model.input_size);
    if (m.has("scaling")) {
      Section sc = m.sub("scaling");
      ScalingCoefficients coeffs;
      sc.get("alpha", coeffs.alpha);
      sc.get("beta", coeffs.beta);
      sc.get("gamma", coeffs.gamma);
      sc.get("phi", coeffs.phi);
      sc.finish();
      cfg.model.scaling = coeffs;
    }
    m.finish();
  }
  {
    Section t = top.sub("train");
    auto& tc = cfg.train;
    t.get("learning_rate", tc.learning_rate);
    t.get("batch_size", tc.batch_size);
    t.get("max_epochs", tc.max_epochs);
    t.get("early_stop_patience", tc.early_stop_patience);
    t.get("seed", tc.seed);
    t.get("adam_beta1", tc.adam_beta1);
    t.get("adam_beta2", tc.adam_beta2);
    t.get("adam_epsilon", tc.adam_epsilon);
    t.get("track_eval_loss", tc.track_eval_loss);
    t.finish();
  }
  {
    Section o = top.sub("output");
    o.get("directory", cfg.output_directory);
    o.finish();
  }
  top.finish();

  cfg.dataset.manifest = resolve_path(cfg.dataset.manifest, base_dir);
  if (cfg.dataset.val_manifest) cfg.dataset.val_manifest = resolve_path(*cfg.dataset.val_manifest, base_dir);
  if (cfg.model.architecture_file) {
    cfg.model.architecture_file = resolve_path(*cfg.model.architecture_file, base_dir);
  }
  cfg.output_directory = resolve_path(cfg.output_directory, base_dir);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path, "cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  fs::path parent = fs::path(path).parent_path();
  return parse_run_config(ss.str(), path, parent.empty() ? "." : parent.string());
}

std::string run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  const auto& d = cfg.dataset;
  const auto& a = d.augmentation;
  j["dataset"] = {{"manifest", d.manifest},
                  {"val_manifest", d.val_manifest ? ordered_json(*d.val_manifest) : ordered_json()},
                  {"normalization", to_string(d.normalization)},
                  {"gaussian_sigma", d.gaussian_sigma},
                  {"median_window", d.median_window},
                  {"augmentation",
                   {{"enabled", a.enabled},
                    {"rotation_max_deg", a.rotation_max_deg},
                    {"scale_lo", a.scale_lo},
                    {"scale_hi", a.scale_hi},
                    {"hflip_prob", a.hflip_prob},
                    {"vflip_prob", a.vflip_prob}}}};
  j["split"] = {{"train", cfg.split.train},
                {"val", cfg.split.val},
                {"test", cfg.split.test},
                {"seed", cfg.split.seed}};
  const auto& m = cfg.model;
  ordered_json model;
  model["preset"] = m.preset ? ordered_json(*m.preset) : ordered_json();
  model["architecture_file"] = m.architecture_file ? ordered_json(*m.architecture_file) : ordered_json();
  model["num_classes"] = m.num_classes ? ordered_json(*m.num_classes) : ordered_json();
  model["input_size"] = m.input_size ? ordered_json(*m.input_size) : ordered_json();
  if (m.scaling) {
    model["scaling"] = {{"alpha", m.scaling->alpha},
                        {"beta", m.scaling->beta},
                        {"gamma", m.scaling->gamma},
                        {"phi", m.scaling->phi}};
  } else {
    model["scaling"] = nullptr;
  }
  j["model"] = std::move(model);
  const auto& t = cfg.train;
  j["train"] = {{"learning_rate", t.learning_rate},
                {"batch_size", t.batch_size},
                {"max_epochs", t.max_epochs},
                {"early_stop_patience", t.early_stop_patience},
                {"seed", t.seed},
                {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},
                {"adam_epsilon", t.adam_epsilon},
                {"track_eval_loss", t.track_eval_loss}};
  j["output"] = {{"directory", cfg.output_directory}};
  return j.dump(2) + "\n";
}

void validate_run_config(const RunConfig& cfg) {
  if (cfg.dataset.manifest.empty()) throw ArgumentError("config: dataset.manifest is required");
  if (cfg.model.preset.has_value() == cfg.model.architecture_file.has_value()) {
    throw ArgumentError("config: set exactly one of model.preset and model.architecture_file");
  }
  if (cfg.dataset.gaussian_sigma < 0.0) throw ArgumentError("config: gaussian_sigma must be >= 0");
  if (cfg.dataset.median_window != 0 &&
      (cfg.dataset.median_window < 3 || cfg.dataset.median_window % 2 == 0)) {
    throw ArgumentError("config: median_window must be 0 or an odd number >= 3");
  }
  validate_augment(cfg.dataset.augmentation);
  if (!cfg.dataset.val_manifest) validate_split(cfg.split);
  validate_train_config(cfg.train);
  if (cfg.model.scaling) validate_scaling(*cfg.model.scaling);
  if (cfg.output_directory.empty()) throw ArgumentError("config: output.directory is empty");
}

ArchitectureSpec resolve_architecture(const ModelSection& model, std::size_t num_classes) {
  const std::size_t classes = model.num_classes.value_or(num_classes);
  ArchitectureSpec arch;
  if (model.architecture_file) {
    arch = load_architecture(*model.architecture_file);
    if (arch.num_classes != classes) {
      throw ArgumentError("architecture file declares " + std::to_string(arch.num_classes) +
                          " classes but " + std::to_string(classes) + " are required");
    }
  } else {
    arch = build_preset(preset_from_string(model.preset.value_or("chest")), classes).arch;
  }
  if (model.input_size) arch = with_input_size(arch, *model.input_size);
  if (model.scaling) arch = compound_scale(arch, *model.scaling);
  validate_architecture(arch);
  return arch;
}

} // namespace effnet::cli

#include "commands.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "effnet/dataset.hpp"
#include "effnet/error.hpp"
#include "effnet/metrics.hpp"
#include "effnet/model_zoo.hpp"
#include "effnet/ops.hpp"
#include "effnet/training.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;

namespace effnet::cli {

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path.string(), "cannot write file");
  out << text;
  if (!out) throw FormatError(path.string(), "write failed");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string shortest(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string shortest(float v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

PreprocessConfig preprocess_for(const ArchitectureSpec& arch, const DatasetSection& d) {
  if (arch.input.channels != 3) {
    throw ArgumentError("images decode to 3 channels but the model expects " +
                        std::to_string(arch.input.channels));
  }
  PreprocessConfig p;
  p.height = arch.input.height;
  p.width = arch.input.width;
  p.normalization = d.normalization;
  p.gaussian_sigma = d.gaussian_sigma;
  p.median_window = d.median_window;
  return p;
}

} // namespace

int cmd_split(const SplitOptions& opts) {
  SplitSpec spec;
  if (!opts.counts.empty()) {
    if (opts.counts.size() != 3) throw ArgumentError("--counts takes exactly three values");
    spec = SplitSpec::from_counts(opts.counts[0], opts.counts[1], opts.counts[2], opts.seed);
  } else {
    if (opts.fractions.size() != 3) throw ArgumentError("--fractions takes exactly three values");
    spec = {opts.fractions[0], opts.fractions[1], opts.fractions[2], opts.seed};
  }
  const DatasetManifest manifest = read_manifest(opts.manifest);
  if (!opts.counts.empty() &&
      opts.counts[0] + opts.counts[1] + opts.counts[2] != manifest.size()) {
    throw ArgumentError("--counts sum to " +
                        std::to_string(opts.counts[0] + opts.counts[1] + opts.counts[2]) +
                        " but the manifest has " + std::to_string(manifest.size()) + " records");
  }
  const SplitResult split = stratified_split(manifest, spec);
  write_split(opts.out_dir, split, spec);
  std::cout << "train " << split.train.size() << "\nval " << split.val.size() << "\ntest "
            << split.test.size() << "\n";
  return 0;
}

int cmd_train(const TrainOptions& opts) {
  RunConfig cfg = load_run_config(opts.config);
  if (opts.epochs) cfg.train.max_epochs = *opts.epochs;
  if (opts.seed) cfg.train.seed = cfg.split.seed = *opts.seed;
  if (opts.output) cfg.output_directory = *opts.output;
  if (opts.learning_rate) cfg.train.learning_rate = *opts.learning_rate;
  if (opts.batch_size) cfg.train.batch_size = *opts.batch_size;
  validate_run_config(cfg);

  const fs::path out(cfg.output_directory);
  fs::create_directories(out);
  write_text(out / "resolved_config.json", run_config_to_json(cfg));

  DatasetManifest train_m, val_m;
  if (cfg.dataset.val_manifest) {
    train_m = read_manifest(cfg.dataset.manifest);
    val_m = read_manifest(*cfg.dataset.val_manifest);
  } else {
    const SplitResult split = stratified_split(read_manifest(cfg.dataset.manifest), cfg.split);
    write_split((out / "split").string(), split, cfg.split);
    train_m = split.train;
    val_m = split.val;
  }
  std::set<std::string> vocab(train_m.classes.begin(), train_m.classes.end());
  vocab.insert(val_m.classes.begin(), val_m.classes.end());
  const std::vector<std::string> classes(vocab.begin(), vocab.end());

  const ArchitectureSpec arch = resolve_architecture(cfg.model, classes.size());
  if (arch.num_classes != classes.size()) {
    throw ArgumentError("model has " + std::to_string(arch.num_classes) + " outputs but the data has " +
                        std::to_string(classes.size()) + " classes");
  }
  const PreprocessConfig pre = preprocess_for(arch, cfg.dataset);
  const LabeledImages train_set = load_images(train_m, classes, pre);
  const LabeledImages val_set = load_images(val_m, classes, pre);

  Checkpoint ck{arch, classes, pre, {}};
  if (opts.resume) {
    Checkpoint prev = load_checkpoint(*opts.resume);
    if (architecture_to_json(prev.arch) != architecture_to_json(arch) || prev.classes != classes) {
      throw ArgumentError("checkpoint " + *opts.resume + " was trained with a different model or classes");
    }
    ck.state = std::move(prev.state);
  } else {
    ck.state = init_train_state(arch, cfg.train);
  }

  const fs::path ck_path = out / "checkpoint.efnc";
  const fs::path hist_path = out / "history.csv";
  std::size_t ran = 0;
  TrainHooks hooks;
  hooks.on_epoch_end = [&](const TrainState& s) {
    const EpochRecord& r = s.history.back();
    if (!opts.quiet) {
      std::cout << "epoch " << r.epoch << "/" << cfg.train.max_epochs << " train_loss "
                << shortest(r.train_loss) << " val_accuracy " << shortest(r.val_accuracy)
                << (s.best_epoch == r.epoch ? " *" : "") << std::endl;
    }
    ck.state = s;
    save_checkpoint(ck_path.string(), ck);
    write_text(hist_path, history_csv(s.history));
    ++ran;
    return !(opts.stop_after && ran >= *opts.stop_after);
  };
  TrainState state = std::move(ck.state);
  train(arch, train_set, val_set, cfg.train, cfg.dataset.augmentation, state, hooks);
  ck.state = std::move(state);
  save_checkpoint(ck_path.string(), ck);
  write_text(hist_path, history_csv(ck.state.history));
  for (const auto& w : ck.state.warnings) std::cerr << "warning: " << w << "\n";
  if (!opts.quiet) {
    std::cout << "best epoch " << ck.state.best_epoch << " val_accuracy "
              << shortest(ck.state.best_val_accuracy) << (ck.state.stopped ? " (early stop)" : "")
              << "\ncheckpoint " << ck_path.string() << "\n";
  }
  return 0;
}

int cmd_evaluate(const EvaluateOptions& opts) {
  const Checkpoint ck = load_checkpoint(opts.checkpoint);
  const DatasetManifest manifest = read_manifest(opts.manifest);
  if (manifest.size() == 0) throw ArgumentError("manifest " + opts.manifest + " has no records");
  const LabeledImages data = load_images(manifest, ck.classes, ck.preprocess);
  const auto predicted = predict_labels(ck.arch, ck.state.inference_params(), data.images, opts.batch_size);
  ConfusionMatrix cm = confusion(data.labels, predicted, ck.classes.size());
  cm.labels = ck.classes;
  const EvalReport report = metrics(cm, opts.dataset, opts.method);

  const fs::path out(opts.out_dir);
  fs::create_directories(out);
  const std::span<const EvalReport> one(&report, 1);
  const std::string table = render_report(one, ReportLayout::MetricsTable);
  write_text(out / "report.json", report_to_json(report));
  write_text(out / "report.csv", report_csv(one));
  write_text(out / "report.txt", table);

  std::cout << table << "\nclass precision recall f1 support\n";
  for (const auto& c : report.per_class) {
    std::cout << c.label << ' ' << format_metric(c.precision) << (c.precision_undefined ? "(undefined)" : "")
              << ' ' << format_metric(c.recall) << (c.recall_undefined ? "(undefined)" : "") << ' '
              << format_metric(c.f1) << (c.f1_undefined ? "(undefined)" : "") << ' ' << c.support << "\n";
  }
  std::cout << "\nconfusion (rows true, columns predicted)\n";
  for (std::size_t i = 0; i < cm.num_classes; ++i) {
    std::cout << cm.labels[i];
    for (std::size_t j = 0; j < cm.num_classes; ++j) std::cout << ' ' << cm.at(i, j);
    std::cout << "\n";
  }
  return 0;
}

int cmd_predict(const PredictOptions& opts) {
  const Checkpoint ck = load_checkpoint(opts.checkpoint);
  const Tensor img = preprocess(decode_image(opts.image), ck.preprocess);
  const std::vector<Tensor> images{img};
  const std::size_t idx[] = {0};
  const Tensor probs = predict(ck.arch, ck.state.inference_params(), stack_batch(images, idx));
  const auto row = probs.data();
  const std::size_t best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  std::cout << "predicted " << ck.classes.at(best) << "\n";
  for (std::size_t k = 0; k < ck.classes.size(); ++k) {
    std::cout << ck.classes[k] << ' ' << shortest(row[k]) << "\n";
  }
  return 0;
}

int cmd_report(const ReportOptions& opts) {
  if (opts.inputs.empty()) throw ArgumentError("report: no input files");
  const ReportLayout layout = report_layout_from_string(opts.layout);
  std::vector<EvalReport> reports;
  for (const auto& path : opts.inputs) {
    const std::string ext = fs::path(path).extension().string();
    const std::string text = read_text(path);
    if (ext == ".json") {
      reports.push_back(report_from_json(text, path));
    } else if (ext == ".csv") {
      for (auto& r : parse_report_csv(text, path)) reports.push_back(std::move(r));
    } else {
      throw ArgumentError("report: " + path + " is neither .json nor .csv");
    }
  }
  const std::string table = render_report(reports, layout);
  std::cout << table;
  if (opts.text_out) write_text(*opts.text_out, table);
  if (opts.csv_out) write_text(*opts.csv_out, report_csv(reports));
  return 0;
}

namespace {

struct BenchShape {
  std::string name;
  std::size_t batch, height, width, in_channels, out_channels, kernel, stride;
};

const std::vector<BenchShape>& bench_shapes() {
  static const std::vector<BenchShape> shapes{
      {"chest_stage1", 8, 224, 224, 3, 32, 3, 1},
      {"chest_stage2", 8, 112, 112, 32, 64, 3, 1},
      {"skin_stage3", 8, 112, 112, 64, 128, 3, 1},
      {"mbconv_expand", 8, 56, 56, 64, 384, 1, 1},
  };
  return shapes;
}

std::uint64_t checksum(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float v : t.values()) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

} // namespace

std::vector<std::string> bench_shape_names() {
  std::vector<std::string> names;
  for (const auto& s : bench_shapes()) names.push_back(s.name);
  return names;
}

int cmd_bench(const BenchOptions& opts) {
  if (opts.runs == 0) throw ArgumentError("bench: --runs must be positive");
  std::vector<BenchShape> selected;
  for (const auto& s : bench_shapes()) {
    if (opts.shape == "all" || opts.shape == s.name) selected.push_back(s);
  }
  if (selected.empty()) throw ArgumentError("bench: unknown shape '" + opts.shape + "'");

  std::string csv = "shape,method,batch,height,width,in_channels,out_channels,kernel,stride,median_ms,checksum\n";
  bool agree = true;
  for (const auto& s : selected) {
    Rng rng(derive_seed(opts.seed, 7));
    Tensor input({s.batch, s.height, s.width, s.in_channels});
    for (auto& v : input.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    Tensor kernels({s.out_channels, s.kernel, s.kernel, s.in_channels});
    for (auto& v : kernels.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    Tensor bias({s.out_channels});
    for (auto& v : bias.data()) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    const ConvGeometry geom{s.kernel, s.kernel, s.stride, Padding::Same};

    std::uint64_t sums[2] = {0, 0};
    Tensor outputs[2];
    for (int method = 0; method < 2; ++method) {
      std::vector<double> times;
      for (std::size_t r = 0; r < opts.runs; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        Tensor y = method == 0 ? conv2d_direct(input, kernels, bias, geom)
                               : conv2d_im2col(input, kernels, bias, geom);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (r == 0) outputs[method] = std::move(y);
      }
      std::sort(times.begin(), times.end());
      const double median = times[times.size() / 2];
      sums[method] = checksum(outputs[method]);
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(sums[method]));
      char ms[32];
      std::snprintf(ms, sizeof ms, "%.3f", median);
      csv += s.name + ',' + (method == 0 ? "direct" : "im2col") + ',' + std::to_string(s.batch) + ',' +
             std::to_string(s.height) + ',' + std::to_string(s.width) + ',' +
             std::to_string(s.in_channels) + ',' + std::to_string(s.out_channels) + ',' +
             std::to_string(s.kernel) + ',' + std::to_string(s.stride) + ',' + ms + ',' + hex + '\n';
    }
    if (sums[0] != sums[1]) {
      double worst = 0.0;
      const auto a = outputs[0].data(), b = outputs[1].data();
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double scale = std::max({1.0, std::abs(double(a[i])), std::abs(double(b[i]))});
        worst = std::max(worst, std::abs(double(a[i]) - double(b[i])) / scale);
      }
      if (worst > 1e-6) agree = false;
      std::cerr << s.name << ": checksums differ, max relative difference " << worst << "\n";
    }
  }
  std::cout << csv;
  if (opts.csv_out) write_text(*opts.csv_out, csv);
  if (!agree) throw Error("bench: direct and im2col outputs disagree");
  return 0;
}

int cmd_synth(const SynthOptions& opts) {
  const DatasetManifest m =
      generate_synthetic_dataset(opts.classes, opts.per_class, opts.size, opts.seed, opts.out_dir);
  std::cout << (fs::path(opts.out_dir) / "manifest.csv").string() << " " << m.size() << " images, "
            << m.classes.size() << " classes\n";
  return 0;
}

int cmd_arch(const ArchOptions& opts) {
  if (opts.preset.has_value() == opts.file.has_value()) {
    throw ArgumentError("arch: give exactly one of --preset and --file");
  }
  ModelSection model;
  model.preset = opts.preset;
  model.architecture_file = opts.file;
  model.num_classes = opts.num_classes;
  model.input_size = opts.input_size;
  if (opts.phi) {
    ScalingCoefficients c;
    c.phi = *opts.phi;
    model.scaling = c;
  }
  std::size_t classes = opts.num_classes.value_or(2);
  if (opts.file && !opts.num_classes) classes = load_architecture(*opts.file).num_classes;
  const ArchitectureSpec arch = resolve_architecture(model, classes);
  if (opts.json) {
    std::cout << architecture_to_json(arch) << "\n";
    return 0;
  }
  const auto shapes = shape_infer(arch, arch.input_shape(1));
  std::cout << arch.name << " input " << shape_string(arch.input_shape(1)) << "\n";
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    std::cout << i << ' ' << to_string(arch.layers[i].kind) << ' ' << shape_string(shapes[i]) << "\n";
  }
  std::cout << "parameters " << init_params<float>(arch, 0).element_count() << "\n";
  return 0;
}

} // namespace effnet::cli

// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "effnet/architecture.hpp"
#include "effnet/dataset.hpp"
#include "effnet/metrics.hpp"
#include "effnet/model_zoo.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace effnet;
using namespace effnet::testkit;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s; // 0 = no runtime bound
  std::function<Outcome()> run;
};

std::string g_work;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

// Runs the command-line tool, appending its output to a log in the work dir.
int run_cli(const std::string& args) {
  const std::string log = g_work + "/cli.log";
  write_file(log + ".last", args + "\n");
  const std::string cmd = quote(EFFNET_CLI_PATH) + " " + args + " >>" + quote(log) + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = g_work + "/" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

// ---- criteria ----------------------------------------------------------------

Outcome shape_contract() {
  const auto doc = nlohmann::json::parse(read_file(std::string(EFFNET_GOLDEN_DIR) + "/preset_traces.json"));
  const std::size_t batch = doc.at("batch").get<std::size_t>();
  std::string failures;
  std::size_t layers = 0;
  for (const auto& [name, trace] : doc.at("traces").items()) {
    const auto arch = build_preset(preset_from_string(name)).arch;
    std::vector<Shape> expected;
    for (const auto& dims : trace) {
      Shape s{batch};
      for (const auto& d : dims) s.push_back(d.get<std::size_t>());
      expected.push_back(s);
    }
    const auto got = shape_infer(arch, arch.input_shape(batch));
    layers += got.size();
    if (got != expected) failures += " " + name;
  }
  // Class override changes only the head.
  const auto brain4 = build_preset(PresetName::BrainTumor, 4).arch;
  if (output_shape(brain4, brain4.input_shape(1)) != Shape{1, 4}) failures += " brain-override";
  if (!failures.empty()) return {false, "trace mismatch:" + failures};
  return {true, std::to_string(layers) + " layer shapes across 4 presets match"};
}

Outcome split_counts() {
  std::string detail;
  bool ok = true;
  for (const auto& c : split_cases()) {
    const auto m = synthetic_manifest(c.class_sizes);
    const auto s = stratified_split(m, SplitSpec::from_counts(c.train, c.val, c.test, 42));
    const double dev = max_class_deviation(m, s);
    const bool good = s.train.size() == c.train && s.val.size() == c.val && s.test.size() == c.test &&
                      dev <= 1.0;
    ok = ok && good;
    detail += " " + c.name + "=" + std::to_string(s.train.size()) + "/" + std::to_string(s.val.size()) +
              "/" + std::to_string(s.test.size()) + "(dev " + fmt(dev, 2) + ")";
  }
  return {ok, detail.substr(1)};
}

Outcome gradients() {
  const auto ops = op_gradient_checks(1e-4);
  const auto net = network_gradient_checks(1e-3);
  double worst_op = 0, worst_net = 0;
  std::string failed;
  for (const auto& c : ops) {
    worst_op = std::max(worst_op, c.max_rel);
    if (!c.passed) failed += " " + c.name;
  }
  for (const auto& c : net) {
    worst_net = std::max(worst_net, c.max_rel);
    if (!c.passed) failed += " " + c.name;
  }
  std::string detail = std::to_string(ops.size()) + " op checks (max rel " + fmt(worst_op) + "), " +
                       std::to_string(net.size()) + " network tensors (max rel " + fmt(worst_net) + ")";
  if (!failed.empty()) return {false, detail + "; failed:" + failed};
  return {true, detail};
}

Outcome conv_oracle() {
  auto cases = random_conv_cases(100, 2024);
  const auto presets = preset_conv_cases();
  cases.insert(cases.end(), presets.begin(), presets.end());
  const auto cmp = compare_conv_paths(cases, 99, false);
  const bool ok = cmp.cases >= 100 && cmp.max_rel_im2col_vs_direct <= 1e-6;
  return {ok, std::to_string(cmp.cases) + " shapes (" + std::to_string(presets.size()) +
                  " from presets), max rel " + fmt(cmp.max_rel_im2col_vs_direct)};
}

Outcome metrics_oracle() {
  Rng rng(31337);
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const auto counts = random_confusion(rng, 6, 50);
    const auto o = brute_force_metrics(counts);
    const auto r = metrics(ConfusionMatrix::from_rows(counts));
    auto upd = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
    upd(r.accuracy, o.accuracy);
    upd(r.precision, o.macro_precision);
    upd(r.recall, o.macro_recall);
    upd(*r.f1, o.macro_f1);
    for (std::size_t c = 0; c < counts.size(); ++c) {
      upd(r.per_class[c].precision, o.precision[c]);
      upd(r.per_class[c].recall, o.recall[c]);
      upd(r.per_class[c].f1, o.f1[c]);
    }
  }
  const double hand = metrics(ConfusionMatrix::from_rows({{8, 2}, {1, 9}})).accuracy;
  const bool ok = worst <= 1e-12 && hand == 0.85;
  return {ok, "50 matrices, max abs diff " + fmt(worst) + "; [[8,2],[1,9]] accuracy " + (hand == 0.85 ? std::string("0.85 exactly") : fmt(hand, 17))};
}

struct TrainRun {
  int rc = -1;
  std::string checkpoint;
  std::string history;
};

TrainRun train_run(const std::string& config, const std::string& out) {
  TrainRun r;
  r.rc = run_cli("train -q " + quote(config) + " -o " + quote(out));
  r.checkpoint = read_file(out + "/checkpoint.efnc");
  r.history = read_file(out + "/history.csv");
  return r;
}

Outcome overfit_smoke() {
  const std::string dir = fresh_dir("overfit");
  if (run_cli("synth " + quote(dir + "/data") + " --classes 2 --per-class 16 --size 64 --seed 11") != 0)
    return {false, "synth failed (see cli.log)"};
  nlohmann::json cfg = {
      {"dataset", {{"manifest", "data/manifest.csv"}, {"val_manifest", "data/manifest.csv"}}},
      {"model", {{"preset", "chest"}, {"input_size", 64}}},
      {"train", {{"max_epochs", 50}, {"early_stop_patience", 10}, {"batch_size", 8}, {"seed", 3}}},
  };
  write_file(dir + "/config.json", cfg.dump(2));
  const auto a = train_run(dir + "/config.json", dir + "/run_a");
  const auto b = train_run(dir + "/config.json", dir + "/run_b");
  if (a.rc != 0 || b.rc != 0) return {false, "train failed (see cli.log)"};
  if (run_cli("evaluate " + quote(dir + "/run_a/checkpoint.efnc") + " " + quote(dir + "/data/manifest.csv") +
              " -o " + quote(dir + "/eval")) != 0)
    return {false, "evaluate failed"};
  const auto report = nlohmann::json::parse(read_file(dir + "/eval/report.json"));
  const double acc = report.at("accuracy").get<double>();
  const std::size_t epochs = std::count(a.history.begin(), a.history.end(), '\n') - 1;
  const bool same = !a.checkpoint.empty() && a.checkpoint == b.checkpoint && a.history == b.history;
  const bool ok = acc >= 0.95 && epochs <= 50 && same;
  return {ok, "train accuracy " + fmt(acc) + " after " + std::to_string(epochs) + " epochs, repeat run " +
                  (same ? "identical" : "DIFFERENT")};
}

Outcome determinism() {
  const std::string dir = fresh_dir("determinism");
  if (run_cli("synth " + quote(dir + "/data") + " --classes 3 --per-class 10 --size 32 --seed 5") != 0)
    return {false, "synth failed"};
  nlohmann::json cfg = {
      {"dataset",
       {{"manifest", "data/manifest.csv"}, {"gaussian_sigma", 0.6}, {"augmentation", {{"enabled", true}}}}},
      {"split", {{"train", 0.6}, {"val", 0.2}, {"test", 0.2}, {"seed", 8}}},
      {"model", {{"preset", "skin"}, {"input_size", 32}}},
      {"train", {{"max_epochs", 4}, {"batch_size", 4}, {"seed", 21}, {"track_eval_loss", true}}},
  };
  write_file(dir + "/config.json", cfg.dump(2));
  const auto a = train_run(dir + "/config.json", dir + "/run_a");
  const auto b = train_run(dir + "/config.json", dir + "/run_b");
  if (a.rc != 0 || b.rc != 0) return {false, "train failed (see cli.log)"};
  const bool ck = !a.checkpoint.empty() && a.checkpoint == b.checkpoint;
  const bool hist = !a.history.empty() && a.history == b.history;
  return {ck && hist, "checkpoint " + std::to_string(a.checkpoint.size()) + " bytes " +
                          (ck ? "identical" : "DIFFERENT") + ", history " + (hist ? "identical" : "DIFFERENT")};
}

Outcome compound_scaling() {
  bool ok = true;
  for (PresetName p : {PresetName::BrainTumor, PresetName::BreastCancer, PresetName::ChestCancer,
                       PresetName::SkinCancer}) {
    const auto a = build_preset(p).arch;
    ok = ok && compound_scale(a, {1.2, 1.1, 1.15, 0.0}) == a;
  }
  ArchitectureSpec base;
  base.input = {224, 224, 3};
  base.layers = {LayerSpec::mbconv(40, 2, 2, true), LayerSpec::global_avg_pool(),
                 LayerSpec::dense(2, Activation::None), LayerSpec::softmax()};
  const auto s = compound_scale(base, {1.2, 1.1, 1.15, 1.0});
  const bool example = s.layers[0].repeats == 3 && s.layers[0].filters == 48 && s.input.height == 258 &&
                       s.input.width == 258;
  return {ok && example, std::string("phi=0 identity ") + (ok ? "holds" : "BROKEN") + "; phi=1 gives repeats " +
                             std::to_string(s.layers[0].repeats) + ", filters " +
                             std::to_string(s.layers[0].filters) + ", resolution " +
                             std::to_string(s.input.height)};
}

Outcome performance() {
  const std::string dir = fresh_dir("bench");
  if (run_cli("bench chest_stage1 --runs 3 --csv " + quote(dir + "/bench.csv")) != 0)
    return {false, "bench failed"};
  std::istringstream in(read_file(dir + "/bench.csv"));
  std::string line;
  std::getline(in, line);
  double direct = -1, im2col = -1;
  std::string sum_direct, sum_im2col;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 11) continue;
    if (f[1] == "direct") {
      direct = std::stod(f[9]);
      sum_direct = f[10];
    } else if (f[1] == "im2col") {
      im2col = std::stod(f[9]);
      sum_im2col = f[10];
    }
  }
  if (direct < 0 || im2col < 0) return {false, "bench CSV incomplete"};
  const bool agree = sum_direct == sum_im2col;
  return {im2col < direct && agree, "direct " + fmt(direct, 4) + " ms, im2col " + fmt(im2col, 4) +
                                        " ms, outputs " + (agree ? "bit-identical" : "DIFFER")};
}

Outcome report_golden() {
  const std::vector<EvalReport> rows{report_from_values("Brain Tumor", "Proposed", 0.995, 0.99, 0.99, 0.98),
                                     report_from_values("Breast Cancer", "Proposed", 0.97, 0.96, 0.97, 0.97),
                                     report_from_values("Chest Cancer", "Proposed", 0.92, 0.92, 0.91, 0.90),
                                     report_from_values("Skin Cancer", "Proposed", 0.99, 0.98, 0.99, 0.99)};
  const std::string golden = read_file(std::string(EFFNET_GOLDEN_DIR) + "/metrics_table.txt");
  const std::string got = render_report(rows, ReportLayout::MetricsTable);
  if (golden.empty()) return {false, "golden file missing"};
  return {got == golden, std::to_string(got.size()) + " bytes " + (got == golden ? "identical" : "differ")};
}

} // namespace

int main(int argc, char** argv) {
  g_work = (fs::temp_directory_path() / "effnet_acceptance").string();
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--work-dir") g_work = argv[i + 1];
  fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<Criterion> criteria{
      {"shape-contract", 1.0, shape_contract},
      {"split-counts", 5.0, split_counts},
      {"gradients", 60.0, gradients},
      {"conv-oracle", 60.0, conv_oracle},
      {"metrics-oracle", 0.0, metrics_oracle},
      {"overfit-smoke", 600.0, overfit_smoke},
      {"determinism", 0.0, determinism},
      {"compound-scaling", 0.0, compound_scaling},
      {"performance", 0.0, performance},
      {"report-rendering", 0.0, report_golden},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs >= c.budget_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.budget_s) + " s budget";
    }
    failures += !o.pass;
    std::printf("%s %-16s %8.2fs  %s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}

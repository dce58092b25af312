#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace effnet::cli {

struct SplitOptions {
  std::string manifest;
  std::vector<double> fractions{0.70, 0.15, 0.15};
  std::vector<std::size_t> counts; // alternative to fractions
  std::uint64_t seed = 0;
  std::string out_dir = "split";
};

struct TrainOptions {
  std::string config;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> resume;
  // Pause after this many epochs in this invocation (resume continues).
  std::optional<std::size_t> stop_after;
  bool quiet = false;
};

struct EvaluateOptions {
  std::string checkpoint;
  std::string manifest;
  std::string out_dir = "evaluation";
  std::string dataset = "dataset";
  std::string method = "Proposed";
  std::size_t batch_size = 8;
};

struct PredictOptions {
  std::string checkpoint;
  std::string image;
};

struct ReportOptions {
  std::vector<std::string> inputs;
  std::string layout = "metrics";
  std::optional<std::string> csv_out;
  std::optional<std::string> text_out;
};

struct BenchOptions {
  std::string shape = "chest_stage1";
  std::size_t runs = 5;
  std::uint64_t seed = 0;
  std::optional<std::string> csv_out;
};

struct SynthOptions {
  std::string out_dir;
  std::size_t classes = 2;
  std::size_t per_class = 16;
  std::size_t size = 64;
  std::uint64_t seed = 0;
};

struct ArchOptions {
  std::optional<std::string> preset;
  std::optional<std::string> file;
  std::optional<std::size_t> num_classes;
  std::optional<std::size_t> input_size;
  std::optional<double> phi;
  bool json = false;
};

// Each returns a process exit code; failures throw and are mapped by main.
int cmd_split(const SplitOptions& opts);
int cmd_train(const TrainOptions& opts);
int cmd_evaluate(const EvaluateOptions& opts);
int cmd_predict(const PredictOptions& opts);
int cmd_report(const ReportOptions& opts);
int cmd_bench(const BenchOptions& opts);
int cmd_synth(const SynthOptions& opts);
int cmd_arch(const ArchOptions& opts);

// Names accepted by cmd_bench, in output order for "all".
std::vector<std::string> bench_shape_names();

} // namespace effnet::cli

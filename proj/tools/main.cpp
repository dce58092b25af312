// effnet: command-line front end.
//
// Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "effnet/error.hpp"

using namespace effnet::cli;

int main(int argc, char** argv) {
  CLI::App app{"Image classification pipeline: split, train, evaluate, predict, report, bench"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "effnet 1.0.0");

  SplitOptions split;
  auto* s = app.add_subcommand("split", "Stratified train/val/test split of a manifest");
  s->add_option("manifest", split.manifest, "Input manifest CSV (path,label)")->required();
  s->add_option("--fractions", split.fractions, "train,val,test fractions")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  s->add_option("--counts", split.counts, "train,val,test record counts (instead of fractions)")
      ->delimiter(',')
      ->expected(3)
      ->excludes("--fractions");
  s->add_option("--seed", split.seed, "Shuffle seed")->capture_default_str();
  s->add_option("-o,--out", split.out_dir, "Output directory")->capture_default_str();

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train a model from a run configuration");
  t->add_option("config", train.config, "Run configuration JSON")->required();
  t->add_option("--epochs", train.epochs, "Override train.max_epochs");
  t->add_option("--seed", train.seed, "Override train.seed and split.seed");
  t->add_option("-o,--output", train.output, "Override output.directory");
  t->add_option("--lr", train.learning_rate, "Override train.learning_rate");
  t->add_option("--batch-size", train.batch_size, "Override train.batch_size");
  t->add_option("--resume", train.resume, "Continue from a checkpoint");
  t->add_option("--stop-after", train.stop_after, "Pause after this many epochs");
  t->add_flag("-q,--quiet", train.quiet, "No per-epoch output");

  EvaluateOptions eval;
  auto* e = app.add_subcommand("evaluate", "Evaluate a checkpoint on a manifest");
  e->add_option("checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("manifest", eval.manifest, "Manifest CSV")->required();
  e->add_option("-o,--out", eval.out_dir, "Report directory")->capture_default_str();
  e->add_option("--dataset", eval.dataset, "Dataset name in the report")->capture_default_str();
  e->add_option("--method", eval.method, "Method name in the report")->capture_default_str();
  e->add_option("--batch-size", eval.batch_size, "Inference batch size")->capture_default_str();

  PredictOptions pred;
  auto* p = app.add_subcommand("predict", "Classify one image");
  p->add_option("checkpoint", pred.checkpoint, "Checkpoint file")->required();
  p->add_option("image", pred.image, "PPM/PGM or PNG image")->required();

  ReportOptions report;
  auto* r = app.add_subcommand("report", "Render report files as a table");
  r->add_option("inputs", report.inputs, "report.json or report CSV files")->required();
  r->add_option("--layout", report.layout, "metrics or comparison")->capture_default_str();
  r->add_option("--csv", report.csv_out, "Also write the rows as CSV");
  r->add_option("--text", report.text_out, "Also write the table to a file");

  BenchOptions bench;
  auto* b = app.add_subcommand("bench", "Time direct vs im2col convolution");
  std::string shape_help = "Shape preset: all";
  for (const auto& n : bench_shape_names()) shape_help += ", " + n;
  b->add_option("shape", bench.shape, shape_help)->capture_default_str();
  b->add_option("--runs", bench.runs, "Timed runs per method (median reported)")->capture_default_str();
  b->add_option("--seed", bench.seed, "Input seed")->capture_default_str();
  b->add_option("--csv", bench.csv_out, "Also write the CSV to a file");

  SynthOptions synth;
  auto* y = app.add_subcommand("synth", "Write a synthetic labeled image set");
  y->add_option("out_dir", synth.out_dir, "Output directory")->required();
  y->add_option("--classes", synth.classes, "Number of classes")->capture_default_str();
  y->add_option("--per-class", synth.per_class, "Images per class")->capture_default_str();
  y->add_option("--size", synth.size, "Image side in pixels")->capture_default_str();
  y->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

  ArchOptions arch;
  auto* a = app.add_subcommand("arch", "Show a model's layer shapes or JSON");
  a->add_option("--preset", arch.preset, "brain, breast, chest or skin");
  a->add_option("--file", arch.file, "Architecture JSON");
  a->add_option("--num-classes", arch.num_classes, "Output classes");
  a->add_option("--input-size", arch.input_size, "Square input resolution");
  a->add_option("--phi", arch.phi, "Compound scaling exponent");
  a->add_flag("--json", arch.json, "Print the architecture JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (s->parsed()) return cmd_split(split);
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_evaluate(eval);
    if (p->parsed()) return cmd_predict(pred);
    if (r->parsed()) return cmd_report(report);
    if (b->parsed()) return cmd_bench(bench);
    if (y->parsed()) return cmd_synth(synth);
    if (a->parsed()) return cmd_arch(arch);
  } catch (const std::exception& ex) {
    std::cerr << "effnet " << app.get_subcommands().front()->get_name() << ": error: " << ex.what()
              << "\n";
    return 2;
  }
  return 1;
}

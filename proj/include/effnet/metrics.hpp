#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace effnet {

// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts; // row-major num_classes x num_classes
  std::vector<std::string> labels;   // empty or one per class

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes);
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows);

  std::uint64_t& at(std::size_t truth, std::size_t predicted);
  std::uint64_t at(std::size_t truth, std::size_t predicted) const;
  std::uint64_t total() const;
  std::uint64_t trace() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

// Throws ArgumentError on length mismatch or a label >= num_classes.
ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                          std::size_t num_classes);

struct ClassMetrics {
  std::string label;
  std::uint64_t support = 0; // true instances
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the denominator was zero and the value was reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  bool f1_undefined = false;
};

struct Averages {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct EvalReport {
  std::string dataset;
  std::string method;
  // "macro" for reports computed here; "unstated" for transcribed values.
  std::string averaging = "macro";
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> f1;
  std::vector<ClassMetrics> per_class;
  std::optional<Averages> micro;
  std::optional<ConfusionMatrix> confusion;
};

// Per-class one-vs-rest precision/recall/F1 with macro (unweighted mean)
// headline values. Zero denominators give 0 and set the class's flag.
// Throws ArgumentError on an empty matrix.
EvalReport metrics(const ConfusionMatrix& cm, std::string dataset = {}, std::string method = {});

// A report row from already-known values, e.g. numbers copied from elsewhere.
EvalReport report_from_values(std::string dataset, std::string method, double accuracy,
                              double precision, double recall, std::optional<double> f1,
                              std::string averaging = "unstated");

enum class ReportLayout { MetricsTable, ComparisonTable };

const char* to_string(ReportLayout layout);
ReportLayout report_layout_from_string(const std::string& text);

// Three decimals, dropping a trailing third-decimal zero: 0.995 -> "0.995",
// 0.9 -> "0.90".
std::string format_metric(double value);

// Aligned pipe table followed by one line naming the averaging convention.
//   MetricsTable:    Cancer Dataset | Accuracy | Precision | Recall | F1 Score
//   ComparisonTable: Cancer Dataset | Method | Accuracy | Precision | Recall
// In the comparison layout consecutive rows of one dataset form a group and
// only the first row of a group names the dataset. Throws ArgumentError on
// an empty list.
std::string render_report(std::span<const EvalReport> reports, ReportLayout layout);

// "dataset,method,accuracy,precision,recall,f1" with shortest round-trip
// numbers; a missing F1 is an empty field.
std::string report_csv(std::span<const EvalReport> reports);
std::vector<EvalReport> parse_report_csv(const std::string& text, const std::string& source = "<csv>");

// Full report including per-class values, flags and confusion matrix.
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text, const std::string& source = "<json>");

} // namespace effnet

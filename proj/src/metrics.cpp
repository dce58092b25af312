#include "effnet/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "csv.hpp"
#include "effnet/error.hpp"

namespace effnet {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : num_classes(classes), counts(classes * classes, 0) {}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw ArgumentError("confusion matrix must be square");
    for (std::size_t j = 0; j < rows.size(); ++j) cm.at(i, j) = rows[i][j];
  }
  return cm;
}

std::uint64_t& ConfusionMatrix::at(std::size_t truth, std::size_t predicted) {
  if (truth >= num_classes || predicted >= num_classes) throw ArgumentError("confusion index out of range");
  return counts[truth * num_classes + predicted];
}

std::uint64_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  if (truth >= num_classes || predicted >= num_classes) throw ArgumentError("confusion index out of range");
  return counts[truth * num_classes + predicted];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < num_classes; ++i) t += counts[i * num_classes + i];
  return t;
}

ConfusionMatrix confusion(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                          std::size_t num_classes) {
  if (truth.size() != predicted.size()) {
    throw ArgumentError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                        std::to_string(predicted.size()) + " predictions");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) {
      throw ArgumentError("confusion: label out of range at position " + std::to_string(i));
    }
    ++cm.counts[truth[i] * num_classes + predicted[i]];
  }
  return cm;
}

EvalReport metrics(const ConfusionMatrix& cm, std::string dataset, std::string method) {
  if (cm.counts.size() != cm.num_classes * cm.num_classes) {
    throw ArgumentError("metrics: malformed confusion matrix");
  }
  const std::uint64_t total = cm.total();
  if (cm.num_classes == 0 || total == 0) throw ArgumentError("metrics: empty confusion matrix");

  EvalReport r;
  r.dataset = std::move(dataset);
  r.method = std::move(method);
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  const std::size_t c = cm.num_classes;
  double sum_p = 0, sum_r = 0, sum_f = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t col = 0, row = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    ClassMetrics m;
    m.label = k < cm.labels.size() ? cm.labels[k] : std::to_string(k);
    m.support = row;
    if (col == 0) m.precision_undefined = true;
    else m.precision = static_cast<double>(tp) / static_cast<double>(col);
    if (row == 0) m.recall_undefined = true;
    else m.recall = static_cast<double>(tp) / static_cast<double>(row);
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1_undefined = true;
    }
    sum_p += m.precision;
    sum_r += m.recall;
    sum_f += m.f1;
    r.per_class.push_back(std::move(m));
  }
  const double n = static_cast<double>(c);
  r.precision = sum_p / n;
  r.recall = sum_r / n;
  r.f1 = sum_f / n;
  // Single-label classification: micro precision = micro recall = accuracy.
  r.micro = Averages{r.accuracy, r.accuracy, r.accuracy};
  r.confusion = cm;
  return r;
}

EvalReport report_from_values(std::string dataset, std::string method, double accuracy,
                              double precision, double recall, std::optional<double> f1,
                              std::string averaging) {
  EvalReport r;
  r.dataset = std::move(dataset);
  r.method = std::move(method);
  r.averaging = std::move(averaging);
  r.accuracy = accuracy;
  r.precision = precision;
  r.recall = recall;
  r.f1 = f1;
  return r;
}

const char* to_string(ReportLayout layout) {
  return layout == ReportLayout::MetricsTable ? "metrics" : "comparison";
}

ReportLayout report_layout_from_string(const std::string& text) {
  std::string t;
  for (char ch : text) t += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (t == "metrics" || t == "metrics_table") return ReportLayout::MetricsTable;
  if (t == "comparison" || t == "comparison_table") return ReportLayout::ComparisonTable;
  throw ArgumentError("unknown report layout '" + text + "' (expected metrics or comparison)");
}

std::string format_metric(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", value);
  std::string s = buf;
  if (s.size() >= 5 && s.back() == '0' && s[s.size() - 4] == '.') s.pop_back();
  return s;
}

namespace {

std::string render_table(const std::vector<std::string>& header,
                         const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t j = 0; j < header.size(); ++j) {
    width[j] = header[j].size();
    for (const auto& r : rows) width[j] = std::max(width[j], r[j].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string out = "|";
    for (std::size_t j = 0; j < cells.size(); ++j) {
      out += ' ' + cells[j] + std::string(width[j] - cells[j].size(), ' ') + " |";
    }
    return out + '\n';
  };
  std::string out = line(header);
  out += '|';
  for (std::size_t w : width) out += std::string(w + 2, '-') + '|';
  out += '\n';
  for (const auto& r : rows) out += line(r);
  return out;
}

std::string shortest(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& source) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw FormatError(source, "not a number: '" + s + "'");
  }
  return v;
}

} // namespace

std::string render_report(std::span<const EvalReport> reports, ReportLayout layout) {
  if (reports.empty()) throw ArgumentError("render_report: no reports");
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header;
  if (layout == ReportLayout::MetricsTable) {
    header = {"Cancer Dataset", "Accuracy", "Precision", "Recall", "F1 Score"};
    for (const auto& r : reports) {
      rows.push_back({r.dataset, format_metric(r.accuracy), format_metric(r.precision),
                      format_metric(r.recall), r.f1 ? format_metric(*r.f1) : "--"});
    }
  } else {
    header = {"Cancer Dataset", "Method", "Accuracy", "Precision", "Recall"};
    for (std::size_t i = 0; i < reports.size(); ++i) {
      const auto& r = reports[i];
      const bool first = i == 0 || reports[i - 1].dataset != r.dataset;
      rows.push_back({first ? r.dataset : "", r.method, format_metric(r.accuracy),
                      format_metric(r.precision), format_metric(r.recall)});
    }
  }
  std::vector<std::string> conventions;
  for (const auto& r : reports) {
    if (std::find(conventions.begin(), conventions.end(), r.averaging) == conventions.end()) {
      conventions.push_back(r.averaging);
    }
  }
  std::string footer = "Averaging: ";
  for (std::size_t i = 0; i < conventions.size(); ++i) footer += (i ? ", " : "") + conventions[i];
  return render_table(header, rows) + footer + '\n';
}

std::string report_csv(std::span<const EvalReport> reports) {
  std::string out = "dataset,method,accuracy,precision,recall,f1\n";
  for (const auto& r : reports) {
    out += detail::csv_escape(r.dataset) + ',' + detail::csv_escape(r.method) + ',' +
           shortest(r.accuracy) + ',' + shortest(r.precision) + ',' + shortest(r.recall) + ',' +
           (r.f1 ? shortest(*r.f1) : "") + '\n';
  }
  return out;
}

std::vector<EvalReport> parse_report_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::vector<std::string> f;
  if (!detail::read_csv_row(in, f, source) ||
      f != std::vector<std::string>{"dataset", "method", "accuracy", "precision", "recall", "f1"}) {
    throw FormatError(source, "header must be 'dataset,method,accuracy,precision,recall,f1'");
  }
  std::vector<EvalReport> out;
  while (detail::read_csv_row(in, f, source)) {
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != 6) throw FormatError(source, "expected 6 fields per row");
    std::optional<double> f1;
    if (!f[5].empty()) f1 = parse_double(f[5], source);
    out.push_back(report_from_values(f[0], f[1], parse_double(f[2], source),
                                     parse_double(f[3], source), parse_double(f[4], source), f1,
                                     "unstated"));
  }
  return out;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["method"] = r.method;
  j["averaging"] = r.averaging;
  j["accuracy"] = r.accuracy;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1 ? nlohmann::ordered_json(*r.f1) : nlohmann::ordered_json(nullptr);
  if (r.micro) {
    j["micro"] = {{"precision", r.micro->precision}, {"recall", r.micro->recall}, {"f1", r.micro->f1}};
  }
  auto classes = nlohmann::ordered_json::array();
  for (const auto& c : r.per_class) {
    classes.push_back({{"label", c.label},
                       {"support", c.support},
                       {"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1},
                       {"precision_undefined", c.precision_undefined},
                       {"recall_undefined", c.recall_undefined},
                       {"f1_undefined", c.f1_undefined}});
  }
  j["per_class"] = std::move(classes);
  if (r.confusion) {
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < r.confusion->num_classes; ++i) {
      auto row = nlohmann::ordered_json::array();
      for (std::size_t k = 0; k < r.confusion->num_classes; ++k) row.push_back(r.confusion->at(i, k));
      rows.push_back(std::move(row));
    }
    j["confusion"] = {{"labels", r.confusion->labels}, {"counts", std::move(rows)}};
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text, const std::string& source) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.averaging = j.at("averaging").get<std::string>();
    r.accuracy = j.at("accuracy").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    if (!j.at("f1").is_null()) r.f1 = j.at("f1").get<double>();
    if (j.contains("micro")) {
      const auto& m = j.at("micro");
      r.micro = Averages{m.at("precision").get<double>(), m.at("recall").get<double>(),
                         m.at("f1").get<double>()};
    }
    for (const auto& c : j.value("per_class", nlohmann::json::array())) {
      ClassMetrics m;
      m.label = c.at("label").get<std::string>();
      m.support = c.at("support").get<std::uint64_t>();
      m.precision = c.at("precision").get<double>();
      m.recall = c.at("recall").get<double>();
      m.f1 = c.at("f1").get<double>();
      m.precision_undefined = c.at("precision_undefined").get<bool>();
      m.recall_undefined = c.at("recall_undefined").get<bool>();
      m.f1_undefined = c.at("f1_undefined").get<bool>();
      r.per_class.push_back(std::move(m));
    }
    if (j.contains("confusion")) {
      const auto rows = j.at("confusion").at("counts").get<std::vector<std::vector<std::uint64_t>>>();
      r.confusion = ConfusionMatrix::from_rows(rows);
      r.confusion->labels = j.at("confusion").at("labels").get<std::vector<std::string>>();
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source, std::string("bad report: ") + e.what());
  } catch (const ArgumentError& e) {
    throw FormatError(source, std::string("bad report: ") + e.what());
  }
}

} // namespace effnet

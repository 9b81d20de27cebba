#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dipa/errors.hpp"
#include "dipa/metrics.hpp"
#include "dipa/types.hpp"

namespace dipa {

enum class ReportFormat { kMarkdown, kCsv };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "markdown" || s == "md") return ReportFormat::kMarkdown;
  if (s == "csv") return ReportFormat::kCsv;
  throw ValidationError("unknown report format '" + s + "'");
}

// Shortest decimal representation that parses back to the same double.
inline std::string format_exact(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Splits RFC-4180 CSV text into records.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (c == '\r') {
      // swallowed; \n terminates the record
    } else if (c == '\n') {
      row.push_back(std::move(field));
      rows.push_back(std::move(row));
      row.clear();
      field.clear();
      field_started = false;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw ValidationError("csv: unterminated quoted field");
  if (field_started || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

// Rows of the method comparison table: the pooled report of each method when
// pooled reports exist, otherwise every report as given.
inline std::vector<EvaluationReport> table_rows(
    const std::vector<EvaluationReport>& reports) {
  std::vector<EvaluationReport> pooled;
  for (const auto& r : reports) {
    if (r.subject == kPooledSubject) pooled.push_back(r);
  }
  return pooled.empty() ? reports : pooled;
}

inline std::vector<std::string> similarity_columns(
    const std::vector<EvaluationReport>& rows) {
  std::vector<std::string> cols;
  for (const auto& r : rows) {
    for (const auto& [id, v] : r.similarity) {
      if (std::find(cols.begin(), cols.end(), id) == cols.end()) {
        cols.push_back(id);
      }
    }
  }
  return cols;
}

inline std::optional<double> similarity_of(const EvaluationReport& r,
                                           const std::string& id) {
  for (const auto& [k, v] : r.similarity) {
    if (k == id) return v;
  }
  return std::nullopt;
}

// Method comparison table. Columns: Method, one "Sim." per verifier (lower
// is better), ASR and Mean Conf. (higher is better). Markdown bolds the best
// value of each column; CSV carries exact values.
inline std::string render_report(const std::vector<EvaluationReport>& reports,
                                 ReportFormat format) {
  if (reports.empty()) throw ValidationError("render_report: no reports");
  const auto rows = table_rows(reports);
  const auto sim_cols = similarity_columns(rows);
  std::ostringstream out;

  if (format == ReportFormat::kCsv) {
    out << "Method";
    for (const auto& c : sim_cols) out << "," << csv_escape("Sim. " + c);
    out << ",ASR,Mean Conf.\r\n";
    for (const auto& r : rows) {
      out << csv_escape(r.method);
      for (const auto& c : sim_cols) {
        const auto v = similarity_of(r, c);
        out << "," << (v ? format_exact(*v) : "");
      }
      out << "," << format_exact(r.asr) << "," << format_exact(r.mean_confidence)
          << "\r\n";
    }
    return out.str();
  }

  std::vector<double> best_sim(sim_cols.size(), 2.0);
  double best_asr = -1.0, best_conf = -1.0;
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < sim_cols.size(); ++k) {
      if (auto v = similarity_of(r, sim_cols[k])) {
        best_sim[k] = std::min(best_sim[k], *v);
      }
    }
    best_asr = std::max(best_asr, r.asr);
    best_conf = std::max(best_conf, r.mean_confidence);
  }
  auto cell = [](const std::string& text, bool best) {
    return best ? "**" + text + "**" : text;
  };

  out << "| Method";
  for (const auto& c : sim_cols) out << " | Sim. " << c << " ↓";
  out << " | ASR ↑ | Mean Conf. ↑ |\n";
  out << "|---";
  for (std::size_t k = 0; k < sim_cols.size(); ++k) out << "|---:";
  out << "|---:|---:|\n";
  for (const auto& r : rows) {
    out << "| " << r.method;
    for (std::size_t k = 0; k < sim_cols.size(); ++k) {
      const auto v = similarity_of(r, sim_cols[k]);
      out << " | "
          << (v ? cell(format_fixed(*v, 3), *v == best_sim[k]) : std::string("-"));
    }
    out << " | " << cell(format_fixed(r.asr, 2), r.asr == best_asr) << " | "
        << cell(format_fixed(r.mean_confidence, 1),
                r.mean_confidence == best_conf)
        << " |\n";
  }
  return out.str();
}

// A row read back from a CSV report.
struct ReportRow {
  std::string method;
  std::vector<std::pair<std::string, double>> similarity;
  double asr = 0.0;
  double mean_confidence = 0.0;
};

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ValidationError("csv: not a number '" + s + "'");
  }
  return v;
}

inline std::vector<ReportRow> parse_report_csv(const std::string& text) {
  const auto records = parse_csv(text);
  if (records.empty()) throw ValidationError("csv: empty report");
  const auto& header = records.front();
  if (header.size() < 3 || header.front() != "Method" ||
      header[header.size() - 2] != "ASR" || header.back() != "Mean Conf.") {
    throw ValidationError("csv: unexpected header");
  }
  std::vector<ReportRow> rows;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.size() != header.size()) {
      throw ValidationError("csv: row " + std::to_string(i) +
                            " has wrong field count");
    }
    ReportRow row;
    row.method = rec[0];
    for (std::size_t k = 1; k + 2 < rec.size(); ++k) {
      if (rec[k].empty()) continue;
      row.similarity.emplace_back(header[k].substr(5), parse_double(rec[k]));
    }
    row.asr = parse_double(rec[rec.size() - 2]);
    row.mean_confidence = parse_double(rec.back());
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---- trial logs (newline-delimited JSON) -------------------------------------

inline void write_trials_ndjson(std::ostream& out,
                                const std::vector<TrialRecord>& trials) {
  for (const auto& t : trials) out << json(t).dump() << "\n";
}

inline std::vector<TrialRecord> read_trials_ndjson(std::istream& in) {
  std::vector<TrialRecord> trials;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      trials.push_back(json::parse(line).get<TrialRecord>());
    } catch (const json::exception& e) {
      throw ValidationError("trial log line " + std::to_string(lineno) + ": " +
                            e.what());
    }
  }
  if (trials.empty()) throw ValidationError("trial log is empty");
  return trials;
}

}  // namespace dipa

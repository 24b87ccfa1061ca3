#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace acl {

struct MetricsEntry {
  int stage = 0;
  std::string suite;
  double accuracy = 0.0;
};

// One metrics.csv file.
struct MetricsRun {
  std::string name;         // path relative to the scanned directory
  std::string input_hash;   // fingerprint of the file bytes
  std::string config_hash;  // first row's value
  std::uint64_t seed = 0;
  std::vector<MetricsEntry> entries;

  std::vector<std::string> suites() const;  // first-appearance order
};

// Requires columns stage, suite, accuracy (config_hash, seed optional).
// Missing columns, malformed rows and files without data rows raise FormatError.
MetricsRun parse_metrics_csv(const std::string& text, std::string name);

// Every *.csv whose name starts with "metrics" under dir, sorted by relative path.
std::vector<MetricsRun> load_metrics_dir(const std::string& dir);

std::string render_stage_chart(const std::string& suite, const std::vector<MetricsRun>& runs);
std::string render_markdown_report(const std::vector<MetricsRun>& runs);

// report.md plus chart_<suite>.svg per suite; returns the written paths.
std::vector<std::string> write_report(const std::vector<MetricsRun>& runs, const std::string& out_dir);

}  // namespace acl

#include "acl/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "acl/binary_io.hpp"
#include "acl/errors.hpp"

namespace acl {
namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string file_stem_for(const std::string& suite) {
  std::string out;
  for (char c : suite) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_';
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::vector<std::string> MetricsRun::suites() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (std::find(out.begin(), out.end(), e.suite) == out.end()) out.push_back(e.suite);
  return out;
}

MetricsRun parse_metrics_csv(const std::string& text, std::string name) {
  MetricsRun run;
  run.name = std::move(name);
  run.input_hash = hex64(fnv1a64(text));

  std::istringstream in(text);
  std::string line;
  std::size_t offset = 0;
  std::vector<std::string> header;
  std::map<std::string, std::size_t> col;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_row(line);
    if (header.empty()) {
      header = cells;
      for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
      for (const char* required : {"stage", "suite", "accuracy"})
        if (col.count(required) == 0)
          throw FormatError(run.name + ": missing column '" + required + "'", line_start);
      continue;
    }
    if (cells.size() != header.size()) throw FormatError(run.name + ": wrong number of cells", line_start);
    MetricsEntry e;
    try {
      std::size_t used = 0;
      const auto& stage = cells[col["stage"]];
      e.stage = std::stoi(stage, &used);
      if (used != stage.size() || e.stage < 0) throw std::invalid_argument("stage");
      const auto& acc = cells[col["accuracy"]];
      e.accuracy = std::stod(acc, &used);
      if (used != acc.size() || !std::isfinite(e.accuracy)) throw std::invalid_argument("accuracy");
      if (run.entries.empty() && col.count("seed") != 0) run.seed = std::stoull(cells[col["seed"]]);
    } catch (const std::logic_error&) {
      throw FormatError(run.name + ": malformed row", line_start);
    }
    e.suite = cells[col["suite"]];
    if (e.suite.empty()) throw FormatError(run.name + ": empty suite name", line_start);
    if (run.entries.empty() && col.count("config_hash") != 0) run.config_hash = cells[col["config_hash"]];
    run.entries.push_back(std::move(e));
  }
  if (header.empty()) throw FormatError(run.name + ": empty metrics file", 0);
  if (run.entries.empty()) throw FormatError(run.name + ": no data rows", offset);
  return run;
}

std::vector<MetricsRun> load_metrics_dir(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir, 0);
  std::vector<fs::path> files;
  for (const auto& item : fs::recursive_directory_iterator(dir)) {
    const auto file = item.path().filename().string();
    if (item.is_regular_file() && item.path().extension() == ".csv" && file.rfind("metrics", 0) == 0)
      files.push_back(fs::relative(item.path(), dir));
  }
  if (files.empty()) throw FormatError("no metrics*.csv files under " + dir, 0);
  std::sort(files.begin(), files.end());

  std::vector<MetricsRun> runs;
  for (const auto& rel : files) {
    const auto bytes = read_file_bytes((fs::path(dir) / rel).string());
    runs.push_back(parse_metrics_csv(std::string(bytes.begin(), bytes.end()), rel.generic_string()));
  }
  return runs;
}

std::string render_stage_chart(const std::string& suite, const std::vector<MetricsRun>& runs) {
  constexpr double width = 640, height = 400, left = 60, right = 180, top = 40, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;

  int max_stage = 1;
  for (const auto& r : runs)
    for (const auto& e : r.entries)
      if (e.suite == suite) max_stage = std::max(max_stage, e.stage);
  auto x_of = [&](int stage) { return left + plot_w * stage / max_stage; };
  auto y_of = [&](double acc) { return top + plot_h * (1.0 - std::clamp(acc, 0.0, 1.0)); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<!-- inputs:";
  for (const auto& r : runs) svg << ' ' << xml_escape(r.name) << '=' << r.input_hash;
  svg << " -->\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">Stage accuracy: " << xml_escape(suite) << "</text>\n";

  for (int i = 0; i <= 10; i += 2) {
    const double y = y_of(i / 10.0);
    svg << "<line x1=\"" << left << "\" y1=\"" << fmt("%.2f", y) << "\" x2=\"" << left + plot_w << "\" y2=\""
        << fmt("%.2f", y) << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << left - 8 << "\" y=\"" << fmt("%.2f", y + 4) << "\" text-anchor=\"end\">"
        << fmt("%.1f", i / 10.0) << "</text>\n";
  }
  const int tick_step = std::max(1, max_stage / 10);
  for (int s = 0; s <= max_stage; s += tick_step)
    svg << "<text x=\"" << fmt("%.2f", x_of(s)) << "\" y=\"" << top + plot_h + 18 << "\" text-anchor=\"middle\">" << s
        << "</text>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">stage</text>\n";
  svg << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 16 " << top + plot_h / 2
      << ")\" text-anchor=\"middle\">accuracy</text>\n";

  int series = 0;
  for (const auto& r : runs) {
    std::vector<std::pair<int, double>> points;
    for (const auto& e : r.entries)
      if (e.suite == suite) points.emplace_back(e.stage, e.accuracy);
    if (points.empty()) continue;
    std::stable_sort(points.begin(), points.end(), [](auto& a, auto& b) { return a.first < b.first; });
    const char* color = kPalette[series % std::size(kPalette)];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < points.size(); ++i)
      svg << (i ? " " : "") << fmt("%.2f", x_of(points[i].first)) << ',' << fmt("%.2f", y_of(points[i].second));
    svg << "\"/>\n";
    for (const auto& [s, a] : points)
      svg << "<circle cx=\"" << fmt("%.2f", x_of(s)) << "\" cy=\"" << fmt("%.2f", y_of(a)) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    const double ly = top + 10 + 18.0 * series;
    svg << "<line x1=\"" << left + plot_w + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + plot_w + 32 << "\" y2=\""
        << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + plot_w + 38 << "\" y=\"" << ly + 4 << "\">" << xml_escape(r.name) << "</text>\n";
    ++series;
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string render_markdown_report(const std::vector<MetricsRun>& runs) {
  std::ostringstream md;
  md << "# Stage accuracy report\n\n";
  md << "| run | input hash | config hash | seed |\n|---|---|---|---|\n";
  for (const auto& r : runs)
    md << "| " << r.name << " | " << r.input_hash << " | " << (r.config_hash.empty() ? "-" : r.config_hash) << " | "
       << r.seed << " |\n";
  for (const auto& r : runs) {
    const auto suites = r.suites();
    std::map<int, std::map<std::string, double>> grid;
    for (const auto& e : r.entries) grid[e.stage][e.suite] = e.accuracy;
    md << "\n## " << r.name << "\n\n| stage |";
    for (const auto& s : suites) md << ' ' << s << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < suites.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& [stage, row] : grid) {
      md << "| " << stage << " |";
      for (const auto& s : suites) {
        auto it = row.find(s);
        md << ' ' << (it == row.end() ? std::string("-") : fmt("%.2f", 100.0 * it->second)) << " |";
      }
      md << '\n';
    }
  }
  return md.str();
}

std::vector<std::string> write_report(const std::vector<MetricsRun>& runs, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> suites;
  for (const auto& r : runs)
    for (const auto& s : r.suites())
      if (std::find(suites.begin(), suites.end(), s) == suites.end()) suites.push_back(s);

  std::vector<std::string> written;
  auto emit = [&](const std::string& file, const std::string& text) {
    const auto path = (fs::path(out_dir) / file).string();
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    written.push_back(path);
  };
  emit("report.md", render_markdown_report(runs));
  for (const auto& s : suites) emit("chart_" + file_stem_for(s) + ".svg", render_stage_chart(s, runs));
  return written;
}

}  // namespace acl

#include "evidx/bench/report.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>

#include "evidx/error.hpp"

namespace evidx::bench {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string table(std::span<const ScenarioResult> results) {
  std::vector<std::array<std::string, 7>> rows;
  rows.push_back({"Scenario", "Selection", "Events scanned", "Events selected", "CPU time (s)",
                  "ms/scanned", "ms/read"});
  for (const auto& r : results) {
    rows.push_back({r.scenario, r.label, std::to_string(r.scanned), std::to_string(r.selected),
                    fmt("%.3f", r.cpu_seconds), fmt("%.4f", r.cpu_per_scanned() * 1e3),
                    r.read ? fmt("%.4f", r.cpu_per_read() * 1e3) : std::string("-")});
  }
  std::array<std::size_t, 7> width{};
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (std::size_t n = 0; n < rows.size(); ++n) {
    for (std::size_t i = 0; i < rows[n].size(); ++i) {
      const std::string& cell = rows[n][i];
      const std::string pad(width[i] - cell.size(), ' ');
      // Text columns left-aligned, numbers right-aligned.
      out += i < 2 ? cell + pad : pad + cell;
      out += i + 1 < rows[n].size() ? "  " : "\n";
    }
    if (n == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w;
      out += std::string(total + 2 * (width.size() - 1), '-') + "\n";
    }
  }
  return out;
}

std::string csv(std::span<const ScenarioResult> results) {
  std::string out =
      "scenario,selection,scanned,selected,read,cpu_seconds,wall_seconds,cpu_per_scanned,"
      "cpu_per_read,series,x\n";
  for (const auto& r : results) {
    out += csv_field(r.scenario) + "," + csv_field(r.label) + "," + std::to_string(r.scanned) +
           "," + std::to_string(r.selected) + "," + std::to_string(r.read) + "," +
           fmt("%.6f", r.cpu_seconds) + "," + fmt("%.6f", r.wall_seconds) + "," +
           fmt("%.9g", r.cpu_per_scanned()) + "," + fmt("%.9g", r.cpu_per_read()) + "," +
           csv_field(r.series) + "," + fmt("%g", r.x) + "\n";
  }
  return out;
}

std::string plotdata(std::span<const ScenarioResult> results) {
  std::map<std::string, std::vector<const ScenarioResult*>> series;
  std::vector<std::string> order;
  for (const auto& r : results) {
    if (r.series.empty()) continue;
    if (!series.count(r.series)) order.push_back(r.series);
    series[r.series].push_back(&r);
  }
  std::string out;
  for (const auto& name : order) {
    if (!out.empty()) out += "\n\n";
    out += "# " + name + "\n# x rate(events/s)\n";
    for (const ScenarioResult* r : series[name]) out += fmt("%g", r->x) + " " + fmt("%.1f", r->rate()) + "\n";
  }
  return out;
}

}  // namespace

std::string emit_report(std::span<const ScenarioResult> results, const std::string& format) {
  if (format != "table" && format != "csv" && format != "plotdata") {
    throw Error(Errc::kInvalidArgument, "unknown report format '" + format + "' (table, csv, plotdata)");
  }
  if (results.empty()) throw Error(Errc::kInvalidArgument, "no results to report");
  if (format == "table") return table(results);
  if (format == "csv") return csv(results);
  return plotdata(results);
}

}  // namespace evidx::bench

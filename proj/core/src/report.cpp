#include <charconv>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ticketforge/analysis.hpp"
#include "ticketforge/error.hpp"
#include "ticketforge/io.hpp"

namespace ticketforge {

namespace {

constexpr std::string_view kColumns =
    "method,source_task,target_task,regime,sparsity,sparsity_all,seed,accuracy,dense_reference_accuracy,p,"
    "relaxed_verdict,config_hash,mask_hash";

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  for (auto l : split(text, '\n')) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("malformed integer '" + std::string(s) + "'");
  return v;
}

// "# <schema>,config=<hash>"
std::string parse_preamble(std::string_view line, std::string_view schema) {
  const std::string prefix = "# " + std::string(schema) + ",config=";
  if (line.substr(0, prefix.size()) != prefix) {
    throw IoError("unexpected schema line '" + std::string(line) + "', expected '" + std::string(schema) + "'");
  }
  return std::string(line.substr(prefix.size()));
}

nlohmann::json record_json(const TicketRecord& r) {
  return {{"method", to_string(r.method)},
          {"source_task", r.source_task},
          {"target_task", r.target_task},
          {"regime", to_string(r.regime)},
          {"sparsity", r.sparsity},
          {"sparsity_all", r.sparsity_all},
          {"seed", r.seed},
          {"accuracy", r.accuracy},
          {"dense_reference_accuracy", r.dense_reference_accuracy},
          {"p", r.p},
          {"relaxed_verdict", r.relaxed_verdict},
          {"config_hash", r.config_hash},
          {"mask_hash", r.mask_hash}};
}

}  // namespace

std::string format_fixed(double v, int decimals) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, decimals);
  if (ec != std::errc()) throw IoError("cannot format number");
  return std::string(buf, ptr);
}

std::string format_exact(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw IoError("cannot format number");
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError("malformed number '" + std::string(s) + "'");
  return v;
}

std::string report_csv(const TicketReport& report) {
  TicketReport sorted = report;
  sorted.sort();
  std::ostringstream out;
  out << "# " << kReportSchema << ",config=" << report.config_hash << '\n' << kColumns << '\n';
  for (const auto& r : sorted.records) {
    out << to_string(r.method) << ',' << r.source_task << ',' << r.target_task << ',' << to_string(r.regime) << ','
        << format_exact(r.sparsity) << ',' << format_exact(r.sparsity_all) << ',' << r.seed << ','
        << format_fixed(r.accuracy, 4) << ',' << format_fixed(r.dense_reference_accuracy, 4) << ','
        << format_exact(r.p) << ',' << (r.relaxed_verdict ? "true" : "false") << ',' << r.config_hash << ','
        << r.mask_hash << '\n';
  }
  return out.str();
}

TicketReport parse_report_csv(std::string_view text) {
  auto lines = lines_of(text);
  if (lines.size() < 2) throw IoError("report is missing its schema or column header");
  TicketReport report;
  report.config_hash = parse_preamble(lines[0], kReportSchema);
  if (lines[1] != kColumns) throw IoError("report column header does not match the v1 schema");
  for (std::size_t i = 2; i < lines.size(); ++i) {
    auto f = split(lines[i], ',');
    if (f.size() != 13) throw IoError("report row " + std::to_string(i + 1) + " has " + std::to_string(f.size()) +
                                      " fields, expected 13");
    TicketRecord r;
    r.method = method_from_string(f[0]);
    r.source_task = std::string(f[1]);
    r.target_task = std::string(f[2]);
    r.regime = regime_from_string(f[3]);
    r.sparsity = parse_double(f[4]);
    r.sparsity_all = parse_double(f[5]);
    r.seed = parse_u64(f[6]);
    r.accuracy = parse_double(f[7]);
    r.dense_reference_accuracy = parse_double(f[8]);
    r.p = parse_double(f[9]);
    if (f[10] != "true" && f[10] != "false") throw IoError("report row " + std::to_string(i + 1) + ": bad verdict");
    r.relaxed_verdict = f[10] == "true";
    r.config_hash = std::string(f[11]);
    r.mask_hash = std::string(f[12]);
    report.records.push_back(std::move(r));
  }
  return report;
}

std::string report_json(const TicketReport& report) {
  TicketReport sorted = report;
  sorted.sort();
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["config_hash"] = report.config_hash;
  j["records"] = nlohmann::json::array();
  for (const auto& r : sorted.records) j["records"].push_back(record_json(r));
  j["aggregates"] = nlohmann::json::array();
  for (const auto& a : sorted.aggregates()) {
    j["aggregates"].push_back({{"method", to_string(a.method)},
                               {"source_task", a.source_task},
                               {"target_task", a.target_task},
                               {"regime", to_string(a.regime)},
                               {"sparsity", a.sparsity},
                               {"n", a.n},
                               {"mean", a.mean},
                               {"stddev", a.stddev},
                               {"dense_mean", a.dense_mean},
                               {"relaxed_on_mean", a.relaxed_on_mean}});
  }
  return j.dump(2) + "\n";
}

std::string overlap_csv(const OverlapMatrix& m) {
  std::ostringstream out;
  out << "# " << kOverlapSchema << ",config=" << m.config_hash << '\n' << "mask";
  for (const auto& l : m.labels) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    out << m.labels[i];
    for (double v : m.cells[i]) out << ',' << format_fixed(v, 4);
    out << '\n';
  }
  return out.str();
}

OverlapMatrix parse_overlap_csv(std::string_view text) {
  auto lines = lines_of(text);
  if (lines.size() < 2) throw IoError("overlap table is missing its schema or header");
  OverlapMatrix m;
  m.config_hash = parse_preamble(lines[0], kOverlapSchema);
  auto header = split(lines[1], ',');
  if (header.empty() || header[0] != "mask") throw IoError("overlap header must start with 'mask'");
  for (std::size_t i = 1; i < header.size(); ++i) m.labels.emplace_back(header[i]);
  if (lines.size() != m.labels.size() + 2) throw IoError("overlap table is not square");
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    auto f = split(lines[i + 2], ',');
    if (f.size() != m.labels.size() + 1 || f[0] != m.labels[i]) throw IoError("overlap row " + std::to_string(i) + " is malformed");
    std::vector<double> row;
    for (std::size_t j = 1; j < f.size(); ++j) row.push_back(parse_double(f[j]));
    m.cells.push_back(std::move(row));
  }
  return m;
}

std::string overlap_json(const OverlapMatrix& m) {
  nlohmann::json j;
  j["schema"] = kOverlapSchema;
  j["config_hash"] = m.config_hash;
  j["labels"] = m.labels;
  j["cells"] = m.cells;
  return j.dump(2) + "\n";
}

void report_emit(const TicketReport& report, const std::filesystem::path& stem) {
  write_file_atomic(std::filesystem::path(stem).concat(".csv"), report_csv(report));
  write_file_atomic(std::filesystem::path(stem).concat(".json"), report_json(report));
}

void report_emit(const OverlapMatrix& m, const std::filesystem::path& stem) {
  write_file_atomic(std::filesystem::path(stem).concat(".csv"), overlap_csv(m));
  write_file_atomic(std::filesystem::path(stem).concat(".json"), overlap_json(m));
}

}  // namespace ticketforge

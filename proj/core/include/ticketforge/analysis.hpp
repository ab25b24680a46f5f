#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ticketforge/mask.hpp"

namespace ticketforge {

/// True iff ticket_acc >= (p / 100) * full_acc.
bool relaxed_winning(double ticket_acc, double full_acc, double p);
double relaxed_threshold(double full_acc, double p);

/// 100 * |kept in both| / |kept in either|; 100 when neither keeps anything.
/// MaskError on a layout mismatch.
double overlap_ratio(const Mask& a, const Mask& b);

struct OverlapMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<double>> cells;
  std::string config_hash;
};

/// Pairwise overlap rounded to 4 decimals; MaskError unless every mask has the same layout and the
/// same number of pruned weights.
OverlapMatrix overlap_matrix(const std::vector<std::string>& labels, const std::vector<Mask>& masks);

enum class Method { imp, random, shuffled_init, textonly_init, pretext_imp, adv_imp };
std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

/// Training objective used when the ticket was re-trained.
enum class Regime { standard, adversarial };
std::string_view to_string(Regime r);
Regime regime_from_string(std::string_view s);

/// Round to 4 decimals so CSV text and the in-memory value agree exactly.
double quantize_accuracy(double acc);

struct TicketRecord {
  std::string source_task;
  std::string target_task;
  Method method = Method::imp;
  Regime regime = Regime::standard;
  double sparsity = 0.0;      // over the prunable set
  double sparsity_all = 0.0;  // over every parameter of the evaluated model
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double dense_reference_accuracy = 0.0;
  double p = 99.0;
  bool relaxed_verdict = false;
  std::string config_hash;
  std::string mask_hash;

  /// Sort key: method, source, target, regime, sparsity, seed.
  bool operator<(const TicketRecord& other) const;
  bool operator==(const TicketRecord&) const = default;
};

/// Builds a record with quantized accuracies and a consistent verdict.
TicketRecord make_record(std::string source, std::string target, Method method, Regime regime, double sparsity,
                         double sparsity_all, std::uint64_t seed, double accuracy, double dense_accuracy,
                         double p, std::string config_hash, std::string mask_hash);

struct Aggregate {
  std::string source_task;
  std::string target_task;
  Method method = Method::imp;
  Regime regime = Regime::standard;
  double sparsity = 0.0;
  std::size_t n = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single seed
  double dense_mean = 0.0;
  bool relaxed_on_mean = false;
};

struct TicketReport {
  std::vector<TicketRecord> records;
  std::string config_hash;

  void add(TicketRecord r) { records.push_back(std::move(r)); }
  void sort();
  /// Mean and spread across seeds per (method, source, target, regime, sparsity).
  std::vector<Aggregate> aggregates() const;
  std::vector<TicketRecord> select(const std::function<bool(const TicketRecord&)>& pred) const;
};

double mean_of(const std::vector<double>& xs);
double stddev_of(const std::vector<double>& xs);

// ---- persistence -----------------------------------------------------------

inline constexpr std::string_view kReportSchema = "ticket-forge-report v1";
inline constexpr std::string_view kOverlapSchema = "ticket-forge-overlap v1";

/// CSV: a "# schema, config hash" line, a column header, then rows sorted by key.
std::string report_csv(const TicketReport& report);
TicketReport parse_report_csv(std::string_view text);
/// JSON summary with the same records plus per-cell aggregates.
std::string report_json(const TicketReport& report);

std::string overlap_csv(const OverlapMatrix& m);
OverlapMatrix parse_overlap_csv(std::string_view text);
std::string overlap_json(const OverlapMatrix& m);

/// Writes <stem>.csv and <stem>.json atomically.
void report_emit(const TicketReport& report, const std::filesystem::path& stem);
void report_emit(const OverlapMatrix& m, const std::filesystem::path& stem);

/// Locale-independent fixed-point formatting.
std::string format_fixed(double v, int decimals);
/// Shortest text that parses back to the same double.
std::string format_exact(double v);
double parse_double(std::string_view s);

}  // namespace ticketforge

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ticketforge/analysis.hpp"
#include "ticketforge/config.hpp"
#include "ticketforge/pruning.hpp"

namespace ticketforge {

enum class Command { find, eval, transfer, sweep, overlap, adv_find, adv_eval };
std::string_view to_string(Command c);
Command command_from_string(std::string_view s);

/// Starting point a ticket is re-trained from.
enum class InitKind { pretrained, textonly, shuffled };

// Lazily computed, cached intermediate results for one configuration: data
// sets, pretrained trunks, IMP runs and ticket evaluations. Everything is a
// pure function of (config, seed), so caching never changes a result.
class Lab {
 public:
  explicit Lab(RunConfig cfg, std::ostream* log = nullptr);

  const RunConfig& config() const { return cfg_; }
  const std::string& hash() const { return hash_; }

  const TaskDataset& train_set(const std::string& task, std::uint64_t seed);
  const TaskDataset& dev_set(const std::string& task, std::uint64_t seed);
  const TaskDataset& corpus(std::uint64_t seed);

  /// Pretrained on the full pretext objective.
  const ParamStore& theta0(std::uint64_t seed);
  /// Pretrained on masked tokens only, images blanked.
  const ParamStore& theta0_textonly(std::uint64_t seed);
  /// theta0 with every prunable tensor shuffled in place.
  const ParamStore& theta0_shuffled(std::uint64_t seed);
  const ParamStore& init(InitKind kind, std::uint64_t seed);

  /// IMP on a task (`source` = task id) or the pretext corpus ("pretext").
  const ImpResult& imp_run(const std::string& source, std::uint64_t seed, InitKind kind = InitKind::pretrained);
  /// IMP under the adversarial objective.
  const ImpResult& adv_imp_run(const std::string& task, std::uint64_t seed);
  /// Mask after the round that reaches `sparsity`.
  const Mask& imp_mask(const std::string& source, std::uint64_t seed, double sparsity);
  const Mask& adv_imp_mask(const std::string& task, std::uint64_t seed, double sparsity);
  /// Random mask with `zeros` pruned weights.
  Mask random_mask(std::size_t zeros, std::uint64_t seed);
  /// Pruned-weight count of any IMP mask after the round reaching `sparsity`.
  std::size_t imp_zero_count(double sparsity);

  /// Re-train `mask` on `task` from the chosen start and return dev accuracy.
  double evaluate(const Mask& mask, InitKind kind, const std::string& task, std::uint64_t seed,
                  Regime regime = Regime::standard);
  double dense_accuracy(const std::string& task, std::uint64_t seed, Regime regime = Regime::standard);

  /// Record for one evaluated cell, with provenance filled in.
  TicketRecord record(const std::string& source, const std::string& target, Method method, Regime regime,
                      const Mask& mask, InitKind kind, std::uint64_t seed);
  TicketRecord dense_record(const std::string& target, Method method, Regime regime, std::uint64_t seed);

  /// Persistence hooks for IMP runs, keyed by run label and seed.
  std::function<std::optional<ImpResult>(const std::string& label, std::uint64_t seed)> load_imp;
  std::function<void(const std::string& label, std::uint64_t seed, const ImpResult&)> save_imp;

  /// Number of ticket trainings performed (cache misses).
  std::size_t trainings() const { return trainings_; }

 private:
  void note(const std::string& msg);
  const ImpResult& imp_cached(const std::string& label, std::uint64_t seed, const std::function<ImpResult()>& run);
  std::string mask_key(const Mask& mask);

  RunConfig cfg_;
  std::string hash_;
  std::ostream* log_;
  std::map<std::pair<std::string, std::uint64_t>, TaskDataset> train_, dev_;
  std::map<std::uint64_t, TaskDataset> corpus_;
  std::map<std::pair<int, std::uint64_t>, ParamStore> inits_;
  std::map<std::pair<std::string, std::uint64_t>, ImpResult> imps_;
  std::map<std::string, double> evals_;
  std::size_t trainings_ = 0;
};

struct RunOptions {
  std::filesystem::path out_root;
  bool resume = false;
  std::ostream* log = nullptr;
};

/// Output root: explicit --out, then config output_dir, then the
/// TICKET_FORGE_OUT environment variable, then ./ticket-forge-out.
std::filesystem::path resolve_output_root(const std::optional<std::filesystem::path>& cli_out,
                                          const RunConfig& cfg);

/// Runs one subcommand and writes its artifacts under
/// <out_root>/<config hash>/<command>/. Returns that directory. Refuses to
/// touch an existing directory unless resume is set; with resume, finished
/// IMP runs are reloaded and files are only written when absent (an existing
/// file with different bytes is an IoError).
std::filesystem::path run(Command command, const RunConfig& cfg, const RunOptions& options);

}  // namespace ticketforge

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ticketforge/adversarial.hpp"
#include "ticketforge/data.hpp"
#include "ticketforge/model.hpp"
#include "ticketforge/pruning.hpp"
#include "ticketforge/train.hpp"

namespace ticketforge {

struct DataConfig {
  std::size_t train_size = 2000;
  std::size_t dev_size = 1000;
  std::size_t pretext_size = 4000;
  bool operator==(const DataConfig&) const = default;
};

// Everything a run depends on. Every field has a default, and the echo lists
// all of them.
struct RunConfig {
  ArchSpec arch;
  std::vector<TaskSpec> tasks = default_suite();
  /// Mask sources for `transfer`: task ids from `tasks` or "pretext".
  std::vector<std::string> sources;
  DataConfig data;
  TrainBudget pretrain{800, 16, 0.1, "sgd"};
  TrainBudget budget{400, 16, 0.1, "sgd"};
  PruneConfig prune;
  /// Steps per pretext IMP round; unset means 10% of pretrain.steps.
  std::optional<int> pretext_steps_per_round;
  /// Sparsity grid for eval / transfer / overlap (each maps to an IMP round).
  std::vector<double> sparsities{0.5, 0.6};
  /// Grid for `sweep`.
  std::vector<double> sweep_sparsities{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  double relaxed_p = 99.0;
  std::optional<AdvConfig> adv;
  /// Tasks used by adv-find / adv-eval; empty means the first three tasks.
  std::vector<std::string> adv_tasks;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir;

  void validate() const;
  /// Resolved views of the optional fields.
  std::vector<std::string> resolved_sources() const;
  std::vector<std::string> resolved_adv_tasks() const;
  AdvConfig resolved_adv() const { return adv.value_or(AdvConfig{}); }
  int resolved_pretext_steps() const;
  /// IMP round whose mask reaches `sparsity` under the prune config.
  int round_for(double sparsity) const;
  const TaskSpec& task(std::string_view id) const;
};

/// Strict parse: unknown keys and out-of-range values raise ConfigError
/// naming the field.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);

/// Complete JSON echo with every default resolved.
std::string echo_config(const RunConfig& cfg);
/// Hash of the canonical echo without output_dir; independent of key order.
std::string config_hash(const RunConfig& cfg);

}  // namespace ticketforge

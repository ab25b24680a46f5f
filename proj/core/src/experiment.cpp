#include "ticketforge/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ticketforge/adversarial.hpp"
#include "ticketforge/error.hpp"
#include "ticketforge/io.hpp"
#include "ticketforge/rng.hpp"

namespace ticketforge {

namespace fs = std::filesystem;

std::string_view to_string(Command c) {
  switch (c) {
    case Command::find: return "find";
    case Command::eval: return "eval";
    case Command::transfer: return "transfer";
    case Command::sweep: return "sweep";
    case Command::overlap: return "overlap";
    case Command::adv_find: return "adv-find";
    case Command::adv_eval: return "adv-eval";
  }
  return "?";
}

Command command_from_string(std::string_view s) {
  for (Command c : {Command::find, Command::eval, Command::transfer, Command::sweep, Command::overlap,
                    Command::adv_find, Command::adv_eval}) {
    if (to_string(c) == s) return c;
  }
  throw ConfigError("command: unknown subcommand '" + std::string(s) + "'");
}

namespace {

const char* kind_name(InitKind k) {
  switch (k) {
    case InitKind::pretrained: return "pretrained";
    case InitKind::textonly: return "textonly";
    case InitKind::shuffled: return "shuffled";
  }
  return "?";
}

std::string adv_label(const std::string& task) { return task + "@adv"; }

}  // namespace

// ---- Lab -------------------------------------------------------------------

Lab::Lab(RunConfig cfg, std::ostream* log) : cfg_(std::move(cfg)), hash_(config_hash(cfg_)), log_(log) {
  cfg_.validate();
}

void Lab::note(const std::string& msg) {
  if (log_) *log_ << "[ticket-forge] " << msg << std::endl;
}

const TaskDataset& Lab::train_set(const std::string& task, std::uint64_t seed) {
  auto key = std::make_pair(task, seed);
  if (auto it = train_.find(key); it != train_.end()) return it->second;
  return train_
      .emplace(key, gen_task(cfg_.task(task), substream(seed, "data"), cfg_.data.train_size, Split::train,
                             cfg_.arch.data_shape()))
      .first->second;
}

const TaskDataset& Lab::dev_set(const std::string& task, std::uint64_t seed) {
  auto key = std::make_pair(task, seed);
  if (auto it = dev_.find(key); it != dev_.end()) return it->second;
  return dev_
      .emplace(key, gen_task(cfg_.task(task), substream(seed, "data"), cfg_.data.dev_size, Split::dev,
                             cfg_.arch.data_shape()))
      .first->second;
}

const TaskDataset& Lab::corpus(std::uint64_t seed) {
  if (auto it = corpus_.find(seed); it != corpus_.end()) return it->second;
  return corpus_
      .emplace(seed, gen_pretrain_corpus(substream(seed, "pretext_data"), cfg_.data.pretext_size,
                                         cfg_.arch.data_shape()))
      .first->second;
}

const ParamStore& Lab::init(InitKind kind, std::uint64_t seed) {
  auto key = std::make_pair(static_cast<int>(kind), seed);
  if (auto it = inits_.find(key); it != inits_.end()) return it->second;
  ParamStore p;
  switch (kind) {
    case InitKind::pretrained:
      note("pretraining seed " + std::to_string(seed));
      p = pretrain(cfg_.arch, corpus(seed), cfg_.pretrain, substream(seed, "pretrain"));
      break;
    case InitKind::textonly:
      note("text-only pretraining seed " + std::to_string(seed));
      p = pretrain(cfg_.arch, corpus(seed), cfg_.pretrain, substream(seed, "pretrain"), true);
      break;
    case InitKind::shuffled:
      p = shuffle_weights_within_layer(init(InitKind::pretrained, seed), seed);
      break;
  }
  return inits_.emplace(key, std::move(p)).first->second;
}

const ParamStore& Lab::theta0(std::uint64_t seed) { return init(InitKind::pretrained, seed); }
const ParamStore& Lab::theta0_textonly(std::uint64_t seed) { return init(InitKind::textonly, seed); }
const ParamStore& Lab::theta0_shuffled(std::uint64_t seed) { return init(InitKind::shuffled, seed); }

std::string Lab::mask_key(const Mask& mask) { return hash_hex(serialize_mask(mask)); }

const ImpResult& Lab::imp_cached(const std::string& label, std::uint64_t seed,
                                 const std::function<ImpResult()>& run_imp) {
  auto key = std::make_pair(label, seed);
  if (auto it = imps_.find(key); it != imps_.end()) return it->second;
  std::optional<ImpResult> loaded;
  if (load_imp) loaded = load_imp(label, seed);
  if (loaded) {
    note("reusing IMP " + label + " seed " + std::to_string(seed));
  } else {
    note("IMP " + label + " seed " + std::to_string(seed));
    loaded = run_imp();
    if (save_imp) save_imp(label, seed, *loaded);
  }
  return imps_.emplace(key, std::move(*loaded)).first->second;
}

const ImpResult& Lab::imp_run(const std::string& source, std::uint64_t seed, InitKind kind) {
  const std::string label = kind == InitKind::pretrained ? source : source + "@" + kind_name(kind);
  const bool pretext = source == "pretext";
  const ImpResult& r = imp_cached(label, seed, [&] {
    ImpSetup setup;
    setup.arch = cfg_.arch;
    setup.budget = cfg_.budget;
    setup.tag = hash_;
    PruneConfig pc = cfg_.prune;
    if (pretext) {
      setup.task = TaskSpec::pretext();
      setup.init = init(kind, seed);
      setup.train = &corpus(seed);
      setup.budget = cfg_.pretrain;
      pc.steps_per_round = cfg_.resolved_pretext_steps();
      pc.rewind_step = std::min(pc.rewind_step, *pc.steps_per_round);
      return imp(setup, pc, substream(seed, "pretext_imp"));
    }
    setup.task = cfg_.task(source);
    setup.init = attach_fresh_head(init(kind, seed), cfg_.arch, setup.task, seed);
    setup.train = &train_set(source, seed);
    setup.dev = &dev_set(source, seed);
    return imp(setup, pc, seed);
  });
  // With rewinding to step 0 and a full budget per round, round k trains
  // exactly what evaluate() would train for mask k.
  if (!pretext && cfg_.prune.rewind_step == 0 && cfg_.prune.steps_per_round.value_or(cfg_.budget.steps) == cfg_.budget.steps) {
    for (std::size_t k = 0; k < r.round_accuracy.size(); ++k) {
      const std::string key = mask_key(r.round_masks[k]) + "|" + kind_name(kind) + "|" + source + "|" +
                              std::to_string(seed) + "|standard";
      evals_.emplace(key, r.round_accuracy[k]);
    }
  }
  return r;
}

const ImpResult& Lab::adv_imp_run(const std::string& task, std::uint64_t seed) {
  const ImpResult& r = imp_cached(adv_label(task), seed, [&] {
    ImpSetup setup;
    setup.arch = cfg_.arch;
    setup.budget = cfg_.budget;
    setup.tag = hash_;
    setup.task = cfg_.task(task);
    setup.init = attach_fresh_head(theta0(seed), cfg_.arch, setup.task, seed);
    setup.train = &train_set(task, seed);
    setup.dev = &dev_set(task, seed);
    setup.loss = adversarial_loss(cfg_.resolved_adv());
    return imp(setup, cfg_.prune, seed);
  });
  if (cfg_.prune.rewind_step == 0 && cfg_.prune.steps_per_round.value_or(cfg_.budget.steps) == cfg_.budget.steps) {
    for (std::size_t k = 0; k < r.round_accuracy.size(); ++k) {
      evals_.emplace(mask_key(r.round_masks[k]) + "|pretrained|" + task + "|" + std::to_string(seed) + "|adversarial",
                     r.round_accuracy[k]);
    }
  }
  return r;
}

const Mask& Lab::imp_mask(const std::string& source, std::uint64_t seed, double sparsity) {
  return imp_run(source, seed).round_masks.at(static_cast<std::size_t>(cfg_.round_for(sparsity)));
}

const Mask& Lab::adv_imp_mask(const std::string& task, std::uint64_t seed, double sparsity) {
  return adv_imp_run(task, seed).round_masks.at(static_cast<std::size_t>(cfg_.round_for(sparsity)));
}

std::size_t Lab::imp_zero_count(double sparsity) {
  const std::size_t total = prunable_weight_count(cfg_.arch);
  std::size_t kept = total;
  for (int k = 0; k < cfg_.round_for(sparsity); ++k) kept -= prune_count(cfg_.prune.rate_per_round, kept);
  return total - kept;
}

Mask Lab::random_mask(std::size_t zeros, std::uint64_t seed) {
  return random_prune_count(prunable_layout(theta0(seed)), zeros, substream(seed, "random"));
}

double Lab::evaluate(const Mask& mask, InitKind kind, const std::string& task, std::uint64_t seed, Regime regime) {
  const std::string key = mask_key(mask) + "|" + kind_name(kind) + "|" + task + "|" + std::to_string(seed) + "|" +
                          std::string(to_string(regime));
  if (auto it = evals_.find(key); it != evals_.end()) return it->second;
  LossBuilder loss;
  if (regime == Regime::adversarial) loss = adversarial_loss(cfg_.resolved_adv());
  const TicketEval ev = evaluate_ticket(mask, init(kind, seed), cfg_.arch, cfg_.task(task), train_set(task, seed),
                                        dev_set(task, seed), cfg_.budget, seed, loss);
  ++trainings_;
  return evals_.emplace(key, ev.accuracy).first->second;
}

double Lab::dense_accuracy(const std::string& task, std::uint64_t seed, Regime regime) {
  return evaluate(Mask::ones(theta0(seed)), InitKind::pretrained, task, seed, regime);
}

TicketRecord Lab::record(const std::string& source, const std::string& target, Method method, Regime regime,
                         const Mask& mask, InitKind kind, std::uint64_t seed) {
  const double acc = evaluate(mask, kind, target, seed, regime);
  const double dense = dense_accuracy(target, seed, regime);
  const ParamStore model = attach_fresh_head(theta0(seed), cfg_.arch, cfg_.task(target), seed);
  return make_record(source, target, method, regime, mask.sparsity(), mask.sparsity_over(model), seed, acc, dense,
                     cfg_.relaxed_p, hash_, hash_hex(serialize_mask(mask, hash_)));
}

TicketRecord Lab::dense_record(const std::string& target, Method method, Regime regime, std::uint64_t seed) {
  return record("dense", target, method, regime, Mask::ones(theta0(seed)), InitKind::pretrained, seed);
}

// ---- command runner --------------------------------------------------------

fs::path resolve_output_root(const std::optional<fs::path>& cli_out, const RunConfig& cfg) {
  if (cli_out) return *cli_out;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("TICKET_FORGE_OUT"); env && *env) return env;
  return "ticket-forge-out";
}

namespace {

// Writes files below one directory without ever replacing different content.
class ArtifactDir {
 public:
  explicit ArtifactDir(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }

  void put(const fs::path& rel, std::span<const std::uint8_t> bytes) const {
    const fs::path p = root_ / rel;
    if (fs::exists(p)) {
      const Bytes old = read_file(p);
      if (!std::equal(old.begin(), old.end(), bytes.begin(), bytes.end())) {
        throw IoError("refusing to overwrite " + p.string() + " with different content");
      }
      return;
    }
    fs::create_directories(p.parent_path());
    write_file_atomic(p, bytes);
  }

  void put(const fs::path& rel, std::string_view text) const {
    put(rel, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }

 private:
  fs::path root_;
};

std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::string sparsity_tag(double s) { return std::to_string(static_cast<int>(std::lround(s * 100.0))); }

void save_imp_result(const ArtifactDir& dir, const std::string& label, std::uint64_t seed, const ImpResult& r,
                     const std::string& tag) {
  const fs::path base = fs::path(label) / seed_dir(seed);
  nlohmann::json j;
  j["rounds"] = r.round_masks.size() - 1;
  j["round_accuracy"] = r.round_accuracy;
  std::vector<double> sp;
  for (const auto& m : r.round_masks) sp.push_back(m.sparsity());
  j["round_sparsity"] = sp;
  j["checkpoints"] = r.checkpoints.steps();
  for (std::size_t k = 1; k < r.round_masks.size(); ++k) {
    dir.put(base / ("round" + std::to_string(k) + ".tfmask"), serialize_mask(r.round_masks[k], tag));
  }
  for (int step : r.checkpoints.steps()) {
    dir.put(base / ("checkpoint_step" + std::to_string(step) + ".tfparams"), r.checkpoints.bytes(step));
  }
  dir.put(base / "mask.tfmask", serialize_mask(r.mask, tag));
  // Written last: its presence marks the run as complete.
  dir.put(base / "imp.json", j.dump(2) + "\n");
}

std::optional<ImpResult> load_imp_result(const fs::path& root, const std::string& label, std::uint64_t seed,
                                         const std::string& tag) {
  const fs::path base = root / label / seed_dir(seed);
  if (!fs::exists(base / "imp.json")) return std::nullopt;
  const Bytes jb = read_file(base / "imp.json");
  const auto j = nlohmann::json::parse(jb.begin(), jb.end());
  ImpResult r;
  r.round_accuracy = j.at("round_accuracy").get<std::vector<double>>();
  const std::size_t rounds = j.at("rounds").get<std::size_t>();
  r.checkpoints = CheckpointStore(tag);
  for (int step : j.at("checkpoints").get<std::vector<int>>()) {
    std::string got;
    const Bytes b = read_file(base / ("checkpoint_step" + std::to_string(step) + ".tfparams"));
    r.checkpoints.put(step, deserialize_params(b, &got));
    if (got != normalize_tag(tag)) throw IoError("checkpoint in " + base.string() + " belongs to another config");
  }
  r.round_masks.push_back(Mask::ones(r.checkpoints.get(0)));
  for (std::size_t k = 1; k <= rounds; ++k) {
    std::string got;
    r.round_masks.push_back(deserialize_mask(read_file(base / ("round" + std::to_string(k) + ".tfmask")), &got));
    if (got != normalize_tag(tag)) throw IoError("mask in " + base.string() + " belongs to another config");
  }
  r.mask = r.round_masks.back();
  return r;
}

std::string summary_table(const TicketReport& report) {
  std::ostringstream out;
  out << "| method | source | target | regime | sparsity | n | mean | std | dense | relaxed |\n"
      << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& a : report.aggregates()) {
    out << "| " << to_string(a.method) << " | " << a.source_task << " | " << a.target_task << " | "
        << to_string(a.regime) << " | " << format_fixed(a.sparsity, 4) << " | " << a.n << " | "
        << format_fixed(a.mean, 2) << " | " << format_fixed(a.stddev, 2) << " | " << format_fixed(a.dense_mean, 2)
        << " | " << (a.relaxed_on_mean ? "yes" : "no") << " |\n";
  }
  return out.str();
}

void emit_report(const ArtifactDir& dir, const std::string& stem, TicketReport report) {
  report.sort();
  dir.put(stem + ".csv", report_csv(report));
  dir.put(stem + ".json", report_json(report));
  dir.put(stem + ".md", summary_table(report));
}

}  // namespace

fs::path run(Command command, const RunConfig& cfg, const RunOptions& options) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  const fs::path base = options.out_root / hash;
  const ArtifactDir dir(base / std::string(to_string(command)));
  if (fs::exists(dir.root()) && !options.resume) {
    const bool done = fs::exists(dir.root() / "DONE");
    throw StateError(std::string(done ? "completed" : "partial") + " run found in " + dir.root().string() +
                     "; pass --resume to reuse it");
  }
  fs::create_directories(dir.root());
  dir.put("config.json", echo_config(cfg));
  for (const auto& w : cfg.resolved_adv().warnings()) {
    if (options.log && (command == Command::adv_find || command == Command::adv_eval)) {
      *options.log << "[ticket-forge] warning: " << w << std::endl;
    }
  }

  Lab lab(cfg, options.log);
  const ArtifactDir find_dir(base / "find");
  const ArtifactDir adv_dir(base / "adv-find");
  lab.load_imp = [&](const std::string& label, std::uint64_t seed) -> std::optional<ImpResult> {
    const bool adv = label.size() > 4 && label.substr(label.size() - 4) == "@adv";
    const fs::path root = adv ? adv_dir.root() : find_dir.root();
    // The running command only trusts its own directory when resuming.
    if ((command == Command::find || command == Command::adv_find) && !options.resume) return std::nullopt;
    return load_imp_result(root, label, seed, hash);
  };
  if (command == Command::find || command == Command::adv_find) {
    lab.save_imp = [&](const std::string& label, std::uint64_t seed, const ImpResult& r) {
      save_imp_result(dir, label, seed, r, hash);
    };
  }

  const auto& seeds = cfg.seeds;
  TicketReport report;
  report.config_hash = hash;
  switch (command) {
    case Command::find: {
      for (auto seed : seeds) dir.put("theta0_" + seed_dir(seed) + ".tfparams", serialize_params(lab.theta0(seed), hash));
      for (const auto& source : cfg.resolved_sources()) {
        for (auto seed : seeds) {
          const ImpResult& r = lab.imp_run(source, seed);
          if (source == "pretext") continue;
          for (const auto& m : r.round_masks) {
            report.add(lab.record(source, source, Method::imp, Regime::standard, m, InitKind::pretrained, seed));
          }
        }
      }
      emit_report(dir, "find_report", report);
      break;
    }
    case Command::eval: {
      for (const auto& t : cfg.tasks) {
        for (auto seed : seeds) {
          for (double s : cfg.sparsities) {
            const Mask& m = lab.imp_mask(t.task_id, seed, s);
            report.add(lab.record(t.task_id, t.task_id, Method::imp, Regime::standard, m, InitKind::pretrained, seed));
            report.add(lab.record("random", t.task_id, Method::random, Regime::standard,
                                  lab.random_mask(m.zeros(), seed), InitKind::pretrained, seed));
            report.add(lab.record(t.task_id, t.task_id, Method::shuffled_init, Regime::standard, m,
                                  InitKind::shuffled, seed));
            const Mask& mt = lab.imp_run(t.task_id, seed, InitKind::textonly)
                                 .round_masks.at(static_cast<std::size_t>(cfg.round_for(s)));
            report.add(lab.record(t.task_id, t.task_id, Method::textonly_init, Regime::standard, mt,
                                  InitKind::textonly, seed));
          }
        }
      }
      emit_report(dir, "eval_report", report);
      break;
    }
    case Command::transfer: {
      for (const auto& source : cfg.resolved_sources()) {
        const Method method = source == "pretext" ? Method::pretext_imp : Method::imp;
        for (const auto& t : cfg.tasks) {
          for (double s : cfg.sparsities) {
            for (auto seed : seeds) {
              report.add(lab.record(source, t.task_id, method, Regime::standard, lab.imp_mask(source, seed, s),
                                    InitKind::pretrained, seed));
            }
          }
        }
      }
      for (const auto& t : cfg.tasks) {
        for (double s : cfg.sparsities) {
          for (auto seed : seeds) {
            report.add(lab.record("random", t.task_id, Method::random, Regime::standard,
                                  lab.random_mask(lab.imp_zero_count(s), seed), InitKind::pretrained, seed));
          }
        }
      }
      emit_report(dir, "transfer_report", report);
      break;
    }
    case Command::sweep: {
      for (const auto& t : cfg.tasks) {
        for (auto seed : seeds) {
          for (Method m : {Method::imp, Method::pretext_imp, Method::random}) report.add(lab.dense_record(t.task_id, m, Regime::standard, seed));
          for (double s : cfg.sweep_sparsities) {
            report.add(lab.record(t.task_id, t.task_id, Method::imp, Regime::standard,
                                  lab.imp_mask(t.task_id, seed, s), InitKind::pretrained, seed));
            report.add(lab.record("pretext", t.task_id, Method::pretext_imp, Regime::standard,
                                  lab.imp_mask("pretext", seed, s), InitKind::pretrained, seed));
            report.add(lab.record("random", t.task_id, Method::random, Regime::standard,
                                  lab.random_mask(lab.imp_zero_count(s), seed), InitKind::pretrained, seed));
          }
        }
      }
      emit_report(dir, "sweep_report", report);
      break;
    }
    case Command::overlap: {
      const auto sources = cfg.resolved_sources();
      for (auto seed : seeds) {
        for (double s : cfg.sparsities) {
          std::vector<Mask> masks;
          for (const auto& src : sources) masks.push_back(lab.imp_mask(src, seed, s));
          OverlapMatrix m = overlap_matrix(sources, masks);
          m.config_hash = hash;
          const std::string stem = "overlap_s" + sparsity_tag(s) + "_" + seed_dir(seed);
          dir.put(stem + ".csv", overlap_csv(m));
          dir.put(stem + ".json", overlap_json(m));
        }
      }
      break;
    }
    case Command::adv_find: {
      for (const auto& task : cfg.resolved_adv_tasks()) {
        for (auto seed : seeds) {
          const ImpResult& r = lab.adv_imp_run(task, seed);
          for (std::size_t k = 0; k < r.round_accuracy.size(); ++k) {
            report.add(lab.record(task, task, Method::adv_imp, Regime::adversarial, r.round_masks[k],
                                  InitKind::pretrained, seed));
          }
        }
      }
      emit_report(dir, "adv_find_report", report);
      break;
    }
    case Command::adv_eval: {
      for (const auto& task : cfg.resolved_adv_tasks()) {
        for (auto seed : seeds) {
          report.add(lab.dense_record(task, Method::imp, Regime::standard, seed));
          report.add(lab.dense_record(task, Method::adv_imp, Regime::adversarial, seed));
          for (double s : cfg.sparsities) {
            report.add(lab.record(task, task, Method::imp, Regime::standard, lab.imp_mask(task, seed, s),
                                  InitKind::pretrained, seed));
            report.add(lab.record(task, task, Method::adv_imp, Regime::adversarial, lab.adv_imp_mask(task, seed, s),
                                  InitKind::pretrained, seed));
          }
        }
      }
      emit_report(dir, "adv_eval_report", report);
      break;
    }
  }
  dir.put("DONE", hash + "\n");
  return dir.root();
}

}  // namespace ticketforge

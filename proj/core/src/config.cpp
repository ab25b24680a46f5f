#include "ticketforge/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "ticketforge/error.hpp"
#include "ticketforge/io.hpp"

namespace ticketforge {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects the ones nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(name_or_root() + ": expected an object");
  }

  std::string field(std::string_view key) const { return path_.empty() ? std::string(key) : path_ + "." + std::string(key); }

  const json* get(std::string_view key) {
    seen_.insert(std::string(key));
    auto it = j_.find(std::string(key));
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(std::string_view key, T& out) {
    const json* v = get(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v->is_number_integer()) throw ConfigError(field(key) + ": expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v->is_number_integer() && !v->is_number_unsigned()) throw ConfigError(field(key) + ": must be non-negative");
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v->is_string()) throw ConfigError(field(key) + ": expected a string");
      }
      out = v->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  template <typename T>
  void read_optional(std::string_view key, std::optional<T>& out) {
    const json* v = get(key);
    if (!v || v->is_null()) {
      out.reset();
      return;
    }
    T value{};
    read(key, value);
    out = value;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
    }
  }

 private:
  std::string name_or_root() const { return path_.empty() ? "config" : path_; }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_arch(const json& j, ArchSpec& a) {
  Fields f(j, "arch");
  std::string family(to_string(a.family));
  f.read("family", family);
  const ArchSpec defaults = default_arch(family_from_string(family));
  a = defaults;
  f.read("layers", a.layers);
  f.read("hidden", a.hidden);
  f.read("heads", a.heads);
  f.read("ffn_mult", a.ffn_mult);
  f.read("txt_layers", a.txt_layers);
  f.read("img_layers", a.img_layers);
  f.read("cross_layers", a.cross_layers);
  f.read("img_seq_len", a.img_seq_len);
  f.read("txt_seq_len", a.txt_seq_len);
  f.read("vocab_size", a.vocab_size);
  f.read("img_feat_dim", a.img_feat_dim);
  f.finish();
}

void read_budget(const json& j, const std::string& path, TrainBudget& b) {
  Fields f(j, path);
  f.read("steps", b.steps);
  f.read("batch_size", b.batch_size);
  f.read("lr", b.lr);
  f.read("optimizer", b.optimizer);
  f.finish();
}

Relation relation_from_string(std::string_view s) {
  for (Relation r : {Relation::attribute_query, Relation::caption_match, Relation::count, Relation::shape_query,
                     Relation::exists, Relation::same_color, Relation::locate}) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("tasks.relation: unknown relation '" + std::string(s) + "'");
}

TaskSpec read_task(const json& j, std::size_t index) {
  if (j.is_string()) return find_task(j.get<std::string>());
  const std::string path = "tasks[" + std::to_string(index) + "]";
  Fields f(j, path);
  std::string id;
  f.read("task_id", id);
  TaskSpec t;
  if (id.empty()) throw ConfigError(path + ".task_id: required");
  try {
    t = find_task(id);
  } catch (const ConfigError&) {
    t.task_id = id;
    t.relation = Relation::caption_match;
  }
  std::string relation(to_string(t.relation));
  f.read("relation", relation);
  t.relation = relation_from_string(relation);
  f.read("class_count", t.class_count);
  f.read("difficulty", t.difficulty);
  f.finish();
  return t;
}

std::string format_sparsity(double s) {
  std::string out = std::to_string(s);
  while (out.size() > 1 && out.back() == '0') out.pop_back();
  return out;
}

// TrainBudget::validate names fields "budget.*"; re-root them for another block.
void validate_budget(const TrainBudget& b, std::string_view root) {
  try {
    b.validate();
  } catch (const ConfigError& e) {
    std::string msg = e.what();
    if (msg.rfind("budget.", 0) == 0) msg = std::string(root) + msg.substr(6);
    throw ConfigError(msg);
  }
}

json arch_json(const ArchSpec& a) {
  return {{"family", to_string(a.family)}, {"layers", a.layers},           {"hidden", a.hidden},
          {"heads", a.heads},              {"ffn_mult", a.ffn_mult},       {"txt_layers", a.txt_layers},
          {"img_layers", a.img_layers},    {"cross_layers", a.cross_layers}, {"img_seq_len", a.img_seq_len},
          {"txt_seq_len", a.txt_seq_len},  {"vocab_size", a.vocab_size},   {"img_feat_dim", a.img_feat_dim}};
}

json budget_json(const TrainBudget& b) {
  return {{"steps", b.steps}, {"batch_size", b.batch_size}, {"lr", b.lr}, {"optimizer", b.optimizer}};
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json adv_json(const AdvConfig& a) {
  json targets = json::array();
  if (a.perturb_image) targets.push_back("image_features");
  if (a.perturb_text) targets.push_back("text_embeddings");
  return {{"epsilon", a.epsilon},     {"step_size", a.step_size},     {"pgd_steps", a.pgd_steps},
          {"kl_weight", a.kl_weight}, {"perturb_targets", targets},   {"alternate", a.alternate},
          {"full_kl_gradient", a.full_kl_gradient}};
}

json config_json(const RunConfig& c, bool with_output_dir) {
  json tasks = json::array();
  for (const auto& t : c.tasks) {
    tasks.push_back({{"task_id", t.task_id},
                     {"relation", to_string(t.relation)},
                     {"class_count", t.class_count},
                     {"difficulty", t.difficulty}});
  }
  json j = {{"arch", arch_json(c.arch)},
            {"tasks", tasks},
            {"sources", c.resolved_sources()},
            {"data",
             {{"train_size", c.data.train_size}, {"dev_size", c.data.dev_size}, {"pretext_size", c.data.pretext_size}}},
            {"pretrain", budget_json(c.pretrain)},
            {"budget", budget_json(c.budget)},
            {"prune",
             {{"rate_per_round", c.prune.rate_per_round},
              {"rounds", c.prune.resolved_rounds()},
              {"rewind_step", c.prune.rewind_step},
              {"steps_per_round", c.prune.steps_per_round.value_or(c.budget.steps)},
              {"target_sparsity", opt_json(c.prune.target_sparsity)},
              {"pretext_steps_per_round", c.resolved_pretext_steps()}}},
            {"sparsities", c.sparsities},
            {"sweep_sparsities", c.sweep_sparsities},
            {"relaxed_p", c.relaxed_p},
            {"adv", adv_json(c.resolved_adv())},
            {"adv_tasks", c.resolved_adv_tasks()},
            {"seeds", c.seeds}};
  if (with_output_dir) j["output_dir"] = c.output_dir;
  return j;
}

}  // namespace

void RunConfig::validate() const {
  arch.validate();
  if (tasks.empty()) throw ConfigError("tasks: at least one task required");
  std::set<std::string> ids;
  const DataShape shape = arch.data_shape();
  for (const auto& t : tasks) {
    t.validate();
    if (t.is_pretext()) throw ConfigError("tasks: 'pretext' is a mask source, not a target task");
    if (!ids.insert(t.task_id).second) throw ConfigError("tasks: duplicate task_id '" + t.task_id + "'");
    gen_task(t, 0, 1, Split::train, shape);
  }
  for (const auto& s : resolved_sources()) {
    if (s != "pretext" && !ids.contains(s)) throw ConfigError("sources: '" + s + "' is not one of the tasks");
  }
  for (const auto& s : resolved_adv_tasks()) {
    if (!ids.contains(s)) throw ConfigError("adv_tasks: '" + s + "' is not one of the tasks");
  }
  if (data.train_size == 0) throw ConfigError("data.train_size: must be positive");
  if (data.dev_size == 0) throw ConfigError("data.dev_size: must be positive");
  if (data.pretext_size == 0) throw ConfigError("data.pretext_size: must be positive");
  validate_budget(pretrain, "pretrain");
  validate_budget(budget, "budget");
  if (budget.steps <= 0) throw ConfigError("budget.steps: must be positive");
  prune.validate();
  if (prune.rewind_step > prune.steps_per_round.value_or(budget.steps)) {
    throw ConfigError("prune.rewind_step: exceeds the steps of a round");
  }
  if (pretext_steps_per_round && *pretext_steps_per_round <= 0) {
    throw ConfigError("prune.pretext_steps_per_round: must be positive");
  }
  const int rounds = prune.resolved_rounds();
  for (const auto* grid : {&sparsities, &sweep_sparsities}) {
    const char* name = grid == &sparsities ? "sparsities" : "sweep_sparsities";
    for (double s : *grid) {
      if (!(s > 0.0 && s < 1.0)) throw ConfigError(std::string(name) + ": values must lie in (0, 1)");
      const int k = PruneConfig::rounds_for(prune.rate_per_round, s);
      if (k > rounds) {
        throw ConfigError(std::string(name) + ": " + format_sparsity(s) + " needs " + std::to_string(k) +
                          " pruning rounds but prune.rounds resolves to " + std::to_string(rounds));
      }
    }
  }
  if (!(relaxed_p > 0.0 && relaxed_p <= 100.0)) throw ConfigError("relaxed_p: must lie in (0, 100]");
  if (adv) adv->validate();
  if (seeds.empty()) throw ConfigError("seeds: at least one seed required");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) throw ConfigError("seeds: duplicates are not allowed");
}

std::vector<std::string> RunConfig::resolved_sources() const {
  if (!sources.empty()) return sources;
  std::vector<std::string> out;
  for (const auto& t : tasks) out.push_back(t.task_id);
  out.emplace_back("pretext");
  return out;
}

std::vector<std::string> RunConfig::resolved_adv_tasks() const {
  if (!adv_tasks.empty()) return adv_tasks;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, tasks.size()); ++i) out.push_back(tasks[i].task_id);
  return out;
}

int RunConfig::resolved_pretext_steps() const {
  return pretext_steps_per_round.value_or(std::max(1, pretrain.steps / 10));
}

int RunConfig::round_for(double sparsity) const { return PruneConfig::rounds_for(prune.rate_per_round, sparsity); }

const TaskSpec& RunConfig::task(std::string_view id) const {
  for (const auto& t : tasks) {
    if (t.task_id == id) return t;
  }
  throw ConfigError("task: '" + std::string(id) + "' is not configured");
}

RunConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  RunConfig c;
  Fields f(j, "");
  if (const json* v = f.get("arch")) read_arch(*v, c.arch);
  if (const json* v = f.get("tasks")) {
    if (!v->is_array()) throw ConfigError("tasks: expected an array");
    c.tasks.clear();
    for (std::size_t i = 0; i < v->size(); ++i) c.tasks.push_back(read_task((*v)[i], i));
  }
  f.read("sources", c.sources);
  if (const json* v = f.get("data")) {
    Fields d(*v, "data");
    d.read("train_size", c.data.train_size);
    d.read("dev_size", c.data.dev_size);
    d.read("pretext_size", c.data.pretext_size);
    d.finish();
  }
  if (const json* v = f.get("pretrain")) read_budget(*v, "pretrain", c.pretrain);
  if (const json* v = f.get("budget")) read_budget(*v, "budget", c.budget);
  if (const json* v = f.get("prune")) {
    Fields p(*v, "prune");
    p.read("rate_per_round", c.prune.rate_per_round);
    p.read("rounds", c.prune.rounds);
    p.read("rewind_step", c.prune.rewind_step);
    p.read_optional("steps_per_round", c.prune.steps_per_round);
    p.read_optional("target_sparsity", c.prune.target_sparsity);
    p.read_optional("pretext_steps_per_round", c.pretext_steps_per_round);
    p.finish();
    if (c.prune.target_sparsity) c.prune.rounds = c.prune.resolved_rounds();
  }
  f.read("sparsities", c.sparsities);
  f.read("sweep_sparsities", c.sweep_sparsities);
  f.read("relaxed_p", c.relaxed_p);
  if (const json* v = f.get("adv"); v && !v->is_null()) {
    Fields a(*v, "adv");
    AdvConfig adv;
    a.read("epsilon", adv.epsilon);
    a.read("step_size", adv.step_size);
    a.read("pgd_steps", adv.pgd_steps);
    a.read("kl_weight", adv.kl_weight);
    if (const json* t = a.get("perturb_targets")) {
      if (!t->is_array()) throw ConfigError("adv.perturb_targets: expected an array");
      adv.perturb_image = adv.perturb_text = false;
      for (const auto& x : *t) {
        const std::string s = x.is_string() ? x.get<std::string>() : "";
        if (s == "image_features") {
          adv.perturb_image = true;
        } else if (s == "text_embeddings") {
          adv.perturb_text = true;
        } else {
          throw ConfigError("adv.perturb_targets: expected 'image_features' or 'text_embeddings'");
        }
      }
    }
    a.read("alternate", adv.alternate);
    a.read("full_kl_gradient", adv.full_kl_gradient);
    a.finish();
    c.adv = adv;
  }
  f.read("adv_tasks", c.adv_tasks);
  f.read("seeds", c.seeds);
  f.read("output_dir", c.output_dir);
  f.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  Bytes b;
  try {
    b = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()));
}

std::string echo_config(const RunConfig& cfg) { return config_json(cfg, true).dump(2) + "\n"; }

std::string config_hash(const RunConfig& cfg) { return hash_hex(config_json(cfg, false).dump()); }

}  // namespace ticketforge

#include "ticketforge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "ticketforge/error.hpp"

namespace ticketforge {

double relaxed_threshold(double full_acc, double p) { return p / 100.0 * full_acc; }

bool relaxed_winning(double ticket_acc, double full_acc, double p) {
  return ticket_acc >= relaxed_threshold(full_acc, p);
}

double overlap_ratio(const Mask& a, const Mask& b) {
  if (!a.same_layout(b)) throw MaskError("overlap_ratio: masks have different layouts");
  std::size_t both = 0, either = 0;
  for (std::size_t e = 0; e < a.entries().size(); ++e) {
    const auto& ka = a.entries()[e].keep;
    const auto& kb = b.entries()[e].keep;
    for (std::size_t i = 0; i < ka.size(); ++i) {
      both += ka[i] & kb[i];
      either += ka[i] | kb[i];
    }
  }
  if (either == 0) return 100.0;
  return 100.0 * static_cast<double>(both) / static_cast<double>(either);
}

OverlapMatrix overlap_matrix(const std::vector<std::string>& labels, const std::vector<Mask>& masks) {
  if (labels.size() != masks.size()) throw ConfigError("overlap: one label per mask required");
  for (std::size_t i = 1; i < masks.size(); ++i) {
    if (!masks[i].same_layout(masks[0])) {
      throw MaskError("overlap: mask '" + labels[i] + "' has a different layout from '" + labels[0] + "'");
    }
    if (masks[i].zeros() != masks[0].zeros()) {
      throw MaskError("overlap: mask '" + labels[i] + "' has sparsity " + std::to_string(masks[i].sparsity()) +
                      " but '" + labels[0] + "' has " + std::to_string(masks[0].sparsity()) +
                      "; compare masks at a common sparsity");
    }
  }
  OverlapMatrix m;
  m.labels = labels;
  m.cells.assign(masks.size(), std::vector<double>(masks.size(), 100.0));
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (std::size_t j = i + 1; j < masks.size(); ++j) {
      m.cells[i][j] = m.cells[j][i] = quantize_accuracy(overlap_ratio(masks[i], masks[j]));
    }
  }
  return m;
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::imp: return "imp";
    case Method::random: return "random";
    case Method::shuffled_init: return "shuffled_init";
    case Method::textonly_init: return "textonly_init";
    case Method::pretext_imp: return "pretext_imp";
    case Method::adv_imp: return "adv_imp";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  for (Method m : {Method::imp, Method::random, Method::shuffled_init, Method::textonly_init, Method::pretext_imp,
                   Method::adv_imp}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("method: unknown method '" + std::string(s) + "'");
}

std::string_view to_string(Regime r) { return r == Regime::standard ? "standard" : "adversarial"; }

Regime regime_from_string(std::string_view s) {
  if (s == "standard") return Regime::standard;
  if (s == "adversarial") return Regime::adversarial;
  throw ConfigError("regime: unknown regime '" + std::string(s) + "'");
}

double quantize_accuracy(double acc) { return std::round(acc * 1e4) / 1e4; }

namespace {

auto record_key(const TicketRecord& r) {
  return std::make_tuple(static_cast<int>(r.method), std::cref(r.source_task), std::cref(r.target_task),
                         static_cast<int>(r.regime), r.sparsity, r.seed);
}

}  // namespace

bool TicketRecord::operator<(const TicketRecord& other) const { return record_key(*this) < record_key(other); }

TicketRecord make_record(std::string source, std::string target, Method method, Regime regime, double sparsity,
                         double sparsity_all, std::uint64_t seed, double accuracy, double dense_accuracy,
                         double p, std::string config_hash, std::string mask_hash) {
  TicketRecord r;
  r.source_task = std::move(source);
  r.target_task = std::move(target);
  r.method = method;
  r.regime = regime;
  r.sparsity = sparsity;
  r.sparsity_all = sparsity_all;
  r.seed = seed;
  r.accuracy = quantize_accuracy(accuracy);
  r.dense_reference_accuracy = quantize_accuracy(dense_accuracy);
  r.p = p;
  r.relaxed_verdict = relaxed_winning(r.accuracy, r.dense_reference_accuracy, p);
  r.config_hash = std::move(config_hash);
  r.mask_hash = std::move(mask_hash);
  return r;
}

void TicketReport::sort() { std::stable_sort(records.begin(), records.end()); }

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double stddev_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

std::vector<Aggregate> TicketReport::aggregates() const {
  using Key = std::tuple<int, std::string, std::string, int, double>;
  std::map<Key, std::vector<const TicketRecord*>> groups;
  for (const auto& r : records) {
    groups[{static_cast<int>(r.method), r.source_task, r.target_task, static_cast<int>(r.regime), r.sparsity}]
        .push_back(&r);
  }
  std::vector<Aggregate> out;
  for (const auto& [key, rs] : groups) {
    std::vector<double> acc, dense;
    for (const auto* r : rs) {
      acc.push_back(r->accuracy);
      dense.push_back(r->dense_reference_accuracy);
    }
    Aggregate a;
    a.method = rs.front()->method;
    a.source_task = rs.front()->source_task;
    a.target_task = rs.front()->target_task;
    a.regime = rs.front()->regime;
    a.sparsity = rs.front()->sparsity;
    a.n = rs.size();
    a.mean = mean_of(acc);
    a.stddev = stddev_of(acc);
    a.dense_mean = mean_of(dense);
    a.relaxed_on_mean = relaxed_winning(a.mean, a.dense_mean, rs.front()->p);
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<TicketRecord> TicketReport::select(const std::function<bool(const TicketRecord&)>& pred) const {
  std::vector<TicketRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out), pred);
  return out;
}

}  // namespace ticketforge

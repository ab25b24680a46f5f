#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "ticketforge/io.hpp"
#include "ticketforge/tensor.hpp"

namespace ticketforge {

enum class ParamRole { trunk, head };

/// Task-specific parameters live under this prefix; everything else is trunk.
inline constexpr std::string_view kHeadPrefix = "head.";

// Named parameters split into the shared trunk (theta) and the task head
// (phi). Names iterate in sorted order, so flattening is deterministic. The
// prunable subset is every rank-2 trunk tensor: projections, feed-forward
// matrices and embedding tables. Biases and layer-norm vectors are rank 1.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    ParamRole role = ParamRole::trunk;
    bool prunable = false;
  };

  static ParamRole role_for(std::string_view name);
  static bool is_prunable(std::string_view name, const Shape& shape);

  void set(const std::string& name, Tensor value);
  void erase(const std::string& name) { entries_.erase(name); }

  bool contains(const std::string& name) const { return entries_.contains(name); }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Entry& entry(const std::string& name) const;

  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names() const;
  std::vector<std::string> trunk_names() const;
  std::vector<std::string> head_names() const;
  std::vector<std::string> prunable_names() const;

  std::size_t prunable_count() const;
  std::size_t trunk_count() const;
  std::size_t total_count() const;

  /// Copy restricted to trunk entries.
  ParamStore trunk() const;
  /// Copy restricted to head entries.
  ParamStore head() const;
  /// Replace every head entry with those of `heads`.
  void replace_head(const ParamStore& heads);

  bool bitwise_equal(const ParamStore& other) const;
  /// FNV-1a over the serialized bytes.
  std::string content_hash() const;

 private:
  std::map<std::string, Entry> entries_;
};

// Binary layout, little-endian:
//   magic "TFPARAMS" | u32 version | 16-byte provenance tag | u32 entry count
//   per entry: u32 name length | name bytes | u32 rank | u64 dims... | f64 payload
Bytes serialize_params(const ParamStore& params, std::string_view tag = {});
ParamStore deserialize_params(std::span<const std::uint8_t> bytes, std::string* tag = nullptr);

}  // namespace ticketforge

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ticketforge/io.hpp"
#include "ticketforge/params.hpp"
#include "ticketforge/tensor.hpp"

namespace ticketforge {

/// Names and shapes of the prunable tensors, in sorted name order.
using PrunableLayout = std::vector<std::pair<std::string, Shape>>;

PrunableLayout prunable_layout(const ParamStore& params);

// Binary keep/prune flags over the prunable subset of the trunk. A value of 1
// keeps the weight; 0 forces it to zero.
class Mask {
 public:
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<std::uint8_t> keep;
  };

  Mask() = default;
  static Mask ones(const PrunableLayout& layout);
  static Mask ones(const ParamStore& params) { return ones(prunable_layout(params)); }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  const Entry& entry(std::string_view name) const;
  Entry& entry(std::string_view name);
  bool contains(std::string_view name) const;

  PrunableLayout layout() const;
  bool layout_matches(const ParamStore& params) const;
  /// Throws MaskError naming the first mismatch.
  void check_layout(const ParamStore& params) const;
  bool same_layout(const Mask& other) const;

  std::size_t total() const;
  std::size_t zeros() const;
  std::size_t kept() const { return total() - zeros(); }
  /// zeros / total over the prunable set.
  double sparsity() const;
  /// zeros / (all parameters in `params`), the figure over the whole store.
  double sparsity_over(const ParamStore& params) const;

  /// 0/1 tensor for `name`, shaped like the parameter.
  Tensor as_tensor(std::string_view name) const;
  /// Zero every pruned position of `params` in place.
  void apply(ParamStore& params) const;

  bool operator==(const Mask& other) const;

 private:
  std::vector<Entry> entries_;
};

// Binary layout, little-endian:
//   magic "TFMASK01" | u32 version | 16-byte provenance tag | u32 entry count
//   per entry: u32 name length | name | u32 rank | u64 dims... |
//              bit-packed keep flags (LSB first, ceil(n/8) bytes) | u64 zero count
//   footer: u64 total zeros | u64 total | f64 sparsity
Bytes serialize_mask(const Mask& mask, std::string_view tag = {});
Mask deserialize_mask(std::span<const std::uint8_t> bytes, std::string* tag = nullptr);

}  // namespace ticketforge

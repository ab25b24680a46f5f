#include "ticketforge/mask.hpp"

#include <algorithm>
#include <cstring>

#include "ticketforge/error.hpp"

namespace ticketforge {

namespace {
constexpr std::string_view kMagic = "TFMASK01";
constexpr std::uint32_t kVersion = 1;
}  // namespace

PrunableLayout prunable_layout(const ParamStore& params) {
  PrunableLayout layout;
  for (const auto& [name, e] : params.entries()) {
    if (e.prunable) layout.emplace_back(name, e.value.shape());
  }
  return layout;
}

Mask Mask::ones(const PrunableLayout& layout) {
  Mask m;
  for (const auto& [name, shape] : layout) {
    m.entries_.push_back({name, shape, std::vector<std::uint8_t>(shape_numel(shape), 1)});
  }
  return m;
}

const Mask::Entry& Mask::entry(std::string_view name) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), name,
                             [](const Entry& e, std::string_view n) { return e.name < n; });
  if (it == entries_.end() || it->name != name) {
    throw MaskError("mask has no entry for '" + std::string(name) + "'");
  }
  return *it;
}

Mask::Entry& Mask::entry(std::string_view name) {
  return const_cast<Entry&>(static_cast<const Mask&>(*this).entry(name));
}

bool Mask::contains(std::string_view name) const {
  auto it = std::lower_bound(entries_.begin(), entries_.end(), name,
                             [](const Entry& e, std::string_view n) { return e.name < n; });
  return it != entries_.end() && it->name == name;
}

PrunableLayout Mask::layout() const {
  PrunableLayout out;
  for (const auto& e : entries_) out.emplace_back(e.name, e.shape);
  return out;
}

bool Mask::layout_matches(const ParamStore& params) const { return layout() == prunable_layout(params); }

void Mask::check_layout(const ParamStore& params) const {
  const PrunableLayout want = prunable_layout(params);
  if (want.size() != entries_.size()) {
    throw MaskError("mask covers " + std::to_string(entries_.size()) + " tensors but the store has " +
                    std::to_string(want.size()) + " prunable tensors");
  }
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].first != entries_[i].name) {
      throw MaskError("mask entry '" + entries_[i].name + "' where '" + want[i].first + "' expected");
    }
    if (want[i].second != entries_[i].shape) {
      throw MaskError("mask entry '" + entries_[i].name + "' has shape " + shape_str(entries_[i].shape) +
                      ", parameter has " + shape_str(want[i].second));
    }
  }
}

bool Mask::same_layout(const Mask& other) const { return layout() == other.layout(); }

std::size_t Mask::total() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.keep.size();
  return n;
}

std::size_t Mask::zeros() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(std::count(e.keep.begin(), e.keep.end(), 0));
  return n;
}

double Mask::sparsity() const {
  const std::size_t t = total();
  return t == 0 ? 0.0 : static_cast<double>(zeros()) / static_cast<double>(t);
}

double Mask::sparsity_over(const ParamStore& params) const {
  const std::size_t t = params.total_count();
  return t == 0 ? 0.0 : static_cast<double>(zeros()) / static_cast<double>(t);
}

Tensor Mask::as_tensor(std::string_view name) const {
  const Entry& e = entry(name);
  Tensor t(e.shape);
  for (std::size_t i = 0; i < e.keep.size(); ++i) t[i] = e.keep[i] ? 1.0 : 0.0;
  return t;
}

void Mask::apply(ParamStore& params) const {
  check_layout(params);
  for (const auto& e : entries_) {
    auto& v = params.at(e.name).values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!e.keep[i]) v[i] = 0.0;
    }
  }
}

bool Mask::operator==(const Mask& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.shape != b.shape || a.keep != b.keep) return false;
  }
  return true;
}

Bytes serialize_mask(const Mask& mask, std::string_view tag) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.raw(normalize_tag(tag));
  w.u32(static_cast<std::uint32_t>(mask.entries().size()));
  for (const auto& e : mask.entries()) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (std::size_t d : e.shape) w.u64(d);
    std::vector<std::uint8_t> packed((e.keep.size() + 7) / 8, 0);
    std::uint64_t zeros = 0;
    for (std::size_t i = 0; i < e.keep.size(); ++i) {
      if (e.keep[i]) {
        packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
      } else {
        ++zeros;
      }
    }
    w.raw(packed);
    w.u64(zeros);
  }
  w.u64(mask.zeros());
  w.u64(mask.total());
  w.f64(mask.sparsity());
  return w.take();
}

Mask deserialize_mask(std::span<const std::uint8_t> bytes, std::string* tag) {
  ByteReader r(bytes);
  auto magic = r.raw(kMagic.size());
  if (std::memcmp(magic.data(), kMagic.data(), kMagic.size()) != 0) {
    throw IoError("not a mask file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw IoError("unsupported mask file version " + std::to_string(version));
  auto t = r.raw(16);
  if (tag) *tag = std::string(t.begin(), t.end());
  const std::uint32_t count = r.u32();
  Mask m;
  std::string prev;
  for (std::uint32_t i = 0; i < count; ++i) {
    Mask::Entry e;
    e.name = r.str();
    if (i > 0 && e.name <= prev) throw IoError("mask entries out of order at '" + e.name + "'");
    prev = e.name;
    const std::uint32_t rank = r.u32();
    e.shape.resize(rank);
    for (auto& d : e.shape) d = r.u64();
    const std::size_t n = shape_numel(e.shape);
    auto packed = r.raw((n + 7) / 8);
    e.keep.resize(n);
    std::uint64_t zeros = 0;
    for (std::size_t k = 0; k < n; ++k) {
      e.keep[k] = (packed[k / 8] >> (k % 8)) & 1u;
      if (!e.keep[k]) ++zeros;
    }
    if (n % 8 != 0 && (packed.back() >> (n % 8)) != 0) {
      throw IoError("mask entry '" + e.name + "' has stray padding bits");
    }
    if (r.u64() != zeros) throw IoError("zero count mismatch in mask entry '" + e.name + "'");
    m.entries().push_back(std::move(e));
  }
  const std::uint64_t zeros = r.u64();
  const std::uint64_t total = r.u64();
  const double sparsity = r.f64();
  if (zeros != m.zeros() || total != m.total() || sparsity != m.sparsity()) {
    throw IoError("mask footer disagrees with entry payloads");
  }
  if (!r.done()) throw IoError("trailing bytes after mask footer");
  return m;
}

}  // namespace ticketforge

#include "ticketforge/params.hpp"

#include <cstring>

#include "ticketforge/error.hpp"

namespace ticketforge {

namespace {
constexpr std::string_view kMagic = "TFPARAMS";
constexpr std::uint32_t kVersion = 1;
}  // namespace

ParamRole ParamStore::role_for(std::string_view name) {
  return name.starts_with(kHeadPrefix) ? ParamRole::head : ParamRole::trunk;
}

bool ParamStore::is_prunable(std::string_view name, const Shape& shape) {
  return role_for(name) == ParamRole::trunk && shape.size() == 2;
}

void ParamStore::set(const std::string& name, Tensor value) {
  Entry e;
  e.role = role_for(name);
  e.prunable = is_prunable(name, value.shape());
  e.value = std::move(value);
  entries_[name] = std::move(e);
}

const Tensor& ParamStore::at(const std::string& name) const { return entry(name).value; }

Tensor& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second.value;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [n, e] : entries_) out.push_back(n);
  return out;
}

std::vector<std::string> ParamStore::trunk_names() const {
  std::vector<std::string> out;
  for (const auto& [n, e] : entries_)
    if (e.role == ParamRole::trunk) out.push_back(n);
  return out;
}

std::vector<std::string> ParamStore::head_names() const {
  std::vector<std::string> out;
  for (const auto& [n, e] : entries_)
    if (e.role == ParamRole::head) out.push_back(n);
  return out;
}

std::vector<std::string> ParamStore::prunable_names() const {
  std::vector<std::string> out;
  for (const auto& [n, e] : entries_)
    if (e.prunable) out.push_back(n);
  return out;
}

std::size_t ParamStore::prunable_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_)
    if (e.prunable) n += e.value.numel();
  return n;
}

std::size_t ParamStore::trunk_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_)
    if (e.role == ParamRole::trunk) n += e.value.numel();
  return n;
}

std::size_t ParamStore::total_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.numel();
  return n;
}

ParamStore ParamStore::trunk() const {
  ParamStore out;
  for (const auto& [n, e] : entries_)
    if (e.role == ParamRole::trunk) out.entries_[n] = e;
  return out;
}

ParamStore ParamStore::head() const {
  ParamStore out;
  for (const auto& [n, e] : entries_)
    if (e.role == ParamRole::head) out.entries_[n] = e;
  return out;
}

void ParamStore::replace_head(const ParamStore& heads) {
  std::erase_if(entries_, [](const auto& kv) { return kv.second.role == ParamRole::head; });
  for (const auto& [n, e] : heads.entries_) {
    if (e.role == ParamRole::head) entries_[n] = e;
  }
}

bool ParamStore::bitwise_equal(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || !a->second.value.bitwise_equal(b->second.value)) return false;
  }
  return true;
}

std::string ParamStore::content_hash() const { return hash_hex(serialize_params(*this)); }

Bytes serialize_params(const ParamStore& params, std::string_view tag) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.raw(normalize_tag(tag));
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, e] : params.entries()) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) w.u64(d);
    for (double v : e.value.values()) w.f64(v);
  }
  return w.take();
}

ParamStore deserialize_params(std::span<const std::uint8_t> bytes, std::string* tag) {
  ByteReader r(bytes);
  auto magic = r.raw(kMagic.size());
  if (std::memcmp(magic.data(), kMagic.data(), kMagic.size()) != 0) {
    throw IoError("not a parameter file (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) throw IoError("unsupported parameter file version " + std::to_string(version));
  auto t = r.raw(16);
  if (tag) *tag = std::string(t.begin(), t.end());
  const std::uint32_t count = r.u32();
  ParamStore out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = r.f64();
    out.set(name, Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw IoError("trailing bytes after parameter entries");
  return out;
}

}  // namespace ticketforge

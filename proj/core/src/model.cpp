#include "ticketforge/model.hpp"

#include <cmath>

#include "ticketforge/error.hpp"
#include "ticketforge/rng.hpp"

namespace ticketforge {

std::string_view to_string(Family f) {
  switch (f) {
    case Family::one_stream: return "one_stream";
    case Family::two_stream: return "two_stream";
    case Family::patch_input: return "patch_input";
  }
  return "?";
}

Family family_from_string(std::string_view s) {
  if (s == "one_stream") return Family::one_stream;
  if (s == "two_stream") return Family::two_stream;
  if (s == "patch_input") return Family::patch_input;
  throw ConfigError("arch.family: unknown family '" + std::string(s) + "'");
}

void ArchSpec::validate() const {
  if (hidden <= 0) throw ConfigError("arch.hidden: must be positive");
  if (heads <= 0) throw ConfigError("arch.heads: must be positive");
  if (hidden % heads != 0) {
    throw ConfigError("arch.hidden: " + std::to_string(hidden) + " is not divisible by heads=" +
                      std::to_string(heads));
  }
  if (ffn_mult <= 0) throw ConfigError("arch.ffn_mult: must be positive");
  if (family == Family::two_stream) {
    if (txt_layers < 0 || img_layers < 0 || cross_layers < 1) {
      throw ConfigError("arch.cross_layers: two_stream needs at least one cross layer");
    }
  } else if (layers < 1) {
    throw ConfigError("arch.layers: must be positive");
  }
  data_shape().validate();
}

DataShape ArchSpec::data_shape() const {
  DataShape s;
  s.mode = family == Family::patch_input ? ImageMode::patches : ImageMode::regions;
  s.img_seq_len = img_seq_len;
  s.txt_seq_len = txt_seq_len;
  s.img_feat_dim = img_feat_dim;
  s.vocab_size = vocab_size;
  return s;
}

ArchSpec default_arch(Family family) {
  ArchSpec a;
  a.family = family;
  if (family == Family::patch_input) a.img_feat_dim = kPatchDim;
  return a;
}

namespace {

std::string img_proj_name(const ArchSpec& arch) {
  return arch.family == Family::patch_input ? "emb.patch_proj" : "emb.img_proj";
}

std::size_t block_weights(std::size_t h, std::size_t f) { return 4 * h * h + 2 * h * f; }

}  // namespace

std::size_t prunable_weight_count(const ArchSpec& arch) {
  const std::size_t h = static_cast<std::size_t>(arch.hidden);
  const std::size_t f = static_cast<std::size_t>(arch.ffn());
  const std::size_t v = static_cast<std::size_t>(arch.vocab_size);
  const std::size_t lt = static_cast<std::size_t>(arch.txt_seq_len);
  const std::size_t li = static_cast<std::size_t>(arch.img_seq_len);
  const std::size_t feat = static_cast<std::size_t>(arch.img_feat_dim);
  if (arch.family == Family::two_stream) {
    return h * (v + (1 + lt) + li + feat) +
           static_cast<std::size_t>(arch.txt_layers + arch.img_layers) * block_weights(h, f) +
           static_cast<std::size_t>(arch.cross_layers) * 2 * (4 * h * h + block_weights(h, f));
  }
  const std::size_t s = static_cast<std::size_t>(arch.joint_seq_len());
  return h * (v + s + 2 + feat) + static_cast<std::size_t>(arch.layers) * block_weights(h, f);
}

namespace {

struct Initializer {
  std::uint64_t stream;
  ParamStore* out;

  void uniform(const std::string& name, Shape shape, double bound) {
    Rng rng(substream(stream, name));
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    out->set(name, std::move(t));
  }
  void linear(const std::string& prefix, std::size_t in, std::size_t outd, double gain = 1.0) {
    uniform(prefix + ".w", {in, outd}, gain * std::sqrt(3.0 / static_cast<double>(in)));
    out->set(prefix + ".b", Tensor::zeros({outd}));
  }
  void norm(const std::string& prefix, std::size_t h) {
    out->set(prefix + ".g", Tensor::full({h}, 1.0));
    out->set(prefix + ".b", Tensor::zeros({h}));
  }
  void attention(const std::string& prefix, std::size_t h) {
    for (const char* p : {".q", ".k", ".v", ".o"}) linear(prefix + p, h, h);
  }
  void self_block(const std::string& prefix, std::size_t h, std::size_t f) {
    norm(prefix + ".ln1", h);
    attention(prefix + ".attn", h);
    norm(prefix + ".ln2", h);
    linear(prefix + ".ffn.fc1", h, f);
    linear(prefix + ".ffn.fc2", f, h);
  }
};

void init_trunk(const ArchSpec& arch, std::uint64_t seed, ParamStore& out) {
  const std::size_t h = static_cast<std::size_t>(arch.hidden);
  const std::size_t f = static_cast<std::size_t>(arch.ffn());
  const std::size_t lt = static_cast<std::size_t>(arch.txt_seq_len);
  const std::size_t li = static_cast<std::size_t>(arch.img_seq_len);
  Initializer init{substream(seed, "init"), &out};
  init.uniform("emb.tok", {static_cast<std::size_t>(arch.vocab_size), h}, 1.0);
  init.linear(img_proj_name(arch), static_cast<std::size_t>(arch.img_feat_dim), h);
  if (arch.family == Family::two_stream) {
    init.uniform("emb.txt_pos", {1 + lt, h}, 0.5);
    init.uniform("emb.img_pos", {li, h}, 0.5);
    init.norm("emb.txt_ln", h);
    init.norm("emb.img_ln", h);
    for (int l = 0; l < arch.txt_layers; ++l) init.self_block("txt_enc" + std::to_string(l), h, f);
    for (int l = 0; l < arch.img_layers; ++l) init.self_block("img_enc" + std::to_string(l), h, f);
    for (int l = 0; l < arch.cross_layers; ++l) {
      for (const char* side : {".txt", ".img"}) {
        const std::string p = "cross" + std::to_string(l) + side;
        init.norm(p + ".xln_q", h);
        init.norm(p + ".xln_kv", h);
        init.attention(p + ".xattn", h);
        init.self_block(p, h, f);
      }
    }
    init.norm("txt_final_ln", h);
    init.norm("img_final_ln", h);
  } else {
    init.uniform("emb.pos", {static_cast<std::size_t>(arch.joint_seq_len()), h}, 0.5);
    init.uniform("emb.type", {2, h}, 0.5);
    init.norm("emb.ln", h);
    for (int l = 0; l < arch.layers; ++l) init.self_block("enc" + std::to_string(l), h, f);
    init.norm("final_ln", h);
  }
}

void init_head(const ArchSpec& arch, const TaskSpec& task, std::uint64_t seed, ParamStore& out) {
  const std::size_t h = static_cast<std::size_t>(arch.hidden);
  Initializer init{substream(seed, "head:" + task.task_id), &out};
  if (task.is_pretext()) {
    init.linear("head.mlm", h, static_cast<std::size_t>(arch.vocab_size), 0.1);
    init.linear("head.mrm", h, static_cast<std::size_t>(arch.img_feat_dim), 0.1);
    init.linear("head.itm", h, 2, 0.1);
  } else {
    init.linear("head.cls.fc1", h, h);
    init.linear("head.cls.fc2", h, static_cast<std::size_t>(task.class_count), 0.1);
  }
}

}  // namespace

ParamStore build_model(const ArchSpec& arch, const TaskSpec& task, std::uint64_t seed) {
  arch.validate();
  task.validate();
  ParamStore out;
  init_trunk(arch, seed, out);
  init_head(arch, task, seed, out);
  return out;
}

ParamStore attach_fresh_head(const ParamStore& source, const ArchSpec& arch, const TaskSpec& task,
                             std::uint64_t seed) {
  arch.validate();
  task.validate();
  ParamStore out = source.trunk();
  init_head(arch, task, seed, out);
  return out;
}

// ---- graph ---------------------------------------------------------------

ModelGraph::ModelGraph(Tape& tape, const ArchSpec& arch, const ParamStore& params, const Mask* mask,
                       bool trainable)
    : tape_(tape), arch_(arch), params_(params), mask_(mask) {
  if (mask_) mask_->check_layout(params_);
  for (const auto& [name, e] : params_.entries()) {
    leaves_.emplace(name, trainable ? tape_.leaf(e.value) : tape_.constant(e.value));
  }
}

Var ModelGraph::leaf(const std::string& name) const {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw LookupError("model graph has no parameter '" + name + "'");
  return it->second;
}

Var ModelGraph::weight(const std::string& name) {
  if (auto it = effective_.find(name); it != effective_.end()) return it->second;
  Var w = leaf(name);
  if (mask_ && params_.entry(name).prunable) w = mul(w, tape_.constant(mask_->as_tensor(name)));
  effective_.emplace(name, w);
  return w;
}

Var ModelGraph::linear(const std::string& prefix, Var x) {
  return add_tiled(matmul(x, weight(prefix + ".w")), weight(prefix + ".b"));
}

Var ModelGraph::norm(const std::string& prefix, Var x) {
  return layer_norm(x, weight(prefix + ".g"), weight(prefix + ".b"));
}

Var ModelGraph::attention(const std::string& prefix, Var q_in, Var kv_in) {
  const std::size_t b = q_in.shape()[0], s = q_in.shape()[1], t = kv_in.shape()[1];
  const std::size_t h = static_cast<std::size_t>(arch_.hidden);
  const std::size_t nh = static_cast<std::size_t>(arch_.heads);
  const std::size_t d = h / nh;
  auto split = [&](Var x, std::size_t len) {
    return reshape(swap_axes12(reshape(x, {b, len, nh, d})), {b * nh, len, d});
  };
  Var q2 = reshape(q_in, {b * s, h});
  Var kv2 = q_in.id() == kv_in.id() ? q2 : reshape(kv_in, {b * t, h});
  Var q = split(linear(prefix + ".q", q2), s);
  Var k = split(linear(prefix + ".k", kv2), t);
  Var v = split(linear(prefix + ".v", kv2), t);
  Var scores = scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(d)));
  Var ctx = bmm(softmax(scores), v);
  Var merged = reshape(swap_axes12(reshape(ctx, {b, nh, s, d})), {b * s, h});
  return reshape(linear(prefix + ".o", merged), {b, s, h});
}

Var ModelGraph::ffn(const std::string& prefix, Var x) {
  const std::size_t b = x.shape()[0], s = x.shape()[1], h = x.shape()[2];
  Var y = linear(prefix + ".fc2", gelu(linear(prefix + ".fc1", reshape(x, {b * s, h}))));
  return reshape(y, {b, s, h});
}

Var ModelGraph::self_block(const std::string& prefix, Var x) {
  Var n1 = norm(prefix + ".ln1", x);
  x = add(x, attention(prefix + ".attn", n1, n1));
  Var n2 = norm(prefix + ".ln2", x);
  return add(x, ffn(prefix + ".ffn", n2));
}

Var ModelGraph::cross_block(const std::string& prefix, Var x, Var other) {
  Var q = norm(prefix + ".xln_q", x);
  Var kv = norm(prefix + ".xln_kv", other);
  x = add(x, attention(prefix + ".xattn", q, kv));
  return self_block(prefix, x);
}

ModelGraph::Encoded ModelGraph::encode(const Batch& batch, std::optional<Var> img_delta,
                                       std::optional<Var> txt_delta) {
  const std::size_t b = batch.size;
  const std::size_t li = static_cast<std::size_t>(arch_.img_seq_len);
  const std::size_t lt = static_cast<std::size_t>(arch_.txt_seq_len);
  const std::size_t f = static_cast<std::size_t>(arch_.img_feat_dim);
  const std::size_t h = static_cast<std::size_t>(arch_.hidden);
  const ImageMode want_mode = arch_.data_shape().mode;
  if (batch.mode != want_mode) {
    throw DimensionError("batch carries " + std::string(to_string(batch.mode)) + " but " +
                         std::string(to_string(arch_.family)) + " expects " + std::string(to_string(want_mode)));
  }
  if (batch.img.shape() != Shape{b, li, f}) {
    throw DimensionError("batch image tensor " + shape_str(batch.img.shape()) + " does not match " +
                         shape_str({b, li, f}));
  }
  if (batch.tokens.size() != b * lt || batch.txt_seq_len != lt) {
    throw DimensionError("batch token matrix does not match txt_seq_len=" + std::to_string(lt));
  }

  std::vector<int> ids;
  ids.reserve(b * (1 + lt));
  for (std::size_t i = 0; i < b; ++i) {
    ids.push_back(vocab::kCls);
    ids.insert(ids.end(), batch.tokens.begin() + static_cast<std::ptrdiff_t>(i * lt),
               batch.tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * lt));
  }
  Encoded enc;
  Var txt = reshape(gather_rows(weight("emb.tok"), ids), {b, 1 + lt, h});
  if (txt_delta) txt = add(txt, *txt_delta);
  Var img_flat = tape_.constant(batch.img.reshaped({b * li, f}));
  Var img = reshape(linear(img_proj_name(arch_), img_flat), {b, li, h});
  if (img_delta) img = add(img, *img_delta);
  enc.txt_embed = txt;
  enc.img_embed = img;

  if (arch_.family == Family::two_stream) {
    Var t = norm("emb.txt_ln", add_tiled(txt, weight("emb.txt_pos")));
    Var v = norm("emb.img_ln", add_tiled(img, weight("emb.img_pos")));
    for (int l = 0; l < arch_.txt_layers; ++l) t = self_block("txt_enc" + std::to_string(l), t);
    for (int l = 0; l < arch_.img_layers; ++l) v = self_block("img_enc" + std::to_string(l), v);
    for (int l = 0; l < arch_.cross_layers; ++l) {
      const std::string p = "cross" + std::to_string(l);
      Var t2 = cross_block(p + ".txt", t, v);
      Var v2 = cross_block(p + ".img", v, t);
      t = t2;
      v = v2;
    }
    enc.txt_states = norm("txt_final_ln", t);
    enc.img_states = norm("img_final_ln", v);
  } else {
    const std::size_t s = static_cast<std::size_t>(arch_.joint_seq_len());
    const Var parts[] = {txt, img};
    Var x = concat_seq(parts);
    std::vector<int> types(s, 0);
    for (std::size_t p = 1 + lt; p < s; ++p) types[p] = 1;
    Var pos_type = add(weight("emb.pos"), gather_rows(weight("emb.type"), types));
    x = norm("emb.ln", add_tiled(x, pos_type));
    for (int l = 0; l < arch_.layers; ++l) x = self_block("enc" + std::to_string(l), x);
    x = norm("final_ln", x);
    enc.txt_states = slice_seq(x, 0, 1 + lt);
    enc.img_states = slice_seq(x, 1 + lt, li);
  }
  enc.cls = reshape(slice_seq(enc.txt_states, 0, 1), {b, h});
  return enc;
}

Var ModelGraph::task_logits(Var cls) { return linear("head.cls.fc2", gelu(linear("head.cls.fc1", cls))); }

ModelGraph::PretextTerms ModelGraph::pretext_terms(const Batch& batch, const Encoded& enc) {
  if (!batch.pretext) throw DataError("pretrain objectives need a batch with pretext annotations");
  const PretextTargets& p = *batch.pretext;
  const std::size_t b = batch.size;
  const std::size_t lt = static_cast<std::size_t>(arch_.txt_seq_len);
  const std::size_t li = static_cast<std::size_t>(arch_.img_seq_len);
  const std::size_t h = static_cast<std::size_t>(arch_.hidden);
  if (p.itm_labels.size() != b) throw DataError("pretext batch lacks image-text match labels");

  PretextTerms out;
  if (!p.mlm_rows.empty()) {
    std::vector<int> rows;
    rows.reserve(p.mlm_rows.size());
    for (int r : p.mlm_rows) {
      const std::size_t ex = static_cast<std::size_t>(r) / lt, pos = static_cast<std::size_t>(r) % lt;
      rows.push_back(static_cast<int>(ex * (1 + lt) + 1 + pos));
    }
    Var states = gather_rows(reshape(enc.txt_states, {b * (1 + lt), h}), rows);
    out.mlm = softmax_cross_entropy(linear("head.mlm", states), p.mlm_targets);
  } else {
    out.mlm = tape_.constant(Tensor::scalar(0.0));
  }
  if (!p.mrm_rows.empty()) {
    Var states = gather_rows(reshape(enc.img_states, {b * li, h}), p.mrm_rows);
    Var diff = sub(linear("head.mrm", states), tape_.constant(p.mrm_targets));
    out.mrm = mean(mul(diff, diff));
  } else {
    out.mrm = tape_.constant(Tensor::scalar(0.0));
  }
  out.itm = softmax_cross_entropy(linear("head.itm", enc.cls), p.itm_labels);
  out.total = add(add(out.mlm, out.mrm), out.itm);
  return out;
}

ModelOutput forward(const ArchSpec& arch, const ParamStore& params, const Mask* mask, const Batch& batch) {
  Tape tape;
  ModelGraph g(tape, arch, params, mask, false);
  auto enc = g.encode(batch);
  ModelOutput out;
  out.cls_embedding = enc.cls.value();
  out.logits = g.task_logits(enc.cls).value();
  out.modality_states.emplace("txt", enc.txt_states.value());
  out.modality_states.emplace("img", enc.img_states.value());
  out.modality_states.emplace("txt_embed", enc.txt_embed.value());
  out.modality_states.emplace("img_embed", enc.img_embed.value());
  return out;
}

Tensor loss_std(const ArchSpec& arch, const ParamStore& params, const Mask* mask, const Batch& batch) {
  Tape tape;
  ModelGraph g(tape, arch, params, mask, false);
  auto enc = g.encode(batch);
  return softmax_cross_entropy(g.task_logits(enc.cls), batch.labels).value();
}

PretextLoss pretrain_objectives(const ArchSpec& arch, const ParamStore& params, const Mask* mask,
                                const Batch& batch) {
  if (!batch.pretext) throw DataError("pretrain objectives need a batch with pretext annotations");
  Tape tape;
  ModelGraph g(tape, arch, params, mask, false);
  auto enc = g.encode(batch);
  auto terms = g.pretext_terms(batch, enc);
  return {terms.mlm.value().item(), terms.mrm.value().item(), terms.itm.value().item(),
          terms.total.value().item()};
}

}  // namespace ticketforge

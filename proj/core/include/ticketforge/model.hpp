#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "ticketforge/autodiff.hpp"
#include "ticketforge/data.hpp"
#include "ticketforge/mask.hpp"
#include "ticketforge/params.hpp"

namespace ticketforge {

// one_stream: a single encoder over [CLS, words, regions].
// two_stream: per-modality encoders followed by cross-attention layers.
// patch_input: one_stream fed raw pixel patches instead of region features.
enum class Family { one_stream, two_stream, patch_input };

std::string_view to_string(Family f);
Family family_from_string(std::string_view s);

struct ArchSpec {
  Family family = Family::one_stream;
  int layers = 2;  // one_stream / patch_input encoder depth
  int hidden = 32;
  int heads = 4;
  int ffn_mult = 2;
  int txt_layers = 1;    // two_stream only
  int img_layers = 1;    // two_stream only
  int cross_layers = 1;  // two_stream only
  int img_seq_len = 4;
  int txt_seq_len = 6;
  int vocab_size = vocab::kMinSize;
  int img_feat_dim = 12;

  void validate() const;
  int ffn() const { return hidden * ffn_mult; }
  /// Length of the joint sequence for single-stream families ([CLS] + words + image).
  int joint_seq_len() const { return 1 + txt_seq_len + img_seq_len; }
  DataShape data_shape() const;

  bool operator==(const ArchSpec&) const = default;
};

/// Defaults for a family (patch_input switches img_feat_dim to the patch size).
ArchSpec default_arch(Family family);

/// Closed-form count of prunable weights for an architecture.
std::size_t prunable_weight_count(const ArchSpec& arch);

struct ModelOutput {
  Tensor cls_embedding;  // [b x hidden]
  Tensor logits;         // [b x class_count]
  std::map<std::string, Tensor> modality_states;
};

/// Per-modality additive perturbation applied right after the embedding
/// lookup: "img" is [b x img_seq_len x hidden], "txt" is
/// [b x (1 + txt_seq_len) x hidden] and covers the [CLS] slot.
struct Perturbation {
  std::optional<Tensor> img;
  std::optional<Tensor> txt;
};

/// Deterministic initialisation. The trunk depends only on (arch, seed); the
/// head on (arch, task, seed). Identical inputs give bit-identical stores.
ParamStore build_model(const ArchSpec& arch, const TaskSpec& task, std::uint64_t seed);

/// Fresh task head for `task` on top of the trunk of `source`.
ParamStore attach_fresh_head(const ParamStore& source, const ArchSpec& arch, const TaskSpec& task,
                             std::uint64_t seed);

// Builds the computation for one batch on a tape. Parameters enter either as
// leaves (trainable) or constants; prunable weights are multiplied by the
// mask, so the stored values are never modified.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, const ArchSpec& arch, const ParamStore& params, const Mask* mask,
             bool trainable);

  struct Encoded {
    Var cls;         // [b x h]
    Var txt_states;  // [b x (1 + Lt) x h]
    Var img_states;  // [b x Li x h]
    Var txt_embed;   // perturbation injection points
    Var img_embed;
  };

  /// Encoder pass. `img_delta` / `txt_delta` are added at the injection points.
  Encoded encode(const Batch& batch, std::optional<Var> img_delta = std::nullopt,
                 std::optional<Var> txt_delta = std::nullopt);
  Var task_logits(Var cls);

  struct PretextTerms {
    Var mlm;
    Var mrm;
    Var itm;
    Var total;
  };
  PretextTerms pretext_terms(const Batch& batch, const Encoded& enc);

  /// Leaf (or constant) for a stored parameter.
  Var leaf(const std::string& name) const;
  const std::map<std::string, Var>& leaves() const { return leaves_; }
  Tape& tape() { return tape_; }
  const ArchSpec& arch() const { return arch_; }
  const ParamStore& params() const { return params_; }
  const Mask* mask() const { return mask_; }

 private:
  Var weight(const std::string& name);
  Var linear(const std::string& prefix, Var x);  // x: [n x in]
  Var attention(const std::string& prefix, Var q_in, Var kv_in);
  Var ffn(const std::string& prefix, Var x);
  Var norm(const std::string& prefix, Var x);
  Var self_block(const std::string& prefix, Var x);
  Var cross_block(const std::string& prefix, Var x, Var other);

  Tape& tape_;
  ArchSpec arch_;
  const ParamStore& params_;
  const Mask* mask_;
  std::map<std::string, Var> leaves_;
  std::map<std::string, Var> effective_;
};

ModelOutput forward(const ArchSpec& arch, const ParamStore& params, const Mask* mask, const Batch& batch);

/// Cross-entropy of the task logits against batch labels.
Tensor loss_std(const ArchSpec& arch, const ParamStore& params, const Mask* mask, const Batch& batch);

struct PretextLoss {
  double mlm = 0.0;
  double mrm = 0.0;
  double itm = 0.0;
  double total = 0.0;
};

/// Masked-token cross-entropy + masked-region squared error + image-text
/// match cross-entropy. DataError if the batch carries no pretext targets.
PretextLoss pretrain_objectives(const ArchSpec& arch, const ParamStore& params, const Mask* mask,
                                const Batch& batch);

}  // namespace ticketforge

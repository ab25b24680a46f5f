#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ticketforge/tensor.hpp"

namespace ticketforge {

// Generative rule behind a task. Every rule reads the same latent scene
// (objects with a color and a shape), which is what lets masks found on one
// task say something about another.
enum class Relation {
  pretext,
  attribute_query,
  caption_match,
  count,
  shape_query,
  exists,
  same_color,
  locate
};

enum class ImageMode { regions, patches };
enum class Split { train, dev };

std::string_view to_string(Relation r);
std::string_view to_string(ImageMode m);
std::string_view to_string(Split s);

struct TaskSpec {
  std::string task_id;
  int class_count = 2;
  Relation relation = Relation::pretext;
  /// Label-noise rate in (0, 1]: with this probability the label is redrawn
  /// uniformly at random.
  double difficulty = 0.05;

  bool is_pretext() const { return relation == Relation::pretext; }
  void validate() const;

  static TaskSpec pretext();
};

/// The five downstream tasks shipped by default.
std::vector<TaskSpec> default_suite();
/// Looks up a default-suite task (or "pretext"); ConfigError if unknown.
TaskSpec find_task(std::string_view task_id);

namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kCls = 1;
inline constexpr int kMask = 2;
inline constexpr int kColorBase = 3;
inline constexpr int kShapeBase = 7;
inline constexpr int kAskColor = 11;
inline constexpr int kAskTrue = 12;
inline constexpr int kAskCount = 13;
inline constexpr int kAskSame = 14;
inline constexpr int kAskWhere = 15;
inline constexpr int kAskShape = 16;
inline constexpr int kAskExists = 17;
inline constexpr int kMinSize = 18;
}  // namespace vocab

inline constexpr int kColors = 4;
inline constexpr int kShapes = 4;
/// 3x3 pixels, 3 channels.
inline constexpr int kPatchDim = 27;
inline constexpr double kMaskRate = 0.15;

struct DataShape {
  ImageMode mode = ImageMode::regions;
  int img_seq_len = 4;
  int txt_seq_len = 6;
  int img_feat_dim = 12;
  int vocab_size = vocab::kMinSize;

  void validate() const;
};

struct Object {
  int color = 0;
  int shape = 0;
};

struct Scene {
  std::vector<Object> objects;
};

struct Example {
  Scene scene;
  std::vector<double> img;  // img_seq_len * img_feat_dim, after masking
  std::vector<int> tokens;  // txt_seq_len, after masking
  int label = 0;            // observed (possibly noisy) label; ITM label for pretext
  int clean_label = 0;      // label produced by the rule before noise

  // Pretext annotations (empty for downstream tasks).
  std::vector<int> masked_tokens;
  std::vector<int> token_targets;
  std::vector<int> masked_regions;
  std::vector<double> region_targets;
};

struct PretextTargets {
  std::vector<int> mlm_rows;  // flat (example * txt_seq_len + position)
  std::vector<int> mlm_targets;
  std::vector<int> mrm_rows;  // flat (example * img_seq_len + region)
  Tensor mrm_targets;         // [rows x img_feat_dim]; empty when no rows
  std::vector<int> itm_labels;
};

struct Batch {
  std::size_t size = 0;
  ImageMode mode = ImageMode::regions;
  Tensor img;               // [size x img_seq_len x img_feat_dim]
  std::vector<int> tokens;  // size * txt_seq_len
  std::size_t txt_seq_len = 0;
  std::vector<int> labels;
  std::optional<PretextTargets> pretext;
};

struct TaskDataset {
  TaskSpec spec;
  Split split = Split::train;
  DataShape shape;
  std::uint64_t seed = 0;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
};

/// Pre-training corpus with masked-token, masked-region and image-text match
/// annotations. Pure function of (seed, size, shape).
TaskDataset gen_pretrain_corpus(std::uint64_t seed, std::size_t size, const DataShape& shape);

/// Labelled downstream dataset. Train and dev draw from disjoint seed
/// substreams. Pure function of (spec, seed, size, split, shape).
TaskDataset gen_task(const TaskSpec& spec, std::uint64_t seed, std::size_t size, Split split,
                     const DataShape& shape);

/// The noiseless rule evaluated on the generating latents and the query.
int rule_label(const TaskSpec& spec, const Example& ex);

/// Image features for a scene: fixed random projection of the object
/// attributes (regions) or a rendered pixel grid (patches), plus noise.
std::vector<double> render_scene(const Scene& scene, const DataShape& shape, std::uint64_t noise_seed);

Batch make_batch(const TaskDataset& data, std::span<const std::size_t> indices);

/// Deterministic shuffled partition of [0, n) into batches; the last partial
/// batch is kept.
std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size,
                                                  std::uint64_t epoch_seed);
std::vector<Batch> batch_iter(const TaskDataset& data, std::size_t batch_size, std::uint64_t epoch_seed);

std::string example_hash(const Example& ex);

/// Line-delimited JSON, one example per line, payloads base64-encoded.
void dump_dataset(const TaskDataset& data, std::ostream& out);

}  // namespace ticketforge

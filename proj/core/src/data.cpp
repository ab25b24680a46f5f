#include "ticketforge/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstring>
#include <numeric>
#include <ostream>

#include <nlohmann/json.hpp>

#include "ticketforge/error.hpp"
#include "ticketforge/io.hpp"
#include "ticketforge/rng.hpp"

namespace ticketforge {

std::string_view to_string(Relation r) {
  switch (r) {
    case Relation::pretext: return "pretext";
    case Relation::attribute_query: return "attribute_query";
    case Relation::caption_match: return "caption_match";
    case Relation::count: return "count";
    case Relation::shape_query: return "shape_query";
    case Relation::exists: return "exists";
    case Relation::same_color: return "same_color";
    case Relation::locate: return "locate";
  }
  return "?";
}

std::string_view to_string(ImageMode m) { return m == ImageMode::regions ? "regions" : "patches"; }
std::string_view to_string(Split s) { return s == Split::train ? "train" : "dev"; }

void TaskSpec::validate() const {
  if (task_id.empty()) throw ConfigError("task.task_id: must be non-empty");
  for (char c : task_id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) {
      throw ConfigError("task.task_id: '" + task_id + "' may only use letters, digits, '_', '-' and '.'");
    }
  }
  if (class_count < 2) throw ConfigError("task.class_count: must be at least 2");
  if (!(difficulty > 0.0 && difficulty <= 1.0)) throw ConfigError("task.difficulty: must be in (0, 1]");
}

TaskSpec TaskSpec::pretext() { return TaskSpec{"pretext", 2, Relation::pretext, 0.05}; }

std::vector<TaskSpec> default_suite() {
  return {
      {"attr_query", kColors, Relation::attribute_query, 0.05},
      {"caption_match", 2, Relation::caption_match, 0.05},
      {"count", 4, Relation::count, 0.05},
      {"shape_query", kShapes, Relation::shape_query, 0.05},
      {"exists", 2, Relation::exists, 0.05},
  };
}

TaskSpec find_task(std::string_view task_id) {
  if (task_id == "pretext") return TaskSpec::pretext();
  for (const TaskSpec& t : default_suite()) {
    if (t.task_id == task_id) return t;
  }
  throw ConfigError("task: unknown task_id '" + std::string(task_id) + "'");
}

void DataShape::validate() const {
  if (img_seq_len < 3 || img_seq_len > kShapes) {
    throw ConfigError("arch.img_seq_len: scenes hold 3 to " + std::to_string(kShapes) + " objects");
  }
  if (txt_seq_len < 6) throw ConfigError("arch.txt_seq_len: captions need at least 6 tokens");
  if (vocab_size < vocab::kMinSize) {
    throw ConfigError("arch.vocab_size: at least " + std::to_string(vocab::kMinSize) + " required");
  }
  if (mode == ImageMode::patches && img_feat_dim != kPatchDim) {
    throw ConfigError("arch.img_feat_dim: patch input requires " + std::to_string(kPatchDim));
  }
  if (img_feat_dim < 1) throw ConfigError("arch.img_feat_dim: must be positive");
}

namespace {

constexpr std::uint64_t kProjectionSeed = 0x67b0f17e5ULL;
constexpr double kRegionNoise = 0.25;
constexpr double kPixelNoise = 0.1;

int color_token(int c) { return vocab::kColorBase + c; }
int shape_token(int s) { return vocab::kShapeBase + s; }

// Fixed "detector": attribute one-hots projected to feature space.
std::vector<double> projection(int feat_dim) {
  Rng rng(kProjectionSeed + static_cast<std::uint64_t>(feat_dim));
  std::vector<double> p(static_cast<std::size_t>((kColors + kShapes) * feat_dim));
  for (double& v : p) v = 0.7 * rng.normal();
  return p;
}

constexpr std::array<std::array<int, 9>, kShapes> kTemplates = {{
    {1, 1, 1, 1, 1, 1, 1, 1, 1},  // square
    {0, 1, 0, 1, 1, 1, 0, 1, 0},  // cross
    {1, 0, 1, 0, 1, 0, 1, 0, 1},  // x
    {1, 1, 1, 1, 0, 1, 1, 1, 1},  // ring
}};

constexpr std::array<std::array<double, 3>, kColors> kRgb = {{
    {1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0},
}};

int other_color(Rng& rng, int c) { return (c + 1 + static_cast<int>(rng.below(kColors - 1))) % kColors; }

Scene random_scene(Rng& rng, int objects) {
  std::array<int, kShapes> shapes{};
  std::iota(shapes.begin(), shapes.end(), 0);
  rng.shuffle(std::span<int>(shapes));
  Scene s;
  for (int i = 0; i < objects; ++i) {
    s.objects.push_back({static_cast<int>(rng.below(kColors)), shapes[static_cast<std::size_t>(i)]});
  }
  return s;
}

// k distinct indices from [0, n), in random order.
std::vector<int> pick_distinct(Rng& rng, int n, int k) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(std::span<int>(idx));
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

int find_shape(const Scene& s, int shape) {
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    if (s.objects[i].shape == shape) return static_cast<int>(i);
  }
  return -1;
}

bool pair_holds(const Scene& s, int color, int shape) {
  for (const Object& o : s.objects) {
    if (o.color == color && o.shape == shape) return true;
  }
  return false;
}

// Builds scene + query consistent with label y for the given relation.
void realise(const TaskSpec& spec, const DataShape& shape, Rng& rng, int y, Example& ex) {
  const int n = shape.img_seq_len;
  ex.scene = random_scene(rng, n);
  auto& obj = ex.scene.objects;
  ex.tokens.assign(static_cast<std::size_t>(shape.txt_seq_len), vocab::kPad);
  auto& t = ex.tokens;
  switch (spec.relation) {
    case Relation::attribute_query: {
      const int q = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      obj[static_cast<std::size_t>(q)].color = y;
      t[0] = vocab::kAskColor;
      t[1] = shape_token(obj[static_cast<std::size_t>(q)].shape);
      break;
    }
    case Relation::caption_match: {
      const auto& a = obj[rng.below(static_cast<std::uint64_t>(n))];
      const int c = y == 1 ? a.color : other_color(rng, a.color);
      t[0] = vocab::kAskTrue;
      t[1] = color_token(c);
      t[2] = shape_token(a.shape);
      break;
    }
    case Relation::count: {
      const int c = static_cast<int>(rng.below(kColors));
      auto chosen = pick_distinct(rng, n, y);
      for (int i = 0; i < n; ++i) {
        const bool hit = std::find(chosen.begin(), chosen.end(), i) != chosen.end();
        auto& o = obj[static_cast<std::size_t>(i)];
        if (hit) {
          o.color = c;
        } else if (o.color == c) {
          o.color = other_color(rng, c);
        }
      }
      t[0] = vocab::kAskCount;
      t[1] = color_token(c);
      break;
    }
    case Relation::shape_query: {
      if (find_shape(ex.scene, y) < 0) obj[rng.below(static_cast<std::uint64_t>(n))].shape = y;
      const int c = static_cast<int>(rng.below(kColors));
      for (auto& o : obj) {
        if (o.shape == y) {
          o.color = c;
        } else if (o.color == c) {
          o.color = other_color(rng, c);
        }
      }
      t[0] = vocab::kAskShape;
      t[1] = color_token(c);
      break;
    }
    case Relation::exists: {
      const int c = static_cast<int>(rng.below(kColors));
      for (auto& o : obj) {
        if (o.color == c) o.color = other_color(rng, c);
      }
      if (y == 1) obj[rng.below(static_cast<std::uint64_t>(n))].color = c;
      t[0] = vocab::kAskExists;
      t[1] = color_token(c);
      break;
    }
    case Relation::same_color: {
      auto ab = pick_distinct(rng, n, 2);
      auto& a = obj[static_cast<std::size_t>(ab[0])];
      auto& b = obj[static_cast<std::size_t>(ab[1])];
      b.color = y == 1 ? a.color : other_color(rng, a.color);
      t[0] = vocab::kAskSame;
      t[1] = shape_token(a.shape);
      t[2] = shape_token(b.shape);
      break;
    }
    case Relation::locate: {
      const int c = static_cast<int>(rng.below(kColors));
      for (int i = 0; i < n; ++i) {
        auto& o = obj[static_cast<std::size_t>(i)];
        if (i == y) {
          o.color = c;
        } else if (o.color == c) {
          o.color = other_color(rng, c);
        }
      }
      t[0] = vocab::kAskWhere;
      t[1] = color_token(c);
      break;
    }
    case Relation::pretext:
      throw DataError("realise: pretext examples are built by gen_pretrain_corpus");
  }
}

int label_range(const TaskSpec& spec, const DataShape& shape) {
  switch (spec.relation) {
    case Relation::attribute_query: return kColors;
    case Relation::shape_query: return kShapes;
    case Relation::count: return std::min(shape.img_seq_len, 3) + 1;
    case Relation::locate: return shape.img_seq_len;
    default: return 2;
  }
}

}  // namespace

std::vector<double> render_scene(const Scene& scene, const DataShape& shape, std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  const std::size_t f = static_cast<std::size_t>(shape.img_feat_dim);
  std::vector<double> img(scene.objects.size() * f);
  if (shape.mode == ImageMode::regions) {
    static thread_local int cached_dim = -1;
    static thread_local std::vector<double> proj;
    if (cached_dim != shape.img_feat_dim) {
      proj = projection(shape.img_feat_dim);
      cached_dim = shape.img_feat_dim;
    }
    for (std::size_t r = 0; r < scene.objects.size(); ++r) {
      const Object& o = scene.objects[r];
      const double* pc = &proj[static_cast<std::size_t>(o.color) * f];
      const double* ps = &proj[static_cast<std::size_t>(kColors + o.shape) * f];
      for (std::size_t j = 0; j < f; ++j) img[r * f + j] = pc[j] + ps[j] + kRegionNoise * rng.normal();
    }
  } else {
    for (std::size_t r = 0; r < scene.objects.size(); ++r) {
      const Object& o = scene.objects[r];
      const auto& tmpl = kTemplates[static_cast<std::size_t>(o.shape)];
      const auto& rgb = kRgb[static_cast<std::size_t>(o.color)];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t p = 0; p < 9; ++p) {
          img[r * f + ch * 9 + p] = tmpl[p] * rgb[ch] + kPixelNoise * rng.normal();
        }
      }
    }
  }
  return img;
}

int rule_label(const TaskSpec& spec, const Example& ex) {
  const Scene& s = ex.scene;
  const auto& t = ex.tokens;
  switch (spec.relation) {
    case Relation::attribute_query: {
      const int i = find_shape(s, t[1] - vocab::kShapeBase);
      return i < 0 ? 0 : s.objects[static_cast<std::size_t>(i)].color;
    }
    case Relation::caption_match:
      return pair_holds(s, t[1] - vocab::kColorBase, t[2] - vocab::kShapeBase) ? 1 : 0;
    case Relation::shape_query: {
      const int c = t[1] - vocab::kColorBase;
      for (const Object& o : s.objects) {
        if (o.color == c) return o.shape;
      }
      return 0;
    }
    case Relation::exists: {
      const int c = t[1] - vocab::kColorBase;
      return std::any_of(s.objects.begin(), s.objects.end(), [c](const Object& o) { return o.color == c; }) ? 1 : 0;
    }
    case Relation::count: {
      const int c = t[1] - vocab::kColorBase;
      return static_cast<int>(std::count_if(s.objects.begin(), s.objects.end(),
                                            [c](const Object& o) { return o.color == c; }));
    }
    case Relation::same_color: {
      const int a = find_shape(s, t[1] - vocab::kShapeBase);
      const int b = find_shape(s, t[2] - vocab::kShapeBase);
      return s.objects[static_cast<std::size_t>(a)].color == s.objects[static_cast<std::size_t>(b)].color
                 ? 1
                 : 0;
    }
    case Relation::locate: {
      const int c = t[1] - vocab::kColorBase;
      for (std::size_t i = 0; i < s.objects.size(); ++i) {
        if (s.objects[i].color == c) return static_cast<int>(i);
      }
      return 0;
    }
    case Relation::pretext: {
      // Caption tokens may be masked; the match flag was fixed at generation.
      return ex.clean_label;
    }
  }
  return 0;
}

TaskDataset gen_task(const TaskSpec& spec, std::uint64_t seed, std::size_t size, Split split,
                     const DataShape& shape) {
  spec.validate();
  shape.validate();
  if (spec.is_pretext()) throw ConfigError("gen_task: use gen_pretrain_corpus for the pretext corpus");
  // Only suite relations are supported; an id outside the suite with a known
  // relation is accepted so custom task lists can reuse the rules.
  if (spec.class_count < label_range(spec, shape)) {
    throw ConfigError("task.class_count: " + spec.task_id + " needs at least " +
                      std::to_string(label_range(spec, shape)) + " classes");
  }
  TaskDataset out;
  out.spec = spec;
  out.split = split;
  out.shape = shape;
  out.seed = seed;
  out.examples.resize(size);
  const std::uint64_t stream = substream(seed, spec.task_id + ":" + std::string(to_string(split)));
  const int labels = label_range(spec, shape);
  for (std::size_t i = 0; i < size; ++i) {
    Rng rng(substream(stream, "example", i));
    Example& ex = out.examples[i];
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(labels)));
    realise(spec, shape, rng, y, ex);
    ex.clean_label = y;
    ex.label = rng.bernoulli(spec.difficulty)
                   ? static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.class_count)))
                   : y;
    ex.img = render_scene(ex.scene, shape, rng.next_u64());
  }
  return out;
}

TaskDataset gen_pretrain_corpus(std::uint64_t seed, std::size_t size, const DataShape& shape) {
  shape.validate();
  if (size == 0) throw ConfigError("pretext.size: must be positive");
  TaskDataset out;
  out.spec = TaskSpec::pretext();
  out.split = Split::train;
  out.shape = shape;
  out.seed = seed;
  out.examples.resize(size);
  const std::uint64_t stream = substream(seed, "pretext");
  const std::size_t f = static_cast<std::size_t>(shape.img_feat_dim);
  for (std::size_t i = 0; i < size; ++i) {
    Rng rng(substream(stream, "example", i));
    Example& ex = out.examples[i];
    ex.scene = random_scene(rng, shape.img_seq_len);
    const int match = rng.bernoulli(0.5) ? 1 : 0;
    auto described = pick_distinct(rng, shape.img_seq_len, 3);
    ex.tokens.assign(static_cast<std::size_t>(shape.txt_seq_len), vocab::kPad);
    for (std::size_t k = 0; k < 3; ++k) {
      const Object& o = ex.scene.objects[static_cast<std::size_t>(described[k])];
      ex.tokens[2 * k] = color_token(o.color);
      ex.tokens[2 * k + 1] = shape_token(o.shape);
    }
    if (match == 0) {
      const std::size_t k = rng.below(3);
      ex.tokens[2 * k] = color_token(other_color(rng, ex.tokens[2 * k] - vocab::kColorBase));
    }
    ex.label = match;
    ex.clean_label = match;
    ex.img = render_scene(ex.scene, shape, rng.next_u64());

    for (std::size_t p = 0; p < ex.tokens.size(); ++p) {
      if (ex.tokens[p] == vocab::kPad) continue;
      if (rng.bernoulli(kMaskRate)) {
        ex.masked_tokens.push_back(static_cast<int>(p));
        ex.token_targets.push_back(ex.tokens[p]);
        ex.tokens[p] = vocab::kMask;
      }
    }
    for (std::size_t r = 0; r < ex.scene.objects.size(); ++r) {
      if (rng.bernoulli(kMaskRate)) {
        ex.masked_regions.push_back(static_cast<int>(r));
        ex.region_targets.insert(ex.region_targets.end(), ex.img.begin() + static_cast<std::ptrdiff_t>(r * f),
                                 ex.img.begin() + static_cast<std::ptrdiff_t>((r + 1) * f));
        std::fill_n(ex.img.begin() + static_cast<std::ptrdiff_t>(r * f), f, 0.0);
      }
    }
  }
  return out;
}

Batch make_batch(const TaskDataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("make_batch: empty index list");
  const std::size_t li = static_cast<std::size_t>(data.shape.img_seq_len);
  const std::size_t lt = static_cast<std::size_t>(data.shape.txt_seq_len);
  const std::size_t f = static_cast<std::size_t>(data.shape.img_feat_dim);
  Batch b;
  b.size = indices.size();
  b.mode = data.shape.mode;
  b.txt_seq_len = lt;
  b.img = Tensor({b.size, li, f});
  b.tokens.reserve(b.size * lt);
  b.labels.reserve(b.size);
  if (data.spec.is_pretext()) b.pretext.emplace();
  std::vector<double> mrm;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Example& ex = data.examples.at(indices[i]);
    std::copy(ex.img.begin(), ex.img.end(), &b.img[i * li * f]);
    b.tokens.insert(b.tokens.end(), ex.tokens.begin(), ex.tokens.end());
    b.labels.push_back(ex.label);
    if (b.pretext) {
      auto& p = *b.pretext;
      for (std::size_t k = 0; k < ex.masked_tokens.size(); ++k) {
        p.mlm_rows.push_back(static_cast<int>(i * lt) + ex.masked_tokens[k]);
        p.mlm_targets.push_back(ex.token_targets[k]);
      }
      for (int r : ex.masked_regions) p.mrm_rows.push_back(static_cast<int>(i * li) + r);
      mrm.insert(mrm.end(), ex.region_targets.begin(), ex.region_targets.end());
      p.itm_labels.push_back(ex.label);
    }
  }
  if (b.pretext && !b.pretext->mrm_rows.empty()) {
    b.pretext->mrm_targets = Tensor({b.pretext->mrm_rows.size(), f}, std::move(mrm));
  }
  return b;
}

std::vector<std::vector<std::size_t>> batch_order(std::size_t n, std::size_t batch_size,
                                                  std::uint64_t epoch_seed) {
  if (batch_size == 0 || batch_size > n) {
    throw ConfigError("budget.batch_size: must be in [1, dataset size]");
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(epoch_seed);
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

std::vector<Batch> batch_iter(const TaskDataset& data, std::size_t batch_size, std::uint64_t epoch_seed) {
  std::vector<Batch> out;
  for (const auto& idx : batch_order(data.size(), batch_size, epoch_seed)) out.push_back(make_batch(data, idx));
  return out;
}

std::string example_hash(const Example& ex) {
  ByteWriter w;
  for (double v : ex.img) w.f64(v);
  for (int t : ex.tokens) w.u32(static_cast<std::uint32_t>(t));
  w.u32(static_cast<std::uint32_t>(ex.label));
  return hash_hex(w.bytes());
}

void dump_dataset(const TaskDataset& data, std::ostream& out) {
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const Example& ex = data.examples[i];
    ByteWriter img, tok;
    for (double v : ex.img) img.f64(v);
    for (int t : ex.tokens) tok.u32(static_cast<std::uint32_t>(t));
    nlohmann::json rec = {
        {"task", data.spec.task_id},
        {"split", to_string(data.split)},
        {"index", i},
        {"label", ex.label},
        {"img_f64le", base64_encode(img.bytes())},
        {"tokens_u32le", base64_encode(tok.bytes())},
    };
    out << rec.dump() << '\n';
  }
}

}  // namespace ticketforge

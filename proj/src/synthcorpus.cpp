#include "cirl/synthcorpus.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "cirl/errors.hpp"
#include "cirl/rng.hpp"
#include "json.hpp"

namespace cirl {

using nlohmann::json;

namespace {

constexpr std::uint64_t kRenderBankSalt = 0x52454E4445520001ULL;
constexpr std::uint64_t kRenderNoiseSalt = 0x52454E4445520002ULL;
constexpr std::uint64_t kCorpusSalt = 0x434F525055530001ULL;
constexpr int kMaxGroupAttempts = 10000;

bool in_range(int v, int n) { return v >= 0 && v < n; }

void check_object(const Object& o, ErrorKind kind) {
  if (!in_range(o.shape, kNumShapes) || !in_range(o.color, kNumColors) ||
      !in_range(o.size, kNumSizes)) {
    throw Error(kind, "object attribute out of range");
  }
}

std::size_t resolve(const Scene& scene, const Selector& sel) {
  std::size_t found = scene.objects.size();
  std::size_t matches = 0;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const Object& o = scene.objects[i];
    if (o.shape == sel.shape && o.color == sel.color) {
      found = i;
      ++matches;
    }
  }
  if (matches != 1) {
    throw Error(ErrorKind::UnresolvableSelector,
                "selector (shape " + std::to_string(sel.shape) + ", color " +
                    std::to_string(sel.color) + ") matched " + std::to_string(matches) +
                    " objects");
  }
  return found;
}

Selector selector_of(const Object& o) { return {o.shape, o.color}; }

}  // namespace

// --- scenes and edits ------------------------------------------------------

Scene make_scene(std::vector<Object> objects, int background) {
  std::sort(objects.begin(), objects.end());
  Scene s{std::move(objects), background};
  validate_scene(s);
  return s;
}

void validate_scene(const Scene& scene) {
  if (scene.objects.empty() || scene.objects.size() > kMaxObjects) {
    throw Error(ErrorKind::InvalidScene, "scene must hold 1 to 4 objects");
  }
  if (!in_range(scene.background, kNumBackgrounds)) {
    throw Error(ErrorKind::InvalidScene, "background out of range");
  }
  for (const Object& o : scene.objects) check_object(o, ErrorKind::InvalidScene);
  if (!std::is_sorted(scene.objects.begin(), scene.objects.end())) {
    throw Error(ErrorKind::InvalidScene, "scene objects are not in canonical order");
  }
}

std::vector<int> shape_multiset(const Scene& scene) {
  std::vector<int> shapes;
  for (const Object& o : scene.objects) shapes.push_back(o.shape);
  std::sort(shapes.begin(), shapes.end());
  return shapes;
}

Edit Edit::add(Object o) {
  Edit e;
  e.kind = EditKind::Add;
  e.object = o;
  return e;
}

Edit Edit::remove(Selector s) {
  Edit e;
  e.kind = EditKind::Remove;
  e.selector = s;
  return e;
}

Edit Edit::replace(Selector s, Object o) {
  Edit e;
  e.kind = EditKind::Replace;
  e.selector = s;
  e.object = o;
  return e;
}

Edit Edit::modify(Selector s, Attribute a, int v) {
  Edit e;
  e.kind = EditKind::Modify;
  e.selector = s;
  e.attribute = a;
  e.value = v;
  return e;
}

Edit Edit::change_background(int v) {
  Edit e;
  e.kind = EditKind::ChangeBackground;
  e.value = v;
  return e;
}

Scene apply_edit(const Scene& scene, const Edit& edit) {
  Scene out = scene;
  switch (edit.kind) {
    case EditKind::Add:
      check_object(edit.object, ErrorKind::InvalidScript);
      if (out.objects.size() >= kMaxObjects) {
        throw Error(ErrorKind::CapacityExceeded, "ADD would exceed 4 objects");
      }
      out.objects.push_back(edit.object);
      break;
    case EditKind::Remove: {
      const std::size_t i = resolve(out, edit.selector);
      if (out.objects.size() == 1) {
        throw Error(ErrorKind::InvalidScript, "REMOVE would leave an empty scene");
      }
      out.objects.erase(out.objects.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
    case EditKind::Replace:
      check_object(edit.object, ErrorKind::InvalidScript);
      out.objects[resolve(out, edit.selector)] = edit.object;
      break;
    case EditKind::Modify: {
      Object& o = out.objects[resolve(out, edit.selector)];
      switch (edit.attribute) {
        case Attribute::Shape: o.shape = edit.value; break;
        case Attribute::Color: o.color = edit.value; break;
        case Attribute::Size: o.size = edit.value; break;
      }
      check_object(o, ErrorKind::InvalidScript);
      break;
    }
    case EditKind::ChangeBackground:
      if (!in_range(edit.value, kNumBackgrounds)) {
        throw Error(ErrorKind::InvalidScript, "background value out of range");
      }
      out.background = edit.value;
      break;
  }
  std::sort(out.objects.begin(), out.objects.end());
  return out;
}

Scene apply_edits(const Scene& reference, std::span<const Edit> edits) {
  Scene s = reference;
  for (const Edit& e : edits) s = apply_edit(s, e);
  return s;
}

// --- captions ----------------------------------------------------------------

TokenSeq caption_tokens(std::span<const Edit> edits) {
  using namespace tokens;
  TokenSeq out;
  auto sel = [&](const Selector& s) {
    out.push_back(kShapeBase + s.shape);
    out.push_back(kColorBase + s.color);
  };
  auto obj = [&](const Object& o) {
    out.push_back(kShapeBase + o.shape);
    out.push_back(kColorBase + o.color);
    out.push_back(kSizeBase + o.size);
  };
  for (const Edit& e : edits) {
    switch (e.kind) {
      case EditKind::Add:
        out.push_back(kAdd);
        obj(e.object);
        break;
      case EditKind::Remove:
        out.push_back(kRemove);
        sel(e.selector);
        break;
      case EditKind::Replace:
        out.push_back(kReplace);
        sel(e.selector);
        obj(e.object);
        break;
      case EditKind::Modify:
        out.push_back(kModify);
        sel(e.selector);
        switch (e.attribute) {
          case Attribute::Shape: out.push_back(kShapeBase + e.value); break;
          case Attribute::Color: out.push_back(kColorBase + e.value); break;
          case Attribute::Size: out.push_back(kSizeBase + e.value); break;
        }
        break;
      case EditKind::ChangeBackground:
        out.push_back(kBackgroundOp);
        out.push_back(kBackgroundBase + e.value);
        break;
    }
    out.push_back(kEndEdit);
  }
  return out;
}

namespace {

class CaptionReader {
 public:
  explicit CaptionReader(std::span<const int> t) : t_(t) {}
  bool done() const { return pos_ >= t_.size(); }
  int next() {
    if (done()) throw Error(ErrorKind::ParseError, "caption truncated");
    return t_[pos_++];
  }
  int value(int base, int count) {
    const int v = next() - base;
    if (v < 0 || v >= count) throw Error(ErrorKind::ParseError, "unexpected caption token");
    return v;
  }
  Selector selector() {
    const int s = value(tokens::kShapeBase, kNumShapes);
    return {s, value(tokens::kColorBase, kNumColors)};
  }
  Object object() {
    const Selector s = selector();
    return {s.shape, s.color, value(tokens::kSizeBase, kNumSizes)};
  }

 private:
  std::span<const int> t_;
  std::size_t pos_ = 0;
};

}  // namespace

EditScript parse_caption(std::span<const int> caption) {
  using namespace tokens;
  CaptionReader r(caption);
  EditScript edits;
  while (!r.done()) {
    const int op = r.next();
    switch (op) {
      case kAdd: edits.push_back(Edit::add(r.object())); break;
      case kRemove: edits.push_back(Edit::remove(r.selector())); break;
      case kReplace: {
        const Selector s = r.selector();
        edits.push_back(Edit::replace(s, r.object()));
        break;
      }
      case kModify: {
        const Selector s = r.selector();
        const int tok = r.next();
        if (tok >= kShapeBase && tok < kShapeBase + kNumShapes) {
          edits.push_back(Edit::modify(s, Attribute::Shape, tok - kShapeBase));
        } else if (tok >= kColorBase && tok < kColorBase + kNumColors) {
          edits.push_back(Edit::modify(s, Attribute::Color, tok - kColorBase));
        } else if (tok >= kSizeBase && tok < kSizeBase + kNumSizes) {
          edits.push_back(Edit::modify(s, Attribute::Size, tok - kSizeBase));
        } else {
          throw Error(ErrorKind::ParseError, "MODIFY value token expected");
        }
        break;
      }
      case kBackgroundOp:
        edits.push_back(Edit::change_background(r.value(kBackgroundBase, kNumBackgrounds)));
        break;
      default: throw Error(ErrorKind::ParseError, "edit opcode expected");
    }
    if (r.next() != kEndEdit) throw Error(ErrorKind::ParseError, "end-of-edit token expected");
  }
  return edits;
}

void validate_script(std::span<const Edit> edits) {
  if (edits.empty() || edits.size() > kMaxEdits) {
    throw Error(ErrorKind::InvalidScript, "edit script must hold 1 to 4 edits");
  }
  if (caption_tokens(edits).size() > kMaxCaptionTokens) {
    throw Error(ErrorKind::InvalidScript, "edit script caption exceeds 24 tokens");
  }
}

// --- rendering ---------------------------------------------------------------

Renderer::Renderer(std::uint64_t corpus_seed, RenderConfig config)
    : seed_(corpus_seed), config_(config) {
  if (config_.patches < kMaxObjects || config_.d_raw == 0 || config_.sigma < 0.0) {
    throw Error(ErrorKind::InvalidConfig, "render config out of range");
  }
  Rng rng(derive_seed(seed_, kRenderBankSalt));
  shape_ = Matrix::gaussian(kNumShapes, config_.d_raw, 1.0, rng);
  color_ = Matrix::gaussian(kNumColors, config_.d_raw, 1.0, rng);
  size_ = Matrix::gaussian(kNumSizes, config_.d_raw, 1.0, rng);
  background_ = Matrix::gaussian(kNumBackgrounds, config_.d_raw, 1.0, rng);
}

Matrix Renderer::render(const Scene& scene, std::uint64_t nonce) const {
  const std::size_t d = config_.d_raw;
  const std::size_t slot = config_.patches / kMaxObjects;
  Matrix out(config_.patches, d);
  for (std::size_t p = 0; p < config_.patches; ++p) {
    for (std::size_t c = 0; c < d; ++c) out(p, c) = background_(scene.background, c);
  }
  for (std::size_t j = 0; j < scene.objects.size(); ++j) {
    const Object& o = scene.objects[j];
    const std::size_t cover = std::min<std::size_t>(static_cast<std::size_t>(o.size) + 1, slot);
    for (std::size_t p = j * slot; p < j * slot + cover; ++p) {
      for (std::size_t c = 0; c < d; ++c) {
        out(p, c) += shape_(o.shape, c) + color_(o.color, c) + size_(o.size, c);
      }
    }
  }
  if (config_.sigma > 0.0) {
    Rng noise(derive_seed(derive_seed(seed_, kRenderNoiseSalt), nonce));
    for (auto& v : out.flat()) v += config_.sigma * noise.gaussian();
  }
  return out;
}

// --- corpus ------------------------------------------------------------------

std::string_view to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error(ErrorKind::InvalidConfig, "unknown split '" + std::string(name) + "'");
}

unsigned edit_kind_bit(EditKind kind) { return 1u << static_cast<unsigned>(kind); }

void CorpusConfig::validate() const {
  if (train_triplets == 0 || val_triplets == 0 || test_triplets == 0) {
    throw Error(ErrorKind::InvalidConfig, "corpus split sizes must be positive");
  }
  if (min_edits < 2 || max_edits > kMaxEdits || min_edits > max_edits) {
    throw Error(ErrorKind::InvalidConfig,
                "edit counts must satisfy 2 <= min_edits <= max_edits <= 4");
  }
  if ((edit_kinds & kAllEditKinds) == 0 || (edit_kinds & ~kAllEditKinds) != 0) {
    throw Error(ErrorKind::InvalidConfig, "edit kind mask is empty or invalid");
  }
  const unsigned shape_preserving =
      edit_kind_bit(EditKind::Modify) | edit_kind_bit(EditKind::ChangeBackground);
  if ((edit_kinds & shape_preserving) == 0) {
    throw Error(ErrorKind::InvalidConfig,
                "partial-edit distractors need MODIFY or CHANGE_BACKGROUND edits");
  }
}

const std::vector<Triplet>& Corpus::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return train;
}

std::vector<std::size_t> Corpus::gallery(Split s) const {
  std::vector<std::size_t> ids;
  for (const Subset& sub : subsets) {
    if (sub.split == s) ids.insert(ids.end(), sub.members.begin(), sub.members.end());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::size_t> Corpus::subset_of() const {
  std::vector<std::size_t> out(candidates.size(), 0);
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    for (std::size_t id : subsets[s].members) out[id] = s;
  }
  return out;
}

std::uint64_t reference_nonce(Split split, std::size_t index) {
  return (1ULL << 63) | (static_cast<std::uint64_t>(split) << 32) |
         static_cast<std::uint64_t>(index);
}

std::uint64_t candidate_nonce(std::size_t candidate_id) { return candidate_id; }

namespace {

class Generator {
 public:
  Generator(const CorpusConfig& config, std::uint64_t seed)
      : config_(config), rng_(derive_seed(seed, kCorpusSalt)) {}

  void run(Corpus& corpus) {
    for (Split split : {Split::Train, Split::Val, Split::Test}) {
      const std::size_t count = split == Split::Train ? config_.train_triplets
                                : split == Split::Val ? config_.val_triplets
                                                      : config_.test_triplets;
      auto& triplets = split == Split::Train ? corpus.train
                       : split == Split::Val ? corpus.val
                                             : corpus.test;
      for (std::size_t i = 0; i < count; ++i) triplets.push_back(group(corpus, split, i));
    }
  }

 private:
  int pick(int n) { return static_cast<int>(rng_.below(static_cast<std::uint64_t>(n))); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[rng_.below(i)]);
    }
  }

  static bool pair_taken(const Scene& s, int shape, int color, std::size_t skip) {
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      if (i != skip && s.objects[i].shape == shape && s.objects[i].color == color) return true;
    }
    return false;
  }

  Scene random_scene() {
    const int n = 1 + pick(static_cast<int>(kMaxObjects));
    Scene s;
    s.background = pick(kNumBackgrounds);
    while (static_cast<int>(s.objects.size()) < n) {
      const Object o{pick(kNumShapes), pick(kNumColors), pick(kNumSizes)};
      if (!pair_taken(s, o.shape, o.color, s.objects.size())) s.objects.push_back(o);
    }
    std::sort(s.objects.begin(), s.objects.end());
    return s;
  }

  Object fresh_object(const Scene& s, std::size_t skip) {
    for (;;) {
      const Object o{pick(kNumShapes), pick(kNumColors), pick(kNumSizes)};
      if (!pair_taken(s, o.shape, o.color, skip)) return o;
    }
  }

  Edit random_edit(const Scene& cur) {
    std::vector<EditKind> kinds;
    for (EditKind k : {EditKind::Add, EditKind::Remove, EditKind::Replace, EditKind::Modify,
                       EditKind::ChangeBackground}) {
      if ((config_.edit_kinds & edit_kind_bit(k)) == 0) continue;
      if (k == EditKind::Add && cur.objects.size() >= kMaxObjects) continue;
      if (k == EditKind::Remove && cur.objects.size() <= 1) continue;
      kinds.push_back(k);
    }
    const EditKind kind = kinds[rng_.below(kinds.size())];
    const std::size_t idx = rng_.below(cur.objects.size());
    const Object old = cur.objects[idx];
    switch (kind) {
      case EditKind::Add: return Edit::add(fresh_object(cur, cur.objects.size()));
      case EditKind::Remove: return Edit::remove(selector_of(old));
      case EditKind::Replace: {
        Object o = fresh_object(cur, idx);
        while (o == old) o = fresh_object(cur, idx);
        return Edit::replace(selector_of(old), o);
      }
      case EditKind::Modify:
        for (;;) {
          const auto attr = static_cast<Attribute>(pick(3));
          Object o = old;
          int value = 0;
          switch (attr) {
            case Attribute::Shape: value = o.shape = pick(kNumShapes); break;
            case Attribute::Color: value = o.color = pick(kNumColors); break;
            case Attribute::Size: value = o.size = pick(kNumSizes); break;
          }
          if (o != old && !pair_taken(cur, o.shape, o.color, idx)) {
            return Edit::modify(selector_of(old), attr, value);
          }
        }
      case EditKind::ChangeBackground:
        return Edit::change_background((cur.background + 1 + pick(kNumBackgrounds - 1)) %
                                       kNumBackgrounds);
    }
    return Edit::change_background(0);
  }

  // Shape-preserving perturbation of `s` (color, size or background change).
  Scene perturb(const Scene& s) {
    Scene out = s;
    const int which = pick(3);
    if (which == 2) {
      out.background = (out.background + 1 + pick(kNumBackgrounds - 1)) % kNumBackgrounds;
      return out;
    }
    const std::size_t idx = rng_.below(out.objects.size());
    Object& o = out.objects[idx];
    if (which == 0) {
      const int c = (o.color + 1 + pick(kNumColors - 1)) % kNumColors;
      if (pair_taken(out, o.shape, c, idx)) return out;
      o.color = c;
    } else {
      o.size = (o.size + 1 + pick(kNumSizes - 1)) % kNumSizes;
    }
    std::sort(out.objects.begin(), out.objects.end());
    return out;
  }

  Triplet group(Corpus& corpus, Split split, std::size_t index) {
    for (int attempt = 0; attempt < kMaxGroupAttempts; ++attempt) {
      const Scene reference = random_scene();
      const std::size_t n_edits =
          config_.min_edits + rng_.below(config_.max_edits - config_.min_edits + 1);
      EditScript edits;
      Scene cur = reference;
      for (std::size_t e = 0; e < n_edits; ++e) {
        edits.push_back(random_edit(cur));
        cur = apply_edit(cur, edits.back());
      }
      if (caption_tokens(edits).size() > kMaxCaptionTokens) continue;
      const Scene target = cur;
      if (target == reference || seen_.contains(target)) continue;
      const auto target_shapes = shape_multiset(target);

      std::vector<Scene> partials;
      const unsigned full = (1u << edits.size()) - 1;
      for (unsigned mask = 0; mask < full; ++mask) {
        Scene s = reference;
        bool ok = true;
        for (std::size_t e = 0; e < edits.size() && ok; ++e) {
          if ((mask & (1u << e)) == 0) continue;
          try {
            s = apply_edit(s, edits[e]);
          } catch (const Error&) {
            ok = false;
          }
        }
        if (!ok || s == target || shape_multiset(s) != target_shapes) continue;
        if (seen_.contains(s)) continue;
        if (std::find(partials.begin(), partials.end(), s) == partials.end()) {
          partials.push_back(std::move(s));
        }
      }
      if (partials.size() < 2) continue;
      shuffle(partials);
      partials.resize(std::min<std::size_t>(partials.size(), 3));

      std::vector<Scene> members{target};
      members.insert(members.end(), partials.begin(), partials.end());
      int tries = 0;
      while (members.size() < kSubsetSize && tries++ < 200) {
        Scene p = perturb(members[rng_.below(members.size())]);
        if (seen_.contains(p) || std::find(members.begin(), members.end(), p) != members.end()) {
          continue;
        }
        members.push_back(std::move(p));
      }
      if (members.size() < kSubsetSize) continue;
      shuffle(members);

      Subset subset;
      subset.split = split;
      std::size_t target_id = 0;
      for (std::size_t m = 0; m < kSubsetSize; ++m) {
        const std::size_t id = corpus.candidates.size();
        if (members[m] == target) target_id = id;
        seen_.insert(members[m]);
        corpus.candidates.push_back(members[m]);
        subset.members[m] = id;
      }
      corpus.subsets.push_back(subset);
      return Triplet{reference, std::move(edits), target_id, reference_nonce(split, index)};
    }
    throw Error(ErrorKind::InvalidConfig, "could not generate a valid triplet group");
  }

  const CorpusConfig& config_;
  Rng rng_;
  std::set<Scene> seen_;
};

}  // namespace

Corpus gen_corpus(const CorpusConfig& config, std::uint64_t seed) {
  config.validate();
  Corpus corpus;
  corpus.seed = seed;
  corpus.config = config;
  Generator(config, seed).run(corpus);
  return corpus;
}

void verify_corpus(const Corpus& corpus) {
  std::vector<int> covered(corpus.candidates.size(), 0);
  for (const Subset& sub : corpus.subsets) {
    const auto shapes = shape_multiset(corpus.candidates[sub.members[0]]);
    std::set<Scene> distinct;
    for (std::size_t id : sub.members) {
      if (id >= corpus.candidates.size()) {
        throw Error(ErrorKind::InvalidScene, "subset member out of range");
      }
      ++covered[id];
      if (shape_multiset(corpus.candidates[id]) != shapes) {
        throw Error(ErrorKind::InvalidScene, "subset members do not share shapes");
      }
      distinct.insert(corpus.candidates[id]);
    }
    if (distinct.size() != kSubsetSize) {
      throw Error(ErrorKind::InvalidScene, "subset members are not distinct");
    }
  }
  if (std::any_of(covered.begin(), covered.end(), [](int c) { return c != 1; })) {
    throw Error(ErrorKind::InvalidScene, "subsets do not partition the candidates");
  }
  for (const Scene& s : corpus.candidates) validate_scene(s);
  const auto subset_of = corpus.subset_of();
  std::map<Scene, std::size_t> multiplicity;
  for (const Scene& c : corpus.candidates) ++multiplicity[c];
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    for (const Triplet& t : corpus.split(split)) {
      validate_script(t.edits);
      if (t.target_id >= corpus.candidates.size()) {
        throw Error(ErrorKind::InvalidScene, "triplet target out of range");
      }
      if (corpus.subsets[subset_of[t.target_id]].split != split) {
        throw Error(ErrorKind::InvalidScene, "triplet target lies in another split");
      }
      const Scene target = apply_edits(t.reference, t.edits);
      const auto it = multiplicity.find(target);
      if (it == multiplicity.end() || it->second != 1 || corpus.candidates[t.target_id] != target) {
        throw Error(ErrorKind::InvalidScene, "oracle target is not a unique candidate");
      }
    }
  }
}

// --- serialization -----------------------------------------------------------

namespace {

json scene_json(const Scene& s) {
  json objects = json::array();
  for (const Object& o : s.objects) objects.push_back({o.shape, o.color, o.size});
  return {{"background", s.background}, {"objects", std::move(objects)}};
}

Scene scene_from(const json& j) {
  std::vector<Object> objects;
  for (const auto& o : j.at("objects")) {
    objects.push_back({o.at(0).get<int>(), o.at(1).get<int>(), o.at(2).get<int>()});
  }
  return make_scene(std::move(objects), j.at("background").get<int>());
}

std::string_view attribute_name(Attribute a) {
  switch (a) {
    case Attribute::Shape: return "shape";
    case Attribute::Color: return "color";
    case Attribute::Size: return "size";
  }
  return "color";
}

json edit_json(const Edit& e) {
  const json sel = {e.selector.shape, e.selector.color};
  const json obj = {e.object.shape, e.object.color, e.object.size};
  switch (e.kind) {
    case EditKind::Add: return {{"op", "add"}, {"object", obj}};
    case EditKind::Remove: return {{"op", "remove"}, {"selector", sel}};
    case EditKind::Replace: return {{"op", "replace"}, {"selector", sel}, {"object", obj}};
    case EditKind::Modify:
      return {{"op", "modify"},
              {"selector", sel},
              {"attribute", attribute_name(e.attribute)},
              {"value", e.value}};
    case EditKind::ChangeBackground: return {{"op", "background"}, {"value", e.value}};
  }
  return {};
}

Edit edit_from(const json& j) {
  const std::string op = j.at("op").get<std::string>();
  auto sel = [&] {
    return Selector{j.at("selector").at(0).get<int>(), j.at("selector").at(1).get<int>()};
  };
  auto obj = [&] {
    const json& o = j.at("object");
    return Object{o.at(0).get<int>(), o.at(1).get<int>(), o.at(2).get<int>()};
  };
  if (op == "add") return Edit::add(obj());
  if (op == "remove") return Edit::remove(sel());
  if (op == "replace") return Edit::replace(sel(), obj());
  if (op == "background") return Edit::change_background(j.at("value").get<int>());
  if (op == "modify") {
    const std::string a = j.at("attribute").get<std::string>();
    const Attribute attr = a == "shape"   ? Attribute::Shape
                           : a == "color" ? Attribute::Color
                           : a == "size"  ? Attribute::Size
                                          : throw Error(ErrorKind::ParseError, "bad attribute");
    return Edit::modify(sel(), attr, j.at("value").get<int>());
  }
  throw Error(ErrorKind::ParseError, "unknown edit op '" + op + "'");
}

}  // namespace

void write_corpus(const Corpus& corpus, std::ostream& out) {
  out << json{{"format", "cirl-corpus"}, {"version", 1}, {"seed", corpus.seed}}.dump() << '\n';
  const CorpusConfig& c = corpus.config;
  out << json{{"type", "config"},
              {"train_triplets", c.train_triplets},
              {"val_triplets", c.val_triplets},
              {"test_triplets", c.test_triplets},
              {"min_edits", c.min_edits},
              {"max_edits", c.max_edits},
              {"edit_kinds", c.edit_kinds}}
             .dump()
      << '\n';
  for (std::size_t id = 0; id < corpus.candidates.size(); ++id) {
    json rec = scene_json(corpus.candidates[id]);
    rec["type"] = "candidate";
    rec["id"] = id;
    out << rec.dump() << '\n';
  }
  for (std::size_t s = 0; s < corpus.subsets.size(); ++s) {
    const Subset& sub = corpus.subsets[s];
    out << json{{"type", "subset"},
                {"id", s},
                {"split", to_string(sub.split)},
                {"members", sub.members}}
               .dump()
        << '\n';
  }
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    const auto& triplets = corpus.split(split);
    for (std::size_t i = 0; i < triplets.size(); ++i) {
      const Triplet& t = triplets[i];
      json edits = json::array();
      for (const Edit& e : t.edits) edits.push_back(edit_json(e));
      out << json{{"type", "triplet"},
                  {"split", to_string(split)},
                  {"index", i},
                  {"reference", scene_json(t.reference)},
                  {"edits", std::move(edits)},
                  {"target", t.target_id},
                  {"nonce", t.nonce}}
                 .dump()
          << '\n';
    }
  }
}

std::string serialize_corpus(const Corpus& corpus) {
  std::ostringstream os;
  write_corpus(corpus, os);
  return os.str();
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  try {
    if (!std::getline(in, line)) throw Error(ErrorKind::ParseError, "empty corpus file");
    ++line_no;
    const json header = json::parse(line);
    if (header.at("format") != "cirl-corpus" || header.at("version") != 1) {
      throw Error(ErrorKind::ParseError, "not a cirl-corpus v1 file");
    }
    corpus.seed = header.at("seed").get<std::uint64_t>();
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json rec = json::parse(line);
      const std::string type = rec.at("type").get<std::string>();
      if (type == "config") {
        CorpusConfig& c = corpus.config;
        c.train_triplets = rec.at("train_triplets").get<std::size_t>();
        c.val_triplets = rec.at("val_triplets").get<std::size_t>();
        c.test_triplets = rec.at("test_triplets").get<std::size_t>();
        c.min_edits = rec.at("min_edits").get<std::size_t>();
        c.max_edits = rec.at("max_edits").get<std::size_t>();
        c.edit_kinds = rec.at("edit_kinds").get<unsigned>();
      } else if (type == "candidate") {
        if (rec.at("id").get<std::size_t>() != corpus.candidates.size()) {
          throw Error(ErrorKind::ParseError, "candidate ids must be dense and ordered");
        }
        corpus.candidates.push_back(scene_from(rec));
      } else if (type == "subset") {
        Subset sub;
        sub.split = split_from_string(rec.at("split").get<std::string>());
        const auto members = rec.at("members").get<std::vector<std::size_t>>();
        if (members.size() != kSubsetSize) {
          throw Error(ErrorKind::ParseError, "subset must have six members");
        }
        std::copy(members.begin(), members.end(), sub.members.begin());
        corpus.subsets.push_back(sub);
      } else if (type == "triplet") {
        Triplet t;
        t.reference = scene_from(rec.at("reference"));
        for (const auto& e : rec.at("edits")) t.edits.push_back(edit_from(e));
        t.target_id = rec.at("target").get<std::size_t>();
        t.nonce = rec.at("nonce").get<std::uint64_t>();
        const Split split = split_from_string(rec.at("split").get<std::string>());
        (split == Split::Train ? corpus.train
         : split == Split::Val ? corpus.val
                               : corpus.test)
            .push_back(std::move(t));
      } else {
        throw Error(ErrorKind::ParseError, "unknown record type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError,
                "corpus line " + std::to_string(line_no) + ": " + e.what());
  }
  return corpus;
}

}  // namespace cirl

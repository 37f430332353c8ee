#pragma once

// Synthetic composed-retrieval corpus. A scene is a small set of attributed
// objects over a background; an edit script is the relative caption; the
// target of every triplet is apply_edits(reference, edits) and is stored as
// exactly one candidate. Candidates are grouped into subsets of six that share
// a shape multiset, with partial-edit distractors as hard negatives.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cirl/matrix.hpp"

namespace cirl {

inline constexpr int kNumShapes = 8;
inline constexpr int kNumColors = 8;
inline constexpr int kNumSizes = 3;
inline constexpr int kNumBackgrounds = 4;
inline constexpr std::size_t kMaxObjects = 4;
inline constexpr std::size_t kMaxEdits = 4;
inline constexpr std::size_t kMaxCaptionTokens = 24;
inline constexpr std::size_t kSubsetSize = 6;

struct Object {
  int shape = 0;
  int color = 0;
  int size = 0;
  auto operator<=>(const Object&) const = default;
};

struct Scene {
  std::vector<Object> objects;  // canonical: sorted by (shape, color, size)
  int background = 0;
  auto operator<=>(const Scene&) const = default;
};

// Sorts objects and checks ranges and the object-count bound.
Scene make_scene(std::vector<Object> objects, int background);
void validate_scene(const Scene& scene);
std::vector<int> shape_multiset(const Scene& scene);

enum class EditKind { Add, Remove, Replace, Modify, ChangeBackground };
enum class Attribute { Shape, Color, Size };

// Picks the unique object with this (shape, color) in the current scene.
struct Selector {
  int shape = 0;
  int color = 0;
  auto operator<=>(const Selector&) const = default;
};

struct Edit {
  EditKind kind = EditKind::ChangeBackground;
  Selector selector;     // Remove, Replace, Modify
  Object object;         // Add, Replace
  Attribute attribute = Attribute::Color;  // Modify
  int value = 0;         // Modify, ChangeBackground
  auto operator<=>(const Edit&) const = default;

  static Edit add(Object o);
  static Edit remove(Selector s);
  static Edit replace(Selector s, Object o);
  static Edit modify(Selector s, Attribute a, int v);
  static Edit change_background(int v);
};

using EditScript = std::vector<Edit>;

Scene apply_edit(const Scene& scene, const Edit& edit);
Scene apply_edits(const Scene& reference, std::span<const Edit> edits);

// --- caption token map -----------------------------------------------------
namespace tokens {
inline constexpr int kPad = 0;
inline constexpr int kSoftOpen = 1;
inline constexpr int kSoftClose = 2;
inline constexpr int kQueryTaskBegin = 3;   // 3..6
inline constexpr int kTargetTaskBegin = 7;  // 7..10
inline constexpr int kTaskPromptTokens = 4;
inline constexpr int kAdd = 11;
inline constexpr int kRemove = 12;
inline constexpr int kReplace = 13;
inline constexpr int kModify = 14;
inline constexpr int kBackgroundOp = 15;
inline constexpr int kEndEdit = 16;
inline constexpr int kShapeBase = 17;       // 17..24
inline constexpr int kColorBase = 25;       // 25..32
inline constexpr int kSizeBase = 33;        // 33..35
inline constexpr int kBackgroundBase = 36;  // 36..39
inline constexpr int kFirstCaption = 11;
inline constexpr int kVocabSize = 96;
}  // namespace tokens

using TokenSeq = std::vector<int>;

TokenSeq caption_tokens(std::span<const Edit> edits);
EditScript parse_caption(std::span<const int> caption);
void validate_script(std::span<const Edit> edits);

// --- rendering ------------------------------------------------------------
struct RenderConfig {
  std::size_t patches = 16;
  std::size_t d_raw = 32;
  double sigma = 0.1;
};

/// Seeded attribute embeddings used to render scenes into patch features.
/// Every patch carries the background embedding; object j (canonical order)
/// adds shape + color + size embeddings to patches [4j, 4j + size + 1).
class Renderer {
 public:
  Renderer(std::uint64_t corpus_seed, RenderConfig config);

  Matrix render(const Scene& scene, std::uint64_t nonce) const;
  const RenderConfig& config() const { return config_; }

 private:
  std::uint64_t seed_;
  RenderConfig config_;
  Matrix shape_, color_, size_, background_;
};

// --- corpus ---------------------------------------------------------------
enum class Split { Train, Val, Test };
std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

inline constexpr unsigned kAllEditKinds = 0x1F;
unsigned edit_kind_bit(EditKind kind);

struct CorpusConfig {
  std::size_t train_triplets = 3072;
  std::size_t val_triplets = 64;
  std::size_t test_triplets = 100;
  std::size_t min_edits = 2;
  std::size_t max_edits = 4;
  unsigned edit_kinds = kAllEditKinds;

  void validate() const;
};

struct Triplet {
  Scene reference;
  EditScript edits;
  std::size_t target_id = 0;
  std::uint64_t nonce = 0;  // render nonce of the reference image
};

struct Subset {
  Split split = Split::Train;
  std::array<std::size_t, kSubsetSize> members{};
};

struct Corpus {
  std::uint64_t seed = 0;
  CorpusConfig config;
  std::vector<Scene> candidates;
  std::vector<Subset> subsets;
  std::vector<Triplet> train, val, test;

  const std::vector<Triplet>& split(Split s) const;
  // Candidate ids of the subsets belonging to `s`, ascending.
  std::vector<std::size_t> gallery(Split s) const;
  // Subset index of every candidate id.
  std::vector<std::size_t> subset_of() const;
};

std::uint64_t reference_nonce(Split split, std::size_t index);
std::uint64_t candidate_nonce(std::size_t candidate_id);

Corpus gen_corpus(const CorpusConfig& config, std::uint64_t seed);

// Checks oracle soundness, subset structure and target uniqueness; throws on violation.
void verify_corpus(const Corpus& corpus);

// Line-delimited JSON: header, config, then candidate / subset / triplet records.
void write_corpus(const Corpus& corpus, std::ostream& out);
Corpus read_corpus(std::istream& in);
std::string serialize_corpus(const Corpus& corpus);

}  // namespace cirl

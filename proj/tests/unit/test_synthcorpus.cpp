#include <algorithm>
#include <set>
#include <sstream>

#include "cirl/errors.hpp"
#include "cirl/rng.hpp"
#include "cirl/synthcorpus.hpp"
#include "doctest.h"

using namespace cirl;

namespace {

// Independent interpreter: keeps objects as an unordered list, resolves by a
// linear count, and only canonicalizes at the very end.
Scene interpret(const Scene& ref, const EditScript& edits) {
  std::vector<Object> objs = ref.objects;
  int bg = ref.background;
  auto find = [&](const Selector& s) {
    int hit = -1, count = 0;
    for (std::size_t i = 0; i < objs.size(); ++i) {
      if (objs[i].shape == s.shape && objs[i].color == s.color) {
        hit = static_cast<int>(i);
        ++count;
      }
    }
    if (count != 1) throw std::runtime_error("selector");
    return static_cast<std::size_t>(hit);
  };
  for (const Edit& e : edits) {
    if (e.kind == EditKind::Add) {
      objs.push_back(e.object);
    } else if (e.kind == EditKind::Remove) {
      objs.erase(objs.begin() + static_cast<long>(find(e.selector)));
    } else if (e.kind == EditKind::Replace) {
      objs[find(e.selector)] = e.object;
    } else if (e.kind == EditKind::Modify) {
      Object& o = objs[find(e.selector)];
      if (e.attribute == Attribute::Shape) o.shape = e.value;
      if (e.attribute == Attribute::Color) o.color = e.value;
      if (e.attribute == Attribute::Size) o.size = e.value;
    } else {
      bg = e.value;
    }
  }
  std::sort(objs.begin(), objs.end(), [](const Object& a, const Object& b) {
    return std::tie(a.shape, a.color, a.size) < std::tie(b.shape, b.color, b.size);
  });
  return Scene{objs, bg};
}

Object random_object(Rng& rng) {
  return {static_cast<int>(rng.below(kNumShapes)), static_cast<int>(rng.below(kNumColors)),
          static_cast<int>(rng.below(kNumSizes))};
}

// Scene whose (shape, color) selectors are all distinct.
Scene random_scene(Rng& rng, std::size_t max_objects = kMaxObjects) {
  const std::size_t n = 1 + rng.below(max_objects);
  std::vector<Object> objs;
  while (objs.size() < n) {
    const Object o = random_object(rng);
    if (std::none_of(objs.begin(), objs.end(), [&](const Object& p) {
          return p.shape == o.shape && p.color == o.color;
        })) {
      objs.push_back(o);
    }
  }
  return make_scene(objs, static_cast<int>(rng.below(kNumBackgrounds)));
}

bool resolvable(const Scene& s, const Selector& sel) {
  return std::count_if(s.objects.begin(), s.objects.end(), [&](const Object& o) {
           return o.shape == sel.shape && o.color == sel.color;
         }) == 1;
}

Edit random_edit(const Scene& s, Rng& rng) {
  const Object& pick = s.objects[rng.below(s.objects.size())];
  const Selector sel{pick.shape, pick.color};
  switch (rng.below(5)) {
    case 0: return Edit::add(random_object(rng));
    case 1: return Edit::remove(sel);
    case 2: return Edit::replace(sel, random_object(rng));
    case 3: {
      const auto a = static_cast<Attribute>(rng.below(3));
      const int range = a == Attribute::Size ? kNumSizes : kNumShapes;
      return Edit::modify(sel, a, static_cast<int>(rng.below(range)));
    }
    default: return Edit::change_background(static_cast<int>(rng.below(kNumBackgrounds)));
  }
}

// Every syntactically valid single edit, selectors over the full id range.
std::vector<Edit> all_single_edits() {
  std::vector<Edit> out;
  std::vector<Object> objs;
  for (int s = 0; s < kNumShapes; ++s)
    for (int c = 0; c < kNumColors; ++c)
      for (int z = 0; z < kNumSizes; ++z) objs.push_back({s, c, z});
  std::vector<Selector> sels;
  for (int s = 0; s < kNumShapes; ++s)
    for (int c = 0; c < kNumColors; ++c) sels.push_back({s, c});
  for (const Object& o : objs) out.push_back(Edit::add(o));
  for (const Selector& s : sels) {
    out.push_back(Edit::remove(s));
    for (const Object& o : objs) out.push_back(Edit::replace(s, o));
    for (int v = 0; v < kNumShapes; ++v) out.push_back(Edit::modify(s, Attribute::Shape, v));
    for (int v = 0; v < kNumColors; ++v) out.push_back(Edit::modify(s, Attribute::Color, v));
    for (int v = 0; v < kNumSizes; ++v) out.push_back(Edit::modify(s, Attribute::Size, v));
  }
  for (int b = 0; b < kNumBackgrounds; ++b) out.push_back(Edit::change_background(b));
  return out;
}

double flat_cosine(const Matrix& a, const Matrix& b) {
  return cosine_similarity(a.flat(), b.flat());
}

}  // namespace

TEST_CASE("identity modify leaves the scene unchanged") {
  const Scene s = make_scene({{3, 4, 1}, {0, 2, 2}}, 1);
  const Edit e = Edit::modify({0, 2}, Attribute::Color, 2);
  CHECK(apply_edits(s, std::span(&e, 1)) == s);
}

TEST_CASE("replace substitutes one attribute") {
  const Scene s = make_scene({{2, 1, 0}}, 0);
  const Edit e = Edit::replace({2, 1}, {2, 5, 0});
  const Scene out = apply_edits(s, std::span(&e, 1));
  REQUIRE(out.objects.size() == 1);
  CHECK(out.objects[0].color == 5);
  CHECK(out.objects[0].shape == 2);
}

TEST_CASE("apply_edits errors") {
  const Scene s = make_scene({{2, 1, 0}, {2, 1, 2}, {4, 4, 1}, {5, 0, 0}}, 0);
  Edit e = Edit::remove({2, 1});  // matches two objects
  CHECK_THROWS_AS(apply_edits(s, std::span(&e, 1)), Error);
  try {
    apply_edits(s, std::span(&e, 1));
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::UnresolvableSelector);
  }
  e = Edit::remove({7, 7});  // matches nothing
  try {
    apply_edits(s, std::span(&e, 1));
    FAIL("expected throw");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::UnresolvableSelector);
  }
  e = Edit::add({1, 1, 1});
  try {
    apply_edits(s, std::span(&e, 1));
    FAIL("expected throw");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::CapacityExceeded);
  }
}

TEST_CASE("apply_edits agrees with an independent interpreter") {
  Rng rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 4000 && checked < 1000; ++trial) {
    const Scene ref = random_scene(rng);
    EditScript script;
    Scene cur = ref;
    bool ok = true;
    for (int i = 0; i < 3 && ok; ++i) {
      const Edit e = random_edit(cur, rng);
      try {
        cur = apply_edit(cur, e);
        script.push_back(e);
      } catch (const Error&) {
        ok = false;
      }
    }
    if (!ok) continue;
    CHECK(apply_edits(ref, script) == interpret(ref, script));
    ++checked;
  }
  CHECK(checked >= 500);
}

TEST_CASE("background caption is three fixed tokens") {
  const Edit e = Edit::change_background(2);
  const TokenSeq t = caption_tokens(std::span(&e, 1));
  CHECK(t == TokenSeq{tokens::kBackgroundOp, tokens::kBackgroundBase + 2, tokens::kEndEdit});
}

TEST_CASE("captions are injective over single edits and round-trip") {
  const auto edits = all_single_edits();
  std::set<TokenSeq> seen;
  for (const Edit& e : edits) {
    const TokenSeq t = caption_tokens(std::span(&e, 1));
    CHECK(t.size() <= kMaxCaptionTokens);
    for (int tok : t) {
      CHECK(tok >= tokens::kFirstCaption);
      CHECK(tok < tokens::kVocabSize);
    }
    seen.insert(t);
    const EditScript back = parse_caption(t);
    REQUIRE(back.size() == 1);
    CHECK(back[0] == e);
  }
  CHECK(seen.size() == edits.size());
}

TEST_CASE("two-edit captions round-trip exhaustively") {
  const auto edits = all_single_edits();
  std::size_t count = 0;
  for (const Edit& a : edits) {
    for (const Edit& b : edits) {
      const EditScript s{a, b};
      const TokenSeq t = caption_tokens(s);
      if (parse_caption(t) != s) {
        FAIL("round trip failed");
      }
      ++count;
    }
  }
  CHECK(count == edits.size() * edits.size());
}

TEST_CASE("malformed captions are rejected") {
  const std::vector<int> bad1{tokens::kAdd, tokens::kShapeBase};
  CHECK_THROWS_AS(parse_caption(bad1), Error);
  const std::vector<int> bad2{tokens::kColorBase};
  CHECK_THROWS_AS(parse_caption(bad2), Error);
}

TEST_CASE("render is deterministic and injective at zero noise") {
  Renderer r(42, {16, 32, 0.1});
  const Scene s = make_scene({{1, 2, 1}, {6, 0, 2}}, 3);
  CHECK(r.render(s, 9) == r.render(s, 9));
  CHECK_FALSE(r.render(s, 9) == r.render(s, 10));

  Renderer clean(42, {16, 32, 0.0});
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const Scene a = random_scene(rng);
    const Edit e = random_edit(a, rng);
    Scene b;
    try {
      b = apply_edit(a, e);
    } catch (const Error&) {
      continue;
    }
    if (a == b) continue;
    CHECK_FALSE(clean.render(a, 1) == clean.render(b, 2));
  }
}

TEST_CASE("sigma 0.1 renders stay closer to themselves than to single-edit neighbours") {
  Renderer r(42, {16, 32, 0.1});
  Rng rng(77);
  int samples = 0, wins = 0;
  std::uint64_t nonce = 1;
  while (samples < 1000) {
    const Scene a = random_scene(rng);
    Scene b;
    try {
      b = apply_edit(a, random_edit(a, rng));
    } catch (const Error&) {
      continue;
    }
    if (a == b) continue;
    const Matrix x1 = r.render(a, nonce++);
    const Matrix x2 = r.render(a, nonce++);
    const Matrix y = r.render(b, nonce++);
    ++samples;
    if (flat_cosine(x1, x2) > flat_cosine(x1, y)) ++wins;
  }
  CHECK(wins == samples);
}

TEST_CASE("corpus generation is deterministic and seed sensitive") {
  const CorpusConfig cfg;
  const Corpus a = gen_corpus(cfg, 42);
  const Corpus b = gen_corpus(cfg, 42);
  const Corpus c = gen_corpus(cfg, 43);
  CHECK(serialize_corpus(a) == serialize_corpus(b));
  CHECK(a.candidates != c.candidates);
}

TEST_CASE("default corpus is sound and its subsets are valid") {
  const Corpus corpus = gen_corpus(CorpusConfig{}, 42);
  CHECK_NOTHROW(verify_corpus(corpus));
  CHECK(corpus.candidates.size() == corpus.subsets.size() * kSubsetSize);
  CHECK(corpus.gallery(Split::Test).size() == 600);

  std::vector<int> owner(corpus.candidates.size(), 0);
  for (const Subset& s : corpus.subsets) {
    const auto shapes = shape_multiset(corpus.candidates[s.members[0]]);
    std::set<Scene> distinct;
    for (std::size_t id : s.members) {
      ++owner[id];
      CHECK(shape_multiset(corpus.candidates[id]) == shapes);
      distinct.insert(corpus.candidates[id]);
    }
    CHECK(distinct.size() == kSubsetSize);
  }
  for (int n : owner) CHECK(n == 1);

  const auto subset_of = corpus.subset_of();
  for (Split split : {Split::Train, Split::Val, Split::Test}) {
    for (const Triplet& t : corpus.split(split)) {
      CHECK_NOTHROW(validate_script(t.edits));
      const Scene target = apply_edits(t.reference, t.edits);
      // exhaustive scan: exactly one candidate equals the oracle target
      const auto hits = std::count(corpus.candidates.begin(), corpus.candidates.end(), target);
      CHECK(hits == 1);
      CHECK(corpus.candidates[t.target_id] == target);

      // partial-edit distractors: any strict sub-script, the empty one included
      const Subset& s = corpus.subsets[subset_of[t.target_id]];
      std::set<Scene> partial;
      const std::size_t n = t.edits.size();
      for (unsigned mask = 0; mask + 1 < (1u << n); ++mask) {
        EditScript sub;
        for (std::size_t i = 0; i < n; ++i)
          if (mask & (1u << i)) sub.push_back(t.edits[i]);
        try {
          partial.insert(apply_edits(t.reference, sub));
        } catch (const Error&) {
        }
      }
      int found = 0;
      for (std::size_t id : s.members) {
        if (id != t.target_id && partial.count(corpus.candidates[id])) ++found;
      }
      CHECK(found >= 2);
    }
  }
}

TEST_CASE("corpus serialization round-trips") {
  CorpusConfig cfg;
  cfg.train_triplets = 40;
  cfg.val_triplets = 8;
  cfg.test_triplets = 10;
  const Corpus a = gen_corpus(cfg, 7);
  const std::string text = serialize_corpus(a);
  std::istringstream in(text);
  const Corpus b = read_corpus(in);
  CHECK(serialize_corpus(b) == text);
  CHECK(b.candidates == a.candidates);
  CHECK_NOTHROW(verify_corpus(b));
}

TEST_CASE("corpus config validation") {
  CorpusConfig cfg;
  cfg.train_triplets = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = CorpusConfig{};
  cfg.min_edits = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = CorpusConfig{};
  cfg.edit_kinds = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK_THROWS_AS(split_from_string("dev"), Error);
}

#include <cmath>

#include "cirl/errors.hpp"
#include "cirl/trainer.hpp"
#include "doctest.h"

using namespace cirl;

namespace {

Corpus small_corpus(std::size_t train = 48) {
  CorpusConfig cfg;
  cfg.train_triplets = train;
  cfg.val_triplets = 8;
  cfg.test_triplets = 10;
  return gen_corpus(cfg, 42);
}

struct Setup {
  Corpus corpus;
  Model model;
  Renderer renderer;
  FeatureStore features;

  explicit Setup(ModelConfig mc = {}, std::size_t train = 48)
      : corpus(small_corpus(train)),
        model(mc),
        renderer(corpus.seed, RenderConfig{}),
        features(corpus, renderer, model.vision()) {}
};

std::vector<Matrix> snapshot(Model& m) {
  std::vector<Matrix> out;
  for (Parameter* p : m.parameters()) out.push_back(p->value);
  return out;
}

TrainConfig quick(std::size_t epochs = 1) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = 8;
  tc.validate_each_epoch = false;
  return tc;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig tc;
  CHECK_NOTHROW(tc.validate());
  tc.batch_size = 1;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.lambda = 0.0;
  CHECK_THROWS_AS(tc.validate(), Error);
  tc = TrainConfig{};
  tc.lr_pool = 0.0;
  CHECK_THROWS_AS(tc.validate(), Error);
}

TEST_CASE("adam with zero learning rate is a no-op, pool-only steps touch only the pool") {
  Setup s;
  std::vector<TokenSeq> captions;
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto batch = make_batch(s.corpus, s.features, Split::Train, idx, captions);
  const TrainConfig tc = quick();
  auto params = s.model.parameters();

  const auto before = snapshot(s.model);
  s.model.zero_grad();
  batch_objective(s.model, batch, tc, true);
  Adam adam;
  adam.step(params, std::vector<double>(params.size(), 0.0));
  CHECK(snapshot(s.model) == before);

  std::vector<double> lrs;
  for (Parameter* p : params) lrs.push_back(is_pool_parameter(*p) ? 1e-2 : 0.0);
  adam.step(params, lrs);
  const auto after = snapshot(s.model);
  bool pool_moved = false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (is_pool_parameter(*params[i])) {
      pool_moved = pool_moved || after[i] != before[i];
    } else {
      CHECK(after[i] == before[i]);
    }
  }
  CHECK(pool_moved);
}

TEST_CASE("training is deterministic and leaves the frozen encoder alone") {
  Setup a, b;
  const std::uint64_t sum = a.model.vision().checksum();
  const auto ra = train(a.model, a.corpus, a.features, quick());
  const auto rb = train(b.model, b.corpus, b.features, quick());
  CHECK(snapshot(a.model) == snapshot(b.model));
  CHECK(ra.log[0].loss == rb.log[0].loss);
  CHECK(a.model.vision().checksum() == sum);
}

TEST_CASE("training loss decreases over the first three epochs") {
  Setup s({}, 128);
  TrainConfig tc;
  tc.epochs = 3;
  tc.validate_each_epoch = false;
  const auto r = train(s.model, s.corpus, s.features, tc);
  REQUIRE(r.log.size() == 3);
  CHECK(r.log[1].loss < r.log[0].loss);
  CHECK(r.log[2].loss < r.log[1].loss);
  for (const EpochLog& e : r.log) CHECK(std::isfinite(e.loss));
}

TEST_CASE("soft prompt modes all train") {
  for (SoftPromptMode mode :
       {SoftPromptMode::None, SoftPromptMode::Universal, SoftPromptMode::Instance}) {
    ModelConfig mc;
    mc.soft_mode = mode;
    Setup s(mc);
    TrainConfig tc = quick();
    tc.validate_each_epoch = true;
    const auto r = train(s.model, s.corpus, s.features, tc);
    REQUIRE(r.log.size() == 1);
    CHECK(std::isfinite(r.log[0].loss));
    CHECK(r.log[0].val_recall1 >= 0.0);
    CHECK(r.log[0].val_recall1 <= 1.0);
    if (mode != SoftPromptMode::Instance) CHECK(r.log[0].key == 0.0);
    CHECK(to_json_line(r.log[0]).find("\"val_recall1\"") != std::string::npos);
  }
}

TEST_CASE("training groups pair each triplet with its partial-edit siblings") {
  const Corpus c = small_corpus();
  const auto plain = training_groups(c, false);
  const auto groups = training_groups(c, true);
  REQUIRE(plain.size() == c.train.size());
  REQUIRE(groups.size() == c.train.size());
  const auto subset_of = c.subset_of();
  std::size_t siblings = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    REQUIRE(plain[g].size() == 1);
    const Triplet& t = c.train[g];
    CHECK(groups[g].front().target == t.target_id);
    CHECK(groups[g].front().caption == caption_tokens(t.edits));
    for (const TrainPair& p : groups[g]) {
      CHECK(p.triplet == g);
      CHECK(subset_of[p.target] == subset_of[t.target_id]);
      CHECK(apply_edits(t.reference, parse_caption(p.caption)) == c.candidates[p.target]);
    }
    siblings += groups[g].size() - 1;
  }
  CHECK(siblings >= 2 * groups.size());
}

TEST_CASE("gradient audit passes on every trainable group") {
  ModelConfig mc;
  mc.pool_size = 6;
  mc.top_k = 2;
  mc.frontend.d_t = 16;
  mc.frontend.d_i = 8;
  mc.frontend.d_h = 8;
  mc.frontend.n_queries = 2;
  mc.layers = 1;
  mc.heads = 2;
  Setup s(mc);
  std::vector<TokenSeq> captions;
  const std::vector<std::size_t> idx{0, 1, 2};
  const auto batch = make_batch(s.corpus, s.features, Split::Train, idx, captions);
  TrainConfig tc = quick();
  tc.lambda = 2.0;
  const auto report = grad_audit(s.model, batch, tc, 1e-5, 12, 3);
  bool saw_vision = false;
  for (const GroupAudit& g : report.groups) {
    if (g.frozen) {
      saw_vision = g.group == "vision";
      CHECK(g.max_abs_grad == 0.0);
      continue;
    }
    INFO(g.group);
    INFO(g.max_abs_grad);
    CHECK(g.coordinates > 0);
    CHECK(g.max_rel_error < 1e-4);
  }
  CHECK(saw_vision);
  CHECK(report.groups.size() == 7);
  CHECK(report.unselected_prompt_grad == 0.0);
}

TEST_CASE("non-finite losses abort") {
  Setup s;
  std::vector<TokenSeq> captions;
  const std::vector<std::size_t> idx{0, 1};
  const auto batch = make_batch(s.corpus, s.features, Split::Train, idx, captions);
  s.model.find("decoder.final_ln_gain")->value(0, 0) = std::nan("");
  try {
    batch_objective(s.model, batch, quick(), false);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonFiniteLoss);
  }
}

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cirl/checkpoint.hpp"
#include "cirl/commands.hpp"
#include "cirl/errors.hpp"
#include "cirl/rng.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace cirl;

namespace {

fs::path scratch(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "cirl_test_commands" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig tiny(const fs::path& out) {
  RunConfig c;
  c.load_text(
      "corpus.train_triplets = 16\n"
      "corpus.val_triplets = 4\n"
      "corpus.test_triplets = 6\n"
      "train.epochs = 1\n"
      "train.batch = 8\n"
      "model.n_queries = 4\n"
      "eval.k_list = 1,5\n");
  c.out = out.string();
  return c;
}

}  // namespace

TEST_CASE("eval on queries equal to their targets gives perfect recall") {
  const fs::path dir = scratch("eval");
  RunConfig c = tiny(dir);
  cmd_gen_data(c);
  const Corpus corpus = load_corpus(dir / "corpus.jsonl");
  const auto gallery = corpus.gallery(Split::Test);
  Rng rng(1);
  const Matrix g = Matrix::gaussian(gallery.size(), 8, 1.0, rng);
  Matrix q(corpus.test.size(), 8);
  std::vector<std::size_t> qids;
  for (std::size_t i = 0; i < corpus.test.size(); ++i) {
    const std::size_t row = static_cast<std::size_t>(
        std::find(gallery.begin(), gallery.end(), corpus.test[i].target_id) - gallery.begin());
    for (std::size_t c2 = 0; c2 < 8; ++c2) q(i, c2) = g(row, c2);
    qids.push_back(i);
  }
  write_embeddings(dir / "test_queries.emb", q, qids);
  write_embeddings(dir / "test_gallery.emb", g, gallery);
  cmd_eval(dir, dir / "corpus.jsonl", Split::Test, c);
  std::ifstream in(dir / "metrics.json");
  const auto m = nlohmann::json::parse(in);
  CHECK(m["recall"]["R@1"].get<double>() == 1.0);
  CHECK(m["recall_subset"]["R_subset@1"].get<double>() == 1.0);
  CHECK(m["R_mean"].get<double>() == 1.0);
}

TEST_CASE("pooling ablation runs every value and merges the table") {
  const fs::path dir = scratch("ablate");
  RunConfig c = tiny(dir);
  std::ostringstream log;
  cmd_ablate(c, "pooling", {"weighted_mean", "last", "mean"}, {7}, &log);
  CHECK(fs::exists(dir / "runs" / "weighted_mean_seed7.json"));
  CHECK(fs::exists(dir / "runs" / "last_seed7.json"));
  CHECK(fs::exists(dir / "runs" / "mean_seed7.json"));
  std::ifstream md(dir / "ablation.md");
  std::stringstream table;
  table << md.rdbuf();
  for (const char* v : {"| weighted_mean |", "| last |", "| mean |"})
    CHECK(table.str().find(v) != std::string::npos);
  std::ifstream js(dir / "ablation.json");
  CHECK(nlohmann::json::parse(js)["runs"].size() == 3);
}

TEST_CASE("ablation rejects an invalid value before running anything") {
  const fs::path dir = scratch("ablate_bad");
  RunConfig c = tiny(dir);
  CHECK_THROWS_AS(cmd_ablate(c, "pooling", {"mean", "max"}, {1}, nullptr), Error);
  CHECK_FALSE(fs::exists(dir / "runs"));
  CHECK_THROWS_AS(ablation_key("depth"), Error);
}

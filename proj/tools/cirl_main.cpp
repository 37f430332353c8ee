// cirl: command-line driver for corpus generation, training, encoding,
// evaluation, benchmarking and ablations.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cirl/commands.hpp"
#include "cirl/errors.hpp"
#include "json.hpp"

namespace {

using cirl::RunConfig;

struct Overrides {
  std::string config_file;
  std::optional<std::string> seed, out;
  // flag name -> config key
  std::map<std::string, std::optional<std::string>> model;
};

const std::vector<std::pair<std::string, std::string>> kModelFlags = {
    {"strategy", "model.pooling"},      {"soft-mode", "model.soft_mode"},
    {"task-prompt-len", "model.task_prompt_len"}, {"lp", "model.prompt_len"},
    {"topk", "model.top_k"},            {"pool-size", "model.pool_size"},
    {"lambda", "train.lambda"},         {"batch", "train.batch"},
};

void add_common(CLI::App* cmd, Overrides& o, bool model_flags) {
  cmd->add_option("--config", o.config_file, "key = value config file");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out", o.out, "output directory");
  if (!model_flags) return;
  for (const auto& [flag, key] : kModelFlags) {
    cmd->add_option("--" + flag, o.model[flag], "override " + key);
  }
}

RunConfig resolve(const Overrides& o) {
  RunConfig c;
  if (!o.config_file.empty()) c.load_file(o.config_file);
  if (o.seed) c.set("seed", *o.seed);
  if (o.out) c.set("out", *o.out);
  for (const auto& [flag, key] : kModelFlags) {
    const auto it = o.model.find(flag);
    if (it != o.model.end() && it->second) c.set(key, *it->second);
  }
  return c;
}

void print_effective(const RunConfig& c) {
  std::cerr << "# effective config\n" << c.to_text();
}

[[noreturn]] void fail(std::string_view kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << std::endl;
  std::exit(1);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cirl: composed image retrieval with instance-specific soft prompts"};
  app.require_subcommand(1);

  Overrides o;
  std::string corpus, checkpoint, embeddings, split = "test", axis, csv;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t repetitions = 3, index = 0;

  auto* gen = app.add_subcommand("gen-data", "generate and verify a synthetic corpus");
  add_common(gen, o, false);

  auto* tr = app.add_subcommand("train", "train a model on a corpus");
  add_common(tr, o, true);
  tr->add_option("--corpus", corpus, "corpus file")->required();

  auto* enc = app.add_subcommand("encode", "encode the queries and gallery of a split");
  add_common(enc, o, false);
  enc->add_option("--checkpoint", checkpoint)->required();
  enc->add_option("--corpus", corpus)->required();
  enc->add_option("--split", split);

  auto* ev = app.add_subcommand("eval", "retrieval metrics from encoded embeddings");
  add_common(ev, o, false);
  ev->add_option("--embeddings", embeddings, "directory written by encode")->required();
  ev->add_option("--corpus", corpus)->required();
  ev->add_option("--split", split);

  auto* bench = app.add_subcommand("bench", "per-query encoding latency");
  add_common(bench, o, false);
  bench->add_option("--checkpoint", checkpoint)->required();
  bench->add_option("--corpus", corpus)->required();
  bench->add_option("--split", split);
  bench->add_option("--repetitions", repetitions);

  auto* abl = app.add_subcommand("ablate", "train and evaluate across values of one axis");
  add_common(abl, o, true);
  abl->add_option("--axis", axis)->required();
  abl->add_option("--values", values)->required()->delimiter(',');
  abl->add_option("--seeds", seeds)->delimiter(',');

  auto* insp = app.add_subcommand("inspect-pool", "prompt-pool selection frequencies over a split");
  add_common(insp, o, false);
  insp->add_option("--checkpoint", checkpoint)->required();
  insp->add_option("--corpus", corpus)->required();
  insp->add_option("--split", split);

  auto* att = app.add_subcommand("attention", "prompt-token attention masses as CSV");
  add_common(att, o, false);
  att->add_option("--checkpoint", checkpoint)->required();
  att->add_option("--corpus", corpus)->required();
  att->add_option("--split", split);
  att->add_option("--index", index);
  att->add_option("--csv", csv);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("ParseError", e.what());
  }

  try {
    const RunConfig config = resolve(o);
    const cirl::Split sp = cirl::split_from_string(split);
    std::string result;
    if (*gen) {
      print_effective(config);
      result = cirl::cmd_gen_data(config);
    } else if (*tr) {
      print_effective(config);
      result = cirl::cmd_train(config, corpus, &std::cerr);
    } else if (*enc) {
      result = cirl::cmd_encode(checkpoint, corpus, sp, config.out);
    } else if (*ev) {
      result = cirl::cmd_eval(embeddings, corpus, sp, config);
    } else if (*bench) {
      result = cirl::cmd_bench(checkpoint, corpus, sp, repetitions);
    } else if (*abl) {
      print_effective(config);
      result = cirl::cmd_ablate(config, axis, values, seeds, &std::cerr);
    } else if (*insp) {
      result = cirl::cmd_inspect_pool(checkpoint, corpus, sp);
    } else if (*att) {
      if (csv.empty()) csv = (std::filesystem::path(config.out) / "attention.csv").string();
      result = cirl::cmd_attention(checkpoint, corpus, sp, index, csv);
    }
    std::cout << result << std::endl;
  } catch (const cirl::Error& e) {
    fail(cirl::to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    fail("RuntimeError", e.what());
  }
  return 0;
}

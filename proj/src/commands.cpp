#include "cirl/commands.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "cirl/checkpoint.hpp"
#include "cirl/errors.hpp"
#include "cirl/model.hpp"
#include "cirl/trainer.hpp"
#include "json.hpp"

namespace cirl {

using ojson = nlohmann::ordered_json;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
}

fs::path embedding_path(const fs::path& dir, Split split, const char* what) {
  return dir / (std::string(to_string(split)) + "_" + what + ".emb");
}

struct Loaded {
  RunConfig config;
  Corpus corpus;
  Model model;
  Renderer renderer;
  FeatureStore features;

  Loaded(const fs::path& checkpoint, const fs::path& corpus_path)
      : corpus(load_corpus(corpus_path)),
        model(load_checkpoint(checkpoint, config)),
        renderer(corpus.seed, config.render()),
        features(corpus, renderer, model.vision()) {}
};

ojson report_json(const MetricReport& r) { return ojson::parse(r.to_json()); }

}  // namespace

Corpus load_corpus(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open corpus " + path.string());
  Corpus corpus = read_corpus(in);
  verify_corpus(corpus);
  return corpus;
}

std::string cmd_gen_data(const RunConfig& config) {
  config.corpus.validate();
  const Corpus corpus = gen_corpus(config.corpus, config.seed);
  verify_corpus(corpus);
  ensure_dir(config.out);
  const fs::path path = fs::path(config.out) / "corpus.jsonl";
  write_text(path, serialize_corpus(corpus));
  ojson j;
  j["corpus"] = path.string();
  j["seed"] = config.seed;
  j["candidates"] = corpus.candidates.size();
  j["subsets"] = corpus.subsets.size();
  j["train"] = corpus.train.size();
  j["val"] = corpus.val.size();
  j["test"] = corpus.test.size();
  return j.dump();
}

std::string cmd_train(const RunConfig& config, const fs::path& corpus_path, std::ostream* log) {
  config.validate();
  const Corpus corpus = load_corpus(corpus_path);
  ensure_dir(config.out);
  const fs::path out(config.out);
  write_text(out / "effective_config.txt", config.to_text());

  Model model(config.model);
  const Renderer renderer(corpus.seed, config.render());
  const FeatureStore features(corpus, renderer, model.vision());
  std::ofstream log_file(out / "train_log.jsonl", std::ios::trunc);
  const TrainResult result = train(model, corpus, features, config.train, [&](const EpochLog& e) {
    const std::string line = to_json_line(e);
    log_file << line << '\n' << std::flush;
    if (log) *log << line << '\n' << std::flush;
  });
  const fs::path ckpt = out / "model.ckpt";
  save_checkpoint(model, config, ckpt);

  ojson j;
  j["checkpoint"] = ckpt.string();
  j["epochs"] = result.log.size();
  j["initial_val_recall1"] = result.initial_val_recall1;
  if (!result.log.empty()) {
    j["final_loss"] = result.log.back().loss;
    j["final_val_recall1"] = result.log.back().val_recall1;
    j["wall_seconds"] = result.log.back().wall_seconds;
  }
  return j.dump();
}

std::string cmd_encode(const fs::path& checkpoint, const fs::path& corpus_path, Split split,
                       const fs::path& out) {
  Loaded run(checkpoint, corpus_path);
  const SplitEmbeddings emb = encode_split(run.model, run.corpus, run.features, split);
  ensure_dir(out);
  std::vector<std::size_t> query_ids(emb.queries.rows());
  std::iota(query_ids.begin(), query_ids.end(), 0);
  write_embeddings(embedding_path(out, split, "queries"), emb.queries, query_ids);
  write_embeddings(embedding_path(out, split, "gallery"), emb.gallery, emb.gallery_ids);
  ojson j;
  j["split"] = to_string(split);
  j["queries"] = emb.queries.rows();
  j["gallery"] = emb.gallery.rows();
  j["dir"] = out.string();
  return j.dump();
}

std::string cmd_eval(const fs::path& embeddings_dir, const fs::path& corpus_path, Split split,
                     const RunConfig& config) {
  const Corpus corpus = load_corpus(corpus_path);
  SplitEmbeddings emb;
  std::vector<std::size_t> query_ids;
  emb.queries = read_embeddings(embedding_path(embeddings_dir, split, "queries"), query_ids);
  emb.gallery = read_embeddings(embedding_path(embeddings_dir, split, "gallery"), emb.gallery_ids);
  const auto& triplets = corpus.split(split);
  for (std::size_t id : query_ids) {
    if (id >= triplets.size()) {
      throw Error(ErrorKind::SchemaMismatch, "query id " + std::to_string(id) + " not in split");
    }
    emb.ground_truth.push_back(triplets[id].target_id);
  }
  const SubsetMap subsets = SubsetMap::from_corpus(corpus);
  const MetricReport report = evaluate(emb, &subsets, config.k_list, config.subset_k_list);
  ensure_dir(config.out);
  write_text(fs::path(config.out) / "metrics.json", report.to_json() + "\n");
  ojson j = report_json(report);
  j.erase("ranks");
  j.erase("subset_ranks");
  j["split"] = to_string(split);
  return j.dump();
}

std::string cmd_bench(const fs::path& checkpoint, const fs::path& corpus_path, Split split,
                      std::size_t repetitions) {
  Loaded run(checkpoint, corpus_path);
  const auto& triplets = run.corpus.split(split);
  std::vector<TokenSeq> captions;
  std::vector<QueryInput> inputs;
  captions.reserve(triplets.size());
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    captions.push_back(caption_tokens(triplets[i].edits));
    inputs.push_back({&run.features.reference(split, i), captions.back()});
  }
  return bench_latency(run.model, inputs, repetitions).to_json();
}

std::string cmd_inspect_pool(const fs::path& checkpoint, const fs::path& corpus_path, Split split) {
  Loaded run(checkpoint, corpus_path);
  const ModelConfig& mc = run.model.config();
  const std::size_t m = mc.pool_size;
  std::vector<std::size_t> query_counts(m, 0), target_counts(m, 0);
  auto pick = [&](Role role, const Matrix& features, std::span<const int> caption) {
    if (mc.soft_mode == SoftPromptMode::Universal) return fixed_selection(mc.top_k);
    return select(run.model.pool(), image_key_query(features), run.model.text_query(role, caption),
                  mc.top_k);
  };
  const auto& triplets = run.corpus.split(split);
  if (mc.soft_mode != SoftPromptMode::None) {
    for (std::size_t i = 0; i < triplets.size(); ++i) {
      const TokenSeq caption = caption_tokens(triplets[i].edits);
      for (std::size_t s : pick(Role::Query, run.features.reference(split, i), caption).indices) {
        ++query_counts[s];
      }
    }
    for (std::size_t id : run.corpus.gallery(split)) {
      for (std::size_t s : pick(Role::Target, run.features.candidate(id), {}).indices) {
        ++target_counts[s];
      }
    }
  }
  const double total = static_cast<double>(std::accumulate(query_counts.begin(), query_counts.end(), 0ul) +
                                           std::accumulate(target_counts.begin(), target_counts.end(), 0ul));
  ojson j;
  j["split"] = to_string(split);
  j["soft_mode"] = to_string(mc.soft_mode);
  j["top_k"] = mc.top_k;
  ojson entries = ojson::array();
  std::size_t unused = 0;
  for (std::size_t e = 0; e < m; ++e) {
    const std::size_t c = query_counts[e] + target_counts[e];
    if (c == 0) ++unused;
    entries.push_back({{"entry", e},
                       {"query_selections", query_counts[e]},
                       {"target_selections", target_counts[e]},
                       {"frequency", total > 0 ? static_cast<double>(c) / total : 0.0}});
  }
  j["entries"] = entries;
  j["unused_entries"] = unused;
  return j.dump();
}

std::string cmd_attention(const fs::path& checkpoint, const fs::path& corpus_path, Split split,
                          std::size_t index, const fs::path& csv) {
  Loaded run(checkpoint, corpus_path);
  const auto& triplets = run.corpus.split(split);
  if (index >= triplets.size()) {
    throw Error(ErrorKind::InvalidConfig, "triplet index out of range for split");
  }
  const TokenSeq caption = caption_tokens(triplets[index].edits);
  const auto rows = attention_report(run.model, run.features.reference(split, index), caption);
  if (csv.has_parent_path()) ensure_dir(csv.parent_path());
  std::ofstream out(csv, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + csv.string());
  write_attention_csv(rows, out);
  ojson j;
  j["csv"] = csv.string();
  j["rows"] = rows.size();
  return j.dump();
}

ExperimentResult run_experiment(const RunConfig& config, const Corpus* corpus,
                                std::ostream* log) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  Corpus generated;
  if (corpus == nullptr) {
    generated = gen_corpus(config.corpus, config.seed);
    corpus = &generated;
  }
  ExperimentResult result;
  result.seed = config.seed;
  result.model = std::make_shared<Model>(config.model);
  Model& model = *result.model;
  const Renderer renderer(corpus->seed, config.render());
  const FeatureStore features(*corpus, renderer, model.vision());
  const SubsetMap subsets = SubsetMap::from_corpus(*corpus);

  const std::size_t one[] = {1};
  result.untrained_recall1 =
      evaluate(encode_split(model, *corpus, features, Split::Test), nullptr, one, {}).recall_at(1);
  const TrainResult trained = train(model, *corpus, features, config.train, [&](const EpochLog& e) {
    if (log) *log << to_json_line(e) << '\n' << std::flush;
  });
  result.log = trained.log;
  if (!trained.log.empty()) result.final_loss = trained.log.back().loss;
  const SplitEmbeddings emb = encode_split(model, *corpus, features, Split::Test);
  result.chance = 1.0 / static_cast<double>(emb.gallery_ids.size());
  result.test = evaluate(emb, &subsets, config.k_list, config.subset_k_list);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string ablation_key(const std::string& axis) {
  static const std::map<std::string, std::string> aliases = {
      {"soft_mode", "model.soft_mode"},      {"soft-mode", "model.soft_mode"},
      {"task_prompt_len", "model.task_prompt_len"},
      {"task-prompt-len", "model.task_prompt_len"},
      {"pooling", "model.pooling"},          {"strategy", "model.pooling"},
      {"lp", "model.prompt_len"},            {"prompt_len", "model.prompt_len"},
      {"topk", "model.top_k"},               {"top_k", "model.top_k"},
      {"pool_size", "model.pool_size"},      {"pool-size", "model.pool_size"},
      {"lambda", "train.lambda"},            {"batch", "train.batch"},
  };
  const auto it = aliases.find(axis);
  if (it != aliases.end()) return it->second;
  for (const std::string& k : RunConfig::keys()) {
    if (k == axis) return k;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown ablation axis '" + axis + "'");
}

std::vector<ExperimentResult> run_ablation(const RunConfig& base, const std::string& axis,
                                           const std::vector<std::string>& values,
                                           const std::vector<std::uint64_t>& seeds,
                                           std::ostream* log) {
  const std::string key = ablation_key(axis);
  if (values.empty() || seeds.empty()) {
    throw Error(ErrorKind::InvalidConfig, "ablation needs at least one value and one seed");
  }
  // Validate every configuration before running anything.
  for (const std::string& v : values) {
    RunConfig c = base;
    c.set(key, v);
    c.validate();
  }
  std::vector<ExperimentResult> results;
  for (std::uint64_t seed : seeds) {
    RunConfig seeded = base;
    seeded.set("seed", std::to_string(seed));
    const Corpus corpus = gen_corpus(seeded.corpus, seed);
    for (const std::string& v : values) {
      RunConfig c = seeded;
      c.set(key, v);
      ExperimentResult r = run_experiment(c, &corpus, nullptr);
      r.value = v;
      if (log) {
        *log << ojson({{"axis", key}, {"value", v}, {"seed", seed},
                       {"R_mean", r.test.r_mean}, {"R@1", r.test.recall_at(r.test.ks.front())},
                       {"seconds", r.seconds}})
                    .dump()
             << '\n'
             << std::flush;
      }
      r.model.reset();
      results.push_back(std::move(r));
    }
  }
  return results;
}

std::string ablation_table(const std::vector<ExperimentResult>& results) {
  if (results.empty()) return {};
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  for (const ExperimentResult& r : results) {
    if (std::find(values.begin(), values.end(), r.value) == values.end()) values.push_back(r.value);
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }
  const MetricReport& first = results.front().test;
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << "| value |";
  for (std::size_t k : first.ks) s << " R@" << k << " |";
  for (std::size_t k : first.subset_ks) s << " Rs@" << k << " |";
  s << " R_mean | Avg |\n|---|";
  for (std::size_t i = 0; i < first.ks.size() + first.subset_ks.size() + 2; ++i) s << "---|";
  s << '\n';
  for (const std::string& v : values) {
    std::vector<double> recall(first.ks.size(), 0.0), subset(first.subset_ks.size(), 0.0);
    double r_mean = 0.0, avg = 0.0;
    std::size_t n = 0;
    for (const ExperimentResult& r : results) {
      if (r.value != v) continue;
      for (std::size_t i = 0; i < recall.size(); ++i) recall[i] += r.test.recall[i];
      for (std::size_t i = 0; i < subset.size(); ++i) subset[i] += r.test.recall_subset[i];
      r_mean += r.test.r_mean;
      avg += r.test.avg.value_or(0.0);
      ++n;
    }
    s << "| " << v << " |";
    for (double x : recall) s << ' ' << x / n << " |";
    for (double x : subset) s << ' ' << x / n << " |";
    s << ' ' << r_mean / n << " | " << avg / n << " |\n";
  }
  s << "\nR_mean per seed\n\n| seed |";
  for (const std::string& v : values) s << ' ' << v << " |";
  s << "\n|---|";
  for (std::size_t i = 0; i < values.size(); ++i) s << "---|";
  s << '\n';
  for (std::uint64_t seed : seeds) {
    s << "| " << seed << " |";
    for (const std::string& v : values) {
      for (const ExperimentResult& r : results) {
        if (r.seed == seed && r.value == v) s << ' ' << r.test.r_mean << " |";
      }
    }
    s << '\n';
  }
  return s.str();
}

std::string ablation_json(const std::string& axis, const std::vector<ExperimentResult>& results) {
  ojson runs = ojson::array();
  for (const ExperimentResult& r : results) {
    ojson m = report_json(r.test);
    m.erase("ranks");
    m.erase("subset_ranks");
    runs.push_back({{"value", r.value},
                    {"seed", r.seed},
                    {"metrics", m},
                    {"untrained_recall1", r.untrained_recall1},
                    {"final_loss", r.final_loss},
                    {"seconds", r.seconds}});
  }
  ojson j;
  j["axis"] = axis;
  j["runs"] = runs;
  return j.dump();
}

std::string cmd_ablate(const RunConfig& base, const std::string& axis,
                       const std::vector<std::string>& values,
                       const std::vector<std::uint64_t>& seeds, std::ostream* log) {
  const auto results = run_ablation(base, axis, values, seeds, log);
  ensure_dir(base.out);
  const fs::path out(base.out);
  const std::string key = ablation_key(axis);
  ensure_dir(out / "runs");
  for (const ExperimentResult& r : results) {
    ojson m = report_json(r.test);
    m["value"] = r.value;
    m["seed"] = r.seed;
    m["untrained_recall1"] = r.untrained_recall1;
    write_text(out / "runs" / (r.value + "_seed" + std::to_string(r.seed) + ".json"),
               m.dump() + "\n");
  }
  write_text(out / "ablation.json", ablation_json(key, results) + "\n");
  const std::string table = ablation_table(results);
  write_text(out / "ablation.md", table);
  ojson j;
  j["axis"] = key;
  j["runs"] = results.size();
  j["table"] = (out / "ablation.md").string();
  j["report"] = (out / "ablation.json").string();
  return j.dump();
}

}  // namespace cirl

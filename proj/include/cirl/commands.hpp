#pragma once

// Pipeline commands behind the `cirl` executable. Every command writes only
// under its output directory and returns a one-line JSON summary.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "cirl/eval_bench.hpp"
#include "cirl/run_config.hpp"

namespace cirl {

namespace fs = std::filesystem;

Corpus load_corpus(const fs::path& path);

std::string cmd_gen_data(const RunConfig& config);
std::string cmd_train(const RunConfig& config, const fs::path& corpus_path, std::ostream* log);
std::string cmd_encode(const fs::path& checkpoint, const fs::path& corpus_path, Split split,
                       const fs::path& out);
std::string cmd_eval(const fs::path& embeddings_dir, const fs::path& corpus_path, Split split,
                     const RunConfig& config);
std::string cmd_bench(const fs::path& checkpoint, const fs::path& corpus_path, Split split,
                      std::size_t repetitions);
std::string cmd_inspect_pool(const fs::path& checkpoint, const fs::path& corpus_path, Split split);
std::string cmd_attention(const fs::path& checkpoint, const fs::path& corpus_path, Split split,
                          std::size_t index, const fs::path& csv);

struct ExperimentResult {
  std::string value;  // ablation value, empty for a single run
  std::uint64_t seed = 0;
  MetricReport test;
  double untrained_recall1 = 0.0;
  double final_loss = 0.0;
  std::vector<EpochLog> log;
  double seconds = 0.0;
  double chance = 0.0;  // 1 / gallery size of the test split
  std::shared_ptr<Model> model;  // the trained model
};

// Generates the corpus for config.seed, trains, and evaluates the test split.
// `corpus` may be supplied to skip generation.
ExperimentResult run_experiment(const RunConfig& config, const Corpus* corpus = nullptr,
                                std::ostream* log = nullptr);

// Resolves an ablation axis ("soft_mode", "task_prompt_len", "pooling", "lp", ...) to a config key.
std::string ablation_key(const std::string& axis);

// Cross-product of axis values and seeds; returns one result per run.
std::vector<ExperimentResult> run_ablation(const RunConfig& base, const std::string& axis,
                                           const std::vector<std::string>& values,
                                           const std::vector<std::uint64_t>& seeds,
                                           std::ostream* log = nullptr);

// Markdown comparison table (per value: mean over seeds of every metric) and
// per-seed R_mean rows.
std::string ablation_table(const std::vector<ExperimentResult>& results);
std::string ablation_json(const std::string& axis, const std::vector<ExperimentResult>& results);

std::string cmd_ablate(const RunConfig& base, const std::string& axis,
                       const std::vector<std::string>& values,
                       const std::vector<std::uint64_t>& seeds, std::ostream* log);

}  // namespace cirl

#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cirl/intent_encoder.hpp"
#include "cirl/matrix.hpp"
#include "cirl/synthcorpus.hpp"

namespace cirl {

class Model;
class FeatureStore;

/// Exhaustive cosine index over unit-normalized candidate rows.
class RetrievalIndex {
 public:
  static RetrievalIndex build(const Matrix& embeddings, std::vector<std::size_t> ids);

  // Top-k ids by descending cosine, ties by ascending id.
  std::vector<std::size_t> retrieve(std::span<const double> query, std::size_t k) const;
  std::vector<std::size_t> rank_all(std::span<const double> query) const;

  std::size_t size() const { return ids_.size(); }
  const Matrix& embeddings() const { return rows_; }
  const std::vector<std::size_t>& ids() const { return ids_; }

 private:
  Matrix rows_;
  std::vector<std::size_t> ids_;
};

struct SubsetMap {
  std::vector<std::vector<std::size_t>> members;
  std::unordered_map<std::size_t, std::size_t> subset_of;

  static SubsetMap from_corpus(const Corpus& corpus);
  void add(std::span<const std::size_t> ids);
};

struct QueryRanking {
  std::vector<std::size_t> ranked_ids;  // full ranking, best first
  std::size_t ground_truth = 0;
};

struct MetricReport {
  std::vector<std::size_t> ks;
  std::vector<double> recall;
  std::vector<std::size_t> subset_ks;
  std::vector<double> recall_subset;
  double r_mean = 0.0;               // mean of recall over ks
  std::optional<double> avg;         // (R@5 + R_subset@1) / 2
  std::vector<std::size_t> ranks;    // 1-based global rank per query
  std::vector<std::size_t> subset_ranks;

  double recall_at(std::size_t k) const;
  double recall_subset_at(std::size_t k) const;
  std::string to_json() const;
};

// Subset metrics are computed when `subsets` is given and `subset_ks` is non-empty.
MetricReport compute_metrics(std::span<const QueryRanking> rankings, const SubsetMap* subsets,
                             std::span<const std::size_t> ks,
                             std::span<const std::size_t> subset_ks = {});

struct SplitEmbeddings {
  Matrix queries;  // one row per triplet of the split
  Matrix gallery;  // one row per gallery candidate
  std::vector<std::size_t> gallery_ids;
  std::vector<std::size_t> ground_truth;
};

// Number of worker threads: CIRL_THREADS if set, else the hardware count.
std::size_t worker_threads();

SplitEmbeddings encode_split(Model& model, const Corpus& corpus, const FeatureStore& features,
                             Split split);
MetricReport evaluate(const SplitEmbeddings& embeddings, const SubsetMap* subsets,
                      std::span<const std::size_t> ks, std::span<const std::size_t> subset_ks);

struct LatencyReport {
  std::size_t samples = 0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double mean_ms = 0.0;
  double forwards_per_query = 0.0;
  bool single_pass = true;  // every sample ran exactly one decoder forward

  std::string to_json() const;
};

struct QueryInput {
  const Matrix* features = nullptr;
  std::span<const int> caption;
};

// Nearest-rank percentile of an unsorted sample.
double percentile(std::vector<double> samples, double pct);

LatencyReport bench_latency(Model& model, std::span<const QueryInput> queries,
                            std::size_t repetitions);

struct AttentionRow {
  std::size_t position = 0;
  SegmentKind segment = SegmentKind::TaskPrompt;
  double visual_mass = 0.0;
  double caption_mass = 0.0;
};

// For each task-prompt and soft-prompt position: head-averaged attention mass
// on the visual positions and on the caption positions.
std::vector<AttentionRow> attention_masses(std::span<const Matrix> heads, const SegmentMap& segments);
std::vector<AttentionRow> attention_report(Model& model, const Matrix& features,
                                           std::span<const int> caption);
void write_attention_csv(std::span<const AttentionRow> rows, std::ostream& out);

}  // namespace cirl

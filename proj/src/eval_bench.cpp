#include "cirl/eval_bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <thread>

#include "cirl/errors.hpp"
#include "cirl/kernels.hpp"
#include "cirl/model.hpp"
#include "cirl/trainer.hpp"
#include "json.hpp"

namespace cirl {

RetrievalIndex RetrievalIndex::build(const Matrix& embeddings, std::vector<std::size_t> ids) {
  if (ids.size() != embeddings.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "index: id count does not match embedding rows");
  }
  RetrievalIndex index;
  index.rows_ = embeddings;
  for (std::size_t r = 0; r < index.rows_.rows(); ++r) {
    auto row = index.rows_.row(r);
    const double n = l2_norm(row);
    if (!(n >= 1e-12) || !std::isfinite(n)) {
      throw Error(ErrorKind::ZeroEmbedding, "index: candidate " + std::to_string(ids[r]) +
                                                " has a zero or non-finite embedding");
    }
    for (double& v : row) v /= n;
  }
  index.ids_ = std::move(ids);
  return index;
}

std::vector<std::size_t> RetrievalIndex::rank_all(std::span<const double> query) const {
  if (query.size() != rows_.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "retrieve: query width does not match the index");
  }
  std::vector<double> scores(size(), 0.0);
  kernels::gemm_nt(1, size(), rows_.cols(), query.data(), rows_.data(), scores.data());
  std::vector<std::size_t> order(size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids_[a] < ids_[b];
  });
  std::vector<std::size_t> ranked(size());
  for (std::size_t i = 0; i < order.size(); ++i) ranked[i] = ids_[order[i]];
  return ranked;
}

std::vector<std::size_t> RetrievalIndex::retrieve(std::span<const double> query,
                                                  std::size_t k) const {
  if (k > size()) throw Error(ErrorKind::InvalidConfig, "retrieve: k exceeds the index size");
  auto ranked = rank_all(query);
  ranked.resize(k);
  return ranked;
}

SubsetMap SubsetMap::from_corpus(const Corpus& corpus) {
  SubsetMap map;
  for (const Subset& s : corpus.subsets) map.add(s.members);
  return map;
}

void SubsetMap::add(std::span<const std::size_t> ids) {
  const std::size_t s = members.size();
  members.emplace_back(ids.begin(), ids.end());
  for (std::size_t id : ids) subset_of[id] = s;
}

double MetricReport::recall_at(std::size_t k) const {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] == k) return recall[i];
  }
  throw Error(ErrorKind::InvalidConfig, "recall@" + std::to_string(k) + " was not computed");
}

double MetricReport::recall_subset_at(std::size_t k) const {
  for (std::size_t i = 0; i < subset_ks.size(); ++i) {
    if (subset_ks[i] == k) return recall_subset[i];
  }
  throw Error(ErrorKind::InvalidConfig,
              "recall_subset@" + std::to_string(k) + " was not computed");
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json r = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < ks.size(); ++i) r["R@" + std::to_string(ks[i])] = recall[i];
  j["recall"] = r;
  if (!subset_ks.empty()) {
    nlohmann::ordered_json rs = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < subset_ks.size(); ++i) {
      rs["R_subset@" + std::to_string(subset_ks[i])] = recall_subset[i];
    }
    j["recall_subset"] = rs;
  }
  j["R_mean"] = r_mean;
  if (avg) j["Avg"] = *avg;
  j["queries"] = ranks.size();
  j["ranks"] = ranks;
  if (!subset_ranks.empty()) j["subset_ranks"] = subset_ranks;
  return j.dump();
}

MetricReport compute_metrics(std::span<const QueryRanking> rankings, const SubsetMap* subsets,
                             std::span<const std::size_t> ks,
                             std::span<const std::size_t> subset_ks) {
  if (!subset_ks.empty() && subsets == nullptr) {
    throw Error(ErrorKind::MissingSubset, "subset metrics requested without a subset map");
  }
  MetricReport report;
  report.ks.assign(ks.begin(), ks.end());
  report.subset_ks.assign(subset_ks.begin(), subset_ks.end());
  for (const QueryRanking& q : rankings) {
    const auto it = std::find(q.ranked_ids.begin(), q.ranked_ids.end(), q.ground_truth);
    if (it == q.ranked_ids.end()) {
      throw Error(ErrorKind::InvalidConfig, "ground truth missing from a ranking");
    }
    report.ranks.push_back(static_cast<std::size_t>(it - q.ranked_ids.begin()) + 1);
    if (subset_ks.empty()) continue;
    const auto sub = subsets->subset_of.find(q.ground_truth);
    if (sub == subsets->subset_of.end()) {
      throw Error(ErrorKind::MissingSubset,
                  "ground truth " + std::to_string(q.ground_truth) + " has no subset");
    }
    const auto& members = subsets->members[sub->second];
    std::size_t ahead = 0;
    for (auto r = q.ranked_ids.begin(); r != it; ++r) {
      if (std::find(members.begin(), members.end(), *r) != members.end()) ++ahead;
    }
    report.subset_ranks.push_back(ahead + 1);
  }
  const double n = static_cast<double>(rankings.size());
  auto recall = [n](const std::vector<std::size_t>& ranks, std::size_t k) {
    if (n == 0) return 0.0;
    return static_cast<double>(std::count_if(ranks.begin(), ranks.end(),
                                             [k](std::size_t r) { return r <= k; })) /
           n;
  };
  for (std::size_t k : ks) report.recall.push_back(recall(report.ranks, k));
  for (std::size_t k : subset_ks) report.recall_subset.push_back(recall(report.subset_ranks, k));
  if (!report.recall.empty()) {
    report.r_mean = std::accumulate(report.recall.begin(), report.recall.end(), 0.0) /
                    static_cast<double>(report.recall.size());
  }
  const bool has5 = std::find(ks.begin(), ks.end(), 5) != ks.end();
  const bool has1 = std::find(subset_ks.begin(), subset_ks.end(), 1) != subset_ks.end();
  if (has5 && has1) report.avg = (report.recall_at(5) + report.recall_subset_at(1)) / 2.0;
  return report;
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("CIRL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t threads = std::min(worker_threads(), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk, end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

void copy_row(Matrix& dst, std::size_t r, const std::vector<double>& v) {
  std::copy(v.begin(), v.end(), dst.row(r).begin());
}

}  // namespace

SplitEmbeddings encode_split(Model& model, const Corpus& corpus, const FeatureStore& features,
                             Split split) {
  const std::size_t d = model.config().frontend.d_t;
  const auto& triplets = corpus.split(split);
  SplitEmbeddings out;
  out.gallery_ids = corpus.gallery(split);
  out.gallery = Matrix(out.gallery_ids.size(), d);
  out.queries = Matrix(triplets.size(), d);
  parallel_for(out.gallery_ids.size(), [&](std::size_t i) {
    copy_row(out.gallery, i,
             model.embed(Role::Target, features.candidate(out.gallery_ids[i]), {}));
  });
  parallel_for(triplets.size(), [&](std::size_t i) {
    const TokenSeq caption = caption_tokens(triplets[i].edits);
    copy_row(out.queries, i, model.embed(Role::Query, features.reference(split, i), caption));
  });
  for (const Triplet& t : triplets) out.ground_truth.push_back(t.target_id);
  return out;
}

MetricReport evaluate(const SplitEmbeddings& embeddings, const SubsetMap* subsets,
                      std::span<const std::size_t> ks, std::span<const std::size_t> subset_ks) {
  const RetrievalIndex index = RetrievalIndex::build(embeddings.gallery, embeddings.gallery_ids);
  std::vector<QueryRanking> rankings(embeddings.queries.rows());
  parallel_for(rankings.size(), [&](std::size_t i) {
    rankings[i] = {index.rank_all(embeddings.queries.row(i)), embeddings.ground_truth[i]};
  });
  return compute_metrics(rankings, subsets, ks, subset_ks);
}

std::string LatencyReport::to_json() const {
  nlohmann::ordered_json j;
  j["samples"] = samples;
  j["p50_ms"] = p50_ms;
  j["p95_ms"] = p95_ms;
  j["mean_ms"] = mean_ms;
  j["decoder_forwards_per_query"] = forwards_per_query;
  j["single_pass"] = single_pass;
  return j.dump();
}

double percentile(std::vector<double> samples, double pct) {
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const double rank = std::ceil(pct / 100.0 * static_cast<double>(samples.size()));
  const std::size_t idx =
      std::min(samples.size() - 1, static_cast<std::size_t>(std::max(1.0, rank)) - 1);
  return samples[idx];
}

LatencyReport bench_latency(Model& model, std::span<const QueryInput> queries,
                            std::size_t repetitions) {
  LatencyReport report;
  if (queries.empty() || repetitions == 0) return report;
  model.embed(Role::Query, *queries.front().features, queries.front().caption);

  std::vector<double> ms;
  std::size_t forwards = 0;
  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (const QueryInput& q : queries) {
      const std::size_t before = model.decoder_forwards();
      const auto t0 = std::chrono::steady_clock::now();
      const auto emb = model.embed(Role::Query, *q.features, q.caption);
      const auto t1 = std::chrono::steady_clock::now();
      const std::size_t delta = model.decoder_forwards() - before;
      forwards += delta;
      if (delta != 1 || emb.empty()) report.single_pass = false;
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  report.samples = ms.size();
  report.p50_ms = percentile(ms, 50.0);
  report.p95_ms = percentile(ms, 95.0);
  report.mean_ms = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(ms.size());
  report.forwards_per_query = static_cast<double>(forwards) / static_cast<double>(ms.size());
  return report;
}

std::vector<AttentionRow> attention_masses(std::span<const Matrix> heads,
                                           const SegmentMap& segments) {
  std::vector<AttentionRow> rows;
  if (heads.empty()) return rows;
  const double inv = 1.0 / static_cast<double>(heads.size());
  for (std::size_t pos = 0; pos < segments.length; ++pos) {
    const SegmentKind kind = segments.kind_at(pos);
    if (kind != SegmentKind::TaskPrompt && kind != SegmentKind::SoftPrompt) continue;
    AttentionRow row{pos, kind, 0.0, 0.0};
    for (const Matrix& h : heads) {
      for (std::size_t j = segments.visual.begin; j < segments.visual.end; ++j) {
        row.visual_mass += inv * h(pos, j);
      }
      for (std::size_t j = segments.caption.begin; j < segments.caption.end; ++j) {
        row.caption_mass += inv * h(pos, j);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<AttentionRow> attention_report(Model& model, const Matrix& features,
                                           std::span<const int> caption) {
  ad::Tape tape(false);
  const EncodeResult r = model.encode(tape, Role::Query, features, caption, true);
  return attention_masses(r.attention.back(), r.segments);
}

void write_attention_csv(std::span<const AttentionRow> rows, std::ostream& out) {
  out << "position,segment,visual_mass,caption_mass\n";
  out << std::setprecision(12);
  for (const AttentionRow& r : rows) {
    out << r.position << ',' << to_string(r.segment) << ',' << r.visual_mass << ','
        << r.caption_mass << '\n';
  }
}

}  // namespace cirl

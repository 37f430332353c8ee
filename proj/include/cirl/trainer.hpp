#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cirl/model.hpp"
#include "cirl/synthcorpus.hpp"

namespace cirl {

/// Frozen visual features of every candidate and reference image of a corpus.
/// Rendering and the frozen encoder are deterministic, so these are computed once.
class FeatureStore {
 public:
  FeatureStore(const Corpus& corpus, const Renderer& renderer, const FrozenVisionEncoder& vision);

  const Matrix& candidate(std::size_t id) const { return candidates_.at(id); }
  const Matrix& reference(Split split, std::size_t index) const;

 private:
  std::vector<Matrix> candidates_;
  std::vector<Matrix> references_[3];
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double lambda = 20.0;
  std::size_t epochs = 10;
  double lr_pool = 3e-3;
  double lr_rest = 1e-3;
  double key_weight = 0.5;
  std::uint64_t seed = 42;
  bool validate_each_epoch = true;
  // Also train on the partial-edit siblings of each triplet, batched together
  // with it (see training_groups).
  bool sibling_pairs = true;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double contrastive = 0.0;
  double key = 0.0;
  double val_recall1 = 0.0;
  double wall_seconds = 0.0;
};

std::string to_json_line(const EpochLog& log);

class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One update of every parameter with its own learning rate.
  void step(std::span<Parameter* const> params, std::span<const double> learning_rates);

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct BatchItem {
  const Matrix* reference = nullptr;
  std::span<const int> caption;
  const Matrix* target = nullptr;
};

struct BatchObjective {
  double total = 0.0;
  double contrastive = 0.0;
  double key = 0.0;
  std::vector<Selection> selections;  // query and target of item i at 2i, 2i+1
  std::vector<std::vector<double>> text_queries;  // same layout; empty without a pool
};

// Contrastive loss over the batch plus key_weight * mean key-match loss of
// every encoded instance (instance soft-prompt mode only). With `backward`
// the gradients are accumulated into the model parameters.
// `pinned_text_queries` (layout as in BatchObjective) replaces every q(T).
BatchObjective batch_objective(Model& model, std::span<const BatchItem> batch,
                               const TrainConfig& config, bool backward,
                               std::span<const std::vector<double>> pinned_text_queries = {});

std::vector<BatchItem> make_batch(const Corpus& corpus, const FeatureStore& features, Split split,
                                  std::span<const std::size_t> indices,
                                  std::vector<TokenSeq>& caption_storage);

// One (reference, caption) -> target training pair drawn from the train split.
struct TrainPair {
  std::size_t triplet = 0;  // index into corpus.train (the reference image)
  TokenSeq caption;
  std::size_t target = 0;   // candidate id
};

// Training pairs grouped by reference. Each group holds the triplet itself
// and, with `siblings`, one pair per partial-edit distractor in its subset
// that a strict sub-script of the edits reproduces exactly. Groups are kept
// contiguous in a batch so the distractors serve as in-batch negatives.
std::vector<std::vector<TrainPair>> training_groups(const Corpus& corpus, bool siblings);

struct TrainResult {
  std::vector<EpochLog> log;
  double initial_val_recall1 = 0.0;
};

TrainResult train(Model& model, const Corpus& corpus, const FeatureStore& features,
                  const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

struct GroupAudit {
  std::string group;
  bool frozen = false;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
};

struct GradAuditReport {
  std::vector<GroupAudit> groups;
  double unselected_prompt_grad = 0.0;  // max |grad| over unselected prompt blocks
  bool selections_stable = true;         // no perturbation flipped a selection
  double seconds = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, kAuditFloor).
inline constexpr double kAuditFloor = 1e-6;

/// Central finite differences (f(x+e) - f(x-e)) / 2e against reverse mode, per
/// parameter group, on `coords_per_group` coordinates per group (half the
/// largest analytic gradients, half uniformly drawn).
GradAuditReport grad_audit(Model& model, std::span<const BatchItem> batch,
                           const TrainConfig& config, double eps, std::size_t coords_per_group,
                           std::uint64_t seed);

}  // namespace cirl

#include "cirl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cirl/errors.hpp"
#include "cirl/eval_bench.hpp"
#include "cirl/objective.hpp"
#include "cirl/rng.hpp"
#include "json.hpp"

namespace cirl {

FeatureStore::FeatureStore(const Corpus& corpus, const Renderer& renderer,
                           const FrozenVisionEncoder& vision) {
  candidates_.reserve(corpus.candidates.size());
  for (std::size_t id = 0; id < corpus.candidates.size(); ++id) {
    candidates_.push_back(vision.encode(renderer.render(corpus.candidates[id], candidate_nonce(id))));
  }
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    auto& out = references_[static_cast<int>(s)];
    for (const Triplet& t : corpus.split(s)) {
      out.push_back(vision.encode(renderer.render(t.reference, t.nonce)));
    }
  }
}

const Matrix& FeatureStore::reference(Split split, std::size_t index) const {
  return references_[static_cast<int>(split)].at(index);
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error(ErrorKind::InvalidConfig, "batch size must be at least 2");
  if (!(lambda > 0.0)) throw Error(ErrorKind::InvalidConfig, "lambda must be positive");
  if (!(lr_pool > 0.0) || !(lr_rest > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "learning rates must be positive");
  }
  if (!(key_weight >= 0.0)) throw Error(ErrorKind::InvalidConfig, "key weight must be >= 0");
}

std::string to_json_line(const EpochLog& log) {
  nlohmann::ordered_json j;
  j["epoch"] = log.epoch;
  j["loss"] = log.loss;
  j["contrastive"] = log.contrastive;
  j["key"] = log.key;
  j["val_recall1"] = log.val_recall1;
  j["wall_seconds"] = log.wall_seconds;
  return j.dump();
}

void Adam::step(std::span<Parameter* const> params, std::span<const double> learning_rates) {
  if (params.size() != learning_rates.size()) {
    throw Error(ErrorKind::ShapeMismatch, "adam: one learning rate per parameter");
  }
  if (m_.empty()) {
    for (const Parameter* p : params) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const double lr = learning_rates[i];
    double* m = m_[i].data();
    double* v = v_[i].data();
    double* w = p.value.data();
    const double* g = p.grad.data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

BatchObjective batch_objective(Model& model, std::span<const BatchItem> batch,
                               const TrainConfig& config, bool backward,
                               std::span<const std::vector<double>> pinned_text_queries) {
  const std::size_t n = batch.size();
  auto pinned = [&](std::size_t slot) {
    return pinned_text_queries.empty() ? nullptr : &pinned_text_queries[slot];
  };
  ad::Tape tape(backward);
  std::vector<ad::Var> queries, targets;
  std::vector<EncodeResult> encoded;
  encoded.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const BatchItem& item = batch[i];
    encoded.push_back(
        model.encode(tape, Role::Query, *item.reference, item.caption, false, pinned(2 * i)));
    queries.push_back(encoded.back().embedding);
    encoded.push_back(model.encode(tape, Role::Target, *item.target, {}, false, pinned(2 * i + 1)));
    targets.push_back(encoded.back().embedding);
  }
  const ad::Var contrastive =
      contrastive_loss(ad::concat_rows(queries), ad::concat_rows(targets), config.lambda);

  BatchObjective out;
  ad::Var total = contrastive;
  out.contrastive = contrastive.value()(0, 0);
  if (model.config().soft_mode == SoftPromptMode::Instance) {
    const ad::Var ik = tape.parameter(model.pool().image_keys);
    const ad::Var tk = tape.parameter(model.pool().text_keys);
    std::vector<ad::Var> terms;
    for (const EncodeResult& e : encoded) {
      terms.push_back(key_match_loss(ik, tk, e.image_query, e.text_query, e.selection));
    }
    const std::vector<double> mean(terms.size(), 1.0 / static_cast<double>(terms.size()));
    const ad::Var key = ad::weighted_row_sum(ad::concat_rows(terms), mean);
    out.key = key.value()(0, 0);
    total = ad::add(contrastive, ad::scale(key, config.key_weight));
  }
  out.total = total.value()(0, 0);
  for (EncodeResult& e : encoded) {
    out.selections.push_back(std::move(e.selection));
    if (!e.text_query.empty()) out.text_queries.push_back(std::move(e.text_query));
  }

  if (!std::isfinite(out.total)) {
    std::ostringstream msg;
    msg << "non-finite loss: total=" << out.total << " contrastive=" << out.contrastive
        << " key=" << out.key << " batch=" << n;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      msg << " |q" << i << "|=" << l2_norm(queries[i].value().row(0)) << " |t" << i
          << "|=" << l2_norm(targets[i].value().row(0));
    }
    for (const Parameter* p : model.parameters()) {
      if (!all_finite(p->value)) msg << " non-finite parameter " << p->name;
    }
    throw Error(ErrorKind::NonFiniteLoss, msg.str());
  }
  if (backward) tape.backward(total);
  return out;
}

std::vector<BatchItem> make_batch(const Corpus& corpus, const FeatureStore& features, Split split,
                                  std::span<const std::size_t> indices,
                                  std::vector<TokenSeq>& caption_storage) {
  const auto& triplets = corpus.split(split);
  caption_storage.assign(indices.size(), {});
  std::vector<BatchItem> items;
  items.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Triplet& t = triplets.at(indices[i]);
    caption_storage[i] = caption_tokens(t.edits);
    items.push_back({&features.reference(split, indices[i]), caption_storage[i],
                     &features.candidate(t.target_id)});
  }
  return items;
}

std::vector<std::vector<TrainPair>> training_groups(const Corpus& corpus, bool siblings) {
  const auto subset_of = corpus.subset_of();
  std::vector<std::vector<TrainPair>> groups;
  groups.reserve(corpus.train.size());
  for (std::size_t i = 0; i < corpus.train.size(); ++i) {
    const Triplet& t = corpus.train[i];
    std::vector<TrainPair> group{{i, caption_tokens(t.edits), t.target_id}};
    if (siblings) {
      const auto& members = corpus.subsets[subset_of[t.target_id]].members;
      const unsigned full = (1u << t.edits.size()) - 1;
      for (unsigned mask = 1; mask < full; ++mask) {
        EditScript sub;
        for (std::size_t e = 0; e < t.edits.size(); ++e) {
          if (mask & (1u << e)) sub.push_back(t.edits[e]);
        }
        Scene s;
        try {
          s = apply_edits(t.reference, sub);
        } catch (const Error&) {
          continue;
        }
        for (std::size_t id : members) {
          const bool taken = std::any_of(group.begin(), group.end(),
                                         [id](const TrainPair& p) { return p.target == id; });
          if (!taken && corpus.candidates[id] == s) group.push_back({i, caption_tokens(sub), id});
        }
      }
    }
    groups.push_back(std::move(group));
  }
  return groups;
}

namespace {

double val_recall1(Model& model, const Corpus& corpus, const FeatureStore& features) {
  if (corpus.val.empty()) return 0.0;
  const std::size_t ks[] = {1};
  return evaluate(encode_split(model, corpus, features, Split::Val), nullptr, ks, {})
      .recall_at(1);
}

}  // namespace

TrainResult train(Model& model, const Corpus& corpus, const FeatureStore& features,
                  const TrainConfig& config, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (corpus.train.size() < 2) {
    throw Error(ErrorKind::InvalidConfig, "training split needs at least two triplets");
  }
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;
  if (config.validate_each_epoch) result.initial_val_recall1 = val_recall1(model, corpus, features);

  std::vector<Parameter*> params = model.parameters();
  std::vector<double> lrs;
  for (const Parameter* p : params) lrs.push_back(is_pool_parameter(*p) ? config.lr_pool : config.lr_rest);
  Adam adam;
  Rng rng(derive_seed(config.seed, 0x545241494E000001ULL));

  const auto groups = training_groups(corpus, config.sibling_pairs);
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[rng.below(i + 1)]);
    }
    std::vector<const TrainPair*> pairs;
    for (std::size_t g : order) {
      for (const TrainPair& p : groups[g]) pairs.push_back(&p);
    }
    EpochLog log;
    log.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t b = 0; b + 2 <= pairs.size(); b += config.batch_size) {
      const std::size_t end = std::min(pairs.size(), b + config.batch_size);
      std::vector<BatchItem> items;
      for (std::size_t i = b; i < end; ++i) {
        const TrainPair& p = *pairs[i];
        items.push_back({&features.reference(Split::Train, p.triplet), p.caption,
                         &features.candidate(p.target)});
      }
      model.zero_grad();
      const BatchObjective obj = batch_objective(model, items, config, true);
      adam.step(params, lrs);
      log.loss += obj.total;
      log.contrastive += obj.contrastive;
      log.key += obj.key;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(batches, 1));
    log.loss *= inv;
    log.contrastive *= inv;
    log.key *= inv;
    if (config.validate_each_epoch) log.val_recall1 = val_recall1(model, corpus, features);
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  model.zero_grad();
  return result;
}

namespace {

struct Coord {
  Parameter* param;
  std::size_t index;
};

std::string audit_group(const Parameter& p, std::size_t flat_index) {
  if (p.name.starts_with("connector.")) return "connector";
  if (p.name == "pool.prompts") return "pool_prompts";
  if (p.name.starts_with("pool.")) return "pool_keys";
  if (p.name == "decoder.tok_embed") {
    const std::size_t row = flat_index / p.value.cols();
    if (row == static_cast<std::size_t>(tokens::kSoftOpen) ||
        row == static_cast<std::size_t>(tokens::kSoftClose)) {
      return "sentinels";
    }
    if (row >= static_cast<std::size_t>(tokens::kQueryTaskBegin) &&
        row < static_cast<std::size_t>(tokens::kTargetTaskBegin + tokens::kTaskPromptTokens)) {
      return "task_tokens";
    }
  }
  return "decoder";
}

bool same_selections(const std::vector<Selection>& a, const std::vector<Selection>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].indices != b[i].indices) return false;
  }
  return true;
}

}  // namespace

GradAuditReport grad_audit(Model& model, std::span<const BatchItem> batch,
                           const TrainConfig& config, double eps, std::size_t coords_per_group,
                           std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  GradAuditReport report;
  model.zero_grad();
  const BatchObjective base = batch_objective(model, batch, config, true);

  const std::vector<std::string> order = {"connector",  "decoder",   "pool_prompts",
                                          "pool_keys",  "task_tokens", "sentinels"};
  std::vector<std::vector<Coord>> groups(order.size());
  for (Parameter* p : model.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const std::string g = audit_group(*p, i);
      const auto it = std::find(order.begin(), order.end(), g);
      groups[static_cast<std::size_t>(it - order.begin())].push_back({p, i});
    }
  }

  // Selected prompt blocks, for the unselected-gradient check.
  const PromptPoolParams& pool = model.pool();
  std::vector<bool> selected(pool.size(), false);
  for (const Selection& s : base.selections) {
    for (std::size_t idx : s.indices) selected[idx] = true;
  }
  const Matrix& pg = pool.prompts.grad;
  for (std::size_t r = 0; r < pg.rows(); ++r) {
    if (selected[r / pool.prompt_len]) continue;
    for (double g : pg.row(r)) report.unselected_prompt_grad = std::max(report.unselected_prompt_grad, std::abs(g));
  }

  Rng rng(seed);
  for (std::size_t gi = 0; gi < order.size(); ++gi) {
    std::vector<Coord>& all = groups[gi];
    GroupAudit audit;
    audit.group = order[gi];
    if (all.empty()) {
      report.groups.push_back(audit);
      continue;
    }
    std::vector<Coord> chosen;
    const std::size_t want = std::min(coords_per_group, all.size());
    std::vector<Coord> by_grad = all;
    std::partial_sort(by_grad.begin(), by_grad.begin() + static_cast<std::ptrdiff_t>(want / 2),
                      by_grad.end(), [](const Coord& a, const Coord& b) {
                        return std::abs(a.param->grad.data()[a.index]) >
                               std::abs(b.param->grad.data()[b.index]);
                      });
    chosen.assign(by_grad.begin(), by_grad.begin() + static_cast<std::ptrdiff_t>(want / 2));
    while (chosen.size() < want) chosen.push_back(all[rng.below(all.size())]);

    for (const Coord& c : chosen) {
      double& x = c.param->value.data()[c.index];
      const double analytic = c.param->grad.data()[c.index];
      const double saved = x;
      x = saved + eps;
      const BatchObjective plus = batch_objective(model, batch, config, false, base.text_queries);
      x = saved - eps;
      const BatchObjective minus = batch_objective(model, batch, config, false, base.text_queries);
      x = saved;
      if (!same_selections(plus.selections, base.selections) ||
          !same_selections(minus.selections, base.selections)) {
        report.selections_stable = false;
      }
      const double numeric = (plus.total - minus.total) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), kAuditFloor});
      audit.max_rel_error = std::max(audit.max_rel_error, std::abs(analytic - numeric) / denom);
      audit.max_abs_grad = std::max(audit.max_abs_grad, std::abs(analytic));
      ++audit.coordinates;
    }
    report.groups.push_back(audit);
  }
  GroupAudit vision;
  vision.group = "vision";
  vision.frozen = true;
  report.groups.push_back(vision);

  model.zero_grad();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace cirl

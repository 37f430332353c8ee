#pragma once

// Intent instructions, the causal decoder, and sequence pooling.
//
// A query instruction is  [sentence prompt | caption | query task prompt | soft prompt],
// a target instruction is [sentence prompt | target task prompt | soft prompt].
// Empty segments are omitted; the segment map records where each one lives.

#include <cstddef>
#include <memory>
#include <atomic>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cirl/autodiff.hpp"
#include "cirl/matrix.hpp"

namespace cirl {

class Rng;

inline constexpr std::size_t kContextLimit = 128;

enum class Role { Query, Target };

enum class SegmentKind { Visual, Caption, TaskPrompt, SoftPrompt };
std::string_view to_string(SegmentKind kind);

struct SegmentSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t pos) const { return pos >= begin && pos < end; }
};

struct SegmentMap {
  SegmentSpan visual;
  SegmentSpan caption;
  SegmentSpan task_prompt;
  SegmentSpan soft_prompt;
  std::size_t length = 0;

  SegmentKind kind_at(std::size_t pos) const;
};

struct IntentInstruction {
  Role role = Role::Query;
  ad::Var embeddings;  // length x d_t
  SegmentMap segments;
};

// Token ids of the role-specific task prompt: the first `length` of the role's four ids.
std::vector<std::size_t> task_prompt_ids(Role role, std::size_t length);

IntentInstruction build_query_instruction(ad::Var sentence_prompt, ad::Var token_table,
                                          std::span<const int> caption,
                                          std::size_t task_prompt_len,
                                          std::optional<ad::Var> soft_prompt);
IntentInstruction build_target_instruction(ad::Var sentence_prompt, ad::Var token_table,
                                           std::size_t task_prompt_len,
                                           std::optional<ad::Var> soft_prompt);

struct DecoderConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff_mult = 4;
  std::size_t vocab = 96;
  std::size_t context = kContextLimit;
};

struct DecoderLayerParams {
  Parameter ln1_gain, ln1_bias;
  Parameter w_q, w_k, w_v, w_o;
  Parameter ln2_gain, ln2_bias;
  Parameter ff_w1, ff_b1, ff_w2, ff_b2;
};

struct DecoderParams {
  Parameter tok_embed;  // vocab x d_model
  Parameter pos_embed;  // context x d_model
  std::vector<DecoderLayerParams> layers;
  Parameter final_gain, final_bias;
  std::size_t heads = 4;
  // Number of decode() calls made with these parameters.
  std::shared_ptr<std::atomic<std::size_t>> forward_count =
      std::make_shared<std::atomic<std::size_t>>(0);

  static DecoderParams init(const DecoderConfig& config, Rng& rng);
  std::vector<Parameter*> all();
};

struct DecodeResult {
  ad::Var hidden;  // length x d_model, after the final layer norm
  // attention[layer][head] is a length x length row-stochastic matrix.
  std::vector<std::vector<Matrix>> attention;
};

// Pre-norm causal transformer over the instruction (+ learned positions).
DecodeResult decode(const IntentInstruction& instruction, DecoderParams& params,
                    bool capture_attention = false);

enum class PoolingStrategy { WeightedMean, Last, Mean };
std::string_view to_string(PoolingStrategy strategy);
PoolingStrategy pooling_from_string(std::string_view name);

// Per-position weights; WeightedMean uses w_i = i / sum_{j=1..k} j (1-indexed).
std::vector<double> pooling_weights(std::size_t length, PoolingStrategy strategy);
ad::Var pool(ad::Var hidden, PoolingStrategy strategy);

}  // namespace cirl

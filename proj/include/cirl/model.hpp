#pragma once

// The shared encoder: frozen vision map -> connector -> prompt pool ->
// intent instruction -> causal decoder -> pooling. One Model instance encodes
// both hybrid queries and target images.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "cirl/autodiff.hpp"
#include "cirl/intent_encoder.hpp"
#include "cirl/prompt_pool.hpp"
#include "cirl/visual_frontend.hpp"

namespace cirl {

enum class SoftPromptMode { None, Universal, Instance };
std::string_view to_string(SoftPromptMode mode);
SoftPromptMode soft_mode_from_string(std::string_view name);

struct ModelConfig {
  FrontendConfig frontend;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t pool_size = 16;  // M
  std::size_t prompt_len = 2;  // L_p
  std::size_t top_k = 4;       // K
  std::size_t task_prompt_len = 4;
  PoolingStrategy pooling = PoolingStrategy::WeightedMean;
  SoftPromptMode soft_mode = SoftPromptMode::Instance;
  std::uint64_t seed = 42;

  void validate() const;
  DecoderConfig decoder() const;
};

struct EncodeResult {
  ad::Var embedding;  // 1 x d_t
  SegmentMap segments;
  Selection selection;  // empty when the soft prompt is off
  std::vector<double> image_query;
  std::vector<double> text_query;
  std::vector<std::vector<Matrix>> attention;  // only when captured
};

class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const FrozenVisionEncoder& vision() const { return vision_; }
  ConnectorParams& connector() { return connector_; }
  PromptPoolParams& pool() { return pool_; }
  DecoderParams& decoder() { return decoder_; }
  const PromptPoolParams& pool() const { return pool_; }
  const DecoderParams& decoder() const { return decoder_; }

  // Every trainable tensor, in checkpoint schema order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find(std::string_view name);

  Matrix visual_features(const Matrix& patches) const { return vision_.encode(patches); }

  // q(T) for an instance: caption embeddings for queries, the target-role
  // task-prompt embeddings (all four ids) for targets.
  std::vector<double> text_query(Role role, std::span<const int> caption) const;

  // `pinned_text_query`, if given, replaces q(T); the gradient audit uses it to
  // hold the stop-gradient query fixed while token embeddings are perturbed.
  EncodeResult encode(ad::Tape& tape, Role role, const Matrix& visual_features,
                      std::span<const int> caption, bool capture_attention = false,
                      const std::vector<double>* pinned_text_query = nullptr);

  // Inference-only encoding of one instance.
  std::vector<double> embed(Role role, const Matrix& visual_features,
                            std::span<const int> caption);

  std::size_t decoder_forwards() const { return decoder_.forward_count->load(); }

  void zero_grad();
  // Rounds every trainable tensor to the nearest fp32 value.
  void round_to_float();

 private:
  ModelConfig config_;
  FrozenVisionEncoder vision_;
  ConnectorParams connector_;
  PromptPoolParams pool_;
  DecoderParams decoder_;
};

inline bool is_pool_parameter(const Parameter& p) { return p.name.starts_with("pool."); }

}  // namespace cirl

#pragma once

// Dual-key prompt pool: M records of (image key, text key, L_p x d_t prompt
// block). Selection picks the top-K records by combined cosine distance to the
// image query q(I) and text query q(T); the chosen blocks are wrapped in the
// <sp> ... </sp> sentinels in ascending-distance order.

#include <cstddef>
#include <span>
#include <vector>

#include "cirl/autodiff.hpp"
#include "cirl/matrix.hpp"

namespace cirl {

class Rng;

struct PromptPoolParams {
  Parameter image_keys;  // M x d_i
  Parameter text_keys;   // M x d_t
  Parameter prompts;     // (M * L_p) x d_t, logical M x L_p x d_t
  std::size_t prompt_len = 1;

  static PromptPoolParams init(std::size_t pool_size, std::size_t prompt_len, std::size_t d_i,
                               std::size_t d_t, Rng& rng);
  std::size_t size() const { return image_keys.value.rows(); }
  std::vector<Parameter*> all();
};

// q(T): mean of the given token embeddings (rows).
std::vector<double> text_key_query(const Matrix& token_embeddings);

struct Selection {
  std::vector<std::size_t> indices;  // ascending combined distance, ties -> lower index
  std::vector<double> distances;
};

// (1 - cos(qI, image_key)) + (1 - cos(qT, text_key))
double combined_distance(std::span<const double> image_key, std::span<const double> text_key,
                         std::span<const double> q_image, std::span<const double> q_text);

Selection select(const Matrix& image_keys, const Matrix& text_keys,
                 std::span<const double> q_image, std::span<const double> q_text,
                 std::size_t top_k);
Selection select(const PromptPoolParams& pool, std::span<const double> q_image,
                 std::span<const double> q_text, std::size_t top_k);

// The first top_k records in index order; used by the universal soft-prompt mode.
Selection fixed_selection(std::size_t top_k);

// [<sp>, P_{s1}, ..., P_{sK}, </sp>] as a (K * L_p + 2) x d_t sequence.
ad::Var assemble(ad::Var prompts, std::size_t prompt_len, const Selection& selection,
                 ad::Var sentinel_open, ad::Var sentinel_close);

struct KeyMatchResult {
  double loss = 0.0;
  Matrix d_image_keys;
  Matrix d_text_keys;
};

// Mean over selected records of the combined distance, with the queries held
// constant; gradients reach the selected keys only.
KeyMatchResult key_match_loss(const Matrix& image_keys, const Matrix& text_keys,
                              std::span<const double> q_image, std::span<const double> q_text,
                              const Selection& selection);
ad::Var key_match_loss(ad::Var image_keys, ad::Var text_keys, std::span<const double> q_image,
                       std::span<const double> q_text, const Selection& selection);

}  // namespace cirl

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cirl/autodiff.hpp"
#include "cirl/matrix.hpp"

namespace cirl {

class Rng;

inline constexpr double kLayerNormEps = 1e-5;

struct FrontendConfig {
  std::size_t patches = 16;
  std::size_t d_raw = 32;
  std::size_t d_i = 32;  // image-key / visual feature width
  std::size_t d_t = 64;  // text embedding width
  std::size_t d_h = 32;  // connector attention width
  std::size_t n_queries = 8;
};

/// Seeded random linear map d_raw -> d_i followed by a parameter-free layer
/// norm. It is not a Parameter, so no optimizer or checkpoint ever sees it.
class FrozenVisionEncoder {
 public:
  FrozenVisionEncoder(std::uint64_t seed, std::size_t d_raw, std::size_t d_i);

  Matrix encode(const Matrix& patches) const;
  std::uint64_t checksum() const;
  const Matrix& weight() const { return weight_; }

 private:
  Matrix weight_;
};

// q(I): mean over patch rows.
std::vector<double> image_key_query(const Matrix& features);

struct ConnectorParams {
  Parameter query_embed;  // N_q x d_t
  Parameter w_q;          // d_t x d_h
  Parameter w_k;          // d_i x d_h
  Parameter w_v;          // d_i x d_t
  Parameter ln_gain;      // 1 x d_t
  Parameter ln_bias;      // 1 x d_t

  static ConnectorParams init(const FrontendConfig& config, Rng& rng);
  std::vector<Parameter*> all();
};

// Learnable queries cross-attend over the patch features (single head,
// softmax over patches, 1/sqrt(d_h) scaling), then layer norm.
// `attention`, if given, receives the N_q x P probability matrix.
ad::Var connect(ad::Var features, ConnectorParams& params, Matrix* attention = nullptr);

}  // namespace cirl

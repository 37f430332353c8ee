#include "cirl/visual_frontend.hpp"

#include <cmath>
#include <cstring>

#include "cirl/errors.hpp"
#include "cirl/kernels.hpp"
#include "cirl/rng.hpp"

namespace cirl {

FrozenVisionEncoder::FrozenVisionEncoder(std::uint64_t seed, std::size_t d_raw, std::size_t d_i) {
  Rng rng(derive_seed(seed, 0x564953494F4E0001ULL));
  weight_ = Matrix::gaussian(d_raw, d_i, 1.0 / std::sqrt(static_cast<double>(d_raw)), rng);
}

Matrix FrozenVisionEncoder::encode(const Matrix& patches) const {
  if (patches.cols() != weight_.rows() || patches.rows() == 0) {
    throw Error(ErrorKind::ShapeMismatch, "encode_image: patch grid has the wrong shape");
  }
  Matrix out(patches.rows(), weight_.cols());
  kernels::gemm_nn(patches.rows(), weight_.cols(), weight_.rows(), patches.data(),
                   weight_.data(), out.data());
  const double n = static_cast<double>(out.cols());
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    const double rstd = 1.0 / std::sqrt(var / n + kLayerNormEps);
    for (double& v : row) v = (v - mean) * rstd;
  }
  return out;
}

std::uint64_t FrozenVisionEncoder::checksum() const {
  // FNV-1a over the raw bytes.
  std::uint64_t h = 0xCBF29CE484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(weight_.data());
  for (std::size_t i = 0; i < weight_.size() * sizeof(double); ++i) {
    h = (h ^ bytes[i]) * 0x100000001B3ULL;
  }
  return h;
}

std::vector<double> image_key_query(const Matrix& features) {
  if (features.rows() == 0) throw Error(ErrorKind::EmptySequence, "no visual features");
  return column_mean(features);
}

ConnectorParams ConnectorParams::init(const FrontendConfig& c, Rng& rng) {
  auto fan_in = [](std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
  ConnectorParams p;
  p.query_embed = {"connector.query_embed", Matrix::gaussian(c.n_queries, c.d_t, 1.0, rng)};
  p.w_q = {"connector.w_q", Matrix::gaussian(c.d_t, c.d_h, fan_in(c.d_t), rng)};
  p.w_k = {"connector.w_k", Matrix::gaussian(c.d_i, c.d_h, fan_in(c.d_i), rng)};
  p.w_v = {"connector.w_v", Matrix::gaussian(c.d_i, c.d_t, fan_in(c.d_i), rng)};
  p.ln_gain = {"connector.ln_gain", Matrix(1, c.d_t, 1.0), {c.d_t}};
  p.ln_bias = {"connector.ln_bias", Matrix(1, c.d_t, 0.0), {c.d_t}};
  return p;
}

std::vector<Parameter*> ConnectorParams::all() {
  return {&query_embed, &w_q, &w_k, &w_v, &ln_gain, &ln_bias};
}

ad::Var connect(ad::Var features, ConnectorParams& params, Matrix* attention) {
  ad::Tape& tape = features.tape();
  if (features.cols() != params.w_k.value.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "connect: feature width does not match W_k");
  }
  const ad::Var queries = ad::matmul(tape.parameter(params.query_embed), tape.parameter(params.w_q));
  const ad::Var keys = ad::matmul(features, tape.parameter(params.w_k));
  const ad::Var values = ad::matmul(features, tape.parameter(params.w_v));
  std::vector<Matrix> probs;
  const ad::Var mixed = ad::attention(queries, keys, values, 1, false,
                                      attention != nullptr ? &probs : nullptr);
  if (attention != nullptr) *attention = std::move(probs.front());
  return ad::layer_norm(mixed, tape.parameter(params.ln_gain), tape.parameter(params.ln_bias),
                        kLayerNormEps);
}

}  // namespace cirl

#include "cirl/prompt_pool.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "cirl/errors.hpp"
#include "cirl/rng.hpp"

namespace cirl {

namespace {

constexpr double kMinQueryNorm = 1e-12;

void check_query(std::span<const double> q, const char* which) {
  if (l2_norm(q) < kMinQueryNorm) {
    throw Error(ErrorKind::DegenerateQuery, std::string(which) + " query has zero norm");
  }
}

// Adds d(1 - cos(q, k))/dk * scale into `grad`; returns 1 - cos(q, k).
double cosine_distance_grad(std::span<const double> q, std::span<const double> k, double scale,
                            std::span<double> grad) {
  const double qn = l2_norm(q);
  const double kn = l2_norm(k);
  if (kn == 0.0) return 1.0;
  const double c = dot(q, k) / (qn * kn);
  for (std::size_t i = 0; i < k.size(); ++i) {
    grad[i] -= scale * (q[i] / qn - c * k[i] / kn) / kn;
  }
  return 1.0 - c;
}

double cosine_distance(std::span<const double> q, std::span<const double> k) {
  const double kn = l2_norm(k);
  if (kn == 0.0) return 1.0;
  return 1.0 - dot(q, k) / (l2_norm(q) * kn);
}

}  // namespace

PromptPoolParams PromptPoolParams::init(std::size_t pool_size, std::size_t prompt_len,
                                        std::size_t d_i, std::size_t d_t, Rng& rng) {
  if (pool_size == 0 || prompt_len == 0) {
    throw Error(ErrorKind::InvalidConfig, "prompt pool needs M >= 1 and L_p >= 1");
  }
  PromptPoolParams p;
  p.image_keys = {"pool.image_keys", Matrix::gaussian(pool_size, d_i, 1.0, rng)};
  p.text_keys = {"pool.text_keys", Matrix::gaussian(pool_size, d_t, 1.0, rng)};
  p.prompts = {"pool.prompts", Matrix::gaussian(pool_size * prompt_len, d_t, 1.0, rng),
               {pool_size, prompt_len, d_t}};
  p.prompt_len = prompt_len;
  return p;
}

std::vector<Parameter*> PromptPoolParams::all() { return {&image_keys, &text_keys, &prompts}; }

std::vector<double> text_key_query(const Matrix& token_embeddings) {
  if (token_embeddings.rows() == 0) {
    throw Error(ErrorKind::EmptySequence, "text key query over an empty sequence");
  }
  return column_mean(token_embeddings);
}

double combined_distance(std::span<const double> image_key, std::span<const double> text_key,
                         std::span<const double> q_image, std::span<const double> q_text) {
  return cosine_distance(q_image, image_key) + cosine_distance(q_text, text_key);
}

Selection select(const Matrix& image_keys, const Matrix& text_keys,
                 std::span<const double> q_image, std::span<const double> q_text,
                 std::size_t top_k) {
  const std::size_t m = image_keys.rows();
  if (top_k == 0 || top_k > m) {
    throw Error(ErrorKind::InvalidConfig, "selection needs 1 <= K <= M");
  }
  if (q_image.size() != image_keys.cols() || q_text.size() != text_keys.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "select: query width does not match key width");
  }
  check_query(q_image, "image");
  check_query(q_text, "text");
  std::vector<double> dist(m);
  for (std::size_t i = 0; i < m; ++i) {
    dist[i] = combined_distance(image_keys.row(i), text_keys.row(i), q_image, q_text);
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  Selection sel;
  for (std::size_t i = 0; i < top_k; ++i) {
    sel.indices.push_back(order[i]);
    sel.distances.push_back(dist[order[i]]);
  }
  return sel;
}

Selection select(const PromptPoolParams& pool, std::span<const double> q_image,
                 std::span<const double> q_text, std::size_t top_k) {
  return select(pool.image_keys.value, pool.text_keys.value, q_image, q_text, top_k);
}

Selection fixed_selection(std::size_t top_k) {
  Selection sel;
  for (std::size_t i = 0; i < top_k; ++i) {
    sel.indices.push_back(i);
    sel.distances.push_back(0.0);
  }
  return sel;
}

ad::Var assemble(ad::Var prompts, std::size_t prompt_len, const Selection& selection,
                 ad::Var sentinel_open, ad::Var sentinel_close) {
  std::vector<std::size_t> rows;
  for (std::size_t idx : selection.indices) {
    for (std::size_t r = 0; r < prompt_len; ++r) rows.push_back(idx * prompt_len + r);
  }
  const ad::Var blocks = ad::gather_rows(prompts, rows);
  const ad::Var parts[] = {sentinel_open, blocks, sentinel_close};
  return ad::concat_rows(parts);
}

KeyMatchResult key_match_loss(const Matrix& image_keys, const Matrix& text_keys,
                              std::span<const double> q_image, std::span<const double> q_text,
                              const Selection& selection) {
  KeyMatchResult out{0.0, Matrix(image_keys.rows(), image_keys.cols()),
                     Matrix(text_keys.rows(), text_keys.cols())};
  if (selection.indices.empty()) return out;
  const double w = 1.0 / static_cast<double>(selection.indices.size());
  for (std::size_t idx : selection.indices) {
    out.loss += w * cosine_distance_grad(q_image, image_keys.row(idx), w, out.d_image_keys.row(idx));
    out.loss += w * cosine_distance_grad(q_text, text_keys.row(idx), w, out.d_text_keys.row(idx));
  }
  return out;
}

ad::Var key_match_loss(ad::Var image_keys, ad::Var text_keys, std::span<const double> q_image,
                       std::span<const double> q_text, const Selection& selection) {
  auto result = std::make_shared<KeyMatchResult>(key_match_loss(
      image_keys.value(), text_keys.value(), q_image, q_text, selection));
  Matrix value(1, 1, result->loss);
  return image_keys.tape().record(
      std::move(value), {image_keys, text_keys},
      [image_keys, text_keys, result](ad::Tape& t, const Matrix& g) {
        const double s = g(0, 0);
        if (t.needs_grad(image_keys)) {
          Matrix& gi = t.grad_mut(image_keys.id());
          for (std::size_t i = 0; i < gi.size(); ++i) gi.data()[i] += s * result->d_image_keys.data()[i];
        }
        if (t.needs_grad(text_keys)) {
          Matrix& gt = t.grad_mut(text_keys.id());
          for (std::size_t i = 0; i < gt.size(); ++i) gt.data()[i] += s * result->d_text_keys.data()[i];
        }
      });
}

}  // namespace cirl

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cirl/autodiff.hpp"
#include "cirl/matrix.hpp"

namespace cirl {

struct ContrastiveResult {
  double loss = 0.0;
  Matrix grad_queries;
  Matrix grad_targets;
};

/// In-batch contrastive loss over cosine similarities:
///   L = 1/N * sum_i -log( exp(l * cos(q_i, t_i)) / sum_j exp(l * cos(q_i, t_j)) )
/// Rows of `queries` and `targets` are paired by index; each query's
/// negatives are the other targets of the batch.
ContrastiveResult contrastive_loss(const Matrix& queries, const Matrix& targets, double lambda);
ad::Var contrastive_loss(ad::Var queries, ad::Var targets, double lambda);

}  // namespace cirl

#include "cirl/objective.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "cirl/errors.hpp"
#include "cirl/kernels.hpp"

namespace cirl {

namespace {

constexpr double kMinEmbeddingNorm = 1e-12;

Matrix unit_rows(const Matrix& m, std::vector<double>& norms) {
  Matrix out = m;
  norms.resize(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    norms[r] = l2_norm(m.row(r));
    if (norms[r] < kMinEmbeddingNorm) {
      throw Error(ErrorKind::DegenerateEmbedding, "embedding with zero norm");
    }
    for (double& v : out.row(r)) v /= norms[r];
  }
  return out;
}

// d/dx of x/|x| applied to upstream du: (du - u (u . du)) / |x|
void normalize_backward(const Matrix& unit, const std::vector<double>& norms, Matrix& grad) {
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    auto g = grad.row(r);
    const auto u = unit.row(r);
    const double proj = dot(u, g);
    for (std::size_t c = 0; c < g.size(); ++c) g[c] = (g[c] - u[c] * proj) / norms[r];
  }
}

}  // namespace

ContrastiveResult contrastive_loss(const Matrix& queries, const Matrix& targets, double lambda) {
  const std::size_t n = queries.rows();
  if (n < 2 || targets.rows() != n || targets.cols() != queries.cols()) {
    throw Error(ErrorKind::ShapeMismatch, "contrastive loss needs N_B >= 2 paired rows");
  }
  std::vector<double> qn, tn;
  const Matrix qu = unit_rows(queries, qn);
  const Matrix tu = unit_rows(targets, tn);

  Matrix logits(n, n);
  kernels::gemm_nt(n, n, queries.cols(), qu.data(), tu.data(), logits.data());
  ContrastiveResult out;
  Matrix coef(n, n);  // dL/dlogit
  for (std::size_t i = 0; i < n; ++i) {
    auto row = logits.row(i);
    for (double& v : row) v *= lambda;
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    out.loss += (lse - row[i]) / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      coef(i, j) = (std::exp(row[j] - lse) - (i == j ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  // logits = lambda * qu tu^T
  out.grad_queries = Matrix(n, queries.cols());
  out.grad_targets = Matrix(n, queries.cols());
  kernels::gemm_nn(n, queries.cols(), n, coef.data(), tu.data(), out.grad_queries.data());
  kernels::gemm_tn(n, queries.cols(), n, coef.data(), qu.data(), out.grad_targets.data());
  for (double& v : out.grad_queries.flat()) v *= lambda;
  for (double& v : out.grad_targets.flat()) v *= lambda;
  normalize_backward(qu, qn, out.grad_queries);
  normalize_backward(tu, tn, out.grad_targets);
  return out;
}

ad::Var contrastive_loss(ad::Var queries, ad::Var targets, double lambda) {
  auto result =
      std::make_shared<ContrastiveResult>(contrastive_loss(queries.value(), targets.value(), lambda));
  Matrix value(1, 1, result->loss);
  return queries.tape().record(std::move(value), {queries, targets},
                               [queries, targets, result](ad::Tape& t, const Matrix& g) {
                                 const double s = g(0, 0);
                                 if (t.needs_grad(queries)) {
                                   kernels::axpy(s, result->grad_queries.data(),
                                                 t.grad_mut(queries.id()).data(),
                                                 result->grad_queries.size());
                                 }
                                 if (t.needs_grad(targets)) {
                                   kernels::axpy(s, result->grad_targets.data(),
                                                 t.grad_mut(targets.id()).data(),
                                                 result->grad_targets.size());
                                 }
                               });
}

}  // namespace cirl

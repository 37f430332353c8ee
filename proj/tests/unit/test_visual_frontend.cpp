#include <cmath>

#include "cirl/errors.hpp"
#include "cirl/rng.hpp"
#include "cirl/visual_frontend.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cirl;
using cirl::test::fd_check;
using cirl::test::probe;

namespace {

Matrix run_connect(const Matrix& features, ConnectorParams& params, Matrix* attn = nullptr) {
  ad::Tape t(false);
  return connect(t.constant(features), params, attn).value();
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  return d;
}

}  // namespace

TEST_CASE("frozen encoder handles a zero grid and is deterministic") {
  FrozenVisionEncoder enc(3, 32, 32);
  const Matrix zero(16, 32);
  const Matrix out = enc.encode(zero);
  CHECK(out.rows() == 16);
  CHECK(out.cols() == 32);
  CHECK(all_finite(out));

  Rng rng(4);
  const Matrix x = Matrix::gaussian(16, 32, 1.0, rng);
  FrozenVisionEncoder again(3, 32, 32);
  CHECK(enc.encode(x) == again.encode(x));
  CHECK(enc.checksum() == again.checksum());
  CHECK_THROWS_AS(enc.encode(Matrix(16, 31)), Error);
}

TEST_CASE("encoded rows are layer normalized") {
  FrozenVisionEncoder enc(3, 32, 32);
  Rng rng(5);
  const Matrix out = enc.encode(Matrix::gaussian(16, 32, 2.0, rng));
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double mean = 0, var = 0;
    for (double v : out.row(r)) mean += v;
    mean /= out.cols();
    for (double v : out.row(r)) var += (v - mean) * (v - mean);
    var /= out.cols();
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("image key query is the column mean") {
  Matrix same(5, 3);
  for (std::size_t r = 0; r < 5; ++r) {
    same(r, 0) = 1.5;
    same(r, 1) = -2.0;
    same(r, 2) = 0.25;
  }
  const auto m = image_key_query(same);
  CHECK(m[0] == 1.5);
  CHECK(m[1] == -2.0);
  CHECK(m[2] == 0.25);

  Matrix sym(2, 3);
  sym(0, 0) = 1.0;
  sym(1, 0) = -1.0;
  for (double v : image_key_query(sym)) CHECK(v == 0.0);

  Rng rng(6);
  const Matrix x = Matrix::gaussian(16, 32, 1.0, rng);
  const auto q = image_key_query(x);
  for (std::size_t c = 0; c < 32; ++c) {
    // reversed summation order
    double s = 0.0;
    for (std::size_t r = 16; r-- > 0;) s += x(r, c);
    CHECK(std::abs(q[c] - s / 16.0) < 1e-12);
  }
}

TEST_CASE("single patch gives layernorm of the value row for every query") {
  FrontendConfig cfg;
  Rng rng(7);
  ConnectorParams p = ConnectorParams::init(cfg, rng);
  const Matrix f = Matrix::gaussian(1, cfg.d_i, 1.0, rng);
  Matrix attn;
  const Matrix out = run_connect(f, p, &attn);
  for (std::size_t q = 0; q < cfg.n_queries; ++q) CHECK(attn(q, 0) == 1.0);

  // independent value row and layer norm
  std::vector<double> v(cfg.d_t, 0.0);
  for (std::size_t j = 0; j < cfg.d_t; ++j)
    for (std::size_t i = 0; i < cfg.d_i; ++i) v[j] += f(0, i) * p.w_v.value(i, j);
  double mean = 0, var = 0;
  for (double x : v) mean += x;
  mean /= cfg.d_t;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= cfg.d_t;
  for (std::size_t q = 0; q < cfg.n_queries; ++q) {
    for (std::size_t j = 0; j < cfg.d_t; ++j) {
      const double expect =
          (v[j] - mean) / std::sqrt(var + kLayerNormEps) * p.ln_gain.value(0, j) +
          p.ln_bias.value(0, j);
      CHECK(std::abs(out(q, j) - expect) < 1e-10);
    }
  }
}

TEST_CASE("connector is invariant to patch duplication and permutation") {
  FrontendConfig cfg;
  Rng rng(8);
  ConnectorParams p = ConnectorParams::init(cfg, rng);
  const Matrix f = Matrix::gaussian(16, cfg.d_i, 1.0, rng);
  Matrix attn;
  const Matrix base = run_connect(f, p, &attn);
  for (std::size_t q = 0; q < attn.rows(); ++q) {
    double s = 0.0;
    for (double v : attn.row(q)) s += v;
    CHECK(std::abs(s - 1.0) < 1e-9);
  }

  Matrix dup(32, cfg.d_i);
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < cfg.d_i; ++c) dup(r, c) = f(r / 2, c);
  CHECK(max_abs_diff(run_connect(dup, p), base) < 1e-12);

  Matrix perm(16, cfg.d_i);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < cfg.d_i; ++c) perm(r, c) = f((r * 5 + 3) % 16, c);
  CHECK(max_abs_diff(run_connect(perm, p), base) < 1e-12);
}

TEST_CASE("connector gradients match finite differences on a toy") {
  FrontendConfig cfg;
  cfg.d_i = 3;
  cfg.d_t = 4;
  cfg.d_h = 3;
  cfg.n_queries = 2;
  Rng rng(9);
  ConnectorParams p = ConnectorParams::init(cfg, rng);
  Parameter feats("f", Matrix::gaussian(2, cfg.d_i, 1.0, rng));
  auto params = p.all();
  params.push_back(&feats);
  const double err = fd_check(params, [&](bool bw) {
    ad::Tape t(bw);
    Rng pr(10);
    const ad::Var loss = probe(connect(t.parameter(feats), p), pr);
    if (bw) t.backward(loss);
    return loss.value()(0, 0);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("connector rejects mismatched features") {
  FrontendConfig cfg;
  Rng rng(11);
  ConnectorParams p = ConnectorParams::init(cfg, rng);
  CHECK_THROWS_AS(run_connect(Matrix(16, cfg.d_i + 1), p), Error);
}

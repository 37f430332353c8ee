#include "cirl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "cirl/errors.hpp"
#include "cirl/kernels.hpp"

namespace cirl::ad {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorKind::ShapeMismatch, what);
}

}  // namespace

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
  if (auto it = param_ids_.find(&param); it != param_ids_.end()) return {this, it->second};
  Node node;
  node.external = &param.value;
  node.needs_grad = requires_grad_;
  node.param = &param;
  nodes_.push_back(std::move(node));
  param_ids_.emplace(&param, nodes_.size() - 1);
  return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  if (requires_grad_) {
    node.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](Var v) { return nodes_[v.id()].needs_grad; });
    if (node.needs_grad) node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Matrix& Tape::grad_mut(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    const Matrix& v = value(id);
    node.grad = Matrix(v.rows(), v.cols());
    node.has_grad = true;
  }
  return node.grad;
}

const Matrix* Tape::grad(std::size_t id) const {
  return nodes_[id].has_grad ? &nodes_[id].grad : nullptr;
}

void Tape::backward(Var loss) {
  require(loss.value().rows() == 1 && loss.value().cols() == 1, "backward needs a scalar loss");
  if (!requires_grad_ || !nodes_[loss.id()].needs_grad) return;
  grad_mut(loss.id())(0, 0) = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.has_grad) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) {
      kernels::axpy(1.0, node.grad.data(), node.param->grad.data(), node.grad.size());
    }
  }
}

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.cols() == bv.rows(), "matmul: inner dimensions differ");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Matrix out(m, n);
  kernels::gemm_nn(m, n, k, av.data(), bv.data(), out.data());
  return a.tape().record(std::move(out), {a, b}, [a, b, m, n, k](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) {
      kernels::gemm_nt(m, k, n, g.data(), b.value().data(), t.grad_mut(a.id()).data());
    }
    if (t.needs_grad(b)) {
      kernels::gemm_tn(k, n, m, a.value().data(), g.data(), t.grad_mut(b.id()).data());
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.cols() == bv.cols(), "matmul_nt: inner dimensions differ");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Matrix out(m, n);
  kernels::gemm_nt(m, n, k, av.data(), bv.data(), out.data());
  return a.tape().record(std::move(out), {a, b}, [a, b, m, n, k](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) {
      kernels::gemm_nn(m, k, n, g.data(), b.value().data(), t.grad_mut(a.id()).data());
    }
    if (t.needs_grad(b)) {
      kernels::gemm_tn(n, k, m, g.data(), a.value().data(), t.grad_mut(b.id()).data());
    }
  });
}

Var add(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add: shapes differ");
  Matrix out = av;
  kernels::axpy(1.0, bv.data(), out.data(), out.size());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    for (Var v : {a, b}) {
      if (t.needs_grad(v)) kernels::axpy(1.0, g.data(), t.grad_mut(v.id()).data(), g.size());
    }
  });
}

Var add_row(Var a, Var row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  require(rv.rows() == 1 && rv.cols() == av.cols(), "add_row: row shape");
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    kernels::axpy(1.0, rv.data(), out.row(r).data(), out.cols());
  }
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) kernels::axpy(1.0, g.data(), t.grad_mut(a.id()).data(), g.size());
    if (t.needs_grad(row)) {
      Matrix& gr = t.grad_mut(row.id());
      for (std::size_t r = 0; r < g.rows(); ++r) {
        kernels::axpy(1.0, g.row(r).data(), gr.data(), g.cols());
      }
    }
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (auto& v : out.flat()) v *= s;
  return a.tape().record(std::move(out), {a}, [a, s](Tape& t, const Matrix& g) {
    kernels::axpy(s, g.data(), t.grad_mut(a.id()).data(), g.size());
  });
}

Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  auto th = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    (*th)[i] = std::tanh(kC * (v + kA * v * v * v));
    out.data()[i] = 0.5 * v * (1.0 + (*th)[i]);
  }
  if (!a.tape().requires_grad()) th.reset();
  return a.tape().record(std::move(out), {a}, [a, th](Tape& t, const Matrix& g) {
    const Matrix& xv = a.value();
    Matrix& ga = t.grad_mut(a.id());
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double h = (*th)[i];
      const double dth = (1.0 - h * h) * kC * (1.0 + 3.0 * kA * v * v);
      ga.data()[i] += g.data()[i] * (0.5 * (1.0 + h) + 0.5 * v * dth);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& xv = x.value();
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  const std::size_t rows = xv.rows(), n = xv.cols();
  require(gv.cols() == n && bv.cols() == n && gv.rows() == 1 && bv.rows() == 1,
          "layer_norm: gain/bias shape");
  auto xhat = std::make_shared<Matrix>(rows, n);
  auto rstd = std::make_shared<std::vector<double>>(rows);
  Matrix out(rows, n);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto xr = xv.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xr[c] - mean) * rs;
      (*xhat)(r, c) = h;
      out(r, c) = h * gv(0, c) + bv(0, c);
    }
  }
  return x.tape().record(
      std::move(out), {x, gain, bias}, [x, gain, bias, xhat, rstd](Tape& t, const Matrix& g) {
        const std::size_t rows = g.rows(), n = g.cols();
        const Matrix& gv = gain.value();
        if (t.needs_grad(gain)) {
          Matrix& gg = t.grad_mut(gain.id());
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gg(0, c) += g(r, c) * (*xhat)(r, c);
        }
        if (t.needs_grad(bias)) {
          Matrix& gb = t.grad_mut(bias.id());
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gb(0, c) += g(r, c);
        }
        if (t.needs_grad(x)) {
          Matrix& gx = t.grad_mut(x.id());
          std::vector<double> dh(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              dh[c] = g(r, c) * gv(0, c);
              mean_dh += dh[c];
              mean_dh_h += dh[c] * (*xhat)(r, c);
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            for (std::size_t c = 0; c < n; ++c) {
              gx(r, c) += (*rstd)[r] * (dh[c] - mean_dh - (*xhat)(r, c) * mean_dh_h);
            }
          }
        }
      });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Matrix& tv = table.value();
  Matrix out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < tv.rows(), "gather_rows: id out of range");
    std::copy_n(tv.row(ids[i]).data(), tv.cols(), out.row(i).data());
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return table.tape().record(std::move(out), {table},
                             [table, idx = std::move(idx)](Tape& t, const Matrix& g) {
                               Matrix& gt = t.grad_mut(table.id());
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 kernels::axpy(1.0, g.row(i).data(), gt.row(idx[i]).data(),
                                               g.cols());
                               }
                             });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  require(begin <= end && end <= a.value().rows(), "slice_rows: range");
  return a.tape().record(a.value().rows_slice(begin, end), {a},
                         [a, begin](Tape& t, const Matrix& g) {
                           Matrix& ga = t.grad_mut(a.id());
                           kernels::axpy(1.0, g.data(), ga.row(begin).data(), g.size());
                         });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no parts");
  const std::size_t cols = parts.front().value().cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    require(p.value().cols() == cols, "concat_rows: column counts differ");
    rows += p.value().rows();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t r = 0;
  for (Var p : parts) {
    offsets.push_back(r);
    std::copy_n(p.value().data(), p.value().size(), out.row(r).data());
    r += p.value().rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  Tape& tape = parts.front().tape();
  return tape.record(std::move(out), parts,
                     [inputs, offsets = std::move(offsets)](Tape& t, const Matrix& g) {
                       for (std::size_t i = 0; i < inputs.size(); ++i) {
                         const Var p = inputs[i];
                         if (!t.needs_grad(p) || p.value().size() == 0) continue;
                         kernels::axpy(1.0, g.row(offsets[i]).data(),
                                       t.grad_mut(p.id()).data(), p.value().size());
                       }
                     });
}

Var weighted_row_sum(Var a, std::span<const double> weights) {
  const Matrix& av = a.value();
  require(weights.size() == av.rows(), "weighted_row_sum: weight count");
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) += weights[r] * av(r, c);
  }
  std::vector<double> w(weights.begin(), weights.end());
  return a.tape().record(std::move(out), {a}, [a, w = std::move(w)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_mut(a.id());
    for (std::size_t r = 0; r < w.size(); ++r) {
      kernels::axpy(w[r], g.data(), ga.row(r).data(), g.cols());
    }
  });
}

namespace {

Matrix head_columns(const Matrix& m, std::size_t head, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::copy_n(m.row(r).data() + head * width, width, out.row(r).data());
  }
  return out;
}

void add_head_columns(Matrix& dst, const Matrix& src, std::size_t head) {
  const std::size_t width = src.cols();
  for (std::size_t r = 0; r < src.rows(); ++r) {
    kernels::axpy(1.0, src.row(r).data(), dst.row(r).data() + head * width, width);
  }
}

}  // namespace

Var attention(Var q, Var kmat, Var v, std::size_t heads, bool causal,
              std::vector<Matrix>* capture) {
  const Matrix& qv = q.value();
  const Matrix& kv = kmat.value();
  const Matrix& vv = v.value();
  require(heads >= 1, "attention: heads");
  require(qv.cols() == kv.cols() && qv.cols() % heads == 0 && vv.cols() % heads == 0,
          "attention: head widths");
  require(kv.rows() == vv.rows() && kv.rows() >= 1, "attention: key/value rows");
  require(!causal || qv.rows() == kv.rows(), "attention: causal needs square scores");
  const std::size_t len_q = qv.rows(), len_k = kv.rows();
  const std::size_t dq = qv.cols() / heads, dv = vv.cols() / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dq));

  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(heads);
  Matrix out(len_q, vv.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Matrix qh = head_columns(qv, h, dq);
    const Matrix kh = head_columns(kv, h, dq);
    const Matrix vh = head_columns(vv, h, dv);
    Matrix s(len_q, len_k);
    kernels::gemm_nt(len_q, len_k, dq, qh.data(), kh.data(), s.data());
    for (std::size_t i = 0; i < len_q; ++i) {
      const std::size_t visible = causal ? i + 1 : len_k;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, s(i, j) * sc);
      double z = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        s(i, j) = std::exp(s(i, j) * sc - mx);
        z += s(i, j);
      }
      for (std::size_t j = 0; j < visible; ++j) s(i, j) /= z;
      for (std::size_t j = visible; j < len_k; ++j) s(i, j) = 0.0;
    }
    Matrix oh(len_q, dv);
    kernels::gemm_nn(len_q, dv, len_k, s.data(), vh.data(), oh.data());
    add_head_columns(out, oh, h);
    probs->push_back(std::move(s));
  }
  if (capture != nullptr) *capture = *probs;

  return q.tape().record(
      std::move(out), {q, kmat, v},
      [q, kmat, v, heads, probs, dq, dv, sc, len_q, len_k](Tape& t, const Matrix& g) {
        for (std::size_t h = 0; h < heads; ++h) {
          const Matrix& p = (*probs)[h];
          const Matrix gh = head_columns(g, h, dv);
          const Matrix vh = head_columns(v.value(), h, dv);
          if (t.needs_grad(v)) {
            Matrix dvh(len_k, dv);
            kernels::gemm_tn(len_k, dv, len_q, p.data(), gh.data(), dvh.data());
            add_head_columns(t.grad_mut(v.id()), dvh, h);
          }
          if (!t.needs_grad(q) && !t.needs_grad(kmat)) continue;
          Matrix dp(len_q, len_k);
          kernels::gemm_nt(len_q, len_k, dv, gh.data(), vh.data(), dp.data());
          for (std::size_t i = 0; i < len_q; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < len_k; ++j) row += dp(i, j) * p(i, j);
            for (std::size_t j = 0; j < len_k; ++j) dp(i, j) = p(i, j) * (dp(i, j) - row) * sc;
          }
          if (t.needs_grad(q)) {
            const Matrix kh = head_columns(kmat.value(), h, dq);
            Matrix dqh(len_q, dq);
            kernels::gemm_nn(len_q, dq, len_k, dp.data(), kh.data(), dqh.data());
            add_head_columns(t.grad_mut(q.id()), dqh, h);
          }
          if (t.needs_grad(kmat)) {
            const Matrix qh = head_columns(q.value(), h, dq);
            Matrix dkh(len_k, dq);
            kernels::gemm_tn(len_k, dq, len_q, dp.data(), qh.data(), dkh.data());
            add_head_columns(t.grad_mut(kmat.id()), dkh, h);
          }
        }
      });
}

}  // namespace cirl::ad

#pragma once

#include <cmath>
#include <vector>

#include "afa/tape.hpp"

namespace afa {

namespace detail {

template <class S>
GradTape<S>& same_tape(Var<S> a, Var<S> b) {
  if (a.tape == nullptr || a.tape != b.tape) throw error("ops: operands live on different tapes");
  return *a.tape;
}

}  // namespace detail

// C = A * B.  dA = dC * B^T, dB = A^T * dC.
template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  auto& t = detail::same_tape(a, b);
  const Mat<S>& A = t.value(a.id);
  const Mat<S>& B = t.value(b.id);
  if (A.cols() != B.rows())
    throw error(strf("matmul: inner dimensions disagree (%ldx%ld vs %ldx%ld)", long(A.rows()),
                     long(A.cols()), long(B.rows()), long(B.cols())));
  return t.push(A * B, [aid = a.id, bid = b.id](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.grad_acc(aid).noalias() += g * t.value(bid).transpose();
    t.grad_acc(bid).noalias() += t.value(aid).transpose() * g;
  });
}

// C = alpha * A * B^T.  dA = alpha * dC * B, dB = alpha * dC^T * A.
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b, S alpha = S(1)) {
  auto& t = detail::same_tape(a, b);
  const Mat<S>& A = t.value(a.id);
  const Mat<S>& B = t.value(b.id);
  if (A.cols() != B.cols())
    throw error(strf("matmul_nt: inner dimensions disagree (%ldx%ld vs %ldx%ld^T)", long(A.rows()),
                     long(A.cols()), long(B.rows()), long(B.cols())));
  Mat<S> c = alpha * (A * B.transpose());
  return t.push(std::move(c), [aid = a.id, bid = b.id, alpha](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.grad_acc(aid).noalias() += alpha * (g * t.value(bid));
    t.grad_acc(bid).noalias() += alpha * (g.transpose() * t.value(aid));
  });
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  auto& t = detail::same_tape(a, b);
  const Mat<S>& A = t.value(a.id);
  const Mat<S>& B = t.value(b.id);
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw error("add: shape mismatch");
  return t.push(A + B, [aid = a.id, bid = b.id](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.grad_acc(aid) += g;
    t.grad_acc(bid) += g;
  });
}

// Adds a 1xC bias row to every row of x.
template <class S>
Var<S> add_row_bias(Var<S> x, Var<S> bias) {
  auto& t = detail::same_tape(x, bias);
  const Mat<S>& X = t.value(x.id);
  const Mat<S>& B = t.value(bias.id);
  if (B.rows() != 1 || B.cols() != X.cols()) throw error("add_row_bias: bias must be 1 x cols(x)");
  Mat<S> y = X;
  y.rowwise() += B.row(0);
  return t.push(std::move(y), [xid = x.id, bid = bias.id](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.grad_acc(xid) += g;
    t.grad_acc(bid).row(0) += g.colwise().sum();
  });
}

template <class S>
Var<S> scale(Var<S> x, S c) {
  auto& t = *x.tape;
  return t.push(Mat<S>(c * t.value(x.id)), [xid = x.id, c](GradTape<S>& t, int self) {
    t.grad_acc(xid) += c * t.grad(self);
  });
}

template <class S>
Var<S> concat_cols(Var<S> a, Var<S> b) {
  auto& t = detail::same_tape(a, b);
  const Mat<S>& A = t.value(a.id);
  const Mat<S>& B = t.value(b.id);
  if (A.rows() != B.rows()) throw error("concat_cols: row counts differ");
  Mat<S> c(A.rows(), A.cols() + B.cols());
  c.leftCols(A.cols()) = A;
  c.rightCols(B.cols()) = B;
  const Index split = A.cols();
  return t.push(std::move(c), [aid = a.id, bid = b.id, split](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.grad_acc(aid) += g.leftCols(split);
    t.grad_acc(bid) += g.rightCols(g.cols() - split);
  });
}

template <class S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  auto& t = detail::same_tape(a, b);
  const Mat<S>& A = t.value(a.id);
  const Mat<S>& B = t.value(b.id);
  if (A.cols() != B.cols()) throw error("concat_rows: column counts differ");
  Mat<S> c(A.rows() + B.rows(), A.cols());
  c.topRows(A.rows()) = A;
  c.bottomRows(B.rows()) = B;
  const Index split = A.rows();
  return t.push(std::move(c), [aid = a.id, bid = b.id, split](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    t.grad_acc(aid) += g.topRows(split);
    t.grad_acc(bid) += g.bottomRows(g.rows() - split);
  });
}

// Column-concatenates several equally-tall blocks in one node.
template <class S>
Var<S> concat_cols_many(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw error("concat_cols_many: no operands");
  if (parts.size() == 1) return parts[0];
  auto& t = *parts[0].tape;
  Index rows = t.value(parts[0].id).rows();
  Index cols = 0;
  for (const auto& p : parts) {
    detail::same_tape(parts[0], p);
    if (t.value(p.id).rows() != rows) throw error("concat_cols_many: row counts differ");
    cols += t.value(p.id).cols();
  }
  Mat<S> c(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    const Mat<S>& block = t.value(p.id);
    c.middleCols(at, block.cols()) = block;
    ids.push_back(p.id);
    offsets.push_back(at);
    at += block.cols();
  }
  return t.push(std::move(c), [ids, offsets](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    for (size_t i = 0; i < ids.size(); ++i) {
      Mat<S>& pg = t.grad_acc(ids[i]);
      pg += g.middleCols(offsets[i], pg.cols());
    }
  });
}

template <class S>
Var<S> slice_cols(Var<S> x, Index start, Index n) {
  auto& t = *x.tape;
  const Mat<S>& X = t.value(x.id);
  if (start < 0 || n <= 0 || start + n > X.cols()) throw error("slice_cols: range out of bounds");
  Mat<S> y = X.middleCols(start, n);
  return t.push(std::move(y), [xid = x.id, start, n](GradTape<S>& t, int self) {
    t.grad_acc(xid).middleCols(start, n) += t.grad(self);
  });
}

// Row-wise softmax, shifted by the row max so finite inputs cannot overflow.
template <class S>
Var<S> softmax_rows(Var<S> x) {
  auto& t = *x.tape;
  const Mat<S>& X = t.value(x.id);
  if (X.cols() < 1) throw error("softmax_rows: empty row");
  Mat<S> p(X.rows(), X.cols());
  for (Index i = 0; i < X.rows(); ++i) {
    const S m = X.row(i).maxCoeff();
    p.row(i) = (X.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  // dx = p .* (g - rowsum(p .* g))
  return t.push(std::move(p), [xid = x.id](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const Mat<S>& p = t.value(self);
    Mat<S> pg = p.cwiseProduct(g);
    Eigen::Matrix<S, Eigen::Dynamic, 1> s = pg.rowwise().sum();
    t.grad_acc(xid) += pg - (p.array().colwise() * s.array()).matrix();
  });
}

// Exact GeLU: x * Phi(x) with Phi the standard normal CDF (erf form).
template <class S>
Var<S> gelu(Var<S> x) {
  auto& t = *x.tape;
  const Mat<S>& X = t.value(x.id);
  Mat<S> y = X.unaryExpr([](S v) {
    const double d = static_cast<double>(v);
    return static_cast<S>(0.5 * d * (1.0 + std::erf(d * 0.7071067811865475)));
  });
  return t.push(std::move(y), [xid = x.id](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const Mat<S>& X = t.value(xid);
    // d/dx = Phi(x) + x * phi(x)
    Mat<S> d = X.unaryExpr([](S v) {
      const double x = static_cast<double>(v);
      const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
      const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
      return static_cast<S>(cdf + x * pdf);
    });
    t.grad_acc(xid) += g.cwiseProduct(d);
  });
}

// Per-row normalization: (x - mean) / sqrt(var + eps) * gamma + beta.
// gamma and beta are 1xC.
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gamma, Var<S> beta, double eps) {
  auto& t = detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  if (eps <= 0) throw error("layer_norm: eps must be positive");
  const Mat<S>& X = t.value(x.id);
  const Mat<S>& G = t.value(gamma.id);
  const Mat<S>& B = t.value(beta.id);
  if (G.rows() != 1 || B.rows() != 1 || G.cols() != X.cols() || B.cols() != X.cols())
    throw error("layer_norm: gamma/beta must be 1 x cols(x)");
  const Index c = X.cols();
  Mat<S> xhat(X.rows(), c);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    const S mean = X.row(i).mean();
    const S var = (X.row(i).array() - mean).square().sum() / S(c);
    inv_std(i) = S(1) / std::sqrt(var + static_cast<S>(eps));
    xhat.row(i) = (X.row(i).array() - mean) * inv_std(i);
  }
  Mat<S> y = (xhat.array().rowwise() * G.row(0).array()).rowwise() + B.row(0).array();
  return t.push(std::move(y), [xid = x.id, gid = gamma.id, bid = beta.id, xhat,
                               inv_std](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    const Mat<S>& G = t.value(gid);
    t.grad_acc(bid).row(0) += g.colwise().sum();
    t.grad_acc(gid).row(0) += g.cwiseProduct(xhat).colwise().sum();
    Mat<S> dxhat = g.array().rowwise() * G.row(0).array();
    Eigen::Matrix<S, Eigen::Dynamic, 1> m1 = dxhat.rowwise().mean();
    Eigen::Matrix<S, Eigen::Dynamic, 1> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
    Mat<S> dx = dxhat;
    dx.array().colwise() -= m1.array();
    dx -= (xhat.array().colwise() * m2.array()).matrix();
    dx.array().colwise() *= inv_std.array();
    t.grad_acc(xid) += dx;
  });
}

// Adds a constant 1 x cols bias row (additive attention mask) to every row.
template <class S>
Var<S> add_key_bias(Var<S> x, const Mat<S>& bias) {
  auto& t = *x.tape;
  const Mat<S>& X = t.value(x.id);
  if (bias.rows() != 1 || bias.cols() != X.cols())
    throw error("add_key_bias: mask/sequence shape mismatch");
  Mat<S> y = X;
  y.rowwise() += bias.row(0);
  return t.push(std::move(y), [xid = x.id](GradTape<S>& t, int self) {
    t.grad_acc(xid) += t.grad(self);
  });
}

// Inverted dropout; identity when disabled or p == 0.
template <class S>
Var<S> dropout(Var<S> x, double p, Rng& rng, bool enabled) {
  if (p < 0 || p >= 1) throw error("dropout: p must lie in [0, 1)");
  if (!enabled || p == 0) return x;
  auto& t = *x.tape;
  const Mat<S>& X = t.value(x.id);
  Mat<S> mask(X.rows(), X.cols());
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  for (Index i = 0; i < X.rows(); ++i)
    for (Index j = 0; j < X.cols(); ++j) mask(i, j) = rng.uniform() < p ? S(0) : keep_scale;
  return t.push(X.cwiseProduct(mask), [xid = x.id, mask](GradTape<S>& t, int self) {
    t.grad_acc(xid) += t.grad(self).cwiseProduct(mask);
  });
}

// Picks rows of x by index; backward scatter-adds into the source rows.
template <class S>
Var<S> gather_rows(Var<S> x, std::vector<int> rows) {
  auto& t = *x.tape;
  const Mat<S>& X = t.value(x.id);
  if (rows.empty()) throw error("gather_rows: empty index list");
  for (int r : rows)
    if (r < 0 || r >= X.rows())
      throw error(strf("gather_rows: index %d out of range [0, %ld)", r, long(X.rows())));
  Mat<S> y(static_cast<Index>(rows.size()), X.cols());
  for (size_t i = 0; i < rows.size(); ++i) y.row(static_cast<Index>(i)) = X.row(rows[i]);
  return t.push(std::move(y), [xid = x.id, rows = std::move(rows)](GradTape<S>& t, int self) {
    const Mat<S>& g = t.grad(self);
    Mat<S>& px = t.grad_acc(xid);
    for (size_t i = 0; i < rows.size(); ++i) px.row(rows[i]) += g.row(static_cast<Index>(i));
  });
}

template <class S>
Var<S> sum(Var<S> x) {
  auto& t = *x.tape;
  Mat<S> y(1, 1);
  y(0, 0) = t.value(x.id).sum();
  return t.push(std::move(y), [xid = x.id](GradTape<S>& t, int self) {
    t.grad_acc(xid).array() += t.grad(self)(0, 0);
  });
}

namespace detail {

template <class S>
Var<S> cross_entropy_impl(Var<S> logits, const std::vector<int>& labels, int ignore_index,
                          bool mean) {
  auto& t = *logits.tape;
  const Mat<S>& L = t.value(logits.id);
  if (static_cast<Index>(labels.size()) != L.rows())
    throw error("cross_entropy: one label per logits row required");
  std::vector<int> live;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == ignore_index) continue;
    if (labels[i] < 0 || labels[i] >= L.cols())
      throw error(strf("cross_entropy: label %d out of range", labels[i]));
    live.push_back(static_cast<int>(i));
  }
  if (live.empty()) throw error("cross_entropy: all positions ignored");
  double nll = 0;
  for (int r : live) {
    const S m = L.row(r).maxCoeff();
    const double lse =
        static_cast<double>(m) + std::log((L.row(r).array() - m).exp().sum());
    nll += lse - static_cast<double>(L(r, labels[static_cast<size_t>(r)]));
  }
  const double denom = mean ? static_cast<double>(live.size()) : 1.0;
  Mat<S> y(1, 1);
  y(0, 0) = static_cast<S>(nll / denom);
  return t.push(std::move(y), [lid = logits.id, labels, live, denom](GradTape<S>& t, int self) {
    const S g = t.grad(self)(0, 0);
    const Mat<S>& L = t.value(lid);
    Mat<S>& dl = t.grad_acc(lid);
    for (int r : live) {
      const S m = L.row(r).maxCoeff();
      Eigen::Array<S, 1, Eigen::Dynamic> p = (L.row(r).array() - m).exp();
      p /= p.sum();
      dl.row(r) += (g / static_cast<S>(denom)) * p.matrix();
      dl(r, labels[static_cast<size_t>(r)]) -= g / static_cast<S>(denom);
    }
  });
}

}  // namespace detail

// Mean negative log-softmax over the rows whose label is not ignore_index.
template <class S>
Var<S> cross_entropy_masked(Var<S> logits, const std::vector<int>& labels, int ignore_index) {
  return detail::cross_entropy_impl(logits, labels, ignore_index, true);
}

// Sum variant; used to combine several sequences into one batch mean.
template <class S>
Var<S> cross_entropy_masked_sum(Var<S> logits, const std::vector<int>& labels, int ignore_index) {
  return detail::cross_entropy_impl(logits, labels, ignore_index, false);
}

// softmax(Q K^T / sqrt(d_k) + mask) V.  The additive mask row (0 or a large
// negative surrogate per key) zeroes attention to masked keys.
template <class S>
Var<S> scaled_dot_attention(Var<S> q, Var<S> k, Var<S> v, const Mat<S>* key_bias = nullptr,
                            double attn_dropout = 0, Rng* rng = nullptr,
                            Var<S>* probs_out = nullptr) {
  auto& t = detail::same_tape(q, k);
  detail::same_tape(q, v);
  const Index dk = t.value(q.id).cols();
  if (dk == 0) throw error("scaled_dot_attention: d_k must be positive");
  if (t.value(k.id).cols() != dk) throw error("scaled_dot_attention: Q/K width mismatch");
  if (t.value(k.id).rows() != t.value(v.id).rows())
    throw error("scaled_dot_attention: K/V length mismatch");
  Var<S> scores = matmul_nt(q, k, static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk))));
  if (key_bias != nullptr) scores = add_key_bias(scores, *key_bias);
  Var<S> probs = softmax_rows(scores);
  if (probs_out != nullptr) *probs_out = probs;
  if (attn_dropout > 0 && rng != nullptr) probs = dropout(probs, attn_dropout, *rng, true);
  return matmul(probs, v);
}

}  // namespace afa

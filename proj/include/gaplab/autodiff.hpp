#pragma once

// Reverse-mode differentiation over dense row-major matrices. Rows are
// tokens; several sentences are packed into one matrix and attention is
// restricted to per-sentence segments.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "gaplab/common.hpp"

namespace gaplab {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// A block of consecutive rows.
struct Span {
  int offset = 0;
  int length = 0;
};

/// Attention segment: query rows attend to key rows of the same sentence.
struct Segment {
  Span query;
  Span key;
};

template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;

  struct Var {
    int id = -1;
  };

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf bound to storage owned elsewhere (parameters); no copy is made.
  Var bind(const Matrix& external, bool needs_grad) {
    Node n;
    n.external = &external;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  const Matrix& value(Var v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.external ? *n.external : n.value;
  }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  /// Gradient accumulator, allocated on first use.
  Matrix& grad(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) {
      const Matrix& val = value(v);
      n.grad.setZero(val.rows(), val.cols());
    }
    return n.grad;
  }
  bool has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad.size() != 0; }

  /// Records a node. `backward` runs once its output gradient is complete.
  Var push(Matrix value, bool needs_grad, std::function<void(Tape&, Var)> backward) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and back-propagates.
  void backward(Var out) {
    if (value(out).size() != 1) throw InternalError("Tape::backward: output must be scalar");
    if (!needs_grad(out)) return;
    grad(out)(0, 0) = Scalar(1);
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && n.grad.size() != 0) n.backward(*this, Var{i});
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    const Matrix* external = nullptr;
    bool needs_grad = false;
    std::function<void(Tape&, Var)> backward;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Shared numeric kernels (also used by the tape-free decoder).

/// Elementwise gelu of a matrix; `tanh_out` receives the inner tanh values.
template <typename Scalar>
Mat<Scalar> gelu_rows(const Mat<Scalar>& x, Mat<Scalar>* tanh_out = nullptr) {
  constexpr Scalar c = Scalar(0.7978845608028654);
  const auto xa = x.array();
  Mat<Scalar> th = (c * (xa + Scalar(0.044715) * xa.cube())).tanh().matrix();
  Mat<Scalar> out = (Scalar(0.5) * xa * (Scalar(1) + th.array())).matrix();
  if (tanh_out) *tanh_out = std::move(th);
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise layer normalization; optionally returns the normalized rows and
/// inverse standard deviations for the backward pass.
template <typename Scalar>
Mat<Scalar> layer_norm_rows(const Mat<Scalar>& x, const Mat<Scalar>& gain, const Mat<Scalar>& bias,
                            Mat<Scalar>* xhat_out = nullptr, std::vector<Scalar>* inv_std_out = nullptr) {
  const auto n = x.rows();
  const auto d = x.cols();
  Mat<Scalar> y(n, d);
  Mat<Scalar> xhat(n, d);
  if (inv_std_out) inv_std_out->resize(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const Scalar mean = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mean).square().mean();
    const Scalar inv = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
    xhat.row(r) = (x.row(r).array() - mean) * inv;
    y.row(r) = xhat.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
    if (inv_std_out) (*inv_std_out)[static_cast<std::size_t>(r)] = inv;
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  return y;
}

/// In-place numerically stable row-wise log-softmax.
template <typename Scalar>
void log_softmax_rows(Mat<Scalar>& x) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    const Scalar lse = m + std::log((x.row(r).array() - m).exp().sum());
    x.row(r).array() -= lse;
  }
}

// ---------------------------------------------------------------------------
// Differentiable ops

namespace ops {

template <typename Scalar>
using V = typename Tape<Scalar>::Var;

/// Rows of `table` selected by `ids`, times `scale`, plus constant `offset`
/// rows (positional encodings; may be empty).
template <typename Scalar>
V<Scalar> embed(Tape<Scalar>& t, V<Scalar> table, std::vector<int> ids, Scalar scale,
                const Mat<Scalar>& offset) {
  const auto& tab = t.value(table);
  Mat<Scalar> out(static_cast<Eigen::Index>(ids.size()), tab.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]) * scale;
  if (offset.size() != 0) out += offset;
  return t.push(std::move(out), t.needs_grad(table),
                [table, ids = std::move(ids), scale](Tape<Scalar>& tp, V<Scalar> self) {
                  const auto& g = tp.grad(self);
                  auto& gt = tp.grad(table);
                  for (std::size_t i = 0; i < ids.size(); ++i)
                    gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i)) * scale;
                });
}

template <typename Scalar>
V<Scalar> matmul(Tape<Scalar>& t, V<Scalar> a, V<Scalar> b) {
  Mat<Scalar> out = t.value(a) * t.value(b);
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), ng, [a, b](Tape<Scalar>& tp, V<Scalar> self) {
    const auto& g = tp.grad(self);
    if (tp.needs_grad(a)) tp.grad(a).noalias() += g * tp.value(b).transpose();
    if (tp.needs_grad(b)) tp.grad(b).noalias() += tp.value(a).transpose() * g;
  });
}

/// Node for x * W + b whose value was computed elsewhere (same inputs).
template <typename Scalar>
V<Scalar> affine_given(Tape<Scalar>& t, V<Scalar> x, V<Scalar> w, V<Scalar> b, Mat<Scalar> out) {
  const bool ng = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  return t.push(std::move(out), ng, [x, w, b](Tape<Scalar>& tp, V<Scalar> self) {
    const auto& g = tp.grad(self);
    if (tp.needs_grad(x)) tp.grad(x).noalias() += g * tp.value(w).transpose();
    if (tp.needs_grad(w)) tp.grad(w).noalias() += tp.value(x).transpose() * g;
    if (tp.needs_grad(b)) tp.grad(b).row(0) += g.colwise().sum();
  });
}

/// x * W + b with b a 1 x n row broadcast over rows.
template <typename Scalar>
V<Scalar> affine(Tape<Scalar>& t, V<Scalar> x, V<Scalar> w, V<Scalar> b) {
  Mat<Scalar> out = t.value(x) * t.value(w);
  out.rowwise() += t.value(b).row(0);
  return affine_given(t, x, w, b, std::move(out));
}

template <typename Scalar>
V<Scalar> add(Tape<Scalar>& t, V<Scalar> a, V<Scalar> b) {
  Mat<Scalar> out = t.value(a) + t.value(b);
  const bool ng = t.needs_grad(a) || t.needs_grad(b);
  return t.push(std::move(out), ng, [a, b](Tape<Scalar>& tp, V<Scalar> self) {
    const auto& g = tp.grad(self);
    if (tp.needs_grad(a)) tp.grad(a) += g;
    if (tp.needs_grad(b)) tp.grad(b) += g;
  });
}

template <typename Scalar>
V<Scalar> gelu(Tape<Scalar>& t, V<Scalar> x) {
  Mat<Scalar> th;
  Mat<Scalar> out = gelu_rows(t.value(x), &th);
  return t.push(std::move(out), t.needs_grad(x), [x, th = std::move(th)](Tape<Scalar>& tp, V<Scalar> self) {
    constexpr Scalar c = Scalar(0.7978845608028654);
    const auto& g = tp.grad(self);
    const auto xa = tp.value(x).array();
    const auto ta = th.array();
    tp.grad(x).array() += g.array() * (Scalar(0.5) * (Scalar(1) + ta) +
                                       Scalar(0.5) * c * xa * (Scalar(1) - ta.square()) *
                                           (Scalar(1) + Scalar(3 * 0.044715) * xa.square()));
  });
}

template <typename Scalar>
V<Scalar> layer_norm(Tape<Scalar>& t, V<Scalar> x, V<Scalar> gain, V<Scalar> bias) {
  Mat<Scalar> xhat;
  std::vector<Scalar> inv_std;
  Mat<Scalar> out = layer_norm_rows(t.value(x), t.value(gain), t.value(bias), &xhat, &inv_std);
  const bool ng = t.needs_grad(x) || t.needs_grad(gain) || t.needs_grad(bias);
  return t.push(std::move(out), ng,
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape<Scalar>& tp, V<Scalar> self) {
                  const auto& g = tp.grad(self);
                  if (tp.needs_grad(gain)) tp.grad(gain).row(0) += g.cwiseProduct(xhat).colwise().sum();
                  if (tp.needs_grad(bias)) tp.grad(bias).row(0) += g.colwise().sum();
                  if (!tp.needs_grad(x)) return;
                  auto& gx = tp.grad(x);
                  const auto& gam = tp.value(gain);
                  const Scalar d = static_cast<Scalar>(g.cols());
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    const RowVec<Scalar> gh = g.row(r).cwiseProduct(gam.row(0));
                    const Scalar mean_gh = gh.sum() / d;
                    const Scalar mean_ghx = gh.dot(xhat.row(r)) / d;
                    gx.row(r).array() += inv_std[static_cast<std::size_t>(r)] *
                                         (gh.array() - mean_gh - xhat.row(r).array() * mean_ghx);
                  }
                });
}

/// Multi-head scaled dot-product attention over packed segments.
/// q: Nq x D, k/v: Nk x D; heads split D evenly. `causal` masks key j > i
/// within a segment (requires equal query/key lengths).
template <typename Scalar>
V<Scalar> attention(Tape<Scalar>& t, V<Scalar> q, V<Scalar> k, V<Scalar> v,
                    std::vector<Segment> segments, int heads, bool causal) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const auto& Vv = t.value(v);
  const Eigen::Index D = Q.cols();
  const Eigen::Index dh = D / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  Mat<Scalar> out = Mat<Scalar>::Zero(Q.rows(), D);
  // Attention weights per (segment, head) kept for the backward pass.
  std::vector<Mat<Scalar>> probs;
  probs.reserve(segments.size() * static_cast<std::size_t>(heads));
  for (const auto& s : segments) {
    if (causal && s.query.length != s.key.length)
      throw InternalError("attention: causal segment needs equal lengths");
    for (int h = 0; h < heads; ++h) {
      const auto qb = Q.block(s.query.offset, h * dh, s.query.length, dh);
      const auto kb = K.block(s.key.offset, h * dh, s.key.length, dh);
      Mat<Scalar> p = (qb * kb.transpose()) * scale;
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const Eigen::Index limit = causal ? i + 1 : p.cols();
        const Scalar m = p.row(i).head(limit).maxCoeff();
        Scalar sum = 0;
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
          const Scalar e = j < limit ? std::exp(p(i, j) - m) : Scalar(0);
          p(i, j) = e;
          sum += e;
        }
        p.row(i) /= sum;
      }
      out.block(s.query.offset, h * dh, s.query.length, dh).noalias() =
          p * Vv.block(s.key.offset, h * dh, s.key.length, dh);
      probs.push_back(std::move(p));
    }
  }
  const bool ng = t.needs_grad(q) || t.needs_grad(k) || t.needs_grad(v);
  return t.push(std::move(out), ng,
                [q, k, v, segments = std::move(segments), heads, probs = std::move(probs), scale, dh](
                    Tape<Scalar>& tp, V<Scalar> self) {
                  const auto& G = tp.grad(self);
                  const auto& Q = tp.value(q);
                  const auto& K = tp.value(k);
                  const auto& Vv = tp.value(v);
                  Mat<Scalar>* gq = tp.needs_grad(q) ? &tp.grad(q) : nullptr;
                  Mat<Scalar>* gk = tp.needs_grad(k) ? &tp.grad(k) : nullptr;
                  Mat<Scalar>* gv = tp.needs_grad(v) ? &tp.grad(v) : nullptr;
                  std::size_t idx = 0;
                  for (const auto& s : segments) {
                    for (int h = 0; h < heads; ++h, ++idx) {
                      const auto& p = probs[idx];
                      const auto gb = G.block(s.query.offset, h * dh, s.query.length, dh);
                      if (gv)
                        gv->block(s.key.offset, h * dh, s.key.length, dh).noalias() += p.transpose() * gb;
                      Mat<Scalar> dp = gb * Vv.block(s.key.offset, h * dh, s.key.length, dh).transpose();
                      // softmax backward: dS = P o (dP - rowsum(dP o P))
                      for (Eigen::Index i = 0; i < dp.rows(); ++i) {
                        const Scalar dot = dp.row(i).dot(p.row(i));
                        dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
                      }
                      dp *= scale;
                      if (gq)
                        gq->block(s.query.offset, h * dh, s.query.length, dh).noalias() +=
                            dp * K.block(s.key.offset, h * dh, s.key.length, dh);
                      if (gk)
                        gk->block(s.key.offset, h * dh, s.key.length, dh).noalias() +=
                            dp.transpose() * Q.block(s.query.offset, h * dh, s.query.length, dh);
                    }
                  }
                });
}

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
/// Returns a 1x1 node.
template <typename Scalar>
V<Scalar> cross_entropy(Tape<Scalar>& t, V<Scalar> logits, std::vector<int> targets) {
  Mat<Scalar> logp = t.value(logits);
  log_softmax_rows(logp);
  Scalar total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) total -= logp(static_cast<Eigen::Index>(i), targets[i]);
  const Scalar n = static_cast<Scalar>(targets.size());
  Mat<Scalar> out(1, 1);
  out(0, 0) = total / n;
  return t.push(std::move(out), t.needs_grad(logits),
                [logits, targets = std::move(targets), logp = std::move(logp), n](Tape<Scalar>& tp,
                                                                                   V<Scalar> self) {
                  const Scalar g = tp.grad(self)(0, 0) / n;
                  auto& gl = tp.grad(logits);
                  gl.array() += logp.array().exp() * g;
                  for (std::size_t i = 0; i < targets.size(); ++i)
                    gl(static_cast<Eigen::Index>(i), targets[i]) -= g;
                });
}

/// sum_i weights[i] * -log softmax(logits)_i[targets[i]]. Per-row NLLs are
/// written to `row_nll` when given.
template <typename Scalar>
V<Scalar> weighted_nll(Tape<Scalar>& t, V<Scalar> logits, std::vector<int> targets, std::vector<Scalar> weights,
                       std::vector<double>* row_nll = nullptr) {
  Mat<Scalar> logp = t.value(logits);
  log_softmax_rows(logp);
  Scalar total = 0;
  if (row_nll) row_nll->resize(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Scalar nll = -logp(static_cast<Eigen::Index>(i), targets[i]);
    if (row_nll) (*row_nll)[i] = static_cast<double>(nll);
    total += weights[i] * nll;
  }
  Mat<Scalar> out(1, 1);
  out(0, 0) = total;
  return t.push(std::move(out), t.needs_grad(logits),
                [logits, targets = std::move(targets), weights = std::move(weights), logp = std::move(logp)](
                    Tape<Scalar>& tp, V<Scalar> self) {
                  const Scalar g = tp.grad(self)(0, 0);
                  auto& gl = tp.grad(logits);
                  for (std::size_t i = 0; i < targets.size(); ++i) {
                    const auto r = static_cast<Eigen::Index>(i);
                    const Scalar gi = g * weights[i];
                    gl.row(r).array() += logp.row(r).array().exp() * gi;
                    gl(r, targets[i]) -= gi;
                  }
                });
}

}  // namespace ops
}  // namespace gaplab

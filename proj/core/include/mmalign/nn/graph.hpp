#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "mmalign/common/error.hpp"
#include "mmalign/nn/matrix.hpp"

namespace mmalign::nn {

/// Handle into a Graph's tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Reverse-mode autodiff tape over dense matrices.
///
/// Ops execute eagerly; the tape records a backward closure per node. Tape
/// order is a topological order by construction, so backward is a single
/// reverse sweep. Graphs are single-use: build, run backward once, discard.
///
/// Gradients flow through every op; freezing a stage is expressed by binding
/// its tensors as non-grad leaves, which stops accumulation at those leaves
/// without blocking flow to upstream inputs.
template <typename S>
class Graph {
 public:
  using M = Mat<S>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(256); }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  // ---- leaves -------------------------------------------------------------

  Var leaf(M value, bool requires_grad = false) {
    return push(std::move(value), requires_grad && grad_enabled_, nullptr);
  }

  /// Leaf whose storage stays outside the graph (parameter binding). The
  /// pointee must outlive the graph.
  Var leaf_ref(const M* value, bool requires_grad) {
    MMA_REQUIRE(value != nullptr, "nn.null", "leaf_ref: null tensor");
    Node n;
    n.external = value;
    n.requires_grad = requires_grad && grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const M& value(Var v) const { return nodes_[check(v)].val(); }

  /// Accumulated gradient; zero matrix if the node never received one.
  M grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad_alloc) return n.grad;
    return M::Zero(n.val().rows(), n.val().cols());
  }

  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  // ---- ops ----------------------------------------------------------------

  Var matmul(Var a, Var b) {
    const M& A = value(a);
    const M& B = value(b);
    MMA_REQUIRE(A.cols() == B.rows(), "nn.shape", "matmul: inner dimensions differ");
    M out = A * B;
    return make(std::move(out), {a, b}, [a, b](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      g.accum(a, G * g.value(b).transpose());
      g.accum(b, g.value(a).transpose() * G);
    });
  }

  /// A * B^T without materializing the transpose.
  Var matmul_nt(Var a, Var b) {
    const M& A = value(a);
    const M& B = value(b);
    MMA_REQUIRE(A.cols() == B.cols(), "nn.shape", "matmul_nt: column dimensions differ");
    M out = A * B.transpose();
    return make(std::move(out), {a, b}, [a, b](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      g.accum(a, G * g.value(b));
      g.accum(b, G.transpose() * g.value(a));
    });
  }

  Var add(Var a, Var b) {
    const M& A = value(a);
    const M& B = value(b);
    MMA_REQUIRE(A.rows() == B.rows() && A.cols() == B.cols(), "nn.shape", "add: shape mismatch");
    M out = A + B;
    return make(std::move(out), {a, b}, [a, b](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      g.accum(a, G);
      g.accum(b, G);
    });
  }

  /// Broadcast a 1 x C row vector over every row of `a`.
  Var add_rowvec(Var a, Var v) {
    const M& A = value(a);
    const M& V = value(v);
    MMA_REQUIRE(V.rows() == 1 && V.cols() == A.cols(), "nn.shape", "add_rowvec: bias shape");
    M out = A.rowwise() + V.row(0);
    return make(std::move(out), {a, v}, [a, v](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      g.accum(a, G);
      g.accum(v, G.colwise().sum());
    });
  }

  Var scale(Var a, S c) {
    M out = value(a) * c;
    return make(std::move(out), {a}, [a, c](Graph& g, int self) {
      g.accum(a, g.nodes_[self].grad * c);
    });
  }

  Var hadamard(Var a, Var b) {
    const M& A = value(a);
    const M& B = value(b);
    MMA_REQUIRE(A.rows() == B.rows() && A.cols() == B.cols(), "nn.shape", "hadamard: shape mismatch");
    M out = A.cwiseProduct(B);
    return make(std::move(out), {a, b}, [a, b](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      g.accum(a, G.cwiseProduct(g.value(b)));
      g.accum(b, G.cwiseProduct(g.value(a)));
    });
  }

  Var rows(Var a, int start, int n) {
    const M& A = value(a);
    MMA_REQUIRE(start >= 0 && n >= 0 && start + n <= A.rows(), "nn.shape", "rows: slice out of range");
    M out = A.middleRows(start, n);
    return make(std::move(out), {a}, [a, start, n](Graph& g, int self) {
      if (!g.nodes_[a.id].requires_grad) return;
      g.grad_buf(a.id).middleRows(start, n) += g.nodes_[self].grad;
    });
  }

  Var cols(Var a, int start, int n) {
    const M& A = value(a);
    MMA_REQUIRE(start >= 0 && n >= 0 && start + n <= A.cols(), "nn.shape", "cols: slice out of range");
    M out = A.middleCols(start, n);
    return make(std::move(out), {a}, [a, start, n](Graph& g, int self) {
      if (!g.nodes_[a.id].requires_grad) return;
      g.grad_buf(a.id).middleCols(start, n) += g.nodes_[self].grad;
    });
  }

  Var concat_rows(Var a, Var b) {
    const M& A = value(a);
    const M& B = value(b);
    MMA_REQUIRE(A.cols() == B.cols(), "nn.shape", "concat_rows: column mismatch");
    M out(A.rows() + B.rows(), A.cols());
    out.topRows(A.rows()) = A;
    out.bottomRows(B.rows()) = B;
    const int ra = static_cast<int>(A.rows());
    const int rb = static_cast<int>(B.rows());
    return make(std::move(out), {a, b}, [a, b, ra, rb](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      g.accum(a, G.topRows(ra));
      g.accum(b, G.bottomRows(rb));
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    MMA_REQUIRE(!parts.empty(), "nn.shape", "concat_cols: empty");
    const auto rows_n = value(parts[0]).rows();
    int total = 0;
    for (Var p : parts) {
      MMA_REQUIRE(value(p).rows() == rows_n, "nn.shape", "concat_cols: row mismatch");
      total += static_cast<int>(value(p).cols());
    }
    M out(rows_n, total);
    auto widths = std::make_shared<std::vector<int>>();
    int off = 0;
    for (Var p : parts) {
      const M& P = value(p);
      out.middleCols(off, P.cols()) = P;
      widths->push_back(static_cast<int>(P.cols()));
      off += static_cast<int>(P.cols());
    }
    auto ins = std::make_shared<std::vector<Var>>(parts);
    return make(std::move(out), parts, [ins, widths](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      int o = 0;
      for (std::size_t i = 0; i < ins->size(); ++i) {
        g.accum((*ins)[i], G.middleCols(o, (*widths)[i]));
        o += (*widths)[i];
      }
    });
  }

  /// Exact (erf) GELU.
  Var gelu(Var a) {
    const M& A = value(a);
    M out = A.unaryExpr([](S x) {
      const double xd = static_cast<double>(x);
      return static_cast<S>(0.5 * xd * (1.0 + std::erf(xd * 0.7071067811865475244)));
    });
    return make(std::move(out), {a}, [a](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      const M d = g.value(a).unaryExpr([](S x) {
        const double xd = static_cast<double>(x);
        const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865475244));
        const double pdf = 0.3989422804014327 * std::exp(-0.5 * xd * xd);
        return static_cast<S>(cdf + xd * pdf);
      });
      g.accum(a, G.cwiseProduct(d));
    });
  }

  /// Row-wise layer norm with learned gain/bias (1 x C each).
  Var layer_norm(Var x, Var gamma, Var beta, S eps = static_cast<S>(1e-5)) {
    const M& X = value(x);
    const M& Gm = value(gamma);
    const M& Bt = value(beta);
    MMA_REQUIRE(Gm.rows() == 1 && Gm.cols() == X.cols(), "nn.shape", "layer_norm: gamma shape");
    MMA_REQUIRE(Bt.rows() == 1 && Bt.cols() == X.cols(), "nn.shape", "layer_norm: beta shape");
    const auto R = X.rows();
    const auto C = X.cols();
    auto xhat = std::make_shared<M>(R, C);
    auto inv = std::make_shared<Vec<S>>(R);
    M out(R, C);
    for (Eigen::Index r = 0; r < R; ++r) {
      const S mu = X.row(r).mean();
      const S var = (X.row(r).array() - mu).square().mean();
      const S iv = static_cast<S>(1) / std::sqrt(var + eps);
      (*inv)(r) = iv;
      xhat->row(r) = ((X.row(r).array() - mu) * iv).matrix();
      out.row(r) = xhat->row(r).cwiseProduct(Gm.row(0)) + Bt.row(0);
    }
    return make(std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      const M& Gm = g.value(gamma);
      g.accum(beta, G.colwise().sum());
      g.accum(gamma, G.cwiseProduct(*xhat).colwise().sum());
      if (!g.nodes_[x.id].requires_grad) return;
      M dx(G.rows(), G.cols());
      for (Eigen::Index r = 0; r < G.rows(); ++r) {
        const auto dxhat = G.row(r).cwiseProduct(Gm.row(0)).eval();
        const S m1 = dxhat.mean();
        const S m2 = dxhat.cwiseProduct(xhat->row(r)).mean();
        dx.row(r) = ((dxhat.array() - m1 - xhat->row(r).array() * m2) * (*inv)(r)).matrix();
      }
      g.accum(x, dx);
    });
  }

  /// Row-wise softmax over the first `valid_cols` columns (all when < 0).
  /// Masked columns get probability exactly zero.
  Var softmax_rows(Var x, int valid_cols = -1) {
    const M& X = value(x);
    const int C = static_cast<int>(X.cols());
    const int valid = (valid_cols < 0 || valid_cols > C) ? C : valid_cols;
    MMA_REQUIRE(valid >= 1, "nn.shape", "softmax_rows: empty valid prefix");
    M out = M::Zero(X.rows(), C);
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const auto row = X.row(r).head(valid);
      const S mx = row.maxCoeff();
      const auto e = (row.array() - mx).exp().eval();
      out.row(r).head(valid) = (e / e.sum()).matrix();
    }
    return make(std::move(out), {x}, [x, valid](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      const M& P = g.nodes_[self].val();
      M dx = M::Zero(G.rows(), G.cols());
      for (Eigen::Index r = 0; r < G.rows(); ++r) {
        const S dot = G.row(r).head(valid).cwiseProduct(P.row(r).head(valid)).sum();
        dx.row(r).head(valid) =
            P.row(r).head(valid).cwiseProduct((G.row(r).head(valid).array() - dot).matrix());
      }
      g.accum(x, dx);
    });
  }

  /// Column-wise mean over rows -> 1 x C.
  Var mean_rows(Var x) {
    const M& X = value(x);
    MMA_REQUIRE(X.rows() >= 1, "nn.shape", "mean_rows: empty input");
    M out = X.colwise().mean();
    const S invn = static_cast<S>(1) / static_cast<S>(X.rows());
    const auto n = X.rows();
    return make(std::move(out), {x}, [x, invn, n](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      g.accum(x, (G * invn).replicate(n, 1));
    });
  }

  /// Rows scaled to unit L2 norm. A zero row has no defined direction.
  Var l2_normalize_rows(Var x) {
    const M& X = value(x);
    auto norms = std::make_shared<Vec<S>>(X.rows());
    M out(X.rows(), X.cols());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const S n = X.row(r).norm();
      MMA_REQUIRE(n > static_cast<S>(0), "nn.zero_norm", "l2_normalize_rows: zero-norm row");
      (*norms)(r) = n;
      out.row(r) = X.row(r) / n;
    }
    return make(std::move(out), {x}, [x, norms](Graph& g, int self) {
      const M& G = g.nodes_[self].grad;
      const M& Y = g.nodes_[self].val();
      M dx(G.rows(), G.cols());
      for (Eigen::Index r = 0; r < G.rows(); ++r) {
        const S d = G.row(r).dot(Y.row(r));
        dx.row(r) = (G.row(r) - Y.row(r) * d) / (*norms)(r);
      }
      g.accum(x, dx);
    });
  }

  /// Inverted dropout; identity when not training or p == 0.
  Var dropout(Var x, S p, std::mt19937_64& rng, bool training) {
    MMA_REQUIRE(p >= static_cast<S>(0) && p < static_cast<S>(1), "nn.config", "dropout: p in [0,1)");
    if (!training || p == static_cast<S>(0)) return x;
    const M& X = value(x);
    auto mask = std::make_shared<M>(X.rows(), X.cols());
    std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
    const S scale_up = static_cast<S>(1) / (static_cast<S>(1) - p);
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      for (Eigen::Index c = 0; c < X.cols(); ++c)
        (*mask)(r, c) = keep(rng) ? scale_up : static_cast<S>(0);
    M out = X.cwiseProduct(*mask);
    return make(std::move(out), {x}, [x, mask](Graph& g, int self) {
      g.accum(x, g.nodes_[self].grad.cwiseProduct(*mask));
    });
  }

  /// 1-d convolution along rows (time) with SAME padding.
  /// x: L x Cin, w: (K*Cin) x Cout laid out kernel-major, b: 1 x Cout.
  /// Output: ceil(L / stride) x Cout.
  Var conv1d_same(Var x, Var w, Var b, int kernel, int stride) {
    const M& X = value(x);
    const M& W = value(w);
    const M& B = value(b);
    MMA_REQUIRE(kernel >= 1 && stride >= 1, "nn.config", "conv1d: kernel and stride must be >= 1");
    const int L = static_cast<int>(X.rows());
    const int cin = static_cast<int>(X.cols());
    MMA_REQUIRE(W.rows() == static_cast<Eigen::Index>(kernel) * cin, "nn.shape",
                "conv1d: weight rows != kernel*cin");
    MMA_REQUIRE(B.rows() == 1 && B.cols() == W.cols(), "nn.shape", "conv1d: bias shape");
    const int lout = (L + stride - 1) / stride;
    const int pad_left = std::max((lout - 1) * stride + kernel - L, 0) / 2;

    auto cols_m = std::make_shared<M>(M::Zero(lout, static_cast<Eigen::Index>(kernel) * cin));
    for (int t = 0; t < lout; ++t) {
      for (int k = 0; k < kernel; ++k) {
        const int src = t * stride - pad_left + k;
        if (src >= 0 && src < L) cols_m->row(t).segment(k * cin, cin) = X.row(src);
      }
    }
    M out = (*cols_m * W).rowwise() + B.row(0);
    return make(std::move(out), {x, w, b},
                [x, w, b, cols_m, kernel, stride, pad_left, L, cin](Graph& g, int self) {
                  const M& G = g.nodes_[self].grad;
                  g.accum(w, cols_m->transpose() * G);
                  g.accum(b, G.colwise().sum());
                  if (!g.nodes_[x.id].requires_grad) return;
                  M dcols = G * g.value(w).transpose();
                  M& dx = g.grad_buf(x.id);
                  for (int t = 0; t < static_cast<int>(G.rows()); ++t) {
                    for (int k = 0; k < kernel; ++k) {
                      const int src = t * stride - pad_left + k;
                      if (src >= 0 && src < L) dx.row(src) += dcols.row(t).segment(k * cin, cin);
                    }
                  }
                });
  }

  /// Symmetric infoNCE over an N x N similarity matrix whose diagonal holds
  /// the positive pairs; row direction only when `symmetric` is false. Each
  /// direction is the mean over queries of the max-shifted
  /// -log softmax(sim/tau) at the diagonal entry. Returns a 1 x 1 scalar.
  Var info_nce(Var sim, S tau, bool symmetric) {
    const M& Sm = value(sim);
    MMA_REQUIRE(tau > static_cast<S>(0), "loss.config", "info_nce: tau must be > 0");
    MMA_REQUIRE(Sm.rows() == Sm.cols() && Sm.rows() >= 1, "nn.shape",
                "info_nce: square matrix required");
    MMA_REQUIRE(all_finite(Sm), "loss.nonfinite", "info_nce: non-finite similarity entries");
    const int N = static_cast<int>(Sm.rows());
    M A = Sm / tau;

    auto direction = [N](const M& Z, M& P) {
      S acc = 0;
      for (int i = 0; i < N; ++i) {
        const S mx = Z.row(i).maxCoeff();
        const auto e = (Z.row(i).array() - mx).exp().eval();
        const S denom = e.sum();
        P.row(i) = (e / denom).matrix();
        acc += std::log(denom) + mx - Z(i, i);
      }
      return acc / static_cast<S>(N);
    };

    auto P = std::make_shared<M>(N, N);
    S loss = direction(A, *P);
    std::shared_ptr<M> Q;
    if (symmetric) {
      Q = std::make_shared<M>(N, N);
      const M At = A.transpose();
      loss = static_cast<S>(0.5) * (loss + direction(At, *Q));
    }
    M out(1, 1);
    out(0, 0) = loss;
    return make(std::move(out), {sim}, [sim, P, Q, tau, N, symmetric](Graph& g, int self) {
      const S gscale = g.nodes_[self].grad(0, 0);
      const S w = (symmetric ? static_cast<S>(0.5) : static_cast<S>(1)) / (static_cast<S>(N) * tau);
      M d = *P;
      d.diagonal().array() -= static_cast<S>(1);
      if (symmetric) {
        M dq = Q->transpose();  // (Q - I)^T == Q^T - I
        dq.diagonal().array() -= static_cast<S>(1);
        d += dq;
      }
      g.accum(sim, d * (w * gscale));
    });
  }

  /// Mean softmax cross entropy of row logits against integer labels.
  Var cross_entropy_logits(Var logits, std::vector<int> labels) {
    const M& Z = value(logits);
    const int N = static_cast<int>(Z.rows());
    const int C = static_cast<int>(Z.cols());
    MMA_REQUIRE(static_cast<int>(labels.size()) == N, "nn.shape", "cross_entropy: labels size");
    for (int i = 0; i < N; ++i) {
      if (labels[i] < 0 || labels[i] >= C)
        raise("loss.label_range", "cross_entropy: label out of range at index " +
                                      std::to_string(i) + ": " + std::to_string(labels[i]));
    }
    auto P = std::make_shared<M>(N, C);
    S acc = 0;
    for (int i = 0; i < N; ++i) {
      const S mx = Z.row(i).maxCoeff();
      const auto e = (Z.row(i).array() - mx).exp().eval();
      const S denom = e.sum();
      P->row(i) = (e / denom).matrix();
      acc += std::log(denom) + mx - Z(i, labels[i]);
    }
    M out(1, 1);
    out(0, 0) = acc / static_cast<S>(N);
    auto lab = std::make_shared<std::vector<int>>(std::move(labels));
    return make(std::move(out), {logits}, [logits, P, lab, N](Graph& g, int self) {
      const S gscale = g.nodes_[self].grad(0, 0);
      M d = *P;
      for (int i = 0; i < N; ++i) d(i, (*lab)[i]) -= static_cast<S>(1);
      g.accum(logits, d * (gscale / static_cast<S>(N)));
    });
  }

  /// Frobenius inner product with a fixed matrix -> 1 x 1. Used to scalarize
  /// matrix outputs for finite-difference checks.
  Var dot_all(Var a, M fixed) {
    const M& A = value(a);
    MMA_REQUIRE(A.rows() == fixed.rows() && A.cols() == fixed.cols(), "nn.shape", "dot_all: shape");
    M out(1, 1);
    out(0, 0) = A.cwiseProduct(fixed).sum();
    auto R = std::make_shared<M>(std::move(fixed));
    return make(std::move(out), {a}, [a, R](Graph& g, int self) {
      g.accum(a, *R * g.nodes_[self].grad(0, 0));
    });
  }

  // ---- backward -----------------------------------------------------------

  void backward(Var root) {
    const M& v = value(root);
    MMA_REQUIRE(v.rows() == 1 && v.cols() == 1, "nn.shape", "backward: root must be scalar");
    backward_from(root, M::Ones(1, 1));
  }

  /// Seeds d(out)/d(node) and sweeps the tape. Supports non-scalar roots.
  void backward_from(Var v, const M& seed) {
    MMA_REQUIRE(grad_enabled_, "nn.grad_disabled", "backward on a grad-disabled graph");
    Node& n = nodes_[check(v)];
    MMA_REQUIRE(seed.rows() == n.val().rows() && seed.cols() == n.val().cols(), "nn.shape",
                "backward_from: seed shape mismatch");
    MMA_REQUIRE(n.requires_grad, "nn.grad_disabled", "backward_from: node does not require grad");
    grad_buf(v.id) += seed;
    for (int id = v.id; id >= 0; --id) {
      Node& nd = nodes_[id];
      if (nd.grad_alloc && nd.back) nd.back(*this, id);
    }
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }

  /// Visits (external pointer, accumulated gradient) for every externally
  /// bound leaf that received one. A tensor bound more than once appears
  /// once per binding; callers sum.
  template <typename Fn>
  void for_each_external_grad(Fn&& fn) const {
    for (const Node& n : nodes_)
      if (n.external != nullptr && n.grad_alloc) fn(n.external, n.grad);
  }

 private:
  struct Node {
    M owned;
    const M* external = nullptr;
    M grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::function<void(Graph&, int)> back;
    const M& val() const { return external ? *external : owned; }
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;

  int check(Var v) const {
    MMA_REQUIRE(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "nn.var", "invalid Var");
    return v.id;
  }

  Var push(M value, bool requires_grad, std::function<void(Graph&, int)> back) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var make(M value, std::initializer_list<Var> inputs, std::function<void(Graph&, int)> back) {
    bool rg = false;
    if (grad_enabled_)
      for (Var in : inputs) rg = rg || nodes_[check(in)].requires_grad;
    return push(std::move(value), rg, rg ? std::move(back) : nullptr);
  }

  Var make(M value, const std::vector<Var>& inputs, std::function<void(Graph&, int)> back) {
    bool rg = false;
    if (grad_enabled_)
      for (Var in : inputs) rg = rg || nodes_[check(in)].requires_grad;
    return push(std::move(value), rg, rg ? std::move(back) : nullptr);
  }

  M& grad_buf(int id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc) {
      n.grad = M::Zero(n.val().rows(), n.val().cols());
      n.grad_alloc = true;
    }
    return n.grad;
  }

  template <typename Expr>
  void accum(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    grad_buf(v.id) += g;
  }
};

}  // namespace mmalign::nn

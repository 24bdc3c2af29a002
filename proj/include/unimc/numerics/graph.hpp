#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "unimc/numerics/parameter.hpp"
#include "unimc/numerics/tensor.hpp"

namespace unimc::numerics {

/// Handle to a node of a Graph.
struct Var {
  std::uint32_t id = 0;
};

/// Tape for reverse-mode differentiation over 2-D tensors.
///
/// Nodes are appended in creation order, so reverse creation order is a valid
/// topological order for backward(). A graph is built for one forward pass and
/// then discarded; it never outlives the parameters it references. Building
/// forward-only graphs from several threads against the same parameters is
/// safe as long as nobody calls backward() or mutates the parameters.
template <class T>
class Graph {
 public:
  Graph() { nodes_.reserve(512); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }
  std::size_t rows(Var v) const { return value(v).rows(); }
  std::size_t cols(Var v) const { return value(v).cols(); }
  std::size_t node_count() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() with respect to `v` (zeros if unreached).
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor<T>(value(v).shape()) : n.grad;
  }

  Var constant(Tensor<T> t) {
    require_matrix(t, "constant");
    return push("constant", std::move(t));
  }

  Var param(Parameter<T>& p) {
    require_matrix(p.value, "param");
    Node n;
    n.op = "param";
    n.external = &p.value;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols() != B.rows()) mismatch("matmul", A, B);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor<T> out = Tensor<T>::matrix(m, n);
    gemm_nn_acc(A.data(), B.data(), out.data(), m, k, n);
    Var o = push("matmul", std::move(out));
    on_backward(o, [this, a, b, o, m, k, n] {
      const auto& g = nodes_[o.id].grad;
      gemm_nt_acc(g.data(), value(b).data(), grad_ref(a).data(), m, n, k);
      gemm_tn_acc(value(a).data(), g.data(), grad_ref(b).data(), k, m, n);
    });
    return o;
  }

  /// x[m,k] * w[k,n] + bias[1,n]
  Var linear(Var x, Var w, Var bias) {
    const auto& X = value(x);
    const auto& W = value(w);
    const auto& B = value(bias);
    if (X.cols() != W.rows()) mismatch("linear", X, W);
    if (B.rows() != 1 || B.cols() != W.cols()) mismatch("linear(bias)", W, B);
    const std::size_t m = X.rows(), k = X.cols(), n = W.cols();
    Tensor<T> out = Tensor<T>::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i) std::copy(B.data(), B.data() + n, out.data() + i * n);
    gemm_nn_acc(X.data(), W.data(), out.data(), m, k, n);
    Var o = push("linear", std::move(out));
    on_backward(o, [this, x, w, bias, o, m, k, n] {
      const auto& g = nodes_[o.id].grad;
      gemm_nt_acc(g.data(), value(w).data(), grad_ref(x).data(), m, n, k);
      gemm_tn_acc(value(x).data(), g.data(), grad_ref(w).data(), k, m, n);
      T* gb = grad_ref(bias).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g.data()[i * n + j];
    });
    return o;
  }

  Var add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape() != B.shape()) mismatch("add", A, B);
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    Var o = push("add", std::move(out));
    on_backward(o, [this, a, b, o] {
      accumulate(a, nodes_[o.id].grad);
      accumulate(b, nodes_[o.id].grad);
    });
    return o;
  }

  /// a[m,n] + r[1,n] broadcast over rows.
  Var add_row(Var a, Var r) {
    const auto& A = value(a);
    const auto& R = value(r);
    if (R.rows() != 1 || R.cols() != A.cols()) mismatch("add_row", A, R);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor<T> out = A;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] += R[j];
    Var o = push("add_row", std::move(out));
    on_backward(o, [this, a, r, o, m, n] {
      const auto& g = nodes_[o.id].grad;
      accumulate(a, g);
      T* gr = grad_ref(r).data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g.data()[i * n + j];
    });
    return o;
  }

  Var mul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.shape() != B.shape()) mismatch("mul", A, B);
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    Var o = push("mul", std::move(out));
    on_backward(o, [this, a, b, o] {
      const auto& g = nodes_[o.id].grad;
      auto& ga = grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * value(b)[i];
      auto& gb = grad_ref(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * value(a)[i];
    });
    return o;
  }

  Var scale(Var a, T s) {
    Tensor<T> out = value(a);
    for (auto& v : out.values()) v *= s;
    Var o = push("scale", std::move(out));
    on_backward(o, [this, a, o, s] {
      const auto& g = nodes_[o.id].grad;
      auto& ga = grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
    return o;
  }

  /// Rows of `table` selected by `ids`.
  Var embedding(Var table, std::span<const int> ids) {
    const auto& W = value(table);
    if (ids.empty()) throw ShapeError("embedding: empty id sequence");
    const std::size_t d = W.cols();
    Tensor<T> out = Tensor<T>::matrix(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= W.rows()) {
        throw ShapeError(detail::concat("embedding: id ", ids[i], " outside table ",
                                        shape_string(W.shape())));
      }
      std::copy_n(W.data() + ids[i] * d, d, out.data() + i * d);
    }
    Var o = push("embedding", std::move(out));
    on_backward(o, [this, table, o, d, idv = std::vector<int>(ids.begin(), ids.end())] {
      const auto& g = nodes_[o.id].grad;
      T* gw = grad_ref(table).data();
      for (std::size_t i = 0; i < idv.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) gw[idv[i] * d + j] += g.data()[i * d + j];
    });
    return o;
  }

  /// Softmax along the last axis.
  Var softmax(Var a) {
    Tensor<T> out = value(a);
    for (std::size_t i = 0; i < out.rows(); ++i) softmax_row(out.row(i));
    Var o = push("softmax", std::move(out));
    on_backward(o, [this, a, o] {
      const auto& y = nodes_[o.id].value;
      const auto& g = nodes_[o.id].grad;
      auto& ga = grad_ref(a);
      for (std::size_t i = 0; i < y.rows(); ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < y.cols(); ++j) dot += g.at(i, j) * y.at(i, j);
        for (std::size_t j = 0; j < y.cols(); ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
      }
    });
    return o;
  }

  /// Replace entries where mask is non-zero with `fill`.
  Var masked_fill(Var a, std::span<const std::uint8_t> mask, T fill) {
    const auto& A = value(a);
    if (mask.size() != A.size()) {
      throw ShapeError(detail::concat("masked_fill: mask of ", mask.size(), " entries vs operand ",
                                      shape_string(A.shape())));
    }
    Tensor<T> out = A;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (mask[i]) out[i] = fill;
    Var o = push("masked_fill", std::move(out), /*check_finite=*/false);
    on_backward(o, [this, a, o, m = std::vector<std::uint8_t>(mask.begin(), mask.end())] {
      const auto& g = nodes_[o.id].grad;
      auto& ga = grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!m[i]) ga[i] += g[i];
    });
    return o;
  }

  /// Row-wise layer normalization; a zero-variance row normalizes to zero.
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-5)) {
    const auto& X = value(x);
    const std::size_t m = X.rows(), n = X.cols();
    if (value(gamma).size() != n || value(beta).size() != n) mismatch("layer_norm", X, value(gamma));
    auto xhat = std::make_shared<Tensor<T>>(X.shape());
    auto inv_std = std::make_shared<std::vector<T>>(m);
    Tensor<T> out(X.shape());
    const auto& G = value(gamma);
    const auto& B = value(beta);
    for (std::size_t i = 0; i < m; ++i) {
      auto row = X.row(i);
      T mean = 0;
      for (T v : row) mean += v;
      mean /= T(n);
      T var = 0;
      for (T v : row) var += (v - mean) * (v - mean);
      var /= T(n);
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[i] = is;
      for (std::size_t j = 0; j < n; ++j) {
        const T h = (row[j] - mean) * is;
        xhat->at(i, j) = h;
        out.at(i, j) = h * G[j] + B[j];
      }
    }
    Var o = push("layer_norm", std::move(out));
    on_backward(o, [this, x, gamma, beta, o, m, n, xhat, inv_std] {
      const auto& g = nodes_[o.id].grad;
      const auto& G = value(gamma);
      auto& gx = grad_ref(x);
      auto& gg = grad_ref(gamma);
      auto& gb = grad_ref(beta);
      std::vector<T> gh(n);
      for (std::size_t i = 0; i < m; ++i) {
        T mean_gh = 0, mean_ghx = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T gij = g.at(i, j);
          gg[j] += gij * xhat->at(i, j);
          gb[j] += gij;
          gh[j] = gij * G[j];
          mean_gh += gh[j];
          mean_ghx += gh[j] * xhat->at(i, j);
        }
        mean_gh /= T(n);
        mean_ghx /= T(n);
        for (std::size_t j = 0; j < n; ++j)
          gx.at(i, j) += (*inv_std)[i] * (gh[j] - mean_gh - xhat->at(i, j) * mean_ghx);
      }
    });
    return o;
  }

  /// GELU, tanh approximation.
  Var gelu(Var a) {
    constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T k = T(0.044715);
    Tensor<T> out = value(a);
    for (auto& v : out.values()) v = T(0.5) * v * (T(1) + std::tanh(c * (v + k * v * v * v)));
    Var o = push("gelu", std::move(out));
    on_backward(o, [this, a, o] {
      const auto& X = value(a);
      const auto& g = nodes_[o.id].grad;
      auto& ga = grad_ref(a);
      for (std::size_t i = 0; i < X.size(); ++i) {
        const T x = X[i];
        const T t = std::tanh(c * (x + k * x * x * x));
        const T d = T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * k * x * x);
        ga[i] += g[i] * d;
      }
    });
    return o;
  }

  Var tanh(Var a) {
    Tensor<T> out = value(a);
    for (auto& v : out.values()) v = std::tanh(v);
    Var o = push("tanh", std::move(out));
    on_backward(o, [this, a, o] {
      const auto& y = nodes_[o.id].value;
      const auto& g = nodes_[o.id].grad;
      auto& ga = grad_ref(a);
      for (std::size_t i = 0; i < y.size(); ++i) ga[i] += g[i] * (T(1) - y[i] * y[i]);
    });
    return o;
  }

  /// Stack along the row (sequence) axis.
  Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    const std::size_t n = cols(parts[0]);
    std::size_t m = 0;
    for (Var p : parts) {
      if (cols(p) != n) mismatch("concat_rows", value(parts[0]), value(p));
      m += rows(p);
    }
    Tensor<T> out = Tensor<T>::matrix(m, n);
    std::size_t off = 0;
    for (Var p : parts) {
      std::copy_n(value(p).data(), value(p).size(), out.data() + off);
      off += value(p).size();
    }
    Var o = push("concat_rows", std::move(out));
    on_backward(o, [this, o, pv = std::vector<Var>(parts.begin(), parts.end())] {
      const auto& g = nodes_[o.id].grad;
      std::size_t off = 0;
      for (Var p : pv) {
        auto& gp = grad_ref(p);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        off += gp.size();
      }
    });
    return o;
  }

  Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    const auto& A = value(a);
    if (begin >= end || end > A.rows()) {
      throw ShapeError(detail::concat("slice_rows: [", begin, ",", end, ") outside ", shape_string(A.shape())));
    }
    const std::size_t n = A.cols();
    Tensor<T> out({end - begin, n}, std::vector<T>(A.data() + begin * n, A.data() + end * n));
    Var o = push("slice_rows", std::move(out));
    on_backward(o, [this, a, o, begin, n] {
      const auto& g = nodes_[o.id].grad;
      auto& ga = grad_ref(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
    });
    return o;
  }

  Var transpose(Var a) {
    const auto& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor<T> out = Tensor<T>::matrix(n, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
    Var o = push("transpose", std::move(out));
    on_backward(o, [this, a, o, m, n] {
      const auto& g = nodes_[o.id].grad;
      auto& ga = grad_ref(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
    });
    return o;
  }

  Var sum(Var a) {
    T s = 0;
    for (T v : value(a).values()) s += v;
    Var o = push("sum", Tensor<T>::scalar(s));
    on_backward(o, [this, a, o] {
      const T g = nodes_[o.id].grad[0];
      for (auto& v : grad_ref(a).values()) v += g;
    });
    return o;
  }

  /// Multi-head scaled dot-product attention; q[n,d], k/v[m,d]. With `causal`
  /// query i only attends to keys j <= i.
  Var attention(Var q, Var k, Var v, std::size_t heads, bool causal) {
    const auto& Q = value(q);
    const auto& K = value(k);
    const auto& V = value(v);
    const std::size_t n = Q.rows(), m = K.rows(), d = Q.cols();
    if (K.cols() != d || V.cols() != d || V.rows() != m) mismatch("attention", Q, K);
    if (heads == 0 || d % heads != 0) {
      throw ShapeError(detail::concat("attention: width ", d, " not divisible by ", heads, " heads"));
    }
    if (causal && m < n) mismatch("attention(causal)", Q, K);
    const std::size_t dh = d / heads;
    const T sc = T(1) / std::sqrt(T(dh));
    auto probs = std::make_shared<std::vector<T>>(heads * n * m);
    Tensor<T> out = Tensor<T>::matrix(n, d);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < n; ++i) {
        T* p = probs->data() + (h * n + i) * m;
        const std::size_t limit = causal ? i + 1 : m;
        const T* qi = Q.data() + i * d + off;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          const T* kj = K.data() + j * d + off;
          T s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          p[j] = s * sc;
          mx = std::max(mx, p[j]);
        }
        T z = 0;
        for (std::size_t j = 0; j < limit; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::size_t j = 0; j < limit; ++j) p[j] /= z;
        for (std::size_t j = limit; j < m; ++j) p[j] = 0;
        T* oi = out.data() + i * d + off;
        for (std::size_t j = 0; j < limit; ++j) {
          const T pj = p[j];
          const T* vj = V.data() + j * d + off;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pj * vj[c];
        }
      }
    }
    Var o = push("attention", std::move(out));
    on_backward(o, [this, q, k, v, o, n, m, d, dh, heads, sc, causal, probs] {
      const auto& g = nodes_[o.id].grad;
      const auto& Q = value(q);
      const auto& K = value(k);
      const auto& V = value(v);
      auto& gq = grad_ref(q);
      auto& gk = grad_ref(k);
      auto& gv = grad_ref(v);
      std::vector<T> gp(m);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
          const T* p = probs->data() + (h * n + i) * m;
          const std::size_t limit = causal ? i + 1 : m;
          const T* gi = g.data() + i * d + off;
          T dot = 0;
          for (std::size_t j = 0; j < limit; ++j) {
            const T* vj = V.data() + j * d + off;
            T* gvj = gv.data() + j * d + off;
            T s = 0;
            for (std::size_t c = 0; c < dh; ++c) {
              s += gi[c] * vj[c];
              gvj[c] += p[j] * gi[c];
            }
            gp[j] = s;
            dot += s * p[j];
          }
          const T* qi = Q.data() + i * d + off;
          T* gqi = gq.data() + i * d + off;
          for (std::size_t j = 0; j < limit; ++j) {
            const T gs = p[j] * (gp[j] - dot) * sc;
            const T* kj = K.data() + j * d + off;
            T* gkj = gk.data() + j * d + off;
            for (std::size_t c = 0; c < dh; ++c) {
              gqi[c] += gs * kj[c];
              gkj[c] += gs * qi[c];
            }
          }
        }
      }
    });
    return o;
  }

  /// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
  Var cross_entropy(Var logits, std::span<const int> targets) {
    const auto& L = value(logits);
    const std::size_t n = L.rows(), c = L.cols();
    if (targets.size() != n) {
      throw ShapeError(detail::concat("cross_entropy: ", targets.size(), " targets for logits ",
                                      shape_string(L.shape())));
    }
    auto probs = std::make_shared<Tensor<T>>(L);
    T loss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c) {
        throw ShapeError(detail::concat("cross_entropy: target ", targets[i], " outside ", c, " classes"));
      }
      auto row = probs->row(i);
      T mx = row[0];
      for (T v : row) mx = std::max(mx, v);
      T z = 0;
      for (T v : row) z += std::exp(v - mx);
      loss += -(row[targets[i]] - mx - std::log(z));
      softmax_row(row);
    }
    loss /= T(n);
    Var o = push("cross_entropy", Tensor<T>::scalar(loss));
    on_backward(o, [this, logits, o, n, c, probs, tv = std::vector<int>(targets.begin(), targets.end())] {
      const T g = nodes_[o.id].grad[0] / T(n);
      auto& gl = grad_ref(logits);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) gl.at(i, j) += g * probs->at(i, j);
        gl.at(i, tv[i]) -= g;
      }
    });
    return o;
  }

  /// Populate gradients of every node reachable from the scalar `loss` and
  /// accumulate them into the referenced parameters.
  void backward(Var loss) {
    const auto& L = value(loss);
    if (L.size() != 1) {
      throw ShapeError("backward: loss must be a scalar, got " + shape_string(L.shape()));
    }
    if (!std::isfinite(L[0])) throw NumericError("backward: loss is not finite");
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad_ref(loss)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward();
      if (n.param) {
        auto& pg = n.param->grad;
        for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
      }
    }
  }

 private:
  struct Node {
    const char* op = "";
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Parameter<T>* param = nullptr;
    std::function<void()> backward;
  };

  static void require_matrix(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) throw ShapeError(detail::concat(op, ": expected a matrix, got ", shape_string(t.shape())));
  }

  [[noreturn]] static void mismatch(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    throw ShapeError(detail::concat(op, ": incompatible shapes ", shape_string(a.shape()), " and ",
                                    shape_string(b.shape())));
  }

  Var push(const char* op, Tensor<T> t, bool check_finite = true) {
    if (check_finite && !t.all_finite()) throw NumericError(detail::concat(op, ": produced a non-finite value"));
    Node n;
    n.op = op;
    n.value = std::move(t);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  template <class F>
  void on_backward(Var v, F&& f) {
    nodes_[v.id].backward = std::forward<F>(f);
  }

  Tensor<T>& grad_ref(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor<T>(value(v).shape());
    return n.grad;
  }

  void accumulate(Var v, const Tensor<T>& g) {
    auto& gv = grad_ref(v);
    for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
  }

  std::vector<Node> nodes_;
};

}  // namespace unimc::numerics

#include "ngpt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ngpt/errors.hpp"

namespace ngpt::ad {

namespace {

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw ConfigError("variable is not attached to a graph");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw ConfigError("variables belong to different graphs");
  return graph_of(a);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw ConfigError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
  }
}

double sigmoid_scalar(double x) {
  // Split by sign so exp never overflows.
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

const Tensor& Var::value() const { return graph_of(*this).value(*this); }

const Tensor& Gradients::operator[](Var v) const {
  const auto& g = grads_.at(v.id);
  if (g.size() == 0) throw ConfigError("no gradient recorded for node " + std::to_string(v.id));
  return g;
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NonFiniteError("leaf tensor has non-finite entries");
  nodes_.push_back(Node{std::move(value), {}, {}, true, requires_grad});
  return Var{nodes_.size() - 1, this};
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, Adjoint adjoint) {
  if (!value.all_finite()) {
    throw NonFiniteError("op produced non-finite values (node " + std::to_string(nodes_.size()) + ")");
  }
  bool needs = false;
  for (auto id : inputs) needs = needs || nodes_.at(id).needs_grad;
  nodes_.push_back(Node{std::move(value), std::move(inputs), needs ? std::move(adjoint) : Adjoint{},
                        false, needs});
  return Var{nodes_.size() - 1, this};
}

Tensor& grad_slot(const Graph& g, std::vector<Tensor>& grads, std::size_t id) {
  auto& slot = grads[id];
  if (slot.size() == 0) slot = Tensor::zeros_like(g.value(id));
  return slot;
}

Gradients Graph::backward(Var loss) const {
  if (loss.graph != this) throw ConfigError("loss belongs to a different graph");
  const auto& lv = nodes_.at(loss.id).value;
  if (lv.size() != 1) throw ConfigError("backward needs a scalar loss, got " + shape_string(lv.shape()));

  Gradients out;
  auto& grads = out.grads_;
  grads.resize(nodes_.size());
  grads[loss.id] = Tensor(lv.shape(), 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const auto& node = nodes_[i];
    if (!node.needs_grad || node.is_leaf || grads[i].size() == 0) continue;
    node.adjoint(*this, grads[i], grads);
    // Intermediate adjoints are not part of the result.
    grads[i] = Tensor();
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_leaf && nodes_[i].needs_grad) {
      grad_slot(*this, grads, i);
    } else if (!nodes_[i].is_leaf || !nodes_[i].needs_grad) {
      grads[i] = Tensor();
    }
  }
  return out;
}

// ---- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b) {
  auto& g = graph_of(a, b);
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw ConfigError("matmul: inner extents differ " + shape_string(av.shape()) + " x " +
                      shape_string(bv.shape()));
  }
  return g.record(matmul_plain(av, bv), {a.id, b.id},
                  [ia = a.id, ib = b.id](const Graph& gr, const Tensor& dc, std::vector<Tensor>& grads) {
                    const auto& A = gr.value(ia);
                    const auto& B = gr.value(ib);
                    const auto m = A.rows(), k = A.cols(), n = B.cols();
                    if (gr.needs_grad(Var{ia, nullptr})) {
                      // dA = dC * B^T
                      auto& dA = grad_slot(gr, grads, ia);
                      for (std::size_t i = 0; i < m; ++i) {
                        auto dcrow = dc.row(i);
                        for (std::size_t p = 0; p < k; ++p) dA.at(i, p) += dot(dcrow, B.row(p));
                      }
                    }
                    if (gr.needs_grad(Var{ib, nullptr})) {
                      // dB = A^T * dC
                      auto& dB = grad_slot(gr, grads, ib);
                      for (std::size_t i = 0; i < m; ++i) {
                        auto dcrow = dc.row(i);
                        for (std::size_t p = 0; p < k; ++p) {
                          const double av = A.at(i, p);
                          if (av == 0.0) continue;
                          auto dbrow = dB.row(p);
                          for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
                        }
                      }
                    }
                  });
}

Var transpose(Var a) {
  auto& g = graph_of(a);
  require_matrix(g.value(a), "transpose");
  return g.record(transposed(g.value(a)), {a.id},
                  [ia = a.id](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    auto& da = grad_slot(gr, grads, ia);
                    for (std::size_t i = 0; i < da.rows(); ++i)
                      for (std::size_t j = 0; j < da.cols(); ++j) da.at(i, j) += dout.at(j, i);
                  });
}

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
  auto& g = graph_of(a, b);
  require_same_shape(g.value(a), g.value(b), "add");
  return g.record(g.value(a) + g.value(b), {a.id, b.id},
                  [ia = a.id, ib = b.id](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    for (auto id : {ia, ib}) {
                      if (!gr.needs_grad(Var{id, nullptr})) continue;
                      auto& d = grad_slot(gr, grads, id);
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i];
                    }
                  });
}

Var sub(Var a, Var b) {
  auto& g = graph_of(a, b);
  require_same_shape(g.value(a), g.value(b), "sub");
  return g.record(g.value(a) - g.value(b), {a.id, b.id},
                  [ia = a.id, ib = b.id](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    if (gr.needs_grad(Var{ia, nullptr})) {
                      auto& d = grad_slot(gr, grads, ia);
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i];
                    }
                    if (gr.needs_grad(Var{ib, nullptr})) {
                      auto& d = grad_slot(gr, grads, ib);
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= dout[i];
                    }
                  });
}

Var hadamard(Var a, Var b) {
  auto& g = graph_of(a, b);
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require_same_shape(av, bv, "hadamard");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.record(std::move(out), {a.id, b.id},
                  [ia = a.id, ib = b.id](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    const auto& A = gr.value(ia);
                    const auto& B = gr.value(ib);
                    if (gr.needs_grad(Var{ia, nullptr})) {
                      auto& d = grad_slot(gr, grads, ia);
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i] * B[i];
                    }
                    if (gr.needs_grad(Var{ib, nullptr})) {
                      auto& d = grad_slot(gr, grads, ib);
                      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i] * A[i];
                    }
                  });
}

Var scale(Var a, double c) {
  auto& g = graph_of(a);
  return g.record(c * g.value(a), {a.id},
                  [ia = a.id, c](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    auto& d = grad_slot(gr, grads, ia);
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += c * dout[i];
                  });
}

Var mul_rows(Var a, Var v) {
  auto& g = graph_of(a, v);
  const auto& av = g.value(a);
  const auto& vv = g.value(v);
  require_matrix(av, "mul_rows");
  if (vv.rank() != 1 || vv.size() != av.cols()) {
    throw ConfigError("mul_rows: vector " + shape_string(vv.shape()) + " does not broadcast over rows of " +
                      shape_string(av.shape()));
  }
  Tensor out(av.shape());
  const auto m = av.rows(), n = av.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = av.at(i, j) * vv[j];
  return g.record(std::move(out), {a.id, v.id},
                  [ia = a.id, iv = v.id](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    const auto& A = gr.value(ia);
                    const auto& V = gr.value(iv);
                    const auto m = A.rows(), n = A.cols();
                    if (gr.needs_grad(Var{ia, nullptr})) {
                      auto& d = grad_slot(gr, grads, ia);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) d.at(i, j) += dout.at(i, j) * V[j];
                    }
                    if (gr.needs_grad(Var{iv, nullptr})) {
                      auto& d = grad_slot(gr, grads, iv);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) d[j] += dout.at(i, j) * A.at(i, j);
                    }
                  });
}

Var sigmoid(Var a) {
  auto& g = graph_of(a);
  const auto& av = g.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(av[i]);
  const auto self = g.size();
  return g.record(std::move(out), {a.id},
                  [ia = a.id, self](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    const auto& s = gr.value(self);
                    auto& d = grad_slot(gr, grads, ia);
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += dout[i] * s[i] * (1.0 - s[i]);
                  });
}

Var silu(Var a) {
  auto& g = graph_of(a);
  const auto& av = g.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * sigmoid_scalar(av[i]);
  return g.record(std::move(out), {a.id},
                  [ia = a.id](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    const auto& x = gr.value(ia);
                    auto& d = grad_slot(gr, grads, ia);
                    for (std::size_t i = 0; i < d.size(); ++i) {
                      const double s = sigmoid_scalar(x[i]);
                      d[i] += dout[i] * (s + x[i] * s * (1.0 - s));
                    }
                  });
}

Var sum(Var a) {
  auto& g = graph_of(a);
  double s = 0.0;
  for (double v : g.value(a).data()) s += v;
  return g.record(Tensor::scalar(s), {a.id},
                  [ia = a.id](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    auto& d = grad_slot(gr, grads, ia);
                    const double go = dout.item();
                    for (std::size_t i = 0; i < d.size(); ++i) d[i] += go;
                  });
}

// ---- normalisation --------------------------------------------------------

namespace {

// Visits each slice of `t` along `axis` as (offset, stride, length).
template <typename F>
void for_each_slice(const Shape& shape, int axis, F&& f) {
  if (shape.size() == 1) {
    f(std::size_t{0}, std::size_t{1}, shape[0]);
  } else if (axis == 1) {
    for (std::size_t r = 0; r < shape[0]; ++r) f(r * shape[1], std::size_t{1}, shape[1]);
  } else {
    for (std::size_t c = 0; c < shape[1]; ++c) f(c, shape[1], shape[0]);
  }
}

}  // namespace

Var l2_normalize(Var v, int axis, double eps) {
  auto& g = graph_of(v);
  const auto& x = g.value(v);
  if (x.rank() == 0 || x.rank() > 2 || axis < 0 || axis >= static_cast<int>(x.rank())) {
    throw ConfigError("l2_normalize: axis " + std::to_string(axis) + " invalid for " +
                      shape_string(x.shape()));
  }
  if (eps < 0) throw ConfigError("l2_normalize: eps must be nonnegative");
  Tensor out(x.shape());
  std::vector<double> norms;
  for_each_slice(x.shape(), axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += x[off + i * stride] * x[off + i * stride];
    const double n = std::sqrt(s);
    if (!(n > eps)) {
      throw DegenerateInputError("l2_normalize: slice norm " + std::to_string(n) + " <= eps");
    }
    for (std::size_t i = 0; i < len; ++i) out[off + i * stride] = x[off + i * stride] / n;
    norms.push_back(n);
  });
  const auto self = g.size();
  return g.record(
      std::move(out), {v.id},
      [iv = v.id, self, axis, norms = std::move(norms)](const Graph& gr, const Tensor& dout,
                                                          std::vector<Tensor>& grads) {
        const auto& y = gr.value(self);
        auto& dx = grad_slot(gr, grads, iv);
        std::size_t k = 0;
        // dx = (I - y y^T) dy / |x|
        for_each_slice(y.shape(), axis, [&](std::size_t off, std::size_t stride, std::size_t len) {
          double yd = 0.0;
          for (std::size_t i = 0; i < len; ++i) yd += y[off + i * stride] * dout[off + i * stride];
          const double inv = 1.0 / norms[k++];
          for (std::size_t i = 0; i < len; ++i) {
            const auto p = off + i * stride;
            dx[p] += (dout[p] - y[p] * yd) * inv;
          }
        });
      });
}

// ---- attention ------------------------------------------------------------

Var causal_softmax_weighted_sum(Var scores, Var values) {
  auto& g = graph_of(scores, values);
  const auto& S = g.value(scores);
  const auto& V = g.value(values);
  require_matrix(S, "causal_softmax_weighted_sum");
  require_matrix(V, "causal_softmax_weighted_sum");
  const auto seq = S.rows();
  if (S.cols() != seq || V.rows() != seq) {
    throw ConfigError("causal_softmax_weighted_sum: scores " + shape_string(S.shape()) +
                      " incompatible with values " + shape_string(V.shape()));
  }
  const auto d = V.cols();
  // Row-stochastic causal weights; entries above the diagonal stay zero.
  Tensor P(Shape{seq, seq});
  for (std::size_t n = 0; n < seq; ++n) {
    double mx = S.at(n, 0);
    for (std::size_t m = 1; m <= n; ++m) mx = std::max(mx, S.at(n, m));
    double z = 0.0;
    for (std::size_t m = 0; m <= n; ++m) z += (P.at(n, m) = std::exp(S.at(n, m) - mx));
    for (std::size_t m = 0; m <= n; ++m) P.at(n, m) /= z;
  }
  Tensor out(Shape{seq, d});
  for (std::size_t n = 0; n < seq; ++n) {
    auto orow = out.row(n);
    for (std::size_t m = 0; m <= n; ++m) {
      const double p = P.at(n, m);
      auto vrow = V.row(m);
      for (std::size_t j = 0; j < d; ++j) orow[j] += p * vrow[j];
    }
  }
  return g.record(
      std::move(out), {scores.id, values.id},
      [is = scores.id, iv = values.id, P = std::move(P)](const Graph& gr, const Tensor& dout,
                                                          std::vector<Tensor>& grads) {
        const auto& Vv = gr.value(iv);
        const auto seq = P.rows();
        const auto d = Vv.cols();
        const bool want_s = gr.needs_grad(Var{is, nullptr});
        const bool want_v = gr.needs_grad(Var{iv, nullptr});
        Tensor* dS = want_s ? &grad_slot(gr, grads, is) : nullptr;
        Tensor* dV = want_v ? &grad_slot(gr, grads, iv) : nullptr;
        std::vector<double> dp(seq);
        for (std::size_t n = 0; n < seq; ++n) {
          auto drow = dout.row(n);
          double weighted = 0.0;
          for (std::size_t m = 0; m <= n; ++m) {
            dp[m] = dot(drow, Vv.row(m));
            weighted += P.at(n, m) * dp[m];
            if (dV) {
              auto dvrow = dV->row(m);
              const double p = P.at(n, m);
              for (std::size_t j = 0; j < d; ++j) dvrow[j] += p * drow[j];
            }
          }
          if (dS) {
            for (std::size_t m = 0; m <= n; ++m) dS->at(n, m) += P.at(n, m) * (dp[m] - weighted);
          }
        }
      });
}

Var rotary(Var x, double base) {
  auto& g = graph_of(x);
  const auto& X = g.value(x);
  require_matrix(X, "rotary");
  const auto seq = X.rows(), d = X.cols();
  if (d % 2 != 0) throw ConfigError("rotary: key dimension must be even, got " + std::to_string(d));
  if (!(base > 0)) throw ConfigError("rotary: base must be positive");
  Tensor cosines(Shape{seq, d / 2}), sines(Shape{seq, d / 2});
  for (std::size_t n = 0; n < seq; ++n) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double theta =
          static_cast<double>(n) * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      cosines.at(n, i) = std::cos(theta);
      sines.at(n, i) = std::sin(theta);
    }
  }
  Tensor out(X.shape());
  for (std::size_t n = 0; n < seq; ++n) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double c = cosines.at(n, i), s = sines.at(n, i);
      const double a = X.at(n, 2 * i), b = X.at(n, 2 * i + 1);
      out.at(n, 2 * i) = a * c - b * s;
      out.at(n, 2 * i + 1) = a * s + b * c;
    }
  }
  return g.record(std::move(out), {x.id},
                  [ix = x.id, cosines = std::move(cosines), sines = std::move(sines)](
                      const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    auto& dx = grad_slot(gr, grads, ix);
                    const auto seq = dx.rows(), half = dx.cols() / 2;
                    for (std::size_t n = 0; n < seq; ++n) {
                      for (std::size_t i = 0; i < half; ++i) {
                        const double c = cosines.at(n, i), s = sines.at(n, i);
                        const double da = dout.at(n, 2 * i), db = dout.at(n, 2 * i + 1);
                        dx.at(n, 2 * i) += da * c + db * s;
                        dx.at(n, 2 * i + 1) += -da * s + db * c;
                      }
                    }
                  });
}

// ---- loss and embedding ---------------------------------------------------

Var cross_entropy(Var logits, std::span<const int> targets) {
  auto& g = graph_of(logits);
  const auto& Z = g.value(logits);
  require_matrix(Z, "cross_entropy");
  const auto seq = Z.rows(), vocab = Z.cols();
  if (targets.size() != seq) {
    throw ConfigError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                      std::to_string(seq) + " rows");
  }
  Tensor probs(Z.shape());
  double loss = 0.0;
  for (std::size_t n = 0; n < seq; ++n) {
    const int t = targets[n];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw ConfigError("cross_entropy: target id " + std::to_string(t) + " outside [0," +
                        std::to_string(vocab) + ")");
    }
    auto zrow = Z.row(n);
    const double mx = *std::max_element(zrow.begin(), zrow.end());
    double zsum = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) zsum += (probs.at(n, j) = std::exp(zrow[j] - mx));
    for (std::size_t j = 0; j < vocab; ++j) probs.at(n, j) /= zsum;
    loss += -(zrow[static_cast<std::size_t>(t)] - mx - std::log(zsum));
  }
  loss /= static_cast<double>(seq);
  return g.record(Tensor::scalar(loss), {logits.id},
                  [iz = logits.id, probs = std::move(probs),
                   tg = std::vector<int>(targets.begin(), targets.end())](
                      const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    auto& dz = grad_slot(gr, grads, iz);
                    const auto seq = probs.rows(), vocab = probs.cols();
                    const double c = dout.item() / static_cast<double>(seq);
                    for (std::size_t n = 0; n < seq; ++n) {
                      for (std::size_t j = 0; j < vocab; ++j) dz.at(n, j) += c * probs.at(n, j);
                      dz.at(n, static_cast<std::size_t>(tg[n])) -= c;
                    }
                  });
}

Var gather_columns(Var e, std::span<const int> ids) {
  auto& g = graph_of(e);
  const auto& E = g.value(e);
  require_matrix(E, "gather_columns");
  const auto d = E.rows(), vocab = E.cols();
  if (ids.empty()) throw ConfigError("gather_columns: empty id list");
  Tensor out(Shape{ids.size(), d});
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const int t = ids[n];
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw ConfigError("token id " + std::to_string(t) + " outside [0," + std::to_string(vocab) + ")");
    }
    for (std::size_t i = 0; i < d; ++i) out.at(n, i) = E.at(i, static_cast<std::size_t>(t));
  }
  return g.record(std::move(out), {e.id},
                  [ie = e.id, idv = std::vector<int>(ids.begin(), ids.end())](
                      const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    auto& dE = grad_slot(gr, grads, ie);
                    const auto d = dE.rows();
                    for (std::size_t n = 0; n < idv.size(); ++n)
                      for (std::size_t i = 0; i < d; ++i)
                        dE.at(i, static_cast<std::size_t>(idv[n])) += dout.at(n, i);
                  });
}

Var concat_columns(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_columns: no inputs");
  auto& g = graph_of(parts[0]);
  const auto rows = g.value(parts[0]).rows();
  std::size_t total = 0;
  std::vector<std::size_t> ids, widths;
  for (auto p : parts) {
    graph_of(parts[0], p);
    const auto& t = g.value(p);
    require_matrix(t, "concat_columns");
    if (t.rows() != rows) throw ConfigError("concat_columns: row counts differ");
    ids.push_back(p.id);
    widths.push_back(t.cols());
    total += t.cols();
  }
  Tensor out(Shape{rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto& t = g.value(ids[k]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(t.row(r).begin(), t.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
    off += widths[k];
  }
  auto inputs = ids;
  return g.record(std::move(out), std::move(inputs),
                  [ids, widths](const Graph& gr, const Tensor& dout, std::vector<Tensor>& grads) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (gr.needs_grad(Var{ids[k], nullptr})) {
                        auto& d = grad_slot(gr, grads, ids[k]);
                        for (std::size_t r = 0; r < d.rows(); ++r)
                          for (std::size_t j = 0; j < widths[k]; ++j) d.at(r, j) += dout.at(r, off + j);
                      }
                      off += widths[k];
                    }
                  });
}

}  // namespace ngpt::ad

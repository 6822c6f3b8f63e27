#pragma once

// Differentiable primitives. Each op computes its value eagerly and records a
// backward closure when any input requires a gradient.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ctsearch/ad/tape.hpp"

namespace ctsearch::ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MutMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MutMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape == nullptr || a.tape != b.tape) throw Error("operands recorded on different tapes");
  return *a.tape;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline void check_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (!is_suffix(b, a)) {
    throw Error(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
}

}  // namespace detail

// Generic elementwise unary op: df(x, y) returns dy/dx.
template <class F, class DF>
Var map_unary(const Var& a, F f, DF df) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ai = a.id;
  return t.record(std::move(y), t.requires_grad(a), [ai, df](Tape& tp, const Tensor& g, const Tensor& yv) {
    const Tensor& xv = tp.value(ai);
    Tensor& ga = tp.grad_ref(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
  });
}

namespace detail {

using ArrayMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrayMap = Eigen::Map<const Eigen::ArrayXd>;

inline ConstArrayMap as_array(const Tensor& t) { return {t.data(), static_cast<Eigen::Index>(t.size())}; }
inline ArrayMap as_array(Tensor& t) { return {t.data(), static_cast<Eigen::Index>(t.size())}; }

// Unary op whose derivative is a function of the output only: ga += g * dy(y).
template <class F, class DY>
Var map_unary_vectorized(const Var& a, F f, DY dy) {
  Tape& t = *a.tape;
  Tensor y(a.shape());
  as_array(y) = f(as_array(a.value()));
  const std::size_t ai = a.id;
  return t.record(std::move(y), t.requires_grad(a), [ai, dy](Tape& tp, const Tensor& g, const Tensor& yv) {
    as_array(tp.grad_ref(ai)) += as_array(g) * dy(as_array(yv));
  });
}

}  // namespace detail

inline Var relu(const Var& a) {
  return detail::map_unary_vectorized(
      a, [](const auto& x) -> Eigen::ArrayXd { return x.max(0.0); }, [](const auto& y) -> Eigen::ArrayXd { return (y > 0.0).template cast<double>(); });
}

// tanh(x) = 1 - 2 / (1 + exp(2x)), evaluated with Eigen's vectorized exp.
inline Var tanh(const Var& a) {
  return detail::map_unary_vectorized(
      a, [](const auto& x) -> Eigen::ArrayXd { return 1.0 - 2.0 / (1.0 + (2.0 * x.min(40.0).max(-40.0)).exp()); },
      [](const auto& y) -> Eigen::ArrayXd { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::map_unary_vectorized(
      a, [](const auto& x) -> Eigen::ArrayXd { return 1.0 / (1.0 + (-x.max(-700.0)).exp()); },
      [](const auto& y) -> Eigen::ArrayXd { return y * (1.0 - y); });
}

inline Var scale(const Var& a, double c) {
  return map_unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

/// a[..., K] x b[K, M] -> [..., M]
inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.dim(0)) {
    throw Error("matmul: shape mismatch " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  }
  const std::size_t rows = av.rows(), k = bv.dim(0), m = bv.dim(1);
  Shape out_shape = av.shape();
  out_shape.back() = m;
  Tensor out(out_shape);
  detail::as_matrix(out, rows, m).noalias() = detail::as_matrix(av, rows, k) * detail::as_matrix(bv, k, m);
  const std::size_t ai = a.id, bi = b.id;
  return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                  [ai, bi, rows, k, m](Tape& tp, const Tensor& g, const Tensor&) {
                    auto gm = detail::as_matrix(g, rows, m);
                    if (tp.requires_grad(ai)) {
                      detail::as_matrix(tp.grad_ref(ai), rows, k).noalias() +=
                          gm * detail::as_matrix(tp.value(bi), k, m).transpose();
                    }
                    if (tp.requires_grad(bi)) {
                      detail::as_matrix(tp.grad_ref(bi), k, m).noalias() +=
                          detail::as_matrix(tp.value(ai), rows, k).transpose() * gm;
                    }
                  });
}

inline Var transpose(const Var& a) {
  Tape& t = *a.tape;
  const Tensor& av = a.value();
  if (av.rank() != 2) throw Error("transpose expects a matrix, got " + shape_string(av.shape()));
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor out({c, r});
  detail::as_matrix(out, c, r) = detail::as_matrix(av, r, c).transpose();
  const std::size_t ai = a.id;
  return t.record(std::move(out), t.requires_grad(a), [ai, r, c](Tape& tp, const Tensor& g, const Tensor&) {
    detail::as_matrix(tp.grad_ref(ai), r, c) += detail::as_matrix(g, c, r).transpose();
  });
}

namespace detail {

// out = a (op) b with b broadcast over a's leading axes.
template <class F, class DA, class DB>
Var binary_broadcast(const char* name, const Var& a, const Var& b, F f, DA da, DB db) {
  Tape& t = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  check_broadcast(name, av.shape(), bv.shape());
  const std::size_t bn = bv.size(), outer = bn == 0 ? 0 : av.size() / bn;
  Tensor out(av.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    const double* x = av.data() + o * bn;
    double* y = out.data() + o * bn;
    for (std::size_t j = 0; j < bn; ++j) y[j] = f(x[j], bv[j]);
  }
  const std::size_t ai = a.id, bi = b.id;
  return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                  [ai, bi, bn, outer, da, db](Tape& tp, const Tensor& g, const Tensor&) {
                    const double* x = tp.value(ai).data();
                    const double* y = tp.value(bi).data();
                    if (tp.requires_grad(ai)) {
                      double* ga = tp.grad_ref(ai).data();
                      for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < bn; ++j) ga[o * bn + j] += g[o * bn + j] * da(x[o * bn + j], y[j]);
                    }
                    if (tp.requires_grad(bi)) {
                      double* gb = tp.grad_ref(bi).data();
                      for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t j = 0; j < bn; ++j) gb[j] += g[o * bn + j] * db(x[o * bn + j], y[j]);
                    }
                  });
}

}  // namespace detail

/// Elementwise a + b; b may be a trailing-shape suffix of a (bias broadcast).
inline Var add(const Var& a, const Var& b) {
  return detail::binary_broadcast(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary_broadcast(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary_broadcast(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

/// a * s for a one-element tensor s.
inline Var scale_by(const Var& a, const Var& s) {
  Tape& t = detail::same_tape(a, s);
  if (s.value().size() != 1) throw Error("scale_by expects a scalar, got " + shape_string(s.shape()));
  const double c = s.value()[0];
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = c * x[i];
  const std::size_t ai = a.id, si = s.id;
  return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(s), [ai, si](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& xv = tp.value(ai);
    const double c = tp.value(si)[0];
    double ds = 0.0;
    const bool need_a = tp.requires_grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (need_a) tp.grad_ref(ai)[i] += c * g[i];
      ds += g[i] * xv[i];
    }
    if (tp.requires_grad(si)) tp.grad_ref(si)[0] += ds;
  });
}

inline Var softmax_last(const Var& a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    const double mx = *std::max_element(xr, xr + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= s;
  }
  const std::size_t ai = a.id;
  return t.record(std::move(y), t.requires_grad(a), [ai, rows, cols](Tape& tp, const Tensor& g, const Tensor& yv) {
    Tensor& ga = tp.grad_ref(ai);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yr = yv.data() + r * cols;
      const double* gr = g.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * yr[c];
      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += yr[c] * (gr[c] - dot);
    }
  });
}

/// Zero-mean, unit-variance rows over the last axis.
inline Var layer_norm_last(const Var& a, double eps = 1e-5) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(x.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xr[c];
    mu /= static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    inv_std[r] = 1.0 / std::sqrt(var / static_cast<double>(cols) + eps);
    for (std::size_t c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * inv_std[r];
  }
  const std::size_t ai = a.id;
  return t.record(std::move(y), t.requires_grad(a),
                  [ai, rows, cols, inv_std = std::move(inv_std)](Tape& tp, const Tensor& g, const Tensor& yv) {
                    Tensor& ga = tp.grad_ref(ai);
                    const double n = static_cast<double>(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double* yr = yv.data() + r * cols;
                      const double* gr = g.data() + r * cols;
                      double mg = 0.0, mgy = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        mg += gr[c];
                        mgy += gr[c] * yr[c];
                      }
                      mg /= n;
                      mgy /= n;
                      for (std::size_t c = 0; c < cols; ++c) ga[r * cols + c] += inv_std[r] * (gr[c] - mg - yr[c] * mgy);
                    }
                  });
}

/// Concatenate along the last axis; all parts share leading shape.
inline Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_last of nothing");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool any = false;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    Shape lead(v.shape().begin(), v.shape().end() - 1);
    Shape lead0(parts.front().shape().begin(), parts.front().shape().end() - 1);
    if (lead != lead0 || p.tape != &t) {
      throw Error("concat_last: shape mismatch " + shape_string(parts.front().shape()) + " vs " +
                  shape_string(v.shape()));
    }
    widths.push_back(v.cols());
    total += v.cols();
    any |= t.requires_grad(p);
  }
  Shape out_shape = parts.front().shape();
  out_shape.back() = total;
  Tensor out(out_shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + off);
    }
    off += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return t.record(std::move(out), any, [ids, widths, rows, total](Tape& tp, const Tensor& g, const Tensor&) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Tensor& gk = tp.grad_ref(ids[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * total + off + c];
        }
      }
      off += widths[k];
    }
  });
}

/// Concatenate along axis 0; all parts share trailing shape.
inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_rows of nothing");
  Tape& t = *parts.front().tape;
  const Shape tail(parts.front().shape().begin() + 1, parts.front().shape().end());
  std::vector<std::size_t> sizes;
  std::size_t lead = 0, total = 0;
  bool any = false;
  for (const auto& p : parts) {
    const Shape pt(p.shape().begin() + 1, p.shape().end());
    if (pt != tail || p.tape != &t) {
      throw Error("concat_rows: shape mismatch " + shape_string(parts.front().shape()) + " vs " +
                  shape_string(p.shape()));
    }
    lead += p.shape()[0];
    sizes.push_back(p.value().size());
    total += p.value().size();
    any |= t.requires_grad(p);
  }
  Shape out_shape = parts.front().shape();
  out_shape[0] = lead;
  Tensor out(out_shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
    off += p.value().size();
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id);
  return t.record(std::move(out), any, [ids, sizes](Tape& tp, const Tensor& g, const Tensor&) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad(ids[k])) {
        Tensor& gk = tp.grad_ref(ids[k]);
        for (std::size_t i = 0; i < sizes[k]; ++i) gk[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
}

inline Var reshape(const Var& a, Shape shape) {
  Tape& t = *a.tape;
  Tensor out = a.value();
  out.reshape(std::move(shape));
  const std::size_t ai = a.id;
  return t.record(std::move(out), t.requires_grad(a), [ai](Tape& tp, const Tensor& g, const Tensor&) {
    Tensor& ga = tp.grad_ref(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

inline Var sum(const Var& a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  const std::size_t ai = a.id;
  return t.record(Tensor::scalar(s), t.requires_grad(a), [ai](Tape& tp, const Tensor& g, const Tensor&) {
    Tensor& ga = tp.grad_ref(ai);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

inline Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw Error("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

/// mean |pred - target|
inline Var mae_loss(const Var& pred, const Var& target) {
  Tape& t = detail::same_tape(pred, target);
  const Tensor& p = pred.value();
  const Tensor& y = target.value();
  if (p.shape() != y.shape()) {
    throw Error("mae_loss: shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(y.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - y[i]);
  const double n = static_cast<double>(p.size());
  const std::size_t pi = pred.id, yi = target.id;
  return t.record(Tensor::scalar(s / n), t.requires_grad(pred) || t.requires_grad(target),
                  [pi, yi, n](Tape& tp, const Tensor& g, const Tensor&) {
                    const Tensor& pv = tp.value(pi);
                    const Tensor& yv = tp.value(yi);
                    const double c = g[0] / n;
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                      const double d = pv[i] - yv[i];
                      const double s = d > 0.0 ? c : (d < 0.0 ? -c : 0.0);
                      if (tp.requires_grad(pi)) tp.grad_ref(pi)[i] += s;
                      if (tp.requires_grad(yi)) tp.grad_ref(yi)[i] -= s;
                    }
                  });
}

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy of probabilities p against labels y (clamped to [1e-7, 1-1e-7]).
inline Var bce_loss(const Var& p, const Tensor& labels) {
  Tape& t = *p.tape;
  const Tensor& pv = p.value();
  if (pv.size() != labels.size()) {
    throw Error("bce_loss: shape mismatch " + shape_string(pv.shape()) + " vs " + shape_string(labels.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = std::clamp(pv[i], kProbClamp, 1.0 - kProbClamp);
    s -= labels[i] * std::log(q) + (1.0 - labels[i]) * std::log(1.0 - q);
  }
  const double n = static_cast<double>(pv.size());
  const std::size_t pi = p.id;
  return t.record(Tensor::scalar(s / n), t.requires_grad(p), [pi, labels, n](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& pv = tp.value(pi);
    Tensor& gp = tp.grad_ref(pi);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      if (pv[i] < kProbClamp || pv[i] > 1.0 - kProbClamp) continue;
      gp[i] += g[0] / n * (-labels[i] / pv[i] + (1.0 - labels[i]) / (1.0 - pv[i]));
    }
  });
}

/// Rows of a 2-D tensor selected by index.
inline Var gather_rows(const Var& a, std::vector<std::size_t> rows) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  if (x.rank() != 2) throw Error("gather_rows expects a matrix, got " + shape_string(x.shape()));
  const std::size_t d = x.dim(1);
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) throw Error("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(x.data() + rows[i] * d, d, out.data() + i * d);
  }
  const std::size_t ai = a.id;
  return t.record(std::move(out), t.requires_grad(a), [ai, rows = std::move(rows), d](Tape& tp, const Tensor& g, const Tensor&) {
    Tensor& ga = tp.grad_ref(ai);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t c = 0; c < d; ++c) ga[rows[i] * d + c] += g[i * d + c];
    }
  });
}

/// Sparse neighbourhood sum: out[dst] += h[src] for every (dst, src) link.
inline Var graph_propagate(const Var& h, std::vector<std::pair<std::size_t, std::size_t>> links) {
  Tape& t = *h.tape;
  const Tensor& x = h.value();
  if (x.rank() != 2) throw Error("graph_propagate expects a matrix, got " + shape_string(x.shape()));
  const std::size_t rows = x.dim(0), d = x.dim(1);
  Tensor out({rows, d});
  for (const auto& [dst, src] : links) {
    if (dst >= rows || src >= rows) throw Error("graph_propagate: link out of range");
    const double* s = x.data() + src * d;
    double* o = out.data() + dst * d;
    for (std::size_t c = 0; c < d; ++c) o[c] += s[c];
  }
  const std::size_t hi = h.id;
  return t.record(std::move(out), t.requires_grad(h),
                  [hi, links = std::move(links), d](Tape& tp, const Tensor& g, const Tensor&) {
                    Tensor& gh = tp.grad_ref(hi);
                    for (const auto& [dst, src] : links) {
                      for (std::size_t c = 0; c < d; ++c) gh[src * d + c] += g[dst * d + c];
                    }
                  });
}

// ---- sequence/graph primitives on [batch, series, time, channels] tensors ----

namespace detail {
inline void require_rank4(const char* op, const Tensor& x) {
  if (x.rank() != 4) throw Error(std::string(op) + " expects [batch, series, time, channels], got " +
                                 shape_string(x.shape()));
}
}  // namespace detail

/// out[..., t, :] = x[..., t - shift, :], zero where t < shift (causal delay).
inline Var time_shift(const Var& a, std::size_t shift) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  detail::require_rank4("time_shift", x);
  const std::size_t outer = x.dim(0) * x.dim(1), steps = x.dim(2), ch = x.dim(3);
  Tensor out(x.shape());
  if (shift < steps) {
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = x.data() + o * steps * ch;
      std::copy_n(src, (steps - shift) * ch, out.data() + (o * steps + shift) * ch);
    }
  }
  const std::size_t ai = a.id;
  return t.record(std::move(out), t.requires_grad(a), [ai, outer, steps, ch, shift](Tape& tp, const Tensor& g, const Tensor&) {
    if (shift >= steps) return;
    Tensor& ga = tp.grad_ref(ai);
    for (std::size_t o = 0; o < outer; ++o) {
      const double* gs = g.data() + (o * steps + shift) * ch;
      double* gd = ga.data() + o * steps * ch;
      for (std::size_t i = 0; i < (steps - shift) * ch; ++i) gd[i] += gs[i];
    }
  });
}

/// Mixes series: out[b, i] = sum_j A[i, j] * x[b, j] for A of shape [N, N].
inline Var node_mix(const Var& adj, const Var& a) {
  Tape& t = detail::same_tape(adj, a);
  const Tensor& A = adj.value();
  const Tensor& x = a.value();
  detail::require_rank4("node_mix", x);
  const std::size_t batch = x.dim(0), n = x.dim(1), inner = x.dim(2) * x.dim(3);
  if (A.rank() != 2 || A.dim(0) != n || A.dim(1) != n) {
    throw Error("node_mix: shape mismatch " + shape_string(A.shape()) + " vs " + shape_string(x.shape()));
  }
  Tensor out(x.shape());
  auto Am = detail::as_matrix(A, n, n);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::MutMap(out.data() + b * n * inner, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(inner))
        .noalias() = Am * detail::ConstMap(x.data() + b * n * inner, static_cast<Eigen::Index>(n),
                                             static_cast<Eigen::Index>(inner));
  }
  const std::size_t adj_i = adj.id, xi = a.id;
  return t.record(std::move(out), t.requires_grad(adj) || t.requires_grad(a),
                  [adj_i, xi, batch, n, inner](Tape& tp, const Tensor& g, const Tensor&) {
                    const auto N = static_cast<Eigen::Index>(n);
                    const auto K = static_cast<Eigen::Index>(inner);
                    auto Am = detail::as_matrix(tp.value(adj_i), n, n);
                    const Tensor& xv = tp.value(xi);
                    for (std::size_t b = 0; b < batch; ++b) {
                      detail::ConstMap gb(g.data() + b * n * inner, N, K);
                      if (tp.requires_grad(xi)) {
                        detail::MutMap(tp.grad_ref(xi).data() + b * n * inner, N, K).noalias() +=
                            Am.transpose() * gb;
                      }
                      if (tp.requires_grad(adj_i)) {
                        detail::as_matrix(tp.grad_ref(adj_i), n, n).noalias() +=
                            gb * detail::ConstMap(xv.data() + b * n * inner, N, K).transpose();
                      }
                    }
                  });
}

/// [B, N, P, H] <-> [B, P, N, H]
inline Var swap_series_time(const Var& a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  detail::require_rank4("swap_series_time", x);
  const std::size_t B = x.dim(0), N = x.dim(1), P = x.dim(2), H = x.dim(3);
  Tensor out({B, P, N, H});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t p = 0; p < P; ++p)
        std::copy_n(x.data() + ((b * N + i) * P + p) * H, H, out.data() + ((b * P + p) * N + i) * H);
  const std::size_t ai = a.id;
  return t.record(std::move(out), t.requires_grad(a), [ai, B, N, P, H](Tape& tp, const Tensor& g, const Tensor&) {
    Tensor& ga = tp.grad_ref(ai);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t p = 0; p < P; ++p) {
          const double* gs = g.data() + ((b * P + p) * N + i) * H;
          double* gd = ga.data() + ((b * N + i) * P + p) * H;
          for (std::size_t h = 0; h < H; ++h) gd[h] += gs[h];
        }
  });
}

/// Picks time step `step` of [B, N, P, H] -> [B, N, H].
inline Var select_time(const Var& a, std::size_t step) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  detail::require_rank4("select_time", x);
  const std::size_t outer = x.dim(0) * x.dim(1), P = x.dim(2), H = x.dim(3);
  if (step >= P) throw Error("select_time: step " + std::to_string(step) + " out of range");
  Tensor out({x.dim(0), x.dim(1), H});
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.data() + (o * P + step) * H, H, out.data() + o * H);
  const std::size_t ai = a.id;
  return t.record(std::move(out), t.requires_grad(a), [ai, outer, P, H, step](Tape& tp, const Tensor& g, const Tensor&) {
    Tensor& ga = tp.grad_ref(ai);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t h = 0; h < H; ++h) ga[(o * P + step) * H + h] += g[o * H + h];
  });
}

/// Single-head scaled dot-product attention over groups: q, k, v are [..., S, D];
/// attention runs along S independently for each leading index.
inline Var attention(const Var& q, const Var& k, const Var& v, bool causal) {
  Tape& t = detail::same_tape(q, k);
  detail::same_tape(q, v);
  const Tensor& qv = q.value();
  if (qv.rank() < 2 || k.shape() != qv.shape() || v.shape() != qv.shape()) {
    throw Error("attention: shape mismatch " + shape_string(qv.shape()) + " vs " + shape_string(k.shape()) +
                " vs " + shape_string(v.shape()));
  }
  const std::size_t S = qv.dim(qv.rank() - 2), D = qv.cols();
  const std::size_t groups = qv.size() / (S * D);
  const double inv = 1.0 / std::sqrt(static_cast<double>(D));
  const auto Si = static_cast<Eigen::Index>(S), Di = static_cast<Eigen::Index>(D);
  auto probs = std::make_shared<std::vector<double>>(groups * S * S);
  Tensor out(qv.shape());
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    const std::size_t off = gidx * S * D;
    detail::ConstMap Q(qv.data() + off, Si, Di), K(kv.data() + off, Si, Di), V(vv.data() + off, Si, Di);
    detail::MutMap A(probs->data() + gidx * S * S, Si, Si);
    A.noalias() = (Q * K.transpose()) * inv;
    for (Eigen::Index i = 0; i < Si; ++i) {
      const Eigen::Index last = causal ? i : Si - 1;
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j <= last; ++j) mx = std::max(mx, A(i, j));
      double s = 0.0;
      for (Eigen::Index j = 0; j < Si; ++j) {
        A(i, j) = j <= last ? std::exp(A(i, j) - mx) : 0.0;
        s += A(i, j);
      }
      A.row(i) /= s;
    }
    detail::MutMap(out.data() + off, Si, Di).noalias() = A * V;
  }
  const std::size_t qi = q.id, ki = k.id, vi = v.id;
  const bool needs = t.requires_grad(q) || t.requires_grad(k) || t.requires_grad(v);
  return t.record(std::move(out), needs, [qi, ki, vi, groups, S, D, inv, probs](Tape& tp, const Tensor& g, const Tensor&) {
    const auto Si = static_cast<Eigen::Index>(S), Di = static_cast<Eigen::Index>(D);
    const Tensor& qv = tp.value(qi);
    const Tensor& kv = tp.value(ki);
    const Tensor& vv = tp.value(vi);
    detail::RowMat dA(Si, Si), dS(Si, Si);
    for (std::size_t gidx = 0; gidx < groups; ++gidx) {
      const std::size_t off = gidx * S * D;
      detail::ConstMap Q(qv.data() + off, Si, Di), K(kv.data() + off, Si, Di), V(vv.data() + off, Si, Di);
      detail::ConstMap G(g.data() + off, Si, Di);
      detail::ConstMap A(probs->data() + gidx * S * S, Si, Si);
      if (tp.requires_grad(vi)) {
        detail::MutMap(tp.grad_ref(vi).data() + off, Si, Di).noalias() += A.transpose() * G;
      }
      dA.noalias() = G * V.transpose();
      for (Eigen::Index i = 0; i < Si; ++i) {
        const double dot = dA.row(i).dot(A.row(i));
        for (Eigen::Index j = 0; j < Si; ++j) dS(i, j) = A(i, j) * (dA(i, j) - dot) * inv;
      }
      if (tp.requires_grad(qi)) detail::MutMap(tp.grad_ref(qi).data() + off, Si, Di).noalias() += dS * K;
      if (tp.requires_grad(ki)) {
        detail::MutMap(tp.grad_ref(ki).data() + off, Si, Di).noalias() += dS.transpose() * Q;
      }
    }
  });
}

}  // namespace ctsearch::ad

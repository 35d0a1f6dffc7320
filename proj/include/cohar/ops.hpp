#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cohar/tensor.hpp"

// Differentiable operators over [batch, channels, time] tensors. Each operator
// computes its result eagerly; when any input is attached to a tape, the result
// is recorded there together with a backward rule.
namespace cohar::ops {

namespace detail {

inline void expect_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         (t.defined() ? ", got " + shape_str(t.shape()) : ", got undefined tensor"));
  }
}

inline bool needs_grad(Tape* tape, const Tensor& t) { return tape != nullptr && tape->tracks(t); }

}  // namespace detail

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

}  // namespace detail

/// y[b,o,t] = bias[o] + sum_{c,j} x[b,c,t*stride + j - pad] * w[o,c,j], zero padded.
/// Evaluated as one matrix product of the [Cout, Cin*k] weights with the
/// unfolded input [Cin*k, B*T'].
inline Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride = 1,
                     std::size_t pad = 0) {
  detail::expect_rank(x, 3, "conv1d", "input");
  detail::expect_rank(w, 3, "conv1d", "weight");
  detail::expect_rank(bias, 1, "conv1d", "bias");
  const std::size_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const std::size_t Cout = w.dim(0), K = w.dim(2);
  if (w.dim(1) != Cin) {
    throw DimensionError("conv1d: input has " + std::to_string(Cin) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
  }
  if (bias.dim(0) != Cout) throw DimensionError("conv1d: bias length does not match output channels");
  if (stride == 0) throw GeometryError("conv1d: stride must be positive");
  if (K > T + 2 * pad) {
    throw GeometryError("conv1d: kernel " + std::to_string(K) + " longer than padded input " +
                        std::to_string(T + 2 * pad));
  }
  const std::size_t To = (T + 2 * pad - K) / stride + 1;
  const std::size_t N = B * To;
  const auto rows = static_cast<Eigen::Index>(Cin * K), cols = static_cast<Eigen::Index>(N);

  // Unfolded input: row c*K + j, column b*To + t holds x[b, c, t*stride + j - pad].
  auto unfolded = std::make_shared<detail::RowMatrix>(rows, cols);
  {
    const double* xp = x.data().data();
    for (std::size_t c = 0; c < Cin; ++c) {
      for (std::size_t j = 0; j < K; ++j) {
        double* row = unfolded->data() + (c * K + j) * N;
        for (std::size_t b = 0; b < B; ++b) {
          const double* xrow = xp + (b * Cin + c) * T;
          for (std::size_t t = 0; t < To; ++t) {
            const std::size_t pos = t * stride + j;
            row[b * To + t] = (pos >= pad && pos - pad < T) ? xrow[pos - pad] : 0.0;
          }
        }
      }
    }
  }
  detail::ConstRowMap wm(w.data().data(), static_cast<Eigen::Index>(Cout), rows);
  const detail::RowMatrix prod = wm * (*unfolded);
  Tensor y({B, Cout, To});
  {
    double* yp = y.data().data();
    const double* bp = bias.data().data();
    for (std::size_t o = 0; o < Cout; ++o) {
      const double* prow = prod.data() + o * N;
      for (std::size_t b = 0; b < B; ++b) {
        double* yrow = yp + (b * Cout + o) * To;
        for (std::size_t t = 0; t < To; ++t) yrow[t] = prow[b * To + t] + bp[o];
      }
    }
  }

  Tape* tape = common_tape({&x, &w, &bias});
  if (!tape) return y;
  const bool gx = detail::needs_grad(tape, x), gw = detail::needs_grad(tape, w),
             gb = detail::needs_grad(tape, bias);
  return tape->record(
      "conv1d", y, {&x, &w, &bias},
      [=, x = x.detached(), w = w.detached(), bias = bias.detached(), y = y.detached()]() mutable {
        detail::RowMatrix dprod(static_cast<Eigen::Index>(Cout), cols);
        const double* dy = y.grad().data();
        for (std::size_t o = 0; o < Cout; ++o) {
          double* drow = dprod.data() + o * N;
          for (std::size_t b = 0; b < B; ++b) std::copy_n(dy + (b * Cout + o) * To, To, drow + b * To);
        }
        if (gb) {
          auto db = bias.grad();
          for (std::size_t o = 0; o < Cout; ++o) db[o] += dprod.row(static_cast<Eigen::Index>(o)).sum();
        }
        if (gw) {
          detail::RowMap dw(w.grad().data(), static_cast<Eigen::Index>(Cout), rows);
          dw.noalias() += dprod * unfolded->transpose();
        }
        if (gx) {
          const detail::RowMatrix dcols = detail::ConstRowMap(w.data().data(), static_cast<Eigen::Index>(Cout), rows).transpose() * dprod;
          double* dx = x.grad().data();
          for (std::size_t c = 0; c < Cin; ++c) {
            for (std::size_t j = 0; j < K; ++j) {
              const double* row = dcols.data() + (c * K + j) * N;
              for (std::size_t b = 0; b < B; ++b) {
                double* dxrow = dx + (b * Cin + c) * T;
                for (std::size_t t = 0; t < To; ++t) {
                  const std::size_t pos = t * stride + j;
                  if (pos >= pad && pos - pad < T) dxrow[pos - pad] += row[b * To + t];
                }
              }
            }
          }
        }
      });
}

/// Transposed convolution without padding: y[b,o,t*stride + j] += x[b,c,t] * w[c,o,j],
/// output length (T-1)*stride + k. The linear part is the adjoint of conv1d
/// with the same weight array and geometry.
inline Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride) {
  detail::expect_rank(x, 3, "conv_transpose1d", "input");
  detail::expect_rank(w, 3, "conv_transpose1d", "weight");
  detail::expect_rank(bias, 1, "conv_transpose1d", "bias");
  const std::size_t B = x.dim(0), Cin = x.dim(1), T = x.dim(2);
  const std::size_t Cout = w.dim(1), K = w.dim(2);
  if (w.dim(0) != Cin) {
    throw DimensionError("conv_transpose1d: input has " + std::to_string(Cin) + " channels, weight expects " +
                         std::to_string(w.dim(0)));
  }
  if (bias.dim(0) != Cout) throw DimensionError("conv_transpose1d: bias length does not match output channels");
  if (stride == 0) throw GeometryError("conv_transpose1d: stride must be positive");
  const std::size_t To = (T - 1) * stride + K;
  const std::size_t N = B * T;
  const auto cin = static_cast<Eigen::Index>(Cin), cols = static_cast<Eigen::Index>(N);
  const auto outk = static_cast<Eigen::Index>(Cout * K);

  // Input as [Cin, B*T].
  auto flat = std::make_shared<detail::RowMatrix>(cin, cols);
  {
    const double* xp = x.data().data();
    for (std::size_t c = 0; c < Cin; ++c) {
      for (std::size_t b = 0; b < B; ++b) std::copy_n(xp + (b * Cin + c) * T, T, flat->data() + c * N + b * T);
    }
  }
  detail::ConstRowMap wm(w.data().data(), cin, outk);
  const detail::RowMatrix prod = wm.transpose() * (*flat);  // [Cout*K, B*T]
  Tensor y({B, Cout, To});
  {
    double* yp = y.data().data();
    const double* bp = bias.data().data();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < Cout; ++o) std::fill_n(yp + (b * Cout + o) * To, To, bp[o]);
    }
    for (std::size_t o = 0; o < Cout; ++o) {
      for (std::size_t j = 0; j < K; ++j) {
        const double* prow = prod.data() + (o * K + j) * N;
        for (std::size_t b = 0; b < B; ++b) {
          double* yrow = yp + (b * Cout + o) * To;
          for (std::size_t t = 0; t < T; ++t) yrow[t * stride + j] += prow[b * T + t];
        }
      }
    }
  }

  Tape* tape = common_tape({&x, &w, &bias});
  if (!tape) return y;
  const bool gx = detail::needs_grad(tape, x), gw = detail::needs_grad(tape, w),
             gb = detail::needs_grad(tape, bias);
  return tape->record(
      "conv_transpose1d", y, {&x, &w, &bias},
      [=, x = x.detached(), w = w.detached(), bias = bias.detached(), y = y.detached()]() mutable {
        const double* dy = y.grad().data();
        if (gb) {
          auto db = bias.grad();
          for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t o = 0; o < Cout; ++o) {
              const double* dyrow = dy + (b * Cout + o) * To;
              double s = 0.0;
              for (std::size_t t = 0; t < To; ++t) s += dyrow[t];
              db[o] += s;
            }
          }
        }
        if (!gw && !gx) return;
        detail::RowMatrix dprod(outk, cols);
        for (std::size_t o = 0; o < Cout; ++o) {
          for (std::size_t j = 0; j < K; ++j) {
            double* drow = dprod.data() + (o * K + j) * N;
            for (std::size_t b = 0; b < B; ++b) {
              const double* dyrow = dy + (b * Cout + o) * To;
              for (std::size_t t = 0; t < T; ++t) drow[b * T + t] = dyrow[t * stride + j];
            }
          }
        }
        if (gw) {
          detail::RowMap dw(w.grad().data(), cin, outk);
          dw.noalias() += (*flat) * dprod.transpose();
        }
        if (gx) {
          const detail::RowMatrix dflat = detail::ConstRowMap(w.data().data(), cin, outk) * dprod;
          double* dx = x.grad().data();
          for (std::size_t c = 0; c < Cin; ++c) {
            for (std::size_t b = 0; b < B; ++b) {
              double* dxrow = dx + (b * Cin + c) * T;
              const double* src = dflat.data() + c * N + b * T;
              for (std::size_t t = 0; t < T; ++t) dxrow[t] += src[t];
            }
          }
        }
      });
}

/// Max over disjoint windows along time. The gradient goes to the first
/// maximal element of each window.
inline Tensor maxpool1d(const Tensor& x, std::size_t window = 2) {
  detail::expect_rank(x, 3, "maxpool1d", "input");
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  if (window == 0 || T % window != 0) {
    throw GeometryError("maxpool1d: time length " + std::to_string(T) + " not divisible by window " +
                        std::to_string(window));
  }
  const std::size_t To = T / window;
  Tensor y({B, C, To});
  std::vector<std::size_t> arg(B * C * To);
  const double* xp = x.data().data();
  double* yp = y.data().data();
  for (std::size_t r = 0; r < B * C; ++r) {
    for (std::size_t t = 0; t < To; ++t) {
      std::size_t best = r * T + t * window;
      for (std::size_t j = 1; j < window; ++j) {
        const std::size_t i = r * T + t * window + j;
        if (xp[i] > xp[best]) best = i;
      }
      arg[r * To + t] = best;
      yp[r * To + t] = xp[best];
    }
  }
  Tape* tape = common_tape({&x});
  if (!tape) return y;
  return tape->record("maxpool1d", y, {&x},
                      [x = x.detached(), y = y.detached(), arg = std::move(arg)]() mutable {
                        auto dx = x.grad();
                        auto dy = y.grad();
                        for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += dy[i];
                      });
}

inline Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  auto xs = x.data();
  auto ys = y.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > 0.0 ? xs[i] : 0.0;
  Tape* tape = common_tape({&x});
  if (!tape) return y;
  return tape->record("relu", y, {&x}, [x = x.detached(), y = y.detached()]() mutable {
    auto xs = x.data();
    auto dx = x.grad();
    auto dy = y.grad();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i] > 0.0) dx[i] += dy[i];
    }
  });
}

/// out[b,:,t] = W^T onehot[b,:,t] for W of shape [C, E]. Accepts any
/// non-negative column weights, so relaxed (soft) one-hots also work.
inline Tensor embedding_lookup(const Tensor& table, const Tensor& onehot) {
  detail::expect_rank(table, 2, "embedding_lookup", "table");
  detail::expect_rank(onehot, 3, "embedding_lookup", "one-hot input");
  const std::size_t C = table.dim(0), E = table.dim(1);
  const std::size_t B = onehot.dim(0), T = onehot.dim(2);
  if (onehot.dim(1) != C) {
    throw DimensionError("embedding_lookup: input has " + std::to_string(onehot.dim(1)) +
                         " classes, table has " + std::to_string(C));
  }
  Tensor y({B, E, T});
  const double* wp = table.data().data();
  const double* hp = onehot.data().data();
  double* yp = y.data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* hrow = hp + (b * C + c) * T;
      for (std::size_t e = 0; e < E; ++e) {
        const double wv = wp[c * E + e];
        double* yrow = yp + (b * E + e) * T;
        for (std::size_t t = 0; t < T; ++t) yrow[t] += wv * hrow[t];
      }
    }
  }
  Tape* tape = common_tape({&table, &onehot});
  if (!tape) return y;
  const bool gw = detail::needs_grad(tape, table), gh = detail::needs_grad(tape, onehot);
  return tape->record("embedding_lookup", y, {&table, &onehot},
                      [=, table = table.detached(), onehot = onehot.detached(), y = y.detached()]() mutable {
                        const double* wp = table.data().data();
                        const double* hp = onehot.data().data();
                        const double* dy = y.grad().data();
                        double* dw = gw ? table.grad().data() : nullptr;
                        double* dh = gh ? onehot.grad().data() : nullptr;
                        for (std::size_t b = 0; b < B; ++b) {
                          for (std::size_t c = 0; c < C; ++c) {
                            const double* hrow = hp + (b * C + c) * T;
                            for (std::size_t e = 0; e < E; ++e) {
                              const double* dyrow = dy + (b * E + e) * T;
                              if (dw) {
                                double s = 0.0;
                                for (std::size_t t = 0; t < T; ++t) s += hrow[t] * dyrow[t];
                                dw[c * E + e] += s;
                              }
                              if (dh) {
                                const double wv = wp[c * E + e];
                                double* dhrow = dh + (b * C + c) * T;
                                for (std::size_t t = 0; t < T; ++t) dhrow[t] += wv * dyrow[t];
                              }
                            }
                          }
                        }
                      });
}

/// Mean over (b, t) of -log softmax(logits[b,:,t])[target[b,t]], evaluated
/// with the per-column max subtracted. `targets` is row-major [B, T].
inline Tensor cross_entropy_dense(const Tensor& logits, std::span<const int> targets) {
  detail::expect_rank(logits, 3, "cross_entropy_dense", "logits");
  const std::size_t B = logits.dim(0), C = logits.dim(1), T = logits.dim(2);
  if (targets.size() != B * T) {
    throw DimensionError("cross_entropy_dense: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_str(logits.shape()));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= C) {
      throw LabelError("cross_entropy_dense: target " + std::to_string(targets[i]) + " at position " +
                       std::to_string(i) + " outside [0, " + std::to_string(C) + ")");
    }
  }
  const double* lp = logits.data().data();
  // Softmax probabilities kept for the backward rule.
  std::vector<double> prob(B * C * T);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, lp[(b * C + c) * T + t]);
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double e = std::exp(lp[(b * C + c) * T + t] - mx);
        prob[(b * C + c) * T + t] = e;
        z += e;
      }
      for (std::size_t c = 0; c < C; ++c) prob[(b * C + c) * T + t] /= z;
      const auto tgt = static_cast<std::size_t>(targets[b * T + t]);
      total += std::log(z) - (lp[(b * C + tgt) * T + t] - mx);
    }
  }
  const double n = static_cast<double>(B * T);
  Tensor loss({1}, total / n);
  Tape* tape = common_tape({&logits});
  if (!tape) return loss;
  return tape->record("cross_entropy_dense", loss, {&logits},
                      [=, logits = logits.detached(), loss = loss.detached(), prob = std::move(prob),
                       tg = std::vector<int>(targets.begin(), targets.end())]() mutable {
                        const double g = loss.grad()[0] / n;
                        auto dl = logits.grad();
                        for (std::size_t b = 0; b < B; ++b) {
                          for (std::size_t c = 0; c < C; ++c) {
                            for (std::size_t t = 0; t < T; ++t) {
                              const std::size_t i = (b * C + c) * T + t;
                              const double hit = static_cast<std::size_t>(tg[b * T + t]) == c ? 1.0 : 0.0;
                              dl[i] += g * (prob[i] - hit);
                            }
                          }
                        }
                      });
}

/// Channel-axis concatenation of [B, C_i, T] tensors in the given order.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_channels: nothing to concatenate");
  for (const auto& p : parts) detail::expect_rank(p, 3, "concat_channels", "part");
  const std::size_t B = parts[0].dim(0), T = parts[0].dim(2);
  std::size_t C = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != B || p.dim(2) != T) {
      throw DimensionError("concat_channels: part " + shape_str(p.shape()) + " incompatible with batch " +
                           std::to_string(B) + " and time " + std::to_string(T));
    }
    C += p.dim(1);
  }
  Tensor y({B, C, T});
  double* yp = y.data().data();
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t Ci = p.dim(1);
    const double* pp = p.data().data();
    for (std::size_t b = 0; b < B; ++b) {
      std::copy(pp + b * Ci * T, pp + (b + 1) * Ci * T, yp + (b * C + off) * T);
    }
    off += Ci;
  }
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    if (p.tape()) {
      if (tape && tape != p.tape()) throw ContractError("concat_channels mixes tensors from different tapes");
      tape = p.tape();
    }
  }
  if (!tape) return y;
  std::vector<Tensor> tracked;
  std::vector<std::size_t> tracked_off;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (tape->tracks(parts[i])) {
      tracked.push_back(parts[i].detached());
      tracked_off.push_back(offsets[i]);
    }
  }
  Tape::BackwardFn fn = [=, y = y.detached()]() mutable {
    const double* dy = y.grad().data();
    for (std::size_t i = 0; i < tracked.size(); ++i) {
      const std::size_t Ci = tracked[i].dim(1);
      double* dp = tracked[i].grad().data();
      for (std::size_t b = 0; b < B; ++b) {
        const double* src = dy + (b * C + tracked_off[i]) * T;
        double* dst = dp + b * Ci * T;
        for (std::size_t k = 0; k < Ci * T; ++k) dst[k] += src[k];
      }
    }
  };
  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return tape->record_many("concat_channels", y, ptrs, std::move(fn));
}

/// Channels [begin, end) of a [B, C, T] tensor.
inline Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::expect_rank(x, 3, "slice_channels", "input");
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  if (begin >= end || end > C) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + std::to_string(C) + " channels");
  }
  const std::size_t Cs = end - begin;
  Tensor y({B, Cs, T});
  const double* xp = x.data().data();
  double* yp = y.data().data();
  for (std::size_t b = 0; b < B; ++b) std::copy(xp + (b * C + begin) * T, xp + (b * C + end) * T, yp + b * Cs * T);
  Tape* tape = common_tape({&x});
  if (!tape) return y;
  return tape->record("slice_channels", y, {&x}, [=, x = x.detached(), y = y.detached()]() mutable {
    double* dx = x.grad().data();
    const double* dy = y.grad().data();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t k = 0; k < Cs * T; ++k) dx[(b * C + begin) * T + k] += dy[b * Cs * T + k];
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  Tensor y(a.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  Tape* tape = common_tape({&a, &b});
  if (!tape) return y;
  const bool ga = detail::needs_grad(tape, a), gb = detail::needs_grad(tape, b);
  return tape->record("add", y, {&a, &b}, [=, a = a.detached(), b = b.detached(), y = y.detached()]() mutable {
    auto dy = y.grad();
    if (ga) {
      auto da = a.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
    }
    if (gb) {
      auto db = b.grad();
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
    }
  });
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y({1}, s);
  Tape* tape = common_tape({&x});
  if (!tape) return y;
  return tape->record("sum", y, {&x}, [x = x.detached(), y = y.detached()]() mutable {
    const double g = y.grad()[0];
    for (double& d : x.grad()) d += g;
  });
}

/// sum_i x[i] * weights[i]; the weights are treated as constants.
inline Tensor weighted_sum(const Tensor& x, const Tensor& weights) {
  if (x.shape() != weights.shape()) {
    throw DimensionError("weighted_sum: shapes " + shape_str(x.shape()) + " and " + shape_str(weights.shape()) +
                         " differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * weights[i];
  Tensor y({1}, s);
  Tape* tape = common_tape({&x});
  if (!tape) return y;
  return tape->record("weighted_sum", y, {&x},
                      [x = x.detached(), w = weights.detached(), y = y.detached()]() mutable {
                        const double g = y.grad()[0];
                        auto dx = x.grad();
                        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * w[i];
                      });
}

}  // namespace cohar::ops

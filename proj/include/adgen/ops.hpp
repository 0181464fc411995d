#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "adgen/tensor.hpp"
#include "adgen/threading.hpp"

namespace adgen {

using TokenId = std::int32_t;

// ---------------------------------------------------------------------------
// Matmul kernels. Every output element reduces in a fixed order (sequential
// over the contraction index), and parallel workers own disjoint output rows,
// so results do not depend on the parallel split.
// ---------------------------------------------------------------------------

namespace detail {

template <bool Acc, typename S>
void mm_nn(S* c, const S* a, const S* b, Index m, Index k, Index n) {
  parallel_for(m, [=](Index i0, Index i1) {
    for (Index i = i0; i < i1; ++i) {
      ArrayMap<S> crow(c + i * n, n);
      if constexpr (!Acc) crow.setZero();
      const S* arow = a + i * k;
      for (Index kk = 0; kk < k; ++kk) {
        ConstArrayMap<S> brow(b + kk * n, n);
        crow += arow[kk] * brow;
      }
    }
  });
}

// c[m,n] (+)= a[m,k] * b[n,k]^T
template <bool Acc, typename S>
void mm_nt(S* c, const S* a, const S* b, Index m, Index k, Index n) {
  parallel_for(m, [=](Index i0, Index i1) {
    for (Index i = i0; i < i1; ++i) {
      ConstVecMap<S> arow(a + i * k, k);
      S* crow = c + i * n;
      for (Index j = 0; j < n; ++j) {
        ConstVecMap<S> brow(b + j * k, k);
        const S dot = arow.dot(brow);
        if constexpr (Acc)
          crow[j] += dot;
        else
          crow[j] = dot;
      }
    }
  });
}

// c[k,n] (+)= a[m,k]^T * b[m,n]; blocked over k rows for B-row reuse.
template <bool Acc, typename S>
void mm_tn(S* c, const S* a, const S* b, Index m, Index k, Index n) {
  constexpr Index kBlock = 16;
  const Index blocks = (k + kBlock - 1) / kBlock;
  parallel_for(blocks, [=](Index b0, Index b1) {
    for (Index blk = b0; blk < b1; ++blk) {
      const Index k0 = blk * kBlock;
      const Index k1 = std::min(k, k0 + kBlock);
      if constexpr (!Acc) {
        for (Index kk = k0; kk < k1; ++kk) ArrayMap<S>(c + kk * n, n).setZero();
      }
      for (Index i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        ConstArrayMap<S> brow(b + i * n, n);
        for (Index kk = k0; kk < k1; ++kk) ArrayMap<S>(c + kk * n, n) += arow[kk] * brow;
      }
    }
  });
}

inline double gelu_tanh(double x) {
  // tanh approximation with fixed constants; keeps checkpoints portable.
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kCubic * x * x * x)));
}

inline double gelu_tanh_grad(double x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  constexpr double kCubic = 0.044715;
  const double u = kSqrt2OverPi * (x + kCubic * x * x * x);
  const double t = std::tanh(u);
  const double du = kSqrt2OverPi * (1.0 + 3.0 * kCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  if (a.size(1) != b.size(0))
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  const Index m = a.size(0), k = a.size(1), n = b.size(1);
  Tensor<S> out({m, n});
  detail::mm_nn<false>(out.data(), a.data(), b.data(), m, k, n);
  check_finite(out, "matmul");

  if (track_output(tape, out, a.requires_grad() || b.requires_grad())) {
    tape->record([a = a, b = b, out, m, k, n]() mutable {
      if (a.requires_grad()) detail::mm_nt<true>(a.grad(), out.grad(), b.data(), m, n, k);
      if (b.requires_grad()) detail::mm_tn<true>(b.grad(), a.data(), out.grad(), m, k, n);
    });
  }
  return out;
}

// a[m,k] times b transposed, where b is stored [n,k]. Lets a row-major
// embedding table double as the output head without materializing a transpose.
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(1))
    throw ShapeError("matmul_nt expects [m,k] and [n,k], got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const Index m = a.size(0), k = a.size(1), n = b.size(0);
  Tensor<S> out({m, n});
  detail::mm_nt<false>(out.data(), a.data(), b.data(), m, k, n);
  check_finite(out, "matmul_nt");

  if (track_output(tape, out, a.requires_grad() || b.requires_grad())) {
    tape->record([a = a, b = b, out, m, k, n]() mutable {
      if (a.requires_grad()) detail::mm_nn<true>(a.grad(), out.grad(), b.data(), m, n, k);
      if (b.requires_grad()) detail::mm_tn<true>(b.grad(), out.grad(), a.data(), m, n, k);
    });
  }
  return out;
}

// Concatenates rank-3 tensors along the block dimension; gradient slices flow
// back to each part.
template <typename S>
Tensor<S> stack_first(const std::vector<Tensor<S>>& parts, Tape<S>* tape = nullptr) {
  if (parts.empty()) throw ShapeError("stack_first needs at least one tensor");
  Index blocks = 0;
  bool any_grad = false;
  for (const Tensor<S>& p : parts) {
    if (p.rank() != 3 || p.size(1) != parts[0].size(1) || p.size(2) != parts[0].size(2))
      throw ShapeError("stack_first parts must share trailing extents");
    blocks += p.size(0);
    any_grad = any_grad || p.requires_grad();
  }
  const Index rows = parts[0].size(1), cols = parts[0].size(2);
  Tensor<S> out({blocks, rows, cols});
  Index at = 0;
  for (const Tensor<S>& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + at);
    at += p.numel();
  }
  if (track_output(tape, out, any_grad)) {
    tape->record([parts = parts, out]() mutable {
      Index at = 0;
      for (Tensor<S>& p : parts) {
        if (p.requires_grad())
          ArrayMap<S>(p.grad(), p.numel()) += ConstArrayMap<S>(out.grad() + at, p.numel());
        at += p.numel();
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
  if (!a.same_shape(b))
    throw ShapeError("add shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<S> out(a.shape());
  out.array() = a.array() + b.array();
  check_finite(out, "add");
  if (track_output(tape, out, a.requires_grad() || b.requires_grad())) {
    tape->record([a = a, b = b, out]() mutable {
      if (a.requires_grad()) a.grad_array() += out.grad_array();
      if (b.requires_grad()) b.grad_array() += out.grad_array();
    });
  }
  return out;
}

// Adds bias to pre-softmax logits, masks key > query with -inf, then row
// softmax. logits is [g, n, n] with blocks laid out batch-major, head-minor
// (g = batch*heads + head); bias is [gb, n, n] or an undefined tensor for no
// bias. Logit block g reads bias block (g / bias_inner) % gb, which covers
// the layouts in use: per-head bias shared across the batch (gb = heads,
// bias_inner = 1), per-sequence bias shared across heads (gb = batch,
// bias_inner = heads), and fully per-block bias (gb = g, bias_inner = 1).
// Masked entries are exactly zero in the output.
template <typename S>
Tensor<S> biased_causal_softmax(const Tensor<S>& logits, const Tensor<S>& bias,
                                Tape<S>* tape = nullptr, Index bias_inner = 1) {
  if (logits.rank() != 3 || logits.size(1) != logits.size(2))
    throw ShapeError("biased_causal_softmax expects [g,n,n] logits, got " +
                     shape_str(logits.shape()));
  const Index g = logits.size(0), n = logits.size(1);
  const bool has_bias = bias.defined();
  Index gb = 0;
  if (has_bias) {
    if (bias.rank() != 3 || bias.size(1) != n || bias.size(2) != n)
      throw ShapeError("bias shape " + shape_str(bias.shape()) + " incompatible with logits " +
                       shape_str(logits.shape()));
    gb = bias.size(0);
    if (bias_inner < 1 || g % (gb * bias_inner) != 0)
      throw ShapeError("bias blocks * inner repeat must divide logit blocks");
  }

  Tensor<S> out(logits.shape());
  parallel_for(g * n, [&](Index r0, Index r1) {
    for (Index r = r0; r < r1; ++r) {
      const Index blk = r / n, i = r % n;
      const S* lrow = logits.data() + r * n;
      const S* brow = has_bias ? bias.data() + (((blk / bias_inner) % gb) * n + i) * n : nullptr;
      S* orow = out.data() + r * n;
      const Index valid = i + 1;  // causal: keys 0..i
      S maxv = lrow[0] + (brow ? brow[0] : S(0));
      for (Index j = 1; j < valid; ++j) {
        const S v = lrow[j] + (brow ? brow[j] : S(0));
        if (v > maxv) maxv = v;
      }
      S sum = S(0);
      for (Index j = 0; j < valid; ++j) {
        const S v = std::exp(lrow[j] + (brow ? brow[j] : S(0)) - maxv);
        orow[j] = v;
        sum += v;
      }
      const S inv = S(1) / sum;
      for (Index j = 0; j < valid; ++j) orow[j] *= inv;
      for (Index j = valid; j < n; ++j) orow[j] = S(0);
    }
  });
  check_finite(out, "biased_causal_softmax");

  if (track_output(tape, out, logits.requires_grad() || (has_bias && bias.requires_grad()))) {
    Tensor<S> b = bias;
    tape->record([logits = logits, b, out, g, n, gb, bias_inner]() mutable {
      const bool bias_grad = b.defined() && b.requires_grad();
      const bool logit_grad = logits.requires_grad();
      // Bias gradients accumulate over broadcast blocks in fixed block order.
      for (Index r = 0; r < g * n; ++r) {
        const Index blk = r / n, i = r % n;
        const S* p = out.data() + r * n;
        const S* go = out.grad() + r * n;
        const Index valid = i + 1;
        S inner = S(0);
        for (Index j = 0; j < valid; ++j) inner += go[j] * p[j];
        for (Index j = 0; j < valid; ++j) {
          const S d = p[j] * (go[j] - inner);
          if (logit_grad) logits.grad()[r * n + j] += d;
          if (bias_grad) b.grad()[(((blk / bias_inner) % gb) * n + i) * n + j] += d;
        }
      }
    });
  }
  return out;
}

// x / sqrt(mean(x^2) + eps) * gain along the last dim.
template <typename S>
Tensor<S> rmsnorm(const Tensor<S>& x, const Tensor<S>& gain, S eps, Tape<S>* tape = nullptr) {
  if (x.rank() < 1 || gain.rank() != 1)
    throw ShapeError("rmsnorm expects x[...,d], gain[d]");
  const Index d = x.shape().back();
  if (gain.size(0) != d)
    throw ShapeError("rmsnorm gain extent " + shape_str(gain.shape()) +
                     " does not match last dim of " + shape_str(x.shape()));
  const Index rows = x.numel() / d;
  Tensor<S> out(x.shape());
  Tensor<S> inv_rms({rows});
  parallel_for(rows, [&](Index r0, Index r1) {
    for (Index r = r0; r < r1; ++r) {
      const S* xr = x.data() + r * d;
      S ms = S(0);
      for (Index j = 0; j < d; ++j) ms += xr[j] * xr[j];
      const S inv = S(1) / std::sqrt(ms / static_cast<S>(d) + eps);
      inv_rms[r] = inv;
      S* orow = out.data() + r * d;
      for (Index j = 0; j < d; ++j) orow[j] = xr[j] * inv * gain[j];
    }
  });
  check_finite(out, "rmsnorm");

  if (track_output(tape, out, x.requires_grad() || gain.requires_grad())) {
    tape->record([x = x, gain = gain, out, inv_rms, rows, d]() mutable {
      for (Index r = 0; r < rows; ++r) {
        const S* xr = x.data() + r * d;
        const S* go = out.grad() + r * d;
        const S inv = inv_rms[r];
        if (gain.requires_grad())
          for (Index j = 0; j < d; ++j) gain.grad()[j] += go[j] * xr[j] * inv;
        if (x.requires_grad()) {
          S dot = S(0);
          for (Index j = 0; j < d; ++j) dot += go[j] * gain[j] * xr[j];
          const S scale = dot * inv * inv * inv / static_cast<S>(d);
          S* gx = x.grad() + r * d;
          for (Index j = 0; j < d; ++j) gx[j] += go[j] * gain[j] * inv - xr[j] * scale;
        }
      }
    });
  }
  return out;
}

// gelu(u) ⊙ v, elementwise; the gating half of GeGLU.
template <typename S>
Tensor<S> gelu_gate(const Tensor<S>& u, const Tensor<S>& v, Tape<S>* tape = nullptr) {
  if (!u.same_shape(v))
    throw ShapeError("gelu_gate shapes differ: " + shape_str(u.shape()) + " vs " +
                     shape_str(v.shape()));
  Tensor<S> out(u.shape());
  const Index n = u.numel();
  parallel_for(n, [&](Index i0, Index i1) {
    for (Index i = i0; i < i1; ++i)
      out[i] = static_cast<S>(detail::gelu_tanh(static_cast<double>(u[i]))) * v[i];
  });
  check_finite(out, "gelu_gate");
  if (track_output(tape, out, u.requires_grad() || v.requires_grad())) {
    tape->record([u = u, v = v, out, n]() mutable {
      for (Index i = 0; i < n; ++i) {
        const double ui = static_cast<double>(u[i]);
        const S go = out.grad()[i];
        if (u.requires_grad())
          u.grad()[i] += go * v[i] * static_cast<S>(detail::gelu_tanh_grad(ui));
        if (v.requires_grad()) v.grad()[i] += go * static_cast<S>(detail::gelu_tanh(ui));
      }
    });
  }
  return out;
}

// (gelu(xW) ⊙ xV) Wout
template <typename S>
Tensor<S> geglu_ffn(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& v,
                    const Tensor<S>& w_out, Tape<S>* tape = nullptr) {
  Tensor<S> gated = gelu_gate(matmul(x, w, tape), matmul(x, v, tape), tape);
  return matmul(gated, w_out, tape);
}

struct LossStats {
  double accuracy = 0.0;  // fraction of masked argmax hits
  Index masked = 0;
};

// Mean over masked positions of -log softmax(logits)[target]. Ties in the
// accuracy argmax resolve to the lowest token id.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<TokenId>& targets,
                        const std::vector<std::uint8_t>& mask, LossStats* stats = nullptr,
                        Tape<S>* tape = nullptr) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects [n,V] logits");
  const Index n = logits.size(0), vocab = logits.size(1);
  if (static_cast<Index>(targets.size()) != n || static_cast<Index>(mask.size()) != n)
    throw ShapeError("cross_entropy targets/mask length mismatch");

  Index n_masked = 0;
  Index hits = 0;
  double total = 0.0;
  std::vector<S> inv_probs;  // per masked row: log-sum-exp pieces for backward
  Tensor<S> lse({n});
  for (Index r = 0; r < n; ++r) {
    if (!mask[r]) continue;
    const TokenId t = targets[r];
    if (t < 0 || t >= vocab)
      throw ValueError("cross_entropy target out of range: " + std::to_string(t));
    const S* row = logits.data() + r * vocab;
    S maxv = row[0];
    Index arg = 0;
    for (Index j = 1; j < vocab; ++j)
      if (row[j] > maxv) {
        maxv = row[j];
        arg = j;
      }
    S sum = S(0);
    for (Index j = 0; j < vocab; ++j) sum += std::exp(row[j] - maxv);
    const S row_lse = maxv + std::log(sum);
    lse[r] = row_lse;
    total += static_cast<double>(row_lse - row[t]);
    if (arg == t) ++hits;
    ++n_masked;
  }
  if (n_masked == 0) throw ValueError("cross_entropy: empty mask");
  Tensor<S> loss = Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(n_masked)));
  check_finite(loss, "cross_entropy");
  if (stats) {
    stats->accuracy = static_cast<double>(hits) / static_cast<double>(n_masked);
    stats->masked = n_masked;
  }

  if (track_output(tape, loss, logits.requires_grad())) {
    const S inv_count = S(1) / static_cast<S>(n_masked);
    tape->record([logits = logits, targets, mask, loss, lse, n, vocab, inv_count]() mutable {
      const S g = loss.grad()[0] * inv_count;
      for (Index r = 0; r < n; ++r) {
        if (!mask[r]) continue;
        const S* row = logits.data() + r * vocab;
        S* grow = logits.grad() + r * vocab;
        const S row_lse = lse[r];
        for (Index j = 0; j < vocab; ++j) grow[j] += g * std::exp(row[j] - row_lse);
        grow[targets[r]] -= g;
      }
    });
  }
  return loss;
}

// Rows of the embedding table gathered by token id.
template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<TokenId>& ids,
                           Tape<S>* tape = nullptr) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup expects [V,d] table");
  const Index vocab = table.size(0), d = table.size(1);
  const Index n = static_cast<Index>(ids.size());
  Tensor<S> out({n, d});
  for (Index i = 0; i < n; ++i) {
    const TokenId t = ids[static_cast<size_t>(i)];
    if (t < 0 || t >= vocab)
      throw ValueError("embedding_lookup id out of range: " + std::to_string(t));
    ArrayMap<S>(out.data() + i * d, d) = ConstArrayMap<S>(table.data() + t * d, d);
  }
  if (track_output(tape, out, table.requires_grad())) {
    tape->record([table = table, ids, out, n, d]() mutable {
      // Scatter-add in position order; repeated ids stay deterministic.
      for (Index i = 0; i < n; ++i)
        ArrayMap<S>(table.grad() + ids[static_cast<size_t>(i)] * d, d) +=
            ConstArrayMap<S>(out.grad() + i * d, d);
    });
  }
  return out;
}

// [B*T, d] -> [B*H, T, dh] with head-major blocks per sequence.
template <typename S>
Tensor<S> split_heads(const Tensor<S>& x, Index batch, Index seq, Index heads,
                      Tape<S>* tape = nullptr) {
  if (x.rank() != 2 || x.size(0) != batch * seq || x.size(1) % heads != 0)
    throw ShapeError("split_heads shape mismatch for " + shape_str(x.shape()));
  const Index d = x.size(1), dh = d / heads;
  Tensor<S> out({batch * heads, seq, dh});
  parallel_for(batch * heads, [&](Index g0, Index g1) {
    for (Index g = g0; g < g1; ++g) {
      const Index b = g / heads, h = g % heads;
      for (Index t = 0; t < seq; ++t)
        ArrayMap<S>(out.data() + (g * seq + t) * dh, dh) =
            ConstArrayMap<S>(x.data() + (b * seq + t) * d + h * dh, dh);
    }
  });
  if (track_output(tape, out, x.requires_grad())) {
    tape->record([x = x, out, batch, seq, heads, d, dh]() mutable {
      for (Index g = 0; g < batch * heads; ++g) {
        const Index b = g / heads, h = g % heads;
        for (Index t = 0; t < seq; ++t)
          ArrayMap<S>(x.grad() + (b * seq + t) * d + h * dh, dh) +=
              ConstArrayMap<S>(out.grad() + (g * seq + t) * dh, dh);
      }
    });
  }
  return out;
}

// Inverse of split_heads: [B*H, T, dh] -> [B*T, d].
template <typename S>
Tensor<S> merge_heads(const Tensor<S>& x, Index batch, Index seq, Index heads,
                      Tape<S>* tape = nullptr) {
  if (x.rank() != 3 || x.size(0) != batch * heads || x.size(1) != seq)
    throw ShapeError("merge_heads shape mismatch for " + shape_str(x.shape()));
  const Index dh = x.size(2), d = dh * heads;
  Tensor<S> out({batch * seq, d});
  parallel_for(batch * heads, [&](Index g0, Index g1) {
    for (Index g = g0; g < g1; ++g) {
      const Index b = g / heads, h = g % heads;
      for (Index t = 0; t < seq; ++t)
        ArrayMap<S>(out.data() + (b * seq + t) * d + h * dh, dh) =
            ConstArrayMap<S>(x.data() + (g * seq + t) * dh, dh);
    }
  });
  if (track_output(tape, out, x.requires_grad())) {
    tape->record([x = x, out, batch, seq, heads, d, dh]() mutable {
      for (Index g = 0; g < batch * heads; ++g) {
        const Index b = g / heads, h = g % heads;
        for (Index t = 0; t < seq; ++t)
          ArrayMap<S>(x.grad() + (g * seq + t) * dh, dh) +=
              ConstArrayMap<S>(out.grad() + (b * seq + t) * d + h * dh, dh);
      }
    });
  }
  return out;
}

// scale * q k^T per block: [G,T,dh] x [G,T,dh] -> [G,T,T]
template <typename S>
Tensor<S> attn_scores(const Tensor<S>& q, const Tensor<S>& k, S scale, Tape<S>* tape = nullptr) {
  if (q.rank() != 3 || !q.same_shape(k))
    throw ShapeError("attn_scores expects matching [G,T,dh] tensors");
  const Index g = q.size(0), t = q.size(1), dh = q.size(2);
  Tensor<S> out({g, t, t});
  parallel_for(g, [&](Index g0, Index g1) {
    for (Index blk = g0; blk < g1; ++blk) {
      detail::mm_nt<false>(out.data() + blk * t * t, q.data() + blk * t * dh,
                           k.data() + blk * t * dh, t, dh, t);
      ArrayMap<S>(out.data() + blk * t * t, t * t) *= scale;
    }
  });
  check_finite(out, "attn_scores");
  if (track_output(tape, out, q.requires_grad() || k.requires_grad())) {
    tape->record([q = q, k = k, out, g, t, dh, scale]() mutable {
      std::vector<S> scaled(static_cast<size_t>(t * t));
      for (Index blk = 0; blk < g; ++blk) {
        ArrayMap<S>(scaled.data(), t * t) =
            ConstArrayMap<S>(out.grad() + blk * t * t, t * t) * scale;
        if (q.requires_grad())
          detail::mm_nn<true>(q.grad() + blk * t * dh, scaled.data(), k.data() + blk * t * dh,
                              t, t, dh);
        if (k.requires_grad())
          detail::mm_tn<true>(k.grad() + blk * t * dh, scaled.data(), q.data() + blk * t * dh,
                              t, t, dh);
      }
    });
  }
  return out;
}

// probs · v per block: [G,T,T] x [G,T,dh] -> [G,T,dh]
template <typename S>
Tensor<S> attn_apply(const Tensor<S>& probs, const Tensor<S>& v, Tape<S>* tape = nullptr) {
  if (probs.rank() != 3 || v.rank() != 3 || probs.size(0) != v.size(0) ||
      probs.size(1) != probs.size(2) || probs.size(2) != v.size(1))
    throw ShapeError("attn_apply shape mismatch: " + shape_str(probs.shape()) + " vs " +
                     shape_str(v.shape()));
  const Index g = probs.size(0), t = probs.size(1), dh = v.size(2);
  Tensor<S> out({g, t, dh});
  parallel_for(g, [&](Index g0, Index g1) {
    for (Index blk = g0; blk < g1; ++blk)
      detail::mm_nn<false>(out.data() + blk * t * dh, probs.data() + blk * t * t,
                           v.data() + blk * t * dh, t, t, dh);
  });
  check_finite(out, "attn_apply");
  if (track_output(tape, out, probs.requires_grad() || v.requires_grad())) {
    tape->record([probs = probs, v = v, out, g, t, dh]() mutable {
      for (Index blk = 0; blk < g; ++blk) {
        if (probs.requires_grad())
          detail::mm_nt<true>(probs.grad() + blk * t * t, out.grad() + blk * t * dh,
                              v.data() + blk * t * dh, t, dh, t);
        if (v.requires_grad())
          detail::mm_tn<true>(v.grad() + blk * t * dh, probs.data() + blk * t * t,
                              out.grad() + blk * t * dh, t, t, dh);
      }
    });
  }
  return out;
}

// Inverted-dropout on the training path; identity when p == 0.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, RngStream& rng, Tape<S>* tape = nullptr) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ValueError("dropout rate must be < 1");
  Tensor<S> out(x.shape());
  const Index n = x.numel();
  auto mask = std::make_shared<std::vector<std::uint8_t>>(static_cast<size_t>(n));
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  for (Index i = 0; i < n; ++i) {
    const bool keep = rng.next_double() >= p;
    (*mask)[static_cast<size_t>(i)] = keep;
    out[i] = keep ? x[i] * keep_scale : S(0);
  }
  if (track_output(tape, out, x.requires_grad())) {
    tape->record([x = x, out, mask, n, keep_scale]() mutable {
      for (Index i = 0; i < n; ++i)
        if ((*mask)[static_cast<size_t>(i)]) x.grad()[i] += out.grad()[i] * keep_scale;
    });
  }
  return out;
}

}  // namespace adgen

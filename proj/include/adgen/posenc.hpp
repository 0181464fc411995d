#pragma once

// Positional encodings for causal attention: additive bias families (Alibi,
// KerpleLog, T5 log-binning buckets, FIRE) built as [blocks, n, n] tensors,
// rotary query/key transforms, and randomized strictly-increasing position
// maps. Learnable parameters are stored raw and mapped through softplus so
// positivity survives every optimizer step.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "adgen/ops.hpp"
#include "adgen/rng.hpp"
#include "adgen/tensor.hpp"

namespace adgen {

enum class PEVariant { NoPE, RoPE, Alibi, KerpleLog, T5Bucket, FIRE };

inline const char* pe_variant_name(PEVariant v) {
  switch (v) {
    case PEVariant::NoPE: return "nope";
    case PEVariant::RoPE: return "rope";
    case PEVariant::Alibi: return "alibi";
    case PEVariant::KerpleLog: return "kerple_log";
    case PEVariant::T5Bucket: return "t5_bucket";
    case PEVariant::FIRE: return "fire";
  }
  return "?";
}

inline bool parse_pe_variant(const std::string& s, PEVariant* out) {
  for (PEVariant v : {PEVariant::NoPE, PEVariant::RoPE, PEVariant::Alibi, PEVariant::KerpleLog,
                      PEVariant::T5Bucket, PEVariant::FIRE}) {
    if (s == pe_variant_name(v)) {
      *out = v;
      return true;
    }
  }
  return false;
}

struct PESpec {
  PEVariant variant = PEVariant::FIRE;
  double rope_base = 10000.0;
  // Alibi slope: with alibi_geometric, head h of H uses alibi_r * 2^(-8(h+1)/H)
  // (the usual geometric ladder); otherwise every head uses alibi_r directly.
  double alibi_r = 1.0;
  bool alibi_geometric = true;
  int t5_buckets = 32;   // number of bucket parameters (K+1); must be even
  int t5_max_dist = 128; // distances at or beyond this share the last bucket
  int fire_hidden = 32;
  bool randomized = false;       // fresh strictly-increasing positions per sequence
  Index randomized_max = 0;      // exclusive position bound when randomized
  bool randomize_at_eval = false;

  bool operator==(const PESpec&) const = default;

  bool needs_bias() const {
    return variant == PEVariant::Alibi || variant == PEVariant::KerpleLog ||
           variant == PEVariant::T5Bucket || variant == PEVariant::FIRE;
  }
  bool has_learnables() const {
    return variant == PEVariant::KerpleLog || variant == PEVariant::T5Bucket ||
           variant == PEVariant::FIRE;
  }
};

// ---------------------------------------------------------------------------
// Positive reparameterization
// ---------------------------------------------------------------------------

// Computed in double and floored at a tiny positive value so the mapped
// parameter can never reach zero even from an extreme raw value.
inline double softplus(double x) {
  const double v = x > 30.0 ? x : std::log1p(std::exp(x));
  return std::max(v, 1e-30);
}

inline double softplus_grad(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Inverse of softplus for initialization: softplus(inv_softplus(y)) == y.
inline double inv_softplus(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

// ---------------------------------------------------------------------------
// Scalar bias functions (query position i, key position j, i >= j)
// ---------------------------------------------------------------------------

inline double bias_alibi(Index i, Index j, double r) {
  return -r * static_cast<double>(std::llabs(i - j));
}

inline double bias_kerple_log(Index i, Index j, double r1, double r2) {
  if (r1 <= 0.0 || r2 <= 0.0) throw ValueError("kerple_log parameters must be positive");
  return -r1 * std::log1p(r2 * static_cast<double>(std::llabs(i - j)));
}

inline void check_t5_config(int buckets, int max_dist) {
  if (buckets < 2 || buckets % 2 != 0)
    throw ValueError("t5 bucket count must be even and at least 2");
  if (max_dist <= buckets / 2)
    throw ValueError("t5 max distance must exceed half the bucket count");
}

// Log-binning bucket id: exact buckets below half the table, logarithmic up
// to max_dist, then clamped to the last bucket.
inline int t5_bucket(Index distance, int buckets, int max_dist) {
  check_t5_config(buckets, max_dist);
  if (distance < 0) throw ValueError("t5 bucket distance must be non-negative");
  const int half = buckets / 2;
  if (distance < half) return static_cast<int>(distance);
  if (distance >= max_dist) return buckets - 1;
  const double d = static_cast<double>(distance);
  const int b = half + static_cast<int>(std::floor(
                           half * std::log(d / half) / std::log(double(max_dist) / half)));
  return std::min(b, buckets - 1);
}

inline double bias_t5(Index i, Index j, int buckets, int max_dist, const double* table) {
  return table[t5_bucket(std::llabs(i - j), buckets, max_dist)];
}

// Progressively normalized log-distance: psi(i-j) / psi(max(L, i)) with
// psi(x) = log(c x + 1).
inline double fire_input(Index i, Index j, double c, double L) {
  if (c <= 0.0 || L <= 0.0) throw ValueError("fire c and L must be positive");
  const double num = std::log1p(c * static_cast<double>(i - j));
  const double m = std::max(L, static_cast<double>(i));
  return num / std::log1p(c * m);
}

// One hidden ReLU layer, scalar in, scalar out.
inline double fire_mlp(double x, const double* w1, const double* b1, const double* w2,
                       double b2, int hidden) {
  double out = b2;
  for (int k = 0; k < hidden; ++k) out += w2[k] * std::max(0.0, w1[k] * x + b1[k]);
  return out;
}

inline double bias_fire(Index i, Index j, const double* w1, const double* b1, const double* w2,
                        double b2, int hidden, double c, double L) {
  return fire_mlp(fire_input(i, j, c, L), w1, b1, w2, b2, hidden);
}

inline std::vector<double> alibi_slopes(Index heads, double r, bool geometric) {
  std::vector<double> s(static_cast<size_t>(heads));
  for (Index h = 0; h < heads; ++h)
    s[static_cast<size_t>(h)] =
        geometric ? r * std::exp2(-8.0 * double(h + 1) / double(heads)) : r;
  return s;
}

// ---------------------------------------------------------------------------
// Position maps
// ---------------------------------------------------------------------------

using PositionMap = std::vector<Index>;

inline PositionMap identity_positions(Index n) {
  PositionMap p(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
  return p;
}

// Uniformly random strictly-increasing n-subset of [0, bound) via Floyd's
// sampling, then sorted.
inline PositionMap sample_positions(Index n, Index bound, RngStream& rng) {
  if (n > bound)
    throw ValueError("cannot sample " + std::to_string(n) + " positions from [0," +
                     std::to_string(bound) + ")");
  PositionMap out;
  out.reserve(static_cast<size_t>(n));
  for (Index j = bound - n; j < bound; ++j) {
    const Index t = static_cast<Index>(rng.below(static_cast<std::uint64_t>(j) + 1));
    if (std::find(out.begin(), out.end(), t) != out.end())
      out.push_back(j);
    else
      out.push_back(t);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Learnable PE parameters
// ---------------------------------------------------------------------------

template <typename S>
struct PEParams {
  // KerpleLog, per head, softplus-mapped.
  Tensor<S> kerple_raw_r1, kerple_raw_r2;  // [H], [H]
  // T5 buckets, per head.
  Tensor<S> t5_table;  // [H, buckets]
  // FIRE MLP shared across heads and layers; raw c and L softplus-mapped.
  Tensor<S> fire_w1, fire_b1, fire_w2, fire_b2;  // [hidden],[hidden],[hidden],[1]
  Tensor<S> fire_raw_c, fire_raw_L;              // [1],[1]

  std::vector<std::pair<std::string, Tensor<S>>> named(PEVariant v) const {
    switch (v) {
      case PEVariant::KerpleLog:
        return {{"pe.kerple_raw_r1", kerple_raw_r1}, {"pe.kerple_raw_r2", kerple_raw_r2}};
      case PEVariant::T5Bucket:
        return {{"pe.t5_table", t5_table}};
      case PEVariant::FIRE:
        return {{"pe.fire_w1", fire_w1},       {"pe.fire_b1", fire_b1},
                {"pe.fire_w2", fire_w2},       {"pe.fire_b2", fire_b2},
                {"pe.fire_raw_c", fire_raw_c}, {"pe.fire_raw_L", fire_raw_L}};
      default:
        return {};
    }
  }
};

// Initial values: kerple r1 = r2 = 1; T5 table zero; FIRE hidden layer small
// uniform, output layer zero so the initial bias is identically 0 (neutral
// start), c = 1, L = fire_L_init.
template <typename S>
PEParams<S> init_pe_params(const PESpec& spec, Index heads, double fire_L_init,
                           RngStream& rng) {
  PEParams<S> p;
  switch (spec.variant) {
    case PEVariant::KerpleLog: {
      const S raw1 = static_cast<S>(inv_softplus(1.0));
      p.kerple_raw_r1 = Tensor<S>::full({heads}, raw1);
      p.kerple_raw_r2 = Tensor<S>::full({heads}, raw1);
      break;
    }
    case PEVariant::T5Bucket:
      p.t5_table = Tensor<S>::zeros({heads, spec.t5_buckets});
      break;
    case PEVariant::FIRE: {
      const Index h = spec.fire_hidden;
      p.fire_w1 = Tensor<S>({h});
      p.fire_b1 = Tensor<S>({h});
      for (Index k = 0; k < h; ++k) {
        p.fire_w1[k] = static_cast<S>(2.0 * rng.next_double() - 1.0);
        p.fire_b1[k] = static_cast<S>(2.0 * rng.next_double() - 1.0);
      }
      p.fire_w2 = Tensor<S>::zeros({h});
      p.fire_b2 = Tensor<S>::zeros({1});
      p.fire_raw_c = Tensor<S>::full({1}, static_cast<S>(inv_softplus(1.0)));
      p.fire_raw_L = Tensor<S>::full({1}, static_cast<S>(inv_softplus(fire_L_init)));
      break;
    }
    default:
      break;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Bias builders (tape ops). All return [blocks, n, n] with entries above the
// diagonal zero; they are masked downstream.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> build_bias_alibi(const std::vector<double>& slopes, const PositionMap& pos) {
  const Index heads = static_cast<Index>(slopes.size());
  const Index n = static_cast<Index>(pos.size());
  Tensor<S> out({heads, n, n});
  for (Index h = 0; h < heads; ++h)
    for (Index a = 0; a < n; ++a)
      for (Index b = 0; b <= a; ++b)
        out[(h * n + a) * n + b] =
            static_cast<S>(bias_alibi(pos[size_t(a)], pos[size_t(b)], slopes[size_t(h)]));
  return out;
}

template <typename S>
Tensor<S> build_bias_kerple(const Tensor<S>& raw_r1, const Tensor<S>& raw_r2,
                            const PositionMap& pos, Tape<S>* tape = nullptr) {
  const Index heads = raw_r1.size(0);
  const Index n = static_cast<Index>(pos.size());
  Tensor<S> out({heads, n, n});
  for (Index h = 0; h < heads; ++h) {
    const double r1 = softplus(static_cast<double>(raw_r1[h]));
    const double r2 = softplus(static_cast<double>(raw_r2[h]));
    for (Index a = 0; a < n; ++a)
      for (Index b = 0; b <= a; ++b)
        out[(h * n + a) * n + b] =
            static_cast<S>(bias_kerple_log(pos[size_t(a)], pos[size_t(b)], r1, r2));
  }
  check_finite(out, "build_bias_kerple");
  if (track_output(tape, out, raw_r1.requires_grad() || raw_r2.requires_grad())) {
    tape->record([raw_r1 = raw_r1, raw_r2 = raw_r2, out, pos, heads, n]() mutable {
      for (Index h = 0; h < heads; ++h) {
        const double x1 = static_cast<double>(raw_r1[h]);
        const double x2 = static_cast<double>(raw_r2[h]);
        const double r1 = softplus(x1), r2 = softplus(x2);
        double g1 = 0.0, g2 = 0.0;
        for (Index a = 0; a < n; ++a)
          for (Index b = 0; b <= a; ++b) {
            const double go = static_cast<double>(out.grad()[(h * n + a) * n + b]);
            if (go == 0.0) continue;
            const double d = static_cast<double>(pos[size_t(a)] - pos[size_t(b)]);
            g1 += go * -std::log1p(r2 * d);
            g2 += go * -r1 * d / (1.0 + r2 * d);
          }
        if (raw_r1.requires_grad()) raw_r1.grad()[h] += static_cast<S>(g1 * softplus_grad(x1));
        if (raw_r2.requires_grad()) raw_r2.grad()[h] += static_cast<S>(g2 * softplus_grad(x2));
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> build_bias_t5(const Tensor<S>& table, const PositionMap& pos, int max_dist,
                        Tape<S>* tape = nullptr) {
  const Index heads = table.size(0);
  const int buckets = static_cast<int>(table.size(1));
  const Index n = static_cast<Index>(pos.size());
  Tensor<S> out({heads, n, n});
  for (Index h = 0; h < heads; ++h)
    for (Index a = 0; a < n; ++a)
      for (Index b = 0; b <= a; ++b) {
        const int bucket = t5_bucket(pos[size_t(a)] - pos[size_t(b)], buckets, max_dist);
        out[(h * n + a) * n + b] = table[h * buckets + bucket];
      }
  check_finite(out, "build_bias_t5");
  if (track_output(tape, out, table.requires_grad())) {
    tape->record([table = table, out, pos, heads, buckets, max_dist, n]() mutable {
      for (Index h = 0; h < heads; ++h)
        for (Index a = 0; a < n; ++a)
          for (Index b = 0; b <= a; ++b) {
            const int bucket = t5_bucket(pos[size_t(a)] - pos[size_t(b)], buckets, max_dist);
            table.grad()[h * buckets + bucket] += out.grad()[(h * n + a) * n + b];
          }
    });
  }
  return out;
}

// FIRE bias is shared across heads (single MLP), so the tensor has a single
// block; the softmax broadcast expands it.
template <typename S>
Tensor<S> build_bias_fire(const Tensor<S>& w1, const Tensor<S>& b1, const Tensor<S>& w2,
                          const Tensor<S>& b2, const Tensor<S>& raw_c, const Tensor<S>& raw_L,
                          const PositionMap& pos, Tape<S>* tape = nullptr) {
  const int hidden = static_cast<int>(w1.size(0));
  const Index n = static_cast<Index>(pos.size());
  const double c = softplus(static_cast<double>(raw_c[0]));
  const double L = softplus(static_cast<double>(raw_L[0]));
  Tensor<S> out({1, n, n});
  for (Index a = 0; a < n; ++a)
    for (Index b = 0; b <= a; ++b) {
      const double x = fire_input(pos[size_t(a)], pos[size_t(b)], c, L);
      double acc = static_cast<double>(b2[0]);
      for (int k = 0; k < hidden; ++k)
        acc += double(w2[k]) * std::max(0.0, double(w1[k]) * x + double(b1[k]));
      out[a * n + b] = static_cast<S>(acc);
    }
  check_finite(out, "build_bias_fire");

  const bool any_grad = w1.requires_grad() || b1.requires_grad() || w2.requires_grad() ||
                        b2.requires_grad() || raw_c.requires_grad() || raw_L.requires_grad();
  if (track_output(tape, out, any_grad)) {
    tape->record([w1 = w1, b1 = b1, w2 = w2, b2 = b2, raw_c = raw_c, raw_L = raw_L, out, pos,
                  hidden, n]() mutable {
      const double xc = static_cast<double>(raw_c[0]);
      const double xL = static_cast<double>(raw_L[0]);
      const double c = softplus(xc), L = softplus(xL);
      double g_c = 0.0, g_L = 0.0;
      for (Index a = 0; a < n; ++a) {
        const double i = static_cast<double>(pos[size_t(a)]);
        const double m = std::max(L, i);
        const double den = std::log1p(c * m);
        for (Index b = 0; b <= a; ++b) {
          const double go = static_cast<double>(out.grad()[a * n + b]);
          if (go == 0.0) continue;
          const double dij = static_cast<double>(pos[size_t(a)] - pos[size_t(b)]);
          const double num = std::log1p(c * dij);
          const double x = num / den;
          double dx = 0.0;
          for (int k = 0; k < hidden; ++k) {
            const double pre = double(w1[k]) * x + double(b1[k]);
            const double h = std::max(0.0, pre);
            if (w2.requires_grad()) w2.grad()[k] += static_cast<S>(go * h);
            if (pre > 0.0) {
              const double dpre = go * double(w2[k]);
              if (w1.requires_grad()) w1.grad()[k] += static_cast<S>(dpre * x);
              if (b1.requires_grad()) b1.grad()[k] += static_cast<S>(dpre);
              dx += dpre * double(w1[k]);
            }
          }
          if (b2.requires_grad()) b2.grad()[0] += static_cast<S>(go);
          // x = num / den; num = log1p(c*dij); den = log1p(c*max(L,i))
          const double dnum = dx / den;
          const double dden = -dx * num / (den * den);
          g_c += dnum * dij / (1.0 + c * dij) + dden * m / (1.0 + c * m);
          if (L >= i) g_L += dden * c / (1.0 + c * m);
        }
      }
      if (raw_c.requires_grad()) raw_c.grad()[0] += static_cast<S>(g_c * softplus_grad(xc));
      if (raw_L.requires_grad()) raw_L.grad()[0] += static_cast<S>(g_L * softplus_grad(xL));
    });
  }
  return out;
}

// Dispatch on variant. NoPE yields a zero bias; RoPE has no additive bias and
// is rejected here (callers apply rotations instead).
template <typename S>
Tensor<S> build_bias(const PESpec& spec, const PEParams<S>& params, const PositionMap& pos,
                     Index heads, Tape<S>* tape = nullptr) {
  switch (spec.variant) {
    case PEVariant::NoPE:
      return Tensor<S>::zeros({heads, static_cast<Index>(pos.size()),
                               static_cast<Index>(pos.size())});
    case PEVariant::Alibi:
      return build_bias_alibi<S>(alibi_slopes(heads, spec.alibi_r, spec.alibi_geometric), pos);
    case PEVariant::KerpleLog:
      return build_bias_kerple(params.kerple_raw_r1, params.kerple_raw_r2, pos, tape);
    case PEVariant::T5Bucket:
      return build_bias_t5(params.t5_table, pos, spec.t5_max_dist, tape);
    case PEVariant::FIRE:
      return build_bias_fire(params.fire_w1, params.fire_b1, params.fire_w2, params.fire_b2,
                             params.fire_raw_c, params.fire_raw_L, pos, tape);
    case PEVariant::RoPE:
      throw ValueError("rope applies rotations, not an additive bias");
  }
  throw ValueError("unknown pe variant");
}

// ---------------------------------------------------------------------------
// Rotary transform
// ---------------------------------------------------------------------------

// Rotates each 2-plane (2t, 2t+1) of a single vector by position *
// base^(-2t/d).
template <typename S>
Tensor<S> rope_apply(const Tensor<S>& vec, Index position, double base) {
  if (vec.rank() != 1 || vec.size(0) % 2 != 0)
    throw ShapeError("rope_apply expects an even-length vector");
  const Index d = vec.size(0);
  Tensor<S> out({d});
  for (Index t = 0; t < d / 2; ++t) {
    const double angle =
        static_cast<double>(position) * std::pow(base, -2.0 * double(t) / double(d));
    const double cs = std::cos(angle), sn = std::sin(angle);
    const double x0 = vec[2 * t], x1 = vec[2 * t + 1];
    out[2 * t] = static_cast<S>(x0 * cs - x1 * sn);
    out[2 * t + 1] = static_cast<S>(x0 * sn + x1 * cs);
  }
  return out;
}

// Batched rotation over [blocks, seq, dh] with blocks batch-major; block g
// uses posmaps[g / heads]. Backward rotates the gradient by the negated
// angle (the inverse rotation).
template <typename S>
Tensor<S> rope_rotate(const Tensor<S>& x, const std::vector<PositionMap>& posmaps, Index heads,
                      double base, Tape<S>* tape = nullptr) {
  if (x.rank() != 3 || x.size(2) % 2 != 0)
    throw ShapeError("rope_rotate expects [blocks, seq, even dh]");
  const Index blocks = x.size(0), seq = x.size(1), dh = x.size(2);
  if (blocks % heads != 0 || blocks / heads != static_cast<Index>(posmaps.size()))
    throw ShapeError("rope_rotate position maps do not match blocks/heads");
  Tensor<S> out(x.shape());
  const auto rotate = [&](const S* src, S* dst, Index pos, double sign) {
    for (Index t = 0; t < dh / 2; ++t) {
      const double angle =
          sign * static_cast<double>(pos) * std::pow(base, -2.0 * double(t) / double(dh));
      const double cs = std::cos(angle), sn = std::sin(angle);
      const double x0 = src[2 * t], x1 = src[2 * t + 1];
      dst[2 * t] = static_cast<S>(x0 * cs - x1 * sn);
      dst[2 * t + 1] = static_cast<S>(x0 * sn + x1 * cs);
    }
  };
  for (Index g = 0; g < blocks; ++g) {
    const PositionMap& pm = posmaps[static_cast<size_t>(g / heads)];
    if (static_cast<Index>(pm.size()) != seq)
      throw ShapeError("rope_rotate position map length mismatch");
    for (Index s = 0; s < seq; ++s)
      rotate(x.data() + (g * seq + s) * dh, out.data() + (g * seq + s) * dh,
             pm[static_cast<size_t>(s)], 1.0);
  }
  check_finite(out, "rope_rotate");
  if (track_output(tape, out, x.requires_grad())) {
    tape->record([x = x, out, posmaps, heads, blocks, seq, dh, base]() mutable {
      for (Index g = 0; g < blocks; ++g) {
        const PositionMap& pm = posmaps[static_cast<size_t>(g / heads)];
        for (Index s = 0; s < seq; ++s) {
          const S* go = out.grad() + (g * seq + s) * dh;
          S* gx = x.grad() + (g * seq + s) * dh;
          const double pos = static_cast<double>(pm[static_cast<size_t>(s)]);
          for (Index t = 0; t < dh / 2; ++t) {
            const double angle = -pos * std::pow(base, -2.0 * double(t) / double(dh));
            const double cs = std::cos(angle), sn = std::sin(angle);
            const double g0 = go[2 * t], g1 = go[2 * t + 1];
            gx[2 * t] += static_cast<S>(g0 * cs - g1 * sn);
            gx[2 * t + 1] += static_cast<S>(g0 * sn + g1 * cs);
          }
        }
      }
    });
  }
  return out;
}

}  // namespace adgen

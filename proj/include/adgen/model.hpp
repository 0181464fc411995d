#pragma once

// Decoder-only transformer: causal attention with an additive relative-position
// bias (or rotary Q/K transform), RMSNorm on each sublayer's input and output
// before the residual add, GeGLU feed-forward, optional weight-tied head.

#include <string>
#include <utility>
#include <vector>

#include "adgen/ops.hpp"
#include "adgen/posenc.hpp"

namespace adgen {

struct ModelConfig {
  Index n_layers = 2;
  Index d_model = 128;
  Index n_heads = 4;
  Index d_ff = 512;
  Index vocab_size = 117;
  Index max_seq_len = 256;
  PESpec pe;
  bool tie_embeddings = true;
  double dropout = 0.0;
  // Initial value for the learnable distance threshold of the functional
  // relative PE; callers set it to the longest training sequence.
  double fire_L_init = 64.0;

  bool operator==(const ModelConfig&) const = default;

  Index head_dim() const { return n_heads > 0 ? d_model / n_heads : 0; }
  void validate() const;  // throws ValueError on any bad field
};

// Named parameter shapes derivable from the config alone (checkpoint and
// count source of truth). Order matches ModelParams::named().
std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& config);

// Total learnable scalar count.
Index param_count(const ModelConfig& config);

template <typename S>
struct LayerParams {
  Tensor<S> wq, wk, wv, wo;               // [d,d] each
  Tensor<S> attn_norm_in, attn_norm_out;  // [d]
  Tensor<S> ffn_w, ffn_v;                 // [d,dff] gate and value projections
  Tensor<S> ffn_out;                      // [dff,d]
  Tensor<S> ffn_norm_in, ffn_norm_out;    // [d]
};

template <typename S>
struct ModelParams {
  ModelConfig config;
  Tensor<S> embed;  // [V,d]
  std::vector<LayerParams<S>> layers;
  Tensor<S> final_norm;  // [d]
  Tensor<S> head;        // [d,V]; undefined when tied to the embedding
  PEParams<S> pe;

  // Ordered name -> tensor registry (shared handles, so optimizer updates
  // through it mutate the model).
  std::vector<std::pair<std::string, Tensor<S>>> named() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    out.emplace_back("embed", embed);
    for (size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      const LayerParams<S>& l = layers[i];
      out.emplace_back(p + "attn.norm_in.gain", l.attn_norm_in);
      out.emplace_back(p + "attn.wq", l.wq);
      out.emplace_back(p + "attn.wk", l.wk);
      out.emplace_back(p + "attn.wv", l.wv);
      out.emplace_back(p + "attn.wo", l.wo);
      out.emplace_back(p + "attn.norm_out.gain", l.attn_norm_out);
      out.emplace_back(p + "ffn.norm_in.gain", l.ffn_norm_in);
      out.emplace_back(p + "ffn.w", l.ffn_w);
      out.emplace_back(p + "ffn.v", l.ffn_v);
      out.emplace_back(p + "ffn.out", l.ffn_out);
      out.emplace_back(p + "ffn.norm_out.gain", l.ffn_norm_out);
    }
    out.emplace_back("final_norm.gain", final_norm);
    if (!config.tie_embeddings) out.emplace_back("head", head);
    for (auto& kv : pe.named(config.pe.variant)) out.emplace_back(std::move(kv));
    return out;
  }

  void set_requires_grad(bool on) {
    for (auto& [name, t] : named()) t.set_requires_grad(on);
  }
};

// Deterministic initialization: linear weights scaled-normal with
// std = 1/sqrt(fan_in), embedding std 0.02, norm gains 1, PE learnables per
// their neutral-start scheme.
template <typename S>
ModelParams<S> init_params(const ModelConfig& config, std::uint64_t weight_seed) {
  config.validate();
  ModelParams<S> p;
  p.config = config;
  RngStream rng(weight_seed, 0);
  const Index d = config.d_model, dff = config.d_ff, v = config.vocab_size;
  const auto linear = [&rng](Index rows, Index cols) {
    return Tensor<S>::randn({rows, cols}, static_cast<S>(1.0 / std::sqrt(double(rows))), rng);
  };
  p.embed = Tensor<S>::randn({v, d}, static_cast<S>(0.02), rng);
  p.layers.resize(static_cast<size_t>(config.n_layers));
  for (LayerParams<S>& l : p.layers) {
    l.attn_norm_in = Tensor<S>::full({d}, S(1));
    l.wq = linear(d, d);
    l.wk = linear(d, d);
    l.wv = linear(d, d);
    l.wo = linear(d, d);
    l.attn_norm_out = Tensor<S>::full({d}, S(1));
    l.ffn_norm_in = Tensor<S>::full({d}, S(1));
    l.ffn_w = linear(d, dff);
    l.ffn_v = linear(d, dff);
    l.ffn_out = linear(dff, d);
    l.ffn_norm_out = Tensor<S>::full({d}, S(1));
  }
  p.final_norm = Tensor<S>::full({d}, S(1));
  if (!config.tie_embeddings) p.head = linear(d, v);
  p.pe = init_pe_params<S>(config.pe, config.n_heads, config.fire_L_init, rng);
  return p;
}

namespace detail {

// Builds the additive attention bias for a batch plus the broadcast stride
// biased_causal_softmax needs. Identical position maps share one bias.
template <typename S>
std::pair<Tensor<S>, Index> batch_bias(const ModelConfig& cfg, const PEParams<S>& pe,
                                       const std::vector<PositionMap>& posmaps,
                                       Tape<S>* tape) {
  bool shared = true;
  for (const PositionMap& m : posmaps) shared = shared && m == posmaps[0];
  if (shared) return {build_bias(cfg.pe, pe, posmaps[0], cfg.n_heads, tape), Index(1)};
  std::vector<Tensor<S>> parts;
  parts.reserve(posmaps.size());
  for (const PositionMap& m : posmaps)
    parts.push_back(build_bias(cfg.pe, pe, m, cfg.n_heads, tape));
  const Tensor<S> stacked = stack_first(parts, tape);
  // per-sequence single-block biases broadcast across heads; per-head ones
  // line up one-to-one with the logit blocks
  return {stacked, parts[0].size(0) == 1 ? cfg.n_heads : Index(1)};
}

}  // namespace detail

// Full forward pass over a batch of equal-length sequences. ids holds
// batch*seq tokens row-major; posmaps supplies one position map per sequence.
// Pure function of (params, ids, posmaps) when dropout is 0.
template <typename S>
Tensor<S> forward_batch(const ModelParams<S>& params, const std::vector<TokenId>& ids,
                        Index batch, Index seq, const std::vector<PositionMap>& posmaps,
                        Tape<S>* tape = nullptr, RngStream* dropout_rng = nullptr) {
  const ModelConfig& cfg = params.config;
  if (batch < 1 || seq < 1) throw ShapeError("forward_batch needs a nonempty batch");
  if (static_cast<Index>(ids.size()) != batch * seq)
    throw ShapeError("forward_batch ids do not fill batch x seq");
  if (seq > cfg.max_seq_len)
    throw ValueError("sequence length " + std::to_string(seq) + " exceeds capacity " +
                     std::to_string(cfg.max_seq_len));
  if (static_cast<Index>(posmaps.size()) != batch)
    throw ShapeError("forward_batch needs one position map per sequence");
  for (const PositionMap& m : posmaps)
    if (static_cast<Index>(m.size()) != seq)
      throw ShapeError("position map length does not match the sequence");
  const bool drop = cfg.dropout > 0.0;
  if (drop && dropout_rng == nullptr)
    throw ValueError("nonzero dropout needs a dropout stream");

  const Index h = cfg.n_heads, dh = cfg.head_dim();
  const S scale = static_cast<S>(1.0 / std::sqrt(double(dh)));
  const bool rope = cfg.pe.variant == PEVariant::RoPE;

  Tensor<S> bias;  // undefined for rotary / none
  Index bias_inner = 1;
  if (cfg.pe.needs_bias())
    std::tie(bias, bias_inner) = detail::batch_bias(cfg, params.pe, posmaps, tape);

  Tensor<S> x = embedding_lookup(params.embed, ids, tape);
  for (const LayerParams<S>& l : params.layers) {
    // attention sublayer
    Tensor<S> a = rmsnorm(x, l.attn_norm_in, static_cast<S>(1e-6), tape);
    Tensor<S> q = split_heads(matmul(a, l.wq, tape), batch, seq, h, tape);
    Tensor<S> k = split_heads(matmul(a, l.wk, tape), batch, seq, h, tape);
    Tensor<S> v = split_heads(matmul(a, l.wv, tape), batch, seq, h, tape);
    if (rope) {
      q = rope_rotate(q, posmaps, h, cfg.pe.rope_base, tape);
      k = rope_rotate(k, posmaps, h, cfg.pe.rope_base, tape);
    }
    Tensor<S> probs = biased_causal_softmax(attn_scores(q, k, scale, tape), bias, tape,
                                            bias_inner);
    Tensor<S> ctx = merge_heads(attn_apply(probs, v, tape), batch, seq, h, tape);
    Tensor<S> attn_out = rmsnorm(matmul(ctx, l.wo, tape), l.attn_norm_out,
                                 static_cast<S>(1e-6), tape);
    if (drop) attn_out = dropout(attn_out, cfg.dropout, *dropout_rng, tape);
    x = add(x, attn_out, tape);

    // feed-forward sublayer
    Tensor<S> f = rmsnorm(x, l.ffn_norm_in, static_cast<S>(1e-6), tape);
    f = geglu_ffn(f, l.ffn_w, l.ffn_v, l.ffn_out, tape);
    f = rmsnorm(f, l.ffn_norm_out, static_cast<S>(1e-6), tape);
    if (drop) f = dropout(f, cfg.dropout, *dropout_rng, tape);
    x = add(x, f, tape);
  }
  x = rmsnorm(x, params.final_norm, static_cast<S>(1e-6), tape);
  return cfg.tie_embeddings ? matmul_nt(x, params.embed, tape)
                            : matmul(x, params.head, tape);
}

// Single-sequence forward: logits [n, V].
template <typename S>
Tensor<S> forward_logits(const ModelParams<S>& params, const std::vector<TokenId>& ids,
                         const PositionMap& posmap, Tape<S>* tape = nullptr) {
  return forward_batch(params, ids, 1, static_cast<Index>(ids.size()), {posmap}, tape);
}

}  // namespace adgen

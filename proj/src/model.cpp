#include "adgen/model.hpp"

namespace adgen {

void ModelConfig::validate() const {
  const auto positive = [](Index v, const char* name) {
    if (v < 1) throw ValueError(std::string(name) + " must be positive");
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  if (d_model % n_heads != 0) throw ValueError("d_model must divide evenly into heads");
  if (pe.variant == PEVariant::RoPE && head_dim() % 2 != 0)
    throw ValueError("rotary PE needs an even head dimension");
  if (dropout < 0.0 || dropout >= 1.0) throw ValueError("dropout must lie in [0,1)");
  if (pe.variant == PEVariant::FIRE && fire_L_init <= 0.0)
    throw ValueError("fire_L_init must be positive");
  if (pe.variant == PEVariant::T5Bucket) check_t5_config(pe.t5_buckets, pe.t5_max_dist);
  if (pe.variant == PEVariant::Alibi && pe.alibi_r <= 0.0)
    throw ValueError("alibi slope parameter must be positive");
  if (pe.variant == PEVariant::RoPE && pe.rope_base <= 0.0)
    throw ValueError("rope base must be positive");
  if (pe.randomized && pe.randomized_max < max_seq_len)
    throw ValueError("randomized position bound must cover max_seq_len");
  if (pe.variant == PEVariant::FIRE && pe.fire_hidden < 1)
    throw ValueError("fire hidden width must be positive");
}

std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& config) {
  config.validate();
  const Index d = config.d_model, dff = config.d_ff, v = config.vocab_size;
  std::vector<std::pair<std::string, Shape>> out;
  out.emplace_back("embed", Shape{v, d});
  for (Index i = 0; i < config.n_layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    out.emplace_back(p + "attn.norm_in.gain", Shape{d});
    out.emplace_back(p + "attn.wq", Shape{d, d});
    out.emplace_back(p + "attn.wk", Shape{d, d});
    out.emplace_back(p + "attn.wv", Shape{d, d});
    out.emplace_back(p + "attn.wo", Shape{d, d});
    out.emplace_back(p + "attn.norm_out.gain", Shape{d});
    out.emplace_back(p + "ffn.norm_in.gain", Shape{d});
    out.emplace_back(p + "ffn.w", Shape{d, dff});
    out.emplace_back(p + "ffn.v", Shape{d, dff});
    out.emplace_back(p + "ffn.out", Shape{dff, d});
    out.emplace_back(p + "ffn.norm_out.gain", Shape{d});
  }
  out.emplace_back("final_norm.gain", Shape{d});
  if (!config.tie_embeddings) out.emplace_back("head", Shape{d, v});
  const Index h = config.n_heads;
  switch (config.pe.variant) {
    case PEVariant::KerpleLog:
      out.emplace_back("pe.kerple_raw_r1", Shape{h});
      out.emplace_back("pe.kerple_raw_r2", Shape{h});
      break;
    case PEVariant::T5Bucket:
      out.emplace_back("pe.t5_table", Shape{h, config.pe.t5_buckets});
      break;
    case PEVariant::FIRE:
      out.emplace_back("pe.fire_w1", Shape{config.pe.fire_hidden});
      out.emplace_back("pe.fire_b1", Shape{config.pe.fire_hidden});
      out.emplace_back("pe.fire_w2", Shape{config.pe.fire_hidden});
      out.emplace_back("pe.fire_b2", Shape{1});
      out.emplace_back("pe.fire_raw_c", Shape{1});
      out.emplace_back("pe.fire_raw_L", Shape{1});
      break;
    default:
      break;
  }
  return out;
}

Index param_count(const ModelConfig& config) {
  Index total = 0;
  for (const auto& [name, shape] : param_shapes(config)) total += shape_numel(shape);
  return total;
}

}  // namespace adgen

#include "adgen/config.hpp"

#include <charconv>
#include <cstdint>
#include <sstream>
#include <system_error>

namespace adgen {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_i64(long long v) { return std::to_string(v); }
std::string format_u64(std::uint64_t v) { return std::to_string(v); }
std::string format_bool(bool v) { return v ? "true" : "false"; }

std::uint64_t parse_u64(const std::string& s) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValueError("not an unsigned integer: '" + s + "'");
  return out;
}

// Dispatch one "section.field" assignment into the right struct member.
// Returns false when the key belongs to a different section.
template <typename Fn>
bool with_suffix(const std::string& key, const std::string& prefix, Fn&& fn) {
  if (key.rfind(prefix, 0) != 0) return false;
  fn(key.substr(prefix.size()));
  return true;
}

}  // namespace

std::string serialize_kv(const KVList& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

KVList parse_kv(const std::string& text) {
  KVList out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) throw ValueError("config line without '=': '" + line + "'");
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ValueError("config line with empty key: '" + line + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ValueError("cannot format double");
  return std::string(buf, ptr);
}

double parse_double(const std::string& s) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValueError("not a number: '" + s + "'");
  return out;
}

long long parse_int(const std::string& s) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValueError("not an integer: '" + s + "'");
  return out;
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ValueError("not a boolean (expected true/false): '" + s + "'");
}

KVList model_config_kv(const ModelConfig& cfg) {
  KVList kv;
  kv.emplace_back("model.n_layers", format_i64(cfg.n_layers));
  kv.emplace_back("model.d_model", format_i64(cfg.d_model));
  kv.emplace_back("model.n_heads", format_i64(cfg.n_heads));
  kv.emplace_back("model.d_ff", format_i64(cfg.d_ff));
  kv.emplace_back("model.vocab_size", format_i64(cfg.vocab_size));
  kv.emplace_back("model.max_seq_len", format_i64(cfg.max_seq_len));
  kv.emplace_back("model.tie_embeddings", format_bool(cfg.tie_embeddings));
  kv.emplace_back("model.dropout", format_double(cfg.dropout));
  kv.emplace_back("model.fire_L_init", format_double(cfg.fire_L_init));
  kv.emplace_back("pe.variant", pe_variant_name(cfg.pe.variant));
  kv.emplace_back("pe.rope_base", format_double(cfg.pe.rope_base));
  kv.emplace_back("pe.alibi_r", format_double(cfg.pe.alibi_r));
  kv.emplace_back("pe.alibi_geometric", format_bool(cfg.pe.alibi_geometric));
  kv.emplace_back("pe.t5_buckets", format_i64(cfg.pe.t5_buckets));
  kv.emplace_back("pe.t5_max_dist", format_i64(cfg.pe.t5_max_dist));
  kv.emplace_back("pe.fire_hidden", format_i64(cfg.pe.fire_hidden));
  kv.emplace_back("pe.randomized", format_bool(cfg.pe.randomized));
  kv.emplace_back("pe.randomized_max", format_i64(cfg.pe.randomized_max));
  kv.emplace_back("pe.randomize_at_eval", format_bool(cfg.pe.randomize_at_eval));
  return kv;
}

void apply_model_kv(const KVList& kv, ModelConfig* cfg) {
  for (const auto& [key, value] : kv) {
    const std::string& v = value;
    const bool handled =
        with_suffix(key, "model.",
                    [&](const std::string& f) {
                      if (f == "n_layers") cfg->n_layers = parse_int(v);
                      else if (f == "d_model") cfg->d_model = parse_int(v);
                      else if (f == "n_heads") cfg->n_heads = parse_int(v);
                      else if (f == "d_ff") cfg->d_ff = parse_int(v);
                      else if (f == "vocab_size") cfg->vocab_size = parse_int(v);
                      else if (f == "max_seq_len") cfg->max_seq_len = parse_int(v);
                      else if (f == "tie_embeddings") cfg->tie_embeddings = parse_bool(v);
                      else if (f == "dropout") cfg->dropout = parse_double(v);
                      else if (f == "fire_L_init") cfg->fire_L_init = parse_double(v);
                      else throw ValueError("unknown model config key: " + key);
                    }) ||
        with_suffix(key, "pe.", [&](const std::string& f) {
          if (f == "variant") {
            if (!parse_pe_variant(v, &cfg->pe.variant))
              throw ValueError("pe.variant: unknown position-encoding variant '" + v + "'");
          } else if (f == "rope_base") cfg->pe.rope_base = parse_double(v);
          else if (f == "alibi_r") cfg->pe.alibi_r = parse_double(v);
          else if (f == "alibi_geometric") cfg->pe.alibi_geometric = parse_bool(v);
          else if (f == "t5_buckets") cfg->pe.t5_buckets = static_cast<int>(parse_int(v));
          else if (f == "t5_max_dist") cfg->pe.t5_max_dist = static_cast<int>(parse_int(v));
          else if (f == "fire_hidden") cfg->pe.fire_hidden = static_cast<int>(parse_int(v));
          else if (f == "randomized") cfg->pe.randomized = parse_bool(v);
          else if (f == "randomized_max") cfg->pe.randomized_max = parse_int(v);
          else if (f == "randomize_at_eval") cfg->pe.randomize_at_eval = parse_bool(v);
          else throw ValueError("unknown position-encoding config key: " + key);
        });
    (void)handled;
  }
}

KVList train_config_kv(const TrainConfig& cfg) {
  KVList kv;
  kv.emplace_back("train.steps", format_i64(cfg.steps));
  kv.emplace_back("train.batch_size", format_i64(cfg.batch_size));
  kv.emplace_back("train.warmup_steps", format_i64(cfg.warmup_steps));
  kv.emplace_back("train.lr_peak", format_double(cfg.lr_peak));
  kv.emplace_back("train.lr_floor_ratio", format_double(cfg.lr_floor_ratio));
  kv.emplace_back("train.weight_decay", format_double(cfg.weight_decay));
  kv.emplace_back("train.adam_beta1", format_double(cfg.adam_beta1));
  kv.emplace_back("train.adam_beta2", format_double(cfg.adam_beta2));
  kv.emplace_back("train.adam_eps", format_double(cfg.adam_eps));
  kv.emplace_back("train.grad_clip", format_double(cfg.grad_clip));
  kv.emplace_back("train.weight_seed", format_u64(cfg.weight_seed));
  kv.emplace_back("train.data_seed", format_u64(cfg.data_seed));
  kv.emplace_back("train.eval_every", format_i64(cfg.eval_every));
  kv.emplace_back("train.checkpoint_every", format_i64(cfg.checkpoint_every));
  kv.emplace_back("train.answer_only_loss", format_bool(cfg.answer_only_loss));
  return kv;
}

void apply_train_kv(const KVList& kv, TrainConfig* cfg) {
  for (const auto& [key, value] : kv) {
    const std::string& v = value;
    with_suffix(key, "train.", [&](const std::string& f) {
      if (f == "steps") cfg->steps = parse_int(v);
      else if (f == "batch_size") cfg->batch_size = parse_int(v);
      else if (f == "warmup_steps") cfg->warmup_steps = parse_int(v);
      else if (f == "lr_peak") cfg->lr_peak = parse_double(v);
      else if (f == "lr_floor_ratio") cfg->lr_floor_ratio = parse_double(v);
      else if (f == "weight_decay") cfg->weight_decay = parse_double(v);
      else if (f == "adam_beta1") cfg->adam_beta1 = parse_double(v);
      else if (f == "adam_beta2") cfg->adam_beta2 = parse_double(v);
      else if (f == "adam_eps") cfg->adam_eps = parse_double(v);
      else if (f == "grad_clip") cfg->grad_clip = parse_double(v);
      else if (f == "weight_seed") cfg->weight_seed = parse_u64(v);
      else if (f == "data_seed") cfg->data_seed = parse_u64(v);
      else if (f == "eval_every") cfg->eval_every = parse_int(v);
      else if (f == "checkpoint_every") cfg->checkpoint_every = parse_int(v);
      else if (f == "answer_only_loss") cfg->answer_only_loss = parse_bool(v);
      else throw ValueError("unknown training config key: " + key);
    });
  }
}

std::string configs_to_text(const ModelConfig& m, const TrainConfig& t) {
  KVList kv = model_config_kv(m);
  const KVList tk = train_config_kv(t);
  kv.insert(kv.end(), tk.begin(), tk.end());
  return serialize_kv(kv);
}

void configs_from_text(const std::string& text, ModelConfig* m, TrainConfig* t) {
  const KVList kv = parse_kv(text);
  if (m) apply_model_kv(kv, m);
  if (t) apply_train_kv(kv, t);
}

}  // namespace adgen

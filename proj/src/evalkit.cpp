#include "adgen/evalkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <map>

#include "adgen/config.hpp"
#include "adgen/ops.hpp"

namespace adgen {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

// Incremental decoder state: per-layer key/value caches plus the additive
// attention biases, built once per decode from the same position-encoding
// code paths the training forward uses. Numerically this mirrors the batched
// forward (same norm/activation formulas); accumulation order differs only
// inside the matrix products.
class DecodeEngine {
 public:
  DecodeEngine(const ModelParams<float>& params, std::vector<PositionMap> posmaps)
      : P(params),
        cfg(params.config),
        b(static_cast<Index>(posmaps.size())),
        d(cfg.d_model),
        h(cfg.n_heads),
        dh(cfg.head_dim()),
        cap(static_cast<Index>(posmaps.front().size())),
        maps(std::move(posmaps)) {
    if (cap > cfg.max_seq_len)
      throw ValueError("decode needs " + std::to_string(cap) + " positions but the model holds " +
                       std::to_string(cfg.max_seq_len));
    for (const PositionMap& m : maps)
      if (static_cast<Index>(m.size()) != cap)
        throw ShapeError("decode position maps must share one length");

    if (cfg.pe.needs_bias()) {
      const bool shared = std::all_of(maps.begin(), maps.end(),
                                      [&](const PositionMap& m) { return m == maps[0]; });
      const Index nbias = shared ? 1 : b;
      for (Index r = 0; r < nbias; ++r)
        biases.push_back(build_bias(cfg.pe, P.pe, maps[static_cast<std::size_t>(r)], h));
    }

    const std::size_t slab = static_cast<std::size_t>(b * h * cap * dh);
    kcache.assign(static_cast<std::size_t>(cfg.n_layers), std::vector<float>(slab, 0.f));
    vcache = kcache;
    x.resize(b, d);
    scratch.resize(b, d);
    proj.resize(b, d);
    ctx.resize(b, d);
    ffn.resize(b, cfg.d_ff);
    gate.resize(b, cfg.d_ff);
  }

  Index capacity() const { return cap; }

  // Processes one token per row at the next slot; when logits is non-null it
  // receives the next-token distribution rows [b, V].
  void step(const std::vector<TokenId>& ids, RowMat* logits) {
    if (static_cast<Index>(ids.size()) != b) throw ShapeError("decode step needs one id per row");
    if (t >= cap) throw ValueError("decode ran past its reserved context");

    for (Index r = 0; r < b; ++r) {
      const TokenId id = ids[static_cast<std::size_t>(r)];
      if (id < 0 || id >= cfg.vocab_size)
        throw ValueError("decode token id out of range: " + std::to_string(id));
      x.row(r) = CMapRM(P.embed.data(), cfg.vocab_size, d).row(id);
    }

    const float scale = static_cast<float>(1.0 / std::sqrt(double(dh)));
    for (Index l = 0; l < cfg.n_layers; ++l) {
      const LayerParams<float>& L = P.layers[static_cast<std::size_t>(l)];

      rmsnorm_rows(x, L.attn_norm_in, scratch);
      // append this position's keys/values, then attend over the cache
      proj.noalias() = scratch * CMapRM(L.wk.data(), d, d);
      rope_rows(proj, /*keys=*/true);
      store(kcache[static_cast<std::size_t>(l)], proj);
      proj.noalias() = scratch * CMapRM(L.wv.data(), d, d);
      store(vcache[static_cast<std::size_t>(l)], proj);
      proj.noalias() = scratch * CMapRM(L.wq.data(), d, d);
      rope_rows(proj, /*keys=*/false);

      const Index n_keys = t + 1;
      for (Index r = 0; r < b; ++r) {
        for (Index hh = 0; hh < h; ++hh) {
          const float* base =
              kcache[static_cast<std::size_t>(l)].data() + (r * h + hh) * cap * dh;
          CMapRM kslab(base, n_keys, dh);
          Eigen::VectorXf scores =
              kslab * proj.row(r).segment(hh * dh, dh).transpose() * scale;
          add_bias_row(scores, r, hh);
          // softmax over keys 0..t with max subtraction, as in training
          float maxv = scores[0];
          for (Index j = 1; j < n_keys; ++j) maxv = std::max(maxv, scores[j]);
          float sum = 0.f;
          for (Index j = 0; j < n_keys; ++j) {
            scores[j] = std::exp(scores[j] - maxv);
            sum += scores[j];
          }
          scores *= 1.f / sum;
          const float* vbase =
              vcache[static_cast<std::size_t>(l)].data() + (r * h + hh) * cap * dh;
          ctx.row(r).segment(hh * dh, dh).noalias() =
              scores.transpose() * CMapRM(vbase, n_keys, dh);
        }
      }

      proj.noalias() = ctx * CMapRM(L.wo.data(), d, d);
      rmsnorm_rows(proj, L.attn_norm_out, scratch);
      x += scratch;

      rmsnorm_rows(x, L.ffn_norm_in, scratch);
      ffn.noalias() = scratch * CMapRM(L.ffn_w.data(), d, cfg.d_ff);
      gate.noalias() = scratch * CMapRM(L.ffn_v.data(), d, cfg.d_ff);
      for (Index r = 0; r < b; ++r)
        for (Index j = 0; j < cfg.d_ff; ++j)
          ffn(r, j) = static_cast<float>(detail::gelu_tanh(ffn(r, j))) * gate(r, j);
      proj.noalias() = ffn * CMapRM(L.ffn_out.data(), cfg.d_ff, d);
      rmsnorm_rows(proj, L.ffn_norm_out, scratch);
      x += scratch;
    }

    if (logits) {
      rmsnorm_rows(x, P.final_norm, scratch);
      if (cfg.tie_embeddings)
        logits->noalias() = scratch * CMapRM(P.embed.data(), cfg.vocab_size, d).transpose();
      else
        logits->noalias() = scratch * CMapRM(P.head.data(), d, cfg.vocab_size);
    }
    ++t;
  }

 private:
  void rmsnorm_rows(const RowMat& in, const Tensor<float>& gain, RowMat& out) {
    for (Index r = 0; r < in.rows(); ++r) {
      float ms = 0.f;
      for (Index j = 0; j < in.cols(); ++j) ms += in(r, j) * in(r, j);
      const float inv = 1.f / std::sqrt(ms / static_cast<float>(in.cols()) + 1e-6f);
      for (Index j = 0; j < in.cols(); ++j) out(r, j) = in(r, j) * inv * gain[j];
    }
  }

  void rope_rows(RowMat& m, bool keys) {
    (void)keys;
    if (cfg.pe.variant != PEVariant::RoPE) return;
    for (Index r = 0; r < b; ++r) {
      const double pos = static_cast<double>(maps[static_cast<std::size_t>(r)][
          static_cast<std::size_t>(t)]);
      for (Index hh = 0; hh < h; ++hh) {
        float* seg = m.row(r).segment(hh * dh, dh).data();
        for (Index k = 0; k < dh / 2; ++k) {
          const double angle =
              pos * std::pow(cfg.pe.rope_base, -2.0 * double(k) / double(dh));
          const double cs = std::cos(angle), sn = std::sin(angle);
          const double x0 = seg[2 * k], x1 = seg[2 * k + 1];
          seg[2 * k] = static_cast<float>(x0 * cs - x1 * sn);
          seg[2 * k + 1] = static_cast<float>(x0 * sn + x1 * cs);
        }
      }
    }
  }

  void store(std::vector<float>& cache, const RowMat& rows) {
    for (Index r = 0; r < b; ++r)
      for (Index hh = 0; hh < h; ++hh)
        std::copy_n(rows.row(r).segment(hh * dh, dh).data(), dh,
                    cache.data() + ((r * h + hh) * cap + t) * dh);
  }

  void add_bias_row(Eigen::VectorXf& scores, Index r, Index hh) const {
    if (biases.empty()) return;
    const Tensor<float>& B = biases[biases.size() == 1 ? 0 : static_cast<std::size_t>(r)];
    const Index block = B.size(0) == 1 ? 0 : hh;
    const float* row = B.data() + (block * cap + t) * cap;
    for (Index j = 0; j < scores.size(); ++j) scores[j] += row[j];
  }

  const ModelParams<float>& P;
  const ModelConfig& cfg;
  Index b, d, h, dh, cap;
  Index t = 0;
  std::vector<PositionMap> maps;
  std::vector<Tensor<float>> biases;  // one shared or one per row
  std::vector<std::vector<float>> kcache, vcache;  // per layer [b*h, cap, dh]
  RowMat x, scratch, proj, ctx, ffn, gate;
};

Index argmax_lowest(const RowMat& logits, Index row) {
  Index best = 0;
  float bestv = logits(row, 0);
  for (Index j = 1; j < logits.cols(); ++j)
    if (logits(row, j) > bestv) {
      bestv = logits(row, j);
      best = j;
    }
  return best;
}

// Decode a group of questions that share one token length.
std::vector<std::vector<TokenId>> decode_same_length(
    const ModelParams<float>& params, const std::vector<std::vector<TokenId>>& questions,
    Index max_new, RngStream* pos_rng) {
  const Vocab& vocab = Vocab::instance();
  const Index b = static_cast<Index>(questions.size());
  const Index qlen = static_cast<Index>(questions.front().size());
  if (max_new < 1) throw ValueError("greedy decode needs max_new >= 1");
  for (const auto& q : questions) {
    if (q.empty() || q.back() != vocab.equals())
      throw ValueError("greedy decode questions must end at '='");
    if (static_cast<Index>(q.size()) != qlen)
      throw ShapeError("decode group must share one question length");
  }
  const Index cap = qlen + max_new;
  if (cap > params.config.max_seq_len)
    throw ValueError("question plus max_new (" + std::to_string(cap) +
                     " tokens) exceeds context capacity " +
                     std::to_string(params.config.max_seq_len));

  const bool randomize = params.config.pe.randomized && params.config.pe.randomize_at_eval;
  if (randomize && pos_rng == nullptr)
    throw ValueError("randomized eval positions need a position stream");
  std::vector<PositionMap> maps;
  maps.reserve(static_cast<std::size_t>(b));
  for (Index r = 0; r < b; ++r)
    maps.push_back(randomize ? sample_positions(cap, params.config.pe.randomized_max, *pos_rng)
                             : identity_positions(cap));

  DecodeEngine eng(params, std::move(maps));
  RowMat logits;
  logits.resize(b, params.config.vocab_size);
  std::vector<TokenId> column(static_cast<std::size_t>(b));
  for (Index i = 0; i < qlen; ++i) {
    for (Index r = 0; r < b; ++r)
      column[static_cast<std::size_t>(r)] = questions[static_cast<std::size_t>(r)][
          static_cast<std::size_t>(i)];
    eng.step(column, i + 1 == qlen ? &logits : nullptr);
  }

  std::vector<std::vector<TokenId>> answers(static_cast<std::size_t>(b));
  std::vector<char> done(static_cast<std::size_t>(b), 0);
  for (Index draw = 0; draw < max_new; ++draw) {
    bool all_done = true;
    for (Index r = 0; r < b; ++r) {
      if (done[static_cast<std::size_t>(r)]) {
        column[static_cast<std::size_t>(r)] = vocab.eos();
        continue;
      }
      const TokenId tok = static_cast<TokenId>(argmax_lowest(logits, r));
      if (tok == vocab.eos())
        done[static_cast<std::size_t>(r)] = 1;
      else {
        answers[static_cast<std::size_t>(r)].push_back(tok);
        all_done = false;
      }
      column[static_cast<std::size_t>(r)] = tok;
    }
    if (all_done || draw + 1 == max_new) break;
    eng.step(column, &logits);
  }
  return answers;
}

std::vector<TokenId> strip_normalized(const std::vector<TokenId>& seq) {
  const Vocab& vocab = Vocab::instance();
  std::vector<TokenId> out;
  out.reserve(seq.size());
  for (TokenId t : seq)
    if (t != vocab.filler() && t != vocab.pad()) out.push_back(t);
  return out;
}

std::string join_positions(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

std::vector<std::vector<TokenId>> greedy_decode_batch(
    const ModelParams<float>& params, const std::vector<std::vector<TokenId>>& questions,
    Index max_new, RngStream* pos_rng) {
  if (questions.empty()) return {};
  // Group by question length so every engine batch is rectangular; results
  // are written back into input order (deterministic merging).
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < questions.size(); ++i)
    groups[questions[i].size()].push_back(i);

  std::vector<std::vector<TokenId>> out(questions.size());
  for (const auto& [len, idxs] : groups) {
    (void)len;
    std::vector<std::vector<TokenId>> batch;
    batch.reserve(idxs.size());
    for (std::size_t i : idxs) batch.push_back(questions[i]);
    auto decoded = decode_same_length(params, batch, max_new, pos_rng);
    for (std::size_t k = 0; k < idxs.size(); ++k) out[idxs[k]] = std::move(decoded[k]);
  }
  return out;
}

std::vector<TokenId> greedy_decode(const ModelParams<float>& params,
                                   const std::vector<TokenId>& question, Index max_new,
                                   RngStream* pos_rng) {
  return greedy_decode_batch(params, {question}, max_new, pos_rng).front();
}

bool exact_match(const std::vector<TokenId>& pred, const std::vector<TokenId>& gold) {
  return strip_normalized(pred) == strip_normalized(gold);
}

ErrorClass classify_error(const AdditionExample& ex, const std::vector<TokenId>& gold_answer,
                          const std::vector<TokenId>& pred_answer, const FormatSpec& fmt) {
  ErrorClass out;
  out.carry = carry_flag(ex);

  const std::optional<ParsedAnswer> gold = parse_answer_tokens(gold_answer, fmt);
  if (!gold) throw ValueError("classify_error: gold answer does not parse");
  out.gold_digits = gold->digits;

  const std::optional<ParsedAnswer> pred = parse_answer_tokens(pred_answer, fmt);
  const bool aligned = pred && pred->digits.size() == gold->digits.size() &&
                       (!fmt.index_hints || pred->hint_indices == gold->hint_indices);
  if (!aligned) {
    out.structural = true;
    out.digit_diff_count = -1;
    return out;
  }
  out.pred_digits = pred->digits;
  for (std::size_t s = 0; s < gold->digits.size(); ++s)
    if (pred->digits[s] != gold->digits[s]) out.wrong_positions.push_back(static_cast<Index>(s));
  out.digit_diff_count = static_cast<Index>(out.wrong_positions.size());
  return out;
}

double EvalReport::overall_em() const {
  Index n = 0;
  double hits = 0.0;
  for (const LengthResult& r : per_length) {
    n += r.n_examples;
    hits += r.em_accuracy * static_cast<double>(r.n_examples);
  }
  return n == 0 ? 0.0 : hits / static_cast<double>(n);
}

namespace {

struct PreparedExample {
  AdditionExample ex;
  std::vector<TokenId> question;  // ends at '='
  std::vector<TokenId> gold;
};

EvalReport score_buckets(const BatchDecoder& decode, const FormatSpec& fmt,
                         const std::vector<std::pair<Index, std::vector<PreparedExample>>>& buckets) {
  // One decoder call over everything, then deterministic (length, index) scoring.
  std::vector<std::vector<TokenId>> questions;
  Index max_gold = 1;
  for (const auto& [len, examples] : buckets) {
    (void)len;
    for (const PreparedExample& p : examples) {
      questions.push_back(p.question);
      max_gold = std::max(max_gold, static_cast<Index>(p.gold.size()));
    }
  }
  const std::vector<std::vector<TokenId>> preds = decode(questions, max_gold + 2);
  if (preds.size() != questions.size())
    throw ValueError("decoder returned a different number of answers than questions");

  EvalReport report;
  std::size_t cursor = 0;
  for (const auto& [len, examples] : buckets) {
    Index hits = 0;
    for (std::size_t i = 0; i < examples.size(); ++i, ++cursor) {
      const PreparedExample& p = examples[i];
      const std::vector<TokenId>& pred = preds[cursor];
      if (exact_match(pred, p.gold)) {
        ++hits;
        continue;
      }
      const ErrorClass cls = classify_error(p.ex, p.gold, pred, fmt);
      ErrorRecord rec;
      rec.length = len;
      rec.example_index = static_cast<Index>(i);
      rec.carry = cls.carry;
      rec.structural = cls.structural;
      rec.digit_diff_count = cls.digit_diff_count;
      rec.wrong_positions = cls.wrong_positions;
      rec.pred_digits = cls.pred_digits;
      rec.gold_digits = cls.gold_digits;
      rec.pred_tokens = pred;
      rec.gold_tokens = p.gold;
      report.errors.push_back(std::move(rec));
    }
    LengthResult row;
    row.length = len;
    row.n_examples = static_cast<Index>(examples.size());
    row.em_accuracy =
        examples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(examples.size());
    report.per_length.push_back(row);
  }
  return report;
}

}  // namespace

EvalReport eval_lengths_with(const BatchDecoder& decode, const std::vector<Index>& lengths,
                             Index n_per_length, const FormatSpec& fmt, std::uint64_t seed) {
  if (lengths.empty()) throw ValueError("eval_lengths needs at least one length");
  if (n_per_length < 1) throw ValueError("eval_lengths needs n_per_length >= 1");

  std::vector<std::pair<Index, std::vector<PreparedExample>>> buckets;
  for (Index len : lengths) {
    std::vector<PreparedExample> examples;
    examples.reserve(static_cast<std::size_t>(n_per_length));
    for (Index i = 0; i < n_per_length; ++i) {
      // Per-example stream keyed by (length, index): decomposition-independent.
      RngStream rng(seed, (static_cast<std::uint64_t>(len) << 40) +
                              static_cast<std::uint64_t>(i));
      PreparedExample p;
      p.ex = sample_example_of_length(len, rng);
      const Index offset = sample_hint_offset(len, rng);
      std::vector<TokenId> line = render(p.ex, fmt, offset);
      if (fmt.space_augment) line = augment_spaces(line, fmt, rng);
      auto [q, a] = split_at_equals(line);
      p.question = std::move(q);
      p.gold = std::move(a);
      examples.push_back(std::move(p));
    }
    buckets.emplace_back(len, std::move(examples));
  }
  EvalReport report = score_buckets(decode, fmt, buckets);
  report.eval_seed = seed;
  return report;
}

EvalReport eval_lengths(const ModelParams<float>& params, const std::vector<Index>& lengths,
                        Index n_per_length, const FormatSpec& fmt, std::uint64_t seed) {
  RngStream pos_rng(seed, 0xE7A1ull << 40);
  const BatchDecoder decode = [&](const std::vector<std::vector<TokenId>>& qs, Index max_new) {
    return greedy_decode_batch(params, qs, max_new, &pos_rng);
  };
  EvalReport report = eval_lengths_with(decode, lengths, n_per_length, fmt, seed);
  report.pe_variant = pe_variant_name(params.config.pe.variant);
  return report;
}

EvalReport eval_sequences_with(const BatchDecoder& decode,
                               const std::vector<std::vector<TokenId>>& lines,
                               const FormatSpec& fmt) {
  if (lines.empty()) throw ValueError("eval_sequences needs at least one line");
  std::map<Index, std::vector<PreparedExample>> by_length;
  for (const auto& line : lines) {
    PreparedExample p;
    p.ex = parse(line, fmt);
    auto [q, a] = split_at_equals(line);
    p.question = std::move(q);
    p.gold = std::move(a);
    const Index len = static_cast<Index>(std::max(p.ex.a_digits.size(), p.ex.b_digits.size()));
    by_length[len].push_back(std::move(p));
  }
  std::vector<std::pair<Index, std::vector<PreparedExample>>> buckets;
  for (auto& [len, examples] : by_length) buckets.emplace_back(len, std::move(examples));
  return score_buckets(decode, fmt, buckets);
}

EvalReport eval_sequences(const ModelParams<float>& params,
                          const std::vector<std::vector<TokenId>>& lines,
                          const FormatSpec& fmt) {
  const BatchDecoder decode = [&](const std::vector<std::vector<TokenId>>& qs, Index max_new) {
    return greedy_decode_batch(params, qs, max_new, nullptr);
  };
  EvalReport report = eval_sequences_with(decode, lines, fmt);
  report.pe_variant = pe_variant_name(params.config.pe.variant);
  return report;
}

std::vector<std::pair<Index, Index>> errors_by_position(const EvalReport& report) {
  std::map<Index, Index> counts;
  for (const ErrorRecord& r : report.errors)
    for (Index p : r.wrong_positions) counts[p] += 1;
  return {counts.begin(), counts.end()};
}

std::vector<std::pair<Index, Index>> errors_by_diff_count(const EvalReport& report) {
  std::map<Index, Index> counts;
  for (const ErrorRecord& r : report.errors) counts[r.digit_diff_count] += 1;
  return {counts.begin(), counts.end()};
}

std::string report_csv(const EvalReport& report) {
  std::string out = "length,n,em\n";
  for (const LengthResult& r : report.per_length) {
    out += std::to_string(r.length);
    out += ',';
    out += std::to_string(r.n_examples);
    out += ',';
    out += format_double(r.em_accuracy);
    out += '\n';
  }
  return out;
}

std::string errors_csv(const EvalReport& report) {
  std::string out = "length,example_index,carry_flag,digit_diff_count,wrong_positions\n";
  for (const ErrorRecord& r : report.errors) {
    out += std::to_string(r.length);
    out += ',';
    out += std::to_string(r.example_index);
    out += ',';
    out += r.carry ? '1' : '0';
    out += ',';
    out += std::to_string(r.digit_diff_count);
    out += ',';
    out += join_positions(r.wrong_positions);
    out += '\n';
  }
  return out;
}

namespace {
void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValueError("cannot open for writing: " + path);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw ValueError("failed writing: " + path);
}
}  // namespace

void write_report_csv(const std::string& path, const EvalReport& report) {
  write_text(path, report_csv(report));
}

void write_errors_csv(const std::string& path, const EvalReport& report) {
  write_text(path, errors_csv(report));
}

}  // namespace adgen

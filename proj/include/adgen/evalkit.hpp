#pragma once

// Evaluation: greedy decoding with a KV cache, exact-match scoring, and
// error analysis (carry classification, wrong-digit positions and counts).
// Decoding always runs in eval mode: dropout is never applied.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adgen/datagen.hpp"
#include "adgen/model.hpp"

namespace adgen {

// ---- decoding ---------------------------------------------------------------

// Greedy continuation of `question` (which must end at '='): repeatedly
// appends the argmax next token (ties to the lowest token id) until EOS or
// max_new draws. The returned answer excludes the terminating EOS. Throws
// ValueError when question + max_new exceeds the model's context capacity.
// With randomized positions and pe.randomize_at_eval, pos_rng supplies the
// per-sequence position draws; otherwise positions are the identity.
std::vector<TokenId> greedy_decode(const ModelParams<float>& params,
                                   const std::vector<TokenId>& question, Index max_new,
                                   RngStream* pos_rng = nullptr);

// Batched variant; questions may have different lengths (grouped internally).
// Results line up with the input order.
std::vector<std::vector<TokenId>> greedy_decode_batch(
    const ModelParams<float>& params, const std::vector<std::vector<TokenId>>& questions,
    Index max_new, RngStream* pos_rng = nullptr);

// True iff the two token sequences are identical after stripping FILLER and
// PAD from both (the normalization applied before exact-match scoring).
bool exact_match(const std::vector<TokenId>& pred, const std::vector<TokenId>& gold);

// ---- error analysis ---------------------------------------------------------

struct ErrorClass {
  bool carry = false;       // gold addition carries in at least one column
  bool structural = false;  // prediction unparseable or misaligned with gold
  Index digit_diff_count = 0;           // -1 when structural
  std::vector<Index> wrong_positions;   // significance indices, ascending
  std::vector<int> pred_digits;         // little-endian; empty when structural
  std::vector<int> gold_digits;
};

// Compares a predicted answer with the rendered gold answer, digit by
// significance. Structural failures (unparseable, wrong digit count, hint
// anchors that disagree with gold) are flagged rather than force-aligned.
ErrorClass classify_error(const AdditionExample& ex, const std::vector<TokenId>& gold_answer,
                          const std::vector<TokenId>& pred_answer, const FormatSpec& fmt);

// ---- reports ----------------------------------------------------------------

struct ErrorRecord {
  Index length = 0;         // operand digit length
  Index example_index = 0;  // index within the length bucket
  bool carry = false;
  bool structural = false;
  Index digit_diff_count = 0;  // -1 when structural
  std::vector<Index> wrong_positions;
  std::vector<int> pred_digits;
  std::vector<int> gold_digits;
  std::vector<TokenId> pred_tokens;  // raw decode, for reproducibility
  std::vector<TokenId> gold_tokens;
};

struct LengthResult {
  Index length = 0;
  Index n_examples = 0;
  double em_accuracy = 0.0;
};

struct EvalReport {
  std::vector<LengthResult> per_length;  // in requested length order
  std::vector<ErrorRecord> errors;       // (length, example_index) order
  std::string checkpoint_id;
  std::uint64_t eval_seed = 0;
  std::string pe_variant;

  double overall_em() const;  // example-weighted mean over all lengths
};

// Maps questions (each ending at '=') to decoded answers, in order. The
// model-backed decoder is greedy_decode_batch; tests may inject oracles.
using BatchDecoder = std::function<std::vector<std::vector<TokenId>>(
    const std::vector<std::vector<TokenId>>&, Index max_new)>;

// Freshly samples n_per_length examples at each requested length with the
// training-time sampling strategy (uniform digits with nonzero leading digit,
// uniform legal hint offset, optional filler augmentation), decodes, scores
// exact match, and collects an error record per miss.
EvalReport eval_lengths(const ModelParams<float>& params, const std::vector<Index>& lengths,
                        Index n_per_length, const FormatSpec& fmt, std::uint64_t seed);
EvalReport eval_lengths_with(const BatchDecoder& decode, const std::vector<Index>& lengths,
                             Index n_per_length, const FormatSpec& fmt, std::uint64_t seed);

// Frozen-file mode: scores already-rendered lines (as written by write_split)
// instead of sampling, bucketing them by operand length in encounter order.
EvalReport eval_sequences(const ModelParams<float>& params,
                          const std::vector<std::vector<TokenId>>& lines,
                          const FormatSpec& fmt);
EvalReport eval_sequences_with(const BatchDecoder& decode,
                               const std::vector<std::vector<TokenId>>& lines,
                               const FormatSpec& fmt);

// Aggregations recomputed from raw records (keys absent when count is zero).
std::vector<std::pair<Index, Index>> errors_by_position(const EvalReport& report);
std::vector<std::pair<Index, Index>> errors_by_diff_count(const EvalReport& report);

// CSV serialization: "length,n,em" rows, and
// "length,example_index,carry_flag,digit_diff_count,wrong_positions" with the
// positions semicolon-joined (digit_diff_count -1 flags structural errors).
std::string report_csv(const EvalReport& report);
std::string errors_csv(const EvalReport& report);
void write_report_csv(const std::string& path, const EvalReport& report);
void write_errors_csv(const std::string& path, const EvalReport& report);

}  // namespace adgen

#pragma once

// Addition-example generation, rendering, augmentation, tokenization, and
// parsing. Digits are stored little-endian (index = significance). Rendered
// sequences are token lists over a fixed 117-symbol vocabulary.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adgen/ops.hpp"
#include "adgen/rng.hpp"

namespace adgen {

// ---------------------------------------------------------------------------
// Vocabulary: 10 digits, '+', '=', 102 hint symbols h00..h101, filler '_',
// end-of-sequence '$', padding '.'. 117 tokens total.
// ---------------------------------------------------------------------------
class Vocab {
 public:
  static const Vocab& instance();

  Index size() const { return static_cast<Index>(tokens_.size()); }
  const std::string& token(TokenId id) const;
  TokenId id(const std::string& tok) const;  // throws ValueError on unknown
  bool has(const std::string& tok) const;

  TokenId digit(int d) const { return static_cast<TokenId>(d); }
  bool is_digit(TokenId t) const { return t >= 0 && t < 10; }
  int digit_value(TokenId t) const { return static_cast<int>(t); }
  TokenId plus() const { return 10; }
  TokenId equals() const { return 11; }
  TokenId hint(int k) const { return static_cast<TokenId>(12 + k); }  // k in [0,102)
  bool is_hint(TokenId t) const { return t >= 12 && t < 12 + kHintCount; }
  int hint_index(TokenId t) const { return static_cast<int>(t) - 12; }
  TokenId filler() const { return 114; }
  TokenId eos() const { return 115; }
  TokenId pad() const { return 116; }

  static constexpr int kHintCount = 102;

 private:
  Vocab();
  std::vector<std::string> tokens_;
};

std::vector<TokenId> tokenize(const std::string& text);
std::string detokenize(const std::vector<TokenId>& ids);

// ---------------------------------------------------------------------------
// Examples
// ---------------------------------------------------------------------------

struct AdditionExample {
  std::vector<int> a_digits;    // little-endian
  std::vector<int> b_digits;    // little-endian
  std::vector<int> sum_digits;  // little-endian, no superfluous high zeros

  bool operator==(const AdditionExample&) const = default;
};

// Builds the oracle sum by column addition; operands may differ in length.
AdditionExample make_example(std::vector<int> a, std::vector<int> b);

// True iff any column sum (including the incoming carry) reaches 10.
bool carry_flag(const AdditionExample& ex);

// Uniform length 1..max_len, digits uniform, top digit nonzero when len > 1;
// both operands share the sampled length.
AdditionExample sample_example(Index max_len, RngStream& rng);

// Same digit distribution at a fixed operand length.
AdditionExample sample_example_of_length(Index len, RngStream& rng);

struct FormatSpec {
  bool reversed = true;
  bool index_hints = true;
  bool space_augment = false;
  double space_prob = 0.1;
  int space_max_run = 3;

  bool operator==(const FormatSpec&) const = default;
};

// Number of hint symbols an example of operand length len can touch: one per
// operand digit plus the answer's carry slot.
inline Index hint_window(Index len) { return len + 1; }

// Largest legal hint offset for operand length len (inclusive).
inline Index max_hint_offset(Index len) { return Vocab::kHintCount - hint_window(len); }

// Renders "A + B = C". Reversed orientation emits least-significant digits
// first and zero-pads the answer to operand length + 1 so the carry slot is
// always present; standard orientation emits most-significant first with the
// answer at its natural length. With hints on, each digit is preceded by the
// hint symbol of its significance: ascending from hint_offset at significance
// 0 when reversed; anchored so the answer's most significant digit takes
// hint_offset when standard. Either way one example touches at most
// hint_window(len) consecutive symbols starting at hint_offset.
std::vector<TokenId> render(const AdditionExample& ex, const FormatSpec& fmt,
                            Index hint_offset);

// Inserts filler runs at question gaps: independently per gap with
// probability space_prob, a truncated-geometric(1/2, space_max_run) run.
// Never at or after the first answer token.
std::vector<TokenId> augment_spaces(const std::vector<TokenId>& tokens, const FormatSpec& fmt,
                                    RngStream& rng);

// Inverse of render for well-formed sequences (filler/eos/pad tolerated and
// stripped). Validates hint placement and consistency when fmt.index_hints.
// Throws ValueError on malformed input.
AdditionExample parse(const std::vector<TokenId>& tokens, const FormatSpec& fmt);

// Answer-token parse used by evaluation: digits by significance, using hint
// anchors when present. Returns nullopt for structurally invalid answers.
struct ParsedAnswer {
  std::vector<int> digits;        // little-endian by significance
  std::vector<int> hint_indices;  // alphabet index per digit; empty if no hints
};
std::optional<ParsedAnswer> parse_answer_tokens(const std::vector<TokenId>& tokens,
                                                const FormatSpec& fmt);

// Splits a rendered sequence at '='; question includes the '=' token.
std::pair<std::vector<TokenId>, std::vector<TokenId>> split_at_equals(
    const std::vector<TokenId>& tokens);

// Samples a uniform legal hint offset for operand length len.
Index sample_hint_offset(Index len, RngStream& rng);

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::string path;             // dataset file; manifest written to path + ".manifest"
  bool per_length = false;      // false: sample count examples at length 1..max_len
  Index count = 0;              // total examples when !per_length
  Index max_len = 1;            // uniform length bound when !per_length
  std::vector<Index> lengths;   // per_length: emit n_per_length at each entry
  Index n_per_length = 0;
};

// Renders the split in memory, one token sequence per example (no eos/pad).
// Each line draws from its own (seed, line index) stream. spec.path is ignored.
std::vector<std::vector<TokenId>> generate_split(const SplitSpec& spec, const FormatSpec& fmt,
                                                 std::uint64_t seed);

// Writes generate_split output one line at a time plus a manifest. Returns the
// number of lines written. Deterministic in (spec, fmt, seed).
Index write_split(const SplitSpec& spec, const FormatSpec& fmt, std::uint64_t seed);

// Loads a dataset file: one token sequence per line.
std::vector<std::vector<TokenId>> load_split(const std::string& path);

}  // namespace adgen

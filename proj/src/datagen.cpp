#include "adgen/datagen.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace adgen {

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

namespace {

std::string hint_name(int k) {
  std::ostringstream os;
  os << 'h' << (k < 10 ? "0" : "") << k;
  return os.str();
}

const std::unordered_map<std::string, TokenId>& vocab_index() {
  static const std::unordered_map<std::string, TokenId> index = [] {
    std::unordered_map<std::string, TokenId> m;
    const Vocab& v = Vocab::instance();
    for (TokenId t = 0; t < v.size(); ++t) m.emplace(v.token(t), t);
    return m;
  }();
  return index;
}

}  // namespace

Vocab::Vocab() {
  for (int d = 0; d < 10; ++d) tokens_.push_back(std::string(1, char('0' + d)));
  tokens_.push_back("+");
  tokens_.push_back("=");
  for (int k = 0; k < kHintCount; ++k) tokens_.push_back(hint_name(k));
  tokens_.push_back("_");  // filler: a real token, never whitespace
  tokens_.push_back("$");  // end of sequence
  tokens_.push_back(".");  // padding
}

const Vocab& Vocab::instance() {
  static const Vocab v;
  return v;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || id >= size()) throw ValueError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<size_t>(id)];
}

bool Vocab::has(const std::string& tok) const { return vocab_index().count(tok) != 0; }

TokenId Vocab::id(const std::string& tok) const {
  auto it = vocab_index().find(tok);
  if (it == vocab_index().end()) throw ValueError("unknown token: '" + tok + "'");
  return it->second;
}

std::vector<TokenId> tokenize(const std::string& text) {
  std::vector<TokenId> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(Vocab::instance().id(tok));
  return out;
}

std::string detokenize(const std::vector<TokenId>& ids) {
  std::string out;
  const Vocab& v = Vocab::instance();
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += v.token(ids[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Examples
// ---------------------------------------------------------------------------

namespace {

void check_digits(const std::vector<int>& d) {
  if (d.empty()) throw ValueError("operand needs at least one digit");
  for (int x : d)
    if (x < 0 || x > 9) throw ValueError("digit out of range: " + std::to_string(x));
}

}  // namespace

AdditionExample make_example(std::vector<int> a, std::vector<int> b) {
  check_digits(a);
  check_digits(b);
  AdditionExample ex;
  const size_t n = std::max(a.size(), b.size());
  int carry = 0;
  for (size_t s = 0; s < n; ++s) {
    const int c = (s < a.size() ? a[s] : 0) + (s < b.size() ? b[s] : 0) + carry;
    ex.sum_digits.push_back(c % 10);
    carry = c / 10;
  }
  if (carry) ex.sum_digits.push_back(carry);
  while (ex.sum_digits.size() > 1 && ex.sum_digits.back() == 0) ex.sum_digits.pop_back();
  ex.a_digits = std::move(a);
  ex.b_digits = std::move(b);
  return ex;
}

bool carry_flag(const AdditionExample& ex) {
  const size_t n = std::max(ex.a_digits.size(), ex.b_digits.size());
  int carry = 0;
  for (size_t s = 0; s < n; ++s) {
    const int c = (s < ex.a_digits.size() ? ex.a_digits[s] : 0) +
                  (s < ex.b_digits.size() ? ex.b_digits[s] : 0) + carry;
    if (c >= 10) return true;
    carry = c / 10;
  }
  return false;
}

AdditionExample sample_example_of_length(Index len, RngStream& rng) {
  if (len < 1) throw ValueError("operand length must be positive");
  auto draw = [&](std::vector<int>& d) {
    d.resize(static_cast<size_t>(len));
    for (Index s = 0; s < len; ++s) d[static_cast<size_t>(s)] = static_cast<int>(rng.below(10));
    if (len > 1) d[static_cast<size_t>(len - 1)] = 1 + static_cast<int>(rng.below(9));
  };
  std::vector<int> a, b;
  draw(a);
  draw(b);
  return make_example(std::move(a), std::move(b));
}

AdditionExample sample_example(Index max_len, RngStream& rng) {
  if (max_len < 1) throw ValueError("max length must be positive");
  const Index len = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(max_len)));
  return sample_example_of_length(len, rng);
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

Index sample_hint_offset(Index len, RngStream& rng) {
  const Index top = max_hint_offset(len);
  if (top < 0) throw ValueError("operand length exceeds the hint alphabet");
  return static_cast<Index>(rng.below(static_cast<std::uint64_t>(top) + 1));
}

namespace {

// Emits one number. significance_hint maps digit significance to a hint
// alphabet index, or is ignored when hints are off.
template <typename HintFn>
void emit_number(std::vector<TokenId>& out, const std::vector<int>& digits, bool reversed,
                 bool hints, const HintFn& significance_hint) {
  const Vocab& v = Vocab::instance();
  const Index n = static_cast<Index>(digits.size());
  for (Index k = 0; k < n; ++k) {
    const Index s = reversed ? k : n - 1 - k;  // significance of this slot
    if (hints) out.push_back(v.hint(static_cast<int>(significance_hint(s))));
    out.push_back(v.digit(digits[static_cast<size_t>(s)]));
  }
}

}  // namespace

std::vector<TokenId> render(const AdditionExample& ex, const FormatSpec& fmt,
                            Index hint_offset) {
  const Vocab& v = Vocab::instance();
  const Index la = static_cast<Index>(ex.a_digits.size());
  const Index lb = static_cast<Index>(ex.b_digits.size());
  const Index lc = static_cast<Index>(ex.sum_digits.size());
  const Index operand_len = std::max(la, lb);

  std::vector<int> answer = ex.sum_digits;
  if (fmt.reversed)  // carry slot always present: pad to operand length + 1
    answer.resize(static_cast<size_t>(std::max(lc, operand_len + 1)), 0);

  const Index top_sig = std::max({la, lb, static_cast<Index>(answer.size())}) - 1;
  if (fmt.index_hints) {
    if (hint_offset < 0 || hint_offset + hint_window(operand_len) > Vocab::kHintCount)
      throw ValueError("hint window [" + std::to_string(hint_offset) + ", +" +
                       std::to_string(hint_window(operand_len)) + ") exceeds the alphabet");
  }
  // Reversed: significance s takes symbol hint_offset + s. Standard: the
  // highest significance in the example takes hint_offset and symbols ascend
  // toward significance 0, so printed hints still read in alphabet order.
  const auto sig_hint = [&](Index s) {
    return fmt.reversed ? hint_offset + s : hint_offset + (top_sig - s);
  };

  std::vector<TokenId> out;
  emit_number(out, ex.a_digits, fmt.reversed, fmt.index_hints, sig_hint);
  out.push_back(v.plus());
  emit_number(out, ex.b_digits, fmt.reversed, fmt.index_hints, sig_hint);
  out.push_back(v.equals());
  emit_number(out, answer, fmt.reversed, fmt.index_hints, sig_hint);
  return out;
}

std::vector<TokenId> augment_spaces(const std::vector<TokenId>& tokens, const FormatSpec& fmt,
                                    RngStream& rng) {
  if (!fmt.space_augment) return tokens;
  if (fmt.space_prob < 0.0 || fmt.space_prob > 1.0)
    throw ValueError("space probability must lie in [0,1]");
  if (fmt.space_max_run < 1) throw ValueError("space run cap must be at least 1");
  const Vocab& v = Vocab::instance();
  const auto eq = std::find(tokens.begin(), tokens.end(), v.equals());
  const Index eq_pos = static_cast<Index>(eq - tokens.begin());
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (Index i = 0; i < static_cast<Index>(tokens.size()); ++i) {
    out.push_back(tokens[static_cast<size_t>(i)]);
    // gap between token i and i+1 is a question gap iff i+1 <= '=' position
    if (i + 1 <= eq_pos && rng.next_double() < fmt.space_prob) {
      int run = 1;
      while (run < fmt.space_max_run && rng.next_double() < 0.5) ++run;
      for (int k = 0; k < run; ++k) out.push_back(v.filler());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace {

struct ParsedNumber {
  std::vector<int> digits;        // little-endian
  std::vector<int> hint_indices;  // aligned with digits; empty if no hints
};

// Parses one rendered number segment (token order) into little-endian digits.
ParsedNumber parse_number(const std::vector<TokenId>& seg, bool reversed, bool hints) {
  const Vocab& v = Vocab::instance();
  ParsedNumber out;
  if (seg.empty()) throw ValueError("empty number segment");
  if (hints) {
    if (seg.size() % 2 != 0) throw ValueError("hinted number has an odd token count");
    for (size_t i = 0; i < seg.size(); i += 2) {
      if (!v.is_hint(seg[i])) throw ValueError("expected a hint symbol");
      if (!v.is_digit(seg[i + 1])) throw ValueError("expected a digit after a hint");
      out.hint_indices.push_back(v.hint_index(seg[i]));
      out.digits.push_back(v.digit_value(seg[i + 1]));
    }
  } else {
    for (TokenId t : seg) {
      if (!v.is_digit(t)) throw ValueError("expected a digit");
      out.digits.push_back(v.digit_value(t));
    }
  }
  if (!reversed) {
    std::reverse(out.digits.begin(), out.digits.end());
    std::reverse(out.hint_indices.begin(), out.hint_indices.end());
  }
  return out;
}

// Hint consistency: reversed numbers carry hint(s) = base + s; standard ones
// carry hint(s) = K - s. Returns the shared constant (base or K).
Index hint_constant(const ParsedNumber& num, bool reversed) {
  Index k = -1;
  for (size_t s = 0; s < num.hint_indices.size(); ++s) {
    const Index cur = reversed ? num.hint_indices[s] - static_cast<Index>(s)
                               : num.hint_indices[s] + static_cast<Index>(s);
    if (k == -1) k = cur;
    if (cur != k) throw ValueError("hint symbols are not consecutive by significance");
  }
  return k;
}

std::vector<TokenId> strip_tokens(const std::vector<TokenId>& tokens) {
  const Vocab& v = Vocab::instance();
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  for (TokenId t : tokens)
    if (t != v.filler() && t != v.pad() && t != v.eos()) out.push_back(t);
  return out;
}

}  // namespace

AdditionExample parse(const std::vector<TokenId>& tokens, const FormatSpec& fmt) {
  const Vocab& v = Vocab::instance();
  const std::vector<TokenId> clean = strip_tokens(tokens);
  const auto plus = std::find(clean.begin(), clean.end(), v.plus());
  const auto eq = std::find(clean.begin(), clean.end(), v.equals());
  if (plus == clean.end() || eq == clean.end() || eq < plus)
    throw ValueError("expected '+' then '='");
  if (std::count(clean.begin(), clean.end(), v.plus()) != 1 ||
      std::count(clean.begin(), clean.end(), v.equals()) != 1)
    throw ValueError("expected exactly one '+' and one '='");

  const ParsedNumber a =
      parse_number({clean.begin(), plus}, fmt.reversed, fmt.index_hints);
  const ParsedNumber b =
      parse_number({plus + 1, eq}, fmt.reversed, fmt.index_hints);
  const ParsedNumber c =
      parse_number({eq + 1, clean.end()}, fmt.reversed, fmt.index_hints);

  if (fmt.index_hints) {
    const Index ka = hint_constant(a, fmt.reversed);
    const Index kb = hint_constant(b, fmt.reversed);
    const Index kc = hint_constant(c, fmt.reversed);
    if (ka != kb || kb != kc)
      throw ValueError("hint symbols disagree across the numbers");
  }

  AdditionExample ex;
  ex.a_digits = a.digits;
  ex.b_digits = b.digits;
  ex.sum_digits = c.digits;
  while (ex.sum_digits.size() > 1 && ex.sum_digits.back() == 0) ex.sum_digits.pop_back();
  return ex;
}

std::optional<ParsedAnswer> parse_answer_tokens(const std::vector<TokenId>& tokens,
                                                const FormatSpec& fmt) {
  try {
    const ParsedNumber num =
        parse_number(strip_tokens(tokens), fmt.reversed, fmt.index_hints);
    if (fmt.index_hints) hint_constant(num, fmt.reversed);  // consecutive check
    ParsedAnswer out;
    out.digits = num.digits;
    out.hint_indices = num.hint_indices;
    return out;
  } catch (const ValueError&) {
    return std::nullopt;
  }
}

std::pair<std::vector<TokenId>, std::vector<TokenId>> split_at_equals(
    const std::vector<TokenId>& tokens) {
  const Vocab& v = Vocab::instance();
  const auto eq = std::find(tokens.begin(), tokens.end(), v.equals());
  if (eq == tokens.end()) throw ValueError("sequence has no '='");
  return {{tokens.begin(), eq + 1}, {eq + 1, tokens.end()}};
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

namespace {

// Each line draws from its own stream keyed by line index, so output is
// identical however generation work is split across workers.
std::vector<TokenId> render_line(const FormatSpec& fmt, std::uint64_t seed, Index line_index,
                                 Index forced_len, Index max_len) {
  RngStream rng(seed, static_cast<std::uint64_t>(line_index));
  const AdditionExample ex = forced_len > 0 ? sample_example_of_length(forced_len, rng)
                                            : sample_example(max_len, rng);
  const Index len = static_cast<Index>(
      std::max(ex.a_digits.size(), ex.b_digits.size()));
  const Index offset = fmt.index_hints ? sample_hint_offset(len, rng) : 0;
  std::vector<TokenId> tokens = render(ex, fmt, offset);
  if (fmt.space_augment) tokens = augment_spaces(tokens, fmt, rng);
  return tokens;
}

}  // namespace

std::vector<std::vector<TokenId>> generate_split(const SplitSpec& spec, const FormatSpec& fmt,
                                                 std::uint64_t seed) {
  std::vector<std::vector<TokenId>> lines;
  if (spec.per_length) {
    if (spec.lengths.empty() || spec.n_per_length < 1)
      throw ValueError("per-length split needs lengths and a positive count");
    for (Index len : spec.lengths)
      for (Index i = 0; i < spec.n_per_length; ++i)
        lines.push_back(render_line(fmt, seed, static_cast<Index>(lines.size()), len, 0));
  } else {
    if (spec.count < 1) throw ValueError("split needs a positive example count");
    for (Index i = 0; i < spec.count; ++i)
      lines.push_back(render_line(fmt, seed, i, 0, spec.max_len));
  }
  return lines;
}

Index write_split(const SplitSpec& spec, const FormatSpec& fmt, std::uint64_t seed) {
  const auto token_lines = generate_split(spec, fmt, seed);
  std::ofstream out(spec.path);
  if (!out) throw ValueError("cannot open dataset file for writing: " + spec.path);
  Index lines = 0;
  for (const auto& tokens : token_lines) {
    out << detokenize(tokens) << '\n';
    ++lines;
  }
  out.close();
  if (!out) throw ValueError("failed writing dataset file: " + spec.path);

  std::ofstream man(spec.path + ".manifest");
  if (!man) throw ValueError("cannot open manifest for writing");
  man << "seed = " << seed << '\n';
  man << "orientation = " << (fmt.reversed ? "reversed" : "standard") << '\n';
  man << "index_hints = " << (fmt.index_hints ? "true" : "false") << '\n';
  man << "space_augment = " << (fmt.space_augment ? "true" : "false") << '\n';
  man << "space_prob = " << fmt.space_prob << '\n';
  man << "space_max_run = " << fmt.space_max_run << '\n';
  man << "mode = " << (spec.per_length ? "per_length" : "sampled") << '\n';
  if (spec.per_length) {
    man << "lengths =";
    for (size_t i = 0; i < spec.lengths.size(); ++i)
      man << (i ? "," : " ") << spec.lengths[i];
    man << '\n';
    man << "n_per_length = " << spec.n_per_length << '\n';
  } else {
    man << "count = " << spec.count << '\n';
    man << "max_len = " << spec.max_len << '\n';
  }
  man << "lines = " << lines << '\n';
  return lines;
}

std::vector<std::vector<TokenId>> load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("cannot open dataset file: " + path);
  std::vector<std::vector<TokenId>> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(tokenize(line));
  return out;
}

}  // namespace adgen

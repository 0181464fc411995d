#include "adgen/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "adgen/threading.hpp"

namespace adgen {

namespace fs = std::filesystem;

namespace {

// Keeps the held-out validation stream disjoint from every training stream,
// which is keyed directly by data_seed.
constexpr std::uint64_t kValSeedTag = 0x56414C1Dull;
constexpr Index kValExamples = 256;

std::uint64_t parse_u64_value(const std::string& s) {
  std::uint64_t v = 0;
  const char* b = s.data();
  const char* e = b + s.size();
  const auto r = std::from_chars(b, e, v, 10);
  if (r.ec != std::errc{} || r.ptr != e)
    throw ValueError("expected an unsigned integer, got '" + s + "'");
  return v;
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& s, Parse parse) {
  std::vector<T> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ValueError("empty element in list '" + s + "'");
    out.push_back(parse(item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ValueError("empty list");
  return out;
}

std::vector<Index> parse_index_list(const std::string& s) {
  return parse_list<Index>(s, [](const std::string& t) { return Index(parse_int(t)); });
}

std::vector<std::uint64_t> parse_u64_list(const std::string& s) {
  return parse_list<std::uint64_t>(s, parse_u64_value);
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

bool has_prefix(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

// Token count of the worst-case rendered line at an operand length: both
// operands all 9s, so the answer carries into one extra digit. Space
// augmentation can add up to space_max_run fillers at each question gap.
Index worst_line_tokens(Index len, const FormatSpec& fmt, bool with_spaces) {
  const AdditionExample ex = make_example(std::vector<int>(static_cast<std::size_t>(len), 9),
                                          std::vector<int>(static_cast<std::size_t>(len), 9));
  const auto line = render(ex, fmt, 0);
  Index total = static_cast<Index>(line.size());
  if (with_spaces && fmt.space_augment) {
    const auto [q, a] = split_at_equals(line);
    (void)a;
    total += static_cast<Index>(q.size()) * fmt.space_max_run;
  }
  return total;
}

// Worst-case decode capacity needed at an eval length: question plus the
// decode budget (gold answer + 2, mirroring the evaluator's max_new).
Index worst_eval_tokens(Index len, const FormatSpec& fmt) {
  const AdditionExample ex = make_example(std::vector<int>(static_cast<std::size_t>(len), 9),
                                          std::vector<int>(static_cast<std::size_t>(len), 9));
  const auto [q, gold] = split_at_equals(render(ex, fmt, 0));
  Index qlen = static_cast<Index>(q.size());
  if (fmt.space_augment) qlen += static_cast<Index>(q.size()) * fmt.space_max_run;
  return qlen + static_cast<Index>(gold.size()) + 2;
}

std::string checkpoint_csv_name(Index step) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "em_ckpt_%08lld.csv", static_cast<long long>(step));
  return buf;
}

std::string checkpoint_bin_name(Index step) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "ckpt_%08lld.bin", static_cast<long long>(step));
  return buf;
}

// ckpt_<step>.bin files in a directory, ascending by step.
std::vector<std::pair<Index, std::string>> list_checkpoints(const std::string& dir) {
  std::vector<std::pair<Index, std::string>> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (!has_prefix(name, "ckpt_") || !name.ends_with(".bin")) continue;
    const std::string digits = name.substr(5, name.size() - 5 - 4);
    Index step = 0;
    const auto r = std::from_chars(digits.data(), digits.data() + digits.size(), step, 10);
    if (r.ec != std::errc{} || r.ptr != digits.data() + digits.size()) continue;
    out.emplace_back(step, entry.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string sanitize_cell(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

std::vector<std::string> split_line(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config serialization
// ---------------------------------------------------------------------------

KVList experiment_config_kv(const ExperimentConfig& cfg) {
  KVList kv = model_config_kv(cfg.model);
  for (auto& e : train_config_kv(cfg.train)) kv.push_back(std::move(e));
  kv.emplace_back("data.reversed", cfg.data.fmt.reversed ? "true" : "false");
  kv.emplace_back("data.index_hints", cfg.data.fmt.index_hints ? "true" : "false");
  kv.emplace_back("data.space_augment", cfg.data.fmt.space_augment ? "true" : "false");
  kv.emplace_back("data.space_prob", format_double(cfg.data.fmt.space_prob));
  kv.emplace_back("data.space_max_run", std::to_string(cfg.data.fmt.space_max_run));
  kv.emplace_back("data.max_train_len", std::to_string(cfg.data.max_train_len));
  kv.emplace_back("data.train_examples", std::to_string(cfg.data.train_examples));
  kv.emplace_back("eval.lengths", join_list(cfg.eval.lengths));
  kv.emplace_back("eval.n_per_length", std::to_string(cfg.eval.n_per_length));
  kv.emplace_back("eval.seed", std::to_string(cfg.eval.seed));
  kv.emplace_back("sweep.weight_seeds", join_list(cfg.sweep.weight_seeds));
  kv.emplace_back("sweep.data_seeds", join_list(cfg.sweep.data_seeds));
  return kv;
}

void apply_experiment_kv(const KVList& kv, ExperimentConfig* cfg) {
  apply_model_kv(kv, &cfg->model);
  apply_train_kv(kv, &cfg->train);
  for (const auto& [key, value] : kv) {
    if (has_prefix(key, "model.") || has_prefix(key, "pe.") || has_prefix(key, "train."))
      continue;  // consumed above
    if (key == "data.reversed") cfg->data.fmt.reversed = parse_bool(value);
    else if (key == "data.index_hints") cfg->data.fmt.index_hints = parse_bool(value);
    else if (key == "data.space_augment") cfg->data.fmt.space_augment = parse_bool(value);
    else if (key == "data.space_prob") cfg->data.fmt.space_prob = parse_double(value);
    else if (key == "data.space_max_run") cfg->data.fmt.space_max_run = int(parse_int(value));
    else if (key == "data.max_train_len") cfg->data.max_train_len = Index(parse_int(value));
    else if (key == "data.train_examples") cfg->data.train_examples = Index(parse_int(value));
    else if (key == "eval.lengths") cfg->eval.lengths = parse_index_list(value);
    else if (key == "eval.n_per_length") cfg->eval.n_per_length = Index(parse_int(value));
    else if (key == "eval.seed") cfg->eval.seed = parse_u64_value(value);
    else if (key == "sweep.weight_seeds") cfg->sweep.weight_seeds = parse_u64_list(value);
    else if (key == "sweep.data_seeds") cfg->sweep.data_seeds = parse_u64_list(value);
    else throw ValueError("unknown config key: " + key);
  }
}

std::string experiment_to_text(const ExperimentConfig& cfg) {
  return serialize_kv(experiment_config_kv(cfg));
}

ExperimentConfig experiment_from_text(const std::string& text) {
  ExperimentConfig cfg;
  apply_experiment_kv(parse_kv(text), &cfg);
  return cfg;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

std::vector<std::string> validate_experiment(const ExperimentConfig& cfg) {
  std::vector<std::string> bad;
  const auto flag = [&bad](const std::string& field, const std::string& why) {
    bad.push_back(field + ": " + why);
  };

  // model
  if (cfg.model.n_layers < 1) flag("model.n_layers", "must be positive");
  if (cfg.model.d_model < 1) flag("model.d_model", "must be positive");
  if (cfg.model.n_heads < 1) flag("model.n_heads", "must be positive");
  if (cfg.model.d_ff < 1) flag("model.d_ff", "must be positive");
  if (cfg.model.max_seq_len < 1) flag("model.max_seq_len", "must be positive");
  if (cfg.model.vocab_size < Vocab::instance().size())
    flag("model.vocab_size",
         "must cover the " + std::to_string(Vocab::instance().size()) + "-token vocabulary");
  if (cfg.model.n_heads >= 1 && cfg.model.d_model >= 1 &&
      cfg.model.d_model % cfg.model.n_heads != 0)
    flag("model.d_model", "must divide evenly into model.n_heads");
  if (cfg.model.pe.variant == PEVariant::RoPE && cfg.model.head_dim() % 2 != 0)
    flag("model.n_heads", "rotary PE needs an even head dimension");
  if (cfg.model.dropout < 0.0 || cfg.model.dropout >= 1.0)
    flag("model.dropout", "must lie in [0,1)");
  if (cfg.model.pe.variant == PEVariant::FIRE) {
    if (cfg.model.fire_L_init <= 0.0) flag("model.fire_L_init", "must be positive");
    if (cfg.model.pe.fire_hidden < 1) flag("pe.fire_hidden", "must be positive");
  }
  if (cfg.model.pe.variant == PEVariant::T5Bucket) {
    if (cfg.model.pe.t5_buckets < 2 || cfg.model.pe.t5_buckets % 2 != 0)
      flag("pe.t5_buckets", "must be even and at least 2");
    else if (cfg.model.pe.t5_max_dist <= cfg.model.pe.t5_buckets / 2)
      flag("pe.t5_max_dist", "must exceed half the bucket count");
  }
  if (cfg.model.pe.variant == PEVariant::Alibi && cfg.model.pe.alibi_r <= 0.0)
    flag("pe.alibi_r", "must be positive");
  if (cfg.model.pe.variant == PEVariant::RoPE && cfg.model.pe.rope_base <= 0.0)
    flag("pe.rope_base", "must be positive");
  if (cfg.model.pe.randomized && cfg.model.pe.randomized_max < cfg.model.max_seq_len)
    flag("pe.randomized_max", "must cover model.max_seq_len");

  // train
  if (cfg.train.steps < 1) flag("train.steps", "must be positive");
  if (cfg.train.batch_size < 1) flag("train.batch_size", "must be positive");
  if (cfg.train.warmup_steps < 0) flag("train.warmup_steps", "must be non-negative");
  if (cfg.train.warmup_steps > cfg.train.steps)
    flag("train.warmup_steps", "exceeds train.steps");
  if (!(cfg.train.lr_peak > 0.0)) flag("train.lr_peak", "must be positive");
  if (cfg.train.lr_floor_ratio < 0.0 || cfg.train.lr_floor_ratio > 1.0)
    flag("train.lr_floor_ratio", "must lie in [0,1]");
  if (cfg.train.weight_decay < 0.0) flag("train.weight_decay", "must be non-negative");
  if (cfg.train.adam_beta1 < 0.0 || cfg.train.adam_beta1 >= 1.0)
    flag("train.adam_beta1", "must lie in [0,1)");
  if (cfg.train.adam_beta2 < 0.0 || cfg.train.adam_beta2 >= 1.0)
    flag("train.adam_beta2", "must lie in [0,1)");
  if (!(cfg.train.adam_eps > 0.0)) flag("train.adam_eps", "must be positive");
  if (cfg.train.grad_clip < 0.0) flag("train.grad_clip", "must be non-negative");
  if (cfg.train.eval_every < 0) flag("train.eval_every", "must be non-negative");
  if (cfg.train.checkpoint_every < 0) flag("train.checkpoint_every", "must be non-negative");

  // data
  if (cfg.data.train_examples < 1) flag("data.train_examples", "must be positive");
  const bool train_len_ok = cfg.data.max_train_len >= 1;
  if (!train_len_ok) flag("data.max_train_len", "must be positive");
  if (cfg.data.fmt.space_prob < 0.0 || cfg.data.fmt.space_prob > 1.0)
    flag("data.space_prob", "must lie in [0,1]");
  if (cfg.data.fmt.space_max_run < 1) flag("data.space_max_run", "must be positive");
  const bool space_ok =
      cfg.data.fmt.space_prob >= 0.0 && cfg.data.fmt.space_prob <= 1.0 &&
      cfg.data.fmt.space_max_run >= 1;
  if (train_len_ok && cfg.data.fmt.index_hints &&
      hint_window(cfg.data.max_train_len) > Vocab::kHintCount)
    flag("data.max_train_len", "hint window exceeds the hint alphabet");
  else if (train_len_ok && space_ok && cfg.model.max_seq_len >= 1) {
    const Index need = worst_line_tokens(cfg.data.max_train_len, cfg.data.fmt, true) + 1;
    if (need > cfg.model.max_seq_len)
      flag("model.max_seq_len", "training lines at max_train_len can reach " +
                                    std::to_string(need) + " tokens");
  }

  // eval
  if (cfg.eval.lengths.empty()) flag("eval.lengths", "must be non-empty");
  if (cfg.eval.n_per_length < 1) flag("eval.n_per_length", "must be positive");
  for (Index len : cfg.eval.lengths) {
    const std::string field = "eval.lengths[" + std::to_string(len) + "]";
    if (len < 1) {
      flag("eval.lengths", "contains a non-positive length");
      continue;
    }
    if (cfg.data.fmt.index_hints && hint_window(len) > Vocab::kHintCount) {
      flag(field, "hint window exceeds the hint alphabet");
      continue;
    }
    if (space_ok && cfg.model.max_seq_len >= 1) {
      const Index need = worst_eval_tokens(len, cfg.data.fmt);
      if (need > cfg.model.max_seq_len)
        flag(field, "decoding needs " + std::to_string(need) + " tokens of capacity");
    }
  }

  // sweep
  if (cfg.sweep.weight_seeds.empty()) flag("sweep.weight_seeds", "must be non-empty");
  if (cfg.sweep.data_seeds.empty()) flag("sweep.data_seeds", "must be non-empty");

  return bad;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValueError("cannot open file for writing: " + path);
  out << text;
  out.close();
  if (!out) throw ValueError("failed writing file: " + path);
}

std::vector<LengthResult> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "length,n,em")
    throw ValueError("malformed report CSV: bad header");
  std::vector<LengthResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line, ',');
    if (cells.size() != 3) throw ValueError("malformed report CSV row: " + line);
    LengthResult r;
    r.length = Index(parse_int(cells[0]));
    r.n_examples = Index(parse_int(cells[1]));
    r.em_accuracy = parse_double(cells[2]);
    out.push_back(r);
  }
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "step,split,loss,next_token_acc,lr")
    throw ValueError("malformed metrics CSV: bad header");
  std::vector<MetricsRow> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_line(line, ',');
    if (cells.size() != 5) throw ValueError("malformed metrics CSV row: " + line);
    MetricsRow r;
    r.step = Index(parse_int(cells[0]));
    r.split = cells[1];
    r.loss = parse_double(cells[2]);
    r.next_token_acc = parse_double(cells[3]);
    r.lr = parse_double(cells[4]);
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

RunResult run(const ExperimentConfig& cfg, const std::string& dir) {
  const auto violations = validate_experiment(cfg);
  if (!violations.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw ValueError(msg);
  }

  fs::create_directories(fs::path(dir) / "eval");
  fs::create_directories(fs::path(dir) / "ckpt");
  write_text_file(dir + "/config.txt", experiment_to_text(cfg));
  write_text_file(dir + "/env.txt", "threads = " + std::to_string(thread_count()) + "\n");

  SplitSpec split;
  split.count = cfg.data.train_examples;
  split.max_len = cfg.data.max_train_len;
  const auto train_lines = generate_split(split, cfg.data.fmt, cfg.train.data_seed);

  std::ofstream metrics(dir + "/metrics.csv", std::ios::binary);
  if (!metrics) throw ValueError("cannot open metrics.csv for writing in " + dir);
  metrics << "step,split,loss,next_token_acc,lr\n";

  PackedBatch val;
  if (cfg.train.eval_every > 0) {
    SplitSpec vs;
    vs.count = std::min<Index>(kValExamples, cfg.data.train_examples);
    vs.max_len = cfg.data.max_train_len;
    val = pack_batch(generate_split(vs, cfg.data.fmt, cfg.train.data_seed ^ kValSeedTag),
                     cfg.train.answer_only_loss);
  }

  TrainHooks hooks;
  hooks.checkpoint_dir = dir + "/ckpt";
  hooks.on_metrics = [&metrics](const StepMetrics& m) {
    metrics << m.step << ",train," << format_double(m.loss) << ',' << format_double(m.accuracy)
            << ',' << format_double(m.lr) << '\n';
  };
  hooks.on_eval = [&](Index step, const ModelParams<float>& params) {
    ModelParams<float> view = params;  // shares tensor storage
    view.config.dropout = 0.0;
    const std::vector<PositionMap> maps(static_cast<std::size_t>(val.batch),
                                        identity_positions(val.seq));
    LossStats stats;
    const Tensor<float> logits = forward_batch(view, val.inputs, val.batch, val.seq, maps);
    const Tensor<float> loss = cross_entropy(logits, val.targets, val.mask, &stats);
    metrics << step << ",val," << format_double(static_cast<double>(loss[0])) << ','
            << format_double(stats.accuracy) << ',' << format_double(lr_at(step, cfg.train))
            << '\n';
  };

  TrainResult tr = train(cfg.model, cfg.train, train_lines, hooks);
  metrics.close();
  if (!metrics) throw ValueError("failed writing metrics.csv in " + dir);

  RunResult out;
  out.dir = dir;
  out.metrics = std::move(tr.metrics);

  const std::string eval_dir = dir + "/eval/";
  for (const auto& [step, path] : list_checkpoints(dir + "/ckpt")) {
    if (step == cfg.train.steps) continue;  // final parameters evaluated below
    const Checkpoint ck = load_checkpoint(path);
    EvalReport rep = eval_lengths(ck.params, cfg.eval.lengths, cfg.eval.n_per_length,
                                  cfg.data.fmt, cfg.eval.seed);
    rep.checkpoint_id = checkpoint_bin_name(step);
    write_report_csv(eval_dir + checkpoint_csv_name(step), rep);
    out.checkpoint_reports.emplace_back(step, std::move(rep));
  }

  EvalReport fin = eval_lengths(tr.params, cfg.eval.lengths, cfg.eval.n_per_length,
                                cfg.data.fmt, cfg.eval.seed);
  fin.checkpoint_id = checkpoint_bin_name(cfg.train.steps);
  write_report_csv(eval_dir + checkpoint_csv_name(cfg.train.steps), fin);
  write_report_csv(eval_dir + "em.csv", fin);
  write_errors_csv(eval_dir + "errors.csv", fin);
  out.checkpoint_reports.emplace_back(cfg.train.steps, fin);
  out.final_report = std::move(fin);
  return out;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

std::vector<SweepSummaryRow> summarize_runs(const std::vector<std::string>& run_dirs) {
  std::map<Index, std::vector<double>> by_length;
  for (const std::string& rd : run_dirs) {
    const auto rows = parse_report_csv(read_text_file(rd + "/eval/em.csv"));
    for (const LengthResult& r : rows) by_length[r.length].push_back(r.em_accuracy);
  }
  std::vector<SweepSummaryRow> out;
  for (const auto& [length, ems] : by_length) {
    SweepSummaryRow row;
    row.length = length;
    row.n_runs = static_cast<Index>(ems.size());
    row.best_em = *std::max_element(ems.begin(), ems.end());
    row.min_em = *std::min_element(ems.begin(), ems.end());
    row.median_em = quantile(ems, 0.5);
    out.push_back(row);
  }
  return out;
}

SweepResult sweep(const ExperimentConfig& cfg, const std::string& dir) {
  const auto violations = validate_experiment(cfg);
  if (!violations.empty()) {
    std::string msg = "invalid experiment config:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw ValueError(msg);
  }

  fs::create_directories(fs::path(dir) / "runs");
  write_text_file(dir + "/config.txt", experiment_to_text(cfg));

  SweepResult res;
  res.dir = dir;
  for (std::uint64_t ws : cfg.sweep.weight_seeds) {
    for (std::uint64_t ds : cfg.sweep.data_seeds) {
      SweepCell cell;
      cell.weight_seed = ws;
      cell.data_seed = ds;
      cell.dir = dir + "/runs/w" + std::to_string(ws) + "_d" + std::to_string(ds);
      ExperimentConfig cell_cfg = cfg;
      cell_cfg.train.weight_seed = ws;
      cell_cfg.train.data_seed = ds;
      try {
        const RunResult rr = run(cell_cfg, cell.dir);
        cell.ok = true;
        cell.em_final = rr.final_report.overall_em();
        for (const auto& [step, rep] : rr.checkpoint_reports) {
          (void)step;
          cell.em_max_over_ckpts = std::max(cell.em_max_over_ckpts, rep.overall_em());
        }
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
      }
      res.cells.push_back(std::move(cell));
    }
  }

  std::string cells_text = "weight_seed,data_seed,status,em_final,em_max_over_ckpts,error\n";
  std::vector<std::string> ok_dirs;
  for (const SweepCell& c : res.cells) {
    cells_text += std::to_string(c.weight_seed) + ',' + std::to_string(c.data_seed) + ',' +
                  (c.ok ? "ok" : "failed") + ',' + format_double(c.em_final) + ',' +
                  format_double(c.em_max_over_ckpts) + ',' + sanitize_cell(c.error) + '\n';
    if (c.ok) ok_dirs.push_back(c.dir);
  }
  write_text_file(dir + "/cells.csv", cells_text);

  res.summary = summarize_runs(ok_dirs);
  std::string summary_text = "length,n_runs,best_em,median_em,min_em\n";
  for (const SweepSummaryRow& r : res.summary)
    summary_text += std::to_string(r.length) + ',' + std::to_string(r.n_runs) + ',' +
                    format_double(r.best_em) + ',' + format_double(r.median_em) + ',' +
                    format_double(r.min_em) + '\n';
  write_text_file(dir + "/summary.csv", summary_text);
  return res;
}

// ---------------------------------------------------------------------------
// plots
// ---------------------------------------------------------------------------

std::string plot_em_vs_length(const std::vector<std::string>& em_csv_paths,
                              std::vector<std::string> labels) {
  if (em_csv_paths.empty()) throw ValueError("plot has no data");
  if (!labels.empty() && labels.size() != em_csv_paths.size())
    throw ValueError("need one label per report file");
  std::vector<PlotSeries> series;
  for (std::size_t i = 0; i < em_csv_paths.size(); ++i) {
    PlotSeries s;
    if (!labels.empty()) {
      s.label = labels[i];
    } else {
      // <run>/eval/em.csv -> <run>; bare files fall back to their stem
      const fs::path p(em_csv_paths[i]);
      const fs::path run = p.parent_path().parent_path().filename();
      s.label = run.empty() ? p.stem().string() : run.string();
    }
    for (const LengthResult& r : parse_report_csv(read_text_file(em_csv_paths[i]))) {
      s.x.push_back(static_cast<double>(r.length));
      s.y.push_back(r.em_accuracy);
    }
    series.push_back(std::move(s));
  }
  return svg_line_plot(series, "exact match by operand length", "operand digits",
                       "exact match");
}

std::string plot_loss_vs_step(const std::string& metrics_csv_path) {
  const auto rows = parse_metrics_csv(read_text_file(metrics_csv_path));
  std::vector<PlotSeries> series;
  for (const MetricsRow& r : rows) {
    auto it = std::find_if(series.begin(), series.end(),
                           [&r](const PlotSeries& s) { return s.label == r.split; });
    if (it == series.end()) {
      series.push_back(PlotSeries{r.split, {}, {}});
      it = series.end() - 1;
    }
    it->x.push_back(static_cast<double>(r.step));
    it->y.push_back(r.loss);
  }
  return svg_line_plot(series, "training loss", "step", "loss");
}

std::string plot_em_vs_step(const std::string& run_dir, std::vector<Index> lengths) {
  std::vector<std::pair<Index, std::vector<LengthResult>>> reports;
  const std::string eval_dir = run_dir + "/eval";
  if (fs::is_directory(eval_dir)) {
    for (const auto& entry : fs::directory_iterator(eval_dir)) {
      const std::string name = entry.path().filename().string();
      if (!has_prefix(name, "em_ckpt_") || !name.ends_with(".csv")) continue;
      const std::string digits = name.substr(8, name.size() - 8 - 4);
      Index step = 0;
      const auto r = std::from_chars(digits.data(), digits.data() + digits.size(), step, 10);
      if (r.ec != std::errc{} || r.ptr != digits.data() + digits.size()) continue;
      reports.emplace_back(step, parse_report_csv(read_text_file(entry.path().string())));
    }
  }
  if (reports.empty())
    throw ValueError("no checkpoint evaluations found under " + eval_dir);
  std::sort(reports.begin(), reports.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  if (lengths.empty())
    for (const LengthResult& r : reports[0].second) lengths.push_back(r.length);

  std::vector<PlotSeries> series;
  for (Index len : lengths) {
    PlotSeries s;
    s.label = "len " + std::to_string(len);
    for (const auto& [step, rows] : reports) {
      for (const LengthResult& r : rows)
        if (r.length == len) {
          s.x.push_back(static_cast<double>(step));
          s.y.push_back(r.em_accuracy);
        }
    }
    series.push_back(std::move(s));
  }
  return svg_line_plot(series, "exact match by checkpoint", "step", "exact match");
}

std::string plot_seed_box(const std::string& sweep_dir) {
  std::map<Index, std::vector<double>> by_length;
  const std::string runs_dir = sweep_dir + "/runs";
  if (fs::is_directory(runs_dir)) {
    std::vector<std::string> dirs;
    for (const auto& entry : fs::directory_iterator(runs_dir))
      if (entry.is_directory() && fs::exists(entry.path() / "eval" / "em.csv"))
        dirs.push_back(entry.path().string());
    std::sort(dirs.begin(), dirs.end());
    for (const std::string& rd : dirs)
      for (const LengthResult& r : parse_report_csv(read_text_file(rd + "/eval/em.csv")))
        by_length[r.length].push_back(r.em_accuracy);
  }
  if (by_length.empty()) throw ValueError("no completed runs under " + runs_dir);
  std::vector<BoxStats> boxes;
  for (const auto& [length, ems] : by_length)
    boxes.push_back(box_stats(static_cast<double>(length), ems));
  return svg_box_plot(boxes, "exact match across seeds", "operand digits", "exact match");
}

}  // namespace adgen

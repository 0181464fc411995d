#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "adgen/harness.hpp"

using namespace adgen;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig cfg;
  cfg.model.n_layers = 1;
  cfg.model.d_model = 16;
  cfg.model.n_heads = 2;
  cfg.model.d_ff = 32;
  cfg.model.vocab_size = Vocab::instance().size();
  cfg.model.max_seq_len = 24;
  cfg.model.pe.variant = PEVariant::FIRE;
  cfg.model.pe.fire_hidden = 4;
  cfg.model.fire_L_init = 18.0;
  cfg.train.steps = 100;
  cfg.train.batch_size = 8;
  cfg.train.warmup_steps = 10;
  cfg.train.lr_peak = 1e-3;
  cfg.train.eval_every = 25;
  cfg.train.checkpoint_every = 50;
  cfg.train.weight_seed = 1;
  cfg.train.data_seed = 2;
  cfg.data.max_train_len = 2;
  cfg.data.train_examples = 64;
  cfg.eval.lengths = {1, 2};
  cfg.eval.n_per_length = 5;
  cfg.eval.seed = 7;
  cfg.sweep.weight_seeds = {1, 2};
  cfg.sweep.data_seeds = {3, 4};
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "adgen_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// One shared smoke run so the filesystem-layout cases don't retrain.
struct SmokeRun {
  ExperimentConfig cfg = tiny_experiment();
  std::string dir;
  RunResult result;
};

const SmokeRun& smoke() {
  static const SmokeRun once = [] {
    SmokeRun s;
    s.dir = fresh_dir("smoke").string();
    s.result = run(s.cfg, s.dir);
    return s;
  }();
  return once;
}

ExperimentConfig random_config(RngStream& rng) {
  ExperimentConfig c;
  c.model.n_layers = Index(1 + rng.below(3));
  c.model.d_model = Index(8 * (1 + rng.below(4)));
  c.model.n_heads = Index(1 + rng.below(4));
  c.model.d_ff = Index(16 + rng.below(64));
  c.model.max_seq_len = Index(16 + rng.below(100));
  c.model.tie_embeddings = rng.below(2) == 0;
  c.model.dropout = rng.next_double() * 0.5;
  c.model.fire_L_init = 1.0 + rng.next_double() * 100.0;
  const PEVariant variants[] = {PEVariant::NoPE,      PEVariant::RoPE, PEVariant::Alibi,
                                PEVariant::KerpleLog, PEVariant::T5Bucket, PEVariant::FIRE};
  c.model.pe.variant = variants[rng.below(6)];
  c.model.pe.rope_base = 100.0 + rng.next_double() * 1e5;
  c.model.pe.alibi_r = rng.next_double() + 0.01;
  c.model.pe.alibi_geometric = rng.below(2) == 0;
  c.model.pe.t5_buckets = int(2 + 2 * rng.below(16));
  c.model.pe.t5_max_dist = int(64 + rng.below(256));
  c.model.pe.fire_hidden = int(1 + rng.below(63));
  c.model.pe.randomized = rng.below(2) == 0;
  c.model.pe.randomized_max = Index(rng.below(4096));
  c.model.pe.randomize_at_eval = rng.below(2) == 0;
  c.train.steps = Index(1 + rng.below(100000));
  c.train.batch_size = Index(1 + rng.below(256));
  c.train.warmup_steps = Index(rng.below(1000));
  c.train.lr_peak = rng.next_double() * 1e-2;
  c.train.lr_floor_ratio = rng.next_double();
  c.train.weight_decay = rng.next_double();
  c.train.adam_beta1 = rng.next_double() * 0.999;
  c.train.adam_beta2 = rng.next_double() * 0.999;
  c.train.adam_eps = 1e-10 + rng.next_double() * 1e-6;
  c.train.grad_clip = rng.next_double() * 2.0;
  c.train.weight_seed = rng.next_u64();
  c.train.data_seed = rng.next_u64();
  c.train.eval_every = Index(rng.below(100));
  c.train.checkpoint_every = Index(rng.below(100));
  c.train.answer_only_loss = rng.below(2) == 0;
  c.data.fmt.reversed = rng.below(2) == 0;
  c.data.fmt.index_hints = rng.below(2) == 0;
  c.data.fmt.space_augment = rng.below(2) == 0;
  c.data.fmt.space_prob = rng.next_double();
  c.data.fmt.space_max_run = int(1 + rng.below(5));
  c.data.max_train_len = Index(1 + rng.below(40));
  c.data.train_examples = Index(1 + rng.below(100000));
  c.eval.lengths.clear();
  for (std::uint64_t i = 0, n = 1 + rng.below(6); i < n; ++i)
    c.eval.lengths.push_back(Index(1 + rng.below(101)));
  c.eval.n_per_length = Index(1 + rng.below(1000));
  c.eval.seed = rng.next_u64();
  c.sweep.weight_seeds.clear();
  for (std::uint64_t i = 0, n = 1 + rng.below(4); i < n; ++i)
    c.sweep.weight_seeds.push_back(rng.next_u64());
  c.sweep.data_seeds.clear();
  for (std::uint64_t i = 0, n = 1 + rng.below(4); i < n; ++i)
    c.sweep.data_seeds.push_back(rng.next_u64());
  return c;
}

// --- tiny SVG scanners for the parse-back checks ---------------------------

std::string nth_element(const std::string& svg, const std::string& open, int n) {
  std::size_t pos = 0;
  for (int i = 0; i <= n; ++i) {
    pos = svg.find(open, pos);
    REQUIRE(pos != std::string::npos);
    if (i < n) pos += open.size();
  }
  const std::size_t end = svg.find('>', pos);
  REQUIRE(end != std::string::npos);
  return svg.substr(pos, end - pos);
}

int count_of(const std::string& svg, const std::string& needle) {
  int n = 0;
  std::size_t pos = 0;
  while ((pos = svg.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

std::string attr_of(const std::string& element, const std::string& attr) {
  const std::string key = attr + "=\"";
  const std::size_t pos = element.find(key);
  REQUIRE(pos != std::string::npos);
  const std::size_t end = element.find('"', pos + key.size());
  REQUIRE(end != std::string::npos);
  return element.substr(pos + key.size(), end - (pos + key.size()));
}

std::vector<double> parse_doubles(const std::string& s, char sep = ' ') {
  std::vector<double> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep))
    if (!item.empty()) out.push_back(parse_double(item));
  return out;
}

struct AxisTransform {
  double xmin, xmax, ymin, ymax, px0, px1, py0, py1;
  double map_x(double x) const { return px0 + (x - xmin) / (xmax - xmin) * (px1 - px0); }
  double map_y(double y) const { return py1 - (y - ymin) / (ymax - ymin) * (py1 - py0); }
};

AxisTransform axes_of(const std::string& svg) {
  const std::string el = nth_element(svg, "<g class=\"axes\"", 0);
  AxisTransform t{};
  t.xmin = parse_double(attr_of(el, "data-xmin"));
  t.xmax = parse_double(attr_of(el, "data-xmax"));
  t.ymin = parse_double(attr_of(el, "data-ymin"));
  t.ymax = parse_double(attr_of(el, "data-ymax"));
  t.px0 = parse_double(attr_of(el, "data-px0"));
  t.px1 = parse_double(attr_of(el, "data-px1"));
  t.py0 = parse_double(attr_of(el, "data-py0"));
  t.py1 = parse_double(attr_of(el, "data-py1"));
  return t;
}

void check_polyline_parse_back(const std::string& svg, int series_index,
                               const std::vector<double>& want_x,
                               const std::vector<double>& want_y) {
  const std::string el = nth_element(svg, "<polyline class=\"series\"", series_index);
  const auto xs = parse_doubles(attr_of(el, "data-x"));
  const auto ys = parse_doubles(attr_of(el, "data-y"));
  CHECK(xs == want_x);
  CHECK(ys == want_y);
  const AxisTransform t = axes_of(svg);
  const std::string pts = attr_of(el, "points");
  std::vector<double> px, py;
  std::istringstream in(pts);
  std::string pair;
  while (in >> pair) {
    const auto comma = pair.find(',');
    REQUIRE(comma != std::string::npos);
    px.push_back(parse_double(pair.substr(0, comma)));
    py.push_back(parse_double(pair.substr(comma + 1)));
  }
  REQUIRE(px.size() == xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK(px[i] == doctest::Approx(t.map_x(xs[i])).epsilon(1e-9));
    CHECK(py[i] == doctest::Approx(t.map_y(ys[i])).epsilon(1e-9));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// config round trip
// ---------------------------------------------------------------------------

TEST_CASE("experiment config text round-trips to the identical struct") {
  const ExperimentConfig def;
  CHECK(experiment_from_text(experiment_to_text(def)) == def);

  RngStream rng(1234, 0);
  for (int i = 0; i < 60; ++i) {
    const ExperimentConfig cfg = random_config(rng);
    const std::string text = experiment_to_text(cfg);
    const ExperimentConfig back = experiment_from_text(text);
    CHECK(back == cfg);
    CHECK(experiment_to_text(back) == text);  // byte-stable second pass
  }
}

TEST_CASE("experiment config parsing keeps defaults and rejects unknown keys") {
  const ExperimentConfig got = experiment_from_text(
      "# comment\n\nmodel.n_layers = 3\ndata.reversed = false\neval.lengths = 2, 4, 8\n"
      "sweep.weight_seeds = 9\n");
  ExperimentConfig want;
  want.model.n_layers = 3;
  want.data.fmt.reversed = false;
  want.eval.lengths = {2, 4, 8};
  want.sweep.weight_seeds = {9};
  CHECK(got == want);

  ExperimentConfig sink;
  CHECK_THROWS_AS(apply_experiment_kv({{"data.bogus", "1"}}, &sink), ValueError);
  CHECK_THROWS_AS(apply_experiment_kv({{"foo.bar", "1"}}, &sink), ValueError);
  CHECK_THROWS_AS(apply_experiment_kv({{"eval.lengths", ""}}, &sink), ValueError);

  try {
    apply_experiment_kv({{"pe.variant", "sinusoidal"}}, &sink);
    FAIL("expected a validation error");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("pe.variant") != std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

TEST_CASE("validate_experiment passes a runnable config and enumerates all faults") {
  CHECK(validate_experiment(tiny_experiment()).empty());

  ExperimentConfig bad = tiny_experiment();
  bad.model.d_model = 15;        // not divisible by heads
  bad.model.dropout = 1.5;       // out of range
  bad.train.steps = 0;           // non-positive
  bad.train.adam_beta1 = 1.0;    // out of [0,1)
  bad.data.train_examples = 0;   // non-positive
  bad.eval.n_per_length = 0;     // non-positive
  bad.sweep.data_seeds.clear();  // empty
  const auto faults = validate_experiment(bad);
  const auto has = [&faults](const char* field) {
    return std::any_of(faults.begin(), faults.end(), [field](const std::string& f) {
      return f.find(field) != std::string::npos;
    });
  };
  CHECK(faults.size() >= 7);
  CHECK(has("model.d_model"));
  CHECK(has("model.dropout"));
  CHECK(has("train.steps"));
  CHECK(has("train.adam_beta1"));
  CHECK(has("data.train_examples"));
  CHECK(has("eval.n_per_length"));
  CHECK(has("sweep.data_seeds"));
}

TEST_CASE("validate_experiment checks sequence capacity and the hint alphabet") {
  ExperimentConfig cfg = tiny_experiment();
  cfg.model.max_seq_len = 12;  // too small for 2-digit training lines (17 tokens)
  auto faults = validate_experiment(cfg);
  REQUIRE(faults.size() >= 2);  // training lines + eval capacity
  CHECK(faults[0].find("model.max_seq_len") != std::string::npos);

  cfg = tiny_experiment();
  cfg.eval.lengths = {1, 2, 3};  // 3-digit eval lines need exactly 24 tokens: still fits
  CHECK(validate_experiment(cfg).empty());
  cfg.eval.lengths = {1, 2, 4};  // 4-digit eval lines need 30 tokens: over capacity
  faults = validate_experiment(cfg);
  REQUIRE(faults.size() == 1);
  CHECK(faults[0].find("eval.lengths[4]") != std::string::npos);

  cfg = tiny_experiment();
  cfg.data.max_train_len = 102;  // hint window no longer fits the alphabet
  faults = validate_experiment(cfg);
  REQUIRE(faults.size() == 1);
  CHECK(faults[0].find("data.max_train_len") != std::string::npos);
  CHECK(faults[0].find("alphabet") != std::string::npos);
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

TEST_CASE("a run leaves the full artifact layout behind") {
  const SmokeRun& s = smoke();
  const fs::path dir(s.dir);
  CHECK(fs::exists(dir / "config.txt"));
  CHECK(fs::exists(dir / "env.txt"));
  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "ckpt" / "ckpt_00000050.bin"));
  CHECK(fs::exists(dir / "ckpt" / "ckpt_00000100.bin"));
  CHECK(fs::exists(dir / "eval" / "em_ckpt_00000050.csv"));
  CHECK(fs::exists(dir / "eval" / "em_ckpt_00000100.csv"));
  CHECK(fs::exists(dir / "eval" / "em.csv"));
  CHECK(fs::exists(dir / "eval" / "errors.csv"));

  // The stored config is the exact resolved config.
  CHECK(experiment_from_text(read_text_file((dir / "config.txt").string())) == s.cfg);
  // Thread count is recorded as a positive integer.
  const std::string env = read_text_file((dir / "env.txt").string());
  CHECK(env.rfind("threads = ", 0) == 0);
  CHECK(parse_int(env.substr(10, env.size() - 11)) >= 1);
}

TEST_CASE("run metrics and reports are internally consistent") {
  const SmokeRun& s = smoke();
  CHECK(s.result.metrics.size() == 100);

  const auto rows = parse_metrics_csv(read_text_file(s.dir + "/metrics.csv"));
  std::vector<MetricsRow> train_rows, val_rows;
  for (const MetricsRow& r : rows)
    (r.split == "train" ? train_rows : val_rows).push_back(r);
  REQUIRE(train_rows.size() == 100);
  CHECK(val_rows.size() == 4);  // eval_every 25 over 100 steps
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    CHECK(train_rows[i].step == s.result.metrics[i].step);
    CHECK(train_rows[i].loss == s.result.metrics[i].loss);
    CHECK(train_rows[i].lr == s.result.metrics[i].lr);
  }
  for (const MetricsRow& r : val_rows) {
    CHECK(r.step % 25 == 0);
    CHECK(std::isfinite(r.loss));
    CHECK(r.next_token_acc >= 0.0);
    CHECK(r.next_token_acc <= 1.0);
  }

  // Checkpoint reports come back ascending with the final parameters last,
  // and the final report equals the em.csv on disk.
  REQUIRE(s.result.checkpoint_reports.size() == 2);
  CHECK(s.result.checkpoint_reports[0].first == 50);
  CHECK(s.result.checkpoint_reports[1].first == 100);
  const auto on_disk = parse_report_csv(read_text_file(s.dir + "/eval/em.csv"));
  REQUIRE(on_disk.size() == s.result.final_report.per_length.size());
  for (std::size_t i = 0; i < on_disk.size(); ++i) {
    CHECK(on_disk[i].length == s.result.final_report.per_length[i].length);
    CHECK(on_disk[i].n_examples == s.result.final_report.per_length[i].n_examples);
    CHECK(on_disk[i].em_accuracy == s.result.final_report.per_length[i].em_accuracy);
  }
  CHECK(read_text_file(s.dir + "/eval/em.csv") ==
        read_text_file(s.dir + "/eval/em_ckpt_00000100.csv"));
}

TEST_CASE("rerunning the same config reproduces metrics and reports byte for byte") {
  const SmokeRun& s = smoke();
  const auto dir2 = fresh_dir("smoke_again");
  run(s.cfg, dir2.string());
  CHECK(read_text_file(s.dir + "/metrics.csv") ==
        read_text_file((dir2 / "metrics.csv").string()));
  CHECK(read_text_file(s.dir + "/eval/em.csv") ==
        read_text_file((dir2 / "eval" / "em.csv").string()));
  CHECK(read_text_file(s.dir + "/eval/errors.csv") ==
        read_text_file((dir2 / "eval" / "errors.csv").string()));
}

TEST_CASE("run rejects an invalid config listing every violation") {
  ExperimentConfig bad = tiny_experiment();
  bad.train.steps = 0;
  bad.model.dropout = -1.0;
  try {
    run(bad, fresh_dir("invalid").string());
    FAIL("expected a validation error");
  } catch (const ValueError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("train.steps") != std::string::npos);
    CHECK(msg.find("model.dropout") != std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

namespace {

ExperimentConfig sweep_experiment() {
  ExperimentConfig cfg = tiny_experiment();
  cfg.train.steps = 30;
  cfg.train.warmup_steps = 5;
  cfg.train.eval_every = 0;
  cfg.train.checkpoint_every = 0;
  cfg.eval.n_per_length = 4;
  return cfg;
}

struct SweepOnce {
  ExperimentConfig cfg = sweep_experiment();
  std::string dir;
  SweepResult result;
};

const SweepOnce& shared_sweep() {
  static const SweepOnce once = [] {
    SweepOnce s;
    s.dir = fresh_dir("sweep").string();
    s.result = sweep(s.cfg, s.dir);
    return s;
  }();
  return once;
}

}  // namespace

TEST_CASE("a 2x2 sweep runs every cell and summarizes per length") {
  const SweepOnce& s = shared_sweep();
  REQUIRE(s.result.cells.size() == 4);
  for (const SweepCell& c : s.result.cells) {
    CAPTURE(c.dir);
    CHECK(c.ok);
    CHECK(c.error.empty());
    CHECK(fs::exists(fs::path(c.dir) / "eval" / "em.csv"));
    CHECK(c.em_max_over_ckpts >= c.em_final);
  }
  // Cell order is row-major over weight_seeds x data_seeds.
  CHECK(s.result.cells[0].dir == s.dir + "/runs/w1_d3");
  CHECK(s.result.cells[1].dir == s.dir + "/runs/w1_d4");
  CHECK(s.result.cells[2].dir == s.dir + "/runs/w2_d3");
  CHECK(s.result.cells[3].dir == s.dir + "/runs/w2_d4");

  REQUIRE(s.result.summary.size() == 2);  // eval lengths 1 and 2
  for (const SweepSummaryRow& row : s.result.summary) {
    CHECK(row.n_runs == 4);
    CHECK(row.best_em >= row.median_em);
    CHECK(row.median_em >= row.min_em);
  }

  CHECK(fs::exists(fs::path(s.dir) / "cells.csv"));
  CHECK(fs::exists(fs::path(s.dir) / "summary.csv"));
  const std::string cells = read_text_file(s.dir + "/cells.csv");
  CHECK(count_of(cells, "\n") == 5);  // header + 4 cells
  CHECK(count_of(cells, ",ok,") == 4);
}

TEST_CASE("sweep summary recomputes from the member runs alone") {
  const SweepOnce& s = shared_sweep();
  // Independent recomputation: read each member's em.csv and reduce.
  std::map<Index, std::vector<double>> by_length;
  for (const SweepCell& c : s.result.cells)
    for (const LengthResult& r : parse_report_csv(read_text_file(c.dir + "/eval/em.csv")))
      by_length[r.length].push_back(r.em_accuracy);

  REQUIRE(by_length.size() == s.result.summary.size());
  for (const SweepSummaryRow& row : s.result.summary) {
    REQUIRE(by_length.count(row.length));
    auto ems = by_length[row.length];
    // best-of-N curve is the pointwise max over member runs
    CHECK(row.best_em == *std::max_element(ems.begin(), ems.end()));
    CHECK(row.min_em == *std::min_element(ems.begin(), ems.end()));
    std::sort(ems.begin(), ems.end());
    CHECK(row.median_em == doctest::Approx(0.5 * (ems[1] + ems[2])).epsilon(1e-12));
  }

  // The exposed aggregation is the same pure function of the run directories.
  std::vector<std::string> dirs;
  for (const SweepCell& c : s.result.cells) dirs.push_back(c.dir);
  const auto again = summarize_runs(dirs);
  REQUIRE(again.size() == s.result.summary.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].length == s.result.summary[i].length);
    CHECK(again[i].n_runs == s.result.summary[i].n_runs);
    CHECK(again[i].best_em == s.result.summary[i].best_em);
    CHECK(again[i].median_em == s.result.summary[i].median_em);
    CHECK(again[i].min_em == s.result.summary[i].min_em);
  }
}

TEST_CASE("a failing sweep cell is recorded and the rest of the matrix continues") {
  ExperimentConfig cfg = sweep_experiment();
  cfg.train.steps = 10;
  cfg.train.warmup_steps = 2;
  const auto dir = fresh_dir("sweep_fail");
  // Occupy one cell's directory path with a regular file so that cell fails.
  fs::create_directories(dir / "runs");
  std::ofstream(dir / "runs" / "w1_d3").put('x');

  const SweepResult res = sweep(cfg, dir.string());
  REQUIRE(res.cells.size() == 4);
  int ok = 0, failed = 0;
  for (const SweepCell& c : res.cells) {
    if (c.ok) {
      ++ok;
    } else {
      ++failed;
      CHECK(c.weight_seed == 1);
      CHECK(c.data_seed == 3);
      CHECK_FALSE(c.error.empty());
    }
  }
  CHECK(ok == 3);
  CHECK(failed == 1);
  for (const SweepSummaryRow& row : res.summary) CHECK(row.n_runs == 3);
  const std::string cells = read_text_file(dir.string() + "/cells.csv");
  CHECK(count_of(cells, ",failed,") == 1);
  CHECK(count_of(cells, ",ok,") == 3);
}

// ---------------------------------------------------------------------------
// CSV parsing
// ---------------------------------------------------------------------------

TEST_CASE("CSV readers accept the emitted shapes and reject malformed text") {
  const auto rows = parse_report_csv("length,n,em\n1,100,1\n5,100,0.875\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].length == 5);
  CHECK(rows[1].n_examples == 100);
  CHECK(rows[1].em_accuracy == 0.875);
  CHECK_THROWS_AS(parse_report_csv("wrong,header\n"), ValueError);
  CHECK_THROWS_AS(parse_report_csv("length,n,em\n1,2\n"), ValueError);

  const auto metrics = parse_metrics_csv(
      "step,split,loss,next_token_acc,lr\n1,train,4.5,0.03,0.0001\n25,val,4.2,0.05,0.001\n");
  REQUIRE(metrics.size() == 2);
  CHECK(metrics[0].step == 1);
  CHECK(metrics[0].split == "train");
  CHECK(metrics[1].lr == 0.001);
  CHECK_THROWS_AS(parse_metrics_csv("step,loss\n"), ValueError);
  CHECK_THROWS_AS(parse_metrics_csv("step,split,loss,next_token_acc,lr\n1,train,x,0,0\n"),
                  ValueError);
}

// ---------------------------------------------------------------------------
// quantiles and SVG plots
// ---------------------------------------------------------------------------

TEST_CASE("quantile interpolates linearly between order statistics") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(quantile({3, 1, 2}, 0.5) == 2.0);
  CHECK(quantile({1, 2, 3, 4}, 0.25) == 1.75);
  CHECK(quantile({1, 2, 3, 4}, 0.0) == 1.0);
  CHECK(quantile({1, 2, 3, 4}, 1.0) == 4.0);
  CHECK(quantile({7}, 0.9) == 7.0);
  CHECK_THROWS_AS(quantile({}, 0.5), ValueError);
  CHECK_THROWS_AS(quantile({1.0}, 1.5), ValueError);

  const BoxStats b = box_stats(3.0, {4, 1, 3, 2});
  CHECK(b.x == 3.0);
  CHECK(b.min == 1.0);
  CHECK(b.q1 == 1.75);
  CHECK(b.median == 2.5);
  CHECK(b.q3 == 3.25);
  CHECK(b.max == 4.0);
}

TEST_CASE("line plots carry their data and the exact pixel transform") {
  const PlotSeries one{"fire", {1, 2, 3, 4}, {1.0, 0.99, 0.5, 0.02}};
  const std::string svg = svg_line_plot({one}, "exact match", "digits", "em");
  CHECK(count_of(svg, "<polyline class=\"series\"") == 1);
  CHECK(count_of(svg, "class=\"legend\"") == 0);  // single series: no legend
  CHECK(svg.find(">exact match</text>") != std::string::npos);
  CHECK(svg.find(">digits</text>") != std::string::npos);
  CHECK(svg.find(">em</text>") != std::string::npos);
  CHECK(count_of(svg, "<circle ") == 4);
  check_polyline_parse_back(svg, 0, {1, 2, 3, 4}, {1.0, 0.99, 0.5, 0.02});

  const PlotSeries two{"a<&>b", {1, 2, 3, 4}, {0.1, 0.2, 0.3, 0.4}};
  const std::string both = svg_line_plot({one, two}, "t", "x", "y");
  CHECK(count_of(both, "<polyline class=\"series\"") == 2);
  CHECK(count_of(both, "class=\"legend\"") == 1);
  CHECK(both.find("a&lt;&amp;&gt;b") != std::string::npos);  // escaped label
  CHECK(both.find("a<&>b") == std::string::npos);
  check_polyline_parse_back(both, 1, {1, 2, 3, 4}, {0.1, 0.2, 0.3, 0.4});

  CHECK_THROWS_AS(svg_line_plot({}, "t", "x", "y"), ValueError);
  CHECK_THROWS_AS(svg_line_plot({PlotSeries{"s", {}, {}}}, "t", "x", "y"), ValueError);
  CHECK_THROWS_AS(svg_line_plot({PlotSeries{"s", {1, 2}, {1}}}, "t", "x", "y"), ValueError);
}

TEST_CASE("box plots embed the five-number summaries verbatim") {
  const BoxStats b1 = box_stats(1.0, {0.2, 0.5, 0.9, 0.4});
  const BoxStats b2 = box_stats(2.0, {0.1, 0.15, 0.12});
  const std::string svg = svg_box_plot({b1, b2}, "spread", "digits", "em");
  CHECK(svg.find("data-kind=\"box\"") != std::string::npos);
  CHECK(count_of(svg, "<g class=\"box\"") == 2);
  const std::string el = nth_element(svg, "<g class=\"box\"", 0);
  CHECK(parse_double(attr_of(el, "data-min")) == b1.min);
  CHECK(parse_double(attr_of(el, "data-q1")) == b1.q1);
  CHECK(parse_double(attr_of(el, "data-median")) == b1.median);
  CHECK(parse_double(attr_of(el, "data-q3")) == b1.q3);
  CHECK(parse_double(attr_of(el, "data-max")) == b1.max);
  CHECK_THROWS_AS(svg_box_plot({}, "t", "x", "y"), ValueError);
}

// ---------------------------------------------------------------------------
// plot entry points over real run artifacts
// ---------------------------------------------------------------------------

TEST_CASE("plot entry points read the emitted artifacts") {
  const SmokeRun& s = smoke();

  const std::string em_plot = plot_em_vs_length({s.dir + "/eval/em.csv"});
  CHECK(count_of(em_plot, "<polyline class=\"series\"") == 1);
  // Default label is the run directory name.
  CHECK(attr_of(nth_element(em_plot, "<polyline class=\"series\"", 0), "data-label") ==
        "smoke");
  const std::string labeled = plot_em_vs_length({s.dir + "/eval/em.csv"}, {"fire run"});
  CHECK(attr_of(nth_element(labeled, "<polyline class=\"series\"", 0), "data-label") ==
        "fire run");
  CHECK_THROWS_AS(plot_em_vs_length({}), ValueError);
  CHECK_THROWS_AS(plot_em_vs_length({s.dir + "/eval/em.csv"}, {"a", "b"}), ValueError);

  // Parse-back: the single series must reproduce the CSV values exactly.
  const auto rows = parse_report_csv(read_text_file(s.dir + "/eval/em.csv"));
  std::vector<double> want_x, want_y;
  for (const LengthResult& r : rows) {
    want_x.push_back(double(r.length));
    want_y.push_back(r.em_accuracy);
  }
  check_polyline_parse_back(em_plot, 0, want_x, want_y);

  const std::string loss_plot = plot_loss_vs_step(s.dir + "/metrics.csv");
  CHECK(count_of(loss_plot, "<polyline class=\"series\"") == 2);  // train + val
  CHECK(loss_plot.find("data-label=\"train\"") != std::string::npos);
  CHECK(loss_plot.find("data-label=\"val\"") != std::string::npos);

  const std::string step_plot = plot_em_vs_step(s.dir);
  CHECK(count_of(step_plot, "<polyline class=\"series\"") == 2);  // lengths 1 and 2
  const std::string series0 = nth_element(step_plot, "<polyline class=\"series\"", 0);
  CHECK(attr_of(series0, "data-label") == "len 1");
  CHECK(parse_doubles(attr_of(series0, "data-x")) == std::vector<double>{50, 100});
  CHECK_THROWS_AS(plot_em_vs_step(s.dir + "/nowhere"), ValueError);

  const SweepOnce& sw = shared_sweep();
  const std::string box_plot = plot_seed_box(sw.dir);
  CHECK(count_of(box_plot, "<g class=\"box\"") == 2);  // per eval length
  CHECK_THROWS_AS(plot_seed_box(sw.dir + "/nowhere"), ValueError);
}

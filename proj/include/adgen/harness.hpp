#pragma once

// Experiment orchestration. An ExperimentConfig bundles everything a run
// needs (data format, model, training, evaluation, seed matrix) and
// serializes to the flat dotted-key text format. run() executes the
// generate -> train -> evaluate pipeline into a self-describing directory;
// sweep() runs the weight-seed x data-seed matrix and summarizes it purely
// from the member runs' files. Plot entry points turn the emitted CSVs into
// static SVGs.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adgen/config.hpp"
#include "adgen/datagen.hpp"
#include "adgen/evalkit.hpp"
#include "adgen/svg_plot.hpp"
#include "adgen/trainer.hpp"

namespace adgen {

struct DataConfig {
  FormatSpec fmt;
  Index max_train_len = 5;      // operand lengths sampled uniformly in 1..this
  Index train_examples = 20000;

  bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
  std::vector<Index> lengths = {1, 2, 3, 4, 5, 6, 7};
  Index n_per_length = 100;
  std::uint64_t seed = 99;  // shared across sweep cells so they see one test set

  bool operator==(const EvalConfig&) const = default;
};

struct SweepConfig {
  std::vector<std::uint64_t> weight_seeds = {1, 2, 3};
  std::vector<std::uint64_t> data_seeds = {1};

  bool operator==(const SweepConfig&) const = default;
};

struct ExperimentConfig {
  ModelConfig model;  // includes the pe.* block
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  SweepConfig sweep;

  bool operator==(const ExperimentConfig&) const = default;
};

// Flat dotted-key serialization covering every section. Parsing accepts any
// subset of keys (missing fields keep defaults) and rejects unknown keys or
// sections. Round trip is an identity: parse(serialize(cfg)) == cfg.
KVList experiment_config_kv(const ExperimentConfig& cfg);
void apply_experiment_kv(const KVList& kv, ExperimentConfig* cfg);
std::string experiment_to_text(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_text(const std::string& text);

// Every violated field as a "field: problem" entry; empty when the config is
// runnable. run() and sweep() throw ValueError listing all entries at once.
std::vector<std::string> validate_experiment(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Single run
// ---------------------------------------------------------------------------

// Run directory layout:
//   config.txt                 resolved config (exact round-trip text)
//   env.txt                    thread count used
//   metrics.csv                step,split,loss,next_token_acc,lr
//   ckpt/ckpt_<step>.bin       periodic (train.checkpoint_every) + final
//   eval/em_ckpt_<step>.csv    per-checkpoint exact-match by length
//   eval/em.csv                final-parameter exact-match by length
//   eval/errors.csv            final-parameter error records
struct RunResult {
  std::string dir;
  EvalReport final_report;
  std::vector<std::pair<Index, EvalReport>> checkpoint_reports;  // ascending step
  std::vector<StepMetrics> metrics;
};

RunResult run(const ExperimentConfig& cfg, const std::string& dir);

// ---------------------------------------------------------------------------
// Seed sweeps
// ---------------------------------------------------------------------------

struct SweepCell {
  std::uint64_t weight_seed = 0;
  std::uint64_t data_seed = 0;
  std::string dir;  // run directory (under <sweep dir>/runs/)
  bool ok = false;
  std::string error;               // failure message when !ok
  double em_final = 0.0;           // overall EM of the final parameters
  double em_max_over_ckpts = 0.0;  // best overall EM across evaluated checkpoints
};

struct SweepSummaryRow {
  Index length = 0;
  Index n_runs = 0;
  double best_em = 0.0;  // pointwise max over member runs (the best-of-N curve)
  double median_em = 0.0;
  double min_em = 0.0;
};

// Sweep directory layout:
//   config.txt    base config
//   runs/w<ws>_d<ds>/...   one run directory per matrix cell
//   cells.csv     weight_seed,data_seed,status,em_final,em_max_over_ckpts,error
//   summary.csv   length,n_runs,best_em,median_em,min_em
struct SweepResult {
  std::string dir;
  std::vector<SweepCell> cells;           // row-major over weight_seeds x data_seeds
  std::vector<SweepSummaryRow> summary;   // over cells that completed
};

// Runs the full matrix; a failing cell is recorded and the sweep continues.
SweepResult sweep(const ExperimentConfig& cfg, const std::string& dir);

// Pure aggregation over run directories: reads each <dir>/eval/em.csv and
// reduces per length. Exposed so summaries can be recomputed independently.
std::vector<SweepSummaryRow> summarize_runs(const std::vector<std::string>& run_dirs);

// ---------------------------------------------------------------------------
// CSV readers and plot entry points
// ---------------------------------------------------------------------------

struct MetricsRow {
  Index step = 0;
  std::string split;
  double loss = 0.0;
  double next_token_acc = 0.0;
  double lr = 0.0;
};

std::vector<LengthResult> parse_report_csv(const std::string& text);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// EM vs operand length, one series per report file. Labels default to the
// parent run directory name when not supplied.
std::string plot_em_vs_length(const std::vector<std::string>& em_csv_paths,
                              std::vector<std::string> labels = {});

// Loss vs step from a metrics.csv, one series per split present.
std::string plot_loss_vs_step(const std::string& metrics_csv_path);

// EM vs checkpoint step for the given lengths (empty = every length), from a
// run directory's eval/em_ckpt_*.csv files.
std::string plot_em_vs_step(const std::string& run_dir, std::vector<Index> lengths = {});

// Per-length box plot of final EM across a sweep's member runs.
std::string plot_seed_box(const std::string& sweep_dir);

}  // namespace adgen

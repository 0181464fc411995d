// Command-line driver: dataset generation, training runs, checkpoint
// evaluation, seed sweeps, and SVG plotting over the emitted artifacts.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adgen/harness.hpp"

namespace fs = std::filesystem;
using namespace adgen;

namespace {

// One named CLI option mirroring a dotted config key. Values stay strings;
// apply_experiment_kv does the typed parsing so file and flag values go
// through the identical code path.
struct KeyFlag {
  std::string key;
  std::string value;
  CLI::Option* opt = nullptr;
};

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> sets;  // generic key=value overrides
  std::string seed;               // --seed: sets both training seeds
  CLI::Option* seed_opt = nullptr;
  std::vector<KeyFlag> flags;

  void add_key(CLI::App* cmd, const std::string& flag, const std::string& key,
               const std::string& desc) {
    flags.push_back(KeyFlag{key, "", nullptr});
    KeyFlag& kf = flags.back();
    kf.opt = cmd->add_option(flag, kf.value, desc + " [" + key + "]");
  }
};

// Registers --config/--set/--seed plus one named flag per config key.
// `flags` must outlive parsing, so ConfigArgs lives in the caller.
void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.config_file, "experiment config file (dotted key = value)");
  cmd->add_option("--set", args.sets, "override any config key, e.g. --set pe.variant=fire")
      ->take_all();
  args.seed_opt =
      cmd->add_option("--seed", args.seed, "sets train.weight_seed and train.data_seed");
  args.flags.reserve(40);  // pointers into `flags` must stay valid
  args.add_key(cmd, "--layers", "model.n_layers", "transformer layers");
  args.add_key(cmd, "--d-model", "model.d_model", "model width");
  args.add_key(cmd, "--heads", "model.n_heads", "attention heads");
  args.add_key(cmd, "--d-ff", "model.d_ff", "feed-forward width");
  args.add_key(cmd, "--max-seq-len", "model.max_seq_len", "maximum sequence length");
  args.add_key(cmd, "--dropout", "model.dropout", "dropout probability");
  args.add_key(cmd, "--pe", "pe.variant", "position encoding: nope|rope|alibi|kerple_log|t5|fire");
  args.add_key(cmd, "--randomized", "pe.randomized", "randomized training positions (true|false)");
  args.add_key(cmd, "--randomized-max", "pe.randomized_max", "position range for randomization");
  args.add_key(cmd, "--steps", "train.steps", "optimizer steps");
  args.add_key(cmd, "--batch-size", "train.batch_size", "examples per step");
  args.add_key(cmd, "--lr", "train.lr_peak", "peak learning rate");
  args.add_key(cmd, "--warmup", "train.warmup_steps", "linear warmup steps");
  args.add_key(cmd, "--weight-decay", "train.weight_decay", "decoupled weight decay");
  args.add_key(cmd, "--grad-clip", "train.grad_clip", "global-norm gradient clip (0 = off)");
  args.add_key(cmd, "--eval-every", "train.eval_every", "validation-loss cadence (0 = off)");
  args.add_key(cmd, "--checkpoint-every", "train.checkpoint_every",
               "periodic checkpoint cadence (0 = final only)");
  args.add_key(cmd, "--answer-only-loss", "train.answer_only_loss",
               "mask the loss to answer tokens (true|false)");
  args.add_key(cmd, "--weight-seed", "train.weight_seed", "weight initialization seed");
  args.add_key(cmd, "--data-seed", "train.data_seed", "data order seed");
  args.add_key(cmd, "--reversed", "data.reversed", "least-significant-first answers (true|false)");
  args.add_key(cmd, "--hints", "data.index_hints", "index hints (true|false)");
  args.add_key(cmd, "--spaces", "data.space_augment", "random filler tokens (true|false)");
  args.add_key(cmd, "--space-prob", "data.space_prob", "per-gap filler probability");
  args.add_key(cmd, "--space-max-run", "data.space_max_run", "longest filler run");
  args.add_key(cmd, "--max-train-len", "data.max_train_len", "largest training operand length");
  args.add_key(cmd, "--train-examples", "data.train_examples", "training set size");
  args.add_key(cmd, "--eval-lengths", "eval.lengths", "operand lengths to evaluate, e.g. 1,2,6");
  args.add_key(cmd, "--eval-n", "eval.n_per_length", "examples per evaluated length");
  args.add_key(cmd, "--eval-seed", "eval.seed", "evaluation sampling seed");
  args.add_key(cmd, "--weight-seeds", "sweep.weight_seeds", "sweep weight seeds, e.g. 1,2,3");
  args.add_key(cmd, "--data-seeds", "sweep.data_seeds", "sweep data seeds, e.g. 1,2");
}

// File first, then --set, then named flags, so flags override file values.
ExperimentConfig resolve_config(const ConfigArgs& args) {
  ExperimentConfig cfg;
  if (!args.config_file.empty()) cfg = experiment_from_text(read_text_file(args.config_file));
  std::vector<std::pair<std::string, std::string>> kv;
  for (const std::string& s : args.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ValueError("--set expects key=value, got '" + s + "'");
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (args.seed_opt->count() > 0) {
    kv.emplace_back("train.weight_seed", args.seed);
    kv.emplace_back("train.data_seed", args.seed);
  }
  for (const KeyFlag& kf : args.flags)
    if (kf.opt->count() > 0) kv.emplace_back(kf.key, kf.value);
  apply_experiment_kv(kv, &cfg);
  return cfg;
}

void print_report(const EvalReport& report) {
  std::printf("%-8s %-6s %s\n", "length", "n", "exact_match");
  for (const LengthResult& r : report.per_length)
    std::printf("%-8lld %-6lld %.4f\n", static_cast<long long>(r.length),
                static_cast<long long>(r.n_examples), r.em_accuracy);
  std::printf("overall  %.4f   (%zu error records)\n", report.overall_em(),
              report.errors.size());
}

int cmd_gen(const ConfigArgs& args, const std::string& out, long long count,
            long long max_len, const std::string& lengths, long long n_per_length,
            const std::string& seed_str) {
  const ExperimentConfig cfg = resolve_config(args);
  SplitSpec spec;
  spec.path = out;
  if (!lengths.empty()) {
    spec.per_length = true;
    ExperimentConfig tmp;
    apply_experiment_kv({{"eval.lengths", lengths}}, &tmp);
    spec.lengths = tmp.eval.lengths;
    spec.n_per_length = n_per_length;
  } else {
    spec.count = count;
    spec.max_len = max_len;
  }
  ExperimentConfig seed_sink;
  apply_experiment_kv({{"eval.seed", seed_str}}, &seed_sink);
  const Index written = write_split(spec, cfg.data.fmt, seed_sink.eval.seed);
  std::printf("wrote %lld lines to %s (+ .manifest)\n", static_cast<long long>(written),
              out.c_str());
  return 0;
}

int cmd_train(const ConfigArgs& args, const std::string& out) {
  const ExperimentConfig cfg = resolve_config(args);
  const RunResult result = run(cfg, out);
  std::printf("run directory: %s\n", result.dir.c_str());
  print_report(result.final_report);
  return 0;
}

int cmd_eval(const ConfigArgs& args, const std::string& ckpt, const std::string& out,
             const std::string& data_file) {
  const ExperimentConfig cfg = resolve_config(args);
  const Checkpoint ck = load_checkpoint(ckpt);
  EvalReport report =
      data_file.empty()
          ? eval_lengths(ck.params, cfg.eval.lengths, cfg.eval.n_per_length, cfg.data.fmt,
                         cfg.eval.seed)
          : eval_sequences(ck.params, load_split(data_file), cfg.data.fmt);
  report.checkpoint_id = fs::path(ckpt).filename().string();
  fs::create_directories(out);
  write_report_csv((fs::path(out) / "em.csv").string(), report);
  write_errors_csv((fs::path(out) / "errors.csv").string(), report);
  std::printf("checkpoint: %s (step %lld, pe %s)\n", report.checkpoint_id.c_str(),
              static_cast<long long>(ck.step), report.pe_variant.c_str());
  print_report(report);
  std::printf("wrote %s and %s\n", (fs::path(out) / "em.csv").string().c_str(),
              (fs::path(out) / "errors.csv").string().c_str());
  return 0;
}

int cmd_sweep(const ConfigArgs& args, const std::string& out) {
  const ExperimentConfig cfg = resolve_config(args);
  const SweepResult result = sweep(cfg, out);
  int failed = 0;
  for (const SweepCell& c : result.cells) {
    if (c.ok) {
      std::printf("cell w%llu_d%llu  em %.4f (best over checkpoints %.4f)\n",
                  static_cast<unsigned long long>(c.weight_seed),
                  static_cast<unsigned long long>(c.data_seed), c.em_final,
                  c.em_max_over_ckpts);
    } else {
      ++failed;
      std::printf("cell w%llu_d%llu  FAILED: %s\n",
                  static_cast<unsigned long long>(c.weight_seed),
                  static_cast<unsigned long long>(c.data_seed), c.error.c_str());
    }
  }
  std::printf("%-8s %-6s %-8s %-8s %s\n", "length", "runs", "best", "median", "min");
  for (const SweepSummaryRow& row : result.summary)
    std::printf("%-8lld %-6lld %-8.4f %-8.4f %.4f\n", static_cast<long long>(row.length),
                static_cast<long long>(row.n_runs), row.best_em, row.median_em, row.min_em);
  std::printf("sweep directory: %s\n", result.dir.c_str());
  return failed == 0 ? 0 : 1;
}

int cmd_plot(const std::string& kind, const std::vector<std::string>& inputs,
             const std::string& out, const std::string& labels_str,
             const std::string& lengths_str) {
  std::vector<std::string> labels;
  if (!labels_str.empty()) {
    std::string item;
    std::istringstream in(labels_str);
    while (std::getline(in, item, ',')) labels.push_back(item);
  }
  std::string svg;
  if (kind == "em-length") {
    svg = plot_em_vs_length(inputs, labels);
  } else if (kind == "loss") {
    if (inputs.size() != 1) throw ValueError("plot --kind loss expects one metrics.csv");
    svg = plot_loss_vs_step(inputs[0]);
  } else if (kind == "em-step") {
    if (inputs.size() != 1) throw ValueError("plot --kind em-step expects one run directory");
    std::vector<Index> lengths;
    if (!lengths_str.empty()) {
      ExperimentConfig tmp;
      apply_experiment_kv({{"eval.lengths", lengths_str}}, &tmp);
      lengths = tmp.eval.lengths;
    }
    svg = plot_em_vs_step(inputs[0], lengths);
  } else {  // seed-box, enforced by CLI11
    if (inputs.size() != 1) throw ValueError("plot --kind seed-box expects one sweep directory");
    svg = plot_seed_box(inputs[0]);
  }
  write_text_file(out, svg);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"addition-transformer experiment driver"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "write a dataset split and its manifest");
  ConfigArgs gen_args;
  add_config_options(gen, gen_args);
  std::string gen_out, gen_lengths = "", gen_seed = "1";
  long long gen_count = 10000, gen_max_len = 5, gen_n = 100;
  gen->add_option("--out", gen_out, "dataset file path")->required();
  gen->add_option("--count", gen_count, "examples to sample at lengths 1..max-len");
  gen->add_option("--max-len", gen_max_len, "largest operand length");
  gen->add_option("--lengths", gen_lengths, "per-length mode: exact lengths, e.g. 6,7");
  gen->add_option("--n", gen_n, "examples per length (with --lengths)");
  gen->add_option("--gen-seed", gen_seed, "dataset sampling seed");

  // train
  auto* train = app.add_subcommand("train", "generate data, train, evaluate into a run dir");
  ConfigArgs train_args;
  add_config_options(train, train_args);
  std::string train_out;
  train->add_option("--out", train_out, "run directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over operand lengths");
  ConfigArgs eval_args;
  add_config_options(eval, eval_args);
  std::string eval_ckpt, eval_out, eval_data;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--out", eval_out, "output directory for em.csv / errors.csv")->required();
  eval->add_option("--data", eval_data, "frozen dataset file (skips fresh sampling)");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "run the weight-seed x data-seed matrix");
  ConfigArgs sweep_args;
  add_config_options(sweep_cmd, sweep_args);
  std::string sweep_out;
  sweep_cmd->add_option("--out", sweep_out, "sweep directory")->required();

  // plot
  auto* plot = app.add_subcommand("plot", "render run artifacts to a static SVG");
  std::string plot_kind, plot_out, plot_labels, plot_lengths;
  std::vector<std::string> plot_inputs;
  plot->add_option("--kind", plot_kind, "em-length | loss | em-step | seed-box")
      ->required()
      ->check(CLI::IsMember({"em-length", "loss", "em-step", "seed-box"}));
  plot->add_option("--out", plot_out, "output SVG path")->required();
  plot->add_option("--labels", plot_labels, "comma-separated series labels (em-length)");
  plot->add_option("--lengths", plot_lengths, "lengths to include (em-step)");
  plot->add_option("inputs", plot_inputs, "CSV files or run/sweep directories")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen(gen_args, gen_out, gen_count, gen_max_len, gen_lengths, gen_n, gen_seed);
    if (train->parsed()) return cmd_train(train_args, train_out);
    if (eval->parsed()) return cmd_eval(eval_args, eval_ckpt, eval_out, eval_data);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_args, sweep_out);
    if (plot->parsed())
      return cmd_plot(plot_kind, plot_inputs, plot_out, plot_labels, plot_lengths);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

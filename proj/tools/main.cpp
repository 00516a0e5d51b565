#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "latsg/commands.hpp"

using namespace latsg;

namespace {

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;  // key=value overrides
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::optional<int> nq;
  std::optional<int> topk_save;
  std::optional<int> top_select;
  std::optional<std::string> mode;
  std::optional<int> split;
  std::string out_dir = "out";
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_file, "key = value config file");
  cmd->add_option("--set", o.sets, "override any config key as key=value")->take_all();
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--tau", o.tau, "classification confidence threshold");
  cmd->add_option("--nq", o.nq, "number of queries / anchors");
  cmd->add_option("--topk-save", o.topk_save, "TopK-Save count");
  cmd->add_option("--top-select", o.top_select, "Top-Select count");
  cmd->add_option("--mode", o.mode, "suppression mode: prose | literal");
  cmd->add_option("--split", o.split, "length split count (2, 3 or 4)")
      ->check(CLI::IsMember({2, 3, 4}));
  cmd->add_option("--out-dir", o.out_dir, "output directory");
}

RunConfig build_config(const CommonOpts& o) {
  RunConfig cfg;
  if (!o.config_file.empty()) cfg.apply_file(o.config_file);
  for (const auto& kv : o.sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.tau) cfg.tau = *o.tau;
  if (o.nq) cfg.n_queries = *o.nq;
  if (o.topk_save) cfg.topk_save = *o.topk_save;
  if (o.top_select) cfg.top_select = *o.top_select;
  if (o.mode) cfg.rs_mode = *o.mode;
  if (o.split) cfg.split = *o.split;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"length-aware temporal sentence grounding"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, eval_opts, ablate_opts, analyze_opts;
  std::string gen_out = "data.jsonl";
  std::string train_data, resume_path;
  std::string eval_checkpoint, eval_data;
  std::string ablate_train, ablate_eval;
  std::string analyze_checkpoint, analyze_data;
  int analyze_n = 50;

  CLI::App* gen = app.add_subcommand("generate-data", "write a synthetic JSONL dataset");
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_out, "output JSONL path");

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, train_opts);
  train->add_option("--data", train_data, "training dataset (JSONL)")->required();
  train->add_option("--resume", resume_path, "checkpoint to resume from");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, eval_opts);
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
  ev->add_option("--data", eval_data, "evaluation dataset (JSONL)")->required();

  CLI::App* ab = app.add_subcommand("ablate", "run the component toggle grid (a)-(f)");
  add_common(ab, ablate_opts);
  ab->add_option("--train-data", ablate_train, "training dataset (generated if omitted)");
  ab->add_option("--eval-data", ablate_eval, "evaluation dataset (generated if omitted)");

  CLI::App* an = app.add_subcommand("analyze", "per-query length concentration");
  add_common(an, analyze_opts);
  an->add_option("--checkpoint", analyze_checkpoint, "checkpoint path")->required();
  an->add_option("--data", analyze_data, "dataset (JSONL)")->required();
  an->add_option("--n", analyze_n, "number of samples to analyze");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      run_generate(build_config(gen_opts), gen_out);
    } else if (train->parsed()) {
      TrainSummary s =
          run_train(build_config(train_opts), train_data, train_opts.out_dir, resume_path);
      std::cout << "trained " << s.epochs_done << " epochs, final loss "
                << format_double(s.final_total) << ", checkpoint: " << s.checkpoint_path
                << "\n";
    } else if (ev->parsed()) {
      EvalSummary s = run_eval(eval_checkpoint, eval_data, eval_opts.out_dir);
      std::cout << "r1@0.5=" << format_double(s.report.r1_50)
                << " map_avg=" << format_double(s.report.map_avg)
                << " miou=" << format_double(s.report.miou)
                << " length_acc=" << format_double(s.report.length_cls_accuracy)
                << "\nreport: " << s.report_json_path << "\n";
    } else if (ab->parsed()) {
      run_ablate(build_config(ablate_opts), ablate_train, ablate_eval, ablate_opts.out_dir);
    } else if (an->parsed()) {
      run_analyze(analyze_checkpoint, analyze_data, analyze_opts.out_dir, analyze_n);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

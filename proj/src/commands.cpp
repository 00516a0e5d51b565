#include "latsg/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

namespace latsg {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---- shared helpers ----

std::vector<Moment> collect_moments(const Dataset& ds) {
  std::vector<Moment> out;
  for (const auto& s : ds)
    for (const auto& m : s.moments) out.push_back(m);
  return out;
}

LengthRule derive_role_rule(const RunConfig& cfg, const Dataset& ds) {
  if (cfg.split < 2 || cfg.split > 4) throw ConfigError("split must be 2, 3 or 4");
  if (cfg.length_rule == "synthetic" && cfg.split == 3) return synthetic_rule();
  std::vector<double> lengths;
  for (const auto& m : collect_moments(ds)) lengths.push_back(m.length);
  return quantile_rule(std::move(lengths), cfg.split);
}

std::vector<int> dataset_labels(const RunConfig& cfg, const Dataset& ds,
                                const LengthRule& role_rule) {
  std::vector<int> labels;
  labels.reserve(ds.size());
  if (cfg.length_rule == "synthetic" && cfg.split == 3) {
    for (const auto& s : ds) labels.push_back(s.length_label);
    return labels;
  }
  LengthRule rule = role_rule;
  if (cfg.length_rule == "qvhighlights") rule = qvhighlights_rule();
  if (cfg.length_rule == "charades") rule = charades_rule();
  if (cfg.length_rule == "tacos") rule = tacos_rule();
  for (const auto& s : ds) labels.push_back(label_length_category(s.moments[0], rule));
  return labels;
}

// ---- Trainer ----

Trainer::Trainer(const RunConfig& cfg, const Dataset& ds) : cfg_(cfg), ds_(ds) {
  if (ds.empty()) throw UsageError("training dataset is empty");
  role_rule_ = derive_role_rule(cfg_, ds_);
  labels_ = dataset_labels(cfg_, ds_, role_rule_);
  std::vector<Anchor> anchors =
      kmeans_anchors(collect_moments(ds_), cfg_.n_queries, cfg_.seed);
  ModelConfig mc = cfg_.model_config(ds_[0].video.cols(), ds_[0].text.cols(),
                                     role_rule_.categories());
  model_ = std::make_unique<Model>(mc, anchors, role_rule_);
  opt_ = std::make_unique<AdamW>(
      model_->params(),
      AdamW::Options{cfg_.lr, cfg_.weight_decay, 0.9, 0.999, 1e-8});
}

void Trainer::restore(const LoadedCheckpoint& lc) {
  for (const auto& [name, data] : lc.param_values) {
    Tensor* t = model_->params().find(name);
    if (!t) throw ValidationError("resume: parameter '" + name + "' missing from model");
    if (t->values().size() != data.size())
      throw ValidationError("resume: parameter '" + name + "' has wrong size");
    t->values() = data;
  }
  lc.restore_optimizer(*opt_);
  epochs_done_ = lc.epochs_done;
}

LossBreakdown Trainer::train_epoch() {
  int n = static_cast<int>(ds_.size());
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(mix_seed(cfg_.seed, 0xE70C0 + static_cast<std::uint64_t>(epochs_done_)));
  std::shuffle(order.begin(), order.end(), rng);

  LossBreakdown epoch{};
  int batches = 0;
  for (int b0 = 0; b0 < n; b0 += cfg_.batch_size) {
    int b1 = std::min(n, b0 + cfg_.batch_size);
    std::vector<const Sample*> batch;
    std::vector<int> batch_labels;
    for (int i = b0; i < b1; ++i) {
      batch.push_back(&ds_[order[i]]);
      batch_labels.push_back(labels_[order[i]]);
    }
    Tape tape;
    {
      Tape::Scope scope(tape);
      Model::BatchResult res = model_->batch_loss(batch, batch_labels);
      tape.backward(res.total);
      epoch.l_mo += res.breakdown.l_mo;
      epoch.l_sal += res.breakdown.l_sal;
      epoch.l_alig += res.breakdown.l_alig;
      epoch.l_mean += res.breakdown.l_mean;
      epoch.l_weight += res.breakdown.l_weight;
      epoch.l_median += res.breakdown.l_median;
      epoch.l_lencl += res.breakdown.l_lencl;
      epoch.total += res.breakdown.total;
    }
    opt_->step();
    opt_->zero_grad();
    ++batches;
  }
  epoch.l_mo /= batches;
  epoch.l_sal /= batches;
  epoch.l_alig /= batches;
  epoch.l_mean /= batches;
  epoch.l_weight /= batches;
  epoch.l_median /= batches;
  epoch.l_lencl /= batches;
  epoch.total /= batches;
  ++epochs_done_;
  return epoch;
}

// ---- evaluation ----

EvalOutput evaluate_model(const Model& model, const Dataset& ds, const std::vector<int>& labels) {
  EvalOutput out;
  int correct = 0, with_label = 0;
  std::vector<std::vector<double>> per_query_lengths;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    SamplePrediction p = model.predict(ds[i]);
    Prediction pred;
    pred.sample_id = ds[i].id;
    pred.moments = p.moments;
    pred.confidences = p.confidences;
    out.preds.push_back(std::move(pred));
    GroundTruth gt;
    gt.sample_id = ds[i].id;
    gt.moments = ds[i].moments;
    out.gts.push_back(std::move(gt));
    if (p.predicted_label >= 0 && i < labels.size()) {
      ++with_label;
      if (p.predicted_label == labels[i]) ++correct;
    }
    if (per_query_lengths.empty()) per_query_lengths.resize(p.query_lengths.size());
    for (std::size_t q = 0; q < p.query_lengths.size(); ++q)
      per_query_lengths[q].push_back(p.query_lengths[q]);
  }
  out.report = compute_metrics(out.preds, out.gts);
  out.report.length_cls_accuracy =
      with_label > 0 ? static_cast<double>(correct) / with_label : 0.0;
  for (const auto& series : per_query_lengths) {
    ConcentrationResult c = length_concentration(series);
    out.report.per_query_length_std.push_back(c.std_dev);
    out.report.per_query_histogram.push_back(c.histogram);
  }
  return out;
}

ConcentrationOutput analyze_concentration(const Model& model, const Dataset& ds, int n,
                                          std::uint64_t seed) {
  if (ds.empty()) throw UsageError("analyze: dataset is empty");
  int take = std::min<int>(n, static_cast<int>(ds.size()));
  std::vector<int> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(mix_seed(seed, 0xA7A1));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(take);
  std::sort(idx.begin(), idx.end());

  ConcentrationOutput out;
  out.sample_indices = idx;
  for (int i : idx) {
    SamplePrediction p = model.predict(ds[i]);
    if (out.lengths.empty()) out.lengths.resize(p.query_lengths.size());
    for (std::size_t q = 0; q < p.query_lengths.size(); ++q)
      out.lengths[q].push_back(p.query_lengths[q]);
  }
  for (const auto& series : out.lengths) {
    ConcentrationResult c = length_concentration(series);
    out.stds.push_back(c.std_dev);
    out.histograms.push_back(c.histogram);
  }
  return out;
}

// ---- file helpers ----

std::vector<std::string> config_echo_lines(const RunConfig& cfg) {
  std::vector<std::string> lines;
  for (const auto& [k, v] : cfg.items()) lines.push_back("# " + k + "=" + v);
  return lines;
}

void write_csv(const std::string& path, const std::vector<std::string>& echo_lines,
               const std::string& header, const std::vector<std::string>& rows) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open for writing: " + path);
  for (const auto& l : echo_lines) out << l << "\n";
  out << header << "\n";
  for (const auto& r : rows) out << r << "\n";
  if (!out) throw UsageError("write failed: " + path);
}

namespace {

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw UsageError("output directory not set");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError("cannot create output directory: " + dir);
}

json config_echo_json(const RunConfig& cfg) {
  json j;
  for (const auto& [k, v] : cfg.items()) j[k] = v;
  return j;
}

json report_to_json(const MetricsReport& r, const RunConfig* cfg) {
  json j;
  j["units"] = "fraction";
  if (cfg) j["config"] = config_echo_json(*cfg);
  j["r1_0.3"] = r.r1_30;
  j["r1_0.5"] = r.r1_50;
  j["r1_0.7"] = r.r1_70;
  j["map_0.5"] = r.map_50;
  j["map_0.75"] = r.map_75;
  j["map_avg"] = r.map_avg;
  j["miou"] = r.miou;
  j["length_cls_accuracy"] = r.length_cls_accuracy;
  j["per_query_length_std"] = r.per_query_length_std;
  j["per_query_histogram"] = r.per_query_histogram;
  return j;
}

}  // namespace

// ---- commands ----

void run_generate(const RunConfig& cfg, const std::string& out_path) {
  SyntheticConfig sc = cfg.synthetic_config();
  Dataset ds = generate_synthetic(sc);
  save_dataset(ds, out_path);
  std::ofstream echo(out_path + ".config.json");
  if (!echo) throw UsageError("cannot write config echo next to " + out_path);
  echo << config_echo_json(cfg).dump(2) << "\n";

  std::vector<int> counts(kThreeWayNames.size(), 0);
  for (const auto& s : ds) counts[s.length_label]++;
  std::cout << "wrote " << ds.size() << " samples to " << out_path << "\n";
  for (std::size_t c = 0; c < counts.size(); ++c)
    std::cout << "  " << kThreeWayNames[c] << ": " << counts[c] << "\n";
}

TrainSummary run_train(const RunConfig& cfg, const std::string& data_path,
                       const std::string& out_dir, const std::string& resume_path) {
  ensure_dir(out_dir);
  Dataset ds = load_dataset(data_path);
  Trainer trainer(cfg, ds);
  if (!resume_path.empty()) trainer.restore(load_checkpoint(resume_path));

  std::string ckpt_path = (fs::path(out_dir) / "checkpoint.json").string();
  std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
  std::vector<std::string> log_rows;
  auto flush_log = [&]() {
    write_csv(log_path, config_echo_lines(cfg),
              "epoch,l_mo,l_sal,l_alig,l_mean,l_weight,l_median,l_lencl,total", log_rows);
  };

  TrainSummary summary;
  int target = cfg.epochs;
  while (trainer.epochs_done() < target) {
    LossBreakdown b;
    try {
      b = trainer.train_epoch();
    } catch (const NumericError& e) {
      flush_log();
      throw NumericError(std::string(e.what()) + "; training aborted, last good checkpoint: " +
                         (trainer.epochs_done() > 0 ? ckpt_path : "(none)"));
    }
    log_rows.push_back(std::to_string(trainer.epochs_done() - 1) + "," +
                       format_double(b.l_mo) + "," + format_double(b.l_sal) + "," +
                       format_double(b.l_alig) + "," + format_double(b.l_mean) + "," +
                       format_double(b.l_weight) + "," + format_double(b.l_median) + "," +
                       format_double(b.l_lencl) + "," + format_double(b.total));
    save_checkpoint(ckpt_path, trainer.model(), cfg, &trainer.optimizer(),
                    trainer.epochs_done());
    summary.final_total = b.total;
  }
  flush_log();
  summary.checkpoint_path = ckpt_path;
  summary.epochs_done = trainer.epochs_done();
  return summary;
}

EvalSummary run_eval(const std::string& checkpoint_path, const std::string& data_path,
                     const std::string& out_dir) {
  ensure_dir(out_dir);
  LoadedCheckpoint lc = load_checkpoint(checkpoint_path);
  std::unique_ptr<Model> model = lc.build_model();
  Dataset ds = load_dataset(data_path);
  std::vector<int> labels = dataset_labels(lc.cfg, ds, lc.role_rule);
  EvalOutput out = evaluate_model(*model, ds, labels);

  EvalSummary summary;
  summary.report = out.report;
  summary.report_json_path = (fs::path(out_dir) / "report.json").string();
  std::ofstream jf(summary.report_json_path);
  if (!jf) throw UsageError("cannot write " + summary.report_json_path);
  jf << report_to_json(out.report, &lc.cfg).dump(2) << "\n";

  const MetricsReport& r = out.report;
  write_csv((fs::path(out_dir) / "report.csv").string(), config_echo_lines(lc.cfg),
            "r1_0.3,r1_0.5,r1_0.7,map_0.5,map_0.75,map_avg,miou,length_cls_accuracy",
            {format_double(r.r1_30) + "," + format_double(r.r1_50) + "," +
             format_double(r.r1_70) + "," + format_double(r.map_50) + "," +
             format_double(r.map_75) + "," + format_double(r.map_avg) + "," +
             format_double(r.miou) + "," + format_double(r.length_cls_accuracy)});

  std::vector<std::string> hist_rows;
  for (std::size_t q = 0; q < r.per_query_histogram.size(); ++q)
    for (int b = 0; b < 10; ++b)
      hist_rows.push_back(std::to_string(q) + "," + format_double(b / 10.0) + "," +
                          format_double((b + 1) / 10.0) + "," +
                          std::to_string(r.per_query_histogram[q][b]));
  write_csv((fs::path(out_dir) / "report_hist.csv").string(), config_echo_lines(lc.cfg),
            "query_index,bin_lo,bin_hi,count", hist_rows);
  return summary;
}

void run_ablate(const RunConfig& cfg, std::string train_data, std::string eval_data,
                const std::string& out_dir) {
  ensure_dir(out_dir);
  if (train_data.empty()) {
    train_data = (fs::path(out_dir) / "ablate_train.jsonl").string();
    RunConfig gen = cfg;
    run_generate(gen, train_data);
  }
  if (eval_data.empty()) {
    eval_data = (fs::path(out_dir) / "ablate_eval.jsonl").string();
    RunConfig gen = cfg;
    gen.seed = mix_seed(cfg.seed, 0xE7A1);
    gen.syn_label_noise = 0.0;
    run_generate(gen, eval_data);
  }
  Dataset train_ds = load_dataset(train_data);
  Dataset eval_ds = load_dataset(eval_data);

  struct Row {
    const char* name;
    bool lp_rs, lad, lqm, ts;
  };
  const Row rows[] = {
      {"a", false, false, false, false}, {"b", true, false, false, false},
      {"c", true, true, false, false},   {"d", true, true, true, false},
      {"e", true, true, false, true},    {"f", true, true, true, true},
  };

  std::vector<std::string> csv_rows;
  for (const Row& row : rows) {
    RunConfig rc = cfg;
    rc.lp_rs = row.lp_rs;
    rc.lad_interaction = row.lad;
    rc.lqm = row.lqm;
    rc.topk_save_enabled = row.ts;
    rc.loss_mean = true;
    rc.loss_weight = row.lqm;
    rc.loss_median = row.lqm;
    Trainer trainer(rc, train_ds);
    for (int e = 0; e < rc.epochs; ++e) trainer.train_epoch();
    std::vector<int> eval_labels = dataset_labels(rc, eval_ds, trainer.role_rule());
    EvalOutput out = evaluate_model(trainer.model(), eval_ds, eval_labels);
    const MetricsReport& r = out.report;
    csv_rows.push_back(std::string(row.name) + "," + (row.lp_rs ? "1" : "0") + "," +
                       (row.lad ? "1" : "0") + "," + (row.lqm ? "1" : "0") + "," +
                       (row.ts ? "1" : "0") + "," + format_double(r.r1_50) + "," +
                       format_double(r.map_50) + "," + format_double(r.map_avg) + "," +
                       format_double(r.miou) + "," + format_double(r.length_cls_accuracy));
    std::cout << "ablate row " << row.name << ": r1@0.5=" << r.r1_50
              << " map_avg=" << r.map_avg << "\n";
  }
  write_csv((fs::path(out_dir) / "ablation.csv").string(), config_echo_lines(cfg),
            "setting,lp_rs,lad_interaction,lqm,topk_save,r1_0.5,map_0.5,map_avg,miou,length_"
            "cls_accuracy",
            csv_rows);
}

void run_analyze(const std::string& checkpoint_path, const std::string& data_path,
                 const std::string& out_dir, int n) {
  ensure_dir(out_dir);
  LoadedCheckpoint lc = load_checkpoint(checkpoint_path);
  std::unique_ptr<Model> model = lc.build_model();
  Dataset ds = load_dataset(data_path);
  ConcentrationOutput out = analyze_concentration(*model, ds, n, lc.cfg.seed);

  std::vector<std::string> std_rows, hist_rows, scatter_rows;
  for (std::size_t q = 0; q < out.stds.size(); ++q) {
    std_rows.push_back(std::to_string(q) + "," + format_double(out.stds[q]));
    for (int b = 0; b < 10; ++b)
      hist_rows.push_back(std::to_string(q) + "," + format_double(b / 10.0) + "," +
                          format_double((b + 1) / 10.0) + "," +
                          std::to_string(out.histograms[q][b]));
    for (std::size_t i = 0; i < out.lengths[q].size(); ++i)
      scatter_rows.push_back(std::to_string(q) + "," + std::to_string(i) + "," +
                             ds[out.sample_indices[i]].id + "," +
                             format_double(out.lengths[q][i]));
  }
  write_csv((fs::path(out_dir) / "analyze_std.csv").string(), config_echo_lines(lc.cfg),
            "query_index,length_std", std_rows);
  write_csv((fs::path(out_dir) / "analyze_hist.csv").string(), config_echo_lines(lc.cfg),
            "query_index,bin_lo,bin_hi,count", hist_rows);
  write_csv((fs::path(out_dir) / "analyze_scatter.csv").string(), config_echo_lines(lc.cfg),
            "query_index,sample_pos,sample_id,length", scatter_rows);
}

}  // namespace latsg

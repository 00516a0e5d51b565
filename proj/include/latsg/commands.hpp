#ifndef LATSG_COMMANDS_HPP_
#define LATSG_COMMANDS_HPP_

#include <memory>

#include "latsg/checkpoint.hpp"
#include "latsg/optim.hpp"

namespace latsg {

// Normalized rule used for anchor roles (and for relabeling when the split
// is not the dataset's native 3-way split).
LengthRule derive_role_rule(const RunConfig& cfg, const Dataset& ds);

// Classification targets per sample under the active configuration: stored
// labels for the native synthetic 3-way split, recomputed buckets otherwise.
std::vector<int> dataset_labels(const RunConfig& cfg, const Dataset& ds,
                                const LengthRule& role_rule);

std::vector<Moment> collect_moments(const Dataset& ds);

// In-memory trainer shared by the CLI and the test suites.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const Dataset& ds);

  LossBreakdown train_epoch();  // one full pass; deterministic under the seed
  void restore(const LoadedCheckpoint& lc);

  Model& model() { return *model_; }
  AdamW& optimizer() { return *opt_; }
  int epochs_done() const { return epochs_done_; }
  const LengthRule& role_rule() const { return role_rule_; }
  const std::vector<int>& labels() const { return labels_; }
  const RunConfig& config() const { return cfg_; }

 private:
  RunConfig cfg_;
  const Dataset& ds_;
  LengthRule role_rule_;
  std::vector<int> labels_;
  std::unique_ptr<Model> model_;
  std::unique_ptr<AdamW> opt_;
  int epochs_done_ = 0;
};

struct EvalOutput {
  MetricsReport report;
  std::vector<Prediction> preds;
  std::vector<GroundTruth> gts;
};
EvalOutput evaluate_model(const Model& model, const Dataset& ds, const std::vector<int>& labels);

struct ConcentrationOutput {
  std::vector<int> sample_indices;                 // seeded choice, ascending
  std::vector<std::vector<double>> lengths;        // [query][sample]
  std::vector<double> stds;                        // population std per query
  std::vector<std::vector<int>> histograms;        // 10 bins over [0,1]
};
ConcentrationOutput analyze_concentration(const Model& model, const Dataset& ds, int n,
                                          std::uint64_t seed);

// ---- CLI entry points ----

void run_generate(const RunConfig& cfg, const std::string& out_path);

struct TrainSummary {
  std::string checkpoint_path;
  double final_total = 0.0;
  int epochs_done = 0;
};
TrainSummary run_train(const RunConfig& cfg, const std::string& data_path,
                       const std::string& out_dir, const std::string& resume_path = "");

struct EvalSummary {
  MetricsReport report;
  std::string report_json_path;
};
EvalSummary run_eval(const std::string& checkpoint_path, const std::string& data_path,
                     const std::string& out_dir);

void run_ablate(const RunConfig& cfg, std::string train_data, std::string eval_data,
                const std::string& out_dir);

void run_analyze(const std::string& checkpoint_path, const std::string& data_path,
                 const std::string& out_dir, int n);

// CSV with `# key=value` config-echo comment lines before the header row.
void write_csv(const std::string& path, const std::vector<std::string>& echo_lines,
               const std::string& header, const std::vector<std::string>& rows);
std::vector<std::string> config_echo_lines(const RunConfig& cfg);

}  // namespace latsg

#endif  // LATSG_COMMANDS_HPP_

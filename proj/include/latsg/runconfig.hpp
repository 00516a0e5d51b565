#ifndef LATSG_RUNCONFIG_HPP_
#define LATSG_RUNCONFIG_HPP_

#include <string>
#include <utility>
#include <vector>

#include "latsg/model.hpp"

namespace latsg {

// Flat run configuration. Defaults follow the reference hyperparameters;
// every key can come from a `key = value` config file or a CLI override.
struct RunConfig {
  // model dims
  int d_model = 256;
  int n_queries = 20;
  int heads = 1;
  int enc_cross_layers = 2;
  int enc_self_layers = 2;
  int dec_layers = 3;
  int ffn_dim = 0;  // 0 -> 4*d_model
  // length pipeline
  double tau = 0.5;
  std::string rs_mode = "prose";    // prose | literal
  std::string cls_head = "binary";  // binary | softmax
  std::string lt_init = "zero";     // zero | random
  int top_select = 4;
  int topk_save = 3;
  double mask_threshold = 0.5;
  // loss balance
  double lambda_sal = 1.0;
  double lambda_alig = 0.3;
  double lambda_lencl = 1.0;
  double align_temperature = 0.07;
  double saliency_margin = 0.2;
  bool use_positional = true;
  // component toggles
  bool lp_rs = true;
  bool lad_interaction = true;
  bool lqm = true;
  bool topk_save_enabled = true;
  bool loss_mean = true;
  bool loss_weight = true;
  bool loss_median = true;
  // length split
  int split = 3;
  std::string length_rule = "synthetic";  // synthetic|qvhighlights|charades|tacos|quantile
  // optimization
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int batch_size = 32;
  int epochs = 20;
  std::uint64_t seed = 0;
  // synthetic data
  int syn_n = 300;
  int syn_l_min = 16, syn_l_max = 24;
  int syn_n_min = 4, syn_n_max = 8;
  int syn_d_v = 20, syn_d_t = 16;
  double syn_signal = 1.0;
  double syn_noise = 0.25;
  double syn_label_noise = 0.0;
  double syn_multi_moment = 0.0;
  double syn_clip_seconds = 2.0;
  std::uint64_t syn_domain_seed = 0;
  // analysis
  int analyze_n = 50;

  void set(const std::string& key, const std::string& value);
  std::vector<std::pair<std::string, std::string>> items() const;

  static RunConfig from_file(const std::string& path);
  void apply_file(const std::string& path);

  SyntheticConfig synthetic_config() const;
  ModelConfig model_config(int d_video, int d_text, int n_groups) const;
};

std::string format_double(double v);  // shortest round-trip representation

}  // namespace latsg

#endif  // LATSG_RUNCONFIG_HPP_

#ifndef LATSG_MODEL_HPP_
#define LATSG_MODEL_HPP_

#include "latsg/encoder.hpp"
#include "latsg/metrics.hpp"
#include "latsg/objective.hpp"
#include "latsg/optim.hpp"

namespace latsg {

struct ModelConfig {
  int d_video = 20;
  int d_text = 16;
  int d_model = 256;
  int heads = 1;
  int enc_cross_layers = 2;
  int enc_self_layers = 2;
  int dec_layers = 3;
  int ffn_dim = 0;  // 0 -> 4 * d_model
  int n_queries = 20;
  int n_groups = 3;

  double tau = 0.5;
  RsMode rs_mode = RsMode::kProse;
  ClsHeadMode cls_head = ClsHeadMode::kThreeBinary;
  LtInit lt_init = LtInit::kZero;

  int top_select = 4;
  int topk_save = 3;
  double mask_threshold = 0.5;

  // component toggles (ablation grid)
  bool lp_rs = true;
  bool lad_interaction = true;
  bool lqm = true;
  bool topk_save_enabled = true;
  // loss-term toggles
  bool loss_mean = true;
  bool loss_weight = true;
  bool loss_median = true;

  LossWeightsCfg lambdas;
  MomentLossWeights moment_weights;
  double align_temperature = 0.07;
  double saliency_margin = 0.2;
  bool use_positional = true;

  std::uint64_t init_seed = 0;

  // test hooks
  bool suppression_enabled = true;  // false: QLI runs but RS is never applied
  bool force_prob_tau = false;      // every RS-generating probability reads as tau
  bool force_mask_zero = false;     // every sample's suppression mask reads as 0

  void validate() const;
};

// Per-sample state of the length pipeline, kept for inspection and losses.
struct LengthState {
  Tensor lt_prime;
  LengthPrediction prediction;
  ResidualSuppression rs;
  Tensor quality;   // {1,1} sigmoid score, defined when LQM is active
  double qs = 1.0;
  double mask = 1.0;
};

struct SampleForward {
  Projected projected;
  FusionEmbedding fusion;
  LengthState length_state;  // populated when LP&RS is on
  Tensor decoder_input;      // F' when LP&RS is on, otherwise F
  DecodeResult decoded;
  Tensor alignment;  // scalar losses (defined during batch_loss only)
  Tensor saliency;
};

struct SamplePrediction {
  std::vector<Moment> moments;         // ranked by confidence, descending
  std::vector<double> confidences;
  std::vector<double> query_lengths;   // per query index (unranked)
  std::vector<double> length_probs;    // per group, short -> long
  int predicted_label = -1;
  double qs = 1.0;
};

class Model {
 public:
  Model(ModelConfig cfg, std::vector<Anchor> anchors, LengthRule role_rule);

  struct BatchResult {
    Tensor total;
    LossBreakdown breakdown;
  };
  // Builds the loss graph for one batch under the active tape. Labels are
  // category indices aligned with the batch.
  BatchResult batch_loss(const std::vector<const Sample*>& batch,
                         const std::vector<int>& labels);

  // Forward without losses; no tape required.
  SampleForward forward(const Sample& s) const;
  SamplePrediction predict(const Sample& s) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const std::vector<Anchor>& anchors() const { return bank_.anchors; }
  const QueryBank& query_bank() const { return bank_; }
  const LengthRule& role_rule() const { return role_rule_; }
  int alignment_skips() const { return alignment_skips_; }

 private:
  LadConfig lad_config() const;
  EncoderConfig encoder_config() const;
  SampleForward forward_impl(const Sample& s, bool with_losses) const;

  ModelConfig cfg_;
  LengthRule role_rule_;
  ParamStore params_;
  EncoderParams encoder_;
  QliParams qli_;
  QualityParams quality_;
  LadParams lad_;
  QueryBank bank_;
  mutable int alignment_skips_ = 0;
};

}  // namespace latsg

#endif  // LATSG_MODEL_HPP_

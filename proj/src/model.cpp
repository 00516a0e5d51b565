#include "latsg/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latsg {

void ModelConfig::validate() const {
  if (d_model < 2 || d_model % 2 != 0) throw ConfigError("d_model must be even and >= 2");
  if (heads < 1 || d_model % heads != 0) throw ConfigError("heads must divide d_model");
  if (n_queries < n_groups)
    throw ConfigError("need at least one query per length group (n_queries >= " +
                      std::to_string(n_groups) + ")");
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0,1)");
  if (top_select < 1) throw ConfigError("top_select must be >= 1");
  if (topk_save < 0) throw ConfigError("topk_save must be >= 0");
  if (mask_threshold < 0.0 || mask_threshold > 1.0)
    throw ConfigError("mask_threshold must lie in [0,1]");
  if (lambdas.lambda_sal < 0.0 || lambdas.lambda_alig < 0.0 || lambdas.lambda_lencl < 0.0)
    throw ConfigError("balancing parameters must be non-negative");
  if (!lp_rs && lad_interaction)
    throw ConfigError("LAD interaction requires LP&RS: there is no suppression to refine");
  if (!lp_rs && lqm)
    throw ConfigError("LQM requires LP&RS: there is no suppression to mask");
  if (!lp_rs && topk_save_enabled)
    throw ConfigError("TopK-Save requires LP&RS: there is no suppression to exempt from");
  if ((loss_weight || loss_median) && !lqm)
    throw ConfigError("weight/median loss terms need LQM quality scores");
  if (lp_rs && !loss_mean && !loss_weight)
    throw ConfigError("length classification needs at least one CE term (mean or weight)");
}

Model::Model(ModelConfig cfg, std::vector<Anchor> anchors, LengthRule role_rule)
    : cfg_(std::move(cfg)), role_rule_(std::move(role_rule)) {
  cfg_.validate();
  if (static_cast<int>(anchors.size()) != cfg_.n_queries)
    throw ConfigError("anchor count must equal n_queries");
  // All submodules are constructed regardless of the ablation toggles so the
  // same seed always yields the same weights.
  Rng rng = make_rng(mix_seed(cfg_.init_seed, 0x1417));
  encoder_ = make_encoder(params_, encoder_config(), rng);
  QliConfig qc;
  qc.d_model = cfg_.d_model;
  qc.heads = cfg_.heads;
  qc.n_groups = cfg_.n_groups;
  qc.tau = cfg_.tau;
  qc.rs_mode = cfg_.rs_mode;
  qc.cls_head = cfg_.cls_head;
  qc.lt_init = cfg_.lt_init;
  qc.use_positional = cfg_.use_positional;
  qli_ = make_qli(params_, qc, rng);
  quality_ = make_quality(params_, cfg_.d_model, rng);
  LadConfig lc = lad_config();
  lad_ = make_lad(params_, lc, rng);
  bank_ = make_query_bank(anchors, role_rule_);
}

EncoderConfig Model::encoder_config() const {
  EncoderConfig ec;
  ec.d_video = cfg_.d_video;
  ec.d_text = cfg_.d_text;
  ec.d_model = cfg_.d_model;
  ec.cross_blocks = cfg_.enc_cross_layers;
  ec.self_blocks = cfg_.enc_self_layers;
  ec.heads = cfg_.heads;
  ec.ffn_dim = cfg_.ffn_dim;
  ec.use_positional = cfg_.use_positional;
  ec.align_temperature = cfg_.align_temperature;
  ec.saliency_margin = cfg_.saliency_margin;
  return ec;
}

LadConfig Model::lad_config() const {
  LadConfig lc;
  lc.d_model = cfg_.d_model;
  lc.heads = cfg_.heads;
  lc.n_layers = cfg_.dec_layers;
  lc.ffn_dim = cfg_.ffn_dim;
  lc.n_queries = cfg_.n_queries;
  lc.top_select = cfg_.top_select;
  lc.topk_save = cfg_.topk_save;
  lc.tau = cfg_.tau;
  lc.rs_mode = cfg_.rs_mode;
  lc.use_positional = cfg_.use_positional;
  lc.suppression_enabled = cfg_.lp_rs && cfg_.suppression_enabled;
  lc.lad_interaction = cfg_.lad_interaction;
  lc.topk_save_enabled = cfg_.topk_save_enabled;
  lc.force_prob_tau = cfg_.force_prob_tau;
  return lc;
}

SampleForward Model::forward_impl(const Sample& s, bool with_losses) const {
  SampleForward out;
  out.projected = project(s.video, s.text, encoder_);
  if (with_losses && cfg_.lambdas.lambda_alig > 0.0)
    out.alignment = alignment_loss(out.projected.video, out.projected.text, s.moments,
                                   cfg_.align_temperature, &alignment_skips_);
  out.fusion = fuse(out.projected, encoder_, encoder_config());
  if (with_losses && cfg_.lambdas.lambda_sal > 0.0)
    out.saliency = saliency_loss(out.fusion.saliency, s.saliency, cfg_.saliency_margin);

  ResidualSuppression rs0;
  rs0.mode = cfg_.rs_mode;
  double mask = 1.0;
  if (cfg_.lp_rs) {
    QliConfig qc;
    qc.d_model = cfg_.d_model;
    qc.heads = cfg_.heads;
    qc.n_groups = cfg_.n_groups;
    qc.use_positional = cfg_.use_positional;
    qc.cls_head = cfg_.cls_head;
    Perceived per = perceive_length(out.fusion.f, qli_, qc);
    out.length_state.lt_prime = per.lt_prime;
    out.decoder_input = per.f_prime;
    out.length_state.prediction = classify_length(per.lt_prime, qli_, qc);
    std::vector<double> probs = out.length_state.prediction.values();
    if (cfg_.force_prob_tau) probs.assign(probs.size(), cfg_.tau);
    rs0 = generate_rs(probs, cfg_.tau, cfg_.rs_mode);
    out.length_state.rs = rs0;
    if (cfg_.lqm) {
      out.length_state.quality = quality_score(per.lt_prime, quality_);
      out.length_state.qs = out.length_state.quality.item();
      mask = cfg_.force_mask_zero
                 ? 0.0
                 : build_masks({out.length_state.qs}, cfg_.mask_threshold)[0];
    }
    out.length_state.mask = mask;
  } else {
    out.decoder_input = out.fusion.f;
    rs0.s.assign(cfg_.n_groups, 0.0);
  }
  out.decoded = decode(out.decoder_input, bank_, lad_, lad_config(), rs0, mask);
  return out;
}

SampleForward Model::forward(const Sample& s) const { return forward_impl(s, false); }

Model::BatchResult Model::batch_loss(const std::vector<const Sample*>& batch,
                                     const std::vector<int>& labels) {
  if (batch.empty()) throw UsageError("batch_loss: empty batch");
  if (batch.size() != labels.size()) throw UsageError("batch_loss: label count mismatch");

  Tensor l_mo, l_sal, l_alig;
  std::vector<Tensor> ce_terms, qs_terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& s = *batch[i];
    SampleForward f = forward_impl(s, true);
    Tensor mo = moment_loss(f.decoded, s.moments, cfg_.moment_weights);
    l_mo = l_mo.defined() ? add(l_mo, mo) : mo;
    if (f.saliency.defined()) l_sal = l_sal.defined() ? add(l_sal, f.saliency) : f.saliency;
    if (f.alignment.defined()) l_alig = l_alig.defined() ? add(l_alig, f.alignment) : f.alignment;
    if (cfg_.lp_rs) {
      ce_terms.push_back(length_ce(f.length_state.prediction, labels[i], cfg_.cls_head));
      if (cfg_.lqm) qs_terms.push_back(reshape(f.length_state.quality, {1}));
    }
  }
  double inv_n = 1.0 / static_cast<double>(batch.size());
  l_mo = mul_scalar(l_mo, inv_n);
  l_sal = l_sal.defined() ? mul_scalar(l_sal, inv_n) : Tensor::scalar(0.0);
  l_alig = l_alig.defined() ? mul_scalar(l_alig, inv_n) : Tensor::scalar(0.0);

  Tensor l_lencl = Tensor::scalar(0.0);
  LengthClsTerms terms;
  if (cfg_.lp_rs) {
    LengthClsToggles tg;
    tg.use_mean = cfg_.loss_mean;
    tg.use_weight = cfg_.loss_weight && cfg_.lqm;
    tg.use_median = cfg_.loss_median && cfg_.lqm;
    terms = length_cls_loss(ce_terms, qs_terms, tg);
    l_lencl = terms.total;
  }

  BatchResult res;
  res.total = total_loss(l_mo, l_sal, l_alig, l_lencl, cfg_.lambdas);
  res.breakdown.l_mo = l_mo.item();
  res.breakdown.l_sal = l_sal.item();
  res.breakdown.l_alig = l_alig.item();
  res.breakdown.l_mean = terms.mean.defined() ? terms.mean.item() : 0.0;
  res.breakdown.l_weight = terms.weight.defined() ? terms.weight.item() : 0.0;
  res.breakdown.l_median = terms.median.defined() ? terms.median.item() : 0.0;
  res.breakdown.l_lencl = l_lencl.item();
  res.breakdown.total = res.total.item();
  return res;
}

SamplePrediction Model::predict(const Sample& s) const {
  SampleForward f = forward_impl(s, false);
  const LayerOutput& last = f.decoded.layers.back();
  int nq = last.center.rows();
  SamplePrediction pred;
  pred.query_lengths.resize(nq);
  std::vector<int> order(nq);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return last.conf.at(a) > last.conf.at(b); });
  for (int i = 0; i < nq; ++i) {
    pred.query_lengths[i] = last.length.at(i);
    int q = order[i];
    Moment m;
    m.center = last.center.at(q);
    m.length = last.length.at(q);
    pred.moments.push_back(m);
    pred.confidences.push_back(last.conf.at(q));
  }
  if (cfg_.lp_rs) {
    pred.length_probs = f.length_state.prediction.values();
    pred.predicted_label = static_cast<int>(
        std::max_element(pred.length_probs.begin(), pred.length_probs.end()) -
        pred.length_probs.begin());
    pred.qs = f.length_state.qs;
  }
  return pred;
}

}  // namespace latsg

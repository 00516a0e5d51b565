#ifndef LATSG_OBJECTIVE_HPP_
#define LATSG_OBJECTIVE_HPP_

#include "latsg/lad.hpp"

namespace latsg {

struct QualityParams {
  Mlp mlp;  // D -> D -> 1, sigmoid applied in quality_score
};
QualityParams make_quality(ParamStore& ps, int d_model, Rng& rng);

// Per-sample quality of the length token, in (0,1).
Tensor quality_score(const Tensor& lt_prime, const QualityParams& p);

// Hard sample-level gate: 1 when qs >= threshold, else 0. No gradient flows
// through the thresholding.
std::vector<double> build_masks(const std::vector<double>& qs, double threshold = 0.5);

// Eq-style combination of the classification loss:
//   mean   — plain average of the per-sample cross-entropies
//   weight — quality-weighted average, sum(Qs*CE)/max(sum(Qs), eps)
//   median — |median(Qs) - min(Qs)|, the anti-collapse term
struct LengthClsTerms {
  Tensor mean, weight, median, total;
};
struct LengthClsToggles {
  bool use_mean = true;
  bool use_weight = true;
  bool use_median = true;
};
LengthClsTerms length_cls_loss(const std::vector<Tensor>& ce_per_sample,
                               const std::vector<Tensor>& qs_per_sample,
                               const LengthClsToggles& toggles, double eps = 1e-8);

// Sum of binary cross-entropies of the three heads against the one-hot
// label (or a single CE for the 3-way softmax variant).
Tensor length_ce(const LengthPrediction& pred, int label, ClsHeadMode mode);

// Minimum-cost assignment of rows (ground truths) to columns (queries),
// rows <= cols. Ties resolve to the lexicographically smallest assignment.
std::vector<int> hungarian_match(const std::vector<std::vector<double>>& cost);

struct MomentLossWeights {
  double l1 = 10.0;
  double giou = 1.0;
  double conf = 4.0;
};

double span_giou_value(const Moment& a, const Moment& b);

// DETR-style per-layer loss: L1 + gIoU on Hungarian-matched spans plus
// foreground-confidence CE over all queries, averaged over the ground-truth
// count and summed across decoder layers.
Tensor moment_loss(const DecodeResult& decoded, const std::vector<Moment>& gts,
                   const MomentLossWeights& w);

struct LossBreakdown {
  double l_mo = 0.0;
  double l_sal = 0.0;
  double l_alig = 0.0;
  double l_mean = 0.0, l_weight = 0.0, l_median = 0.0, l_lencl = 0.0;
  double total = 0.0;
};

struct LossWeightsCfg {
  double lambda_sal = 1.0;
  double lambda_alig = 0.3;
  double lambda_lencl = 1.0;
};

// total = l_mo + lambda_sal*l_sal + lambda_alig*l_alig + lambda_lencl*l_lencl
Tensor total_loss(const Tensor& l_mo, const Tensor& l_sal, const Tensor& l_alig,
                  const Tensor& l_lencl, const LossWeightsCfg& w);

}  // namespace latsg

#endif  // LATSG_OBJECTIVE_HPP_

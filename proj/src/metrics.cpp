#include "latsg/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace latsg {

double interval_iou(double s1, double e1, double s2, double e2) {
  double inter = std::min(e1, e2) - std::max(s1, s2);
  if (inter <= 0.0) return 0.0;
  double uni = (e1 - s1) + (e2 - s2) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double temporal_iou(const Moment& a, const Moment& b) {
  return interval_iou(a.start(), a.end(), b.start(), b.end());
}

namespace {

double best_iou(const Moment& pred, const std::vector<Moment>& gts) {
  double best = 0.0;
  for (const auto& g : gts) best = std::max(best, temporal_iou(pred, g));
  return best;
}

}  // namespace

double recall_at_1(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                   double theta) {
  if (gts.empty()) return 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (i >= preds.size() || preds[i].moments.empty()) continue;
    if (best_iou(preds[i].moments[0], gts[i].moments) >= theta) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(gts.size());
}

double average_precision(const Prediction& pred, const GroundTruth& gt, double theta) {
  const std::size_t n_gt = gt.moments.size();
  if (n_gt == 0) return 0.0;
  std::vector<bool> taken(n_gt, false);
  std::vector<int> tp(pred.moments.size(), 0);
  for (std::size_t r = 0; r < pred.moments.size(); ++r) {
    int best = -1;
    double best_v = -1.0;
    for (std::size_t g = 0; g < n_gt; ++g) {
      if (taken[g]) continue;
      double v = temporal_iou(pred.moments[r], gt.moments[g]);
      if (v >= theta && v > best_v) {
        best = static_cast<int>(g);
        best_v = v;
      }
    }
    if (best >= 0) {
      taken[best] = true;
      tp[r] = 1;
    }
  }
  // precision/recall at each rank, integrated with the monotone envelope
  std::vector<double> prec, rec;
  int cum = 0;
  for (std::size_t r = 0; r < tp.size(); ++r) {
    cum += tp[r];
    prec.push_back(static_cast<double>(cum) / static_cast<double>(r + 1));
    rec.push_back(static_cast<double>(cum) / static_cast<double>(n_gt));
  }
  for (int r = static_cast<int>(prec.size()) - 2; r >= 0; --r)
    prec[r] = std::max(prec[r], prec[r + 1]);
  double ap = 0.0;
  double prev_rec = 0.0;
  for (std::size_t r = 0; r < prec.size(); ++r) {
    ap += (rec[r] - prev_rec) * prec[r];
    prev_rec = rec[r];
  }
  return ap;
}

MapResult mean_ap(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts) {
  MapResult res;
  if (gts.empty()) return res;
  double grid_sum = 0.0;
  for (int k = 0; k < 10; ++k) {
    double theta = 0.5 + 0.05 * k;
    double s = 0.0;
    for (std::size_t i = 0; i < gts.size(); ++i) {
      Prediction empty;
      const Prediction& p = i < preds.size() ? preds[i] : empty;
      s += average_precision(p, gts[i], theta);
    }
    double m = s / static_cast<double>(gts.size());
    if (k == 0) res.map_50 = m;
    if (k == 5) res.map_75 = m;
    grid_sum += m;
  }
  res.map_avg = grid_sum / 10.0;
  return res;
}

double mean_iou(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts) {
  if (gts.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < gts.size(); ++i) {
    if (i < preds.size() && !preds[i].moments.empty())
      s += best_iou(preds[i].moments[0], gts[i].moments);
  }
  return s / static_cast<double>(gts.size());
}

ConcentrationResult length_concentration(const std::vector<double>& lengths) {
  ConcentrationResult res;
  res.lengths = lengths;
  res.histogram.assign(10, 0);
  if (lengths.empty()) return res;
  double m = 0.0;
  for (double v : lengths) m += v;
  m /= static_cast<double>(lengths.size());
  double var = 0.0;
  for (double v : lengths) var += (v - m) * (v - m);
  res.std_dev = std::sqrt(var / static_cast<double>(lengths.size()));
  for (double v : lengths) {
    int bin = static_cast<int>(std::floor(v * 10.0));
    bin = std::min(9, std::max(0, bin));
    res.histogram[bin] += 1;
  }
  return res;
}

MetricsReport compute_metrics(const std::vector<Prediction>& preds,
                              const std::vector<GroundTruth>& gts) {
  MetricsReport rep;
  rep.r1_30 = recall_at_1(preds, gts, 0.3);
  rep.r1_50 = recall_at_1(preds, gts, 0.5);
  rep.r1_70 = recall_at_1(preds, gts, 0.7);
  MapResult m = mean_ap(preds, gts);
  rep.map_50 = m.map_50;
  rep.map_75 = m.map_75;
  rep.map_avg = m.map_avg;
  rep.miou = mean_iou(preds, gts);
  return rep;
}

}  // namespace latsg

#ifndef LATSG_METRICS_HPP_
#define LATSG_METRICS_HPP_

#include <string>
#include <vector>

#include "latsg/data.hpp"

namespace latsg {

// Ranked predictions for one sample; confidences must be sorted descending.
struct Prediction {
  std::string sample_id;
  std::vector<Moment> moments;
  std::vector<double> confidences;
};

struct GroundTruth {
  std::string sample_id;
  std::vector<Moment> moments;
};

double interval_iou(double s1, double e1, double s2, double e2);
double temporal_iou(const Moment& a, const Moment& b);

// Fraction of samples whose top-1 prediction reaches IoU >= theta with any
// ground-truth moment. Samples without a prediction count as misses.
double recall_at_1(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts,
                   double theta);

// Average precision for one sample at one threshold: ranked predictions are
// greedily matched to unmatched ground truths (best IoU first), and the PR
// curve is integrated with all-point interpolation.
double average_precision(const Prediction& pred, const GroundTruth& gt, double theta);

struct MapResult {
  double map_50 = 0.0;
  double map_75 = 0.0;
  double map_avg = 0.0;  // mean over IoU grid 0.5:0.05:0.95
};
MapResult mean_ap(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts);

double mean_iou(const std::vector<Prediction>& preds, const std::vector<GroundTruth>& gts);

struct ConcentrationResult {
  std::vector<double> lengths;
  double std_dev = 0.0;            // population std
  std::vector<int> histogram;      // 10 bins over [0,1], last bin closed
};
ConcentrationResult length_concentration(const std::vector<double>& lengths);

// All metrics as fractions in [0,1].
struct MetricsReport {
  double r1_30 = 0.0, r1_50 = 0.0, r1_70 = 0.0;
  double map_50 = 0.0, map_75 = 0.0, map_avg = 0.0;
  double miou = 0.0;
  double length_cls_accuracy = 0.0;
  std::vector<double> per_query_length_std;
  std::vector<std::vector<int>> per_query_histogram;
};

MetricsReport compute_metrics(const std::vector<Prediction>& preds,
                              const std::vector<GroundTruth>& gts);

}  // namespace latsg

#endif  // LATSG_METRICS_HPP_

#ifndef LATSG_DATA_HPP_
#define LATSG_DATA_HPP_

#include <optional>
#include <string>
#include <vector>

#include "latsg/tensor.hpp"

namespace latsg {

// One target segment, parameterized as (center, length), both normalized to
// the video duration. `seconds` carries the absolute duration when the video
// duration is known.
struct Moment {
  double center = 0.0;
  double length = 0.0;
  std::optional<double> seconds;

  double start() const { return center - length / 2.0; }
  double end() const { return center + length / 2.0; }
};

bool moment_valid(const Moment& m);
Moment clamp_moment(double center, double length);

enum class LengthMode { kAbsoluteSeconds, kNormalized };

// Bucketing rule for moment durations. Intervals are half-open [lo, hi)
// except the last, which is closed. Categories are ordered short -> long.
struct LengthRule {
  LengthMode mode = LengthMode::kNormalized;
  std::vector<double> boundaries;  // strictly increasing, size = categories+1
  std::vector<std::string> names;  // size = categories

  int categories() const { return static_cast<int>(names.size()); }
};

LengthRule qvhighlights_rule();  // absolute seconds: 0/10/30/150
LengthRule charades_rule();      // normalized: 0/0.2/0.302/1
LengthRule tacos_rule();         // normalized: 0/0.045/0.1/1
LengthRule synthetic_rule();     // normalized: 0/0.15/0.4/1
// Equal-count split of the given normalized lengths into k buckets.
LengthRule quantile_rule(std::vector<double> lengths, int k);

// Deterministic bucket lookup; ValidationError when the duration falls
// outside [first boundary, last boundary].
int label_length_category(const Moment& m, const LengthRule& rule);

extern const std::vector<std::string> kThreeWayNames;  // {"short","middle","long"}

struct Sample {
  std::string id;
  Tensor video;  // {L, d_v}
  Tensor text;   // {N, d_t}
  std::vector<Moment> moments;
  std::vector<double> saliency;  // per clip, in [0,1]
  int length_label = 0;          // category index under the dataset rule
};

using Dataset = std::vector<Sample>;

struct SyntheticConfig {
  int n_samples = 300;
  int l_min = 16, l_max = 24;  // clips per video
  int n_min = 4, n_max = 8;    // words per description
  int d_v = 20, d_t = 16;
  std::vector<double> priors = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  double signal = 1.0;       // how strongly features encode the moment/category
  double noise = 0.25;       // i.i.d. gaussian noise level
  double label_noise = 0.0;  // fraction of samples given a wrong length label
  double multi_moment_rate = 0.0;
  double clip_seconds = 2.0;
  std::uint64_t seed = 1;
  // seeds the planted signal directions; train/eval pairs must share it so
  // the category encoding transfers across files
  std::uint64_t domain_seed = 0;
};

// Seeded, reproducible generator. Each sample's video features carry a
// planted segment: in-span clips receive a presence direction (for
// localization) plus a per-category direction (for length classification),
// both scaled by `signal`; everything else is noise. Samples selected for
// label noise get a wrong label and an attenuated category signal, so the
// corruption is detectable from features.
Dataset generate_synthetic(const SyntheticConfig& cfg);

// Index set of the label-noised samples for a given config (exactly
// floor(label_noise * n), seeded selection).
std::vector<int> label_noise_indices(const SyntheticConfig& cfg);

// JSON Lines, one sample per line. Round-trips losslessly.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

void validate_sample(const Sample& s);

}  // namespace latsg

#endif  // LATSG_DATA_HPP_

#include "latsg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace latsg {

using json = nlohmann::ordered_json;

const std::vector<std::string> kThreeWayNames = {"short", "middle", "long"};

bool moment_valid(const Moment& m) {
  if (!(m.length > 0.0) || m.length > 1.0) return false;
  if (m.center < 0.0 || m.center > 1.0) return false;
  const double tol = 1e-9;
  return m.start() >= -tol && m.end() <= 1.0 + tol;
}

Moment clamp_moment(double center, double length) {
  Moment m;
  m.length = std::min(1.0, std::max(1e-6, length));
  double half = m.length / 2.0;
  m.center = std::min(1.0 - half, std::max(half, center));
  return m;
}

namespace {
LengthRule make_rule(LengthMode mode, std::vector<double> bounds, std::vector<std::string> names) {
  LengthRule r;
  r.mode = mode;
  r.boundaries = std::move(bounds);
  r.names = std::move(names);
  return r;
}
}  // namespace

LengthRule qvhighlights_rule() {
  return make_rule(LengthMode::kAbsoluteSeconds, {0.0, 10.0, 30.0, 150.0}, kThreeWayNames);
}
LengthRule charades_rule() {
  return make_rule(LengthMode::kNormalized, {0.0, 0.2, 0.302, 1.0}, kThreeWayNames);
}
LengthRule tacos_rule() {
  return make_rule(LengthMode::kNormalized, {0.0, 0.045, 0.1, 1.0}, kThreeWayNames);
}
LengthRule synthetic_rule() {
  return make_rule(LengthMode::kNormalized, {0.0, 0.15, 0.4, 1.0}, kThreeWayNames);
}

LengthRule quantile_rule(std::vector<double> lengths, int k) {
  if (k < 2 || k > 8) throw ConfigError("quantile_rule: split count out of range");
  if (static_cast<int>(lengths.size()) < k)
    throw ConfigError("quantile_rule: need at least k lengths");
  std::sort(lengths.begin(), lengths.end());
  std::vector<double> bounds;
  bounds.push_back(0.0);
  for (int i = 1; i < k; ++i) {
    std::size_t idx = static_cast<std::size_t>(
        std::min<double>(lengths.size() - 1.0, std::floor(lengths.size() * (double)i / k)));
    double b = lengths[idx];
    if (b <= bounds.back()) b = std::nextafter(bounds.back(), 1.0);
    bounds.push_back(b);
  }
  bounds.push_back(1.0);
  std::vector<std::string> names;
  if (k == 2) {
    names = {"short", "long"};
  } else if (k == 3) {
    names = kThreeWayNames;
  } else {
    names = {"short", "middle", "long", "xlong"};
    names.resize(k);
    for (int i = 4; i < k; ++i) names.push_back("len" + std::to_string(i));
  }
  return make_rule(LengthMode::kNormalized, std::move(bounds), std::move(names));
}

int label_length_category(const Moment& m, const LengthRule& rule) {
  double dur;
  if (rule.mode == LengthMode::kAbsoluteSeconds) {
    if (!m.seconds.has_value())
      throw ValidationError("length labeling: rule needs absolute seconds but moment has none");
    dur = *m.seconds;
  } else {
    dur = m.length;
  }
  const auto& b = rule.boundaries;
  if (dur < b.front() || dur > b.back())
    throw ValidationError("length labeling: duration " + std::to_string(dur) +
                          " outside rule range [" + std::to_string(b.front()) + ", " +
                          std::to_string(b.back()) + "]");
  for (std::size_t i = 0; i + 2 < b.size(); ++i)
    if (dur < b[i + 1]) return static_cast<int>(i);
  return static_cast<int>(b.size()) - 2;  // last interval is closed
}

// ---- synthetic generation ----

namespace {

std::vector<double> unit_direction(int dim, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(dim);
  double norm = 0.0;
  for (auto& x : v) {
    x = dist(rng);
    norm += x * x;
  }
  norm = std::sqrt(std::max(norm, 1e-12));
  for (auto& x : v) x /= norm;
  return v;
}

struct PlantDirections {
  std::vector<std::vector<double>> video_cat;  // one per category
  std::vector<double> presence;
  std::vector<std::vector<double>> text_cat;
};

PlantDirections make_directions(const SyntheticConfig& cfg, int n_cat) {
  Rng rng = make_rng(mix_seed(cfg.domain_seed, 0xD1F5));
  PlantDirections d;
  for (int c = 0; c < n_cat; ++c) d.video_cat.push_back(unit_direction(cfg.d_v, rng));
  d.presence = unit_direction(cfg.d_v, rng);
  for (int c = 0; c < n_cat; ++c) d.text_cat.push_back(unit_direction(cfg.d_t, rng));
  return d;
}

void check_config(const SyntheticConfig& cfg) {
  if (cfg.n_samples < 1) throw ConfigError("synthetic: n_samples must be >= 1");
  if (cfg.l_min < 1 || cfg.l_min > cfg.l_max) throw ConfigError("synthetic: bad clip range");
  if (cfg.n_min < 1 || cfg.n_min > cfg.n_max) throw ConfigError("synthetic: bad word range");
  if (cfg.d_v < 1 || cfg.d_t < 1) throw ConfigError("synthetic: feature dims must be >= 1");
  if (cfg.signal < 0.0) throw ConfigError("synthetic: signal strength must be >= 0");
  if (cfg.noise < 0.0) throw ConfigError("synthetic: noise must be >= 0");
  if (cfg.label_noise < 0.0 || cfg.label_noise > 1.0)
    throw ConfigError("synthetic: label noise must be in [0,1]");
  double psum = std::accumulate(cfg.priors.begin(), cfg.priors.end(), 0.0);
  if (cfg.priors.size() != 3 || std::fabs(psum - 1.0) > 1e-9)
    throw ConfigError("synthetic: category priors must be 3 values summing to 1");
}

Moment draw_moment(int cat, const LengthRule& rule, Rng& rng) {
  double lo = rule.boundaries[cat];
  double hi = rule.boundaries[cat + 1];
  // keep lengths inside a practical band so spans always fit
  lo = std::max(lo, 0.05);
  hi = std::min(hi, 0.85);
  std::uniform_real_distribution<double> len_dist(lo, hi);
  double len = len_dist(rng);
  std::uniform_real_distribution<double> c_dist(len / 2.0, 1.0 - len / 2.0);
  Moment m;
  m.length = len;
  m.center = c_dist(rng);
  return m;
}

bool overlaps(const Moment& a, const Moment& b) {
  return std::max(a.start(), b.start()) < std::min(a.end(), b.end());
}

}  // namespace

std::vector<int> label_noise_indices(const SyntheticConfig& cfg) {
  int k = static_cast<int>(std::floor(cfg.label_noise * cfg.n_samples));
  std::vector<int> idx(cfg.n_samples);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(mix_seed(cfg.seed, 0xF11B));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  check_config(cfg);
  const LengthRule rule = synthetic_rule();
  const int n_cat = rule.categories();
  const PlantDirections dirs = make_directions(cfg, n_cat);
  const std::vector<int> noisy = label_noise_indices(cfg);

  Dataset ds;
  ds.reserve(cfg.n_samples);
  for (int i = 0; i < cfg.n_samples; ++i) {
    Rng rng = make_rng(mix_seed(cfg.seed, 0x5A00 + static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    double u = unif(rng);
    int cat = 0;
    double acc = 0.0;
    for (int c = 0; c < n_cat; ++c) {
      acc += cfg.priors[c];
      if (u < acc) {
        cat = c;
        break;
      }
      cat = c;
    }

    Sample s;
    s.id = "syn" + std::to_string(i);
    std::uniform_int_distribution<int> l_dist(cfg.l_min, cfg.l_max);
    std::uniform_int_distribution<int> n_dist(cfg.n_min, cfg.n_max);
    int L = l_dist(rng);
    int N = n_dist(rng);
    double duration = L * cfg.clip_seconds;

    s.moments.push_back(draw_moment(cat, rule, rng));
    if (cfg.multi_moment_rate > 0.0 && unif(rng) < cfg.multi_moment_rate) {
      for (int attempt = 0; attempt < 20; ++attempt) {
        Moment m2 = draw_moment(cat, rule, rng);
        if (!overlaps(m2, s.moments[0])) {
          s.moments.push_back(m2);
          break;
        }
      }
    }
    for (auto& m : s.moments) m.seconds = m.length * duration;
    s.length_label = cat;

    bool flipped = std::binary_search(noisy.begin(), noisy.end(), i);
    double cat_scale = cfg.signal;
    if (flipped) {
      // wrong label plus weakened category evidence: an ambiguous sample
      std::uniform_int_distribution<int> flip(1, n_cat - 1);
      s.length_label = (cat + flip(rng)) % n_cat;
      cat_scale = 0.25 * cfg.signal;
    }

    s.video = Tensor::zeros({L, cfg.d_v});
    s.saliency.assign(L, 0.0);
    for (int l = 0; l < L; ++l) {
      double t = (l + 0.5) / L;
      bool inside = false;
      for (const auto& m : s.moments)
        if (t >= m.start() && t <= m.end()) inside = true;
      double* row = s.video.values().data() + static_cast<std::size_t>(l) * cfg.d_v;
      for (int j = 0; j < cfg.d_v; ++j) row[j] = cfg.noise * gauss(rng);
      if (inside) {
        s.saliency[l] = 1.0;
        for (int j = 0; j < cfg.d_v; ++j)
          row[j] += cfg.signal * dirs.presence[j] + cat_scale * dirs.video_cat[cat][j];
      }
    }

    s.text = Tensor::zeros({N, cfg.d_t});
    for (int w = 0; w < N; ++w) {
      double* row = s.text.values().data() + static_cast<std::size_t>(w) * cfg.d_t;
      for (int j = 0; j < cfg.d_t; ++j)
        row[j] = cfg.noise * gauss(rng) + cat_scale * dirs.text_cat[cat][j];
    }

    ds.push_back(std::move(s));
  }
  return ds;
}

// ---- validation and I/O ----

void validate_sample(const Sample& s) {
  auto fail = [&](const std::string& why) {
    throw ValidationError("sample " + s.id + ": " + why);
  };
  if (!s.video.defined() || s.video.dim() != 2 || s.video.rows() < 1)
    fail("video features must be a non-empty matrix");
  if (!s.text.defined() || s.text.dim() != 2 || s.text.rows() < 1)
    fail("text features must be a non-empty matrix");
  if (s.moments.empty()) fail("at least one ground-truth moment required");
  for (const auto& m : s.moments) {
    if (!(m.length > 0.0)) fail("moment length must be > 0");
    if (!moment_valid(m)) fail("moment violates span geometry");
  }
  if (static_cast<int>(s.saliency.size()) != s.video.rows())
    fail("saliency targets must have one score per clip");
  for (double v : s.saliency)
    if (v < 0.0 || v > 1.0) fail("saliency scores must lie in [0,1]");
  if (s.length_label < 0 || s.length_label >= static_cast<int>(kThreeWayNames.size()))
    fail("unknown length label");
}

namespace {

json matrix_to_json(const Tensor& t) {
  json rows = json::array();
  for (int i = 0; i < t.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Tensor matrix_from_json(const json& rows, const char* field) {
  if (!rows.is_array() || rows.empty() || !rows[0].is_array())
    throw ParseError(std::string("field '") + field + "' must be a non-empty array of arrays");
  std::vector<std::vector<double>> data;
  for (const auto& r : rows) data.push_back(r.get<std::vector<double>>());
  return Tensor::from_rows(data);
}

int label_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kThreeWayNames.size(); ++i)
    if (kThreeWayNames[i] == name) return static_cast<int>(i);
  throw ParseError("unknown length_label '" + name + "'");
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open for writing: " + path);
  for (const auto& s : ds) {
    json j;
    j["id"] = s.id;
    j["video"] = matrix_to_json(s.video);
    j["text"] = matrix_to_json(s.text);
    json moments = json::array();
    for (const auto& m : s.moments) {
      json jm;
      jm["center"] = m.center;
      jm["length"] = m.length;
      if (m.seconds.has_value()) jm["seconds"] = *m.seconds;
      moments.push_back(std::move(jm));
    }
    j["moments"] = std::move(moments);
    j["saliency"] = s.saliency;
    j["length_label"] = kThreeWayNames[s.length_label];
    out << j.dump() << "\n";
  }
  if (!out) throw UsageError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open dataset: " + path);
  Dataset ds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const std::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    auto need = [&](const char* field) -> const json& {
      if (!j.contains(field))
        throw ParseError("line " + std::to_string(lineno) + ": missing field '" + field + "'");
      return j.at(field);
    };
    Sample s;
    try {
      s.id = need("id").get<std::string>();
      s.video = matrix_from_json(need("video"), "video");
      s.text = matrix_from_json(need("text"), "text");
      const json& jm = need("moments");
      if (!jm.is_array()) throw ParseError("'moments' must be an array");
      for (const auto& m : jm) {
        Moment mo;
        mo.center = m.at("center").get<double>();
        mo.length = m.at("length").get<double>();
        if (m.contains("seconds")) mo.seconds = m.at("seconds").get<double>();
        s.moments.push_back(mo);
      }
      s.saliency = need("saliency").get<std::vector<double>>();
      s.length_label = label_from_string(need("length_label").get<std::string>());
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
    validate_sample(s);
    ds.push_back(std::move(s));
  }
  return ds;
}

}  // namespace latsg

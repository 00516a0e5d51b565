#include "latsg/qli.hpp"

#include <algorithm>
#include <cmath>

namespace latsg {

QliParams make_qli(ParamStore& ps, const QliConfig& cfg, Rng& rng) {
  QliParams p;
  int d = cfg.d_model;
  Tensor lt = cfg.lt_init == LtInit::kZero ? Tensor::zeros({1, d}) : randn({1, d}, 0.02, rng);
  p.lt = ps.add("qli.lt", lt);
  p.attn = make_attention(ps, "qli.attn", d, cfg.heads, rng);
  for (int g = 0; g < cfg.n_groups; ++g)
    p.binary_heads.push_back(
        make_mlp(ps, "qli.head" + std::to_string(g), {d, d, 1}, rng));
  p.softmax_head = make_mlp(ps, "qli.head3way", {d, d, cfg.n_groups}, rng);
  return p;
}

Perceived perceive_length(const Tensor& fusion, const QliParams& p, const QliConfig& cfg) {
  int L = fusion.rows();
  Tensor seq = concat_rows(p.lt, fusion);  // LT at position 0
  Tensor out;
  if (cfg.use_positional) {
    Tensor pe = sinusoidal_encoding(L + 1, cfg.d_model);
    out = self_attention(seq, p.attn, &pe);
  } else {
    out = self_attention(seq, p.attn);
  }
  Perceived res;
  res.lt_prime = slice_rows(out, 0, 1);
  res.f_prime = slice_rows(out, 1, L + 1);
  return res;
}

std::vector<double> LengthPrediction::values() const {
  std::vector<double> v;
  v.reserve(probs.size());
  for (const auto& p : probs) v.push_back(p.item());
  return v;
}

LengthPrediction classify_length(const Tensor& lt_prime, const QliParams& p,
                                 const QliConfig& cfg) {
  LengthPrediction pred;
  if (cfg.cls_head == ClsHeadMode::kThreeBinary) {
    for (int g = 0; g < cfg.n_groups; ++g) {
      Tensor z = mlp_forward(lt_prime, p.binary_heads[g]);  // {1,1}
      pred.logits.push_back(z);
      pred.probs.push_back(sigmoid(z));
    }
  } else {
    Tensor z = mlp_forward(lt_prime, p.softmax_head);  // {1,G}
    Tensor probs = softmax(z);
    for (int g = 0; g < cfg.n_groups; ++g) {
      pred.logits.push_back(slice_cols(z, g, g + 1));
      pred.probs.push_back(slice_cols(probs, g, g + 1));
    }
  }
  return pred;
}

ResidualSuppression generate_rs(const std::vector<double>& probs, double tau, RsMode mode) {
  if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("generate_rs: tau must lie in (0,1)");
  ResidualSuppression rs;
  rs.mode = mode;
  rs.s.reserve(probs.size());
  for (double p : probs)
    rs.s.push_back(mode == RsMode::kLiteral ? tau - p : std::min(0.0, p - tau));
  return rs;
}

Tensor apply_rs(const Tensor& content, double s) {
  if (!std::isfinite(s)) throw NumericError("apply_rs: non-finite suppression scalar");
  return mul_scalar(content, 1.0 + s);
}

std::vector<int> assign_length_roles(const std::vector<double>& anchor_lengths,
                                     const LengthRule& rule, int* rebalanced_count) {
  int n = static_cast<int>(anchor_lengths.size());
  int groups = rule.categories();
  if (n < groups)
    throw ConfigError("assign_length_roles: need at least one query per length group");
  std::vector<int> roles(n);
  for (int i = 0; i < n; ++i) {
    Moment m;
    m.length = std::min(rule.boundaries.back(),
                        std::max(anchor_lengths[i], std::nextafter(0.0, 1.0)));
    m.center = 0.5;
    roles[i] = label_length_category(m, rule);
  }
  // Rebalance: while some group is empty, move the anchor nearest to that
  // group's interval out of a group that can spare one.
  int moves = 0;
  for (;;) {
    std::vector<int> count(groups, 0);
    for (int r : roles) count[r]++;
    int empty = -1;
    for (int g = 0; g < groups; ++g)
      if (count[g] == 0) empty = g;
    if (empty < 0) break;
    double lo = rule.boundaries[empty], hi = rule.boundaries[empty + 1];
    int best = -1;
    double best_dist = 0.0;
    for (int i = 0; i < n; ++i) {
      if (count[roles[i]] <= 1) continue;  // donor group must stay non-empty
      double d = anchor_lengths[i] < lo ? lo - anchor_lengths[i]
                                        : (anchor_lengths[i] > hi ? anchor_lengths[i] - hi : 0.0);
      if (best < 0 || d < best_dist) {
        best = i;
        best_dist = d;
      }
    }
    if (best < 0) throw ConfigError("assign_length_roles: cannot fill every length group");
    roles[best] = empty;
    ++moves;
  }
  if (moves > 0) {
    if (rebalanced_count) *rebalanced_count += moves;
    warn("length roles rebalanced for " + std::to_string(moves) + " anchor(s)");
  }
  return roles;
}

}  // namespace latsg

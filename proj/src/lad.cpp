#include "latsg/lad.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace latsg {

// ---- k-means anchors ----

namespace {

double sqdist(const Anchor& a, const Anchor& b) {
  double dc = a.center - b.center, dl = a.length - b.length;
  return dc * dc + dl * dl;
}

}  // namespace

std::vector<Anchor> kmeans_anchors(const std::vector<Moment>& moments, int k, std::uint64_t seed,
                                   int max_iters, double tol) {
  int n = static_cast<int>(moments.size());
  if (n < k) throw UsageError("kmeans_anchors: fewer moments than requested anchors");
  std::vector<Anchor> pts(n);
  for (int i = 0; i < n; ++i) pts[i] = {moments[i].center, moments[i].length};

  Rng rng = make_rng(mix_seed(seed, 0xA17C));
  std::vector<Anchor> centroids;
  centroids.reserve(k);

  // k-means++ seeding
  std::uniform_int_distribution<int> first(0, n - 1);
  centroids.push_back(pts[first(rng)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = sqdist(pts[i], centroids[0]);
      for (std::size_t c = 1; c < centroids.size(); ++c)
        best = std::min(best, sqdist(pts[i], centroids[c]));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      // all remaining points coincide with existing centroids
      centroids.push_back(pts[first(rng)]);
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double r = u(rng);
    int pick = n - 1;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += d2[i];
      if (r <= acc) {
        pick = i;
        break;
      }
    }
    centroids.push_back(pts[pick]);
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = sqdist(pts[i], centroids[0]);
      for (int c = 1; c < k; ++c) {
        double d = sqdist(pts[i], centroids[c]);
        if (d < best_d) {
          best = c;
          best_d = d;
        }
      }
      assign[i] = best;
    }
    std::vector<Anchor> next(k, Anchor{0.0, 0.0});
    std::vector<int> count(k, 0);
    for (int i = 0; i < n; ++i) {
      next[assign[i]].center += pts[i].center;
      next[assign[i]].length += pts[i].length;
      count[assign[i]]++;
    }
    double shift = 0.0;
    for (int c = 0; c < k; ++c) {
      if (count[c] == 0) {
        next[c] = centroids[c];  // keep empty clusters in place
      } else {
        next[c].center /= count[c];
        next[c].length /= count[c];
      }
      shift = std::max(shift, std::sqrt(sqdist(next[c], centroids[c])));
    }
    centroids = std::move(next);
    if (shift < tol) break;
  }

  std::stable_sort(centroids.begin(), centroids.end(), [](const Anchor& a, const Anchor& b) {
    return a.length < b.length || (a.length == b.length && a.center < b.center);
  });
  return centroids;
}

// ---- decoder ----

namespace {
int lad_ffn_dim(const LadConfig& cfg) { return cfg.ffn_dim > 0 ? cfg.ffn_dim : 4 * cfg.d_model; }
}  // namespace

LadParams make_lad(ParamStore& ps, const LadConfig& cfg, Rng& rng) {
  LadParams p;
  int d = cfg.d_model;
  int f = lad_ffn_dim(cfg);
  for (int i = 0; i < cfg.n_layers; ++i) {
    DecoderLayerParams lp;
    std::string base = "lad.layer" + std::to_string(i);
    lp.self_attn = make_attention(ps, base + ".self", d, cfg.heads, rng);
    lp.cross_attn = make_attention(ps, base + ".cross", d, cfg.heads, rng);
    lp.ffn1 = make_linear(ps, base + ".ffn1", d, f, rng);
    lp.ffn2 = make_linear(ps, base + ".ffn2", f, d, rng);
    lp.ln_self = make_layer_norm(ps, base + ".ln_self", d);
    lp.ln_cross = make_layer_norm(ps, base + ".ln_cross", d);
    lp.ln_ffn = make_layer_norm(ps, base + ".ln_ffn", d);
    p.layers.push_back(std::move(lp));
  }
  p.anchor_mlp = make_mlp(ps, "lad.anchor_mlp", {2, d, d}, rng);
  p.span_head = make_mlp(ps, "lad.span_head", {d, d, 2}, rng);
  p.conf_head = make_linear(ps, "lad.conf_head", d, 1, rng);
  return p;
}

QueryBank make_query_bank(const std::vector<Anchor>& anchors, const LengthRule& role_rule) {
  QueryBank bank;
  bank.anchors = anchors;
  std::vector<double> lengths;
  lengths.reserve(anchors.size());
  for (const auto& a : anchors) lengths.push_back(a.length);
  bank.roles = assign_length_roles(lengths, role_rule);
  bank.group_of_query = bank.roles;
  bank.n_groups = role_rule.categories();
  return bank;
}

std::vector<double> rs_allocation(const std::vector<double>& group_scalars,
                                  const std::vector<int>& roles) {
  std::vector<double> out(roles.size());
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] < 0 || roles[i] >= static_cast<int>(group_scalars.size()))
      throw UsageError("rs_allocation: role index out of range");
    out[i] = group_scalars[roles[i]];
  }
  return out;
}

std::vector<double> top_select(const std::vector<double>& confidences,
                               const std::vector<int>& roles, int n_groups, int s) {
  if (s < 1) throw UsageError("top_select: S must be >= 1");
  std::vector<double> out(n_groups, 0.0);
  for (int g = 0; g < n_groups; ++g) {
    std::vector<double> vals;
    for (std::size_t i = 0; i < confidences.size(); ++i)
      if (roles[i] == g) vals.push_back(confidences[i]);
    if (vals.empty()) throw UsageError("top_select: empty length group");
    int take = s;
    if (take > static_cast<int>(vals.size())) {
      take = static_cast<int>(vals.size());
      warn_once("top_select: S clamped to group size " + std::to_string(take));
    }
    std::sort(vals.begin(), vals.end(), std::greater<double>());
    double sum = 0.0;
    for (int i = 0; i < take; ++i) sum += vals[i];
    out[g] = sum / take;
  }
  return out;
}

std::vector<double> rs_update(const std::vector<double>& prev, const std::vector<double>& next) {
  if (prev.size() != next.size()) throw UsageError("rs_update: group count mismatch");
  std::vector<double> out(prev.size());
  for (std::size_t i = 0; i < prev.size(); ++i) out[i] = std::min(prev[i], next[i]);
  return out;
}

void topk_save(const std::vector<double>& confidences, const std::vector<double>& query_scalar,
               int k, std::vector<bool>& saved) {
  if (k <= 0) return;
  std::vector<int> candidates;
  for (std::size_t i = 0; i < confidences.size(); ++i)
    if (query_scalar[i] < 0.0 && !saved[i]) candidates.push_back(static_cast<int>(i));
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    return confidences[a] > confidences[b];  // ties keep lower index first
  });
  for (int i = 0; i < k && i < static_cast<int>(candidates.size()); ++i)
    saved[candidates[i]] = true;
}

namespace {

Tensor query_pos_embedding(const QueryBank& bank, const LadParams& params, int d_model) {
  int nq = static_cast<int>(bank.anchors.size());
  std::vector<double> flat;
  flat.reserve(nq * 2);
  std::vector<std::pair<double, double>> spans;
  for (const auto& a : bank.anchors) {
    flat.push_back(a.center);
    flat.push_back(a.length);
    spans.emplace_back(a.center, a.length);
  }
  Tensor anchor_mat = Tensor::from({nq, 2}, std::move(flat));
  Tensor learned = mlp_forward(anchor_mat, params.anchor_mlp);
  Tensor sinus = span_sinusoidal_embedding(spans, d_model);
  return add(learned, sinus);
}

LayerOutput span_readout(const Tensor& content, const QueryBank& bank, const LadParams& params) {
  int nq = content.rows();
  Tensor delta = mlp_forward(content, params.span_head);  // {N_q, 2}
  std::vector<double> inv_c(nq), inv_l(nq);
  for (int i = 0; i < nq; ++i) {
    inv_c[i] = inverse_sigmoid(bank.anchors[i].center);
    inv_l[i] = inverse_sigmoid(bank.anchors[i].length);
  }
  Tensor anchor_c = Tensor::from({nq, 1}, std::move(inv_c));
  Tensor anchor_l = Tensor::from({nq, 1}, std::move(inv_l));
  Tensor c_raw = sigmoid(add(slice_cols(delta, 0, 1), anchor_c));
  Tensor len = sigmoid(add(slice_cols(delta, 1, 2), anchor_l));
  // clamp the center so the span stays inside [0,1]
  Tensor half = mul_scalar(len, 0.5);
  Tensor hi = add_scalar(neg(half), 1.0);
  LayerOutput out;
  out.length = len;
  out.center = maximum(minimum(c_raw, hi), half);
  out.conf_logit = linear(content, params.conf_head);
  out.conf = sigmoid(out.conf_logit);
  return out;
}

}  // namespace

DecodeResult decode(const Tensor& f_prime, const QueryBank& bank, const LadParams& params,
                    const LadConfig& cfg, const ResidualSuppression& rs0, double sample_mask) {
  int nq = static_cast<int>(bank.anchors.size());
  int n_groups = bank.n_groups;
  if (cfg.suppression_enabled && static_cast<int>(rs0.s.size()) != n_groups)
    throw UsageError("decode: RS group count mismatch");

  Tensor qpos = query_pos_embedding(bank, params, cfg.d_model);
  Tensor pe_clips;
  if (cfg.use_positional) pe_clips = sinusoidal_encoding(f_prime.rows(), cfg.d_model);
  Tensor mem_k = cfg.use_positional ? add(f_prime, pe_clips) : f_prime;

  Tensor content = Tensor::zeros({nq, cfg.d_model});
  std::vector<double> rs = cfg.suppression_enabled ? rs0.s : std::vector<double>(n_groups, 0.0);
  DecodeResult res;
  res.saved.assign(nq, false);

  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    res.rs_per_layer.push_back(rs);

    // RS allocation + application; a masked-out sample bypasses suppression
    std::vector<double> factor(nq, 1.0);
    if (cfg.suppression_enabled) {
      bool any = false;
      std::vector<double> per_query = rs_allocation(rs, bank.roles);
      for (int i = 0; i < nq; ++i) {
        double s = res.saved[i] ? 0.0 : per_query[i];
        s *= sample_mask;
        factor[i] = 1.0 + s;
        if (s != 0.0) any = true;
      }
      if (any)
        content = col_broadcast_mul(content, Tensor::from({nq, 1}, factor));
    }
    res.factors_per_layer.push_back(factor);

    const DecoderLayerParams& lp = params.layers[layer];
    Tensor q = add(content, qpos);
    Tensor sa = attention(q, q, content, lp.self_attn);
    content = layer_norm(add(content, sa), lp.ln_self);
    Tensor ca = attention(add(content, qpos), mem_k, f_prime, lp.cross_attn);
    content = layer_norm(add(content, ca), lp.ln_cross);
    Tensor ff = linear(relu(linear(content, lp.ffn1)), lp.ffn2);
    content = layer_norm(add(content, ff), lp.ln_ffn);

    LayerOutput out = span_readout(content, bank, params);
    std::vector<double> conf_values(nq);
    for (int i = 0; i < nq; ++i) conf_values[i] = out.conf.at(i);
    res.layers.push_back(std::move(out));

    if (cfg.suppression_enabled && cfg.lad_interaction) {
      std::vector<double> probs = top_select(conf_values, bank.roles, n_groups, cfg.top_select);
      if (cfg.force_prob_tau) probs.assign(probs.size(), cfg.tau);
      rs = rs_update(rs, generate_rs(probs, cfg.tau, cfg.rs_mode).s);
    }
    if (cfg.suppression_enabled && cfg.topk_save_enabled) {
      std::vector<double> query_scalar(nq);
      for (int i = 0; i < nq; ++i) query_scalar[i] = rs[bank.roles[i]];
      topk_save(conf_values, query_scalar, cfg.topk_save, res.saved);
    }
  }
  return res;
}

}  // namespace latsg

#include "latsg/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latsg {

QualityParams make_quality(ParamStore& ps, int d_model, Rng& rng) {
  QualityParams p;
  p.mlp = make_mlp(ps, "lqm.quality", {d_model, d_model, 1}, rng);
  return p;
}

Tensor quality_score(const Tensor& lt_prime, const QualityParams& p) {
  return sigmoid(mlp_forward(lt_prime, p.mlp));
}

std::vector<double> build_masks(const std::vector<double>& qs, double threshold) {
  std::vector<double> masks(qs.size());
  for (std::size_t i = 0; i < qs.size(); ++i) masks[i] = qs[i] >= threshold ? 1.0 : 0.0;
  return masks;
}

Tensor length_ce(const LengthPrediction& pred, int label, ClsHeadMode mode) {
  if (label < 0 || label >= static_cast<int>(pred.probs.size()))
    throw UsageError("length_ce: label out of range");
  if (mode == ClsHeadMode::kThreeBinary) {
    Tensor ce;
    for (std::size_t g = 0; g < pred.logits.size(); ++g) {
      Tensor target = Tensor::full({1, 1}, g == static_cast<std::size_t>(label) ? 1.0 : 0.0);
      Tensor logit = pred.logits[g].dim() == 2 ? pred.logits[g] : reshape(pred.logits[g], {1, 1});
      Tensor term = bce_with_logits(logit, target);
      ce = ce.defined() ? add(ce, term) : term;
    }
    return reshape(ce, {1});
  }
  Tensor p = maximum(pred.probs[label], Tensor::full(pred.probs[label].shape(), 1e-12));
  return reshape(neg(log_(p)), {1});
}

LengthClsTerms length_cls_loss(const std::vector<Tensor>& ce_per_sample,
                               const std::vector<Tensor>& qs_per_sample,
                               const LengthClsToggles& toggles, double eps) {
  if (ce_per_sample.empty()) throw UsageError("length_cls_loss: empty batch");
  LengthClsTerms out;
  Tensor ce = stack_scalars(ce_per_sample);  // {bs,1}
  out.mean = toggles.use_mean ? mean(ce) : Tensor::scalar(0.0);
  bool need_qs = toggles.use_weight || toggles.use_median;
  if (need_qs && qs_per_sample.size() != ce_per_sample.size())
    throw UsageError("length_cls_loss: quality scores required for weight/median terms");
  Tensor qs;
  if (need_qs) qs = stack_scalars(qs_per_sample);
  if (toggles.use_weight) {
    Tensor denom = maximum(sum(qs), Tensor::scalar(eps));
    out.weight = div(sum(mul(qs, ce)), denom);
  } else {
    out.weight = Tensor::scalar(0.0);
  }
  out.median = toggles.use_median ? abs_(sub(median(qs), min_reduce(qs))) : Tensor::scalar(0.0);
  out.total = add(add(out.mean, out.weight), out.median);
  return out;
}

// ---- Hungarian matching ----

namespace {

// Shortest-augmenting-path assignment on an m x n matrix, m <= n.
// Returns the optimal total cost; if `match` is given, fills row -> column.
double assignment_cost(const std::vector<std::vector<double>>& cost, std::vector<int>* match) {
  int m = static_cast<int>(cost.size());
  int n = static_cast<int>(cost[0].size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= m; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  std::vector<int> row_to_col(m, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] != 0) {
      row_to_col[p[j] - 1] = j - 1;
      total += cost[p[j] - 1][j - 1];
    }
  }
  if (match) *match = std::move(row_to_col);
  return total;
}

}  // namespace

std::vector<int> hungarian_match(const std::vector<std::vector<double>>& cost) {
  if (cost.empty()) throw UsageError("hungarian_match: empty cost matrix");
  int m = static_cast<int>(cost.size());
  int n = static_cast<int>(cost[0].size());
  for (const auto& row : cost)
    if (static_cast<int>(row.size()) != n) throw UsageError("hungarian_match: ragged cost matrix");
  if (m > n) throw UsageError("hungarian_match: more ground truths than queries");

  double best_total = assignment_cost(cost, nullptr);
  double scale = std::max(1.0, std::fabs(best_total));
  const double tol = 1e-9 * scale;

  // Fix rows in order to the smallest column that still admits an optimal
  // completion; this yields the lexicographically smallest optimum.
  std::vector<int> result(m, -1);
  std::vector<bool> col_used(n, false);
  std::vector<int> rows_left(m), cols_left;
  for (int i = 0; i < m; ++i) rows_left[i] = i;
  for (int j = 0; j < n; ++j) cols_left.push_back(j);
  double fixed_cost = 0.0;
  for (int i = 0; i < m; ++i) {
    std::vector<int> rest_rows;
    for (int r = i + 1; r < m; ++r) rest_rows.push_back(r);
    for (int j : cols_left) {
      if (col_used[j]) continue;
      double sub = 0.0;
      if (!rest_rows.empty()) {
        std::vector<std::vector<double>> sub_cost;
        for (int r : rest_rows) {
          std::vector<double> row;
          for (int c : cols_left)
            if (!col_used[c] && c != j) row.push_back(cost[r][c]);
          sub_cost.push_back(std::move(row));
        }
        sub = assignment_cost(sub_cost, nullptr);
      }
      if (fixed_cost + cost[i][j] + sub <= best_total + tol) {
        result[i] = j;
        col_used[j] = true;
        fixed_cost += cost[i][j];
        break;
      }
    }
    if (result[i] < 0) throw NumericError("hungarian_match: failed to extend optimal assignment");
  }
  return result;
}

// ---- moment loss ----

double span_giou_value(const Moment& a, const Moment& b) {
  double inter = std::max(0.0, std::min(a.end(), b.end()) - std::max(a.start(), b.start()));
  double uni = a.length + b.length - inter;
  double hull = std::max(a.end(), b.end()) - std::min(a.start(), b.start());
  if (uni <= 0.0 || hull <= 0.0) return 0.0;
  return inter / uni - (hull - uni) / hull;
}

namespace {

// Differentiable gIoU between predicted spans {k,1} and fixed ground truths.
Tensor span_giou_tensor(const Tensor& c, const Tensor& l, const Tensor& gs, const Tensor& ge,
                        const Tensor& glen) {
  Tensor half = mul_scalar(l, 0.5);
  Tensor s = sub(c, half);
  Tensor e = add(c, half);
  Tensor inter = relu(sub(minimum(e, ge), maximum(s, gs)));
  Tensor uni = sub(add(l, glen), inter);
  Tensor hull = sub(maximum(e, ge), minimum(s, gs));
  return sub(div(inter, uni), div(sub(hull, uni), hull));
}

}  // namespace

Tensor moment_loss(const DecodeResult& decoded, const std::vector<Moment>& gts,
                   const MomentLossWeights& w) {
  int m = static_cast<int>(gts.size());
  if (m == 0) throw UsageError("moment_loss: no ground-truth moments");
  Tensor loss = Tensor::scalar(0.0);
  for (const auto& layer : decoded.layers) {
    int nq = layer.center.rows();
    if (m > nq) throw UsageError("moment_loss: more ground truths than queries");
    std::vector<std::vector<double>> cost(m, std::vector<double>(nq));
    for (int g = 0; g < m; ++g) {
      for (int q = 0; q < nq; ++q) {
        Moment pred{layer.center.at(q), layer.length.at(q), std::nullopt};
        double l1 = std::fabs(pred.center - gts[g].center) + std::fabs(pred.length - gts[g].length);
        cost[g][q] = w.l1 * l1 + w.giou * (1.0 - span_giou_value(pred, gts[g])) -
                     w.conf * layer.conf.at(q);
      }
    }
    std::vector<int> match = hungarian_match(cost);

    std::vector<double> gs(m), ge(m), gc(m), gl(m);
    for (int g = 0; g < m; ++g) {
      gs[g] = gts[g].start();
      ge[g] = gts[g].end();
      gc[g] = gts[g].center;
      gl[g] = gts[g].length;
    }
    Tensor pc = gather_rows(layer.center, match);
    Tensor pl = gather_rows(layer.length, match);
    Tensor t_gs = Tensor::from({m, 1}, gs);
    Tensor t_ge = Tensor::from({m, 1}, ge);
    Tensor t_gc = Tensor::from({m, 1}, gc);
    Tensor t_gl = Tensor::from({m, 1}, gl);

    Tensor l1 = add(abs_(sub(pc, t_gc)), abs_(sub(pl, t_gl)));
    Tensor giou = span_giou_tensor(pc, pl, t_gs, t_ge, t_gl);
    Tensor span_term =
        add(mul_scalar(sum(l1), w.l1), mul_scalar(sum(add_scalar(neg(giou), 1.0)), w.giou));

    std::vector<double> conf_target(nq, 0.0);
    for (int g = 0; g < m; ++g) conf_target[match[g]] = 1.0;
    Tensor ce = sum(bce_with_logits(layer.conf_logit, Tensor::from({nq, 1}, conf_target)));

    Tensor layer_loss = mul_scalar(add(span_term, ce), 1.0 / m);
    loss = add(loss, layer_loss);
  }
  return loss;
}

Tensor total_loss(const Tensor& l_mo, const Tensor& l_sal, const Tensor& l_alig,
                  const Tensor& l_lencl, const LossWeightsCfg& w) {
  if (w.lambda_sal < 0.0 || w.lambda_alig < 0.0 || w.lambda_lencl < 0.0)
    throw ConfigError("total_loss: balancing parameters must be non-negative");
  Tensor t = add(l_mo, mul_scalar(l_sal, w.lambda_sal));
  t = add(t, mul_scalar(l_alig, w.lambda_alig));
  return add(t, mul_scalar(l_lencl, w.lambda_lencl));
}

}  // namespace latsg

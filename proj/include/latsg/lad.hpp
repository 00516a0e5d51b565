#ifndef LATSG_LAD_HPP_
#define LATSG_LAD_HPP_

#include "latsg/qli.hpp"

namespace latsg {

struct Anchor {
  double center = 0.0;
  double length = 0.0;
};

// Lloyd's algorithm over (center, length) pairs with k-means++ seeding.
// Deterministic under the seed; output sorted by length ascending.
std::vector<Anchor> kmeans_anchors(const std::vector<Moment>& moments, int k,
                                   std::uint64_t seed, int max_iters = 100,
                                   double tol = 1e-9);

struct LadConfig {
  int d_model = 64;
  int heads = 1;
  int n_layers = 3;
  int ffn_dim = 0;  // 0 -> 4 * d_model
  int n_queries = 9;
  int top_select = 4;
  int topk_save = 3;
  double tau = 0.5;
  RsMode rs_mode = RsMode::kProse;
  bool use_positional = true;
  // toggles
  bool suppression_enabled = true;   // apply RS to content embeddings
  bool lad_interaction = true;       // per-layer Top-Select + RS Update
  bool topk_save_enabled = true;
  // test hook: every probability feeding RS generation reads as tau, so all
  // suppression scalars come out zero
  bool force_prob_tau = false;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  Linear ffn1, ffn2;
  LayerNorm ln_self, ln_cross, ln_ffn;
};

struct LadParams {
  std::vector<DecoderLayerParams> layers;
  Mlp anchor_mlp;   // 2 -> D -> D
  Mlp span_head;    // D -> D -> 2, shared across layers
  Linear conf_head; // D -> 1, shared across layers
};

LadParams make_lad(ParamStore& ps, const LadConfig& cfg, Rng& rng);

// Static query bank: anchors sorted by length, role per query, positional
// embeddings derived from the anchors. Content embeddings are zero at the
// start of every forward pass.
struct QueryBank {
  std::vector<Anchor> anchors;
  std::vector<int> roles;             // category index per query
  std::vector<int> group_of_query;    // same as roles; kept for clarity
  int n_groups = 3;
};

QueryBank make_query_bank(const std::vector<Anchor>& anchors, const LengthRule& role_rule);

struct LayerOutput {
  Tensor center;      // {N_q, 1}, clamped to valid span geometry
  Tensor length;      // {N_q, 1}
  Tensor conf;        // {N_q, 1}, foreground confidence
  Tensor conf_logit;  // {N_q, 1}, pre-sigmoid (for the CE loss)
};

struct DecodeResult {
  std::vector<LayerOutput> layers;
  std::vector<std::vector<double>> rs_per_layer;       // group scalars entering each layer
  std::vector<std::vector<double>> factors_per_layer;  // per-query (1+s_eff) applied
  std::vector<bool> saved;                             // final save flags
};

// Broadcast each group's scalar to the queries holding that role.
std::vector<double> rs_allocation(const std::vector<double>& group_scalars,
                                  const std::vector<int>& roles);

// Per length group: mean foreground confidence of the top-S most confident
// queries; S is clamped to the group size.
std::vector<double> top_select(const std::vector<double>& confidences,
                               const std::vector<int>& roles, int n_groups, int s);

// Elementwise minimum: suppression only tightens within a forward pass.
std::vector<double> rs_update(const std::vector<double>& prev, const std::vector<double>& next);

// Among still-suppressed queries, flag the K most confident (ties: lower
// index) so their suppression reads as 0 for the rest of the pass.
void topk_save(const std::vector<double>& confidences, const std::vector<double>& query_scalar,
               int k, std::vector<bool>& saved);

// Full decode: per layer, apply RS (respecting the sample's suppression mask
// and save flags), run the layer, refresh RS from the layer's confidences,
// tighten, and save top-K. Returns every layer's outputs for auxiliary
// losses.
DecodeResult decode(const Tensor& f_prime, const QueryBank& bank, const LadParams& params,
                    const LadConfig& cfg, const ResidualSuppression& rs0, double sample_mask);

}  // namespace latsg

#endif  // LATSG_LAD_HPP_

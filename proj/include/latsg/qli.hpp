#ifndef LATSG_QLI_HPP_
#define LATSG_QLI_HPP_

#include "latsg/data.hpp"
#include "latsg/nn.hpp"

namespace latsg {

// How the length prediction is turned into suppression scalars.
//  kProse   (default): s_g = min(0, P_g - tau); matched groups are untouched,
//           mismatched groups shrink. Scalars live in [-tau, 0].
//  kLiteral: s_g = tau - P_g; confident groups shrink and weak ones grow.
enum class RsMode { kProse, kLiteral };

enum class ClsHeadMode { kThreeBinary, kSoftmax3 };
enum class LtInit { kZero, kRandom };

struct QliConfig {
  int d_model = 64;
  int heads = 1;
  int n_groups = 3;
  double tau = 0.5;
  RsMode rs_mode = RsMode::kProse;
  ClsHeadMode cls_head = ClsHeadMode::kThreeBinary;
  LtInit lt_init = LtInit::kZero;
  bool use_positional = true;
};

struct QliParams {
  Tensor lt;  // {1, D}, learned input token
  AttentionParams attn;
  std::vector<Mlp> binary_heads;  // one per group, D -> D -> 1
  Mlp softmax_head;               // D -> D -> n_groups (ablation variant)
};

QliParams make_qli(ParamStore& ps, const QliConfig& cfg, Rng& rng);

// Length-token pooling: prepend LT to the clip sequence, positionally encode,
// self-attend, split the token back off. f_prime replaces the fusion
// embedding downstream.
struct Perceived {
  Tensor lt_prime;  // {1, D}
  Tensor f_prime;   // {L, D}
};
Perceived perceive_length(const Tensor& fusion, const QliParams& p, const QliConfig& cfg);

// Per-group probabilities that the sample contains a moment of that length.
// With three binary heads the values are independent sigmoids and need not
// sum to 1.
struct LengthPrediction {
  std::vector<Tensor> logits;  // kThreeBinary: one scalar per group
  std::vector<Tensor> probs;   // scalars in (0,1), ordered short -> long
  std::vector<double> values() const;
};
LengthPrediction classify_length(const Tensor& lt_prime, const QliParams& p,
                                 const QliConfig& cfg);

struct ResidualSuppression {
  std::vector<double> s;  // ordered short -> long
  RsMode mode = RsMode::kProse;
};

// probs are plain values: suppression is guidance, not a gradient path.
ResidualSuppression generate_rs(const std::vector<double>& probs, double tau, RsMode mode);

// E' = E + s*E. The scalar is treated as a constant.
Tensor apply_rs(const Tensor& content, double s);

// Bucket each anchor length under the rule; guarantees every group is
// non-empty by reassigning the boundary-nearest anchors when needed.
std::vector<int> assign_length_roles(const std::vector<double>& anchor_lengths,
                                     const LengthRule& rule, int* rebalanced_count = nullptr);

}  // namespace latsg

#endif  // LATSG_QLI_HPP_

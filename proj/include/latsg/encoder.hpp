#ifndef LATSG_ENCODER_HPP_
#define LATSG_ENCODER_HPP_

#include "latsg/data.hpp"
#include "latsg/nn.hpp"

namespace latsg {

struct FusionEmbedding {
  Tensor f;         // {L, D}
  Tensor saliency;  // {L, 1}
};

struct EncoderConfig {
  int d_video = 20;
  int d_text = 16;
  int d_model = 64;
  int cross_blocks = 2;
  int self_blocks = 2;
  int heads = 1;
  int ffn_dim = 0;  // 0 -> 4 * d_model
  bool use_positional = true;
  double align_temperature = 0.07;
  double saliency_margin = 0.2;
};

struct CrossBlock {
  AttentionParams attn;
  Linear ffn1, ffn2;
  LayerNorm ln_attn, ln_ffn;
};

struct SelfBlock {
  AttentionParams attn;
  Linear ffn1, ffn2;
  LayerNorm ln_attn, ln_ffn;
};

struct EncoderParams {
  Mlp video_proj;  // d_video -> D -> D
  Mlp text_proj;   // d_text  -> D -> D
  std::vector<CrossBlock> cross;
  std::vector<SelfBlock> selfs;
  Linear saliency_head;  // D -> 1
};

EncoderParams make_encoder(ParamStore& ps, const EncoderConfig& cfg, Rng& rng);

// Project each modality into the shared D-dimensional space.
struct Projected {
  Tensor video;  // {L, D}
  Tensor text;   // {N, D}
};
Projected project(const Tensor& video, const Tensor& text, const EncoderParams& p);

// Cross-attention blocks (clips attend to words), then self-attention blocks
// over clips; returns the fusion embedding and per-clip saliency scores.
FusionEmbedding fuse(const Projected& proj, const EncoderParams& p, const EncoderConfig& cfg);

// Contrastive alignment between the mean-pooled sentence vector and the
// clips: in-span clips are positives, softmax over all clips at the given
// temperature. Samples without positive clips contribute 0 (counted).
Tensor alignment_loss(const Tensor& proj_video, const Tensor& proj_text,
                      const std::vector<Moment>& moments, double temperature,
                      int* no_positive_counter = nullptr);

// Margin ranking loss over all (positive clip, negative clip) pairs:
// mean of max(0, margin + s_neg - s_pos). 0 when either side is empty.
Tensor saliency_loss(const Tensor& scores, const std::vector<double>& targets, double margin);

std::vector<int> clips_inside(const std::vector<Moment>& moments, int n_clips);

}  // namespace latsg

#endif  // LATSG_ENCODER_HPP_

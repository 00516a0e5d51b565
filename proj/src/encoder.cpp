#include "latsg/encoder.hpp"

#include <cmath>

namespace latsg {

namespace {

int ffn_dim(const EncoderConfig& cfg) { return cfg.ffn_dim > 0 ? cfg.ffn_dim : 4 * cfg.d_model; }

Tensor ffn_block(const Tensor& x, const Linear& l1, const Linear& l2) {
  return linear(relu(linear(x, l1)), l2);
}

}  // namespace

EncoderParams make_encoder(ParamStore& ps, const EncoderConfig& cfg, Rng& rng) {
  EncoderParams p;
  int d = cfg.d_model;
  int f = ffn_dim(cfg);
  p.video_proj = make_mlp(ps, "enc.video_proj", {cfg.d_video, d, d}, rng);
  p.text_proj = make_mlp(ps, "enc.text_proj", {cfg.d_text, d, d}, rng);
  for (int i = 0; i < cfg.cross_blocks; ++i) {
    CrossBlock b;
    std::string base = "enc.cross" + std::to_string(i);
    b.attn = make_attention(ps, base + ".attn", d, cfg.heads, rng);
    b.ffn1 = make_linear(ps, base + ".ffn1", d, f, rng);
    b.ffn2 = make_linear(ps, base + ".ffn2", f, d, rng);
    b.ln_attn = make_layer_norm(ps, base + ".ln_attn", d);
    b.ln_ffn = make_layer_norm(ps, base + ".ln_ffn", d);
    p.cross.push_back(std::move(b));
  }
  for (int i = 0; i < cfg.self_blocks; ++i) {
    SelfBlock b;
    std::string base = "enc.self" + std::to_string(i);
    b.attn = make_attention(ps, base + ".attn", d, cfg.heads, rng);
    b.ffn1 = make_linear(ps, base + ".ffn1", d, f, rng);
    b.ffn2 = make_linear(ps, base + ".ffn2", f, d, rng);
    b.ln_attn = make_layer_norm(ps, base + ".ln_attn", d);
    b.ln_ffn = make_layer_norm(ps, base + ".ln_ffn", d);
    p.selfs.push_back(std::move(b));
  }
  p.saliency_head = make_linear(ps, "enc.saliency", d, 1, rng);
  return p;
}

Projected project(const Tensor& video, const Tensor& text, const EncoderParams& p) {
  Projected out;
  out.video = mlp_forward(video, p.video_proj);
  out.text = mlp_forward(text, p.text_proj);
  return out;
}

FusionEmbedding fuse(const Projected& proj, const EncoderParams& p, const EncoderConfig& cfg) {
  int L = proj.video.rows();
  int N = proj.text.rows();
  Tensor pe_clips, pe_words;
  if (cfg.use_positional) {
    pe_clips = sinusoidal_encoding(L, cfg.d_model);
    pe_words = sinusoidal_encoding(N, cfg.d_model);
  }
  Tensor x = proj.video;
  Tensor text_kv = cfg.use_positional ? add(proj.text, pe_words) : proj.text;
  for (const auto& b : p.cross) {
    Tensor q = cfg.use_positional ? add(x, pe_clips) : x;
    Tensor ctx = attention(q, text_kv, proj.text, b.attn);
    x = layer_norm(add(x, ctx), b.ln_attn);
    x = layer_norm(add(x, ffn_block(x, b.ffn1, b.ffn2)), b.ln_ffn);
  }
  for (const auto& b : p.selfs) {
    Tensor ctx = self_attention(x, b.attn, cfg.use_positional ? &pe_clips : nullptr);
    x = layer_norm(add(x, ctx), b.ln_attn);
    x = layer_norm(add(x, ffn_block(x, b.ffn1, b.ffn2)), b.ln_ffn);
  }
  FusionEmbedding out;
  out.f = x;
  out.saliency = linear(x, p.saliency_head);
  return out;
}

std::vector<int> clips_inside(const std::vector<Moment>& moments, int n_clips) {
  std::vector<int> idx;
  for (int l = 0; l < n_clips; ++l) {
    double t = (l + 0.5) / n_clips;
    for (const auto& m : moments) {
      if (t >= m.start() && t <= m.end()) {
        idx.push_back(l);
        break;
      }
    }
  }
  return idx;
}

Tensor alignment_loss(const Tensor& proj_video, const Tensor& proj_text,
                      const std::vector<Moment>& moments, double temperature,
                      int* no_positive_counter) {
  int L = proj_video.rows();
  std::vector<int> pos = clips_inside(moments, L);
  if (pos.empty()) {
    if (no_positive_counter) ++*no_positive_counter;
    return Tensor::scalar(0.0);
  }
  auto l2_normalize = [](const Tensor& x) {
    Tensor norm = sqrt_(add_scalar(row_sum(mul(x, x)), 1e-12));
    return col_broadcast_mul(x, reciprocal(norm));
  };
  int n_words = proj_text.rows();
  Tensor pooled = mul_scalar(matmul(Tensor::full({1, n_words}, 1.0), proj_text),
                             1.0 / static_cast<double>(n_words));
  Tensor sentence = l2_normalize(pooled);
  Tensor clips = l2_normalize(proj_video);
  Tensor sims = mul_scalar(matmul(clips, transpose(sentence)), 1.0 / temperature);  // {L,1}
  Tensor probs = softmax(reshape(sims, {1, L}));
  Tensor pos_mask = Tensor::zeros({1, L});
  for (int i : pos) pos_mask.values()[i] = 1.0;
  Tensor pos_prob = sum(mul(probs, pos_mask));
  return neg(log_(maximum(pos_prob, Tensor::scalar(1e-12))));
}

Tensor saliency_loss(const Tensor& scores, const std::vector<double>& targets, double margin) {
  int L = scores.rows();
  if (static_cast<int>(targets.size()) != L)
    throw ShapeError("saliency_loss: target count does not match clip count");
  std::vector<int> pos, negs;
  for (int i = 0; i < L; ++i) (targets[i] >= 0.5 ? pos : negs).push_back(i);
  if (pos.empty() || negs.empty()) return Tensor::scalar(0.0);
  Tensor sp = gather_rows(scores, pos);    // {P,1}
  Tensor sn = gather_rows(scores, negs);   // {Q,1}
  Tensor ones_row = Tensor::full({1, static_cast<int>(negs.size())}, 1.0);
  Tensor ones_col = Tensor::full({static_cast<int>(pos.size()), 1}, 1.0);
  Tensor p_mat = matmul(sp, ones_row);              // {P,Q}
  Tensor n_mat = matmul(ones_col, transpose(sn));   // {P,Q}
  return mean(relu(add_scalar(sub(n_mat, p_mat), margin)));
}

}  // namespace latsg

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latsg/encoder.hpp"
#include "latsg/optim.hpp"
#include "testsupport.hpp"

using namespace latsg;
using namespace latsg::testing;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.d_video = 5;
  cfg.d_text = 4;
  cfg.d_model = 8;
  cfg.cross_blocks = 1;
  cfg.self_blocks = 1;
  cfg.ffn_dim = 16;
  return cfg;
}

Moment mk_moment(double c, double l) {
  Moment m;
  m.center = c;
  m.length = l;
  return m;
}

}  // namespace

TEST_CASE("projection shapes and zero-weight bias rows") {
  Rng rng = make_rng(2);
  EncoderConfig cfg = tiny_config();
  ParamStore ps;
  EncoderParams enc = make_encoder(ps, cfg, rng);
  Tensor video = random_tensor({4, 5}, rng);
  Tensor text = random_tensor({3, 4}, rng);
  Projected proj = project(video, text, enc);
  CHECK(proj.video.rows() == 4);
  CHECK(proj.video.cols() == 8);
  CHECK(proj.text.rows() == 3);
  CHECK(proj.text.cols() == 8);

  for (auto& l : enc.video_proj.layers) std::fill(l.w.values().begin(), l.w.values().end(), 0.0);
  enc.video_proj.layers[1].b.values()[3] = 0.75;
  Projected zeroed = project(video, text, enc);
  for (int r = 0; r < 4; ++r) {
    CHECK(zeroed.video.at(r, 3) == 0.75);
    CHECK(zeroed.video.at(r, 0) == 0.0);
  }
}

TEST_CASE("projection matches a plain matrix-multiply reference") {
  Rng rng = make_rng(9);
  EncoderConfig cfg = tiny_config();
  ParamStore ps;
  EncoderParams enc = make_encoder(ps, cfg, rng);
  Tensor video = random_tensor({3, 5}, rng);
  Projected proj = project(video, Tensor::zeros({1, 4}), enc);
  ref::Mat x = ref::from_tensor(video);
  ref::Mat h = ref::relu(ref::linear(x, enc.video_proj.layers[0].w, enc.video_proj.layers[0].b));
  ref::Mat y = ref::linear(h, enc.video_proj.layers[1].w, enc.video_proj.layers[1].b);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(proj.video.at(i, j) == doctest::Approx(y[i][j]).epsilon(1e-12));
}

TEST_CASE("fuse output shape and constant-text cross attention") {
  Rng rng = make_rng(4);
  EncoderConfig cfg = tiny_config();
  ParamStore ps;
  EncoderParams enc = make_encoder(ps, cfg, rng);
  for (int L : {2, 6}) {
    Projected proj;
    proj.video = random_tensor({L, 8}, rng);
    proj.text = random_tensor({3, 8}, rng);
    FusionEmbedding f = fuse(proj, enc, cfg);
    CHECK(f.f.rows() == L);
    CHECK(f.f.cols() == 8);
    CHECK(f.saliency.rows() == L);
    CHECK(f.saliency.cols() == 1);
  }
  // identical text tokens: the cross-attention context is the same for any
  // attention distribution, so it must equal single-token attention
  EncoderConfig plain = cfg;
  plain.use_positional = false;
  std::vector<double> word = {0.2, -0.4, 0.6, 0.1, 0.0, 0.3, -0.2, 0.5};
  Projected proj_multi;
  proj_multi.video = random_tensor({4, 8}, rng);
  proj_multi.text = Tensor::from_rows({word, word, word});
  Projected proj_single;
  proj_single.video = proj_multi.video;
  proj_single.text = Tensor::from_rows({word});
  FusionEmbedding a = fuse(proj_multi, enc, plain);
  FusionEmbedding b = fuse(proj_single, enc, plain);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 8; ++c)
      CHECK(a.f.at(r, c) == doctest::Approx(b.f.at(r, c)).epsilon(1e-12));
}

TEST_CASE("fuse matches a layer-by-layer reference at tiny dims") {
  Rng rng = make_rng(12);
  EncoderConfig cfg;
  cfg.d_video = 2;
  cfg.d_text = 2;
  cfg.d_model = 4;
  cfg.cross_blocks = 1;
  cfg.self_blocks = 1;
  cfg.ffn_dim = 6;
  cfg.use_positional = false;
  ParamStore ps;
  EncoderParams enc = make_encoder(ps, cfg, rng);
  Projected proj;
  proj.video = random_tensor({2, 4}, rng, 0.7);
  proj.text = random_tensor({2, 4}, rng, 0.7);
  FusionEmbedding out = fuse(proj, enc, cfg);

  ref::Mat x = ref::from_tensor(proj.video);
  ref::Mat t = ref::from_tensor(proj.text);
  const CrossBlock& cb = enc.cross[0];
  ref::Mat ctx = ref::attention(x, t, t, cb.attn);
  x = ref::layer_norm(ref::add(x, ctx), cb.ln_attn);
  ref::Mat ff = ref::linear(ref::relu(ref::linear(x, cb.ffn1.w, cb.ffn1.b)), cb.ffn2.w, cb.ffn2.b);
  x = ref::layer_norm(ref::add(x, ff), cb.ln_ffn);
  const SelfBlock& sb = enc.selfs[0];
  ctx = ref::attention(x, x, x, sb.attn);
  x = ref::layer_norm(ref::add(x, ctx), sb.ln_attn);
  ff = ref::linear(ref::relu(ref::linear(x, sb.ffn1.w, sb.ffn1.b)), sb.ffn2.w, sb.ffn2.b);
  x = ref::layer_norm(ref::add(x, ff), sb.ln_ffn);

  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(out.f.at(i, j) == doctest::Approx(x[i][j]).epsilon(1e-11));
}

TEST_CASE("fuse is permutation-equivariant over clips without positional encodings") {
  Rng rng = make_rng(5);
  EncoderConfig cfg = tiny_config();
  cfg.use_positional = false;
  ParamStore ps;
  EncoderParams enc = make_encoder(ps, cfg, rng);
  Projected proj;
  proj.video = random_tensor({5, 8}, rng);
  proj.text = random_tensor({3, 8}, rng);
  FusionEmbedding base = fuse(proj, enc, cfg);

  std::vector<int> perm = {3, 0, 4, 1, 2};
  Projected shuffled;
  shuffled.video = gather_rows(proj.video, perm);
  shuffled.text = proj.text;
  FusionEmbedding permuted = fuse(shuffled, enc, cfg);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 8; ++c)
      CHECK(permuted.f.at(r, c) == doctest::Approx(base.f.at(perm[r], c)).epsilon(1e-12));
}

TEST_CASE("alignment loss hand values") {
  int skips = 0;
  // uniform similarities: identical clip rows -> loss = ln(L / #positives)
  std::vector<double> row = {0.5, -0.25, 0.1, 0.7};
  Tensor clips = Tensor::from_rows({row, row, row, row, row, row});
  Tensor words = Tensor::from_rows({{0.3, 0.1, -0.2, 0.4}});
  std::vector<Moment> moments = {mk_moment(0.25, 0.5)};  // clips 0..2 of 6 inside
  Tensor loss = alignment_loss(clips, words, moments, 0.07, &skips);
  CHECK(loss.item() == doctest::Approx(std::log(6.0 / 3.0)).epsilon(1e-12));
  CHECK(skips == 0);

  // single positive clip -> loss 0
  Tensor one_clip = Tensor::from_rows({row});
  Tensor loss1 = alignment_loss(one_clip, words, {mk_moment(0.5, 0.8)}, 0.07, &skips);
  CHECK(loss1.item() == 0.0);

  // saturated separation: positive clip aligned with the sentence, negatives
  // opposed -> loss approaches 0
  Tensor sep = Tensor::from_rows({{1.0, 1.0, 1.0, 1.0},
                                  {-1.0, -1.0, -1.0, -1.0},
                                  {-1.0, -1.0, -1.0, -1.0},
                                  {-1.0, -1.0, -1.0, -1.0}});
  Tensor sent = Tensor::from_rows({{1.0, 1.0, 1.0, 1.0}});
  Tensor loss_sep = alignment_loss(sep, sent, {mk_moment(0.125, 0.25)}, 0.05, &skips);
  CHECK(loss_sep.item() >= 0.0);
  CHECK(loss_sep.item() < 1e-6);

  // no positive clips: zero loss, counter bumped
  Tensor tiny_loss = alignment_loss(clips, words, {mk_moment(0.0005, 0.001)}, 0.07, &skips);
  CHECK(tiny_loss.item() == 0.0);
  CHECK(skips == 1);
}

TEST_CASE("saliency loss hand values") {
  std::vector<double> targets = {1.0, 1.0, 0.0, 0.0};
  // margin satisfied for all pairs -> 0
  Tensor good = Tensor::from({4, 1}, {1.0, 0.9, 0.1, 0.2});
  CHECK(saliency_loss(good, targets, 0.2).item() == 0.0);
  // equal scores -> every pair contributes exactly the margin
  Tensor flat = Tensor::from({4, 1}, {0.4, 0.4, 0.4, 0.4});
  CHECK(saliency_loss(flat, targets, 0.2).item() == doctest::Approx(0.2).epsilon(1e-12));
  // mixed pairs: hand hinge sum over (pos, neg)
  Tensor mixed = Tensor::from({4, 1}, {0.5, 0.1, 0.45, -0.2});
  double hand = 0.0;
  double margin = 0.2;
  for (double sp : {0.5, 0.1})
    for (double sn : {0.45, -0.2}) hand += std::max(0.0, margin + sn - sp);
  hand /= 4.0;
  CHECK(saliency_loss(mixed, targets, margin).item() == doctest::Approx(hand).epsilon(1e-12));
  // missing positives or negatives -> 0
  CHECK(saliency_loss(mixed, {0.0, 0.0, 0.0, 0.0}, margin).item() == 0.0);
  CHECK(saliency_loss(mixed, {1.0, 1.0, 1.0, 1.0}, margin).item() == 0.0);
}

TEST_CASE("encoder losses and fusion pass the finite-difference suite") {
  Rng rng = make_rng(33);
  EncoderConfig cfg = tiny_config();
  ParamStore ps;
  EncoderParams enc = make_encoder(ps, cfg, rng);
  Tensor video = random_tensor({4, 5}, rng);
  Tensor text = random_tensor({3, 4}, rng);
  std::vector<Moment> moments = {mk_moment(0.4, 0.5)};
  std::vector<double> sal_targets = {0.0, 1.0, 1.0, 0.0};

  std::vector<Tensor> leaves;
  for (auto& [name, t] : ps.items()) leaves.push_back(t);

  auto full = [&] {
    Projected proj = project(video, text, enc);
    Tensor align = alignment_loss(proj.video, proj.text, moments, 0.07);
    FusionEmbedding f = fuse(proj, enc, cfg);
    Tensor sal = saliency_loss(f.saliency, sal_targets, 0.2);
    return add(add(mean(f.f), align), sal);
  };
  auto res = gradcheck(full, leaves, rng, 30);
  INFO("worst rel err ", res.worst_rel);
  CHECK(res.ok);
}

TEST_CASE("alignment loss decreases monotonically over the first 20 steps") {
  Rng rng = make_rng(55);
  EncoderConfig cfg = tiny_config();
  ParamStore ps;
  EncoderParams enc = make_encoder(ps, cfg, rng);
  // strongly aligned synthetic pair: in-span clips share a direction with
  // the sentence after projection has something to latch onto
  SyntheticConfig sc;
  sc.n_samples = 8;
  sc.d_v = 5;
  sc.d_t = 4;
  sc.l_min = 6;
  sc.l_max = 6;
  sc.signal = 2.0;
  sc.noise = 0.05;
  sc.seed = 3;
  Dataset ds = generate_synthetic(sc);

  AdamW opt(ps, {1e-3, 0.0, 0.9, 0.999, 1e-8});
  double prev = 1e300;
  for (int step = 0; step < 20; ++step) {
    Tape tape;
    double value = 0.0;
    {
      Tape::Scope scope(tape);
      Tensor loss;
      for (const auto& s : ds) {
        Projected proj = project(s.video, s.text, enc);
        Tensor a = alignment_loss(proj.video, proj.text, s.moments, 0.07);
        loss = loss.defined() ? add(loss, a) : a;
      }
      loss = mul_scalar(loss, 1.0 / ds.size());
      value = loss.item();
      tape.backward(loss);
    }
    opt.step();
    opt.zero_grad();
    CHECK(value < prev);
    prev = value;
  }
}

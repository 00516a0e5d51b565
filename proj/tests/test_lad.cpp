#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latsg/lad.hpp"
#include "testsupport.hpp"

using namespace latsg;
using namespace latsg::testing;

namespace {

Moment mk(double c, double l) {
  Moment m;
  m.center = c;
  m.length = l;
  return m;
}

LadConfig tiny_config() {
  LadConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.ffn_dim = 16;
  cfg.n_queries = 6;
  cfg.top_select = 2;
  cfg.topk_save = 1;
  return cfg;
}

struct Fixture {
  ParamStore ps;
  LadParams params;
  QueryBank bank;
  LadConfig cfg;
  Tensor fusion;

  explicit Fixture(std::uint64_t seed, LadConfig c = tiny_config()) : cfg(c) {
    Rng rng = make_rng(seed);
    params = make_lad(ps, cfg, rng);
    std::vector<Anchor> anchors = {{0.2, 0.06}, {0.5, 0.1},  {0.4, 0.2},
                                   {0.6, 0.3},  {0.5, 0.55}, {0.45, 0.7}};
    anchors.resize(cfg.n_queries);
    bank = make_query_bank(anchors, synthetic_rule());
    fusion = random_tensor({5, cfg.d_model}, rng);
  }
};

}  // namespace

TEST_CASE("kmeans: k equals point count returns the points") {
  std::vector<Moment> moments = {mk(0.2, 0.1), mk(0.5, 0.3), mk(0.7, 0.5)};
  std::vector<Anchor> anchors = kmeans_anchors(moments, 3, 1);
  REQUIRE(anchors.size() == 3);
  CHECK(anchors[0].length == doctest::Approx(0.1).epsilon(1e-9));
  CHECK(anchors[1].length == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(anchors[2].length == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(anchors[0].center == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("kmeans: identical points collapse, separated clusters find their means") {
  std::vector<Moment> same(10, mk(0.4, 0.25));
  for (const auto& a : kmeans_anchors(same, 3, 5)) {
    CHECK(a.center == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(a.length == doctest::Approx(0.25).epsilon(1e-12));
  }

  std::vector<Moment> two;
  Rng rng = make_rng(9);
  std::uniform_real_distribution<double> jitter(-0.01, 0.01);
  double c1 = 0.0, l1 = 0.0, c2 = 0.0, l2 = 0.0;
  for (int i = 0; i < 20; ++i) {
    Moment a = mk(0.2 + jitter(rng), 0.1 + jitter(rng));
    Moment b = mk(0.7 + jitter(rng), 0.6 + jitter(rng));
    two.push_back(a);
    two.push_back(b);
    c1 += a.center;
    l1 += a.length;
    c2 += b.center;
    l2 += b.length;
  }
  std::vector<Anchor> anchors = kmeans_anchors(two, 2, 3);
  REQUIRE(anchors.size() == 2);
  CHECK(anchors[0].center == doctest::Approx(c1 / 20).epsilon(1e-9));
  CHECK(anchors[0].length == doctest::Approx(l1 / 20).epsilon(1e-9));
  CHECK(anchors[1].center == doctest::Approx(c2 / 20).epsilon(1e-9));
  CHECK(anchors[1].length == doctest::Approx(l2 / 20).epsilon(1e-9));
}

TEST_CASE("kmeans is deterministic and sorted by length, errors when too few points") {
  Rng rng = make_rng(11);
  std::uniform_real_distribution<double> u(0.05, 0.9);
  std::vector<Moment> moments;
  for (int i = 0; i < 50; ++i) moments.push_back(clamp_moment(u(rng), u(rng) * 0.6 + 0.05));
  std::vector<Anchor> a = kmeans_anchors(moments, 7, 123);
  std::vector<Anchor> b = kmeans_anchors(moments, 7, 123);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].center == b[i].center);
    CHECK(a[i].length == b[i].length);
    if (i > 0) CHECK(a[i].length >= a[i - 1].length);
  }
  CHECK_THROWS_AS(kmeans_anchors(std::vector<Moment>(3, mk(0.5, 0.2)), 5, 1), UsageError);
}

TEST_CASE("rs_allocation broadcasts group scalars by role") {
  // queries sorted by length: roles (S,S,M,M,L,L); scalars short->long
  std::vector<int> roles = {0, 0, 1, 1, 2, 2};
  std::vector<double> out = rs_allocation({-0.4, -0.2, 0.0}, roles);
  CHECK(out == std::vector<double>{-0.4, -0.4, -0.2, -0.2, 0.0, 0.0});
  std::vector<double> zeros = rs_allocation({0.0, 0.0, 0.0}, roles);
  for (double s : zeros) CHECK(s == 0.0);
  // unequal group sizes keep multiplicity
  std::vector<double> uneven = rs_allocation({-0.1, -0.2, -0.3}, {0, 0, 0, 1, 1, 2});
  CHECK(uneven == std::vector<double>{-0.1, -0.1, -0.1, -0.2, -0.2, -0.3});
}

TEST_CASE("top_select pooling") {
  std::vector<int> roles = {0, 0, 0, 1, 1, 1};
  // equal confidences -> the group mean equals that value
  std::vector<double> flat = top_select({0.4, 0.4, 0.4, 0.4, 0.4, 0.4}, roles, 2, 2);
  CHECK(flat[0] == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(flat[1] == doctest::Approx(0.4).epsilon(1e-15));
  // S=1 -> group max
  std::vector<double> mx = top_select({0.2, 0.9, 0.5, 0.1, 0.3, 0.8}, roles, 2, 1);
  CHECK(mx[0] == 0.9);
  CHECK(mx[1] == 0.8);
  // (0.9, 0.5, 0.1) with S=2 -> 0.7
  std::vector<double> top2 = top_select({0.9, 0.5, 0.1, 0.9, 0.5, 0.1}, roles, 2, 2);
  CHECK(top2[0] == doctest::Approx(0.7).epsilon(1e-15));
  // S above the group size clamps
  std::vector<double> clamped = top_select({0.9, 0.5, 0.1, 0.9, 0.5, 0.1}, roles, 2, 5);
  CHECK(clamped[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("rs_update is an elementwise minimum") {
  std::vector<double> prev = {0.0, -0.2, -0.4};
  std::vector<double> next = {-0.1, 0.0, -0.5};
  std::vector<double> out = rs_update(prev, next);
  CHECK(out == std::vector<double>{-0.1, -0.2, -0.5});
  CHECK(rs_update(prev, prev) == prev);
  CHECK(rs_update(prev, rs_update(prev, next)) == rs_update(prev, next));
}

TEST_CASE("topk_save flags the most confident suppressed queries") {
  std::vector<bool> saved(4, false);
  topk_save({0.8, 0.3, 0.9, 0.1}, {-0.2, -0.2, 0.0, -0.2}, 0, saved);
  for (bool s : saved) CHECK(!s);
  topk_save({0.8, 0.3, 0.9, 0.1}, {-0.2, -0.2, 0.0, -0.2}, 1, saved);
  CHECK(saved == std::vector<bool>{true, false, false, false});
  // K covering every suppressed query clears all suppression
  std::vector<bool> all(4, false);
  topk_save({0.8, 0.3, 0.9, 0.1}, {-0.2, -0.2, 0.0, -0.2}, 10, all);
  CHECK(all == std::vector<bool>{true, true, false, true});
}

TEST_CASE("decode with zero span head predicts the anchors") {
  Fixture fx(21);
  for (auto& l : fx.params.span_head.layers) {
    std::fill(l.w.values().begin(), l.w.values().end(), 0.0);
    std::fill(l.b.values().begin(), l.b.values().end(), 0.0);
  }
  ResidualSuppression rs;
  rs.s = {0.0, 0.0, 0.0};
  DecodeResult res = decode(fx.fusion, fx.bank, fx.params, fx.cfg, rs, 1.0);
  const LayerOutput& last = res.layers.back();
  for (int q = 0; q < fx.cfg.n_queries; ++q) {
    CHECK(last.center.at(q) == doctest::Approx(fx.bank.anchors[q].center).epsilon(1e-9));
    CHECK(last.length.at(q) == doctest::Approx(fx.bank.anchors[q].length).epsilon(1e-9));
  }
}

TEST_CASE("decode: RS tightens monotonically and saved queries are exempt") {
  LadConfig cfg = tiny_config();
  cfg.n_layers = 3;
  Fixture fx(22, cfg);
  ResidualSuppression rs = generate_rs({0.1, 0.45, 0.9}, 0.5, RsMode::kProse);
  DecodeResult res = decode(fx.fusion, fx.bank, fx.params, fx.cfg, rs, 1.0);
  REQUIRE(res.rs_per_layer.size() == 3);
  for (std::size_t l = 1; l < res.rs_per_layer.size(); ++l)
    for (int g = 0; g < 3; ++g)
      CHECK(res.rs_per_layer[l][g] <= res.rs_per_layer[l - 1][g]);
  // save dominance: once saved, the applied factor is exactly 1
  REQUIRE(res.factors_per_layer.size() == 3);
  for (int q = 0; q < fx.cfg.n_queries; ++q) {
    if (!res.saved[q]) continue;
    bool saw_saved_layer = false;
    for (std::size_t l = 0; l < res.factors_per_layer.size(); ++l) {
      if (saw_saved_layer) CHECK(res.factors_per_layer[l][q] == 1.0);
      // a factor of exactly 1 while the group scalar is negative means the
      // save flag was in effect at that layer
      if (res.factors_per_layer[l][q] == 1.0 && res.rs_per_layer[l][fx.bank.roles[q]] < 0.0)
        saw_saved_layer = true;
    }
  }
}

TEST_CASE("decode: masked sample bypasses suppression entirely") {
  Fixture fx(23);
  ResidualSuppression rs = generate_rs({0.05, 0.1, 0.95}, 0.5, RsMode::kProse);
  DecodeResult masked = decode(fx.fusion, fx.bank, fx.params, fx.cfg, rs, 0.0);
  LadConfig off = fx.cfg;
  off.suppression_enabled = false;
  DecodeResult plain = decode(fx.fusion, fx.bank, fx.params, off, rs, 1.0);
  for (std::size_t l = 0; l < masked.layers.size(); ++l)
    for (int q = 0; q < fx.cfg.n_queries; ++q) {
      CHECK(masked.layers[l].center.at(q) == plain.layers[l].center.at(q));
      CHECK(masked.layers[l].length.at(q) == plain.layers[l].length.at(q));
      CHECK(masked.layers[l].conf.at(q) == plain.layers[l].conf.at(q));
    }
}

TEST_CASE("decode output spans are always valid moments") {
  Rng rng = make_rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    Fixture fx(100 + trial);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ResidualSuppression rs = generate_rs({u(rng), u(rng), u(rng)}, 0.5, RsMode::kProse);
    DecodeResult res = decode(fx.fusion, fx.bank, fx.params, fx.cfg, rs, 1.0);
    for (const auto& layer : res.layers)
      for (int q = 0; q < fx.cfg.n_queries; ++q) {
        Moment m;
        m.center = layer.center.at(q);
        m.length = layer.length.at(q);
        CHECK(moment_valid(m));
        CHECK(layer.conf.at(q) >= 0.0);
        CHECK(layer.conf.at(q) <= 1.0);
      }
  }
}

TEST_CASE("decode matches a reference trace for one plain layer") {
  LadConfig cfg;
  cfg.d_model = 4;
  cfg.n_layers = 1;
  cfg.ffn_dim = 6;
  cfg.n_queries = 3;
  cfg.top_select = 1;
  cfg.topk_save = 0;
  cfg.use_positional = false;
  Fixture fx(41, cfg);
  ResidualSuppression rs;
  rs.s = {0.0, 0.0, 0.0};
  DecodeResult res = decode(fx.fusion, fx.bank, fx.params, cfg, rs, 1.0);

  // reference: zero-initialized content, q=k=pos for self attention
  std::vector<std::pair<double, double>> spans;
  std::vector<double> flat;
  for (const auto& a : fx.bank.anchors) {
    spans.emplace_back(a.center, a.length);
    flat.push_back(a.center);
    flat.push_back(a.length);
  }
  Tensor anchor_mat = Tensor::from({3, 2}, flat);
  ref::Mat learned =
      ref::linear(ref::relu(ref::linear(ref::from_tensor(anchor_mat),
                                        fx.params.anchor_mlp.layers[0].w,
                                        fx.params.anchor_mlp.layers[0].b)),
                  fx.params.anchor_mlp.layers[1].w, fx.params.anchor_mlp.layers[1].b);
  ref::Mat sinus = ref::from_tensor(span_sinusoidal_embedding(spans, 4));
  ref::Mat qpos = ref::add(learned, sinus);

  ref::Mat content(3, std::vector<double>(4, 0.0));
  const DecoderLayerParams& lp = fx.params.layers[0];
  ref::Mat q = ref::add(content, qpos);
  ref::Mat sa = ref::attention(q, q, content, lp.self_attn);
  content = ref::layer_norm(ref::add(content, sa), lp.ln_self);
  ref::Mat ca = ref::attention(ref::add(content, qpos), ref::from_tensor(fx.fusion),
                               ref::from_tensor(fx.fusion), lp.cross_attn);
  content = ref::layer_norm(ref::add(content, ca), lp.ln_cross);
  ref::Mat ff = ref::linear(ref::relu(ref::linear(content, lp.ffn1.w, lp.ffn1.b)), lp.ffn2.w,
                            lp.ffn2.b);
  content = ref::layer_norm(ref::add(content, ff), lp.ln_ffn);

  ref::Mat delta = ref::linear(ref::relu(ref::linear(content, fx.params.span_head.layers[0].w,
                                                     fx.params.span_head.layers[0].b)),
                               fx.params.span_head.layers[1].w, fx.params.span_head.layers[1].b);
  auto sigmoid_ref = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  for (int qi = 0; qi < 3; ++qi) {
    double c_raw = sigmoid_ref(delta[qi][0] + inverse_sigmoid(fx.bank.anchors[qi].center));
    double len = sigmoid_ref(delta[qi][1] + inverse_sigmoid(fx.bank.anchors[qi].length));
    double c = std::max(len / 2.0, std::min(c_raw, 1.0 - len / 2.0));
    CHECK(res.layers[0].length.at(qi) == doctest::Approx(len).epsilon(1e-11));
    CHECK(res.layers[0].center.at(qi) == doctest::Approx(c).epsilon(1e-11));
  }
}

TEST_CASE("decode is differentiable end to end") {
  LadConfig cfg = tiny_config();
  cfg.n_layers = 2;
  cfg.d_model = 4;
  cfg.ffn_dim = 8;
  cfg.n_queries = 3;
  // freeze the RS refresh: suppression scalars are non-differentiable
  // guidance, so the finite-difference check runs at fixed scalars
  cfg.lad_interaction = false;
  cfg.topk_save_enabled = false;
  Fixture fx(51, cfg);
  Tensor fusion = fx.fusion;
  fusion.set_requires_grad(true);
  std::vector<Tensor> leaves = {fusion};
  for (auto& [name, t] : fx.ps.items()) leaves.push_back(t);
  Rng rng = make_rng(61);
  ResidualSuppression rs = generate_rs({0.2, 0.6, 0.8}, 0.5, RsMode::kProse);
  auto fn = [&] {
    DecodeResult res = decode(fusion, fx.bank, fx.params, fx.cfg, rs, 1.0);
    Tensor loss;
    for (const auto& layer : res.layers) {
      Tensor term = add(add(sum(layer.center), sum(layer.length)), sum(layer.conf));
      loss = loss.defined() ? add(loss, term) : term;
    }
    return loss;
  };
  auto res = gradcheck(fn, leaves, rng, 25);
  INFO("worst rel err ", res.worst_rel);
  CHECK(res.ok);
}

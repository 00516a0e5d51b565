#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "latsg/optim.hpp"
#include "testsupport.hpp"

using namespace latsg;
using latsg::testing::gradcheck;
using latsg::testing::random_tensor;

TEST_CASE("softmax basics") {
  Tensor z = softmax(Tensor::from({3}, {0.0, 0.0, 0.0}));
  for (int i = 0; i < 3; ++i) CHECK(z.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Tensor t = softmax(Tensor::from({2}, {0.0, std::log(2.0)}));
  CHECK(t.at(0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(t.at(1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax shift invariance and normalization") {
  Rng rng = make_rng(7);
  std::uniform_real_distribution<double> shift(-30.0, 30.0);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({8}, rng, 5.0);
    double c = shift(rng);
    Tensor a = softmax(x);
    Tensor b = softmax(add_scalar(x, c));
    double s = 0.0;
    for (int i = 0; i < 8; ++i) {
      CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));
      CHECK(a.at(i) > 0.0);
      s += a.at(i);
    }
    CHECK(std::fabs(s - 1.0) <= 1e-12);
  }
}

TEST_CASE("softmax rejects NaN input") {
  Tensor x = Tensor::from({2}, {0.0, 0.0});
  x.values()[0] = std::nan("");
  CHECK_THROWS_AS(softmax(x), NumericError);
}

TEST_CASE("self_attention single token is value-then-output projection") {
  Rng rng = make_rng(3);
  ParamStore ps;
  AttentionParams attn = make_attention(ps, "a", 6, 1, rng);
  Tensor tok = random_tensor({1, 6}, rng);
  Tensor out = self_attention(tok, attn);
  Tensor expected = linear(linear(tok, attn.v), attn.o);
  for (int j = 0; j < 6; ++j)
    CHECK(out.at(0, j) == doctest::Approx(expected.at(0, j)).epsilon(1e-12));
}

TEST_CASE("self_attention identical tokens give identical rows") {
  Rng rng = make_rng(4);
  ParamStore ps;
  AttentionParams attn = make_attention(ps, "a", 4, 1, rng);
  std::vector<double> row = {0.3, -1.2, 0.7, 0.1};
  Tensor toks = Tensor::from_rows({row, row, row});
  Tensor out = self_attention(toks, attn);
  for (int r = 1; r < 3; ++r)
    for (int c = 0; c < 4; ++c)
      CHECK(out.at(r, c) == doctest::Approx(out.at(0, c)).epsilon(1e-12));
}

TEST_CASE("self_attention matches a hand computation at T=2") {
  // tiny dims so the reference loops stay readable
  const int d = 2;
  ParamStore ps;
  Rng rng = make_rng(1);
  AttentionParams attn = make_attention(ps, "a", d, 1, rng);
  auto set = [](Tensor& t, std::vector<double> v) { t.values() = std::move(v); };
  set(attn.q.w, {0.2, -0.1, 0.05, 0.3});
  set(attn.k.w, {0.1, 0.4, -0.2, 0.15});
  set(attn.v.w, {0.5, 0.0, -0.3, 0.25});
  set(attn.o.w, {1.0, 0.2, -0.4, 0.6});
  set(attn.q.b, {0.01, -0.02});
  set(attn.k.b, {0.0, 0.03});
  set(attn.v.b, {0.1, 0.0});
  set(attn.o.b, {0.0, 0.0});
  double x[2][2] = {{0.7, -0.3}, {-0.5, 0.9}};

  // reference: q/k/v projections, scores, softmax, weighted sum, out proj
  double q[2][2], k[2][2], v[2][2];
  auto proj = [&](const Tensor& w, const Tensor& b, double out[2][2]) {
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        out[i][j] = x[i][0] * w.at(0, j) + x[i][1] * w.at(1, j) + b.at(j);
  };
  proj(attn.q.w, attn.q.b, q);
  proj(attn.k.w, attn.k.b, k);
  proj(attn.v.w, attn.v.b, v);
  double expect[2][2];
  for (int i = 0; i < 2; ++i) {
    double s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) / std::sqrt(2.0);
    double s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) / std::sqrt(2.0);
    double m = std::max(s0, s1);
    double w0 = std::exp(s0 - m), w1 = std::exp(s1 - m);
    double z = w0 + w1;
    w0 /= z;
    w1 /= z;
    double c0 = w0 * v[0][0] + w1 * v[1][0];
    double c1 = w0 * v[0][1] + w1 * v[1][1];
    expect[i][0] = c0 * attn.o.w.at(0, 0) + c1 * attn.o.w.at(1, 0) + attn.o.b.at(0);
    expect[i][1] = c0 * attn.o.w.at(0, 1) + c1 * attn.o.w.at(1, 1) + attn.o.b.at(1);
  }

  Tensor toks = Tensor::from_rows({{x[0][0], x[0][1]}, {x[1][0], x[1][1]}});
  Tensor out = self_attention(toks, attn);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(out.at(i, j) == doctest::Approx(expect[i][j]).epsilon(1e-12));
}

TEST_CASE("mlp zero weights yield final bias, identity layer passes input") {
  ParamStore ps;
  Rng rng = make_rng(5);
  Mlp m = make_mlp(ps, "m", {3, 4, 2}, rng);
  for (auto& l : m.layers) std::fill(l.w.values().begin(), l.w.values().end(), 0.0);
  m.layers[1].b.values() = {0.5, -1.5};
  Tensor out = mlp_forward(Tensor::from({1, 3}, {1.0, 2.0, 3.0}), m);
  CHECK(out.at(0, 0) == 0.5);
  CHECK(out.at(0, 1) == -1.5);

  ParamStore ps2;
  Mlp ident = make_mlp(ps2, "i", {2, 2}, rng);
  ident.layers[0].w.values() = {1.0, 0.0, 0.0, 1.0};
  Tensor in = Tensor::from({1, 2}, {0.25, -0.75});
  Tensor out2 = mlp_forward(in, ident);
  CHECK(out2.at(0, 0) == 0.25);
  CHECK(out2.at(0, 1) == -0.75);
}

TEST_CASE("mlp two-layer matches a matrix-multiply reference") {
  ParamStore ps;
  Rng rng = make_rng(6);
  Mlp m = make_mlp(ps, "m", {2, 3, 2}, rng);
  m.layers[0].w.values() = {0.1, -0.2, 0.3, 0.4, 0.5, -0.6};
  m.layers[0].b.values() = {0.05, 0.0, -0.05};
  m.layers[1].w.values() = {1.0, 0.5, -0.5, 0.25, 0.0, -1.0};
  m.layers[1].b.values() = {0.1, -0.1};
  double in[2] = {0.8, -0.4};
  double h[3];
  for (int j = 0; j < 3; ++j) {
    h[j] = in[0] * m.layers[0].w.at(0, j) + in[1] * m.layers[0].w.at(1, j) +
           m.layers[0].b.at(j);
    h[j] = std::max(0.0, h[j]);
  }
  double expect[2];
  for (int j = 0; j < 2; ++j)
    expect[j] = h[0] * m.layers[1].w.at(0, j) + h[1] * m.layers[1].w.at(1, j) +
                h[2] * m.layers[1].w.at(2, j) + m.layers[1].b.at(j);
  Tensor out = mlp_forward(Tensor::from({1, 2}, {in[0], in[1]}), m);
  CHECK(out.at(0, 0) == doctest::Approx(expect[0]).epsilon(1e-14));
  CHECK(out.at(0, 1) == doctest::Approx(expect[1]).epsilon(1e-14));
}

TEST_CASE("backward: square, independence, accumulation") {
  Tensor x = Tensor::from({1}, {3.0}).set_requires_grad(true);
  Tensor y = Tensor::from({1}, {2.0}).set_requires_grad(true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor loss = mul(x, x);
    tape.backward(loss);
  }
  CHECK(x.grad_at(0) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(y.grad().empty());  // loss independent of y

  // reuse accumulates: f = x*x + x -> df/dx = 2x + 1
  x.grad().clear();
  Tape tape2;
  {
    Tape::Scope scope(tape2);
    Tensor loss = add(mul(x, x), x);
    tape2.backward(loss);
  }
  CHECK(x.grad_at(0) == doctest::Approx(7.0).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}).set_requires_grad(true);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), UsageError);
}

TEST_CASE("backward is deterministic") {
  Rng rng = make_rng(11);
  Tensor a = random_tensor({4, 4}, rng).set_requires_grad(true);
  Tensor b = random_tensor({4, 4}, rng).set_requires_grad(true);
  auto run = [&]() {
    a.grad().clear();
    b.grad().clear();
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = sum(mul(softmax(matmul(a, b)), sigmoid(a)));
    tape.backward(loss);
    std::vector<double> g = a.grad();
    g.insert(g.end(), b.grad().begin(), b.grad().end());
    return g;
  };
  std::vector<double> g1 = run();
  std::vector<double> g2 = run();
  REQUIRE(g1.size() == g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("gradient law: primitive ops match finite differences") {
  Rng rng = make_rng(21);
  auto check = [&](const char* name, std::function<Tensor()> fn, std::vector<Tensor> leaves) {
    auto res = gradcheck(fn, leaves, rng, 10);
    INFO(name, " worst rel err ", res.worst_rel);
    CHECK(res.ok);
  };

  Tensor a = random_tensor({3, 4}, rng).set_requires_grad(true);
  Tensor b = random_tensor({3, 4}, rng).set_requires_grad(true);
  Tensor p = random_tensor({4, 3}, rng).set_requires_grad(true);
  Tensor row = random_tensor({4}, rng).set_requires_grad(true);
  Tensor col = random_tensor({3, 1}, rng).set_requires_grad(true);
  Tensor dpos = add_scalar(mul(b, b), 0.5);  // strictly positive denominator

  check("add", [&] { return sum(mul(add(a, b), a)); }, {a, b});
  check("sub", [&] { return sum(mul(sub(a, b), b)); }, {a, b});
  check("mul", [&] { return sum(mul(a, b)); }, {a, b});
  check("div", [&] { return sum(div(a, add_scalar(mul(b, b), 0.5))); }, {a, b});
  check("matmul", [&] { return sum(matmul(a, p)); }, {a, p});
  check("transpose", [&] { return sum(mul(transpose(a), p)); }, {a, p});
  check("relu", [&] { return sum(relu(a)); }, {a});
  check("sigmoid", [&] { return sum(sigmoid(a)); }, {a});
  check("exp", [&] { return sum(exp_(mul_scalar(a, 0.3))); }, {a});
  check("log", [&] { return sum(log_(add_scalar(mul(a, a), 0.7))); }, {a});
  check("sqrt", [&] { return sum(sqrt_(add_scalar(mul(a, a), 0.5))); }, {a});
  check("abs", [&] { return sum(abs_(a)); }, {a});
  check("reciprocal", [&] { return sum(reciprocal(add_scalar(mul(a, a), 1.0))); }, {a});
  check("minimum", [&] { return sum(minimum(a, b)); }, {a, b});
  check("maximum", [&] { return sum(maximum(a, b)); }, {a, b});
  check("row_broadcast_add", [&] { return sum(mul(row_broadcast_add(a, row), a)); }, {a, row});
  check("row_broadcast_mul", [&] { return sum(row_broadcast_mul(a, row)); }, {a, row});
  check("col_broadcast_add", [&] { return sum(mul(col_broadcast_add(a, col), a)); }, {a, col});
  check("col_broadcast_mul", [&] { return sum(col_broadcast_mul(a, col)); }, {a, col});
  check("mean", [&] { return mean(mul(a, a)); }, {a});
  check("row_sum", [&] { return sum(mul(row_sum(a), col)); }, {a, col});
  check("row_mean", [&] { return sum(mul(row_mean(a), col)); }, {a, col});
  check("softmax", [&] { return sum(mul(softmax(a), b)); }, {a, b});
  check("concat_rows", [&] { return sum(mul(concat_rows(a, b), concat_rows(b, a))); }, {a, b});
  check("slice_rows", [&] { return sum(slice_rows(a, 1, 3)); }, {a});
  check("concat_cols", [&] { return sum(mul(concat_cols(a, b), concat_cols(b, a))); }, {a, b});
  check("slice_cols", [&] { return sum(slice_cols(a, 1, 4)); }, {a});
  check("gather_rows", [&] { return sum(gather_rows(a, {2, 0, 2})); }, {a});
  check("reshape", [&] { return sum(mul(reshape(a, {4, 3}), p)); }, {a, p});
  check("min_reduce", [&] { return min_reduce(a); }, {a});
  check("median", [&] { return median(a); }, {a});
  check("bce", [&] { return sum(bce_with_logits(a, Tensor::full({3, 4}, 0.3))); }, {a});
  check("layer_norm", [&] {
    ParamStore ps;
    LayerNorm ln;
    ln.gain = Tensor::full({4}, 1.1).set_requires_grad(true);
    ln.bias = Tensor::full({4}, 0.1).set_requires_grad(true);
    return sum(mul(layer_norm(a, ln), b));
  }, {a, b});
}

TEST_CASE("gradient law: composite attention and mlp match finite differences") {
  Rng rng = make_rng(31);
  ParamStore ps;
  AttentionParams attn = make_attention(ps, "a", 4, 2, rng);
  Tensor toks = random_tensor({3, 4}, rng).set_requires_grad(true);
  Tensor pos = random_tensor({3, 4}, rng);
  std::vector<Tensor> leaves = {toks, attn.q.w, attn.q.b, attn.k.w, attn.k.b,
                                attn.v.w, attn.v.b, attn.o.w, attn.o.b};
  auto res = gradcheck([&] { return sum(mul(self_attention(toks, attn, &pos), toks)); },
                       leaves, rng, 20);
  INFO("attention worst rel err ", res.worst_rel);
  CHECK(res.ok);

  Mlp m = make_mlp(ps, "m", {4, 6, 2}, rng);
  std::vector<Tensor> mlp_leaves = {toks};
  for (auto& l : m.layers) {
    mlp_leaves.push_back(l.w);
    mlp_leaves.push_back(l.b);
  }
  auto res2 = gradcheck([&] { return sum(mlp_forward(toks, m)); }, mlp_leaves, rng, 15);
  INFO("mlp worst rel err ", res2.worst_rel);
  CHECK(res2.ok);
}

TEST_CASE("adamw: decay-only step, first-step direction, hand-traced recurrence") {
  // zero grad, one step: w' = w * (1 - lr*wd)
  {
    ParamStore ps;
    Tensor w = ps.add("w", Tensor::from({2}, {1.0, -2.0}));
    AdamW opt(ps, {0.01, 0.1, 0.9, 0.999, 1e-8});
    w.grad().assign(2, 0.0);
    opt.step();
    CHECK(w.values()[0] == doctest::Approx(1.0 * (1.0 - 0.01 * 0.1)).epsilon(1e-15));
    CHECK(w.values()[1] == doctest::Approx(-2.0 * (1.0 - 0.01 * 0.1)).epsilon(1e-15));
  }
  // first step with grad g moves by -lr * g/(|g|+eps), wd=0
  {
    ParamStore ps;
    Tensor w = ps.add("w", Tensor::from({1}, {0.5}));
    const double lr = 0.05, g = 0.3, eps = 1e-8;
    AdamW opt(ps, {lr, 0.0, 0.9, 0.999, eps});
    w.grad().assign(1, g);
    opt.step();
    CHECK(w.values()[0] == doctest::Approx(0.5 - lr * g / (std::fabs(g) + eps)).epsilon(1e-12));
  }
  // three steps with constant grad against a scalar recurrence
  {
    const double lr = 0.01, wd = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = -0.7;
    ParamStore ps;
    Tensor w = ps.add("w", Tensor::from({1}, {1.2}));
    AdamW opt(ps, {lr, wd, b1, b2, eps});
    double ref = 1.2, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
      w.grad().assign(1, g);
      opt.step();
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      double mhat = m / (1 - std::pow(b1, t));
      double vhat = v / (1 - std::pow(b2, t));
      ref -= lr * wd * ref;
      ref -= lr * mhat / (std::sqrt(vhat) + eps);
      CHECK(w.values()[0] == doctest::Approx(ref).epsilon(1e-14));
    }
  }
  // wd=0 and zero grad leaves parameters untouched
  {
    ParamStore ps;
    Tensor w = ps.add("w", Tensor::from({2}, {0.4, -0.9}));
    AdamW opt(ps, {0.01, 0.0, 0.9, 0.999, 1e-8});
    w.grad().assign(2, 0.0);
    opt.step();
    CHECK(w.values()[0] == 0.4);
    CHECK(w.values()[1] == -0.9);
  }
  // stepping without any gradients is a usage error
  {
    ParamStore ps;
    ps.add("w", Tensor::from({1}, {1.0}));
    AdamW opt(ps, {});
    CHECK_THROWS_AS(opt.step(), UsageError);
  }
}

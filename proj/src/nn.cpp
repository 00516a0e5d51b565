#include "latsg/nn.hpp"

#include <cmath>

namespace latsg {

Tensor ParamStore::add(const std::string& name, Tensor t) {
  for (const auto& [n, _] : items_)
    if (n == name) throw UsageError("duplicate parameter name: " + name);
  t.set_requires_grad(true);
  items_.emplace_back(name, t);
  return t;
}

Tensor* ParamStore::find(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return &t;
  return nullptr;
}

void ParamStore::zero_grads() {
  for (auto& [_, t] : items_) t.zero_grad();
}

Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng) {
  double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  std::vector<double> data(static_cast<std::size_t>(fan_in) * fan_out);
  for (auto& v : data) v = dist(rng);
  return Tensor::from({fan_in, fan_out}, std::move(data));
}

Tensor randn(std::vector<int> shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t = Tensor::zeros(shape);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng) {
  Linear l;
  l.w = ps.add(name + ".w", xavier_uniform(in, out, rng));
  l.b = ps.add(name + ".b", Tensor::zeros({out}));
  return l;
}

Tensor linear(const Tensor& x, const Linear& l) {
  return row_broadcast_add(matmul(x, l.w), l.b);
}

Mlp make_mlp(ParamStore& ps, const std::string& name, const std::vector<int>& dims, Rng& rng) {
  if (dims.size() < 2) throw UsageError("make_mlp: need at least input and output dims");
  Mlp m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    m.layers.push_back(
        make_linear(ps, name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng));
  return m;
}

Tensor mlp_forward(const Tensor& x, const Mlp& m) {
  Tensor h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = linear(h, m.layers[i]);
    if (i + 1 < m.layers.size()) h = relu(h);
  }
  return h;
}

LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int dim) {
  LayerNorm ln;
  ln.gain = ps.add(name + ".g", Tensor::full({dim}, 1.0));
  ln.bias = ps.add(name + ".b", Tensor::zeros({dim}));
  return ln;
}

Tensor layer_norm(const Tensor& x, const LayerNorm& ln) {
  Tensor centered = col_broadcast_add(x, neg(row_mean(x)));
  Tensor var = row_mean(mul(centered, centered));
  Tensor inv_std = reciprocal(sqrt_(add_scalar(var, ln.eps)));
  Tensor normed = col_broadcast_mul(centered, inv_std);
  return row_broadcast_add(row_broadcast_mul(normed, ln.gain), ln.bias);
}

AttentionParams make_attention(ParamStore& ps, const std::string& name, int dim, int heads,
                               Rng& rng) {
  if (heads < 1 || dim % heads != 0)
    throw ConfigError("attention heads must divide the model dimension");
  AttentionParams p;
  p.q = make_linear(ps, name + ".q", dim, dim, rng);
  p.k = make_linear(ps, name + ".k", dim, dim, rng);
  p.v = make_linear(ps, name + ".v", dim, dim, rng);
  p.o = make_linear(ps, name + ".o", dim, dim, rng);
  p.heads = heads;
  return p;
}

Tensor attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const AttentionParams& p) {
  int dim = p.q.w.shape()[0];
  if (q_in.cols() != dim || k_in.cols() != dim || v_in.cols() != dim)
    throw ShapeError("attention: token dimension does not match projection weights");
  if (k_in.rows() != v_in.rows()) throw ShapeError("attention: key/value row counts differ");
  Tensor q = linear(q_in, p.q);
  Tensor k = linear(k_in, p.k);
  Tensor v = linear(v_in, p.v);
  int dh = dim / p.heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor ctx;
  for (int h = 0; h < p.heads; ++h) {
    Tensor qh = p.heads == 1 ? q : slice_cols(q, h * dh, (h + 1) * dh);
    Tensor kh = p.heads == 1 ? k : slice_cols(k, h * dh, (h + 1) * dh);
    Tensor vh = p.heads == 1 ? v : slice_cols(v, h * dh, (h + 1) * dh);
    Tensor weights = softmax(mul_scalar(matmul(qh, transpose(kh)), scale));
    Tensor ch = matmul(weights, vh);
    ctx = h == 0 ? ch : concat_cols(ctx, ch);
  }
  return linear(ctx, p.o);
}

Tensor self_attention(const Tensor& tokens, const AttentionParams& p, const Tensor* positional) {
  Tensor t = positional ? add(tokens, *positional) : tokens;
  return attention(t, t, t, p);
}

Tensor sinusoidal_encoding(int n_positions, int dim) {
  Tensor pe = Tensor::zeros({n_positions, dim});
  for (int pos = 0; pos < n_positions; ++pos) {
    for (int j = 0; j < dim; j += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(j) / dim);
      pe.values()[static_cast<std::size_t>(pos) * dim + j] = std::sin(pos * freq);
      if (j + 1 < dim)
        pe.values()[static_cast<std::size_t>(pos) * dim + j + 1] = std::cos(pos * freq);
    }
  }
  return pe;
}

Tensor span_sinusoidal_embedding(const std::vector<std::pair<double, double>>& spans, int dim) {
  if (dim % 2 != 0) throw ConfigError("span embedding needs an even dimension");
  int half = dim / 2;
  Tensor out = Tensor::zeros({static_cast<int>(spans.size()), dim});
  const double two_pi = 2.0 * M_PI;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    double coord[2] = {spans[i].first, spans[i].second};
    for (int part = 0; part < 2; ++part) {
      double x = coord[part] * two_pi;
      for (int j = 0; j < half; j += 2) {
        double freq = std::pow(10000.0, -static_cast<double>(j) / half);
        std::size_t base = i * dim + static_cast<std::size_t>(part) * half;
        out.values()[base + j] = std::sin(x * freq);
        if (j + 1 < half) out.values()[base + j + 1] = std::cos(x * freq);
      }
    }
  }
  return out;
}

double inverse_sigmoid(double p, double eps) {
  double q = std::min(1.0 - eps, std::max(eps, p));
  return std::log(q / (1.0 - q));
}

}  // namespace latsg

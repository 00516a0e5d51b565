#ifndef LATSG_NN_HPP_
#define LATSG_NN_HPP_

#include <string>
#include <utility>
#include <vector>

#include "latsg/tensor.hpp"

namespace latsg {

// Named parameter registry. Insertion order is fixed by construction order,
// which keeps optimizer traversal and checkpoints deterministic.
class ParamStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  Tensor* find(const std::string& name);
  void zero_grads();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// Xavier-uniform {in,out} weight. Biases are zero.
Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng);
Tensor randn(std::vector<int> shape, double stddev, Rng& rng);

struct Linear {
  Tensor w;  // {in,out}
  Tensor b;  // {out}
};

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng);
Tensor linear(const Tensor& x, const Linear& l);

// Plain MLP: affine layers with ReLU between them, no activation after the
// last layer.
struct Mlp {
  std::vector<Linear> layers;
};

Mlp make_mlp(ParamStore& ps, const std::string& name, const std::vector<int>& dims, Rng& rng);
Tensor mlp_forward(const Tensor& x, const Mlp& m);

struct LayerNorm {
  Tensor gain;  // {C}
  Tensor bias;  // {C}
  double eps = 1e-5;
};

LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int dim);
Tensor layer_norm(const Tensor& x, const LayerNorm& ln);

// Scaled dot-product attention with learned Q/K/V/output projections.
// heads must divide the model dimension.
struct AttentionParams {
  Linear q, k, v, o;
  int heads = 1;
};

AttentionParams make_attention(ParamStore& ps, const std::string& name, int dim, int heads,
                               Rng& rng);
Tensor attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                 const AttentionParams& p);

// Positional encodings are added to the token sequence before attention, so
// queries, keys and values all see them.
Tensor self_attention(const Tensor& tokens, const AttentionParams& p,
                      const Tensor* positional = nullptr);

// Classic sin/cos table for sequence positions, shape {n_positions, dim}.
Tensor sinusoidal_encoding(int n_positions, int dim);

// Sin/cos embedding of (center,length) pairs: half the channels encode the
// center, half the length. rows: {n,2} -> {n,dim}.
Tensor span_sinusoidal_embedding(const std::vector<std::pair<double, double>>& spans, int dim);

double inverse_sigmoid(double p, double eps = 1e-6);

}  // namespace latsg

#endif  // LATSG_NN_HPP_

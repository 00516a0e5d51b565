#ifndef LATSG_OPTIM_HPP_
#define LATSG_OPTIM_HPP_

#include <cstdint>
#include <vector>

#include "latsg/nn.hpp"

namespace latsg {

// AdamW with decoupled weight decay: the decay is applied to the parameter
// directly and never enters the moment estimates.
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamW(ParamStore& params, Options opt);

  // One update over every parameter that has a gradient buffer. Parameters
  // untouched by the last backward pass are skipped entirely (no decay).
  // UsageError if no parameter has gradients at all.
  void step();
  void zero_grad();

  const Options& options() const { return opt_; }
  std::int64_t step_count(std::size_t param_index) const { return state_[param_index].t; }

  struct SlotState {
    std::vector<double> m, v;
    std::int64_t t = 0;
  };
  std::vector<SlotState>& state() { return state_; }

 private:
  ParamStore& params_;
  Options opt_;
  std::vector<SlotState> state_;
};

}  // namespace latsg

#endif  // LATSG_OPTIM_HPP_

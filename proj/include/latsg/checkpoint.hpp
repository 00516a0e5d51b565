#ifndef LATSG_CHECKPOINT_HPP_
#define LATSG_CHECKPOINT_HPP_

#include <memory>
#include <optional>

#include "latsg/runconfig.hpp"

namespace latsg {
class AdamW;

// Checkpoints carry the full run config, the data-derived anchors and role
// rule, every parameter, and (optionally) the optimizer state, so a run can
// be rebuilt or resumed from the file alone.
void save_checkpoint(const std::string& path, const Model& model, const RunConfig& cfg,
                     const AdamW* optimizer, int epochs_done);

struct LoadedCheckpoint {
  RunConfig cfg;
  int d_video = 0;
  int d_text = 0;
  LengthRule role_rule;
  std::vector<Anchor> anchors;
  int epochs_done = 0;
  bool has_optimizer = false;
  std::vector<std::vector<double>> opt_m, opt_v;
  std::vector<std::int64_t> opt_t;
  std::vector<std::pair<std::string, std::vector<double>>> param_values;

  std::unique_ptr<Model> build_model() const;
  void restore_optimizer(AdamW& opt) const;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace latsg

#endif  // LATSG_CHECKPOINT_HPP_

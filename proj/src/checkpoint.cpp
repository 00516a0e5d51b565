#include "latsg/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "latsg/optim.hpp"

namespace latsg {

using json = nlohmann::ordered_json;

void save_checkpoint(const std::string& path, const Model& model, const RunConfig& cfg,
                     const AdamW* optimizer, int epochs_done) {
  json j;
  j["format"] = "latsg-checkpoint-v1";
  json cj;
  for (const auto& [k, v] : cfg.items()) cj[k] = v;
  j["run_config"] = std::move(cj);
  j["d_video"] = model.config().d_video;
  j["d_text"] = model.config().d_text;
  j["epochs_done"] = epochs_done;

  const LengthRule& rule = model.role_rule();
  json rj;
  rj["mode"] = rule.mode == LengthMode::kAbsoluteSeconds ? "seconds" : "normalized";
  rj["boundaries"] = rule.boundaries;
  rj["names"] = rule.names;
  j["role_rule"] = std::move(rj);

  json aj = json::array();
  for (const auto& a : model.anchors()) aj.push_back({a.center, a.length});
  j["anchors"] = std::move(aj);

  json pj = json::array();
  for (const auto& [name, t] : model.params().items()) {
    json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["data"] = t.values();
    pj.push_back(std::move(e));
  }
  j["params"] = std::move(pj);

  if (optimizer) {
    json oj;
    json slots = json::array();
    for (const auto& s :
         const_cast<AdamW*>(optimizer)->state()) {
      json sj;
      sj["m"] = s.m;
      sj["v"] = s.v;
      sj["t"] = s.t;
      slots.push_back(std::move(sj));
    }
    oj["slots"] = std::move(slots);
    j["optimizer"] = std::move(oj);
  }

  std::ofstream out(path);
  if (!out) throw UsageError("cannot open checkpoint for writing: " + path);
  out << j.dump();
  if (!out) throw UsageError("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ParseError(std::string("checkpoint parse error: ") + e.what());
  }
  if (!j.contains("format") || j["format"] != "latsg-checkpoint-v1")
    throw ParseError("unrecognized checkpoint format");

  LoadedCheckpoint lc;
  for (const auto& [k, v] : j.at("run_config").items()) lc.cfg.set(k, v.get<std::string>());
  lc.d_video = j.at("d_video").get<int>();
  lc.d_text = j.at("d_text").get<int>();
  lc.epochs_done = j.at("epochs_done").get<int>();

  const json& rj = j.at("role_rule");
  lc.role_rule.mode = rj.at("mode").get<std::string>() == "seconds"
                          ? LengthMode::kAbsoluteSeconds
                          : LengthMode::kNormalized;
  lc.role_rule.boundaries = rj.at("boundaries").get<std::vector<double>>();
  lc.role_rule.names = rj.at("names").get<std::vector<std::string>>();

  for (const auto& a : j.at("anchors"))
    lc.anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});

  for (const auto& e : j.at("params"))
    lc.param_values.emplace_back(e.at("name").get<std::string>(),
                                 e.at("data").get<std::vector<double>>());

  if (j.contains("optimizer")) {
    lc.has_optimizer = true;
    for (const auto& s : j.at("optimizer").at("slots")) {
      lc.opt_m.push_back(s.at("m").get<std::vector<double>>());
      lc.opt_v.push_back(s.at("v").get<std::vector<double>>());
      lc.opt_t.push_back(s.at("t").get<std::int64_t>());
    }
  }
  return lc;
}

std::unique_ptr<Model> LoadedCheckpoint::build_model() const {
  ModelConfig mc = cfg.model_config(d_video, d_text, role_rule.categories());
  auto model = std::make_unique<Model>(mc, anchors, role_rule);
  for (const auto& [name, data] : param_values) {
    Tensor* t = model->params().find(name);
    if (!t) throw ValidationError("checkpoint parameter '" + name + "' not found in model");
    if (t->values().size() != data.size())
      throw ValidationError("checkpoint parameter '" + name + "' has wrong size");
    t->values() = data;
  }
  return model;
}

void LoadedCheckpoint::restore_optimizer(AdamW& opt) const {
  if (!has_optimizer) return;
  auto& slots = opt.state();
  if (slots.size() != opt_m.size())
    throw ValidationError("checkpoint optimizer state does not match parameter count");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].m.size() != opt_m[i].size())
      throw ValidationError("checkpoint optimizer slot size mismatch");
    slots[i].m = opt_m[i];
    slots[i].v = opt_v[i];
    slots[i].t = opt_t[i];
  }
}

}  // namespace latsg

#include "latsg/runconfig.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace latsg {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

// One registry drives parsing, overrides and echoes.
template <typename F>
void visit_fields(RunConfig& c, F&& f) {
  f("d_model", c.d_model);
  f("n_queries", c.n_queries);
  f("heads", c.heads);
  f("enc_cross_layers", c.enc_cross_layers);
  f("enc_self_layers", c.enc_self_layers);
  f("dec_layers", c.dec_layers);
  f("ffn_dim", c.ffn_dim);
  f("tau", c.tau);
  f("rs_mode", c.rs_mode);
  f("cls_head", c.cls_head);
  f("lt_init", c.lt_init);
  f("top_select", c.top_select);
  f("topk_save", c.topk_save);
  f("mask_threshold", c.mask_threshold);
  f("lambda_sal", c.lambda_sal);
  f("lambda_alig", c.lambda_alig);
  f("lambda_lencl", c.lambda_lencl);
  f("align_temperature", c.align_temperature);
  f("saliency_margin", c.saliency_margin);
  f("use_positional", c.use_positional);
  f("lp_rs", c.lp_rs);
  f("lad_interaction", c.lad_interaction);
  f("lqm", c.lqm);
  f("topk_save_enabled", c.topk_save_enabled);
  f("loss_mean", c.loss_mean);
  f("loss_weight", c.loss_weight);
  f("loss_median", c.loss_median);
  f("split", c.split);
  f("length_rule", c.length_rule);
  f("lr", c.lr);
  f("weight_decay", c.weight_decay);
  f("batch_size", c.batch_size);
  f("epochs", c.epochs);
  f("seed", c.seed);
  f("syn_n", c.syn_n);
  f("syn_l_min", c.syn_l_min);
  f("syn_l_max", c.syn_l_max);
  f("syn_n_min", c.syn_n_min);
  f("syn_n_max", c.syn_n_max);
  f("syn_d_v", c.syn_d_v);
  f("syn_d_t", c.syn_d_t);
  f("syn_signal", c.syn_signal);
  f("syn_noise", c.syn_noise);
  f("syn_label_noise", c.syn_label_noise);
  f("syn_multi_moment", c.syn_multi_moment);
  f("syn_clip_seconds", c.syn_clip_seconds);
  f("syn_domain_seed", c.syn_domain_seed);
  f("analyze_n", c.analyze_n);
}

void parse_into(const std::string& key, const std::string& value, int& out) {
  try {
    out = std::stoi(value);
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + value + "'");
  }
}
void parse_into(const std::string& key, const std::string& value, std::uint64_t& out) {
  try {
    out = std::stoull(value);
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + value + "'");
  }
}
void parse_into(const std::string& key, const std::string& value, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("");
  } catch (...) {
    throw ConfigError("config key '" + key + "': expected number, got '" + value + "'");
  }
}
void parse_into(const std::string& key, const std::string& value, bool& out) {
  if (value == "1" || value == "true" || value == "on") {
    out = true;
  } else if (value == "0" || value == "false" || value == "off") {
    out = false;
  } else {
    throw ConfigError("config key '" + key + "': expected boolean, got '" + value + "'");
  }
}
void parse_into(const std::string&, const std::string& value, std::string& out) { out = value; }

std::string to_echo(int v) { return std::to_string(v); }
std::string to_echo(std::uint64_t v) { return std::to_string(v); }
std::string to_echo(double v) { return format_double(v); }
std::string to_echo(bool v) { return v ? "1" : "0"; }
std::string to_echo(const std::string& v) { return v; }

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  bool found = false;
  visit_fields(*this, [&](const char* name, auto& field) {
    if (!found && key == name) {
      parse_into(key, value, field);
      found = true;
    }
  });
  if (!found) throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::items() const {
  std::vector<std::pair<std::string, std::string>> out;
  visit_fields(const_cast<RunConfig&>(*this), [&](const char* name, auto& field) {
    out.emplace_back(name, to_echo(field));
  });
  return out;
}

void RunConfig::apply_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config file line " + std::to_string(lineno) + ": expected key = value");
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

RunConfig RunConfig::from_file(const std::string& path) {
  RunConfig c;
  c.apply_file(path);
  return c;
}

SyntheticConfig RunConfig::synthetic_config() const {
  SyntheticConfig sc;
  sc.n_samples = syn_n;
  sc.l_min = syn_l_min;
  sc.l_max = syn_l_max;
  sc.n_min = syn_n_min;
  sc.n_max = syn_n_max;
  sc.d_v = syn_d_v;
  sc.d_t = syn_d_t;
  sc.signal = syn_signal;
  sc.noise = syn_noise;
  sc.label_noise = syn_label_noise;
  sc.multi_moment_rate = syn_multi_moment;
  sc.clip_seconds = syn_clip_seconds;
  sc.seed = seed;
  sc.domain_seed = syn_domain_seed;
  return sc;
}

ModelConfig RunConfig::model_config(int d_video, int d_text, int n_groups) const {
  ModelConfig mc;
  mc.d_video = d_video;
  mc.d_text = d_text;
  mc.d_model = d_model;
  mc.heads = heads;
  mc.enc_cross_layers = enc_cross_layers;
  mc.enc_self_layers = enc_self_layers;
  mc.dec_layers = dec_layers;
  mc.ffn_dim = ffn_dim;
  mc.n_queries = n_queries;
  mc.n_groups = n_groups;
  mc.tau = tau;
  if (rs_mode == "prose") {
    mc.rs_mode = RsMode::kProse;
  } else if (rs_mode == "literal") {
    mc.rs_mode = RsMode::kLiteral;
  } else {
    throw ConfigError("rs_mode must be 'prose' or 'literal'");
  }
  if (cls_head == "binary") {
    mc.cls_head = ClsHeadMode::kThreeBinary;
  } else if (cls_head == "softmax") {
    mc.cls_head = ClsHeadMode::kSoftmax3;
  } else {
    throw ConfigError("cls_head must be 'binary' or 'softmax'");
  }
  if (lt_init == "zero") {
    mc.lt_init = LtInit::kZero;
  } else if (lt_init == "random") {
    mc.lt_init = LtInit::kRandom;
  } else {
    throw ConfigError("lt_init must be 'zero' or 'random'");
  }
  mc.top_select = top_select;
  mc.topk_save = topk_save;
  mc.mask_threshold = mask_threshold;
  mc.lp_rs = lp_rs;
  mc.lad_interaction = lad_interaction;
  mc.lqm = lqm;
  mc.topk_save_enabled = topk_save_enabled;
  mc.loss_mean = loss_mean;
  mc.loss_weight = loss_weight;
  mc.loss_median = loss_median;
  mc.lambdas.lambda_sal = lambda_sal;
  mc.lambdas.lambda_alig = lambda_alig;
  mc.lambdas.lambda_lencl = lambda_lencl;
  mc.align_temperature = align_temperature;
  mc.saliency_margin = saliency_margin;
  mc.use_positional = use_positional;
  mc.init_seed = seed;
  return mc;
}

}  // namespace latsg

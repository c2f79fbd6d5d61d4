// SPDX-License-Identifier: Apache-2.0

#include "mcf/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace mcf {

using nlohmann::json;

namespace {

// Reads optional fields from one JSON object and rejects unknown keys.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json encoder_json(const EncoderConfig& c) {
  return {{"num_layers", c.num_layers},     {"d_model", c.d_model},
          {"heads", c.heads},               {"d_inter", c.d_inter},
          {"d_ffn", c.d_ffn},               {"kernels", c.kernels},
          {"fusion", to_string(c.fusion)},  {"conv_block", to_string(c.conv_block)},
          {"final_kernel", c.final_kernel}, {"baseline_kernel", c.baseline_kernel},
          {"dropout", c.dropout},           {"seed", c.seed},
          {"feature_dim", c.feature_dim},   {"vocab_size", c.vocab_size}};
}

EncoderConfig encoder_from(const json& j) {
  EncoderConfig c;
  Reader r(j, "encoder");
  r.get("num_layers", c.num_layers);
  r.get("d_model", c.d_model);
  r.get("heads", c.heads);
  r.get("d_inter", c.d_inter);
  r.get("d_ffn", c.d_ffn);
  r.get("kernels", c.kernels);
  std::string fusion = to_string(c.fusion), block = to_string(c.conv_block);
  r.get("fusion", fusion);
  r.get("conv_block", block);
  try {
    c.fusion = parse_fusion(fusion);
    c.conv_block = parse_conv_block(block);
  } catch (const Error& e) {
    throw ConfigError(std::string("encoder: ") + e.what());
  }
  r.get("final_kernel", c.final_kernel);
  r.get("baseline_kernel", c.baseline_kernel);
  r.get("dropout", c.dropout);
  r.get("seed", c.seed);
  r.get("feature_dim", c.feature_dim);
  r.get("vocab_size", c.vocab_size);
  r.finish();
  return c;
}

json spec_json(const SyntheticTaskSpec& s) {
  return {{"vocab_size", s.vocab_size}, {"template_frames", s.template_frames},
          {"feature_dim", s.feature_dim}, {"noise_std", s.noise_std},
          {"min_tokens", s.min_tokens}, {"max_tokens", s.max_tokens},
          {"train_size", s.train_size}, {"dev_size", s.dev_size},
          {"test_size", s.test_size}, {"seed", s.seed}};
}

SyntheticTaskSpec spec_from(const json& j) {
  SyntheticTaskSpec s;
  Reader r(j, "data");
  r.get("vocab_size", s.vocab_size);
  r.get("template_frames", s.template_frames);
  r.get("feature_dim", s.feature_dim);
  r.get("noise_std", s.noise_std);
  r.get("min_tokens", s.min_tokens);
  r.get("max_tokens", s.max_tokens);
  r.get("train_size", s.train_size);
  r.get("dev_size", s.dev_size);
  r.get("test_size", s.test_size);
  r.get("seed", s.seed);
  r.finish();
  return s;
}

json train_json(const TrainConfig& c) {
  return {{"encoder", encoder_json(c.encoder)},
          {"batch_size", c.batch_size},
          {"steps", c.steps},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"grad_clip", c.grad_clip},
          {"eval_interval", c.eval_interval},
          {"output_dir", c.output_dir},
          {"seed", c.seed},
          {"early_stop_ter", c.early_stop_ter}};
}

TrainConfig train_from(const json& j, const char* where, bool allow_encoder = true) {
  TrainConfig c;
  Reader r(j, where);
  if (allow_encoder) {
    if (const json* e = r.child("encoder")) c.encoder = encoder_from(*e);
  }
  r.get("batch_size", c.batch_size);
  r.get("steps", c.steps);
  r.get("learning_rate", c.learning_rate);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("eps", c.eps);
  r.get("grad_clip", c.grad_clip);
  r.get("eval_interval", c.eval_interval);
  r.get("output_dir", c.output_dir);
  r.get("seed", c.seed);
  r.get("early_stop_ter", c.early_stop_ter);
  r.finish();
  return c;
}

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

std::string to_json(const EncoderConfig& cfg) { return encoder_json(cfg).dump(2); }
std::string to_json(const SyntheticTaskSpec& spec) { return spec_json(spec).dump(2); }
std::string to_json(const TrainConfig& cfg) { return train_json(cfg).dump(2); }

// {"encoder": {...}, "train": {...}, "data": {...}}; the encoder lives at the
// top level so one file serves every subcommand.
std::string to_json(const RunConfig& cfg) {
  json t = train_json(cfg.train);
  json e = t["encoder"];
  t.erase("encoder");
  return json{{"encoder", e}, {"train", t}, {"data", spec_json(cfg.data)}}.dump(2);
}

EncoderConfig encoder_config_from_json(const std::string& text) { return encoder_from(parse(text)); }
SyntheticTaskSpec task_spec_from_json(const std::string& text) { return spec_from(parse(text)); }
TrainConfig train_config_from_json(const std::string& text) { return train_from(parse(text), "train"); }

RunConfig run_config_from_json(const std::string& text) {
  const json j = parse(text);
  RunConfig cfg;
  Reader r(j, "config");
  if (const json* e = r.child("encoder")) cfg.train.encoder = encoder_from(*e);
  if (const json* t = r.child("train")) {
    const auto enc = cfg.train.encoder;
    cfg.train = train_from(*t, "train", false);
    cfg.train.encoder = enc;
  }
  if (const json* d = r.child("data")) cfg.data = spec_from(*d);
  r.finish();
  return cfg;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot write config " + path.string());
  os << to_json(cfg) << '\n';
  if (!os) throw InputError("failed writing config " + path.string());
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return run_config_from_json(ss.str());
}

}  // namespace mcf

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "masd/dataset_io.hpp"
#include "masd/errors.hpp"
#include "masd/eval.hpp"
#include "masd/net.hpp"
#include "masd/synth.hpp"
#include "masd/train.hpp"

namespace masd {

// Default threshold sweep for pipeline evaluation: 0.60 down to 0.20 in steps
// of 0.01. A trained soft mask settles into an equilibrium where background
// pixels rest around 0.01-0.3 (total variation smoothing against the area
// penalty) and lesion cores around 0.6-0.95, so this middle band is where
// thresholding separates lesions cleanly. Sweeping into either tail binarizes
// noise: components merge as tau falls and the curve monotonicity assertion
// in froc_curve rejects the result. Set tau_grid explicitly to sweep the
// tails anyway (e.g. for near-binary masks, where the full range is safe).
inline std::vector<float> default_sweep_tau_grid() {
  std::vector<float> taus;
  for (int i = 60; i >= 20; --i) taus.push_back(static_cast<float>(i) / 100.0f);
  return taus;
}

// One experiment, one file. The top-level seed is the only seed: it is copied
// into the generator and both training phases so a run is reproducible from
// this single value. Nested sections therefore must not carry their own
// "seed" (or "problem") keys.
struct ExperimentConfig {
  Problem problem = Problem::lesion;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir;

  GeneratorConfig generator;
  EncoderConfig encoder;
  DecoderConfig decoder;
  TrainConfig classifier_train;
  TrainConfig saliency_train;

  std::vector<float> tau_grid;  // empty means default_sweep_tau_grid()
  std::vector<Scenario> scenarios{Scenario::all, Scenario::c_plus};

  void validate() const {
    if (out_dir.empty())
      throw ConfigError("config field out_dir: required (set it in the file or pass --out)");
    generator.validate();
    encoder.validate();
    decoder.validate(encoder);
    classifier_train.validate();
    saliency_train.validate();
    if (scenarios.empty()) throw ConfigError("config field scenarios: at least one required");
    for (std::size_t i = 0; i < tau_grid.size(); ++i) {
      float t = tau_grid[i];
      if (!(t >= 0.0f && t <= 1.0f))
        throw ConfigError("config field tau_grid: values must lie in [0,1]");
      if (i > 0 && !(t < tau_grid[i - 1]))
        throw ConfigError("config field tau_grid: values must be strictly decreasing");
    }
    // image must clear the encoder's pooling chain
    if (generator.image_size % encoder.pool_factor() != 0)
      throw ConfigError("config field generator.image_size: must be divisible by the encoder's " +
                        std::to_string(encoder.pool_factor()) + "x pooling");
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, const std::string& path,
                       std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ConfigError("config field " + path + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    if (!known) throw ConfigError("config field " + path + "." + key + ": unknown field");
  }
}

template <typename T>
void read_field(const nlohmann::json& obj, const std::string& path, const char* key, T& into) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    into = it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config field " + path + "." + key + ": " + e.what());
  }
}

inline void read_generator(const nlohmann::json& j, GeneratorConfig& g) {
  const std::string p = "generator";
  check_keys(j, p,
             {"image_size", "train_count", "val_count", "test_count", "class_proportions",
              "blob_count_min", "blob_count_max", "radius_min", "radius_max", "benign_contrast",
              "malignant_contrast", "malignant_irregularity", "background_level",
              "texture_amplitude", "noise_sigma"});
  read_field(j, p, "image_size", g.image_size);
  read_field(j, p, "train_count", g.train_count);
  read_field(j, p, "val_count", g.val_count);
  read_field(j, p, "test_count", g.test_count);
  read_field(j, p, "class_proportions", g.class_proportions);
  read_field(j, p, "blob_count_min", g.blob_count_min);
  read_field(j, p, "blob_count_max", g.blob_count_max);
  read_field(j, p, "radius_min", g.radius_min);
  read_field(j, p, "radius_max", g.radius_max);
  read_field(j, p, "benign_contrast", g.benign_contrast);
  read_field(j, p, "malignant_contrast", g.malignant_contrast);
  read_field(j, p, "malignant_irregularity", g.malignant_irregularity);
  read_field(j, p, "background_level", g.background_level);
  read_field(j, p, "texture_amplitude", g.texture_amplitude);
  read_field(j, p, "noise_sigma", g.noise_sigma);
}

inline void read_encoder(const nlohmann::json& j, EncoderConfig& e) {
  const std::string p = "encoder";
  check_keys(j, p, {"stem_width", "growth", "block_layers", "num_blocks", "head_width"});
  read_field(j, p, "stem_width", e.stem_width);
  read_field(j, p, "growth", e.growth);
  read_field(j, p, "block_layers", e.block_layers);
  read_field(j, p, "num_blocks", e.num_blocks);
  read_field(j, p, "head_width", e.head_width);
}

inline void read_loss(const nlohmann::json& j, const std::string& p, LossWeights& w) {
  check_keys(j, p,
             {"lambda1", "lambda2", "lambda3", "lambda4", "enable_tv", "enable_area",
              "enable_preserve", "enable_destroy", "destroy_log"});
  read_field(j, p, "lambda1", w.lambda1);
  read_field(j, p, "lambda2", w.lambda2);
  read_field(j, p, "lambda3", w.lambda3);
  read_field(j, p, "lambda4", w.lambda4);
  read_field(j, p, "enable_tv", w.enable_tv);
  read_field(j, p, "enable_area", w.enable_area);
  read_field(j, p, "enable_preserve", w.enable_preserve);
  read_field(j, p, "enable_destroy", w.enable_destroy);
  read_field(j, p, "destroy_log", w.destroy_log);
}

inline void read_train(const nlohmann::json& j, const std::string& p, bool with_loss,
                       TrainConfig& t) {
  if (with_loss)
    check_keys(j, p,
               {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "weight_decay",
                "eval_every", "loss"});
  else
    check_keys(j, p,
               {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "weight_decay",
                "eval_every"});
  read_field(j, p, "epochs", t.epochs);
  read_field(j, p, "batch_size", t.batch_size);
  read_field(j, p, "lr", t.lr);
  read_field(j, p, "beta1", t.beta1);
  read_field(j, p, "beta2", t.beta2);
  read_field(j, p, "eps", t.eps);
  read_field(j, p, "weight_decay", t.weight_decay);
  read_field(j, p, "eval_every", t.eval_every);
  if (with_loss && j.contains("loss")) read_loss(j.at("loss"), p + ".loss", t.loss);
}

}  // namespace detail

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::check_keys(j, "(root)",
                     {"problem", "seed", "out_dir", "generator", "encoder", "decoder",
                      "classifier_train", "saliency_train", "tau_grid", "scenarios"});
  if (j.contains("problem")) {
    std::string name;
    detail::read_field(j, "(root)", "problem", name);
    c.problem = problem_from_name(name);
  }
  detail::read_field(j, "(root)", "seed", c.seed);
  if (j.contains("out_dir")) {
    std::string dir;
    detail::read_field(j, "(root)", "out_dir", dir);
    c.out_dir = dir;
  }
  if (j.contains("generator")) detail::read_generator(j.at("generator"), c.generator);
  if (j.contains("encoder")) detail::read_encoder(j.at("encoder"), c.encoder);
  if (j.contains("decoder")) {
    detail::check_keys(j.at("decoder"), "decoder", {"widths"});
    detail::read_field(j.at("decoder"), "decoder", "widths", c.decoder.widths);
  }
  if (j.contains("classifier_train"))
    detail::read_train(j.at("classifier_train"), "classifier_train", false, c.classifier_train);
  if (j.contains("saliency_train"))
    detail::read_train(j.at("saliency_train"), "saliency_train", true, c.saliency_train);
  detail::read_field(j, "(root)", "tau_grid", c.tau_grid);
  if (j.contains("scenarios")) {
    std::vector<std::string> names;
    detail::read_field(j, "(root)", "scenarios", names);
    c.scenarios.clear();
    for (const std::string& n : names) {
      try {
        c.scenarios.push_back(scenario_from_name(n));
      } catch (const ConfigError&) {
        throw ConfigError("config field scenarios: unknown scenario \"" + n + "\"");
      }
    }
  }

  // single-seed reproducibility: fan the experiment seed out to every stage
  c.generator.seed = c.seed;
  c.classifier_train.seed = c.seed;
  c.classifier_train.problem = c.problem;
  c.saliency_train.seed = c.seed;
  c.saliency_train.problem = c.problem;
  c.validate();
  return c;
}

// Canonical serialization of the effective config; stage input digests hash
// slices of this, so it must be deterministic (which nlohmann's ordered maps
// plus dump() give us).
inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["problem"] = problem_name(c.problem);
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.string();
  j["generator"] = generator_config_to_json(c.generator);
  j["encoder"] = {{"stem_width", c.encoder.stem_width},
                  {"growth", c.encoder.growth},
                  {"block_layers", c.encoder.block_layers},
                  {"num_blocks", c.encoder.num_blocks},
                  {"head_width", c.encoder.head_width}};
  j["decoder"] = {{"widths", c.decoder.widths}};
  auto train_json = [](const TrainConfig& t, bool with_loss) {
    nlohmann::json o{{"epochs", t.epochs},       {"batch_size", t.batch_size},
                     {"lr", t.lr},               {"beta1", t.beta1},
                     {"beta2", t.beta2},         {"eps", t.eps},
                     {"weight_decay", t.weight_decay}, {"eval_every", t.eval_every},
                     {"seed", t.seed},           {"problem", problem_name(t.problem)}};
    if (with_loss)
      o["loss"] = {{"lambda1", t.loss.lambda1},
                   {"lambda2", t.loss.lambda2},
                   {"lambda3", t.loss.lambda3},
                   {"lambda4", t.loss.lambda4},
                   {"enable_tv", t.loss.enable_tv},
                   {"enable_area", t.loss.enable_area},
                   {"enable_preserve", t.loss.enable_preserve},
                   {"enable_destroy", t.loss.enable_destroy},
                   {"destroy_log", t.loss.destroy_log}};
    return o;
  };
  j["classifier_train"] = train_json(c.classifier_train, false);
  j["saliency_train"] = train_json(c.saliency_train, true);
  j["tau_grid"] = c.tau_grid;
  std::vector<std::string> names;
  for (Scenario s : c.scenarios) names.push_back(scenario_name(s));
  j["scenarios"] = names;
  return j;
}

// Applies one "--set key=value" override onto the raw config json. Paths are
// dot-separated; the value is parsed as JSON when it is one (numbers, bools)
// and taken as a string otherwise. Only scalars may be set this way.
inline void apply_set_override(nlohmann::json& root, const std::string& spec) {
  std::size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set expects key=value, got \"" + spec + "\"");
  std::string path = spec.substr(0, eq);
  std::string raw = spec.substr(eq + 1);

  nlohmann::json value = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;
  if (value.is_object() || value.is_array())
    throw ConfigError("--set " + path + ": only scalar fields can be overridden");

  nlohmann::json* node = &root;
  std::size_t start = 0;
  while (true) {
    std::size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("--set " + path + ": empty path segment");
    if (dot == std::string::npos) {
      if (node->contains(key) && (node->at(key).is_object() || node->at(key).is_array()))
        throw ConfigError("--set " + path + ": only scalar fields can be overridden");
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = nlohmann::json::object();
    node = &(*node)[key];
    if (!node->is_object())
      throw ConfigError("--set " + path + ": \"" + key + "\" is not a section");
    start = dot + 1;
  }
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                               const std::vector<std::string>& sets = {},
                                               const std::string& out_override = "") {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path.string());
  nlohmann::json root = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (root.is_discarded())
    throw ConfigError("config " + path.string() + ": malformed JSON");
  for (const std::string& s : sets) apply_set_override(root, s);
  if (!out_override.empty()) root["out_dir"] = out_override;
  return experiment_config_from_json(root);
}

}  // namespace masd

#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "masd/errors.hpp"
#include "masd/net.hpp"
#include "masd/tensor_io.hpp"

// Model checkpoints are directories: a manifest.json naming the architecture
// plus one tensor file per parameter. Loading validates the whole directory
// against the architecture before returning, so a truncated or tampered
// checkpoint never yields a half-initialized model.

namespace masd {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json encoder_config_to_json(const EncoderConfig& c) {
  return {{"in_channels", c.in_channels}, {"stem_width", c.stem_width},
          {"growth", c.growth},           {"block_layers", c.block_layers},
          {"num_blocks", c.num_blocks},   {"head_width", c.head_width}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.stem_width = j.at("stem_width").get<std::size_t>();
  c.growth = j.at("growth").get<std::size_t>();
  c.block_layers = j.at("block_layers").get<std::size_t>();
  c.num_blocks = j.at("num_blocks").get<std::size_t>();
  c.head_width = j.at("head_width").get<std::size_t>();
  c.validate();
  return c;
}

inline nlohmann::json decoder_config_to_json(const DecoderConfig& c) {
  return {{"widths", c.widths}};
}

inline DecoderConfig decoder_config_from_json(const nlohmann::json& j) {
  DecoderConfig c;
  c.widths = j.at("widths").get<std::vector<std::size_t>>();
  return c;
}

struct Checkpoint {
  std::string kind;  // "classifier" or "saliency"
  EncoderConfig encoder;
  std::optional<DecoderConfig> decoder;
  nlohmann::json metadata = nlohmann::json::object();
  ParamSet params;
};

namespace detail {

inline std::string param_file_name(const std::string& param_name) {
  std::string f = param_name;
  for (char& c : f)
    if (c == '.') c = '_';
  return f + ".mast";
}

inline std::vector<ParamSpec> checkpoint_param_specs(const Checkpoint& ckpt) {
  if (ckpt.kind != "classifier" && ckpt.kind != "saliency")
    throw IoError("checkpoint: unknown kind '" + ckpt.kind + "'");
  if ((ckpt.kind == "saliency") != ckpt.decoder.has_value())
    throw IoError("checkpoint: decoder config must be present exactly for saliency checkpoints");
  std::vector<ParamSpec> specs = encoder_param_specs(ckpt.encoder);
  if (ckpt.decoder) {
    auto dec = decoder_param_specs(*ckpt.decoder, ckpt.encoder);
    specs.insert(specs.end(), dec.begin(), dec.end());
  }
  return specs;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  auto specs = detail::checkpoint_param_specs(ckpt);
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::object();
  for (const auto& spec : specs) {
    const Tensor& t = param(ckpt.params, spec.name);
    if (t.shape() != spec.shape)
      throw ContractError("checkpoint: parameter " + spec.name + " has shape " +
                          shape_str(t.shape()) + ", architecture expects " +
                          shape_str(spec.shape));
    std::string file = detail::param_file_name(spec.name);
    write_tensor(dir / file, t);
    files[spec.name] = file;
  }
  nlohmann::json manifest = {
      {"version", kCheckpointVersion},
      {"kind", ckpt.kind},
      {"encoder", encoder_config_to_json(ckpt.encoder)},
      {"decoder", ckpt.decoder ? decoder_config_to_json(*ckpt.decoder) : nlohmann::json()},
      {"metadata", ckpt.metadata},
      {"params", files}};
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + (dir / "manifest.json").string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint manifest is not valid json: " + std::string(e.what()));
  }
  try {
    if (manifest.at("version").get<int>() != kCheckpointVersion)
      throw IoError("checkpoint: unsupported version");
    Checkpoint ckpt;
    ckpt.kind = manifest.at("kind").get<std::string>();
    ckpt.encoder = encoder_config_from_json(manifest.at("encoder"));
    if (!manifest.at("decoder").is_null())
      ckpt.decoder = decoder_config_from_json(manifest.at("decoder"));
    ckpt.metadata = manifest.at("metadata");

    auto specs = detail::checkpoint_param_specs(ckpt);
    const auto& files = manifest.at("params");
    if (files.size() != specs.size())
      throw IoError("checkpoint: manifest lists " + std::to_string(files.size()) +
                    " parameters, architecture has " + std::to_string(specs.size()));
    for (const auto& spec : specs) {
      if (!files.contains(spec.name)) throw IoError("checkpoint: missing parameter " + spec.name);
      Tensor t = read_tensor(dir / files.at(spec.name).get<std::string>());
      if (t.shape() != spec.shape)
        throw IoError("checkpoint: parameter " + spec.name + " has shape " +
                      shape_str(t.shape()) + ", architecture expects " + shape_str(spec.shape));
      t.set_requires_grad(!spec.state);
      ckpt.params.emplace(spec.name, t);
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint manifest is malformed: " + std::string(e.what()));
  }
}

}  // namespace masd

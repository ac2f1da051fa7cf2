#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "masd/digest.hpp"
#include "masd/errors.hpp"
#include "masd/synth.hpp"
#include "masd/tensor_io.hpp"

// On-disk dataset layout:
//   <dir>/manifest.json
//   <dir>/tensors/<patient>_<side>_x.mast
//   <dir>/tensors/<patient>_<side>_seg<j>.mast
// The manifest records per-file digests; loads verify them and every sample
// invariant, so a damaged or hand-edited dataset fails loudly.

namespace masd {

inline constexpr int kDatasetFormatVersion = 1;

inline nlohmann::json generator_config_to_json(const GeneratorConfig& cfg) {
  nlohmann::json j;
  j["image_size"] = cfg.image_size;
  j["train_count"] = cfg.train_count;
  j["val_count"] = cfg.val_count;
  j["test_count"] = cfg.test_count;
  j["class_proportions"] = cfg.class_proportions;
  j["blob_count_min"] = cfg.blob_count_min;
  j["blob_count_max"] = cfg.blob_count_max;
  j["radius_min"] = cfg.radius_min;
  j["radius_max"] = cfg.radius_max;
  j["benign_contrast"] = cfg.benign_contrast;
  j["malignant_contrast"] = cfg.malignant_contrast;
  j["malignant_irregularity"] = cfg.malignant_irregularity;
  j["background_level"] = cfg.background_level;
  j["texture_amplitude"] = cfg.texture_amplitude;
  j["noise_sigma"] = cfg.noise_sigma;
  j["seed"] = cfg.seed;
  return j;
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  try {
    cfg.image_size = j.at("image_size").get<std::size_t>();
    cfg.train_count = j.at("train_count").get<std::size_t>();
    cfg.val_count = j.at("val_count").get<std::size_t>();
    cfg.test_count = j.at("test_count").get<std::size_t>();
    cfg.class_proportions = j.at("class_proportions").get<std::array<float, 3>>();
    cfg.blob_count_min = j.at("blob_count_min").get<std::size_t>();
    cfg.blob_count_max = j.at("blob_count_max").get<std::size_t>();
    cfg.radius_min = j.at("radius_min").get<float>();
    cfg.radius_max = j.at("radius_max").get<float>();
    cfg.benign_contrast = j.at("benign_contrast").get<float>();
    cfg.malignant_contrast = j.at("malignant_contrast").get<float>();
    cfg.malignant_irregularity = j.at("malignant_irregularity").get<float>();
    cfg.background_level = j.at("background_level").get<float>();
    cfg.texture_amplitude = j.at("texture_amplitude").get<float>();
    cfg.noise_sigma = j.at("noise_sigma").get<float>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("generator config: ") + e.what());
  }
  return cfg;
}

namespace detail {

inline void check_sample_invariants(const std::string& id, int label,
                                    const Tensor& x,
                                    const std::vector<Tensor>& segs,
                                    const std::vector<std::string>& seg_classes,
                                    std::size_t expected_size) {
  std::string where = "dataset entry " + id + ": ";
  if (label < 0 || label > 2) throw IoError(where + "label " + std::to_string(label) + " outside {0,1,2}");
  if (x.rank() != 3 || x.extent(0) != 1)
    throw IoError(where + "image must have shape (1,H,W), got " + shape_str(x.shape()));
  if (expected_size != 0 && (x.extent(1) != expected_size || x.extent(2) != expected_size))
    throw IoError(where + "image shape " + shape_str(x.shape()) + " does not match generator image_size " +
                  std::to_string(expected_size));
  if (!x.all_finite()) throw IoError(where + "image contains non-finite values");
  if (seg_classes.size() != segs.size())
    throw IoError(where + "seg_classes count does not match segmentation count");
  if (label == 0 && !segs.empty())
    throw IoError(where + "label 0 sample must have no segmentations");
  if (label > 0 && segs.empty())
    throw IoError(where + "label " + std::to_string(label) + " sample must have segmentations");
  bool any_positive = false;
  bool any_malignant = false;
  for (std::size_t j = 0; j < segs.size(); ++j) {
    const Tensor& s = segs[j];
    if (!s.same_shape(x))
      throw IoError(where + "segmentation " + std::to_string(j) + " shape " + shape_str(s.shape()) +
                    " differs from image shape " + shape_str(x.shape()));
    double area = 0.0;
    for (float v : s.data()) {
      if (v != 0.0f && v != 1.0f)
        throw IoError(where + "segmentation " + std::to_string(j) + " is not binary");
      area += v;
    }
    if (area > 0.0) any_positive = true;
    const std::string& cls = seg_classes[j];
    if (cls != "benign" && cls != "malignant")
      throw IoError(where + "segmentation class '" + cls + "' is not benign or malignant");
    if (cls == "malignant") any_malignant = true;
  }
  if (label > 0 && !any_positive)
    throw IoError(where + "no segmentation has positive area");
  if (label == 2 && !any_malignant)
    throw IoError(where + "label 2 sample has no malignant segmentation");
  if (label == 1 && any_malignant)
    throw IoError(where + "label 1 sample has a malignant segmentation");
}

inline void check_manifest_consistency(const DatasetManifest& manifest, bool require_digests) {
  std::map<std::string, std::string> patient_split;
  std::map<std::string, int> seen_ids;
  for (const SampleRecord& rec : manifest.records) {
    std::string where = "dataset entry " + rec.id() + ": ";
    if (rec.side != "left" && rec.side != "right")
      throw IoError(where + "side '" + rec.side + "' is not left or right");
    if (rec.split != "train" && rec.split != "val" && rec.split != "test")
      throw IoError(where + "split '" + rec.split + "' is not train, val or test");
    if (++seen_ids[rec.id()] > 1) throw IoError(where + "duplicate sample id");
    auto [it, fresh] = patient_split.emplace(rec.patient_id, rec.split);
    if (!fresh && it->second != rec.split)
      throw IoError("patient " + rec.patient_id + " appears in splits '" + it->second + "' and '" +
                    rec.split + "'; splits must be disjoint by patient");
    if (rec.seg_paths.size() != rec.seg_classes.size())
      throw IoError(where + "seg_paths and seg_classes lengths disagree");
    bool digests_ok = require_digests ? rec.seg_digests.size() == rec.seg_paths.size()
                                      : rec.seg_digests.empty() ||
                                            rec.seg_digests.size() == rec.seg_paths.size();
    if (!digests_ok) throw IoError(where + "seg_digests length disagrees with seg_paths");
  }
}

}  // namespace detail

inline void write_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                          const std::vector<Sample>& samples) {
  if (manifest.records.size() != samples.size())
    throw ContractError("write_dataset: manifest has " + std::to_string(manifest.records.size()) +
                        " records but " + std::to_string(samples.size()) + " samples given");
  detail::check_manifest_consistency(manifest, false);

  std::error_code ec;
  std::filesystem::create_directories(dir / "tensors", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  nlohmann::json out;
  out["format_version"] = kDatasetFormatVersion;
  out["seed"] = manifest.seed;
  out["generator"] = generator_config_to_json(manifest.generator);
  nlohmann::json entries = nlohmann::json::array();

  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleRecord& rec = manifest.records[i];
    const Sample& s = samples[i];
    if (rec.id() != s.id() || rec.label != s.label)
      throw ContractError("write_dataset: record " + rec.id() + " does not match sample " + s.id());
    detail::check_sample_invariants(s.id(), s.label, s.x, s.segmentations, s.seg_classes,
                                    manifest.generator.image_size);
    if (rec.seg_paths.size() != s.segmentations.size())
      throw ContractError("write_dataset: record " + rec.id() + " lists " +
                          std::to_string(rec.seg_paths.size()) + " seg paths for " +
                          std::to_string(s.segmentations.size()) + " masks");

    write_tensor(dir / rec.x_path, s.x);
    nlohmann::json entry;
    entry["patient_id"] = rec.patient_id;
    entry["side"] = rec.side;
    entry["label"] = rec.label;
    entry["split"] = rec.split;
    entry["x_path"] = rec.x_path;
    entry["x_digest"] = digest_file(dir / rec.x_path);
    entry["seg_paths"] = rec.seg_paths;
    entry["seg_classes"] = rec.seg_classes;
    nlohmann::json seg_digests = nlohmann::json::array();
    for (std::size_t j = 0; j < rec.seg_paths.size(); ++j) {
      write_tensor(dir / rec.seg_paths[j], s.segmentations[j]);
      seg_digests.push_back(digest_file(dir / rec.seg_paths[j]));
    }
    entry["seg_digests"] = seg_digests;
    entry["t1_path"] = nullptr;  // reserved for a co-registered second channel
    entries.push_back(std::move(entry));
  }
  out["samples"] = std::move(entries);

  std::ofstream f(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + (dir / "manifest.json").string() + " for writing");
  f << out.dump(2) << '\n';
  if (!f) throw IoError("failed writing " + (dir / "manifest.json").string());
}

inline std::pair<DatasetManifest, std::vector<Sample>> read_dataset(
    const std::filesystem::path& dir) {
  std::filesystem::path mpath = dir / "manifest.json";
  std::ifstream f(mpath, std::ios::binary);
  if (!f) throw IoError("cannot open dataset manifest " + mpath.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset manifest " + mpath.string() + ": " + e.what());
  }

  DatasetManifest manifest;
  std::vector<Sample> samples;
  try {
    int version = j.at("format_version").get<int>();
    if (version != kDatasetFormatVersion)
      throw IoError("dataset manifest " + mpath.string() + " has unsupported format_version " +
                    std::to_string(version));
    manifest.seed = j.at("seed").get<std::uint64_t>();
    manifest.generator = generator_config_from_json(j.at("generator"));
    for (const nlohmann::json& entry : j.at("samples")) {
      SampleRecord rec;
      rec.patient_id = entry.at("patient_id").get<std::string>();
      rec.side = entry.at("side").get<std::string>();
      rec.label = entry.at("label").get<int>();
      rec.split = entry.at("split").get<std::string>();
      rec.x_path = entry.at("x_path").get<std::string>();
      rec.x_digest = entry.at("x_digest").get<std::string>();
      rec.seg_paths = entry.at("seg_paths").get<std::vector<std::string>>();
      rec.seg_classes = entry.at("seg_classes").get<std::vector<std::string>>();
      rec.seg_digests = entry.at("seg_digests").get<std::vector<std::string>>();
      manifest.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset manifest " + mpath.string() + ": " + e.what());
  }

  detail::check_manifest_consistency(manifest, true);

  auto load_checked = [&](const std::string& id, const std::string& rel,
                          const std::string& expect_digest) {
    std::filesystem::path p = dir / rel;
    if (!std::filesystem::exists(p))
      throw IoError("dataset entry " + id + ": missing tensor file " + p.string());
    std::string actual = digest_file(p);
    if (actual != expect_digest)
      throw IoError("dataset entry " + id + ": checksum mismatch for " + p.string() +
                    " (manifest " + expect_digest + ", file " + actual + ")");
    return read_tensor(p);
  };

  for (const SampleRecord& rec : manifest.records) {
    Sample s;
    s.patient_id = rec.patient_id;
    s.side = rec.side;
    s.label = rec.label;
    s.seg_classes = rec.seg_classes;
    s.x = load_checked(rec.id(), rec.x_path, rec.x_digest);
    for (std::size_t ji = 0; ji < rec.seg_paths.size(); ++ji)
      s.segmentations.push_back(load_checked(rec.id(), rec.seg_paths[ji], rec.seg_digests[ji]));
    detail::check_sample_invariants(rec.id(), rec.label, s.x, s.segmentations, s.seg_classes,
                                    manifest.generator.image_size);
    samples.push_back(std::move(s));
  }
  return {std::move(manifest), std::move(samples)};
}

// Convenience: generate and persist in one step.
inline DatasetManifest generate_and_write_dataset(const GeneratorConfig& cfg,
                                                  const std::filesystem::path& dir) {
  auto [manifest, samples] = generate_dataset(cfg);
  write_dataset(dir, manifest, samples);
  return manifest;
}

}  // namespace masd

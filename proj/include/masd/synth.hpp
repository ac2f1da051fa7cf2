#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "masd/errors.hpp"
#include "masd/rng.hpp"
#include "masd/tensor.hpp"

// Synthetic screening-style dataset. Each sample is one grayscale image per
// (patient, side) with a weak label:
//   0  background texture only
//   1  one or more smooth moderate-contrast disks ("benign")
//   2  at least one brighter irregular star-shaped blob ("malignant")
// Pixel-exact segmentation masks accompany every blob; they are evaluation
// ground truth and never touch training.

namespace masd {

enum class Problem { lesion, malignant };

inline std::string problem_name(Problem p) {
  return p == Problem::lesion ? "lesion" : "malignant";
}

inline Problem problem_from_name(const std::string& s) {
  if (s == "lesion") return Problem::lesion;
  if (s == "malignant") return Problem::malignant;
  throw ConfigError("unknown problem '" + s + "', expected lesion or malignant");
}

// lesion: any lesion counts as positive. malignant: only label 2 is positive.
inline int binarize_label(int y, Problem problem) {
  if (y < 0 || y > 2) throw ContractError("label must be in {0,1,2}, got " + std::to_string(y));
  return problem == Problem::lesion ? (y >= 1 ? 1 : 0) : (y == 2 ? 1 : 0);
}

struct GeneratorConfig {
  std::size_t image_size = 64;
  std::size_t train_count = 200;  // samples, i.e. patient-sides, per split
  std::size_t val_count = 40;
  std::size_t test_count = 80;
  std::array<float, 3> class_proportions = {0.4f, 0.3f, 0.3f};
  std::size_t blob_count_min = 1;
  std::size_t blob_count_max = 2;
  float radius_min = 4.0f;
  float radius_max = 8.0f;
  float benign_contrast = 0.4f;
  float malignant_contrast = 0.7f;
  float malignant_irregularity = 0.35f;  // boundary wobble relative to radius
  float background_level = 0.1f;
  float texture_amplitude = 0.01f;
  float noise_sigma = 0.05f;
  std::uint64_t seed = 0;

  // worst-case reach of a blob boundary from its center
  float max_blob_extent() const {
    return radius_max * (1.0f + 1.5f * malignant_irregularity);
  }

  void validate() const {
    if (image_size == 0) throw ConfigError("generator: image_size must be positive");
    float sum = class_proportions[0] + class_proportions[1] + class_proportions[2];
    for (float p : class_proportions)
      if (p < 0.0f) throw ConfigError("generator: class proportions must be non-negative");
    if (std::fabs(sum - 1.0f) > 1e-4f)
      throw ConfigError("generator: class proportions must sum to 1, got " + std::to_string(sum));
    if (radius_min < 2.0f) throw ConfigError("generator: blob radius must be at least 2 pixels");
    if (radius_max < radius_min) throw ConfigError("generator: radius range is inverted");
    if (blob_count_min < 1 || blob_count_max < blob_count_min)
      throw ConfigError("generator: blob count range is invalid");
    if (malignant_irregularity < 0.0f || noise_sigma < 0.0f || texture_amplitude < 0.0f)
      throw ConfigError("generator: amplitudes must be non-negative");
    float needed = 2.0f * (max_blob_extent() + 2.0f) + 2.0f;
    if (static_cast<float>(image_size) < needed)
      throw ConfigError("generator: blob cannot fit, image_size " + std::to_string(image_size) +
                        " < required " + std::to_string(needed));
  }
};

struct Sample {
  std::string patient_id;
  std::string side;  // "left" | "right"
  int label = 0;     // {0,1,2}
  Tensor x;          // (1,H,W)
  std::vector<Tensor> segmentations;      // one binary (1,H,W) mask per blob
  std::vector<std::string> seg_classes;   // "benign" | "malignant", parallel

  std::string id() const { return patient_id + "_" + side; }
};

struct SampleRecord {
  std::string patient_id;
  std::string side;
  int label = 0;
  std::string split;  // "train" | "val" | "test"
  std::string x_path;
  std::vector<std::string> seg_paths;
  std::vector<std::string> seg_classes;
  std::string x_digest;                 // filled on write, verified on read
  std::vector<std::string> seg_digests;

  std::string id() const { return patient_id + "_" + side; }
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  GeneratorConfig generator;
  std::vector<SampleRecord> records;
};

namespace detail {

struct BlobShape {
  float cx = 0, cy = 0, radius = 0;
  bool malignant = false;
  std::array<float, 3> amp{};    // harmonics 2, 3, 5
  std::array<float, 3> phase{};

  float boundary(float theta) const {
    float f = 1.0f;
    if (malignant) {
      static constexpr float k[3] = {2.0f, 3.0f, 5.0f};
      for (int i = 0; i < 3; ++i) f += amp[i] * std::cos(k[i] * theta + phase[i]);
    }
    // keep the boundary a positive radius even for extreme irregularity
    return radius * std::max(f, 0.3f);
  }

  float extent() const {
    float a = malignant ? amp[0] + amp[1] + amp[2] : 0.0f;
    return radius * (1.0f + a);
  }

  bool contains(float px, float py) const {
    float dx = px - cx, dy = py - cy;
    float dist = std::sqrt(dx * dx + dy * dy);
    return dist <= boundary(std::atan2(dy, dx));
  }
};

// Largest-remainder apportionment of n samples over the three classes.
inline std::array<std::size_t, 3> class_counts(std::size_t n, const std::array<float, 3>& prop) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int c = 0; c < 3; ++c) {
    double exact = static_cast<double>(prop[c]) * static_cast<double>(n);
    counts[c] = static_cast<std::size_t>(exact);
    rem[c] = exact - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  while (assigned < n) {
    int best = 0;
    for (int c = 1; c < 3; ++c)
      if (rem[c] > rem[best]) best = c;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

inline Sample generate_sample(const GeneratorConfig& cfg, Rng rng, int label) {
  std::size_t S = cfg.image_size;
  Sample sample;
  sample.label = label;

  // background: flat level, two low-frequency gratings, white noise
  std::vector<float> img(S * S, cfg.background_level);
  float kx = static_cast<float>(rng.uniform_int(1, 4));
  float ky = static_cast<float>(rng.uniform_int(1, 4));
  float phx = rng.uniform(0.0f, 6.2831853f);
  float phy = rng.uniform(0.0f, 6.2831853f);
  constexpr float tau = 6.2831853f;
  for (std::size_t h = 0; h < S; ++h)
    for (std::size_t w = 0; w < S; ++w)
      img[h * S + w] += cfg.texture_amplitude *
                        (std::cos(tau * kx * static_cast<float>(w) / static_cast<float>(S) + phx) +
                         std::cos(tau * ky * static_cast<float>(h) / static_cast<float>(S) + phy));

  std::vector<BlobShape> blobs;
  if (label > 0) {
    std::size_t count = cfg.blob_count_min == cfg.blob_count_max
                            ? cfg.blob_count_min
                            : static_cast<std::size_t>(
                                  rng.uniform_int(cfg.blob_count_min, cfg.blob_count_max));
    for (std::size_t j = 0; j < count; ++j) {
      BlobShape blob;
      // label 2 guarantees the first blob is malignant; label 1 has none
      blob.malignant = label == 2 && (j == 0 || rng.uniform() < 0.5f);
      blob.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
      if (blob.malignant)
        for (int i = 0; i < 3; ++i) {
          blob.amp[i] = cfg.malignant_irregularity * rng.uniform(0.2f, 0.5f);
          blob.phase[i] = rng.uniform(0.0f, tau);
        }
      float margin = blob.extent() + 2.0f;
      bool placed = false;
      for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
        blob.cx = rng.uniform(margin, static_cast<float>(S) - margin);
        blob.cy = rng.uniform(margin, static_cast<float>(S) - margin);
        placed = true;
        for (const BlobShape& other : blobs) {
          float dx = blob.cx - other.cx, dy = blob.cy - other.cy;
          float min_sep = blob.extent() + other.extent() + 2.0f;
          if (dx * dx + dy * dy < min_sep * min_sep) {
            placed = false;
            break;
          }
        }
      }
      if (!placed)
        throw ConfigError("generator: blob cannot fit, placement failed after 100 attempts");
      blobs.push_back(blob);
    }
  }

  for (const BlobShape& blob : blobs) {
    float contrast = blob.malignant ? cfg.malignant_contrast : cfg.benign_contrast;
    std::vector<float> seg(S * S, 0.0f);
    for (std::size_t h = 0; h < S; ++h)
      for (std::size_t w = 0; w < S; ++w)
        if (blob.contains(static_cast<float>(w) + 0.5f, static_cast<float>(h) + 0.5f)) {
          img[h * S + w] += contrast;
          seg[h * S + w] = 1.0f;
        }
    sample.segmentations.push_back(Tensor::from_data({1, S, S}, std::move(seg)));
    sample.seg_classes.push_back(blob.malignant ? "malignant" : "benign");
  }

  for (float& v : img) v += rng.normal(0.0f, cfg.noise_sigma);
  sample.x = Tensor::from_data({1, S, S}, std::move(img));
  return sample;
}

}  // namespace detail

// Deterministic for a given config. Sides of one patient are adjacent samples
// and always land in the same split.
inline std::pair<DatasetManifest, std::vector<Sample>> generate_dataset(
    const GeneratorConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);

  DatasetManifest manifest;
  manifest.seed = cfg.seed;
  manifest.generator = cfg;
  std::vector<Sample> samples;

  const std::array<std::pair<std::string, std::size_t>, 3> splits = {
      {{"train", cfg.train_count}, {"val", cfg.val_count}, {"test", cfg.test_count}}};

  std::size_t ordinal = 0;  // global sample index, also the per-sample rng salt
  std::size_t patient = 0;
  for (std::size_t si = 0; si < splits.size(); ++si) {
    const auto& [split_name, count] = splits[si];
    auto counts = detail::class_counts(count, cfg.class_proportions);
    std::vector<int> labels;
    for (int c = 0; c < 3; ++c) labels.insert(labels.end(), counts[c], c);
    Rng shuffler = root.fork(1000000 + si);
    shuffler.shuffle(labels);

    for (std::size_t i = 0; i < count; ++i) {
      bool left = i % 2 == 0;
      if (left && i > 0) ++patient;
      char pid[16];
      std::snprintf(pid, sizeof(pid), "p%04zu", patient);

      Sample s = detail::generate_sample(cfg, root.fork(ordinal), labels[i]);
      s.patient_id = pid;
      s.side = left ? "left" : "right";

      SampleRecord rec;
      rec.patient_id = s.patient_id;
      rec.side = s.side;
      rec.label = s.label;
      rec.split = split_name;
      rec.x_path = "tensors/" + s.id() + "_x.mast";
      for (std::size_t j = 0; j < s.segmentations.size(); ++j)
        rec.seg_paths.push_back("tensors/" + s.id() + "_seg" + std::to_string(j) + ".mast");
      rec.seg_classes = s.seg_classes;

      manifest.records.push_back(std::move(rec));
      samples.push_back(std::move(s));
      ++ordinal;
    }
    if (count > 0) ++patient;  // next split starts a fresh patient
  }
  return {std::move(manifest), std::move(samples)};
}

}  // namespace masd

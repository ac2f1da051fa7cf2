#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "masd/errors.hpp"
#include "masd/synth.hpp"
#include "masd/tensor.hpp"

// Detection-style evaluation: threshold a soft mask, split the foreground
// into 4-connected components, match components against ground-truth lesions
// by Dice, and sweep the threshold into an FROC curve. Also the scalar
// classifier metrics (AUC, equal error rate) used during training.

namespace masd {

struct BinaryMask {
  Shape shape;  // equals the source tensor shape; trailing two axes are H, W
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> bits;  // row-major H*W
};

// Strict comparison: a pixel equal to tau stays background.
inline BinaryMask threshold_mask(const Tensor& m, float tau) {
  if (!(tau >= 0.0f && tau <= 1.0f))
    throw ContractError("threshold_mask: tau must lie in [0,1], got " + std::to_string(tau));
  if (m.rank() < 2) throw ShapeError("threshold_mask: mask must have at least 2 axes");
  for (std::size_t a = 0; a + 2 < m.rank(); ++a)
    if (m.extent(a) != 1)
      throw ShapeError("threshold_mask: leading axes must be singleton, got " + shape_str(m.shape()));
  BinaryMask out;
  out.shape = m.shape();
  out.h = m.extent(m.rank() - 2);
  out.w = m.extent(m.rank() - 1);
  out.bits.resize(out.h * out.w);
  auto vals = m.data();
  for (std::size_t i = 0; i < vals.size(); ++i) out.bits[i] = vals[i] > tau ? 1 : 0;
  return out;
}

// Pixel sets are sorted row-major indices into the H*W grid.
using PixelSet = std::vector<std::size_t>;

// 4-connected foreground components, ordered by their smallest pixel index.
inline std::vector<PixelSet> connected_components(const BinaryMask& mask) {
  const std::size_t n = mask.h * mask.w;
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  };
  auto unite = [&](std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };
  for (std::size_t r = 0; r < mask.h; ++r)
    for (std::size_t c = 0; c < mask.w; ++c) {
      std::size_t i = r * mask.w + c;
      if (!mask.bits[i]) continue;
      if (c + 1 < mask.w && mask.bits[i + 1]) unite(i, i + 1);
      if (r + 1 < mask.h && mask.bits[i + mask.w]) unite(i, i + mask.w);
    }
  std::vector<PixelSet> components;
  std::vector<std::size_t> slot(n, SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.bits[i]) continue;
    std::size_t root = find(i);
    if (slot[root] == SIZE_MAX) {
      slot[root] = components.size();
      components.emplace_back();
    }
    components[slot[root]].push_back(i);
  }
  return components;
}

// Sorted indices of the foreground of a binary tensor (H*W flattening).
inline PixelSet tensor_pixel_set(const Tensor& t) {
  PixelSet out;
  auto vals = t.data();
  for (std::size_t i = 0; i < vals.size(); ++i)
    if (vals[i] != 0.0f) out.push_back(i);
  return out;
}

// 2|a n b| / (|a| + |b|); two empty sets score 0 so nothing matches nothing.
inline float dice(const PixelSet& a, const PixelSet& b) {
  if (a.empty() && b.empty()) return 0.0f;
  std::size_t inter = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) ++inter, ++i, ++j;
    else if (a[i] < b[j]) ++i;
    else ++j;
  }
  return 2.0f * static_cast<float>(inter) / static_cast<float>(a.size() + b.size());
}

struct Detection {
  std::size_t component = 0;  // index into the component list
  int best_gt = -1;           // ground truth maximizing Dice, -1 if none overlap
  float dice_score = 0.0f;
  bool true_positive = false;
};

struct MatchResult {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::set<std::size_t> matched_gts;  // ground truths detected by some TP
  std::vector<Detection> detections;
};

// Each component claims its best-Dice ground truth (ties to the lower index)
// and is a true positive when that Dice clears dice_min inclusively. A ground
// truth counts as detected once no matter how many components hit it.
inline MatchResult match_detections(const std::vector<PixelSet>& components,
                                    const std::vector<PixelSet>& ground_truths,
                                    float dice_min = 0.2f) {
  if (!(dice_min > 0.0f && dice_min <= 1.0f))
    throw ContractError("match_detections: dice_min must lie in (0,1]");
  MatchResult res;
  for (std::size_t c = 0; c < components.size(); ++c) {
    Detection det;
    det.component = c;
    for (std::size_t g = 0; g < ground_truths.size(); ++g) {
      float d = dice(components[c], ground_truths[g]);
      if (d > det.dice_score) {
        det.dice_score = d;
        det.best_gt = static_cast<int>(g);
      }
    }
    det.true_positive = det.best_gt >= 0 && det.dice_score >= dice_min;
    if (det.true_positive) {
      ++res.tp;
      res.matched_gts.insert(static_cast<std::size_t>(det.best_gt));
    } else {
      ++res.fp;
    }
    res.detections.push_back(det);
  }
  return res;
}

struct EerResult {
  float threshold = 0.0f;
  float value = 0.0f;  // (FPR + FNR) / 2 at the threshold
};

// Decision rule is score > threshold, matching the mask thresholding
// convention. Candidates are midpoints between adjacent distinct pooled
// scores plus one sentinel on each side; ties in |FPR - FNR| resolve to the
// lower threshold.
inline EerResult compute_eer(const std::vector<float>& pos_scores,
                             const std::vector<float>& neg_scores) {
  if (pos_scores.empty() || neg_scores.empty())
    throw ContractError("compute_eer: both score sets must be nonempty");
  std::vector<float> pooled;
  pooled.reserve(pos_scores.size() + neg_scores.size());
  pooled.insert(pooled.end(), pos_scores.begin(), pos_scores.end());
  pooled.insert(pooled.end(), neg_scores.begin(), neg_scores.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  std::vector<float> candidates;
  candidates.push_back(pooled.front() - 1.0f);
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i)
    candidates.push_back(pooled[i] + 0.5f * (pooled[i + 1] - pooled[i]));
  candidates.push_back(pooled.back() + 1.0f);

  // |FPR - FNR| compared as exact integers (cross-multiplied numerators over
  // the common denominator |neg|*|pos|) so mathematical ties are real ties
  // and resolve to the lower threshold instead of to f64 rounding noise.
  EerResult best;
  long long best_gap = -1;
  const long long np = static_cast<long long>(pos_scores.size());
  const long long nn = static_cast<long long>(neg_scores.size());
  for (float t : candidates) {
    long long fp = 0, fn = 0;
    for (float s : neg_scores)
      if (s > t) ++fp;
    for (float s : pos_scores)
      if (!(s > t)) ++fn;
    long long gap = std::llabs(fp * np - fn * nn);
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      double fpr = static_cast<double>(fp) / static_cast<double>(nn);
      double fnr = static_cast<double>(fn) / static_cast<double>(np);
      best.threshold = t;
      best.value = static_cast<float>(0.5 * (fpr + fnr));
    }
  }
  return best;
}

// Rank-based AUC (Mann-Whitney) with tie-averaged ranks.
inline float compute_auc(const std::vector<float>& pos_scores,
                         const std::vector<float>& neg_scores) {
  if (pos_scores.empty() || neg_scores.empty())
    throw ContractError("compute_auc: both score sets must be nonempty");
  struct Scored {
    float s;
    bool pos;
  };
  std::vector<Scored> all;
  all.reserve(pos_scores.size() + neg_scores.size());
  for (float s : pos_scores) all.push_back({s, true});
  for (float s : neg_scores) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.s < b.s; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].s == all[i].s) ++j;
    double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (all[k].pos) rank_sum_pos += avg_rank;
    i = j;
  }
  double np = static_cast<double>(pos_scores.size());
  double nn = static_cast<double>(neg_scores.size());
  double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return static_cast<float>(u / (np * nn));
}

enum class Scenario { all, c_plus };

inline std::string scenario_name(Scenario s) { return s == Scenario::all ? "all" : "c_plus"; }

inline Scenario scenario_from_name(const std::string& s) {
  if (s == "all") return Scenario::all;
  if (s == "c_plus") return Scenario::c_plus;
  throw ConfigError("unknown scenario '" + s + "', expected all or c_plus");
}

// Classifier probability, its thresholded decision, and the saliency mask.
// The mask may be left undefined for classifier-negative samples; under the
// all scenario that evaluates as an empty foreground.
struct Prediction {
  float prob = 0.0f;
  bool positive = false;
  Tensor mask;
};

struct FrocPoint {
  float tau = 0.0f;
  float tpr = 0.0f;
  float fpd = 0.0f;  // false positives per relevant patient
};

struct FrocCurve {
  Problem problem = Problem::lesion;
  Scenario scenario = Scenario::all;
  std::vector<FrocPoint> points;  // tau strictly decreasing
};

// 100 thresholds 1.00, 0.99, ..., 0.01. Zero is excluded: a sigmoid mask is
// everywhere positive, so tau = 0 turns the whole image into one component
// and the curve would lose its monotonicity guarantee.
inline std::vector<float> default_tau_grid() {
  std::vector<float> taus;
  for (int i = 100; i >= 1; --i) taus.push_back(static_cast<float>(i) / 100.0f);
  return taus;
}

inline FrocCurve froc_curve(const std::vector<Sample>& samples,
                            const std::vector<Prediction>& predictions, Scenario scenario,
                            Problem problem, const std::vector<float>& taus = default_tau_grid()) {
  if (samples.size() != predictions.size())
    throw ContractError("froc_curve: got " + std::to_string(predictions.size()) +
                        " predictions for " + std::to_string(samples.size()) + " samples");
  if (taus.empty()) throw ContractError("froc_curve: tau grid is empty");
  std::vector<float> grid = taus;
  std::sort(grid.begin(), grid.end(), std::greater<float>());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0f && grid[i] <= 1.0f))
      throw ContractError("froc_curve: tau outside [0,1]");
    if (i > 0 && grid[i] == grid[i - 1]) throw ContractError("froc_curve: duplicate tau value");
  }

  // scenario filter, then per-sample relevant ground truth
  struct Entry {
    const Sample* sample;
    const Prediction* pred;
    std::vector<PixelSet> gts;
  };
  std::vector<Entry> entries;
  std::size_t total_lesions = 0;
  std::set<std::string> relevant_patients;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (scenario == Scenario::c_plus && !predictions[i].positive) continue;
    if (scenario == Scenario::c_plus && !predictions[i].mask.defined())
      throw ContractError("froc_curve: retained sample " + samples[i].id() + " lacks a mask");
    Entry e{&samples[i], &predictions[i], {}};
    for (std::size_t j = 0; j < samples[i].segmentations.size(); ++j) {
      if (problem == Problem::malignant && samples[i].seg_classes[j] != "malignant") continue;
      e.gts.push_back(tensor_pixel_set(samples[i].segmentations[j]));
    }
    if (!e.gts.empty()) relevant_patients.insert(samples[i].patient_id);
    total_lesions += e.gts.size();
    entries.push_back(std::move(e));
  }
  if (total_lesions == 0)
    throw ContractError("froc_curve: undefined rate, no relevant lesions in the evaluated set");
  if (relevant_patients.empty())
    throw ContractError("froc_curve: undefined rate, no relevant patients in the evaluated set");

  FrocCurve curve;
  curve.problem = problem;
  curve.scenario = scenario;
  for (float tau : grid) {
    std::size_t detected = 0, fps = 0;
    for (const Entry& e : entries) {
      if (!e.pred->mask.defined()) continue;  // negative under 1-class output: empty mask
      BinaryMask bm = threshold_mask(e.pred->mask, tau);
      MatchResult match = match_detections(connected_components(bm), e.gts);
      detected += match.matched_gts.size();
      fps += match.fp;
    }
    FrocPoint p;
    p.tau = tau;
    p.tpr = static_cast<float>(detected) / static_cast<float>(total_lesions);
    p.fpd = static_cast<float>(fps) / static_cast<float>(relevant_patients.size());
    curve.points.push_back(p);
  }

  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    if (curve.points[i].tpr < curve.points[i - 1].tpr ||
        curve.points[i].fpd < curve.points[i - 1].fpd)
      throw ContractError("froc_curve: curve is not monotone at tau " +
                          std::to_string(curve.points[i].tau) +
                          "; components merged across thresholds");
  }
  return curve;
}

namespace detail {

inline std::string fmt_g9(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace detail

// froc.csv: header tau,tpr,fpd; 9 significant digits round-trip f32 exactly.
inline void write_froc_csv(const FrocCurve& curve, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "tau,tpr,fpd\n";
  for (const FrocPoint& p : curve.points)
    f << detail::fmt_g9(p.tau) << ',' << detail::fmt_g9(p.tpr) << ',' << detail::fmt_g9(p.fpd)
      << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

inline FrocCurve read_froc_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "tau,tpr,fpd")
    throw IoError("bad header in " + path.string());
  FrocCurve curve;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    FrocPoint p;
    if (std::sscanf(line.c_str(), "%f,%f,%f", &p.tau, &p.tpr, &p.fpd) != 3)
      throw IoError("bad row in " + path.string() + ": " + line);
    curve.points.push_back(p);
  }
  return curve;
}

// Standalone SVG: axes with ticks, TPR over false positives per patient.
inline void write_froc_svg(const FrocCurve& curve, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");

  const float W = 640, H = 480, ml = 70, mr = 20, mt = 40, mb = 60;
  const float pw = W - ml - mr, ph = H - mt - mb;
  float max_fpd = 0.0f;
  for (const FrocPoint& p : curve.points) max_fpd = std::max(max_fpd, p.fpd);
  if (max_fpd <= 0.0f) max_fpd = 1.0f;

  auto sx = [&](float fpd) { return ml + pw * (fpd / max_fpd); };
  auto sy = [&](float tpr) { return mt + ph * (1.0f - tpr); };

  f << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  f << "  <rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  f << "  <text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\">FROC (" << problem_name(curve.problem) << ", "
    << scenario_name(curve.scenario) << ")</text>\n";
  // axes
  f << "  <line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
    << mt + ph << "\" stroke=\"black\"/>\n";
  f << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    float fx = max_fpd * static_cast<float>(i) / 5.0f;
    float ty = static_cast<float>(i) / 5.0f;
    f << "  <line x1=\"" << sx(fx) << "\" y1=\"" << mt + ph << "\" x2=\"" << sx(fx) << "\" y2=\""
      << mt + ph + 5 << "\" stroke=\"black\"/>\n";
    f << "  <text x=\"" << sx(fx) << "\" y=\"" << mt + ph + 20
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
      << detail::fmt_g9(std::round(fx * 100.0f) / 100.0f) << "</text>\n";
    f << "  <line x1=\"" << ml - 5 << "\" y1=\"" << sy(ty) << "\" x2=\"" << ml << "\" y2=\""
      << sy(ty) << "\" stroke=\"black\"/>\n";
    f << "  <text x=\"" << ml - 9 << "\" y=\"" << sy(ty) + 4
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << detail::fmt_g9(ty) << "</text>\n";
  }
  f << "  <text x=\"" << ml + pw / 2 << "\" y=\"" << H - 16
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">false positives "
       "per patient</text>\n";
  f << "  <text x=\"18\" y=\"" << mt + ph / 2
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 "
       "18 " << mt + ph / 2 << ")\">true positive rate</text>\n";
  if (!curve.points.empty()) {
    f << "  <polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"";
    for (const FrocPoint& p : curve.points) f << sx(p.fpd) << ',' << sy(p.tpr) << ' ';
    f << "\"/>\n";
  }
  f << "</svg>\n";
  if (!f) throw IoError("failed writing " + path.string());
}

inline void emit_results(const FrocCurve& curve, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_froc_csv(curve, dir / "froc.csv");
  write_froc_svg(curve, dir / "froc.svg");
}

}  // namespace masd

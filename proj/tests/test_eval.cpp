#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "masd/eval.hpp"
#include "masd/rng.hpp"
#include "masd/synth.hpp"

using namespace masd;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "masd_eval_tests" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Independent component oracle: breadth-first flood fill.
std::vector<PixelSet> flood_fill_components(const BinaryMask& mask) {
  std::vector<bool> seen(mask.h * mask.w, false);
  std::vector<PixelSet> out;
  for (std::size_t start = 0; start < mask.bits.size(); ++start) {
    if (!mask.bits[start] || seen[start]) continue;
    PixelSet comp;
    std::deque<std::size_t> frontier{start};
    seen[start] = true;
    while (!frontier.empty()) {
      std::size_t i = frontier.front();
      frontier.pop_front();
      comp.push_back(i);
      std::size_t r = i / mask.w, c = i % mask.w;
      const std::size_t nbr[4][2] = {{r, c + 1}, {r + 1, c}, {r, c - 1}, {r - 1, c}};
      for (auto [nr, nc] : nbr) {
        if (nr >= mask.h || nc >= mask.w) continue;  // unsigned wrap covers r==0/c==0
        std::size_t j = nr * mask.w + nc;
        if (mask.bits[j] && !seen[j]) {
          seen[j] = true;
          frontier.push_back(j);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<PixelSet> canonical(std::vector<PixelSet> comps) {
  for (PixelSet& c : comps) std::sort(c.begin(), c.end());
  std::sort(comps.begin(), comps.end());
  return comps;
}

BinaryMask mask_from_bits(std::size_t h, std::size_t w, const std::vector<int>& bits) {
  BinaryMask m;
  m.shape = {h, w};
  m.h = h;
  m.w = w;
  for (int b : bits) m.bits.push_back(static_cast<std::uint8_t>(b));
  return m;
}

Tensor binary_tensor(std::size_t h, std::size_t w, const std::vector<std::size_t>& on_pixels) {
  std::vector<float> vals(h * w, 0.0f);
  for (std::size_t i : on_pixels) vals[i] = 1.0f;
  return Tensor::from_data({1, h, w}, std::move(vals));
}

// Independent equal-error-rate oracle: same candidate definition, naive
// counting, written without reference to the library routine.
std::pair<float, float> eer_scan_oracle(std::vector<float> pos, std::vector<float> neg) {
  std::vector<float> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<float> cands{all.front() - 1.0f, all.back() + 1.0f};
  for (std::size_t i = 0; i + 1 < all.size(); ++i) cands.push_back((all[i] + all[i + 1]) / 2.0f);
  std::sort(cands.begin(), cands.end());

  double best_gap = 2.0;
  float best_t = 0.0f;
  double best_eer = 0.0;
  for (float t : cands) {
    double fpr = static_cast<double>(std::count_if(neg.begin(), neg.end(),
                                                   [&](float s) { return s > t; })) /
                 static_cast<double>(neg.size());
    double fnr = static_cast<double>(std::count_if(pos.begin(), pos.end(),
                                                   [&](float s) { return s <= t; })) /
                 static_cast<double>(pos.size());
    if (std::fabs(fpr - fnr) < best_gap - 1e-12) {
      best_gap = std::fabs(fpr - fnr);
      best_t = t;
      best_eer = (fpr + fnr) / 2.0;
    }
  }
  return {best_t, static_cast<float>(best_eer)};
}

}  // namespace

TEST_CASE("mask thresholding is strict") {
  Tensor m = Tensor::from_data({1, 2, 2}, {0.2f, 0.5f, 0.7f, 1.0f});

  BinaryMask all_on = threshold_mask(m, 0.0f);
  CHECK(all_on.bits == std::vector<std::uint8_t>{1, 1, 1, 1});

  BinaryMask at_half = threshold_mask(m, 0.5f);
  CHECK(at_half.bits == std::vector<std::uint8_t>{0, 0, 1, 1});  // 0.5 > 0.5 is false

  BinaryMask at_one = threshold_mask(m, 1.0f);
  CHECK(at_one.bits == std::vector<std::uint8_t>{0, 0, 0, 0});

  CHECK(at_half.shape == m.shape());
  CHECK(at_half.h == 2);
  CHECK(at_half.w == 2);

  CHECK_THROWS_AS(threshold_mask(m, -0.01f), ContractError);
  CHECK_THROWS_AS(threshold_mask(m, 1.01f), ContractError);
  CHECK_THROWS_AS(threshold_mask(Tensor::from_data({4}, {0, 0, 0, 0}), 0.5f), ShapeError);
  CHECK_THROWS_AS(threshold_mask(Tensor::zeros({2, 1, 3, 3}), 0.5f), ShapeError);
}

TEST_CASE("connected components agree with a flood-fill oracle on every 4x4 mask") {
  for (unsigned code = 0; code < 65536; ++code) {
    std::vector<int> bits(16);
    for (int i = 0; i < 16; ++i) bits[static_cast<std::size_t>(i)] = (code >> i) & 1;
    BinaryMask m = mask_from_bits(4, 4, bits);
    auto got = canonical(connected_components(m));
    auto want = flood_fill_components(m);
    if (got != want) {  // avoid 65k passing REQUIREs
      INFO("mask code " << code);
      REQUIRE(got == want);
    }
  }
  SUCCEED("all 65536 masks matched");
}

TEST_CASE("connected components basics") {
  CHECK(connected_components(mask_from_bits(3, 3, {0, 0, 0, 0, 0, 0, 0, 0, 0})).empty());

  auto solid = connected_components(mask_from_bits(2, 3, {1, 1, 1, 1, 1, 1}));
  REQUIRE(solid.size() == 1);
  CHECK(solid[0].size() == 6);

  // diagonal touch only: two components under 4-connectivity
  auto diag = connected_components(mask_from_bits(2, 2, {1, 0, 0, 1}));
  CHECK(diag.size() == 2);

  // components ordered by first pixel, union covers the foreground
  auto two = connected_components(mask_from_bits(1, 5, {1, 1, 0, 1, 0}));
  REQUIRE(two.size() == 2);
  CHECK(two[0] == PixelSet{0, 1});
  CHECK(two[1] == PixelSet{3});
}

TEST_CASE("dice scores") {
  PixelSet a{1, 2, 3, 4}, b{3, 4, 5, 6};
  CHECK(dice(a, a) == 1.0f);
  CHECK(dice(a, {9, 10}) == 0.0f);
  CHECK(dice(a, b) == 0.5f);  // overlap 2 of 4+4
  CHECK(dice({}, {}) == 0.0f);
  CHECK(dice({}, a) == 0.0f);
}

TEST_CASE("detection matching follows the dice rule") {
  PixelSet gt0{0, 1, 2, 3}, gt1{10, 11, 12, 13};

  SECTION("perfect component is a true positive") {
    auto res = match_detections({gt0}, {gt0, gt1});
    CHECK(res.tp == 1);
    CHECK(res.fp == 0);
    CHECK(res.matched_gts == std::set<std::size_t>{0});
    REQUIRE(res.detections.size() == 1);
    CHECK(res.detections[0].best_gt == 0);
    CHECK(res.detections[0].dice_score == 1.0f);
  }

  SECTION("no overlap is a false positive") {
    auto res = match_detections({{20, 21}}, {gt0, gt1});
    CHECK(res.tp == 0);
    CHECK(res.fp == 1);
    CHECK(res.detections[0].best_gt == -1);
  }

  SECTION("dice exactly at the minimum counts") {
    // |comp|=16, |gt|=4, overlap 2 -> dice = 4/20 = 0.2 exactly
    PixelSet comp;
    for (std::size_t i = 0; i < 14; ++i) comp.push_back(100 + i);
    comp.push_back(0);
    comp.push_back(1);
    std::sort(comp.begin(), comp.end());
    auto res = match_detections({comp}, {gt0});
    REQUIRE(res.detections[0].dice_score == 0.2f);
    CHECK(res.tp == 1);
  }

  SECTION("ties resolve to the lower ground-truth index") {
    PixelSet comp{3, 10};  // dice 2/6 with both gts
    auto res = match_detections({comp}, {gt0, gt1});
    CHECK(res.detections[0].best_gt == 0);
  }

  SECTION("one ground truth detected twice counts once") {
    PixelSet half0{0, 1}, half1{2, 3};  // each dice 4/6 with gt0
    auto res = match_detections({half0, half1}, {gt0});
    CHECK(res.tp == 2);
    CHECK(res.fp == 0);
    CHECK(res.matched_gts.size() == 1);
  }

  SECTION("tp plus fp equals component count") {
    auto res = match_detections({gt0, {50}, gt1, {60, 61}}, {gt0, gt1});
    CHECK(res.tp + res.fp == 4);
    CHECK(res.matched_gts.size() <= 2);
  }

  SECTION("dice_min outside (0,1] is rejected") {
    CHECK_THROWS_AS(match_detections({gt0}, {gt0}, 0.0f), ContractError);
    CHECK_THROWS_AS(match_detections({gt0}, {gt0}, 1.5f), ContractError);
  }
}

TEST_CASE("equal error rate on pinned examples") {
  SECTION("perfect separation") {
    auto r = compute_eer({0.8f, 0.9f}, {0.1f, 0.2f});
    CHECK(r.value == 0.0f);
    CHECK(r.threshold > 0.2f);
    CHECK(r.threshold < 0.8f);
  }
  SECTION("identical score multisets give one half") {
    auto r = compute_eer({0.3f, 0.5f, 0.7f}, {0.3f, 0.5f, 0.7f});
    CHECK_THAT(r.value, WithinAbs(0.5, 1e-7));
  }
  SECTION("mixed scores match the scan oracle") {
    std::vector<float> pos{0.9f, 0.6f, 0.4f}, neg{0.1f, 0.3f, 0.7f};
    auto r = compute_eer(pos, neg);
    auto [ot, oe] = eer_scan_oracle(pos, neg);
    CHECK(r.threshold == ot);
    CHECK(r.value == oe);
    CHECK_THAT(r.value, WithinAbs(1.0 / 3.0, 1e-6));
    CHECK_THAT(r.threshold, WithinAbs(0.5, 1e-6));
  }
  SECTION("empty sets are rejected") {
    CHECK_THROWS_AS(compute_eer({}, {0.5f}), ContractError);
    CHECK_THROWS_AS(compute_eer({0.5f}, {}), ContractError);
  }
}

TEST_CASE("equal error rate agrees with the scan oracle on random score sets") {
  Rng rng(515151);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t np = static_cast<std::size_t>(rng.uniform_int(1, 12));
    std::size_t nn = static_cast<std::size_t>(rng.uniform_int(1, 12));
    std::vector<float> pos, neg;
    // quantized scores force plenty of ties across the two sets
    for (std::size_t i = 0; i < np; ++i)
      pos.push_back(static_cast<float>(rng.uniform_int(0, 20)) / 20.0f);
    for (std::size_t i = 0; i < nn; ++i)
      neg.push_back(static_cast<float>(rng.uniform_int(0, 20)) / 20.0f);
    auto r = compute_eer(pos, neg);
    auto [ot, oe] = eer_scan_oracle(pos, neg);
    // the two midpoint formulas may differ by an ulp, so compare the decision
    // each threshold induces rather than its bits
    bool same_decisions = true;
    for (float s : pos)
      if ((s > r.threshold) != (s > ot)) same_decisions = false;
    for (float s : neg)
      if ((s > r.threshold) != (s > ot)) same_decisions = false;
    if (!same_decisions || r.value != oe) {
      INFO("trial " << trial << ": lib threshold " << r.threshold << " oracle " << ot);
      REQUIRE(same_decisions);
      REQUIRE(r.value == oe);
    }
  }
  SUCCEED("1000 random score sets matched");
}

TEST_CASE("auc is the rank statistic") {
  CHECK(compute_auc({0.8f, 0.9f}, {0.1f, 0.2f}) == 1.0f);
  CHECK(compute_auc({0.1f, 0.2f}, {0.8f, 0.9f}) == 0.0f);
  CHECK_THAT(compute_auc({0.5f, 0.5f}, {0.5f, 0.5f}), WithinAbs(0.5, 1e-7));
  // 7 of 9 pairs ordered correctly
  CHECK_THAT(compute_auc({0.9f, 0.6f, 0.4f}, {0.1f, 0.3f, 0.7f}), WithinAbs(7.0 / 9.0, 1e-6));
  CHECK_THROWS_AS(compute_auc({}, {0.5f}), ContractError);
}

namespace {

// Two-patient toy set: lesion A covered by a confident blob plus a stray
// blob, lesion B covered only faintly.
struct Toy {
  std::vector<Sample> samples;
  std::vector<Prediction> preds;
};

Toy make_toy() {
  Toy toy;
  const std::size_t hw = 8;

  Sample sa;
  sa.patient_id = "pa";
  sa.side = "left";
  sa.label = 1;
  PixelSet lesion_a{0, 1, 8, 9};  // 2x2 block top-left
  sa.segmentations.push_back(binary_tensor(hw, hw, lesion_a));
  sa.seg_classes.push_back("benign");
  sa.x = Tensor::zeros({1, hw, hw});

  Sample sb;
  sb.patient_id = "pb";
  sb.side = "left";
  sb.label = 1;
  PixelSet lesion_b{27, 28, 35, 36};
  sb.segmentations.push_back(binary_tensor(hw, hw, lesion_b));
  sb.seg_classes.push_back("benign");
  sb.x = Tensor::zeros({1, hw, hw});

  std::vector<float> ma(hw * hw, 0.0f);
  for (std::size_t i : lesion_a) ma[i] = 0.8f;  // detected at tau 0.5
  ma[54] = 0.7f;                                // isolated false positive
  std::vector<float> mb(hw * hw, 0.0f);
  for (std::size_t i : lesion_b) mb[i] = 0.3f;  // detected only below tau 0.3

  Prediction pa;
  pa.prob = 0.9f;
  pa.positive = true;
  pa.mask = Tensor::from_data({1, hw, hw}, std::move(ma));
  Prediction pb;
  pb.prob = 0.8f;
  pb.positive = true;
  pb.mask = Tensor::from_data({1, hw, hw}, std::move(mb));

  toy.samples = {sa, sb};
  toy.preds = {pa, pb};
  return toy;
}

}  // namespace

TEST_CASE("froc on a hand-built toy set") {
  Toy toy = make_toy();

  SECTION("single point recounted by hand") {
    FrocCurve c = froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion, {0.5f});
    REQUIRE(c.points.size() == 1);
    // one of two lesions detected; one FP over two lesion-bearing patients
    CHECK(c.points[0].tpr == 0.5f);
    CHECK(c.points[0].fpd == 0.5f);
  }

  SECTION("brute-force recount across a grid") {
    std::vector<float> grid{0.75f, 0.5f, 0.25f};
    FrocCurve c = froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion, grid);
    REQUIRE(c.points.size() == 3);
    for (const FrocPoint& p : c.points) {
      std::size_t detected = 0, fps = 0;
      for (std::size_t i = 0; i < toy.samples.size(); ++i) {
        auto comps = flood_fill_components(threshold_mask(toy.preds[i].mask, p.tau));
        std::set<std::size_t> hit;
        for (const PixelSet& comp : comps) {
          float best = 0.0f;
          int best_g = -1;
          for (std::size_t g = 0; g < toy.samples[i].segmentations.size(); ++g) {
            float d = dice(comp, tensor_pixel_set(toy.samples[i].segmentations[g]));
            if (d > best) {
              best = d;
              best_g = static_cast<int>(g);
            }
          }
          if (best_g >= 0 && best >= 0.2f) hit.insert(static_cast<std::size_t>(best_g));
          else ++fps;
        }
        detected += hit.size();
      }
      CHECK(p.tpr == static_cast<float>(detected) / 2.0f);
      CHECK(p.fpd == static_cast<float>(fps) / 2.0f);
    }
    // tau 0.75: lesion A detected, stray blob gone. tau 0.25: both lesions.
    CHECK(c.points[0].tpr == 0.5f);
    CHECK(c.points[0].fpd == 0.0f);
    CHECK(c.points[2].tpr == 1.0f);
    CHECK(c.points[2].fpd == 0.5f);
  }

  SECTION("tau grid of one gives the empty-mask point") {
    FrocCurve c = froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion, {1.0f});
    REQUIRE(c.points.size() == 1);
    CHECK(c.points[0].tpr == 0.0f);
    CHECK(c.points[0].fpd == 0.0f);
  }

  SECTION("c_plus with every sample positive equals all") {
    FrocCurve a = froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion);
    FrocCurve c = froc_curve(toy.samples, toy.preds, Scenario::c_plus, Problem::lesion);
    REQUIRE(a.points.size() == c.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
      CHECK(a.points[i].tpr == c.points[i].tpr);
      CHECK(a.points[i].fpd == c.points[i].fpd);
    }
  }

  SECTION("c_plus drops classifier negatives from both counts") {
    toy.preds[1].positive = false;
    toy.preds[1].mask = Tensor();  // 1-class output: no mask for negatives
    FrocCurve c = froc_curve(toy.samples, toy.preds, Scenario::c_plus, Problem::lesion, {0.5f});
    // only patient pa remains: 1 of 1 lesion, 1 FP over 1 patient
    CHECK(c.points[0].tpr == 1.0f);
    CHECK(c.points[0].fpd == 1.0f);

    // under all, the missing mask just contributes nothing
    FrocCurve a = froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion, {0.25f});
    CHECK(a.points[0].tpr == 0.5f);
  }

  SECTION("undefined rates are rejected") {
    for (Sample& s : toy.samples) {
      s.label = 0;
      s.segmentations.clear();
      s.seg_classes.clear();
    }
    CHECK_THROWS_MATCHES(
        froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion, {0.5f}), ContractError,
        Catch::Matchers::MessageMatches(ContainsSubstring("undefined rate")));
  }

  SECTION("malignant problem ignores benign lesions as ground truth") {
    // give sample A a malignant lesion; sample B keeps only a benign one
    Sample& sa = toy.samples[0];
    sa.label = 2;
    sa.seg_classes[0] = "malignant";
    FrocCurve c = froc_curve(toy.samples, toy.preds, Scenario::all, Problem::malignant, {0.25f});
    REQUIRE(c.points.size() == 1);
    // one malignant lesion total, detected; pb's component overlaps only a
    // benign lesion so it is a false positive; one malignant patient
    CHECK(c.points[0].tpr == 1.0f);
    CHECK(c.points[0].fpd == 2.0f);
  }

  SECTION("input validation") {
    CHECK_THROWS_AS(
        froc_curve(toy.samples, {toy.preds[0]}, Scenario::all, Problem::lesion, {0.5f}),
        ContractError);
    CHECK_THROWS_AS(froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion, {}),
                    ContractError);
    CHECK_THROWS_AS(
        froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion, {0.5f, 0.5f}),
        ContractError);
    CHECK_THROWS_AS(
        froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion, {1.25f}),
        ContractError);
    toy.preds[0].positive = true;
    toy.preds[0].mask = Tensor();
    CHECK_THROWS_MATCHES(
        froc_curve(toy.samples, toy.preds, Scenario::c_plus, Problem::lesion, {0.5f}),
        ContractError, Catch::Matchers::MessageMatches(ContainsSubstring("lacks a mask")));
  }
}

TEST_CASE("froc detects monotonicity violations from merging components") {
  const std::size_t hw = 8;
  Sample s;
  s.patient_id = "pm";
  s.side = "left";
  s.label = 1;
  PixelSet gt0{8, 9}, gt1{12, 13};  // two lesions on row 1 with a gap
  s.segmentations.push_back(binary_tensor(hw, hw, gt0));
  s.segmentations.push_back(binary_tensor(hw, hw, gt1));
  s.seg_classes = {"benign", "benign"};
  s.x = Tensor::zeros({1, hw, hw});

  std::vector<float> m(hw * hw, 0.0f);
  for (std::size_t i : gt0) m[i] = 0.8f;
  for (std::size_t i : gt1) m[i] = 0.8f;
  m[10] = 0.4f;  // bridge pixels appear at low tau and fuse the blobs
  m[11] = 0.4f;
  Prediction p;
  p.prob = 1.0f;
  p.positive = true;
  p.mask = Tensor::from_data({1, hw, hw}, std::move(m));

  // high tau: both lesions detected separately; low tau: one merged component
  // can only claim its best match, so TPR would fall
  CHECK_THROWS_MATCHES(
      froc_curve({s}, {p}, Scenario::all, Problem::lesion, {0.5f, 0.3f}), ContractError,
      Catch::Matchers::MessageMatches(ContainsSubstring("not monotone")));
}

TEST_CASE("froc results round-trip through csv and svg") {
  Toy toy = make_toy();
  FrocCurve c = froc_curve(toy.samples, toy.preds, Scenario::all, Problem::lesion);
  fs::path dir = temp_dir("emit");
  emit_results(c, dir);

  SECTION("csv matches the curve bit for bit") {
    FrocCurve back = read_froc_csv(dir / "froc.csv");
    REQUIRE(back.points.size() == c.points.size());
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      CHECK(back.points[i].tau == c.points[i].tau);
      CHECK(back.points[i].tpr == c.points[i].tpr);
      CHECK(back.points[i].fpd == c.points[i].fpd);
    }

    std::ifstream f(dir / "froc.csv");
    std::string header;
    std::getline(f, header);
    CHECK(header == "tau,tpr,fpd");
    std::size_t rows = 0;
    for (std::string line; std::getline(f, line);)
      if (!line.empty()) ++rows;
    CHECK(rows == c.points.size());
  }

  SECTION("svg is well-formed") {
    std::ifstream f(dir / "froc.svg", std::ios::binary);
    std::string svg((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    REQUIRE(!svg.empty());
    CHECK(svg.rfind("<?xml", 0) == 0);
    CHECK_THAT(svg, ContainsSubstring("<svg"));
    CHECK_THAT(svg, ContainsSubstring("polyline"));
    CHECK_THAT(svg, ContainsSubstring("true positive rate"));
    CHECK_THAT(svg, ContainsSubstring("false positives per patient"));

    // minimal XML well-formedness: tags balance, one root element
    std::vector<std::string> stack;
    std::size_t roots = 0;
    std::size_t i = 0;
    bool valid = true;
    while (i < svg.size() && valid) {
      if (svg[i] != '<') {
        ++i;
        continue;
      }
      std::size_t end = svg.find('>', i);
      if (end == std::string::npos) {
        valid = false;
        break;
      }
      std::string tag = svg.substr(i + 1, end - i - 1);
      if (!tag.empty() && tag.front() == '?') {
        // declaration
      } else if (!tag.empty() && tag.front() == '/') {
        std::string name = tag.substr(1);
        if (stack.empty() || stack.back() != name) valid = false;
        else {
          stack.pop_back();
          if (stack.empty()) ++roots;
        }
      } else if (!tag.empty() && tag.back() == '/') {
        if (stack.empty()) ++roots;
      } else {
        std::string name = tag.substr(0, tag.find_first_of(" \t\n"));
        stack.push_back(name);
      }
      i = end + 1;
    }
    CHECK(valid);
    CHECK(stack.empty());
    CHECK(roots == 1);
  }

  SECTION("io failures name the path") {
    CHECK_THROWS_MATCHES(write_froc_csv(c, dir / "nope" / "froc.csv"), IoError,
                         Catch::Matchers::MessageMatches(ContainsSubstring("froc.csv")));
  }
}

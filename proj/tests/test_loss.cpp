#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "masd/gradcheck.hpp"
#include "masd/loss.hpp"
#include "masd/net.hpp"
#include "masd/rng.hpp"

using namespace masd;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig cfg;
  cfg.stem_width = 2;
  cfg.growth = 2;
  cfg.block_layers = 1;
  cfg.num_blocks = 2;
  cfg.head_width = 4;
  return cfg;
}

ParamSet seeded_params(const EncoderConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  return init_params(encoder_param_specs(cfg), rng);
}

// Zeroing the head makes the logit exactly 0, so the probability is exactly
// sigmoid(0) = 0.5 for every input.
ParamSet constant_half_params(const EncoderConfig& cfg, std::uint64_t seed) {
  ParamSet params = seeded_params(cfg, seed);
  for (const char* name : {"enc.head.w", "enc.head.b"}) {
    Tensor t = param(params, name);
    for (float& v : t.mut_data()) v = 0.0f;
  }
  return params;
}

Tensor random_mask(Rng& rng, std::size_t n, std::size_t hw, bool requires_grad = false) {
  std::vector<float> vals(n * hw * hw);
  for (auto& v : vals) v = rng.uniform(0.05f, 0.95f);
  return Tensor::from_data({n, 1, hw, hw}, std::move(vals), requires_grad);
}

Tensor random_image(Rng& rng, std::size_t n, std::size_t hw) {
  std::vector<float> vals(n * hw * hw);
  for (auto& v : vals) v = rng.uniform();
  return Tensor::from_data({n, 1, hw, hw}, std::move(vals));
}

}  // namespace

TEST_CASE("mask_apply multiplies the mask into every channel") {
  Tape tape;
  Tensor x = Tensor::from_data({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});

  Tensor ones = Tensor::full({1, 1, 2, 2}, 1.0f);
  CHECK(mask_apply(tape, ones, x).bitwise_equal(x));

  Tensor zeros = Tensor::zeros({1, 1, 2, 2});
  Tensor blanked = mask_apply(tape, zeros, x);
  for (float v : blanked.data()) CHECK(v == 0.0f);

  Tensor half = Tensor::full({1, 1, 2, 2}, 0.5f);
  Tensor twos = Tensor::full({1, 1, 2, 2}, 2.0f);
  Tensor halved = mask_apply(tape, half, twos);
  for (float v : halved.data()) CHECK(v == 1.0f);

  Tensor wrong = Tensor::zeros({1, 1, 3, 2});
  CHECK_THROWS_AS(mask_apply(tape, wrong, x), ShapeError);
  Tensor two_channel_mask = Tensor::zeros({1, 2, 2, 2});
  CHECK_THROWS_AS(mask_apply(tape, two_channel_mask, x), ShapeError);
}

TEST_CASE("mask_apply gradients agree with finite differences") {
  Rng rng(4001);
  Tensor m = random_mask(rng, 2, 4, true);
  std::vector<float> xv(2 * 3 * 16);
  for (auto& v : xv) v = rng.uniform(-1.0f, 1.0f);
  Tensor x = Tensor::from_data({2, 3, 4, 4}, std::move(xv), true);
  auto f = [&](Tape& t) {
    Tensor y = mask_apply(t, m, x);
    return reduce_mean(t, ew_mul(t, y, y), all_axes(y));
  };
  auto rep = gradient_check(f, {m, x});
  INFO("max_rel_err=" << rep.max_rel_err);
  CHECK(rep.passed);
}

TEST_CASE("tv_loss on the pinned 2x2 example") {
  Tape tape;
  // [[0,1],[0,1]]: no vertical change, two horizontal steps of 1, over 4 px
  Tensor m = Tensor::from_data({1, 1, 2, 2}, {0, 1, 0, 1});
  CHECK(tv_loss(tape, m).value() == 0.5f);
}

TEST_CASE("tv_loss is zero exactly for constant masks") {
  Tape tape;
  CHECK(tv_loss(tape, Tensor::full({2, 1, 5, 7}, 0.37f)).value() == 0.0f);
  // any single deviation makes it positive
  Tensor m = Tensor::full({1, 1, 5, 7}, 0.37f);
  m.mut_data()[17] = 0.38f;
  CHECK(tv_loss(tape, m).value() > 0.0f);
}

TEST_CASE("tv_loss is invariant under flips") {
  Rng rng(4002);
  std::size_t H = 6, W = 5;
  std::vector<float> vals(H * W);
  for (auto& v : vals) v = rng.uniform();
  Tensor base = Tensor::from_data({1, 1, H, W}, vals);
  std::vector<float> hflip(H * W), vflip(H * W);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) {
      hflip[h * W + (W - 1 - w)] = vals[h * W + w];
      vflip[(H - 1 - h) * W + w] = vals[h * W + w];
    }
  Tape tape;
  float ref = tv_loss(tape, base).value();
  CHECK_THAT(tv_loss(tape, Tensor::from_data({1, 1, H, W}, hflip)).value(),
             Catch::Matchers::WithinRel(ref, 1e-6f));
  CHECK_THAT(tv_loss(tape, Tensor::from_data({1, 1, H, W}, vflip)).value(),
             Catch::Matchers::WithinRel(ref, 1e-6f));
}

TEST_CASE("tv_loss rejects degenerate masks") {
  Tape tape;
  CHECK_THROWS_AS(tv_loss(tape, Tensor::zeros({1, 1, 1, 1})), ContractError);
  CHECK_THROWS_AS(tv_loss(tape, Tensor::zeros({1, 1, 1, 8})), ContractError);
  CHECK_THROWS_AS(tv_loss(tape, Tensor::zeros({1, 2, 4, 4})), ShapeError);
}

TEST_CASE("tv_loss gradients agree with finite differences") {
  Rng rng(4003);
  Tensor m = random_mask(rng, 2, 6, true);
  auto f = [&](Tape& t) { return tv_loss(t, m); };
  auto rep = gradient_check(f, {m});
  INFO("max_rel_err=" << rep.max_rel_err);
  CHECK(rep.passed);
}

TEST_CASE("area_loss fixed values and monotonicity") {
  Tape tape;
  CHECK(area_loss(tape, Tensor::zeros({2, 1, 4, 4})).value() == 0.0f);
  CHECK(area_loss(tape, Tensor::full({2, 1, 4, 4}, 1.0f)).value() == 1.0f);
  std::vector<float> half(16, 0.0f);
  std::fill(half.begin(), half.begin() + 8, 1.0f);
  CHECK(area_loss(tape, Tensor::from_data({1, 1, 4, 4}, half)).value() == 0.5f);

  Rng rng(4004);
  Tensor m = random_mask(rng, 2, 4);
  float before = area_loss(tape, m).value();
  m.mut_data()[9] += 0.03f;
  CHECK(area_loss(tape, m).value() > before);

  Tensor g = random_mask(rng, 1, 4, true);
  auto f = [&](Tape& t) { return area_loss(t, g); };
  CHECK(gradient_check(f, {g}).passed);
}

TEST_CASE("preserve_loss equals its composition written out") {
  EncoderConfig cfg = tiny_encoder();
  ParamSet params = seeded_params(cfg, 4005);
  Rng rng(4006);
  Tensor m = random_mask(rng, 3, 8);
  Tensor x = random_image(rng, 3, 8);
  Tape tape;
  float got = preserve_loss(tape, m, x, cfg, params).value();

  Tape oracle_tape;
  Tensor masked = mask_apply(oracle_tape, m, x);
  Tensor prob = encoder_forward(oracle_tape, cfg, params, masked, Mode::eval).prob;
  double expect = 0.0;
  for (float p : prob.data()) expect += std::log(static_cast<double>(p) + 1e-8);
  expect /= prob.numel();
  CHECK_THAT(got, Catch::Matchers::WithinAbs(expect, 1e-6));
}

TEST_CASE("preserve_loss on a constant-half classifier is log one-half") {
  EncoderConfig cfg = tiny_encoder();
  ParamSet params = constant_half_params(cfg, 4007);
  Rng rng(4008);
  Tensor m = random_mask(rng, 2, 8);
  Tensor x = random_image(rng, 2, 8);
  Tape tape;
  CHECK_THAT(preserve_loss(tape, m, x, cfg, params).value(),
             Catch::Matchers::WithinAbs(std::log(0.5), 1e-5));
}

TEST_CASE("destroy_loss matches its composition and stays a probability") {
  EncoderConfig cfg = tiny_encoder();
  ParamSet params = seeded_params(cfg, 4009);
  Rng rng(4010);
  Tensor m = random_mask(rng, 3, 8);
  Tensor x = random_image(rng, 3, 8);
  Tape tape;
  float got = destroy_loss(tape, m, x, cfg, params).value();
  CHECK(got >= 0.0f);
  CHECK(got <= 1.0f);

  Tape oracle_tape;
  Tensor inv = ew_sub(oracle_tape, Tensor::full(m.shape(), 1.0f), m);
  Tensor masked = mask_apply(oracle_tape, inv, x);
  Tensor prob = encoder_forward(oracle_tape, cfg, params, masked, Mode::eval).prob;
  double expect = 0.0;
  for (float p : prob.data()) expect += p;
  expect /= prob.numel();
  CHECK_THAT(got, Catch::Matchers::WithinAbs(expect, 1e-6));

  // full mask removes everything: the destroyed input is all zero
  Tensor full_mask = Tensor::full(m.shape(), 1.0f);
  Tensor zeros = Tensor::zeros(x.shape());
  Tape t2;
  float on_zero =
      detail::mean_value(encoder_forward(t2, cfg, params, zeros, Mode::eval).prob);
  CHECK_THAT(destroy_loss(t2, full_mask, x, cfg, params).value(),
             Catch::Matchers::WithinAbs(on_zero, 1e-6));
}

TEST_CASE("total_loss reproduces the pinned recombination example") {
  // engineered batch: tv 0.5, area 0.25, constant-half classifier, y=1
  EncoderConfig cfg = tiny_encoder();
  ParamSet params = constant_half_params(cfg, 4011);
  std::vector<float> mv(16, 0.0f);
  for (std::size_t h : {1, 2})
    for (std::size_t w : {1, 2}) mv[h * 4 + w] = 1.0f;
  Tensor m = Tensor::from_data({1, 1, 4, 4}, mv);
  Rng rng(4012);
  Tensor x = random_image(rng, 1, 4);
  LossWeights w;  // 0.1, 2, 0.3, 2

  Tape tape;
  LossResult res = total_loss(tape, m, x, {1}, w, cfg, params);
  CHECK(res.breakdown.tv == 0.5f);
  CHECK(res.breakdown.area == 0.25f);
  CHECK_THAT(res.breakdown.preserve, Catch::Matchers::WithinAbs(std::log(0.5), 1e-5));
  CHECK_THAT(res.breakdown.destroy, Catch::Matchers::WithinAbs(0.5, 1e-6));
  CHECK_THAT(res.breakdown.total, Catch::Matchers::WithinAbs(1.7579, 5e-4));
  CHECK(res.breakdown.recombine(w) == res.breakdown.total);
  CHECK(res.total.value() == res.breakdown.total);
}

TEST_CASE("total_loss recombines for random weights") {
  EncoderConfig cfg = tiny_encoder();
  ParamSet params = seeded_params(cfg, 4013);
  Rng rng(4014);
  Tensor m = random_mask(rng, 3, 8);
  Tensor x = random_image(rng, 3, 8);
  for (int trial = 0; trial < 5; ++trial) {
    LossWeights w;
    w.lambda1 = rng.uniform(0.0f, 3.0f);
    w.lambda2 = rng.uniform(0.0f, 3.0f);
    w.lambda3 = rng.uniform(0.0f, 3.0f);
    w.lambda4 = rng.uniform(0.0f, 3.0f);
    Tape tape;
    LossResult res = total_loss(tape, m, x, {1, 1, 1}, w, cfg, params);
    CHECK_THAT(res.breakdown.recombine(w), Catch::Matchers::WithinAbs(res.breakdown.total, 1e-6));
    // all labels one: the gate changes nothing
    CHECK(res.breakdown.gated_preserve == res.breakdown.preserve);
    CHECK(res.breakdown.gated_destroy == res.breakdown.destroy);
  }
}

TEST_CASE("total_loss with negative labels ignores input and classifier bit for bit") {
  EncoderConfig cfg = tiny_encoder();
  Rng rng(4015);
  Tensor m = random_mask(rng, 2, 8);
  Tensor x1 = random_image(rng, 2, 8);
  Tensor x2 = random_image(rng, 2, 8);
  LossWeights w;
  Tape t1, t2;
  LossResult r1 = total_loss(t1, m, x1, {0, 0}, w, cfg, seeded_params(cfg, 1));
  LossResult r2 = total_loss(t2, m, x2, {0, 0}, w, cfg, seeded_params(cfg, 2));
  CHECK(r1.breakdown.total == r2.breakdown.total);
  CHECK(std::bit_cast<std::uint32_t>(r1.breakdown.total) ==
        std::bit_cast<std::uint32_t>(r2.breakdown.total));
  // exactly the two mask-only terms
  float expect = w.lambda1 * r1.breakdown.tv + w.lambda2 * r1.breakdown.area;
  CHECK(r1.breakdown.total == expect);
  // classifier terms are still reported
  CHECK(r1.breakdown.preserve != 0.0f);
  CHECK(r1.breakdown.destroy != 0.0f);
}

TEST_CASE("total_loss validates labels") {
  EncoderConfig cfg = tiny_encoder();
  ParamSet params = seeded_params(cfg, 4016);
  Rng rng(4017);
  Tensor m = random_mask(rng, 2, 8);
  Tensor x = random_image(rng, 2, 8);
  LossWeights w;
  Tape tape;
  CHECK_THROWS_AS(total_loss(tape, m, x, {1, 2}, w, cfg, params), ContractError);
  CHECK_THROWS_AS(total_loss(tape, m, x, {1}, w, cfg, params), ContractError);
  CHECK_THROWS_AS(total_loss(tape, m, x, {0, -1}, w, cfg, params), ContractError);
}

TEST_CASE("total_loss honors ablation toggles") {
  EncoderConfig cfg = tiny_encoder();
  ParamSet params = seeded_params(cfg, 4018);
  Rng rng(4019);
  Tensor m = random_mask(rng, 2, 8);
  Tensor x = random_image(rng, 2, 8);

  SECTION("single term disabled drops out of value and report") {
    LossWeights w;
    w.enable_destroy = false;
    Tape tape;
    LossResult res = total_loss(tape, m, x, {1, 1}, w, cfg, params);
    CHECK(res.breakdown.destroy == 0.0f);
    CHECK(res.breakdown.gated_destroy == 0.0f);
    CHECK(res.breakdown.recombine(w) == res.breakdown.total);
    LossWeights all;
    Tape t2;
    LossResult full = total_loss(t2, m, x, {1, 1}, all, cfg, params);
    CHECK(res.breakdown.total != full.breakdown.total);
  }
  SECTION("all terms disabled gives zero with zero gradient") {
    LossWeights w;
    w.enable_tv = w.enable_area = w.enable_preserve = w.enable_destroy = false;
    Tensor z = random_mask(rng, 1, 8, true);
    Tape tape;
    Tensor mask = sigmoid(tape, z);
    LossResult res = total_loss(tape, mask, x, {1}, w, cfg, params);
    CHECK(res.breakdown.total == 0.0f);
    tape.backward(res.total);
    // nothing flowed back: grads stay absent or all zero
    if (z.has_grad())
      for (float g : z.grad()) CHECK(g == 0.0f);
  }
}

TEST_CASE("total_loss mask gradients match finite differences for both labels") {
  EncoderConfig cfg = tiny_encoder();
  ParamSet params = seeded_params(cfg, 4020);
  set_params_trainable(params, "enc.", false);
  Rng rng(4021);
  Tensor x = random_image(rng, 1, 16);
  LossWeights w;

  for (int label : {0, 1}) {
    Tensor m = random_mask(rng, 1, 16, true);
    auto f = [&](Tape& t) {
      return total_loss(t, m, x, {label}, w, cfg, params).total;
    };
    auto rep = gradient_check(f, {m}, 1e-3f, 1e-2f);
    INFO("label=" << label << " max_rel_err=" << rep.max_rel_err << " analytic "
                  << rep.worst_analytic << " numeric " << rep.worst_numeric);
    CHECK(rep.passed);
  }
}

TEST_CASE("total_loss under destroy_log uses the log form") {
  EncoderConfig cfg = tiny_encoder();
  ParamSet params = constant_half_params(cfg, 4022);
  Rng rng(4023);
  Tensor m = random_mask(rng, 1, 8);
  Tensor x = random_image(rng, 1, 8);
  LossWeights w;
  w.destroy_log = true;
  Tape tape;
  LossResult res = total_loss(tape, m, x, {1}, w, cfg, params);
  CHECK_THAT(res.breakdown.destroy, Catch::Matchers::WithinAbs(std::log(0.5), 1e-5));
}

TEST_CASE("loss weights reject negative lambdas") {
  LossWeights w;
  w.lambda3 = -0.1f;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

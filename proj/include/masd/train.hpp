#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "masd/adam.hpp"
#include "masd/checkpoint.hpp"
#include "masd/digest.hpp"
#include "masd/errors.hpp"
#include "masd/eval.hpp"
#include "masd/loss.hpp"
#include "masd/net.hpp"
#include "masd/ops.hpp"
#include "masd/synth.hpp"
#include "masd/tape.hpp"

// Two training phases. Phase 1 fits the classifier with binary cross-entropy
// on weak labels. Phase 2 freezes the encoder bit for bit and fits only the
// decoder under the masking objective. Both are deterministic in the seed.

namespace masd {

struct TrainConfig {
  Problem problem = Problem::lesion;
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;
  LossWeights loss;  // phase 2 objective
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;  // validate (and consider a checkpoint) every k epochs

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be at least 1");
    if (batch_size < 2) throw ConfigError("train: batch size must be at least 2");
    if (lr < 0.0f) throw ConfigError("train: learning rate must be non-negative");
    if (eval_every < 1) throw ConfigError("train: eval_every must be at least 1");
    AdamConfig a{lr, beta1, beta2, eps, weight_decay};
    a.validate();
    loss.validate();
  }

  AdamConfig adam() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

struct ClassifierEval {
  std::size_t epoch = 0;  // 1-based
  float loss = 0.0f;
  float auc = 0.0f;
};

struct SaliencyEval {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown breakdown;
};

struct TrainReport {
  std::string kind;  // "classifier" | "saliency"
  std::vector<float> train_loss;             // one entry per epoch run
  std::vector<ClassifierEval> val_classifier;
  std::vector<SaliencyEval> val_saliency;
  float eer_threshold = 0.0f;  // phase 1 only
  float eer_value = 0.0f;
  std::size_t best_epoch = 0;       // 1-based epoch of the retained checkpoint
  std::size_t rejected_steps = 0;   // optimizer steps skipped on non-finite gradients
  double wall_clock_seconds = 0.0;  // excluded from determinism comparisons

  // everything except the wall clock, which two identical runs cannot share
  bool same_outcome(const TrainReport& o) const {
    if (kind != o.kind || train_loss != o.train_loss || best_epoch != o.best_epoch ||
        rejected_steps != o.rejected_steps ||
        eer_threshold != o.eer_threshold || eer_value != o.eer_value ||
        val_classifier.size() != o.val_classifier.size() ||
        val_saliency.size() != o.val_saliency.size())
      return false;
    for (std::size_t i = 0; i < val_classifier.size(); ++i) {
      const ClassifierEval &a = val_classifier[i], &b = o.val_classifier[i];
      if (a.epoch != b.epoch || a.loss != b.loss || a.auc != b.auc) return false;
    }
    for (std::size_t i = 0; i < val_saliency.size(); ++i) {
      const SaliencyEval &a = val_saliency[i], &b = o.val_saliency[i];
      const LossBreakdown &x = a.breakdown, &y = b.breakdown;
      if (a.epoch != b.epoch || x.tv != y.tv || x.area != y.area || x.preserve != y.preserve ||
          x.destroy != y.destroy || x.gated_preserve != y.gated_preserve ||
          x.gated_destroy != y.gated_destroy || x.total != y.total)
        return false;
    }
    return true;
  }
};

inline nlohmann::json train_report_to_json(const TrainReport& r) {
  nlohmann::json j;
  j["kind"] = r.kind;
  j["train_loss"] = r.train_loss;
  j["best_epoch"] = r.best_epoch;
  j["rejected_steps"] = r.rejected_steps;
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  if (r.kind == "classifier") {
    nlohmann::json evals = nlohmann::json::array();
    for (const ClassifierEval& e : r.val_classifier)
      evals.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"auc", e.auc}});
    j["val"] = std::move(evals);
    j["eer_threshold"] = r.eer_threshold;
    j["eer_value"] = r.eer_value;
  } else {
    nlohmann::json evals = nlohmann::json::array();
    for (const SaliencyEval& e : r.val_saliency) {
      const LossBreakdown& b = e.breakdown;
      evals.push_back({{"epoch", e.epoch},
                       {"tv", b.tv},
                       {"area", b.area},
                       {"preserve", b.preserve},
                       {"destroy", b.destroy},
                       {"gated_preserve", b.gated_preserve},
                       {"gated_destroy", b.gated_destroy},
                       {"total", b.total}});
    }
    j["val"] = std::move(evals);
  }
  return j;
}

struct TrainOutcome {
  Checkpoint checkpoint;
  TrainReport report;
};

namespace detail {

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

inline SplitIndices split_indices(const DatasetManifest& manifest) {
  SplitIndices s;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const std::string& sp = manifest.records[i].split;
    (sp == "train" ? s.train : sp == "val" ? s.val : s.test).push_back(i);
  }
  return s;
}

// Stack (1,H,W) sample images into an (N,1,H,W) batch.
inline Tensor make_batch(const std::vector<Sample>& samples,
                         const std::vector<std::size_t>& indices, std::size_t from,
                         std::size_t to) {
  std::size_t n = to - from;
  const Tensor& first = samples[indices[from]].x;
  std::size_t h = first.extent(1), w = first.extent(2);
  std::vector<float> vals;
  vals.reserve(n * h * w);
  for (std::size_t i = from; i < to; ++i) {
    auto d = samples[indices[i]].x.data();
    vals.insert(vals.end(), d.begin(), d.end());
  }
  return Tensor::from_data({n, 1, h, w}, std::move(vals));
}

inline std::vector<int> batch_labels(const std::vector<Sample>& samples,
                                     const std::vector<std::size_t>& indices, std::size_t from,
                                     std::size_t to, Problem problem) {
  std::vector<int> y;
  for (std::size_t i = from; i < to; ++i)
    y.push_back(binarize_label(samples[indices[i]].label, problem));
  return y;
}

// mean of -(y log p + (1-y) log(1-p)) over the batch
inline Tensor bce_loss(Tape& tape, const Tensor& probs, const std::vector<int>& y) {
  std::size_t n = probs.extent(0);
  std::vector<float> yv(n), cv(n);
  for (std::size_t i = 0; i < n; ++i) {
    yv[i] = static_cast<float>(y[i]);
    cv[i] = 1.0f - yv[i];
  }
  Tensor yt = Tensor::from_data({n}, std::move(yv));
  Tensor ct = Tensor::from_data({n}, std::move(cv));
  Tensor one = Tensor::full({n}, 1.0f);
  Tensor pos_term = ew_mul(tape, yt, log_op(tape, probs));
  Tensor neg_term = ew_mul(tape, ct, log_op(tape, ew_sub(tape, one, probs)));
  Tensor sum = ew_add(tape, pos_term, neg_term);
  return scale(tape, reduce_mean(tape, sum, {0}), -1.0f);
}

inline ParamSet clone_params(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, t] : params) out.emplace(name, t.clone());
  return out;
}

inline std::string params_digest(const ParamSet& params, const std::string& prefix) {
  Digest d;
  for (const auto& [name, t] : params) {
    if (!name.starts_with(prefix)) continue;
    d.update(name);
    auto vals = t.data();
    d.update(std::span<const char>(reinterpret_cast<const char*>(vals.data()),
                                   vals.size() * sizeof(float)));
  }
  return d.hex();
}

inline void clear_param_grads(ParamSet& params) {
  for (auto& [name, t] : params) t.clear_grad();
}

// eval-mode classifier probabilities for a list of samples
inline std::vector<float> predict_probs(const EncoderConfig& ecfg, const ParamSet& params,
                                        const std::vector<Sample>& samples,
                                        const std::vector<std::size_t>& indices,
                                        std::size_t batch_size) {
  std::vector<float> probs;
  for (std::size_t from = 0; from < indices.size(); from += batch_size) {
    std::size_t to = std::min(from + batch_size, indices.size());
    Tape tape;
    Tensor x = make_batch(samples, indices, from, to);
    EncoderResult res = encoder_forward(tape, ecfg, params, x, Mode::eval);
    for (float p : res.prob.data()) probs.push_back(p);
  }
  return probs;
}

}  // namespace detail

inline TrainOutcome train_classifier(const DatasetManifest& manifest,
                                     const std::vector<Sample>& samples, const TrainConfig& config,
                                     const EncoderConfig& ecfg = EncoderConfig{}) {
  config.validate();
  ecfg.validate();
  if (manifest.records.size() != samples.size())
    throw ContractError("train_classifier: manifest and sample counts differ");
  auto t0 = std::chrono::steady_clock::now();

  detail::SplitIndices split = detail::split_indices(manifest);
  if (split.train.empty() || split.val.empty())
    throw ConfigError("train_classifier: dataset needs nonempty train and val splits");
  auto class_presence = [&](const std::vector<std::size_t>& idx) {
    bool pos = false, neg = false;
    for (std::size_t i : idx)
      (binarize_label(samples[i].label, config.problem) == 1 ? pos : neg) = true;
    return std::make_pair(neg, pos);
  };
  if (auto [n, p] = class_presence(split.train); !n || !p)
    throw ConfigError("train_classifier: training split is degenerate, a single class after "
                      "binarization");
  if (auto [n, p] = class_presence(split.val); !n || !p)
    throw ConfigError("train_classifier: validation split is degenerate, a single class after "
                      "binarization");

  Rng root(config.seed);
  Rng init_rng = root.fork(1);
  ParamSet params = init_params(encoder_param_specs(ecfg), init_rng);
  AdamState adam = init_adam(params);
  AdamConfig adam_cfg = config.adam();

  TrainReport report;
  report.kind = "classifier";
  float best_auc = -1.0f;
  float best_val_loss = std::numeric_limits<float>::infinity();
  ParamSet best_params;

  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = root.fork(1000 + epoch);
    shuffle_rng.shuffle(order);

    double loss_acc = 0.0;
    for (std::size_t from = 0; from < order.size(); from += config.batch_size) {
      std::size_t to = std::min(from + config.batch_size, order.size());
      Tape tape;
      Tensor x = detail::make_batch(samples, order, from, to);
      std::vector<int> y = detail::batch_labels(samples, order, from, to, config.problem);
      EncoderResult res = encoder_forward(tape, ecfg, params, x, Mode::train);
      Tensor loss = detail::bce_loss(tape, res.prob, y);
      tape.backward(loss);
      if (!adam_step(params, adam, adam_cfg)) ++report.rejected_steps;
      detail::clear_param_grads(params);
      loss_acc += static_cast<double>(loss.value()) * static_cast<double>(to - from);
    }
    report.train_loss.push_back(
        static_cast<float>(loss_acc / static_cast<double>(order.size())));

    if (epoch % config.eval_every != 0 && epoch != config.epochs) continue;

    std::vector<float> val_probs =
        detail::predict_probs(ecfg, params, samples, split.val, config.batch_size);
    std::vector<float> pos_scores, neg_scores;
    double val_loss_acc = 0.0;
    for (std::size_t k = 0; k < split.val.size(); ++k) {
      int y = binarize_label(samples[split.val[k]].label, config.problem);
      float p = val_probs[k];
      (y == 1 ? pos_scores : neg_scores).push_back(p);
      double pd = static_cast<double>(p);
      double eps = 1e-8;
      val_loss_acc -= y == 1 ? std::log(pd + eps) : std::log(1.0 - pd + eps);
    }
    ClassifierEval ev;
    ev.epoch = epoch;
    ev.loss = static_cast<float>(val_loss_acc / static_cast<double>(split.val.size()));
    ev.auc = compute_auc(pos_scores, neg_scores);
    report.val_classifier.push_back(ev);

    // best AUC wins; among equal AUCs (common once the synthetic task is
    // fully ranked) the better-calibrated epoch wins, since phase 2 needs a
    // classifier whose probabilities actually move
    if (ev.auc > best_auc || (ev.auc == best_auc && ev.loss < best_val_loss)) {
      best_auc = ev.auc;
      best_val_loss = ev.loss;
      best_params = detail::clone_params(params);
      report.best_epoch = epoch;
    }
  }

  // threshold belongs to the retained parameters, so recompute with them
  std::vector<float> best_probs =
      detail::predict_probs(ecfg, best_params, samples, split.val, config.batch_size);
  std::vector<float> pos_scores, neg_scores;
  for (std::size_t k = 0; k < split.val.size(); ++k) {
    int y = binarize_label(samples[split.val[k]].label, config.problem);
    (y == 1 ? pos_scores : neg_scores).push_back(best_probs[k]);
  }
  EerResult eer = compute_eer(pos_scores, neg_scores);
  report.eer_threshold = eer.threshold;
  report.eer_value = eer.value;

  TrainOutcome out;
  out.checkpoint.kind = "classifier";
  out.checkpoint.encoder = ecfg;
  out.checkpoint.params = std::move(best_params);
  out.checkpoint.metadata["problem"] = problem_name(config.problem);
  out.checkpoint.metadata["eer_threshold"] = report.eer_threshold;
  out.checkpoint.metadata["eer_value"] = report.eer_value;
  out.checkpoint.metadata["best_epoch"] = report.best_epoch;
  out.checkpoint.metadata["val_auc"] = best_auc;
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.report = std::move(report);
  return out;
}

inline TrainOutcome train_saliency(const DatasetManifest& manifest,
                                   const std::vector<Sample>& samples,
                                   const Checkpoint& classifier, const TrainConfig& config,
                                   const DecoderConfig& dcfg = DecoderConfig{}) {
  config.validate();
  if (classifier.kind != "classifier")
    throw ConfigError("train_saliency: expected a classifier checkpoint, got kind '" +
                      classifier.kind + "'");
  if (!classifier.metadata.contains("problem") ||
      classifier.metadata.at("problem").get<std::string>() != problem_name(config.problem))
    throw ConfigError("train_saliency: classifier checkpoint problem does not match config");
  if (manifest.records.size() != samples.size())
    throw ContractError("train_saliency: manifest and sample counts differ");
  const EncoderConfig& ecfg = classifier.encoder;
  dcfg.validate(ecfg);
  auto t0 = std::chrono::steady_clock::now();

  detail::SplitIndices split = detail::split_indices(manifest);
  if (split.train.empty() || split.val.empty())
    throw ConfigError("train_saliency: dataset needs nonempty train and val splits");

  ParamSet params = detail::clone_params(classifier.params);
  Rng root(config.seed);
  Rng init_rng = root.fork(2);
  for (auto& [name, t] : init_params(decoder_param_specs(dcfg, ecfg), init_rng))
    params.emplace(name, t);
  set_params_trainable(params, "enc.", false);
  std::string encoder_before = detail::params_digest(params, "enc.");

  AdamState adam = init_adam(params);
  AdamConfig adam_cfg = config.adam();

  TrainReport report;
  report.kind = "saliency";
  float best_total = std::numeric_limits<float>::infinity();
  ParamSet best_params;

  auto validate_pass = [&]() {
    double tv = 0, area = 0, pres = 0, destr = 0, gpres = 0, gdestr = 0, total = 0;
    for (std::size_t from = 0; from < split.val.size(); from += config.batch_size) {
      std::size_t to = std::min(from + config.batch_size, split.val.size());
      Tape tape;
      Tensor x = detail::make_batch(samples, split.val, from, to);
      std::vector<int> y = detail::batch_labels(samples, split.val, from, to, config.problem);
      EncoderResult enc = encoder_forward(tape, ecfg, params, x, Mode::eval);
      Tensor m = decoder_forward(tape, dcfg, ecfg, params, enc.features, Mode::eval);
      LossResult res = total_loss(tape, m, x, y, config.loss, ecfg, params);
      double w = static_cast<double>(to - from);
      tv += w * res.breakdown.tv;
      area += w * res.breakdown.area;
      pres += w * res.breakdown.preserve;
      destr += w * res.breakdown.destroy;
      gpres += w * res.breakdown.gated_preserve;
      gdestr += w * res.breakdown.gated_destroy;
      total += w * res.breakdown.total;
    }
    double n = static_cast<double>(split.val.size());
    LossBreakdown b;
    b.tv = static_cast<float>(tv / n);
    b.area = static_cast<float>(area / n);
    b.preserve = static_cast<float>(pres / n);
    b.destroy = static_cast<float>(destr / n);
    b.gated_preserve = static_cast<float>(gpres / n);
    b.gated_destroy = static_cast<float>(gdestr / n);
    b.total = static_cast<float>(total / n);
    return b;
  };

  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng shuffle_rng = root.fork(1000 + epoch);
    shuffle_rng.shuffle(order);

    double loss_acc = 0.0;
    for (std::size_t from = 0; from < order.size(); from += config.batch_size) {
      std::size_t to = std::min(from + config.batch_size, order.size());
      Tape tape;
      Tensor x = detail::make_batch(samples, order, from, to);
      std::vector<int> y = detail::batch_labels(samples, order, from, to, config.problem);
      EncoderResult enc = encoder_forward(tape, ecfg, params, x, Mode::eval);
      Tensor m = decoder_forward(tape, dcfg, ecfg, params, enc.features, Mode::train);
      LossResult res = total_loss(tape, m, x, y, config.loss, ecfg, params);
      tape.backward(res.total);
      if (!adam_step(params, adam, adam_cfg)) ++report.rejected_steps;
      detail::clear_param_grads(params);
      loss_acc += static_cast<double>(res.breakdown.total) * static_cast<double>(to - from);
    }
    report.train_loss.push_back(
        static_cast<float>(loss_acc / static_cast<double>(order.size())));

    if (epoch % config.eval_every != 0 && epoch != config.epochs) continue;

    SaliencyEval ev;
    ev.epoch = epoch;
    ev.breakdown = validate_pass();
    report.val_saliency.push_back(ev);
    if (ev.breakdown.total < best_total) {
      best_total = ev.breakdown.total;
      best_params = detail::clone_params(params);
      report.best_epoch = epoch;
    }
  }

  if (detail::params_digest(params, "enc.") != encoder_before)
    throw ContractError("train_saliency: encoder parameters changed during phase 2");
  if (best_params.empty())
    throw ContractError("train_saliency: no validation pass produced a finite total loss");

  TrainOutcome out;
  out.checkpoint.kind = "saliency";
  out.checkpoint.encoder = ecfg;
  out.checkpoint.decoder = dcfg;
  out.checkpoint.params = std::move(best_params);
  out.checkpoint.metadata["problem"] = problem_name(config.problem);
  if (classifier.metadata.contains("eer_threshold"))
    out.checkpoint.metadata["eer_threshold"] = classifier.metadata.at("eer_threshold");
  out.checkpoint.metadata["best_epoch"] = report.best_epoch;
  out.checkpoint.metadata["best_val_total"] = best_total;
  out.checkpoint.metadata["loss_weights"] = {
      {"lambda1", config.loss.lambda1}, {"lambda2", config.loss.lambda2},
      {"lambda3", config.loss.lambda3}, {"lambda4", config.loss.lambda4},
      {"enable_tv", config.loss.enable_tv}, {"enable_area", config.loss.enable_area},
      {"enable_preserve", config.loss.enable_preserve},
      {"enable_destroy", config.loss.enable_destroy},
      {"destroy_log", config.loss.destroy_log}};
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.report = std::move(report);
  return out;
}

struct InferResult {
  float prob = 0.0f;
  bool positive = false;
  Tensor mask;  // defined only when positive
};

// prob > stored threshold produces a mask; at or below produces none.
inline InferResult infer(const Tensor& sample_x, const Checkpoint& ckpt) {
  if (ckpt.kind != "saliency" || !ckpt.decoder.has_value())
    throw ConfigError("infer: needs a saliency checkpoint, got kind '" + ckpt.kind + "'");
  if (!ckpt.metadata.contains("eer_threshold"))
    throw ContractError("infer: checkpoint has no stored EER threshold");
  if (sample_x.rank() != 3 || sample_x.extent(0) != 1)
    throw ShapeError("infer: sample must have shape (1,H,W), got " + shape_str(sample_x.shape()));
  float threshold = ckpt.metadata.at("eer_threshold").get<float>();

  Tape tape;
  Tensor x = reshape(tape, sample_x, {1, 1, sample_x.extent(1), sample_x.extent(2)});
  EncoderResult enc = encoder_forward(tape, ckpt.encoder, ckpt.params, x, Mode::eval);
  InferResult res;
  res.prob = enc.prob.value();
  res.positive = res.prob > threshold;
  if (res.positive) {
    Tensor m = decoder_forward(tape, *ckpt.decoder, ckpt.encoder, ckpt.params, enc.features,
                               Mode::eval);
    res.mask = reshape(tape, m, {1, sample_x.extent(1), sample_x.extent(2)});
  }
  return res;
}

}  // namespace masd

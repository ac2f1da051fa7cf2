#pragma once

#include <algorithm>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "masd/checkpoint.hpp"
#include "masd/config.hpp"
#include "masd/dataset_io.hpp"
#include "masd/digest.hpp"
#include "masd/errors.hpp"
#include "masd/eval.hpp"
#include "masd/loss.hpp"
#include "masd/train.hpp"

namespace masd {

namespace detail {

inline std::string iso8601_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[24];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// One line of JSON per event on stderr; result data goes to files only.
inline void log_line(nlohmann::json fields) {
  fields["ts"] = detail::iso8601_now();
  std::cerr << fields.dump() << '\n';
}

// Fixed layout of a run directory. Reports sit next to the checkpoint
// directories, not inside them, so checkpoint digests stay free of
// wall-clock noise.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path dataset;
  std::filesystem::path classifier;
  std::filesystem::path classifier_report;
  std::filesystem::path saliency;
  std::filesystem::path saliency_report;
  std::filesystem::path predictions;
  std::filesystem::path eval_dir;
  std::filesystem::path ablation;
  std::filesystem::path ledger_file;

  explicit RunPaths(const std::filesystem::path& out)
      : root(out),
        dataset(out / "dataset"),
        classifier(out / "classifier"),
        classifier_report(out / "classifier_report.json"),
        saliency(out / "saliency"),
        saliency_report(out / "saliency_report.json"),
        predictions(out / "predictions"),
        eval_dir(out / "eval"),
        ablation(out / "ablation"),
        ledger_file(out / "ledger.json") {}
};

// ---------------------------------------------------------------------------
// Run ledger: which stages completed, over which inputs. A stage is skipped
// only when both its recorded input digest and its outputs on disk are
// unchanged; anything else reruns it.

struct StageRecord {
  std::string inputs_digest;
  std::string outputs_digest;
  std::string completed_at;
  std::string note;
};

struct RunLedger {
  std::map<std::string, StageRecord> stages;
};

inline RunLedger load_ledger(const std::filesystem::path& file) {
  RunLedger ledger;
  if (!std::filesystem::exists(file)) return ledger;
  std::ifstream in(file);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("malformed run ledger: " + file.string());
  try {
    for (const auto& [name, rec] : j.at("stages").items()) {
      StageRecord r;
      r.inputs_digest = rec.at("inputs_digest").get<std::string>();
      r.outputs_digest = rec.at("outputs_digest").get<std::string>();
      r.completed_at = rec.at("completed_at").get<std::string>();
      if (rec.contains("note")) r.note = rec.at("note").get<std::string>();
      ledger.stages.emplace(name, std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed run ledger: " + file.string() + ": " + e.what());
  }
  return ledger;
}

inline void save_ledger(const std::filesystem::path& file, const RunLedger& ledger) {
  nlohmann::json stages = nlohmann::json::object();
  for (const auto& [name, r] : ledger.stages)
    stages[name] = {{"inputs_digest", r.inputs_digest},
                    {"outputs_digest", r.outputs_digest},
                    {"completed_at", r.completed_at},
                    {"note", r.note}};
  nlohmann::json j{{"stages", stages}};
  std::ofstream out(file);
  if (!out) throw IoError("cannot write run ledger: " + file.string());
  out << j.dump(2) << '\n';
}

namespace detail {

// Digest of a set of paths: regular files by content, directories by the
// sorted recursive listing of their files. Missing paths hash as absent, so
// a deleted output never matches a recorded digest.
inline std::string paths_digest(const std::vector<std::filesystem::path>& paths) {
  namespace fs = std::filesystem;
  Digest d;
  for (const fs::path& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<fs::path> files;
      for (const auto& entry : fs::recursive_directory_iterator(p))
        if (entry.is_regular_file()) files.push_back(entry.path());
      std::sort(files.begin(), files.end());
      for (const fs::path& f : files) {
        d.update(fs::relative(f, p).generic_string());
        d.update(digest_file(f));
      }
    } else if (fs::is_regular_file(p)) {
      d.update(p.filename().string());
      d.update(digest_file(p));
    } else {
      d.update("absent:" + p.filename().string());
    }
  }
  return d.hex();
}

struct StageIo {
  std::string name;
  std::string inputs_digest;
  std::vector<std::filesystem::path> outputs;
};

inline bool stage_current(const RunLedger& ledger, const StageIo& io) {
  auto it = ledger.stages.find(io.name);
  return it != ledger.stages.end() && it->second.inputs_digest == io.inputs_digest &&
         it->second.outputs_digest == paths_digest(io.outputs);
}

inline void note_skip(RunLedger& ledger, const std::filesystem::path& file, const StageIo& io) {
  ledger.stages.at(io.name).note = "skipped rerun: digest match";
  save_ledger(file, ledger);
  log_line({{"stage", io.name}, {"event", "skip"}, {"reason", "digest match"}});
}

inline void record_stage(RunLedger& ledger, const std::filesystem::path& file,
                         const StageIo& io) {
  StageRecord r;
  r.inputs_digest = io.inputs_digest;
  r.outputs_digest = paths_digest(io.outputs);
  r.completed_at = iso8601_now();
  r.note = "completed";
  ledger.stages[io.name] = std::move(r);
  save_ledger(file, ledger);
}

// Prerequisite that must have run AND still match the current config.
inline void require_stage(const RunLedger& ledger, const std::string& stage,
                          const std::string& expected_inputs,
                          const std::vector<std::filesystem::path>& outputs) {
  auto it = ledger.stages.find(stage);
  if (it == ledger.stages.end()) throw PrereqError(stage);
  if (it->second.inputs_digest != expected_inputs)
    throw PrereqError(stage,
                      "prerequisite stage " + stage + " is stale (its inputs changed); rerun it");
  if (it->second.outputs_digest != paths_digest(outputs))
    throw PrereqError(stage, "prerequisite stage " + stage +
                                 " outputs were modified since it ran; rerun it");
}

// Weaker form for stages whose inputs may have been supplied ad hoc: the
// record must exist and its outputs must be intact, but the inputs are not
// re-derived from the config.
inline void require_stage_present(const RunLedger& ledger, const std::string& stage,
                                  const std::vector<std::filesystem::path>& outputs) {
  auto it = ledger.stages.find(stage);
  if (it == ledger.stages.end()) throw PrereqError(stage);
  if (it->second.outputs_digest != paths_digest(outputs))
    throw PrereqError(stage, "prerequisite stage " + stage +
                                 " outputs were modified since it ran; rerun it");
}

// ---- stage input digests (pure functions of config + upstream outputs) ----

inline std::string gen_inputs_digest(const ExperimentConfig& c) {
  nlohmann::json j{{"generator", generator_config_to_json(c.generator)}};
  return digest_string(j.dump());
}

inline std::string classifier_inputs_digest(const ExperimentConfig& c, const RunPaths& rp) {
  nlohmann::json full = experiment_config_to_json(c);
  nlohmann::json j{{"train", full.at("classifier_train")},
                   {"encoder", full.at("encoder")},
                   {"dataset", paths_digest({rp.dataset})}};
  return digest_string(j.dump());
}

inline std::string saliency_inputs_digest(const ExperimentConfig& c, const RunPaths& rp) {
  nlohmann::json full = experiment_config_to_json(c);
  nlohmann::json j{{"train", full.at("saliency_train")},
                   {"decoder", full.at("decoder")},
                   {"classifier", paths_digest({rp.classifier})},
                   {"dataset", paths_digest({rp.dataset})}};
  return digest_string(j.dump());
}

inline std::string infer_inputs_digest(const std::filesystem::path& ckpt_dir,
                                       const std::filesystem::path& data_dir) {
  nlohmann::json j{{"checkpoint", paths_digest({ckpt_dir})},
                   {"dataset", paths_digest({data_dir})}};
  return digest_string(j.dump());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write: " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pipeline stages. Each takes the effective config, consults the ledger in
// the run directory, and either skips (inputs and outputs unchanged) or
// recomputes its outputs from scratch.

inline std::filesystem::path cmd_gen_data(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  RunPaths rp(cfg.out_dir);
  fs::create_directories(rp.root);
  RunLedger ledger = load_ledger(rp.ledger_file);

  detail::StageIo io{"gen-data", detail::gen_inputs_digest(cfg), {rp.dataset}};
  if (detail::stage_current(ledger, io)) {
    detail::note_skip(ledger, rp.ledger_file, io);
    return rp.dataset;
  }

  log_line({{"stage", io.name}, {"event", "start"}, {"seed", cfg.generator.seed}});
  fs::remove_all(rp.dataset);
  DatasetManifest manifest = generate_and_write_dataset(cfg.generator, rp.dataset);
  detail::record_stage(ledger, rp.ledger_file, io);
  log_line({{"stage", io.name}, {"event", "done"}, {"samples", manifest.records.size()}});
  return rp.dataset;
}

inline std::filesystem::path cmd_train_classifier(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  RunPaths rp(cfg.out_dir);
  fs::create_directories(rp.root);
  RunLedger ledger = load_ledger(rp.ledger_file);
  detail::require_stage(ledger, "gen-data", detail::gen_inputs_digest(cfg), {rp.dataset});

  detail::StageIo io{"train-classifier", detail::classifier_inputs_digest(cfg, rp),
                     {rp.classifier, rp.classifier_report}};
  if (detail::stage_current(ledger, io)) {
    detail::note_skip(ledger, rp.ledger_file, io);
    return rp.classifier;
  }

  log_line({{"stage", io.name}, {"event", "start"}, {"epochs", cfg.classifier_train.epochs}});
  auto [manifest, samples] = read_dataset(rp.dataset);
  TrainOutcome out = train_classifier(manifest, samples, cfg.classifier_train, cfg.encoder);
  fs::remove_all(rp.classifier);
  save_checkpoint(rp.classifier, out.checkpoint);
  detail::write_json_file(rp.classifier_report, train_report_to_json(out.report));
  detail::record_stage(ledger, rp.ledger_file, io);
  log_line({{"stage", io.name},
            {"event", "done"},
            {"best_epoch", out.report.best_epoch},
            {"val_auc", out.checkpoint.metadata.at("val_auc")},
            {"eer_threshold", out.report.eer_threshold},
            {"rejected_steps", out.report.rejected_steps}});
  return rp.classifier;
}

inline std::filesystem::path cmd_train_saliency(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  RunPaths rp(cfg.out_dir);
  fs::create_directories(rp.root);
  RunLedger ledger = load_ledger(rp.ledger_file);
  detail::require_stage(ledger, "train-classifier", detail::classifier_inputs_digest(cfg, rp),
                        {rp.classifier, rp.classifier_report});
  detail::require_stage(ledger, "gen-data", detail::gen_inputs_digest(cfg), {rp.dataset});

  detail::StageIo io{"train-saliency", detail::saliency_inputs_digest(cfg, rp),
                     {rp.saliency, rp.saliency_report}};
  if (detail::stage_current(ledger, io)) {
    detail::note_skip(ledger, rp.ledger_file, io);
    return rp.saliency;
  }

  log_line({{"stage", io.name}, {"event", "start"}, {"epochs", cfg.saliency_train.epochs}});
  auto [manifest, samples] = read_dataset(rp.dataset);
  Checkpoint classifier = load_checkpoint(rp.classifier);
  TrainOutcome out = train_saliency(manifest, samples, classifier, cfg.saliency_train, cfg.decoder);
  fs::remove_all(rp.saliency);
  save_checkpoint(rp.saliency, out.checkpoint);
  detail::write_json_file(rp.saliency_report, train_report_to_json(out.report));
  detail::record_stage(ledger, rp.ledger_file, io);
  log_line({{"stage", io.name},
            {"event", "done"},
            {"best_epoch", out.report.best_epoch},
            {"best_val_total", out.checkpoint.metadata.at("best_val_total")},
            {"rejected_steps", out.report.rejected_steps}});
  return rp.saliency;
}

// Runs the saliency model over the test split and writes one prediction per
// sample: predictions.json plus a <id>_mask.mast tensor for every positive.
inline std::filesystem::path cmd_infer(
    const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& checkpoint_dir = {},
    const std::optional<std::filesystem::path>& input_dir = {}) {
  namespace fs = std::filesystem;
  RunPaths rp(cfg.out_dir);
  fs::create_directories(rp.root);
  RunLedger ledger = load_ledger(rp.ledger_file);

  fs::path data_dir = input_dir.value_or(rp.dataset);
  fs::path ckpt_dir = checkpoint_dir.value_or(rp.saliency);
  if (!checkpoint_dir) {
    if (input_dir)
      detail::require_stage_present(ledger, "train-saliency", {rp.saliency, rp.saliency_report});
    else
      detail::require_stage(ledger, "train-saliency", detail::saliency_inputs_digest(cfg, rp),
                            {rp.saliency, rp.saliency_report});
  }
  if (!input_dir)
    detail::require_stage(ledger, "gen-data", detail::gen_inputs_digest(cfg), {rp.dataset});

  detail::StageIo io{"infer", detail::infer_inputs_digest(ckpt_dir, data_dir), {rp.predictions}};
  if (detail::stage_current(ledger, io)) {
    detail::note_skip(ledger, rp.ledger_file, io);
    return rp.predictions;
  }

  log_line({{"stage", io.name}, {"event", "start"}});
  auto [manifest, samples] = read_dataset(data_dir);
  Checkpoint ckpt = load_checkpoint(ckpt_dir);
  fs::remove_all(rp.predictions);
  fs::create_directories(rp.predictions);

  nlohmann::json entries = nlohmann::json::array();
  std::size_t total = 0, positives = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (manifest.records[i].split != "test") continue;
    const Sample& s = samples[i];
    InferResult r = infer(s.x, ckpt);
    nlohmann::json e{{"id", s.id()}, {"prob", r.prob}, {"positive", r.positive},
                     {"mask_path", nullptr}};
    if (r.positive) {
      std::string name = s.id() + "_mask.mast";
      write_tensor(rp.predictions / name, r.mask);
      e["mask_path"] = name;
      ++positives;
    }
    entries.push_back(std::move(e));
    ++total;
  }
  nlohmann::json root{{"format_version", 1},
                      {"problem", problem_name(cfg.problem)},
                      {"entries", std::move(entries)}};
  detail::write_json_file(rp.predictions / "predictions.json", root);
  detail::record_stage(ledger, rp.ledger_file, io);
  log_line({{"stage", io.name}, {"event", "done"}, {"samples", total}, {"positives", positives}});
  return rp.predictions;
}

namespace detail {

struct LoadedPredictions {
  std::vector<Sample> test_samples;
  std::vector<Prediction> predictions;
};

inline LoadedPredictions load_predictions(const ExperimentConfig& cfg,
                                          const std::filesystem::path& data_dir,
                                          const std::filesystem::path& pred_dir) {
  auto [manifest, samples] = read_dataset(data_dir);

  std::filesystem::path index = pred_dir / "predictions.json";
  std::ifstream in(index);
  if (!in) throw IoError("cannot read predictions index: " + index.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw IoError("malformed predictions index: " + index.string());

  struct Entry {
    float prob;
    bool positive;
    std::string mask_path;
  };
  std::map<std::string, Entry> by_id;
  try {
    if (j.at("format_version").get<int>() != 1)
      throw IoError("predictions index: unsupported format_version");
    std::string prob_name = j.at("problem").get<std::string>();
    if (prob_name != problem_name(cfg.problem))
      throw ConfigError("predictions were generated for problem \"" + prob_name +
                        "\" but the config says \"" + problem_name(cfg.problem) + "\"");
    for (const auto& e : j.at("entries")) {
      Entry ent;
      ent.prob = e.at("prob").get<float>();
      ent.positive = e.at("positive").get<bool>();
      if (!e.at("mask_path").is_null()) ent.mask_path = e.at("mask_path").get<std::string>();
      by_id.emplace(e.at("id").get<std::string>(), std::move(ent));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed predictions index: ") + e.what());
  }

  LoadedPredictions out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (manifest.records[i].split != "test") continue;
    const std::string id = samples[i].id();
    auto it = by_id.find(id);
    if (it == by_id.end()) throw IoError("predictions index has no entry for sample " + id);
    Prediction p;
    p.prob = it->second.prob;
    p.positive = it->second.positive;
    if (!it->second.mask_path.empty()) p.mask = read_tensor(pred_dir / it->second.mask_path);
    out.test_samples.push_back(samples[i]);
    out.predictions.push_back(std::move(p));
  }
  return out;
}

}  // namespace detail

// Sweeps the FROC for every configured scenario. Per-scenario results land in
// eval/<scenario>/; the first scenario's curve is also written to the run
// root as froc.csv / froc.svg.
inline std::filesystem::path cmd_evaluate(
    const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& predictions_dir = {}) {
  namespace fs = std::filesystem;
  RunPaths rp(cfg.out_dir);
  fs::create_directories(rp.root);
  RunLedger ledger = load_ledger(rp.ledger_file);

  fs::path pred_dir = predictions_dir.value_or(rp.predictions);
  fs::path data_dir = rp.dataset;
  if (!predictions_dir) detail::require_stage_present(ledger, "infer", {rp.predictions});
  detail::require_stage(ledger, "gen-data", detail::gen_inputs_digest(cfg), {rp.dataset});

  std::vector<float> grid = cfg.tau_grid.empty() ? default_sweep_tau_grid() : cfg.tau_grid;
  std::vector<std::string> scenario_names;
  for (Scenario s : cfg.scenarios) scenario_names.push_back(scenario_name(s));
  nlohmann::json inputs{{"predictions", detail::paths_digest({pred_dir})},
                        {"dataset", detail::paths_digest({data_dir})},
                        {"tau_grid", grid},
                        {"scenarios", scenario_names},
                        {"problem", problem_name(cfg.problem)}};
  detail::StageIo io{"evaluate", digest_string(inputs.dump()),
                     {rp.eval_dir, rp.root / "froc.csv", rp.root / "froc.svg"}};
  if (detail::stage_current(ledger, io)) {
    detail::note_skip(ledger, rp.ledger_file, io);
    return rp.eval_dir;
  }

  log_line({{"stage", io.name}, {"event", "start"}, {"taus", grid.size()}});
  detail::LoadedPredictions loaded = detail::load_predictions(cfg, data_dir, pred_dir);
  fs::remove_all(rp.eval_dir);
  for (std::size_t i = 0; i < cfg.scenarios.size(); ++i) {
    Scenario s = cfg.scenarios[i];
    FrocCurve curve =
        froc_curve(loaded.test_samples, loaded.predictions, s, cfg.problem, grid);
    emit_results(curve, rp.eval_dir / scenario_name(s));
    if (i == 0) emit_results(curve, rp.root);
    log_line({{"stage", io.name},
              {"event", "scenario"},
              {"scenario", scenario_name(s)},
              {"points", curve.points.size()}});
  }
  detail::record_stage(ledger, rp.ledger_file, io);
  log_line({{"stage", io.name}, {"event", "done"}});
  return rp.eval_dir;
}

// ---------------------------------------------------------------------------
// Ablation: retrain the mask decoder with one loss term switched off and put
// its FROC next to the baseline's, everything else (seed, classifier, data)
// held fixed.

struct AblationStats {
  double mean_mask_area = 0.0;    // mean mask activation over true-positive test samples
  double mean_destroy_drop = 0.0; // mean classifier-probability drop after masking out
  float best_val_total = 0.0f;
};

struct AblationResult {
  std::filesystem::path dir;
  AblationStats baseline;
  AblationStats disabled;
};

namespace detail {

inline LossWeights disable_term(LossWeights w, const std::string& term) {
  if (term == "tv")
    w.enable_tv = false;
  else if (term == "area")
    w.enable_area = false;
  else if (term == "preserve")
    w.enable_preserve = false;
  else if (term == "destroy")
    w.enable_destroy = false;
  else
    throw ConfigError("ablate: unknown term \"" + term +
                      "\" (expected tv, area, preserve, or destroy)");
  return w;
}

// Decoder output for one sample regardless of the classifier's verdict; the
// gate is what ablation wants to look behind.
inline Tensor forced_mask(const Checkpoint& ckpt, const Tensor& sample_x) {
  Tape tape;
  Tensor x = reshape(tape, sample_x, {1, 1, sample_x.extent(1), sample_x.extent(2)});
  EncoderResult enc = encoder_forward(tape, ckpt.encoder, ckpt.params, x, Mode::eval);
  return decoder_forward(tape, *ckpt.decoder, ckpt.encoder, ckpt.params, enc.features, Mode::eval);
}

inline float classifier_prob(const Checkpoint& ckpt, const Tensor& x_n1hw) {
  Tape tape;
  return encoder_forward(tape, ckpt.encoder, ckpt.params, x_n1hw, Mode::eval).prob.value();
}

inline AblationStats ablation_stats(const Checkpoint& ckpt, const DatasetManifest& manifest,
                                    const std::vector<Sample>& samples, Problem problem) {
  AblationStats st;
  std::size_t n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (manifest.records[i].split != "test") continue;
    if (binarize_label(samples[i].label, problem) != 1) continue;
    const Tensor& sx = samples[i].x;
    Tensor m = forced_mask(ckpt, sx);  // (1,1,H,W)
    double area = 0.0;
    for (float v : m.data()) area += v;
    area /= static_cast<double>(m.numel());
    st.mean_mask_area += area;

    // probability on the full input vs. the inverse-masked input
    std::vector<float> kept(sx.numel());
    const float* xs = sx.data().data();
    const float* ms = m.data().data();
    for (std::size_t k = 0; k < kept.size(); ++k) kept[k] = xs[k] * (1.0f - ms[k]);
    Tensor x_full = Tensor::from_data({1, 1, sx.extent(1), sx.extent(2)},
                                      std::vector<float>(xs, xs + sx.numel()));
    Tensor x_removed = Tensor::from_data({1, 1, sx.extent(1), sx.extent(2)}, std::move(kept));
    st.mean_destroy_drop += static_cast<double>(classifier_prob(ckpt, x_full)) -
                            static_cast<double>(classifier_prob(ckpt, x_removed));
    ++n;
  }
  if (n == 0) throw ContractError("ablation: test split has no positive samples");
  st.mean_mask_area /= static_cast<double>(n);
  st.mean_destroy_drop /= static_cast<double>(n);
  return st;
}

}  // namespace detail

inline AblationResult cmd_ablate(const ExperimentConfig& cfg, const std::string& term) {
  namespace fs = std::filesystem;
  LossWeights check = detail::disable_term(cfg.saliency_train.loss, term);  // validates term
  (void)check;

  RunPaths rp(cfg.out_dir);
  fs::create_directories(rp.root);
  RunLedger ledger = load_ledger(rp.ledger_file);
  detail::require_stage(ledger, "train-classifier", detail::classifier_inputs_digest(cfg, rp),
                        {rp.classifier, rp.classifier_report});
  detail::require_stage(ledger, "gen-data", detail::gen_inputs_digest(cfg), {rp.dataset});

  fs::path out_dir = rp.ablation / term;
  nlohmann::json full = experiment_config_to_json(cfg);
  nlohmann::json inputs{{"train", full.at("saliency_train")},
                        {"decoder", full.at("decoder")},
                        {"term", term},
                        {"classifier", detail::paths_digest({rp.classifier})},
                        {"dataset", detail::paths_digest({rp.dataset})},
                        {"tau_grid", cfg.tau_grid}};
  detail::StageIo io{"ablate-" + term, digest_string(inputs.dump()), {out_dir}};

  auto read_stats = [&](const char* arm) {
    std::ifstream in(out_dir / "summary.json");
    nlohmann::json j = nlohmann::json::parse(in);
    AblationStats st;
    st.mean_mask_area = j.at(arm).at("mean_mask_area").get<double>();
    st.mean_destroy_drop = j.at(arm).at("mean_destroy_drop").get<double>();
    st.best_val_total = j.at(arm).at("best_val_total").get<float>();
    return st;
  };
  if (detail::stage_current(ledger, io)) {
    detail::note_skip(ledger, rp.ledger_file, io);
    return {out_dir, read_stats("baseline"), read_stats("disabled")};
  }

  log_line({{"stage", io.name}, {"event", "start"}, {"term", term}});
  auto [manifest, samples] = read_dataset(rp.dataset);
  Checkpoint classifier = load_checkpoint(rp.classifier);
  std::vector<float> grid = cfg.tau_grid.empty() ? default_sweep_tau_grid() : cfg.tau_grid;
  fs::remove_all(out_dir);

  AblationResult result;
  result.dir = out_dir;
  nlohmann::json summary{{"term", term}};
  for (bool disabled : {false, true}) {
    const char* arm = disabled ? "disabled" : "baseline";
    TrainConfig tc = cfg.saliency_train;
    if (disabled) tc.loss = detail::disable_term(tc.loss, term);
    TrainOutcome out = train_saliency(manifest, samples, classifier, tc, cfg.decoder);

    // masks and predictions over the test split, then one curve per arm
    std::vector<Sample> test_samples;
    std::vector<Prediction> preds;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (manifest.records[i].split != "test") continue;
      InferResult r = infer(samples[i].x, out.checkpoint);
      test_samples.push_back(samples[i]);
      preds.push_back({r.prob, r.positive, r.mask});
    }
    FrocCurve curve = froc_curve(test_samples, preds, Scenario::all, cfg.problem, grid);
    emit_results(curve, out_dir / arm);

    AblationStats st = detail::ablation_stats(out.checkpoint, manifest, samples, cfg.problem);
    st.best_val_total = out.checkpoint.metadata.at("best_val_total").get<float>();
    summary[arm] = {{"mean_mask_area", st.mean_mask_area},
                    {"mean_destroy_drop", st.mean_destroy_drop},
                    {"best_val_total", st.best_val_total}};
    (disabled ? result.disabled : result.baseline) = st;
    log_line({{"stage", io.name},
              {"event", "arm"},
              {"arm", arm},
              {"mean_mask_area", st.mean_mask_area},
              {"mean_destroy_drop", st.mean_destroy_drop}});
  }
  detail::write_json_file(out_dir / "summary.json", summary);
  detail::record_stage(ledger, rp.ledger_file, io);
  log_line({{"stage", io.name}, {"event", "done"}});
  return result;
}

// The whole pipeline in order; each stage still skips itself when its inputs
// are unchanged.
inline void run_pipeline(const ExperimentConfig& cfg) {
  cmd_gen_data(cfg);
  cmd_train_classifier(cfg);
  cmd_train_saliency(cfg);
  cmd_infer(cfg);
  cmd_evaluate(cfg);
}

}  // namespace masd

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "masd/config.hpp"
#include "masd/pipeline.hpp"

namespace {

int fail(const char* type, const std::string& message) {
  nlohmann::json j{{"error", {{"type", type}, {"message", message}}}};
  std::cerr << j.dump() << '\n';
  return 1;
}

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic-lesion saliency pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  std::string out_dir;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config file (JSON)")->required();
    cmd->add_option("--set", sets, "override a scalar config field, key=value (repeatable)");
    cmd->add_option("--out", out_dir, "output directory (overrides out_dir from the config)");
    return cmd;
  };

  CLI::App* gen = add_common(app.add_subcommand("gen-data", "generate the synthetic dataset"));
  CLI::App* clf =
      add_common(app.add_subcommand("train-classifier", "train the image-level classifier"));
  CLI::App* sal = add_common(
      app.add_subcommand("train-saliency", "train the mask decoder on the frozen classifier"));

  CLI::App* inf =
      add_common(app.add_subcommand("infer", "write test-split predictions and masks"));
  std::string ckpt_dir, input_dir;
  inf->add_option("--checkpoint", ckpt_dir, "saliency checkpoint directory (default: the run's)");
  inf->add_option("--input", input_dir, "dataset directory (default: the run's)");

  CLI::App* eval =
      add_common(app.add_subcommand("evaluate", "sweep FROC curves over the predictions"));
  std::string pred_dir;
  eval->add_option("--predictions", pred_dir, "predictions directory (default: the run's)");

  CLI::App* abl = add_common(
      app.add_subcommand("ablate", "retrain with one loss term disabled and compare curves"));
  std::string term;
  abl->add_option("--term", term, "loss term to disable: tv, area, preserve, or destroy")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    return fail("UsageError", e.what());
  }

  try {
    masd::ExperimentConfig cfg = masd::load_experiment_config(config_path, sets, out_dir);
    if (*gen) masd::cmd_gen_data(cfg);
    if (*clf) masd::cmd_train_classifier(cfg);
    if (*sal) masd::cmd_train_saliency(cfg);
    if (*inf) masd::cmd_infer(cfg, opt_path(ckpt_dir), opt_path(input_dir));
    if (*eval) masd::cmd_evaluate(cfg, opt_path(pred_dir));
    if (*abl) masd::cmd_ablate(cfg, term);
    return 0;
  } catch (const masd::PrereqError& e) {
    return fail("PrereqError", e.what());
  } catch (const masd::ConfigError& e) {
    return fail("ConfigError", e.what());
  } catch (const masd::IoError& e) {
    return fail("IoError", e.what());
  } catch (const masd::ShapeError& e) {
    return fail("ShapeError", e.what());
  } catch (const masd::ContractError& e) {
    return fail("ContractError", e.what());
  } catch (const std::exception& e) {
    return fail("InternalError", e.what());
  }
}

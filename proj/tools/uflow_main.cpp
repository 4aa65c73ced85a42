#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "uflow/errors.hpp"
#include "uflow/pipeline.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("uflow");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("UFLOW_LOG")) {
    const auto parsed = spdlog::level::from_str(level);
    // from_str maps unknown names to "off"; only honor names that mean it.
    if (parsed != spdlog::level::off || std::string(level) == "off") spdlog::set_level(parsed);
  }
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"U-shaped normalizing flow anomaly detection pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 0;
  std::string score;
  uflow::CommandOptions options;
  app.add_option("--config", config_path, "Pipeline config file (INI)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Override [run] seed");
  app.add_option("--jobs", options.jobs, "Worker threads for per-image stages and training")
      ->check(CLI::PositiveNumber);
  app.add_flag("--force", options.force, "Replace an existing artifact directory");
  app.add_option("--log-nfa-threshold", options.log_nfa_threshold,
                 "Detect pixels with log NFA below this value (default 0)");
  auto* score_opt = app.add_option("--score", score, "Score map used by eval")->check(CLI::IsMember({"as", "nfa"}));
  app.add_flag("--high-precision", options.high_precision, "Extended-precision binomial tails");

  using Runner = void (*)(const uflow::PipelineConfig&, const uflow::CommandOptions&);
  const std::map<std::string, std::pair<std::string, Runner>> commands = {
      {"gen-data", {"Generate the synthetic dataset", uflow::run_gen_data}},
      {"extract", {"Extract feature pyramids (UFV)", uflow::run_extract}},
      {"train", {"Train the flow on training features", uflow::run_train}},
      {"score", {"Write anomaly-score and log-NFA maps", uflow::run_score}},
      {"segment", {"Threshold log-NFA maps into masks", uflow::run_segment}},
      {"eval", {"Compute AUROC and IoU metrics", uflow::run_eval}},
  };
  for (const auto& [name, entry] : commands) app.add_subcommand(name, entry.first);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*seed_opt) options.seed = seed;
    if (*score_opt) options.score = uflow::parse_score_kind(score);
    const auto config = uflow::apply_overrides(uflow::load_config(config_path), options);
    const auto* sub = app.get_subcommands().front();
    commands.at(sub->get_name()).second(config, options);
  } catch (const uflow::Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("unexpected failure: {}", e.what());
    return 2;
  }
  return 0;
}

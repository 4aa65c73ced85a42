#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "uflow/features.hpp"
#include "uflow/flow.hpp"
#include "uflow/nfa.hpp"
#include "uflow/scoring.hpp"
#include "uflow/synthetic.hpp"
#include "uflow/training.hpp"

namespace uflow {

enum class ScoreKind { as, nfa };

struct PipelineConfig {
  // Relative paths resolve against base_dir, the config file's directory.
  std::filesystem::path base_dir = ".";
  std::filesystem::path data_dir = "data";
  std::filesystem::path features_dir = "features";
  std::filesystem::path model_dir = "model";
  std::filesystem::path scores_dir = "scores";
  std::filesystem::path masks_dir = "masks";
  std::filesystem::path eval_dir = "eval";

  std::uint64_t seed = 1;
  ExtractorConfig extractor;
  int steps_per_stage = 4;
  double clamp = 2.0;
  TrainConfig train;
  NfaConfig nfa;
  SynthConfig synthetic;
  ScoreKind score = ScoreKind::nfa;
  ScoreFormula formula = ScoreFormula::printed;
  bool exhaustive_oracle = false;

  std::filesystem::path resolve(const std::filesystem::path& p) const;
  GraphConfig graph_config() const;
};

// INI file with sections [paths] [run] [extractor] [flow] [train] [nfa]
// [synthetic] [score]. Missing keys take defaults; unknown keys are errors.
// Throws ParseError or ParameterError.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir);

// Every setting with defaults resolved, loadable by parse_config.
std::string emit_config(const PipelineConfig& config);

// Cross-module consistency: flow divisibility of the extractor channels, one
// NFA window per level, synthetic image size divisible by patch * 2^(L-1).
void validate(const PipelineConfig& config);

struct CommandOptions {
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  bool force = false;
  double log_nfa_threshold = 0.0;
  std::optional<ScoreKind> score;
  bool high_precision = false;
};

// Applies command-line overrides and re-validates.
PipelineConfig apply_overrides(PipelineConfig config, const CommandOptions& options);

// Subcommands; each writes one artifact directory and returns on success,
// throwing uflow::Error otherwise.
void run_gen_data(const PipelineConfig& config, const CommandOptions& options);
void run_extract(const PipelineConfig& config, const CommandOptions& options);
void run_train(const PipelineConfig& config, const CommandOptions& options);
void run_score(const PipelineConfig& config, const CommandOptions& options);
void run_segment(const PipelineConfig& config, const CommandOptions& options);
void run_eval(const PipelineConfig& config, const CommandOptions& options);

ScoreKind parse_score_kind(const std::string& name);
std::string to_string(ScoreKind kind);

}  // namespace uflow

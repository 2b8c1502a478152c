#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "docrep/config.hpp"
#include "docrep/corpus.hpp"

namespace docrep::cli {

struct LdaSettings {
  double alpha = -1.0;
  double beta = 0.01;
  int iterations = 500;
  int infer_iterations = 100;
};

struct PathSettings {
  std::string corpus;
  std::string topics;
  std::string checkpoint;
};

struct EvalSettings {
  /// Leading fraction of the corpus (manifest order) used for training; the
  /// rest is the test split.
  double train_fraction = 0.8;
  /// "test" or "train".
  std::string split = "test";
  std::vector<int> ndcg_k{1, 3, 5, 10};
};

/// Everything a command needs, loadable from one JSON file.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string precision = "single";
  std::string device = "cpu";
  std::string ablation = "all";
  ModelConfig model;
  TrainConfig train;
  FinetuneConfig finetune;
  SyntheticSpec corpus;
  LdaSettings lda;
  PathSettings paths;
  EvalSettings eval;

  RunConfig();
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies `key.path=value` (value parsed as JSON, else taken as a string).
/// Unknown keys are rejected.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Recursively merges `patch` into `base`, rejecting keys absent from base.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& where);

/// Stream seeds derived from the master seed.
std::uint64_t lda_seed(const RunConfig& c);
std::uint64_t model_seed(const RunConfig& c);
std::uint64_t train_seed(const RunConfig& c);
std::uint64_t finetune_seed(const RunConfig& c);

}  // namespace docrep::cli

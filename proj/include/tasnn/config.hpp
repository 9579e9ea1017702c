#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tasnn/corpus.hpp"
#include "tasnn/dataset.hpp"
#include "tasnn/features.hpp"
#include "tasnn/model.hpp"
#include "tasnn/trainer.hpp"

namespace tasnn {

struct Seeds {
  std::uint64_t corpus = 2024;
  std::uint64_t train = 11;  // initialization, batch sampling and the split
  std::uint64_t eval = 7;
};

struct SplitConfig {
  double test_fraction = 0.3;
  double val_fraction = 0.1;
};

struct AugmentSettings {
  features::AugmentationConfig params;
  std::size_t copies = 2;  // augmented copies per training sample
};

struct EvalGrid {
  std::vector<std::size_t> ways{5, 10};
  std::vector<std::size_t> shots{1, 5};
  std::size_t episodes = 50;
};

struct RunConfig {
  Seeds seeds;
  corpus::CorpusConfig corpus;
  data::FeatureOptions features;
  AugmentSettings augmentation;
  model::ModelConfig model;
  train::TrainingConfig training;
  SplitConfig split;
  EvalGrid eval;

  // Throws ConfigError describing the first inconsistency.
  void validate() const;
  nlohmann::ordered_json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  // Section configs with the run seeds applied.
  model::ModelConfig model_config() const;
  train::TrainingConfig training_config() const;
  std::uint64_t split_seed() const;

  std::string digest() const;
};

nlohmann::ordered_json to_json(const corpus::CorpusConfig& c);
corpus::CorpusConfig corpus_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const features::AugmentationConfig& c);
features::AugmentationConfig augmentation_config_from_json(const nlohmann::json& j);

}  // namespace tasnn

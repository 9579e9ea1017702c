#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tasnn/corpus.hpp"
#include "tasnn/encoder.hpp"
#include "tasnn/features.hpp"

namespace tasnn::data {

struct FeatureOptions {
  std::size_t segment_length = 256;
  features::GraphShape graph_shape;
  std::size_t image_width = 256;
  std::uint64_t encoder_seed = 4096;
  std::size_t encoder_dim = 256;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static FeatureOptions from_json(const nlohmann::json& j);
};

// One extracted sample. `group` ties a variant to its original so that
// splits never separate them.
struct Sample {
  std::string id;
  int label = 0;
  std::size_t group = 0;
  corpus::Provenance provenance = corpus::Provenance::original;
  bool augmented = false;
  std::vector<double> entropy_graph;  // row-major graph_shape
  features::MalwareImage image;
  std::vector<double> task_feature;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;
  FeatureOptions options;
  std::string digest;

  std::size_t n_classes() const { return class_names.size(); }
  // Sample indices per label, in sample order.
  std::vector<std::vector<std::size_t>> by_class() const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

// Extracts every corpus program in memory.
Dataset build_dataset(const corpus::Corpus& corpus, const FeatureOptions& options,
                      const features::TaskEncoder& encoder);

// Extracts the programs listed in a corpus manifest rooted at `root`.
Dataset extract_manifest(const corpus::CorpusManifest& manifest, const std::filesystem::path& root,
                         const FeatureOptions& options, const features::TaskEncoder& encoder);

// Writes graph/image/task .npy files per sample plus features.json.
void write_dataset(const Dataset& ds, const std::filesystem::path& out_dir);
// Throws DataError on missing or malformed files.
Dataset load_dataset(const std::filesystem::path& features_manifest);

// Content digest over labels, groups and feature values.
std::string dataset_digest(const Dataset& ds);

struct Split {
  std::vector<std::size_t> train, val, test;
};

// Whole groups go to one side, per class, shuffled by `seed`. Each class keeps
// at least one group in train. Augmented samples are only kept in train.
Split split_by_group(const Dataset& ds, double test_fraction, double val_fraction, std::uint64_t seed);

}  // namespace tasnn::data

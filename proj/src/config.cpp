#include "tasnn/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

#include "tasnn/common.hpp"

namespace tasnn {

namespace {

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

std::string fill_mode_name(features::FillMode m) {
  switch (m) {
    case features::FillMode::wrap: return "wrap";
    case features::FillMode::constant: return "constant";
    case features::FillMode::nearest: return "nearest";
    case features::FillMode::reflect: return "reflect";
  }
  return "wrap";
}

features::FillMode fill_mode_from(const std::string& s) {
  if (s == "wrap") return features::FillMode::wrap;
  if (s == "constant") return features::FillMode::constant;
  if (s == "nearest") return features::FillMode::nearest;
  if (s == "reflect") return features::FillMode::reflect;
  throw ConfigError("unknown fill_mode '" + s + "'");
}

}  // namespace

nlohmann::ordered_json to_json(const corpus::CorpusConfig& c) {
  nlohmann::ordered_json j;
  j["families"] = c.families;
  j["samples_per_family"] = c.samples_per_family;
  j["variants_per_transform"] = c.variants_per_transform;
  j["transforms"] = nlohmann::ordered_json::array();
  for (auto t : c.transforms) j["transforms"].push_back(std::string(corpus::to_string(t)));
  const auto& g = c.generator;
  j["generator"] = {{"common_block_fraction", g.common_block_fraction},
                    {"common_seed", g.common_seed},
                    {"min_blocks", g.min_blocks},
                    {"max_blocks", g.max_blocks},
                    {"min_block_length", g.min_block_length},
                    {"max_block_length", g.max_block_length}};
  return j;
}

corpus::CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"families", "samples_per_family", "variants_per_transform", "transforms", "generator"}, "corpus");
  corpus::CorpusConfig c;
  read(j, "families", c.families);
  read(j, "samples_per_family", c.samples_per_family);
  read(j, "variants_per_transform", c.variants_per_transform);
  if (j.contains("transforms")) {
    c.transforms.clear();
    for (const auto& t : j.at("transforms")) c.transforms.push_back(corpus::provenance_from_string(t.get<std::string>()));
  }
  if (j.contains("generator")) {
    const auto& g = j.at("generator");
    reject_unknown(g, {"common_block_fraction", "common_seed", "min_blocks", "max_blocks", "min_block_length",
                       "max_block_length"},
                   "corpus.generator");
    read(g, "common_block_fraction", c.generator.common_block_fraction);
    read(g, "common_seed", c.generator.common_seed);
    read(g, "min_blocks", c.generator.min_blocks);
    read(g, "max_blocks", c.generator.max_blocks);
    read(g, "min_block_length", c.generator.min_block_length);
    read(g, "max_block_length", c.generator.max_block_length);
  }
  return c;
}

nlohmann::ordered_json to_json(const features::AugmentationConfig& c) {
  nlohmann::ordered_json j;
  j["rescale"] = c.rescale;
  j["zca_epsilon"] = c.zca_epsilon;
  j["zca_whitening"] = c.zca_whitening;
  j["fill_mode"] = fill_mode_name(c.fill_mode);
  j["rotation_range"] = c.rotation_range;
  j["height_shift_range"] = c.height_shift_range;
  j["horizontal_flip"] = c.horizontal_flip;
  return j;
}

features::AugmentationConfig augmentation_config_from_json(const nlohmann::json& j) {
  features::AugmentationConfig c;
  read(j, "rescale", c.rescale);
  read(j, "zca_epsilon", c.zca_epsilon);
  read(j, "zca_whitening", c.zca_whitening);
  if (j.contains("fill_mode")) c.fill_mode = fill_mode_from(j.at("fill_mode").get<std::string>());
  read(j, "rotation_range", c.rotation_range);
  read(j, "height_shift_range", c.height_shift_range);
  read(j, "horizontal_flip", c.horizontal_flip);
  return c;
}

void RunConfig::validate() const {
  try {
    if (corpus.families < 1) throw std::invalid_argument("corpus.families must be >= 1");
    if (corpus.samples_per_family <= corpus.variants_per_transform * corpus.transforms.size())
      throw std::invalid_argument("corpus.samples_per_family must exceed the number of variants");
    const auto& g = corpus.generator;
    if (g.common_block_fraction < 0.0 || g.common_block_fraction >= 1.0)
      throw std::invalid_argument("corpus.generator.common_block_fraction must lie in [0, 1)");
    if (g.min_blocks < 2 || g.max_blocks < g.min_blocks)
      throw std::invalid_argument("corpus.generator block counts must satisfy 2 <= min <= max");
    if (g.min_block_length < 2 || g.max_block_length < g.min_block_length)
      throw std::invalid_argument("corpus.generator block lengths must satisfy 2 <= min <= max");
    features.validate();
    model.validate();
    training.validate();
    if (model.task_input_dim != features.encoder_dim)
      throw std::invalid_argument("model.task_input_dim (" + std::to_string(model.task_input_dim) +
                                  ") must equal features.encoder_dim (" + std::to_string(features.encoder_dim) + ")");
    if (split.test_fraction <= 0.0 || split.val_fraction < 0.0 || split.test_fraction + split.val_fraction >= 1.0)
      throw std::invalid_argument("split fractions must satisfy test > 0, val >= 0, test + val < 1");
    if (eval.ways.empty() || eval.shots.empty()) throw std::invalid_argument("eval grid must not be empty");
    for (auto w : eval.ways) {
      if (w < 2) throw std::invalid_argument("eval ways must be >= 2");
    }
    for (auto s : eval.shots) {
      if (s < 1) throw std::invalid_argument("eval shots must be >= 1");
    }
    if (eval.episodes < 1) throw std::invalid_argument("eval.episodes must be >= 1");
    const auto& a = augmentation.params;
    if (a.rotation_range < 0.0 || a.height_shift_range < 0.0 || a.height_shift_range > 1.0 || !(a.rescale > 0.0))
      throw std::invalid_argument("augmentation parameters out of range");
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seeds"] = {{"corpus", seeds.corpus}, {"train", seeds.train}, {"eval", seeds.eval}};
  j["corpus"] = tasnn::to_json(corpus);
  j["features"] = features.to_json();
  j["augmentation"] = tasnn::to_json(augmentation.params);
  j["augmentation"]["copies"] = augmentation.copies;
  j["model"] = model.to_json();
  j["model"].erase("init_seed");
  j["training"] = training.to_json();
  j["training"].erase("seed");
  j["split"] = {{"test_fraction", split.test_fraction}, {"val_fraction", split.val_fraction}};
  j["eval"] = {{"ways", eval.ways}, {"shots", eval.shots}, {"episodes", eval.episodes}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    reject_unknown(j, {"seeds", "corpus", "features", "augmentation", "model", "training", "split", "eval"}, "config");
    if (j.contains("seeds")) {
      const auto& s = j.at("seeds");
      reject_unknown(s, {"corpus", "train", "eval"}, "seeds");
      read(s, "corpus", c.seeds.corpus);
      read(s, "train", c.seeds.train);
      read(s, "eval", c.seeds.eval);
    }
    if (j.contains("corpus")) c.corpus = corpus_config_from_json(j.at("corpus"));
    if (j.contains("features")) {
      reject_unknown(j.at("features"), {"segment_length", "graph_shape", "image_width", "encoder_seed", "encoder_dim"},
                     "features");
      c.features = data::FeatureOptions::from_json(j.at("features"));
    }
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      reject_unknown(a, {"rescale", "zca_epsilon", "zca_whitening", "fill_mode", "rotation_range",
                         "height_shift_range", "horizontal_flip", "copies"},
                     "augmentation");
      c.augmentation.params = augmentation_config_from_json(a);
      read(a, "copies", c.augmentation.copies);
    }
    if (j.contains("model")) {
      auto m = j.at("model");
      reject_unknown(m, {"conv_channels", "conv_kernels", "conv_strides", "pool_size", "fc_hidden", "embedding_dim",
                         "task_input_dim", "task_hidden", "conditioned_layers", "task_aware", "beta",
                         "center_loss_weight", "center_update_rate", "input_scale", "initial_shift"},
                     "model");
      c.model = model::ModelConfig::from_json(m);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      reject_unknown(t, {"epochs", "steps_per_epoch", "batch_pairs", "task_classes", "max_support", "lr_image",
                         "lr_task", "adam_beta1", "adam_beta2", "adam_epsilon", "val_batches"},
                     "training");
      c.training = train::TrainingConfig::from_json(t);
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      reject_unknown(s, {"test_fraction", "val_fraction"}, "split");
      read(s, "test_fraction", c.split.test_fraction);
      read(s, "val_fraction", c.split.val_fraction);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      reject_unknown(e, {"ways", "shots", "episodes"}, "eval");
      read(e, "ways", c.eval.ways);
      read(e, "shots", c.eval.shots);
      read(e, "episodes", c.eval.episodes);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config type error: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("cannot parse " + path.string() + ": " + ex.what());
  }
  return from_json(j);
}

model::ModelConfig RunConfig::model_config() const {
  auto m = model;
  m.init_seed = mix_seed(seeds.train, 0x1417);
  return m;
}

train::TrainingConfig RunConfig::training_config() const {
  auto t = training;
  t.seed = seeds.train;
  return t;
}

std::uint64_t RunConfig::split_seed() const { return mix_seed(seeds.train, 0x5b1); }

std::string RunConfig::digest() const { return fnv1a_hex(to_json().dump()); }

}  // namespace tasnn

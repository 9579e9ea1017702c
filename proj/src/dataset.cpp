#include "tasnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

#include "tasnn/common.hpp"
#include "tasnn/npy.hpp"

namespace tasnn::data {

namespace fs = std::filesystem;

void FeatureOptions::validate() const {
  if (segment_length < 1) throw std::invalid_argument("features: segment_length must be >= 1");
  if (graph_shape.rows < 1 || graph_shape.cols < 1) throw std::invalid_argument("features: graph shape must be positive");
  if (image_width < 1) throw std::invalid_argument("features: image_width must be >= 1");
  if (encoder_dim < 1) throw std::invalid_argument("features: encoder_dim must be >= 1");
}

nlohmann::ordered_json FeatureOptions::to_json() const {
  nlohmann::ordered_json j;
  j["segment_length"] = segment_length;
  j["graph_shape"] = {graph_shape.rows, graph_shape.cols};
  j["image_width"] = image_width;
  j["encoder_seed"] = encoder_seed;
  j["encoder_dim"] = encoder_dim;
  return j;
}

FeatureOptions FeatureOptions::from_json(const nlohmann::json& j) {
  FeatureOptions o;
  if (j.contains("segment_length")) o.segment_length = j.at("segment_length").get<std::size_t>();
  if (j.contains("graph_shape")) {
    const auto& g = j.at("graph_shape");
    if (!g.is_array() || g.size() != 2) throw std::invalid_argument("features: graph_shape must be [rows, cols]");
    o.graph_shape = {g[0].get<std::size_t>(), g[1].get<std::size_t>()};
  }
  if (j.contains("image_width")) o.image_width = j.at("image_width").get<std::size_t>();
  if (j.contains("encoder_seed")) o.encoder_seed = j.at("encoder_seed").get<std::uint64_t>();
  if (j.contains("encoder_dim")) o.encoder_dim = j.at("encoder_dim").get<std::size_t>();
  return o;
}

std::vector<std::vector<std::size_t>> Dataset::by_class() const {
  std::vector<std::vector<std::size_t>> out(class_names.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out.at(static_cast<std::size_t>(samples[i].label)).push_back(i);
  return out;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset d;
  d.class_names = class_names;
  d.options = options;
  d.samples.reserve(indices.size());
  for (auto i : indices) d.samples.push_back(samples.at(i));
  d.digest = dataset_digest(d);
  return d;
}

namespace {

std::string sample_id(const std::string& family, std::size_t ordinal, corpus::Provenance prov) {
  char name[96];
  std::snprintf(name, sizeof name, "%s_%03zu_%s", family.c_str(), ordinal, std::string(corpus::to_string(prov)).c_str());
  return family + "/" + name;
}

Sample extract_one(const corpus::Bytes& bytes, const FeatureOptions& options, const features::TaskEncoder& encoder) {
  Sample s;
  const auto series = features::entropy_series(bytes, options.segment_length);
  auto graph = features::entropy_graph(series, options.graph_shape);
  // Stored as float32 on disk; keep the in-memory copy identical.
  for (auto& v : graph.cells) v = static_cast<double>(static_cast<float>(v));
  s.task_feature = features::entropy_encode(graph, encoder, options.encoder_dim);
  s.entropy_graph = std::move(graph.cells);
  s.image = features::binary_to_image(bytes, options.image_width);
  return s;
}

void append_doubles(std::string& out, const std::vector<double>& v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

}  // namespace

Dataset build_dataset(const corpus::Corpus& corpus, const FeatureOptions& options,
                      const features::TaskEncoder& encoder) {
  options.validate();
  Dataset ds;
  ds.class_names = corpus.family_names;
  ds.options = options;
  std::vector<std::size_t> per_family(corpus.family_names.size(), 0);
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto& cs = corpus.samples[i];
    auto s = extract_one(cs.program.serialize(), options, encoder);
    s.id = sample_id(corpus.family_names[cs.family_index], per_family[cs.family_index]++, cs.program.provenance);
    s.label = static_cast<int>(cs.family_index);
    s.group = cs.parent.value_or(i);
    s.provenance = cs.program.provenance;
    ds.samples.push_back(std::move(s));
  }
  ds.digest = dataset_digest(ds);
  return ds;
}

Dataset extract_manifest(const corpus::CorpusManifest& manifest, const fs::path& root,
                         const FeatureOptions& options, const features::TaskEncoder& encoder) {
  options.validate();
  manifest.validate(root);
  Dataset ds;
  ds.options = options;
  std::map<std::string, int> label_of;
  for (const auto& f : manifest.families) {
    label_of[f.name] = static_cast<int>(ds.class_names.size());
    ds.class_names.push_back(f.name);
  }
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    std::ifstream in(root / e.path, std::ios::binary);
    if (!in) throw DataError("cannot read " + (root / e.path).string());
    corpus::Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty()) throw DataError("empty program file " + e.path);
    auto s = extract_one(bytes, options, encoder);
    auto id = fs::path(e.path).replace_extension().generic_string();
    s.id = id;
    s.label = label_of.at(e.family);
    s.group = e.parent.value_or(i);
    s.provenance = e.provenance;
    ds.samples.push_back(std::move(s));
  }
  ds.digest = dataset_digest(ds);
  return ds;
}

std::string dataset_digest(const Dataset& ds) {
  std::string buf = ds.options.to_json().dump();
  for (const auto& c : ds.class_names) buf += c + ";";
  for (const auto& s : ds.samples) {
    buf += s.id;
    buf += ":" + std::to_string(s.label) + ":" + std::to_string(s.group) + (s.augmented ? "a" : "o");
    std::string values;
    append_doubles(values, s.entropy_graph);
    append_doubles(values, s.image.pixels);
    append_doubles(values, s.task_feature);
    buf += fnv1a_hex(values);
  }
  return fnv1a_hex(buf);
}

void write_dataset(const Dataset& ds, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  nlohmann::ordered_json j;
  j["format"] = "tasnn-features/1";
  j["options"] = ds.options.to_json();
  j["classes"] = ds.class_names;
  j["samples"] = nlohmann::ordered_json::array();
  const auto& g = ds.options.graph_shape;
  for (const auto& s : ds.samples) {
    const fs::path base = s.id;
    fs::create_directories(out_dir / base.parent_path(), ec);
    if (ec) throw DataError("cannot create directory for " + s.id);
    const auto graph_rel = base.generic_string() + ".graph.npy";
    const auto image_rel = base.generic_string() + ".image.npy";
    const auto task_rel = base.generic_string() + ".task.npy";
    npy::save(out_dir / graph_rel, s.entropy_graph, {g.rows, g.cols}, npy::DType::f4);
    npy::save(out_dir / image_rel, s.image.pixels, {features::kImageSide, features::kImageSide}, npy::DType::f8);
    npy::save(out_dir / task_rel, s.task_feature, {s.task_feature.size()}, npy::DType::f8);
    nlohmann::ordered_json e;
    e["id"] = s.id;
    e["label"] = s.label;
    e["group"] = s.group;
    e["provenance"] = std::string(corpus::to_string(s.provenance));
    e["augmented"] = s.augmented;
    e["graph"] = graph_rel;
    e["image"] = image_rel;
    e["task"] = task_rel;
    j["samples"].push_back(std::move(e));
  }
  j["digest"] = ds.digest.empty() ? dataset_digest(ds) : ds.digest;
  const auto tmp = out_dir / "features.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, out_dir / "features.json", ec);
  if (ec) throw DataError("cannot finalize features.json in " + out_dir.string());
}

Dataset load_dataset(const fs::path& features_manifest) {
  std::ifstream in(features_manifest);
  if (!in) throw DataError("cannot open feature manifest " + features_manifest.string());
  const auto root = features_manifest.parent_path();
  Dataset ds;
  std::string recorded;
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("format").get<std::string>() != "tasnn-features/1") throw DataError("unsupported feature manifest format");
    ds.options = FeatureOptions::from_json(j.at("options"));
    ds.class_names = j.at("classes").get<std::vector<std::string>>();
    for (const auto& e : j.at("samples")) {
      Sample s;
      s.id = e.at("id").get<std::string>();
      s.label = e.at("label").get<int>();
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= ds.class_names.size())
        throw DataError("label out of range for " + s.id);
      s.group = e.at("group").get<std::size_t>();
      s.provenance = corpus::provenance_from_string(e.at("provenance").get<std::string>());
      s.augmented = e.at("augmented").get<bool>();
      auto graph = npy::load(root / e.at("graph").get<std::string>());
      auto image = npy::load(root / e.at("image").get<std::string>());
      auto task = npy::load(root / e.at("task").get<std::string>());
      if (image.data.size() != features::kImageSide * features::kImageSide)
        throw DataError("image has wrong size for " + s.id);
      if (graph.data.size() != ds.options.graph_shape.size()) throw DataError("graph has wrong size for " + s.id);
      if (task.data.size() != ds.options.encoder_dim) throw DataError("task feature has wrong size for " + s.id);
      s.entropy_graph = std::move(graph.data);
      s.image.pixels = std::move(image.data);
      s.task_feature = std::move(task.data);
      ds.samples.push_back(std::move(s));
    }
    recorded = j.at("digest").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed feature manifest: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw DataError(std::string("malformed feature manifest: ") + ex.what());
  }
  ds.digest = dataset_digest(ds);
  if (ds.digest != recorded) throw DataError("feature files do not match the manifest digest");
  return ds;
}

Split split_by_group(const Dataset& ds, double test_fraction, double val_fraction, std::uint64_t seed) {
  if (test_fraction < 0.0 || val_fraction < 0.0 || test_fraction + val_fraction >= 1.0)
    throw std::invalid_argument("split: fractions must be >= 0 and sum below 1");
  Split split;
  std::vector<int> side(ds.samples.size(), 0);  // 0 train, 1 val, 2 test
  for (std::size_t c = 0; c < ds.n_classes(); ++c) {
    std::vector<std::size_t> groups;
    for (const auto& s : ds.samples) {
      if (static_cast<std::size_t>(s.label) == c && std::find(groups.begin(), groups.end(), s.group) == groups.end())
        groups.push_back(s.group);
    }
    std::sort(groups.begin(), groups.end());
    Rng rng(mix_seed(seed, 0x5b000 + c));
    shuffle_in_place(groups, rng);
    const auto n = groups.size();
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
    n_test = std::min(n_test, n > 0 ? n - 1 : 0);
    n_val = std::min(n_val, n - std::min(n, n_test + 1));
    std::map<std::size_t, int> assign;
    for (std::size_t g = 0; g < n; ++g) assign[groups[g]] = g < n_test ? 2 : (g < n_test + n_val ? 1 : 0);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      if (static_cast<std::size_t>(ds.samples[i].label) == c) side[i] = assign.at(ds.samples[i].group);
    }
  }
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (side[i] == 0) split.train.push_back(i);
    else if (ds.samples[i].augmented) continue;
    else if (side[i] == 1) split.val.push_back(i);
    else split.test.push_back(i);
  }
  return split;
}

}  // namespace tasnn::data

#include "tasnn/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "tasnn/common.hpp"

namespace tasnn::corpus {

namespace fs = std::filesystem;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::shuffle: return "shuffle";
    case Provenance::junk: return "junk";
    case Provenance::split: return "split";
  }
  return "original";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "original") return Provenance::original;
  if (s == "shuffle") return Provenance::shuffle;
  if (s == "junk") return Provenance::junk;
  if (s == "split") return Provenance::split;
  throw std::invalid_argument("unknown provenance tag: " + std::string(s));
}

Bytes SyntheticProgram::serialize() const {
  Bytes out;
  std::size_t total = 0;
  for (const auto& b : blocks) total += b.body.size();
  out.reserve(total);
  for (const auto& b : blocks) out.insert(out.end(), b.body.begin(), b.body.end());
  return out;
}

Bytes SyntheticProgram::executable_bytes() const {
  Bytes out;
  for (const auto& b : blocks) {
    if (b.executable) out.insert(out.end(), b.body.begin(), b.body.end());
  }
  return out;
}

void SyntheticProgram::validate() const {
  bool any_executable = false;
  std::vector<std::uint32_t> ids;
  ids.reserve(blocks.size());
  for (const auto& b : blocks) {
    if (b.body.empty()) throw std::invalid_argument("function block " + std::to_string(b.id) + " has an empty body");
    any_executable = any_executable || b.executable;
    ids.push_back(b.id);
  }
  if (!any_executable) throw std::invalid_argument("program has no executable block");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::invalid_argument("duplicate function block id");
}

const FunctionBlock* SyntheticProgram::find(std::uint32_t id) const {
  for (const auto& b : blocks) {
    if (b.id == id) return &b;
  }
  return nullptr;
}

std::uint32_t SyntheticProgram::next_id() const {
  std::uint32_t next = 0;
  for (const auto& b : blocks) next = std::max(next, b.id + 1);
  return next;
}

namespace {

ByteProfile make_profile(Rng& rng, const std::vector<std::uint8_t>& pool, std::size_t size,
                         double max_skew) {
  size = std::min(size, pool.size());
  ByteProfile profile;
  for (auto idx : sample_without_replacement(rng, pool.size(), size)) profile.alphabet.push_back(pool[idx]);
  const double skew = uniform(rng, 0.0, max_skew);
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    total += 1.0 / std::pow(static_cast<double>(i + 1), skew);
    profile.cumulative.push_back(total);
  }
  for (auto& c : profile.cumulative) c /= total;
  profile.cumulative.back() = 1.0;
  return profile;
}

std::uint8_t draw_byte(const ByteProfile& profile, Rng& rng) {
  const double u = uniform01(rng);
  const auto it = std::upper_bound(profile.cumulative.begin(), profile.cumulative.end(), u);
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - profile.cumulative.begin()),
                                         profile.alphabet.size() - 1);
  return profile.alphabet[idx];
}

// Library code shared by every family: broad alphabet, mild skew.
const ByteProfile& common_profile(std::uint64_t seed) {
  thread_local std::uint64_t cached_seed = ~seed;
  thread_local ByteProfile cached;
  if (cached_seed != seed) {
    Rng rng(mix_seed(seed, 0xc0de));
    std::vector<std::uint8_t> pool(256);
    std::iota(pool.begin(), pool.end(), std::uint8_t{0});
    cached = make_profile(rng, pool, 96, 0.8);
    cached_seed = seed;
  }
  return cached;
}

}  // namespace

FamilySignature FamilySignature::from_seed(std::uint64_t signature_seed) {
  Rng rng(mix_seed(signature_seed, 0));
  // Alphabet exponent sets the family's entropy band; the intensity band sets
  // where its bytes sit in [0, 255].
  const auto base = static_cast<int>(3 + uniform_index(rng, 5));
  const auto band_width = std::max<std::size_t>(std::size_t{1} << (base + 1),
                                                48 + uniform_index(rng, 96));
  const auto width = std::min<std::size_t>(band_width, 256);
  const auto lo = uniform_index(rng, 256 - width + 1);
  std::vector<std::uint8_t> pool(width);
  for (std::size_t i = 0; i < width; ++i) pool[i] = static_cast<std::uint8_t>(lo + i);

  FamilySignature sig;
  const auto n_profiles = 3 + uniform_index(rng, 3);
  for (std::size_t k = 0; k < n_profiles; ++k) {
    const int e = std::clamp(base + static_cast<int>(uniform_index(rng, 3)) - 1, 1, 8);
    sig.profiles.push_back(make_profile(rng, pool, std::size_t{1} << e, 1.2));
  }
  return sig;
}

std::vector<SyntheticProgram> generate_family(std::string_view name, std::size_t n_samples,
                                              std::uint64_t signature_seed,
                                              const GeneratorOptions& options) {
  if (n_samples < 1) throw std::invalid_argument("generate_family: n_samples must be >= 1");
  if (options.min_blocks < 2 || options.max_blocks < options.min_blocks ||
      options.min_block_length < 2 || options.max_block_length < options.min_block_length)
    throw std::invalid_argument("generate_family: invalid block size options");
  if (options.common_block_fraction < 0.0 || options.common_block_fraction > 1.0)
    throw std::invalid_argument("generate_family: common_block_fraction outside [0, 1]");

  const auto sig = FamilySignature::from_seed(signature_seed);
  const auto& common = common_profile(options.common_seed);

  std::vector<SyntheticProgram> out;
  out.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    Rng rng(mix_seed(signature_seed, 1000 + i));
    SyntheticProgram p;
    p.family = std::string(name);
    const auto n_blocks =
        options.min_blocks + uniform_index(rng, options.max_blocks - options.min_blocks + 1);
    for (std::size_t b = 0; b < n_blocks; ++b) {
      FunctionBlock block;
      block.id = static_cast<std::uint32_t>(b);
      const auto len = options.min_block_length +
                       uniform_index(rng, options.max_block_length - options.min_block_length + 1);
      const bool library = uniform01(rng) < options.common_block_fraction;
      const auto& profile =
          library ? common : sig.profiles[uniform_index(rng, sig.profiles.size())];
      block.body.resize(len);
      for (auto& byte : block.body) byte = draw_byte(profile, rng);
      p.blocks.push_back(std::move(block));
    }
    out.push_back(std::move(p));
  }
  return out;
}

SyntheticProgram shuffle_functions(const SyntheticProgram& p, std::uint64_t seed) {
  if (p.blocks.size() < 2) throw std::invalid_argument("shuffle_functions: need at least 2 blocks");
  Rng rng(mix_seed(seed, 0x5f));
  std::vector<std::size_t> order(p.blocks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto identity = order;
  do {
    shuffle_in_place(order, rng);
  } while (order == identity);

  SyntheticProgram out;
  out.family = p.family;
  out.provenance = Provenance::shuffle;
  for (auto idx : order) out.blocks.push_back(p.blocks[idx]);
  return out;
}

SyntheticProgram insert_junk(const SyntheticProgram& p, std::span<const std::uint8_t> junk_body,
                             std::size_t position) {
  if (position > p.blocks.size()) throw std::invalid_argument("insert_junk: position out of range");
  if (junk_body.empty()) throw std::invalid_argument("insert_junk: junk body must be non-empty");
  SyntheticProgram out = p;
  out.provenance = Provenance::junk;
  FunctionBlock junk;
  junk.id = p.next_id();
  junk.body.assign(junk_body.begin(), junk_body.end());
  junk.executable = false;
  out.blocks.insert(out.blocks.begin() + static_cast<std::ptrdiff_t>(position), std::move(junk));
  return out;
}

Bytes dummy_array_junk(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1a));
  const auto count = 64 + uniform_index(rng, 193);
  const auto start = static_cast<std::uint32_t>(uniform_index(rng, 1024));
  const auto step = static_cast<std::uint32_t>(1 + uniform_index(rng, 16));
  Bytes body;
  body.reserve(count * 4);
  for (std::uint32_t j = 0; j < count; ++j) {
    const std::uint32_t v = start + j * step;
    for (int k = 0; k < 4; ++k) body.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  return body;
}

SyntheticProgram insert_random_junk(const SyntheticProgram& p, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x1b));
  const auto position = uniform_index(rng, p.blocks.size() + 1);
  return insert_junk(p, dummy_array_junk(seed), position);
}

SyntheticProgram split_function(const SyntheticProgram& p, std::uint32_t target,
                                std::size_t n_fragments, std::uint64_t seed) {
  const auto it = std::find_if(p.blocks.begin(), p.blocks.end(),
                               [&](const FunctionBlock& b) { return b.id == target; });
  if (it == p.blocks.end()) throw std::invalid_argument("split_function: unknown target block");
  const auto& source = *it;
  if (n_fragments < 2 || n_fragments > source.body.size())
    throw std::invalid_argument("split_function: n_fragments out of range");

  SyntheticProgram out;
  out.family = p.family;
  out.provenance = Provenance::split;
  for (const auto& b : p.blocks) {
    if (b.id != target) out.blocks.push_back(b);
  }

  Rng rng(mix_seed(seed, 0x59));
  const auto base = source.body.size() / n_fragments;
  const auto extra = source.body.size() % n_fragments;
  std::uint32_t id = p.next_id();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < n_fragments; ++k) {
    const auto len = base + (k < extra ? 1 : 0);
    FunctionBlock frag;
    frag.id = id++;
    frag.executable = source.executable;
    frag.body.assign(source.body.begin() + static_cast<std::ptrdiff_t>(offset),
                     source.body.begin() + static_cast<std::ptrdiff_t>(offset + len));
    frag.fragment = FragmentInfo{target, static_cast<std::uint32_t>(k),
                                 static_cast<std::uint32_t>(n_fragments)};
    offset += len;
    const auto pos = uniform_index(rng, out.blocks.size() + 1);
    out.blocks.insert(out.blocks.begin() + static_cast<std::ptrdiff_t>(pos), std::move(frag));
  }
  return out;
}

Bytes reassemble_fragments(const SyntheticProgram& p, std::uint32_t source_id) {
  std::vector<const FunctionBlock*> frags;
  for (const auto& b : p.blocks) {
    if (b.fragment && b.fragment->source_id == source_id) frags.push_back(&b);
  }
  std::sort(frags.begin(), frags.end(), [](const FunctionBlock* a, const FunctionBlock* b) {
    return a->fragment->index < b->fragment->index;
  });
  Bytes out;
  for (const auto* f : frags) out.insert(out.end(), f->body.begin(), f->body.end());
  return out;
}

SyntheticProgram split_random_function(const SyntheticProgram& p, std::uint64_t seed) {
  std::vector<std::uint32_t> candidates;
  for (const auto& b : p.blocks) {
    if (b.executable && b.body.size() >= 2) candidates.push_back(b.id);
  }
  if (candidates.empty()) throw std::invalid_argument("split_random_function: nothing to split");
  Rng rng(mix_seed(seed, 0x5a));
  return split_function(p, candidates[uniform_index(rng, candidates.size())], 2, seed);
}

SyntheticProgram apply_transform(const SyntheticProgram& p, Provenance transform,
                                 std::uint64_t seed) {
  switch (transform) {
    case Provenance::shuffle: return shuffle_functions(p, seed);
    case Provenance::junk: return insert_random_junk(p, seed);
    case Provenance::split: return split_random_function(p, seed);
    case Provenance::original: break;
  }
  throw std::invalid_argument("apply_transform: 'original' is not a transform");
}

std::string family_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fam%02zu", index);
  return buf;
}

std::uint64_t family_signature_seed(std::uint64_t master_seed, std::size_t family_index) {
  return mix_seed(master_seed, 0xfa000 + family_index);
}

Corpus build_corpus(const CorpusConfig& cfg, std::uint64_t master_seed) {
  if (cfg.families < 1) throw std::invalid_argument("corpus: need at least one family");
  const auto n_variants = cfg.variants_per_transform * cfg.transforms.size();
  if (cfg.samples_per_family <= n_variants)
    throw std::invalid_argument("corpus: samples_per_family must exceed the variant count");
  for (auto t : cfg.transforms) {
    if (t == Provenance::original) throw std::invalid_argument("corpus: 'original' is not a transform");
  }
  const auto n_original = cfg.samples_per_family - n_variants;

  Corpus corpus;
  corpus.seed = master_seed;
  for (std::size_t f = 0; f < cfg.families; ++f) {
    const auto name = family_name(f);
    corpus.family_names.push_back(name);
    const auto first = corpus.samples.size();
    for (auto& prog : generate_family(name, n_original, family_signature_seed(master_seed, f), cfg.generator)) {
      corpus.samples.push_back({std::move(prog), f, std::nullopt});
    }
    Rng rng(mix_seed(master_seed, 0x7a000 + f));
    for (auto t : cfg.transforms) {
      for (std::size_t v = 0; v < cfg.variants_per_transform; ++v) {
        const auto parent = first + uniform_index(rng, n_original);
        const auto seed = rng();
        auto variant = apply_transform(corpus.samples[parent].program, t, seed);
        corpus.samples.push_back({std::move(variant), f, parent});
      }
    }
  }
  return corpus;
}

nlohmann::ordered_json CorpusManifest::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "tasnn-corpus/1";
  j["seed"] = seed;
  j["families"] = nlohmann::ordered_json::array();
  for (const auto& f : families) {
    j["families"].push_back({{"name", f.name}, {"samples", f.samples}, {"variants", f.variants}});
  }
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json je;
    je["path"] = e.path;
    je["family"] = e.family;
    je["provenance"] = std::string(to_string(e.provenance));
    je["parent"] = e.parent ? nlohmann::ordered_json(*e.parent) : nlohmann::ordered_json(nullptr);
    j["entries"].push_back(std::move(je));
  }
  j["digest"] = digest;
  return j;
}

CorpusManifest CorpusManifest::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "tasnn-corpus/1") throw DataError("unsupported corpus manifest format");
    CorpusManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& f : j.at("families")) {
      m.families.push_back({f.at("name").get<std::string>(), f.at("samples").get<std::size_t>(),
                            f.at("variants").get<std::size_t>()});
    }
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.path = e.at("path").get<std::string>();
      entry.family = e.at("family").get<std::string>();
      entry.provenance = provenance_from_string(e.at("provenance").get<std::string>());
      if (!e.at("parent").is_null()) entry.parent = e.at("parent").get<std::size_t>();
      m.entries.push_back(std::move(entry));
    }
    m.digest = j.at("digest").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed corpus manifest: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    throw DataError(std::string("malformed corpus manifest: ") + ex.what());
  }
}

CorpusManifest CorpusManifest::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError("cannot parse " + path.string() + ": " + ex.what());
  }
  return from_json(j);
}

void CorpusManifest::validate(const fs::path& root) const {
  std::size_t total = 0;
  for (const auto& f : families) {
    const auto n = static_cast<std::size_t>(std::count_if(
        entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.family == f.name; }));
    if (n != f.samples) throw DataError("manifest count mismatch for family " + f.name);
    total += n;
  }
  if (total != entries.size()) throw DataError("manifest has entries for undeclared families");
  for (const auto& e : entries) {
    if (!fs::is_regular_file(root / e.path)) throw DataError("missing program file " + e.path);
    if (e.parent && *e.parent >= entries.size()) throw DataError("dangling parent index in " + e.path);
  }
}

namespace {

void write_bytes(const fs::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

}  // namespace

CorpusManifest write_corpus(const Corpus& corpus, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());

  CorpusManifest m;
  m.seed = corpus.seed;
  for (std::size_t f = 0; f < corpus.family_names.size(); ++f) {
    ManifestFamily mf{corpus.family_names[f], 0, 0};
    for (const auto& s : corpus.samples) {
      if (s.family_index != f) continue;
      ++mf.samples;
      if (s.program.provenance != Provenance::original) ++mf.variants;
    }
    m.families.push_back(mf);
  }

  std::string digest_input = std::to_string(corpus.seed);
  std::vector<std::size_t> per_family(corpus.family_names.size(), 0);
  for (const auto& s : corpus.samples) {
    const auto& fam = corpus.family_names[s.family_index];
    char name[96];
    std::snprintf(name, sizeof name, "%s_%03zu_%s.bin", fam.c_str(), per_family[s.family_index]++,
                  std::string(to_string(s.program.provenance)).c_str());
    const auto rel = fs::path(fam) / name;
    fs::create_directories(out_dir / fam, ec);
    if (ec) throw DataError("cannot create " + (out_dir / fam).string() + ": " + ec.message());
    const auto bytes = s.program.serialize();
    write_bytes(out_dir / rel, bytes);
    m.entries.push_back({rel.generic_string(), fam, s.program.provenance, s.parent});
    digest_input += rel.generic_string();
    digest_input += fnv1a_hex(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    digest_input += s.parent ? std::to_string(*s.parent) : "-";
  }
  m.digest = fnv1a_hex(digest_input);

  const auto tmp = out_dir / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << m.to_json().dump(2) << '\n';
    if (!out) throw DataError("short write to " + tmp.string());
  }
  fs::rename(tmp, out_dir / "manifest.json", ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("cannot finalize manifest in " + out_dir.string());
  }
  return m;
}

}  // namespace tasnn::corpus

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace tasnn::corpus {

using Bytes = std::vector<std::uint8_t>;

enum class Provenance { original, shuffle, junk, split };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view s);

// Where a split fragment came from; fragments of one source are ordered by
// `index` and concatenate back to the source body.
struct FragmentInfo {
  std::uint32_t source_id = 0;
  std::uint32_t index = 0;
  std::uint32_t count = 0;
};

struct FunctionBlock {
  std::uint32_t id = 0;
  Bytes body;
  bool executable = true;  // false marks junk
  std::optional<FragmentInfo> fragment;
};

struct SyntheticProgram {
  std::string family;
  std::vector<FunctionBlock> blocks;
  Provenance provenance = Provenance::original;

  // Concatenation of block bodies in order.
  Bytes serialize() const;
  // Bytes of executable blocks only, in order.
  Bytes executable_bytes() const;
  // Throws std::invalid_argument if an invariant is broken.
  void validate() const;
  const FunctionBlock* find(std::uint32_t id) const;
  std::uint32_t next_id() const;
};

// Knobs shared by every family of one corpus.
struct GeneratorOptions {
  // Fraction of blocks drawn from a library profile common to all families.
  double common_block_fraction = 0.25;
  std::uint64_t common_seed = 0x5eed;
  std::size_t min_blocks = 6;
  std::size_t max_blocks = 14;
  std::size_t min_block_length = 128;
  std::size_t max_block_length = 1536;
};

// Family programs draw their block bytes from a handful of categorical byte
// profiles derived from the signature seed.
struct ByteProfile {
  std::vector<std::uint8_t> alphabet;
  std::vector<double> cumulative;  // same length as alphabet, ends at 1
};

struct FamilySignature {
  std::vector<ByteProfile> profiles;
  static FamilySignature from_seed(std::uint64_t signature_seed);
};

std::vector<SyntheticProgram> generate_family(std::string_view name, std::size_t n_samples,
                                              std::uint64_t signature_seed,
                                              const GeneratorOptions& options = {});

// Permutes blocks; identity permutations are re-drawn.
SyntheticProgram shuffle_functions(const SyntheticProgram& p, std::uint64_t seed);

// Inserts one non-executable block at `position` (0..block count).
SyntheticProgram insert_junk(const SyntheticProgram& p, std::span<const std::uint8_t> junk_body,
                             std::size_t position);

// Dummy-array junk body and insertion point drawn from `seed`.
SyntheticProgram insert_random_junk(const SyntheticProgram& p, std::uint64_t seed);
Bytes dummy_array_junk(std::uint64_t seed);

// Cuts block `target` into `n_fragments` near-equal pieces and scatters them
// at seed-chosen positions.
SyntheticProgram split_function(const SyntheticProgram& p, std::uint32_t target,
                                std::size_t n_fragments, std::uint64_t seed);

// Concatenates the fragments of `source_id` in fragment-index order.
Bytes reassemble_fragments(const SyntheticProgram& p, std::uint32_t source_id);

// Splits a seed-chosen executable block into two fragments.
SyntheticProgram split_random_function(const SyntheticProgram& p, std::uint64_t seed);

SyntheticProgram apply_transform(const SyntheticProgram& p, Provenance transform,
                                 std::uint64_t seed);

// Full-corpus generation.

struct CorpusConfig {
  std::size_t families = 13;
  std::size_t samples_per_family = 30;
  std::size_t variants_per_transform = 2;
  std::vector<Provenance> transforms = {Provenance::shuffle, Provenance::junk, Provenance::split};
  GeneratorOptions generator;
};

struct CorpusSample {
  SyntheticProgram program;
  std::size_t family_index = 0;
  std::optional<std::size_t> parent;  // index of the original this variant came from
};

struct Corpus {
  std::vector<std::string> family_names;
  std::vector<CorpusSample> samples;
  std::uint64_t seed = 0;
};

std::string family_name(std::size_t index);
std::uint64_t family_signature_seed(std::uint64_t master_seed, std::size_t family_index);

Corpus build_corpus(const CorpusConfig& cfg, std::uint64_t master_seed);

struct ManifestFamily {
  std::string name;
  std::size_t samples = 0;
  std::size_t variants = 0;
};

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  std::string family;
  Provenance provenance = Provenance::original;
  std::optional<std::size_t> parent;
};

struct CorpusManifest {
  std::vector<ManifestFamily> families;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
  std::string digest;

  nlohmann::ordered_json to_json() const;
  static CorpusManifest from_json(const nlohmann::json& j);
  static CorpusManifest load(const std::filesystem::path& path);
  // Throws DataError if counts disagree with entries or files are missing.
  void validate(const std::filesystem::path& root) const;
};

// Writes one .bin per program and then manifest.json (atomically, last).
CorpusManifest write_corpus(const Corpus& corpus, const std::filesystem::path& out_dir);

}  // namespace tasnn::corpus

#include "doctest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tasnn/common.hpp"
#include "tasnn/corpus.hpp"
#include "tasnn/features.hpp"

using namespace tasnn;
using namespace tasnn::corpus;

namespace {

SyntheticProgram program_of(std::initializer_list<Bytes> bodies) {
  SyntheticProgram p;
  p.family = "toy";
  std::uint32_t id = 0;
  for (const auto& b : bodies) p.blocks.push_back({id++, b, true, std::nullopt});
  return p;
}

std::array<std::size_t, 256> histogram(const Bytes& b) {
  std::array<std::size_t, 256> h{};
  for (auto v : b) ++h[v];
  return h;
}

Bytes sorted(Bytes b) {
  std::sort(b.begin(), b.end());
  return b;
}

}  // namespace

TEST_CASE("generate_family is deterministic") {
  const auto a = generate_family("A", 1, 7);
  const auto b = generate_family("A", 1, 7);
  REQUIRE(a.size() == 1);
  CHECK(a[0].serialize() == b[0].serialize());
  CHECK(a[0].provenance == Provenance::original);
  CHECK_NOTHROW(a[0].validate());
}

TEST_CASE("generate_family rejects zero samples") {
  CHECK_THROWS_AS(generate_family("A", 0, 7), std::invalid_argument);
}

TEST_CASE("signatures 7 and 8 separate by mean full-file entropy") {
  // Frozen measurement: 100 samples per family.
  const auto a = generate_family("A", 100, 7);
  const auto b = generate_family("B", 100, 8);
  double ma = 0.0, mb = 0.0;
  for (const auto& p : a) ma += features::shannon_entropy(p.serialize());
  for (const auto& p : b) mb += features::shannon_entropy(p.serialize());
  ma /= 100.0;
  mb /= 100.0;
  MESSAGE("mean entropy seed 7: " << ma << ", seed 8: " << mb);
  CHECK(std::abs(ma - mb) >= 0.5);
}

TEST_CASE("shuffle of two blocks swaps them") {
  const auto p = program_of({{1, 2, 3}, {9, 9}});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = shuffle_functions(p, seed);
    REQUIRE(s.blocks.size() == 2);
    CHECK(s.blocks[0].body == Bytes{9, 9});
    CHECK(s.blocks[1].body == Bytes{1, 2, 3});
    CHECK(s.provenance == Provenance::shuffle);
  }
}

TEST_CASE("shuffle never returns the identity order") {
  const auto p = generate_family("A", 1, 3)[0];
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = shuffle_functions(p, seed);
    bool same = true;
    for (std::size_t i = 0; i < p.blocks.size(); ++i) same = same && s.blocks[i].id == p.blocks[i].id;
    CHECK_FALSE(same);
    CHECK(histogram(s.serialize()) == histogram(p.serialize()));
  }
}

TEST_CASE("shuffle needs two blocks") {
  CHECK_THROWS_AS(shuffle_functions(program_of({{1}}), 1), std::invalid_argument);
}

TEST_CASE("junk insertion between two calls") {
  const auto p = program_of({{1, 1}, {2, 2}});
  const Bytes junk{0xde, 0xad};
  const auto j = insert_junk(p, junk, 1);
  REQUIRE(j.blocks.size() == 3);
  CHECK_FALSE(j.blocks[1].executable);
  CHECK(j.blocks[1].body == junk);
  CHECK(j.blocks[0].body == p.blocks[0].body);
  CHECK(j.blocks[2].body == p.blocks[1].body);
  CHECK(j.provenance == Provenance::junk);
}

TEST_CASE("junk insertion errors") {
  const auto p = program_of({{1, 1}, {2, 2}});
  CHECK_THROWS_AS(insert_junk(p, Bytes{}, 0), std::invalid_argument);
  CHECK_THROWS_AS(insert_junk(p, Bytes{1}, 3), std::invalid_argument);
  CHECK_NOTHROW(insert_junk(p, Bytes{1}, 2));
}

TEST_CASE("removing junk restores the input") {
  const auto p = generate_family("A", 1, 5)[0];
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto j = insert_random_junk(p, seed);
    std::erase_if(j.blocks, [](const FunctionBlock& b) { return !b.executable; });
    REQUIRE(j.blocks.size() == p.blocks.size());
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
      CHECK(j.blocks[i].id == p.blocks[i].id);
      CHECK(j.blocks[i].body == p.blocks[i].body);
    }
  }
}

TEST_CASE("split at the midpoint") {
  const auto p = program_of({{1, 2, 3, 4}});
  const auto s = split_function(p, 0, 2, 1);
  REQUIRE(s.blocks.size() == 2);
  std::vector<Bytes> by_index(2);
  for (const auto& b : s.blocks) {
    REQUIRE(b.fragment);
    by_index[b.fragment->index] = b.body;
  }
  CHECK(by_index[0] == Bytes{1, 2});
  CHECK(by_index[1] == Bytes{3, 4});
  CHECK(reassemble_fragments(s, 0) == Bytes{1, 2, 3, 4});
  CHECK(s.provenance == Provenance::split);
}

TEST_CASE("split into single bytes") {
  const auto p = program_of({{5, 6, 7}, {8}});
  const auto s = split_function(p, 0, 3, 4);
  CHECK(s.blocks.size() == 4);
  for (const auto& b : s.blocks) {
    if (b.fragment) CHECK(b.body.size() == 1);
  }
  CHECK(reassemble_fragments(s, 0) == Bytes{5, 6, 7});
}

TEST_CASE("split errors") {
  const auto p = program_of({{1, 2, 3, 4}});
  CHECK_THROWS_AS(split_function(p, 0, 1, 0), std::invalid_argument);
  CHECK_THROWS_AS(split_function(p, 0, 5, 0), std::invalid_argument);
  CHECK_THROWS_AS(split_function(p, 7, 2, 0), std::invalid_argument);
}

TEST_CASE("transforms preserve executable bytes and stay valid") {
  const auto progs = generate_family("F", 8, 99);
  for (std::size_t i = 0; i < progs.size(); ++i) {
    const auto& p = progs[i];
    for (auto t : {Provenance::shuffle, Provenance::junk, Provenance::split}) {
      const auto a = apply_transform(p, t, 1000 + i);
      const auto b = apply_transform(p, t, 1000 + i);
      CHECK(a.serialize() == b.serialize());
      CHECK_NOTHROW(a.validate());
      CHECK(a.provenance == t);
      CHECK(sorted(a.executable_bytes()) == sorted(p.executable_bytes()));
    }
    const auto s = shuffle_functions(p, i);
    CHECK(features::shannon_entropy(s.serialize()) == features::shannon_entropy(p.serialize()));
  }
}

TEST_CASE("default corpus shape") {
  const CorpusConfig cfg;
  const auto c = build_corpus(cfg, 2024);
  CHECK(c.family_names.size() == 13);
  CHECK(c.samples.size() == 13 * 30);
  std::size_t variants = 0;
  for (const auto& s : c.samples) {
    if (s.program.provenance != Provenance::original) {
      ++variants;
      REQUIRE(s.parent);
      CHECK(c.samples[*s.parent].program.provenance == Provenance::original);
      CHECK(c.samples[*s.parent].family_index == s.family_index);
    }
  }
  CHECK(variants == 13 * 6);
}

TEST_CASE("write_corpus produces a consistent manifest") {
  CorpusConfig cfg;
  cfg.families = 3;
  cfg.samples_per_family = 8;
  cfg.variants_per_transform = 1;
  const auto dir = std::filesystem::temp_directory_path() / "tasnn_test_corpus";
  std::filesystem::remove_all(dir);
  const auto m1 = write_corpus(build_corpus(cfg, 5), dir);
  const auto loaded = CorpusManifest::load(dir / "manifest.json");
  CHECK_NOTHROW(loaded.validate(dir));
  CHECK(loaded.digest == m1.digest);
  CHECK(loaded.entries.size() == 24);
  CHECK(loaded.to_json().dump() == m1.to_json().dump());
  const auto dir2 = dir.string() + "_again";
  std::filesystem::remove_all(dir2);
  CHECK(write_corpus(build_corpus(cfg, 5), dir2).digest == m1.digest);
  std::filesystem::remove(dir / loaded.entries[0].path);
  CHECK_THROWS_AS(loaded.validate(dir), DataError);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

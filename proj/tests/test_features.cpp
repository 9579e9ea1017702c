#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "tasnn/common.hpp"
#include "tasnn/corpus.hpp"
#include "tasnn/encoder.hpp"
#include "tasnn/features.hpp"

using namespace tasnn;
using namespace tasnn::features;

namespace {

std::vector<std::uint8_t> random_bytes(Rng& rng, std::size_t n, std::size_t alphabet = 256) {
  std::vector<std::uint8_t> b(n);
  for (auto& v : b) v = static_cast<std::uint8_t>(uniform_index(rng, alphabet));
  return b;
}

double map_entropy(const std::vector<std::uint8_t>& seg) {
  std::map<int, int> counts;
  for (auto v : seg) ++counts[v];
  double h = 0.0;
  for (const auto& [value, count] : counts) {
    const double p = static_cast<double>(count) / static_cast<double>(seg.size());
    h -= p * std::log(p) / std::log(2.0);
  }
  return h;
}

// Straightforward bilinear resize: source coordinate (i + 0.5) * in / out - 0.5,
// clamped to the grid, four-neighbour weighted sum.
std::vector<double> naive_resize(const std::vector<double>& src, int rows, int cols, int out_rows, int out_cols) {
  std::vector<double> out(static_cast<std::size_t>(out_rows * out_cols));
  for (int i = 0; i < out_rows; ++i) {
    for (int j = 0; j < out_cols; ++j) {
      double y = (i + 0.5) * rows / out_rows - 0.5;
      double x = (j + 0.5) * cols / out_cols - 0.5;
      y = std::clamp(y, 0.0, rows - 1.0);
      x = std::clamp(x, 0.0, cols - 1.0);
      const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
      const int y1 = std::min(y0 + 1, rows - 1), x1 = std::min(x0 + 1, cols - 1);
      const double fy = y - y0, fx = x - x0;
      auto at = [&](int r, int c) { return src[static_cast<std::size_t>(r * cols + c)]; };
      out[static_cast<std::size_t>(i * out_cols + j)] = at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x1) * (1 - fy) * fx +
                                                        at(y1, x0) * fy * (1 - fx) + at(y1, x1) * fy * fx;
    }
  }
  return out;
}

MalwareImage random_image(Rng& rng) {
  MalwareImage img;
  for (auto& p : img.pixels) p = static_cast<double>(uniform_index(rng, 256));
  return img;
}

}  // namespace

TEST_CASE("entropy boundary values") {
  std::vector<std::uint8_t> same(256, 0x41);
  CHECK(entropy_series(same, 256).values == std::vector<double>{0.0});
  std::vector<std::uint8_t> all(256);
  std::iota(all.begin(), all.end(), std::uint8_t{0});
  CHECK(entropy_series(all, 256).values == std::vector<double>{8.0});
  std::vector<std::uint8_t> alt(256);
  for (std::size_t i = 0; i < alt.size(); ++i) alt[i] = static_cast<std::uint8_t>(i % 2);
  CHECK(entropy_series(alt, 256).values == std::vector<double>{1.0});
}

TEST_CASE("entropy series length and trailing segment") {
  Rng rng(1);
  const auto b = random_bytes(rng, 1000);
  const auto s = entropy_series(b, 256);
  REQUIRE(s.values.size() == 4);
  const std::vector<std::uint8_t> tail(b.begin() + 768, b.end());
  CHECK(s.values[3] == doctest::Approx(map_entropy(tail)).epsilon(1e-12));
  CHECK_THROWS_AS(entropy_series({}, 256), std::invalid_argument);
  CHECK_THROWS_AS(entropy_series(b, 0), std::invalid_argument);
}

TEST_CASE("entropy matches a map-based histogram") {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto seg = 1 + uniform_index(rng, 600);
    const auto b = random_bytes(rng, 1 + uniform_index(rng, 3000), 1 + uniform_index(rng, 256));
    const auto s = entropy_series(b, seg);
    for (std::size_t k = 0; k < s.values.size(); ++k) {
      const auto lo = k * seg, hi = std::min(b.size(), lo + seg);
      const std::vector<std::uint8_t> part(b.begin() + static_cast<long>(lo), b.begin() + static_cast<long>(hi));
      CHECK(std::abs(s.values[k] - map_entropy(part)) <= 1e-12);
      CHECK(s.values[k] >= 0.0);
      CHECK(s.values[k] <= 8.0);
    }
  }
}

TEST_CASE("entropy is permutation invariant within a segment") {
  Rng rng(3);
  auto b = random_bytes(rng, 512, 40);
  const auto before = entropy_series(b, 512).values;
  shuffle_in_place(b, rng);
  CHECK(entropy_series(b, 512).values == before);
}

TEST_CASE("segment-aligned shuffle keeps the entropy multiset") {
  Rng rng(4);
  corpus::SyntheticProgram p;
  for (std::uint32_t i = 0; i < 6; ++i) p.blocks.push_back({i, random_bytes(rng, 256, 1 + 40 * i), true, std::nullopt});
  const auto s = corpus::shuffle_functions(p, 9);
  auto a = entropy_series(p.serialize(), 256).values;
  auto b = entropy_series(s.serialize(), 256).values;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
  const auto j = corpus::insert_junk(p, random_bytes(rng, 512), 2);
  auto c = entropy_series(j.serialize(), 256).values;
  for (double v : a) {
    auto it = std::find(c.begin(), c.end(), v);
    REQUIRE(it != c.end());
    c.erase(it);
  }
}

TEST_CASE("entropy graph layout") {
  const GraphShape shape{3, 4};
  EntropySeries exact;
  for (int i = 0; i < 12; ++i) exact.values.push_back(i * 0.5);
  const auto g = entropy_graph(exact, shape);
  CHECK(g.at(1, 2) == 3.0);
  CHECK(g.at(2, 3) == 5.5);
  CHECK(g.source_length == 12);

  EntropySeries one;
  one.values = {4.25};
  const auto g1 = entropy_graph(one, shape);
  CHECK(g1.at(0, 0) == 4.25);
  CHECK(std::count(g1.cells.begin(), g1.cells.end(), 0.0) == 11);

  auto longer = exact;
  longer.values.push_back(7.0);
  CHECK(entropy_graph(longer, shape).cells == g.cells);
  CHECK_THROWS(entropy_graph(EntropySeries{}, shape));
  CHECK(entropy_graph(one).cells.size() == 254u * 254u);
}

TEST_CASE("image of constant bytes is constant") {
  std::vector<std::uint8_t> b(5000, 0x80);
  const auto img = binary_to_image(b, 50);
  for (double p : img.pixels) CHECK(p == 128.0);
}

TEST_CASE("image resize of a 105-wide input is the identity") {
  Rng rng(5);
  const auto b = random_bytes(rng, kImageSide * kImageSide);
  const auto img = binary_to_image(b, kImageSide);
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, std::abs(img.pixels[i] - b[i]));
  CHECK(worst == 0.0);
}

TEST_CASE("checkerboard upsampling matches a naive bilinear resize") {
  std::vector<double> board(16);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) board[static_cast<std::size_t>(r * 4 + c)] = (r + c) % 2 ? 255.0 : 0.0;
  const auto ours = bilinear_resize(board, 4, 4, 105, 105);
  const auto ref = naive_resize(board, 4, 4, 105, 105);
  for (std::size_t i = 0; i < ours.size(); ++i) CHECK(ours[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  // Interior pixels away from the clamped border are strictly mixed.
  for (int r = 14; r < 91; ++r)
    for (int c = 14; c < 91; ++c) {
      const double v = ours[static_cast<std::size_t>(r * 105 + c)];
      CHECK(v > 0.0);
      CHECK(v < 255.0);
    }
}

TEST_CASE("image errors and last-row padding") {
  CHECK_THROWS_AS(binary_to_image({}, 256), std::invalid_argument);
  std::vector<std::uint8_t> b(3, 200);
  CHECK_THROWS_AS(binary_to_image(b, 0), std::invalid_argument);
  const auto img = binary_to_image(b, 2);  // [[200,200],[200,0]]
  CHECK(img.at(0, 0) == 200.0);
  CHECK(img.at(104, 104) == 0.0);
}

TEST_CASE("augmentation defaults") {
  const AugmentationConfig cfg;
  CHECK(cfg.rescale == 1.0 / 255.0);
  CHECK(cfg.zca_epsilon == 1e-6);
  CHECK_FALSE(cfg.zca_whitening);
  CHECK(cfg.fill_mode == FillMode::wrap);
  CHECK(cfg.rotation_range == 0.1);
  CHECK(cfg.height_shift_range == 0.5);
  CHECK(cfg.horizontal_flip);
}

TEST_CASE("null augmentation is the identity") {
  Rng rng(6);
  const auto img = random_image(rng);
  AugmentationConfig cfg;
  cfg.rotation_range = 0.0;
  cfg.height_shift_range = 0.0;
  cfg.horizontal_flip = false;
  cfg.rescale = 1.0;
  CHECK(augment(img, cfg, 123).pixels == img.pixels);
}

TEST_CASE("flip twice restores the image") {
  Rng rng(7);
  const auto img = random_image(rng);
  CHECK(flip_horizontal(flip_horizontal(img)).pixels == img.pixels);
  AugmentationConfig cfg;
  cfg.rotation_range = 0.0;
  cfg.height_shift_range = 0.0;
  cfg.rescale = 1.0;
  std::uint64_t seed = 0;
  while (augment(img, cfg, seed).pixels == img.pixels) ++seed;  // first seed that flips
  CHECK(augment(augment(img, cfg, seed), cfg, seed).pixels == img.pixels);
}

TEST_CASE("augmentation range contract and determinism") {
  Rng rng(8);
  const auto img = random_image(rng);
  AugmentationConfig cfg;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = augment(img, cfg, seed);
    CHECK(a.pixels == augment(img, cfg, seed).pixels);
    const auto [lo, hi] = std::minmax_element(a.pixels.begin(), a.pixels.end());
    CHECK(*lo >= 0.0);
    CHECK(*hi <= 1.0);
  }
  auto raw = cfg;
  raw.rescale = 1.0;
  for (auto mode : {FillMode::wrap, FillMode::constant, FillMode::nearest, FillMode::reflect}) {
    raw.fill_mode = mode;
    const auto a = augment(img, raw, 3);
    const auto [lo, hi] = std::minmax_element(a.pixels.begin(), a.pixels.end());
    CHECK(*lo >= 0.0);
    CHECK(*hi <= 255.0);
  }
}

TEST_CASE("ZCA whitening needs a fitted whitener") {
  Rng rng(9);
  std::vector<MalwareImage> imgs;
  for (int i = 0; i < 6; ++i) imgs.push_back(random_image(rng));
  AugmentationConfig cfg;
  cfg.zca_whitening = true;
  CHECK_THROWS_AS(augment(imgs[0], cfg, 1), std::invalid_argument);
  const auto zca = ZcaWhitener::fit(imgs, cfg.zca_epsilon);
  // Whitened training images have zero mean.
  std::vector<double> mean(kImageSide * kImageSide, 0.0);
  for (const auto& im : imgs) {
    const auto w = zca.apply(im);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += w.pixels[k] / 6.0;
  }
  for (double m : mean) CHECK(std::abs(m) < 1e-8);
  CHECK_NOTHROW(augment(imgs[0], cfg, 1, &zca));
}

TEST_CASE("frozen encoder contract") {
  const SeededConvEncoder enc(4096);
  CHECK(enc.output_dim() == 4096);
  const SeededConvEncoder small(4096, 256);
  EntropyGraph zero{GraphShape{}, std::vector<double>(254 * 254, 0.0), 0};
  EntropyGraph full{GraphShape{}, std::vector<double>(254 * 254, 8.0), 254 * 254};
  const auto a = small.encode(zero);
  CHECK(a == small.encode(zero));
  const auto b = small.encode(full);
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(std::sqrt(d) > 0.0);
  CHECK(enc.encode(full).size() == 4096);
  const auto before = small.parameters();
  (void)small.encode(full);
  CHECK(small.parameters() == before);
  CHECK(entropy_encode(full, small, 256).size() == 256);
  CHECK_THROWS_AS(entropy_encode(full, small, 4096), std::invalid_argument);
  CHECK(small.fingerprint() == SeededConvEncoder(4096, 256).fingerprint());
  CHECK(small.fingerprint() != SeededConvEncoder(4097, 256).fingerprint());
}

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

// Minimal reader/writer for NumPy .npy (format 1.0), little-endian float
// arrays in C order. Enough for numpy.load() on the extracted features.
namespace tasnn::npy {

enum class DType { f4, f8 };

struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

void save(const std::filesystem::path& path, std::span<const double> data,
          const std::vector<std::size_t>& shape, DType dtype = DType::f8);

// Throws DataError on malformed input.
Array load(const std::filesystem::path& path);

}  // namespace tasnn::npy

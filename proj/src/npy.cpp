#include "tasnn/npy.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <string>

#include "tasnn/common.hpp"

namespace tasnn::npy {

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";

std::string header_for(const std::vector<std::size_t>& shape, DType dtype) {
  std::string dict = "{'descr': '";
  dict += dtype == DType::f8 ? "<f8" : "<f4";
  dict += "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  // magic(6) + version(2) + length(2) + dict + padding + '\n' is a multiple of 64.
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict += '\n';
  return dict;
}

}  // namespace

void save(const std::filesystem::path& path, std::span<const double> data,
          const std::vector<std::size_t>& shape, DType dtype) {
  const auto count = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (count != data.size()) throw std::invalid_argument("npy::save: shape does not match data size");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  const auto header = header_for(shape, dtype);
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.write(reinterpret_cast<const char*>(&len), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  if (dtype == DType::f8) {
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 8));
  } else {
    std::vector<float> tmp(data.begin(), data.end());
    out.write(reinterpret_cast<const char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * 4));
  }
  if (!out) throw DataError("short write to " + path.string());
}

Array load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[6];
  char version[2];
  in.read(magic, 6);
  in.read(version, 2);
  if (!in || std::memcmp(magic, kMagic, 6) != 0 || version[0] != 1)
    throw DataError("not a version-1 .npy file: " + path.string());
  std::uint16_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 2);
  std::string header(len, '\0');
  in.read(header.data(), len);
  if (!in) throw DataError("truncated .npy header: " + path.string());

  std::smatch m;
  static const std::regex descr_re(R"('descr':\s*'([<|]f[48])')");
  static const std::regex order_re(R"('fortran_order':\s*(True|False))");
  static const std::regex shape_re(R"('shape':\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, descr_re)) throw DataError("unsupported .npy dtype in " + path.string());
  const bool f8 = m[1].str().back() == '8';
  if (!std::regex_search(header, m, order_re) || m[1] == "True")
    throw DataError("fortran-order .npy unsupported: " + path.string());
  if (!std::regex_search(header, m, shape_re)) throw DataError("missing .npy shape: " + path.string());

  Array arr;
  const std::string dims = m[1];
  static const std::regex int_re(R"(\d+)");
  for (auto it = std::sregex_iterator(dims.begin(), dims.end(), int_re); it != std::sregex_iterator(); ++it) {
    arr.shape.push_back(std::stoull(it->str()));
  }
  const auto count = std::accumulate(arr.shape.begin(), arr.shape.end(), std::size_t{1}, std::multiplies<>());
  arr.data.resize(count);
  if (f8) {
    in.read(reinterpret_cast<char*>(arr.data.data()), static_cast<std::streamsize>(count * 8));
  } else {
    std::vector<float> tmp(count);
    in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(count * 4));
    std::copy(tmp.begin(), tmp.end(), arr.data.begin());
  }
  if (!in) throw DataError("truncated .npy payload: " + path.string());
  return arr;
}

}  // namespace tasnn::npy

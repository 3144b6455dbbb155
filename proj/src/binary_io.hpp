#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ualqe::detail {

static_assert(std::endian::native == std::endian::little, "binary blobs assume a little-endian host");

// File layout: a single-line JSON header, '\n', then raw float64 values.
inline void write_blob(const std::filesystem::path& path, const nlohmann::json& header, std::span<const double> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string line = header.dump();
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.put('\n');
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

struct Blob {
  nlohmann::json header;
  std::vector<double> values;
};

inline Blob read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  Blob blob;
  blob.header = nlohmann::json::parse(line);
  std::vector<char> rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (rest.size() % sizeof(double) != 0) throw std::runtime_error("truncated binary payload in " + path.string());
  blob.values.resize(rest.size() / sizeof(double));
  std::memcpy(blob.values.data(), rest.data(), rest.size());
  return blob;
}

}  // namespace ualqe::detail

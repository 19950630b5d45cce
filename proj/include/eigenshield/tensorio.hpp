// Copyright 2026 The EigenShield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef EIGENSHIELD_TENSORIO_HPP
#define EIGENSHIELD_TENSORIO_HPP

// Persistence container used by every checkpointable artifact: a directory
// with a JSON manifest plus one raw binary file per array. Arrays are
// little-endian, row-major. dtype is "f4" or "f8"; the eigenbasis and frozen
// embedder checkpoints use f4, training checkpoints use f8 so that resuming
// reproduces an uninterrupted run bit for bit.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "eigenshield/common.hpp"

namespace eigenshield {

using json = nlohmann::ordered_json;

namespace detail {

inline bool host_is_little_endian() {
  const uint16_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

inline uint32_t crc32_bytes(const void* data, size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  return static_cast<uint32_t>(
      ::crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace detail

struct TensorEntry {
  std::string name;
  std::string dtype;  // "f4" or "f8"
  std::vector<int64_t> shape;
  std::vector<double> data;  // row-major

  int64_t count() const {
    int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

class TensorContainer {
 public:
  void add(const std::string& name, const Mat& m, const std::string& dtype = "f8") {
    TensorEntry e;
    e.name = name;
    e.dtype = dtype;
    e.shape = {m.rows(), m.cols()};
    e.data.resize(static_cast<size_t>(m.size()));
    // row-major on disk
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        e.data[static_cast<size_t>(r * m.cols() + c)] = m(r, c);
    entries_[name] = std::move(e);
  }

  void add(const std::string& name, const Vec& v, const std::string& dtype = "f8") {
    TensorEntry e;
    e.name = name;
    e.dtype = dtype;
    e.shape = {v.size()};
    e.data.assign(v.data(), v.data() + v.size());
    entries_[name] = std::move(e);
  }

  void add_scalar(const std::string& name, double x) {
    TensorEntry e;
    e.name = name;
    e.dtype = "f8";
    e.shape = {1};
    e.data = {x};
    entries_[name] = std::move(e);
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  const TensorEntry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("container: missing array '" + name + "'");
    return it->second;
  }

  Mat matrix(const std::string& name) const {
    const TensorEntry& e = entry(name);
    if (e.shape.size() != 2)
      throw Error("container: array '" + name + "' is not 2-d");
    Mat m(e.shape[0], e.shape[1]);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = e.data[static_cast<size_t>(r * m.cols() + c)];
    return m;
  }

  Vec vector(const std::string& name) const {
    const TensorEntry& e = entry(name);
    if (e.shape.size() != 1)
      throw Error("container: array '" + name + "' is not 1-d");
    return Eigen::Map<const Vec>(e.data.data(), static_cast<Eigen::Index>(e.data.size()));
  }

  double scalar(const std::string& name) const {
    const TensorEntry& e = entry(name);
    if (e.count() != 1) throw Error("container: array '" + name + "' is not scalar");
    return e.data[0];
  }

  json& meta() { return meta_; }
  const json& meta() const { return meta_; }

  /// Writes manifest.json plus one .bin per array into dir (created if
  /// missing). Returns the combined crc32 over all array payloads, which
  /// callers can use as a content identifier.
  uint32_t save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "eigenshield-tensors";
    manifest["version"] = 1;
    manifest["meta"] = meta_;
    json arrays = json::array();
    uLong combined = ::crc32(0L, Z_NULL, 0);
    for (const auto& [name, e] : entries_) {
      std::vector<char> bytes = encode(e);
      uint32_t crc = detail::crc32_bytes(bytes.data(), bytes.size());
      combined = ::crc32_combine(combined, crc, static_cast<z_off_t>(bytes.size()));
      std::string file = name + ".bin";
      std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("container: cannot write " + (dir / file).string());
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      json a;
      a["name"] = name;
      a["dtype"] = e.dtype;
      a["shape"] = e.shape;
      a["file"] = file;
      a["crc32"] = crc;
      arrays.push_back(a);
    }
    manifest["arrays"] = arrays;
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw Error("container: cannot write manifest in " + dir.string());
    mf << manifest.dump(2) << "\n";
    return static_cast<uint32_t>(combined);
  }

  static TensorContainer load(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw ValidationError("container: no manifest.json in " + dir.string());
    json manifest = json::parse(mf);
    if (manifest.value("format", "") != "eigenshield-tensors")
      throw ValidationError("container: unknown format in " + dir.string());
    TensorContainer c;
    c.meta_ = manifest.value("meta", json::object());
    for (const auto& a : manifest["arrays"]) {
      TensorEntry e;
      e.name = a["name"].get<std::string>();
      e.dtype = a["dtype"].get<std::string>();
      e.shape = a["shape"].get<std::vector<int64_t>>();
      std::ifstream in(dir / a["file"].get<std::string>(), std::ios::binary);
      if (!in) throw Error("container: missing array file for '" + e.name + "'");
      std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
      uint32_t crc = detail::crc32_bytes(bytes.data(), bytes.size());
      if (a.contains("crc32") && a["crc32"].get<uint32_t>() != crc)
        throw Error("container: checksum mismatch for '" + e.name + "' in " + dir.string());
      decode(e, bytes);
      c.entries_[e.name] = std::move(e);
    }
    return c;
  }

 private:
  static std::vector<char> encode(const TensorEntry& e) {
    if (!detail::host_is_little_endian())
      throw Error("container: big-endian hosts are not supported");
    size_t n = static_cast<size_t>(e.count());
    if (e.dtype == "f4") {
      std::vector<char> bytes(n * 4);
      for (size_t i = 0; i < n; ++i) {
        float f = static_cast<float>(e.data[i]);
        std::memcpy(bytes.data() + i * 4, &f, 4);
      }
      return bytes;
    }
    if (e.dtype == "f8") {
      std::vector<char> bytes(n * 8);
      std::memcpy(bytes.data(), e.data.data(), n * 8);
      return bytes;
    }
    throw Error("container: unsupported dtype '" + e.dtype + "'");
  }

  static void decode(TensorEntry& e, const std::vector<char>& bytes) {
    size_t n = static_cast<size_t>(e.count());
    e.data.resize(n);
    if (e.dtype == "f4") {
      if (bytes.size() != n * 4) throw Error("container: size mismatch for '" + e.name + "'");
      for (size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, bytes.data() + i * 4, 4);
        e.data[i] = static_cast<double>(f);
      }
    } else if (e.dtype == "f8") {
      if (bytes.size() != n * 8) throw Error("container: size mismatch for '" + e.name + "'");
      std::memcpy(e.data.data(), bytes.data(), n * 8);
    } else {
      throw Error("container: unsupported dtype '" + e.dtype + "'");
    }
  }

  std::map<std::string, TensorEntry> entries_;
  json meta_ = json::object();
};

}  // namespace eigenshield

#endif  // EIGENSHIELD_TENSORIO_HPP

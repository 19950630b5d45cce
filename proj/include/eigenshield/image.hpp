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

#ifndef EIGENSHIELD_IMAGE_HPP
#define EIGENSHIELD_IMAGE_HPP

// Corpus ingest: grayscale rasters in [0,1], loaded from identity-grouped
// directories of PGM/PPM files, plus the verification pair protocol.
//
// Corpus layout on disk:   root/<identity>/<image file>
// Pair protocol file:      one pair per line, "id1 id2 {0|1}" (1 = positive),
//                          ids are paths relative to the corpus root.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "eigenshield/common.hpp"

namespace eigenshield {

/// A single grayscale face raster. Pixels are row-major in [0,1].
struct Image {
  int rows = 0;
  int cols = 0;
  Mat pix;                 // rows x cols
  std::string identity;    // optional identity label ("" = unlabeled)
  std::string id;          // corpus-relative path, "" for synthetic images

  Image() = default;
  Image(int r, int c) : rows(r), cols(c), pix(Mat::Zero(r, c)) {}

  Vec flatten() const {
    Vec v(static_cast<Eigen::Index>(rows) * cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) v[static_cast<Eigen::Index>(r) * cols + c] = pix(r, c);
    return v;
  }

  static Image from_flat(const Vec& v, int rows, int cols, const std::string& id = "") {
    if (v.size() != static_cast<Eigen::Index>(rows) * cols)
      throw Error("from_flat: size mismatch");
    Image im(rows, cols);
    im.id = id;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) im.pix(r, c) = v[static_cast<Eigen::Index>(r) * cols + c];
    return im;
  }

  Image clamped01() const {
    Image out = *this;
    out.pix = pix.cwiseMax(0.0).cwiseMin(1.0);
    return out;
  }

  bool in_unit_range() const {
    return pix.minCoeff() >= 0.0 && pix.maxCoeff() <= 1.0;
  }
};

// ---------------------------------------------------------------------------
// PNM (PGM P5 / PPM P6) codec. Binary formats only; maxval up to 65535.
// ---------------------------------------------------------------------------

namespace pnm {

inline void skip_ws_comments(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

inline int read_int(std::istream& in) {
  skip_ws_comments(in);
  int v;
  if (!(in >> v)) throw Error("pnm: malformed header");
  return v;
}

/// Decodes a binary PGM/PPM. Color inputs are reduced to grayscale by the
/// unweighted per-pixel channel mean.
inline Image read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image file: " + path.string());
  char magic[2];
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw Error("unsupported image format (want binary PGM/PPM): " + path.string());
  const int channels = (magic[1] == '6') ? 3 : 1;
  int w = read_int(in);
  int h = read_int(in);
  int maxval = read_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    throw Error("pnm: bad dimensions/maxval in " + path.string());
  in.get();  // single whitespace after maxval
  const int bytes_per_sample = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * channels * bytes_per_sample);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw Error("pnm: truncated pixel data in " + path.string());

  Image im(h, w);
  size_t idx = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int ch = 0; ch < channels; ++ch) {
        unsigned v;
        if (bytes_per_sample == 2) {
          v = (static_cast<unsigned>(buf[idx]) << 8) | buf[idx + 1];
          idx += 2;
        } else {
          v = buf[idx++];
        }
        acc += static_cast<double>(v);
      }
      im.pix(r, c) = acc / (channels * static_cast<double>(maxval));
    }
  }
  return im;
}

/// Writes an 8-bit binary PGM (clamping to [0,1] first).
inline void write_pgm(const std::filesystem::path& path, const Image& im) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write image file: " + path.string());
  out << "P5\n" << im.cols << " " << im.rows << "\n255\n";
  for (int r = 0; r < im.rows; ++r) {
    for (int c = 0; c < im.cols; ++c) {
      double v = std::min(1.0, std::max(0.0, im.pix(r, c)));
      unsigned char b = static_cast<unsigned char>(std::lround(v * 255.0));
      out.put(static_cast<char>(b));
    }
  }
}

}  // namespace pnm

/// Bilinear resize with pixel-center alignment: source coordinate of output
/// pixel i is (i + 0.5) * in/out - 0.5, clamped to the source grid.
inline Image resize_bilinear(const Image& src, int out_rows, int out_cols) {
  require(out_rows > 0 && out_cols > 0, "resize: output dims must be positive");
  if (src.rows == out_rows && src.cols == out_cols) return src;
  Image dst(out_rows, out_cols);
  dst.identity = src.identity;
  dst.id = src.id;
  const double sr = static_cast<double>(src.rows) / out_rows;
  const double sc = static_cast<double>(src.cols) / out_cols;
  for (int r = 0; r < out_rows; ++r) {
    double fy = (r + 0.5) * sr - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(src.rows - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, src.rows - 1);
    double wy = fy - y0;
    for (int c = 0; c < out_cols; ++c) {
      double fx = (c + 0.5) * sc - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(src.cols - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, src.cols - 1);
      double wx = fx - x0;
      dst.pix(r, c) = (1 - wy) * ((1 - wx) * src.pix(y0, x0) + wx * src.pix(y0, x1)) +
                      wy * ((1 - wx) * src.pix(y1, x0) + wx * src.pix(y1, x1));
    }
  }
  return dst;
}

/// Loads every image under root/<identity>/..., resized to rows x cols and
/// scaled to [0,1]. Ordering is deterministic (sorted by relative path).
inline std::vector<Image> load_corpus(const std::filesystem::path& root, int rows, int cols) {
  require(std::filesystem::is_directory(root), "corpus root is not a directory: " + root.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> corpus;
  corpus.reserve(files.size());
  for (const auto& f : files) {
    Image im;
    try {
      im = pnm::read(f);
    } catch (const Error& e) {
      throw Error(std::string("while loading ") + f.string() + ": " + e.what());
    }
    im = resize_bilinear(im, rows, cols);
    auto rel = std::filesystem::relative(f, root);
    im.id = rel.generic_string();
    // identity = first path component under root
    auto it = rel.begin();
    im.identity = (it != rel.end()) ? it->string() : "";
    corpus.push_back(std::move(im));
  }
  if (corpus.empty()) throw ValidationError("empty corpus at " + root.string());
  return corpus;
}

// ---------------------------------------------------------------------------
// Verification pair protocol.
// ---------------------------------------------------------------------------

struct PairProtocol {
  enum class PerturbedSide { first, second };

  struct Pair {
    int a = 0;  // corpus indices
    int b = 0;
  };

  std::vector<Pair> positives;
  std::vector<Pair> negatives;
  PerturbedSide perturbed_side = PerturbedSide::first;
};

/// Samples n_pos positive and n_neg negative pairs, reproducibly under seed.
/// Pairs may repeat when the corpus is small; both members of a positive pair
/// are always distinct images.
inline PairProtocol build_pairs(const std::vector<Image>& corpus, int n_pos, int n_neg,
                                uint64_t seed) {
  std::unordered_map<std::string, std::vector<int>> by_id;
  for (size_t i = 0; i < corpus.size(); ++i)
    by_id[corpus[i].identity].push_back(static_cast<int>(i));

  std::vector<std::string> ids;
  std::vector<std::string> ids_multi;  // identities with >= 2 images
  for (auto& [k, v] : by_id) ids.push_back(k);
  std::sort(ids.begin(), ids.end());
  for (auto& k : ids)
    if (by_id[k].size() >= 2) ids_multi.push_back(k);

  PairProtocol proto;
  if (n_pos > 0) {
    require(!ids_multi.empty(),
            "no positive pairs possible: need an identity with at least 2 images");
  }
  if (n_neg > 0) {
    require(ids.size() >= 2, "no negative pairs possible: need at least 2 identities");
  }

  Rng rng(derive_seed(seed, "pairs"));
  for (int i = 0; i < n_pos; ++i) {
    const auto& members = by_id[ids_multi[rng.below(ids_multi.size())]];
    int a = static_cast<int>(rng.below(members.size()));
    int b = static_cast<int>(rng.below(members.size() - 1));
    if (b >= a) ++b;
    proto.positives.push_back({members[a], members[b]});
  }
  for (int i = 0; i < n_neg; ++i) {
    int ia = static_cast<int>(rng.below(ids.size()));
    int ib = static_cast<int>(rng.below(ids.size() - 1));
    if (ib >= ia) ++ib;
    const auto& ma = by_id[ids[ia]];
    const auto& mb = by_id[ids[ib]];
    proto.negatives.push_back({ma[rng.below(ma.size())], mb[rng.below(mb.size())]});
  }
  return proto;
}

inline void save_pairs(const std::filesystem::path& path, const PairProtocol& proto,
                       const std::vector<Image>& corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write pairs file: " + path.string());
  for (const auto& p : proto.positives)
    out << corpus[p.a].id << " " << corpus[p.b].id << " 1\n";
  for (const auto& p : proto.negatives)
    out << corpus[p.a].id << " " << corpus[p.b].id << " 0\n";
}

inline PairProtocol load_pairs(const std::filesystem::path& path,
                               const std::vector<Image>& corpus) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open pairs file: " + path.string());
  std::unordered_map<std::string, int> index;
  for (size_t i = 0; i < corpus.size(); ++i) index[corpus[i].id] = static_cast<int>(i);
  PairProtocol proto;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id1, id2;
    int label;
    if (!(ss >> id1 >> id2 >> label) || (label != 0 && label != 1))
      throw ValidationError("pairs file: malformed line " + std::to_string(lineno));
    auto f1 = index.find(id1);
    auto f2 = index.find(id2);
    if (f1 == index.end() || f2 == index.end())
      throw ValidationError("pairs file references missing id at line " + std::to_string(lineno));
    if (label == 1)
      proto.positives.push_back({f1->second, f2->second});
    else
      proto.negatives.push_back({f1->second, f2->second});
  }
  return proto;
}

}  // namespace eigenshield

#endif  // EIGENSHIELD_IMAGE_HPP

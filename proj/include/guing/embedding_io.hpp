#pragma once

// Embedding container. Layout (all integers little-endian):
//
//   magic    8 bytes  "GUINGEMB"
//   version  u32      1
//   dim      u32
//   count    u64
//   count x { id_len u16, id bytes (UTF-8), dim x f32 }
//
// Index snapshots and encoder weights append tagged sections after the
// payload; see docs/formats.md.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <unordered_set>
#include <vector>

#include "guing/binary_io.hpp"
#include "guing/core.hpp"
#include "guing/jsonl.hpp"

namespace guing {

inline constexpr std::string_view kEmbeddingMagic = "GUINGEMB";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

struct LabeledEmbedding {
  std::string id;
  EmbeddingVector vec;

  bool operator==(const LabeledEmbedding&) const = default;
};

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<LabeledEmbedding> items;
  // Vectors whose stored norm was off by more than 1e-4 and had to be fixed.
  std::size_t renormalized = 0;
};

inline std::size_t common_dim(const std::vector<LabeledEmbedding>& items, std::size_t fallback = 0) {
  if (items.empty()) return fallback;
  const std::size_t dim = items.front().vec.dim();
  for (const auto& it : items)
    if (it.vec.dim() != dim) throw Error(Errc::MixedDimensions, "vector '" + it.id + "' has a different dim");
  return dim;
}

inline void check_unique_ids(const std::vector<LabeledEmbedding>& items) {
  std::unordered_set<std::string_view> seen;
  for (const auto& it : items)
    if (!seen.insert(it.id).second) throw Error(Errc::DuplicateId, "id '" + it.id + "'");
}

inline void write_embeddings(std::ostream& out, const std::vector<LabeledEmbedding>& items, std::size_t dim_if_empty = 0) {
  const std::size_t dim = common_dim(items, dim_if_empty);
  check_unique_ids(items);
  bin::put_bytes(out, kEmbeddingMagic);
  bin::put<std::uint32_t>(out, kEmbeddingVersion);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  bin::put<std::uint64_t>(out, items.size());
  for (const auto& it : items) {
    if (it.id.size() > std::numeric_limits<std::uint16_t>::max())
      throw Error(Errc::InvalidArgument, "id longer than 65535 bytes");
    bin::put<std::uint16_t>(out, static_cast<std::uint16_t>(it.id.size()));
    bin::put_bytes(out, it.id);
    bin::put_floats(out, it.vec.data(), dim);
  }
}

inline void write_embeddings(const std::filesystem::path& path, const std::vector<LabeledEmbedding>& items,
                             std::size_t dim_if_empty = 0) {
  // Validate before touching the file so a failed write leaves no partial output.
  common_dim(items, dim_if_empty);
  check_unique_ids(items);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  write_embeddings(out, items, dim_if_empty);
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

// Stored vectors within 1e-6 of unit norm are adopted bit-for-bit; anything
// further off is renormalized, and deviations above 1e-4 are counted.
inline EmbeddingVector accept_stored_vector(std::vector<float> v, const std::string& id, std::size_t& renormalized,
                                            Modality modality = Modality::image) {
  for (float x : v)
    if (!std::isfinite(x)) throw Error(Errc::InvalidRecord, "non-finite value in vector '" + id + "'");
  const double norm = l2_norm(v);
  if (std::abs(norm - 1.0) <= 1e-6) return EmbeddingVector::adopt(std::move(v), modality);
  if (std::abs(norm - 1.0) > 1e-4) ++renormalized;
  return EmbeddingVector(std::span<const float>(v), modality);
}

inline EmbeddingSet read_embeddings(std::istream& in) {
  const std::string magic = bin::get_bytes(in, kEmbeddingMagic.size(), "magic");
  if (magic != kEmbeddingMagic) throw Error(Errc::BadMagic, "not an embedding file");
  const auto version = bin::get<std::uint32_t>(in, "version");
  if (version != kEmbeddingVersion) throw Error(Errc::BadVersion, "unsupported version " + std::to_string(version));
  EmbeddingSet set;
  set.dim = bin::get<std::uint32_t>(in, "dim");
  const auto count = bin::get<std::uint64_t>(in, "count");
  std::unordered_set<std::string> seen;
  set.items.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = bin::get<std::uint16_t>(in, "id length");
    std::string id = bin::get_bytes(in, len, "id");
    std::vector<float> v(set.dim);
    bin::get_floats(in, v.data(), set.dim, "vector payload");
    if (!seen.insert(id).second) throw Error(Errc::DuplicateId, "id '" + id + "'");
    EmbeddingVector vec = accept_stored_vector(std::move(v), id, set.renormalized);
    set.items.push_back({std::move(id), std::move(vec)});
  }
  return set;
}

inline EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  return read_embeddings(in);
}

// JSON Lines import: one {"id": ..., "v": [...]} object per line.
inline EmbeddingSet import_embeddings_jsonl(const std::filesystem::path& path, Modality modality = Modality::image) {
  EmbeddingSet set;
  std::unordered_set<std::string> seen;
  for (const auto& j : read_jsonl(path)) {
    auto id = field<std::string>(j, "id");
    auto v = field<std::vector<float>>(j, "v");
    if (!seen.insert(id).second) throw Error(Errc::DuplicateId, "id '" + id + "'");
    if (set.items.empty())
      set.dim = v.size();
    else if (v.size() != set.dim)
      throw Error(Errc::MixedDimensions, "vector '" + id + "' has a different dim");
    EmbeddingVector vec = accept_stored_vector(std::move(v), id, set.renormalized, modality);
    set.items.push_back({std::move(id), std::move(vec)});
  }
  return set;
}

// Raw (unnormalized) feature rows, same JSONL shape as the import format.
struct FeatureRow {
  std::string id;
  std::vector<double> values;
};

inline std::vector<FeatureRow> read_features_jsonl(const std::filesystem::path& path) {
  std::vector<FeatureRow> rows;
  for (const auto& j : read_jsonl(path)) {
    FeatureRow r{field<std::string>(j, "id"), field<std::vector<double>>(j, "v")};
    if (!rows.empty() && r.values.size() != rows.front().values.size())
      throw Error(Errc::MixedDimensions, "feature row '" + r.id + "' has a different dim");
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace guing

#pragma once

// Domain types and elementary vector/box math shared by every other header.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace guing {

enum class Errc {
  ZeroVector,
  DimensionMismatch,
  InvalidBox,
  BoxOutOfBounds,
  InvalidRecord,
  MixedDimensions,
  DuplicateId,
  IoError,
  BadMagic,
  BadVersion,
  Truncated,
  EmptyInput,
  TooFewPoints,
  BadNprobe,
  NonFiniteLoss,
  MissingTruth,
  ParseError,
  InvalidArgument,
  EncoderUnavailable,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::InvalidBox: return "InvalidBox";
    case Errc::BoxOutOfBounds: return "BoxOutOfBounds";
    case Errc::InvalidRecord: return "InvalidRecord";
    case Errc::MixedDimensions: return "MixedDimensions";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::IoError: return "IoError";
    case Errc::BadMagic: return "BadMagic";
    case Errc::BadVersion: return "BadVersion";
    case Errc::Truncated: return "Truncated";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::TooFewPoints: return "TooFewPoints";
    case Errc::BadNprobe: return "BadNprobe";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::MissingTruth: return "MissingTruth";
    case Errc::ParseError: return "ParseError";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::EncoderUnavailable: return "EncoderUnavailable";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

enum class Modality { image, text, sketch };

inline std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::image: return "image";
    case Modality::text: return "text";
    case Modality::sketch: return "sketch";
  }
  return "image";
}

inline Modality modality_from_string(std::string_view s) {
  if (s == "image") return Modality::image;
  if (s == "text") return Modality::text;
  if (s == "sketch") return Modality::sketch;
  throw Error(Errc::ParseError, "unknown modality '" + std::string(s) + "'");
}

enum class Source { scap_repo, screen_repo, rico, redraw, synthetic };

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::scap_repo: return "scap_repo";
    case Source::screen_repo: return "screen_repo";
    case Source::rico: return "rico";
    case Source::redraw: return "redraw";
    case Source::synthetic: return "synthetic";
  }
  return "synthetic";
}

inline Source source_from_string(std::string_view s) {
  if (s == "scap_repo") return Source::scap_repo;
  if (s == "screen_repo") return Source::screen_repo;
  if (s == "rico") return Source::rico;
  if (s == "redraw") return Source::redraw;
  if (s == "synthetic") return Source::synthetic;
  throw Error(Errc::ParseError, "unknown source '" + std::string(s) + "'");
}

inline bool is_sha1_hex(std::string_view h) {
  return h.size() == 40 && std::all_of(h.begin(), h.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

struct ScreenshotRecord {
  std::string id;
  std::string app_id;
  Source source = Source::synthetic;
  std::string image_ref;
  std::string content_hash;
  std::optional<std::string> caption;
  int width_px = 0;
  int height_px = 0;

  void validate() const {
    if (id.empty()) throw Error(Errc::InvalidRecord, "screenshot id is empty");
    if (!is_sha1_hex(content_hash))
      throw Error(Errc::InvalidRecord, "content_hash of '" + id + "' is not 40 lowercase hex chars");
    if (width_px <= 0 || height_px <= 0)
      throw Error(Errc::InvalidRecord, "non-positive dimensions for '" + id + "'");
  }

  bool operator==(const ScreenshotRecord&) const = default;
};

// Returns the unit vector in the direction of `v`, computed in double precision.
inline std::vector<float> l2_normalize(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (!(norm >= 1e-12)) throw Error(Errc::ZeroVector, "cannot normalize a zero (or non-finite) vector");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

inline std::vector<float> l2_normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!(norm >= 1e-12)) throw Error(Errc::ZeroVector, "cannot normalize a zero (or non-finite) vector");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

inline double l2_norm(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  return std::sqrt(sq);
}

// Dot product accumulated in double with four independent lanes so the
// compiler can pipeline it. Summation order is fixed, so results are
// reproducible across call sites.
inline double dot(const float* a, const float* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * b[i];
    s1 += static_cast<double>(a[i + 1]) * b[i + 1];
    s2 += static_cast<double>(a[i + 2]) * b[i + 2];
    s3 += static_cast<double>(a[i + 3]) * b[i + 3];
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * b[i];
  return (s0 + s1) + (s2 + s3);
}

// A unit-norm embedding. Stored as 32-bit floats, compared in 64-bit.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;

  // Normalizes `values`; throws ZeroVector on degenerate input.
  explicit EmbeddingVector(std::span<const float> values, Modality modality = Modality::image)
      : values_(l2_normalize(values)), modality_(modality) {}

  static EmbeddingVector from_doubles(std::span<const double> values, Modality modality = Modality::image) {
    EmbeddingVector e;
    e.values_ = l2_normalize(values);
    e.modality_ = modality;
    return e;
  }

  // Adopts already-normalized storage verbatim (used by readers that have
  // verified the norm and must preserve bits).
  static EmbeddingVector adopt(std::vector<float> unit_values, Modality modality = Modality::image) {
    EmbeddingVector e;
    e.values_ = std::move(unit_values);
    e.modality_ = modality;
    return e;
  }

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const float> values() const noexcept { return values_; }
  const float* data() const noexcept { return values_.data(); }
  Modality modality() const noexcept { return modality_; }

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<float> values_;
  Modality modality_ = Modality::image;
};

inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim())
    throw Error(Errc::DimensionMismatch,
                "dims " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  return std::clamp(dot(a.data(), b.data(), a.dim()), -1.0, 1.0);
}

class BoundingBox {
 public:
  BoundingBox(double x_min, double y_min, double x_max, double y_max)
      : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
    if (!(x_min < x_max) || !(y_min < y_max))
      throw Error(Errc::InvalidBox, "box requires x_min < x_max and y_min < y_max");
  }

  double x_min() const noexcept { return x_min_; }
  double y_min() const noexcept { return y_min_; }
  double x_max() const noexcept { return x_max_; }
  double y_max() const noexcept { return y_max_; }
  double width() const noexcept { return x_max_ - x_min_; }
  double height() const noexcept { return y_max_ - y_min_; }
  double area() const noexcept { return width() * height(); }

  BoundingBox translated(double dx, double dy) const {
    return {x_min_ + dx, y_min_ + dy, x_max_ + dx, y_max_ + dy};
  }

  bool within(double width, double height) const noexcept {
    return x_min_ >= 0 && y_min_ >= 0 && x_max_ <= width && y_max_ <= height;
  }

  bool operator==(const BoundingBox&) const = default;

 private:
  double x_min_, y_min_, x_max_, y_max_;
};

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double w = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double h = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (w <= 0 || h <= 0) return 0.0;
  return w * h;
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double inter = intersection_area(a, b);
  if (inter == 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct OcrBox {
  BoundingBox box;
  std::string text;
  double confidence;

  OcrBox(BoundingBox b, std::string t, double conf) : box(b), text(std::move(t)), confidence(conf) {
    if (text.empty()) throw Error(Errc::InvalidRecord, "OCR box text is empty");
    if (!(confidence >= 0.0 && confidence <= 1.0))
      throw Error(Errc::InvalidRecord, "OCR confidence outside [0,1]");
  }
};

}  // namespace guing

#pragma once

// Encoder boundary. Real text/image encoders run out of process; this header
// holds the client interface and a deterministic stub used by tests and
// offline demos.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "guing/core.hpp"
#include "guing/rng.hpp"

namespace guing {

// Deterministic pseudo-embedding: Gaussian coordinates drawn from a generator
// seeded by the input string and `seed`, then unit-normalized.
inline EmbeddingVector stub_encode(std::string_view text, std::size_t dim, std::uint64_t seed,
                                   Modality modality = Modality::text) {
  if (dim < 2) throw Error(Errc::InvalidArgument, "stub encoder needs dim >= 2");
  SplitMix64 rng(fnv1a64(text) ^ (seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return EmbeddingVector::from_doubles(v, modality);
}

// Implementations only produce raw vectors; normalization and the dim check
// happen here so every caller sees unit vectors of the reported dim.
class EncoderClient {
 public:
  virtual ~EncoderClient() = default;

  virtual std::size_t dim() const = 0;

  EmbeddingVector encode_text(const std::string& text) { return finish(encode_raw(Modality::text, text), Modality::text); }

  // `image_ref` is a path or URI understood by the encoder process.
  EmbeddingVector encode_image(const std::string& image_ref) {
    return finish(encode_raw(Modality::image, image_ref), Modality::image);
  }

 protected:
  virtual std::vector<float> encode_raw(Modality modality, const std::string& payload) = 0;

 private:
  EmbeddingVector finish(const std::vector<float>& raw, Modality m) const {
    if (raw.size() != dim())
      throw Error(Errc::DimensionMismatch,
                  "encoder returned dim " + std::to_string(raw.size()) + ", expected " + std::to_string(dim()));
    return EmbeddingVector(std::span<const float>(raw), m);
  }
};

class StubEncoder final : public EncoderClient {
 public:
  StubEncoder(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 2) throw Error(Errc::InvalidArgument, "stub encoder needs dim >= 2");
  }

  std::size_t dim() const override { return dim_; }

 protected:
  std::vector<float> encode_raw(Modality m, const std::string& payload) override {
    const auto v = stub_encode(payload, dim_, seed_, m);
    return {v.values().begin(), v.values().end()};
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

}  // namespace guing

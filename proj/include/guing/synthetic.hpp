#pragma once

// Seeded synthetic fixtures: clustered embedding repositories for index
// tests, and paired-view worlds where image/text (or sketch/screenshot)
// features are noisy linear views of a shared latent.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "guing/core.hpp"
#include "guing/embedding_io.hpp"
#include "guing/rng.hpp"

namespace guing::synthetic {

inline std::string padded_id(const char* prefix, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%06zu", prefix, i);
  return buf;
}

inline EmbeddingVector random_unit(std::size_t dim, SplitMix64& rng) {
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal();
  return EmbeddingVector::from_doubles(v);
}

inline std::vector<LabeledEmbedding> random_repository(std::size_t n, std::size_t dim, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<LabeledEmbedding> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back({padded_id("v", i), random_unit(dim, rng)});
  return out;
}

struct Clustered {
  std::vector<LabeledEmbedding> items;
  std::vector<int> cluster;
  std::vector<EmbeddingVector> centers;
};

// Unit vectors scattered around `n_clusters` random centers with per-coordinate
// Gaussian noise `spread`, then renormalized.
inline Clustered clustered_repository(std::size_t n, std::size_t dim, std::size_t n_clusters, double spread,
                                      std::uint64_t seed) {
  SplitMix64 rng(seed);
  Clustered c;
  for (std::size_t j = 0; j < n_clusters; ++j) c.centers.push_back(random_unit(dim, rng));
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<int>(rng.below(n_clusters));
    const auto center = c.centers[static_cast<std::size_t>(j)].values();
    for (std::size_t d = 0; d < dim; ++d) v[d] = center[d] + spread * rng.normal();
    c.items.push_back({padded_id("v", i), EmbeddingVector::from_doubles(v)});
    c.cluster.push_back(j);
  }
  return c;
}

// Query near a random cluster center, same noise model as the repository.
inline EmbeddingVector clustered_query(const Clustered& c, double spread, SplitMix64& rng) {
  const auto& center = c.centers[static_cast<std::size_t>(rng.below(c.centers.size()))];
  std::vector<double> v(center.dim());
  for (std::size_t d = 0; d < v.size(); ++d) v[d] = center.values()[d] + spread * rng.normal();
  return EmbeddingVector::from_doubles(v, Modality::text);
}

// Two modalities observing a shared latent through fixed random linear maps
// plus isotropic noise.
class PairedViews {
 public:
  PairedViews(std::size_t latent_dim, std::size_t left_dim, std::size_t right_dim, double noise, std::uint64_t seed)
      : rng_(seed), noise_(noise), latent_dim_(latent_dim) {
    left_map_ = gaussian(left_dim, latent_dim);
    right_map_ = gaussian(right_dim, latent_dim);
  }

  Eigen::VectorXd latent() {
    Eigen::VectorXd z(static_cast<Eigen::Index>(latent_dim_));
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng_.normal();
    return z;
  }

  Eigen::VectorXd left(const Eigen::VectorXd& z) { return left_map_ * z + noise_vec(left_map_.rows()); }
  Eigen::VectorXd right(const Eigen::VectorXd& z) { return right_map_ * z + noise_vec(right_map_.rows()); }

  SplitMix64& rng() { return rng_; }

 private:
  Eigen::MatrixXd gaussian(std::size_t rows, std::size_t cols) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const double s = 1.0 / std::sqrt(static_cast<double>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = s * rng_.normal();
    return m;
  }

  Eigen::VectorXd noise_vec(Eigen::Index n) {
    Eigen::VectorXd e(n);
    for (Eigen::Index i = 0; i < n; ++i) e(i) = noise_ * rng_.normal();
    return e;
  }

  SplitMix64 rng_;
  double noise_;
  std::size_t latent_dim_;
  Eigen::MatrixXd left_map_, right_map_;
};

// Finite-concept image/text task: each concept is one latent; every sample is
// a fresh noisy view of its concept on both sides.
struct ConceptTask {
  Eigen::MatrixXd image_features;
  Eigen::MatrixXd text_features;
  std::vector<int> concept_of;

  Eigen::MatrixXd heldout_image;  // one row per concept, row c is concept c
  Eigen::MatrixXd heldout_text;
};

struct ConceptTaskSpec {
  std::size_t n_concepts = 64;
  std::size_t train_per_concept = 128;
  std::size_t latent_dim = 16;
  std::size_t image_dim = 48;
  std::size_t text_dim = 32;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

inline ConceptTask make_concept_task(const ConceptTaskSpec& spec) {
  PairedViews world(spec.latent_dim, spec.image_dim, spec.text_dim, spec.noise, spec.seed);
  std::vector<Eigen::VectorXd> concepts;
  for (std::size_t c = 0; c < spec.n_concepts; ++c) concepts.push_back(world.latent());
  ConceptTask t;
  const auto n = static_cast<Eigen::Index>(spec.n_concepts * spec.train_per_concept);
  t.image_features.resize(n, static_cast<Eigen::Index>(spec.image_dim));
  t.text_features.resize(n, static_cast<Eigen::Index>(spec.text_dim));
  Eigen::Index row = 0;
  for (std::size_t rep = 0; rep < spec.train_per_concept; ++rep)
    for (std::size_t c = 0; c < spec.n_concepts; ++c, ++row) {
      t.image_features.row(row) = world.left(concepts[c]).transpose();
      t.text_features.row(row) = world.right(concepts[c]).transpose();
      t.concept_of.push_back(static_cast<int>(c));
    }
  t.heldout_image.resize(static_cast<Eigen::Index>(spec.n_concepts), static_cast<Eigen::Index>(spec.image_dim));
  t.heldout_text.resize(static_cast<Eigen::Index>(spec.n_concepts), static_cast<Eigen::Index>(spec.text_dim));
  for (std::size_t c = 0; c < spec.n_concepts; ++c) {
    t.heldout_image.row(static_cast<Eigen::Index>(c)) = world.left(concepts[c]).transpose();
    t.heldout_text.row(static_cast<Eigen::Index>(c)) = world.right(concepts[c]).transpose();
  }
  return t;
}

// Sketch-to-screenshot task: screenshots are frozen unit embeddings; a
// sketch is a noisy fixed linear transform of its screenshot's embedding.
struct SketchTask {
  Eigen::MatrixXd screenshots;      // unit rows
  Eigen::MatrixXd sketch_features;  // one row per sketch
  std::vector<std::size_t> screenshot_of;
  std::vector<bool> heldout;  // sketches of held-out screenshots
};

struct SketchTaskSpec {
  std::size_t n_train_screens = 1000;
  std::size_t n_test_screens = 200;
  std::size_t sketches_per_screen = 3;
  std::size_t embed_dim = 64;
  std::size_t sketch_dim = 80;
  double noise = 0.05;
  std::uint64_t seed = 11;
};

inline SketchTask make_sketch_task(const SketchTaskSpec& spec) {
  SplitMix64 rng(spec.seed);
  const auto n_screens = spec.n_train_screens + spec.n_test_screens;
  SketchTask t;
  t.screenshots.resize(static_cast<Eigen::Index>(n_screens), static_cast<Eigen::Index>(spec.embed_dim));
  for (std::size_t i = 0; i < n_screens; ++i) {
    const auto v = random_unit(spec.embed_dim, rng);
    for (std::size_t d = 0; d < spec.embed_dim; ++d) t.screenshots(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = v.values()[d];
  }
  Eigen::MatrixXd transform(static_cast<Eigen::Index>(spec.sketch_dim), static_cast<Eigen::Index>(spec.embed_dim));
  for (Eigen::Index i = 0; i < transform.rows(); ++i)
    for (Eigen::Index j = 0; j < transform.cols(); ++j) transform(i, j) = rng.normal();
  const auto n_sketch = static_cast<Eigen::Index>(n_screens * spec.sketches_per_screen);
  t.sketch_features.resize(n_sketch, static_cast<Eigen::Index>(spec.sketch_dim));
  Eigen::Index row = 0;
  for (std::size_t s = 0; s < n_screens; ++s)
    for (std::size_t r = 0; r < spec.sketches_per_screen; ++r, ++row) {
      Eigen::VectorXd f = transform * t.screenshots.row(static_cast<Eigen::Index>(s)).transpose();
      for (Eigen::Index d = 0; d < f.size(); ++d) f(d) += spec.noise * rng.normal();
      t.sketch_features.row(row) = f.transpose();
      t.screenshot_of.push_back(s);
      t.heldout.push_back(s >= spec.n_train_screens);
    }
  return t;
}

}  // namespace guing::synthetic

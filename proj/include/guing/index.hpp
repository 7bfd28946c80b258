#pragma once

// Cosine-similarity search over the screenshot embedding repository: a
// brute-force index and an inverted-file (IVF) index that partitions the
// space into Voronoi cells around spherical k-means centroids and scans only
// the cells nearest to the query.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "guing/binary_io.hpp"
#include "guing/core.hpp"
#include "guing/embedding_io.hpp"
#include "guing/parallel.hpp"
#include "guing/rng.hpp"

namespace guing {

struct Hit {
  std::string id;
  double score = 0.0;

  bool operator==(const Hit&) const = default;
};

struct SearchResult {
  std::vector<Hit> hits;
  std::string query_echo;
  std::size_t nprobe_used = 0;
};

class ExactIndex {
 public:
  ExactIndex() = default;

  static ExactIndex build(const std::vector<LabeledEmbedding>& items) {
    if (items.empty()) throw Error(Errc::EmptyInput, "cannot index an empty embedding set");
    ExactIndex idx;
    idx.dim_ = common_dim(items);
    check_unique_ids(items);
    idx.ids_.reserve(items.size());
    idx.matrix_.reserve(items.size() * idx.dim_);
    for (const auto& it : items) {
      idx.ids_.push_back(it.id);
      idx.matrix_.insert(idx.matrix_.end(), it.vec.values().begin(), it.vec.values().end());
    }
    return idx;
  }

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::string& id(std::size_t row) const { return ids_[row]; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const float* row(std::size_t r) const noexcept { return matrix_.data() + r * dim_; }
  std::span<const float> matrix() const noexcept { return matrix_; }

  double score(const EmbeddingVector& q, std::size_t r) const { return dot(q.data(), row(r), dim_); }

  void check_query(const EmbeddingVector& q) const {
    if (q.dim() != dim_)
      throw Error(Errc::DimensionMismatch,
                  "query dim " + std::to_string(q.dim()) + " vs index dim " + std::to_string(dim_));
  }

  // Top-k over the given candidate rows: score descending, id ascending.
  SearchResult rank(const EmbeddingVector& q, std::span<const std::uint32_t> rows, std::size_t k) const {
    std::vector<std::pair<double, std::uint32_t>> scored;
    scored.reserve(rows.size());
    for (auto r : rows) scored.emplace_back(score(q, r), r);
    return top_k(std::move(scored), k);
  }

  std::vector<LabeledEmbedding> items() const {
    std::vector<LabeledEmbedding> out;
    out.reserve(size());
    for (std::size_t r = 0; r < size(); ++r)
      out.push_back({ids_[r], EmbeddingVector::adopt(std::vector<float>(row(r), row(r) + dim_))});
    return out;
  }

  SearchResult top_k(std::vector<std::pair<double, std::uint32_t>> scored, std::size_t k) const {
    auto better = [this](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return ids_[a.second] < ids_[b.second];
    };
    const std::size_t n = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(), better);
    SearchResult res;
    res.hits.reserve(n);
    for (std::size_t i = 0; i < n; ++i) res.hits.push_back({ids_[scored[i].second], scored[i].first});
    return res;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> matrix_;
};

inline ExactIndex build_exact(const std::vector<LabeledEmbedding>& items) { return ExactIndex::build(items); }

inline SearchResult search_exact(const ExactIndex& index, const EmbeddingVector& query, std::size_t k) {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  index.check_query(query);
  std::vector<std::pair<double, std::uint32_t>> scored(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) scored[r] = {index.score(query, r), static_cast<std::uint32_t>(r)};
  auto res = index.top_k(std::move(scored), k);
  res.nprobe_used = 0;
  return res;
}

// ---------------------------------------------------------------------------
// Spherical k-means

struct Centroids {
  std::size_t n_cells = 0;
  std::size_t dim = 0;
  std::vector<float> data;  // n_cells x dim, unit rows

  const float* row(std::size_t c) const noexcept { return data.data() + c * dim; }
};

struct KMeansOptions {
  std::size_t n_cells = 0;
  std::size_t max_iters = 25;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  unsigned threads = 1;
};

// Index of the most similar centroid; ties resolve to the lowest index.
inline std::size_t nearest_centroid(const Centroids& c, const float* v) {
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < c.n_cells; ++j) {
    const double s = dot(v, c.row(j), c.dim);
    if (s > best_score) {
      best_score = s;
      best = j;
    }
  }
  return best;
}

// k-means++ seeding followed by Lloyd iterations with centroids projected
// back to the unit sphere. Stops after max_iters or once no centroid moves by
// more than `tolerance` (Euclidean). Empty cells keep their previous centroid.
inline Centroids kmeans(std::span<const float> points, std::size_t dim, const KMeansOptions& opt) {
  if (dim == 0 || points.size() % dim != 0) throw Error(Errc::DimensionMismatch, "point buffer is not a multiple of dim");
  const std::size_t n = points.size() / dim;
  if (opt.n_cells < 1 || opt.n_cells > n)
    throw Error(Errc::TooFewPoints, std::to_string(n) + " points for " + std::to_string(opt.n_cells) + " cells");
  if (opt.max_iters < 1) throw Error(Errc::InvalidArgument, "max_iters must be >= 1");
  auto point = [&](std::size_t i) { return points.data() + i * dim; };

  Centroids c{opt.n_cells, dim, {}};
  c.data.reserve(opt.n_cells * dim);
  SplitMix64 rng(opt.seed);

  // Squared Euclidean distance between unit vectors is 2 - 2cos.
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.below(n));
  for (std::size_t j = 0; j < opt.n_cells; ++j) {
    c.data.insert(c.data.end(), point(pick), point(pick) + dim);
    const float* cj = c.row(j);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], std::max(0.0, 2.0 - 2.0 * dot(point(i), cj, dim)));
      total += d2[i];
    }
    if (j + 1 == opt.n_cells) break;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[pick] <= 0.0) --pick;  // float slack at the tail
    } else {
      pick = static_cast<std::size_t>(rng.below(n));  // all points coincide with chosen centroids
    }
  }

  std::vector<std::uint32_t> assign(n);
  std::vector<double> sums(opt.n_cells * dim);
  std::vector<std::size_t> counts(opt.n_cells);
  for (std::size_t iter = 0; iter < opt.max_iters; ++iter) {
    parallel_for(n, opt.threads, [&](std::size_t i) { assign[i] = static_cast<std::uint32_t>(nearest_centroid(c, point(i))); });
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      double* s = sums.data() + assign[i] * dim;
      const float* p = point(i);
      for (std::size_t d = 0; d < dim; ++d) s[d] += p[d];
      ++counts[assign[i]];
    }
    double max_shift = 0.0;
    for (std::size_t j = 0; j < opt.n_cells; ++j) {
      if (counts[j] == 0) continue;
      std::span<const double> s(sums.data() + j * dim, dim);
      double sq = 0;
      for (double x : s) sq += x * x;
      if (sq < 1e-24) continue;  // mean at the origin: keep the old direction
      const auto fresh = l2_normalize(s);
      float* cj = c.data.data() + j * dim;
      double shift = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double delta = static_cast<double>(fresh[d]) - cj[d];
        shift += delta * delta;
        cj[d] = fresh[d];
      }
      max_shift = std::max(max_shift, std::sqrt(shift));
    }
    if (max_shift < opt.tolerance) break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// IVF

struct IvfParams {
  std::size_t n_cells;
  std::size_t nprobe;
};

// 3000 cells / 1000 probes for repositories of 100k vectors or more;
// otherwise ceil(sqrt(count)) cells and a third of them probed.
inline IvfParams default_ivf_params(std::size_t count) {
  if (count >= 100000) return {3000, 1000};
  const auto cells = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(count)))));
  return {cells, std::max<std::size_t>(1, (cells + 2) / 3)};
}

class IvfIndex {
 public:
  IvfIndex() = default;

  const ExactIndex& base() const noexcept { return base_; }
  const Centroids& centroids() const noexcept { return centroids_; }
  std::size_t n_cells() const noexcept { return centroids_.n_cells; }
  const std::vector<std::vector<std::uint32_t>>& cells() const noexcept { return cells_; }
  std::uint64_t trained_on() const noexcept { return trained_on_; }
  bool has_cells() const noexcept { return centroids_.n_cells > 0; }

  static IvfIndex assemble(ExactIndex base, Centroids centroids, std::uint64_t trained_on) {
    if (centroids.n_cells > 0 && centroids.dim != base.dim())
      throw Error(Errc::DimensionMismatch, "centroid dim differs from embedding dim");
    IvfIndex idx;
    idx.base_ = std::move(base);
    idx.centroids_ = std::move(centroids);
    idx.trained_on_ = trained_on;
    idx.cells_.assign(idx.centroids_.n_cells, {});
    for (std::size_t r = 0; r < idx.base_.size() && idx.centroids_.n_cells > 0; ++r)
      idx.cells_[nearest_centroid(idx.centroids_, idx.base_.row(r))].push_back(static_cast<std::uint32_t>(r));
    return idx;
  }

  // Used by the snapshot reader; posting lists are validated to partition rows.
  static IvfIndex from_parts(ExactIndex base, Centroids centroids, std::vector<std::vector<std::uint32_t>> cells,
                             std::uint64_t trained_on) {
    if (cells.size() != centroids.n_cells) throw Error(Errc::InvalidRecord, "cell count mismatch");
    std::vector<char> seen(base.size(), 0);
    std::size_t total = 0;
    for (const auto& cell : cells)
      for (auto r : cell) {
        if (r >= base.size() || seen[r]) throw Error(Errc::InvalidRecord, "posting lists do not partition the rows");
        seen[r] = 1;
        ++total;
      }
    if (centroids.n_cells > 0 && total != base.size())
      throw Error(Errc::InvalidRecord, "posting lists do not cover every row");
    IvfIndex idx;
    idx.base_ = std::move(base);
    idx.centroids_ = std::move(centroids);
    idx.cells_ = std::move(cells);
    idx.trained_on_ = trained_on;
    return idx;
  }

  static IvfIndex exact_only(ExactIndex base) {
    const std::size_t dim = base.dim();
    return assemble(std::move(base), Centroids{0, dim, {}}, 0);
  }

 private:
  ExactIndex base_;
  Centroids centroids_;
  std::vector<std::vector<std::uint32_t>> cells_;
  std::uint64_t trained_on_ = 0;
};

// Assigns each embedding to its most similar centroid (lowest index on ties).
inline IvfIndex build_ivf(const std::vector<LabeledEmbedding>& items, Centroids centroids) {
  auto base = ExactIndex::build(items);
  const auto n = base.size();
  return IvfIndex::assemble(std::move(base), std::move(centroids), n);
}

inline IvfIndex build_ivf(ExactIndex base, Centroids centroids, std::uint64_t trained_on) {
  return IvfIndex::assemble(std::move(base), std::move(centroids), trained_on);
}

struct IvfBuildOptions {
  std::size_t n_cells = 0;  // 0 selects default_ivf_params
  std::size_t max_iters = 25;
  std::uint64_t seed = 0;
  std::size_t train_sample = 0;  // 0 trains on every vector
  unsigned threads = 1;
};

// Trains centroids (optionally on a seeded sample) and assigns every vector.
inline IvfIndex train_ivf(ExactIndex base, const IvfBuildOptions& opt) {
  const std::size_t n = base.size();
  const std::size_t cells = opt.n_cells ? opt.n_cells : default_ivf_params(n).n_cells;
  std::size_t sample = opt.train_sample ? std::min(opt.train_sample, n) : n;
  sample = std::max(sample, std::min(cells, n));
  std::vector<float> training;
  if (sample == n) {
    training.assign(base.matrix().begin(), base.matrix().end());
  } else {
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    SplitMix64 rng(opt.seed ^ 0x5bd1e995u);
    rng.shuffle(order);
    order.resize(sample);
    std::sort(order.begin(), order.end());
    training.reserve(sample * base.dim());
    for (auto r : order) training.insert(training.end(), base.row(r), base.row(r) + base.dim());
  }
  auto centroids = kmeans(training, base.dim(), {cells, opt.max_iters, opt.seed, 1e-4, opt.threads});
  return IvfIndex::assemble(std::move(base), std::move(centroids), sample);
}

// Scores the query against every centroid, takes the `nprobe` best non-empty
// cells, and ranks the union of their postings exactly.
inline SearchResult search_ivf(const IvfIndex& index, const EmbeddingVector& query, std::size_t k, std::size_t nprobe) {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  if (nprobe < 1 || nprobe > index.n_cells())
    throw Error(Errc::BadNprobe, "nprobe " + std::to_string(nprobe) + " outside [1, " + std::to_string(index.n_cells()) + "]");
  index.base().check_query(query);
  const auto& c = index.centroids();
  std::vector<std::pair<double, std::uint32_t>> cell_scores;
  cell_scores.reserve(c.n_cells);
  for (std::size_t j = 0; j < c.n_cells; ++j)
    if (!index.cells()[j].empty()) cell_scores.emplace_back(dot(query.data(), c.row(j), c.dim), static_cast<std::uint32_t>(j));
  const std::size_t probes = std::min(nprobe, cell_scores.size());
  std::partial_sort(cell_scores.begin(), cell_scores.begin() + static_cast<std::ptrdiff_t>(probes), cell_scores.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<std::pair<double, std::uint32_t>> scored;
  for (std::size_t p = 0; p < probes; ++p)
    for (auto r : index.cells()[cell_scores[p].second]) scored.emplace_back(index.base().score(query, r), r);
  auto res = index.base().top_k(std::move(scored), k);
  res.nprobe_used = probes;
  return res;
}

// ---------------------------------------------------------------------------
// Snapshot: embedding container followed by
//   "GUINGIVF", u32 version, u32 n_cells, u64 trained_on,
//   n_cells x dim f32 centroids, n_cells x { u64 len, len x u32 row }

inline constexpr std::string_view kIvfTag = "GUINGIVF";
inline constexpr std::uint32_t kIvfVersion = 1;

inline void save_index(const IvfIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  write_embeddings(out, index.base().items(), index.base().dim());
  bin::put_bytes(out, kIvfTag);
  bin::put<std::uint32_t>(out, kIvfVersion);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(index.n_cells()));
  bin::put<std::uint64_t>(out, index.trained_on());
  bin::put_floats(out, index.centroids().data.data(), index.centroids().data.size());
  for (const auto& cell : index.cells()) {
    bin::put<std::uint64_t>(out, cell.size());
    for (auto r : cell) bin::put<std::uint32_t>(out, r);
  }
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

inline IvfIndex load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  auto set = read_embeddings(in);
  auto base = ExactIndex::build(set.items);
  bin::expect_tag(in, kIvfTag);
  const auto version = bin::get<std::uint32_t>(in, "ivf version");
  if (version != kIvfVersion) throw Error(Errc::BadVersion, "unsupported ivf section version " + std::to_string(version));
  Centroids c;
  c.n_cells = bin::get<std::uint32_t>(in, "n_cells");
  c.dim = base.dim();
  const auto trained_on = bin::get<std::uint64_t>(in, "trained_on");
  c.data.resize(c.n_cells * c.dim);
  bin::get_floats(in, c.data.data(), c.data.size(), "centroids");
  std::vector<std::vector<std::uint32_t>> cells(c.n_cells);
  for (auto& cell : cells) {
    const auto len = bin::get<std::uint64_t>(in, "posting length");
    if (len > base.size()) throw Error(Errc::InvalidRecord, "posting list longer than the repository");
    cell.resize(len);
    for (auto& r : cell) r = bin::get<std::uint32_t>(in, "posting");
  }
  return IvfIndex::from_parts(std::move(base), std::move(c), std::move(cells), trained_on);
}

}  // namespace guing

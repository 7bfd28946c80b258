#pragma once

// Contrastive image-text learning at desk scale: the symmetric InfoNCE
// objective with analytic gradients, AdamW, linear encoders, and the
// downstream adaptations (zero-shot and linear-probe classification, and a
// sketch encoder trained against frozen screenshot embeddings).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "guing/binary_io.hpp"
#include "guing/core.hpp"
#include "guing/embedding_io.hpp"
#include "guing/jsonl.hpp"
#include "guing/rng.hpp"

namespace guing::learn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Loss

struct InfoNceResult {
  double loss = 0.0;
  Matrix grad_image;
  Matrix grad_text;
  double grad_logit_scale = 0.0;  // d loss / d logit_scale
};

namespace detail {

// Row-wise softmax and the mean negative log-likelihood of the diagonal.
inline double row_softmax_nll(const Matrix& logits, Matrix& probs) {
  const Eigen::Index n = logits.rows();
  probs.resize(n, logits.cols());
  double nll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - m).exp();
    const double z = shifted.sum();
    probs.row(i) = shifted / z;
    nll += -(logits(i, i) - m - std::log(z));
  }
  return nll / static_cast<double>(n);
}

}  // namespace detail

// Symmetric cross-entropy over S = logit_scale * image * text^T where row i of
// each side forms the matching pair: the mean of the image->text (row) and
// text->image (column) losses.
inline InfoNceResult info_nce_loss(const Matrix& image, const Matrix& text, double logit_scale) {
  if (image.rows() != text.rows() || image.cols() != text.cols())
    throw Error(Errc::DimensionMismatch, "contrastive batch sides differ in shape");
  if (image.rows() < 1) throw Error(Errc::EmptyInput, "contrastive batch is empty");
  if (!(logit_scale > 0)) throw Error(Errc::InvalidArgument, "logit_scale must be positive");
  const Eigen::Index n = image.rows();
  const Matrix cos = image * text.transpose();
  const Matrix logits = logit_scale * cos;

  Matrix p_rows, p_cols_t;
  const double loss_rows = detail::row_softmax_nll(logits, p_rows);
  const double loss_cols = detail::row_softmax_nll(logits.transpose(), p_cols_t);

  InfoNceResult r;
  r.loss = 0.5 * (loss_rows + loss_cols);
  const Matrix eye = Matrix::Identity(n, n);
  const Matrix g = (0.5 / static_cast<double>(n)) * ((p_rows - eye) + (p_cols_t - eye).transpose());
  r.grad_image = logit_scale * g * text;
  r.grad_text = logit_scale * g.transpose() * image;
  r.grad_logit_scale = (g.array() * cos.array()).sum();
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay (Loshchilov & Hutter): w -= lr*wd*w, then the
// bias-corrected Adam step.
class AdamW {
 public:
  AdamW(AdamWConfig cfg, Eigen::Index rows, Eigen::Index cols)
      : cfg_(cfg), m_(Matrix::Zero(rows, cols)), v_(Matrix::Zero(rows, cols)) {}

  void step(Matrix& w, const Matrix& grad, bool apply_decay = true) {
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    if (apply_decay && cfg_.weight_decay != 0.0) w *= (1.0 - cfg_.lr * cfg_.weight_decay);
    w.array() -= cfg_.lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + cfg_.eps);
  }

  std::uint64_t steps() const noexcept { return t_; }

 private:
  AdamWConfig cfg_;
  Matrix m_, v_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Encoders

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, SplitMix64& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = stddev * rng.normal();
  return m;
}

// Normalizes each row; keeps the norms for the backward pass.
inline Matrix normalize_rows(const Matrix& raw, Vector* norms = nullptr) {
  Matrix out = raw;
  if (norms) norms->resize(raw.rows());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double n = raw.row(i).norm();
    if (!(n >= 1e-12)) throw Error(Errc::ZeroVector, "encoder produced a zero embedding");
    out.row(i) /= n;
    if (norms) (*norms)(i) = n;
  }
  return out;
}

// Gradient through row normalization u = e/|e|.
inline Matrix normalize_rows_backward(const Matrix& unit, const Vector& norms, const Matrix& grad_unit) {
  Matrix g(unit.rows(), unit.cols());
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double proj = unit.row(i).dot(grad_unit.row(i));
    g.row(i) = (grad_unit.row(i) - proj * unit.row(i)) / norms(i);
  }
  return g;
}

// y = normalize(W x). Outputs are always unit vectors.
struct LinearEncoder {
  Matrix weights;  // out_dim x in_dim

  Eigen::Index out_dim() const { return weights.rows(); }
  Eigen::Index in_dim() const { return weights.cols(); }

  static LinearEncoder random(Eigen::Index out_dim, Eigen::Index in_dim, SplitMix64& rng) {
    return {gaussian_matrix(out_dim, in_dim, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng)};
  }

  // Rows of `features` are inputs; rows of the result are unit embeddings.
  Matrix encode(const Matrix& features, Vector* norms = nullptr) const {
    if (features.cols() != in_dim()) throw Error(Errc::DimensionMismatch, "feature dim does not match encoder input");
    return normalize_rows(features * weights.transpose(), norms);
  }

  EmbeddingVector encode_one(const Vector& feature, Modality m = Modality::image) const {
    const Vector e = weights * feature;
    return EmbeddingVector::from_doubles(std::span<const double>(e.data(), static_cast<std::size_t>(e.size())), m);
  }

  bool finite() const { return weights.allFinite(); }
};

// ---------------------------------------------------------------------------
// Training

struct LogitScaleConfig {
  bool learnable = true;
  double init = std::log(1.0 / 0.07);  // log of the multiplier
  double max = std::log(100.0);
};

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 5;
  std::size_t embed_dim = 512;
  AdamWConfig optimizer{};
  std::uint64_t seed = 0;
  LogitScaleConfig logit_scale{};
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

inline json to_json(const EpochLog& e) { return {{"epoch", e.epoch}, {"loss", e.loss}, {"wall_ms", e.wall_ms}}; }

struct ContrastiveModel {
  LinearEncoder image_encoder;
  LinearEncoder text_encoder;
  double log_logit_scale = 0.0;
  double initial_loss = 0.0;  // mean batch loss before the first update
  std::vector<EpochLog> loss_curve;

  double logit_scale() const { return std::exp(log_logit_scale); }
};

using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, SplitMix64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch)));
  return out;
}

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

inline void check_finite(double loss, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss))
    throw Error(Errc::NonFiniteLoss, "loss became non-finite at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batch));
}

inline void check_pairs(const Pairs& pairs, Eigen::Index left_rows, Eigen::Index right_rows) {
  if (pairs.size() < 2) throw Error(Errc::InvalidArgument, "contrastive training needs at least 2 pairs");
  for (const auto& [a, b] : pairs)
    if (a >= static_cast<std::size_t>(left_rows) || b >= static_cast<std::size_t>(right_rows))
      throw Error(Errc::InvalidArgument, "pair index out of range");
}

}  // namespace detail

// Trains image and text linear encoders jointly with AdamW on mini-batches of
// matched (image, text) feature rows. Shuffling is seeded; the last partial
// batch is kept.
inline ContrastiveModel train_contrastive(const Matrix& image_features, const Matrix& text_features, const Pairs& pairs,
                                          const TrainConfig& cfg) {
  detail::check_pairs(pairs, image_features.rows(), text_features.rows());
  if (!image_features.allFinite() || !text_features.allFinite())
    throw Error(Errc::InvalidArgument, "features must be finite");
  if (cfg.batch_size < 1 || cfg.epochs < 1 || !(cfg.optimizer.lr > 0))
    throw Error(Errc::InvalidArgument, "batch_size, epochs and learning rate must be positive");

  SplitMix64 rng(cfg.seed);
  const auto dim = static_cast<Eigen::Index>(cfg.embed_dim);
  ContrastiveModel model;
  model.image_encoder = LinearEncoder::random(dim, image_features.cols(), rng);
  model.text_encoder = LinearEncoder::random(dim, text_features.cols(), rng);
  model.log_logit_scale = std::min(cfg.logit_scale.init, cfg.logit_scale.max);

  std::vector<std::size_t> left(pairs.size()), right(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) std::tie(left[i], right[i]) = pairs[i];
  const Matrix img_all = detail::gather_rows(image_features, left);
  const Matrix txt_all = detail::gather_rows(text_features, right);

  AdamW opt_img(cfg.optimizer, dim, image_features.cols());
  AdamW opt_txt(cfg.optimizer, dim, text_features.cols());
  AdamWConfig scale_cfg = cfg.optimizer;
  scale_cfg.weight_decay = 0.0;
  AdamW opt_scale(scale_cfg, 1, 1);

  auto batch_loss = [&](const std::vector<std::size_t>& rows, bool update) {
    const Matrix xi = detail::gather_rows(img_all, rows);
    const Matrix xt = detail::gather_rows(txt_all, rows);
    Vector ni, nt;
    const Matrix ui = model.image_encoder.encode(xi, &ni);
    const Matrix ut = model.text_encoder.encode(xt, &nt);
    const double scale = model.logit_scale();
    auto r = info_nce_loss(ui, ut, scale);
    if (!update) return r.loss;
    const Matrix gi = normalize_rows_backward(ui, ni, r.grad_image).transpose() * xi;
    const Matrix gt = normalize_rows_backward(ut, nt, r.grad_text).transpose() * xt;
    opt_img.step(model.image_encoder.weights, gi);
    opt_txt.step(model.text_encoder.weights, gt);
    if (cfg.logit_scale.learnable) {
      Matrix s{{model.log_logit_scale}};
      opt_scale.step(s, Matrix{{r.grad_logit_scale * scale}}, false);
      model.log_logit_scale = std::min(s(0, 0), cfg.logit_scale.max);
    }
    return r.loss;
  };

  {
    SplitMix64 probe_rng(cfg.seed ^ 0xabcdef);
    const auto batches = detail::epoch_batches(pairs.size(), cfg.batch_size, probe_rng);
    double total = 0.0;
    for (const auto& b : batches) total += batch_loss(b, false);
    model.initial_loss = total / static_cast<double>(batches.size());
    detail::check_finite(model.initial_loss, 0, 0);
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = detail::epoch_batches(pairs.size(), cfg.batch_size, rng);
    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const double loss = batch_loss(batches[b], true);
      detail::check_finite(loss, epoch, b);
      total += loss;
    }
    if (!model.image_encoder.finite() || !model.text_encoder.finite())
      throw Error(Errc::NonFiniteLoss, "encoder weights became non-finite at epoch " + std::to_string(epoch));
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    model.loss_curve.push_back({epoch, total / static_cast<double>(batches.size()), ms});
  }
  return model;
}

struct SketchAdapter {
  LinearEncoder sketch_encoder;
  double log_logit_scale = 0.0;
  std::vector<EpochLog> loss_curve;
};

// Contrastive training of a sketch encoder against screenshot embeddings that
// stay fixed: only the sketch side (and the logit scale) receive updates.
inline SketchAdapter train_sketch_adapter(const Matrix& sketch_features, const Matrix& frozen_screenshots,
                                          const Pairs& pairs, const TrainConfig& cfg) {
  detail::check_pairs(pairs, sketch_features.rows(), frozen_screenshots.rows());
  if (!sketch_features.allFinite()) throw Error(Errc::InvalidArgument, "features must be finite");
  for (Eigen::Index i = 0; i < frozen_screenshots.rows(); ++i)
    if (std::abs(frozen_screenshots.row(i).norm() - 1.0) > 1e-6)
      throw Error(Errc::InvalidArgument, "screenshot embeddings must be unit-norm");

  SplitMix64 rng(cfg.seed);
  SketchAdapter out;
  out.sketch_encoder = LinearEncoder::random(frozen_screenshots.cols(), sketch_features.cols(), rng);
  out.log_logit_scale = std::min(cfg.logit_scale.init, cfg.logit_scale.max);
  AdamW opt(cfg.optimizer, out.sketch_encoder.out_dim(), out.sketch_encoder.in_dim());
  AdamWConfig scale_cfg = cfg.optimizer;
  scale_cfg.weight_decay = 0.0;
  AdamW opt_scale(scale_cfg, 1, 1);

  std::vector<std::size_t> left(pairs.size()), right(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) std::tie(left[i], right[i]) = pairs[i];
  const Matrix sk_all = detail::gather_rows(sketch_features, left);
  const Matrix sc_all = detail::gather_rows(frozen_screenshots, right);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = detail::epoch_batches(pairs.size(), cfg.batch_size, rng);
    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Matrix xs = detail::gather_rows(sk_all, batches[b]);
      const Matrix screens = detail::gather_rows(sc_all, batches[b]);
      Vector ns;
      const Matrix us = out.sketch_encoder.encode(xs, &ns);
      const double scale = std::exp(out.log_logit_scale);
      const auto r = info_nce_loss(us, screens, scale);
      detail::check_finite(r.loss, epoch, b);
      total += r.loss;
      opt.step(out.sketch_encoder.weights, normalize_rows_backward(us, ns, r.grad_image).transpose() * xs);
      if (cfg.logit_scale.learnable) {
        Matrix s{{out.log_logit_scale}};
        opt_scale.step(s, Matrix{{r.grad_logit_scale * scale}}, false);
        out.log_logit_scale = std::min(s(0, 0), cfg.logit_scale.max);
      }
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    out.loss_curve.push_back({epoch, total / static_cast<double>(batches.size()), ms});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Classification

// Index of the label embedding most similar to the image; ties go low.
inline std::size_t zero_shot_classify(const EmbeddingVector& image, const std::vector<EmbeddingVector>& labels) {
  if (labels.empty()) throw Error(Errc::EmptyInput, "no label embeddings");
  std::size_t best = 0;
  double best_score = -2.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double s = cosine_similarity(image, labels[i]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  return best;
}

struct LinearProbe {
  Matrix weights;  // n_classes x dim
  Vector bias;

  Vector logits(const Vector& x) const { return weights * x + bias; }

  int predict(const Vector& x) const {
    const Vector z = logits(x);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < z.size(); ++i)
      if (z(i) > z(best)) best = i;
    return static_cast<int>(best);
  }

  std::vector<int> predict_all(const Matrix& features) const {
    std::vector<int> out(static_cast<std::size_t>(features.rows()));
    for (Eigen::Index i = 0; i < features.rows(); ++i) out[static_cast<std::size_t>(i)] = predict(features.row(i).transpose());
    return out;
  }
};

struct ProbeConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  AdamWConfig optimizer{1e-5};
  std::uint64_t seed = 0;
};

struct ProbeResult {
  LinearProbe probe;
  std::vector<int> absent_classes;  // warning: classes with no training rows
  std::vector<EpochLog> loss_curve;
};

// Softmax regression on frozen features.
inline ProbeResult train_linear_probe(const Matrix& features, const std::vector<int>& labels, int n_classes,
                                      const ProbeConfig& cfg) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw Error(Errc::InvalidArgument, "features and labels differ in length");
  if (labels.empty()) throw Error(Errc::EmptyInput, "no training rows");
  if (n_classes < 1) throw Error(Errc::InvalidArgument, "n_classes must be positive");
  std::vector<std::size_t> support(static_cast<std::size_t>(n_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= n_classes) throw Error(Errc::InvalidArgument, "label outside [0, n_classes)");
    ++support[static_cast<std::size_t>(y)];
  }
  ProbeResult out;
  for (int c = 0; c < n_classes; ++c)
    if (support[static_cast<std::size_t>(c)] == 0) out.absent_classes.push_back(c);

  const Eigen::Index d = features.cols();
  out.probe.weights = Matrix::Zero(n_classes, d);
  out.probe.bias = Vector::Zero(n_classes);
  AdamW opt_w(cfg.optimizer, n_classes, d);
  AdamW opt_b(cfg.optimizer, n_classes, 1);
  SplitMix64 rng(cfg.seed);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = detail::epoch_batches(labels.size(), cfg.batch_size, rng);
    double total = 0.0;
    for (const auto& rows : batches) {
      const Matrix x = detail::gather_rows(features, rows);
      Matrix z = x * out.probe.weights.transpose();
      z.rowwise() += out.probe.bias.transpose();
      Matrix g(z.rows(), z.cols());
      double loss = 0.0;
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double m = z.row(i).maxCoeff();
        const auto e = (z.row(i).array() - m).exp();
        const double s = e.sum();
        g.row(i) = e / s;
        const int y = labels[rows[static_cast<std::size_t>(i)]];
        loss += -(z(i, y) - m - std::log(s));
        g(i, y) -= 1.0;
      }
      const double inv = 1.0 / static_cast<double>(rows.size());
      loss *= inv;
      detail::check_finite(loss, epoch, 0);
      total += loss;
      Matrix gb = (g.colwise().sum() * inv).transpose();
      opt_w.step(out.probe.weights, (g.transpose() * x) * inv);
      Matrix bias = out.probe.bias;
      opt_b.step(bias, gb, false);
      out.probe.bias = bias;
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    out.loss_curve.push_back({epoch, total / static_cast<double>(batches.size()), ms});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoder container: an embedding file with zero records whose dim is the
// encoder output dim, followed by
//   "GUINGWTS", u32 version, u32 out_dim, u32 in_dim, out_dim*in_dim f32 (row-major)

inline constexpr std::string_view kWeightsTag = "GUINGWTS";

inline void save_encoder(const LinearEncoder& enc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  write_embeddings(out, {}, static_cast<std::size_t>(enc.out_dim()));
  bin::put_bytes(out, kWeightsTag);
  bin::put<std::uint32_t>(out, 1);
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(enc.out_dim()));
  bin::put<std::uint32_t>(out, static_cast<std::uint32_t>(enc.in_dim()));
  for (Eigen::Index i = 0; i < enc.out_dim(); ++i)
    for (Eigen::Index j = 0; j < enc.in_dim(); ++j) bin::put<float>(out, static_cast<float>(enc.weights(i, j)));
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

inline LinearEncoder load_encoder(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  const auto header = read_embeddings(in);
  bin::expect_tag(in, kWeightsTag);
  if (bin::get<std::uint32_t>(in, "weights version") != 1) throw Error(Errc::BadVersion, "unsupported weights version");
  const auto rows = bin::get<std::uint32_t>(in, "out_dim");
  const auto cols = bin::get<std::uint32_t>(in, "in_dim");
  if (rows != header.dim) throw Error(Errc::InvalidRecord, "weights out_dim disagrees with container dim");
  LinearEncoder enc{Matrix(rows, cols)};
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) enc.weights(i, j) = bin::get<float>(in, "weights");
  return enc;
}

inline void write_training_log(const std::filesystem::path& path, const std::vector<EpochLog>& curve) {
  std::vector<json> rows;
  for (const auto& e : curve) rows.push_back(to_json(e));
  write_jsonl(path, rows);
}

}  // namespace guing::learn

#pragma once

// Experiment protocols: text-to-GUI recall (exp1), classification with
// zero-shot and linear-probe heads (exp3), sketch-to-GUI retrieval with a
// trained sketch adapter (exp4). Exp2 lives in judgments.hpp.
//
// Every runner has a synthetic mode that builds its own data from a seed,
// and a file mode that takes precomputed embeddings.

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "guing/embedding_io.hpp"
#include "guing/index.hpp"
#include "guing/learn.hpp"
#include "guing/metrics.hpp"
#include "guing/rng.hpp"
#include "guing/synthetic.hpp"

namespace guing::eval {

using learn::Matrix;

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<std::size_t> train, val, test;  // item indices
};

// Whole apps go to one split so no app contributes screenshots to two
// splits. Apps are shuffled with the seed, then `test_apps` go to test,
// `val_apps` to validation and the rest to train.
inline Split split_by_app(const std::vector<std::string>& app_of_item, std::size_t val_apps, std::size_t test_apps,
                          std::uint64_t seed) {
  std::vector<std::string> apps(app_of_item.begin(), app_of_item.end());
  std::sort(apps.begin(), apps.end());
  apps.erase(std::unique(apps.begin(), apps.end()), apps.end());
  if (val_apps + test_apps >= apps.size())
    throw Error(Errc::InvalidArgument, "need more apps than val_apps + test_apps (" + std::to_string(apps.size()) + ")");
  SplitMix64 rng(seed);
  rng.shuffle(apps);
  std::unordered_map<std::string, int> where;
  for (std::size_t i = 0; i < apps.size(); ++i) where[apps[i]] = i < test_apps ? 2 : i < test_apps + val_apps ? 1 : 0;
  Split s;
  for (std::size_t i = 0; i < app_of_item.size(); ++i) {
    switch (where[app_of_item[i]]) {
      case 0: s.train.push_back(i); break;
      case 1: s.val.push_back(i); break;
      default: s.test.push_back(i); break;
    }
  }
  return s;
}

// Per class, round(test_fraction * class size) items go to test.
inline Split stratified_split(const std::vector<int>& labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw Error(Errc::InvalidArgument, "test_fraction must be in (0,1)");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  SplitMix64 rng(seed);
  Split s;
  for (auto& [c, idx] : by_class) {
    rng.shuffle(idx);
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_test ? s.test : s.train).push_back(idx[i]);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// ---------------------------------------------------------------------------
// Retrieval helpers

inline std::vector<LabeledEmbedding> rows_as_embeddings(const Matrix& rows, const char* prefix, Modality m) {
  std::vector<LabeledEmbedding> out;
  out.reserve(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const learn::Vector r = rows.row(i).transpose();
    out.push_back({synthetic::padded_id(prefix, static_cast<std::size_t>(i)),
                   EmbeddingVector::from_doubles(std::span<const double>(r.data(), static_cast<std::size_t>(r.size())), m)});
  }
  return out;
}

// Ranks the whole gallery for every query with the exact index and scores
// where each query's ground-truth id lands.
inline std::map<std::size_t, double> retrieval_recall(const std::vector<LabeledEmbedding>& queries,
                                                      const std::vector<std::string>& truth_ids,
                                                      const std::vector<LabeledEmbedding>& gallery,
                                                      const std::vector<std::size_t>& ks) {
  if (queries.size() != truth_ids.size()) throw Error(Errc::InvalidArgument, "one truth id per query required");
  const auto index = build_exact(gallery);
  const std::size_t depth = std::min(index.size(), *std::max_element(ks.begin(), ks.end()));
  std::vector<RankedList> lists;
  std::unordered_map<std::string, std::string> truth;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    RankedList l{queries[i].id, {}};
    for (auto& h : search_exact(index, queries[i].vec, depth).hits) l.ids.push_back(std::move(h.id));
    lists.push_back(std::move(l));
    truth[queries[i].id] = truth_ids[i];
  }
  return recall_at_k(lists, truth, ks);
}

// Expected recall@k of a uniformly random ranking over n candidates.
inline std::map<std::size_t, double> chance_recall(std::size_t n, const std::vector<std::size_t>& ks) {
  std::map<std::size_t, double> out;
  for (auto k : ks) out[k] = n ? std::min(1.0, static_cast<double>(k) / static_cast<double>(n)) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Exp1: text-to-GUI recall

inline const std::vector<std::size_t>& exp1_ks() {
  static const std::vector<std::size_t> ks{1, 3, 5, 10, 50, 100};
  return ks;
}

struct RecallRow {
  std::string model;
  std::map<std::size_t, double> recall;
};

struct Exp1Report {
  std::string dataset;
  std::size_t gallery_size = 0;
  std::size_t queries = 0;
  std::vector<RecallRow> rows;
  std::vector<learn::EpochLog> loss_curve;
};

struct Exp1SyntheticConfig {
  std::size_t n_apps = 120;
  std::size_t screens_per_app = 12;
  std::size_t captions_per_screen = 2;
  std::size_t val_apps = 10;
  std::size_t test_apps = 20;
  std::size_t latent_dim = 24;
  std::size_t image_dim = 64;
  std::size_t text_dim = 48;
  double noise = 1.2;
  learn::TrainConfig train{128, 5, 64, learn::AdamWConfig{1e-2}};
  std::uint64_t seed = 1;
  std::vector<std::size_t> ks = exp1_ks();
};

// Every screenshot has its own latent; captions are independent noisy text
// views of it. Captions of the test apps query the test screenshots.
inline Exp1Report run_exp1_synthetic(const Exp1SyntheticConfig& cfg) {
  synthetic::PairedViews world(cfg.latent_dim, cfg.image_dim, cfg.text_dim, cfg.noise, cfg.seed);
  const std::size_t n_screens = cfg.n_apps * cfg.screens_per_app;
  Matrix img(static_cast<Eigen::Index>(n_screens), static_cast<Eigen::Index>(cfg.image_dim));
  Matrix txt(static_cast<Eigen::Index>(n_screens * cfg.captions_per_screen), static_cast<Eigen::Index>(cfg.text_dim));
  std::vector<std::string> app_of;
  for (std::size_t s = 0; s < n_screens; ++s) {
    const auto z = world.latent();
    img.row(static_cast<Eigen::Index>(s)) = world.left(z).transpose();
    for (std::size_t c = 0; c < cfg.captions_per_screen; ++c)
      txt.row(static_cast<Eigen::Index>(s * cfg.captions_per_screen + c)) = world.right(z).transpose();
    app_of.push_back(synthetic::padded_id("app", s / cfg.screens_per_app));
  }
  const Split split = split_by_app(app_of, cfg.val_apps, cfg.test_apps, cfg.seed);

  learn::Pairs pairs;
  for (auto s : split.train)
    for (std::size_t c = 0; c < cfg.captions_per_screen; ++c) pairs.emplace_back(s, s * cfg.captions_per_screen + c);

  auto evaluate = [&](const learn::LinearEncoder& ienc, const learn::LinearEncoder& tenc) {
    Matrix test_img(static_cast<Eigen::Index>(split.test.size()), img.cols());
    Matrix test_txt(static_cast<Eigen::Index>(split.test.size() * cfg.captions_per_screen), txt.cols());
    std::vector<std::string> truth;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      test_img.row(static_cast<Eigen::Index>(i)) = img.row(static_cast<Eigen::Index>(split.test[i]));
      for (std::size_t c = 0; c < cfg.captions_per_screen; ++c) {
        test_txt.row(static_cast<Eigen::Index>(i * cfg.captions_per_screen + c)) =
            txt.row(static_cast<Eigen::Index>(split.test[i] * cfg.captions_per_screen + c));
        truth.push_back(synthetic::padded_id("s", i));
      }
    }
    const auto gallery = rows_as_embeddings(ienc.encode(test_img), "s", Modality::image);
    const auto queries = rows_as_embeddings(tenc.encode(test_txt), "q", Modality::text);
    return retrieval_recall(queries, truth, gallery, cfg.ks);
  };

  Exp1Report rep;
  rep.dataset = "synthetic";
  rep.gallery_size = split.test.size();
  rep.queries = split.test.size() * cfg.captions_per_screen;
  rep.rows.push_back({"(Chance)", chance_recall(rep.gallery_size, cfg.ks)});

  SplitMix64 init_rng(cfg.train.seed);
  const auto dim = static_cast<Eigen::Index>(cfg.train.embed_dim);
  const auto untrained_img = learn::LinearEncoder::random(dim, img.cols(), init_rng);
  const auto untrained_txt = learn::LinearEncoder::random(dim, txt.cols(), init_rng);
  rep.rows.push_back({"Untrained", evaluate(untrained_img, untrained_txt)});

  const auto model = learn::train_contrastive(img, txt, pairs, cfg.train);
  rep.rows.push_back({"Trained", evaluate(model.image_encoder, model.text_encoder)});
  rep.loss_curve = model.loss_curve;
  return rep;
}

// File mode: gallery and caption embeddings precomputed; `truth` maps each
// caption id to its screenshot id.
inline Exp1Report run_exp1_files(const std::string& dataset, const std::string& model_name, const EmbeddingSet& screenshots,
                                 const EmbeddingSet& captions, const std::unordered_map<std::string, std::string>& truth,
                                 const std::vector<std::size_t>& ks) {
  std::vector<std::string> truth_ids;
  for (const auto& q : captions.items) {
    auto it = truth.find(q.id);
    if (it == truth.end()) throw Error(Errc::MissingTruth, "no screenshot for caption " + q.id);
    truth_ids.push_back(it->second);
  }
  Exp1Report rep;
  rep.dataset = dataset;
  rep.gallery_size = screenshots.items.size();
  rep.queries = captions.items.size();
  rep.rows.push_back({"(Chance)", chance_recall(rep.gallery_size, ks)});
  rep.rows.push_back({model_name, retrieval_recall(captions.items, truth_ids, screenshots.items, ks)});
  return rep;
}

// Dataset | Model | Recall@k ...
inline Table exp1_table(const std::vector<Exp1Report>& reports, const std::vector<std::size_t>& ks) {
  Table t;
  t.header = {"Dataset", "Model"};
  for (auto k : ks) t.header.push_back("Recall@" + std::to_string(k));
  for (const auto& rep : reports)
    for (const auto& row : rep.rows) {
      std::vector<std::string> r{rep.dataset, row.model};
      for (auto k : ks) r.push_back(fmt3(row.recall.at(k)));
      t.rows.push_back(std::move(r));
    }
  return t;
}

// ---------------------------------------------------------------------------
// Exp3: classification

struct PrfTriple {
  double precision = 0, recall = 0, f1 = 0;
};

struct Exp3Row {
  std::string model;
  PrfTriple zero_shot, linear_probe;
};

struct Exp3Report {
  std::vector<Exp3Row> rows;
  std::vector<int> absent_classes;  // union over folds, from probe training
};

inline PrfTriple weighted(const ClassificationReport& r) { return {r.weighted_precision, r.weighted_recall, r.weighted_f1}; }

inline PrfTriple zero_shot_eval(const std::vector<EmbeddingVector>& images, const std::vector<int>& golds,
                                const std::vector<EmbeddingVector>& labels) {
  std::vector<int> preds;
  preds.reserve(images.size());
  for (const auto& im : images) preds.push_back(static_cast<int>(learn::zero_shot_classify(im, labels)));
  return weighted(classification_report(preds, golds, static_cast<int>(labels.size())));
}

// Repeats a stratified split `folds` times with derived seeds and averages
// the weighted test metrics.
inline PrfTriple linear_probe_eval(const Matrix& features, const std::vector<int>& labels, int n_classes,
                                   std::size_t folds, double test_fraction, const learn::ProbeConfig& probe_cfg,
                                   std::uint64_t seed, std::vector<int>* absent = nullptr) {
  if (folds < 1) throw Error(Errc::InvalidArgument, "folds must be >= 1");
  PrfTriple mean;
  for (std::size_t f = 0; f < folds; ++f) {
    const auto split = stratified_split(labels, test_fraction, seed + f);
    std::vector<int> ytr, yte;
    for (auto i : split.train) ytr.push_back(labels[i]);
    for (auto i : split.test) yte.push_back(labels[i]);
    auto cfg = probe_cfg;
    cfg.seed = probe_cfg.seed + f;
    const auto res = learn::train_linear_probe(learn::detail::gather_rows(features, split.train), ytr, n_classes, cfg);
    if (absent) absent->insert(absent->end(), res.absent_classes.begin(), res.absent_classes.end());
    const auto pr = weighted(classification_report(res.probe.predict_all(learn::detail::gather_rows(features, split.test)), yte, n_classes));
    mean.precision += pr.precision / static_cast<double>(folds);
    mean.recall += pr.recall / static_cast<double>(folds);
    mean.f1 += pr.f1 / static_cast<double>(folds);
  }
  if (absent) {
    std::sort(absent->begin(), absent->end());
    absent->erase(std::unique(absent->begin(), absent->end()), absent->end());
  }
  return mean;
}

struct Exp3SyntheticConfig {
  std::size_t n_classes = 20;
  std::size_t per_class = 40;
  std::size_t pretrain_pairs = 4000;
  std::size_t latent_dim = 24;
  std::size_t image_dim = 64;
  std::size_t text_dim = 48;
  double noise = 1.0;
  double within_class = 1.5;  // latent spread around a class center
  std::size_t folds = 5;
  double test_fraction = 0.2;
  learn::TrainConfig train{128, 5, 64, learn::AdamWConfig{1e-2}};
  learn::ProbeConfig probe{128, 100, learn::AdamWConfig{1e-2}};
  std::uint64_t seed = 3;
};

// Encoders are pretrained on generic (image, caption) pairs; the labeled set
// then consists of images drawn around class centers, and label texts are
// text views of those centers.
inline Exp3Report run_exp3_synthetic(const Exp3SyntheticConfig& cfg) {
  synthetic::PairedViews world(cfg.latent_dim, cfg.image_dim, cfg.text_dim, cfg.noise, cfg.seed);
  Matrix pre_img(static_cast<Eigen::Index>(cfg.pretrain_pairs), static_cast<Eigen::Index>(cfg.image_dim));
  Matrix pre_txt(static_cast<Eigen::Index>(cfg.pretrain_pairs), static_cast<Eigen::Index>(cfg.text_dim));
  learn::Pairs pairs;
  for (std::size_t i = 0; i < cfg.pretrain_pairs; ++i) {
    const auto z = world.latent();
    pre_img.row(static_cast<Eigen::Index>(i)) = world.left(z).transpose();
    pre_txt.row(static_cast<Eigen::Index>(i)) = world.right(z).transpose();
    pairs.emplace_back(i, i);
  }

  std::vector<Eigen::VectorXd> centers;
  Matrix label_txt(static_cast<Eigen::Index>(cfg.n_classes), static_cast<Eigen::Index>(cfg.text_dim));
  for (std::size_t c = 0; c < cfg.n_classes; ++c) {
    centers.push_back(world.latent());
    label_txt.row(static_cast<Eigen::Index>(c)) = world.right(centers.back()).transpose();
  }
  const std::size_t n = cfg.n_classes * cfg.per_class;
  Matrix cls_img(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.image_dim));
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % cfg.n_classes;
    Eigen::VectorXd z = centers[c] + cfg.within_class * world.latent();
    cls_img.row(static_cast<Eigen::Index>(i)) = world.left(z).transpose();
    labels.push_back(static_cast<int>(c));
  }

  Exp3Report rep;
  auto evaluate = [&](const std::string& name, const learn::LinearEncoder& ienc, const learn::LinearEncoder& tenc) {
    const Matrix emb = ienc.encode(cls_img);
    std::vector<EmbeddingVector> images, label_embs;
    for (const auto& e : rows_as_embeddings(emb, "i", Modality::image)) images.push_back(e.vec);
    for (const auto& e : rows_as_embeddings(tenc.encode(label_txt), "l", Modality::text)) label_embs.push_back(e.vec);
    Exp3Row row{name, zero_shot_eval(images, labels, label_embs), {}};
    row.linear_probe = linear_probe_eval(emb, labels, static_cast<int>(cfg.n_classes), cfg.folds, cfg.test_fraction,
                                         cfg.probe, cfg.seed, &rep.absent_classes);
    rep.rows.push_back(std::move(row));
  };

  SplitMix64 init_rng(cfg.train.seed);
  const auto dim = static_cast<Eigen::Index>(cfg.train.embed_dim);
  const auto ui = learn::LinearEncoder::random(dim, pre_img.cols(), init_rng);
  const auto ut = learn::LinearEncoder::random(dim, pre_txt.cols(), init_rng);
  evaluate("Untrained", ui, ut);
  const auto model = learn::train_contrastive(pre_img, pre_txt, pairs, cfg.train);
  evaluate("Trained", model.image_encoder, model.text_encoder);
  return rep;
}

// File mode: image embeddings with integer labels, plus one label embedding
// per class in class-index order.
inline Exp3Report run_exp3_files(const std::string& model_name, const EmbeddingSet& images,
                                 const std::unordered_map<std::string, int>& label_of, const EmbeddingSet& label_embs,
                                 std::size_t folds, double test_fraction, const learn::ProbeConfig& probe,
                                 std::uint64_t seed) {
  std::vector<EmbeddingVector> imgs, lbls;
  std::vector<int> golds;
  Matrix feats(static_cast<Eigen::Index>(images.items.size()), static_cast<Eigen::Index>(images.dim));
  for (std::size_t i = 0; i < images.items.size(); ++i) {
    const auto& it = images.items[i];
    auto l = label_of.find(it.id);
    if (l == label_of.end()) throw Error(Errc::MissingTruth, "no label for " + it.id);
    golds.push_back(l->second);
    imgs.push_back(it.vec);
    for (std::size_t d = 0; d < images.dim; ++d)
      feats(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = it.vec.values()[d];
  }
  for (const auto& l : label_embs.items) lbls.push_back(l.vec);
  const int n_classes = static_cast<int>(lbls.size());
  for (int g : golds)
    if (g < 0 || g >= n_classes) throw Error(Errc::InvalidArgument, "label outside [0, n_classes)");
  Exp3Report rep;
  Exp3Row row{model_name, zero_shot_eval(imgs, golds, lbls), {}};
  row.linear_probe = linear_probe_eval(feats, golds, n_classes, folds, test_fraction, probe, seed, &rep.absent_classes);
  rep.rows.push_back(row);
  return rep;
}

// Model | zero-shot P R F1 | linear-probe P R F1
inline Table exp3_table(const Exp3Report& rep) {
  Table t;
  t.header = {"Model", "ZS Precision", "ZS Recall", "ZS F1", "LP Precision", "LP Recall", "LP F1"};
  for (const auto& r : rep.rows)
    t.rows.push_back({r.model, fmt3(r.zero_shot.precision), fmt3(r.zero_shot.recall), fmt3(r.zero_shot.f1),
                      fmt3(r.linear_probe.precision), fmt3(r.linear_probe.recall), fmt3(r.linear_probe.f1)});
  return t;
}

// ---------------------------------------------------------------------------
// Exp4: sketch-to-GUI retrieval

inline const std::vector<std::size_t>& exp4_ks() {
  static const std::vector<std::size_t> ks{1, 3, 5, 10};
  return ks;
}

struct Exp4Row {
  std::string model;
  std::map<std::size_t, double> zero_shot, fine_tuned;
};

struct Exp4Report {
  std::vector<Exp4Row> rows;
  std::vector<learn::EpochLog> loss_curve;
  bool screenshots_unchanged = false;  // frozen side compared bitwise after training
};

inline synthetic::SketchTaskSpec demo_sketch_task() {
  synthetic::SketchTaskSpec t;
  t.noise = 2.0;
  return t;
}

struct Exp4SyntheticConfig {
  synthetic::SketchTaskSpec task = demo_sketch_task();
  learn::TrainConfig train{256, 10, 0, learn::AdamWConfig{1e-2}};
  std::vector<std::size_t> ks = exp4_ks();
};

// Held-out sketches query the gallery of held-out screenshots.
inline std::map<std::size_t, double> sketch_recall(const learn::LinearEncoder& enc, const synthetic::SketchTask& task,
                                                   const std::vector<std::size_t>& ks) {
  std::vector<std::size_t> sketch_rows, screen_rows;
  std::map<std::size_t, std::size_t> gallery_pos;
  for (std::size_t i = 0; i < task.screenshot_of.size(); ++i)
    if (task.heldout[i]) {
      sketch_rows.push_back(i);
      if (gallery_pos.emplace(task.screenshot_of[i], screen_rows.size()).second) screen_rows.push_back(task.screenshot_of[i]);
    }
  const auto gallery = rows_as_embeddings(learn::detail::gather_rows(task.screenshots, screen_rows), "s", Modality::image);
  const auto queries = rows_as_embeddings(enc.encode(learn::detail::gather_rows(task.sketch_features, sketch_rows)), "k",
                                          Modality::image);
  std::vector<std::string> truth;
  for (auto r : sketch_rows) truth.push_back(synthetic::padded_id("s", gallery_pos.at(task.screenshot_of[r])));
  return retrieval_recall(queries, truth, gallery, ks);
}

inline Exp4Report run_exp4_synthetic(const Exp4SyntheticConfig& cfg) {
  const auto task = synthetic::make_sketch_task(cfg.task);
  const Matrix before = task.screenshots;
  learn::Pairs pairs;
  for (std::size_t i = 0; i < task.screenshot_of.size(); ++i)
    if (!task.heldout[i]) pairs.emplace_back(i, task.screenshot_of[i]);

  SplitMix64 init_rng(cfg.train.seed);
  const auto untrained =
      learn::LinearEncoder::random(task.screenshots.cols(), task.sketch_features.cols(), init_rng);
  const auto adapter = learn::train_sketch_adapter(task.sketch_features, task.screenshots, pairs, cfg.train);

  Exp4Report rep;
  rep.rows.push_back({"Dual linear", sketch_recall(untrained, task, cfg.ks), sketch_recall(adapter.sketch_encoder, task, cfg.ks)});
  rep.loss_curve = adapter.loss_curve;
  rep.screenshots_unchanged =
      before.size() == task.screenshots.size() &&
      std::equal(before.data(), before.data() + before.size(), task.screenshots.data(),
                 [](double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); });
  return rep;
}

// Model | zero-shot Recall@k | fine-tuned Recall@k
inline Table exp4_table(const Exp4Report& rep, const std::vector<std::size_t>& ks) {
  Table t;
  t.header = {"Model"};
  for (auto k : ks) t.header.push_back("ZS Recall@" + std::to_string(k));
  for (auto k : ks) t.header.push_back("FT Recall@" + std::to_string(k));
  for (const auto& r : rep.rows) {
    std::vector<std::string> row{r.model};
    for (auto k : ks) row.push_back(fmt3(r.zero_shot.at(k)));
    for (auto k : ks) row.push_back(fmt3(r.fine_tuned.at(k)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace guing::eval

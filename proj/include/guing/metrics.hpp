#pragma once

// Retrieval and classification metrics: Recall@k, P@k, MRR, HITS@k,
// per-class/weighted precision-recall-F1 and single-box detection
// precision/recall at IoU thresholds. Plus plain-text table rendering.

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "guing/core.hpp"

namespace guing::eval {

struct RankedList {
  std::string query_id;
  std::vector<std::string> ids;  // best first

  void validate() const {
    std::unordered_set<std::string_view> seen;
    for (const auto& id : ids)
      if (!seen.insert(id).second) throw Error(Errc::DuplicateId, "id '" + id + "' repeated in ranking of " + query_id);
  }
};

struct JudgmentSet {
  std::string query_id;
  std::unordered_set<std::string> relevant;
};

using Relevance = std::vector<bool>;  // per rank, best first

// --- per-list primitives ----------------------------------------------------

inline std::size_t relevant_in_top(const Relevance& rel, std::size_t k) {
  return static_cast<std::size_t>(std::count(rel.begin(), rel.begin() + static_cast<std::ptrdiff_t>(std::min(k, rel.size())), true));
}

// Denominator is k even when fewer than k results were returned.
inline double precision_at_k(const Relevance& rel, std::size_t k) {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  return static_cast<double>(relevant_in_top(rel, k)) / static_cast<double>(k);
}

inline double hit_at_k(const Relevance& rel, std::size_t k) {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  return relevant_in_top(rel, k) >= 1 ? 1.0 : 0.0;
}

// 1/rank of the first relevant result; 0 when nothing relevant was retrieved.
inline double reciprocal_rank(const Relevance& rel) {
  for (std::size_t i = 0; i < rel.size(); ++i)
    if (rel[i]) return 1.0 / static_cast<double>(i + 1);
  return 0.0;
}

inline Relevance relevance_of(const RankedList& list, const JudgmentSet* judg) {
  Relevance rel(list.ids.size(), false);
  if (!judg) return rel;
  for (std::size_t i = 0; i < list.ids.size(); ++i) rel[i] = judg->relevant.contains(list.ids[i]);
  return rel;
}

// --- list-level metrics -----------------------------------------------------

inline double precision_at_k(const RankedList& list, const JudgmentSet& judg, std::size_t k) {
  list.validate();
  return precision_at_k(relevance_of(list, &judg), k);
}

using Judgments = std::unordered_map<std::string, JudgmentSet>;

namespace detail {
template <typename PerList>
double mean_over(const std::vector<RankedList>& lists, const Judgments& judgments, PerList&& per_list) {
  if (lists.empty()) return 0.0;
  double total = 0.0;
  for (const auto& l : lists) {
    l.validate();
    auto it = judgments.find(l.query_id);
    total += per_list(relevance_of(l, it == judgments.end() ? nullptr : &it->second));
  }
  return total / static_cast<double>(lists.size());
}
}  // namespace detail

// Queries without any relevant result contribute 0.
inline double mrr(const std::vector<RankedList>& lists, const Judgments& judgments) {
  return detail::mean_over(lists, judgments, [](const Relevance& r) { return reciprocal_rank(r); });
}

// Fraction of queries with at least one relevant result in the top k.
inline double hits_at_k(const std::vector<RankedList>& lists, const Judgments& judgments, std::size_t k) {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  return detail::mean_over(lists, judgments, [k](const Relevance& r) { return hit_at_k(r, k); });
}

inline double mean_precision_at_k(const std::vector<RankedList>& lists, const Judgments& judgments, std::size_t k) {
  if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
  return detail::mean_over(lists, judgments, [k](const Relevance& r) { return precision_at_k(r, k); });
}

// Fraction of queries whose single ground-truth id is within the first k.
inline std::map<std::size_t, double> recall_at_k(const std::vector<RankedList>& lists,
                                                 const std::unordered_map<std::string, std::string>& truth,
                                                 const std::vector<std::size_t>& ks) {
  std::map<std::size_t, double> out;
  for (auto k : ks) {
    if (k < 1) throw Error(Errc::InvalidArgument, "k must be >= 1");
    out[k] = 0.0;
  }
  if (lists.empty()) return out;
  for (const auto& l : lists) {
    l.validate();
    auto it = truth.find(l.query_id);
    if (it == truth.end()) throw Error(Errc::MissingTruth, "no ground truth for query " + l.query_id);
    const auto pos = std::find(l.ids.begin(), l.ids.end(), it->second);
    const auto rank = static_cast<std::size_t>(pos - l.ids.begin()) + 1;  // ids.size()+1 when absent
    for (auto k : ks)
      if (pos != l.ids.end() && rank <= k) out[k] += 1.0;
  }
  for (auto& [k, v] : out) v /= static_cast<double>(lists.size());
  return out;
}

// --- classification -----------------------------------------------------------

struct ClassMetrics {
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;    // gold instances
  std::size_t predicted = 0;  // predicted instances
  bool no_predictions = false;
};

struct ClassificationReport {
  std::vector<ClassMetrics> per_class;
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  double accuracy = 0;
};

inline double f1_score(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

// Weighted averages use gold-class support as weights. Classes nobody
// predicted get precision 0 and are flagged.
inline ClassificationReport classification_report(const std::vector<int>& preds, const std::vector<int>& golds,
                                                  int n_classes) {
  if (preds.size() != golds.size()) throw Error(Errc::InvalidArgument, "preds and golds differ in length");
  if (n_classes < 1) throw Error(Errc::InvalidArgument, "n_classes must be positive");
  const auto n = static_cast<std::size_t>(n_classes);
  std::vector<std::size_t> tp(n), pred_count(n), gold_count(n);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= n_classes || golds[i] < 0 || golds[i] >= n_classes)
      throw Error(Errc::InvalidArgument, "label outside [0, n_classes)");
    ++pred_count[static_cast<std::size_t>(preds[i])];
    ++gold_count[static_cast<std::size_t>(golds[i])];
    if (preds[i] == golds[i]) {
      ++tp[static_cast<std::size_t>(preds[i])];
      ++correct;
    }
  }
  ClassificationReport rep;
  rep.per_class.resize(n);
  const double total = static_cast<double>(golds.size());
  for (std::size_t c = 0; c < n; ++c) {
    auto& m = rep.per_class[c];
    m.support = gold_count[c];
    m.predicted = pred_count[c];
    m.no_predictions = pred_count[c] == 0;
    m.precision = pred_count[c] ? static_cast<double>(tp[c]) / static_cast<double>(pred_count[c]) : 0.0;
    m.recall = gold_count[c] ? static_cast<double>(tp[c]) / static_cast<double>(gold_count[c]) : 0.0;
    m.f1 = f1_score(m.precision, m.recall);
    if (total > 0) {
      const double w = static_cast<double>(m.support) / total;
      rep.weighted_precision += w * m.precision;
      rep.weighted_recall += w * m.recall;
      rep.weighted_f1 += w * m.f1;
    }
  }
  rep.accuracy = total > 0 ? static_cast<double>(correct) / total : 0.0;
  return rep;
}

// --- detection ------------------------------------------------------------------

struct PrecisionRecall {
  double precision = 0, recall = 0;
};

struct DetectionReport {
  std::map<double, PrecisionRecall> at;  // keyed by IoU threshold
  PrecisionRecall mean_50_95;            // mean over 0.50, 0.55, ..., 0.95
};

inline std::vector<double> coco_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 9; ++i) t.push_back((50 + 5 * i) / 100.0);
  return t;
}

// One predicted and one gold box per image. A prediction is a true positive
// at threshold t iff IoU >= t; otherwise it is a false positive and the gold
// box a false negative. Images without a prediction are false negatives.
inline DetectionReport detection_pr_at_iou(const std::map<std::string, BoundingBox>& preds,
                                           const std::map<std::string, BoundingBox>& golds,
                                           const std::vector<double>& thresholds) {
  std::vector<double> ious;
  for (const auto& [img, p] : preds) {
    auto g = golds.find(img);
    ious.push_back(g == golds.end() ? -1.0 : iou(p, g->second));
  }
  auto pr_at = [&](double t) {
    std::size_t tp = 0;
    for (double v : ious)
      if (v >= 0 && v >= t) ++tp;
    PrecisionRecall pr;
    pr.precision = preds.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(preds.size());
    pr.recall = golds.empty() ? 0.0 : static_cast<double>(tp) / static_cast<double>(golds.size());
    return pr;
  };
  DetectionReport rep;
  for (double t : thresholds) rep.at[t] = pr_at(t);
  const auto grid = coco_thresholds();
  for (double t : grid) {
    const auto pr = pr_at(t);
    rep.mean_50_95.precision += pr.precision / static_cast<double>(grid.size());
    rep.mean_50_95.recall += pr.recall / static_cast<double>(grid.size());
  }
  return rep;
}

// --- tables -----------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

// Left-aligned first column, right-aligned numeric columns.
inline std::string render_table(const Table& t) {
  std::vector<std::size_t> width(t.header.size(), 0);
  auto widen = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size() && i < width.size(); ++i) width[i] = std::max(width[i], row[i].size());
  };
  widen(t.header);
  for (const auto& r : t.rows) widen(r);
  std::ostringstream os;
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < width.size(); ++i) {
      const std::string cell = i < row.size() ? row[i] : "";
      const std::string pad(width[i] - cell.size(), ' ');
      if (i) os << "  ";
      os << (i == 0 ? cell + pad : pad + cell);
    }
    os << '\n';
  };
  line(t.header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  os << std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') << '\n';
  for (const auto& r : t.rows) line(r);
  return os.str();
}

}  // namespace guing::eval

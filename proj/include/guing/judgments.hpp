#pragma once

// Blind multi-engine comparison sessions and their relevance judgments.
//
// A session mixes the top-k results of several engines into one shuffled list
// of slots. Each slot remembers which engine produced it and at which rank;
// that provenance stays server-side until a submission arrives. Selected
// slots are projected back onto each engine's ranking to score it.
//
// Persistence is two append-only JSON Lines logs in a data directory:
//   sessions.jsonl     one line per created session (with provenance)
//   submissions.jsonl  one line per (session, evaluator) submission

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "guing/jsonl.hpp"
#include "guing/metrics.hpp"
#include "guing/rng.hpp"

namespace guing::eval {

inline const std::vector<std::size_t>& exp2_ks() {
  static const std::vector<std::size_t> ks{1, 3, 5, 10};
  return ks;
}

struct Slot {
  int slot_id = 0;
  std::string screenshot_id;
  std::string engine_id;
  std::size_t rank = 0;  // 1-based within the engine's list

  bool operator==(const Slot&) const = default;
};

struct Session {
  std::string session_id;
  std::string query;
  std::uint64_t shuffle_seed = 0;
  std::size_t k = 0;
  std::vector<std::string> engines;
  std::vector<Slot> slots;  // in display order
};

struct Submission {
  std::string session_id;
  std::string evaluator_id;
  std::vector<int> selected_slot_ids;
};

struct EngineResults {
  std::string engine_id;
  std::vector<std::string> screenshot_ids;  // ranked, best first
};

// Builds the shuffled slot list. Duplicates across engines stay as separate
// slots; slot ids are assigned after shuffling so they carry no provenance.
inline Session make_session(std::string session_id, std::string query, const std::vector<EngineResults>& results,
                            std::size_t k, std::uint64_t seed) {
  Session s;
  s.session_id = std::move(session_id);
  s.query = std::move(query);
  s.shuffle_seed = seed;
  s.k = k;
  for (const auto& r : results) {
    s.engines.push_back(r.engine_id);
    for (std::size_t i = 0; i < r.screenshot_ids.size() && i < k; ++i)
      s.slots.push_back({0, r.screenshot_ids[i], r.engine_id, i + 1});
  }
  SplitMix64 rng(seed);
  rng.shuffle(s.slots);
  for (std::size_t i = 0; i < s.slots.size(); ++i) s.slots[i].slot_id = static_cast<int>(i);
  return s;
}

struct EngineScore {
  double mrr = 0;
  std::map<std::size_t, double> precision;  // P@k
  std::map<std::size_t, double> hits;       // HIT@k
};

inline Relevance engine_relevance(const Session& s, const std::string& engine, const std::set<int>& selected) {
  Relevance rel(s.k, false);
  for (const auto& slot : s.slots)
    if (slot.engine_id == engine && slot.rank >= 1 && slot.rank <= s.k) rel[slot.rank - 1] = selected.contains(slot.slot_id);
  return rel;
}

inline EngineScore score_relevance(const Relevance& rel) {
  EngineScore e;
  e.mrr = reciprocal_rank(rel);
  for (auto k : exp2_ks()) {
    e.precision[k] = precision_at_k(rel, k);
    e.hits[k] = hit_at_k(rel, k);
  }
  return e;
}

inline std::map<std::string, EngineScore> per_engine_scores(const Session& s, const std::set<int>& selected) {
  std::map<std::string, EngineScore> out;
  for (const auto& e : s.engines) out[e] = score_relevance(engine_relevance(s, e, selected));
  return out;
}

struct EngineAggregate {
  std::string engine_id;
  std::size_t judgments = 0;  // (session, evaluator) pairs
  EngineScore mean;
};

inline json to_json(const EngineScore& e) {
  json j = {{"mrr", e.mrr}};
  for (const auto& [k, v] : e.precision) j["p@" + std::to_string(k)] = v;
  for (const auto& [k, v] : e.hits) j["hit@" + std::to_string(k)] = v;
  return j;
}

inline json to_json(const EngineAggregate& a) {
  json j = to_json(a.mean);
  j["engine"] = a.engine_id;
  j["judgments"] = a.judgments;
  return j;
}

inline json session_to_json(const Session& s) {
  json slots = json::array();
  for (const auto& sl : s.slots)
    slots.push_back({{"slot_id", sl.slot_id}, {"screenshot_id", sl.screenshot_id}, {"engine_id", sl.engine_id}, {"rank", sl.rank}});
  return {{"session_id", s.session_id}, {"query", s.query}, {"seed", s.shuffle_seed},
          {"k", s.k},                   {"engines", s.engines}, {"slots", slots}};
}

inline Session session_from_json(const json& j) {
  Session s;
  s.session_id = field<std::string>(j, "session_id");
  s.query = field<std::string>(j, "query");
  s.shuffle_seed = field<std::uint64_t>(j, "seed");
  s.k = field<std::size_t>(j, "k");
  s.engines = field<std::vector<std::string>>(j, "engines");
  for (const auto& sl : j.at("slots"))
    s.slots.push_back({field<int>(sl, "slot_id"), field<std::string>(sl, "screenshot_id"), field<std::string>(sl, "engine_id"),
                       field<std::size_t>(sl, "rank")});
  return s;
}

inline json submission_to_json(const Submission& s) {
  return {{"session_id", s.session_id}, {"evaluator_id", s.evaluator_id}, {"selected_slot_ids", s.selected_slot_ids}};
}

inline Submission submission_from_json(const json& j) {
  return {field<std::string>(j, "session_id"), field<std::string>(j, "evaluator_id"),
          field<std::vector<int>>(j, "selected_slot_ids")};
}

// In-memory view of the two logs.
class JudgmentStore {
 public:
  static constexpr const char* kSessionsFile = "sessions.jsonl";
  static constexpr const char* kSubmissionsFile = "submissions.jsonl";

  static JudgmentStore load(const std::filesystem::path& dir) {
    JudgmentStore st;
    if (auto p = dir / kSessionsFile; std::filesystem::exists(p))
      for (const auto& j : read_jsonl(p)) st.add_session(session_from_json(j));
    if (auto p = dir / kSubmissionsFile; std::filesystem::exists(p))
      for (const auto& j : read_jsonl(p)) st.add_submission(submission_from_json(j));
    return st;
  }

  void add_session(Session s) {
    const std::string id = s.session_id;
    if (!sessions_.emplace(id, std::move(s)).second) throw Error(Errc::DuplicateId, "session " + id);
  }

  const Session* find(const std::string& id) const {
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : &it->second;
  }

  bool submitted(const std::string& session_id, const std::string& evaluator) const {
    return submitted_.contains({session_id, evaluator});
  }

  // Checks the submission against its session; throws on any violation.
  void validate(const Submission& sub) const {
    const Session* s = find(sub.session_id);
    if (!s) throw Error(Errc::InvalidArgument, "unknown session " + sub.session_id);
    if (submitted(sub.session_id, sub.evaluator_id))
      throw Error(Errc::DuplicateId, "evaluator " + sub.evaluator_id + " already submitted session " + sub.session_id);
    for (int id : sub.selected_slot_ids)
      if (id < 0 || static_cast<std::size_t>(id) >= s->slots.size())
        throw Error(Errc::InvalidRecord, "unknown slot " + std::to_string(id));
  }

  void add_submission(Submission sub) {
    validate(sub);
    submitted_.emplace(sub.session_id, sub.evaluator_id);
    submissions_.push_back(std::move(sub));
  }

  const std::vector<Submission>& submissions() const noexcept { return submissions_; }
  std::size_t session_count() const noexcept { return sessions_.size(); }

  // Averages per-engine scores over every submitted (session, evaluator) pair
  // in which the engine took part. Engines are listed in first-seen order.
  std::vector<EngineAggregate> aggregate() const {
    std::vector<EngineAggregate> out;
    std::map<std::string, std::size_t> pos;
    for (const auto& sub : submissions_) {
      const Session& s = *find(sub.session_id);
      const std::set<int> selected(sub.selected_slot_ids.begin(), sub.selected_slot_ids.end());
      for (const auto& [engine, score] : per_engine_scores(s, selected)) {
        auto [it, fresh] = pos.emplace(engine, out.size());
        if (fresh) out.push_back({engine, 0, {}});
        auto& agg = out[it->second];
        ++agg.judgments;
        agg.mean.mrr += score.mrr;
        for (const auto& [k, v] : score.precision) agg.mean.precision[k] += v;
        for (const auto& [k, v] : score.hits) agg.mean.hits[k] += v;
      }
    }
    for (auto& a : out) {
      const double n = static_cast<double>(a.judgments);
      a.mean.mrr /= n;
      for (auto& [k, v] : a.mean.precision) v /= n;
      for (auto& [k, v] : a.mean.hits) v /= n;
    }
    return out;
  }

 private:
  std::map<std::string, Session> sessions_;
  std::vector<Submission> submissions_;
  std::set<std::pair<std::string, std::string>> submitted_;
};

// MRR | P@1 P@3 P@5 P@10 | HIT@1 HIT@3 HIT@5 HIT@10, one row per engine.
inline Table exp2_table(const std::vector<EngineAggregate>& rows) {
  Table t;
  t.header = {"Search Engine", "MRR"};
  for (auto k : exp2_ks()) t.header.push_back("P@" + std::to_string(k));
  for (auto k : exp2_ks()) t.header.push_back("HIT@" + std::to_string(k));
  for (const auto& a : rows) {
    std::vector<std::string> r{a.engine_id, fmt3(a.mean.mrr)};
    for (auto k : exp2_ks()) r.push_back(fmt3(a.mean.precision.at(k)));
    for (auto k : exp2_ks()) r.push_back(fmt3(a.mean.hits.at(k)));
    t.rows.push_back(std::move(r));
  }
  return t;
}

}  // namespace guing::eval

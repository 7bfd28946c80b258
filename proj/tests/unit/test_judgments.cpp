#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "guing/judgments.hpp"
#include "guing/jsonl.hpp"
#include "support/support.hpp"

using namespace guing;
using namespace guing::eval;
using testsupport::TempDir;

namespace {

std::vector<EngineResults> three_engines(std::size_t k) {
  std::vector<EngineResults> r;
  for (const char* e : {"guing", "rawi", "keyword"}) {
    EngineResults er{e, {}};
    for (std::size_t i = 0; i < k; ++i) er.screenshot_ids.push_back(std::string(e) + "-" + std::to_string(i));
    r.push_back(er);
  }
  if (k > 3) r[1].screenshot_ids[3] = r[0].screenshot_ids[0];  // shared screenshot
  return r;
}

std::vector<int> slots_of(const Session& s, const std::string& engine) {
  std::vector<int> out;
  for (const auto& sl : s.slots)
    if (sl.engine_id == engine) out.push_back(sl.slot_id);
  return out;
}

int slot_at(const Session& s, const std::string& engine, std::size_t rank) {
  for (const auto& sl : s.slots)
    if (sl.engine_id == engine && sl.rank == rank) return sl.slot_id;
  return -1;
}

}  // namespace

TEST(Session, ThirtySlotsWithDuplicatesKept) {
  const auto s = make_session("s1", "sleep tracking", three_engines(10), 10, 5);
  ASSERT_EQ(s.slots.size(), 30u);
  std::map<std::string, int> count;
  for (const auto& sl : s.slots) ++count[sl.screenshot_id];
  EXPECT_EQ(count["guing-0"], 2);
  for (std::size_t i = 0; i < s.slots.size(); ++i) EXPECT_EQ(s.slots[i].slot_id, static_cast<int>(i));
}

TEST(Session, ShuffleDeterministicPerSeed) {
  const auto a = make_session("a", "q", three_engines(10), 10, 99);
  const auto b = make_session("b", "q", three_engines(10), 10, 99);
  const auto c = make_session("c", "q", three_engines(10), 10, 100);
  EXPECT_EQ(a.slots, b.slots);
  EXPECT_NE(a.slots, c.slots);
}

TEST(Session, ShuffleHidesEngineBlocks) {
  // Over many seeds the first slot comes from every engine.
  std::set<std::string> first;
  for (std::uint64_t seed = 0; seed < 50; ++seed) first.insert(make_session("s", "q", three_engines(10), 10, seed).slots[0].engine_id);
  EXPECT_EQ(first.size(), 3u);
}

TEST(Session, ShortEngineListsAndTruncation) {
  auto r = three_engines(10);
  r[2].screenshot_ids.resize(4);
  const auto s = make_session("s", "q", r, 5, 1);
  EXPECT_EQ(s.slots.size(), 5u + 5u + 4u);
}

TEST(Session, JsonRoundTrip) {
  const auto s = make_session("s", "q", three_engines(3), 3, 8);
  const auto back = session_from_json(session_to_json(s));
  EXPECT_EQ(back.slots, s.slots);
  EXPECT_EQ(back.engines, s.engines);
  EXPECT_EQ(back.shuffle_seed, 8u);
}

TEST(Projection, SelectNoneAllZero) {
  const auto s = make_session("s", "q", three_engines(10), 10, 3);
  for (const auto& [engine, score] : per_engine_scores(s, {})) {
    EXPECT_EQ(score.mrr, 0.0) << engine;
    for (const auto& [k, v] : score.precision) EXPECT_EQ(v, 0.0);
    for (const auto& [k, v] : score.hits) EXPECT_EQ(v, 0.0);
  }
}

TEST(Projection, SelectOneEngineOnly) {
  const auto s = make_session("s", "q", three_engines(10), 10, 3);
  const auto sel = slots_of(s, "keyword");
  const auto scores = per_engine_scores(s, {sel.begin(), sel.end()});
  EXPECT_EQ(scores.at("keyword").precision.at(10), 1.0);
  EXPECT_EQ(scores.at("keyword").mrr, 1.0);
  EXPECT_EQ(scores.at("guing").precision.at(10), 0.0);
}

TEST(Projection, SharedScreenshotSelectedThroughOneSlotOnly) {
  // Relevance is per slot: picking the guing copy does not credit rawi.
  const auto s = make_session("s", "q", three_engines(10), 10, 3);
  const auto scores = per_engine_scores(s, {slot_at(s, "guing", 1)});
  EXPECT_EQ(scores.at("guing").mrr, 1.0);
  EXPECT_EQ(scores.at("rawi").mrr, 0.0);
}

TEST(Projection, HandComputedRanks) {
  const auto s = make_session("s", "q", three_engines(10), 10, 3);
  const auto scores = per_engine_scores(s, {slot_at(s, "guing", 2), slot_at(s, "guing", 5), slot_at(s, "guing", 6)});
  const auto& g = scores.at("guing");
  EXPECT_DOUBLE_EQ(g.mrr, 0.5);
  EXPECT_DOUBLE_EQ(g.precision.at(1), 0.0);
  EXPECT_DOUBLE_EQ(g.precision.at(3), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(g.precision.at(5), 2.0 / 5.0);
  EXPECT_DOUBLE_EQ(g.precision.at(10), 3.0 / 10.0);
  EXPECT_EQ(g.hits.at(1), 0.0);
  EXPECT_EQ(g.hits.at(3), 1.0);
}

TEST(Store, RejectsDoubleSubmitAndUnknownSlots) {
  JudgmentStore st;
  st.add_session(make_session("s", "q", three_engines(10), 10, 1));
  EXPECT_THROW(st.add_session(make_session("s", "q", three_engines(10), 10, 1)), Error);
  st.add_submission({"s", "alice", {0, 1}});
  st.add_submission({"s", "bob", {}});
  try {
    st.add_submission({"s", "alice", {2}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::DuplicateId);
  }
  EXPECT_THROW(st.add_submission({"s", "carol", {30}}), Error);
  EXPECT_THROW(st.add_submission({"missing", "carol", {}}), Error);
  EXPECT_EQ(st.submissions().size(), 2u);
}

TEST(Store, AggregateAveragesOverSessionEvaluatorPairs) {
  JudgmentStore st;
  const auto s1 = make_session("s1", "q1", three_engines(10), 10, 1);
  const auto s2 = make_session("s2", "q2", three_engines(10), 10, 2);
  st.add_session(s1);
  st.add_session(s2);
  st.add_submission({"s1", "alice", {slot_at(s1, "guing", 1)}});   // guing RR 1
  st.add_submission({"s1", "bob", {slot_at(s1, "guing", 2)}});     // guing RR 1/2
  st.add_submission({"s2", "alice", {slot_at(s2, "guing", 4)}});   // guing RR 1/4
  const auto agg = st.aggregate();
  ASSERT_EQ(agg.size(), 3u);
  const auto g = std::find_if(agg.begin(), agg.end(), [](const auto& a) { return a.engine_id == "guing"; });
  ASSERT_NE(g, agg.end());
  EXPECT_EQ(g->judgments, 3u);
  EXPECT_NEAR(g->mean.mrr, (1 + 0.5 + 0.25) / 3, 1e-12);
  EXPECT_NEAR(g->mean.hits.at(3), 2.0 / 3.0, 1e-12);
}

TEST(Store, LoadReplaysLogs) {
  TempDir dir("judg");
  const auto s = make_session("s", "q", three_engines(10), 10, 1);
  append_jsonl(dir / JudgmentStore::kSessionsFile, session_to_json(s));
  append_jsonl(dir / JudgmentStore::kSubmissionsFile, submission_to_json({"s", "alice", {0, 5}}));
  const auto st = JudgmentStore::load(dir.path());
  EXPECT_EQ(st.session_count(), 1u);
  ASSERT_EQ(st.submissions().size(), 1u);
  EXPECT_TRUE(st.submitted("s", "alice"));
  EXPECT_EQ(render_table(exp2_table(st.aggregate())), render_table(exp2_table(st.aggregate())));
}

TEST(Exp2Table, Layout) {
  JudgmentStore st;
  const auto s = make_session("s", "q", three_engines(10), 10, 1);
  st.add_session(s);
  st.add_submission({"s", "alice", {slot_at(s, "rawi", 1)}});
  const auto t = exp2_table(st.aggregate());
  EXPECT_EQ(t.header, (std::vector<std::string>{"Search Engine", "MRR", "P@1", "P@3", "P@5", "P@10", "HIT@1", "HIT@3",
                                                "HIT@5", "HIT@10"}));
  ASSERT_EQ(t.rows.size(), 3u);
  const auto row = std::find_if(t.rows.begin(), t.rows.end(), [](const auto& r) { return r[0] == "rawi"; });
  ASSERT_NE(row, t.rows.end());
  EXPECT_EQ((*row)[1], "1.000");
  EXPECT_EQ((*row)[9], "1.000");
}

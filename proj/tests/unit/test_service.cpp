#include <gtest/gtest.h>

#include <functional>
#include <thread>

#include "guing/service.hpp"
#include "guing/synthetic.hpp"
#include "support/support.hpp"

using namespace guing;
using namespace guing::service;
using testsupport::TempDir;

namespace {

constexpr std::size_t kDim = 32;

std::vector<std::pair<std::string, std::string>> demo_captions() {
  std::vector<std::pair<std::string, std::string>> c;
  for (int i = 0; i < 40; ++i)
    c.emplace_back(synthetic::padded_id("s", static_cast<std::size_t>(i)),
                   (i % 2 ? "Track sleep and alarms " : "Log blood pressure ") + std::to_string(i));
  return c;
}

std::shared_ptr<const IvfIndex> demo_index() {
  std::vector<LabeledEmbedding> items;
  for (const auto& [id, caption] : demo_captions()) items.push_back({id, stub_encode(caption, kDim, 0, Modality::image)});
  return std::make_shared<const IvfIndex>(train_ivf(build_exact(items), {4, 10, 1, 0, 1}));
}

int dead_port() {
  httplib::Server probe;
  return probe.bind_to_any_port("127.0.0.1");
}

struct Fixture {
  TempDir dir{"svc"};
  std::unique_ptr<ServiceCore> core;

  Fixture() { reopen(); }

  void reopen() {
    core = std::make_unique<ServiceCore>(ServiceConfig{dir / "data", dir / "images", 100});
    const auto index = demo_index();
    core->add_engine("guing", std::make_shared<EmbeddingEngine>(index, std::make_shared<StubEncoder>(kDim, 0)));
    core->add_engine("guing-ivf", std::make_shared<EmbeddingEngine>(index, std::make_shared<StubEncoder>(kDim, 0), 2));
    core->add_engine("keyword", std::make_shared<KeywordEngine>(demo_captions()));
    core->add_engine("offline", std::make_shared<EmbeddingEngine>(
                                    index, std::make_shared<HttpEncoderClient>(
                                               "http://127.0.0.1:" + std::to_string(dead_port()), kDim, 1)));
  }

  json compare3(std::uint64_t seed) {
    const auto r = core->compare({{"query", "sleep tracking"}, {"engines", {"guing", "guing-ivf", "keyword"}}, {"k", 10}, {"seed", seed}});
    EXPECT_EQ(r.status, 200) << r.body.dump();
    return r.body;
  }
};

// Walks every key and string value of a payload.
void scan(const json& j, const std::function<void(const std::string&)>& visit) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      visit(k);
      scan(v, visit);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) scan(v, visit);
  } else if (j.is_string()) {
    visit(j.get<std::string>());
  }
}

}  // namespace

TEST(Search, ReturnsTenOrderedResults) {
  Fixture f;
  const auto r = f.core->search({{"query", "sleep tracking"}, {"engine", "guing"}, {"k", 10}});
  ASSERT_EQ(r.status, 200);
  const auto& res = r.body.at("results");
  ASSERT_EQ(res.size(), 10u);
  for (std::size_t i = 1; i < res.size(); ++i) EXPECT_GE(res[i - 1]["score"].get<double>(), res[i]["score"].get<double>());
  EXPECT_EQ(res[0]["image_url"], "/images/" + res[0]["id"].get<std::string>());
}

TEST(Search, Errors) {
  Fixture f;
  EXPECT_EQ(f.core->search({{"query", "x"}, {"engine", "guing"}, {"k", 0}}).status, 422);
  EXPECT_EQ(f.core->search({{"query", "x"}, {"engine", "guing"}, {"k", 101}}).status, 422);
  EXPECT_EQ(f.core->search({{"query", "  "}, {"engine", "guing"}, {"k", 5}}).status, 422);
  EXPECT_EQ(f.core->search({{"query", "x"}, {"engine", "nope"}, {"k", 5}}).status, 404);
  EXPECT_EQ(f.core->search({{"query", "x"}, {"engine", "offline"}, {"k", 5}}).status, 503);
}

TEST(Compare, ThirtySlotsAndBlind) {
  Fixture f;
  const auto body = f.compare3(7);
  ASSERT_EQ(body.at("slots").size(), 30u);
  // Same screenshot from the exact and IVF engines shows up in several slots.
  std::map<std::string, int> count;
  for (const auto& s : body["slots"]) ++count[s["image_url"].get<std::string>()];
  EXPECT_TRUE(std::any_of(count.begin(), count.end(), [](const auto& kv) { return kv.second >= 2; }));
  scan(body, [](const std::string& s) {
    EXPECT_EQ(s.find("guing"), std::string::npos) << s;
    EXPECT_EQ(s.find("keyword"), std::string::npos) << s;
    EXPECT_NE(s, "engine_id");
    EXPECT_NE(s, "rank");
  });
}

TEST(Compare, SeededShuffleIsReproducible) {
  Fixture f;
  auto urls = [](const json& b) {
    std::vector<std::string> u;
    for (const auto& s : b["slots"]) u.push_back(s["image_url"]);
    return u;
  };
  const auto a = f.compare3(11), b = f.compare3(11);
  EXPECT_EQ(urls(a), urls(b));
  EXPECT_NE(a["session_id"], b["session_id"]);
  EXPECT_EQ(a["session_id"].get<std::string>().size(), 22u);
}

TEST(Compare, Errors) {
  Fixture f;
  EXPECT_EQ(f.core->compare({{"query", "q"}, {"engines", {"guing"}}, {"k", 10}}).status, 422);
  EXPECT_EQ(f.core->compare({{"query", "q"}, {"engines", {"guing", "guing"}}, {"k", 10}}).status, 422);
  EXPECT_EQ(f.core->compare({{"query", "q"}, {"engines", {"guing", "nope"}}, {"k", 10}}).status, 404);
  EXPECT_EQ(f.core->compare({{"query", "q"}, {"engines", {"guing", "offline"}}, {"k", 10}}).status, 503);
}

TEST(Submit, ProjectsSelectionsAndRejectsResubmission) {
  Fixture f;
  const auto body = f.compare3(3);
  const std::string sid = body["session_id"];
  const auto none = f.core->submit(sid, {{"evaluator_id", "alice"}, {"selected_slot_ids", json::array()}});
  ASSERT_EQ(none.status, 200);
  for (const auto& [engine, m] : none.body["per_engine_metrics"].items()) EXPECT_EQ(m["mrr"], 0.0) << engine;

  // Provenance is revealed after submission; select every keyword slot.
  std::vector<int> kw;
  for (const auto& p : none.body["provenance"])
    if (p["engine_id"] == "keyword") kw.push_back(p["slot_id"]);
  const auto r = f.core->submit(sid, {{"evaluator_id", "bob"}, {"selected_slot_ids", kw}});
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body["per_engine_metrics"]["keyword"]["p@10"], 1.0);

  EXPECT_EQ(f.core->submit(sid, {{"evaluator_id", "bob"}, {"selected_slot_ids", json::array()}}).status, 409);
  EXPECT_EQ(f.core->submit(sid, {{"evaluator_id", "carol"}, {"selected_slot_ids", {30}}}).status, 422);
  EXPECT_EQ(f.core->submit("nope", {{"evaluator_id", "carol"}, {"selected_slot_ids", json::array()}}).status, 404);
  EXPECT_EQ(f.core->submit(sid, {{"selected_slot_ids", json::array()}}).status, 422);
}

TEST(Metrics, EmptyStoreIs404ThenFirstSlotGivesMrrOne) {
  Fixture f;
  EXPECT_EQ(f.core->metrics(std::nullopt, false).status, 404);
  const auto body = f.compare3(5);
  const auto reveal = f.core->submit(body["session_id"], {{"evaluator_id", "probe"}, {"selected_slot_ids", json::array()}});
  int first_guing = -1;
  for (const auto& p : reveal.body["provenance"])
    if (p["engine_id"] == "guing" && p["rank"] == 1) first_guing = p["slot_id"];
  const auto body2 = f.compare3(5);  // same seed, same layout
  f.core->submit(body2["session_id"], {{"evaluator_id", "alice"}, {"selected_slot_ids", {first_guing}}});
  const auto m = f.core->metrics("guing", false);
  ASSERT_EQ(m.status, 200);
  ASSERT_EQ(m.body["engines"].size(), 1u);
  EXPECT_DOUBLE_EQ(m.body["engines"][0]["mrr"].get<double>(), 0.5);  // averaged with the empty submission
  EXPECT_EQ(f.core->metrics("nope", false).status, 404);
  EXPECT_NE(f.core->metrics(std::nullopt, true).text.find("HIT@10"), std::string::npos);
}

TEST(Metrics, RestartReproducesIdenticalOutput) {
  Fixture f;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto body = f.compare3(seed);
    f.core->submit(body["session_id"], {{"evaluator_id", "alice"}, {"selected_slot_ids", {0, 4, 9}}});
    f.core->submit(body["session_id"], {{"evaluator_id", "bob"}, {"selected_slot_ids", {1}}});
  }
  const auto before = f.core->metrics(std::nullopt, false).body.dump();
  f.reopen();
  EXPECT_EQ(f.core->metrics(std::nullopt, false).body.dump(), before);
}

TEST(Images, ResolvesUnderRootOnly) {
  Fixture f;
  std::filesystem::create_directories(f.dir / "images");
  testsupport::spit(f.dir / "images" / "s000001.png", "png");
  EXPECT_TRUE(f.core->image_path("s000001").has_value());
  EXPECT_FALSE(f.core->image_path("..").has_value());
  EXPECT_FALSE(f.core->image_path("a/b").has_value());
}

TEST(Registry, LoadsBothEngineKinds) {
  TempDir dir("reg");
  save_index(*demo_index(), dir / "repo.idx");
  std::string caps;
  for (const auto& [id, c] : demo_captions()) caps += json{{"id", id}, {"caption", c}}.dump() + "\n";
  testsupport::spit(dir / "caps.jsonl", caps);
  testsupport::spit(dir / "engines.json", R"({"engines": [
    {"id": "guing", "type": "embedding", "index": "repo.idx", "encoder": "stub"},
    {"id": "keyword", "type": "keyword", "captions": "caps.jsonl"}]})");
  const auto reg = load_registry(dir / "engines.json");
  ASSERT_EQ(reg.size(), 2u);
  EXPECT_EQ(reg[0].second->search("sleep", 5).size(), 5u);
  testsupport::spit(dir / "bad.json", R"({"engines": [{"id": "x", "type": "magic"}]})");
  EXPECT_THROW(load_registry(dir / "bad.json"), Error);
}

TEST(KeywordEngineTest, ScoresByTokenOverlap) {
  KeywordEngine e({{"a", "Sleep tracker"}, {"b", "Track your sleep"}, {"c", "Blood pressure"}});
  const auto hits = e.search("track sleep", 10);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].id, "b");
  EXPECT_DOUBLE_EQ(hits[0].score, 1.0);
  EXPECT_DOUBLE_EQ(hits[1].score, 0.5);
}

TEST(Http, EndToEndOnEphemeralPort) {
  Fixture f;
  httplib::Server srv;
  mount(srv, *f.core);
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto s = cli.Post("/search", json{{"query", "sleep tracking"}, {"engine", "guing"}, {"k", 10}}.dump(), "application/json");
  ASSERT_TRUE(s);
  EXPECT_EQ(s->status, 200);
  EXPECT_EQ(json::parse(s->body)["results"].size(), 10u);
  EXPECT_EQ(cli.Post("/search", "{oops", "application/json")->status, 400);

  auto c = cli.Post("/compare", json{{"query", "sleep tracking"}, {"engines", {"guing", "guing-ivf", "keyword"}}, {"k", 10}}.dump(),
                    "application/json");
  ASSERT_EQ(c->status, 200);
  EXPECT_EQ(c->body.find("engine"), std::string::npos);
  const auto sid = json::parse(c->body)["session_id"].get<std::string>();
  auto sub = cli.Post("/sessions/" + sid + "/submit", json{{"evaluator_id", "e1"}, {"selected_slot_ids", {0, 1, 2}}}.dump(),
                      "application/json");
  EXPECT_EQ(sub->status, 200);
  auto again = cli.Post("/sessions/" + sid + "/submit", json{{"evaluator_id", "e1"}, {"selected_slot_ids", {0}}}.dump(),
                        "application/json");
  EXPECT_EQ(again->status, 409);
  auto m = cli.Get("/metrics?format=table");
  EXPECT_EQ(m->status, 200);
  EXPECT_NE(m->body.find("MRR"), std::string::npos);
  EXPECT_EQ(cli.Get("/images/none")->status, 404);
  EXPECT_EQ(cli.Get("/engines")->status, 200);

  srv.stop();
  th.join();
}

#pragma once

// HTTP facade over the indexes and the judgment store.
//
//   GET  /engines                 registered engine ids
//   POST /search                  {query, engine, k}
//   POST /compare                 {query, engines, k, seed?}  -> blind slots
//   POST /sessions/{id}/submit    {selected_slot_ids, evaluator_id}
//   GET  /metrics[?engine=E][&format=table]
//   GET  /images/{id}             static file from the image root
//
// ServiceCore holds all behavior and is callable without a socket; the
// httplib server below only translates requests and responses.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <openssl/rand.h>

#include "guing/embedding_io.hpp"
#include "guing/encoder.hpp"
#include "guing/http_encoder.hpp"
#include "guing/index.hpp"
#include "guing/jsonl.hpp"
#include "guing/judgments.hpp"

namespace guing::service {

// --- engines ------------------------------------------------------------------

class Engine {
 public:
  virtual ~Engine() = default;
  virtual std::vector<Hit> search(const std::string& query, std::size_t k) const = 0;
};

// Text query -> encoder -> index. The index is immutable once published;
// swap_index replaces it for later searches while in-flight ones keep theirs.
class EmbeddingEngine final : public Engine {
 public:
  // nprobe 0 means exhaustive search.
  EmbeddingEngine(std::shared_ptr<const IvfIndex> index, std::shared_ptr<EncoderClient> encoder, std::size_t nprobe = 0)
      : index_(std::move(index)), encoder_(std::move(encoder)), nprobe_(nprobe) {}

  std::vector<Hit> search(const std::string& query, std::size_t k) const override {
    const auto index = current();
    EmbeddingVector q;
    {
      // Encoder clients are not required to be thread-safe.
      std::lock_guard lock(encoder_mu_);
      q = encoder_->encode_text(query);
    }
    if (nprobe_ == 0 || !index->has_cells()) return search_exact(index->base(), q, k).hits;
    return search_ivf(*index, q, k, std::min(nprobe_, index->centroids().n_cells)).hits;
  }

  void swap_index(std::shared_ptr<const IvfIndex> next) {
    std::lock_guard lock(index_mu_);
    index_ = std::move(next);
  }

  std::shared_ptr<const IvfIndex> current() const {
    std::lock_guard lock(index_mu_);
    return index_;
  }

 private:
  mutable std::mutex index_mu_;
  std::shared_ptr<const IvfIndex> index_;
  mutable std::mutex encoder_mu_;
  std::shared_ptr<EncoderClient> encoder_;
  std::size_t nprobe_;
};

inline std::vector<std::string> keyword_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// Contrast engine: fraction of distinct query tokens present in a caption.
// Captions sharing no token with the query are not returned.
class KeywordEngine final : public Engine {
 public:
  explicit KeywordEngine(const std::vector<std::pair<std::string, std::string>>& captions) {
    for (const auto& [id, caption] : captions) {
      const auto toks = keyword_tokens(caption);
      docs_.push_back({id, std::set<std::string>(toks.begin(), toks.end())});
    }
  }

  std::vector<Hit> search(const std::string& query, std::size_t k) const override {
    const auto qt = keyword_tokens(query);
    const std::set<std::string> terms(qt.begin(), qt.end());
    std::vector<Hit> hits;
    if (terms.empty()) return hits;
    for (const auto& d : docs_) {
      std::size_t matched = 0;
      for (const auto& t : terms) matched += d.tokens.contains(t);
      if (matched) hits.push_back({d.id, static_cast<double>(matched) / static_cast<double>(terms.size())});
    }
    const auto n = std::min(k, hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), [](const Hit& a, const Hit& b) {
      return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    hits.resize(n);
    return hits;
  }

 private:
  struct Doc {
    std::string id;
    std::set<std::string> tokens;
  };
  std::vector<Doc> docs_;
};

// Reads caption records ({"entry_id" or "id", "caption"}) from JSON Lines.
inline std::vector<std::pair<std::string, std::string>> load_captions(const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& j : read_jsonl(path))
    out.emplace_back(j.contains("entry_id") ? field<std::string>(j, "entry_id") : field<std::string>(j, "id"),
                     field<std::string>(j, "caption"));
  return out;
}

// Engine registry file:
//   {"engines": [
//     {"id": "guing", "type": "embedding", "index": "repo.idx",
//      "encoder": "stub" | "http://host:port", "dim": 64, "seed": 0, "nprobe": 0},
//     {"id": "keyword", "type": "keyword", "captions": "scap_repo.jsonl"}]}
// Relative paths resolve against the registry file's directory. For stub
// encoders `dim` defaults to the index dim.
inline std::vector<std::pair<std::string, std::shared_ptr<Engine>>> load_registry(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open engine registry " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, path.string() + ": " + e.what());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp = p;
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<std::pair<std::string, std::shared_ptr<Engine>>> out;
  std::set<std::string> seen;
  for (const auto& e : doc.at("engines")) {
    const auto id = field<std::string>(e, "id");
    if (!seen.insert(id).second) throw Error(Errc::DuplicateId, "engine '" + id + "' registered twice");
    const auto type = field<std::string>(e, "type");
    if (type == "keyword") {
      out.emplace_back(id, std::make_shared<KeywordEngine>(load_captions(resolve(field<std::string>(e, "captions")))));
    } else if (type == "embedding") {
      auto index = std::make_shared<const IvfIndex>(load_index(resolve(field<std::string>(e, "index"))));
      const auto enc = e.value("encoder", std::string("stub"));
      const auto dim = e.value("dim", index->base().dim());
      std::shared_ptr<EncoderClient> client;
      if (enc == "stub")
        client = std::make_shared<StubEncoder>(dim, e.value("seed", std::uint64_t{0}));
      else
        client = std::make_shared<HttpEncoderClient>(enc, dim);
      out.emplace_back(id, std::make_shared<EmbeddingEngine>(std::move(index), std::move(client),
                                                             e.value("nprobe", std::size_t{0})));
    } else {
      throw Error(Errc::ParseError, "engine '" + id + "': unknown type '" + type + "'");
    }
  }
  return out;
}

// --- core ------------------------------------------------------------------------

struct Response {
  int status = 200;
  json body;
  std::string text;  // non-empty: plain-text body instead of JSON
};

inline Response error_response(int status, const std::string& msg) { return {status, {{"error", msg}}, {}}; }

// 128 random bits, base64url without padding (22 characters).
inline std::string random_token() {
  unsigned char bytes[16];
  if (RAND_bytes(bytes, sizeof bytes) != 1) throw Error(Errc::IoError, "no randomness available");
  static constexpr char alphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";
  std::string out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (unsigned char b : bytes) {
    acc = (acc << 8) | b;
    bits += 8;
    while (bits >= 6) {
      bits -= 6;
      out.push_back(alphabet[(acc >> bits) & 63]);
    }
  }
  if (bits) out.push_back(alphabet[(acc << (6 - bits)) & 63]);
  return out;
}

inline std::uint64_t random_seed() {
  std::uint64_t s = 0;
  if (RAND_bytes(reinterpret_cast<unsigned char*>(&s), sizeof s) != 1) throw Error(Errc::IoError, "no randomness available");
  return s;
}

struct ServiceConfig {
  std::filesystem::path data_dir;    // judgment logs
  std::filesystem::path image_root;  // screenshot files, named by id
  std::size_t max_k = 100;
};

class ServiceCore {
 public:
  explicit ServiceCore(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    std::filesystem::create_directories(cfg_.data_dir);
    store_ = eval::JudgmentStore::load(cfg_.data_dir);
  }

  void add_engine(const std::string& id, std::shared_ptr<Engine> engine) {
    if (!engines_.emplace(id, std::move(engine)).second) throw Error(Errc::DuplicateId, "engine '" + id + "' registered twice");
    order_.push_back(id);
  }

  Response engines() const { return {200, {{"engines", order_}}, {}}; }

  Response search(const json& body) const {
    std::string query, engine;
    std::size_t k = 0;
    if (auto bad = parse_query_k(body, query, k)) return *bad;
    if (!body.contains("engine") || !body["engine"].is_string()) return error_response(422, "engine must be a string");
    engine = body["engine"].get<std::string>();
    auto it = engines_.find(engine);
    if (it == engines_.end()) return error_response(404, "unknown engine '" + engine + "'");
    std::vector<Hit> hits;
    if (auto bad = run_engine(*it->second, query, k, hits)) return *bad;
    json results = json::array();
    for (const auto& h : hits) results.push_back({{"id", h.id}, {"score", h.score}, {"image_url", image_url(h.id)}});
    return {200, {{"query", query}, {"engine", engine}, {"k", k}, {"results", results}}, {}};
  }

  Response compare(const json& body) {
    std::string query;
    std::size_t k = 0;
    if (auto bad = parse_query_k(body, query, k)) return *bad;
    if (!body.contains("engines") || !body["engines"].is_array()) return error_response(422, "engines must be a list");
    std::vector<std::string> ids;
    for (const auto& e : body["engines"]) {
      if (!e.is_string()) return error_response(422, "engine ids must be strings");
      ids.push_back(e.get<std::string>());
    }
    if (ids.size() < 2) return error_response(422, "comparison needs at least 2 engines");
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
      return error_response(422, "engines must be distinct");
    std::uint64_t seed = 0;
    if (body.contains("seed")) {
      if (!body["seed"].is_number_unsigned()) return error_response(422, "seed must be a non-negative integer");
      seed = body["seed"].get<std::uint64_t>();
    } else {
      seed = random_seed();
    }
    std::vector<eval::EngineResults> results;
    for (const auto& id : ids) {
      auto it = engines_.find(id);
      if (it == engines_.end()) return error_response(404, "unknown engine '" + id + "'");
      std::vector<Hit> hits;
      if (auto bad = run_engine(*it->second, query, k, hits)) return *bad;
      eval::EngineResults r{id, {}};
      for (const auto& h : hits) r.screenshot_ids.push_back(h.id);
      results.push_back(std::move(r));
    }
    auto session = eval::make_session(random_token(), query, results, k, seed);
    {
      std::unique_lock lock(mu_);
      append_jsonl(cfg_.data_dir / eval::JudgmentStore::kSessionsFile, eval::session_to_json(session));
      store_.add_session(session);
    }
    return {200, blind_view(session), {}};
  }

  Response submit(const std::string& session_id, const json& body) {
    if (!body.contains("evaluator_id") || !body["evaluator_id"].is_string() || body["evaluator_id"].get<std::string>().empty())
      return error_response(422, "evaluator_id must be a non-empty string");
    if (!body.contains("selected_slot_ids") || !body["selected_slot_ids"].is_array())
      return error_response(422, "selected_slot_ids must be a list");
    std::set<int> selected;
    for (const auto& s : body["selected_slot_ids"]) {
      if (!s.is_number_integer()) return error_response(422, "slot ids must be integers");
      selected.insert(s.get<int>());
    }
    eval::Submission sub{session_id, body["evaluator_id"].get<std::string>(), {selected.begin(), selected.end()}};

    std::unique_lock lock(mu_);
    const eval::Session* session = store_.find(session_id);
    if (!session) return error_response(404, "unknown session");
    try {
      store_.validate(sub);
    } catch (const Error& e) {
      return error_response(e.code() == Errc::DuplicateId ? 409 : 422, e.what());
    }
    append_jsonl(cfg_.data_dir / eval::JudgmentStore::kSubmissionsFile, eval::submission_to_json(sub));
    store_.add_submission(sub);

    json per_engine = json::object();
    for (const auto& [engine, score] : eval::per_engine_scores(*session, selected)) per_engine[engine] = eval::to_json(score);
    json provenance = json::array();
    for (const auto& sl : session->slots)
      provenance.push_back({{"slot_id", sl.slot_id}, {"screenshot_id", sl.screenshot_id}, {"engine_id", sl.engine_id}, {"rank", sl.rank}});
    return {200, {{"ack", true}, {"session_id", session_id}, {"per_engine_metrics", per_engine}, {"provenance", provenance}}, {}};
  }

  Response metrics(const std::optional<std::string>& engine, bool as_table) const {
    std::vector<eval::EngineAggregate> rows;
    {
      std::shared_lock lock(mu_);
      rows = store_.aggregate();
    }
    if (engine) std::erase_if(rows, [&](const eval::EngineAggregate& a) { return a.engine_id != *engine; });
    if (rows.empty()) return error_response(404, engine ? "no judgments for engine '" + *engine + "'" : "no judgments yet");
    const auto table = eval::render_table(eval::exp2_table(rows));
    if (as_table) return {200, {}, table};
    json out = json::array();
    for (const auto& r : rows) out.push_back(eval::to_json(r));
    return {200, {{"engines", out}, {"table", table}}, {}};
  }

  // Resolves /images/{id} to a file under the image root, trying the bare
  // id and then common image extensions.
  std::optional<std::filesystem::path> image_path(const std::string& id) const {
    if (id.empty() || id.find('/') != std::string::npos || id.find('\\') != std::string::npos || id == "." || id == "..")
      return std::nullopt;
    for (const char* ext : {"", ".png", ".jpg", ".jpeg", ".webp"}) {
      auto p = cfg_.image_root / (id + ext);
      if (std::filesystem::is_regular_file(p)) return p;
    }
    return std::nullopt;
  }

  static std::string image_url(const std::string& id) { return "/images/" + id; }

  const ServiceConfig& config() const { return cfg_; }

 private:
  std::optional<Response> parse_query_k(const json& body, std::string& query, std::size_t& k) const {
    if (!body.is_object()) return error_response(422, "body must be a JSON object");
    if (!body.contains("query") || !body["query"].is_string()) return error_response(422, "query must be a string");
    query = body["query"].get<std::string>();
    if (std::all_of(query.begin(), query.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }))
      return error_response(422, "query is empty");
    if (!body.contains("k") || !body["k"].is_number_integer()) return error_response(422, "k must be an integer");
    const auto kk = body["k"].get<long long>();
    if (kk < 1 || kk > static_cast<long long>(cfg_.max_k))
      return error_response(422, "k must be in [1, " + std::to_string(cfg_.max_k) + "]");
    k = static_cast<std::size_t>(kk);
    return std::nullopt;
  }

  static std::optional<Response> run_engine(const Engine& engine, const std::string& query, std::size_t k,
                                            std::vector<Hit>& hits) {
    try {
      hits = engine.search(query, k);
    } catch (const Error& e) {
      if (e.code() == Errc::EncoderUnavailable) return error_response(503, e.what());
      if (e.code() == Errc::DimensionMismatch) return error_response(500, e.what());
      throw;
    }
    return std::nullopt;
  }

  // What the client may see before submitting: no engine ids, no ranks.
  static json blind_view(const eval::Session& s) {
    json slots = json::array();
    for (const auto& sl : s.slots) slots.push_back({{"slot_id", sl.slot_id}, {"image_url", image_url(sl.screenshot_id)}});
    return {{"session_id", s.session_id}, {"query", s.query}, {"slots", slots}};
  }

  ServiceConfig cfg_;
  std::unordered_map<std::string, std::shared_ptr<Engine>> engines_;
  std::vector<std::string> order_;
  mutable std::shared_mutex mu_;  // guards store_ and the log files
  eval::JudgmentStore store_;
};

// --- HTTP -------------------------------------------------------------------------

inline void reply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  if (!r.text.empty())
    res.set_content(r.text, "text/plain; charset=utf-8");
  else
    res.set_content(r.body.dump(), "application/json");
}

inline std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
  try {
    return json::parse(req.body);
  } catch (const json::exception&) {
    reply(res, error_response(400, "malformed JSON body"));
    return std::nullopt;
  }
}

// Routes every endpoint onto `core`. The caller owns both objects and keeps
// `core` alive while the server runs.
inline void mount(httplib::Server& srv, ServiceCore& core) {
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Get("/engines", [&core](const httplib::Request&, httplib::Response& res) { reply(res, core.engines()); });
  srv.Post("/search", [&core](const httplib::Request& req, httplib::Response& res) {
    if (auto body = parse_body(req, res)) reply(res, core.search(*body));
  });
  srv.Post("/compare", [&core](const httplib::Request& req, httplib::Response& res) {
    if (auto body = parse_body(req, res)) reply(res, core.compare(*body));
  });
  srv.Post(R"(/sessions/([A-Za-z0-9_-]+)/submit)", [&core](const httplib::Request& req, httplib::Response& res) {
    if (auto body = parse_body(req, res)) reply(res, core.submit(req.matches[1], *body));
  });
  srv.Get("/metrics", [&core](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> engine;
    if (req.has_param("engine")) engine = req.get_param_value("engine");
    reply(res, core.metrics(engine, req.get_param_value("format") == "table"));
  });
  srv.Get(R"(/images/([^/]+))", [&core](const httplib::Request& req, httplib::Response& res) {
    auto p = core.image_path(req.matches[1]);
    if (!p) return reply(res, error_response(404, "no such image"));
    std::ifstream in(*p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto ext = p->extension().string();
    const char* type = ext == ".png" ? "image/png" : (ext == ".jpg" || ext == ".jpeg") ? "image/jpeg"
                       : ext == ".webp" ? "image/webp" : "application/octet-stream";
    res.set_content(ss.str(), type);
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      reply(res, error_response(500, e.what()));
    }
  });
}

}  // namespace guing::service

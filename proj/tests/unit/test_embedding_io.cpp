#include <gtest/gtest.h>

#include <cstring>
#include <functional>
#include <sstream>
#include <thread>

#include "guing/embedding_io.hpp"
#include "guing/encoder.hpp"
#include "guing/http_encoder.hpp"
#include "support/support.hpp"

using namespace guing;
using testsupport::TempDir;

namespace {

LabeledEmbedding item(const std::string& id, std::vector<float> v) { return {id, EmbeddingVector(v)}; }

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return static_cast<Errc>(-1);  // nothing thrown
}

std::string encode(const std::vector<LabeledEmbedding>& items, std::size_t dim_if_empty = 0) {
  std::ostringstream os;
  write_embeddings(os, items, dim_if_empty);
  return os.str();
}

EmbeddingSet decode(const std::string& bytes) {
  std::istringstream is(bytes);
  return read_embeddings(is);
}

}  // namespace

TEST(EmbeddingFile, RoundTripTwoVectorsDim4) {
  TempDir dir("emb");
  const std::vector<LabeledEmbedding> items{item("a", {1, 2, 3, 4}), item("b", {-1, 0, 0.5, 2})};
  write_embeddings(dir / "e.bin", items);
  const auto back = read_embeddings(dir / "e.bin");
  EXPECT_EQ(back.dim, 4u);
  EXPECT_EQ(back.items, items);
  EXPECT_EQ(back.renormalized, 0u);
  // header (8 + 4 + 4 + 8) + 2 records of (2 + 1 + 16)
  EXPECT_EQ(std::filesystem::file_size(dir / "e.bin"), 24u + 2 * 19u);
}

TEST(EmbeddingFile, LayoutIsLittleEndian) {
  const auto bytes = encode({item("x", {0, 1})});
  ASSERT_EQ(bytes.size(), 24u + 2 + 1 + 8);
  EXPECT_EQ(bytes.substr(0, 8), "GUINGEMB");
  const unsigned char expect_head[] = {1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 'x'};
  EXPECT_EQ(std::memcmp(bytes.data() + 8, expect_head, sizeof expect_head), 0);
  float one = 1.0f;
  EXPECT_EQ(std::memcmp(bytes.data() + 31, &one, 4), 0);
}

TEST(EmbeddingFile, DuplicateIdRejectedOnWrite) {
  TempDir dir("emb");
  EXPECT_EQ(code_of([&] { write_embeddings(dir / "e.bin", {item("a", {1, 0}), item("a", {0, 1})}); }), Errc::DuplicateId);
  EXPECT_FALSE(std::filesystem::exists(dir / "e.bin"));
}

TEST(EmbeddingFile, DuplicateIdRejectedOnRead) {
  // Hand-built file with two records named "a".
  std::string bytes = encode({item("a", {1, 0}), item("b", {0, 1})});
  bytes[24 + 2 + 1 + 8 + 2] = 'a';
  EXPECT_EQ(code_of([&] { decode(bytes); }), Errc::DuplicateId);
}

TEST(EmbeddingFile, EmptyListIsValid) {
  const auto bytes = encode({}, 16);
  EXPECT_EQ(bytes.size(), 24u);
  const auto back = decode(bytes);
  EXPECT_EQ(back.dim, 16u);
  EXPECT_TRUE(back.items.empty());
}

TEST(EmbeddingFile, MixedDimensionsRejected) {
  EXPECT_EQ(code_of([&] { encode({item("a", {1, 0}), item("b", {0, 1, 0})}); }), Errc::MixedDimensions);
}

TEST(EmbeddingFile, CorruptHeadersRejected) {
  const auto good = encode({item("a", {1, 0})});
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of([&] { decode(bad_magic); }), Errc::BadMagic);
  auto bad_version = good;
  bad_version[8] = 2;
  EXPECT_EQ(code_of([&] { decode(bad_version); }), Errc::BadVersion);
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, good.size() - 1})
    EXPECT_EQ(code_of([&] { decode(good.substr(0, cut)); }), Errc::Truncated) << cut;
}

TEST(EmbeddingFile, NonFiniteRejected) {
  auto bytes = encode({item("a", {1, 0})});
  const float nan = NAN;
  std::memcpy(bytes.data() + 27, &nan, 4);
  EXPECT_EQ(code_of([&] { decode(bytes); }), Errc::InvalidRecord);
}

TEST(EmbeddingFile, RenormalizesOffNormVectors) {
  auto bytes = encode({item("a", {1, 0})});
  const float two = 2.0f;
  std::memcpy(bytes.data() + 27, &two, 4);
  const auto back = decode(bytes);
  EXPECT_EQ(back.renormalized, 1u);
  EXPECT_NEAR(l2_norm(back.items[0].vec.values()), 1.0, 1e-6);
}

TEST(EmbeddingFile, RoundTripPropertyIsBitExact) {
  SplitMix64 rng(41);
  for (int t = 0; t < 50; ++t) {
    const std::size_t dim = 1 + rng.below(64), n = rng.below(40);
    std::vector<LabeledEmbedding> items;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> v(dim);
      for (auto& x : v) x = static_cast<float>(rng.normal());
      if (l2_norm(v) == 0) v[0] = 1;
      items.push_back(item("id-" + std::to_string(i) + std::string(rng.below(5), 'z'), v));
    }
    const auto back = decode(encode(items, dim));
    ASSERT_EQ(back.items.size(), items.size());
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(back.items[i].id, items[i].id);
      ASSERT_EQ(std::memcmp(back.items[i].vec.data(), items[i].vec.data(), dim * 4), 0);
      ASSERT_NEAR(l2_norm(back.items[i].vec.values()), 1.0, 1e-6);
    }
  }
}

TEST(JsonlImport, ParsesAndNormalizes) {
  TempDir dir("emb");
  testsupport::spit(dir / "v.jsonl", "{\"id\":\"a\",\"v\":[3,4]}\n{\"id\":\"b\",\"v\":[0,1]}\n");
  const auto set = import_embeddings_jsonl(dir / "v.jsonl", Modality::text);
  ASSERT_EQ(set.items.size(), 2u);
  EXPECT_EQ(set.dim, 2u);
  EXPECT_NEAR(set.items[0].vec.values()[0], 0.6, 1e-7);
  EXPECT_EQ(set.items[0].vec.modality(), Modality::text);
  EXPECT_EQ(set.renormalized, 1u);
}

TEST(JsonlImport, Errors) {
  TempDir dir("emb");
  testsupport::spit(dir / "dup.jsonl", "{\"id\":\"a\",\"v\":[1,0]}\n{\"id\":\"a\",\"v\":[0,1]}\n");
  EXPECT_EQ(code_of([&] { import_embeddings_jsonl(dir / "dup.jsonl"); }), Errc::DuplicateId);
  testsupport::spit(dir / "mix.jsonl", "{\"id\":\"a\",\"v\":[1,0]}\n{\"id\":\"b\",\"v\":[0,1,0]}\n");
  EXPECT_EQ(code_of([&] { import_embeddings_jsonl(dir / "mix.jsonl"); }), Errc::MixedDimensions);
  testsupport::spit(dir / "zero.jsonl", "{\"id\":\"a\",\"v\":[0,0]}\n");
  EXPECT_EQ(code_of([&] { import_embeddings_jsonl(dir / "zero.jsonl"); }), Errc::ZeroVector);
  testsupport::spit(dir / "bad.jsonl", "{\"id\":\"a\",\"v\":[0,\n");
  EXPECT_EQ(code_of([&] { import_embeddings_jsonl(dir / "bad.jsonl"); }), Errc::ParseError);
}

TEST(StubEncoder, DeterministicAndDistinct) {
  const auto a = stub_encode("sleep tracking", 64, 7), b = stub_encode("sleep tracking", 64, 7);
  EXPECT_EQ(a, b);
  EXPECT_LT(cosine_similarity(a, stub_encode("alarm clock", 64, 7)), 1.0);
  EXPECT_NE(a, stub_encode("sleep tracking", 64, 8));
  EXPECT_NEAR(l2_norm(a.values()), 1.0, 1e-6);
}

TEST(StubEncoder, MeanAbsoluteCosineNearZero) {
  // Independent Gaussian directions in 512 dims: E|cos| = sqrt(2/(pi*511)) ~ 0.035.
  std::vector<EmbeddingVector> vs;
  for (int i = 0; i < 1000; ++i) vs.push_back(stub_encode("string-" + std::to_string(i), 512, 0));
  double total = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < vs.size(); ++i)
    for (std::size_t j = i + 1; j < vs.size(); ++j) {
      total += std::abs(cosine_similarity(vs[i], vs[j]));
      ++pairs;
    }
  EXPECT_LT(total / static_cast<double>(pairs), 0.05);
}

TEST(StubEncoder, ClientInterface) {
  StubEncoder enc(32, 3);
  EXPECT_EQ(enc.dim(), 32u);
  EXPECT_NEAR(cosine_similarity(enc.encode_text("x"), stub_encode("x", 32, 3, Modality::text)), 1.0, 1e-6);
  EXPECT_EQ(enc.encode_image("img/x.png").modality(), Modality::image);
  EXPECT_THROW(StubEncoder(1, 0), Error);
}

namespace {

// Minimal sidecar speaking the encoder protocol on an ephemeral port.
struct Sidecar {
  httplib::Server srv;
  std::thread th;
  int port = 0;
  std::size_t reply_dim;
  std::vector<std::string> seen_modalities;

  explicit Sidecar(std::size_t dim) : reply_dim(dim) {
    srv.Post("/encode", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      seen_modalities.push_back(body.at("modality").get<std::string>());
      std::vector<float> v(reply_dim, 0.0f);
      v[0] = 2.0f;
      res.set_content(nlohmann::json{{"dim", v.size()}, {"values", v}}.dump(), "application/json");
    });
    port = srv.bind_to_any_port("127.0.0.1");
    th = std::thread([this] { srv.listen_after_bind(); });
    srv.wait_until_ready();
  }
  ~Sidecar() {
    srv.stop();
    th.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

}  // namespace

TEST(HttpEncoder, SpeaksSidecarProtocol) {
  Sidecar side(8);
  HttpEncoderClient client(side.url(), 8, 5);
  const auto v = client.encode_text("sleep tracking");
  EXPECT_EQ(v.dim(), 8u);
  EXPECT_NEAR(v.values()[0], 1.0, 1e-7);
  client.encode_image("img/a.png");
  EXPECT_EQ(side.seen_modalities, (std::vector<std::string>{"text", "image"}));
}

TEST(HttpEncoder, WrongDimRejected) {
  Sidecar side(8);
  HttpEncoderClient client(side.url(), 16, 5);
  EXPECT_EQ(code_of([&] { client.encode_text("x"); }), Errc::DimensionMismatch);
}

TEST(HttpEncoder, UnreachableIsEncoderUnavailable) {
  int port;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  HttpEncoderClient client("http://127.0.0.1:" + std::to_string(port), 8, 1);
  EXPECT_EQ(code_of([&] { client.encode_text("x"); }), Errc::EncoderUnavailable);
}

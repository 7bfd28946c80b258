#pragma once

// Client for an encoder sidecar on localhost:
//   POST /encode {"modality": "text"|"image", "payload": ...}
//     -> {"dim": n, "values": [...]}

#include <mutex>
#include <string>
#include <vector>

#include <httplib.h>
// <resolv.h> defines _res, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include <nlohmann/json.hpp>

#include "guing/encoder.hpp"

namespace guing {

class HttpEncoderClient final : public EncoderClient {
 public:
  // `url` like "http://127.0.0.1:9000". `dim` is the dimension the caller
  // expects; responses of any other size are rejected.
  HttpEncoderClient(std::string url, std::size_t dim, int timeout_sec = 10)
      : url_(std::move(url)), dim_(dim), timeout_sec_(timeout_sec) {}

  std::size_t dim() const override { return dim_; }

 protected:
  std::vector<float> encode_raw(Modality m, const std::string& payload) override {
    httplib::Client cli(url_);
    cli.set_connection_timeout(timeout_sec_);
    cli.set_read_timeout(timeout_sec_);
    const nlohmann::json body = {{"modality", std::string(to_string(m))}, {"payload", payload}};
    auto res = cli.Post("/encode", body.dump(), "application/json");
    if (!res) throw Error(Errc::EncoderUnavailable, "encoder sidecar at " + url_ + " unreachable");
    if (res->status != 200)
      throw Error(Errc::EncoderUnavailable, "encoder sidecar answered HTTP " + std::to_string(res->status));
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, std::string("encoder reply: ") + e.what());
    }
    auto values = reply.at("values").get<std::vector<float>>();
    if (reply.contains("dim") && reply["dim"].get<std::size_t>() != values.size())
      throw Error(Errc::ParseError, "encoder reply dim disagrees with its values");
    return values;
  }

 private:
  std::string url_;
  std::size_t dim_;
  int timeout_sec_;
};

}  // namespace guing

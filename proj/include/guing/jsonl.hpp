#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guing/core.hpp"

namespace guing {

using json = nlohmann::json;

// Reads a JSON Lines file. Blank lines are skipped; a malformed line throws
// ParseError naming the file and line number.
inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(Errc::ParseError, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

inline void append_jsonl(const std::filesystem::path& path, const json& row) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(Errc::IoError, "cannot append to " + path.string());
  out << row.dump() << '\n';
  out.flush();
  if (!out) throw Error(Errc::IoError, "append failed for " + path.string());
}

// Field accessor that reports the missing key instead of nlohmann's generic message.
template <typename T>
T field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(Errc::ParseError, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::ParseError, std::string("field '") + key + "': " + e.what());
  }
}

inline json to_json(const ScreenshotRecord& r) {
  json j = {{"id", r.id},
            {"app_id", r.app_id},
            {"source", std::string(to_string(r.source))},
            {"image_ref", r.image_ref},
            {"content_hash", r.content_hash},
            {"width_px", r.width_px},
            {"height_px", r.height_px}};
  if (r.caption) j["caption"] = *r.caption;
  return j;
}

inline ScreenshotRecord screenshot_from_json(const json& j) {
  ScreenshotRecord r;
  r.id = field<std::string>(j, "id");
  r.app_id = field<std::string>(j, "app_id");
  r.source = source_from_string(field<std::string>(j, "source"));
  r.image_ref = field<std::string>(j, "image_ref");
  r.content_hash = field<std::string>(j, "content_hash");
  if (j.contains("caption") && !j["caption"].is_null()) r.caption = j["caption"].get<std::string>();
  r.width_px = field<int>(j, "width_px");
  r.height_px = field<int>(j, "height_px");
  r.validate();
  return r;
}

inline json box_to_json(const BoundingBox& b) { return json::array({b.x_min(), b.y_min(), b.x_max(), b.y_max()}); }

inline BoundingBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(Errc::ParseError, "box must be [x_min, y_min, x_max, y_max]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace guing

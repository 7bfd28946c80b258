#pragma once

// Deterministic dataset-creation stages. Classifier probabilities, detector
// boxes and OCR boxes are produced elsewhere and consumed here as data; the
// stages turn raw introduction-image manifests into a screenshot repository
// manifest and a screenshot-caption manifest.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <openssl/evp.h>

#include "guing/core.hpp"
#include "guing/jsonl.hpp"
#include "guing/parallel.hpp"

namespace guing::pipeline {

// ---------------------------------------------------------------------------
// Hashing

inline std::string to_hex(const unsigned char* bytes, std::size_t n) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(n * 2, '0');
  for (std::size_t i = 0; i < n; ++i) {
    out[2 * i] = digits[bytes[i] >> 4];
    out[2 * i + 1] = digits[bytes[i] & 0xf];
  }
  return out;
}

inline std::string sha1_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw Error(Errc::IoError, "SHA-1 digest failed");
  return to_hex(md, len);
}

inline std::string sha1_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error(Errc::IoError, "SHA-1 init failed");
  }
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  return to_hex(md, len);
}

// ---------------------------------------------------------------------------
// Domain types

struct RawImageEntry {
  std::string entry_id;
  std::string app_id;
  std::string file_ref;
  int width_px = 0;
  int height_px = 0;
  std::string content_bytes_hash;

  double aspect_ratio() const { return static_cast<double>(height_px) / width_px; }
};

enum class ImageClass { screenshot, surrounded_screenshot, irrelevant, unrouted };

inline std::string_view to_string(ImageClass c) {
  switch (c) {
    case ImageClass::screenshot: return "screenshot";
    case ImageClass::surrounded_screenshot: return "surrounded_screenshot";
    case ImageClass::irrelevant: return "irrelevant";
    case ImageClass::unrouted: return "unrouted";
  }
  return "unrouted";
}

struct ClassificationResult {
  std::string entry_id;
  // Declaration order: screenshot, surrounded_screenshot, irrelevant.
  std::array<double, 3> probs{};

  void validate() const {
    double sum = 0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::InvalidRecord, "probability outside [0,1] for " + entry_id);
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw Error(Errc::InvalidRecord, "probabilities of " + entry_id + " do not sum to 1");
  }
};

struct DetectionResult {
  std::string entry_id;
  BoundingBox box;
};

struct CaptionRecord {
  std::string entry_id;
  std::string app_id;
  std::string caption;
  std::string language;

  bool operator==(const CaptionRecord&) const = default;
};

struct StageReport {
  std::string stage;
  std::size_t in = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

// ---------------------------------------------------------------------------
// Stages

struct Partition {
  std::vector<RawImageEntry> kept;
  std::vector<RawImageEntry> rejected;
};

// Keeps entries whose height/width ratio lies in [min_ratio, max_ratio].
inline Partition filter_by_aspect_ratio(const std::vector<RawImageEntry>& entries, double min_ratio,
                                        double max_ratio) {
  if (!(min_ratio > 0 && min_ratio <= max_ratio))
    throw Error(Errc::InvalidArgument, "aspect ratio bounds need 0 < min <= max");
  Partition out;
  for (const auto& e : entries) {
    const double r = e.aspect_ratio();
    (r >= min_ratio && r <= max_ratio ? out.kept : out.rejected).push_back(e);
  }
  return out;
}

struct DedupResult {
  std::vector<RawImageEntry> unique;
  std::size_t dropped = 0;
};

// First occurrence of each content hash wins.
inline DedupResult dedup_by_hash(const std::vector<RawImageEntry>& entries) {
  DedupResult out;
  std::unordered_set<std::string> seen;
  for (const auto& e : entries) {
    if (seen.insert(e.content_bytes_hash).second)
      out.unique.push_back(e);
    else
      ++out.dropped;
  }
  return out;
}

// Argmax class if its probability strictly exceeds `threshold`, else unrouted.
// Probability ties go to the class declared first.
inline ImageClass route_by_classification(const ClassificationResult& result, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw Error(Errc::InvalidArgument, "threshold must lie in [0,1]");
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.probs.size(); ++i)
    if (result.probs[i] > result.probs[best]) best = i;
  if (!(result.probs[best] > threshold)) return ImageClass::unrouted;
  return static_cast<ImageClass>(best);
}

// Integer pixel extent of a box: endpoints rounded to the nearest pixel edge,
// half-open so (100, 900) spans 800 pixels.
struct PixelRect {
  long x0, y0, x1, y1;
  long width() const { return x1 - x0; }
  long height() const { return y1 - y0; }
};

inline PixelRect to_pixels(const BoundingBox& b) {
  return {std::lround(b.x_min()), std::lround(b.y_min()), std::lround(b.x_max()), std::lround(b.y_max())};
}

inline ScreenshotRecord crop_to_box(const RawImageEntry& entry, const DetectionResult& det) {
  if (!det.box.within(entry.width_px, entry.height_px))
    throw Error(Errc::BoxOutOfBounds, "detection box exceeds the bounds of " + entry.entry_id);
  const PixelRect px = to_pixels(det.box);
  if (px.width() <= 0 || px.height() <= 0)
    throw Error(Errc::InvalidBox, "detection box of " + entry.entry_id + " rounds to zero pixels");
  ScreenshotRecord r;
  r.id = entry.entry_id;
  r.app_id = entry.app_id;
  r.source = Source::screen_repo;
  r.image_ref = entry.file_ref + "#xywh=" + std::to_string(px.x0) + "," + std::to_string(px.y0) + "," +
                std::to_string(px.width()) + "," + std::to_string(px.height());
  r.content_hash = entry.content_bytes_hash;
  r.width_px = static_cast<int>(px.width());
  r.height_px = static_cast<int>(px.height());
  return r;
}

inline ScreenshotRecord as_screenshot(const RawImageEntry& entry) {
  ScreenshotRecord r;
  r.id = entry.entry_id;
  r.app_id = entry.app_id;
  r.source = Source::screen_repo;
  r.image_ref = entry.file_ref;
  r.content_hash = entry.content_bytes_hash;
  r.width_px = entry.width_px;
  r.height_px = entry.height_px;
  return r;
}

// Drops OCR boxes that overlap the screenshot by more than `max_overlap_area`
// and joins the rest in reading order (top-to-bottom, then left-to-right).
inline std::string assemble_caption(std::vector<OcrBox> ocr, const BoundingBox& screenshot_box,
                                    double max_overlap_area = 0.0) {
  std::erase_if(ocr, [&](const OcrBox& b) { return intersection_area(b.box, screenshot_box) > max_overlap_area; });
  std::sort(ocr.begin(), ocr.end(), [](const OcrBox& a, const OcrBox& b) {
    return std::make_tuple(a.box.y_min(), a.box.x_min(), std::string_view(a.text), a.box.y_max(), a.box.x_max()) <
           std::make_tuple(b.box.y_min(), b.box.x_min(), std::string_view(b.text), b.box.y_max(), b.box.x_max());
  });
  std::string caption;
  for (const auto& b : ocr) {
    if (!caption.empty()) caption += ' ';
    caption += b.text;
  }
  return caption;
}

using LanguageDetector = std::function<std::string(std::string_view)>;
using SpellCorrector = std::function<std::string(std::string_view)>;

// Stub detector: "en" when at least 80% of the letters are ASCII, "und" when
// there are no letters, "other" otherwise.
inline std::string ascii_ratio_language(std::string_view text) {
  std::size_t ascii_letters = 0, other_letters = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (c < 0x80) {
      if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) ++ascii_letters;
    } else if ((c & 0xC0) != 0x80) {
      ++other_letters;  // lead byte of a multi-byte code point
    }
  }
  if (ascii_letters + other_letters == 0) return "und";
  return ascii_letters * 5 >= (ascii_letters + other_letters) * 4 ? "en" : "other";
}

inline std::string identity_corrector(std::string_view text) { return std::string(text); }

inline bool is_blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

struct PostprocessResult {
  std::vector<CaptionRecord> records;
  std::vector<StageReport> reports;
};

inline PostprocessResult postprocess_captions(std::vector<CaptionRecord> records,
                                              const LanguageDetector& detect = ascii_ratio_language,
                                              const SpellCorrector& correct = identity_corrector,
                                              const std::string& keep_language = "en") {
  PostprocessResult out;
  auto stage = [&](const char* name, auto&& keep) {
    StageReport rep{name, records.size(), 0, 0};
    std::vector<CaptionRecord> next;
    for (auto& r : records)
      if (keep(r)) next.push_back(std::move(r));
    rep.kept = next.size();
    rep.dropped = rep.in - rep.kept;
    records = std::move(next);
    out.reports.push_back(rep);
  };
  stage("empty_caption", [](const CaptionRecord& r) { return !is_blank(r.caption); });
  stage("language", [&](CaptionRecord& r) {
    r.language = detect(r.caption);
    return r.language == keep_language;
  });
  stage("spell_correction", [&](CaptionRecord& r) {
    r.caption = correct(r.caption);
    return !is_blank(r.caption);
  });
  std::set<std::pair<std::string, std::string>> seen;
  stage("caption_dedup", [&](const CaptionRecord& r) { return seen.emplace(r.app_id, r.caption).second; });
  out.records = std::move(records);
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end run

struct PipelineConfig {
  double ratio_min = 1.3;
  double ratio_max = 3.0;
  double threshold = 0.9;
  double max_overlap_area = 0.0;
  unsigned threads = 1;
  LanguageDetector language_detector = ascii_ratio_language;
  SpellCorrector spell_corrector = identity_corrector;
};

struct PipelineInputs {
  std::vector<RawImageEntry> entries;
  std::unordered_map<std::string, ClassificationResult> probs;
  std::unordered_map<std::string, BoundingBox> boxes;
  std::unordered_map<std::string, std::vector<OcrBox>> ocr;
};

struct PipelineOutput {
  std::vector<ScreenshotRecord> screen_repo;
  std::vector<CaptionRecord> scap_repo;
  std::vector<StageReport> reports;
};

// Raised for input inconsistencies; carries the stage that found them.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(Errc::ParseError, "[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

inline PipelineOutput run_pipeline(const PipelineInputs& in, const PipelineConfig& cfg) {
  PipelineOutput out;
  auto report = [&](std::string name, std::size_t n_in, std::size_t kept) {
    out.reports.push_back({std::move(name), n_in, kept, n_in - kept});
  };

  auto ratio = filter_by_aspect_ratio(in.entries, cfg.ratio_min, cfg.ratio_max);
  report("aspect_ratio", in.entries.size(), ratio.kept.size());

  auto dedup = dedup_by_hash(ratio.kept);
  report("dedup", ratio.kept.size(), dedup.unique.size());

  const auto& entries = dedup.unique;
  std::vector<ImageClass> routes(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto it = in.probs.find(entries[i].entry_id);
    if (it == in.probs.end()) throw StageError("classify", "no class probabilities for " + entries[i].entry_id);
    routes[i] = route_by_classification(it->second, cfg.threshold);
  }
  std::size_t n_screens = 0, n_surrounded = 0;
  for (auto r : routes) {
    n_screens += r == ImageClass::screenshot;
    n_surrounded += r == ImageClass::surrounded_screenshot;
  }
  report("classify", entries.size(), n_screens + n_surrounded);

  // Per-entry crop + caption assembly; slots keep manifest order.
  struct Slot {
    std::optional<ScreenshotRecord> record;
    std::optional<CaptionRecord> caption;
  };
  std::vector<Slot> slots(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (routes[i] == ImageClass::surrounded_screenshot && !in.boxes.contains(entries[i].entry_id))
      throw StageError("crop", "no detection box for " + entries[i].entry_id);

  parallel_for(entries.size(), cfg.threads, [&](std::size_t i) {
    const auto& e = entries[i];
    if (routes[i] == ImageClass::screenshot) {
      slots[i].record = as_screenshot(e);
      return;
    }
    if (routes[i] != ImageClass::surrounded_screenshot) return;
    const BoundingBox& box = in.boxes.at(e.entry_id);
    if (!box.within(e.width_px, e.height_px)) return;
    const PixelRect px = to_pixels(box);
    if (px.width() <= 0 || px.height() <= 0) return;
    slots[i].record = crop_to_box(e, DetectionResult{e.entry_id, box});
    std::vector<OcrBox> ocr;
    if (auto it = in.ocr.find(e.entry_id); it != in.ocr.end()) ocr = it->second;
    slots[i].caption = CaptionRecord{e.entry_id, e.app_id, assemble_caption(std::move(ocr), box, cfg.max_overlap_area), ""};
  });

  std::size_t n_cropped = 0;
  std::vector<CaptionRecord> captions;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (routes[i] == ImageClass::surrounded_screenshot && slots[i].record) ++n_cropped;
    if (slots[i].caption) captions.push_back(*slots[i].caption);
  }
  report("crop", n_surrounded, n_cropped);

  auto post = postprocess_captions(std::move(captions), cfg.language_detector, cfg.spell_corrector);
  for (auto& r : post.reports) out.reports.push_back(std::move(r));

  std::unordered_map<std::string, const CaptionRecord*> caption_of;
  for (const auto& c : post.records) caption_of.emplace(c.entry_id, &c);
  for (auto& s : slots) {
    if (!s.record) continue;
    if (auto it = caption_of.find(s.record->id); it != caption_of.end()) s.record->caption = it->second->caption;
    out.screen_repo.push_back(std::move(*s.record));
  }
  out.scap_repo = std::move(post.records);
  return out;
}

// ---------------------------------------------------------------------------
// File I/O

inline json to_json(const CaptionRecord& c) {
  return {{"entry_id", c.entry_id}, {"app_id", c.app_id}, {"caption", c.caption}, {"language", c.language}};
}

inline json to_json(const StageReport& r) {
  return {{"stage", r.stage}, {"in", r.in}, {"kept", r.kept}, {"dropped", r.dropped}};
}

// Loads a raw-image manifest. `file_ref` paths are resolved against the
// manifest's directory and hashed (in parallel when threads > 1).
inline std::vector<RawImageEntry> load_manifest(const std::filesystem::path& path, unsigned threads = 1) {
  std::vector<RawImageEntry> entries;
  std::set<std::string> ids;
  for (const auto& j : read_jsonl(path)) {
    RawImageEntry e;
    e.entry_id = field<std::string>(j, "entry_id");
    e.app_id = field<std::string>(j, "app_id");
    e.file_ref = field<std::string>(j, "file_ref");
    e.width_px = field<int>(j, "width_px");
    e.height_px = field<int>(j, "height_px");
    if (e.width_px <= 0 || e.height_px <= 0)
      throw Error(Errc::InvalidRecord, "non-positive dimensions for " + e.entry_id);
    if (!ids.insert(e.entry_id).second) throw Error(Errc::DuplicateId, "entry_id " + e.entry_id);
    entries.push_back(std::move(e));
  }
  const auto base = path.parent_path();
  parallel_for(entries.size(), threads, [&](std::size_t i) {
    std::filesystem::path p(entries[i].file_ref);
    entries[i].content_bytes_hash = sha1_file(p.is_absolute() ? p : base / p);
  });
  return entries;
}

inline std::unordered_map<std::string, ClassificationResult> load_probs(const std::filesystem::path& path) {
  std::unordered_map<std::string, ClassificationResult> out;
  for (const auto& j : read_jsonl(path)) {
    ClassificationResult r;
    r.entry_id = field<std::string>(j, "entry_id");
    const json& p = j.at("probs");
    r.probs = {field<double>(p, "screenshot"), field<double>(p, "surrounded_screenshot"),
               field<double>(p, "irrelevant")};
    r.validate();
    out.insert_or_assign(r.entry_id, r);
  }
  return out;
}

inline std::unordered_map<std::string, BoundingBox> load_boxes(const std::filesystem::path& path) {
  std::unordered_map<std::string, BoundingBox> out;
  for (const auto& j : read_jsonl(path))
    out.insert_or_assign(field<std::string>(j, "entry_id"), box_from_json(j.at("box")));
  return out;
}

inline std::unordered_map<std::string, std::vector<OcrBox>> load_ocr(const std::filesystem::path& path) {
  std::unordered_map<std::string, std::vector<OcrBox>> out;
  for (const auto& j : read_jsonl(path)) {
    std::vector<OcrBox> boxes;
    for (const auto& b : j.at("boxes"))
      boxes.emplace_back(box_from_json(b.at("box")), field<std::string>(b, "text"), field<double>(b, "confidence"));
    out.insert_or_assign(field<std::string>(j, "entry_id"), std::move(boxes));
  }
  return out;
}

struct PipelinePaths {
  std::filesystem::path manifest, probs, boxes, ocr;
};

// Loads every input, tagging failures with the stage that consumes the file.
inline PipelineInputs load_inputs(const PipelinePaths& paths, unsigned threads = 1) {
  PipelineInputs in;
  auto stage = [](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
  };
  stage("manifest", [&] { in.entries = load_manifest(paths.manifest, threads); });
  stage("classify", [&] { in.probs = load_probs(paths.probs); });
  stage("crop", [&] { in.boxes = load_boxes(paths.boxes); });
  stage("caption_assembly", [&] { in.ocr = load_ocr(paths.ocr); });
  return in;
}

inline void write_outputs(const PipelineOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<json> screens, pairs, reports;
  for (const auto& r : out.screen_repo) screens.push_back(guing::to_json(r));
  for (const auto& c : out.scap_repo) pairs.push_back(to_json(c));
  for (const auto& r : out.reports) reports.push_back(to_json(r));
  write_jsonl(dir / "screen_repo.jsonl", screens);
  write_jsonl(dir / "scap_repo.jsonl", pairs);
  std::ofstream rep(dir / "report.json", std::ios::binary | std::ios::trunc);
  rep << json(reports).dump(2) << '\n';
}

}  // namespace guing::pipeline

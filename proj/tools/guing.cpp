// guing: command-line entry point.
//
// Exit codes: 0 success, 2 usage or data error, 3 environment error (an
// encoder sidecar or the network is unavailable).

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "guing/config.hpp"
#include "guing/embedding_io.hpp"
#include "guing/encoder.hpp"
#include "guing/experiments.hpp"
#include "guing/http_encoder.hpp"
#include "guing/index.hpp"
#include "guing/judgments.hpp"
#include "guing/pipeline.hpp"
#include "guing/service.hpp"

namespace {

using guing::json;

constexpr int kOk = 0;
constexpr int kDataError = 2;
constexpr int kEnvError = 3;

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

// --- pipeline ---------------------------------------------------------------

struct PipelineArgs {
  std::string manifest, probs, boxes, ocr, out;
  double threshold = 0.9, ratio_min = 1.3, ratio_max = 3.0;
  unsigned threads = 1;
  bool json = false;
};

int run_pipeline_cmd(const PipelineArgs& a) {
  namespace gp = guing::pipeline;
  gp::PipelineConfig cfg;
  cfg.threshold = a.threshold;
  cfg.ratio_min = a.ratio_min;
  cfg.ratio_max = a.ratio_max;
  cfg.threads = a.threads;
  try {
    const auto in = gp::load_inputs({a.manifest, a.probs, a.boxes, a.ocr}, a.threads);
    const auto out = gp::run_pipeline(in, cfg);
    gp::write_outputs(out, a.out);
    if (a.json) {
      json reports = json::array();
      for (const auto& r : out.reports) reports.push_back(gp::to_json(r));
      print_json({{"screen_repo", out.screen_repo.size()}, {"scap_repo", out.scap_repo.size()}, {"stages", reports}});
    } else {
      std::printf("%-18s %8s %8s %8s\n", "stage", "in", "kept", "dropped");
      for (const auto& r : out.reports) std::printf("%-18s %8zu %8zu %8zu\n", r.stage.c_str(), r.in, r.kept, r.dropped);
      std::printf("screen_repo %zu, scap_repo %zu\n", out.screen_repo.size(), out.scap_repo.size());
    }
  } catch (const gp::StageError& e) {
    std::cerr << "pipeline failed at stage " << e.stage() << ": " << e.what() << '\n';
    return kDataError;
  }
  return kOk;
}

// --- embeddings / index / search -------------------------------------------

int embeddings_import(const std::string& in, const std::string& out, const std::string& modality) {
  const auto set = guing::import_embeddings_jsonl(in, guing::modality_from_string(modality));
  guing::write_embeddings(std::filesystem::path(out), set.items, set.dim);
  std::cerr << "wrote " << set.items.size() << " embeddings of dim " << set.dim;
  if (set.renormalized) std::cerr << " (" << set.renormalized << " renormalized)";
  std::cerr << '\n';
  return kOk;
}

// Embeds every caption record with the stub encoder, keyed by record id.
int embeddings_stub(const std::string& captions, const std::string& out, std::size_t dim, std::uint64_t seed) {
  std::vector<guing::LabeledEmbedding> items;
  for (const auto& [id, caption] : guing::service::load_captions(captions))
    items.push_back({id, guing::stub_encode(caption, dim, seed, guing::Modality::image)});
  guing::write_embeddings(std::filesystem::path(out), items, dim);
  std::cerr << "wrote " << items.size() << " stub embeddings of dim " << dim << '\n';
  return kOk;
}

struct IndexArgs {
  std::string embeddings, out;
  std::size_t cells = 0, iters = 25, train_sample = 0;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool exact_only = false;
};

int index_build(const IndexArgs& a) {
  const auto set = guing::read_embeddings(std::filesystem::path(a.embeddings));
  auto base = guing::build_exact(set.items);
  guing::IvfIndex index;
  if (a.exact_only) {
    index = guing::IvfIndex::exact_only(std::move(base));
  } else {
    index = guing::train_ivf(std::move(base), {a.cells, a.iters, a.seed, a.train_sample, a.threads});
  }
  guing::save_index(index, a.out);
  std::size_t empty = 0;
  for (const auto& c : index.cells()) empty += c.empty();
  std::cerr << "indexed " << index.base().size() << " vectors (dim " << index.base().dim() << ") into "
            << index.n_cells() << " cells, " << empty << " empty, trained on " << index.trained_on() << '\n';
  return kOk;
}

struct SearchArgs {
  std::string index, query, encoder_url;
  std::size_t k = 10, nprobe = 0, dim = 0;
  std::uint64_t seed = 0;
  bool exact = false, stub = false, json = false;
};

int search_cmd(const SearchArgs& a) {
  const auto index = guing::load_index(a.index);
  const std::size_t dim = a.dim ? a.dim : index.base().dim();
  std::unique_ptr<guing::EncoderClient> enc;
  if (!a.encoder_url.empty())
    enc = std::make_unique<guing::HttpEncoderClient>(a.encoder_url, dim);
  else
    enc = std::make_unique<guing::StubEncoder>(dim, a.seed);
  const auto q = enc->encode_text(a.query);
  guing::SearchResult res;
  if (a.exact || !index.has_cells()) {
    res = guing::search_exact(index.base(), q, a.k);
  } else {
    const auto nprobe = a.nprobe ? a.nprobe : std::min(guing::default_ivf_params(index.base().size()).nprobe, index.n_cells());
    res = guing::search_ivf(index, q, a.k, nprobe);
  }
  if (a.json) {
    json hits = json::array();
    for (const auto& h : res.hits) hits.push_back({{"id", h.id}, {"score", h.score}});
    print_json({{"query", a.query}, {"results", hits}});
  } else {
    for (std::size_t i = 0; i < res.hits.size(); ++i)
      std::printf("%zu\t%s\t%.6f\n", i + 1, res.hits[i].id.c_str(), res.hits[i].score);
  }
  return kOk;
}

// --- eval ------------------------------------------------------------------------

guing::learn::TrainConfig train_config(const guing::KvConfig& c, guing::learn::TrainConfig t) {
  t.batch_size = c.num("batch_size", t.batch_size);
  t.epochs = c.num("epochs", t.epochs);
  t.embed_dim = c.num("embed_dim", t.embed_dim);
  t.optimizer.lr = c.num("lr", t.optimizer.lr);
  t.optimizer.weight_decay = c.num("weight_decay", t.optimizer.weight_decay);
  t.seed = c.num("train_seed", t.seed);
  return t;
}

std::unordered_map<std::string, std::string> read_truth(const std::filesystem::path& p) {
  std::unordered_map<std::string, std::string> out;
  for (const auto& j : guing::read_jsonl(p))
    out[guing::field<std::string>(j, "caption_id")] = guing::field<std::string>(j, "screenshot_id");
  return out;
}

void emit(const guing::eval::Table& t, const json& j, bool as_json) {
  if (as_json)
    print_json(j);
  else
    std::cout << guing::eval::render_table(t);
}

json recall_json(const std::map<std::size_t, double>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j["recall@" + std::to_string(k)] = v;
  return j;
}

int eval_exp1(const guing::KvConfig& c, bool as_json) {
  namespace ge = guing::eval;
  const auto mode = c.str("mode", "synthetic");
  ge::Exp1Report rep;
  std::vector<std::size_t> ks;
  if (mode == "synthetic") {
    ge::Exp1SyntheticConfig s;
    s.n_apps = c.num("n_apps", s.n_apps);
    s.screens_per_app = c.num("screens_per_app", s.screens_per_app);
    s.captions_per_screen = c.num("captions_per_screen", s.captions_per_screen);
    s.val_apps = c.num("val_apps", s.val_apps);
    s.test_apps = c.num("test_apps", s.test_apps);
    s.latent_dim = c.num("latent_dim", s.latent_dim);
    s.image_dim = c.num("image_dim", s.image_dim);
    s.text_dim = c.num("text_dim", s.text_dim);
    s.noise = c.num("noise", s.noise);
    s.seed = c.num("seed", s.seed);
    s.ks = c.sizes("ks", s.ks);
    s.train = train_config(c, s.train);
    c.reject_unclaimed();
    ks = s.ks;
    rep = ge::run_exp1_synthetic(s);
  } else if (mode == "files") {
    const auto dataset = c.str("dataset", "dataset");
    const auto model = c.str("model", "model");
    const auto screens = guing::read_embeddings(c.path("screenshots"));
    const auto captions = guing::read_embeddings(c.path("captions"));
    const auto truth = read_truth(c.path("truth"));
    ks = c.sizes("ks", ge::exp1_ks());
    c.reject_unclaimed();
    rep = ge::run_exp1_files(dataset, model, screens, captions, truth, ks);
  } else {
    throw guing::Error(guing::Errc::ParseError, "exp1 mode must be synthetic or files");
  }
  json rows = json::array();
  for (const auto& r : rep.rows) rows.push_back({{"model", r.model}, {"recall", recall_json(r.recall)}});
  json curve = json::array();
  for (const auto& e : rep.loss_curve) curve.push_back(guing::learn::to_json(e));
  emit(ge::exp1_table({rep}, ks),
       {{"dataset", rep.dataset}, {"gallery", rep.gallery_size}, {"queries", rep.queries}, {"rows", rows}, {"loss_curve", curve}},
       as_json);
  return kOk;
}

int eval_exp2(const guing::KvConfig& c, bool as_json) {
  namespace ge = guing::eval;
  const auto dir = c.path("judgments");
  c.reject_unclaimed();
  if (!std::filesystem::is_directory(dir)) throw guing::Error(guing::Errc::IoError, "no judgment directory " + dir.string());
  const auto store = ge::JudgmentStore::load(dir);
  const auto rows = store.aggregate();
  if (rows.empty()) throw guing::Error(guing::Errc::EmptyInput, "no submitted judgments in " + dir.string());
  json out = json::array();
  for (const auto& r : rows) out.push_back(ge::to_json(r));
  emit(ge::exp2_table(rows), {{"engines", out}}, as_json);
  return kOk;
}

int eval_exp3(const guing::KvConfig& c, bool as_json) {
  namespace ge = guing::eval;
  const auto mode = c.str("mode", "synthetic");
  ge::Exp3Report rep;
  if (mode == "synthetic") {
    ge::Exp3SyntheticConfig s;
    s.n_classes = c.num("n_classes", s.n_classes);
    s.per_class = c.num("per_class", s.per_class);
    s.pretrain_pairs = c.num("pretrain_pairs", s.pretrain_pairs);
    s.latent_dim = c.num("latent_dim", s.latent_dim);
    s.image_dim = c.num("image_dim", s.image_dim);
    s.text_dim = c.num("text_dim", s.text_dim);
    s.noise = c.num("noise", s.noise);
    s.within_class = c.num("within_class", s.within_class);
    s.folds = c.num("folds", s.folds);
    s.test_fraction = c.num("test_fraction", s.test_fraction);
    s.seed = c.num("seed", s.seed);
    s.train = train_config(c, s.train);
    s.probe.epochs = c.num("probe_epochs", s.probe.epochs);
    s.probe.batch_size = c.num("probe_batch_size", s.probe.batch_size);
    s.probe.optimizer.lr = c.num("probe_lr", s.probe.optimizer.lr);
    c.reject_unclaimed();
    rep = ge::run_exp3_synthetic(s);
  } else if (mode == "files") {
    const auto model = c.str("model", "model");
    const auto images = guing::read_embeddings(c.path("images"));
    const auto label_embs = guing::read_embeddings(c.path("label_embeddings"));
    std::unordered_map<std::string, int> labels;
    for (const auto& j : guing::read_jsonl(c.path("labels")))
      labels[guing::field<std::string>(j, "id")] = guing::field<int>(j, "label");
    guing::learn::ProbeConfig probe;
    probe.epochs = c.num("probe_epochs", probe.epochs);
    probe.batch_size = c.num("probe_batch_size", probe.batch_size);
    probe.optimizer.lr = c.num("probe_lr", probe.optimizer.lr);
    const auto folds = c.num<std::size_t>("folds", 5);
    const auto frac = c.num("test_fraction", 0.2);
    const auto seed = c.num<std::uint64_t>("seed", 0);
    c.reject_unclaimed();
    rep = ge::run_exp3_files(model, images, labels, label_embs, folds, frac, probe, seed);
  } else {
    throw guing::Error(guing::Errc::ParseError, "exp3 mode must be synthetic or files");
  }
  for (int a : rep.absent_classes) std::cerr << "warning: class " << a << " absent from a probe training split\n";
  json rows = json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"model", r.model},
                    {"zero_shot", {{"precision", r.zero_shot.precision}, {"recall", r.zero_shot.recall}, {"f1", r.zero_shot.f1}}},
                    {"linear_probe",
                     {{"precision", r.linear_probe.precision}, {"recall", r.linear_probe.recall}, {"f1", r.linear_probe.f1}}}});
  emit(ge::exp3_table(rep), {{"rows", rows}}, as_json);
  return kOk;
}

int eval_exp4(const guing::KvConfig& c, bool as_json) {
  namespace ge = guing::eval;
  const auto mode = c.str("mode", "synthetic");
  if (mode != "synthetic") throw guing::Error(guing::Errc::ParseError, "exp4 supports mode = synthetic only");
  ge::Exp4SyntheticConfig s;
  s.task.n_train_screens = c.num("train_screens", s.task.n_train_screens);
  s.task.n_test_screens = c.num("test_screens", s.task.n_test_screens);
  s.task.sketches_per_screen = c.num("sketches_per_screen", s.task.sketches_per_screen);
  s.task.embed_dim = c.num("embed_dim", s.task.embed_dim);
  s.task.sketch_dim = c.num("sketch_dim", s.task.sketch_dim);
  s.task.noise = c.num("noise", s.task.noise);
  s.task.seed = c.num("seed", s.task.seed);
  s.ks = c.sizes("ks", s.ks);
  s.train.batch_size = c.num("batch_size", s.train.batch_size);
  s.train.epochs = c.num("epochs", s.train.epochs);
  s.train.optimizer.lr = c.num("lr", s.train.optimizer.lr);
  s.train.optimizer.weight_decay = c.num("weight_decay", s.train.optimizer.weight_decay);
  s.train.seed = c.num("train_seed", s.train.seed);
  c.reject_unclaimed();
  const auto rep = ge::run_exp4_synthetic(s);
  if (!rep.screenshots_unchanged) std::cerr << "warning: screenshot embeddings changed during adapter training\n";
  json rows = json::array();
  for (const auto& r : rep.rows)
    rows.push_back({{"model", r.model}, {"zero_shot", recall_json(r.zero_shot)}, {"fine_tuned", recall_json(r.fine_tuned)}});
  emit(ge::exp4_table(rep, s.ks), {{"rows", rows}, {"screenshots_unchanged", rep.screenshots_unchanged}}, as_json);
  return kOk;
}

// --- serve -------------------------------------------------------------------------

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "data", engines, image_root = "images";
};

int serve_cmd(const ServeArgs& a) {
  guing::service::ServiceCore core({a.data_dir, a.image_root});
  if (!a.engines.empty())
    for (auto& [id, engine] : guing::service::load_registry(a.engines)) core.add_engine(id, std::move(engine));
  httplib::Server srv;
  guing::service::mount(srv, core);
  std::cerr << "listening on http://" << a.host << ":" << a.port << '\n';
  if (!srv.listen(a.host, a.port)) {
    std::cerr << "cannot bind " << a.host << ":" << a.port << '\n';
    return kEnvError;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"guing: text-to-GUI retrieval and evaluation workbench"};
  app.require_subcommand(1);

  PipelineArgs pa;
  auto* pipeline = app.add_subcommand("pipeline", "dataset post-processing stages");
  pipeline->require_subcommand(1);
  auto* prun = pipeline->add_subcommand("run", "run every stage over a manifest");
  prun->add_option("--manifest", pa.manifest)->required();
  prun->add_option("--probs", pa.probs)->required();
  prun->add_option("--boxes", pa.boxes)->required();
  prun->add_option("--ocr", pa.ocr)->required();
  prun->add_option("--out", pa.out)->required();
  prun->add_option("--threshold", pa.threshold, "classifier confidence needed to route")->capture_default_str();
  prun->add_option("--ratio-min", pa.ratio_min)->capture_default_str();
  prun->add_option("--ratio-max", pa.ratio_max)->capture_default_str();
  prun->add_option("--threads", pa.threads)->capture_default_str();
  prun->add_flag("--json", pa.json);

  std::string emb_in, emb_out, modality = "image", captions;
  std::size_t stub_dim = 64;
  std::uint64_t stub_seed = 0;
  auto* emb = app.add_subcommand("embeddings", "embedding files");
  emb->require_subcommand(1);
  auto* eimport = emb->add_subcommand("import", "JSON Lines {id, v} to an embedding file");
  eimport->add_option("--jsonl", emb_in)->required();
  eimport->add_option("--out", emb_out)->required();
  eimport->add_option("--modality", modality)->check(CLI::IsMember({"image", "text", "sketch"}));
  auto* estub = emb->add_subcommand("stub", "stub-encode caption records into an embedding file");
  estub->add_option("--captions", captions)->required();
  estub->add_option("--out", emb_out)->required();
  estub->add_option("--dim", stub_dim)->capture_default_str();
  estub->add_option("--seed", stub_seed)->capture_default_str();

  IndexArgs ia;
  auto* index = app.add_subcommand("index", "IVF index snapshots");
  index->require_subcommand(1);
  auto* ibuild = index->add_subcommand("build", "train cells and write a snapshot");
  ibuild->add_option("--embeddings", ia.embeddings)->required();
  ibuild->add_option("--out", ia.out)->required();
  ibuild->add_option("--cells", ia.cells, "0 picks a size from the repository size");
  ibuild->add_option("--iters", ia.iters)->capture_default_str();
  ibuild->add_option("--seed", ia.seed)->capture_default_str();
  ibuild->add_option("--train-sample", ia.train_sample, "train cells on this many vectors (0 = all)");
  ibuild->add_option("--threads", ia.threads)->capture_default_str();
  ibuild->add_flag("--exact-only", ia.exact_only, "write a snapshot without cells");

  SearchArgs sa;
  auto* search = app.add_subcommand("search", "query an index snapshot");
  search->add_option("--index", sa.index)->required();
  search->add_option("--query", sa.query)->required();
  search->add_option("--k", sa.k)->capture_default_str()->check(CLI::Range(1, 100000));
  search->add_option("--nprobe", sa.nprobe, "cells to probe (default from repository size)");
  search->add_flag("--exact", sa.exact, "bypass the cells");
  auto* stub_flag = search->add_flag("--stub-encoder", sa.stub, "offline deterministic encoder (default unless --encoder-url)");
  search->add_option("--dim", sa.dim, "encoder output dim (default: index dim)");
  search->add_option("--seed", sa.seed, "stub encoder seed")->capture_default_str();
  stub_flag->excludes(search->add_option("--encoder-url", sa.encoder_url, "encoder sidecar, e.g. http://127.0.0.1:9000"));
  search->add_flag("--json", sa.json);

  std::string exp_config;
  bool exp_json = false;
  auto* eval = app.add_subcommand("eval", "experiment protocols");
  eval->require_subcommand(1);
  std::map<std::string, CLI::App*> exps;
  for (const char* name : {"exp1", "exp2", "exp3", "exp4"}) {
    auto* sub = eval->add_subcommand(name);
    sub->add_option("--config", exp_config)->required();
    sub->add_flag("--json", exp_json);
    exps[name] = sub;
  }

  ServeArgs sv;
  sv.host = env_or("GUING_HOST", sv.host);
  sv.port = std::atoi(env_or("GUING_PORT", std::to_string(sv.port)).c_str());
  sv.data_dir = env_or("GUING_DATA_DIR", sv.data_dir);
  sv.engines = env_or("GUING_ENGINES", sv.engines);
  sv.image_root = env_or("GUING_IMAGE_ROOT", sv.image_root);
  auto* serve = app.add_subcommand("serve", "HTTP service");
  serve->add_option("--host", sv.host)->capture_default_str();
  serve->add_option("--port", sv.port)->capture_default_str();
  serve->add_option("--data-dir", sv.data_dir, "judgment logs")->capture_default_str();
  serve->add_option("--engines", sv.engines, "engine registry JSON");
  serve->add_option("--image-root", sv.image_root)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kDataError;
  }

  try {
    if (prun->parsed()) return run_pipeline_cmd(pa);
    if (eimport->parsed()) return embeddings_import(emb_in, emb_out, modality);
    if (estub->parsed()) return embeddings_stub(captions, emb_out, stub_dim, stub_seed);
    if (ibuild->parsed()) return index_build(ia);
    if (search->parsed()) return search_cmd(sa);
    if (eval->parsed()) {
      const auto cfg = guing::KvConfig::load(exp_config);
      if (exps["exp1"]->parsed()) return eval_exp1(cfg, exp_json);
      if (exps["exp2"]->parsed()) return eval_exp2(cfg, exp_json);
      if (exps["exp3"]->parsed()) return eval_exp3(cfg, exp_json);
      return eval_exp4(cfg, exp_json);
    }
    if (serve->parsed()) return serve_cmd(sv);
  } catch (const guing::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == guing::Errc::EncoderUnavailable ? kEnvError : kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kDataError;
}

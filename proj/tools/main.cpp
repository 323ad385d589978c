// mmalign — one binary orchestrating the whole pipeline:
//   preprocess  window raw manifest data into a cache
//   synth       freeze a synthetic-dataset recipe into a run config
//   train       contrastive alignment training -> checkpoint + epoch log
//   probe       linear probes (video / imu / combined) on a checkpoint
//   retrieve    in-batch cross-modal retrieval on the test split
//   embed       export pooled embeddings as CMEB files
//   combine     weighted combination of two embedding files
//   tsne        2-D projection of embedding files -> CSV + summary
//   gradcheck   finite-difference audit of every gradient path
//   report      consolidated probe/retrieval/combination-sweep metrics
//
// Conventions: every command resolves defaults <- config file <- CLI flags,
// writes the resolved config next to its outputs, and is deterministic given
// (config, seed). Errors leave on stderr as single-line JSON
// {code, message, context}; exit code 0 iff the command succeeded.

#include <unistd.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmalign/align/trainer.hpp"
#include "mmalign/common/digest.hpp"
#include "mmalign/common/error.hpp"
#include "mmalign/common/parallel.hpp"
#include "mmalign/data/manifest.hpp"
#include "mmalign/data/synth.hpp"
#include "mmalign/eval/combine.hpp"
#include "mmalign/eval/export.hpp"
#include "mmalign/eval/probe.hpp"
#include "mmalign/eval/retrieval.hpp"
#include "mmalign/eval/tsne.hpp"
#include "mmalign/io/checkpoint.hpp"
#include "mmalign/io/cmeb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmalign;

namespace {

// ---------------------------------------------------------------------------
// Logging (human lines on stderr; machine-readable JSON on stdout)

bool use_color() {
  static const bool enabled = std::getenv("NO_COLOR") == nullptr && isatty(fileno(stderr)) == 1;
  return enabled;
}

void note(const std::string& tag, const std::string& msg) {
  if (use_color())
    std::cerr << "\033[36m[" << tag << "]\033[0m " << msg << "\n";
  else
    std::cerr << "[" << tag << "] " << msg << "\n";
}

// ---------------------------------------------------------------------------
// Small file helpers

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  MMA_REQUIRE(in.good(), "io.open", "cannot open JSON file: " + path);
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    raise("cli.config", "invalid JSON", path + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  MMA_REQUIRE(out.good(), "io.open", "cannot open for writing: " + path.string());
  out << text;
  MMA_REQUIRE(out.good(), "io.write", "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Config resolution: defaults <- --config file <- explicit CLI flags.

json default_config() {
  return json{
      {"seed", 0},
      {"threads", 0},
      {"data",
       {{"source", "synth"},
        {"cache_dir", ""},
        {"synth",
         {{"n_classes", 8},
          {"n_pairs", 512},
          {"latent_dim", 8},
          {"noise_sigma", 0.0},
          {"vision_noise_sigma", -1.0}}},
        {"split", {{"ratios", {0.7, 0.15, 0.15}}, {"policy", "by_subject"}}}}},
      // Desk-scale model profile; config files can restore the paper scale
      // (d_model 1024, 4 layers, stride 1) without code changes.
      {"model",
       {{"d_model", 64},
        {"conv_kernel", 3},
        {"conv_stride", 8},
        {"n_layers", 2},
        {"n_heads", 8},
        {"ff_mult", 4},
        {"dropout", 0.0},
        {"n_latents", 64},
        {"resampler_blocks", 2},
        {"resampler_heads", 8},
        {"resampler_ff_mult", 4},
        {"stub_tokens", 16},
        {"n_classes", 0},  // 0 = derive from the data source
        {"normalize", true},
        {"vision_mode", "stub"}}},
      {"loss", {{"tau", 0.07}, {"lambda_sup", 1.0}, {"symmetric", true}}},
      {"train",
       {{"batch_size", 64},
        {"max_epochs", 50},
        {"patience", 10},
        {"lr", 1e-3},
        {"min_lr", 0.0},
        {"weight_decay", 1e-2},
        {"eval_every", 1},
        {"raw_encoder", false}}},
      {"eval",
       {{"batch_size", 64},
        {"k_list", {1, 5}},
        {"probe_epochs", 200},
        {"probe_lr", 1e-3},
        {"perplexity", 30.0},
        {"tsne_iterations", 1000},
        {"tsne_learning_rate", 200.0},
        {"joint", true},
        {"weights", {0.8, 0.2}},
        {"weight_sweep", {0.0, 0.2, 0.5, 0.8, 1.0}}}}};
}

/// Flags shared by every subcommand.
struct Common {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_out = "out") {
  c.out = default_out;
  cmd->add_option("--config", c.config_path, "JSON config file (sections: data/model/loss/train/eval)");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "root seed; every RNG stream derives from it");
  cmd->add_option("--threads", c.threads, "worker thread cap (0 = machine cores)");
}

/// One pending `--flag value` -> config-path assignment.
struct Override {
  std::string pointer;  // e.g. "/train/batch_size"
  json value;
};

json resolve_config(const Common& c, const std::vector<Override>& overrides) {
  json cfg = default_config();
  if (!c.config_path.empty()) cfg.merge_patch(read_json_file(c.config_path));
  if (c.seed) cfg["seed"] = *c.seed;
  if (c.threads) cfg["threads"] = *c.threads;
  for (const auto& o : overrides) cfg[json::json_pointer(o.pointer)] = o.value;
  set_max_threads(cfg.at("threads").get<int>());
  return cfg;
}

void write_resolved_config(const json& cfg, const fs::path& out_dir) {
  write_text_file(out_dir / "config.json", cfg.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Typed views over the resolved config

data::SynthSpec synth_spec_of(const json& cfg) {
  const json& s = cfg.at("data").at("synth");
  data::SynthSpec spec;
  spec.n_classes = s.at("n_classes").get<int>();
  spec.n_pairs = s.at("n_pairs").get<int>();
  spec.latent_dim = s.at("latent_dim").get<int>();
  spec.noise_sigma = s.at("noise_sigma").get<double>();
  spec.vision_noise_sigma = s.at("vision_noise_sigma").get<double>();
  spec.seed = cfg.at("seed").get<std::uint64_t>();
  return spec;
}

/// Materializes the configured data source and splits it. Also reports how
/// many classes the source carries (head sizing).
data::DatasetSplit load_split(const json& cfg, int* data_classes) {
  const json& d = cfg.at("data");
  const std::string source = d.at("source").get<std::string>();
  std::vector<data::PairedSample> samples;
  if (source == "synth") {
    const data::SynthSpec spec = synth_spec_of(cfg);
    samples = data::synth_generate(spec);
    if (data_classes) *data_classes = spec.n_classes;
  } else if (source == "cache") {
    const std::string dir = d.at("cache_dir").get<std::string>();
    MMA_REQUIRE(!dir.empty(), "cli.config", "data.source=cache requires data.cache_dir");
    samples = data::load_cache(dir);
    if (data_classes) *data_classes = data::kNumClasses;
  } else {
    raise("cli.config", "data.source must be 'synth' or 'cache', got: " + source);
  }
  const json& sp = d.at("split");
  const auto r = sp.at("ratios").get<std::vector<double>>();
  MMA_REQUIRE(r.size() == 3, "cli.config", "data.split.ratios must have 3 entries");
  return data::split_dataset(samples, {r[0], r[1], r[2]},
                             data::split_policy_from_name(sp.at("policy").get<std::string>()),
                             cfg.at("seed").get<std::uint64_t>());
}

align::ModelConfig build_model_config(const json& cfg, int data_classes) {
  const json& m = cfg.at("model");
  align::ModelConfig mc;
  mc.encoder.d_model = m.at("d_model").get<int>();
  mc.encoder.conv_kernel = m.at("conv_kernel").get<int>();
  mc.encoder.conv_stride = m.at("conv_stride").get<int>();
  mc.encoder.n_layers = m.at("n_layers").get<int>();
  mc.encoder.n_heads = m.at("n_heads").get<int>();
  mc.encoder.ff_mult = m.at("ff_mult").get<int>();
  mc.encoder.dropout = m.at("dropout").get<double>();
  mc.resampler.d_model = mc.encoder.d_model;
  mc.resampler.n_latents = m.at("n_latents").get<int>();
  mc.resampler.n_blocks = m.at("resampler_blocks").get<int>();
  mc.resampler.n_heads = m.at("resampler_heads").get<int>();
  mc.resampler.ff_mult = m.at("resampler_ff_mult").get<int>();
  mc.stub.latent_dim = cfg.at("data").at("synth").at("latent_dim").get<int>();
  mc.stub.n_tokens = m.at("stub_tokens").get<int>();
  mc.stub.d_model = mc.encoder.d_model;
  mc.vision_mode = m.at("vision_mode").get<std::string>();
  const int requested = m.at("n_classes").get<int>();
  mc.n_classes = requested > 0 ? requested : data_classes;
  mc.normalize_embeddings = m.at("normalize").get<bool>();
  mc.init_seed = cfg.at("seed").get<std::uint64_t>();
  mc.validate();
  return mc;
}

align::Model model_from_checkpoint(const io::Checkpoint& ck) {
  align::Model model;
  model.cfg = align::model_config_from_json(ck.model_config);
  model.cfg.validate();
  model.params = ck.params;
  model.norm = align::norm_stats_from_json(ck.norm_stats);
  return model;
}

/// Checkpoint-consuming commands rebuild the dataset from the config. When
/// neither the config file nor --seed pins a root seed, inherit the
/// checkpoint's training seed so the regenerated samples are the ones the
/// model was actually trained against.
json resolve_config_for(const io::Checkpoint& ck, const Common& c,
                        const std::vector<Override>& overrides) {
  json cfg = resolve_config(c, overrides);
  const bool seed_in_file =
      !c.config_path.empty() && read_json_file(c.config_path).contains("seed");
  if (!c.seed && !seed_in_file && ck.train_state.contains("seed"))
    cfg["seed"] = ck.train_state.at("seed");
  return cfg;
}

// ---------------------------------------------------------------------------
// Shared evaluation plumbing

json probe_to_json(const eval::ProbeReport& r) {
  return json{{"modality", r.modality},   {"train_loss", r.train_loss},
              {"test_loss", r.test_loss}, {"train_acc", r.train_acc},
              {"test_acc", r.test_acc},   {"n_classes", r.n_classes},
              {"feature_dim", r.feature_dim}};
}

json retrieval_to_json(const eval::RetrievalReport& r) {
  json topk = json::object();
  for (const auto& [k, v] : r.topk) topk[std::to_string(k)] = v;
  return json{{"direction", r.direction},
              {"top1", r.top1},
              {"top5", r.top5},
              {"batch_size", r.batch_size},
              {"topk", topk}};
}

/// In-batch retrieval over sequential full batches of `batch_size` rows;
/// the trailing partial batch is dropped so every batch has the same chance
/// level. Returns averaged reports for both directions.
std::pair<eval::RetrievalReport, eval::RetrievalReport> batched_retrieval(
    const nn::MatF& imu, const nn::MatF& vis, int batch_size, const std::vector<int>& k_list,
    int* n_batches_out) {
  MMA_REQUIRE(batch_size >= 2, "eval.batch", "retrieval batch size must be >= 2");
  const int n_batches = static_cast<int>(imu.rows()) / batch_size;
  MMA_REQUIRE(n_batches >= 1, "eval.batch",
              "test split smaller than one retrieval batch (" + std::to_string(imu.rows()) +
                  " rows, batch " + std::to_string(batch_size) + ")");
  eval::RetrievalReport a, b;
  for (int i = 0; i < n_batches; ++i) {
    const nn::MatF bi = imu.middleRows(static_cast<Eigen::Index>(i) * batch_size, batch_size);
    const nn::MatF bv = vis.middleRows(static_cast<Eigen::Index>(i) * batch_size, batch_size);
    auto [ra, rb] = eval::retrieval_accuracy(bi, bv, k_list);
    if (i == 0) {
      a = ra;
      b = rb;
    } else {
      a.top1 += ra.top1;
      a.top5 += ra.top5;
      b.top1 += rb.top1;
      b.top5 += rb.top5;
      for (const auto& [k, v] : ra.topk) a.topk[k] += v;
      for (const auto& [k, v] : rb.topk) b.topk[k] += v;
    }
  }
  const double inv = 1.0 / n_batches;
  a.top1 *= inv;
  a.top5 *= inv;
  b.top1 *= inv;
  b.top5 *= inv;
  for (auto& [k, v] : a.topk) v *= inv;
  for (auto& [k, v] : b.topk) v *= inv;
  if (n_batches_out) *n_batches_out = n_batches;
  return {a, b};
}

nn::MatF hconcat(const nn::MatF& a, const nn::MatF& b) {
  MMA_REQUIRE(a.rows() == b.rows(), "eval.shape", "feature row counts differ");
  nn::MatF out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

std::array<double, 2> parse_weights(const std::string& s) {
  const auto comma = s.find(',');
  MMA_REQUIRE(comma != std::string::npos, "cli.weights",
              "--weights expects 'w_vision,w_imu' (e.g. 0.8,0.2)");
  try {
    return {std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1))};
  } catch (const std::exception&) {
    raise("cli.weights", "--weights values must be numbers: " + s);
  }
}

struct LoadedEmbeddings {
  nn::MatF mat;
  io::CmebSidecar sidecar;  // empty vectors when no sidecar file exists
};

LoadedEmbeddings load_embeddings(const std::string& path) {
  LoadedEmbeddings e;
  e.mat = io::read_cmeb(path);
  if (io::cmeb_sidecar_exists(path)) e.sidecar = io::read_cmeb_sidecar(path);
  return e;
}

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommand: preprocess

struct PreprocessOpts {
  Common common;
  std::string manifest;
};

void run_preprocess(const PreprocessOpts& o) {
  const json cfg = resolve_config(o.common, {});
  const data::PreprocessSummary s =
      data::preprocess_manifest(o.manifest, o.common.out, cfg.at("seed").get<std::uint64_t>());
  write_resolved_config(cfg, o.common.out);
  note("preprocess", "windowed " + std::to_string(s.n_samples) + " samples into " + o.common.out);
  json per_class = json::object(), per_subject = json::object();
  for (const auto& [k, v] : s.per_class) per_class[std::to_string(k)] = v;
  for (const auto& [k, v] : s.per_subject) per_subject[std::to_string(k)] = v;
  std::cout << json{{"n_samples", s.n_samples},
                    {"per_class", per_class},
                    {"per_subject", per_subject},
                    {"cache_dir", o.common.out}}
                   .dump()
            << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand: synth

struct SynthOpts {
  Common common;
  std::vector<Override> overrides;
};

void run_synth(const SynthOpts& o) {
  const json cfg = resolve_config(o.common, o.overrides);
  const data::SynthSpec spec = synth_spec_of(cfg);
  const std::vector<data::PairedSample> samples = data::synth_generate(spec);
  std::map<int, int> per_class;
  for (const auto& s : samples) ++per_class[s.label];
  json per_class_j = json::object();
  for (const auto& [k, v] : per_class) per_class_j[std::to_string(k)] = v;

  write_resolved_config(cfg, o.common.out);
  const json summary{{"n_samples", static_cast<int>(samples.size())},
                     {"n_classes", spec.n_classes},
                     {"latent_dim", spec.latent_dim},
                     {"noise_sigma", spec.noise_sigma},
                     {"vision_noise_sigma", spec.vision_noise_sigma},
                     {"per_class", per_class_j}};
  write_text_file(fs::path(o.common.out) / "summary.json", summary.dump(2) + "\n");
  note("synth", "recipe for " + std::to_string(samples.size()) + " pairs frozen into " +
                    o.common.out + "/config.json");
  std::cout << summary.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand: train

struct TrainOpts {
  Common common;
  std::vector<Override> overrides;
};

json epoch_to_json(const align::EpochLog& e) {
  return json{{"epoch", e.epoch},
              {"train_info_nce", e.train_info_nce},
              {"train_sup", e.train_sup},
              {"val_info_nce", e.val_info_nce},
              {"val_sup", e.val_sup},
              {"val_total", e.val_total},
              {"lr", e.lr},
              {"wall_s", e.wall_s}};
}

void run_train(const TrainOpts& o) {
  const json cfg = resolve_config(o.common, o.overrides);
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();

  int data_classes = 0;
  const data::DatasetSplit split = load_split(cfg, &data_classes);
  note("train", "split sizes train/val/test = " + std::to_string(split.train.size()) + "/" +
                    std::to_string(split.val.size()) + "/" + std::to_string(split.test.size()));

  align::Model model = align::make_model(build_model_config(cfg, data_classes));
  model.norm = data::compute_norm_stats(split.train);

  const json& t = cfg.at("train");
  align::TrainConfig tc;
  tc.batch_size = t.at("batch_size").get<int>();
  tc.max_epochs = t.at("max_epochs").get<int>();
  tc.patience = t.at("patience").get<int>();
  tc.lr = t.at("lr").get<double>();
  tc.min_lr = t.at("min_lr").get<double>();
  tc.weight_decay = t.at("weight_decay").get<double>();
  tc.eval_every = t.at("eval_every").get<int>();
  tc.raw_encoder = t.at("raw_encoder").get<bool>();
  tc.seed = seed;

  const json& l = cfg.at("loss");
  align::LossConfig lc;
  lc.tau = l.at("tau").get<double>();
  lc.lambda_sup = l.at("lambda_sup").get<double>();
  lc.symmetric = l.at("symmetric").get<bool>();

  note("train", "encoder " + std::to_string(model.cfg.encoder.d_model) + "d x " +
                    std::to_string(model.cfg.encoder.n_layers) + " layers, " +
                    std::to_string(model.params.size_scalars(true)) + " trainable scalars");

  const fs::path out(o.common.out);
  fs::create_directories(out);
  std::ofstream log_out(out / "train_log.jsonl", std::ios::binary | std::ios::trunc);
  MMA_REQUIRE(log_out.good(), "io.open", "cannot open train log for writing");

  align::TrainResult result =
      align::train(model, split, tc, lc, [&](const align::EpochLog& e) {
        log_out << epoch_to_json(e).dump() << "\n";
        log_out.flush();
        std::ostringstream line;
        line << "epoch " << e.epoch + 1 << "/" << tc.max_epochs << "  nce " << std::setprecision(4)
             << e.train_info_nce << "  sup " << e.train_sup << "  val " << e.val_total << "  ("
             << std::setprecision(2) << e.wall_s << "s)";
        note("train", line.str());
      });

  io::save_checkpoint((out / "checkpoint.cmar").string(), result.checkpoint);
  write_resolved_config(cfg, out);

  const json summary{{"best_epoch", result.best_epoch},
                     {"best_val", result.best_val},
                     {"epochs_run", result.epochs_run},
                     {"param_digest", digest_hex(result.checkpoint.params.digest())},
                     {"trainable_scalars", result.checkpoint.params.size_scalars(true)},
                     {"checkpoint", (out / "checkpoint.cmar").string()}};
  note("train", "best epoch " + std::to_string(result.best_epoch) + ", val " +
                    std::to_string(result.best_val) + ", checkpoint saved");
  std::cout << summary.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand: probe

struct EvalOpts {
  Common common;
  std::string checkpoint;
  std::vector<Override> overrides;
  bool raw_encoder = false;
};

/// Selects one split part, or (for "all") every sample back in canonical
/// dataset order, independent of split policy and seed.
std::vector<data::PairedSample> select_part(const data::DatasetSplit& split,
                                            const std::string& which) {
  if (which == "train") return split.train;
  if (which == "val") return split.val;
  if (which == "test") return split.test;
  MMA_REQUIRE(which == "all", "cli.config", "--split must be train|val|test|all");
  std::vector<data::PairedSample> all;
  all.reserve(split.train.size() + split.val.size() + split.test.size());
  for (const auto* part : {&split.train, &split.val, &split.test})
    all.insert(all.end(), part->begin(), part->end());
  std::sort(all.begin(), all.end(),
            [](const data::PairedSample& a, const data::PairedSample& b) { return a.id < b.id; });
  return all;
}

void run_probe(const EvalOpts& o) {
  const io::Checkpoint ck = io::load_checkpoint(o.checkpoint);
  const json cfg = resolve_config_for(ck, o.common, o.overrides);
  const align::Model model = model_from_checkpoint(ck);
  const data::DatasetSplit split = load_split(cfg, nullptr);

  note("probe", "embedding " + std::to_string(split.train.size()) + " train / " +
                    std::to_string(split.test.size()) + " test samples");
  const align::DatasetEmbeddings tr = align::embed_dataset(model, split.train, o.raw_encoder);
  const align::DatasetEmbeddings te = align::embed_dataset(model, split.test, o.raw_encoder);

  eval::ProbeConfig pc;
  pc.epochs = cfg.at("eval").at("probe_epochs").get<int>();
  pc.lr = cfg.at("eval").at("probe_lr").get<double>();
  pc.seed = cfg.at("seed").get<std::uint64_t>();
  const int n_classes = model.cfg.n_classes;

  const auto video = eval::linear_probe(tr.vis_norm, tr.labels, te.vis_norm, te.labels, n_classes,
                                        pc, "video");
  const auto imu =
      eval::linear_probe(tr.imu_norm, tr.labels, te.imu_norm, te.labels, n_classes, pc, "imu");
  const auto combined = eval::linear_probe(hconcat(tr.vis_norm, tr.imu_norm), tr.labels,
                                           hconcat(te.vis_norm, te.imu_norm), te.labels,
                                           n_classes, pc, "combined");

  const json report = json::array({probe_to_json(video), probe_to_json(imu),
                                   probe_to_json(combined)});
  write_resolved_config(cfg, o.common.out);
  write_text_file(fs::path(o.common.out) / "probe_report.json", report.dump(2) + "\n");
  for (const auto& r : {video, imu, combined})
    note("probe", r.modality + " test acc " + std::to_string(r.test_acc) + "%");
  std::cout << report.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand: retrieve

struct RetrieveOpts {
  EvalOpts eval;
  std::string split = "test";  // train | val | test | all
};

void run_retrieve(const RetrieveOpts& ro) {
  const EvalOpts& o = ro.eval;
  const io::Checkpoint ck = io::load_checkpoint(o.checkpoint);
  const json cfg = resolve_config_for(ck, o.common, o.overrides);
  const align::Model model = model_from_checkpoint(ck);
  const std::vector<data::PairedSample> part = select_part(load_split(cfg, nullptr), ro.split);
  const align::DatasetEmbeddings te = align::embed_dataset(model, part, o.raw_encoder);

  const int batch = cfg.at("eval").at("batch_size").get<int>();
  const auto k_list = cfg.at("eval").at("k_list").get<std::vector<int>>();
  int n_batches = 0;
  auto [i2v, v2i] = batched_retrieval(te.imu_norm, te.vis_norm, batch, k_list, &n_batches);

  const json report{{"imu_to_vision", retrieval_to_json(i2v)},
                    {"vision_to_imu", retrieval_to_json(v2i)},
                    {"batch_size", batch},
                    {"n_batches", n_batches},
                    {"split", ro.split},
                    {"n_samples", static_cast<int>(part.size())}};
  write_resolved_config(cfg, o.common.out);
  write_text_file(fs::path(o.common.out) / "retrieve_report.json", report.dump(2) + "\n");
  note("retrieve", "imu->vision top-1 " + std::to_string(i2v.top1) + "%, vision->imu top-1 " +
                       std::to_string(v2i.top1) + "% over " + std::to_string(n_batches) +
                       " batches of " + std::to_string(batch));
  std::cout << report.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand: embed

struct EmbedOpts {
  EvalOpts eval;
  std::string modality = "both";  // imu | vision | both
  std::string split = "all";      // train | val | test | all
};

void run_embed(const EmbedOpts& o) {
  const io::Checkpoint ck = io::load_checkpoint(o.eval.checkpoint);
  const json cfg = resolve_config_for(ck, o.eval.common, o.eval.overrides);
  const align::Model model = model_from_checkpoint(ck);
  const data::DatasetSplit split = load_split(cfg, nullptr);

  std::vector<std::pair<std::string, const std::vector<data::PairedSample>*>> parts;
  if (o.split == "train" || o.split == "all") parts.emplace_back("train", &split.train);
  if (o.split == "val" || o.split == "all") parts.emplace_back("val", &split.val);
  if (o.split == "test" || o.split == "all") parts.emplace_back("test", &split.test);
  MMA_REQUIRE(!parts.empty(), "cli.config", "--split must be train|val|test|all");

  std::vector<eval::Modality> modalities;
  if (o.modality == "imu" || o.modality == "both") modalities.push_back(eval::Modality::imu);
  if (o.modality == "vision" || o.modality == "both")
    modalities.push_back(eval::Modality::vision);
  MMA_REQUIRE(!modalities.empty(), "cli.config", "--modality must be imu|vision|both");

  const fs::path emb_dir = fs::path(o.eval.common.out) / "emb";
  fs::create_directories(emb_dir);
  json written = json::array();
  for (const auto& [part_name, part] : parts) {
    for (const eval::Modality m : modalities) {
      const fs::path path = emb_dir / (std::string(eval::modality_name(m)) + "_" + part_name +
                                       ".cmeb");
      const nn::MatF mat =
          eval::export_embeddings(model, *part, m, path.string(), o.eval.raw_encoder);
      written.push_back(json{{"path", path.string()},
                             {"rows", static_cast<int>(mat.rows())},
                             {"dim", static_cast<int>(mat.cols())}});
      note("embed", path.string() + " (" + std::to_string(mat.rows()) + " x " +
                        std::to_string(mat.cols()) + ")");
    }
  }
  write_resolved_config(cfg, o.eval.common.out);
  std::cout << json{{"written", written}}.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand: combine

struct CombineOpts {
  Common common;
  std::string vision_path;
  std::string imu_path;
  std::string weights;
  bool no_renormalize = false;
};

void run_combine(const CombineOpts& o) {
  std::vector<Override> overrides;
  if (!o.weights.empty()) {
    const auto w = parse_weights(o.weights);
    overrides.push_back({"/eval/weights", json::array({w[0], w[1]})});
  }
  const json cfg = resolve_config(o.common, overrides);
  const auto wv = cfg.at("eval").at("weights").get<std::vector<double>>();
  MMA_REQUIRE(wv.size() == 2, "cli.weights", "eval.weights must have 2 entries");
  eval::CombinationWeights w;
  w.w_vision = wv[0];
  w.w_imu = wv[1];

  const LoadedEmbeddings vis = load_embeddings(o.vision_path);
  const LoadedEmbeddings imu = load_embeddings(o.imu_path);
  const nn::MatF combined = eval::combine_embeddings(vis.mat, imu.mat, w, !o.no_renormalize);

  const fs::path out_path = fs::path(o.common.out) / "combined.cmeb";
  fs::create_directories(o.common.out);
  if (!vis.sidecar.ids.empty())
    io::write_cmeb(out_path.string(), combined, vis.sidecar);
  else
    io::write_cmeb(out_path.string(), combined);
  write_resolved_config(cfg, o.common.out);
  const json summary{{"path", out_path.string()},
                     {"rows", static_cast<int>(combined.rows())},
                     {"dim", static_cast<int>(combined.cols())},
                     {"w_vision", w.w_vision},
                     {"w_imu", w.w_imu},
                     {"renormalized", !o.no_renormalize}};
  note("combine", out_path.string() + " with w = (" + std::to_string(w.w_vision) + ", " +
                      std::to_string(w.w_imu) + ")");
  std::cout << summary.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand: tsne

struct TsneOpts {
  Common common;
  std::string imu_path;
  std::string vision_path;
  std::vector<Override> overrides;
  bool joint = true;
  bool separate = false;
};

void write_tsne_csv(const fs::path& path, const nn::MatD& coords, const io::CmebSidecar& sidecar,
                    Eigen::Index row0) {
  std::ostringstream csv;
  csv << "id,label,x,y\n";
  for (Eigen::Index i = 0; i < coords.rows(); ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    const std::int64_t id = k < sidecar.ids.size() ? sidecar.ids[k] : static_cast<std::int64_t>(i);
    const int label = k < sidecar.labels.size() ? sidecar.labels[k] : -1;
    csv << id << "," << label << "," << csv_num(coords(row0 + i, 0)) << ","
        << csv_num(coords(row0 + i, 1)) << "\n";
  }
  write_text_file(path, csv.str());
}

void run_tsne(const TsneOpts& o) {
  const json cfg = resolve_config(o.common, o.overrides);
  MMA_REQUIRE(!o.imu_path.empty() || !o.vision_path.empty(), "cli.config",
              "tsne needs --imu and/or --vision embedding files");

  eval::TsneConfig tc;
  tc.perplexity = cfg.at("eval").at("perplexity").get<double>();
  tc.iterations = cfg.at("eval").at("tsne_iterations").get<int>();
  tc.learning_rate = cfg.at("eval").at("tsne_learning_rate").get<double>();
  tc.seed = cfg.at("seed").get<std::uint64_t>();
  const bool joint = !o.separate && cfg.at("eval").at("joint").get<bool>();

  const fs::path out(o.common.out);
  fs::create_directories(out);
  json summary{{"iterations", tc.iterations},
               {"perplexity", tc.perplexity},
               {"seed", tc.seed},
               {"mode", joint ? "joint" : "separate"}};

  if (!o.imu_path.empty() && !o.vision_path.empty() && joint) {
    const LoadedEmbeddings vis = load_embeddings(o.vision_path);
    const LoadedEmbeddings imu = load_embeddings(o.imu_path);
    MMA_REQUIRE(vis.mat.cols() == imu.mat.cols(), "cli.config",
                "tsne --joint needs equal embedding dimensions");
    nn::MatF x(vis.mat.rows() + imu.mat.rows(), vis.mat.cols());
    x.topRows(vis.mat.rows()) = vis.mat;
    x.bottomRows(imu.mat.rows()) = imu.mat;
    const eval::TsneResult res = eval::tsne(x, tc);
    write_tsne_csv(out / "tsne_vision.csv", res.coords.topRows(vis.mat.rows()), vis.sidecar, 0);
    write_tsne_csv(out / "tsne_imu.csv", res.coords.bottomRows(imu.mat.rows()), imu.sidecar, 0);
    summary["final_kl"] = res.kl;
    note("tsne", "joint map over " + std::to_string(x.rows()) + " points, final KL " +
                     std::to_string(res.kl));
  } else {
    json kls = json::object();
    for (const auto& [name, path] :
         {std::pair<std::string, std::string>{"vision", o.vision_path}, {"imu", o.imu_path}}) {
      if (path.empty()) continue;
      const LoadedEmbeddings e = load_embeddings(path);
      const eval::TsneResult res = eval::tsne(e.mat, tc);
      write_tsne_csv(out / ("tsne_" + name + ".csv"), res.coords, e.sidecar, 0);
      kls[name] = res.kl;
      note("tsne", name + " map over " + std::to_string(e.mat.rows()) + " points, final KL " +
                       std::to_string(res.kl));
    }
    summary["final_kl"] = kls.size() == 1 ? kls.begin().value() : kls;
  }
  write_resolved_config(cfg, o.common.out);
  write_text_file(out / "tsne_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Subcommand: gradcheck

void run_gradcheck(const Common& common) {
  const json cfg = resolve_config(common, {});
  const align::GradSuiteReport rep = align::run_grad_suite(cfg.at("seed").get<std::uint64_t>());
  const json report{{"info_nce", rep.info_nce},   {"supervised", rep.supervised},
                    {"encoder", rep.encoder},     {"resampler", rep.resampler},
                    {"full_path", rep.full_path}, {"max", rep.max()},
                    {"tolerance", 1e-4},          {"pass", rep.pass()},
                    {"wall_s", rep.wall_s}};
  write_resolved_config(cfg, common.out);
  write_text_file(fs::path(common.out) / "gradcheck.json", report.dump(2) + "\n");
  std::cout << report.dump() << "\n";
  if (!rep.pass())
    raise("gradcheck.fail", "analytic gradients diverge from finite differences",
          "max relative error " + std::to_string(rep.max()));
  note("gradcheck", "all paths within 1e-4 (max " + std::to_string(rep.max()) + ")");
}

// ---------------------------------------------------------------------------
// Subcommand: report

struct ReportOpts {
  Common common;
  std::string run_dir;
  std::vector<Override> overrides;
  bool out_set = false;
};

void run_report(const ReportOpts& o) {
  const fs::path run(o.run_dir);
  // The report is assembled strictly from on-disk artifacts of a finished
  // run: checkpoint + exported embeddings. Anything missing is listed.
  const fs::path ckpt_path = run / "checkpoint.cmar";
  const fs::path cfg_path = run / "config.json";
  const std::array<fs::path, 4> emb_paths = {
      run / "emb" / "imu_train.cmeb", run / "emb" / "vision_train.cmeb",
      run / "emb" / "imu_test.cmeb", run / "emb" / "vision_test.cmeb"};
  std::string missing;
  for (const fs::path& p : {ckpt_path, cfg_path, emb_paths[0], emb_paths[1], emb_paths[2],
                            emb_paths[3]})
    if (!fs::exists(p)) missing += (missing.empty() ? "" : ", ") + p.string();
  if (!missing.empty())
    raise("report.missing", "run directory lacks required artifacts (run train and embed first)",
          missing);

  Common common = o.common;
  common.config_path = common.config_path.empty() ? cfg_path.string() : common.config_path;
  if (!o.out_set) common.out = run.string();
  const json cfg = resolve_config(common, o.overrides);

  const io::Checkpoint ck = io::load_checkpoint(ckpt_path.string());
  const int n_classes = ck.model_config.at("n_classes").get<int>();

  const LoadedEmbeddings imu_tr = load_embeddings(emb_paths[0].string());
  const LoadedEmbeddings vis_tr = load_embeddings(emb_paths[1].string());
  const LoadedEmbeddings imu_te = load_embeddings(emb_paths[2].string());
  const LoadedEmbeddings vis_te = load_embeddings(emb_paths[3].string());
  MMA_REQUIRE(imu_tr.sidecar.labels == vis_tr.sidecar.labels &&
                  imu_te.sidecar.labels == vis_te.sidecar.labels,
              "report.labels", "imu/vision embedding sidecars disagree on labels");
  MMA_REQUIRE(!imu_tr.sidecar.labels.empty() && !imu_te.sidecar.labels.empty(), "report.labels",
              "embedding files lack label sidecars; re-run `mmalign embed`");

  eval::ProbeConfig pc;
  pc.epochs = cfg.at("eval").at("probe_epochs").get<int>();
  pc.lr = cfg.at("eval").at("probe_lr").get<double>();
  pc.seed = cfg.at("seed").get<std::uint64_t>();

  note("report", "probing video / imu / combined features");
  const auto video = eval::linear_probe(vis_tr.mat, vis_tr.sidecar.labels, vis_te.mat,
                                        vis_te.sidecar.labels, n_classes, pc, "video");
  const auto imu = eval::linear_probe(imu_tr.mat, imu_tr.sidecar.labels, imu_te.mat,
                                      imu_te.sidecar.labels, n_classes, pc, "imu");
  const auto combined = eval::linear_probe(
      hconcat(vis_tr.mat, imu_tr.mat), imu_tr.sidecar.labels, hconcat(vis_te.mat, imu_te.mat),
      imu_te.sidecar.labels, n_classes, pc, "combined");

  const int batch = cfg.at("eval").at("batch_size").get<int>();
  const auto k_list = cfg.at("eval").at("k_list").get<std::vector<int>>();
  int n_batches = 0;
  auto [i2v, v2i] = batched_retrieval(imu_te.mat, vis_te.mat, batch, k_list, &n_batches);

  note("report", "combination sweep (combined query -> vision candidates)");
  json sweep = json::array();
  for (const double w : cfg.at("eval").at("weight_sweep").get<std::vector<double>>()) {
    eval::CombinationWeights cw;
    cw.w_vision = w;
    cw.w_imu = 1.0 - w;
    const nn::MatF c = eval::combine_embeddings(vis_te.mat, imu_te.mat, cw, true);
    auto [c2v, unused] = batched_retrieval(c, vis_te.mat, batch, k_list, nullptr);
    (void)unused;
    sweep.push_back(json{{"w_vision", cw.w_vision},
                         {"w_imu", cw.w_imu},
                         {"top1", c2v.top1},
                         {"top5", c2v.top5}});
  }

  const json report{
      {"probe", json::array({probe_to_json(video), probe_to_json(imu), probe_to_json(combined)})},
      {"retrieval",
       {{"imu_to_vision", retrieval_to_json(i2v)},
        {"vision_to_imu", retrieval_to_json(v2i)},
        {"batch_size", batch},
        {"n_batches", n_batches}}},
      {"combination_sweep", sweep},
      {"checkpoint",
       {{"param_digest", digest_hex(ck.params.digest())},
        {"trainable_scalars", ck.params.size_scalars(true)},
        {"n_classes", n_classes}}},
      {"seed", cfg.at("seed").get<std::uint64_t>()}};
  write_text_file(fs::path(common.out) / "report.json", report.dump(2) + "\n");
  note("report", "report.json written to " + common.out);
  std::cout << report.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Option plumbing: tie an optional flag to a config-pointer override.

template <typename T>
void add_override(CLI::App* cmd, std::vector<Override>& sink, const std::string& flag,
                  const std::string& pointer, const std::string& help) {
  cmd->add_option_function<T>(
         flag, [&sink, pointer](const T& v) { sink.push_back({pointer, json(v)}); }, help)
      ->expected(1);
}

void add_flag_override(CLI::App* cmd, std::vector<Override>& sink, const std::string& flag,
                       const std::string& pointer, const std::string& help) {
  cmd->add_flag_callback(
      flag, [&sink, pointer]() { sink.push_back({pointer, json(true)}); }, help);
}

/// Dataset flags shared by synth/train/probe/retrieve/embed.
void add_data_flags(CLI::App* cmd, std::vector<Override>& sink) {
  cmd->add_flag_callback(
      "--synth", [&sink]() { sink.push_back({"/data/source", json("synth")}); },
      "use the synthetic paired dataset (default source)");
  cmd->add_option_function<std::string>(
      "--cache",
      [&sink](const std::string& dir) {
        sink.push_back({"/data/cache_dir", json(dir)});
        sink.push_back({"/data/source", json("cache")});
      },
      "preprocessed cache directory (sets data.source=cache)");
  add_override<int>(cmd, sink, "--classes", "/data/synth/n_classes", "synthetic class count");
  add_override<int>(cmd, sink, "--pairs", "/data/synth/n_pairs", "synthetic pair count");
  add_override<int>(cmd, sink, "--latent-dim", "/data/synth/latent_dim",
                    "synthetic latent dimension");
  add_override<double>(cmd, sink, "--noise", "/data/synth/noise_sigma",
                       "IMU-side latent noise sigma");
  add_override<double>(cmd, sink, "--vision-noise", "/data/synth/vision_noise_sigma",
                       "vision-side latent noise sigma (-1 = same as --noise)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmalign: contrastive IMU-vision embedding alignment (desk-scale artifact)"};
  app.require_subcommand(1);

  // --- preprocess ---
  PreprocessOpts pre;
  auto* cmd_pre = app.add_subcommand("preprocess", "window a raw manifest into a dataset cache");
  add_common(cmd_pre, pre.common, "cache");
  cmd_pre->add_option("--manifest", pre.manifest, "newline-delimited JSON manifest")->required();
  cmd_pre->callback([&pre]() { run_preprocess(pre); });

  // --- synth ---
  SynthOpts synth;
  auto* cmd_synth = app.add_subcommand("synth", "freeze a synthetic-dataset recipe + summary");
  add_common(cmd_synth, synth.common);
  add_data_flags(cmd_synth, synth.overrides);
  cmd_synth->callback([&synth]() { run_synth(synth); });

  // --- train ---
  TrainOpts train;
  auto* cmd_train = app.add_subcommand("train", "contrastive alignment training");
  add_common(cmd_train, train.common);
  add_data_flags(cmd_train, train.overrides);
  add_override<int>(cmd_train, train.overrides, "--batch-size", "/train/batch_size",
                    "contrastive batch size (>= 2)");
  add_override<int>(cmd_train, train.overrides, "--max-epochs", "/train/max_epochs",
                    "epoch cap");
  add_override<int>(cmd_train, train.overrides, "--patience", "/train/patience",
                    "early-stopping patience (validation epochs)");
  add_override<double>(cmd_train, train.overrides, "--lr", "/train/lr", "peak learning rate");
  add_override<double>(cmd_train, train.overrides, "--weight-decay", "/train/weight_decay",
                       "AdamW decoupled weight decay");
  add_override<double>(cmd_train, train.overrides, "--tau", "/loss/tau",
                       "infoNCE temperature");
  add_override<double>(cmd_train, train.overrides, "--lambda-sup", "/loss/lambda_sup",
                       "supervised-loss weight");
  add_flag_override(cmd_train, train.overrides, "--raw-encoder", "/train/raw_encoder",
                    "bypass the resampler; mean-pool encoder tokens");
  add_override<int>(cmd_train, train.overrides, "--d-model", "/model/d_model",
                    "model width (divisible by heads)");
  add_override<int>(cmd_train, train.overrides, "--layers", "/model/n_layers",
                    "encoder transformer layers");
  add_override<int>(cmd_train, train.overrides, "--conv-stride", "/model/conv_stride",
                    "conv stem stride (tokens = ceil(256/stride))");
  cmd_train->callback([&train]() { run_train(train); });

  // --- probe ---
  EvalOpts probe;
  auto* cmd_probe = app.add_subcommand("probe", "linear probes: video / imu / combined");
  add_common(cmd_probe, probe.common);
  add_data_flags(cmd_probe, probe.overrides);
  cmd_probe->add_option("--checkpoint", probe.checkpoint, "trained checkpoint (.cmar)")
      ->required();
  cmd_probe->add_flag("--raw-encoder", probe.raw_encoder,
                      "probe mean-pooled encoder tokens instead of resampled embeddings");
  add_override<int>(cmd_probe, probe.overrides, "--probe-epochs", "/eval/probe_epochs",
                    "probe training epochs");
  cmd_probe->callback([&probe]() { run_probe(probe); });

  // --- retrieve ---
  RetrieveOpts retr;
  auto* cmd_retr = app.add_subcommand("retrieve", "in-batch cross-modal retrieval");
  add_common(cmd_retr, retr.eval.common);
  add_data_flags(cmd_retr, retr.eval.overrides);
  cmd_retr->add_option("--checkpoint", retr.eval.checkpoint, "trained checkpoint (.cmar)")
      ->required();
  cmd_retr->add_option("--split", retr.split, "train | val | test | all")
      ->capture_default_str();
  cmd_retr->add_flag("--raw-encoder", retr.eval.raw_encoder, "bypass the resampler");
  add_override<int>(cmd_retr, retr.eval.overrides, "--batch-size", "/eval/batch_size",
                    "retrieval batch size");
  cmd_retr->callback([&retr]() { run_retrieve(retr); });

  // --- embed ---
  EmbedOpts embed;
  auto* cmd_embed = app.add_subcommand("embed", "export pooled embeddings as CMEB files");
  add_common(cmd_embed, embed.eval.common);
  add_data_flags(cmd_embed, embed.eval.overrides);
  cmd_embed->add_option("--checkpoint", embed.eval.checkpoint, "trained checkpoint (.cmar)")
      ->required();
  cmd_embed->add_option("--modality", embed.modality, "imu | vision | both")
      ->capture_default_str();
  cmd_embed->add_option("--split", embed.split, "train | val | test | all")
      ->capture_default_str();
  cmd_embed->add_flag("--raw-encoder", embed.eval.raw_encoder, "bypass the resampler");
  cmd_embed->callback([&embed]() { run_embed(embed); });

  // --- combine ---
  CombineOpts comb;
  auto* cmd_comb = app.add_subcommand("combine", "weighted combination of two embedding files");
  add_common(cmd_comb, comb.common);
  cmd_comb->add_option("--vision", comb.vision_path, "vision embedding CMEB")->required();
  cmd_comb->add_option("--imu", comb.imu_path, "IMU embedding CMEB")->required();
  cmd_comb->add_option("--weights", comb.weights, "w_vision,w_imu (default 0.8,0.2)");
  cmd_comb->add_flag("--no-renormalize", comb.no_renormalize,
                     "keep the raw weighted sum instead of re-normalizing");
  cmd_comb->callback([&comb]() { run_combine(comb); });

  // --- tsne ---
  TsneOpts tsne;
  auto* cmd_tsne = app.add_subcommand("tsne", "2-D t-SNE projection of embedding files");
  add_common(cmd_tsne, tsne.common);
  cmd_tsne->add_option("--imu", tsne.imu_path, "IMU embedding CMEB");
  cmd_tsne->add_option("--vision", tsne.vision_path, "vision embedding CMEB");
  add_override<double>(cmd_tsne, tsne.overrides, "--perplexity", "/eval/perplexity",
                       "target perplexity (needs >= 3*perplexity+1 points)");
  add_override<int>(cmd_tsne, tsne.overrides, "--iterations", "/eval/tsne_iterations",
                    "gradient-descent steps");
  cmd_tsne->add_flag("--joint", tsne.joint,
                     "fit one map over the concatenated point set (default)");
  cmd_tsne->add_flag("--separate", tsne.separate, "fit one map per modality");
  cmd_tsne->callback([&tsne]() { run_tsne(tsne); });

  // --- gradcheck ---
  Common gc_common;
  auto* cmd_gc = app.add_subcommand("gradcheck", "finite-difference audit of gradient paths");
  add_common(cmd_gc, gc_common);
  cmd_gc->callback([&gc_common]() { run_gradcheck(gc_common); });

  // --- report ---
  ReportOpts rep;
  auto* cmd_rep = app.add_subcommand("report", "consolidated metrics from a finished run");
  add_common(cmd_rep, rep.common);
  cmd_rep->add_option("--run", rep.run_dir, "run directory (train + embed outputs)")->required();
  add_override<int>(cmd_rep, rep.overrides, "--batch-size", "/eval/batch_size",
                    "retrieval batch size");
  add_override<int>(cmd_rep, rep.overrides, "--probe-epochs", "/eval/probe_epochs",
                    "probe training epochs");
  cmd_rep->callback([&rep, cmd_rep]() {
    rep.out_set = cmd_rep->count("--out") > 0;
    run_report(rep);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"code", "cli.parse"}, {"message", e.what()}, {"context", ""}}.dump()
              << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << json{{"code", e.code()}, {"message", e.what()}, {"context", e.context()}}.dump()
              << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"code", "internal"}, {"message", e.what()}, {"context", ""}}.dump()
              << "\n";
    return 1;
  }
  return 0;
}

#include "mmalign/align/trainer.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <vector>

#include "mmalign/common/parallel.hpp"
#include "mmalign/common/rng.hpp"
#include "mmalign/data/batches.hpp"
#include "mmalign/nn/adamw.hpp"
#include "mmalign/nn/gradcheck.hpp"

namespace mmalign::align {

// ---- model assembly ---------------------------------------------------------

void ModelConfig::validate() const {
  encoder.validate();
  resampler.validate();
  MMA_REQUIRE(encoder.d_model == resampler.d_model, "model.config",
              "encoder and resampler must share d_model");
  MMA_REQUIRE(vision_mode == "stub" || vision_mode == "precomputed", "model.config",
              "vision_mode must be 'stub' or 'precomputed'");
  if (vision_mode == "stub") {
    stub.validate();
    MMA_REQUIRE(stub.d_model == encoder.d_model, "model.config",
                "vision stub must emit tokens of width d_model");
  }
  MMA_REQUIRE(n_classes >= 2, "model.config", "n_classes must be >= 2");
}

Model make_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  SeedStream seeds(cfg.init_seed);
  auto enc_rng = seeds.engine("init");
  encoders::init_imu_encoder(m.params, cfg.encoder, "encoder/", enc_rng);
  m.params.add("head/w", nn::init_xavier<float>(cfg.encoder.d_model, cfg.n_classes, enc_rng));
  m.params.add("head/b", nn::MatF::Zero(1, cfg.n_classes));
  auto res_rng = seeds.engine("resampler-init");
  resampler::init_resampler(m.params, cfg.resampler, "resampler/", res_rng);
  if (cfg.vision_mode == "stub") {
    auto vis_rng = seeds.engine("vision-stub");
    encoders::init_stub_vision(m.params, cfg.stub, "vision/", vis_rng);
  }
  return m;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{
      {"encoder",
       {{"d_model", cfg.encoder.d_model},
        {"conv_kernel", cfg.encoder.conv_kernel},
        {"conv_stride", cfg.encoder.conv_stride},
        {"n_layers", cfg.encoder.n_layers},
        {"n_heads", cfg.encoder.n_heads},
        {"ff_mult", cfg.encoder.ff_mult},
        {"dropout", cfg.encoder.dropout},
        {"window_len", cfg.encoder.window_len},
        {"in_channels", cfg.encoder.in_channels}}},
      {"resampler",
       {{"d_model", cfg.resampler.d_model},
        {"n_latents", cfg.resampler.n_latents},
        {"n_blocks", cfg.resampler.n_blocks},
        {"n_heads", cfg.resampler.n_heads},
        {"ff_mult", cfg.resampler.ff_mult}}},
      {"stub",
       {{"latent_dim", cfg.stub.latent_dim},
        {"n_tokens", cfg.stub.n_tokens},
        {"d_model", cfg.stub.d_model}}},
      {"vision_mode", cfg.vision_mode},
      {"n_classes", cfg.n_classes},
      {"normalize_embeddings", cfg.normalize_embeddings},
      {"init_seed", cfg.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  const auto& e = j.at("encoder");
  cfg.encoder.d_model = e.at("d_model").get<int>();
  cfg.encoder.conv_kernel = e.at("conv_kernel").get<int>();
  cfg.encoder.conv_stride = e.at("conv_stride").get<int>();
  cfg.encoder.n_layers = e.at("n_layers").get<int>();
  cfg.encoder.n_heads = e.at("n_heads").get<int>();
  cfg.encoder.ff_mult = e.at("ff_mult").get<int>();
  cfg.encoder.dropout = e.at("dropout").get<double>();
  cfg.encoder.window_len = e.at("window_len").get<int>();
  cfg.encoder.in_channels = e.at("in_channels").get<int>();
  const auto& r = j.at("resampler");
  cfg.resampler.d_model = r.at("d_model").get<int>();
  cfg.resampler.n_latents = r.at("n_latents").get<int>();
  cfg.resampler.n_blocks = r.at("n_blocks").get<int>();
  cfg.resampler.n_heads = r.at("n_heads").get<int>();
  cfg.resampler.ff_mult = r.at("ff_mult").get<int>();
  const auto& s = j.at("stub");
  cfg.stub.latent_dim = s.at("latent_dim").get<int>();
  cfg.stub.n_tokens = s.at("n_tokens").get<int>();
  cfg.stub.d_model = s.at("d_model").get<int>();
  cfg.vision_mode = j.at("vision_mode").get<std::string>();
  cfg.n_classes = j.at("n_classes").get<int>();
  cfg.normalize_embeddings = j.at("normalize_embeddings").get<bool>();
  cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

nlohmann::json norm_stats_to_json(const std::optional<data::NormStats>& norm) {
  if (!norm) return nlohmann::json{{"identity", true}};
  std::vector<double> mean(norm->mean.data(), norm->mean.data() + norm->mean.size());
  std::vector<double> std_(norm->std.data(), norm->std.data() + norm->std.size());
  return nlohmann::json{{"mean", mean}, {"std", std_}};
}

std::optional<data::NormStats> norm_stats_from_json(const nlohmann::json& j) {
  if (j.contains("identity") && j.at("identity").get<bool>()) return std::nullopt;
  data::NormStats st;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto std_ = j.at("std").get<std::vector<double>>();
  st.mean = Eigen::Map<const nn::VecD>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  st.std = Eigen::Map<const nn::VecD>(std_.data(), static_cast<Eigen::Index>(std_.size()));
  return st;
}

// ---- embedding paths --------------------------------------------------------

namespace {

data::IMUWindow normalized_window(const Model& model, const data::IMUWindow& w) {
  if (!model.norm) return w;
  data::IMUWindow out = w;
  data::apply_norm(out, *model.norm);
  return out;
}

nn::VecF pool_tokens(const nn::MatF& tokens) {
  return tokens.colwise().mean().transpose();
}

}  // namespace

nn::VecF imu_embed_raw(const Model& model, const data::IMUWindow& window, bool raw_encoder) {
  const data::IMUWindow w = normalized_window(model, window);
  const nn::MatF tokens = encoders::imu_encode(model.params, model.cfg.encoder, "encoder/", w);
  if (raw_encoder) return pool_tokens(tokens);
  const nn::MatF latents =
      resampler::resample_tokens(model.params, model.cfg.resampler, "resampler/", tokens);
  return resampler::pool(latents, /*normalize=*/false);
}

nn::VecF vision_embed_raw(const Model& model, const data::VisionSource& source,
                          bool raw_encoder) {
  const nn::MatF tokens = model.vision_provider().embed(source);
  if (raw_encoder) return pool_tokens(tokens);
  const nn::MatF latents =
      resampler::resample_tokens(model.params, model.cfg.resampler, "resampler/", tokens);
  return resampler::pool(latents, /*normalize=*/false);
}

namespace {

nn::MatF normalize_rows_checked(const nn::MatF& m, const char* what) {
  nn::MatF out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const float n = m.row(r).norm();
    MMA_REQUIRE(n > 0.0f, "nn.zero_norm",
                std::string(what) + ": zero-norm embedding row " + std::to_string(r));
    out.row(r) = m.row(r) / n;
  }
  return out;
}

}  // namespace

DatasetEmbeddings embed_dataset(const Model& model, const std::vector<data::PairedSample>& part,
                                bool raw_encoder) {
  MMA_REQUIRE(!part.empty(), "align.empty", "embed_dataset: empty dataset part");
  const int d = model.cfg.encoder.d_model;
  DatasetEmbeddings out;
  out.imu_raw.resize(static_cast<Eigen::Index>(part.size()), d);
  out.vis_raw.resize(static_cast<Eigen::Index>(part.size()), d);
  out.labels.resize(part.size());
  parallel_for(part.size(), [&](std::size_t i) {
    out.imu_raw.row(static_cast<Eigen::Index>(i)) =
        imu_embed_raw(model, part[i].imu, raw_encoder).transpose();
    out.vis_raw.row(static_cast<Eigen::Index>(i)) =
        vision_embed_raw(model, part[i].vision, raw_encoder).transpose();
    out.labels[i] = part[i].label;
  });
  out.imu_norm = normalize_rows_checked(out.imu_raw, "imu embedding");
  out.vis_norm = normalize_rows_checked(out.vis_raw, "vision embedding");
  return out;
}

// ---- training loop ----------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Precomputed frozen vision embeddings for one dataset part.
struct FrozenVision {
  nn::MatF raw;
  nn::MatF norm;
};

FrozenVision precompute_vision(const Model& model, const std::vector<data::PairedSample>& part,
                               bool raw_encoder) {
  FrozenVision v;
  v.raw.resize(static_cast<Eigen::Index>(part.size()), model.cfg.encoder.d_model);
  parallel_for(part.size(), [&](std::size_t i) {
    v.raw.row(static_cast<Eigen::Index>(i)) =
        vision_embed_raw(model, part[i].vision, raw_encoder).transpose();
  });
  v.norm = normalize_rows_checked(v.raw, "vision embedding");
  return v;
}

/// Forward pass A for one batch: pre-normalization pooled IMU embeddings,
/// eval-mode (tape-free).
nn::MatF batch_imu_raw(const Model& model, const std::vector<data::PairedSample>& part,
                       const std::vector<int>& batch, bool raw_encoder) {
  nn::MatF raw(static_cast<Eigen::Index>(batch.size()), model.cfg.encoder.d_model);
  parallel_for(batch.size(), [&](std::size_t i) {
    raw.row(static_cast<Eigen::Index>(i)) =
        imu_embed_raw(model, part[batch[i]].imu, raw_encoder).transpose();
  });
  return raw;
}

/// Per-sample pass B: rebuilds the sample's forward with the tape and seeds
/// the pooled output with the batch-level gradient row. Returns gradient
/// contributions keyed by tensor name.
void accumulate_sample_grads(const Model& model, const data::PairedSample& sample,
                             const nn::MatF& pooled_grad_row, bool raw_encoder,
                             const std::map<const nn::MatF*, std::string>& names,
                             std::map<std::string, nn::MatF>& sink) {
  nn::Graph<float> g(true);
  const data::IMUWindow w = normalized_window(model, sample.imu);
  nn::Var tokens = encoders::imu_encode_graph(g, model.params, model.cfg.encoder, "encoder/",
                                              &w.values, w.valid_len);
  nn::Var pooled;
  if (raw_encoder) {
    pooled = g.mean_rows(tokens);
  } else {
    nn::Var latents =
        resampler::resample_tokens_graph(g, model.params, model.cfg.resampler, "resampler/",
                                         tokens);
    pooled = resampler::pool_graph(g, latents, /*normalize=*/false);
  }
  g.backward_from(pooled, pooled_grad_row);
  g.for_each_external_grad([&](const nn::MatF* tensor, const nn::MatF& grad) {
    auto it = names.find(tensor);
    if (it == names.end()) return;  // the input window leaf
    auto [slot, inserted] = sink.emplace(it->second, grad);
    if (!inserted) slot->second += grad;
  });
}

}  // namespace

TrainResult train(Model& model, const data::DatasetSplit& split, const TrainConfig& cfg,
                  const LossConfig& loss_cfg,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  loss_cfg.validate();
  model.cfg.validate();
  MMA_REQUIRE(!split.train.empty() && !split.val.empty(), "train.empty",
              "train: train and val parts must be non-empty");
  const auto t_start = Clock::now();

  // Map tensor storage to names once; pass B resolves gradients through it.
  std::map<const nn::MatF*, std::string> trainable_names;
  for (const auto& [name, t] : model.params)
    if (t.trainable) trainable_names[&t.value] = name;

  // The whole vision path is frozen: embed every sample exactly once.
  const FrozenVision vis_train = precompute_vision(model, split.train, cfg.raw_encoder);
  const FrozenVision vis_val = precompute_vision(model, split.val, cfg.raw_encoder);

  std::vector<int> val_labels(split.val.size());
  for (std::size_t i = 0; i < split.val.size(); ++i) val_labels[i] = split.val[i].label;

  nn::AdamW<float> opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  EarlyStopper stopper(cfg.patience);

  TrainResult result;
  nn::ParamSet<float> best_params = model.params;
  int best_params_epoch = -1;

  const bool normalize = model.cfg.normalize_embeddings;
  const nn::MatF& head_w_ref = model.params.get("head/w");
  const nn::MatF& head_b_ref = model.params.get("head/b");

  auto eval_part = [&](const std::vector<data::PairedSample>& part, const FrozenVision& vis,
                       const std::vector<int>& labels, double& out_nce, double& out_sup) {
    // Sequential fixed-size batches (no shuffle): the metric must not depend
    // on epoch state. Mean over samples, weighted by batch size.
    const int n = static_cast<int>(part.size());
    const int bs = std::min(cfg.batch_size, n);
    double nce_sum = 0.0;
    double sup_sum = 0.0;
    int counted = 0;
    for (int at = 0; at + 2 <= n; at += bs) {
      const int take = std::min(bs, n - at);
      if (take < 2) break;
      std::vector<int> idx(take);
      for (int i = 0; i < take; ++i) idx[i] = at + i;
      nn::MatF imu_raw = batch_imu_raw(model, part, idx, cfg.raw_encoder);
      nn::MatF imu_n = normalize ? normalize_rows_checked(imu_raw, "imu embedding") : imu_raw;
      nn::MatF vis_n(take, imu_raw.cols());
      std::vector<int> lab(take);
      for (int i = 0; i < take; ++i) {
        vis_n.row(i) = (normalize ? vis.norm : vis.raw).row(at + i);
        lab[i] = labels[at + i];
      }
      const nn::MatF sim = imu_n * vis_n.transpose();
      const double nce = info_nce_value<float>(sim, static_cast<float>(loss_cfg.tau),
                                               loss_cfg.symmetric);
      const double sup =
          loss_cfg.lambda_sup > 0
              ? supervised_loss_value<float>(imu_raw, head_w_ref, head_b_ref, lab)
              : 0.0;
      nce_sum += nce * take;
      sup_sum += sup * take;
      counted += take;
    }
    MMA_REQUIRE(counted > 0, "train.empty", "validation part too small to batch");
    out_nce = nce_sum / counted;
    out_sup = sup_sum / counted;
  };

  const int n_train = static_cast<int>(split.train.size());
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t_epoch = Clock::now();
    const double lr_now = nn::cosine_lr(cfg.lr, cfg.min_lr, epoch, cfg.max_epochs);
    opt.set_lr(lr_now);

    const auto batches =
        data::make_batches(n_train, std::min(cfg.batch_size, n_train), cfg.seed, epoch,
                           /*drop_last=*/false);
    double ep_nce = 0.0;
    double ep_sup = 0.0;
    int ep_count = 0;

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const std::vector<int>& batch = batches[b];
      const int N = static_cast<int>(batch.size());
      if (N < 2) continue;  // a trailing singleton has no negatives

      // Pass A: tape-free embeddings for the whole batch.
      nn::MatF imu_raw_vals = batch_imu_raw(model, split.train, batch, cfg.raw_encoder);
      nn::MatF vis_norm_vals(N, imu_raw_vals.cols());
      std::vector<int> labels(N);
      for (int i = 0; i < N; ++i) {
        vis_norm_vals.row(i) = (normalize ? vis_train.norm : vis_train.raw).row(batch[i]);
        labels[i] = split.train[batch[i]].label;
      }

      // Batch graph over pooled embeddings: cheap, N x D leaves only.
      nn::Graph<float> g(true);
      nn::Var imu_raw = g.leaf(imu_raw_vals, /*requires_grad=*/true);
      nn::Var vis_norm = g.leaf(vis_norm_vals, /*requires_grad=*/false);
      const nn::ParamTensor<float>& hw = model.params.at("head/w");
      const nn::ParamTensor<float>& hb = model.params.at("head/b");
      nn::Var head_w = g.leaf_ref(&hw.value, true);
      nn::Var head_b = g.leaf_ref(&hb.value, true);
      nn::Var nce{};
      nn::Var sup{};
      nn::Var total = total_loss_graph(g, loss_cfg, imu_raw, vis_norm, head_w, head_b, labels,
                                       normalize, &nce, &sup);
      const double total_v = g.value(total)(0, 0);
      const double nce_v = g.value(nce)(0, 0);
      const double sup_v = sup.valid() ? g.value(sup)(0, 0) : 0.0;
      if (!std::isfinite(total_v))
        raise("train.nonfinite", "non-finite loss",
              "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) + ": info_nce=" +
                  std::to_string(nce_v) + ", supervised=" + std::to_string(sup_v));
      g.backward(total);

      std::map<std::string, nn::MatF> grads;
      g.for_each_external_grad([&](const nn::MatF* tensor, const nn::MatF& grad) {
        auto it = trainable_names.find(tensor);
        if (it == trainable_names.end()) return;
        auto [slot, inserted] = grads.emplace(it->second, grad);
        if (!inserted) slot->second += grad;
      });

      // Pass B: push the batch gradient through each sample's encoder
      // forward. Sequential accumulation in batch order keeps the result
      // independent of the worker count.
      const nn::MatF demb = g.grad(imu_raw);
      for (int i = 0; i < N; ++i) {
        accumulate_sample_grads(model, split.train[batch[i]], demb.row(i), cfg.raw_encoder,
                                trainable_names, grads);
      }

      opt.step(model.params, grads);
      ep_nce += nce_v * N;
      ep_sup += sup_v * N;
      ep_count += N;
    }
    MMA_REQUIRE(ep_count > 0, "train.empty", "no usable training batches");

    EpochLog log;
    log.epoch = epoch;
    log.train_info_nce = ep_nce / ep_count;
    log.train_sup = ep_sup / ep_count;
    log.lr = lr_now;

    const bool do_eval = (epoch % cfg.eval_every == 0) || (epoch == cfg.max_epochs - 1);
    bool stop = false;
    if (do_eval) {
      eval_part(split.val, vis_val, val_labels, log.val_info_nce, log.val_sup);
      log.val_total = log.val_info_nce + loss_cfg.lambda_sup * log.val_sup;
      if (!std::isfinite(log.val_total))
        raise("train.nonfinite", "non-finite validation loss",
              "epoch " + std::to_string(epoch));
      if (stopper.observe(epoch, log.val_total)) {
        best_params = model.params;
        best_params_epoch = epoch;
      }
      stop = stopper.should_stop();
    } else {
      log.val_info_nce = std::nan("");
      log.val_sup = std::nan("");
      log.val_total = std::nan("");
    }
    log.wall_s = seconds_since(t_epoch);
    result.log.push_back(log);
    result.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(log);
    if (stop) break;
  }

  result.best_epoch = stopper.best_epoch();
  result.best_val = stopper.best_value();

  io::Checkpoint ckpt;
  ckpt.model_config = model_config_to_json(model.cfg);
  ckpt.norm_stats = norm_stats_to_json(model.norm);
  ckpt.train_state = nlohmann::json{{"epoch", best_params_epoch},
                                    {"best_val_loss", result.best_val},
                                    {"seed", cfg.seed},
                                    {"epochs_run", result.epochs_run},
                                    {"wall_s", seconds_since(t_start)}};
  ckpt.params = std::move(best_params);
  result.checkpoint = std::move(ckpt);
  return result;
}

// ---- gradient suite ---------------------------------------------------------

namespace {

nn::MatD random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  nn::MatD m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = d(rng);
  return m;
}

double check_info_nce(std::mt19937_64& rng) {
  nn::MatD sim = random_mat(3, 3, rng);
  nn::MatD analytic;
  {
    nn::Graph<double> g(true);
    nn::Var s = g.leaf_ref(&sim, true);
    g.backward(g.info_nce(s, 0.07, true));
    analytic = g.grad(s);
  }
  auto loss = [&]() { return info_nce_value<double>(sim, 0.07, true); };
  return nn::grad_check_tensor(sim, analytic, loss, "sim").max_rel_error;
}

double check_supervised(std::mt19937_64& rng) {
  nn::MatD emb = random_mat(4, 6, rng);
  nn::MatD w = random_mat(6, 5, rng);
  nn::MatD b = random_mat(1, 5, rng, 0.1);
  const std::vector<int> labels = {0, 3, 2, 4};
  auto grads_of = [&]() {
    nn::Graph<double> g(true);
    nn::Var e = g.leaf_ref(&emb, true);
    nn::Var wv = g.leaf_ref(&w, true);
    nn::Var bv = g.leaf_ref(&b, true);
    nn::Var logits = g.add_rowvec(g.matmul(e, wv), bv);
    g.backward(g.cross_entropy_logits(logits, labels));
    return std::array<nn::MatD, 3>{g.grad(e), g.grad(wv), g.grad(bv)};
  };
  const auto analytic = grads_of();
  auto loss = [&]() { return supervised_loss_value<double>(emb, w, b, labels); };
  double worst = nn::grad_check_tensor(emb, analytic[0], loss, "emb").max_rel_error;
  worst = std::max(worst, nn::grad_check_tensor(w, analytic[1], loss, "head/w").max_rel_error);
  worst = std::max(worst, nn::grad_check_tensor(b, analytic[2], loss, "head/b").max_rel_error);
  return worst;
}

encoders::IMUEncoderConfig tiny_encoder_config() {
  encoders::IMUEncoderConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.ff_mult = 2;
  cfg.conv_kernel = 3;
  cfg.conv_stride = 2;
  cfg.window_len = 16;
  cfg.in_channels = 4;
  cfg.dropout = 0.0;
  return cfg;
}

double check_encoder(std::mt19937_64& rng) {
  const auto cfg = tiny_encoder_config();
  nn::ParamSet<double> params;
  std::mt19937_64 init_rng(11);
  encoders::init_imu_encoder(params, cfg, "encoder/", init_rng);
  nn::MatD window = random_mat(cfg.window_len, cfg.in_channels, rng);
  const nn::MatD probe = random_mat(cfg.n_tokens(), cfg.d_model, rng);
  const int valid_len = 11;  // exercises the key mask

  auto loss = [&]() {
    nn::Graph<double> g(false);
    nn::Var tok = encoders::imu_encode_graph(g, params, cfg, "encoder/", &window, valid_len);
    return g.value(tok).cwiseProduct(probe).sum();
  };

  std::map<const nn::MatD*, std::string> names;
  for (const auto& [name, t] : params) names[&t.value] = name;
  std::map<std::string, nn::MatD> analytic;
  nn::MatD window_grad;
  {
    nn::Graph<double> g(true);
    nn::Var tok = encoders::imu_encode_graph(g, params, cfg, "encoder/", &window, valid_len);
    g.backward(g.dot_all(tok, probe));
    g.for_each_external_grad([&](const nn::MatD* tensor, const nn::MatD& grad) {
      if (tensor == &window) {
        window_grad = grad;
        return;
      }
      auto [slot, inserted] = analytic.emplace(names.at(tensor), grad);
      if (!inserted) slot->second += grad;
    });
  }

  double worst =
      nn::grad_check_tensor(window, window_grad, loss, "window", 1e-5, 24, 1).max_rel_error;
  int lane = 2;
  for (auto& [name, t] : params) {
    auto it = analytic.find(name);
    nn::MatD zero;
    const nn::MatD& a = it != analytic.end()
                            ? it->second
                            : (zero = nn::MatD::Zero(t.value.rows(), t.value.cols()));
    worst = std::max(worst,
                     nn::grad_check_tensor(t.value, a, loss, name, 1e-5, 16, lane++).max_rel_error);
  }
  return worst;
}

double check_resampler(std::mt19937_64& rng) {
  resampler::ResamplerConfig cfg;
  cfg.d_model = 8;
  cfg.n_latents = 5;
  cfg.n_blocks = 2;
  cfg.n_heads = 2;
  cfg.ff_mult = 2;
  nn::ParamSet<double> params;
  std::mt19937_64 init_rng(13);
  resampler::init_resampler(params, cfg, "resampler/", init_rng);
  nn::MatD seq = random_mat(7, cfg.d_model, rng);
  const nn::MatD probe = random_mat(1, cfg.d_model, rng);

  auto loss = [&]() {
    nn::Graph<double> g(false);
    nn::Var in = g.leaf_ref(&seq, false);
    nn::Var lat = resampler::resample_tokens_graph(g, params, cfg, "resampler/", in);
    nn::Var pooled = resampler::pool_graph(g, lat, true);
    return g.value(pooled).cwiseProduct(probe).sum();
  };

  nn::MatD analytic;
  {
    nn::Graph<double> g(true);
    nn::Var in = g.leaf_ref(&seq, true);
    nn::Var lat = resampler::resample_tokens_graph(g, params, cfg, "resampler/", in);
    nn::Var pooled = resampler::pool_graph(g, lat, true);
    g.backward(g.dot_all(pooled, probe));
    analytic = g.grad(in);
    // Frozen tensors must stay out of the gradient set entirely.
    g.for_each_external_grad([&](const nn::MatD* tensor, const nn::MatD&) {
      MMA_REQUIRE(tensor == &seq, "gradcheck.frozen_leak",
                  "frozen resampler tensor accumulated a gradient");
    });
  }
  return nn::grad_check_tensor(seq, analytic, loss, "seq", 1e-5, 40, 3).max_rel_error;
}

double check_full_path(std::mt19937_64& rng) {
  const auto enc_cfg = tiny_encoder_config();
  resampler::ResamplerConfig res_cfg;
  res_cfg.d_model = enc_cfg.d_model;
  res_cfg.n_latents = 4;
  res_cfg.n_blocks = 1;
  res_cfg.n_heads = 2;
  res_cfg.ff_mult = 2;

  nn::ParamSet<double> params;
  std::mt19937_64 init_rng(17);
  encoders::init_imu_encoder(params, enc_cfg, "encoder/", init_rng);
  resampler::init_resampler(params, res_cfg, "resampler/", init_rng);
  params.add("head/w", nn::init_xavier<double>(enc_cfg.d_model, 3, init_rng));
  params.add("head/b", nn::MatD::Zero(1, 3));

  const int N = 3;
  std::vector<nn::MatD> windows;
  for (int i = 0; i < N; ++i) windows.push_back(random_mat(enc_cfg.window_len, enc_cfg.in_channels, rng));
  nn::MatD vis = random_mat(N, enc_cfg.d_model, rng);
  for (int i = 0; i < N; ++i) vis.row(i) /= vis.row(i).norm();
  const std::vector<int> labels = {0, 2, 1};
  LossConfig loss_cfg;
  loss_cfg.tau = 0.2;
  loss_cfg.lambda_sup = 0.7;

  auto build = [&](nn::Graph<double>& g) {
    std::vector<nn::Var> pooled;
    for (int i = 0; i < N; ++i) {
      nn::Var tok =
          encoders::imu_encode_graph(g, params, enc_cfg, "encoder/", &windows[i], 16);
      nn::Var lat = resampler::resample_tokens_graph(g, params, res_cfg, "resampler/", tok);
      pooled.push_back(resampler::pool_graph(g, lat, false));
    }
    nn::Var imu_raw = pooled[0];
    for (int i = 1; i < N; ++i) imu_raw = g.concat_rows(imu_raw, pooled[i]);
    const nn::ParamTensor<double>& hw = params.at("head/w");
    const nn::ParamTensor<double>& hb = params.at("head/b");
    nn::Var vis_n = g.leaf(vis, false);
    return total_loss_graph(g, loss_cfg, imu_raw, vis_n, g.leaf_ref(&hw.value, true),
                            g.leaf_ref(&hb.value, true), labels, true, nullptr, nullptr);
  };

  auto loss = [&]() {
    nn::Graph<double> g(false);
    return g.value(build(g))(0, 0);
  };

  std::map<const nn::MatD*, std::string> names;
  for (const auto& [name, t] : params) names[&t.value] = name;
  std::map<std::string, nn::MatD> analytic;
  {
    nn::Graph<double> g(true);
    g.backward(build(g));
    g.for_each_external_grad([&](const nn::MatD* tensor, const nn::MatD& grad) {
      auto it = names.find(tensor);
      if (it == names.end()) return;  // the window leaves
      auto [slot, inserted] = analytic.emplace(it->second, grad);
      if (!inserted) slot->second += grad;
    });
  }

  double worst = 0.0;
  int lane = 5;
  for (auto& [name, t] : params) {
    if (!t.trainable) {
      MMA_REQUIRE(analytic.find(name) == analytic.end(), "gradcheck.frozen_leak",
                  "frozen tensor accumulated a gradient: " + name);
      continue;
    }
    auto it = analytic.find(name);
    nn::MatD zero;
    const nn::MatD& a = it != analytic.end()
                            ? it->second
                            : (zero = nn::MatD::Zero(t.value.rows(), t.value.cols()));
    worst = std::max(worst,
                     nn::grad_check_tensor(t.value, a, loss, name, 1e-5, 10, lane++).max_rel_error);
  }
  return worst;
}

}  // namespace

double GradSuiteReport::max() const {
  return std::max({info_nce, supervised, encoder, resampler, full_path});
}

GradSuiteReport run_grad_suite(std::uint64_t seed) {
  const auto t0 = Clock::now();
  GradSuiteReport rep;
  SeedStream seeds(seed);
  auto rng = seeds.engine("gradcheck");
  rep.info_nce = check_info_nce(rng);
  rep.supervised = check_supervised(rng);
  rep.encoder = check_encoder(rng);
  rep.resampler = check_resampler(rng);
  rep.full_path = check_full_path(rng);
  rep.wall_s = seconds_since(t0);
  return rep;
}

}  // namespace mmalign::align

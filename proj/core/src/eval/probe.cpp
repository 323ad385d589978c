#include "mmalign/eval/probe.hpp"

#include <set>

#include "mmalign/common/error.hpp"
#include "mmalign/common/rng.hpp"
#include "mmalign/nn/adamw.hpp"
#include "mmalign/nn/params.hpp"

namespace mmalign::eval {

namespace {

struct Metrics {
  double loss = 0.0;
  double acc_pct = 0.0;
};

/// Softmax cross-entropy + accuracy; optionally emits dlogits = (P - Y)/N.
Metrics evaluate(const nn::MatD& logits, const std::vector<int>& labels, nn::MatD* dlogits) {
  const auto N = logits.rows();
  double loss = 0.0;
  int correct = 0;
  if (dlogits) dlogits->resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < N; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const nn::VecD e = (logits.row(i).array() - mx).exp().transpose();
    const double denom = e.sum();
    loss += std::log(denom) + mx - logits(i, labels[i]);
    Eigen::Index arg;
    logits.row(i).maxCoeff(&arg);
    correct += (static_cast<int>(arg) == labels[i]) ? 1 : 0;
    if (dlogits) {
      dlogits->row(i) = (e / denom).transpose();
      (*dlogits)(i, labels[i]) -= 1.0;
    }
  }
  if (dlogits) *dlogits /= static_cast<double>(N);
  Metrics m;
  m.loss = loss / static_cast<double>(N);
  m.acc_pct = 100.0 * static_cast<double>(correct) / static_cast<double>(N);
  return m;
}

void check_labels(const std::vector<int>& y, int n_classes, const char* what) {
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] < 0 || y[i] >= n_classes)
      raise("loss.label_range", std::string(what) + ": label out of range at index " +
                                    std::to_string(i) + ": " + std::to_string(y[i]));
}

}  // namespace

ProbeReport linear_probe(const nn::MatF& train_x, const std::vector<int>& train_y,
                         const nn::MatF& test_x, const std::vector<int>& test_y, int n_classes,
                         const ProbeConfig& cfg, const std::string& modality) {
  MMA_REQUIRE(train_x.rows() >= 2 && train_x.rows() == static_cast<Eigen::Index>(train_y.size()),
              "probe.shape", "linear_probe: train features/labels mismatch");
  MMA_REQUIRE(test_x.rows() >= 1 && test_x.rows() == static_cast<Eigen::Index>(test_y.size()),
              "probe.shape", "linear_probe: test features/labels mismatch");
  MMA_REQUIRE(train_x.cols() == test_x.cols(), "probe.shape",
              "linear_probe: train/test feature dims differ");
  MMA_REQUIRE(nn::all_finite(train_x) && nn::all_finite(test_x), "probe.nonfinite",
              "linear_probe: non-finite features");
  MMA_REQUIRE(cfg.epochs >= 1 && cfg.lr > 0, "probe.config",
              "linear_probe: epochs >= 1 and lr > 0 required");
  check_labels(train_y, n_classes, "linear_probe train");
  check_labels(test_y, n_classes, "linear_probe test");
  MMA_REQUIRE(std::set<int>(train_y.begin(), train_y.end()).size() >= 2, "probe.degenerate",
              "linear_probe: fewer than 2 classes present in train labels");

  const nn::MatD X = train_x.cast<double>();
  const nn::MatD Xt = test_x.cast<double>();
  const int F = static_cast<int>(X.cols());

  nn::ParamSet<double> params;
  auto rng = SeedStream(cfg.seed).engine("probe-init");
  params.add("w", nn::init_xavier<double>(F, n_classes, rng));
  params.add("b", nn::MatD::Zero(1, n_classes));
  nn::AdamW<double> opt({cfg.lr, 0.9, 0.999, 1e-8, /*weight_decay=*/0.0});

  Metrics train_m;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const nn::MatD logits =
        (X * params.get("w")).rowwise() + params.get("b").row(0);
    nn::MatD dlogits;
    train_m = evaluate(logits, train_y, &dlogits);
    std::map<std::string, nn::MatD> grads;
    grads["w"] = X.transpose() * dlogits;
    grads["b"] = dlogits.colwise().sum();
    opt.step(params, grads);
  }

  // Final metrics with the trained weights.
  const nn::MatD logits_tr = (X * params.get("w")).rowwise() + params.get("b").row(0);
  train_m = evaluate(logits_tr, train_y, nullptr);
  const nn::MatD logits_te = (Xt * params.get("w")).rowwise() + params.get("b").row(0);
  const Metrics test_m = evaluate(logits_te, test_y, nullptr);

  ProbeReport rep;
  rep.modality = modality;
  rep.train_loss = train_m.loss;
  rep.test_loss = test_m.loss;
  rep.train_acc = train_m.acc_pct;
  rep.test_acc = test_m.acc_pct;
  rep.n_classes = n_classes;
  rep.feature_dim = F;
  return rep;
}

}  // namespace mmalign::eval

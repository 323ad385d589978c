#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <variant>
#include <vector>

#include <mmalign/data/batches.hpp>
#include <mmalign/data/synth.hpp>

#include "test_helpers.hpp"

using namespace mmalign;
using data::PairedSample;
using data::SynthSpec;

namespace {

nn::VecD latent_of(const PairedSample& s) {
  return std::get<data::VisionLatent>(s.vision).z.cast<double>();
}

}  // namespace

TEST_CASE("synth_generate: balanced labels, ids, bookkeeping") {
  SynthSpec spec;
  spec.n_classes = 8;
  spec.n_pairs = 512;
  spec.seed = 3;
  const auto samples = data::synth_generate(spec);
  REQUIRE(samples.size() == 512);

  std::map<int, int> per_class;
  std::set<std::int64_t> ids;
  for (const auto& s : samples) {
    ++per_class[s.label];
    CHECK(ids.insert(s.id).second);
    CHECK(s.imu.valid_len == data::kWindowLen);
    CHECK(s.imu.values.allFinite());
    REQUIRE(std::holds_alternative<data::VisionLatent>(s.vision));
  }
  REQUIRE(per_class.size() == 8);
  for (const auto& [label, count] : per_class) CHECK(count == 64);  // 512 / 8 exactly
}

TEST_CASE("synth_generate: equal specs are byte-identical, seeds decorrelate") {
  SynthSpec spec;
  spec.n_classes = 4;
  spec.n_pairs = 32;
  spec.noise_sigma = 0.3;
  spec.seed = 11;
  const auto a = data::synth_generate(spec);
  const auto b = data::synth_generate(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].label == b[i].label);
    CHECK((a[i].imu.values - b[i].imu.values).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((latent_of(a[i]) - latent_of(b[i])).cwiseAbs().maxCoeff() == 0.0);
  }
  spec.seed = 12;
  const auto c = data::synth_generate(spec);
  CHECK((a[0].imu.values - c[0].imu.values).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("synth_generate: noise-free geometry separates classes in latent space") {
  SynthSpec spec;
  spec.n_classes = 6;
  spec.n_pairs = 60;
  spec.noise_sigma = 0.0;
  spec.seed = 7;
  const auto samples = data::synth_generate(spec);

  // Zero noise: the vision latent *is* the shared pair latent. Within-class
  // distances stay <= 2 * kOffsetRadius; cross-class distances stay >=
  // kCenterMinDist - 2 * kOffsetRadius. The spec keeps the former strictly
  // below the latter.
  double max_within = 0.0;
  double min_cross = 1e300;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      const double d = (latent_of(samples[i]) - latent_of(samples[j])).norm();
      if (samples[i].label == samples[j].label)
        max_within = std::max(max_within, d);
      else
        min_cross = std::min(min_cross, d);
    }
  CHECK(max_within <= 2 * SynthSpec::kOffsetRadius + 1e-9);
  CHECK(min_cross >= SynthSpec::kCenterMinDist - 2 * SynthSpec::kOffsetRadius - 1e-9);
  CHECK(max_within < min_cross);
}

TEST_CASE("synth_render_basis: orthonormal rows, rendering is an isometry") {
  const int d = 8;
  const nn::MatD basis = data::synth_render_basis(d);
  REQUIRE(basis.rows() == d);
  REQUIRE(basis.cols() == data::kWindowLen * data::kChannels);
  const nn::MatD gram = basis * basis.transpose();
  CHECK((gram - nn::MatD::Identity(d, d)).cwiseAbs().maxCoeff() < 1e-10);

  // Isometry: |render(z1) - render(z2)|_F == |z1 - z2|_2.
  nn::VecD z1 = nn::VecD::Zero(d);
  nn::VecD z2 = nn::VecD::Zero(d);
  z1(0) = 1.0;
  z1(3) = -2.0;
  z2(1) = 0.5;
  const data::IMUWindow w1 = data::synth_render_window(z1, basis);
  const data::IMUWindow w2 = data::synth_render_window(z2, basis);
  CHECK(w1.valid_len == data::kWindowLen);
  const double dist_window = (w1.values - w2.values).cast<double>().norm();
  CHECK(dist_window == doctest::Approx((z1 - z2).norm()).epsilon(1e-5));
}

TEST_CASE("synth_generate: zero noise makes the IMU window the rendered vision latent") {
  SynthSpec spec;
  spec.n_classes = 2;
  spec.n_pairs = 6;
  spec.noise_sigma = 0.0;
  spec.seed = 1;
  const auto samples = data::synth_generate(spec);
  const nn::MatD basis = data::synth_render_basis(spec.latent_dim);
  for (const auto& s : samples) {
    const data::IMUWindow rendered = data::synth_render_window(latent_of(s), basis);
    CHECK((rendered.values - s.imu.values).cwiseAbs().maxCoeff() < 1e-5f);
  }
}

TEST_CASE("synth_generate: separate noise knobs for the two modalities") {
  SynthSpec spec;
  spec.n_classes = 2;
  spec.n_pairs = 8;
  spec.seed = 5;
  // vision_noise_sigma < 0 inherits noise_sigma; an explicit 0 pins the
  // vision side to the clean latent while the IMU side stays noisy.
  spec.noise_sigma = 1.0;
  spec.vision_noise_sigma = 0.0;
  const auto noisy_imu = data::synth_generate(spec);

  spec.noise_sigma = 0.0;
  const auto clean = data::synth_generate(spec);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    CHECK((latent_of(noisy_imu[i]) - latent_of(clean[i])).cwiseAbs().maxCoeff() == 0.0);
    CHECK((noisy_imu[i].imu.values - clean[i].imu.values).cwiseAbs().maxCoeff() > 0.0f);
  }
}

TEST_CASE("synth_generate: typed failures") {
  SynthSpec spec;
  spec.n_classes = 1;
  CHECK(testutil::error_code_of([&] { data::synth_generate(spec); }) == "synth.config");
  spec.n_classes = 8;
  spec.n_pairs = 4;
  CHECK(testutil::error_code_of([&] { data::synth_generate(spec); }) == "synth.config");
  spec.n_pairs = 16;
  spec.noise_sigma = -0.5;
  CHECK(testutil::error_code_of([&] { data::synth_generate(spec); }) == "synth.config");
  spec.noise_sigma = 0.0;
  spec.latent_dim = 0;
  CHECK(testutil::error_code_of([&] { data::synth_generate(spec); }) == "synth.config");
}

TEST_CASE("make_batches: sizes, partition, drop_last") {
  // 6093 samples at batch 512: 12 batches, the last holding the 461 leftovers.
  const auto batches = data::make_batches(6093, 512, 1, 0, false);
  REQUIRE(batches.size() == 12);
  for (int b = 0; b < 11; ++b) CHECK(batches[b].size() == 512);
  CHECK(batches[11].size() == 461);

  std::set<int> seen;
  for (const auto& batch : batches)
    for (int idx : batch) {
      CHECK(idx >= 0);
      CHECK(idx < 6093);
      CHECK(seen.insert(idx).second);
    }
  CHECK(seen.size() == 6093);

  const auto dropped = data::make_batches(6093, 512, 1, 0, true);
  CHECK(dropped.size() == 11);
  for (const auto& batch : dropped) CHECK(batch.size() == 512);
}

TEST_CASE("make_batches: pure function of (seed, epoch)") {
  const auto a = data::make_batches(100, 16, 4, 2, false);
  const auto b = data::make_batches(100, 16, 4, 2, false);
  CHECK(a == b);
  const auto other_epoch = data::make_batches(100, 16, 4, 3, false);
  CHECK(a != other_epoch);
  const auto other_seed = data::make_batches(100, 16, 5, 2, false);
  CHECK(a != other_seed);
  // Exact multiple: no ragged tail either way.
  const auto exact = data::make_batches(64, 16, 0, 0, false);
  CHECK(exact.size() == 4);
  CHECK(data::make_batches(64, 16, 0, 0, true).size() == 4);
}

TEST_CASE("make_batches: batch_size below 2 is rejected") {
  CHECK(testutil::error_code_of([] { data::make_batches(10, 1, 0, 0, false); }) == "data.batch_size");
  CHECK(testutil::error_code_of([] { data::make_batches(0, 4, 0, 0, false); }) == "data.empty");
}

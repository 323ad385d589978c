#include "mmalign/data/synth.hpp"

#include <cmath>
#include <random>
#include <string>

#include "mmalign/common/error.hpp"
#include "mmalign/common/rng.hpp"

namespace mmalign::data {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

nn::VecD gaussian_vec(int dim, std::mt19937_64& rng, double sigma = 1.0) {
  std::normal_distribution<double> d(0.0, sigma);
  nn::VecD v(dim);
  for (int i = 0; i < dim; ++i) v(i) = d(rng);
  return v;
}

/// Uniform point in the ball of the given radius.
nn::VecD ball_vec(int dim, double radius, std::mt19937_64& rng) {
  nn::VecD v = gaussian_vec(dim, rng);
  const double n = v.norm();
  if (n == 0.0) return nn::VecD::Zero(dim);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = radius * std::pow(u(rng), 1.0 / static_cast<double>(dim));
  return v * (r / n);
}

/// Class centers on the radius sphere with enforced pairwise separation.
/// At radius == min distance the spherical cap argument leaves room for far
/// more centers than we ever draw, so rejection terminates quickly.
std::vector<nn::VecD> draw_centers(int n_classes, int dim, std::mt19937_64& rng) {
  std::vector<nn::VecD> centers;
  centers.reserve(n_classes);
  int attempts = 0;
  while (static_cast<int>(centers.size()) < n_classes) {
    MMA_REQUIRE(++attempts < 100000, "synth.centers",
                "synth_generate: could not place class centers with the required separation "
                "(latent_dim too small for n_classes)");
    nn::VecD c = gaussian_vec(dim, rng);
    const double n = c.norm();
    if (n < 1e-9) continue;
    c *= SynthSpec::kCenterRadius / n;
    bool ok = true;
    for (const nn::VecD& prev : centers)
      if ((prev - c).norm() < SynthSpec::kCenterMinDist) {
        ok = false;
        break;
      }
    if (ok) centers.push_back(std::move(c));
  }
  return centers;
}

}  // namespace

nn::MatD synth_render_basis(int latent_dim) {
  MMA_REQUIRE(latent_dim >= 1, "synth.config", "latent_dim must be >= 1");
  const int width = kWindowLen * kChannels;
  MMA_REQUIRE(latent_dim <= width, "synth.config", "latent_dim exceeds window capacity");
  nn::MatD basis(latent_dim, width);
  // Integer frequencies over the 256-step window are mutually orthogonal;
  // the per-channel phase shear keeps all 12 channels active per component.
  for (int j = 0; j < latent_dim; ++j) {
    const double freq = static_cast<double>(j + 1);
    for (int ch = 0; ch < kChannels; ++ch) {
      const double phase = kTwoPi * static_cast<double>(ch) / kChannels + 0.7 * j;
      for (int t = 0; t < kWindowLen; ++t)
        basis(j, t * kChannels + ch) = std::sin(kTwoPi * freq * t / kWindowLen + phase);
    }
  }
  // Gram-Schmidt (twice, for numerical hygiene) to make rows exactly
  // orthonormal: rendering then preserves latent-space distances.
  for (int j = 0; j < latent_dim; ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (int p = 0; p < j; ++p) basis.row(j) -= basis.row(p).dot(basis.row(j)) * basis.row(p);
    const double n = basis.row(j).norm();
    MMA_REQUIRE(n > 1e-9, "synth.basis", "rendering basis degenerate");
    basis.row(j) /= n;
  }
  return basis;
}

IMUWindow synth_render_window(const nn::VecD& latent, const nn::MatD& basis) {
  MMA_REQUIRE(latent.size() == basis.rows(), "synth.config",
              "synth_render_window: latent/basis dimension mismatch");
  const nn::MatD flat = latent.transpose() * basis;  // 1 x (256*12)
  IMUWindow w;
  w.valid_len = kWindowLen;
  w.start_time_s = 0.0;
  w.values.resize(kWindowLen, kChannels);
  for (int t = 0; t < kWindowLen; ++t)
    for (int ch = 0; ch < kChannels; ++ch)
      w.values(t, ch) = static_cast<float>(flat(0, t * kChannels + ch));
  return w;
}

std::vector<PairedSample> synth_generate(const SynthSpec& spec) {
  MMA_REQUIRE(spec.n_classes >= 2, "synth.config", "synth_generate: n_classes must be >= 2");
  MMA_REQUIRE(spec.n_pairs >= spec.n_classes, "synth.config",
              "synth_generate: n_pairs must be >= n_classes");
  MMA_REQUIRE(spec.noise_sigma >= 0, "synth.config", "synth_generate: noise_sigma must be >= 0");
  const double vsigma =
      spec.vision_noise_sigma < 0 ? spec.noise_sigma : spec.vision_noise_sigma;

  SeedStream seeds(spec.seed);
  auto rng_centers = seeds.engine("synth-centers");
  auto rng_offsets = seeds.engine("synth-offsets");
  auto rng_noise = seeds.engine("synth-noise");

  const std::vector<nn::VecD> centers = draw_centers(spec.n_classes, spec.latent_dim, rng_centers);
  const nn::MatD basis = synth_render_basis(spec.latent_dim);

  std::vector<PairedSample> out;
  out.reserve(spec.n_pairs);
  for (int i = 0; i < spec.n_pairs; ++i) {
    const int label = i % spec.n_classes;
    const nn::VecD offset = ball_vec(spec.latent_dim, SynthSpec::kOffsetRadius, rng_offsets);
    const nn::VecD shared = centers[label] + offset;
    const nn::VecD imu_latent =
        spec.noise_sigma > 0 ? (shared + gaussian_vec(spec.latent_dim, rng_noise, spec.noise_sigma)).eval()
                             : shared;
    const nn::VecD vis_latent =
        vsigma > 0 ? (shared + gaussian_vec(spec.latent_dim, rng_noise, vsigma)).eval() : shared;

    PairedSample s;
    s.id = i;
    s.label = label;
    s.subject_id = i % 10;
    s.scene_id = 0;
    s.session_id = i;
    s.imu = synth_render_window(imu_latent, basis);
    VisionLatent vl;
    vl.z = vis_latent.cast<float>();
    s.vision = std::move(vl);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<PairedSample> synth_generate(int n_classes, int n_pairs, int latent_dim,
                                         double noise_sigma, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_classes = n_classes;
  spec.n_pairs = n_pairs;
  spec.latent_dim = latent_dim;
  spec.noise_sigma = noise_sigma;
  spec.seed = seed;
  return synth_generate(spec);
}

}  // namespace mmalign::data

#include <doctest.h>

#include <random>
#include <string>

#include <mmalign/common/rng.hpp>
#include <mmalign/encoders/imu_encoder.hpp>
#include <mmalign/encoders/vision.hpp>

#include "test_helpers.hpp"

using namespace mmalign;
using encoders::IMUEncoderConfig;
using encoders::StubVisionConfig;

namespace {

IMUEncoderConfig desk_config() {
  IMUEncoderConfig cfg;
  cfg.d_model = 64;
  cfg.conv_kernel = 3;
  cfg.conv_stride = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 8;
  cfg.ff_mult = 4;
  return cfg;
}

nn::ParamSet<float> desk_params(const IMUEncoderConfig& cfg, std::uint64_t seed = 0) {
  nn::ParamSet<float> params;
  auto rng = SeedStream(seed).engine("encoder-init");
  encoders::init_imu_encoder(params, cfg, "encoder/", rng);
  return params;
}

nn::MatF ramp_window(int rows, int cols) {
  nn::MatF w(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) w(r, c) = 0.01f * static_cast<float>(r - c);
  return w;
}

}  // namespace

TEST_CASE("imu encoder: parameter ledger matches hand-computed counts") {
  // Conv stem at kernel 3: 3 * 12 * 64 weights + 64 biases = 2368.
  // Positional table at stride 1: 256 tokens * 64 = 16384.
  // One block: ln1 128 + attention 4 * (64*64) + 4 * 64 = 16640 + ln2 128
  //            + mlp 64*256 + 256 + 256*64 + 64 = 33088, total 49984.
  IMUEncoderConfig cfg = desk_config();
  cfg.conv_stride = 1;
  const auto params = desk_params(cfg);
  CHECK(encoders::count_parameters(params, "encoder/conv/") == 2368);
  CHECK(encoders::count_parameters(params, "encoder/pos") == 16384);
  CHECK(encoders::count_parameters(params, "encoder/layer0/") == 49984);
  CHECK(encoders::count_parameters(params, "encoder/layer1/") == 49984);
  CHECK(encoders::count_parameters(params, "encoder/ln_f/") == 128);
  CHECK(encoders::count_parameters(params, "encoder/") ==
        2368 + 16384 + 2 * 49984 + 128);

  // Stride 8 shrinks only the positional table: 32 tokens * 64 = 2048.
  const auto strided = desk_params(desk_config());
  CHECK(encoders::count_parameters(strided, "encoder/pos") == 2048);
  CHECK(encoders::count_parameters(strided, "encoder/") == 2368 + 2048 + 2 * 49984 + 128);

  // Retrieval-profile encoder (kernel 9, stride 8): conv 9*12*64 + 64 = 6976.
  IMUEncoderConfig k9 = desk_config();
  k9.conv_kernel = 9;
  const auto wide = desk_params(k9);
  CHECK(encoders::count_parameters(wide, "encoder/conv/") == 6976);
  CHECK(encoders::count_parameters(wide, "encoder/") == 6976 + 2048 + 2 * 49984 + 128);
}

TEST_CASE("imu encoder: output shape and determinism") {
  const IMUEncoderConfig cfg = desk_config();
  const auto params = desk_params(cfg);
  const nn::MatF window = ramp_window(cfg.window_len, cfg.in_channels);

  const nn::MatF tokens = encoders::imu_encode(params, cfg, "encoder/", window, 256);
  CHECK(tokens.rows() == 32);  // ceil(256 / 8)
  CHECK(tokens.cols() == 64);
  CHECK(nn::all_finite(tokens));

  const nn::MatF again = encoders::imu_encode(params, cfg, "encoder/", window, 256);
  CHECK((tokens - again).cwiseAbs().maxCoeff() == 0.0f);

  // Same config, different init seed: different function.
  const auto params2 = desk_params(cfg, 1);
  CHECK(params2.digest() != params.digest());
  const nn::MatF other = encoders::imu_encode(params2, cfg, "encoder/", window, 256);
  CHECK((tokens - other).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("imu encoder: valid_len masks the padded tail") {
  const IMUEncoderConfig cfg = desk_config();
  const auto params = desk_params(cfg);

  nn::MatF short_window = ramp_window(cfg.window_len, cfg.in_channels);
  short_window.bottomRows(cfg.window_len - 100).setZero();

  // Garbage beyond valid_len must not reach the valid tokens: attention keys
  // at and past ceil(100 / 8) = 13 are masked out.
  nn::MatF poisoned = short_window;
  poisoned.bottomRows(cfg.window_len - 104).setConstant(50.0f);

  const nn::MatF clean_tokens = encoders::imu_encode(params, cfg, "encoder/", short_window, 100);
  const nn::MatF poisoned_tokens = encoders::imu_encode(params, cfg, "encoder/", poisoned, 100);
  const int valid_tokens = (100 + cfg.conv_stride - 1) / cfg.conv_stride;
  const float diff = (clean_tokens.topRows(valid_tokens) - poisoned_tokens.topRows(valid_tokens))
                         .cwiseAbs()
                         .maxCoeff();
  // The conv stem at stride 8 / kernel 3 does not straddle row 104 from any
  // valid token position, and attention cannot look past the mask.
  CHECK(diff == 0.0f);

  // Masking matters: treating the full window as valid changes the output.
  const nn::MatF unmasked = encoders::imu_encode(params, cfg, "encoder/", poisoned, 256);
  CHECK((clean_tokens.topRows(valid_tokens) - unmasked.topRows(valid_tokens))
            .cwiseAbs()
            .maxCoeff() > 0.0f);
}

TEST_CASE("imu encoder: all-zero window stays finite (layer norm epsilon)") {
  const IMUEncoderConfig cfg = desk_config();
  const auto params = desk_params(cfg);
  const nn::MatF zeros = nn::MatF::Zero(cfg.window_len, cfg.in_channels);
  const nn::MatF tokens = encoders::imu_encode(params, cfg, "encoder/", zeros, 256);
  CHECK(nn::all_finite(tokens));
}

TEST_CASE("imu encoder: typed failures") {
  const IMUEncoderConfig cfg = desk_config();
  const auto params = desk_params(cfg);
  const nn::MatF window = ramp_window(cfg.window_len, cfg.in_channels);

  SUBCASE("bad shape") {
    const nn::MatF wrong = ramp_window(cfg.window_len, 5);
    CHECK(testutil::error_code_of([&] {
            encoders::imu_encode(params, cfg, "encoder/", wrong, 10);
          }) == "encoder.input_shape");
  }
  SUBCASE("non-finite input") {
    nn::MatF bad = window;
    bad(3, 3) = std::numeric_limits<float>::quiet_NaN();
    CHECK(testutil::error_code_of([&] {
            encoders::imu_encode(params, cfg, "encoder/", bad, 256);
          }) == "encoder.nonfinite_input");
  }
  SUBCASE("valid_len out of range") {
    CHECK(testutil::error_code_of([&] {
            encoders::imu_encode(params, cfg, "encoder/", window, 0);
          }) == "encoder.valid_len");
    CHECK(testutil::error_code_of([&] {
            encoders::imu_encode(params, cfg, "encoder/", window, 257);
          }) == "encoder.valid_len");
  }
  SUBCASE("indivisible heads") {
    IMUEncoderConfig bad = cfg;
    bad.d_model = 65;
    CHECK(testutil::error_code_of([&] { bad.validate(); }) == "encoder.config");
  }
}

TEST_CASE("stub vision: shape, tanh range, determinism, frozen flags") {
  StubVisionConfig cfg;
  cfg.latent_dim = 8;
  cfg.n_tokens = 16;
  cfg.d_model = 64;
  nn::ParamSet<float> params;
  auto rng = SeedStream(4).engine("vision-init");
  encoders::init_stub_vision(params, cfg, "vision/", rng);
  CHECK(!params.at("vision/w").trainable);
  CHECK(!params.at("vision/b").trainable);
  CHECK(params.size_scalars(true) == 0);

  nn::VecF latent(8);
  latent << 0.5f, -1.0f, 0.25f, 0.0f, 2.0f, -0.5f, 1.0f, -0.125f;
  const auto tokens = encoders::stub_vision_tokens(params, cfg, "vision/", latent);
  CHECK(tokens.rows() == 16);
  CHECK(tokens.cols() == 64);
  CHECK(tokens.cwiseAbs().maxCoeff() < 1.0f);  // tanh is strictly inside (-1, 1)
  CHECK(tokens.cwiseAbs().maxCoeff() > 0.0f);

  const auto again = encoders::stub_vision_tokens(params, cfg, "vision/", latent);
  CHECK((tokens - again).cwiseAbs().maxCoeff() == 0.0f);

  nn::VecF other = latent;
  other(0) += 0.1f;
  const auto moved = encoders::stub_vision_tokens(params, cfg, "vision/", other);
  CHECK((tokens - moved).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("vision provider: dispatch and rejection") {
  StubVisionConfig cfg;
  cfg.latent_dim = 4;
  cfg.n_tokens = 3;
  cfg.d_model = 8;
  nn::ParamSet<float> params;
  auto rng = SeedStream(0).engine("vision-init");
  encoders::init_stub_vision(params, cfg, "vision/", rng);

  encoders::VisionProvider provider;
  provider.d_model = 8;
  provider.params = &params;
  provider.stub = cfg;

  SUBCASE("latent goes through the stub") {
    const auto tokens = provider.embed(data::VisionLatent{nn::VecF::Ones(4)});
    CHECK(tokens.rows() == 3);
    CHECK(tokens.cols() == 8);
  }
  SUBCASE("inline tokens pass through with dim check") {
    const auto tokens = provider.embed(data::VisionTokens{nn::MatF::Ones(5, 8)});
    CHECK(tokens.rows() == 5);
    CHECK(testutil::error_code_of([&] {
            provider.embed(data::VisionTokens{nn::MatF::Ones(5, 7)});
          }) == "vision.dim_mismatch");
  }
  SUBCASE("raw frames are rejected") {
    CHECK(testutil::error_code_of([&] {
            provider.embed(data::FrameRef{"frames/", 3, 0.1});
          }) == "vision.frames_unsupported");
  }
  SUBCASE("latent without stub weights is rejected") {
    encoders::VisionProvider bare;
    bare.d_model = 8;
    CHECK(testutil::error_code_of([&] {
            bare.embed(data::VisionLatent{nn::VecF::Ones(4)});
          }) == "vision.no_stub");
  }
  SUBCASE("wrong latent size is rejected") {
    CHECK(testutil::error_code_of([&] {
            provider.embed(data::VisionLatent{nn::VecF::Ones(5)});
          }) == "vision.latent_dim");
  }
}

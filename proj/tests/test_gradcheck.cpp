#include <doctest.h>

#include <chrono>

#include <mmalign/align/trainer.hpp>
#include <mmalign/nn/gradcheck.hpp>
#include <mmalign/nn/graph.hpp>

#include "test_helpers.hpp"

using namespace mmalign;

TEST_CASE("grad_check_tensor: validates a correct gradient, flags a wrong one") {
  // f(x) = sum(x .^ 2), df/dx = 2x — exact closed form, no graph involved.
  nn::MatD x(2, 3);
  x << 0.5, -1.0, 2.0, 0.1, 0.0, -0.7;
  const auto loss = [&x] { return x.array().square().sum(); };

  nn::MatD good = 2.0 * x;
  const auto ok = nn::grad_check_tensor(x, good, loss, "square");
  CHECK(ok.coords_checked == 6);
  CHECK(ok.pass(1e-6));

  nn::MatD bad = good;
  bad(1, 2) += 0.5;  // corrupt one coordinate
  const auto caught = nn::grad_check_tensor(x, bad, loss, "square-broken");
  CHECK(!caught.pass(1e-4));
  CHECK(caught.worst_row == 1);
  CHECK(caught.worst_col == 2);
  CHECK(caught.worst_tensor == "square-broken");
}

TEST_CASE("grad_check_tensor: graph backward for a composite op chain") {
  // loss = sum over entries of gelu(x * w) — exercises matmul and gelu
  // backward against central differences in double precision.
  nn::MatD x(3, 4);
  x << 0.2, -0.4, 0.6, -0.8, 1.0, -1.2, 0.3, 0.5, -0.1, 0.7, -0.9, 0.11;
  nn::MatD w(4, 2);
  w << 0.5, -0.25, 0.75, 0.1, -0.3, 0.2, 0.4, -0.6;

  auto forward = [&](nn::Graph<double>& g, nn::Var& xv, nn::Var& wv) {
    xv = g.leaf_ref(&x, true);
    wv = g.leaf_ref(&w, true);
    return g.dot_all(g.gelu(g.matmul(xv, wv)), nn::MatD::Ones(3, 2));
  };

  nn::Graph<double> g(true);
  nn::Var xv, wv;
  nn::Var loss = forward(g, xv, wv);
  g.backward(loss);
  const nn::MatD gx = g.grad(xv);
  const nn::MatD gw = g.grad(wv);

  const auto loss_value = [&] {
    nn::Graph<double> g2(false);
    nn::Var a, b;
    return g2.value(forward(g2, a, b))(0, 0);
  };
  CHECK(nn::grad_check_tensor(x, gx, loss_value, "x").pass(1e-6));
  CHECK(nn::grad_check_tensor(w, gw, loss_value, "w").pass(1e-6));
}

TEST_CASE("run_grad_suite: every gradient path beats the 1e-4 tolerance") {
  const align::GradSuiteReport rep = align::run_grad_suite(7);
  CAPTURE(rep.info_nce);
  CAPTURE(rep.supervised);
  CAPTURE(rep.encoder);
  CAPTURE(rep.resampler);
  CAPTURE(rep.full_path);
  CHECK(rep.info_nce < 1e-4);
  CHECK(rep.supervised < 1e-4);
  CHECK(rep.encoder < 1e-4);
  CHECK(rep.resampler < 1e-4);
  CHECK(rep.full_path < 1e-4);
  CHECK(rep.pass(1e-4));
  CHECK(rep.max() == std::max({rep.info_nce, rep.supervised, rep.encoder, rep.resampler,
                               rep.full_path}));
  CHECK(rep.wall_s > 0.0);
  CHECK(rep.wall_s < 120.0);
}

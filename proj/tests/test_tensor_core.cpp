#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gradcheck.hpp"
#include "pmc/nn/container.hpp"
#include "pmc/nn/losses.hpp"
#include "pmc/nn/ops.hpp"
#include "pmc/nn/optim.hpp"

using namespace pmc;
using namespace pmc::nn;
using pmc::testing::grad_check;
using pmc::testing::project;
using pmc::testing::random_tensor;

namespace {

Var<double> cd(Shape s, double fill) { return constant(Tensor<double>(std::move(s), fill)); }

}  // namespace

TEST_CASE("conv2d sums a 3x3 window of ones") {
  auto y = conv2d(cd({1, 1, 3, 3}, 1.0), cd({1, 1, 3, 3}, 1.0), cd({1}, 0.0), 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d with a centred delta kernel is the identity") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 1, 6, 5}, rng);
  Tensor<double> k({1, 1, 3, 3}, 0.0);
  k.data[4] = 1.0;
  auto y = conv2d(constant(x), constant(k), cd({1}, 0.0), 1, 1);
  REQUIRE(y.shape() == x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value().data[i] == x.data[i]);
}

TEST_CASE("conv2d reports both shapes on mismatch") {
  try {
    conv2d(cd({1, 2, 5, 5}, 1.0), cd({1, 3, 3, 3}, 1.0), cd({1}, 0.0), 1, 0);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1, 2, 5, 5)") != std::string::npos);
    CHECK(msg.find("(1, 3, 3, 3)") != std::string::npos);
  }
}

TEST_CASE("deconv2d broadcasts one tap over a stride-2 kernel") {
  auto y = deconv2d(cd({1, 1, 1, 1}, 0.7), cd({1, 1, 2, 2}, 1.0), cd({1}, 0.0), 2, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.value().data) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("conv/deconv shape chain 32 -> 4 -> 32") {
  // Size formulas by hand: floor((32 + 4 - 5)/2) + 1 = 16, then 8, then 4;
  // (4-1)*2 - 4 + 5 + 1 = 8, then 16, then 32.
  Var<double> x = cd({1, 1, 32, 32}, 0.5);
  for (int i = 0; i < 3; ++i) x = conv2d(x, cd({1, 1, 5, 5}, 0.01), cd({1}, 0.0), 2, 2);
  CHECK(x.shape() == Shape{1, 1, 4, 4});
  for (int i = 0; i < 3; ++i) x = deconv2d(x, cd({1, 1, 5, 5}, 0.01), cd({1}, 0.0), 2, 2, 1);
  CHECK(x.shape() == Shape{1, 1, 32, 32});
}

TEST_CASE("conv and deconv output-shape formulas hold exhaustively") {
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t k : {3u, 5u}) {
      for (std::size_t pad = 0; pad <= 2; ++pad) {
        for (std::size_t h = 1; h <= 32; ++h) {
          if (h + 2 * pad < k) continue;
          const std::size_t expected = (h + 2 * pad - k) / stride + 1;
          auto y = conv2d(cd({1, 1, h, h + 1 > 32 ? h : h + 1}, 1.0), cd({1, 1, k, k}, 1.0), cd({1}, 0.0),
                          stride, pad);
          CHECK(y.shape()[2] == expected);
          // Deconv: (H-1)*s - 2p + k; with output padding (h+2p-k) mod s it inverts the conv shape.
          if ((expected - 1) * stride + k > 2 * pad) {
            const std::size_t op = (h + 2 * pad - k) % stride;
            auto z = deconv2d(y, cd({1, 1, k, k}, 1.0), cd({1}, 0.0), stride, pad, op);
            CHECK(z.shape()[2] == h);
            auto z0 = deconv2d(y, cd({1, 1, k, k}, 1.0), cd({1}, 0.0), stride, pad, 0);
            CHECK(z0.shape()[2] == (expected - 1) * stride + k - 2 * pad);
          }
        }
      }
    }
  }
}

TEST_CASE("conv2d and deconv2d gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t stride = 1 + seed % 2, pad = seed % 3, k = (seed % 4 < 2) ? 3 : 5;
    auto conv = grad_check({random_tensor({2, 3, 8, 8}, rng), random_tensor({4, 3, k, k}, rng),
                            random_tensor({4}, rng)},
                           [&](const std::vector<Var<double>>& in) {
                             return project(conv2d(in[0], in[1], in[2], stride, pad), seed);
                           });
    CHECK(conv.max_rel_error <= 1e-4);
    const std::size_t op = stride > 1 ? seed % 2 : 0;
    auto deconv = grad_check({random_tensor({2, 3, 5, 5}, rng), random_tensor({3, 2, k, k}, rng),
                              random_tensor({2}, rng)},
                             [&](const std::vector<Var<double>>& in) {
                               return project(deconv2d(in[0], in[1], in[2], stride, pad, op), seed + 1);
                             });
    CHECK(deconv.max_rel_error <= 1e-4);
  }
}

TEST_CASE("gdn with unit beta and zero gamma is the identity") {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 3, 4, 4}, rng, -3, 3);
  auto y = gdn(constant(x), cd({3}, std::sqrt(1.0 - kGdnBetaMin)), cd({3, 3}, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value().data[i] == doctest::Approx(x.data[i]).epsilon(1e-12));
}

TEST_CASE("gdn single channel hand value") {
  // 2 / sqrt(1 + 1 * 2^2) = 2 / sqrt(5)
  auto y = gdn(cd({1, 1, 1, 1}, 2.0), cd({1}, std::sqrt(1.0 - kGdnBetaMin)), cd({1, 1}, 1.0));
  CHECK(y.item() == doctest::Approx(0.894427191).epsilon(1e-9));
  auto z = igdn(cd({1, 1, 1, 1}, 2.0), cd({1}, std::sqrt(1.0 - kGdnBetaMin)), cd({1, 1}, 1.0));
  CHECK(z.item() == doctest::Approx(2.0 * std::sqrt(5.0)).epsilon(1e-9));
}

TEST_CASE("gdn and igdn gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(100 + seed);
    std::vector<Tensor<double>> in{random_tensor({2, 3, 3, 3}, rng, -2, 2), random_tensor({3}, rng, 0.5, 1.5),
                                   random_tensor({3, 3}, rng, -0.8, 0.8)};
    auto fwd = grad_check(in, [&](const std::vector<Var<double>>& v) { return project(gdn(v[0], v[1], v[2]), seed); });
    auto inv = grad_check(in, [&](const std::vector<Var<double>>& v) { return project(igdn(v[0], v[1], v[2]), seed); });
    CHECK(fwd.max_rel_error <= 1e-4);
    CHECK(inv.max_rel_error <= 1e-4);
  }
}

TEST_CASE("gdn outputs stay finite over a wide input range") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor({1, 4, 4, 4}, rng, -1e6, 1e6);
    Tensor<float> xf = cast<float>(x);
    Tensor<float> beta({4}, 0.0f);  // smallest effective beta
    auto gamma = cast<float>(random_tensor({4, 4}, rng, -1, 1));
    auto y = gdn(constant(xf), constant(beta), constant(gamma));
    CHECK(y.value().all_finite());
  }
}

TEST_CASE("gdn rejects a non-finite denominator") {
  Tensor<float> x({1, 1, 1, 1}, std::numeric_limits<float>::infinity());
  CHECK_THROWS_AS(gdn(constant(x), constant(Tensor<float>({1}, 1.0f)), constant(Tensor<float>({1, 1}, 1.0f))),
                  NumericError);
}

TEST_CASE("cross entropy values and gradient") {
  std::vector<int> labels{3};
  CHECK(cross_entropy(cd({1, 10}, 0.0), labels).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  Tensor<double> sat({1, 10}, 0.0);
  sat.data[3] = 100.0;
  CHECK(cross_entropy(constant(sat), labels).item() < 1e-6);

  std::mt19937_64 rng(4);
  auto logits = leaf(random_tensor({4, 5}, rng, -3, 3));
  std::vector<int> lab{0, 4, 2, 2};
  auto loss = cross_entropy(logits, lab);
  backward(loss);
  for (std::size_t i = 0; i < 4; ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < 5; ++j) denom += std::exp(logits.value().data[i * 5 + j]);
    for (std::size_t j = 0; j < 5; ++j) {
      const double p = std::exp(logits.value().data[i * 5 + j]) / denom;
      const double expected = (p - (static_cast<int>(j) == lab[i] ? 1.0 : 0.0)) / 4.0;
      CHECK(std::abs(logits.grad()[i * 5 + j] - expected) <= 1e-6);
    }
  }
  std::vector<int> bad{10};
  CHECK_THROWS_AS(cross_entropy(cd({1, 10}, 0.0), bad), IndexError);
}

TEST_CASE("mse values and gradient") {
  CHECK(mse(cd({2, 3}, 0.25), cd({2, 3}, 0.25)).item() == 0.0);
  CHECK(mse(cd({2, 3}, 0.0), cd({2, 3}, 1.0)).item() == doctest::Approx(1.0));
  CHECK_THROWS_AS(mse(cd({2, 3}, 0.0), cd({3, 2}, 1.0)), DimensionError);

  std::mt19937_64 rng(8);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  auto va = leaf(a), vb = leaf(b);
  backward(mse(va, vb));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::abs(va.grad()[i] - 2.0 * (a.data[i] - b.data[i]) / 12.0) <= 1e-6);
    CHECK(std::abs(vb.grad()[i] + 2.0 * (a.data[i] - b.data[i]) / 12.0) <= 1e-6);
  }
  auto fd = grad_check({a, b}, [](const std::vector<Var<double>>& v) { return mse(v[0], v[1]); });
  CHECK(fd.max_rel_error <= 1e-6);
}

TEST_CASE("ssim values, window check and gradient") {
  std::mt19937_64 rng(12);
  auto img = random_tensor({1, 3, 16, 16}, rng, 0, 1);
  CHECK(ssim(constant(img), constant(img)).item() == doctest::Approx(1.0).epsilon(1e-12));

  const double c1 = 1e-4;
  CHECK(ssim(cd({1, 1, 12, 12}, 0.0), cd({1, 1, 12, 12}, 1.0)).item() ==
        doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-9));

  CHECK_THROWS_AS(ssim(cd({1, 1, 10, 32}, 0.0), cd({1, 1, 10, 32}, 0.0)), DimensionError);

  auto fd = grad_check({random_tensor({1, 2, 12, 13}, rng, 0, 1), random_tensor({1, 2, 12, 13}, rng, 0, 1)},
                       [](const std::vector<Var<double>>& v) { return ssim(v[0], v[1]); });
  CHECK(fd.max_rel_error <= 1e-3);
}

namespace {

Parameter scalar_param(float v, float g) {
  Parameter p("p", Tensor<float>({1}, v));
  p.value().grad = {g};
  return p;
}

}  // namespace

TEST_CASE("adam step closed forms") {
  Parameter zero = scalar_param(0.5f, 0.0f);
  adam_step({&zero}, 1e-3f);
  CHECK(zero.value().data[0] == 0.5f);
  CHECK(zero.step_count == 1);

  Parameter p = scalar_param(0.0f, -3.0f);
  adam_step({&p}, 1e-3f);
  CHECK(std::abs(p.value().data[0] - 1e-3f) <= 1e-6);
  const float after_first = p.value().data[0];
  adam_step({&p}, 1e-3f);
  CHECK(std::abs((p.value().data[0] - after_first) - 1e-3f) <= 1e-6);
  CHECK(p.step_count == 2);

  Parameter missing("m", Tensor<float>({2}, 1.0f));
  CHECK_THROWS_AS(adam_step({&missing}, 1e-3f), StateError);
}

TEST_CASE("clip_global_norm") {
  Parameter small = scalar_param(0.0f, 0.5f);
  CHECK(clip_global_norm({&small}, 1.0) == 1.0);
  CHECK(small.value().grad[0] == 0.5f);

  Parameter a = scalar_param(0.0f, 3.0f), b = scalar_param(0.0f, 4.0f);
  CHECK(clip_global_norm({&a, &b}, 1.0) == doctest::Approx(0.2));
  CHECK(a.value().grad[0] == doctest::Approx(0.6f));
  CHECK(b.value().grad[0] == doctest::Approx(0.8f));

  Parameter z = scalar_param(0.0f, 0.0f);
  CHECK(clip_global_norm({&z}, 1.0) == 1.0);
  CHECK(z.value().grad[0] == 0.0f);
}

TEST_CASE("plateau schedule") {
  TrainSchedule dec{.base_lr = 1e-3, .factor = 0.1, .patience = 2, .min_lr = 1e-6};
  for (double loss : {5.0, 4.0, 3.0, 2.0, 1.0}) CHECK(plateau_step(dec, loss) == doctest::Approx(1e-3));

  TrainSchedule flat{.base_lr = 1e-3, .factor = 0.1, .patience = 2, .min_lr = 1e-6};
  CHECK(plateau_step(flat, 1.0) == doctest::Approx(1e-3));
  CHECK(plateau_step(flat, 1.0) == doctest::Approx(1e-3));
  CHECK(plateau_step(flat, 1.0) == doctest::Approx(1e-3));
  CHECK(plateau_step(flat, 1.0) == doctest::Approx(1e-4));

  TrainSchedule floor{.base_lr = 1e-6, .factor = 0.1, .patience = 0, .min_lr = 1e-6};
  for (int i = 0; i < 5; ++i) CHECK(plateau_step(floor, 1.0) == doctest::Approx(1e-6));
}

TEST_CASE("adam, clip and plateau are deterministic for a fixed seed") {
  auto run = [] {
    std::mt19937_64 rng(77);
    Parameter w("w", kaiming_uniform({4, 3}, 3, rng));
    Parameter b("b", Tensor<float>({4}, 0.0f));
    TrainSchedule sched{.base_lr = 1e-2, .factor = 0.5, .patience = 1};
    std::mt19937_64 data_rng(1);
    for (int epoch = 0; epoch < 5; ++epoch) {
      double total = 0.0;
      for (int step = 0; step < 4; ++step) {
        Tensor<float> x({2, 3});
        for (auto& v : x.data) v = std::uniform_real_distribution<float>(-1, 1)(data_rng);
        std::vector<int> y{step % 4, (step + 1) % 4};
        zero_grad({&w, &b});
        auto loss = cross_entropy(linear(constant(x), w.var, b.var), y);
        backward(loss);
        clip_global_norm({&w, &b}, 1.0);
        adam_step({&w, &b}, static_cast<float>(sched.lr()));
        total += loss.item();
      }
      plateau_step(sched, total);
    }
    return write_parameters({&w, &b});
  };
  CHECK(run() == run());
}

TEST_CASE("model container round trip and validation") {
  std::mt19937_64 rng(2);
  Parameter a("layer.weight", kaiming_uniform({2, 3, 1, 1}, 3, rng));
  Parameter b("layer.bias", Tensor<float>({2}, 0.25f));
  auto bytes = write_parameters({&a, &b});
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PMCC");
  // magic + version + count + (2 + 12 + 1 + 16 + 24) + (2 + 10 + 1 + 4 + 8)
  CHECK(bytes.size() == 4 + 2 + 4 + 55 + 25);

  Parameter a2("layer.weight", Tensor<float>({2, 3, 1, 1}, 0.0f));
  Parameter b2("layer.bias", Tensor<float>({2}, 0.0f));
  load_parameters({&a2, &b2}, bytes);
  CHECK(a2.value().data == a.value().data);
  CHECK(b2.value().data == b.value().data);

  auto corrupt = bytes;
  corrupt[0] = 'X';
  CHECK_THROWS_AS(read_container(corrupt), FormatError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  CHECK_THROWS_AS(read_container(truncated), FormatError);
  Parameter wrong("layer.bias", Tensor<float>({3}, 0.0f));
  CHECK_THROWS_AS(load_parameters({&wrong}, bytes), FormatError);
}

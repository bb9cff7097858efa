#include <doctest.h>

#include <cmath>
#include <limits>

#include "featherpoint/error.hpp"
#include "featherpoint/ops.hpp"
#include "featherpoint/optim.hpp"
#include "featherpoint/rng.hpp"
#include "featherpoint/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace featherpoint;
using fptest::gradcheck;
using fptest::random_tensor;

TEST_SUITE("tensor-autograd") {

TEST_CASE("conv2d of ones over ones sums to 9") {
    auto x = Tensor::full({1, 1, 3, 3}, 1.0);
    auto k = Tensor::full({1, 1, 3, 3}, 1.0);
    auto y = ops::conv2d(x, k, Tensor::zeros({1}), 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.0);
}

TEST_CASE("conv2d with a one-hot 1x1 kernel copies channel 0") {
    Rng rng(1);
    auto x = random_tensor(rng, {2, 3, 4, 5}, -1, 1, false);
    auto k = Tensor::from({1, 3, 1, 1}, {1.0, 0.0, 0.0});
    auto y = ops::conv2d(x, k, Tensor(), 1, 0);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t w = 0; w < 5; ++w) CHECK(y.at({n, 0, h, w}) == x.at({n, 0, h, w}));
}

TEST_CASE("conv2d output size follows floor((H + 2p - k) / s) + 1") {
    auto y = ops::conv2d(Tensor::zeros({1, 1, 64, 64}), Tensor::zeros({4, 1, 3, 3}), Tensor(), 2, 1);
    CHECK(y.shape() == Shape{1, 4, 32, 32});
}

TEST_CASE("conv2d shape errors name the offending dimension") {
    auto x = Tensor::zeros({1, 2, 5, 5});
    auto k = Tensor::zeros({1, 3, 3, 3});
    try {
        ops::conv2d(x, k, Tensor(), 1, 1);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("input channels") != std::string::npos);
    }
    CHECK_THROWS_AS(ops::conv2d(x, Tensor::zeros({1, 2, 2, 2}), Tensor(), 1, 0), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t stride = 1 + trial % 2, pad = trial % 3 == 0 ? 0 : 1, kk = trial % 4 == 3 ? 1 : 3;
        auto x = random_tensor(rng, {1 + trial % 2, 2, 5, 5});
        auto k = random_tensor(rng, {3, 2, kk, kk});
        auto b = random_tensor(rng, {3});
        const double err = gradcheck(
            [&](const std::vector<Tensor>& in) { return ops::conv2d(in[0], in[1], in[2], stride, pad); }, {x, k, b});
        CHECK(err < 1e-4);
    }
}

TEST_CASE("affine_channel examples") {
    auto x = Tensor::full({1, 1, 2, 2}, 3.0);
    auto y = ops::affine_channel(x, Tensor::from({1}, {2.0}), Tensor::from({1}, {1.0}));
    for (double v : y.data()) CHECK(v == 7.0);
    Rng rng(3);
    auto r = random_tensor(rng, {2, 3, 2, 2}, -1, 1, false);
    auto id = ops::affine_channel(r, Tensor::full({3}, 1.0), Tensor::zeros({3}));
    CHECK(id.to_vector() == r.to_vector());
    CHECK_THROWS_AS(ops::affine_channel(r, Tensor::full({2}, 1.0), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("affine_channel scale gradient is the sum of input times upstream") {
    Rng rng(4);
    auto x = random_tensor(rng, {2, 2, 3, 3}, -1, 1, false);
    auto s = random_tensor(rng, {2});
    auto b = random_tensor(rng, {2});
    auto y = ops::affine_channel(x, s, b);
    ops::sum(y).backward();
    for (std::size_t c = 0; c < 2; ++c) {
        double expect = 0.0;
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < 9; ++i) expect += x.data()[(n * 2 + c) * 9 + i];
        CHECK(s.grad()[c] == doctest::Approx(expect).epsilon(1e-12));
    }
    for (int trial = 0; trial < 10; ++trial) {
        auto xi = random_tensor(rng, {2, 3, 2, 3});
        auto si = random_tensor(rng, {3});
        auto bi = random_tensor(rng, {3});
        CHECK(gradcheck([](const std::vector<Tensor>& in) { return ops::affine_channel(in[0], in[1], in[2]); },
                        {xi, si, bi}) < 1e-4);
    }
}

TEST_CASE("batchnorm2d examples") {
    auto x = Tensor::full({2, 2, 3, 3}, 5.0);
    auto st = ops::BatchNormState::identity(2);
    auto y = ops::batchnorm2d(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), st, ops::NormMode::Train);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    Rng rng(5);
    auto r = random_tensor(rng, {2, 2, 3, 3}, -1, 1, false);
    auto st2 = ops::BatchNormState::identity(2);
    auto e = ops::batchnorm2d(r, Tensor::full({2}, 1.0), Tensor::zeros({2}), st2, ops::NormMode::Eval);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(e.data()[i] == doctest::Approx(r.data()[i]).epsilon(1e-5));

    auto single = Tensor::zeros({1, 2, 1, 1});
    CHECK_THROWS(ops::batchnorm2d(single, Tensor::full({2}, 1.0), Tensor::zeros({2}), st2, ops::NormMode::Train));
}

TEST_CASE("batchnorm2d train-mode gradients match finite differences") {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_tensor(rng, {2, 3, 4, 4});
        auto g = random_tensor(rng, {3}, 0.5, 1.5);
        auto b = random_tensor(rng, {3});
        const double err = gradcheck(
            [](const std::vector<Tensor>& in) {
                auto st = ops::BatchNormState::identity(3);
                return ops::batchnorm2d(in[0], in[1], in[2], st, ops::NormMode::Train);
            },
            {x, g, b});
        CHECK(err < 1e-4);
    }
}

TEST_CASE("activation examples and kink subgradients") {
    auto x = Tensor::from({5}, {-3.0, -1.0, 0.0, 0.5, 3.0}, true);
    CHECK(ops::relu(x).to_vector() == std::vector<double>{0, 0, 0, 0.5, 3});
    CHECK(ops::hardsigmoid(x).to_vector()[0] == 0.0);
    CHECK(ops::hardsigmoid(x).to_vector()[2] == 0.5);
    CHECK(ops::hardsigmoid(x).to_vector()[4] == 1.0);
    CHECK(ops::hardtanh(x, -1, 1).to_vector()[3] == 0.5);
    CHECK_THROWS_AS(ops::hardtanh(x, 1, 1), ValueError);

    auto k = Tensor::from({3}, {0.0, -1.0, 1.0}, true);
    ops::sum(ops::relu(k)).backward();
    CHECK(k.grad()[0] == 0.0);
    k.zero_grad();
    ops::sum(ops::hardtanh(k, -1, 1)).backward();
    CHECK(k.grad()[1] == 0.0);
    CHECK(k.grad()[2] == 0.0);
}

TEST_CASE("activation gradients match finite differences away from kinks") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = fptest::random_away_from(rng, {2, 3, 3}, {0.0}, -2, 2);
        CHECK(gradcheck([](const std::vector<Tensor>& in) { return ops::relu(in[0]); }, {a}) < 1e-4);
        auto b = fptest::random_away_from(rng, {2, 3, 3}, {-1.0, 1.0}, -2, 2);
        CHECK(gradcheck([](const std::vector<Tensor>& in) { return ops::hardtanh(in[0], -1, 1); }, {b}) < 1e-4);
        auto c = fptest::random_away_from(rng, {2, 3, 3}, {-3.0, 3.0}, -5, 5);
        CHECK(gradcheck([](const std::vector<Tensor>& in) { return ops::hardsigmoid(in[0]); }, {c}) < 1e-4);
        auto d = random_tensor(rng, {2, 3, 3}, -4, 4);
        CHECK(gradcheck([](const std::vector<Tensor>& in) { return ops::sigmoid(in[0]); }, {d}) < 1e-4);
    }
}

TEST_CASE("pixel_shuffle index law, shape law and inverse") {
    CHECK(ops::pixel_shuffle(Tensor::zeros({1, 4, 2, 2}), 2).shape() == Shape{1, 1, 4, 4});
    auto x = Tensor::from({1, 4, 1, 1}, {0, 1, 2, 3});
    CHECK(ops::pixel_shuffle(x, 2).to_vector() == std::vector<double>{0, 1, 2, 3});
    Rng rng(8);
    auto r = random_tensor(rng, {2, 8, 3, 2}, -1, 1, false);
    auto s = ops::pixel_shuffle(r, 2);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t h = 0; h < 3; ++h)
            for (std::size_t w = 0; w < 2; ++w)
                for (std::size_t i = 0; i < 2; ++i)
                    for (std::size_t j = 0; j < 2; ++j)
                        CHECK(s.at({1, c, h * 2 + i, w * 2 + j}) == r.at({1, c * 4 + i * 2 + j, h, w}));
    CHECK(ops::pixel_unshuffle(s, 2).to_vector() == r.to_vector());
    CHECK_THROWS_AS(ops::pixel_shuffle(Tensor::zeros({1, 3, 2, 2}), 2), ShapeError);
}

TEST_CASE("softmax, l2_normalize and kl_div examples") {
    auto eq = ops::softmax(Tensor::full({1, 4}, 2.5), 1, 0.3);
    for (double v : eq.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
    CHECK_THROWS_AS(ops::softmax(eq, 1, 0.0), ValueError);
    CHECK_THROWS_AS(ops::softmax(eq, 1, -1.0), ValueError);

    Rng rng(9);
    auto x = random_tensor(rng, {3, 5}, -3, 3, false);
    auto s = ops::softmax(x, 1, 0.7);
    auto shifted = ops::softmax(ops::add_scalar(x, 11.0), 1, 0.7);
    for (std::size_t r = 0; r < 3; ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < 5; ++c) {
            total += s.at({r, c});
            CHECK(s.at({r, c}) == doctest::Approx(shifted.at({r, c})).epsilon(1e-12));
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
    }

    auto n = ops::l2_normalize(random_tensor(rng, {2, 6, 3, 3}, -1, 1, false), 1);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 9; ++i) {
            double sq = 0.0;
            for (std::size_t c = 0; c < 6; ++c) sq += std::pow(n.data()[(b * 6 + c) * 9 + i], 2);
            CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-6);
        }

    auto p = Tensor::from({2}, {0.9, 0.1});
    auto q = Tensor::from({2}, {0.5, 0.5});
    CHECK(ops::kl_div(p, q, 0).item() == doctest::Approx(0.9 * std::log(1.8) + 0.1 * std::log(0.2)).epsilon(1e-12));
    CHECK(ops::kl_div(p, q, 0).item() == doctest::Approx(0.3681).epsilon(1e-4));
    CHECK(ops::kl_div(p, p, 0).item() == 0.0);
    auto z = Tensor::from({2}, {1.0, 0.0});
    CHECK(ops::kl_div(z, z, 0).item() == 0.0);
}

TEST_CASE("softmax, l2_normalize, kl_div gradients match finite differences") {
    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_tensor(rng, {3, 4}, -2, 2);
        const double tau = 0.2 + 0.3 * trial;
        CHECK(gradcheck([tau](const std::vector<Tensor>& in) { return ops::softmax(in[0], 1, tau); }, {x}) < 1e-4);
        auto y = random_tensor(rng, {1, 5, 2, 2}, -2, 2);
        CHECK(gradcheck([](const std::vector<Tensor>& in) { return ops::l2_normalize(in[0], 1); }, {y}) < 1e-4);
        auto a = random_tensor(rng, {2, 4}, -2, 2);
        auto b = random_tensor(rng, {2, 4}, -2, 2);
        CHECK(gradcheck(
                  [](const std::vector<Tensor>& in) {
                      return ops::kl_div(ops::softmax(in[0], 1), ops::softmax(in[1], 1), 1);
                  },
                  {a, b}) < 1e-4);
    }
}

TEST_CASE("elementwise, concat and weighted_sum gradients") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        auto a = random_tensor(rng, {1, 2, 2, 2}, 0.5, 2);
        auto b = random_tensor(rng, {1, 3, 2, 2}, 0.5, 2);
        CHECK(gradcheck(
                  [](const std::vector<Tensor>& in) {
                      return ops::log(ops::mul(ops::exp(in[0]), ops::square(ops::add_scalar(in[0], 1.0))));
                  },
                  {a}) < 1e-4);
        CHECK(gradcheck([](const std::vector<Tensor>& in) { return ops::concat_channels({in[0], in[1]}); }, {a, b}) <
              1e-4);
        auto c = random_tensor(rng, {1, 2, 2, 2});
        auto w = random_tensor(rng, {2});
        CHECK(gradcheck([](const std::vector<Tensor>& in) { return ops::weighted_sum({in[0], in[1]}, in[2]); },
                        {a, c, w}) < 1e-4);
        CHECK(gradcheck([](const std::vector<Tensor>& in) { return ops::rot90(ops::flip_vertical(in[0]), 1); },
                        {a}) < 1e-4);
    }
}

TEST_CASE("backward visits every tape node exactly once") {
    auto x = Tensor::from({2}, {1.0, 2.0}, true);
    auto a = ops::mul(x, x);     // node 1
    auto b = ops::exp(x);        // node 2
    auto c = ops::add(a, b);     // node 3
    auto d = ops::add(c, a);     // node 4, reuses a (diamond)
    auto s = ops::sum(d);        // node 5
    CHECK(s.backward() == 5);
    CHECK(x.grad()[0] == doctest::Approx(2 * 2 * 1.0 + std::exp(1.0)));
}

TEST_CASE("tensor invariants and finite checks") {
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
    auto bad = Tensor::from({1}, {std::numeric_limits<double>::quiet_NaN()});
    CHECK_THROWS_AS(check_finite(bad, "probe"), NumericError);
}

TEST_CASE("AdamW with zero gradients and no decay leaves parameters unchanged") {
    auto p = Tensor::parameter({3}, {1.0, -2.0, 3.0});
    AdamW opt({ParamGroup{{{"p", p}}, 1e-3, 0.0}});
    for (int i = 0; i < 5; ++i) opt.step();
    CHECK(p.to_vector() == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("AdamW decay is decoupled from the gradient") {
    auto p = Tensor::parameter({1}, {2.0});
    AdamW opt({ParamGroup{{{"p", p}}, 0.1, 0.5}});
    opt.step();  // zero gradient: only decay acts
    CHECK(p.item() == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-15));
}

TEST_CASE("AdamW minimizes (x - 3)^2") {
    auto x = Tensor::parameter({1}, {0.0});
    AdamW opt({ParamGroup{{{"x", x}}, 1e-1, 0.0}});
    for (int i = 0; i < 200; ++i) {
        opt.zero_grad();
        ops::sum(ops::square(ops::add_scalar(x, -3.0))).backward();
        opt.step();
    }
    CHECK(std::abs(x.item() - 3.0) < 1e-2);
}

TEST_CASE("AdamW rejects a NaN gradient and names the parameter") {
    auto p = Tensor::parameter({1}, {1.0});
    p.mutable_grad();
    p.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
    AdamW opt({ParamGroup{{{"blocks.0.conv.weight", p}}, 1e-3, 0.0}});
    try {
        opt.step();
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("blocks.0.conv.weight") != std::string::npos);
    }
}

TEST_CASE("clip_global_norm halves a norm-10 gradient exactly and is idempotent") {
    auto a = Tensor::parameter({2}, {0.0, 0.0});
    a.mutable_grad()[0] = 6.0;
    a.mutable_grad()[1] = 8.0;
    std::vector<NamedParam> ps{{"a", a}};
    CHECK(clip_global_norm(ps, 5.0) == doctest::Approx(10.0));
    CHECK(a.grad()[0] == 3.0);
    CHECK(a.grad()[1] == 4.0);
    CHECK(clip_global_norm(ps, 5.0) == doctest::Approx(5.0));
    CHECK(a.grad()[0] == 3.0);
    CHECK(a.grad()[1] == 4.0);
}

TEST_CASE("plateau scheduler halves after more than 5 stale epochs and never raises lr") {
    PlateauScheduler s;
    auto p = Tensor::parameter({1}, {0.0});
    AdamW opt({ParamGroup{{{"p", p}}, 1e-3, 0.0}});
    std::vector<double> lrs;
    CHECK(s.step(1.0) == 1.0);
    for (int epoch = 0; epoch < 14; ++epoch) {
        opt.scale_lr(s.step(1.0));
        lrs.push_back(opt.lr());
    }
    // epochs 1..5 wait, the 6th stale epoch exceeds patience
    for (int i = 0; i < 5; ++i) CHECK(lrs[i] == 1e-3);
    CHECK(lrs[5] == doctest::Approx(5e-4));
    for (std::size_t i = 1; i < lrs.size(); ++i) CHECK(lrs[i] <= lrs[i - 1]);
    CHECK(s.step(0.5) == 1.0);
}

}  // TEST_SUITE

#include <doctest.h>

#include <cmath>

#include "featherpoint/error.hpp"
#include "featherpoint/losses.hpp"
#include "featherpoint/ops.hpp"
#include "support/gradcheck.hpp"

using namespace featherpoint;
using fptest::gradcheck;
using fptest::random_tensor;

namespace {

Tensor delta_map(std::size_t h, std::size_t w, std::vector<std::tuple<std::size_t, std::size_t, double>> points) {
    std::vector<double> v(h * w, 0.0);
    for (auto [x, y, val] : points) v[y * w + x] = val;
    return Tensor::from({1, 1, h, w}, std::move(v));
}

// Unit-norm descriptor map (1,D,h,w) from per-location vectors.
Tensor desc_map(std::size_t D, std::size_t h, std::size_t w, const std::vector<std::vector<double>>& cols,
                bool grad = false) {
    std::vector<double> v(D * h * w, 0.0);
    for (std::size_t i = 0; i < h * w; ++i) {
        double n = 0.0;
        for (double c : cols[i]) n += c * c;
        for (std::size_t c = 0; c < cols[i].size(); ++c) v[c * h * w + i] = cols[i][c] / std::sqrt(n);
    }
    return Tensor::from({1, D, h, w}, std::move(v), grad);
}

std::vector<double> basis(std::size_t D, std::size_t k) {
    std::vector<double> e(D, 0.0);
    e[k] = 1.0;
    return e;
}

double focal_oracle(const std::vector<double>& pred, const TeacherTargets& t, double a, double b) {
    const auto y = t.soft_map.data();
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = std::clamp(pred[i], kFocalClampEps, 1 - kFocalClampEps);
        s += y[i] == 1.0 ? std::pow(1 - p, a) * std::log(p) : std::pow(1 - y[i], b) * std::pow(p, a) * std::log(1 - p);
    }
    return -s / std::max<std::size_t>(1, t.hard_points[0].size());
}

}  // namespace

TEST_SUITE("distill-losses") {

TEST_CASE("single delta gives one hard point and a Gaussian splat") {
    const double sigma = 1.5;
    auto t = preprocess_teacher(delta_map(21, 21, {{10, 10, 1.0}}), 4, 0.005, sigma);
    REQUIRE(t.hard_points[0].size() == 1);
    CHECK(t.hard_points[0][0].x == 10);
    CHECK(t.hard_points[0][0].y == 10);
    CHECK(t.soft_map.at({0, 0, 10, 10}) == 1.0);
    CHECK(t.soft_map.at({0, 0, 10, 11}) == doctest::Approx(std::exp(-1.0 / (2 * sigma * sigma))).epsilon(1e-12));
    CHECK(t.soft_map.at({0, 0, 12, 13}) == doctest::Approx(std::exp(-13.0 / (2 * sigma * sigma))).epsilon(1e-12));
    CHECK(t.soft_map.at({0, 0, 10, 15}) == 0.0);  // beyond 3 sigma
}

TEST_CASE("NMS keeps only the stronger of two close deltas") {
    auto t = preprocess_teacher(delta_map(21, 21, {{8, 10, 0.9}, {11, 10, 0.8}}), 4);
    REQUIRE(t.hard_points[0].size() == 1);
    CHECK(t.hard_points[0][0].x == 8);
}

TEST_CASE("below-threshold maps give no points and an all-zero soft map") {
    auto t = preprocess_teacher(Tensor::full({1, 1, 16, 16}, 0.004), 4, 0.005);
    CHECK(t.hard_points[0].empty());
    for (double v : t.soft_map.data()) CHECK(v == 0.0);
}

TEST_CASE("soft map max composition never exceeds one and is one on hard points") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        auto raw = random_tensor(rng, {2, 1, 24, 24}, 0, 1, false);
        auto t = preprocess_teacher(raw, 4);
        for (double v : t.soft_map.data()) CHECK(v <= 1.0);
        for (std::size_t n = 0; n < 2; ++n)
            for (const auto& k : t.hard_points[n])
                CHECK(t.soft_map.at({n, 0, std::size_t(k.y), std::size_t(k.x)}) == 1.0);
    }
}

TEST_CASE("focal loss of a perfect prediction is tiny") {
    auto t = preprocess_teacher(delta_map(16, 16, {{4, 4, 1.0}, {11, 9, 1.0}}), 4, 0.005, 1.5);
    std::vector<double> p(256, kFocalClampEps);
    for (const auto& k : t.hard_points[0]) p[k.y * 16 + k.x] = 1 - kFocalClampEps;
    CHECK(focal_detection_loss(Tensor::from({1, 1, 16, 16}, p), t).item() < 1e-4);
}

TEST_CASE("focal loss equals a direct scalar evaluation") {
    auto t = preprocess_teacher(delta_map(9, 9, {{4, 4, 1.0}}), 4, 0.005, 1.5);
    const std::vector<double> half(81, 0.5);
    CHECK(focal_detection_loss(Tensor::from({1, 1, 9, 9}, half), t, 2, 4).item() ==
          doctest::Approx(focal_oracle(half, t, 2, 4)).epsilon(1e-12));
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        auto pred = random_tensor(rng, {1, 1, 9, 9}, 0.01, 0.99, false);
        const double a = rng.uniform(0.5, 3), b = rng.uniform(0.5, 5);
        CHECK(focal_detection_loss(pred, t, a, b).item() ==
              doctest::Approx(focal_oracle(pred.to_vector(), t, a, b)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(focal_detection_loss(Tensor::from({1, 1, 9, 9}, half), t, -1, 4), ValueError);
    CHECK_THROWS_AS(focal_detection_loss(Tensor::from({1, 1, 9, 9}, half), t, 2, -0.5), ValueError);
}

TEST_CASE("focal loss is normalised by point count, not pixel count") {
    const double p = 0.3;
    auto small = preprocess_teacher(delta_map(16, 16, {{8, 8, 1.0}}), 4);
    auto big = preprocess_teacher(delta_map(16, 32, {{8, 8, 1.0}}), 4);
    const double ls = focal_detection_loss(Tensor::full({1, 1, 16, 16}, p), small).item();
    const double lb = focal_detection_loss(Tensor::full({1, 1, 16, 32}, p), big).item();
    // the extra 16x16 region is pure background at y = 0
    const double extra = -256.0 * std::pow(p, 2) * std::log(1 - p);
    CHECK(lb - ls == doctest::Approx(extra).epsilon(1e-10));
}

TEST_CASE("focal loss decreases as hard-point predictions rise") {
    auto t = preprocess_teacher(delta_map(12, 12, {{3, 3, 1.0}, {8, 8, 1.0}}), 4);
    double prev = 1e300;
    for (double q = 0.05; q < 1.0; q += 0.05) {
        std::vector<double> p(144, 0.1);
        for (const auto& k : t.hard_points[0]) p[k.y * 12 + k.x] = q;
        const double l = focal_detection_loss(Tensor::from({1, 1, 12, 12}, p), t).item();
        CHECK(l < prev);
        prev = l;
    }
}

TEST_CASE("focal loss gradients match finite differences") {
    Rng rng(5);
    auto t = preprocess_teacher(delta_map(8, 8, {{2, 2, 1.0}, {6, 5, 1.0}}), 4);
    for (int trial = 0; trial < 10; ++trial) {
        auto pred = random_tensor(rng, {1, 1, 8, 8}, 0.05, 0.95);
        CHECK(gradcheck([&](const std::vector<Tensor>& in) { return focal_detection_loss(in[0], t); }, {pred}) < 1e-4);
    }
}

TEST_CASE("relational loss is zero for identical maps") {
    Rng rng(6);
    auto d = ops::l2_normalize(random_tensor(rng, {1, 16, 3, 4}, -1, 1, false), 1);
    CHECK(std::abs(relational_descriptor_loss(d, d).item()) < 1e-9);
}

TEST_CASE("relational loss on swapped two-cluster structure matches the hand value") {
    const double tau = 0.5;
    const auto e1 = basis(256, 0), e2 = basis(256, 1);
    auto teacher = desc_map(256, 2, 2, {e1, e1, e2, e2});
    const auto s1 = basis(8, 0), s2 = basis(8, 1);
    auto student = desc_map(8, 2, 2, {s1, s2, s1, s2});
    // Every teacher row is [a,a,b,b] up to order, every student row [a,b,a,b]:
    // KL = a log(a/b) + b log(b/a) = (a - b) / tau.
    const double z = 2 * std::exp(1 / tau) + 2;
    const double a = std::exp(1 / tau) / z, b = 1 / z;
    CHECK(relational_descriptor_loss(student, teacher, tau).item() == doctest::Approx((a - b) / tau).epsilon(1e-12));
}

TEST_CASE("relational loss ignores global rotations and the student width") {
    Rng rng(7);
    auto teacher = ops::l2_normalize(random_tensor(rng, {1, 256, 3, 3}, -1, 1, false), 1);
    auto s8 = ops::l2_normalize(random_tensor(rng, {1, 8, 3, 3}, -1, 1, false), 1);
    const double base = relational_descriptor_loss(s8, teacher).item();

    // rotate the 8-d student space by a random orthogonal matrix (Gram-Schmidt)
    std::vector<std::vector<double>> q(8, std::vector<double>(8));
    for (std::size_t r = 0; r < 8; ++r) {
        for (auto& v : q[r]) v = rng.normal();
        for (std::size_t p = 0; p < r; ++p) {
            double dot = 0.0;
            for (std::size_t c = 0; c < 8; ++c) dot += q[r][c] * q[p][c];
            for (std::size_t c = 0; c < 8; ++c) q[r][c] -= dot * q[p][c];
        }
        double n = 0.0;
        for (double v : q[r]) n += v * v;
        for (auto& v : q[r]) v /= std::sqrt(n);
    }
    std::vector<double> rot(8 * 9, 0.0);
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t c = 0; c < 8; ++c) rot[r * 9 + i] += q[r][c] * s8.data()[c * 9 + i];
    CHECK(relational_descriptor_loss(Tensor::from({1, 8, 3, 3}, rot), teacher).item() ==
          doctest::Approx(base).epsilon(1e-9));

    // the same embedding repeated 8 times in 64 channels, rescaled to unit norm
    std::vector<double> wide(64 * 9);
    for (std::size_t rep = 0; rep < 8; ++rep)
        for (std::size_t c = 0; c < 8; ++c)
            for (std::size_t i = 0; i < 9; ++i) wide[(rep * 8 + c) * 9 + i] = s8.data()[c * 9 + i] / std::sqrt(8.0);
    CHECK(relational_descriptor_loss(Tensor::from({1, 64, 3, 3}, wide), teacher).item() ==
          doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("relational loss is non-negative and chunking does not change it") {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        auto t = ops::l2_normalize(random_tensor(rng, {2, 32, 4, 5}, -1, 1, false), 1);
        auto s = ops::l2_normalize(random_tensor(rng, {2, 8, 4, 5}, -1, 1, false), 1);
        const double dense = relational_descriptor_loss(s, t, 0.1, 0).item();
        CHECK(dense >= 0.0);
        for (std::size_t chunk : {1, 3, 7, 20})
            CHECK(relational_descriptor_loss(s, t, 0.1, chunk).item() == doctest::Approx(dense).epsilon(1e-12));
    }
}

TEST_CASE("relational loss errors") {
    auto a = Tensor::full({1, 8, 2, 2}, 0.5);
    auto b = Tensor::full({1, 8, 2, 3}, 0.5);
    CHECK_THROWS(relational_descriptor_loss(a, b));
    CHECK_THROWS_AS(relational_descriptor_loss(a, a, 0.0), ValueError);
    CHECK_THROWS_AS(relational_descriptor_loss(a, a, -1.0), ValueError);
}

TEST_CASE("relational loss gradients match finite differences") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        auto t = ops::l2_normalize(random_tensor(rng, {1, 16, 2, 3}, -1, 1, false), 1);
        auto s = random_tensor(rng, {1, 4, 2, 3}, -1, 1);
        CHECK(gradcheck(
                  [&](const std::vector<Tensor>& in) {
                      return relational_descriptor_loss(ops::l2_normalize(in[0], 1), t, 0.3, 2);
                  },
                  {s}) < 1e-4);
    }
}

TEST_CASE("MSE baseline") {
    auto a = Tensor::full({1, 4, 2, 2}, 1.0);
    auto b = Tensor::full({1, 4, 2, 2}, 0.5);
    CHECK(mse_descriptor_loss(a, b).item() == doctest::Approx(0.25));
    CHECK_THROWS(mse_descriptor_loss(a, Tensor::full({1, 8, 2, 2}, 0.5)));
}

TEST_CASE("uncertainty weighting") {
    UncertaintyWeights w;
    auto ld = Tensor::scalar(1.7), le = Tensor::scalar(0.4);
    CHECK(uncertainty_weighted_total(ld, le, w).item() == doctest::Approx(2.1).epsilon(1e-15));
    CHECK(validation_total(1.7, 0.4) == doctest::Approx(2.1).epsilon(1e-15));

    for (double s : {-1.0, 0.0, 0.8, std::log(1.7)}) {
        UncertaintyWeights u;
        u.s_det.mutable_data()[0] = s;
        uncertainty_weighted_total(ld, le, u).backward();
        CHECK(u.s_det.grad()[0] == doctest::Approx(1 - std::exp(-s) * 1.7).epsilon(1e-12));
    }
    UncertaintyWeights at_min;
    at_min.s_det.mutable_data()[0] = std::log(1.7);
    uncertainty_weighted_total(ld, le, at_min).backward();
    CHECK(std::abs(at_min.s_det.grad()[0]) < 1e-12);

    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        auto a = random_tensor(rng, {1}, 0.1, 3), b = random_tensor(rng, {1}, 0.1, 3);
        auto sd = random_tensor(rng, {1}, -1, 1), se = random_tensor(rng, {1}, -1, 1);
        CHECK(gradcheck(
                  [](const std::vector<Tensor>& in) {
                      UncertaintyWeights u{in[2], in[3]};
                      return uncertainty_weighted_total(in[0], in[1], u);
                  },
                  {a, b, sd, se}) < 1e-4);
    }
}

}  // TEST_SUITE

#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "featherpoint/error.hpp"
#include "featherpoint/geometry.hpp"
#include "featherpoint/metrics.hpp"
#include "featherpoint/quant.hpp"
#include "featherpoint/synth.hpp"
#include "featherpoint/train.hpp"

using namespace featherpoint;

namespace {

constexpr ImageSize kSize{64, 64};

std::vector<Keypoint> kp(std::vector<std::pair<int, int>> pts) {
    std::vector<Keypoint> out;
    for (auto [x, y] : pts) out.push_back({x, y, 1.0});
    return out;
}

DescriptorSet index_coded(std::size_t n, std::size_t dim, const std::vector<std::size_t>& code) {
    DescriptorSet d{n, dim, std::vector<double>(n * dim, 0.0)};
    for (std::size_t i = 0; i < n; ++i) d.values[i * dim + code[i]] = 1.0;
    return d;
}

std::vector<double> random_unit_rows(Rng& rng, std::size_t n, std::size_t dim) {
    std::vector<double> v(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < dim; ++c) s += std::pow(v[i * dim + c] = rng.normal(), 2);
        for (std::size_t c = 0; c < dim; ++c) v[i * dim + c] /= std::sqrt(s);
    }
    return v;
}

}  // namespace

TEST_SUITE("eval-bench") {

TEST_CASE("warp_point examples") {
    const Point2 p{3.5, -2.0};
    CHECK(warp_point(Homography::identity(), p) == p);
    auto t = warp_point(Homography::translation(1, 0), p);
    CHECK(t.x == 4.5);
    CHECK(t.y == -2.0);
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        auto h = random_homography(rng, 64, 96, 0.2);
        Point2 q{rng.uniform(0, 96), rng.uniform(0, 64)};
        auto back = warp_point(h.inverse(), warp_point(h, q));
        CHECK(std::abs(back.x - q.x) < 1e-9);
        CHECK(std::abs(back.y - q.y) < 1e-9);
    }
    Homography persp({1, 0, 0, 0, 1, 0, 1, 0, 1});
    CHECK_THROWS_AS(warp_point(persp, {-1.0, 5.0}), ValueError);
    CHECK_THROWS_AS(Homography({1, 2, 3, 2, 4, 6, 0, 0, 1}), ValueError);
}

TEST_CASE("four-point homography is exact") {
    std::array<Point2, 4> src{{{0, 0}, {10, 0}, {10, 10}, {0, 10}}};
    std::array<Point2, 4> dst{{{1, 2}, {12, 1}, {11, 13}, {-1, 9}}};
    auto h = Homography::from_correspondences(src, dst);
    for (int i = 0; i < 4; ++i) {
        auto q = warp_point(h, src[i]);
        CHECK(q.x == doctest::Approx(dst[i].x).epsilon(1e-12));
        CHECK(q.y == doctest::Approx(dst[i].y).epsilon(1e-12));
    }
}

TEST_CASE("synthetic pairs") {
    auto il = generate_pair(5, PairKind::Illumination, 64, 64);
    CHECK(il.h_ab.is_identity());
    auto v1 = generate_pair(5, PairKind::Viewpoint, 64, 96);
    auto v2 = generate_pair(5, PairKind::Viewpoint, 64, 96);
    CHECK(v1.image_a.to_vector() == v2.image_a.to_vector());
    CHECK(v1.image_b.to_vector() == v2.image_b.to_vector());
    CHECK(v1.h_ab == v2.h_ab);
    CHECK_FALSE(v1.h_ab.is_identity());
    // corner displacement bounded by 20% of the size
    for (Point2 c : {Point2{0, 0}, Point2{95, 0}, Point2{0, 63}, Point2{95, 63}}) {
        auto q = warp_point(v1.h_ab, c);
        CHECK(std::hypot(q.x - c.x, q.y - c.y) <= 0.2 * 64 * std::sqrt(2.0) + 1e-9);
    }
    std::size_t inside = 0;
    for (const auto& c : v1.corners_a) {
        auto q = warp_point(v1.h_ab, c);
        if (q.x >= 0 && q.y >= 0 && q.x <= 95 && q.y <= 63) ++inside;
    }
    CHECK(inside == v1.corners_b.size());
    CHECK_THROWS(generate_pair(1, PairKind::Viewpoint, 60, 64));
}

TEST_CASE("warp_image moves a blob to warp_point of its centre") {
    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t H = 64, W = 80;
        auto h = random_homography(rng, H, W, 0.1);
        const Point2 c{rng.uniform(28, 52), rng.uniform(24, 40)};
        std::vector<double> img(H * W);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                img[y * W + x] = std::exp(-(std::pow(x - c.x, 2) + std::pow(y - c.y, 2)) / (2 * 2.0 * 2.0));
        auto warped = warp_image(Tensor::from({1, 1, H, W}, img), h);
        const auto q = warp_point(h, c);
        double sx = 0, sy = 0, sw = 0;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                if (std::hypot(x - q.x, y - q.y) > 12) continue;
                const double v = warped.data()[y * W + x];
                sx += v * x;
                sy += v * y;
                sw += v;
            }
        CHECK(std::hypot(sx / sw - q.x, sy / sw - q.y) < 0.5);
    }
}

TEST_CASE("repeatability examples") {
    auto a = kp({{10, 10}, {30, 20}, {40, 40}});
    const auto I = Homography::identity();
    CHECK(repeatability(a, a, I, kSize, kSize) == 1.0);
    CHECK(repeatability(kp({{10, 10}}), kp({{40, 40}}), I, kSize, kSize) == 0.0);
    CHECK(repeatability(kp({{10, 10}}), kp({{12, 10}}), I, kSize, kSize, 3.0) == 1.0);
    CHECK(repeatability(kp({{10, 10}}), kp({{12, 10}}), I, kSize, kSize, 1.0) == 0.0);
    CHECK(repeatability({}, {}, I, kSize, kSize) == 0.0);
    CHECK(repeatability(kp({{10, 10}, {20, 20}}), kp({{11, 10}}), I, kSize, kSize) == doctest::Approx(2.0 / 3.0));
    CHECK(repeatability(kp({{2, 2}}), kp({{2, 2}}), I, kSize, kSize) == 0.0);  // inside the border margin
}

TEST_CASE("repeatability is symmetric under swapping sides with the inverse homography") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
        auto h = random_homography(rng, 64, 64, 0.15);
        std::vector<Keypoint> a, b;
        for (int i = 0; i < 25; ++i) a.push_back({int(rng.below(64)), int(rng.below(64)), 1.0});
        for (const auto& k : a) {
            if (rng.uniform() < 0.3) continue;
            auto q = warp_point(h, {double(k.x), double(k.y)});
            b.push_back({int(std::lround(q.x)) + int(rng.below(3)) - 1, int(std::lround(q.y)), 1.0});
        }
        for (int i = 0; i < 5; ++i) b.push_back({int(rng.below(64)), int(rng.below(64)), 1.0});
        const double ab = repeatability(a, b, h, kSize, kSize);
        const double ba = repeatability(b, a, h.inverse(), kSize, kSize);
        CHECK(std::abs(ab - ba) < 1e-9);
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
    }
}

TEST_CASE("correctness examples") {
    auto pts = kp({{10, 10}, {30, 10}, {50, 10}, {10, 30}, {30, 30}, {50, 30}});
    const auto I = Homography::identity();
    std::vector<std::size_t> ids{0, 1, 2, 3, 4, 5};
    auto m = match(index_coded(6, 6, ids), index_coded(6, 6, ids));
    CHECK(correctness(m, pts, pts, I) == 1.0);
    CHECK(correctness({}, pts, pts, I) == 0.0);

    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::size_t> perm = ids;
        do {
            for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
        } while ([&] {
            for (std::size_t i = 0; i < 6; ++i)
                if (perm[i] == i) return true;
            return false;
        }());
        auto wrong = match(index_coded(6, 6, ids), index_coded(6, 6, perm));
        CHECK(wrong.size() == 6);
        CHECK(correctness(wrong, pts, pts, I) == 0.0);
        CHECK(correctness(wrong, pts, pts, I, 1e9) == 1.0);
    }
}

TEST_CASE("ground-truth detector and index-coded descriptors score perfectly") {
    InferenceConfig cfg;
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        auto pair = generate_pair(seed, seed % 2 ? PairKind::Viewpoint : PairKind::Illumination, 96, 128);
        Extraction a, b;
        std::vector<std::size_t> code_a, code_b;
        const double m = cfg.border + 2.0;
        for (std::size_t i = 0; i < pair.corners_a.size(); ++i) {
            const auto c = pair.corners_a[i];
            const auto q = warp_point(pair.h_ab, c);
            auto ok = [&](Point2 p) { return p.x >= m && p.y >= m && p.x <= 127 - m && p.y <= 95 - m; };
            if (!ok(c) || !ok(q)) continue;
            a.keypoints.push_back({int(std::lround(c.x)), int(std::lround(c.y)), 1.0});
            b.keypoints.push_back({int(std::lround(q.x)), int(std::lround(q.y)), 1.0});
            code_a.push_back(code_a.size());
        }
        REQUIRE(a.keypoints.size() > 3);
        code_b = code_a;
        a.descriptors = index_coded(code_a.size(), code_a.size(), code_a);
        b.descriptors = index_coded(code_b.size(), code_b.size(), code_b);
        auto r = evaluate_pair(pair, a, b, cfg);
        CHECK(r.repeatability == 1.0);
        CHECK(r.correctness == 1.0);
    }
}

TEST_CASE("benchmark is deterministic and float vs fake quant share the pipeline") {
    auto model = build_student(ArchSpec{}, 3);
    auto pairs = synthetic_benchmark(7, 4, 64, 64);
    CHECK(pairs[0].kind == PairKind::Illumination);
    CHECK(pairs[1].kind == PairKind::Viewpoint);
    InferenceConfig cfg;
    cfg.mode = ThresholdMode::fixed_at(0.005);
    auto r1 = run_benchmark(model, pairs, cfg);
    auto r2 = run_benchmark(model, pairs, cfg);
    CHECK(r1.rep_i == r2.rep_i);
    CHECK(r1.cor_v == r2.cor_v);
    CHECK(r1.pairs.size() == 4);
    for (double v : {r1.rep_i, r1.rep_v, r1.cor_i, r1.cor_v}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    auto plan = derive_plan(calibrate(model, synthetic_images(1, "cal", 2, 64, 64)));
    auto q = run_benchmark(model, pairs, cfg, [&] { return std::make_unique<FakeQuantContext>(plan); });
    CHECK_FALSE(r1.stage_trace.empty());
    CHECK(q.stage_trace == r1.stage_trace);
    CHECK(mode_label(ThresholdMode::fixed_at(0.1)) != mode_label(ThresholdMode::adaptive_mode()));
}

TEST_CASE("theoretical descriptor spread") {
    const std::pair<std::size_t, const char*> table[] = {{8, "0.3536"},  {16, "0.2500"},  {32, "0.1768"}, {64, "0.1250"},
                                                         {128, "0.0884"}, {256, "0.0625"}, {512, "0.0442"}};
    for (auto [d, text] : table) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%.4f", theoretical_std(d));
        CHECK(std::string(buf) == text);
    }
}

TEST_CASE("isotropic and subspace descriptor spread") {
    Rng rng(5);
    auto iso = descriptor_std_analysis(random_unit_rows(rng, 10000, 64), 64);
    CHECK(iso.theoretical_std == 0.125);
    CHECK(std::abs(iso.ratio - 1.0) <= 0.03);
    CHECK(iso.ratio == doctest::Approx(iso.measured_std / iso.theoretical_std));
    for (std::size_t k : {4, 16, 32}) {
        auto low = random_unit_rows(rng, 5000, k);
        std::vector<double> emb(5000 * 64, 0.0);
        for (std::size_t i = 0; i < 5000; ++i)
            for (std::size_t c = 0; c < k; ++c) emb[i * 64 + c * (64 / k)] = low[i * k + c];
        auto r = descriptor_std_analysis(emb, 64);
        CHECK(std::abs(r.ratio - std::sqrt(double(k) / 64)) <= 0.05);
    }
}

}  // TEST_SUITE

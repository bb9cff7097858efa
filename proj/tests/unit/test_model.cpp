#include <doctest.h>

#include <cmath>
#include <string>

#include "featherpoint/deploy.hpp"
#include "featherpoint/error.hpp"
#include "featherpoint/keypoints.hpp"
#include "featherpoint/model.hpp"
#include "featherpoint/serialize.hpp"
#include "featherpoint/synth.hpp"
#include "featherpoint/teacher.hpp"
#include "support/gradcheck.hpp"

using namespace featherpoint;

namespace {

// Values from docs/layer_table.md, produced by tools/layer_table.py.
constexpr std::size_t kDefaultStudentParams = 64992;

void check_unit_norm(const Tensor& desc, double tol) {
    const std::size_t N = desc.dim(0), D = desc.dim(1), HW = desc.dim(2) * desc.dim(3);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
            double sq = 0.0;
            for (std::size_t c = 0; c < D; ++c) sq += std::pow(desc.data()[(n * D + c) * HW + i], 2);
            CHECK(std::abs(std::sqrt(sq) - 1.0) < tol);
        }
}

}  // namespace

TEST_SUITE("feature-net") {

TEST_CASE("default student output shapes") {
    auto m = build_student(ArchSpec{}, 1);
    auto out = m.infer(Tensor::zeros({1, 1, 64, 64}));
    CHECK(out.heatmap.shape() == Shape{1, 1, 64, 64});
    CHECK(out.descmap.shape() == Shape{1, 64, 8, 8});
    ArchSpec s8;
    s8.descriptor_dim = 8;
    CHECK(build_student(s8, 1).infer(Tensor::zeros({1, 1, 64, 64})).descmap.dim(1) == 8);
}

TEST_CASE("heatmap spatial size matches the input for any size divisible by 8") {
    auto m = build_student(ArchSpec{}, 2);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {24, 40}, {48, 16}}) {
        auto out = m.infer(Tensor::zeros({2, 1, h, w}));
        CHECK(out.heatmap.shape() == Shape{2, 1, h, w});
        CHECK(out.descmap.shape() == Shape{2, 64, h / 8, w / 8});
    }
    CHECK_THROWS_AS(m.infer(Tensor::zeros({1, 1, 60, 64})), ShapeError);
}

TEST_CASE("descriptors are unit norm and heatmap lies in [0,1] on random inputs") {
    Rng rng(3);
    for (auto norm : {NormKind::Affine, NormKind::BatchNorm}) {
        for (auto act : {ActKind::ReLU, ActKind::PWL}) {
            ArchSpec s;
            s.norm = norm;
            s.act = act;
            auto m = build_student(s, 3);
            auto out = m.infer(fptest::random_tensor(rng, {2, 1, 32, 32}, 0, 1, false));
            check_unit_norm(out.descmap, 1e-5);
            for (double v : out.heatmap.data()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("build is deterministic in spec and seed") {
    auto a = build_student(ArchSpec{}, 42);
    auto b = build_student(ArchSpec{}, 42);
    auto c = build_student(ArchSpec{}, 43);
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].tensor.to_vector() == pb[i].tensor.to_vector());
        any_diff |= pa[i].tensor.to_vector() != pc[i].tensor.to_vector();
    }
    CHECK(any_diff);
}

TEST_CASE("invalid specs list the violated invariant") {
    ArchSpec s;
    s.descriptor_dim = 100;
    try {
        build_student(s, 0);
        FAIL("expected ValueError");
    } catch (const ValueError& e) {
        CHECK(std::string(e.what()).find("descriptor_dim") != std::string::npos);
    }
    ArchSpec k;
    k.blocks[1].kernel = 4;
    CHECK_THROWS_AS(build_student(k, 0), ValueError);
}

TEST_CASE("every block kind builds and keeps the declared channel count") {
    for (auto kind : {BlockKind::StandardConv, BlockKind::Residual, BlockKind::Bottleneck, BlockKind::InceptionLike}) {
        for (std::size_t kernel : {3, 5}) {
            ArchSpec s;
            s.blocks = {{kind, kernel, 24}, {kind, kernel, 24}};
            auto m = build_student(s, 5);
            auto out = m.infer(Tensor::zeros({1, 1, 16, 16}));
            CHECK(out.descmap.shape() == Shape{1, 64, 2, 2});
            if (kind == BlockKind::Residual || kind == BlockKind::Bottleneck) {
                CHECK(m.blocks()[0].projection.has_value());  // 32 -> 24
                CHECK_FALSE(m.blocks()[1].projection.has_value());
            }
        }
    }
}

TEST_CASE("parameter counts") {
    auto u = make_conv_unit("c", 1, 1, 3, 1, false, NormKind::Affine, false, ActKind::ReLU, 0);
    CHECK(u.weight.numel() + u.bias.numel() == 10);
    auto a = make_conv_unit("a", 16, 16, 1, 1, true, NormKind::Affine, false, ActKind::ReLU, 0);
    CHECK(a.norm_scale.numel() + a.norm_bias.numel() == 32);
    auto m = build_student(ArchSpec{}, 0);
    CHECK(m.parameter_count() == kDefaultStudentParams);
}

TEST_CASE("teacher is deterministic and has unit-norm 256-d descriptors") {
    auto t1 = build_teacher(9);
    auto t2 = build_teacher(9);
    Rng rng(9);
    auto x = fptest::random_tensor(rng, {1, 1, 32, 32}, 0, 1, false);
    auto o1 = t1.infer(x), o2 = t2.infer(x);
    CHECK(o1.heatmap.to_vector() == o2.heatmap.to_vector());
    CHECK(o1.descmap.to_vector() == o2.descmap.to_vector());
    CHECK(o1.descmap.dim(1) == 256);
    check_unit_norm(o1.descmap, 1e-6);
    for (auto& p : t1.parameters()) CHECK_FALSE(p.tensor.requires_grad());

    ProceduralTeacher pt(9);
    auto po = pt.infer(x);
    CHECK(po.descmap.dim(1) == 256);
    check_unit_norm(po.descmap, 1e-6);
    CHECK(pt.infer(x).heatmap.to_vector() == po.heatmap.to_vector());
}

TEST_CASE("procedural teacher peaks near checkerboard corners") {
    ProceduralTeacher teacher(1);
    for (std::size_t cell : {8, 12, 16}) {
        auto scene = checkerboard(64, 96, cell, cell / 2);
        REQUIRE_FALSE(scene.corners.empty());
        auto kps = nms(teacher.infer(scene.image).heatmap, kDefaultNmsRadius);
        std::size_t hit = 0;
        for (const auto& c : scene.corners) {
            for (const auto& k : kps) {
                if (std::hypot(k.x - c.x, k.y - c.y) <= 4.0 && k.score >= kTeacherThreshold) {
                    ++hit;
                    break;
                }
            }
        }
        INFO("cell " << cell << ": " << hit << " of " << scene.corners.size());
        CHECK(static_cast<double>(hit) >= 0.5 * scene.corners.size());
    }
}

TEST_CASE("serialize round trip is byte identical") {
    for (auto norm : {NormKind::Affine, NormKind::BatchNorm}) {
        ArchSpec s;
        s.norm = norm;
        s.blocks = {{BlockKind::Residual, 5, 24}, {BlockKind::InceptionLike, 3, 32}};
        auto m = build_student(s, 11);
        const std::string a = serialize(m);
        auto back = deserialize(a);
        CHECK(back.spec() == s);
        CHECK(serialize(back) == a);
        auto pa = m.parameters(), pb = back.parameters();
        for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor.to_vector() == pb[i].tensor.to_vector());
    }
}

TEST_CASE("envelope parameter count matches the deploy count") {
    auto m = build_student(ArchSpec{}, 0);
    const auto text = serialize(m);
    CHECK(text.find("\"param_count\": " + std::to_string(kDefaultStudentParams)) != std::string::npos);
    CHECK(weights_size(m, 4) == 4 * kDefaultStudentParams);
}

TEST_CASE("corrupted files raise distinct errors") {
    auto m = build_student(ArchSpec{}, 0);
    const std::string text = serialize(m);

    CHECK_THROWS_AS(deserialize(text.substr(0, text.size() / 2)), TruncatedPayloadError);

    std::string version = text;
    const std::string key = "\"format_version\": 1";
    REQUIRE(version.find(key) != std::string::npos);
    version.replace(version.find(key), key.size(), "\"format_version\": 99");
    CHECK_THROWS_AS(deserialize(version), VersionMismatchError);

    std::string flipped = text;
    const auto at = flipped.find("\"payload\": \"") + 40;
    flipped[at] = flipped[at] == 'A' ? 'B' : 'A';
    CHECK_THROWS_AS(deserialize(flipped), ChecksumError);

    std::string shortened = text;
    const auto p = shortened.find("\"payload\": \"") + 12;
    shortened.erase(p, 8);
    CHECK_THROWS_AS(deserialize(shortened), TruncatedPayloadError);
}

TEST_CASE("base64 and crc32 known values") {
    const std::vector<std::uint8_t> foo{'f', 'o', 'o', 'b', 'a', 'r'};
    CHECK(base64_encode(foo) == "Zm9vYmFy");
    CHECK(base64_encode({'f'}) == "Zg==");
    CHECK(base64_decode("Zm9vYg==") == std::vector<std::uint8_t>{'f', 'o', 'o', 'b'});
    CHECK_THROWS_AS(base64_decode("Zm9v*mFy"), FormatError);
    const std::vector<std::uint8_t> digits{'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    CHECK(crc32_of(digits) == 0xCBF43926u);
}

TEST_CASE("arch spec JSON rejects unknown keys") {
    const auto text = arch_spec_to_json(ArchSpec{});
    CHECK(arch_spec_from_json(text) == ArchSpec{});
    auto bad = text;
    bad.insert(1, "\"colour\": 3,");
    CHECK_THROWS_AS(arch_spec_from_json(bad), FormatError);
}

}  // TEST_SUITE

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "featherpoint/error.hpp"
#include "featherpoint/hpatches.hpp"
#include "featherpoint/image_io.hpp"

using namespace featherpoint;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("featherpoint_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

Image8 sample_image(std::size_t channels) {
    Image8 img{5, 3, channels, {}};
    for (std::size_t i = 0; i < 15 * channels; ++i) img.pixels.push_back(static_cast<std::uint8_t>((i * 37) % 256));
    return img;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("PNM round trips in every variant") {
    for (std::size_t ch : {1u, 3u}) {
        const auto img = sample_image(ch);
        for (bool binary : {true, false}) {
            const auto bytes = encode_pnm(img, binary);
            const char magic = ch == 1 ? (binary ? '5' : '2') : (binary ? '6' : '3');
            CHECK(bytes[1] == magic);
            CHECK(parse_pnm(bytes) == img);
        }
    }
}

TEST_CASE("PNM maxval rescale, comments and errors") {
    auto img = parse_pnm("P2\n# comment\n2 1\n15\n0 15\n");
    CHECK(img.pixels == std::vector<std::uint8_t>{0, 255});
    auto mid = parse_pnm("P2 1 1 3 1\n");
    CHECK(mid.pixels[0] == 85);
    CHECK_THROWS_AS(parse_pnm("P7\n1 1\n255\n0\n"), FormatError);
    CHECK_THROWS_AS(parse_pnm("P5\n4 4\n255\nab"), FormatError);
    CHECK_THROWS_AS(parse_pnm("P2\n1 1\n255\n300\n"), FormatError);
}

TEST_CASE("gray conversion") {
    Image8 rgb{1, 1, 3, {255, 0, 0}};
    CHECK(image_to_gray(rgb).item() == doctest::Approx(0.299));
    auto g = Tensor::from({1, 1, 1, 3}, {-0.5, 0.5, 2.0});
    CHECK(gray_to_image(g).pixels == std::vector<std::uint8_t>{0, 128, 255});
}

TEST_CASE("homography text parsing") {
    auto h = parse_homography("1 0 2\n0 1 3\n0 0 1\n");
    CHECK(h == Homography::translation(2, 3));
    CHECK(parse_homography(format_homography(h)) == h);
    CHECK_THROWS_AS(parse_homography("1 0 0 0 1 0 0 0"), FormatError);
    CHECK_THROWS_AS(parse_homography("1 0 0 0 1 0 0 0 1 7"), FormatError);
    CHECK_THROWS_AS(parse_homography("1 0 0 0 1 0 0 0 x"), FormatError);
    CHECK_THROWS_AS(parse_homography("0 0 0 0 0 0 0 0 1"), ValueError);
}

TEST_CASE("exported corpus loads back without skips") {
    TempDir tmp("export");
    const auto corpus = synthetic_corpus(3, 4, 32, 40);
    export_hpatches(tmp.path, corpus);
    std::ostringstream warn;
    auto load = hpatches_load(tmp.path, &warn);
    CHECK(warn.str().empty());
    CHECK(load.sequences_loaded == 4);
    CHECK(load.sequences_skipped == 0);
    CHECK(load.pairs_skipped == 0);
    REQUIRE(load.pairs.size() == 20);
    // Folders load in sorted order: i_synth0, i_synth2, v_synth1, v_synth3.
    const std::size_t order[4] = {0, 2, 1, 3};
    for (std::size_t j = 0; j < 4; ++j) {
        const std::size_t s = order[j];
        for (std::size_t k = 0; k < 5; ++k) {
            const auto& p = load.pairs[j * 5 + k];
            CHECK(p.name == corpus[s].name + "_1_" + std::to_string(k + 2));
            CHECK(p.kind == corpus[s].kind);
            CHECK(p.image_a.to_vector() == image_to_gray(gray_to_image(corpus[s].images[0])).to_vector());
            CHECK(p.image_b.to_vector() == image_to_gray(gray_to_image(corpus[s].images[k + 1])).to_vector());
            for (std::size_t i = 0; i < 9; ++i)
                CHECK(p.h_ab.matrix()[i] == doctest::Approx(corpus[s].homographies[k].matrix()[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("a malformed homography skips only its pair") {
    TempDir tmp("bad_h");
    export_hpatches(tmp.path, synthetic_corpus(4, 2, 24, 24));
    write_text(tmp.path / "v_synth1" / "H_1_3", "1 0 0 0 1 0 0 0\n");
    std::ostringstream warn;
    auto load = hpatches_load(tmp.path, &warn);
    CHECK(load.pairs.size() == 9);
    CHECK(load.pairs_skipped == 1);
    REQUIRE(load.warnings.size() == 1);
    CHECK(load.warnings[0].rfind("warning: skipping v_synth1/H_1_3: ", 0) == 0);
    CHECK(warn.str() == load.warnings[0] + "\n");
    for (const auto& p : load.pairs) CHECK(p.name != "v_synth1_1_3");
}

TEST_CASE("illumination folders without homographies use the identity") {
    TempDir tmp("ident");
    export_hpatches(tmp.path, synthetic_corpus(5, 2, 24, 24));
    for (int k = 2; k <= 6; ++k) {
        fs::remove(tmp.path / "i_synth0" / ("H_1_" + std::to_string(k)));
    }
    fs::remove(tmp.path / "v_synth1" / "H_1_2");
    auto load = hpatches_load(tmp.path);
    CHECK(load.pairs_skipped == 1);
    for (const auto& p : load.pairs)
        if (p.kind == PairKind::Illumination) CHECK(p.h_ab.is_identity());
}

TEST_CASE("bad folders and missing images are skipped, an empty tree is an error") {
    TempDir tmp("skip");
    export_hpatches(tmp.path, synthetic_corpus(6, 2, 24, 24));
    fs::create_directories(tmp.path / "misc");
    fs::remove(tmp.path / "i_synth0" / "4.pgm");
    fs::create_directories(tmp.path / "v_empty");
    auto load = hpatches_load(tmp.path);
    CHECK(load.sequences_loaded == 2);
    CHECK(load.sequences_skipped == 2);
    CHECK(load.pairs_skipped == 1);
    CHECK(load.pairs.size() == 9);
    bool saw_prefix = false;
    for (const auto& w : load.warnings)
        if (w == "warning: skipping sequence misc: folder name must start with i_ or v_") saw_prefix = true;
    CHECK(saw_prefix);

    TempDir bad("none");
    fs::create_directories(bad.path / "x_seq");
    CHECK_THROWS_AS(hpatches_load(bad.path), IoError);
    CHECK_THROWS_AS(hpatches_load(bad.path / "missing"), IoError);
}

}  // TEST_SUITE

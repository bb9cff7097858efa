#include "featherpoint/hpatches.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "featherpoint/error.hpp"
#include "featherpoint/image_io.hpp"
#include "featherpoint/rng.hpp"

namespace fs = std::filesystem;

namespace featherpoint {

Homography parse_homography(const std::string& text) {
    std::istringstream in(text);
    std::vector<double> v;
    std::string tok;
    while (in >> tok) {
        std::size_t used = 0;
        double x;
        try {
            x = std::stod(tok, &used);
        } catch (const std::exception&) {
            throw FormatError("homography: '" + tok + "' is not a number");
        }
        if (used != tok.size() || !std::isfinite(x)) throw FormatError("homography: '" + tok + "' is not a finite number");
        v.push_back(x);
    }
    if (v.size() != 9) throw FormatError("homography: expected 9 numbers, found " + std::to_string(v.size()));
    std::array<double, 9> m;
    std::copy(v.begin(), v.end(), m.begin());
    return Homography(m);
}

std::string format_homography(const Homography& h) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t c = 0; c < 3; ++c) os << (c ? " " : "") << h(r, c);
        os << '\n';
    }
    return os.str();
}

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("missing file " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path find_image(const fs::path& seq, int index) {
    for (const char* ext : {".ppm", ".pgm"}) {
        auto p = seq / (std::to_string(index) + ext);
        if (fs::exists(p)) return p;
    }
    throw IoError("missing image " + (seq / std::to_string(index)).string() + ".{ppm,pgm}");
}

}  // namespace

HPatchesLoad hpatches_load(const fs::path& dir, std::ostream* warn) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    HPatchesLoad out;
    auto warning = [&](const std::string& what, const std::string& reason) {
        const std::string line = "warning: skipping " + what + ": " + reason;
        out.warnings.push_back(line);
        if (warn) *warn << line << '\n';
    };

    std::vector<fs::path> seqs;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_directory()) seqs.push_back(e.path());
    std::sort(seqs.begin(), seqs.end());

    for (const auto& seq : seqs) {
        const std::string name = seq.filename().string();
        PairKind kind;
        if (name.rfind("i_", 0) == 0) {
            kind = PairKind::Illumination;
        } else if (name.rfind("v_", 0) == 0) {
            kind = PairKind::Viewpoint;
        } else {
            warning("sequence " + name, "folder name must start with i_ or v_");
            ++out.sequences_skipped;
            continue;
        }
        Tensor ref;
        try {
            ref = image_to_gray(read_pnm(find_image(seq, 1)));
        } catch (const Error& e) {
            warning("sequence " + name, e.what());
            ++out.sequences_skipped;
            continue;
        }
        std::size_t loaded = 0;
        for (int k = 2; k <= 6; ++k) {
            const std::string what = name + "/H_1_" + std::to_string(k);
            try {
                auto img = image_to_gray(read_pnm(find_image(seq, k)));
                const auto hp = seq / ("H_1_" + std::to_string(k));
                Homography h;
                if (fs::exists(hp)) {
                    h = parse_homography(read_text(hp));
                } else if (kind == PairKind::Viewpoint) {
                    throw IoError("missing file " + hp.string());
                }
                SequencePair p;
                p.name = name + "_1_" + std::to_string(k);
                p.kind = kind;
                p.image_a = ref;
                p.image_b = std::move(img);
                p.h_ab = h;
                out.pairs.push_back(std::move(p));
                ++loaded;
            } catch (const Error& e) {
                warning(what, e.what());
                ++out.pairs_skipped;
            }
        }
        if (loaded == 0) {
            warning("sequence " + name, "no loadable pairs");
            ++out.sequences_skipped;
        } else {
            ++out.sequences_loaded;
        }
    }
    if (out.sequences_loaded == 0) throw IoError("no HPatches sequences could be loaded from " + dir.string());
    return out;
}

void export_hpatches(const fs::path& dir, const std::vector<SyntheticSequence>& seqs) {
    fs::create_directories(dir);
    for (const auto& s : seqs) {
        const auto sd = dir / s.name;
        fs::create_directories(sd);
        for (std::size_t i = 0; i < s.images.size(); ++i) {
            write_pnm(sd / (std::to_string(i + 1) + ".pgm"), gray_to_image(s.images[i]));
        }
        for (std::size_t k = 0; k < s.homographies.size(); ++k) {
            std::ofstream out(sd / ("H_1_" + std::to_string(k + 2)));
            if (!out) throw IoError("cannot write homography in " + sd.string());
            out << format_homography(s.homographies[k]);
        }
    }
}

std::vector<SyntheticSequence> synthetic_corpus(std::uint64_t seed, std::size_t count, std::size_t height,
                                                std::size_t width) {
    std::vector<SyntheticSequence> out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto kind = i % 2 == 0 ? PairKind::Illumination : PairKind::Viewpoint;
        auto s = generate_sequence(Rng::derive(seed, "corpus." + std::to_string(i)).next_u64(), kind, height, width);
        s.name = std::string(kind == PairKind::Illumination ? "i_" : "v_") + "synth" + std::to_string(i);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace featherpoint

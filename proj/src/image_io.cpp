#include "featherpoint/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "featherpoint/error.hpp"

namespace featherpoint {

namespace {

class PnmReader {
public:
    explicit PnmReader(const std::string& b) : b_(b) {}

    void skip_space_and_comments() {
        while (pos_ < b_.size()) {
            if (std::isspace(static_cast<unsigned char>(b_[pos_]))) {
                ++pos_;
            } else if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        std::size_t v = 0;
        while (pos_ < b_.size() && std::isdigit(static_cast<unsigned char>(b_[pos_]))) {
            v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
            if (v > (1u << 30)) throw FormatError(std::string("pnm: ") + what + " too large");
            ++pos_;
        }
        if (start == pos_) throw FormatError(std::string("pnm: expected ") + what);
        return v;
    }

    std::size_t pos_ = 0;
    const std::string& b_;
};

}  // namespace

Image8 parse_pnm(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P') throw FormatError("pnm: missing magic number");
    const char kind = bytes[1];
    if (kind != '2' && kind != '3' && kind != '5' && kind != '6') {
        throw FormatError(std::string("pnm: unsupported variant P") + kind);
    }
    PnmReader r(bytes);
    r.pos_ = 2;
    Image8 img;
    img.width = r.number("width");
    img.height = r.number("height");
    const std::size_t maxval = r.number("maxval");
    if (img.width == 0 || img.height == 0) throw FormatError("pnm: zero-sized image");
    if (maxval == 0 || maxval > 65535) throw FormatError("pnm: maxval out of range");
    img.channels = (kind == '3' || kind == '6') ? 3 : 1;
    const std::size_t n = img.width * img.height * img.channels;
    img.pixels.resize(n);
    auto rescale = [&](std::size_t v) -> std::uint8_t {
        if (v > maxval) throw FormatError("pnm: sample exceeds maxval");
        if (maxval == 255) return static_cast<std::uint8_t>(v);
        return static_cast<std::uint8_t>(std::lround(static_cast<double>(v) * 255.0 / static_cast<double>(maxval)));
    };
    if (kind == '2' || kind == '3') {
        for (std::size_t i = 0; i < n; ++i) img.pixels[i] = rescale(r.number("sample"));
    } else {
        // exactly one whitespace byte separates the header from the raster
        if (r.pos_ >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[r.pos_]))) {
            throw FormatError("pnm: malformed header");
        }
        ++r.pos_;
        const std::size_t bps = maxval < 256 ? 1 : 2;
        if (bytes.size() - r.pos_ < n * bps) throw FormatError("pnm: truncated raster");
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t v = static_cast<unsigned char>(bytes[r.pos_ + i * bps]);
            if (bps == 2) v = (v << 8) | static_cast<unsigned char>(bytes[r.pos_ + i * bps + 1]);
            img.pixels[i] = rescale(v);
        }
    }
    return img;
}

std::string encode_pnm(const Image8& img, bool binary) {
    if (img.channels != 1 && img.channels != 3) throw ValueError("pnm: only gray or RGB images can be written");
    if (img.pixels.size() != img.width * img.height * img.channels) throw ShapeError("pnm: pixel count mismatch");
    std::ostringstream os;
    const char kind = img.channels == 1 ? (binary ? '5' : '2') : (binary ? '6' : '3');
    os << 'P' << kind << '\n' << img.width << ' ' << img.height << "\n255\n";
    if (binary) {
        os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    } else {
        const std::size_t row = img.width * img.channels;
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            os << static_cast<int>(img.pixels[i]) << ((i + 1) % row == 0 ? '\n' : ' ');
        }
    }
    return os.str();
}

Image8 read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_pnm(ss.str());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_pnm(const std::filesystem::path& path, const Image8& img, bool binary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    const auto bytes = encode_pnm(img, binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor image_to_gray(const Image8& img) {
    const std::size_t n = img.width * img.height;
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (img.channels == 1) {
            v[i] = img.pixels[i] / 255.0;
        } else {
            const auto* p = img.pixels.data() + i * img.channels;
            v[i] = (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0;
        }
    }
    return Tensor::from(Shape{1, 1, img.height, img.width}, std::move(v));
}

Image8 gray_to_image(const Tensor& t) {
    if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1) throw ShapeError("gray_to_image: expected (1,1,H,W)");
    Image8 img;
    img.height = t.dim(2);
    img.width = t.dim(3);
    img.channels = 1;
    img.pixels.resize(t.numel());
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(d[i], 0.0, 1.0) * 255.0));
    return img;
}

}  // namespace featherpoint

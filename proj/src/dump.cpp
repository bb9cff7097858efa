#include "featherpoint/dump.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "featherpoint/error.hpp"
#include "featherpoint/serialize.hpp"

namespace featherpoint {

namespace {

constexpr const char* kCsvHeader = "x,y,score";

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
}

}  // namespace

std::string keypoints_to_csv(const std::vector<Keypoint>& kps) {
    std::ostringstream os;
    os << kCsvHeader << '\n' << std::setprecision(17);
    for (const auto& k : kps) os << k.x << ',' << k.y << ',' << k.score << '\n';
    return os.str();
}

std::vector<Keypoint> keypoints_from_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != kCsvHeader) throw FormatError("keypoint CSV: expected header x,y,score");
    std::vector<Keypoint> out;
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Keypoint k;
        char c1 = 0, c2 = 0;
        if (!(ls >> k.x >> c1 >> k.y >> c2 >> k.score) || c1 != ',' || c2 != ',' || !(ls >> std::ws).eof()) {
            throw FormatError("keypoint CSV: malformed row " + std::to_string(row));
        }
        out.push_back(k);
    }
    return out;
}

std::string descriptors_to_text(const DescriptorSet& d) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    std::vector<std::uint8_t> bytes(d.values.size() * sizeof(double));
    std::memcpy(bytes.data(), d.values.data(), bytes.size());
    return std::to_string(d.count) + " " + std::to_string(d.dim) + "\n" + base64_encode(bytes) + "\n";
}

DescriptorSet descriptors_from_text(const std::string& text) {
    std::istringstream is(text);
    DescriptorSet d;
    std::string payload;
    if (!(is >> d.count >> d.dim)) throw FormatError("descriptor block: expected '<count> <dim>' header");
    is >> payload;
    const auto bytes = base64_decode(payload);
    if (bytes.size() != d.count * d.dim * sizeof(double)) {
        throw FormatError("descriptor block: payload holds " + std::to_string(bytes.size()) + " bytes, header implies " +
                          std::to_string(d.count * d.dim * sizeof(double)));
    }
    d.values.resize(d.count * d.dim);
    std::memcpy(d.values.data(), bytes.data(), bytes.size());
    return d;
}

void write_keypoint_dump(const std::filesystem::path& prefix, const Extraction& e) {
    write_file(prefix.string() + ".csv", keypoints_to_csv(e.keypoints));
    write_file(prefix.string() + ".desc", descriptors_to_text(e.descriptors));
}

std::string eval_report_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "name,kind,repeatability,correctness,keypoints_a,keypoints_b,matches\n" << std::setprecision(17);
    for (const auto& p : r.pairs) {
        os << p.name << ',' << to_string(p.kind) << ',' << p.repeatability << ',' << p.correctness << ','
           << p.keypoints_a << ',' << p.keypoints_b << ',' << p.matches << '\n';
    }
    return os.str();
}

}  // namespace featherpoint

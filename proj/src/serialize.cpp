#include "featherpoint/serialize.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "featherpoint/error.hpp"

namespace featherpoint {

using json = nlohmann::json;

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

void require_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw FormatError(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw FormatError("unknown key '" + where + "." + it.key() + "'");
    }
}

json spec_json(const ArchSpec& s) {
    json blocks = json::array();
    for (const auto& b : s.blocks) {
        blocks.push_back({{"kind", to_string(b.kind)}, {"kernel", b.kernel}, {"channels", b.channels}});
    }
    return {{"stem", {{"channels", s.stem_channels}, {"downsample_factor", s.downsample}}},
            {"blocks", blocks},
            {"norm_kind", to_string(s.norm)},
            {"act_kind", to_string(s.act)},
            {"descriptor_dim", s.descriptor_dim},
            {"detector_upscale", s.detector_upscale},
            {"head_channels", s.head_channels},
            {"input_channels", s.input_channels}};
}

ArchSpec spec_from(const json& j) {
    require_keys(j, "spec",
                 {"stem", "blocks", "norm_kind", "act_kind", "descriptor_dim", "detector_upscale", "head_channels",
                  "input_channels"});
    ArchSpec s;
    try {
        if (j.contains("stem")) {
            require_keys(j["stem"], "spec.stem", {"channels", "downsample_factor"});
            s.stem_channels = j["stem"].value("channels", s.stem_channels);
            s.downsample = j["stem"].value("downsample_factor", s.downsample);
        }
        if (j.contains("blocks")) {
            s.blocks.clear();
            for (const auto& b : j["blocks"]) {
                require_keys(b, "spec.blocks[]", {"kind", "kernel", "channels"});
                BlockChoice c;
                c.kind = block_kind_from_string(b.value("kind", std::string("StandardConv")));
                c.kernel = b.value("kernel", c.kernel);
                c.channels = b.value("channels", c.channels);
                s.blocks.push_back(c);
            }
        }
        if (j.contains("norm_kind")) s.norm = norm_kind_from_string(j["norm_kind"].get<std::string>());
        if (j.contains("act_kind")) s.act = act_kind_from_string(j["act_kind"].get<std::string>());
        s.descriptor_dim = j.value("descriptor_dim", s.descriptor_dim);
        s.detector_upscale = j.value("detector_upscale", s.detector_upscale);
        s.head_channels = j.value("head_channels", s.head_channels);
        s.input_channels = j.value("input_channels", s.input_channels);
    } catch (const json::exception& e) {
        throw FormatError(std::string("spec: ") + e.what());
    }
    return s;
}

void append_le(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

double read_le(const std::uint8_t* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

}  // namespace

std::string base64_encode(const std::vector<std::uint8_t>& b) {
    std::string out;
    out.reserve((b.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < b.size(); i += 3) {
        const std::uint32_t n = (static_cast<std::uint32_t>(b[i]) << 16) |
                                (i + 1 < b.size() ? static_cast<std::uint32_t>(b[i + 1]) << 8 : 0) |
                                (i + 2 < b.size() ? b[i + 2] : 0);
        out += kAlphabet[(n >> 18) & 63];
        out += kAlphabet[(n >> 12) & 63];
        out += i + 1 < b.size() ? kAlphabet[(n >> 6) & 63] : '=';
        out += i + 2 < b.size() ? kAlphabet[n & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& t) {
    if (t.size() % 4 != 0) throw TruncatedPayloadError("base64 payload length is not a multiple of 4");
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<std::uint8_t> out;
    out.reserve(t.size() / 4 * 3);
    for (std::size_t i = 0; i < t.size(); i += 4) {
        int v[4];
        int pad = 0;
        for (int k = 0; k < 4; ++k) {
            const char c = t[i + k];
            if (c == '=') {
                if (i + 4 != t.size() || k < 2) throw FormatError("base64: misplaced padding");
                v[k] = 0;
                ++pad;
            } else {
                if (pad) throw FormatError("base64: data after padding");
                v[k] = val(c);
                if (v[k] < 0) throw FormatError("base64: invalid character");
            }
        }
        const std::uint32_t n = (static_cast<std::uint32_t>(v[0]) << 18) | (static_cast<std::uint32_t>(v[1]) << 12) |
                                (static_cast<std::uint32_t>(v[2]) << 6) | static_cast<std::uint32_t>(v[3]);
        out.push_back(static_cast<std::uint8_t>(n >> 16));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>(n >> 8));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(n));
    }
    return out;
}

std::uint32_t crc32_of(const std::vector<std::uint8_t>& bytes) {
    uLong c = crc32(0L, Z_NULL, 0);
    std::size_t off = 0;
    while (off < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        c = crc32(c, bytes.data() + off, chunk);
        off += chunk;
    }
    return static_cast<std::uint32_t>(c);
}

std::string arch_spec_to_json(const ArchSpec& spec, int indent) { return spec_json(spec).dump(indent) + "\n"; }

ArchSpec arch_spec_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("spec JSON: ") + e.what());
    }
    auto s = spec_from(j);
    s.validate();
    return s;
}

std::string serialize(ModelGraph& model) {
    std::vector<std::uint8_t> payload;
    json manifest = json::array();
    std::size_t param_count = 0;
    auto add = [&](const std::string& name, const Shape& shape, std::span<const double> values, const char* kind) {
        const std::size_t offset = payload.size();
        for (double v : values) append_le(payload, v);
        manifest.push_back({{"name", name},
                            {"shape", shape},
                            {"dtype", "float64"},
                            {"kind", kind},
                            {"offset", offset},
                            {"length", values.size() * 8}});
    };
    model.visit({[&](const std::string& n, Tensor& t) {
                     add(n, t.shape(), t.data(), "param");
                     param_count += t.numel();
                 },
                 nullptr});
    model.visit({nullptr, [&](const std::string& n, std::vector<double>& b) { add(n, Shape{b.size()}, b, "buffer"); }});
    json env = {{"format", "featherpoint-model"},
                {"format_version", kModelFormatVersion},
                {"spec", spec_json(model.spec())},
                {"frozen", model.frozen()},
                {"param_count", param_count},
                {"param_manifest", manifest},
                {"payload_bytes", payload.size()},
                {"checksum", crc32_of(payload)},
                {"payload", base64_encode(payload)}};
    return env.dump(2) + "\n";
}

ModelGraph deserialize(const std::string& text) {
    json env;
    try {
        env = json::parse(text);
    } catch (const json::exception& e) {
        throw TruncatedPayloadError(std::string("model file is truncated or not JSON: ") + e.what());
    }
    try {
        if (!env.is_object() || env.value("format", std::string()) != "featherpoint-model") {
            throw FormatError("not a featherpoint model file");
        }
        const int version = env.at("format_version").get<int>();
        if (version != kModelFormatVersion) {
            throw VersionMismatchError("model format_version " + std::to_string(version) + ", expected " +
                                       std::to_string(kModelFormatVersion));
        }
        const auto payload = base64_decode(env.at("payload").get<std::string>());
        const std::size_t declared = env.at("payload_bytes").get<std::size_t>();
        if (payload.size() != declared) {
            throw TruncatedPayloadError("payload has " + std::to_string(payload.size()) + " bytes, envelope declares " +
                                        std::to_string(declared));
        }
        if (crc32_of(payload) != env.at("checksum").get<std::uint32_t>()) {
            throw ChecksumError("payload checksum mismatch");
        }
        ArchSpec spec = spec_from(env.at("spec"));
        spec.validate();
        ModelGraph model = build_student(spec, 0);

        std::map<std::string, json> entries;
        for (const auto& e : env.at("param_manifest")) {
            if (e.at("dtype").get<std::string>() != "float64") throw FormatError("unsupported dtype in manifest");
            const std::size_t off = e.at("offset").get<std::size_t>(), len = e.at("length").get<std::size_t>();
            if (off + len > payload.size() || len % 8 != 0) {
                throw TruncatedPayloadError("manifest entry '" + e.at("name").get<std::string>() + "' exceeds payload");
            }
            entries[e.at("name").get<std::string>()] = e;
        }
        std::size_t used = 0;
        auto fetch = [&](const std::string& name, std::size_t numel, const Shape& shape) {
            auto it = entries.find(name);
            if (it == entries.end()) throw FormatError("model file lacks tensor '" + name + "'");
            if (it->second.at("shape").get<Shape>() != shape) throw FormatError("shape mismatch for tensor '" + name + "'");
            const std::size_t off = it->second.at("offset").get<std::size_t>();
            std::vector<double> v(numel);
            for (std::size_t i = 0; i < numel; ++i) v[i] = read_le(payload.data() + off + 8 * i);
            ++used;
            return v;
        };
        model.visit({[&](const std::string& n, Tensor& t) {
                         auto v = fetch(n, t.numel(), t.shape());
                         std::copy(v.begin(), v.end(), t.mutable_data().begin());
                     },
                     [&](const std::string& n, std::vector<double>& b) { b = fetch(n, b.size(), Shape{b.size()}); }});
        if (used != entries.size()) throw FormatError("model file has tensors the spec does not define");
        if (env.value("frozen", false)) model.freeze();
        return model;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed model envelope: ") + e.what());
    }
}

void save_model(const std::filesystem::path& path, ModelGraph& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write model file " + path.string());
    const auto text = serialize(model);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

ModelGraph load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open model file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

}  // namespace featherpoint

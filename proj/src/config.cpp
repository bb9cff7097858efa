#include "featherpoint/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "featherpoint/error.hpp"

namespace featherpoint {

using json = nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

/// Walks one JSON object, reading known keys and rejecting the rest.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
    }
    ~Section() noexcept(false) {
        if (std::uncaught_exceptions()) return;
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) fail(join(path_, it.key()), "unknown key");
    }

    [[noreturn]] static void fail(const std::string& path, const std::string& what) {
        throw ConfigError(path + ": " + what);
    }
    std::string at(const std::string& key) const { return join(path_, key); }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void size(const std::string& key, std::size_t& out, std::size_t min = 0) {
        if (const json* v = find(key)) {
            if (!v->is_number_unsigned()) fail(at(key), "expected a non-negative integer");
            out = v->get<std::size_t>();
            if (out < min) fail(at(key), "must be at least " + std::to_string(min));
        }
    }
    void u64(const std::string& key, std::uint64_t& out) {
        if (const json* v = find(key)) {
            if (!v->is_number_unsigned()) fail(at(key), "expected a non-negative integer");
            out = v->get<std::uint64_t>();
        }
    }
    void integer(const std::string& key, int& out, int min) {
        if (const json* v = find(key)) {
            if (!v->is_number_integer()) fail(at(key), "expected an integer");
            out = v->get<int>();
            if (out < min) fail(at(key), "must be at least " + std::to_string(min));
        }
    }
    void real(const std::string& key, double& out, bool positive) {
        if (const json* v = find(key)) {
            if (!v->is_number()) fail(at(key), "expected a number");
            out = v->get<double>();
            if (!std::isfinite(out) || (positive && !(out > 0.0))) fail(at(key), positive ? "must be positive" : "must be finite");
        }
    }
    void boolean(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) fail(at(key), "expected true or false");
            out = v->get<bool>();
        }
    }
    void string(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) fail(at(key), "expected a string");
            out = v->get<std::string>();
        }
    }
    void pair(const std::string& key, std::pair<std::size_t, std::size_t>& out) {
        if (const json* v = find(key)) {
            if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number_unsigned() || !(*v)[1].is_number_unsigned())
                fail(at(key), "expected [height, width]");
            out = {(*v)[0].get<std::size_t>(), (*v)[1].get<std::size_t>()};
            if (out.first == 0 || out.second == 0 || out.first % 8 || out.second % 8)
                fail(at(key), "height and width must be positive multiples of 8");
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

json choice_json(const BlockChoice& c) {
    return {{"kind", to_string(c.kind)}, {"kernel", c.kernel}, {"channels", c.channels}};
}

BlockChoice choice_from(const json& j, const std::string& path) {
    BlockChoice c;
    Section s(j, path);
    std::string kind = to_string(c.kind);
    s.string("kind", kind);
    try {
        c.kind = block_kind_from_string(kind);
    } catch (const Error& e) {
        Section::fail(s.at("kind"), e.what());
    }
    s.size("kernel", c.kernel, 1);
    s.size("channels", c.channels, 1);
    return c;
}

json to_json(const RunConfig& c) {
    json blocks = json::array(), candidates = json::array(), modes = json::array();
    for (const auto& b : c.model.blocks) blocks.push_back(choice_json(b));
    for (const auto& b : c.nas.candidates) candidates.push_back(choice_json(b));
    for (const auto& m : c.eval.threshold_modes) modes.push_back(threshold_mode_to_string(m));
    const auto& syn = c.data.synthetic;
    return {
        {"seed", c.seed},
        {"data",
         {{"synthetic",
           {{"n_train", syn.n_train},
            {"n_val", syn.n_val},
            {"size", {syn.size.first, syn.size.second}},
            {"bench_pairs", syn.bench_pairs},
            {"bench_size", {syn.bench_size.first, syn.bench_size.second}}}},
          {"hpatches_dir", c.data.hpatches_dir ? json(*c.data.hpatches_dir) : json(nullptr)}}},
        {"model",
         {{"stem_channels", c.model.stem_channels},
          {"downsample", c.model.downsample},
          {"blocks", blocks},
          {"norm_kind", to_string(c.model.norm)},
          {"act_kind", to_string(c.model.act)},
          {"descriptor_dim", c.model.descriptor_dim},
          {"detector_upscale", c.model.detector_upscale},
          {"head_channels", c.model.head_channels},
          {"input_channels", c.model.input_channels}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch", c.train.batch},
          {"lr", c.train.lr},
          {"weight_decay", c.train.weight_decay},
          {"clip", c.train.clip},
          {"plateau", {{"factor", c.train.plateau_factor}, {"patience", c.train.plateau_patience}}},
          {"augment", c.train.augment}}},
        {"loss",
         {{"alpha", c.loss.alpha},
          {"beta", c.loss.beta},
          {"sigma_g", c.loss.sigma_g},
          {"tau_rel", c.loss.tau_rel},
          {"mse_baseline", c.loss.mse_baseline},
          {"nms_radius", c.loss.nms_radius},
          {"teacher_threshold", c.loss.teacher_threshold}}},
        {"nas",
         {{"slots", c.nas.slots},
          {"candidates", candidates},
          {"tau_start", c.nas.schedule.tau_start},
          {"decay", c.nas.schedule.decay},
          {"tau_min", c.nas.schedule.tau_min},
          {"epochs", c.nas.epochs},
          {"arch_lr", c.nas.arch_lr}}},
        {"quant",
         {{"scheme", to_string(c.quant.scheme)},
          {"calibration_batches", c.quant.calibration_batches},
          {"percentile", c.quant.percentile ? json(*c.quant.percentile) : json(nullptr)}}},
        {"eval",
         {{"eps_px", c.eval.eps_px},
          {"threshold_modes", modes},
          {"nms_radius", c.eval.nms_radius},
          {"border", c.eval.border}}},
        {"out_dir", c.out_dir},
    };
}

RunConfig from_json(const json& root) {
    RunConfig c;
    Section top(root, "");
    top.u64("seed", c.seed);
    top.string("out_dir", c.out_dir);
    if (const json* d = top.find("data")) {
        Section s(*d, "data");
        if (const json* syn = s.find("synthetic")) {
            Section y(*syn, "data.synthetic");
            auto& o = c.data.synthetic;
            y.size("n_train", o.n_train, 1);
            y.size("n_val", o.n_val, 1);
            y.pair("size", o.size);
            y.size("bench_pairs", o.bench_pairs, 1);
            y.pair("bench_size", o.bench_size);
        }
        if (const json* h = s.find("hpatches_dir")) {
            if (h->is_null()) {
                c.data.hpatches_dir.reset();
            } else if (h->is_string()) {
                c.data.hpatches_dir = h->get<std::string>();
            } else {
                Section::fail("data.hpatches_dir", "expected a path string or null");
            }
        }
    }
    if (const json* m = top.find("model")) {
        Section s(*m, "model");
        auto& a = c.model;
        s.size("stem_channels", a.stem_channels, 1);
        s.size("downsample", a.downsample, 1);
        if (const json* b = s.find("blocks")) {
            if (!b->is_array()) Section::fail("model.blocks", "expected an array");
            a.blocks.clear();
            for (std::size_t i = 0; i < b->size(); ++i)
                a.blocks.push_back(choice_from((*b)[i], "model.blocks[" + std::to_string(i) + "]"));
        }
        std::string norm = to_string(a.norm), act = to_string(a.act);
        s.string("norm_kind", norm);
        s.string("act_kind", act);
        try {
            a.norm = norm_kind_from_string(norm);
        } catch (const Error& e) {
            Section::fail("model.norm_kind", e.what());
        }
        try {
            a.act = act_kind_from_string(act);
        } catch (const Error& e) {
            Section::fail("model.act_kind", e.what());
        }
        s.size("descriptor_dim", a.descriptor_dim, 1);
        s.size("detector_upscale", a.detector_upscale, 1);
        s.size("head_channels", a.head_channels);
        s.size("input_channels", a.input_channels, 1);
    }
    try {
        c.model.validate();
    } catch (const ValueError& e) {
        Section::fail("model", e.what());
    }
    if (const json* t = top.find("train")) {
        Section s(*t, "train");
        s.size("epochs", c.train.epochs);
        s.size("batch", c.train.batch, 1);
        s.real("lr", c.train.lr, true);
        s.real("weight_decay", c.train.weight_decay, false);
        s.real("clip", c.train.clip, true);
        s.boolean("augment", c.train.augment);
        if (const json* p = s.find("plateau")) {
            Section q(*p, "train.plateau");
            q.real("factor", c.train.plateau_factor, true);
            q.integer("patience", c.train.plateau_patience, 0);
            if (c.train.plateau_factor >= 1.0) Section::fail("train.plateau.factor", "must be below 1");
        }
        if (c.train.weight_decay < 0.0) Section::fail("train.weight_decay", "must be non-negative");
    }
    if (const json* l = top.find("loss")) {
        Section s(*l, "loss");
        s.real("alpha", c.loss.alpha, false);
        s.real("beta", c.loss.beta, false);
        s.real("sigma_g", c.loss.sigma_g, true);
        s.real("tau_rel", c.loss.tau_rel, true);
        s.boolean("mse_baseline", c.loss.mse_baseline);
        s.size("nms_radius", c.loss.nms_radius);
        s.real("teacher_threshold", c.loss.teacher_threshold, false);
    }
    if (c.loss.mse_baseline && c.model.descriptor_dim != kTeacherDescriptorDim)
        Section::fail("loss.mse_baseline", "needs model.descriptor_dim == 256");
    if (const json* n = top.find("nas")) {
        Section s(*n, "nas");
        s.size("slots", c.nas.slots, 1);
        if (const json* b = s.find("candidates")) {
            if (!b->is_array() || b->empty()) Section::fail("nas.candidates", "expected a non-empty array");
            c.nas.candidates.clear();
            for (std::size_t i = 0; i < b->size(); ++i)
                c.nas.candidates.push_back(choice_from((*b)[i], "nas.candidates[" + std::to_string(i) + "]"));
        }
        s.real("tau_start", c.nas.schedule.tau_start, true);
        s.real("decay", c.nas.schedule.decay, true);
        s.real("tau_min", c.nas.schedule.tau_min, true);
        s.size("epochs", c.nas.epochs);
        s.real("arch_lr", c.nas.arch_lr, true);
        try {
            c.nas.schedule.validate();
        } catch (const ValueError& e) {
            Section::fail("nas", e.what());
        }
    }
    if (const json* q = top.find("quant")) {
        Section s(*q, "quant");
        std::string scheme = to_string(c.quant.scheme);
        s.string("scheme", scheme);
        try {
            c.quant.scheme = quant_scheme_from_string(scheme);
        } catch (const Error& e) {
            Section::fail("quant.scheme", e.what());
        }
        if (c.quant.scheme == QuantScheme::AffinePerTensor)
            Section::fail("quant.scheme", "weights need symmetric_per_channel or symmetric_per_tensor");
        s.size("calibration_batches", c.quant.calibration_batches, 1);
        if (const json* p = s.find("percentile")) {
            if (p->is_null()) {
                c.quant.percentile.reset();
            } else if (p->is_number() && p->get<double>() > 50.0 && p->get<double>() <= 100.0) {
                c.quant.percentile = p->get<double>();
            } else {
                Section::fail("quant.percentile", "expected null or a number in (50, 100]");
            }
        }
    }
    if (const json* e = top.find("eval")) {
        Section s(*e, "eval");
        s.real("eps_px", c.eval.eps_px, true);
        s.size("nms_radius", c.eval.nms_radius);
        s.size("border", c.eval.border);
        if (const json* m = s.find("threshold_modes")) {
            if (!m->is_array() || m->empty()) Section::fail("eval.threshold_modes", "expected a non-empty array");
            c.eval.threshold_modes.clear();
            for (std::size_t i = 0; i < m->size(); ++i) {
                const std::string path = "eval.threshold_modes[" + std::to_string(i) + "]";
                if (!(*m)[i].is_string()) Section::fail(path, "expected \"adaptive\" or \"fixed(<v>)\"");
                try {
                    c.eval.threshold_modes.push_back(threshold_mode_from_string((*m)[i].get<std::string>()));
                } catch (const Error& ex) {
                    Section::fail(path, ex.what());
                }
            }
        }
    }
    return c;
}

}  // namespace

std::string threshold_mode_to_string(const ThresholdMode& m) {
    if (m.adaptive) return "adaptive";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, m.fixed);
    return "fixed(" + std::string(buf, r.ptr) + ")";
}

ThresholdMode threshold_mode_from_string(const std::string& s) {
    if (s == "adaptive") return ThresholdMode::adaptive_mode();
    if (s.rfind("fixed(", 0) == 0 && s.size() > 7 && s.back() == ')') {
        const std::string num = s.substr(6, s.size() - 7);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(num, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == num.size() && std::isfinite(v) && v >= 0.0 && v <= 1.0) return ThresholdMode::fixed_at(v);
    }
    throw ValueError("threshold mode must be \"adaptive\" or \"fixed(<v>)\" with v in [0, 1], got '" + s + "'");
}

std::string config_to_json(const RunConfig& cfg, int indent) { return to_json(cfg).dump(indent) + "\n"; }

RunConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    return from_json(j);
}

std::string apply_overrides(const std::string& text, const std::vector<std::pair<std::string, std::string>>& overrides) {
    json j;
    try {
        j = text.empty() ? json::object() : json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    for (const auto& [key, raw] : overrides) {
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;
        }
        json* node = &j;
        std::string path;
        std::size_t start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (part.empty()) throw ConfigError(key + ": empty path component");
            path = join(path, part);
            if (!node->is_object()) throw ConfigError(path + ": cannot override inside a non-object");
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            node = &(*node)[part];
            if (node->is_null()) *node = json::object();
            start = dot + 1;
        }
    }
    return j.dump();
}

RunConfig load_config(const std::optional<std::filesystem::path>& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::string text = "{}";
    if (path) {
        std::ifstream in(*path);
        if (!in) throw IoError("cannot open config file " + path->string());
        std::ostringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    return config_from_json(apply_overrides(text, overrides));
}

}  // namespace featherpoint

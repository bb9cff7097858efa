#include "featherpoint/pipeline.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <limits>

#include "featherpoint/dump.hpp"
#include "featherpoint/error.hpp"
#include "featherpoint/image_io.hpp"
#include "featherpoint/hpatches.hpp"
#include "featherpoint/serialize.hpp"

namespace fs = std::filesystem;

namespace featherpoint {

using json = nlohmann::json;

namespace {

std::uint64_t sub_seed(const RunConfig& cfg, const char* label) { return Rng::derive(cfg.seed, label).next_u64(); }

fs::path out_dir(const RunConfig& cfg) {
    fs::path d(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw IoError("cannot create output directory " + d.string() + ": " + ec.message());
    return d;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json metrics_json(const EvalReport& r) {
    return {{"rep_i", r.rep_i}, {"rep_v", r.rep_v}, {"cor_i", r.cor_i}, {"cor_v", r.cor_v},
            {"mean_keypoints", r.mean_keypoints}};
}

InferenceConfig inference_config(const RunConfig& cfg, const ThresholdMode& mode) {
    InferenceConfig ic;
    ic.mode = mode;
    ic.nms_radius = cfg.eval.nms_radius;
    ic.eps = cfg.eval.eps_px;
    ic.border = cfg.eval.border;
    return ic;
}

}  // namespace

std::unique_ptr<FeatureModel> make_teacher(const RunConfig& cfg) {
    return std::make_unique<ProceduralTeacher>(sub_seed(cfg, "teacher"));
}

TrainData make_train_data(const RunConfig& cfg) {
    const auto& s = cfg.data.synthetic;
    const auto seed = sub_seed(cfg, "data");
    return {synthetic_images(seed, "train", s.n_train, s.size.first, s.size.second),
            synthetic_images(seed, "val", s.n_val, s.size.first, s.size.second)};
}

std::vector<SequencePair> make_eval_pairs(const RunConfig& cfg, std::ostream* warn) {
    if (cfg.data.hpatches_dir) return hpatches_load(*cfg.data.hpatches_dir, warn).pairs;
    const auto& s = cfg.data.synthetic;
    return synthetic_benchmark(sub_seed(cfg, "bench"), s.bench_pairs, s.bench_size.first, s.bench_size.second);
}

std::vector<Tensor> make_calibration_stream(const RunConfig& cfg) {
    const auto& s = cfg.data.synthetic;
    const auto images = synthetic_images(sub_seed(cfg, "calibration"), "calib",
                                         cfg.quant.calibration_batches * cfg.train.batch, s.size.first, s.size.second);
    std::vector<Tensor> stream;
    for (std::size_t b = 0; b < cfg.quant.calibration_batches; ++b) {
        std::vector<Tensor> batch(images.begin() + static_cast<std::ptrdiff_t>(b * cfg.train.batch),
                                  images.begin() + static_cast<std::ptrdiff_t>((b + 1) * cfg.train.batch));
        stream.push_back(stack_batch(batch));
    }
    return stream;
}

std::string eval_report_json(const EvalReport& r, int indent) {
    json pairs = json::array();
    for (const auto& p : r.pairs) {
        pairs.push_back({{"name", p.name},
                         {"kind", to_string(p.kind)},
                         {"repeatability", p.repeatability},
                         {"correctness", p.correctness},
                         {"keypoints_a", p.keypoints_a},
                         {"keypoints_b", p.keypoints_b},
                         {"matches", p.matches}});
    }
    json j = metrics_json(r);
    j["mode"] = r.mode;
    j["pairs"] = pairs;
    return j.dump(indent) + "\n";
}

std::string quant_manifest_json(const QuantPlan& plan, int indent) {
    json j = json::object();
    auto put = [&](const std::string& name, const QuantParams& qp, const char* role) {
        j[name] = {{"role", role},
                   {"scheme", to_string(qp.scheme)},
                   {"scale", qp.scale},
                   {"zero_point", qp.zero_point},
                   {"qmin", qp.qmin},
                   {"qmax", qp.qmax}};
    };
    for (const auto& [n, qp] : plan.activations) put(n, qp, "activation");
    for (const auto& [n, qp] : plan.weights) put(n, qp, "weight");
    return j.dump(indent) + "\n";
}

double relative_change_pct(double reference, double value) {
    if (reference == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return (value - reference) / reference * 100.0;
}

TrainOutcome cmd_train(const RunConfig& cfg) {
    const auto dir = out_dir(cfg);
    TrainOutcome o;
    o.model_path = dir / (std::string("model") + kModelFileExtension);
    o.metrics_path = dir / "train_metrics.jsonl";
    o.summary_path = dir / "train_summary.json";

    auto teacher = make_teacher(cfg);
    const auto data = make_train_data(cfg);
    ModelGraph model = build_student(cfg.model, sub_seed(cfg, "student"));

    std::ofstream log(o.metrics_path, std::ios::binary);
    if (!log) throw IoError("cannot write " + o.metrics_path.string());
    o.history = train_student(model, *teacher, data, cfg.train, cfg.loss, sub_seed(cfg, "train"),
                              [&](const EpochMetrics& m) {
                                  json j = {{"epoch", m.epoch},       {"train_loss", m.train_loss},
                                            {"val_det", m.val_det},   {"val_desc", m.val_desc},
                                            {"val_total", m.val_total}, {"lr", m.lr},
                                            {"s_det", m.s_det},       {"s_desc", m.s_desc}};
                                  log << j.dump() << '\n';
                                  log.flush();
                              });
    save_model(o.model_path, model);

    const auto val = label_batches(*teacher, data.val, cfg.train.batch, cfg.loss);
    std::tie(o.final_val_det, o.final_val_desc) = validation_losses(model, val, cfg.loss);
    json summary = {{"epochs", o.history.size()},
                    {"param_count", model.parameter_count()},
                    {"final_val_det", o.final_val_det},
                    {"final_val_desc", o.final_val_desc},
                    {"final_val_total", o.final_val_det + o.final_val_desc}};
    write_text(o.summary_path, summary.dump(2) + "\n");
    return o;
}

SearchOutcome cmd_search(const RunConfig& cfg) {
    const auto dir = out_dir(cfg);
    SearchOutcome o;
    o.spec_path = dir / "search_spec.json";
    o.log_path = dir / "search_log.jsonl";
    o.model_path = dir / (std::string("search_model") + kModelFileExtension);

    auto teacher = make_teacher(cfg);
    const auto data = make_train_data(cfg);
    std::vector<std::vector<BlockChoice>> candidates(cfg.nas.slots, cfg.nas.candidates);
    for (auto& slot : candidates)
        for (auto& c : slot) c.channels = cfg.model.stem_channels;
    SuperNet net = build_supernet(cfg.model, candidates, sub_seed(cfg, "supernet"));

    SearchOptions opts;
    opts.epochs = cfg.nas.epochs;
    opts.batch = cfg.train.batch;
    opts.lr = cfg.train.lr;
    opts.weight_decay = cfg.train.weight_decay;
    opts.arch_lr = cfg.nas.arch_lr;
    opts.clip = cfg.train.clip;
    opts.schedule = cfg.nas.schedule;

    std::ofstream log(o.log_path, std::ios::binary);
    if (!log) throw IoError("cannot write " + o.log_path.string());
    o.result = search(net, *teacher, data, opts, cfg.loss, sub_seed(cfg, "search"), [&](const SearchEpoch& e) {
        json j = {{"epoch", e.epoch}, {"tau", e.tau}, {"logits", e.logits}, {"train_loss", e.train_loss},
                  {"val_loss", e.val_loss}};
        log << j.dump() << '\n';
        log.flush();
    });
    write_text(o.spec_path, arch_spec_to_json(o.result.spec));
    ModelGraph chosen = discretize(net);
    save_model(o.model_path, chosen);
    return o;
}

QuantizeOutcome cmd_quantize(const RunConfig& cfg, const fs::path& model_path) {
    ModelGraph model = load_model(model_path);
    const auto dir = out_dir(cfg);
    QuantizeOutcome o;
    o.manifest_path = dir / "qparams.json";
    o.report_path = dir / "quant_report.json";

    const auto cal = calibrate(model, make_calibration_stream(cfg));
    const QuantPlan plan = derive_plan(cal, cfg.quant.percentile.has_value(),
                                       cfg.quant.percentile.value_or(kDefaultPercentile), cfg.quant.scheme);
    write_text(o.manifest_path, quant_manifest_json(plan));
    o.ranges = dynamic_range_report(cal, plan);

    const auto pairs = make_eval_pairs(cfg, &std::cerr);
    json modes = json::array();
    for (const auto& mode : cfg.eval.threshold_modes) {
        const auto ic = inference_config(cfg, mode);
        auto f = run_benchmark(model, pairs, ic);
        auto q = run_benchmark(model, pairs, ic, [&plan] { return std::make_unique<FakeQuantContext>(plan); });
        json delta = {{"rep_i", number_or_null(relative_change_pct(f.rep_i, q.rep_i))},
                      {"rep_v", number_or_null(relative_change_pct(f.rep_v, q.rep_v))},
                      {"cor_i", number_or_null(relative_change_pct(f.cor_i, q.cor_i))},
                      {"cor_v", number_or_null(relative_change_pct(f.cor_v, q.cor_v))}};
        modes.push_back({{"mode", f.mode}, {"float", metrics_json(f)}, {"int8", metrics_json(q)}, {"delta_pct", delta}});
        o.float_reports.push_back(std::move(f));
        o.quant_reports.push_back(std::move(q));
    }
    json layers = json::array();
    for (const auto& l : o.ranges.layers) {
        layers.push_back({{"name", l.name},
                          {"range_width", l.range_width},
                          {"cross_channel_variance", l.cross_channel_variance},
                          {"scale", l.scale},
                          {"saturation_fraction", l.saturation_fraction}});
    }
    json report = {{"weight_scheme", to_string(cfg.quant.scheme)},
                   {"activation_scheme", to_string(QuantScheme::AffinePerTensor)},
                   {"calibration", cfg.quant.percentile ? "percentile" : "minmax"},
                   {"modes", modes},
                   {"dynamic_range",
                    {{"layers", layers}, {"mean_cross_channel_variance", o.ranges.mean_cross_channel_variance}}}};
    write_text(o.report_path, report.dump(2) + "\n");
    return o;
}

std::vector<EvalReport> cmd_eval(const RunConfig& cfg, const fs::path& model_path) {
    ModelGraph model = load_model(model_path);
    const auto dir = out_dir(cfg);
    const auto pairs = make_eval_pairs(cfg, &std::cerr);
    std::vector<EvalReport> out;
    for (const auto& mode : cfg.eval.threshold_modes) {
        auto r = run_benchmark(model, pairs, inference_config(cfg, mode));
        write_text(dir / ("eval_" + r.mode + ".json"), eval_report_json(r));
        write_text(dir / ("eval_" + r.mode + ".csv"), eval_report_csv(r));
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<MemoryReport> cmd_report(const RunConfig& cfg, const fs::path& model_path) {
    ModelGraph model = load_model(model_path);
    const auto dir = out_dir(cfg);
    const Shape input{1, cfg.model.input_channels, cfg.data.synthetic.bench_size.first,
                      cfg.data.synthetic.bench_size.second};
    std::vector<MemoryReport> out;
    for (std::uint64_t bytes : {4u, 1u}) {
        auto r = memory_report(model, input, bytes);
        write_text(dir / (bytes == 4 ? "memory_float32.json" : "memory_int8.json"), memory_report_json(r));
        out.push_back(std::move(r));
    }
    return out;
}

Extraction cmd_extract(const RunConfig& cfg, const fs::path& model_path, const fs::path& image_path,
                       const fs::path& prefix) {
    ModelGraph model = load_model(model_path);
    const Tensor image = image_to_gray(read_pnm(image_path));
    const std::size_t s = model.downsample();
    if (image.dim(2) % s != 0 || image.dim(3) % s != 0) {
        throw FormatError(image_path.string() + ": height and width must be multiples of " + std::to_string(s));
    }
    const auto maps = model.infer(image);
    const ThresholdMode mode =
        cfg.eval.threshold_modes.empty() ? ThresholdMode::adaptive_mode() : cfg.eval.threshold_modes.front();
    auto e = extract(maps.heatmap, maps.descmap, AdaptiveState{}, mode, cfg.eval.nms_radius);
    if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
    write_keypoint_dump(prefix, e);
    return e;
}

void cmd_gen_data(const RunConfig& cfg, const fs::path& dir, std::size_t count) {
    const auto& s = cfg.data.synthetic;
    export_hpatches(dir, synthetic_corpus(sub_seed(cfg, "gen-data"), count, s.bench_size.first, s.bench_size.second));
}

}  // namespace featherpoint

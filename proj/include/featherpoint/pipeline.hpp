#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "featherpoint/config.hpp"
#include "featherpoint/deploy.hpp"
#include "featherpoint/metrics.hpp"
#include "featherpoint/quant.hpp"
#include "featherpoint/teacher.hpp"

namespace featherpoint {

/// The frozen teacher every command distills from, derived from the run seed.
std::unique_ptr<FeatureModel> make_teacher(const RunConfig& cfg);
/// Synthetic training and validation images for the run.
TrainData make_train_data(const RunConfig& cfg);
/// Evaluation pairs: the HPatches tree when configured, else synthetic pairs.
std::vector<SequencePair> make_eval_pairs(const RunConfig& cfg, std::ostream* warn = nullptr);
/// Calibration batches drawn from their own synthetic stream.
std::vector<Tensor> make_calibration_stream(const RunConfig& cfg);

std::string eval_report_json(const EvalReport& r, int indent = 2);
std::string quant_manifest_json(const QuantPlan& plan, int indent = 2);

struct TrainOutcome {
    std::filesystem::path model_path, metrics_path, summary_path;
    std::vector<EpochMetrics> history;
    double final_val_det = 0.0, final_val_desc = 0.0;
};
/// Writes <out>/model.fpt.json, <out>/train_metrics.jsonl (one line per
/// epoch) and <out>/train_summary.json.
TrainOutcome cmd_train(const RunConfig& cfg);

struct SearchOutcome {
    std::filesystem::path spec_path, log_path, model_path;
    SearchResult result;
};
/// Writes <out>/search_spec.json, <out>/search_log.jsonl and the discretized
/// network as <out>/search_model.fpt.json.
SearchOutcome cmd_search(const RunConfig& cfg);

struct QuantizeOutcome {
    std::filesystem::path manifest_path, report_path;
    std::vector<EvalReport> float_reports, quant_reports;
    QuantReport ranges;
};
/// Writes <out>/qparams.json and <out>/quant_report.json with the relative
/// change (percent) of every metric and the dynamic-range report.
QuantizeOutcome cmd_quantize(const RunConfig& cfg, const std::filesystem::path& model_path);

/// One <out>/eval_<mode>.json per configured threshold mode.
std::vector<EvalReport> cmd_eval(const RunConfig& cfg, const std::filesystem::path& model_path);

/// <out>/memory_float32.json and <out>/memory_int8.json for an input of
/// the benchmark size.
std::vector<MemoryReport> cmd_report(const RunConfig& cfg, const std::filesystem::path& model_path);

/// Keypoints and descriptors of one PGM/PPM image under the first configured
/// threshold mode, written as <prefix>.csv and <prefix>.desc.
Extraction cmd_extract(const RunConfig& cfg, const std::filesystem::path& model_path,
                       const std::filesystem::path& image_path, const std::filesystem::path& prefix);

/// Writes `count` synthetic sequences in HPatches layout under `dir`.
void cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& dir, std::size_t count);

/// Relative change in percent; NaN when the reference is zero.
double relative_change_pct(double reference, double value);

}  // namespace featherpoint

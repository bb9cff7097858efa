#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "featherpoint/keypoints.hpp"
#include "featherpoint/metrics.hpp"
#include "featherpoint/model.hpp"
#include "featherpoint/nas.hpp"
#include "featherpoint/quant.hpp"
#include "featherpoint/train.hpp"

namespace featherpoint {

inline constexpr std::size_t kDefaultTrainImages = 64;
inline constexpr std::size_t kDefaultValImages = 16;
inline constexpr std::size_t kDefaultTrainSize = 64;
inline constexpr std::size_t kDefaultBenchmarkPairs = 10;
inline constexpr std::size_t kDefaultCalibrationBatches = 4;
inline constexpr std::size_t kDefaultSearchEpochs = 20;

struct SyntheticDataConfig {
    std::size_t n_train = kDefaultTrainImages;
    std::size_t n_val = kDefaultValImages;
    /// Training image size (height, width).
    std::pair<std::size_t, std::size_t> size{kDefaultTrainSize, kDefaultTrainSize};
    std::size_t bench_pairs = kDefaultBenchmarkPairs;
    std::pair<std::size_t, std::size_t> bench_size{kBenchmarkHeight, kBenchmarkWidth};
};

struct DataConfig {
    SyntheticDataConfig synthetic;
    /// When set, evaluation uses this HPatches tree instead of synthetic pairs.
    std::optional<std::string> hpatches_dir;
};

struct NasConfig {
    std::size_t slots = kDefaultSlots;
    std::vector<BlockChoice> candidates = default_candidates(kDefaultBlockChannels);
    AnnealSchedule schedule;
    std::size_t epochs = kDefaultSearchEpochs;
    double arch_lr = kDefaultArchLearningRate;
};

struct QuantConfig {
    /// Weight scheme; activations are always affine per tensor.
    QuantScheme scheme = QuantScheme::SymmetricPerChannel;
    std::size_t calibration_batches = kDefaultCalibrationBatches;
    /// Percentile calibration of activation ranges when set, else min/max.
    std::optional<double> percentile;
};

struct EvalConfig {
    double eps_px = kDefaultEpsPx;
    std::vector<ThresholdMode> threshold_modes = {ThresholdMode::adaptive_mode(), ThresholdMode::fixed_at(0.005),
                                                  ThresholdMode::fixed_at(0.1), ThresholdMode::fixed_at(0.3)};
    std::size_t nms_radius = kDefaultNmsRadius;
    std::size_t border = kDefaultBorder;
};

struct RunConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ArchSpec model;
    TrainConfig train;
    LossConfig loss;
    NasConfig nas;
    QuantConfig quant;
    EvalConfig eval;
    std::string out_dir = "out";
};

/// "adaptive" or "fixed(<v>)".
std::string threshold_mode_to_string(const ThresholdMode& m);
ThresholdMode threshold_mode_from_string(const std::string& s);

/// Full JSON rendering, every field present.
std::string config_to_json(const RunConfig& cfg, int indent = 2);
/// Missing keys keep their defaults. Unknown keys, wrong types and invalid
/// values raise ConfigError whose message starts with the dotted key path.
RunConfig config_from_json(const std::string& text);
/// Applies `key=value` overrides (dotted paths) to a JSON document before it
/// is parsed. The value is read as JSON when it parses, else as a string.
std::string apply_overrides(const std::string& text, const std::vector<std::pair<std::string, std::string>>& overrides);

/// Reads a config file (IoError if missing) and applies overrides.
RunConfig load_config(const std::optional<std::filesystem::path>& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides = {});

}  // namespace featherpoint

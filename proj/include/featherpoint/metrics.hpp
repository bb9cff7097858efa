#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "featherpoint/geometry.hpp"
#include "featherpoint/keypoints.hpp"
#include "featherpoint/model.hpp"
#include "featherpoint/synth.hpp"

namespace featherpoint {

inline constexpr double kDefaultEpsPx = 3.0;
inline constexpr std::size_t kDefaultBorder = 8;
inline constexpr std::size_t kBenchmarkHeight = 192;
inline constexpr std::size_t kBenchmarkWidth = 256;

struct ImageSize {
    std::size_t height = 0, width = 0;
};

/// Keypoints of A whose warp lands inside B (at least `border` px from every
/// edge) and which themselves sit at least `border` px inside A.
std::vector<Keypoint> covisible(const std::vector<Keypoint>& kps, const Homography& h, ImageSize own, ImageSize other,
                                std::size_t border);

/// (repeated_a + repeated_b) / (n_a + n_b) over co-visible keypoints; 0 when
/// both sides are empty.
double repeatability(const std::vector<Keypoint>& kps_a, const std::vector<Keypoint>& kps_b, const Homography& h_ab,
                     ImageSize size_a, ImageSize size_b, double eps = kDefaultEpsPx,
                     std::size_t border = kDefaultBorder);

/// Fraction of matches with ||warp(H, a) - b|| < eps; 0 for no matches.
double correctness(const MatchSet& matches, const std::vector<Keypoint>& kps_a, const std::vector<Keypoint>& kps_b,
                   const Homography& h_ab, double eps = kDefaultEpsPx);

struct InferenceConfig {
    ThresholdMode mode = ThresholdMode::adaptive_mode();
    AdaptiveState adaptive;  // template; reset for every pair
    std::size_t nms_radius = kDefaultNmsRadius;
    double eps = kDefaultEpsPx;
    std::size_t border = kDefaultBorder;
};
std::string mode_label(const ThresholdMode& m);

struct PairResult {
    std::string name;
    PairKind kind = PairKind::Viewpoint;
    double repeatability = 0.0;
    double correctness = 0.0;
    std::size_t keypoints_a = 0, keypoints_b = 0, matches = 0;
};

struct EvalReport {
    std::string mode;
    double rep_i = 0.0, rep_v = 0.0, cor_i = 0.0, cor_v = 0.0;
    std::vector<PairResult> pairs;
    double mean_keypoints = 0.0;
    /// Names of the pipeline stages executed, in order, for every pair.
    std::vector<std::string> stage_trace;
};

/// Drops keypoints closer than `border` px to the image edge.
std::vector<Keypoint> inside_border(const std::vector<Keypoint>& kps, ImageSize size, std::size_t border);

/// Metrics for one pair from already extracted keypoints/descriptors.
PairResult evaluate_pair(const SequencePair& pair, const Extraction& a, const Extraction& b, const InferenceConfig& cfg,
                         std::vector<std::string>* trace = nullptr);

/// Extract -> match -> metrics for every pair, each pair starting from a
/// fresh adaptive state (A first, then B). `ctx_factory` builds the forward
/// context (plain float when empty); it is the only thing that differs
/// between float and fake-quant runs.
EvalReport run_benchmark(FeatureModel& model, const std::vector<SequencePair>& pairs, const InferenceConfig& cfg,
                         const std::function<std::unique_ptr<ForwardContext>()>& ctx_factory = {});

/// `count` seeded synthetic pairs alternating illumination / viewpoint.
std::vector<SequencePair> synthetic_benchmark(std::uint64_t seed, std::size_t count,
                                              std::size_t height = kBenchmarkHeight,
                                              std::size_t width = kBenchmarkWidth);

struct DimAnalysis {
    std::size_t dim = 0;
    double theoretical_std = 0.0;  // 1/sqrt(D)
    double measured_std = 0.0;
    double ratio = 0.0;
    /// Plain std over all components after subtracting the frame mean.
    double component_std = 0.0;
};

/// Theoretical 1/sqrt(D).
double theoretical_std(std::size_t dim);

/// measured_std is the mean, over the principal axes of the frame's
/// descriptor covariance (descriptors mean-centred within the frame), of the
/// standard deviation along each axis. For isotropic unit vectors every axis
/// carries 1/D of the variance, giving 1/sqrt(D); descriptors confined to a
/// k-dimensional subspace give sqrt(k)/D. `descriptors` is row-major (n x D).
DimAnalysis descriptor_std_analysis(const std::vector<double>& descriptors, std::size_t dim);
/// Same over every location of a (1,D,h,w) descriptor map.
DimAnalysis descriptor_std_analysis(const Tensor& descmap);

}  // namespace featherpoint

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "featherpoint/tensor.hpp"

namespace featherpoint {

inline constexpr std::size_t kDefaultNmsRadius = 4;
inline constexpr double kTeacherThreshold = 0.005;
inline constexpr double kDefaultTopFraction = 0.005;
inline constexpr double kDefaultThresholdMultiplier = 0.8;
inline constexpr double kDefaultEmaDecay = 0.9;
inline constexpr double kFixedThresholds[] = {0.005, 0.1, 0.3};

struct Keypoint {
    int x = 0, y = 0;
    double score = 0.0;
    bool operator==(const Keypoint&) const = default;
};

/// Running state of the adaptive detection threshold.
struct AdaptiveState {
    double ema = 0.0;
    double decay = kDefaultEmaDecay;  // rho
    double top_fraction = kDefaultTopFraction;
    double multiplier = kDefaultThresholdMultiplier;  // kappa
    /// When false the next update seeds the EMA with the frame statistic.
    bool initialized = false;
};

struct ThresholdResult {
    double threshold;
    AdaptiveState state;
};

struct Match {
    std::size_t index_a, index_b;
    double distance;
    bool operator==(const Match&) const = default;
};
using MatchSet = std::vector<Match>;

/// Descriptors as a row-major (count x dim) matrix.
struct DescriptorSet {
    std::size_t count = 0, dim = 0;
    std::vector<double> values;
    std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
};

/// A pixel survives when it is strictly positive and beats every other pixel
/// within Chebyshev distance `radius` under the order (value descending, then
/// (y, x) ascending). Survivors are returned in raster order.
/// Runs in O(H*W*r) using separable window maxima over that order.
std::vector<Keypoint> nms(const Tensor& heatmap, std::size_t radius = kDefaultNmsRadius);

/// Direct O(H*W*r^2) scan with the same survival rule.
std::vector<Keypoint> nms_bruteforce(const Tensor& heatmap, std::size_t radius = kDefaultNmsRadius);

/// m = mean of the top ceil(top_fraction*H*W) values; ema' = rho*ema + (1-rho)*m
/// (ema' = m on the first update); threshold = kappa * ema'.
ThresholdResult adaptive_threshold(const AdaptiveState& state, const Tensor& heatmap);

/// How keypoints are cut after NMS.
struct ThresholdMode {
    bool adaptive = true;
    double fixed = 0.0;
    static ThresholdMode adaptive_mode() { return {true, 0.0}; }
    static ThresholdMode fixed_at(double v) { return {false, v}; }
};

struct Extraction {
    std::vector<Keypoint> keypoints;
    DescriptorSet descriptors;
    AdaptiveState state;
    double threshold = 0.0;
};

/// Bilinear sample of a (1,D,h,w) descriptor map at grid coordinates (u, v),
/// clamped to the grid, then L2-normalized.
std::vector<double> sample_descriptor(const Tensor& descmap, double u, double v);

/// NMS, threshold, then one descriptor per keypoint sampled at (x/s, y/s)
/// where s = heatmap width / descmap width.
Extraction extract(const Tensor& heatmap, const Tensor& descmap, const AdaptiveState& state, ThresholdMode mode,
                   std::size_t nms_radius = kDefaultNmsRadius);

/// Mutual nearest neighbours under L2, computed through d^2 = 2 - 2 cos.
/// Ties go to the lowest index. Pairs are ordered by index_a.
MatchSet match(const DescriptorSet& a, const DescriptorSet& b);

/// Double-argmin oracle computing explicit Euclidean distances.
MatchSet match_bruteforce(const DescriptorSet& a, const DescriptorSet& b);

}  // namespace featherpoint

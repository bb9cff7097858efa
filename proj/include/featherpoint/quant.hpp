#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "featherpoint/model.hpp"

namespace featherpoint {

enum class QuantScheme { SymmetricPerTensor, AffinePerTensor, SymmetricPerChannel };
std::string to_string(QuantScheme s);
QuantScheme quant_scheme_from_string(const std::string& s);

inline constexpr std::size_t kHistogramBins = 2048;
inline constexpr double kDefaultPercentile = 99.9;

/// Scale(s) and zero point of one quantized tensor. Per-channel schemes hold
/// one scale per slice of axis 0.
struct QuantParams {
    QuantScheme scheme = QuantScheme::AffinePerTensor;
    std::vector<double> scale{1.0};
    std::int32_t zero_point = 0;
    std::int32_t qmin = -128, qmax = 127;

    /// Throws ValueError if the invariants of the scheme do not hold.
    void validate() const;
    bool operator==(const QuantParams&) const = default;
};

/// Affine per-tensor parameters covering [lo, hi] (extended to include 0).
QuantParams affine_params(double lo, double hi);
/// Symmetric per-tensor parameters covering [-max_abs, max_abs].
QuantParams symmetric_params(double max_abs);
/// Symmetric per-channel parameters from the per-slice max |w| of a weight tensor.
QuantParams per_channel_params(const Tensor& w);

/// Round half away from zero.
double round_half_away(double x);

/// q = clamp(round(x / scale) + zero_point, qmin, qmax).
std::vector<std::int32_t> quantize_tensor(const Tensor& x, const QuantParams& qp);
/// (q - zero_point) * scale, with the shape of the original tensor.
Tensor dequantize(const std::vector<std::int32_t>& q, const Shape& shape, const QuantParams& qp);
/// dequantize(quantize(x)) without tape participation.
Tensor fake_quant(const Tensor& x, const QuantParams& qp);

/// Running statistics of one tensor boundary.
struct RangeStats {
    double min = 0.0, max = 0.0;
    std::uint64_t count = 0;
    /// Per-channel (axis 1 for activations, axis 0 for weights) min and max.
    std::vector<double> channel_min, channel_max;
    /// Histogram over [hist_lo, hist_hi]; empty until a second pass fills it.
    std::vector<double> histogram;
    double hist_lo = 0.0, hist_hi = 0.0;
    std::uint64_t hist_count = 0;

    /// Folds one tensor into min/max and the per-channel ranges.
    void observe(const Tensor& t, std::size_t channel_axis);
    /// Adds a tensor to the histogram (fixed edges, values clamped into range).
    void observe_histogram(const Tensor& t);
    void init_histogram(std::size_t bins = kHistogramBins);
    /// Associative, commutative merge of two shards over the same edges.
    void merge(const RangeStats& other);
    /// [lo, hi] at the (100 - p)th and pth percentiles of the histogram mass.
    std::pair<double, double> percentile_range(double percentile) const;
};

struct Calibration {
    std::map<std::string, RangeStats> activations;
    std::map<std::string, RangeStats> weights;
};

/// Two passes over the stream with normalization folded (eval phase): the
/// first gathers min/max at every activation boundary and weight tensor, the
/// second fills histograms over those ranges. Throws on an empty stream.
Calibration calibrate(ModelGraph& model, const std::vector<Tensor>& stream);

/// Everything fake quantization needs.
struct QuantPlan {
    std::map<std::string, QuantParams> activations;
    std::map<std::string, QuantParams> weights;
};

/// Activations: affine per-tensor from min/max (or the percentile range when
/// `use_percentile` is set). Weights: symmetric per-channel, or one
/// symmetric scale per tensor.
QuantPlan derive_plan(const Calibration& cal, bool use_percentile = false, double percentile = kDefaultPercentile,
                      QuantScheme weight_scheme = QuantScheme::SymmetricPerChannel);

/// Forward context inserting quantize-dequantize at every activation
/// boundary and on every weight. Biases stay in real arithmetic (int32
/// accumulators on hardware). Missing entries raise ValueError naming them.
class FakeQuantContext : public ForwardContext {
public:
    explicit FakeQuantContext(const QuantPlan& plan);
    Tensor activation(const std::string& name, const Tensor& t) override;
    Tensor weight(const std::string& name, const Tensor& w) override;

private:
    const QuantPlan& plan_;
};

FeatureMaps fake_quant_forward(ModelGraph& model, const QuantPlan& plan, const Tensor& input);

struct LayerRange {
    std::string name;
    double range_width = 0.0;
    double cross_channel_variance = 0.0;
    double scale = 0.0;
    double saturation_fraction = 0.0;
};

struct QuantReport {
    std::vector<LayerRange> layers;
    /// Mean cross-channel variance over multi-channel activation boundaries.
    double mean_cross_channel_variance = 0.0;
};

/// Population variance of per-channel (max - min).
double cross_channel_variance(const RangeStats& s);
/// Histogram mass outside the representable interval [(qmin-zp-1/2)*s, (qmax-zp+1/2)*s].
double saturation_fraction(const RangeStats& s, const QuantParams& qp);

QuantReport dynamic_range_report(const Calibration& cal, const QuantPlan& plan);

}  // namespace featherpoint

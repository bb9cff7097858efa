#include "featherpoint/quant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "featherpoint/error.hpp"

namespace featherpoint {

std::string to_string(QuantScheme s) {
    switch (s) {
        case QuantScheme::SymmetricPerTensor: return "symmetric_per_tensor";
        case QuantScheme::AffinePerTensor: return "affine_per_tensor";
        case QuantScheme::SymmetricPerChannel: return "symmetric_per_channel";
    }
    return "?";
}

QuantScheme quant_scheme_from_string(const std::string& s) {
    for (auto k : {QuantScheme::SymmetricPerTensor, QuantScheme::AffinePerTensor, QuantScheme::SymmetricPerChannel})
        if (to_string(k) == s) return k;
    throw ValueError("unknown quantization scheme '" + s + "'");
}

void QuantParams::validate() const {
    if (scale.empty()) throw ValueError("QuantParams: no scale");
    for (double s : scale)
        if (!(s > 0.0) || !std::isfinite(s)) throw ValueError("QuantParams: scale must be positive and finite");
    if (qmin > zero_point || zero_point > qmax) throw ValueError("QuantParams: zero_point outside [qmin, qmax]");
    if (scheme != QuantScheme::AffinePerTensor) {
        if (zero_point != 0 || qmin != -127 || qmax != 127) {
            throw ValueError("QuantParams: symmetric schemes need zero_point 0 and range [-127, 127]");
        }
    } else if (qmin != -128 || qmax != 127) {
        throw ValueError("QuantParams: affine scheme uses range [-128, 127]");
    }
    if (scheme != QuantScheme::SymmetricPerChannel && scale.size() != 1) {
        throw ValueError("QuantParams: per-tensor schemes have exactly one scale");
    }
}

double round_half_away(double x) { return std::round(x); }

QuantParams affine_params(double lo, double hi) {
    lo = std::min(lo, 0.0);
    hi = std::max(hi, 0.0);
    QuantParams qp;
    qp.scheme = QuantScheme::AffinePerTensor;
    qp.qmin = -128;
    qp.qmax = 127;
    double s = (hi - lo) / 255.0;
    if (!(s > 0.0)) s = 1.0;
    qp.scale = {s};
    const double zp = round_half_away(static_cast<double>(qp.qmin) - lo / s);
    qp.zero_point = static_cast<std::int32_t>(std::clamp(zp, static_cast<double>(qp.qmin), static_cast<double>(qp.qmax)));
    return qp;
}

QuantParams symmetric_params(double max_abs) {
    QuantParams qp;
    qp.scheme = QuantScheme::SymmetricPerTensor;
    qp.qmin = -127;
    qp.qmax = 127;
    qp.zero_point = 0;
    const double s = max_abs / 127.0;
    qp.scale = {s > 0.0 ? s : 1.0};
    return qp;
}

QuantParams per_channel_params(const Tensor& w) {
    QuantParams qp = symmetric_params(0.0);
    qp.scheme = QuantScheme::SymmetricPerChannel;
    const std::size_t C = w.dim(0), per = w.numel() / C;
    auto d = w.data();
    qp.scale.assign(C, 1.0);
    for (std::size_t c = 0; c < C; ++c) {
        double m = 0.0;
        for (std::size_t i = 0; i < per; ++i) m = std::max(m, std::abs(d[c * per + i]));
        if (m > 0.0) qp.scale[c] = m / 127.0;
    }
    return qp;
}

namespace {

std::size_t slice_size(const Shape& shape, const QuantParams& qp) {
    if (qp.scale.size() == 1) return shape_numel(shape);
    if (shape.empty() || shape[0] != qp.scale.size()) {
        throw ShapeError("per-channel QuantParams with " + std::to_string(qp.scale.size()) +
                         " scales applied to shape " + shape_str(shape));
    }
    return shape_numel(shape) / shape[0];
}

}  // namespace

std::vector<std::int32_t> quantize_tensor(const Tensor& x, const QuantParams& qp) {
    const std::size_t per = slice_size(x.shape(), qp);
    auto d = x.data();
    std::vector<std::int32_t> q(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double s = qp.scale[qp.scale.size() == 1 ? 0 : i / per];
        double v = round_half_away(d[i] / s) + static_cast<double>(qp.zero_point);
        if (std::isnan(v)) throw NumericError("quantize_tensor: NaN input");
        v = std::clamp(v, static_cast<double>(qp.qmin), static_cast<double>(qp.qmax));
        q[i] = static_cast<std::int32_t>(v);
    }
    return q;
}

Tensor dequantize(const std::vector<std::int32_t>& q, const Shape& shape, const QuantParams& qp) {
    if (q.size() != shape_numel(shape)) throw ShapeError("dequantize: value count does not match shape");
    const std::size_t per = slice_size(shape, qp);
    std::vector<double> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double s = qp.scale[qp.scale.size() == 1 ? 0 : i / per];
        out[i] = static_cast<double>(q[i] - qp.zero_point) * s;
    }
    return Tensor::from(shape, std::move(out));
}

Tensor fake_quant(const Tensor& x, const QuantParams& qp) { return dequantize(quantize_tensor(x, qp), x.shape(), qp); }

void RangeStats::observe(const Tensor& t, std::size_t axis) {
    auto d = t.data();
    if (d.empty()) return;
    const auto [mn, mx] = std::minmax_element(d.begin(), d.end());
    if (count == 0) {
        min = *mn;
        max = *mx;
    } else {
        min = std::min(min, *mn);
        max = std::max(max, *mx);
    }
    count += d.size();

    if (t.rank() <= axis) return;
    const auto& s = t.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t C = s[axis];
    if (channel_min.empty()) {
        channel_min.assign(C, std::numeric_limits<double>::infinity());
        channel_max.assign(C, -std::numeric_limits<double>::infinity());
    }
    if (channel_min.size() != C) throw ShapeError("RangeStats: channel count changed between observations");
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t c = 0; c < C; ++c) {
            const double* p = d.data() + (o * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                channel_min[c] = std::min(channel_min[c], p[i]);
                channel_max[c] = std::max(channel_max[c], p[i]);
            }
        }
}

void RangeStats::init_histogram(std::size_t bins) {
    histogram.assign(bins, 0.0);
    hist_lo = min;
    hist_hi = max;
    hist_count = 0;
}

void RangeStats::observe_histogram(const Tensor& t) {
    if (histogram.empty()) init_histogram();
    const double span = hist_hi - hist_lo;
    const std::size_t B = histogram.size();
    for (double v : t.data()) {
        std::size_t b = 0;
        if (span > 0.0) {
            const double f = std::floor((v - hist_lo) / span * static_cast<double>(B));
            b = static_cast<std::size_t>(std::clamp(f, 0.0, static_cast<double>(B - 1)));
        }
        histogram[b] += 1.0;
    }
    hist_count += t.numel();
}

void RangeStats::merge(const RangeStats& o) {
    if (o.count == 0) return;
    if (count == 0) {
        *this = o;
        return;
    }
    min = std::min(min, o.min);
    max = std::max(max, o.max);
    count += o.count;
    if (!o.channel_min.empty()) {
        if (channel_min.empty()) {
            channel_min = o.channel_min;
            channel_max = o.channel_max;
        } else {
            if (channel_min.size() != o.channel_min.size()) throw ShapeError("RangeStats::merge: channel mismatch");
            for (std::size_t c = 0; c < channel_min.size(); ++c) {
                channel_min[c] = std::min(channel_min[c], o.channel_min[c]);
                channel_max[c] = std::max(channel_max[c], o.channel_max[c]);
            }
        }
    }
    if (!o.histogram.empty()) {
        if (histogram.empty()) {
            histogram = o.histogram;
            hist_lo = o.hist_lo;
            hist_hi = o.hist_hi;
            hist_count = o.hist_count;
        } else {
            if (histogram.size() != o.histogram.size() || hist_lo != o.hist_lo || hist_hi != o.hist_hi) {
                throw ValueError("RangeStats::merge: histograms use different edges");
            }
            for (std::size_t i = 0; i < histogram.size(); ++i) histogram[i] += o.histogram[i];
            hist_count += o.hist_count;
        }
    }
}

std::pair<double, double> RangeStats::percentile_range(double percentile) const {
    if (histogram.empty() || hist_count == 0) return {min, max};
    if (!(percentile > 0.0 && percentile <= 100.0)) throw ValueError("percentile must be in (0, 100]");
    const double total = static_cast<double>(hist_count);
    const std::size_t B = histogram.size();
    const double width = (hist_hi - hist_lo) / static_cast<double>(B);
    auto quantile = [&](double q) {
        const double target = q * total;
        double acc = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            if (acc + histogram[b] >= target && histogram[b] > 0.0) {
                const double frac = (target - acc) / histogram[b];
                return hist_lo + (static_cast<double>(b) + std::clamp(frac, 0.0, 1.0)) * width;
            }
            acc += histogram[b];
        }
        return hist_hi;
    };
    const double tail = (100.0 - percentile) / 100.0;
    return {quantile(tail), quantile(1.0 - tail)};
}

namespace {

class CalibrationContext : public ForwardContext {
public:
    CalibrationContext(Calibration& cal, bool histogram_pass) : cal_(cal), hist_(histogram_pass) {
        phase = Phase::Eval;
        fold_norm = true;
    }
    Tensor activation(const std::string& name, const Tensor& t) override {
        auto& s = cal_.activations[name];
        if (hist_) {
            s.observe_histogram(t);
        } else {
            s.observe(t, 1);
        }
        return t;
    }
    Tensor weight(const std::string& name, const Tensor& w) override {
        auto& s = cal_.weights[name];
        if (hist_) {
            s.observe_histogram(w);
        } else {
            s.observe(w, 0);
        }
        return w;
    }

private:
    Calibration& cal_;
    bool hist_;
};

}  // namespace

Calibration calibrate(ModelGraph& model, const std::vector<Tensor>& stream) {
    if (stream.empty()) throw ValueError("calibrate: calibration stream is empty");
    NoGradGuard guard;
    Calibration cal;
    {
        CalibrationContext ctx(cal, false);
        for (const auto& x : stream) model.forward(x, ctx);
    }
    for (auto& [_, s] : cal.activations) s.init_histogram();
    for (auto& [_, s] : cal.weights) s.init_histogram();
    {
        CalibrationContext ctx(cal, true);
        for (const auto& x : stream) model.forward(x, ctx);
    }
    return cal;
}

QuantPlan derive_plan(const Calibration& cal, bool use_percentile, double percentile, QuantScheme weight_scheme) {
    if (weight_scheme == QuantScheme::AffinePerTensor) throw ValueError("weights use a symmetric scheme");
    QuantPlan plan;
    for (const auto& [name, s] : cal.activations) {
        const auto [lo, hi] = use_percentile ? s.percentile_range(percentile) : std::pair<double, double>{s.min, s.max};
        plan.activations[name] = affine_params(lo, hi);
    }
    for (const auto& [name, s] : cal.weights) {
        QuantParams qp = symmetric_params(0.0);
        qp.scheme = QuantScheme::SymmetricPerChannel;
        qp.scale.assign(s.channel_min.size(), 1.0);
        for (std::size_t c = 0; c < s.channel_min.size(); ++c) {
            const double m = std::max(std::abs(s.channel_min[c]), std::abs(s.channel_max[c]));
            if (m > 0.0) qp.scale[c] = m / 127.0;
        }
        if (weight_scheme == QuantScheme::SymmetricPerTensor) {
            qp = symmetric_params(*std::max_element(qp.scale.begin(), qp.scale.end()) * 127.0);
        }
        plan.weights[name] = qp;
    }
    return plan;
}

FakeQuantContext::FakeQuantContext(const QuantPlan& plan) : plan_(plan) {
    phase = Phase::Eval;
    fold_norm = true;
}

Tensor FakeQuantContext::activation(const std::string& name, const Tensor& t) {
    auto it = plan_.activations.find(name);
    if (it == plan_.activations.end()) throw ValueError("fake quantization: no qparams for activation '" + name + "'");
    return fake_quant(t, it->second);
}

Tensor FakeQuantContext::weight(const std::string& name, const Tensor& w) {
    auto it = plan_.weights.find(name);
    if (it == plan_.weights.end()) throw ValueError("fake quantization: no qparams for weight '" + name + "'");
    return fake_quant(w, it->second);
}

FeatureMaps fake_quant_forward(ModelGraph& model, const QuantPlan& plan, const Tensor& input) {
    NoGradGuard guard;
    FakeQuantContext ctx(plan);
    return model.forward(input, ctx);
}

double cross_channel_variance(const RangeStats& s) {
    const std::size_t C = s.channel_min.size();
    if (C == 0) return 0.0;
    double mean = 0.0;
    for (std::size_t c = 0; c < C; ++c) mean += s.channel_max[c] - s.channel_min[c];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        const double d = (s.channel_max[c] - s.channel_min[c]) - mean;
        var += d * d;
    }
    return var / static_cast<double>(C);
}

double saturation_fraction(const RangeStats& s, const QuantParams& qp) {
    if (s.histogram.empty() || s.hist_count == 0) return 0.0;
    const double sc = qp.scale[0];
    const double lo = (static_cast<double>(qp.qmin - qp.zero_point) - 0.5) * sc;
    const double hi = (static_cast<double>(qp.qmax - qp.zero_point) + 0.5) * sc;
    const std::size_t B = s.histogram.size();
    const double width = (s.hist_hi - s.hist_lo) / static_cast<double>(B);
    double out = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        const double centre = s.hist_lo + (static_cast<double>(b) + 0.5) * width;
        if (centre < lo || centre > hi) out += s.histogram[b];
    }
    return out / static_cast<double>(s.hist_count);
}

QuantReport dynamic_range_report(const Calibration& cal, const QuantPlan& plan) {
    QuantReport r;
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& [name, s] : cal.activations) {
        LayerRange l;
        l.name = name;
        l.range_width = s.max - s.min;
        l.cross_channel_variance = cross_channel_variance(s);
        auto it = plan.activations.find(name);
        if (it != plan.activations.end()) {
            l.scale = it->second.scale[0];
            l.saturation_fraction = saturation_fraction(s, it->second);
        }
        if (s.channel_min.size() >= 2) {
            acc += l.cross_channel_variance;
            ++n;
        }
        r.layers.push_back(l);
    }
    r.mean_cross_channel_variance = n ? acc / static_cast<double>(n) : 0.0;
    return r;
}

}  // namespace featherpoint

#include "featherpoint/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "featherpoint/error.hpp"

namespace featherpoint {

namespace {

void require_single_map(const Tensor& t, const char* what) {
    if (t.rank() != 4 || t.dim(0) != 1) {
        throw ShapeError(std::string(what) + " must have shape (1,C,H,W), got " + shape_str(t.shape()));
    }
}

}  // namespace

std::vector<Keypoint> nms(const Tensor& heatmap, std::size_t radius) {
    require_single_map(heatmap, "nms heatmap");
    if (radius < 1) throw ValueError("nms radius must be >= 1");
    const std::size_t H = heatmap.dim(2), W = heatmap.dim(3);
    auto v = heatmap.data();
    // Index i beats j: larger value, or equal value and earlier in raster order.
    auto better = [&](std::size_t i, std::size_t j) { return v[i] > v[j] || (v[i] == v[j] && i < j); };
    const long r = static_cast<long>(radius);

    std::vector<std::size_t> row_best(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t lo = static_cast<std::size_t>(std::max(0L, static_cast<long>(x) - r));
            const std::size_t hi = std::min(W - 1, x + radius);
            std::size_t best = y * W + lo;
            for (std::size_t k = lo + 1; k <= hi; ++k)
                if (better(y * W + k, best)) best = y * W + k;
            row_best[y * W + x] = best;
        }

    std::vector<Keypoint> out;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t self = y * W + x;
            if (!(v[self] > 0.0)) continue;
            const std::size_t lo = static_cast<std::size_t>(std::max(0L, static_cast<long>(y) - r));
            const std::size_t hi = std::min(H - 1, y + radius);
            std::size_t best = row_best[lo * W + x];
            for (std::size_t k = lo + 1; k <= hi; ++k)
                if (better(row_best[k * W + x], best)) best = row_best[k * W + x];
            if (best == self) out.push_back({static_cast<int>(x), static_cast<int>(y), v[self]});
        }
    return out;
}

std::vector<Keypoint> nms_bruteforce(const Tensor& heatmap, std::size_t radius) {
    require_single_map(heatmap, "nms heatmap");
    if (radius < 1) throw ValueError("nms radius must be >= 1");
    const long H = static_cast<long>(heatmap.dim(2)), W = static_cast<long>(heatmap.dim(3));
    const long r = static_cast<long>(radius);
    auto v = heatmap.data();
    std::vector<Keypoint> out;
    for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x) {
            const double s = v[y * W + x];
            if (!(s > 0.0)) continue;
            bool keep = true;
            for (long yy = y - r; yy <= y + r && keep; ++yy)
                for (long xx = x - r; xx <= x + r && keep; ++xx) {
                    if (yy < 0 || xx < 0 || yy >= H || xx >= W || (yy == y && xx == x)) continue;
                    const double o = v[yy * W + xx];
                    const bool earlier = yy < y || (yy == y && xx < x);
                    if (o > s || (o == s && earlier)) keep = false;
                }
            if (keep) out.push_back({static_cast<int>(x), static_cast<int>(y), s});
        }
    return out;
}

ThresholdResult adaptive_threshold(const AdaptiveState& state, const Tensor& heatmap) {
    auto v = heatmap.data();
    if (v.empty()) throw ShapeError("adaptive_threshold on empty heatmap");
    const double n = static_cast<double>(v.size());
    std::size_t k = static_cast<std::size_t>(std::ceil(state.top_fraction * n - 1e-9));
    k = std::clamp<std::size_t>(k, 1, v.size());
    std::vector<double> vals(v.begin(), v.end());
    std::nth_element(vals.begin(), vals.begin() + static_cast<long>(k - 1), vals.end(), std::greater<>());
    double m = 0.0;
    for (std::size_t i = 0; i < k; ++i) m += vals[i];
    m /= static_cast<double>(k);

    AdaptiveState next = state;
    next.ema = state.initialized ? state.decay * state.ema + (1.0 - state.decay) * m : m;
    next.initialized = true;
    return {state.multiplier * next.ema, next};
}

std::vector<double> sample_descriptor(const Tensor& descmap, double u, double v) {
    const std::size_t D = descmap.dim(1), h = descmap.dim(2), w = descmap.dim(3);
    u = std::clamp(u, 0.0, static_cast<double>(w - 1));
    v = std::clamp(v, 0.0, static_cast<double>(h - 1));
    const std::size_t u0 = static_cast<std::size_t>(std::floor(u)), v0 = static_cast<std::size_t>(std::floor(v));
    const std::size_t u1 = std::min(u0 + 1, w - 1), v1 = std::min(v0 + 1, h - 1);
    const double fu = u - static_cast<double>(u0), fv = v - static_cast<double>(v0);
    auto d = descmap.data();
    std::vector<double> out(D);
    double nrm = 0.0;
    for (std::size_t c = 0; c < D; ++c) {
        const double* p = d.data() + c * h * w;
        const double val = (1 - fv) * ((1 - fu) * p[v0 * w + u0] + fu * p[v0 * w + u1]) +
                           fv * ((1 - fu) * p[v1 * w + u0] + fu * p[v1 * w + u1]);
        out[c] = val;
        nrm += val * val;
    }
    nrm = std::sqrt(nrm);
    if (nrm > 0.0)
        for (auto& x : out) x /= nrm;
    return out;
}

Extraction extract(const Tensor& heatmap, const Tensor& descmap, const AdaptiveState& state, ThresholdMode mode,
                   std::size_t nms_radius) {
    require_single_map(heatmap, "extract heatmap");
    require_single_map(descmap, "extract descmap");
    if (heatmap.dim(1) != 1) throw ShapeError("extract: heatmap must have one channel");
    if (heatmap.dim(3) % descmap.dim(3) != 0 || heatmap.dim(2) % descmap.dim(2) != 0 ||
        heatmap.dim(3) / descmap.dim(3) != heatmap.dim(2) / descmap.dim(2)) {
        throw ShapeError("extract: descmap grid " + shape_str(descmap.shape()) + " is not an integer subsampling of " +
                         shape_str(heatmap.shape()));
    }
    const double s = static_cast<double>(heatmap.dim(3) / descmap.dim(3));

    Extraction ex;
    ex.state = state;
    if (mode.adaptive) {
        auto r = adaptive_threshold(state, heatmap);
        ex.threshold = r.threshold;
        ex.state = r.state;
    } else {
        ex.threshold = mode.fixed;
    }
    for (const auto& kp : nms(heatmap, nms_radius))
        if (kp.score >= ex.threshold) ex.keypoints.push_back(kp);

    ex.descriptors.count = ex.keypoints.size();
    ex.descriptors.dim = descmap.dim(1);
    ex.descriptors.values.reserve(ex.descriptors.count * ex.descriptors.dim);
    for (const auto& kp : ex.keypoints) {
        auto d = sample_descriptor(descmap, kp.x / s, kp.y / s);
        ex.descriptors.values.insert(ex.descriptors.values.end(), d.begin(), d.end());
    }
    return ex;
}

namespace {

double l2_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

void require_same_dim(const DescriptorSet& a, const DescriptorSet& b) {
    if (a.count && b.count && a.dim != b.dim) {
        throw ShapeError("match: descriptor dims differ (" + std::to_string(a.dim) + " vs " + std::to_string(b.dim) + ")");
    }
}

}  // namespace

MatchSet match(const DescriptorSet& a, const DescriptorSet& b) {
    require_same_dim(a, b);
    MatchSet out;
    if (a.count == 0 || b.count == 0) return out;
    const std::size_t D = a.dim;
    // Largest cosine == smallest distance for unit vectors.
    std::vector<double> sim(a.count * b.count);
    for (std::size_t i = 0; i < a.count; ++i) {
        const double* ai = a.values.data() + i * D;
        for (std::size_t j = 0; j < b.count; ++j) {
            const double* bj = b.values.data() + j * D;
            double s = 0.0;
            for (std::size_t k = 0; k < D; ++k) s += ai[k] * bj[k];
            sim[i * b.count + j] = s;
        }
    }
    std::vector<std::size_t> best_b(a.count), best_a(b.count, 0);
    for (std::size_t i = 0; i < a.count; ++i) {
        std::size_t bi = 0;
        for (std::size_t j = 1; j < b.count; ++j)
            if (sim[i * b.count + j] > sim[i * b.count + bi]) bi = j;
        best_b[i] = bi;
    }
    for (std::size_t j = 0; j < b.count; ++j) {
        std::size_t bj = 0;
        for (std::size_t i = 1; i < a.count; ++i)
            if (sim[i * b.count + j] > sim[bj * b.count + j]) bj = i;
        best_a[j] = bj;
    }
    for (std::size_t i = 0; i < a.count; ++i) {
        const std::size_t j = best_b[i];
        if (best_a[j] == i) out.push_back({i, j, l2_distance(a.row(i), b.row(j))});
    }
    return out;
}

MatchSet match_bruteforce(const DescriptorSet& a, const DescriptorSet& b) {
    require_same_dim(a, b);
    MatchSet out;
    if (a.count == 0 || b.count == 0) return out;
    auto argmin_b = [&](std::size_t i) {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b.count; ++j) {
            const double d = l2_distance(a.row(i), b.row(j));
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        return best;
    };
    auto argmin_a = [&](std::size_t j) {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < a.count; ++i) {
            const double d = l2_distance(a.row(i), b.row(j));
            if (d < bd) {
                bd = d;
                best = i;
            }
        }
        return best;
    };
    for (std::size_t i = 0; i < a.count; ++i) {
        const std::size_t j = argmin_b(i);
        if (argmin_a(j) == i) out.push_back({i, j, l2_distance(a.row(i), b.row(j))});
    }
    return out;
}

}  // namespace featherpoint

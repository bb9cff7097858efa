#include "featherpoint/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "featherpoint/error.hpp"

namespace featherpoint {

namespace {

bool inside(Point2 p, ImageSize s, std::size_t border) {
    const double b = static_cast<double>(border);
    return p.x >= b && p.y >= b && p.x <= static_cast<double>(s.width) - 1.0 - b &&
           p.y <= static_cast<double>(s.height) - 1.0 - b;
}

Point2 as_point(const Keypoint& k) { return {static_cast<double>(k.x), static_cast<double>(k.y)}; }

double dist(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

std::size_t count_repeated(const std::vector<Keypoint>& from, const std::vector<Keypoint>& to, const Homography& h,
                           double eps) {
    std::size_t n = 0;
    for (const auto& k : from) {
        const auto p = warp_point(h, as_point(k));
        for (const auto& q : to) {
            if (dist(p, as_point(q)) <= eps) {
                ++n;
                break;
            }
        }
    }
    return n;
}

}  // namespace

std::vector<Keypoint> inside_border(const std::vector<Keypoint>& kps, ImageSize size, std::size_t border) {
    std::vector<Keypoint> out;
    for (const auto& k : kps)
        if (inside(as_point(k), size, border)) out.push_back(k);
    return out;
}

std::vector<Keypoint> covisible(const std::vector<Keypoint>& kps, const Homography& h, ImageSize own, ImageSize other,
                                std::size_t border) {
    std::vector<Keypoint> out;
    for (const auto& k : kps) {
        if (!inside(as_point(k), own, border)) continue;
        Point2 p;
        try {
            p = warp_point(h, as_point(k));
        } catch (const ValueError&) {
            continue;
        }
        if (inside(p, other, border)) out.push_back(k);
    }
    return out;
}

double repeatability(const std::vector<Keypoint>& kps_a, const std::vector<Keypoint>& kps_b, const Homography& h_ab,
                     ImageSize size_a, ImageSize size_b, double eps, std::size_t border) {
    const Homography h_ba = h_ab.inverse();
    const auto a = covisible(kps_a, h_ab, size_a, size_b, border);
    const auto b = covisible(kps_b, h_ba, size_b, size_a, border);
    if (a.empty() && b.empty()) return 0.0;
    const std::size_t ra = count_repeated(a, b, h_ab, eps);
    const std::size_t rb = count_repeated(b, a, h_ba, eps);
    return static_cast<double>(ra + rb) / static_cast<double>(a.size() + b.size());
}

double correctness(const MatchSet& matches, const std::vector<Keypoint>& kps_a, const std::vector<Keypoint>& kps_b,
                   const Homography& h_ab, double eps) {
    if (matches.empty()) return 0.0;
    std::size_t good = 0;
    for (const auto& m : matches) {
        const auto p = warp_point(h_ab, as_point(kps_a.at(m.index_a)));
        if (dist(p, as_point(kps_b.at(m.index_b))) < eps) ++good;
    }
    return static_cast<double>(good) / static_cast<double>(matches.size());
}

std::string mode_label(const ThresholdMode& m) {
    if (m.adaptive) return "adaptive";
    std::ostringstream os;
    os << "fixed_" << m.fixed;
    return os.str();
}

namespace {

// Keeps keypoints inside the border along with their descriptor rows.
Extraction restrict_to_border(const Extraction& e, ImageSize size, std::size_t border) {
    Extraction out;
    out.state = e.state;
    out.threshold = e.threshold;
    out.descriptors.dim = e.descriptors.dim;
    for (std::size_t i = 0; i < e.keypoints.size(); ++i) {
        if (!inside(as_point(e.keypoints[i]), size, border)) continue;
        out.keypoints.push_back(e.keypoints[i]);
        auto row = e.descriptors.row(i);
        out.descriptors.values.insert(out.descriptors.values.end(), row.begin(), row.end());
    }
    out.descriptors.count = out.keypoints.size();
    return out;
}

ImageSize size_of(const Tensor& t) { return {t.dim(2), t.dim(3)}; }

Tensor crop_to_multiple(const Tensor& img, std::size_t m) {
    const std::size_t H = img.dim(2) / m * m, W = img.dim(3) / m * m;
    if (H == img.dim(2) && W == img.dim(3)) return img;
    if (H == 0 || W == 0) throw ShapeError("image smaller than the model stride: " + shape_str(img.shape()));
    std::vector<double> out(H * W);
    auto d = img.data();
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) out[y * W + x] = d[y * img.dim(3) + x];
    return Tensor::from(Shape{1, 1, H, W}, std::move(out));
}

}  // namespace

PairResult evaluate_pair(const SequencePair& pair, const Extraction& ea, const Extraction& eb,
                         const InferenceConfig& cfg, std::vector<std::string>* trace) {
    const ImageSize sa = size_of(pair.image_a), sb = size_of(pair.image_b);
    const auto a = restrict_to_border(ea, sa, cfg.border);
    const auto b = restrict_to_border(eb, sb, cfg.border);
    if (trace) trace->push_back("match");
    const auto matches = match(a.descriptors, b.descriptors);
    if (trace) trace->push_back("metrics");
    PairResult r;
    r.name = pair.name;
    r.kind = pair.kind;
    r.repeatability = repeatability(a.keypoints, b.keypoints, pair.h_ab, sa, sb, cfg.eps, cfg.border);
    r.correctness = correctness(matches, a.keypoints, b.keypoints, pair.h_ab, cfg.eps);
    r.keypoints_a = a.keypoints.size();
    r.keypoints_b = b.keypoints.size();
    r.matches = matches.size();
    return r;
}

EvalReport run_benchmark(FeatureModel& model, const std::vector<SequencePair>& pairs, const InferenceConfig& cfg,
                         const std::function<std::unique_ptr<ForwardContext>()>& ctx_factory) {
    if (pairs.empty()) throw ValueError("run_benchmark: no pairs");
    NoGradGuard guard;
    EvalReport rep;
    rep.mode = mode_label(cfg.mode);
    double ri = 0, rv = 0, ci = 0, cv = 0, kp = 0;
    std::size_t ni = 0, nv = 0;
    for (const auto& original : pairs) {
        SequencePair pair = original;
        pair.image_a = crop_to_multiple(original.image_a, model.downsample());
        pair.image_b = crop_to_multiple(original.image_b, model.downsample());

        auto forward = [&](const Tensor& img) {
            rep.stage_trace.push_back("forward");
            std::unique_ptr<ForwardContext> ctx = ctx_factory ? ctx_factory() : std::make_unique<ForwardContext>();
            ctx->phase = Phase::Eval;
            return model.forward(img, *ctx);
        };
        AdaptiveState state = cfg.adaptive;
        state.initialized = false;
        state.ema = 0.0;
        auto ma = forward(pair.image_a);
        rep.stage_trace.push_back("extract");
        auto ea = extract(ma.heatmap, ma.descmap, state, cfg.mode, cfg.nms_radius);
        auto mb = forward(pair.image_b);
        rep.stage_trace.push_back("extract");
        auto eb = extract(mb.heatmap, mb.descmap, ea.state, cfg.mode, cfg.nms_radius);
        auto r = evaluate_pair(pair, ea, eb, cfg, &rep.stage_trace);
        kp += static_cast<double>(r.keypoints_a + r.keypoints_b) / 2.0;
        if (r.kind == PairKind::Illumination) {
            ri += r.repeatability;
            ci += r.correctness;
            ++ni;
        } else {
            rv += r.repeatability;
            cv += r.correctness;
            ++nv;
        }
        rep.pairs.push_back(r);
    }
    if (ni) {
        rep.rep_i = ri / static_cast<double>(ni);
        rep.cor_i = ci / static_cast<double>(ni);
    }
    if (nv) {
        rep.rep_v = rv / static_cast<double>(nv);
        rep.cor_v = cv / static_cast<double>(nv);
    }
    rep.mean_keypoints = kp / static_cast<double>(pairs.size());
    return rep;
}

std::vector<SequencePair> synthetic_benchmark(std::uint64_t seed, std::size_t count, std::size_t height,
                                              std::size_t width) {
    std::vector<SequencePair> out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto kind = i % 2 == 0 ? PairKind::Illumination : PairKind::Viewpoint;
        out.push_back(generate_pair(Rng::derive(seed, "bench." + std::to_string(i)).next_u64(), kind, height, width));
    }
    return out;
}

double theoretical_std(std::size_t dim) {
    if (dim == 0) throw ValueError("descriptor dimension must be positive");
    return 1.0 / std::sqrt(static_cast<double>(dim));
}

DimAnalysis descriptor_std_analysis(const std::vector<double>& desc, std::size_t D) {
    if (D == 0 || desc.size() % D != 0 || desc.empty()) {
        throw ShapeError("descriptor_std_analysis: data size is not a positive multiple of D");
    }
    const std::size_t n = desc.size() / D;
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(desc.data(),
                                                                                                static_cast<long>(n),
                                                                                                static_cast<long>(D));
    Eigen::RowVectorXd mu = X.colwise().mean();
    Eigen::MatrixXd C = X.rowwise() - mu;
    Eigen::MatrixXd cov = (C.transpose() * C) / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
    double acc = 0.0;
    for (long i = 0; i < es.eigenvalues().size(); ++i) acc += std::sqrt(std::max(0.0, es.eigenvalues()[i]));

    double m = 0.0;
    for (double v : desc) m += v;
    m /= static_cast<double>(desc.size());
    double var = 0.0;
    for (double v : desc) var += (v - m) * (v - m);
    var /= static_cast<double>(desc.size());

    DimAnalysis r;
    r.dim = D;
    r.theoretical_std = theoretical_std(D);
    r.measured_std = acc / static_cast<double>(D);
    r.ratio = r.measured_std / r.theoretical_std;
    r.component_std = std::sqrt(var);
    return r;
}

DimAnalysis descriptor_std_analysis(const Tensor& descmap) {
    if (descmap.rank() != 4 || descmap.dim(0) != 1) {
        throw ShapeError("descriptor_std_analysis: expected (1,D,h,w), got " + shape_str(descmap.shape()));
    }
    const std::size_t D = descmap.dim(1), M = descmap.dim(2) * descmap.dim(3);
    auto d = descmap.data();
    std::vector<double> rows(M * D);
    for (std::size_t c = 0; c < D; ++c)
        for (std::size_t j = 0; j < M; ++j) rows[j * D + c] = d[c * M + j];
    return descriptor_std_analysis(rows, D);
}

}  // namespace featherpoint

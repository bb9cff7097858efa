#include "featherpoint/teacher.hpp"

#include <algorithm>
#include <cmath>

#include "featherpoint/error.hpp"
#include "featherpoint/geometry.hpp"
#include "featherpoint/keypoints.hpp"
#include "featherpoint/rng.hpp"

namespace featherpoint {

ProceduralTeacher::ProceduralTeacher(std::uint64_t seed, ProceduralTeacherConfig cfg) : cfg_(cfg) {
    const std::size_t D = kTeacherDescriptorDim, P = cfg_.patch * cfg_.patch;
    auto rng = Rng::derive(seed, "teacher.procedural.projection");
    projection_.resize(D * P);
    const double s = 1.0 / std::sqrt(static_cast<double>(P));
    for (auto& v : projection_) v = rng.normal() * s;
    auto brng = Rng::derive(seed, "teacher.procedural.offset");
    offset_.resize(D);
    for (auto& v : offset_) v = brng.normal() * cfg_.bias_scale / std::sqrt(static_cast<double>(D));
}

Tensor ProceduralTeacher::corner_response(const Tensor& image) const {
    const std::size_t H = image.dim(2), W = image.dim(3);
    auto sm = gaussian_blur(image, cfg_.smooth_sigma);
    auto I = sm.data();
    auto at = [&](long y, long x) {
        const auto yy = static_cast<std::size_t>(reflect_coord(static_cast<double>(y), H));
        const auto xx = static_cast<std::size_t>(reflect_coord(static_cast<double>(x), W));
        return I[yy * W + xx];
    };
    std::vector<double> xx(H * W), yy(H * W), xy(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const long ly = static_cast<long>(y), lx = static_cast<long>(x);
            const double gx = 0.5 * (at(ly, lx + 1) - at(ly, lx - 1));
            const double gy = 0.5 * (at(ly + 1, lx) - at(ly - 1, lx));
            xx[y * W + x] = gx * gx;
            yy[y * W + x] = gy * gy;
            xy[y * W + x] = gx * gy;
        }
    auto sxx = gaussian_blur(Tensor::from(Shape{1, 1, H, W}, std::move(xx)), cfg_.window_sigma);
    auto syy = gaussian_blur(Tensor::from(Shape{1, 1, H, W}, std::move(yy)), cfg_.window_sigma);
    auto sxy = gaussian_blur(Tensor::from(Shape{1, 1, H, W}, std::move(xy)), cfg_.window_sigma);
    std::vector<double> r(H * W);
    auto a = sxx.data(), b = syy.data(), c = sxy.data();
    for (std::size_t i = 0; i < H * W; ++i) {
        const double tr = a[i] + b[i];
        r[i] = a[i] * b[i] - c[i] * c[i] - cfg_.harris_k * tr * tr;
    }
    return Tensor::from(Shape{1, 1, H, W}, std::move(r));
}

FeatureMaps ProceduralTeacher::forward(const Tensor& images, ForwardContext&) {
    if (images.rank() != 4 || images.dim(1) != 1) {
        throw ShapeError("procedural teacher expects (N,1,H,W), got " + shape_str(images.shape()));
    }
    const std::size_t N = images.dim(0), H = images.dim(2), W = images.dim(3), s = downsample();
    if (H % s || W % s) throw ShapeError("procedural teacher input must be divisible by 8");
    const std::size_t h = H / s, w = W / s, D = kTeacherDescriptorDim, P = cfg_.patch;
    std::vector<double> heat(N * H * W, 0.0), desc(N * D * h * w, 0.0);

    const double inv2s2 = 1.0 / (2.0 * cfg_.splat_sigma * cfg_.splat_sigma);
    const long rad = static_cast<long>(std::ceil(3.0 * cfg_.splat_sigma));
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<double> plane(images.data().begin() + n * H * W, images.data().begin() + (n + 1) * H * W);
        auto img = Tensor::from(Shape{1, 1, H, W}, std::move(plane));

        auto R = corner_response(img);
        double* hp = heat.data() + n * H * W;
        for (const auto& k : nms(R, cfg_.peak_radius)) {
            const double amp = k.score / (k.score + cfg_.response_scale);
            for (long dy = -rad; dy <= rad; ++dy)
                for (long dx = -rad; dx <= rad; ++dx) {
                    const long y = k.y + dy, x = k.x + dx;
                    if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) continue;
                    const double v = amp * std::exp(-static_cast<double>(dx * dx + dy * dy) * inv2s2);
                    hp[y * static_cast<long>(W) + x] = std::max(hp[y * static_cast<long>(W) + x], v);
                }
        }

        auto sm = gaussian_blur(img, cfg_.smooth_sigma);
        auto I = sm.data();
        std::vector<double> patch(P * P), feat(D);
        for (std::size_t gy = 0; gy < h; ++gy)
            for (std::size_t gx = 0; gx < w; ++gx) {
                const double cy = static_cast<double>(gy * s), cx = static_cast<double>(gx * s);
                double mean = 0.0;
                for (std::size_t py = 0; py < P; ++py)
                    for (std::size_t px = 0; px < P; ++px) {
                        const double y = cy + static_cast<double>(py) - static_cast<double>(P) / 2.0 + 0.5;
                        const double x = cx + static_cast<double>(px) - static_cast<double>(P) / 2.0 + 0.5;
                        const double v = sample_bilinear(I, H, W, x, y);
                        patch[py * P + px] = v;
                        mean += v;
                    }
                mean /= static_cast<double>(P * P);
                double nrm = 0.0;
                for (auto& v : patch) {
                    v -= mean;
                    nrm += v * v;
                }
                nrm = std::sqrt(nrm) + 1e-3;
                double fn = 0.0;
                for (std::size_t d = 0; d < D; ++d) {
                    const double* row = projection_.data() + d * P * P;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < P * P; ++i) acc += row[i] * patch[i];
                    feat[d] = acc / nrm + offset_[d];
                    fn += feat[d] * feat[d];
                }
                fn = std::sqrt(fn);
                for (std::size_t d = 0; d < D; ++d)
                    desc[((n * D + d) * h + gy) * w + gx] = feat[d] / fn;
            }
    }
    return {Tensor::from(Shape{N, 1, H, W}, std::move(heat)), Tensor::from(Shape{N, D, h, w}, std::move(desc))};
}

}  // namespace featherpoint

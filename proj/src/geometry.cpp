#include "featherpoint/geometry.hpp"

#include <cmath>

#include "featherpoint/error.hpp"

namespace featherpoint {

Homography::Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& m) : m_(m) {
    if (m_[8] == 0.0 || !std::isfinite(m_[8])) throw ValueError("homography h33 must be finite and nonzero");
    const double s = m_[8];
    for (auto& v : m_) v /= s;
    for (double v : m_)
        if (!std::isfinite(v)) throw ValueError("homography has non-finite entries");
    if (std::abs(determinant()) <= 1e-9) throw ValueError("homography is not invertible (|det| <= 1e-9)");
}

Homography Homography::translation(double tx, double ty) { return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1}); }

double Homography::determinant() const {
    const auto& a = m_;
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) + a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Homography Homography::inverse() const {
    const auto& a = m_;
    std::array<double, 9> adj{
        a[4] * a[8] - a[5] * a[7], a[2] * a[7] - a[1] * a[8], a[1] * a[5] - a[2] * a[4],
        a[5] * a[6] - a[3] * a[8], a[0] * a[8] - a[2] * a[6], a[2] * a[3] - a[0] * a[5],
        a[3] * a[7] - a[4] * a[6], a[1] * a[6] - a[0] * a[7], a[0] * a[4] - a[1] * a[3],
    };
    return Homography(adj);
}

Homography Homography::operator*(const Homography& rhs) const {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i * 3 + j] += m_[i * 3 + k] * rhs.m_[k * 3 + j];
    return Homography(r);
}

bool Homography::is_identity() const { return m_ == Homography().m_; }

Homography Homography::from_correspondences(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst) {
    // 8x8 linear system for h11..h32 with h33 = 1, Gaussian elimination with partial pivoting.
    double A[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
        double r1[9] = {x, y, 1, 0, 0, 0, -u * x, -u * y, u};
        double r2[9] = {0, 0, 0, x, y, 1, -v * x, -v * y, v};
        for (int j = 0; j < 9; ++j) {
            A[2 * i][j] = r1[j];
            A[2 * i + 1][j] = r2[j];
        }
    }
    for (int c = 0; c < 8; ++c) {
        int piv = c;
        for (int r = c + 1; r < 8; ++r)
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        if (std::abs(A[piv][c]) < 1e-12) throw ValueError("degenerate point correspondences");
        if (piv != c)
            for (int j = 0; j < 9; ++j) std::swap(A[c][j], A[piv][j]);
        for (int r = 0; r < 8; ++r) {
            if (r == c) continue;
            const double f = A[r][c] / A[c][c];
            for (int j = c; j < 9; ++j) A[r][j] -= f * A[c][j];
        }
    }
    std::array<double, 9> h{};
    for (int i = 0; i < 8; ++i) h[i] = A[i][8] / A[i][i];
    h[8] = 1.0;
    return Homography(h);
}

Point2 warp_point(const Homography& h, Point2 p) {
    const auto& m = h.matrix();
    const double d = m[6] * p.x + m[7] * p.y + m[8];
    if (std::abs(d) <= 1e-9) throw ValueError("warp_point: point maps to infinity");
    return {(m[0] * p.x + m[1] * p.y + m[2]) / d, (m[3] * p.x + m[4] * p.y + m[5]) / d};
}

double reflect_coord(double v, std::size_t n) {
    if (n == 1) return 0.0;
    const double period = 2.0 * static_cast<double>(n - 1);
    double r = std::fmod(v, period);
    if (r < 0) r += period;
    return r > static_cast<double>(n - 1) ? period - r : r;
}

double sample_bilinear(std::span<const double> img, std::size_t h, std::size_t w, double x, double y) {
    x = reflect_coord(x, w);
    y = reflect_coord(y, h);
    const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
    const double a = img[y0 * w + x0], b = img[y0 * w + x1];
    const double c = img[y1 * w + x0], d = img[y1 * w + x1];
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
}

Tensor warp_image(const Tensor& image, const Homography& h_ab) {
    const std::size_t H = image.dim(image.rank() - 2), W = image.dim(image.rank() - 1);
    const std::size_t planes = image.numel() / (H * W);
    const auto inv = h_ab.inverse();
    auto src = image.data();
    std::vector<double> out(image.numel());
    for (std::size_t p = 0; p < planes; ++p) {
        auto plane = src.subspan(p * H * W, H * W);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const auto q = warp_point(inv, {static_cast<double>(x), static_cast<double>(y)});
                out[p * H * W + y * W + x] = sample_bilinear(plane, H, W, q.x, q.y);
            }
    }
    return Tensor::from(image.shape(), std::move(out));
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
    if (!(sigma > 0.0)) return image.clone();
    const int rad = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * rad + 1);
    double s = 0.0;
    for (int i = -rad; i <= rad; ++i) s += k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= s;
    const std::size_t H = image.dim(image.rank() - 2), W = image.dim(image.rank() - 1);
    const std::size_t planes = image.numel() / (H * W);
    auto src = image.data();
    std::vector<double> tmp(image.numel()), out(image.numel());
    auto refl = [](long i, std::size_t n) { return static_cast<std::size_t>(reflect_coord(static_cast<double>(i), n)); };
    for (std::size_t p = 0; p < planes; ++p) {
        const std::size_t off = p * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int i = -rad; i <= rad; ++i) acc += k[i + rad] * src[off + y * W + refl(static_cast<long>(x) + i, W)];
                tmp[off + y * W + x] = acc;
            }
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0.0;
                for (int i = -rad; i <= rad; ++i) acc += k[i + rad] * tmp[off + refl(static_cast<long>(y) + i, H) * W + x];
                out[off + y * W + x] = acc;
            }
    }
    return Tensor::from(image.shape(), std::move(out));
}

}  // namespace featherpoint

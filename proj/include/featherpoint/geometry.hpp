#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "featherpoint/tensor.hpp"

namespace featherpoint {

struct Point2 {
    double x = 0.0, y = 0.0;
    bool operator==(const Point2&) const = default;
};

/// Projective map of the plane, row-major, normalized so h33 == 1.
class Homography {
public:
    Homography();  // identity
    /// Normalizes by m[8]; throws ValueError if m[8] == 0 or |det| <= 1e-9.
    explicit Homography(const std::array<double, 9>& m);

    static Homography identity() { return Homography(); }
    static Homography translation(double tx, double ty);
    /// Exact map sending src[i] to dst[i] for four point pairs.
    static Homography from_correspondences(const std::array<Point2, 4>& src, const std::array<Point2, 4>& dst);

    const std::array<double, 9>& matrix() const { return m_; }
    double operator()(std::size_t r, std::size_t c) const { return m_[r * 3 + c]; }
    double determinant() const;
    Homography inverse() const;
    Homography operator*(const Homography& rhs) const;
    bool is_identity() const;
    bool operator==(const Homography& o) const { return m_ == o.m_; }

private:
    std::array<double, 9> m_;
};

/// Homogeneous transform then perspective divide. Throws ValueError when the
/// point maps to infinity (|h31 x + h32 y + h33| <= 1e-9).
Point2 warp_point(const Homography& h, Point2 p);

/// Mirror index into [0, n) without repeating the edge sample.
double reflect_coord(double v, std::size_t n);

/// Bilinear sample of a (1,1,H,W) image at (x, y) with reflection padding.
double sample_bilinear(std::span<const double> img, std::size_t h, std::size_t w, double x, double y);

/// image_b(p) = image_a(H^-1 p), bilinear with reflection padding.
Tensor warp_image(const Tensor& image, const Homography& h_ab);

/// Separable Gaussian blur of every (H,W) plane, reflection padded, kernel
/// truncated at 3 sigma.
Tensor gaussian_blur(const Tensor& image, double sigma);

}  // namespace featherpoint

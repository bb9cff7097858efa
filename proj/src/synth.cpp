#include "featherpoint/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "featherpoint/error.hpp"

namespace featherpoint {

std::string to_string(PairKind k) { return k == PairKind::Illumination ? "illumination" : "viewpoint"; }

namespace {

struct SceneShape {
    bool checker = false;
    std::vector<Point2> poly;  // polygon vertices, or checker bounding box corners
    double value = 0.0;
    // checker only
    double x0 = 0, y0 = 0, cell = 1;
    int nx = 0, ny = 0;
    double value2 = 0.0;
};

bool inside_polygon(const std::vector<Point2>& poly, double x, double y) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) in = !in;
    }
    return in;
}

bool shape_covers(const SceneShape& s, double x, double y, double* value) {
    if (s.checker) {
        const double u = (x - s.x0) / s.cell, v = (y - s.y0) / s.cell;
        if (u < 0 || v < 0 || u >= s.nx || v >= s.ny) return false;
        if (value) *value = ((static_cast<int>(u) + static_cast<int>(v)) % 2 == 0) ? s.value : s.value2;
        return true;
    }
    if (!inside_polygon(s.poly, x, y)) return false;
    if (value) *value = s.value;
    return true;
}

std::vector<double> render(const std::vector<SceneShape>& shapes, double background, std::size_t H, std::size_t W) {
    std::vector<double> img(H * W);
    static constexpr double kSub[2] = {-0.25, 0.25};
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (double dy : kSub)
                for (double dx : kSub) {
                    const double px = static_cast<double>(x) + dx, py = static_cast<double>(y) + dy;
                    double v = background;
                    for (const auto& s : shapes) {
                        double sv;
                        if (shape_covers(s, px, py, &sv)) v = sv;
                    }
                    acc += v;
                }
            img[y * W + x] = acc / 4.0;
        }
    return img;
}

double contrasting_value(Rng& rng, double against) {
    for (int i = 0; i < 100; ++i) {
        const double v = rng.uniform(0.05, 0.95);
        if (std::abs(v - against) > 0.3) return v;
    }
    return against > 0.5 ? 0.1 : 0.9;
}

std::vector<Point2> shape_corners(const SceneShape& s) {
    if (!s.checker) return s.poly;
    std::vector<Point2> c;
    for (int j = 0; j <= s.ny; ++j)
        for (int i = 0; i <= s.nx; ++i) c.push_back({s.x0 + i * s.cell, s.y0 + j * s.cell});
    return c;
}

}  // namespace

SyntheticScene generate_scene(Rng& rng, std::size_t H, std::size_t W, double noise) {
    const double background = rng.uniform(0.2, 0.8);
    const double side = static_cast<double>(std::min(H, W));
    const std::size_t n_shapes = 3 + static_cast<std::size_t>(static_cast<double>(H * W) / 2500.0) + rng.below(3);
    std::vector<SceneShape> shapes;
    for (std::size_t k = 0; k < n_shapes; ++k) {
        SceneShape s;
        const double cx = rng.uniform(0.05, 0.95) * static_cast<double>(W);
        const double cy = rng.uniform(0.05, 0.95) * static_cast<double>(H);
        const double kind = rng.uniform();
        if (kind < 0.2) {
            s.checker = true;
            s.cell = std::round(rng.uniform(4.0, 9.0));
            s.nx = 2 + static_cast<int>(rng.below(3));
            s.ny = 2 + static_cast<int>(rng.below(3));
            s.x0 = std::round(cx - s.nx * s.cell / 2) + 0.5;
            s.y0 = std::round(cy - s.ny * s.cell / 2) + 0.5;
            s.value = contrasting_value(rng, background);
            s.value2 = contrasting_value(rng, s.value);
        } else if (kind < 0.6) {
            const double hw = rng.uniform(0.06, 0.18) * side, hh = rng.uniform(0.06, 0.18) * side;
            s.poly = {{cx - hw, cy - hh}, {cx + hw, cy - hh}, {cx + hw, cy + hh}, {cx - hw, cy + hh}};
            for (auto& p : s.poly) {
                p.x = std::round(p.x) + 0.5;
                p.y = std::round(p.y) + 0.5;
            }
            s.value = contrasting_value(rng, background);
        } else {
            // convex polygon with 3-5 vertices at random angles; rejects very sharp spikes
            const int nv = 3 + static_cast<int>(rng.below(3));
            std::vector<double> ang(nv);
            for (auto& a : ang) a = rng.uniform(0.0, 2.0 * M_PI);
            std::sort(ang.begin(), ang.end());
            const double r = rng.uniform(0.08, 0.2) * side;
            for (double a : ang) s.poly.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
            s.value = contrasting_value(rng, background);
        }
        shapes.push_back(std::move(s));
    }

    auto pixels = render(shapes, background, H, W);

    // A corner counts when it is inside the frame and no later shape covers it.
    std::vector<Point2> corners;
    const double margin = 2.0;
    for (std::size_t k = 0; k < shapes.size(); ++k) {
        for (const auto& c : shape_corners(shapes[k])) {
            if (c.x < margin || c.y < margin || c.x > static_cast<double>(W) - 1 - margin ||
                c.y > static_cast<double>(H) - 1 - margin)
                continue;
            bool hidden = false;
            for (std::size_t j = k + 1; j < shapes.size() && !hidden; ++j) {
                for (double dy : {-1.5, 0.0, 1.5})
                    for (double dx : {-1.5, 0.0, 1.5})
                        if (shape_covers(shapes[j], c.x + dx, c.y + dy, nullptr)) hidden = true;
            }
            if (!hidden) corners.push_back(c);
        }
    }

    if (noise > 0.0)
        for (auto& v : pixels) v = std::clamp(v + noise * rng.normal(), 0.0, 1.0);
    return {Tensor::from(Shape{1, 1, H, W}, std::move(pixels)), std::move(corners)};
}

SyntheticScene checkerboard(std::size_t H, std::size_t W, std::size_t cell, std::size_t offset) {
    if (cell == 0) throw ValueError("checkerboard: cell must be positive");
    std::vector<SceneShape> shapes(1);
    auto& s = shapes[0];
    s.checker = true;
    s.cell = static_cast<double>(cell);
    s.x0 = static_cast<double>(offset) - static_cast<double>(cell) - 0.5;
    s.y0 = s.x0;
    s.nx = static_cast<int>(W / cell) + 3;
    s.ny = static_cast<int>(H / cell) + 3;
    s.value = 0.2;
    s.value2 = 0.8;
    auto pixels = render(shapes, 0.5, H, W);
    std::vector<Point2> corners;
    for (const auto& c : shape_corners(s))
        if (c.x > 0 && c.y > 0 && c.x < static_cast<double>(W) - 1 && c.y < static_cast<double>(H) - 1)
            corners.push_back(c);
    return {Tensor::from(Shape{1, 1, H, W}, std::move(pixels)), std::move(corners)};
}

Homography random_homography(Rng& rng, std::size_t H, std::size_t W, double max_shift) {
    const double w = static_cast<double>(W - 1), h = static_cast<double>(H - 1);
    const double limit = max_shift * static_cast<double>(std::min(H, W));
    std::array<Point2, 4> src{{{0, 0}, {w, 0}, {w, h}, {0, h}}};
    std::array<Point2, 4> dst = src;
    for (auto& p : dst) {
        const double r = limit * std::sqrt(rng.uniform());
        const double a = rng.uniform(0.0, 2.0 * M_PI);
        p.x += r * std::cos(a);
        p.y += r * std::sin(a);
    }
    return Homography::from_correspondences(src, dst);
}

SequencePair generate_pair(std::uint64_t seed, PairKind kind, std::size_t H, std::size_t W) {
    if (H % 8 != 0 || W % 8 != 0) throw ValueError("generate_pair: size must be divisible by 8");
    auto rng = Rng::derive(seed, kind == PairKind::Illumination ? "pair.illumination" : "pair.viewpoint");
    auto scene = generate_scene(rng, H, W, 0.0);
    const double noise = 0.02;

    SequencePair pair;
    pair.name = "synthetic_" + std::to_string(seed) + "_" + to_string(kind);
    pair.kind = kind;
    std::vector<double> a(scene.image.data().begin(), scene.image.data().end());
    std::vector<double> b;
    if (kind == PairKind::Viewpoint) {
        pair.h_ab = random_homography(rng, H, W);
        auto warped = warp_image(scene.image, pair.h_ab);
        b.assign(warped.data().begin(), warped.data().end());
    } else {
        const double gamma = rng.uniform(0.6, 1.6), gain = rng.uniform(0.7, 1.3), bias = rng.uniform(-0.1, 0.1);
        b.resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) b[i] = std::clamp(gain * std::pow(a[i], gamma) + bias, 0.0, 1.0);
    }
    for (auto& v : a) v = std::clamp(v + noise * rng.normal(), 0.0, 1.0);
    for (auto& v : b) v = std::clamp(v + noise * rng.normal(), 0.0, 1.0);
    pair.image_a = Tensor::from(Shape{1, 1, H, W}, std::move(a));
    pair.image_b = Tensor::from(Shape{1, 1, H, W}, std::move(b));
    pair.corners_a = scene.corners;
    for (const auto& c : scene.corners) {
        const auto q = warp_point(pair.h_ab, c);
        if (q.x >= 0 && q.y >= 0 && q.x <= static_cast<double>(W - 1) && q.y <= static_cast<double>(H - 1))
            pair.corners_b.push_back(q);
    }
    return pair;
}

SyntheticSequence generate_sequence(std::uint64_t seed, PairKind kind, std::size_t H, std::size_t W,
                                    std::size_t count) {
    if (H % 8 != 0 || W % 8 != 0) throw ValueError("generate_sequence: size must be divisible by 8");
    if (count < 2) throw ValueError("generate_sequence: need at least two images");
    auto rng = Rng::derive(seed, kind == PairKind::Illumination ? "sequence.illumination" : "sequence.viewpoint");
    auto scene = generate_scene(rng, H, W, 0.0);
    const double noise = 0.02;
    SyntheticSequence seq;
    seq.name = std::string(kind == PairKind::Illumination ? "i_" : "v_") + "synthetic_" + std::to_string(seed);
    seq.kind = kind;
    auto noisy = [&](std::vector<double> v) {
        for (auto& x : v) x = std::clamp(x + noise * rng.normal(), 0.0, 1.0);
        return Tensor::from(Shape{1, 1, H, W}, std::move(v));
    };
    const std::vector<double> base(scene.image.data().begin(), scene.image.data().end());
    seq.images.push_back(noisy(base));
    for (std::size_t k = 1; k < count; ++k) {
        std::vector<double> b;
        Homography h;
        if (kind == PairKind::Viewpoint) {
            h = random_homography(rng, H, W);
            auto warped = warp_image(scene.image, h);
            b.assign(warped.data().begin(), warped.data().end());
        } else {
            const double gamma = rng.uniform(0.6, 1.6), gain = rng.uniform(0.7, 1.3), bias = rng.uniform(-0.1, 0.1);
            b.resize(base.size());
            for (std::size_t i = 0; i < base.size(); ++i) b[i] = std::clamp(gain * std::pow(base[i], gamma) + bias, 0.0, 1.0);
        }
        seq.images.push_back(noisy(std::move(b)));
        seq.homographies.push_back(h);
    }
    return seq;
}

}  // namespace featherpoint

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featherpoint/geometry.hpp"
#include "featherpoint/rng.hpp"
#include "featherpoint/tensor.hpp"

namespace featherpoint {

/// A rendered grayscale image with the exact corner positions it contains.
struct SyntheticScene {
    Tensor image;  // (1,1,H,W) in [0,1]
    std::vector<Point2> corners;
};

enum class PairKind { Illumination, Viewpoint };
std::string to_string(PairKind k);

struct SequencePair {
    std::string name;
    Tensor image_a, image_b;  // (1,1,H,W) in [0,1]
    Homography h_ab;
    PairKind kind = PairKind::Viewpoint;
    /// Ground-truth corners of image_a and their positions in image_b (only
    /// those that land inside it). Empty for loaded pairs.
    std::vector<Point2> corners_a, corners_b;
};

/// Random polygons and checkerboard patches over a flat background, 2x2
/// supersampled, plus Gaussian pixel noise of std `noise`.
SyntheticScene generate_scene(Rng& rng, std::size_t height, std::size_t width, double noise = 0.02);

/// Axis-aligned checkerboard with `cell`-pixel squares starting at `offset`.
SyntheticScene checkerboard(std::size_t height, std::size_t width, std::size_t cell, std::size_t offset = 0);

/// Random homography moving each image corner by at most `max_shift` times
/// min(height, width).
Homography random_homography(Rng& rng, std::size_t height, std::size_t width, double max_shift = 0.2);

/// Deterministic in (seed, kind, size). Size must be divisible by 8.
SequencePair generate_pair(std::uint64_t seed, PairKind kind, std::size_t height, std::size_t width);

/// One reference image and several views of it, HPatches style: image 0 is
/// the reference and homographies[k-1] maps it onto image k.
struct SyntheticSequence {
    std::string name;
    PairKind kind = PairKind::Viewpoint;
    std::vector<Tensor> images;
    std::vector<Homography> homographies;
};

/// Deterministic in (seed, kind, size, count). Views use the same
/// photometric/geometric families as generate_pair.
SyntheticSequence generate_sequence(std::uint64_t seed, PairKind kind, std::size_t height, std::size_t width,
                                    std::size_t count = 6);

}  // namespace featherpoint

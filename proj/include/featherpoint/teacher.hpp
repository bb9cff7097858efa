#pragma once

#include <cstdint>
#include <vector>

#include "featherpoint/model.hpp"

namespace featherpoint {

/// Parameters of the procedural corner teacher.
struct ProceduralTeacherConfig {
    double smooth_sigma = 1.0;     // pre-smoothing of the image
    double window_sigma = 1.5;     // structure-tensor integration window
    double harris_k = 0.04;
    double response_scale = 2e-5;  // c in amplitude = R / (R + c)
    double splat_sigma = 1.0;
    std::size_t peak_radius = 2;   // local-maximum radius on the corner response
    std::size_t patch = 16;        // descriptor patch side
    double bias_scale = 0.05;      // magnitude of the fixed random descriptor offset
};

/// Frozen teacher built from image geometry rather than weights. The heatmap
/// is a Gaussian splat of Harris corner peaks with amplitude R/(R+c); the
/// 256-D descriptors are fixed random projections of contrast-normalized
/// smoothed patches centred on the descriptor grid.
class ProceduralTeacher : public FeatureModel {
public:
    explicit ProceduralTeacher(std::uint64_t seed, ProceduralTeacherConfig cfg = {});

    FeatureMaps forward(const Tensor& images, ForwardContext& ctx) override;
    std::size_t descriptor_dim() const override { return kTeacherDescriptorDim; }
    std::size_t downsample() const override { return kDefaultDownsample; }

    /// Raw Harris response R of a (1,1,H,W) image, before peak picking.
    Tensor corner_response(const Tensor& image) const;
    const ProceduralTeacherConfig& config() const { return cfg_; }

private:
    ProceduralTeacherConfig cfg_;
    std::vector<double> projection_;  // (256 x patch*patch) row-major
    std::vector<double> offset_;      // 256
};

}  // namespace featherpoint

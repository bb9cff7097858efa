#pragma once

#include <cstddef>
#include <vector>

#include "featherpoint/keypoints.hpp"
#include "featherpoint/tensor.hpp"

namespace featherpoint {

inline constexpr double kDefaultFocalAlpha = 2.0;
inline constexpr double kDefaultFocalBeta = 4.0;
inline constexpr double kDefaultSplatSigma = 1.5;
inline constexpr double kDefaultRelationalTau = 0.1;
inline constexpr double kFocalClampEps = 1e-7;
inline constexpr std::size_t kRelationalDenseLimit = 4096;

/// Training targets derived from a teacher forward pass on a batch.
struct TeacherTargets {
    std::vector<std::vector<Keypoint>> hard_points;  // per image
    Tensor soft_map;                                 // (N,1,H,W), 1.0 exactly at hard points
    Tensor teacher_desc;                             // (N,Dt,h,w); may be undefined
};

/// NMS + threshold on the raw teacher heatmap, then Gaussian splatting with
/// per-pixel max composition. The kernel is truncated at 3 sigma.
TeacherTargets preprocess_teacher(const Tensor& raw_heatmap, std::size_t nms_radius = kDefaultNmsRadius,
                                  double threshold = kTeacherThreshold, double sigma_g = kDefaultSplatSigma);

/// CornerNet-style focal loss, averaged over the batch. Per image:
///   -(1/max(1,P)) * sum( y==1 ? (1-p)^a log p : (1-y)^b p^a log(1-p) )
/// with p clamped to [1e-7, 1-1e-7] (zero gradient where clamping bites).
Tensor focal_detection_loss(const Tensor& pred, const TeacherTargets& targets, double alpha = kDefaultFocalAlpha,
                            double beta = kDefaultFocalBeta);

/// Mean over locations i of KL(softmax(S_t[i]/tau) || softmax(S_s[i]/tau)),
/// where S are cosine self-similarity matrices of the two maps over the
/// shared h*w grid; averaged over the batch. Gradients flow to the student
/// only. Rows are processed in blocks of `chunk_rows` (0 = automatic: all
/// rows up to 4096 locations, 1024-row blocks beyond).
Tensor relational_descriptor_loss(const Tensor& student_desc, const Tensor& teacher_desc,
                                  double tau = kDefaultRelationalTau, std::size_t chunk_rows = 0);

/// Plain MSE between descriptor maps of equal shape; the baseline the
/// relational loss replaces.
Tensor mse_descriptor_loss(const Tensor& student_desc, const Tensor& teacher_desc);

/// Learnable log-variances for the two task losses.
struct UncertaintyWeights {
    Tensor s_det = Tensor::parameter(Shape{1}, {0.0});
    Tensor s_desc = Tensor::parameter(Shape{1}, {0.0});
};

/// exp(-s_det) l_det + s_det + exp(-s_desc) l_desc + s_desc
Tensor uncertainty_weighted_total(const Tensor& l_det, const Tensor& l_desc, const UncertaintyWeights& w);
/// l_det + l_desc, used for validation.
double validation_total(double l_det, double l_desc);

}  // namespace featherpoint

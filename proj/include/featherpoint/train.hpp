#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "featherpoint/losses.hpp"
#include "featherpoint/model.hpp"
#include "featherpoint/optim.hpp"
#include "featherpoint/rng.hpp"

namespace featherpoint {

/// Loss hyperparameters shared by training and search.
struct LossConfig {
    double alpha = kDefaultFocalAlpha;
    double beta = kDefaultFocalBeta;
    double sigma_g = kDefaultSplatSigma;
    double tau_rel = kDefaultRelationalTau;
    /// Replace the relational descriptor loss with plain MSE (needs D == 256).
    bool mse_baseline = false;
    std::size_t nms_radius = kDefaultNmsRadius;
    double teacher_threshold = kTeacherThreshold;
};

/// Images of one batch together with the teacher's targets for them.
struct DistillBatch {
    Tensor images;  // (N,1,H,W)
    TeacherTargets targets;
};

struct LossParts {
    Tensor det;
    Tensor desc;
};

/// Runs the frozen teacher and turns its heatmap into training targets.
DistillBatch make_batch(FeatureModel& teacher, const Tensor& images, const LossConfig& cfg);
LossParts distill_losses(const FeatureMaps& student, const TeacherTargets& targets, const LossConfig& cfg);

/// Renders `count` synthetic training scenes of size (H, W), each (1,1,H,W).
std::vector<Tensor> synthetic_images(std::uint64_t seed, const std::string& label, std::size_t count,
                                     std::size_t height, std::size_t width);
/// Stacks (1,C,H,W) tensors along the batch axis.
Tensor stack_batch(const std::vector<Tensor>& images);
/// Random horizontal/vertical flip and 90-degree rotation (180 degrees for
/// non-square images). The teacher then labels the augmented image, so
/// targets follow the same transform.
Tensor augment(const Tensor& image, Rng& rng);

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 8;
    double lr = kDefaultLearningRate;
    double weight_decay = kDefaultWeightDecay;
    double clip = kDefaultClipNorm;
    double plateau_factor = kDefaultPlateauFactor;
    int plateau_patience = kDefaultPlateauPatience;
    bool augment = true;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_det = 0.0;
    double val_desc = 0.0;
    double val_total = 0.0;
    double lr = 0.0;
    double s_det = 0.0;
    double s_desc = 0.0;
};

struct TrainData {
    std::vector<Tensor> train;  // single images (1,1,H,W)
    std::vector<Tensor> val;
};

/// Distillation training of `model` from a frozen `teacher`: AdamW with
/// decoupled decay, global-norm clipping, plateau LR reduction on the summed
/// validation loss, and uncertainty weighting of the two task losses.
/// `on_epoch` receives each epoch's metrics. Throws NumericError on a
/// non-finite loss.
std::vector<EpochMetrics> train_student(ModelGraph& model, FeatureModel& teacher, const TrainData& data,
                                        const TrainConfig& cfg, const LossConfig& loss, std::uint64_t seed,
                                        const std::function<void(const EpochMetrics&)>& on_epoch = {});

/// Summed validation losses (det, desc) without weighting.
std::pair<double, double> validation_losses(FeatureModel& model, const std::vector<DistillBatch>& batches,
                                            const LossConfig& cfg);

/// Splits images into teacher-labelled batches in order.
std::vector<DistillBatch> label_batches(FeatureModel& teacher, const std::vector<Tensor>& images,
                                        std::size_t batch, const LossConfig& cfg);

}  // namespace featherpoint

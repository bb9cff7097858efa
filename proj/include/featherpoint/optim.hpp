#pragma once

#include <string>
#include <vector>

#include "featherpoint/tensor.hpp"

namespace featherpoint {

inline constexpr double kDefaultLearningRate = 1e-3;
inline constexpr double kDefaultWeightDecay = 1e-4;
inline constexpr double kDefaultClipNorm = 5.0;
inline constexpr double kDefaultPlateauFactor = 0.5;
inline constexpr int kDefaultPlateauPatience = 5;

struct NamedParam {
    std::string name;
    Tensor tensor;
};

/// A set of parameters sharing optimizer hyperparameters.
struct ParamGroup {
    std::vector<NamedParam> params;
    double lr = kDefaultLearningRate;
    double weight_decay = kDefaultWeightDecay;
};

/// AdamW with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
class AdamW {
public:
    explicit AdamW(std::vector<ParamGroup> groups, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Applies one update from the gradients currently stored on the
    /// parameters. Missing gradients count as zero. Throws NumericError naming
    /// the parameter if any gradient is NaN/Inf.
    void step();
    void zero_grad();

    /// Multiplies every group's learning rate by `factor`.
    void scale_lr(double factor);
    double lr(std::size_t group = 0) const { return groups_.at(group).lr; }
    long step_count() const { return step_count_; }
    std::vector<ParamGroup>& groups() { return groups_; }

private:
    std::vector<ParamGroup> groups_;
    std::vector<std::vector<std::vector<double>>> m_, v_;
    double beta1_, beta2_, eps_;
    long step_count_ = 0;
};

/// Rescales gradients so their joint L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
double clip_global_norm(std::vector<NamedParam>& params, double max_norm = kDefaultClipNorm);
double global_grad_norm(const std::vector<NamedParam>& params);

/// ReduceLROnPlateau in "min" mode: after more than `patience` epochs without
/// improvement the learning rate is multiplied by `factor`.
struct PlateauScheduler {
    double factor = kDefaultPlateauFactor;
    int patience = kDefaultPlateauPatience;
    double best = 0.0;
    bool has_best = false;
    int wait = 0;

    /// Returns the multiplier to apply to the learning rate this epoch (1 or factor).
    double step(double val_loss);
};

}  // namespace featherpoint

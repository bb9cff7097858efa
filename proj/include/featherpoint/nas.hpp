#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "featherpoint/model.hpp"
#include "featherpoint/train.hpp"

namespace featherpoint {

inline constexpr double kDefaultTauStart = 5.0;
inline constexpr double kDefaultTauDecay = 0.9;
inline constexpr double kDefaultTauMin = 0.1;
inline constexpr double kDefaultArchLearningRate = 3e-2;
inline constexpr std::size_t kDefaultSlots = 3;

/// tau(epoch) = max(tau_min, tau_start * decay^epoch), epoch counted from 0.
struct AnnealSchedule {
    double tau_start = kDefaultTauStart;
    double decay = kDefaultTauDecay;
    double tau_min = kDefaultTauMin;

    void validate() const;
    double tau_at(std::size_t epoch) const;
};

/// softmax((logits + noise) / tau), differentiable in the logits.
Tensor gumbel_softmax(const Tensor& logits, double tau, const Tensor& noise);

/// Default candidate inventory: StandardConv3, StandardConv5, Residual3,
/// InceptionLike{1,3}, all with `channels` outputs.
std::vector<BlockChoice> default_candidates(std::size_t channels);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> v);

struct SearchSlot {
    std::vector<Block> candidates;
    Tensor logits;  // (K), requires grad
};

/// Fixed stem and heads around slots that each mix K candidate blocks.
class SuperNet : public FeatureModel {
public:
    SuperNet(ArchSpec base, std::vector<ConvUnit> stem, std::vector<SearchSlot> slots, std::vector<ConvUnit> det,
             std::vector<ConvUnit> desc);

    /// Uses the current temperature and noise settings (see below).
    FeatureMaps forward(const Tensor& images, ForwardContext& ctx) override;
    std::size_t descriptor_dim() const override { return base_.descriptor_dim; }
    std::size_t downsample() const override { return base_.downsample; }

    /// One mixed forward pass with Gumbel noise drawn from a stream derived
    /// from `seed` (one draw per slot, in slot order).
    FeatureMaps mixed_forward(const Tensor& images, double tau, std::uint64_t seed, ForwardContext& ctx);
    /// Mixed forward with explicit per-slot noise vectors.
    FeatureMaps mixed_forward_with_noise(const Tensor& images, double tau, const std::vector<std::vector<double>>& noise,
                                         ForwardContext& ctx);

    /// Overrides the mixture with fixed per-slot weights (e.g. one-hot).
    void force_weights(std::optional<std::vector<std::vector<double>>> w) { forced_ = std::move(w); }
    /// Mixture weights used by the most recent forward pass.
    const std::vector<std::vector<double>>& last_weights() const { return last_weights_; }

    /// Temperature used by forward(); noise is zero there (deterministic relaxation).
    double tau = kDefaultTauStart;

    std::vector<SearchSlot>& slots() { return slots_; }
    const std::vector<SearchSlot>& slots() const { return slots_; }
    const ArchSpec& base_spec() const { return base_; }
    std::vector<NamedParam> weight_parameters();
    std::vector<NamedParam> arch_parameters();

    std::vector<ConvUnit>& stem() { return stem_; }
    std::vector<ConvUnit>& det_head() { return det_; }
    std::vector<ConvUnit>& desc_head() { return desc_; }

private:
    FeatureMaps run(const Tensor& images, const std::vector<Tensor>& weights, ForwardContext& ctx);

    ArchSpec base_;
    std::vector<ConvUnit> stem_;
    std::vector<SearchSlot> slots_;
    std::vector<ConvUnit> det_, desc_;
    std::optional<std::vector<std::vector<double>>> forced_;
    std::vector<std::vector<double>> last_weights_;
};

/// Builds a supernet with per-slot candidate lists. Every slot keeps the
/// channel count of the base spec's stem. Logits start at zero.
SuperNet build_supernet(const ArchSpec& base, const std::vector<std::vector<BlockChoice>>& candidates,
                        std::uint64_t seed);
SuperNet build_supernet(const ArchSpec& base, std::size_t slots, std::uint64_t seed);

/// Per-slot argmax spec (ties to the lowest index).
ArchSpec discretize_spec(const SuperNet& net);
/// The discrete network with the chosen candidates' trained parameters and
/// the shared stem/heads copied in.
ModelGraph discretize(const SuperNet& net);

struct SearchOptions {
    std::size_t epochs = 20;
    std::size_t batch = 8;
    double lr = kDefaultLearningRate;
    double weight_decay = kDefaultWeightDecay;
    double arch_lr = kDefaultArchLearningRate;
    double clip = kDefaultClipNorm;
    AnnealSchedule schedule;
};

struct SearchEpoch {
    std::size_t epoch = 0;
    double tau = 0.0;
    std::vector<std::vector<double>> logits;  // per slot
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct SearchResult {
    ArchSpec spec;
    std::vector<SearchEpoch> history;
};

/// Single-level joint optimisation of weights and logits with one AdamW and
/// two parameter groups, under the distillation losses. `on_epoch` gets each
/// log record. Throws NumericError naming the epoch when the loss diverges.
SearchResult search(SuperNet& net, FeatureModel& teacher, const TrainData& data, const SearchOptions& opts,
                    const LossConfig& loss, std::uint64_t seed,
                    const std::function<void(const SearchEpoch&)>& on_epoch = {});

/// Shannon entropy (nats) of softmax(logits).
double softmax_entropy(std::span<const double> logits);

}  // namespace featherpoint

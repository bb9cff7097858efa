#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "featherpoint/ops.hpp"
#include "featherpoint/optim.hpp"
#include "featherpoint/tensor.hpp"

namespace featherpoint {

enum class NormKind { BatchNorm, Affine };
/// PWL is Hardtanh(-1, 1) inside the encoder.
enum class ActKind { ReLU, PWL };
/// Zero is the "none" candidate of the search space: it outputs zeros.
enum class BlockKind { StandardConv, Residual, Bottleneck, InceptionLike, Zero };

std::string to_string(NormKind k);
std::string to_string(ActKind k);
std::string to_string(BlockKind k);
NormKind norm_kind_from_string(const std::string& s);
ActKind act_kind_from_string(const std::string& s);
BlockKind block_kind_from_string(const std::string& s);

inline constexpr std::size_t kDefaultDescriptorDim = 64;
inline constexpr std::size_t kTeacherDescriptorDim = 256;
inline constexpr std::size_t kDefaultDownsample = 8;
inline constexpr std::size_t kDefaultStemChannels = 32;
inline constexpr std::size_t kDefaultBlockChannels = 32;
inline constexpr std::size_t kDefaultBlockCount = 3;
inline constexpr std::size_t kAllowedDescriptorDims[] = {8, 16, 32, 64, 128, 256, 512};

struct BlockChoice {
    BlockKind kind = BlockKind::StandardConv;
    std::size_t kernel = 3;
    std::size_t channels = kDefaultBlockChannels;
    bool operator==(const BlockChoice&) const = default;
};

struct ArchSpec {
    std::size_t stem_channels = kDefaultStemChannels;
    std::size_t downsample = kDefaultDownsample;
    std::vector<BlockChoice> blocks = std::vector<BlockChoice>(kDefaultBlockCount, BlockChoice{});
    NormKind norm = NormKind::Affine;
    ActKind act = ActKind::ReLU;
    std::size_t descriptor_dim = kDefaultDescriptorDim;
    std::size_t detector_upscale = kDefaultDownsample;
    /// Width of the 3x3 conv at the start of each head; 0 means stem_channels.
    std::size_t head_channels = 0;
    std::size_t input_channels = 1;

    bool operator==(const ArchSpec&) const = default;
    std::size_t resolved_head_channels() const { return head_channels ? head_channels : stem_channels; }
    /// Throws ValueError listing every violated invariant.
    void validate() const;
};

/// Role of a forward pass. Train uses batch statistics in BatchNorm.
enum class Phase { Train, Eval };

/// Hooks around every activation boundary and weight read. The default is a
/// plain float forward; calibration and fake quantization override the hooks.
class ForwardContext {
public:
    virtual ~ForwardContext() = default;
    Phase phase = Phase::Eval;
    /// Fold normalization into the preceding convolution (eval only).
    bool fold_norm = false;

    virtual Tensor activation(const std::string& /*name*/, const Tensor& t) { return t; }
    virtual Tensor weight(const std::string& /*name*/, const Tensor& w) { return w; }
};

struct FeatureMaps {
    Tensor heatmap;  // (N,1,H,W) in [0,1]
    Tensor descmap;  // (N,D,H/s,W/s), unit norm along D
};

/// Anything that turns images into a heatmap and a descriptor map.
class FeatureModel {
public:
    virtual ~FeatureModel() = default;
    virtual FeatureMaps forward(const Tensor& images, ForwardContext& ctx) = 0;
    FeatureMaps infer(const Tensor& images);
    virtual std::size_t descriptor_dim() const = 0;
    virtual std::size_t downsample() const = 0;
};

/// conv -> optional norm -> optional activation, the unit every block is made of.
struct ConvUnit {
    std::string name;
    Tensor weight, bias;
    std::size_t stride = 1, padding = 0;
    bool has_norm = false;
    NormKind norm = NormKind::Affine;
    Tensor norm_scale, norm_bias;  // Affine scale/bias or BatchNorm gamma/beta
    ops::BatchNormState bn;
    bool has_act = false;
    ActKind act = ActKind::ReLU;

    Tensor forward(const Tensor& x, ForwardContext& ctx);
    /// Conv output before activation; used where a residual add sits in between.
    Tensor forward_pre_act(const Tensor& x, ForwardContext& ctx);
    Tensor apply_act(const Tensor& x, ForwardContext& ctx) const;
};

/// Visits parameters and buffers in a fixed order.
struct ParamVisitor {
    std::function<void(const std::string&, Tensor&)> param;
    std::function<void(const std::string&, std::vector<double>&)> buffer;
};

struct Block {
    std::string name;
    BlockChoice choice;
    std::size_t in_channels = 0;
    std::vector<ConvUnit> units;
    std::optional<ConvUnit> projection;  // residual shortcut when channel counts differ
    ActKind act = ActKind::ReLU;

    Tensor forward(const Tensor& x, ForwardContext& ctx);
    void visit(const ParamVisitor& v);
};

class ModelGraph : public FeatureModel {
public:
    ModelGraph() = default;
    ModelGraph(const ModelGraph&);
    ModelGraph& operator=(const ModelGraph&);
    ModelGraph(ModelGraph&&) noexcept = default;
    ModelGraph& operator=(ModelGraph&&) noexcept = default;

    const ArchSpec& spec() const { return spec_; }
    bool frozen() const { return frozen_; }
    void freeze();

    FeatureMaps forward(const Tensor& images, ForwardContext& ctx) override;
    std::size_t descriptor_dim() const override { return spec_.descriptor_dim; }
    std::size_t downsample() const override { return spec_.downsample; }

    /// Encoder up to (not including) the searchable blocks.
    Tensor stem_forward(const Tensor& images, ForwardContext& ctx);
    FeatureMaps heads_forward(const Tensor& features, ForwardContext& ctx);

    void visit(const ParamVisitor& v);
    std::vector<NamedParam> parameters();
    std::size_t parameter_count();

    std::vector<ConvUnit>& stem() { return stem_; }
    std::vector<Block>& blocks() { return blocks_; }
    std::vector<ConvUnit>& det_head() { return det_head_; }
    std::vector<ConvUnit>& desc_head() { return desc_head_; }

private:
    friend ModelGraph build_student(const ArchSpec&, std::uint64_t);
    friend ModelGraph assemble_model(const ArchSpec&, std::vector<ConvUnit>, std::vector<Block>,
                                     std::vector<ConvUnit>, std::vector<ConvUnit>);
    ArchSpec spec_;
    std::vector<ConvUnit> stem_;
    std::vector<Block> blocks_;
    std::vector<ConvUnit> det_head_;
    std::vector<ConvUnit> desc_head_;
    bool frozen_ = false;
};

/// Deterministic in (spec, seed): every tensor is drawn from its own stream
/// derived from the seed and the tensor name.
ModelGraph build_student(const ArchSpec& spec, std::uint64_t seed);

/// Building blocks shared with the search supernet.
std::vector<ConvUnit> build_stem(const ArchSpec& spec, std::uint64_t seed);
Block build_block(const std::string& name, const BlockChoice& choice, std::size_t in_channels, NormKind norm,
                  ActKind act, std::uint64_t seed);
std::vector<ConvUnit> build_det_head(const ArchSpec& spec, std::size_t in_channels, std::uint64_t seed);
std::vector<ConvUnit> build_desc_head(const ArchSpec& spec, std::size_t in_channels, std::uint64_t seed);
ModelGraph assemble_model(const ArchSpec& spec, std::vector<ConvUnit> stem, std::vector<Block> blocks,
                          std::vector<ConvUnit> det_head, std::vector<ConvUnit> desc_head);

/// Runs a unit list in order.
Tensor run_units(std::vector<ConvUnit>& units, const Tensor& x, ForwardContext& ctx);

ConvUnit make_conv_unit(const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t kernel,
                        std::size_t stride, bool norm, NormKind norm_kind, bool act, ActKind act_kind,
                        std::uint64_t seed);

/// Deep copy of a unit/block: tensors are cloned, requires_grad preserved.
ConvUnit clone_unit(const ConvUnit& u);
Block clone_block(const Block& b);

/// Architecture of the frozen wide stand-in teacher (D = 256).
ArchSpec teacher_spec();
/// Frozen random wide network; parameters do not require grad.
ModelGraph build_teacher(std::uint64_t seed);

}  // namespace featherpoint

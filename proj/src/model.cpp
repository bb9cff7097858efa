#include "featherpoint/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "featherpoint/error.hpp"
#include "featherpoint/rng.hpp"

namespace featherpoint {

std::string to_string(NormKind k) { return k == NormKind::BatchNorm ? "BatchNorm" : "Affine"; }
std::string to_string(ActKind k) { return k == ActKind::ReLU ? "ReLU" : "PWL"; }
std::string to_string(BlockKind k) {
    switch (k) {
        case BlockKind::StandardConv: return "StandardConv";
        case BlockKind::Residual: return "Residual";
        case BlockKind::Bottleneck: return "Bottleneck";
        case BlockKind::InceptionLike: return "InceptionLike";
        case BlockKind::Zero: return "Zero";
    }
    return "?";
}

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "BatchNorm") return NormKind::BatchNorm;
    if (s == "Affine") return NormKind::Affine;
    throw ValueError("unknown norm kind '" + s + "' (expected BatchNorm|Affine)");
}

ActKind act_kind_from_string(const std::string& s) {
    if (s == "ReLU") return ActKind::ReLU;
    if (s == "PWL") return ActKind::PWL;
    throw ValueError("unknown activation kind '" + s + "' (expected ReLU|PWL)");
}

BlockKind block_kind_from_string(const std::string& s) {
    for (auto k : {BlockKind::StandardConv, BlockKind::Residual, BlockKind::Bottleneck, BlockKind::InceptionLike,
                   BlockKind::Zero})
        if (to_string(k) == s) return k;
    throw ValueError("unknown block kind '" + s + "'");
}

void ArchSpec::validate() const {
    std::vector<std::string> bad;
    if (input_channels == 0) bad.push_back("input_channels must be positive");
    if (stem_channels < 2) bad.push_back("stem.channels must be >= 2");
    if (downsample < 2 || (downsample & (downsample - 1)) != 0) bad.push_back("stem.downsample_factor must be a power of two >= 2");
    if (std::find(std::begin(kAllowedDescriptorDims), std::end(kAllowedDescriptorDims), descriptor_dim) ==
        std::end(kAllowedDescriptorDims)) {
        bad.push_back("descriptor_dim " + std::to_string(descriptor_dim) + " not in {8,16,32,64,128,256,512}");
    }
    if (detector_upscale != downsample) {
        bad.push_back("detector_upscale r must equal stem.downsample_factor so the heatmap is full resolution");
    }
    std::size_t c = stem_channels;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const std::string where = "blocks[" + std::to_string(i) + "]";
        if (b.kernel != 3 && b.kernel != 5) bad.push_back(where + ".kernel must be 3 or 5");
        if (b.channels == 0) bad.push_back(where + ".channels must be positive");
        if (b.kind == BlockKind::InceptionLike && b.channels < 2) bad.push_back(where + ": InceptionLike needs >= 2 channels");
        if (b.kind == BlockKind::Bottleneck && b.channels < 4) bad.push_back(where + ": Bottleneck needs >= 4 channels");
        if (b.kind == BlockKind::Zero && b.channels != c) bad.push_back(where + ": Zero block must preserve channel count");
        c = b.channels;
    }
    if (!bad.empty()) {
        std::ostringstream os;
        os << "invalid ArchSpec:";
        for (const auto& s : bad) os << "\n  - " << s;
        throw ValueError(os.str());
    }
}

FeatureMaps FeatureModel::infer(const Tensor& images) {
    NoGradGuard guard;
    ForwardContext ctx;
    ctx.phase = Phase::Eval;
    return forward(images, ctx);
}

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::uint64_t seed, const std::string& name) {
    auto rng = Rng::derive(seed, name);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor act_forward(ActKind act, const Tensor& x) {
    return act == ActKind::ReLU ? ops::relu(x) : ops::hardtanh(x, -1.0, 1.0);
}

// Per-channel (scale, shift) such that norm(y) = scale * y + shift in eval mode.
void eval_norm_affine(const ConvUnit& u, std::vector<double>& scale, std::vector<double>& shift) {
    const std::size_t C = u.norm_scale.numel();
    scale.resize(C);
    shift.resize(C);
    auto s = u.norm_scale.data();
    auto b = u.norm_bias.data();
    for (std::size_t c = 0; c < C; ++c) {
        if (u.norm == NormKind::Affine) {
            scale[c] = s[c];
            shift[c] = b[c];
        } else {
            const double inv = 1.0 / std::sqrt(u.bn.running_var[c] + 1e-5);
            scale[c] = s[c] * inv;
            shift[c] = b[c] - u.bn.running_mean[c] * s[c] * inv;
        }
    }
}

}  // namespace

ConvUnit make_conv_unit(const std::string& name, std::size_t in_c, std::size_t out_c, std::size_t kernel,
                        std::size_t stride, bool norm, NormKind norm_kind, bool act, ActKind act_kind,
                        std::uint64_t seed) {
    ConvUnit u;
    u.name = name;
    const double fan_in = static_cast<double>(in_c * kernel * kernel);
    u.weight = uniform_tensor(Shape{out_c, in_c, kernel, kernel}, std::sqrt(6.0 / fan_in), seed, name + ".weight");
    u.bias = uniform_tensor(Shape{out_c}, 1.0 / std::sqrt(fan_in), seed, name + ".bias");
    u.stride = stride;
    u.padding = kernel / 2;
    u.has_norm = norm;
    u.norm = norm_kind;
    if (norm) {
        u.norm_scale = Tensor::parameter(Shape{out_c}, std::vector<double>(out_c, 1.0));
        u.norm_bias = Tensor::parameter(Shape{out_c}, std::vector<double>(out_c, 0.0));
        if (norm_kind == NormKind::BatchNorm) u.bn = ops::BatchNormState::identity(out_c);
    }
    u.has_act = act;
    u.act = act_kind;
    return u;
}

Tensor ConvUnit::forward_pre_act(const Tensor& x, ForwardContext& ctx) {
    if (has_norm && ctx.fold_norm) {
        if (ctx.phase != Phase::Eval) throw ValueError("normalization folding requires eval phase");
        std::vector<double> s, t;
        eval_norm_affine(*this, s, t);
        const std::size_t F = weight.dim(0), per = weight.numel() / F;
        std::vector<double> w(weight.data().begin(), weight.data().end());
        std::vector<double> b(bias.data().begin(), bias.data().end());
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t i = 0; i < per; ++i) w[f * per + i] *= s[f];
            b[f] = b[f] * s[f] + t[f];
        }
        auto wf = ctx.weight(name + ".weight", Tensor::from(weight.shape(), std::move(w)));
        auto y = ops::conv2d(x, wf, Tensor::from(bias.shape(), std::move(b)), stride, padding);
        return ctx.activation(name + ".conv", y);
    }
    auto w = ctx.weight(name + ".weight", weight);
    auto y = ctx.activation(name + ".conv", ops::conv2d(x, w, bias, stride, padding));
    if (has_norm) {
        if (norm == NormKind::Affine) {
            y = ops::affine_channel(y, norm_scale, norm_bias);
        } else {
            y = ops::batchnorm2d(y, norm_scale, norm_bias, bn,
                                 ctx.phase == Phase::Train ? ops::NormMode::Train : ops::NormMode::Eval);
        }
        y = ctx.activation(name + ".norm", y);
    }
    return y;
}

Tensor ConvUnit::apply_act(const Tensor& x, ForwardContext& ctx) const {
    return ctx.activation(name + ".act", act_forward(act, x));
}

Tensor ConvUnit::forward(const Tensor& x, ForwardContext& ctx) {
    auto y = forward_pre_act(x, ctx);
    return has_act ? apply_act(y, ctx) : y;
}

Tensor run_units(std::vector<ConvUnit>& units, const Tensor& x, ForwardContext& ctx) {
    Tensor y = x;
    for (auto& u : units) y = u.forward(y, ctx);
    return y;
}

Tensor Block::forward(const Tensor& x, ForwardContext& ctx) {
    switch (choice.kind) {
        case BlockKind::StandardConv:
            return units[0].forward(x, ctx);
        case BlockKind::Residual:
        case BlockKind::Bottleneck: {
            Tensor y = x;
            for (std::size_t i = 0; i + 1 < units.size(); ++i) y = units[i].forward(y, ctx);
            y = units.back().forward_pre_act(y, ctx);
            Tensor skip = projection ? projection->forward_pre_act(x, ctx) : x;
            auto sum = ctx.activation(name + ".add", ops::add(y, skip));
            return ctx.activation(name + ".out", act_forward(act, sum));
        }
        case BlockKind::InceptionLike: {
            std::vector<Tensor> branches;
            for (auto& u : units) branches.push_back(u.forward(x, ctx));
            return ctx.activation(name + ".concat", ops::concat_channels(branches));
        }
        case BlockKind::Zero:
            return ctx.activation(name + ".out", ops::scale(x, 0.0));
    }
    throw ValueError("unknown block kind");
}

namespace {

void visit_unit(ConvUnit& u, const ParamVisitor& v) {
    if (v.param) {
        v.param(u.name + ".weight", u.weight);
        v.param(u.name + ".bias", u.bias);
        if (u.has_norm) {
            v.param(u.name + ".norm.scale", u.norm_scale);
            v.param(u.name + ".norm.bias", u.norm_bias);
        }
    }
    if (v.buffer && u.has_norm && u.norm == NormKind::BatchNorm) {
        v.buffer(u.name + ".bn.running_mean", u.bn.running_mean);
        v.buffer(u.name + ".bn.running_var", u.bn.running_var);
    }
}

}  // namespace

void Block::visit(const ParamVisitor& v) {
    for (auto& u : units) visit_unit(u, v);
    if (projection) visit_unit(*projection, v);
}

Block build_block(const std::string& name, const BlockChoice& choice, std::size_t in_c, NormKind norm, ActKind act,
                  std::uint64_t seed) {
    Block b;
    b.name = name;
    b.choice = choice;
    b.in_channels = in_c;
    b.act = act;
    const std::size_t c = choice.channels, k = choice.kernel;
    switch (choice.kind) {
        case BlockKind::StandardConv:
            b.units.push_back(make_conv_unit(name + ".conv", in_c, c, k, 1, true, norm, true, act, seed));
            break;
        case BlockKind::Residual:
            b.units.push_back(make_conv_unit(name + ".conv1", in_c, c, k, 1, true, norm, true, act, seed));
            b.units.push_back(make_conv_unit(name + ".conv2", c, c, k, 1, true, norm, false, act, seed));
            if (in_c != c) b.projection = make_conv_unit(name + ".proj", in_c, c, 1, 1, true, norm, false, act, seed);
            break;
        case BlockKind::Bottleneck: {
            const std::size_t mid = std::max<std::size_t>(1, c / 4);
            b.units.push_back(make_conv_unit(name + ".reduce", in_c, mid, 1, 1, true, norm, true, act, seed));
            b.units.push_back(make_conv_unit(name + ".conv", mid, mid, k, 1, true, norm, true, act, seed));
            b.units.push_back(make_conv_unit(name + ".expand", mid, c, 1, 1, true, norm, false, act, seed));
            if (in_c != c) b.projection = make_conv_unit(name + ".proj", in_c, c, 1, 1, true, norm, false, act, seed);
            break;
        }
        case BlockKind::InceptionLike: {
            const std::size_t half = c / 2;
            b.units.push_back(make_conv_unit(name + ".branch1", in_c, half, 1, 1, true, norm, true, act, seed));
            b.units.push_back(make_conv_unit(name + ".branch" + std::to_string(k), in_c, c - half, k, 1, true, norm,
                                             true, act, seed));
            break;
        }
        case BlockKind::Zero:
            if (in_c != c) throw ValueError("Zero block must preserve channel count");
            break;
    }
    return b;
}

std::vector<ConvUnit> build_stem(const ArchSpec& spec, std::uint64_t seed) {
    std::vector<ConvUnit> stem;
    std::size_t in_c = spec.input_channels;
    std::size_t factor = 1, i = 0;
    while (factor < spec.downsample) {
        const std::size_t out_c = (i == 0) ? std::max<std::size_t>(1, spec.stem_channels / 2) : spec.stem_channels;
        stem.push_back(make_conv_unit("stem." + std::to_string(i), in_c, out_c, 3, 2, true, spec.norm, true, spec.act,
                                      seed));
        in_c = out_c;
        factor *= 2;
        ++i;
    }
    return stem;
}

std::vector<ConvUnit> build_det_head(const ArchSpec& spec, std::size_t in_c, std::uint64_t seed) {
    const std::size_t hc = spec.resolved_head_channels();
    const std::size_t r = spec.detector_upscale;
    std::vector<ConvUnit> head;
    head.push_back(make_conv_unit("det.0", in_c, hc, 3, 1, true, spec.norm, true, spec.act, seed));
    head.push_back(make_conv_unit("det.1", hc, r * r, 1, 1, false, spec.norm, false, spec.act, seed));
    return head;
}

std::vector<ConvUnit> build_desc_head(const ArchSpec& spec, std::size_t in_c, std::uint64_t seed) {
    const std::size_t hc = spec.resolved_head_channels();
    std::vector<ConvUnit> head;
    head.push_back(make_conv_unit("desc.0", in_c, hc, 3, 1, true, spec.norm, true, spec.act, seed));
    head.push_back(make_conv_unit("desc.1", hc, spec.descriptor_dim, 1, 1, false, spec.norm, false, spec.act, seed));
    return head;
}

ModelGraph assemble_model(const ArchSpec& spec, std::vector<ConvUnit> stem, std::vector<Block> blocks,
                          std::vector<ConvUnit> det_head, std::vector<ConvUnit> desc_head) {
    ModelGraph g;
    g.spec_ = spec;
    g.stem_ = std::move(stem);
    g.blocks_ = std::move(blocks);
    g.det_head_ = std::move(det_head);
    g.desc_head_ = std::move(desc_head);
    return g;
}

ModelGraph build_student(const ArchSpec& spec, std::uint64_t seed) {
    spec.validate();
    auto stem = build_stem(spec, seed);
    std::vector<Block> blocks;
    std::size_t c = spec.stem_channels;
    for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
        blocks.push_back(build_block("blocks." + std::to_string(i), spec.blocks[i], c, spec.norm, spec.act, seed));
        c = spec.blocks[i].channels;
    }
    return assemble_model(spec, std::move(stem), std::move(blocks), build_det_head(spec, c, seed),
                          build_desc_head(spec, c, seed));
}

ConvUnit clone_unit(const ConvUnit& u) {
    ConvUnit c = u;
    auto cl = [](const Tensor& t) {
        if (!t.defined()) return t;
        auto r = t.clone();
        if (t.is_parameter()) r = Tensor::parameter(t.shape(), t.to_vector());
        r.set_requires_grad(t.requires_grad());
        return r;
    };
    c.weight = cl(u.weight);
    c.bias = cl(u.bias);
    c.norm_scale = cl(u.norm_scale);
    c.norm_bias = cl(u.norm_bias);
    return c;
}

Block clone_block(const Block& b) {
    Block c = b;
    for (auto& u : c.units) u = clone_unit(u);
    if (c.projection) c.projection = clone_unit(*c.projection);
    return c;
}

ModelGraph::ModelGraph(const ModelGraph& o)
    : FeatureModel(o), spec_(o.spec_), blocks_(), frozen_(o.frozen_) {
    for (const auto& u : o.stem_) stem_.push_back(clone_unit(u));
    for (const auto& b : o.blocks_) blocks_.push_back(clone_block(b));
    for (const auto& u : o.det_head_) det_head_.push_back(clone_unit(u));
    for (const auto& u : o.desc_head_) desc_head_.push_back(clone_unit(u));
}

ModelGraph& ModelGraph::operator=(const ModelGraph& o) {
    if (this != &o) {
        ModelGraph tmp(o);
        *this = std::move(tmp);
    }
    return *this;
}

void ModelGraph::freeze() {
    frozen_ = true;
    visit({[](const std::string&, Tensor& t) { t.set_requires_grad(false); }, nullptr});
}

Tensor ModelGraph::stem_forward(const Tensor& images, ForwardContext& ctx) {
    if (images.rank() != 4 || images.dim(1) != spec_.input_channels) {
        throw ShapeError("model input must be (N," + std::to_string(spec_.input_channels) + ",H,W), got " +
                         shape_str(images.shape()));
    }
    if (images.dim(2) % spec_.downsample != 0 || images.dim(3) % spec_.downsample != 0) {
        throw ShapeError("input spatial dims " + shape_str(images.shape()) + " must be divisible by " +
                         std::to_string(spec_.downsample));
    }
    auto x = ctx.activation("input", images);
    return run_units(stem_, x, ctx);
}

FeatureMaps ModelGraph::heads_forward(const Tensor& features, ForwardContext& ctx) {
    auto d = run_units(det_head_, features, ctx);
    d = ctx.activation("det.shuffle", ops::pixel_shuffle(d, spec_.detector_upscale));
    auto heat = ctx.activation("heatmap", ops::sigmoid(d));
    auto e = run_units(desc_head_, features, ctx);
    auto desc = ctx.activation("descmap", ops::l2_normalize(e, 1));
    return {heat, desc};
}

FeatureMaps ModelGraph::forward(const Tensor& images, ForwardContext& ctx) {
    auto x = stem_forward(images, ctx);
    for (auto& b : blocks_) x = b.forward(x, ctx);
    return heads_forward(x, ctx);
}

void ModelGraph::visit(const ParamVisitor& v) {
    for (auto& u : stem_) visit_unit(u, v);
    for (auto& b : blocks_) b.visit(v);
    for (auto& u : det_head_) visit_unit(u, v);
    for (auto& u : desc_head_) visit_unit(u, v);
}

std::vector<NamedParam> ModelGraph::parameters() {
    std::vector<NamedParam> out;
    visit({[&](const std::string& n, Tensor& t) { out.push_back({n, t}); }, nullptr});
    return out;
}

std::size_t ModelGraph::parameter_count() {
    std::size_t n = 0;
    visit({[&](const std::string&, Tensor& t) { n += t.numel(); }, nullptr});
    return n;
}

ArchSpec teacher_spec() {
    ArchSpec s;
    s.stem_channels = 64;
    s.blocks = std::vector<BlockChoice>(3, BlockChoice{BlockKind::StandardConv, 3, 64});
    s.norm = NormKind::Affine;
    s.act = ActKind::ReLU;
    s.descriptor_dim = kTeacherDescriptorDim;
    s.head_channels = 128;
    return s;
}

ModelGraph build_teacher(std::uint64_t seed) {
    auto g = build_student(teacher_spec(), Rng::derive(seed, "teacher").next_u64());
    g.freeze();
    return g;
}

}  // namespace featherpoint

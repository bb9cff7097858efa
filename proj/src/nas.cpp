#include "featherpoint/nas.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "featherpoint/error.hpp"
#include "featherpoint/ops.hpp"
#include "featherpoint/rng.hpp"

namespace featherpoint {

void AnnealSchedule::validate() const {
    if (!(tau_min > 0.0)) throw ValueError("nas.tau_min must be > 0");
    if (tau_start < tau_min) throw ValueError("nas.tau_start must be >= nas.tau_min");
    if (!(decay > 0.0 && decay < 1.0)) throw ValueError("nas.decay must be in (0, 1)");
}

double AnnealSchedule::tau_at(std::size_t epoch) const {
    return std::max(tau_min, tau_start * std::pow(decay, static_cast<double>(epoch)));
}

Tensor gumbel_softmax(const Tensor& logits, double tau, const Tensor& noise) {
    if (!(tau > 0.0)) throw ValueError("gumbel_softmax: tau must be > 0");
    if (logits.shape() != noise.shape()) {
        throw ShapeError("gumbel_softmax: noise " + shape_str(noise.shape()) + " vs logits " + shape_str(logits.shape()));
    }
    return ops::softmax(ops::add(logits, noise), 0, tau);
}

std::vector<BlockChoice> default_candidates(std::size_t c) {
    return {{BlockKind::StandardConv, 3, c},
            {BlockKind::StandardConv, 5, c},
            {BlockKind::Residual, 3, c},
            {BlockKind::InceptionLike, 3, c}};
}

std::size_t argmax_lowest(std::span<const double> v) {
    if (v.empty()) throw ValueError("argmax of empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

double softmax_entropy(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    double h = 0.0;
    for (double l : logits) {
        const double p = std::exp(l - mx) / z;
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

SuperNet::SuperNet(ArchSpec base, std::vector<ConvUnit> stem, std::vector<SearchSlot> slots,
                   std::vector<ConvUnit> det, std::vector<ConvUnit> desc)
    : base_(std::move(base)), stem_(std::move(stem)), slots_(std::move(slots)), det_(std::move(det)),
      desc_(std::move(desc)) {
    for (const auto& s : slots_) {
        if (s.candidates.empty()) throw ValueError("supernet slot without candidates");
        for (const auto& c : s.candidates) {
            if (c.choice.channels != s.candidates[0].choice.channels || c.in_channels != s.candidates[0].in_channels) {
                throw ShapeError("supernet slot candidates must share input/output channel counts");
            }
        }
    }
}

FeatureMaps SuperNet::run(const Tensor& images, const std::vector<Tensor>& weights, ForwardContext& ctx) {
    if (images.rank() != 4 || images.dim(1) != base_.input_channels || images.dim(2) % base_.downsample ||
        images.dim(3) % base_.downsample) {
        throw ShapeError("supernet input " + shape_str(images.shape()) + " is not (N,C,H,W) with H,W divisible by " +
                         std::to_string(base_.downsample));
    }
    last_weights_.clear();
    auto x = run_units(stem_, ctx.activation("input", images), ctx);
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        std::vector<Tensor> outs;
        for (auto& cand : slots_[i].candidates) outs.push_back(cand.forward(x, ctx));
        last_weights_.push_back(weights[i].to_vector());
        x = outs.size() == 1 && weights[i].numel() == 1 && weights[i].item() == 1.0 ? outs[0]
                                                                                     : ops::weighted_sum(outs, weights[i]);
    }
    auto d = run_units(det_, x, ctx);
    d = ctx.activation("det.shuffle", ops::pixel_shuffle(d, base_.detector_upscale));
    auto heat = ctx.activation("heatmap", ops::sigmoid(d));
    auto e = run_units(desc_, x, ctx);
    auto desc = ctx.activation("descmap", ops::l2_normalize(e, 1));
    return {heat, desc};
}

FeatureMaps SuperNet::mixed_forward_with_noise(const Tensor& images, double t,
                                               const std::vector<std::vector<double>>& noise, ForwardContext& ctx) {
    if (noise.size() != slots_.size()) throw ShapeError("mixed_forward: one noise vector per slot required");
    std::vector<Tensor> w;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        if (forced_) {
            w.push_back(Tensor::from(Shape{slots_[i].candidates.size()}, (*forced_).at(i)));
        } else {
            w.push_back(gumbel_softmax(slots_[i].logits, t, Tensor::from(slots_[i].logits.shape(), noise[i])));
        }
    }
    return run(images, w, ctx);
}

FeatureMaps SuperNet::mixed_forward(const Tensor& images, double t, std::uint64_t seed, ForwardContext& ctx) {
    auto rng = Rng::derive(seed, "nas.gumbel");
    std::vector<std::vector<double>> noise;
    for (const auto& s : slots_) noise.push_back(rng.gumbel_vector(s.candidates.size()));
    return mixed_forward_with_noise(images, t, noise, ctx);
}

FeatureMaps SuperNet::forward(const Tensor& images, ForwardContext& ctx) {
    std::vector<std::vector<double>> zero;
    for (const auto& s : slots_) zero.emplace_back(s.candidates.size(), 0.0);
    return mixed_forward_with_noise(images, tau, zero, ctx);
}

std::vector<NamedParam> SuperNet::weight_parameters() {
    std::vector<NamedParam> out;
    ParamVisitor v{[&](const std::string& n, Tensor& t) { out.push_back({n, t}); }, nullptr};
    auto unit_params = [&](ConvUnit& u) {
        out.push_back({u.name + ".weight", u.weight});
        out.push_back({u.name + ".bias", u.bias});
        if (u.has_norm) {
            out.push_back({u.name + ".norm.scale", u.norm_scale});
            out.push_back({u.name + ".norm.bias", u.norm_bias});
        }
    };
    for (auto& u : stem_) unit_params(u);
    for (auto& s : slots_)
        for (auto& c : s.candidates) c.visit(v);
    for (auto& u : det_) unit_params(u);
    for (auto& u : desc_) unit_params(u);
    return out;
}

std::vector<NamedParam> SuperNet::arch_parameters() {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < slots_.size(); ++i) out.push_back({"slots." + std::to_string(i) + ".logits", slots_[i].logits});
    return out;
}

SuperNet build_supernet(const ArchSpec& base, const std::vector<std::vector<BlockChoice>>& candidates,
                        std::uint64_t seed) {
    ArchSpec spec = base;
    spec.blocks.clear();
    spec.validate();
    const std::size_t c = base.stem_channels;
    std::vector<SearchSlot> slots;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        SearchSlot s;
        for (std::size_t k = 0; k < candidates[i].size(); ++k) {
            auto choice = candidates[i][k];
            if (choice.channels != c) {
                throw ShapeError("supernet candidates must keep " + std::to_string(c) + " channels");
            }
            s.candidates.push_back(build_block("slots." + std::to_string(i) + ".cand" + std::to_string(k), choice, c,
                                               base.norm, base.act, seed));
        }
        s.logits = Tensor::parameter(Shape{s.candidates.size()}, std::vector<double>(s.candidates.size(), 0.0));
        slots.push_back(std::move(s));
    }
    return SuperNet(spec, build_stem(spec, seed), std::move(slots), build_det_head(spec, c, seed),
                    build_desc_head(spec, c, seed));
}

SuperNet build_supernet(const ArchSpec& base, std::size_t n_slots, std::uint64_t seed) {
    return build_supernet(base, std::vector<std::vector<BlockChoice>>(n_slots, default_candidates(base.stem_channels)),
                          seed);
}

ArchSpec discretize_spec(const SuperNet& net) {
    ArchSpec spec = net.base_spec();
    spec.blocks.clear();
    for (const auto& s : net.slots()) spec.blocks.push_back(s.candidates[argmax_lowest(s.logits.data())].choice);
    return spec;
}

namespace {

void rename_unit(ConvUnit& u, const std::string& from, const std::string& to) {
    if (u.name.rfind(from, 0) == 0) u.name = to + u.name.substr(from.size());
}

}  // namespace

ModelGraph discretize(const SuperNet& net) {
    auto spec = discretize_spec(net);
    auto& mut = const_cast<SuperNet&>(net);
    std::vector<ConvUnit> stem, det, desc;
    for (const auto& u : mut.stem()) stem.push_back(clone_unit(u));
    for (const auto& u : mut.det_head()) det.push_back(clone_unit(u));
    for (const auto& u : mut.desc_head()) desc.push_back(clone_unit(u));
    std::vector<Block> blocks;
    for (std::size_t i = 0; i < net.slots().size(); ++i) {
        const auto& s = net.slots()[i];
        const auto& chosen = s.candidates[argmax_lowest(s.logits.data())];
        Block b = clone_block(chosen);
        const std::string to = "blocks." + std::to_string(i);
        for (auto& u : b.units) rename_unit(u, b.name, to);
        if (b.projection) rename_unit(*b.projection, b.name, to);
        b.name = to;
        blocks.push_back(std::move(b));
    }
    return assemble_model(spec, std::move(stem), std::move(blocks), std::move(det), std::move(desc));
}

SearchResult search(SuperNet& net, FeatureModel& teacher, const TrainData& data, const SearchOptions& opts,
                    const LossConfig& loss, std::uint64_t seed, const std::function<void(const SearchEpoch&)>& on_epoch) {
    opts.schedule.validate();
    if (opts.batch == 0) throw ValueError("nas batch must be positive");
    if (data.train.empty()) throw ValueError("search training set is empty");

    ParamGroup weights{net.weight_parameters(), opts.lr, opts.weight_decay};
    ParamGroup arch{net.arch_parameters(), opts.arch_lr, 0.0};
    AdamW opt({weights, arch});
    std::vector<NamedParam> all = weights.params;
    all.insert(all.end(), arch.params.begin(), arch.params.end());

    const auto train_batches = label_batches(teacher, data.train, opts.batch, loss);
    const auto val_batches = label_batches(teacher, data.val.empty() ? data.train : data.val, opts.batch, loss);
    auto noise_rng = Rng::derive(seed, "nas.gumbel");
    auto order_rng = Rng::derive(seed, "nas.order");

    SearchResult result;
    std::vector<std::size_t> order(train_batches.size());
    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        const double tau = opts.schedule.tau_at(epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);

        double train_sum = 0.0;
        for (std::size_t bi : order) {
            const auto& b = train_batches[bi];
            std::vector<std::vector<double>> noise;
            for (const auto& s : net.slots()) noise.push_back(noise_rng.gumbel_vector(s.candidates.size()));
            ForwardContext ctx;
            ctx.phase = Phase::Train;
            auto maps = net.mixed_forward_with_noise(b.images, tau, noise, ctx);
            auto parts = distill_losses(maps, b.targets, loss);
            auto total = ops::add(parts.det, parts.desc);
            if (!std::isfinite(total.item())) {
                throw NumericError("search diverged at epoch " + std::to_string(epoch) + " (non-finite loss)");
            }
            opt.zero_grad();
            total.backward();
            clip_global_norm(all, opts.clip);
            opt.step();
            train_sum += total.item();
        }

        net.tau = tau;
        auto [vd, vs] = validation_losses(net, val_batches, loss);
        SearchEpoch rec;
        rec.epoch = epoch;
        rec.tau = tau;
        for (const auto& s : net.slots()) rec.logits.push_back(s.logits.to_vector());
        rec.train_loss = train_sum / static_cast<double>(train_batches.size());
        rec.val_loss = validation_total(vd, vs);
        if (!std::isfinite(rec.val_loss)) {
            throw NumericError("search diverged at epoch " + std::to_string(epoch) + " (non-finite validation loss)");
        }
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    result.spec = discretize_spec(net);
    return result;
}

}  // namespace featherpoint

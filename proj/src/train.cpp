#include "featherpoint/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "featherpoint/error.hpp"
#include "featherpoint/ops.hpp"
#include "featherpoint/rng.hpp"
#include "featherpoint/synth.hpp"

namespace featherpoint {

DistillBatch make_batch(FeatureModel& teacher, const Tensor& images, const LossConfig& cfg) {
    NoGradGuard guard;
    ForwardContext ctx;
    ctx.phase = Phase::Eval;
    auto maps = teacher.forward(images, ctx);
    auto targets = preprocess_teacher(maps.heatmap, cfg.nms_radius, cfg.teacher_threshold, cfg.sigma_g);
    targets.teacher_desc = maps.descmap.detach();
    return {images, std::move(targets)};
}

LossParts distill_losses(const FeatureMaps& student, const TeacherTargets& targets, const LossConfig& cfg) {
    LossParts p;
    p.det = focal_detection_loss(student.heatmap, targets, cfg.alpha, cfg.beta);
    p.desc = cfg.mse_baseline ? mse_descriptor_loss(student.descmap, targets.teacher_desc)
                              : relational_descriptor_loss(student.descmap, targets.teacher_desc, cfg.tau_rel);
    return p;
}

std::vector<Tensor> synthetic_images(std::uint64_t seed, const std::string& label, std::size_t count,
                                     std::size_t height, std::size_t width) {
    std::vector<Tensor> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        auto rng = Rng::derive(seed, label + "." + std::to_string(i));
        out.push_back(generate_scene(rng, height, width, 0.02).image);
    }
    return out;
}

Tensor stack_batch(const std::vector<Tensor>& images) {
    if (images.empty()) throw ShapeError("stack_batch: empty batch");
    Shape s = images[0].shape();
    std::vector<double> data;
    data.reserve(images.size() * images[0].numel());
    for (const auto& im : images) {
        if (im.rank() != 4 || im.dim(0) != 1 || Shape(im.shape().begin() + 1, im.shape().end()) !=
                                                      Shape(s.begin() + 1, s.end())) {
            throw ShapeError("stack_batch: image " + shape_str(im.shape()) + " does not match " + shape_str(s));
        }
        data.insert(data.end(), im.data().begin(), im.data().end());
    }
    s[0] = images.size();
    return Tensor::from(s, std::move(data));
}

Tensor augment(const Tensor& image, Rng& rng) {
    Tensor x = image.detach();
    if (rng.below(2)) x = ops::flip_horizontal(x);
    if (rng.below(2)) x = ops::flip_vertical(x);
    const bool square = x.dim(2) == x.dim(3);
    const int k = static_cast<int>(rng.below(4));
    if (square) {
        x = ops::rot90(x, k);
    } else if (k % 2 == 1) {
        x = ops::rot90(x, 2);
    }
    return x;
}

std::vector<DistillBatch> label_batches(FeatureModel& teacher, const std::vector<Tensor>& images,
                                        std::size_t batch, const LossConfig& cfg) {
    if (batch == 0) throw ValueError("batch size must be positive");
    std::vector<DistillBatch> out;
    for (std::size_t i = 0; i < images.size(); i += batch) {
        std::vector<Tensor> chunk(images.begin() + static_cast<long>(i),
                                  images.begin() + static_cast<long>(std::min(images.size(), i + batch)));
        out.push_back(make_batch(teacher, stack_batch(chunk), cfg));
    }
    return out;
}

std::pair<double, double> validation_losses(FeatureModel& model, const std::vector<DistillBatch>& batches,
                                            const LossConfig& cfg) {
    NoGradGuard guard;
    double det = 0.0, desc = 0.0, n = 0.0;
    for (const auto& b : batches) {
        ForwardContext ctx;
        ctx.phase = Phase::Eval;
        auto maps = model.forward(b.images, ctx);
        auto parts = distill_losses(maps, b.targets, cfg);
        const double w = static_cast<double>(b.images.dim(0));
        det += parts.det.item() * w;
        desc += parts.desc.item() * w;
        n += w;
    }
    if (n == 0.0) return {0.0, 0.0};
    return {det / n, desc / n};
}

std::vector<EpochMetrics> train_student(ModelGraph& model, FeatureModel& teacher, const TrainData& data,
                                        const TrainConfig& cfg, const LossConfig& loss, std::uint64_t seed,
                                        const std::function<void(const EpochMetrics&)>& on_epoch) {
    if (cfg.batch == 0) throw ValueError("train.batch must be positive");
    std::vector<EpochMetrics> history;
    if (cfg.epochs == 0) return history;
    if (data.train.empty()) throw ValueError("training set is empty");
    if (loss.mse_baseline && model.descriptor_dim() != teacher.descriptor_dim()) {
        throw ValueError("MSE baseline needs student descriptor_dim == teacher descriptor_dim (" +
                         std::to_string(teacher.descriptor_dim()) + ")");
    }

    UncertaintyWeights uw;
    ParamGroup weights{model.parameters(), cfg.lr, cfg.weight_decay};
    ParamGroup balance{{{"uncertainty.s_det", uw.s_det}, {"uncertainty.s_desc", uw.s_desc}}, cfg.lr, 0.0};
    AdamW opt({weights, balance});
    std::vector<NamedParam> all = weights.params;
    all.insert(all.end(), balance.params.begin(), balance.params.end());
    PlateauScheduler plateau{cfg.plateau_factor, cfg.plateau_patience};

    const auto val_batches = label_batches(teacher, data.val.empty() ? data.train : data.val, cfg.batch, loss);
    auto shuffle_rng = Rng::derive(seed, "train.shuffle");
    auto aug_rng = Rng::derive(seed, "train.augment");
    std::vector<std::size_t> order(data.train.size());

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double train_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t i = 0; i < order.size(); i += cfg.batch) {
            std::vector<Tensor> chunk;
            for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch); ++j) {
                chunk.push_back(cfg.augment ? augment(data.train[order[j]], aug_rng) : data.train[order[j]]);
            }
            auto batch = make_batch(teacher, stack_batch(chunk), loss);
            ForwardContext ctx;
            ctx.phase = Phase::Train;
            auto maps = model.forward(batch.images, ctx);
            auto parts = distill_losses(maps, batch.targets, loss);
            auto total = uncertainty_weighted_total(parts.det, parts.desc, uw);
            if (!std::isfinite(total.item())) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
            }
            opt.zero_grad();
            total.backward();
            clip_global_norm(all, cfg.clip);
            opt.step();
            train_sum += total.item();
            ++steps;
        }

        auto [vd, vs] = validation_losses(model, val_batches, loss);
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = train_sum / static_cast<double>(steps);
        m.val_det = vd;
        m.val_desc = vs;
        m.val_total = validation_total(vd, vs);
        if (!std::isfinite(m.val_total)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
        m.lr = opt.lr();
        m.s_det = uw.s_det.item();
        m.s_desc = uw.s_desc.item();
        const double mult = plateau.step(m.val_total);
        if (mult != 1.0) opt.scale_lr(mult);
        history.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return history;
}

}  // namespace featherpoint

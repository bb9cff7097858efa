#include "featherpoint/optim.hpp"

#include <cmath>

#include "featherpoint/error.hpp"

namespace featherpoint {

AdamW::AdamW(std::vector<ParamGroup> groups, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& g : groups_) {
        m_.emplace_back();
        v_.emplace_back();
        for (const auto& p : g.params) {
            m_.back().emplace_back(p.tensor.numel(), 0.0);
            v_.back().emplace_back(p.tensor.numel(), 0.0);
        }
    }
}

void AdamW::step() {
    for (const auto& g : groups_)
        for (const auto& p : g.params)
            for (double v : p.tensor.grad())
                if (!std::isfinite(v)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");

    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
        auto& g = groups_[gi];
        for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
            auto& t = g.params[pi].tensor;
            auto data = t.mutable_data();
            auto grad = t.grad();
            auto& m = m_[gi][pi];
            auto& v = v_[gi][pi];
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double gr = grad.empty() ? 0.0 : grad[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gr;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gr * gr;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                data[i] -= g.lr * (mhat / (std::sqrt(vhat) + eps_) + g.weight_decay * data[i]);
            }
        }
    }
}

void AdamW::zero_grad() {
    for (auto& g : groups_)
        for (auto& p : g.params) p.tensor.zero_grad();
}

void AdamW::scale_lr(double factor) {
    for (auto& g : groups_) g.lr *= factor;
}

double global_grad_norm(const std::vector<NamedParam>& params) {
    double s = 0.0;
    for (const auto& p : params)
        for (double v : p.tensor.grad()) s += v * v;
    return std::sqrt(s);
}

double clip_global_norm(std::vector<NamedParam>& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm > max_norm) {
        const double k = max_norm / norm;
        for (auto& p : params) {
            if (!p.tensor.has_grad()) continue;
            for (double& v : p.tensor.mutable_grad()) v *= k;
        }
    }
    return norm;
}

double PlateauScheduler::step(double val_loss) {
    if (!has_best || val_loss < best) {
        best = val_loss;
        has_best = true;
        wait = 0;
        return 1.0;
    }
    ++wait;
    if (wait > patience) {
        wait = 0;
        return factor;
    }
    return 1.0;
}

}  // namespace featherpoint

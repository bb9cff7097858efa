#include "featherpoint/losses.hpp"

#include <algorithm>
#include <cmath>

#include "featherpoint/error.hpp"
#include "featherpoint/ops.hpp"
#include "featherpoint/trace.hpp"

namespace featherpoint {

TeacherTargets preprocess_teacher(const Tensor& raw, std::size_t nms_radius, double threshold, double sigma_g) {
    if (raw.rank() != 4 || raw.dim(1) != 1) {
        throw ShapeError("preprocess_teacher: heatmap must be (N,1,H,W), got " + shape_str(raw.shape()));
    }
    if (!(sigma_g > 0.0)) throw ValueError("preprocess_teacher: sigma_g must be > 0");
    const std::size_t N = raw.dim(0), H = raw.dim(2), W = raw.dim(3);
    TeacherTargets t;
    std::vector<double> soft(N * H * W, 0.0);
    const double cutoff = 3.0 * sigma_g;
    const long rad = static_cast<long>(std::floor(cutoff));
    const double inv2s2 = 1.0 / (2.0 * sigma_g * sigma_g);
    auto src = raw.data();
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<double> plane(src.begin() + n * H * W, src.begin() + (n + 1) * H * W);
        auto kps = nms(Tensor::from(Shape{1, 1, H, W}, std::move(plane)), nms_radius);
        std::vector<Keypoint> hard;
        for (const auto& k : kps)
            if (k.score >= threshold) hard.push_back(k);
        double* s = soft.data() + n * H * W;
        for (const auto& k : hard) {
            for (long dy = -rad; dy <= rad; ++dy)
                for (long dx = -rad; dx <= rad; ++dx) {
                    const long y = k.y + dy, x = k.x + dx;
                    if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) continue;
                    const double d2 = static_cast<double>(dx * dx + dy * dy);
                    if (d2 > cutoff * cutoff) continue;
                    const double g = (dx == 0 && dy == 0) ? 1.0 : std::exp(-d2 * inv2s2);
                    double& cell = s[y * static_cast<long>(W) + x];
                    cell = std::max(cell, g);
                }
        }
        t.hard_points.push_back(std::move(hard));
    }
    t.soft_map = Tensor::from(Shape{N, 1, H, W}, std::move(soft));
    return t;
}

Tensor focal_detection_loss(const Tensor& pred, const TeacherTargets& targets, double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0) throw ValueError("focal_detection_loss: alpha and beta must be >= 0");
    if (pred.shape() != targets.soft_map.shape()) {
        throw ShapeError("focal_detection_loss: prediction " + shape_str(pred.shape()) + " vs targets " +
                         shape_str(targets.soft_map.shape()));
    }
    const std::size_t N = pred.dim(0), HW = pred.numel() / N;
    if (targets.hard_points.size() != N) throw ShapeError("focal_detection_loss: target batch size mismatch");
    std::vector<double> norm(N);
    for (std::size_t n = 0; n < N; ++n)
        norm[n] = 1.0 / (static_cast<double>(std::max<std::size_t>(1, targets.hard_points[n].size())) *
                         static_cast<double>(N));

    auto p = pred.data();
    auto y = targets.soft_map.data();
    const double lo = kFocalClampEps, hi = 1.0 - kFocalClampEps;
    double total = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        double s = 0.0;
        for (std::size_t i = n * HW; i < (n + 1) * HW; ++i) {
            const double pc = std::clamp(p[i], lo, hi);
            if (y[i] == 1.0) {
                s += std::pow(1.0 - pc, alpha) * std::log(pc);
            } else {
                s += std::pow(1.0 - y[i], beta) * std::pow(pc, alpha) * std::log(1.0 - pc);
            }
        }
        total -= s * norm[n];
    }
    auto r = make_result("focal_loss", Shape{1}, {total}, {pred, targets.soft_map},
                         [N, HW, norm, alpha, beta, lo, hi](Node& node) {
                             Node& pn = *node.parents[0];
                             if (!pn.requires_grad) return;
                             auto g = pn.ensure_grad();
                             const auto& pv = pn.data;
                             const auto& yv = node.parents[1]->data;
                             const double up = node.grad[0];
                             for (std::size_t n = 0; n < N; ++n)
                                 for (std::size_t i = n * HW; i < (n + 1) * HW; ++i) {
                                     if (pv[i] < lo || pv[i] > hi) continue;
                                     const double pc = pv[i];
                                     double d;
                                     if (yv[i] == 1.0) {
                                         d = -alpha * std::pow(1.0 - pc, alpha - 1.0) * std::log(pc) +
                                             std::pow(1.0 - pc, alpha) / pc;
                                     } else {
                                         const double w = std::pow(1.0 - yv[i], beta);
                                         const double pa1 = alpha == 0.0 ? 0.0 : alpha * std::pow(pc, alpha - 1.0);
                                         d = w * (pa1 * std::log(1.0 - pc) - std::pow(pc, alpha) / (1.0 - pc));
                                     }
                                     g[i] -= up * norm[n] * d;
                                 }
                         });
    trace_op("focal_loss", {&pred}, r, 0);
    return r;
}

namespace {

// Rows [r0, r1) of X^T X for a (D x M) matrix X, written to out[(r1-r0) x M].
void similarity_rows(const double* X, std::size_t D, std::size_t M, std::size_t r0, std::size_t r1, double* out) {
    std::fill(out, out + (r1 - r0) * M, 0.0);
    for (std::size_t c = 0; c < D; ++c) {
        const double* xc = X + c * M;
        for (std::size_t i = r0; i < r1; ++i) {
            const double xi = xc[i];
            double* row = out + (i - r0) * M;
            for (std::size_t j = 0; j < M; ++j) row[j] += xi * xc[j];
        }
    }
}

// In-place row softmax of S/tau; also returns log-probabilities.
void softmax_rows(double* S, double* logp, std::size_t rows, std::size_t M, double tau) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* s = S + i * M;
        double mx = -1e300;
        for (std::size_t j = 0; j < M; ++j) mx = std::max(mx, s[j] / tau);
        double z = 0.0;
        for (std::size_t j = 0; j < M; ++j) z += std::exp(s[j] / tau - mx);
        const double lz = std::log(z) + mx;
        for (std::size_t j = 0; j < M; ++j) {
            logp[i * M + j] = s[j] / tau - lz;
            s[j] = std::exp(logp[i * M + j]);
        }
    }
}

std::size_t resolve_chunk(std::size_t M, std::size_t chunk_rows) {
    if (chunk_rows) return std::min(chunk_rows, M);
    return M <= kRelationalDenseLimit ? M : 1024;
}

}  // namespace

Tensor relational_descriptor_loss(const Tensor& student, const Tensor& teacher, double tau, std::size_t chunk_rows) {
    if (!(tau > 0.0)) throw ValueError("relational_descriptor_loss: tau must be > 0");
    if (student.rank() != 4 || teacher.rank() != 4) throw ShapeError("relational_descriptor_loss: maps must be NCHW");
    if (student.dim(0) != teacher.dim(0) || student.dim(2) != teacher.dim(2) || student.dim(3) != teacher.dim(3)) {
        throw ShapeError("relational_descriptor_loss: spatial grid mismatch " + shape_str(student.shape()) + " vs " +
                         shape_str(teacher.shape()));
    }
    const std::size_t N = student.dim(0), Ds = student.dim(1), Dt = teacher.dim(1);
    const std::size_t M = student.dim(2) * student.dim(3);
    const std::size_t B = resolve_chunk(M, chunk_rows);
    auto xs = student.data();
    auto xt = teacher.data();

    double total = 0.0;
    {
        std::vector<double> ps(B * M), lps(B * M), pt(B * M), lpt(B * M);
        for (std::size_t n = 0; n < N; ++n) {
            const double* X = xs.data() + n * Ds * M;
            const double* Y = xt.data() + n * Dt * M;
            double acc = 0.0;
            for (std::size_t r0 = 0; r0 < M; r0 += B) {
                const std::size_t r1 = std::min(M, r0 + B), rows = r1 - r0;
                similarity_rows(X, Ds, M, r0, r1, ps.data());
                similarity_rows(Y, Dt, M, r0, r1, pt.data());
                softmax_rows(ps.data(), lps.data(), rows, M, tau);
                softmax_rows(pt.data(), lpt.data(), rows, M, tau);
                for (std::size_t k = 0; k < rows * M; ++k)
                    if (pt[k] > 0.0) acc += pt[k] * (lpt[k] - lps[k]);
            }
            total += acc / static_cast<double>(M);
        }
        total /= static_cast<double>(N);
    }

    auto r = make_result(
        "relational_loss", Shape{1}, {total}, {student, teacher}, [N, Ds, Dt, M, B, tau](Node& node) {
            Node& sn = *node.parents[0];
            if (!sn.requires_grad) return;
            auto g = sn.ensure_grad();
            const auto& xsv = sn.data;
            const auto& xtv = node.parents[1]->data;
            const double scale = node.grad[0] / (tau * static_cast<double>(M) * static_cast<double>(N));
            std::vector<double> ps(B * M), lps(B * M), pt(B * M), lpt(B * M);
            for (std::size_t n = 0; n < N; ++n) {
                const double* X = xsv.data() + n * Ds * M;
                const double* Y = xtv.data() + n * Dt * M;
                double* dX = g.data() + n * Ds * M;
                for (std::size_t r0 = 0; r0 < M; r0 += B) {
                    const std::size_t r1 = std::min(M, r0 + B), rows = r1 - r0;
                    similarity_rows(X, Ds, M, r0, r1, ps.data());
                    similarity_rows(Y, Dt, M, r0, r1, pt.data());
                    softmax_rows(ps.data(), lps.data(), rows, M, tau);
                    softmax_rows(pt.data(), lpt.data(), rows, M, tau);
                    // G = dL/dS_s for these rows, stored in ps
                    for (std::size_t k = 0; k < rows * M; ++k) ps[k] = scale * (ps[k] - pt[k]);
                    // S_s = X^T X: dX[:,i] += sum_j G_ij X[:,j];  dX[:,j] += sum_i G_ij X[:,i]
                    for (std::size_t c = 0; c < Ds; ++c) {
                        const double* xc = X + c * M;
                        double* dc = dX + c * M;
                        for (std::size_t i = r0; i < r1; ++i) {
                            const double* gr = ps.data() + (i - r0) * M;
                            double s = 0.0;
                            const double xi = xc[i];
                            for (std::size_t j = 0; j < M; ++j) {
                                s += gr[j] * xc[j];
                                dc[j] += gr[j] * xi;
                            }
                            dc[i] += s;
                        }
                    }
                }
            }
        });
    trace_op("relational_loss", {&student, &teacher}, r, 0);
    return r;
}

Tensor mse_descriptor_loss(const Tensor& student, const Tensor& teacher) {
    if (student.shape() != teacher.shape()) {
        throw ShapeError("mse_descriptor_loss: shapes differ " + shape_str(student.shape()) + " vs " +
                         shape_str(teacher.shape()));
    }
    return ops::mean(ops::square(ops::sub(student, teacher.detach())));
}

Tensor uncertainty_weighted_total(const Tensor& l_det, const Tensor& l_desc, const UncertaintyWeights& w) {
    auto det = ops::add(ops::mul(ops::exp(ops::neg(w.s_det)), l_det), w.s_det);
    auto desc = ops::add(ops::mul(ops::exp(ops::neg(w.s_desc)), l_desc), w.s_desc);
    return ops::add(det, desc);
}

double validation_total(double l_det, double l_desc) { return l_det + l_desc; }

}  // namespace featherpoint

#pragma once

#include <cstddef>

// Plain loops over row-major buffers. No blocking or SIMD intrinsics; the
// inner loops are written so the compiler can vectorize them.
namespace featherpoint::kernels {

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t kh, kw, stride, padding;
    std::size_t out_h, out_w;
};

// cols[(c*kh + i)*kw + j][oy*out_w + ox] = x[c][oy*s + i - p][ox*s + j - p] (0 outside)
inline void im2col(const ConvGeometry& g, const double* x, double* cols) {
    const std::size_t P = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                double* row = cols + ((c * g.kh + i) * g.kw + j) * P;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
                    double* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<long>(g.height)) {
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox] = 0.0;
                        continue;
                    }
                    const double* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(g.width)) ? 0.0 : src[ix];
                    }
                }
            }
}

// Adjoint of im2col: accumulates into dx.
inline void col2im(const ConvGeometry& g, const double* cols, double* dx) {
    const std::size_t P = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                const double* row = cols + ((c * g.kh + i) * g.kw + j) * P;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.padding);
                    if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                    double* dst = dx + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + j) - static_cast<long>(g.padding);
                        if (ix >= 0 && ix < static_cast<long>(g.width)) dst[ix] += row[oy * g.out_w + ox];
                    }
                }
            }
}

// C[M,N] += A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
    for (std::size_t m = 0; m < M; ++m) {
        double* c = C + m * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double a = A[m * K + k];
            if (a == 0.0) continue;
            const double* b = B + k * N;
            for (std::size_t n = 0; n < N; ++n) c[n] += a * b[n];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
    for (std::size_t m = 0; m < M; ++m) {
        const double* a = A + m * K;
        for (std::size_t n = 0; n < N; ++n) {
            const double* b = B + n * K;
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += a[k] * b[k];
            C[m * N + n] += s;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B, double* C) {
    for (std::size_t k = 0; k < K; ++k) {
        const double* b = B + k * N;
        for (std::size_t m = 0; m < M; ++m) {
            const double a = A[k * M + m];
            if (a == 0.0) continue;
            double* c = C + m * N;
            for (std::size_t n = 0; n < N; ++n) c[n] += a * b[n];
        }
    }
}

}  // namespace featherpoint::kernels

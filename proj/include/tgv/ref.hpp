#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace tgv::ref {

// Serial reference kernels, templated on the scalar type.
//
// These are deliberately independent of the OpenMP engine kernels: tests
// compare the two float paths bitwise, the double instantiation backs the
// finite-difference and dense-forward oracles, and the benchmark tool
// times serial vs parallel. Reductions use a double accumulator in the
// same fixed order as the engine.

template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n,
            bool trans_a = false, bool trans_b = false) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                const T av = trans_a ? a[p * m + i] : a[i * k + p];
                const T bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += double(av) * double(bv);
            }
            c[i * n + j] = T(acc);
        }
    }
}

template <typename T>
void conv2d(const T* x, const T* w, const T* bias, T* y,
            int cin, int h, int win, int cout, int kh, int kw,
            int stride, int pad) {
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (win + 2 * pad - kw) / stride + 1;
    for (int co = 0; co < cout; ++co) {
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = bias != nullptr ? double(bias[co]) : 0.0;
                for (int ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= win) continue;
                            acc += double(x[(ci * h + iy) * win + ix]) *
                                   double(w[((co * cin + ci) * kh + ky) * kw + kx]);
                        }
                    }
                }
                y[(co * ho + oy) * wo + ox] = T(acc);
            }
        }
    }
}

template <typename T>
void softmax_rows(T* x, int m, int n) {
    for (int i = 0; i < m; ++i) {
        T* row = x + size_t(i) * n;
        T mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            row[j] = T(std::exp(double(row[j] - mx)));
            sum += double(row[j]);
        }
        for (int j = 0; j < n; ++j) row[j] = T(double(row[j]) / sum);
    }
}

template <typename T>
void layer_norm_rows(T* x, const T* gamma, const T* beta, int m, int n, double eps) {
    for (int i = 0; i < m; ++i) {
        T* row = x + size_t(i) * n;
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += double(row[j]);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = double(row[j]) - mean;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < n; ++j) {
            row[j] = T((double(row[j]) - mean) * inv * double(gamma[j]) + double(beta[j]));
        }
    }
}

template <typename T>
T sigmoid(T v) {
    return T(1.0 / (1.0 + std::exp(-double(v))));
}

template <typename T>
std::vector<T> relu(std::vector<T> v) {
    for (auto& e : v) e = std::max(e, T(0));
    return v;
}

} // namespace tgv::ref

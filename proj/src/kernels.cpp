#include "tgv/kernels.hpp"

#include <string>

#include "tgv/error.hpp"

namespace tgv::kernels {

int conv_out_dim(int in, int kernel, int stride, int pad) {
    if (stride <= 0) throw ParamError("conv2d: stride must be positive, got " + std::to_string(stride));
    if (pad < 0) throw ParamError("conv2d: negative padding " + std::to_string(pad));
    const int span = in + 2 * pad - kernel;
    if (span < 0) {
        throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " does not fit padded input " +
                         std::to_string(in + 2 * pad));
    }
    return span / stride + 1;
}

void matmul(const float* a, const float* b, float* c,
            int m, int k, int n, bool trans_a, bool trans_b) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) {
                const float av = trans_a ? a[p * m + i] : a[i * k + p];
                const float bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += double(av) * double(bv);
            }
            c[i * n + j] = float(acc);
        }
    }
}

void conv2d(const float* x, const float* w, const float* bias, float* y,
            int cin, int h, int win, int cout, int kh, int kw,
            int stride, int pad) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(win, kw, stride, pad);
#pragma omp parallel for schedule(static)
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
                y[(co * ho + oy) * wo + ox] = float(acc);
            }
        }
    }
}

void conv2d_dx(const float* w, const float* gy, float* gx,
               int cin, int h, int win, int cout, int kh, int kw,
               int stride, int pad) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(win, kw, stride, pad);
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < cin; ++ci) {
        for (int iy = 0; iy < h; ++iy) {
            for (int ix = 0; ix < win; ++ix) {
                double acc = 0.0;
                for (int co = 0; co < cout; ++co) {
                    for (int ky = 0; ky < kh; ++ky) {
                        const int num_y = iy + pad - ky;
                        if (num_y < 0 || num_y % stride != 0) continue;
                        const int oy = num_y / stride;
                        if (oy >= ho) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int num_x = ix + pad - kx;
                            if (num_x < 0 || num_x % stride != 0) continue;
                            const int ox = num_x / stride;
                            if (ox >= wo) continue;
                            acc += double(w[((co * cin + ci) * kh + ky) * kw + kx]) *
                                   double(gy[(co * ho + oy) * wo + ox]);
                        }
                    }
                }
                gx[(ci * h + iy) * win + ix] += float(acc);
            }
        }
    }
}

void conv2d_dw(const float* x, const float* gy, float* gw,
               int cin, int h, int win, int cout, int kh, int kw,
               int stride, int pad) {
    const int ho = conv_out_dim(h, kh, stride, pad);
    const int wo = conv_out_dim(win, kw, stride, pad);
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        for (int ci = 0; ci < cin; ++ci) {
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= win) continue;
                            acc += double(x[(ci * h + iy) * win + ix]) *
                                   double(gy[(co * ho + oy) * wo + ox]);
                        }
                    }
                    gw[((co * cin + ci) * kh + ky) * kw + kx] += float(acc);
                }
            }
        }
    }
}

void conv2d_db(const float* gy, float* gb, int cout, int ho, int wo) {
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int i = 0; i < ho * wo; ++i) acc += double(gy[co * ho * wo + i]);
        gb[co] += float(acc);
    }
}

} // namespace tgv::kernels

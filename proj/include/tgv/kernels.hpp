#pragma once

#include <cstdint>

namespace tgv::kernels {

// OpenMP-parallel float kernels used by the tensor ops. Work is
// partitioned over output elements only; every output is produced by one
// thread running the same serial reduction (double accumulator, fixed
// order), so results are bitwise identical for any thread count and match
// the serial reference in tgv::ref.

// c[m,n] = op(a) x op(b); op transposes when the flag is set.
// a is [m,k] (or [k,m] if trans_a), b is [k,n] (or [n,k] if trans_b).
void matmul(const float* a, const float* b, float* c,
            int m, int k, int n, bool trans_a, bool trans_b);

// Cross-correlation. x is [cin,h,w], w is [cout,cin,kh,kw],
// y is [cout,ho,wo], bias is [cout] or nullptr.
void conv2d(const float* x, const float* w, const float* bias, float* y,
            int cin, int h, int win, int cout, int kh, int kw,
            int stride, int pad);

// Gradients of conv2d; gy is [cout,ho,wo].
void conv2d_dx(const float* w, const float* gy, float* gx,
               int cin, int h, int win, int cout, int kh, int kw,
               int stride, int pad);
void conv2d_dw(const float* x, const float* gy, float* gw,
               int cin, int h, int win, int cout, int kh, int kw,
               int stride, int pad);
void conv2d_db(const float* gy, float* gb, int cout, int ho, int wo);

// Output spatial size for one axis; throws ParamError / ShapeError on
// invalid settings.
int conv_out_dim(int in, int kernel, int stride, int pad);

} // namespace tgv::kernels

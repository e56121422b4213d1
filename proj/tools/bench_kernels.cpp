// Times the OpenMP kernels against the serial reference and checks that
// both produce bitwise-identical results.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tgv/kernels.hpp"
#include "tgv/ref.hpp"
#include "tgv/rng.hpp"

namespace {

using clock_type = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    const auto t0 = clock_type::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = clock_type::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void fill(std::vector<float>& v, tgv::Rng& rng) {
    for (auto& e : v) e = rng.next_float() - 0.5f;
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp enabled, max threads = %d\n", omp_get_max_threads());
#else
    std::printf("openmp disabled (serial build)\n");
#endif
    tgv::Rng rng(1);

    std::printf("\n%-28s %12s %12s %9s %8s\n", "kernel", "serial ms", "omp ms", "speedup", "bitwise");

    for (int n : {64, 128, 256, 384}) {
        std::vector<float> a(size_t(n) * n), b(size_t(n) * n);
        std::vector<float> c_ref(size_t(n) * n), c_omp(size_t(n) * n);
        fill(a, rng);
        fill(b, rng);
        const int reps = n <= 128 ? 20 : 5;
        const double ms_ref =
            time_ms([&] { tgv::ref::matmul<float>(a.data(), b.data(), c_ref.data(), n, n, n); }, reps);
        const double ms_omp = time_ms(
            [&] { tgv::kernels::matmul(a.data(), b.data(), c_omp.data(), n, n, n, false, false); },
            reps);
        const bool same = std::memcmp(c_ref.data(), c_omp.data(), c_ref.size() * sizeof(float)) == 0;
        std::printf("matmul %4dx%-4d              %12.3f %12.3f %8.2fx %8s\n", n, n, ms_ref, ms_omp,
                    ms_ref / ms_omp, same ? "yes" : "NO");
    }

    for (int hw : {64, 128, 224}) {
        const int cin = 8, cout = 16, k = 3;
        std::vector<float> x(size_t(cin) * hw * hw), w(size_t(cout) * cin * k * k), bias(cout);
        fill(x, rng);
        fill(w, rng);
        fill(bias, rng);
        std::vector<float> y_ref(size_t(cout) * hw * hw), y_omp(y_ref.size());
        const int reps = hw <= 128 ? 10 : 3;
        const double ms_ref = time_ms(
            [&] {
                tgv::ref::conv2d<float>(x.data(), w.data(), bias.data(), y_ref.data(), cin, hw, hw,
                                        cout, k, k, 1, 1);
            },
            reps);
        const double ms_omp = time_ms(
            [&] {
                tgv::kernels::conv2d(x.data(), w.data(), bias.data(), y_omp.data(), cin, hw, hw,
                                     cout, k, k, 1, 1);
            },
            reps);
        const bool same = std::memcmp(y_ref.data(), y_omp.data(), y_ref.size() * sizeof(float)) == 0;
        std::printf("conv2d 8->16 3x3 @%4dx%-4d  %12.3f %12.3f %8.2fx %8s\n", hw, hw, ms_ref,
                    ms_omp, ms_ref / ms_omp, same ? "yes" : "NO");
    }
    return 0;
}

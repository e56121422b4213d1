#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "tgv/checkpoint.hpp"
#include "tgv/flops.hpp"
#include "tgv/kernels.hpp"
#include "tgv/ref.hpp"
#include "tgv/rng.hpp"
#include "tgv/tensor.hpp"

using namespace tgv;

namespace {

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

} // namespace

TEST_CASE("matmul identity and hand-checked product") {
    Rng rng(7);
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::rand_uniform({2, 2}, rng, -2.0f, 2.0f);
    Tensor r = matmul(eye, a);
    for (size_t i = 0; i < 4; ++i) CHECK(r.at(i) == a.at(i));

    Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor y = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor p = matmul(x, y);
    CHECK(p.at(0) == 19.0f);
    CHECK(p.at(1) == 22.0f);
    CHECK(p.at(2) == 43.0f);
    CHECK(p.at(3) == 50.0f);
}

TEST_CASE("matmul meters 2*m*k*n flops under the caller's stage") {
    FlopsLedger ledger;
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    {
        FlopsScope scope(ledger, "mm");
        matmul(a, b);
    }
    CHECK(ledger.stage("mm") == 16);
    CHECK(ledger.total() == 16);
    // no active scope: not metered
    matmul(a, b);
    CHECK(ledger.total() == 16);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("conv2d basics") {
    SUBCASE("all-zero input gives all-zero output") {
        Tensor x = Tensor::zeros({2, 5, 5});
        Tensor w = Tensor::from_data({3, 2, 3, 3}, std::vector<float>(54, 0.5f));
        Tensor y = conv2d(x, w, {}, 1, 1);
        for (size_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == 0.0f);
    }
    SUBCASE("1x1 unit kernel is the identity on one channel") {
        Rng rng(3);
        Tensor x = Tensor::rand_uniform({1, 4, 4}, rng, -1.0f, 1.0f);
        Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0f});
        Tensor y = conv2d(x, w, {}, 1, 0);
        REQUIRE(y.shape() == Shape{1, 4, 4});
        for (size_t i = 0; i < 16; ++i) CHECK(y.at(i) == x.at(i));
    }
    SUBCASE("non-positive stride is a parameter error") {
        Tensor x = Tensor::zeros({1, 4, 4});
        Tensor w = Tensor::zeros({1, 1, 2, 2});
        CHECK_THROWS_AS(conv2d(x, w, {}, 0, 0), ParamError);
        CHECK_THROWS_AS(conv2d(x, w, {}, -1, 0), ParamError);
    }
}

TEST_CASE("conv2d matches sliding-window brute force") {
    Rng rng(11);
    Tensor x = Tensor::rand_uniform({1, 4, 4}, rng, -1.0f, 1.0f);
    Tensor w = Tensor::rand_uniform({1, 1, 2, 2}, rng, -1.0f, 1.0f);
    Tensor y = conv2d(x, w, {}, 1, 0);
    REQUIRE(y.shape() == Shape{1, 3, 3});
    // independent quadruple-loop tally
    for (int oy = 0; oy < 3; ++oy) {
        for (int ox = 0; ox < 3; ++ox) {
            double acc = 0.0;
            for (int ky = 0; ky < 2; ++ky)
                for (int kx = 0; kx < 2; ++kx)
                    acc += double(x.at((oy + ky) * 4 + ox + kx)) * double(w.at(ky * 2 + kx));
            CHECK(rel_err(y.at(oy * 3 + ox), acc) < 1e-6);
        }
    }
}

TEST_CASE("conv2d flops formula") {
    FlopsLedger ledger;
    Tensor x = Tensor::zeros({3, 8, 8});
    Tensor w = Tensor::zeros({4, 3, 3, 3});
    {
        FlopsScope scope(ledger, "conv");
        conv2d(x, w, {}, 1, 1); // out 4x8x8
    }
    CHECK(ledger.stage("conv") == 2ull * 4 * 3 * 3 * 3 * 8 * 8);
}

TEST_CASE("backward: sum gives ones, square gives 2x") {
    Tensor x = Tensor::rand_uniform({3, 2}, *new Rng(5), -1.0f, 1.0f, true);
    Tensor s = sum_all(x);
    s.backward();
    for (float g : x.grad()) CHECK(g == 1.0f);

    Tensor v = Tensor::scalar(3.0f, true);
    Tensor sq = mul(v, v);
    sq.backward();
    CHECK(v.grad()[0] == 6.0f);
}

TEST_CASE("backward requires a scalar loss") {
    Tensor x = Tensor::zeros({2, 2}, true);
    Tensor y = add(x, x);
    CHECK_THROWS_AS(y.backward(), ParamError);
}

TEST_CASE("grads accumulate across backward calls") {
    Tensor x = Tensor::scalar(2.0f, true);
    sum_all(scale(x, 3.0f)).backward();
    CHECK(x.grad()[0] == 3.0f);
    sum_all(scale(x, 3.0f)).backward();
    CHECK(x.grad()[0] == 6.0f);
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0f);
}

// Double-precision replica of a 3-layer MLP used as the finite-difference
// oracle for the reverse-mode pass.
namespace {

struct MlpParams {
    std::vector<double> w1, b1, w2, b2, w3, b3;
    int d_in = 4, d_h = 8, d_out = 3;
};

double mlp_loss_ref(const MlpParams& p, const std::vector<double>& x,
                    const std::vector<double>& proj) {
    std::vector<double> h1(p.d_h, 0.0), h2(p.d_h, 0.0), out(p.d_out, 0.0);
    for (int j = 0; j < p.d_h; ++j) {
        double acc = p.b1[j];
        for (int i = 0; i < p.d_in; ++i) acc += x[i] * p.w1[i * p.d_h + j];
        h1[j] = std::max(acc, 0.0);
    }
    for (int j = 0; j < p.d_h; ++j) {
        double acc = p.b2[j];
        for (int i = 0; i < p.d_h; ++i) acc += h1[i] * p.w2[i * p.d_h + j];
        h2[j] = std::max(acc, 0.0);
    }
    double loss = 0.0;
    for (int j = 0; j < p.d_out; ++j) {
        double acc = p.b3[j];
        for (int i = 0; i < p.d_h; ++i) acc += h2[i] * p.w3[i * p.d_out + j];
        out[j] = 1.0 / (1.0 + std::exp(-acc));
        loss += out[j] * proj[j];
    }
    return loss;
}

} // namespace

TEST_CASE("backward matches central finite differences on a 3-layer MLP") {
    Rng rng(42);
    MlpParams p;
    auto fill = [&](std::vector<double>& v, size_t n) {
        v.resize(n);
        for (auto& e : v) e = rng.uniform(-0.8, 0.8);
    };
    fill(p.w1, 4 * 8);
    fill(p.b1, 8);
    fill(p.w2, 8 * 8);
    fill(p.b2, 8);
    fill(p.w3, 8 * 3);
    fill(p.b3, 3);
    std::vector<double> x(4), proj(3);
    for (auto& e : x) e = rng.uniform(-1.0, 1.0);
    for (auto& e : proj) e = rng.uniform(-1.0, 1.0);

    auto to_f = [](const std::vector<double>& v) {
        std::vector<float> out(v.begin(), v.end());
        return out;
    };
    Tensor w1 = Tensor::from_data({4, 8}, to_f(p.w1), true);
    Tensor b1 = Tensor::from_data({8}, to_f(p.b1), true);
    Tensor w2 = Tensor::from_data({8, 8}, to_f(p.w2), true);
    Tensor b2 = Tensor::from_data({8}, to_f(p.b2), true);
    Tensor w3 = Tensor::from_data({8, 3}, to_f(p.w3), true);
    Tensor b3 = Tensor::from_data({3}, to_f(p.b3), true);
    Tensor xt = Tensor::from_data({1, 4}, to_f(x));
    Tensor pj = Tensor::from_data({1, 3}, to_f(proj));

    Tensor h1 = relu(add_rowvec(matmul(xt, w1), b1));
    Tensor h2 = relu(add_rowvec(matmul(h1, w2), b2));
    Tensor out = sigmoid(add_rowvec(matmul(h2, w3), b3));
    Tensor loss = sum_all(mul(out, pj));
    loss.backward();

    const double h = 1e-3;
    double max_rel = 0.0;
    auto check_param = [&](std::vector<double>& ref_v, Tensor& t) {
        for (size_t i = 0; i < ref_v.size(); ++i) {
            const double saved = ref_v[i];
            ref_v[i] = saved + h;
            const double lp = mlp_loss_ref(p, x, proj);
            ref_v[i] = saved - h;
            const double lm = mlp_loss_ref(p, x, proj);
            ref_v[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            max_rel = std::max(max_rel, rel_err(t.grad()[i], fd));
        }
    };
    check_param(p.w1, w1);
    check_param(p.b1, b1);
    check_param(p.w2, w2);
    check_param(p.b2, b2);
    check_param(p.w3, w3);
    check_param(p.b3, b3);
    CHECK(max_rel < 1e-3);
}

TEST_CASE("layer norm and softmax gradients match finite differences") {
    // small shapes, double-precision oracle per element
    Rng rng(9);
    const int m = 3, n = 5;
    Tensor x = Tensor::rand_uniform({m, n}, rng, -1.5f, 1.5f, true);
    Tensor gamma = Tensor::rand_uniform({n}, rng, 0.5f, 1.5f, true);
    Tensor beta = Tensor::rand_uniform({n}, rng, -0.5f, 0.5f, true);
    Tensor proj = Tensor::rand_uniform({m, n}, rng, -1.0f, 1.0f);

    auto loss_ref = [&](const std::vector<double>& xv, const std::vector<double>& gv,
                        const std::vector<double>& bv) {
        double loss = 0.0;
        for (int i = 0; i < m; ++i) {
            double mu = 0.0;
            for (int j = 0; j < n; ++j) mu += xv[i * n + j];
            mu /= n;
            double var = 0.0;
            for (int j = 0; j < n; ++j) var += (xv[i * n + j] - mu) * (xv[i * n + j] - mu);
            var /= n;
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            // softmax of the normalized row
            std::vector<double> y(n);
            double mx = -1e30;
            for (int j = 0; j < n; ++j) {
                y[j] = (xv[i * n + j] - mu) * inv * gv[j] + bv[j];
                mx = std::max(mx, y[j]);
            }
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                y[j] = std::exp(y[j] - mx);
                sum += y[j];
            }
            for (int j = 0; j < n; ++j) loss += y[j] / sum * double(proj.at(i * n + j));
        }
        return loss;
    };

    Tensor out = softmax_rows(layer_norm_rows(x, gamma, beta));
    sum_all(mul(out, proj)).backward();

    std::vector<double> xv(x.data().begin(), x.data().end());
    std::vector<double> gv(gamma.data().begin(), gamma.data().end());
    std::vector<double> bv(beta.data().begin(), beta.data().end());
    const double h = 1e-3;
    double max_rel = 0.0;
    auto fd_check = [&](std::vector<double>& v, Tensor& t) {
        for (size_t i = 0; i < v.size(); ++i) {
            const double saved = v[i];
            v[i] = saved + h;
            const double lp = loss_ref(xv, gv, bv);
            v[i] = saved - h;
            const double lm = loss_ref(xv, gv, bv);
            v[i] = saved;
            max_rel = std::max(max_rel, rel_err(t.grad()[i], (lp - lm) / (2 * h)));
        }
    };
    fd_check(xv, x);
    fd_check(gv, gamma);
    fd_check(bv, beta);
    CHECK(max_rel < 1e-3);
}

TEST_CASE("softmax rows sum to one, sigmoid stays inside (0,1)") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor x = Tensor::rand_uniform({4, 7}, rng, -30.0f, 30.0f);
        Tensor sm = softmax_rows(x);
        for (int i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 7; ++j) sum += sm.at(i * 7 + j);
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
        Tensor sg = sigmoid(x);
        for (size_t i = 0; i < sg.numel(); ++i) {
            CHECK(sg.at(i) > 0.0f);
            CHECK(sg.at(i) < 1.0f);
        }
    }
}

TEST_CASE("rng is reproducible and distinct per seed") {
    Rng a(123), b(123), c(124);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        uint64_t av = a.next_u64();
        all_equal = all_equal && (av == b.next_u64());
        any_diff = any_diff || (av != c.next_u64());
    }
    CHECK(all_equal);
    CHECK(any_diff);
    // documented first draw for seed 1 (splitmix64)
    Rng s(0);
    CHECK(s.next_u64() == 0xE220A8397B1DCDAFull);
}

TEST_CASE("omp kernels match the serial reference bitwise") {
    Rng rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        const int m = 1 + int(rng.next_below(17));
        const int k = 1 + int(rng.next_below(17));
        const int n = 1 + int(rng.next_below(17));
        std::vector<float> a(size_t(m) * k), b(size_t(k) * n);
        for (auto& v : a) v = rng.next_float() * 4.0f - 2.0f;
        for (auto& v : b) v = rng.next_float() * 4.0f - 2.0f;
        std::vector<float> c1(size_t(m) * n), c2(size_t(m) * n);
        kernels::matmul(a.data(), b.data(), c1.data(), m, k, n, false, false);
        ref::matmul<float>(a.data(), b.data(), c2.data(), m, k, n);
        CHECK(std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(float)) == 0);
    }
    for (int trial = 0; trial < 5; ++trial) {
        const int cin = 1 + int(rng.next_below(3));
        const int cout = 1 + int(rng.next_below(4));
        const int h = 5 + int(rng.next_below(8));
        const int w = 5 + int(rng.next_below(8));
        std::vector<float> x(size_t(cin) * h * w), wt(size_t(cout) * cin * 9), bias(cout);
        for (auto& v : x) v = rng.next_float() - 0.5f;
        for (auto& v : wt) v = rng.next_float() - 0.5f;
        for (auto& v : bias) v = rng.next_float() - 0.5f;
        const int ho = (h + 2 - 3) / 1 + 1, wo = (w + 2 - 3) / 1 + 1;
        std::vector<float> y1(size_t(cout) * ho * wo), y2(size_t(cout) * ho * wo);
        kernels::conv2d(x.data(), wt.data(), bias.data(), y1.data(), cin, h, w, cout, 3, 3, 1, 1);
        ref::conv2d<float>(x.data(), wt.data(), bias.data(), y2.data(), cin, h, w, cout, 3, 3, 1, 1);
        CHECK(std::memcmp(y1.data(), y2.data(), y1.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("flops ledger is deterministic across identical runs") {
    auto run = [] {
        FlopsLedger ledger;
        Rng rng(2024);
        FlopsScope scope(ledger, "work");
        Tensor a = Tensor::rand_uniform({6, 5}, rng, -1.0f, 1.0f);
        Tensor b = Tensor::rand_uniform({5, 4}, rng, -1.0f, 1.0f);
        Tensor c = softmax_rows(matmul(a, b));
        sum_all(c);
        return ledger;
    };
    FlopsLedger l1 = run();
    FlopsLedger l2 = run();
    CHECK(l1.total() == l2.total());
    CHECK(l1.entries() == l2.entries());
    CHECK(l1.total() > 0);
    // total equals the sum of entries
    uint64_t sum = 0;
    for (const auto& [k, v] : l1.entries()) sum += v;
    CHECK(sum == l1.total());
}

TEST_CASE("checkpoint round trips") {
    SUBCASE("empty map is a header-only file") {
        auto bytes = save_checkpoint({});
        CHECK(bytes.size() == 8);
        CHECK(load_checkpoint(bytes).empty());
    }
    SUBCASE("single tensor round-trips bit-exactly") {
        TensorMap m;
        m.emplace("w", Tensor::from_data({3}, {1.0f, 2.0f, 3.0f}));
        auto loaded = load_checkpoint(save_checkpoint(m));
        REQUIRE(loaded.count("w") == 1);
        CHECK(loaded.at("w").shape() == Shape{3});
        for (int i = 0; i < 3; ++i) CHECK(loaded.at("w").at(i) == float(i + 1));
    }
    SUBCASE("50 random tensors survive a byte-compare round trip") {
        Rng rng(31);
        TensorMap m;
        for (int i = 0; i < 50; ++i) {
            Shape shape{uint32_t(1 + rng.next_below(6)), uint32_t(1 + rng.next_below(6))};
            m.emplace("tensor_" + std::to_string(i), Tensor::randn(shape, rng));
        }
        auto bytes = save_checkpoint(m);
        auto loaded = load_checkpoint(bytes);
        auto bytes2 = save_checkpoint(loaded);
        CHECK(bytes == bytes2);
        CHECK(loaded.size() == 50);
    }
    SUBCASE("bad magic and version are rejected") {
        auto bytes = save_checkpoint({});
        bytes[0] = 'X';
        CHECK_THROWS_AS(load_checkpoint(bytes), FormatError);
        bytes = save_checkpoint({});
        bytes[4] = 99;
        CHECK_THROWS_AS(load_checkpoint(bytes), FormatError);
    }
    SUBCASE("truncated payload names the offending tensor") {
        TensorMap m;
        m.emplace("weights", Tensor::from_data({4}, {1, 2, 3, 4}));
        auto bytes = save_checkpoint(m);
        bytes.resize(bytes.size() - 6);
        try {
            load_checkpoint(bytes);
            FAIL("expected CorruptFileError");
        } catch (const CorruptFileError& e) {
            CHECK(std::string(e.what()).find("weights") != std::string::npos);
        }
    }
}

TEST_CASE("no-grad guard suppresses graph building") {
    Tensor x = Tensor::scalar(2.0f, true);
    Tensor y;
    {
        NoGradGuard guard;
        y = mul(x, x);
    }
    CHECK(y.is_leaf());
    Tensor z = mul(x, x);
    CHECK_FALSE(z.is_leaf());
}

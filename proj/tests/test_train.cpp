#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tgv/train.hpp"

using namespace tgv;

TEST_CASE("composite loss") {
    SUBCASE("zero weights reduce to the task loss") {
        LossConfig cfg{0.0f, 0.0f, 0.0f};
        Tensor l = composite_loss(Tensor::scalar(1.7f), Tensor::scalar(10.0f), Tensor::scalar(5.0f), cfg);
        CHECK(l.item() == 1.7f);
    }
    SUBCASE("hand-checked weighted sum: 1 + 0.1 + 0.1 = 1.2") {
        LossConfig cfg{0.01f, 0.02f, 0.0f};
        Tensor l = composite_loss(Tensor::scalar(1.0f), Tensor::scalar(10.0f), Tensor::scalar(5.0f), cfg);
        CHECK(l.item() == doctest::Approx(1.2f).epsilon(1e-6));
    }
    SUBCASE("zero surrogates leave the task loss untouched for any lambda") {
        LossConfig cfg{5.0f, 9.0f, 0.0f};
        Tensor l = composite_loss(Tensor::scalar(0.37f), Tensor::scalar(0.0f), Tensor::scalar(0.0f), cfg);
        CHECK(l.item() == 0.37f);
    }
    SUBCASE("linearity in lambda1 for fixed surrogates") {
        const float token = 7.0f, gate = 3.0f, task = 0.5f;
        auto total = [&](float l1) {
            return composite_loss(Tensor::scalar(task), Tensor::scalar(token), Tensor::scalar(gate),
                                  LossConfig{l1, 0.02f, 0.0f})
                .item();
        };
        const float t0 = total(0.0f), t1 = total(0.1f), t2 = total(0.2f);
        CHECK(double(t1) - t0 == doctest::Approx(double(t2) - t1).epsilon(1e-5));
    }
    SUBCASE("NaN input names the offending term") {
        LossConfig cfg;
        try {
            composite_loss(Tensor::scalar(std::nanf("")), Tensor::scalar(0.0f), Tensor::scalar(0.0f), cfg);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("task_loss") != std::string::npos);
        }
        try {
            composite_loss(Tensor::scalar(1.0f), Tensor::scalar(std::nanf("")), Tensor::scalar(0.0f), cfg);
            FAIL("expected NumericError");
        } catch (const NumericError& e) {
            CHECK(std::string(e.what()).find("token_l0_relaxed") != std::string::npos);
        }
    }
}

TEST_CASE("motion samples carry a direction signature") {
    Rng rng(5);
    MotionSample s = make_motion_sample(32, 32, 0, rng);
    CHECK(s.x.shape() == Shape{3, 32, 32});
    CHECK(s.e.counts.shape() == Shape{2, 32, 32});
    // a +x move has ON events strictly right of OFF events on each row
    double on_x = 0, off_x = 0, on_n = 0, off_n = 0;
    for (uint32_t y = 0; y < 32; ++y) {
        for (uint32_t x = 0; x < 32; ++x) {
            off_x += double(s.e.counts.at((0 * 32 + y) * 32 + x)) * x;
            off_n += s.e.counts.at((0 * 32 + y) * 32 + x);
            on_x += double(s.e.counts.at((1 * 32 + y) * 32 + x)) * x;
            on_n += s.e.counts.at((1 * 32 + y) * 32 + x);
        }
    }
    REQUIRE(on_n > 0);
    REQUIRE(off_n > 0);
    CHECK(on_x / on_n > off_x / off_n);
}

TEST_CASE("lr=0 leaves every weight bit-exact") {
    TrainConfig cfg;
    cfg.steps = 3;
    cfg.lr = 0.0f;
    cfg.task.train_size = 8;
    cfg.task.val_size = 4;
    Trainer t(cfg);
    TensorMap before;
    for (auto& [name, tensor] : t.model().named_params()) before.emplace(name, tensor.detach());
    t.run(3);
    for (auto& [name, tensor] : t.model().named_params()) {
        CHECK(tensor.data() == before.at(name).data());
    }
}

TEST_CASE("training is deterministic given the seed") {
    auto run = [] {
        TrainConfig cfg;
        cfg.steps = 5;
        cfg.task.train_size = 8;
        cfg.task.val_size = 4;
        Trainer t(cfg);
        t.run(5);
        std::vector<float> bytes;
        for (auto& [name, tensor] : t.model().named_params()) {
            bytes.insert(bytes.end(), tensor.data().begin(), tensor.data().end());
        }
        return bytes;
    };
    CHECK(run() == run());
}

TEST_CASE("short motion run reduces the loss") {
    TrainConfig cfg;
    cfg.task.train_size = 16;
    cfg.task.val_size = 8;
    cfg.batch_size = 8;
    cfg.lr = 0.05f;
    Trainer t(cfg);
    auto reports = t.run(60);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 5; ++i) early += reports[i].surrogates.task_loss;
    for (int i = 55; i < 60; ++i) late += reports[i].surrogates.task_loss;
    CHECK(late < early);
}

TEST_CASE("token echo task trains the decoder") {
    TrainConfig cfg;
    cfg.task.kind = ToyTaskKind::token_echo;
    cfg.task.train_size = 16;
    cfg.task.val_size = 0;
    cfg.batch_size = 4;
    cfg.lr = 0.1f;
    Trainer t(cfg);
    auto reports = t.run(50);
    CHECK(reports.back().surrogates.task_loss < reports.front().surrogates.task_loss * 0.8);
}

TEST_CASE("token surrogate stays within [0, n_patches]") {
    TrainConfig cfg;
    cfg.task.train_size = 8;
    cfg.task.val_size = 0;
    Trainer t(cfg);
    auto reports = t.run(4);
    const double n_patches = double((cfg.height / cfg.patch) * (cfg.width / cfg.patch));
    for (const auto& r : reports) {
        CHECK(r.surrogates.token_l0_relaxed >= 0.0f);
        CHECK(double(r.surrogates.token_l0_relaxed) <= n_patches);
    }
}

TEST_CASE("tau latency loss is monotone in tau") {
    std::vector<float> cosines = {0.6f, 0.8f, 0.95f};
    auto at = [&](float tau) {
        return tau_latency_loss(cosines, Tensor::scalar(tau), 1.0f).item();
    };
    CHECK(at(0.7f) < at(0.9f)); // higher threshold -> fewer fused -> more distinct tokens
    CHECK(tau_latency_loss({}, Tensor::scalar(0.9f), 1.0f).item() == 0.0f);
}

TEST_CASE("gradient suite: every component under 1e-3, linear exact") {
    auto reports = grad_check_all(7);
    REQUIRE(!reports.empty());
    bool saw_linear = false;
    for (const auto& r : reports) {
        INFO(r.component, " max_rel=", r.max_rel, " checked=", r.checked);
        CHECK(r.pass);
        CHECK(r.max_rel < 1e-3);
        CHECK(r.checked > 0);
        if (r.component == "linear") {
            saw_linear = true;
            CHECK(r.max_rel < 1e-6);
        }
    }
    CHECK(saw_linear);
    CHECK(all_pass(reports));
    // the suite names the components it covers
    std::vector<std::string> want = {"linear",      "gate_cnn",    "fusion_gate",
                                     "tau_policy",  "router",      "budget_gate",
                                     "decoder_sttf", "decoder_anc", "complexity_estimator"};
    for (const auto& name : want) {
        bool found = false;
        for (const auto& r : reports) found = found || r.component == name;
        CHECK_MESSAGE(found, "missing component ", name);
    }
}

#include "tgv/verify.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tgv/checkpoint.hpp"
#include "tgv/oracle.hpp"
#include "tgv/train.hpp"

namespace tgv::verify {

namespace {

std::string fmt(double v) {
    char buf[32];
    snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

EventFrame saturated(uint32_t h, uint32_t w) {
    EventFrame f = voxelize({}, h, w, 0, kFrameWindowUs);
    std::fill(f.counts.data().begin(), f.counts.data().end(), 5.0f);
    return f;
}

CheckResult dense_equivalence(uint64_t seed) {
    CheckResult c{"dense_equivalence", true, ""};
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        SttfConfig cfg;
        cfg.height = cfg.width = trial % 2 == 0 ? 32 : 48;
        cfg.patch = 8;
        cfg.dim = trial % 3 == 0 ? 16 : 32;
        cfg.depth = 1 + trial % 2;
        cfg.dec_layers = 1;
        cfg.vocab = 32;
        cfg.context = 8;
        cfg.tau = 1.01f;
        cfg.seed = seed + uint64_t(trial);
        SttfModel m = SttfModel::init(cfg);
        Rng rng(seed + 100 + uint64_t(trial));
        Tensor x = Tensor::rand_uniform({3, cfg.height, cfg.width}, rng, 0.0f, 1.0f);
        FlopsLedger l;
        TokenBank bank = full_encode(x, m, l);
        const std::vector<double> want = oracle::dense_encode(x, m);
        for (size_t i = 0; i < want.size(); ++i) {
            const double got = bank.tokens.at(i);
            worst = std::max(worst, std::abs(got - want[i]) /
                                        std::max({std::abs(got), std::abs(want[i]), 1.0}));
        }
    }
    c.pass = worst < 1e-5;
    c.detail = "max rel err " + fmt(worst) + " (tolerance 1e-5, unit-scale floor)";
    return c;
}

CheckResult cache_exactness(uint64_t seed) {
    CheckResult c{"cache_exactness", true, ""};
    SttfConfig cfg;
    cfg.height = cfg.width = 32;
    cfg.patch = 8;
    cfg.dim = 16;
    cfg.depth = 2;
    cfg.dec_layers = 1;
    cfg.vocab = 32;
    cfg.context = 8;
    cfg.seed = seed;
    SttfModel m = SttfModel::init(cfg);
    Rng rng(seed + 1);
    Tensor x = Tensor::rand_uniform({3, 32, 32}, rng, 0.0f, 1.0f);
    FlopsLedger l;
    SttfStepResult first = sttf_step(m, x, voxelize({}, 32, 32, 0, kFrameWindowUs), {1}, nullptr, l);
    SttfStepResult second = sttf_step(m, x, voxelize({}, 32, 32, kFrameWindowUs, 2 * kFrameWindowUs),
                                      {1}, &first.state, l);
    const bool bit_equal = second.state.tokens.data() == first.state.tokens.data();
    const bool no_encoder = second.metrics.stage_flops.count("sparse_encoder") == 0;
    c.pass = bit_equal && no_encoder;
    c.detail = std::string("bank bit-identical: ") + (bit_equal ? "yes" : "NO") +
               ", sparse_encoder delta 0: " + (no_encoder ? "yes" : "NO");
    return c;
}

CheckResult router_weights_sum(uint64_t seed) {
    CheckResult c{"router_weight_identities", true, ""};
    Rng rng(seed);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        float a = float(rng.uniform(0.01, 1.0)), b = float(rng.uniform(0.01, 1.0)),
              d = float(rng.uniform(0.01, 1.0));
        const float sum = a + b + d;
        ComplexityScores s;
        s.p = Tensor::from_data({1, 3}, {a / sum, b / sum, d / sum});
        RoutingDecision r = gumbel_route(s, 0.5f, rng, RouteMode::infer);
        worst = std::max(worst, std::abs(double(r.w[0]) + r.w[1] + r.w[2] - 1.0));
        if (r.active.empty()) c.pass = false;
    }
    ComplexityScores sharp;
    sharp.p = Tensor::from_data({1, 3}, {0.98f, 0.01f, 0.01f});
    RoutingDecision r = gumbel_route(sharp, 0.01f, rng, RouteMode::infer);
    const float peak = *std::max_element(r.w.begin(), r.w.end());
    c.pass = c.pass && worst < 1e-6 && peak >= 0.99f;
    c.detail = "max |sum-1| " + fmt(worst) + " (tol 1e-6); sharp peak " + fmt(peak) + " (>= 0.99)";
    return c;
}

CheckResult router_gradients(uint64_t seed) {
    CheckResult c{"router_gradients", true, ""};
    Rng rng(seed);
    double worst = 0.0;
    for (int t = 0; t < 50 && c.pass; ++t) {
        float a = float(rng.uniform(0.05, 1.0)), b = float(rng.uniform(0.05, 1.0)),
              d = float(rng.uniform(0.05, 1.0));
        const float sum = a + b + d;
        Tensor p = Tensor::from_data({1, 3}, {a / sum, b / sum, d / sum}, true);
        std::array<float, 3> noise = {float(rng.gumbel()), float(rng.gumbel()), float(rng.gumbel())};
        Tensor proj = Tensor::randn({1, 3}, rng);
        auto engine = [&] {
            Tensor logits = add(log_op(p), Tensor::from_data({1, 3}, {noise[0], noise[1], noise[2]}));
            return sum_all(mul(softmax_rows(scale(logits, 2.0f)), proj));
        };
        auto oracle_loss = [&] {
            auto w = oracle::router_weights({p.at(0), p.at(1), p.at(2)},
                                            {noise[0], noise[1], noise[2]}, 0.5);
            return w[0] * double(proj.at(0)) + w[1] * double(proj.at(1)) + w[2] * double(proj.at(2));
        };
        Rng srng(seed + uint64_t(t));
        oracle::FdReport rep = oracle::fd_check("router", engine, oracle_loss, {p}, 3, srng);
        worst = std::max(worst, rep.max_rel);
        c.pass = c.pass && rep.pass;
    }
    c.detail = "50 instances, max rel err " + fmt(worst) + " (tolerance 1e-3)";
    c.pass = c.pass && worst < 1e-3;
    return c;
}

CheckResult ledger_identities(uint64_t seed) {
    CheckResult c{"ledger_identities", true, ""};
    AncConfig cfg;
    cfg.height = cfg.width = 32;
    cfg.seed = seed;
    AncModel m = AncModel::init(cfg);
    Rng rng(seed + 1);
    Tensor x = Tensor::rand_uniform({3, 32, 32}, rng, 0.0f, 1.0f);

    double worst = 0.0;
    for (float density : {0.0f, 0.3f, 1.0f}) {
        EventFrame e = voxelize({}, 32, 32, 0, kFrameWindowUs);
        const size_t n = size_t(density * double(e.counts.numel()));
        for (size_t i = 0; i < n; ++i) e.counts.data()[i] = 5.0f;
        FlopsLedger l;
        AncStepResult r = anc_step(m, x, e, {1}, BudgetSignal{0.5f}, l);
        // F equals the ledger delta
        if (r.flops != double(r.metrics.frame_flops)) c.pass = false;
        // decomposition into weighted branches + overhead, to the unit
        double closed = 0.0;
        for (uint32_t i : r.metrics.active_branches) {
            closed += double(r.metrics.w[i]) * double(m.specs[i].flops_per_frame);
        }
        uint64_t overhead = 0;
        for (const auto& [stage, count] : r.metrics.stage_flops) {
            if (stage.rfind("branch_", 0) != 0) overhead += count;
        }
        worst = std::max(worst, std::abs(r.flops - (closed + double(overhead))));
        // skipped branches contribute nothing
        for (uint32_t i = 0; i < 3; ++i) {
            const bool active = std::find(r.metrics.active_branches.begin(),
                                          r.metrics.active_branches.end(),
                                          i) != r.metrics.active_branches.end();
            const char* stage = i == 0 ? "branch_tiny" : i == 1 ? "branch_small" : "branch_medium";
            if (!active && r.metrics.stage_flops.count(stage)) c.pass = false;
        }
    }
    c.pass = c.pass && worst <= 1.5;
    c.detail = "max |F - (sum w_i*FLOPs_i + overhead)| = " + fmt(worst) +
               " (tolerance 1.5 units: per-branch rounding)";
    return c;
}

CheckResult fusion_oracle(uint64_t seed) {
    CheckResult c{"fusion_merge_sets", true, ""};
    SttfConfig cfg;
    cfg.height = cfg.width = 32;
    cfg.patch = 8;
    cfg.dim = 16;
    cfg.depth = 1;
    cfg.dec_layers = 1;
    cfg.vocab = 32;
    cfg.context = 8;
    cfg.seed = seed;
    SttfModel m = SttfModel::init(cfg);
    Rng rng(seed + 2);
    FlopsLedger l;
    uint32_t mismatches = 0;
    for (int trial = 0; trial < 50; ++trial) {
        TokenBank prev, curr;
        prev.tokens = Tensor::randn({16, 16}, rng);
        curr.tokens = prev.tokens.detach();
        for (uint32_t i = 0; i < 16; ++i) {
            if (rng.next_below(2) == 0) {
                for (uint32_t j = 0; j < 16; ++j) curr.tokens.data()[i * 16 + j] += float(rng.normal()) * 0.04f;
            } else {
                for (uint32_t j = 0; j < 16; ++j) curr.tokens.data()[i * 16 + j] = float(rng.normal());
            }
        }
        prev.stale_age.assign(16, 0);
        curr.stale_age.assign(16, 0);
        std::set<uint32_t> expect;
        for (uint32_t i = 0; i < 16; ++i) {
            double dot = 0, np = 0, nc = 0;
            for (uint32_t j = 0; j < 16; ++j) {
                dot += double(prev.tokens.at(i * 16 + j)) * double(curr.tokens.at(i * 16 + j));
                np += double(prev.tokens.at(i * 16 + j)) * double(prev.tokens.at(i * 16 + j));
                nc += double(curr.tokens.at(i * 16 + j)) * double(curr.tokens.at(i * 16 + j));
            }
            const double cv = (std::sqrt(np) < 1e-8 || std::sqrt(nc) < 1e-8)
                                  ? 0.0
                                  : dot / (std::sqrt(np) * std::sqrt(nc));
            if (cv > 0.9) expect.insert(i);
        }
        std::vector<uint32_t> merged;
        FusionConfig fc{0.9f, {}, m.fuse_w, m.fuse_b};
        fuse_tokens(prev, curr, fc, l, &merged);
        if (std::set<uint32_t>(merged.begin(), merged.end()) != expect) ++mismatches;
    }
    c.pass = mismatches == 0;
    c.detail = std::to_string(mismatches) + " mismatched merge sets over 50 banks (tolerance 0)";
    return c;
}

CheckResult budget_monotonicity(uint64_t seed) {
    CheckResult c{"budget_monotonicity", true, ""};
    AncConfig cfg;
    cfg.height = cfg.width = 32;
    cfg.seed = seed;
    AncModel m = AncModel::init(cfg);
    Rng rng(seed + 3);
    FlopsLedger l;
    uint32_t violations = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor z = Tensor::randn({1, cfg.feat_dim}, rng);
        Tensor h = Tensor::randn({1, cfg.feat_dim}, rng);
        uint32_t last = 0;
        bool first = true;
        for (float b : {0.0f, 0.25f, 0.5f, 0.75f, 1.0f}) {
            BudgetGateOut out = budget_gate(z, h, BudgetSignal{b}, m, l);
            if (!first && out.active_channels < last) ++violations;
            last = out.active_channels;
            first = false;
        }
    }
    c.pass = violations == 0;
    c.detail = std::to_string(violations) + " violations over 100 inputs x 5 budgets (tolerance 0)";
    return c;
}

CheckResult round_trips(uint64_t seed) {
    CheckResult c{"format_round_trips", true, ""};
    Rng rng(seed + 4);
    // EVS1
    EventStream s;
    s.width = 64;
    s.height = 64;
    uint64_t t = 0;
    for (int i = 0; i < 2000; ++i) {
        t += rng.next_below(40);
        s.records.push_back({t, uint16_t(rng.next_below(64)), uint16_t(rng.next_below(64)),
                             uint8_t(rng.next_below(2))});
    }
    const auto bytes = write_stream(s);
    const bool evs_ok = write_stream(read_stream(bytes)) == bytes;
    // checkpoint
    TensorMap tm;
    for (int i = 0; i < 20; ++i) {
        tm.emplace("t" + std::to_string(i),
                   Tensor::randn({uint32_t(1 + rng.next_below(5)), uint32_t(1 + rng.next_below(5))}, rng));
    }
    const auto ck = save_checkpoint(tm);
    const bool ck_ok = save_checkpoint(load_checkpoint(ck)) == ck;
    c.pass = evs_ok && ck_ok;
    c.detail = std::string("evs1 byte-exact: ") + (evs_ok ? "yes" : "NO") +
               ", checkpoint byte-exact: " + (ck_ok ? "yes" : "NO");
    return c;
}

CheckResult gradient_suite(uint64_t seed) {
    CheckResult c{"gradient_suite", true, ""};
    auto reports = grad_check_all(seed);
    double worst = 0.0;
    std::string failing;
    for (const auto& r : reports) {
        worst = std::max(worst, r.max_rel);
        if (!r.pass) failing += (failing.empty() ? "" : ", ") + r.component;
    }
    c.pass = failing.empty();
    c.detail = failing.empty() ? "all components, max rel err " + fmt(worst) + " (tolerance 1e-3)"
                               : "failing: " + failing;
    return c;
}

CheckResult estimator_calibration(uint64_t seed) {
    CheckResult c{"estimator_calibration", true, ""};
    AncConfig cfg;
    cfg.height = cfg.width = 32;
    cfg.seed = seed;
    AncModel m = AncModel::init(cfg);
    FlopsLedger l;
    ComplexityScores zero = estimate_complexity(voxelize({}, 32, 32, 0, 100), m, l);
    ComplexityScores sat = estimate_complexity(saturated(32, 32), m, l);
    c.pass = zero.argmax() == 0 && sat.argmax() == 2;
    c.detail = std::string("zero-event argmax Tiny: ") + (zero.argmax() == 0 ? "yes" : "NO") +
               ", saturated argmax Medium: " + (sat.argmax() == 2 ? "yes" : "NO");
    return c;
}

} // namespace

std::vector<CheckResult> run_all(uint64_t seed) {
    return {
        dense_equivalence(seed),   cache_exactness(seed),    router_weights_sum(seed),
        router_gradients(seed),    ledger_identities(seed),  fusion_oracle(seed),
        budget_monotonicity(seed), estimator_calibration(seed), round_trips(seed),
        gradient_suite(seed),
    };
}

bool all_pass(const std::vector<CheckResult>& results) {
    for (const auto& r : results) {
        if (!r.pass) return false;
    }
    return true;
}

} // namespace tgv::verify

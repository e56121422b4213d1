#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tgv/event_io.hpp"
#include "tgv/flops.hpp"
#include "tgv/nn.hpp"
#include "tgv/rng.hpp"
#include "tgv/tensor.hpp"

namespace tgv {

// Event-conditioned mixture of encoder scales: a complexity estimator maps
// event density to scores over {Tiny, Small, Medium}, a Gumbel-Softmax
// router turns scores into weights, and only branches with weight above
// the activation threshold execute. Cost is accumulated as
// F += w_i * FLOPs(E_i) for executed branches.

struct AncConfig {
    uint32_t height = 64;
    uint32_t width = 64;
    uint32_t feat_dim = 64; // common projected feature width
    uint32_t dec_dim = 32;  // decoder width
    uint32_t vocab = 256;
    uint32_t context = 16;
    uint32_t tiny_ch = 8, small_ch = 16, medium_ch = 32;
    uint32_t tiny_depth = 1, small_depth = 2, medium_depth = 2;
    float temperature = 0.5f;
    float route_threshold = 0.1f;
    float budget_slope = 6.0f;
    float kappa = 3.0f; // event-count normalization
    uint64_t seed = 43;
};

struct BranchSpec {
    std::string name; // Tiny | Small | Medium
    uint32_t channels = 0;
    uint32_t depth = 0;
    uint64_t param_count = 0;
    uint64_t flops_per_frame = 0; // analytic forward cost, matches the meter
};

struct AncBranch {
    nn::Conv patchify;          // 5 -> c, k4 s4
    std::vector<nn::Conv> body; // c -> c, 3x3 pad 1
    nn::Linear proj;            // c -> feat_dim
};

struct AncModel {
    AncConfig cfg;

    nn::Conv est1, est2;  // complexity estimator CNN
    nn::Linear est_head;  // [4 pooled features + density] -> 3

    std::array<AncBranch, 3> branches;
    std::array<BranchSpec, 3> specs;

    nn::Linear pre;  // z -> h (the gated layer)
    nn::Linear gate; // gate logits from z

    nn::Linear z_proj; // feat -> dec_dim prefix token
    Tensor tok_embed;  // [V, dec_dim]
    Tensor dec_pos;    // [context, dec_dim]
    std::vector<nn::Block> dec_blocks; // 4 = deepest conditional path
    nn::LayerNorm dec_ln;
    nn::Linear lm_head;

    static AncModel init(const AncConfig& cfg);
    TensorMap named_params() const;
    void load_state(const TensorMap& params);
};

// Analytic per-frame branch cost in the project FLOPs convention.
uint64_t branch_flops(const AncConfig& cfg, uint32_t channels, uint32_t depth);

struct ComplexityScores {
    Tensor p; // [1,3], rows sum to 1
    uint32_t argmax() const;
};

// Small CNN + density pathway + softmax over K=3. Calibrated at init so a
// zero-event frame scores Tiny highest and a saturated frame Medium.
// Metered under "complexity_estimator".
ComplexityScores estimate_complexity(const EventFrame& e, const AncModel& model,
                                     FlopsLedger& ledger);

enum class RouteMode { train, infer };

struct RoutingDecision {
    std::array<float, 3> w{};
    std::vector<uint32_t> active; // {i : w_i > threshold}
    float temperature = 0.5f;
    uint64_t noise_seed = 0;
    std::array<float, 3> noise{}; // zeros in infer mode
    Tensor w_t;                   // [1,3]; carries the graph in train mode
};

// train: w = softmax((log p + gumbel)/T), differentiable in p.
// infer: w = softmax(log p / T), deterministic.
RoutingDecision gumbel_route(const ComplexityScores& p, float temperature, Rng& rng,
                             RouteMode mode, float route_threshold = 0.1f);

struct BranchForwardOut {
    Tensor z;                              // [1, feat_dim] weighted sum
    double weighted_flops = 0.0;           // sum of w_i * FLOPs(E_i), executed only
    std::array<uint64_t, 3> raw_flops{};   // metered per-branch cost (0 if skipped)
    std::array<bool, 3> executed{};
};

// Runs exactly the branches in the active set over [x|e] and fuses their
// projected outputs with the raw routing weights (no renormalization).
// Each executed branch meters round(w_i * FLOPs_i) under "branch_<name>".
BranchForwardOut branch_forward(const Tensor& x, const EventFrame& e, const RoutingDecision& route,
                                const AncModel& model, FlopsLedger& ledger);

struct BudgetSignal {
    float b = 0.5f;
    static BudgetSignal clamped(float v);
};

struct BudgetGateOut {
    Tensor gated;             // a (.) h
    Tensor activations;       // a, [1,C] in (0,1)
    uint32_t active_channels; // #{c : a_c > 0.5}
};

// a = sigmoid(W h_prev + bias + slope*(b - 0.5)); out = a (.) h.
// The tensor variant keeps the graph (b may require grad).
Tensor budget_gate_t(const Tensor& h_prev, const Tensor& h, const Tensor& b,
                     const nn::Linear& gate, float slope);
BudgetGateOut budget_gate(const Tensor& h_prev, const Tensor& h, BudgetSignal b,
                          const AncModel& model, FlopsLedger& ledger);

struct AncDecodeOut {
    uint32_t token = 0;
    Tensor dist; // [V]
};

// Causal decode over [z_prefix | embed(y)] running 2/3/4 layers for
// levels 0/1/2 with shared weights. Metered under "decoder".
AncDecodeOut conditional_decode(const Tensor& z, const std::vector<uint32_t>& y, uint32_t level,
                                const AncModel& model, FlopsLedger& ledger);

struct AncMetrics {
    std::array<float, 3> p{};
    std::array<float, 3> w{};
    std::vector<uint32_t> active_branches;
    uint32_t level = 0;
    uint32_t active_channels = 0;
    double weighted_branch_flops = 0.0;
    std::map<std::string, uint64_t> stage_flops;
    uint64_t frame_flops = 0; // the returned F
};

struct AncStepResult {
    uint32_t token = 0;
    Tensor dist;
    double flops = 0.0; // F: ledger delta for this frame
    AncMetrics metrics;
};

// Full frame in infer mode: estimate -> route -> branches -> budget gate ->
// conditional decode. Deterministic for fixed inputs.
AncStepResult anc_step(const AncModel& model, const Tensor& x, const EventFrame& e,
                       const std::vector<uint32_t>& y, BudgetSignal budget, FlopsLedger& ledger);

// Same pipeline with routing forced to one branch (always-Medium baseline
// for reduction ratios).
AncStepResult anc_step_forced(const AncModel& model, const Tensor& x, const EventFrame& e,
                              const std::vector<uint32_t>& y, BudgetSignal budget,
                              uint32_t forced_branch, FlopsLedger& ledger);

// [x (3ch) | clamp(e/kappa) (2ch)] as one [5,H,W] input; metered under
// "input_prep".
Tensor stack_input(const Tensor& x, const EventFrame& e, const AncModel& model,
                   FlopsLedger& ledger);

} // namespace tgv

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tgv/event_io.hpp"
#include "tgv/flops.hpp"
#include "tgv/nn.hpp"
#include "tgv/tensor.hpp"

namespace tgv {

// Event-gated incremental encoder: a persistent token bank is refreshed
// only at patches the event gate marks as changed, refreshed slots are
// blended with their predecessors when cosine-similar, and text queries
// attend over the bank with stale keys down-weighted.

struct SttfConfig {
    uint32_t height = 224;
    uint32_t width = 224;
    uint32_t patch = 16;
    uint32_t dim = 64;        // encoder width
    uint32_t depth = 2;       // encoder blocks
    uint32_t dec_layers = 2;  // decoder blocks
    uint32_t vocab = 256;
    uint32_t context = 16;    // decoder length limit
    float theta_patch = 0.01f; // per-patch activity threshold
    float gamma = 1.0f;        // additive logit penalty on stale keys
    float tau = 0.9f;          // fusion threshold when the policy is off
    bool use_tau_policy = false;
    float tau_min = 0.7f;
    float tau_max = 0.99f;
    float tau_budget = 0.5f;   // budget input to the tau policy
    float kappa = 3.0f;        // event-count normalization clamp(count/kappa)
    uint64_t seed = 42;

    uint32_t grid_w() const { return width / patch; }
    uint32_t grid_h() const { return height / patch; }
    uint32_t n_patches() const { return grid_w() * grid_h(); }
    uint64_t config_hash() const;
};

struct SttfModel {
    SttfConfig cfg;

    nn::Conv gate1, gate2;   // event gate CNN, 2 -> 8 -> 1
    nn::Linear patch_embed;  // [3*p*p, d]
    Tensor pos_embed;        // [N, d]
    std::vector<nn::Block> blocks;
    nn::LayerNorm encoder_ln;

    Tensor fuse_w; // [2d, 1] fusion gate
    Tensor fuse_b; // [1]

    nn::Linear policy_fc1, policy_fc2; // tau policy MLP: [3] -> hidden -> [1]

    nn::LayerNorm cross_ln_q, cross_ln_kv;
    nn::Attention cross;

    Tensor tok_embed; // [V, d]
    Tensor dec_pos;   // [context, d]
    std::vector<nn::Block> dec_blocks;
    nn::LayerNorm dec_ln;
    nn::Linear lm_head; // [d, V]

    static SttfModel init(const SttfConfig& cfg);
    TensorMap named_params() const;
    void load_state(const TensorMap& params);
};

// Binary change mask plus its per-patch reduction.
struct ChangeMask {
    Tensor pixel;                    // [1,H,W], entries 0 or 1
    std::vector<uint8_t> per_patch;  // [N]
    uint32_t active_count = 0;
};

// Persistent per-slot token memory. Slot count is fixed; stale_age[i] is 0
// exactly for slots refreshed on the owning frame. Per-block key/value
// caches let stale slots serve as read-only attention context without
// recomputation.
struct TokenBank {
    Tensor tokens;                   // [N,d]
    std::vector<uint32_t> stale_age; // [N]
    uint64_t frame_index = 0;
    std::vector<Tensor> k_cache;     // depth x [N,d]
    std::vector<Tensor> v_cache;     // depth x [N,d]
    uint64_t config_hash = 0;
};

struct ActivePatchSet {
    std::vector<uint32_t> indices; // ascending
    Tensor pixels;                 // [A, 3*p*p]; undefined when A == 0
};

struct FusionConfig {
    float tau = 0.9f;
    std::vector<float> per_layer; // optional; when present, the last entry drives fusion
    Tensor gate_w;                // [2d,1]
    Tensor gate_b;                // [1]
};

// ---- pipeline stages ----------------------------------------------------

// Event gate: sigmoid(conv stack(clamp(e/kappa))) > 0.5, then the
// per-patch mean > theta_patch reduction. Metered under "event_gate".
ChangeMask detect_change_mask(const EventFrame& e, const SttfModel& model, FlopsLedger& ledger);

// Returns exactly the patches with per_patch == 1, ascending.
ActivePatchSet extract_active_patches(const Tensor& x, const ChangeMask& mask, uint32_t patch_size);

// Re-encodes active slots (stale slots provide cached keys/values);
// inactive slots are copied bit-exactly with stale_age incremented.
// Encoder work is metered under "sparse_encoder".
TokenBank selective_update(const ActivePatchSet& active, const ChangeMask& mask,
                           const TokenBank& prev, const SttfModel& model, FlopsLedger& ledger);

// Encodes every patch; stale_age all zero.
TokenBank full_encode(const Tensor& x, const SttfModel& model, FlopsLedger& ledger);

// Learned gated blending of refreshed slots with their predecessors when
// cos(prev[i], curr[i]) > tau. Returns the number of merged slots;
// merged_out (optional) receives their indices. Metered under "fusion".
uint32_t fuse_tokens(const TokenBank& prev, TokenBank& curr, const FusionConfig& cfg,
                     FlopsLedger& ledger, std::vector<uint32_t>* merged_out = nullptr);

// Differentiable blend used by fuse_tokens and the gradient checks:
// prev + sigmoid([prev|curr] w + b) * (curr - prev), row-wise.
Tensor fuse_blend(const Tensor& prev_rows, const Tensor& curr_rows, const Tensor& gate_w,
                  const Tensor& gate_b);

// Per-layer fusion thresholds from (mean, std) similarity stats and a
// budget in [0,1]: tau_l = tau_min + (tau_max-tau_min)*sigmoid(MLP(...)).
std::vector<float> adapt_tau(const std::vector<std::pair<float, float>>& layer_stats, float budget,
                             const SttfModel& model);

// Graph-building scalar variant (for training / gradient checks).
Tensor adapt_tau_t(float mean_sim, float std_sim, float budget, const SttfModel& model);

// Text queries attend over all bank tokens; keys of slots with
// stale_age > 0 receive an additive logit bias of -gamma. Metered under
// "cross_attn".
Tensor temporal_cross_attention(const TokenBank& bank, const Tensor& text_emb,
                                const SttfModel& model, FlopsLedger& ledger, float gamma);

// Token + position embedding of a prefix; checks vocab and length.
Tensor embed_prefix(const std::vector<uint32_t>& prefix, const SttfModel& model);

struct DecodeOut {
    uint32_t token = 0; // greedy argmax, lowest index on ties
    Tensor dist;        // [V], sums to 1
};

// Causal decode over the fused representation; metered under "decoder".
DecodeOut decode(const Tensor& h, const std::vector<uint32_t>& y_prefix, const SttfModel& model,
                 FlopsLedger& ledger);

// ---- full step ------------------------------------------------------------

struct SttfMetrics {
    uint32_t active_tokens = 0;
    uint32_t fused_count = 0;
    float tau_used = 0.0f;
    std::map<std::string, uint64_t> stage_flops; // this frame only
    uint64_t frame_flops = 0;
};

struct SttfStepResult {
    uint32_t token = 0;
    Tensor dist;
    TokenBank state;
    SttfMetrics metrics;
};

// One full frame: gate -> extract -> selective/full encode -> fusion ->
// cross attention -> decode -> state carry.
SttfStepResult sttf_step(const SttfModel& model, const Tensor& x_t, const EventFrame& e_t,
                         const std::vector<uint32_t>& y, const TokenBank* prev,
                         FlopsLedger& ledger);

// Greedy rollout against a fixed bank (used for golden-sequence checks).
std::vector<uint32_t> greedy_rollout(const SttfModel& model, const TokenBank& bank,
                                     std::vector<uint32_t> prefix, uint32_t steps);

// Session state <-> checkpoint tensors.
TensorMap bank_to_tensors(const TokenBank& bank);
TokenBank bank_from_tensors(const TensorMap& tensors, const SttfModel& model);

// All patches of x as embedding-ready rows [N, 3*p*p].
Tensor patchify(const Tensor& x, uint32_t patch_size);

} // namespace tgv

#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "tgv/anc.hpp"
#include "tgv/nn.hpp"
#include "tgv/rng.hpp"
#include "tgv/sttf.hpp"
#include "tgv/tensor.hpp"

namespace tgv::oracle {

// Double-precision reference forwards built on the serial kernels in
// tgv::ref. They are independent of the float op graph and back the
// dense-equivalence and finite-difference checks. All helpers read the
// model's float tensors at call time, so in-place FD perturbations are
// picked up.

std::vector<double> to_d(const Tensor& t);

std::vector<double> linear_fwd(const nn::Linear& l, const std::vector<double>& x, size_t rows);
std::vector<double> layer_norm_fwd(const nn::LayerNorm& ln, std::vector<double> x, size_t rows);
void relu_inplace(std::vector<double>& v);
void sigmoid_inplace(std::vector<double>& v);
std::vector<double> softmax_rows_d(std::vector<double> x, size_t rows);

// Single-head attention; bias (optional) is [lq, lk].
std::vector<double> attention_fwd(const nn::Attention& p, const std::vector<double>& q_in,
                                  size_t lq, const std::vector<double>& kv, size_t lk, uint32_t d,
                                  const std::vector<double>* bias);

// Pre-LN block forward; bias (optional) is [rows, rows].
std::vector<double> block_fwd(const nn::Block& blk, std::vector<double> x, size_t rows, uint32_t d,
                              const std::vector<double>* bias);

// Full dense encoder over every patch of x; returns [N*d].
std::vector<double> dense_encode(const Tensor& x, const SttfModel& m);

// Text-over-bank attention with the stale bias materialized explicitly.
std::vector<double> cross_attention_fwd(const TokenBank& bank, const Tensor& text_emb,
                                        const SttfModel& m, double gamma);

// Gumbel-Softmax routing weights in closed form.
std::array<double, 3> router_weights(const std::array<double, 3>& p,
                                     const std::array<double, 3>& noise, double temperature);

// Event-gate CNN probabilities over a normalized input [2,h,w].
std::vector<double> gate_probs_fwd(const SttfModel& m, const std::vector<double>& norm_input,
                                   uint32_t h, uint32_t w);

// Gated fusion rows: prev + sigmoid([prev|curr] w + b) * (curr - prev).
std::vector<double> fuse_blend_fwd(const SttfModel& m, const std::vector<double>& prev_rows,
                                   const std::vector<double>& curr_rows, size_t rows, uint32_t d);

// Tau policy output for (mean, std, budget).
double adapt_tau_fwd(const SttfModel& m, double mean_sim, double std_sim, double budget);

// Budget gate activations a = sigmoid(W h_prev + bias + slope*(b-0.5)).
std::vector<double> budget_gate_fwd(const nn::Linear& gate, const std::vector<double>& h_prev,
                                    double b, double slope);

// Causal decoder distribution over the last position, STTF flavor.
std::vector<double> sttf_decode_fwd(const SttfModel& m, const std::vector<double>& h, size_t rows);

// Conditional decoder distribution over the last position, ANC flavor.
std::vector<double> anc_decode_fwd(const AncModel& m, const std::vector<double>& seq, size_t rows,
                                   uint32_t depth);

// ---- finite differences ------------------------------------------------------

struct FdReport {
    std::string component;
    double max_rel = 0.0;
    size_t checked = 0;
    bool pass = true;
};

// Central finite differences of oracle_loss against the analytic
// gradients of engine_loss, sampled over up to max_samples_per_tensor
// entries of each parameter. Perturbations are applied to the float
// tensors in place and the exactly realized step is used. Entries where
// two step sizes disagree (a relu kink inside the step) are skipped.
// Relative error is |a-f| / (1e-2 + max(|a|,|f|)), i.e. the usual
// atol=1e-5 / rtol=1e-3 rule against the 1e-3 threshold.
FdReport fd_check(const std::string& component, const std::function<Tensor()>& engine_loss,
                  const std::function<double()>& oracle_loss, std::vector<Tensor> params,
                  size_t max_samples_per_tensor, Rng& rng);

} // namespace tgv::oracle

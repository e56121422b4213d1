#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tgv/anc.hpp"
#include "tgv/oracle.hpp"
#include "tgv/sttf.hpp"
#include "tgv/tensor.hpp"

namespace tgv {

// Toy-scale joint training of the gate/encoder/router/budget components
// with the composite loss
//   L = L_task + lambda1 * ~|T|_0 + lambda2 * sum_l ~|a_l|_0
// where both L0 terms are expected-activation relaxations: the token term
// sums the per-patch soft mask probabilities, the gate term sums the
// channel gate activations.

struct LossConfig {
    float lambda1 = 0.01f;       // token sparsity weight
    float lambda2 = 0.01f;       // gate sparsity weight
    float latency_weight = 0.0f; // tau policy regularizer
};

struct SurrogateReport {
    float token_l0_relaxed = 0.0f; // expected active-token count
    float gate_l0_relaxed = 0.0f;  // sum of gate activations
    float task_loss = 0.0f;
    float total = 0.0f;
};

// total = task + lambda1*token + lambda2*gate; NaN inputs raise
// NumericError naming the offending term.
Tensor composite_loss(const Tensor& task_loss, const Tensor& token_surrogate,
                      const Tensor& gate_surrogate, const LossConfig& cfg);

// Soft count of tokens a threshold tau leaves distinct:
// latency_weight * sum_i sigmoid((tau - cos_i)/0.05). Differentiable in
// tau; drives the tau policy toward cheaper (more fused) frames.
Tensor tau_latency_loss(const std::vector<float>& cosines, const Tensor& tau,
                        float latency_weight);

enum class ToyTaskKind { motion_direction, token_echo };

struct ToyTask {
    ToyTaskKind kind = ToyTaskKind::motion_direction;
    uint64_t dataset_seed = 1;
    uint32_t train_size = 64;
    uint32_t val_size = 16;
};

struct TrainConfig {
    ToyTask task;
    LossConfig loss;
    float lr = 0.05f;
    uint32_t batch_size = 8;
    uint32_t steps = 200;
    uint64_t seed = 1;     // weight init + routing noise
    float budget = 0.5f;   // gate budget during training
    // desk-scale model sizing
    uint32_t height = 32, width = 32, patch = 8;
    uint32_t enc_dim = 32, enc_depth = 1;
    uint32_t tiny_ch = 4, small_ch = 8, medium_ch = 16;
};

struct MotionSample {
    Tensor x;        // [3,H,W]
    EventFrame e;
    uint32_t label;  // 0..3 = +x,-x,+y,-y
};

struct EchoSample {
    std::vector<uint32_t> tokens;
};

// Joint toy model: gate + encoder (token path), estimator + router +
// branches + budget gate (capacity path), one classifier over both.
struct ToyModel {
    SttfModel sttf;
    AncModel anc;
    nn::Linear classifier;

    static ToyModel init(const TrainConfig& cfg);
    TensorMap named_params() const;
};

struct StepReport {
    uint32_t step = 0;
    SurrogateReport surrogates;
};

class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg);

    StepReport step();
    std::vector<StepReport> run(uint32_t steps);

    // mean task accuracy / loss over the validation split
    double val_accuracy();

    ToyModel& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<MotionSample>& train_set() const { return train_set_; }

private:
    TrainConfig cfg_;
    ToyModel model_;
    Rng route_rng_;
    std::vector<MotionSample> train_set_;
    std::vector<MotionSample> val_set_;
    std::vector<EchoSample> echo_train_;
    uint32_t step_count_ = 0;
    uint32_t cursor_ = 0;

    SurrogateReport forward_batch(bool update);
};

// Deterministic single-sample generator for the motion task.
MotionSample make_motion_sample(uint32_t height, uint32_t width, uint32_t direction, Rng& rng);

// SGD over every parameter that received a gradient; grads are cleared.
void sgd_step(TensorMap& params, float lr);

// Finite-difference verification of every differentiable component
// against the double-precision oracles; each entry must come in under
// 1e-3 relative error.
std::vector<oracle::FdReport> grad_check_all(uint64_t seed = 7);
bool all_pass(const std::vector<oracle::FdReport>& reports);

} // namespace tgv

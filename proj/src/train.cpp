#include "tgv/train.hpp"

#include <algorithm>
#include <cmath>

#include "tgv/error.hpp"
#include "tgv/ref.hpp"

namespace tgv {

namespace {

void check_finite_term(const Tensor& t, const char* term) {
    for (size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t.at(i))) {
            throw NumericError(std::string("composite_loss: non-finite ") + term);
        }
    }
}

} // namespace

Tensor composite_loss(const Tensor& task_loss, const Tensor& token_surrogate,
                      const Tensor& gate_surrogate, const LossConfig& cfg) {
    if (task_loss.numel() != 1 || token_surrogate.numel() != 1 || gate_surrogate.numel() != 1) {
        throw ShapeError("composite_loss: all terms must be scalars");
    }
    if (cfg.lambda1 < 0.0f || cfg.lambda2 < 0.0f || cfg.latency_weight < 0.0f) {
        throw ParamError("composite_loss: weights must be nonnegative");
    }
    check_finite_term(task_loss, "task_loss");
    check_finite_term(token_surrogate, "token_l0_relaxed");
    check_finite_term(gate_surrogate, "gate_l0_relaxed");
    Tensor total = task_loss;
    if (cfg.lambda1 != 0.0f) total = add(total, scale(token_surrogate, cfg.lambda1));
    if (cfg.lambda2 != 0.0f) total = add(total, scale(gate_surrogate, cfg.lambda2));
    return total;
}

Tensor tau_latency_loss(const std::vector<float>& cosines, const Tensor& tau,
                        float latency_weight) {
    if (tau.numel() != 1) throw ShapeError("tau_latency_loss: tau must be a scalar tensor");
    if (cosines.empty()) return scale(tau, 0.0f);
    const uint32_t n = uint32_t(cosines.size());
    Tensor cos_t = Tensor::from_data({n, 1}, std::vector<float>(cosines.begin(), cosines.end()));
    Tensor tau_rows = scale_by(Tensor::full({n, 1}, 1.0f), tau);
    Tensor soft_distinct = sigmoid(scale(sub(tau_rows, cos_t), 20.0f)); // 1/0.05
    return scale(sum_all(soft_distinct), latency_weight);
}

MotionSample make_motion_sample(uint32_t height, uint32_t width, uint32_t direction, Rng& rng) {
    const uint32_t side = std::max(6u, height / 3);
    const int speed = int(std::max(3u, height / 8));
    const int margin = speed + 1;
    const int max_x = int(width - side) - margin;
    const int max_y = int(height - side) - margin;
    const int x0 = margin + int(rng.next_below(uint64_t(std::max(1, max_x - margin))));
    const int y0 = margin + int(rng.next_below(uint64_t(std::max(1, max_y - margin))));
    int dx = 0, dy = 0;
    switch (direction % 4) {
        case 0: dx = speed; break;
        case 1: dx = -speed; break;
        case 2: dy = speed; break;
        case 3: dy = -speed; break;
    }

    auto paint = [&](int px, int py) {
        Tensor img = Tensor::full({3, height, width}, 0.1f);
        auto& d = img.data();
        for (uint32_t c = 0; c < 3; ++c)
            for (uint32_t y = uint32_t(py); y < uint32_t(py) + side; ++y)
                for (uint32_t x = uint32_t(px); x < uint32_t(px) + side; ++x)
                    d[(size_t(c) * height + y) * width + x] = 0.9f;
        return img;
    };
    Tensor img0 = paint(x0, y0);
    Tensor img1 = paint(x0 + dx, y0 + dy);

    std::vector<EventRecord> recs;
    uint64_t t = 0;
    for (uint32_t y = 0; y < height; ++y) {
        for (uint32_t x = 0; x < width; ++x) {
            const float diff = img1.at(size_t(y) * width + x) - img0.at(size_t(y) * width + x);
            if (std::abs(diff) > 0.01f) {
                recs.push_back({t++, uint16_t(x), uint16_t(y), diff > 0 ? uint8_t(1) : uint8_t(0)});
            }
        }
    }
    MotionSample s;
    s.x = std::move(img1);
    s.e = voxelize(recs, height, width, 0, kFrameWindowUs);
    s.label = direction % 4;
    return s;
}

ToyModel ToyModel::init(const TrainConfig& cfg) {
    ToyModel m;
    SttfConfig scfg;
    scfg.height = cfg.height;
    scfg.width = cfg.width;
    scfg.patch = cfg.patch;
    scfg.dim = cfg.enc_dim;
    scfg.depth = cfg.enc_depth;
    scfg.dec_layers = 2;
    scfg.vocab = 32;
    scfg.context = 8;
    scfg.seed = cfg.seed;
    m.sttf = SttfModel::init(scfg);

    AncConfig acfg;
    acfg.height = cfg.height;
    acfg.width = cfg.width;
    acfg.feat_dim = 32;
    acfg.dec_dim = 16;
    acfg.vocab = 32;
    acfg.context = 8;
    acfg.tiny_ch = cfg.tiny_ch;
    acfg.small_ch = cfg.small_ch;
    acfg.medium_ch = cfg.medium_ch;
    acfg.seed = cfg.seed + 1;
    m.anc = AncModel::init(acfg);

    Rng rng(cfg.seed + 2);
    m.classifier = nn::make_linear(cfg.enc_dim + acfg.feat_dim, 4, rng);
    return m;
}

TensorMap ToyModel::named_params() const {
    TensorMap out;
    for (auto& [name, t] : sttf.named_params()) out.emplace("sttf." + name, t);
    for (auto& [name, t] : anc.named_params()) out.emplace("anc." + name, t);
    out.emplace("classifier.w", classifier.w);
    out.emplace("classifier.b", classifier.b);
    return out;
}

void sgd_step(TensorMap& params, float lr) {
    for (auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        auto& w = t.data();
        const auto& g = t.grad();
        for (size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
        t.zero_grad();
    }
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg), model_(ToyModel::init(cfg)), route_rng_(cfg.seed ^ 0x9E3779B97F4A7C15ull) {
    Rng data_rng(cfg.task.dataset_seed);
    for (uint32_t i = 0; i < cfg.task.train_size; ++i) {
        train_set_.push_back(make_motion_sample(cfg.height, cfg.width, i % 4, data_rng));
    }
    for (uint32_t i = 0; i < cfg.task.val_size; ++i) {
        val_set_.push_back(make_motion_sample(cfg.height, cfg.width, i % 4, data_rng));
    }
    if (cfg.task.kind == ToyTaskKind::token_echo) {
        for (uint32_t i = 0; i < cfg.task.train_size; ++i) {
            EchoSample s;
            for (int k = 0; k < 7; ++k) s.tokens.push_back(uint32_t(data_rng.next_below(32)));
            echo_train_.push_back(std::move(s));
        }
    }
}

namespace {

// gate probabilities + soft per-patch mask for one event frame
struct SoftMask {
    Tensor patch_soft; // [N,1]
    Tensor token_surrogate; // scalar
};

SoftMask soft_mask(const SttfModel& m, const EventFrame& e) {
    Tensor norm = clamp(scale(e.counts, 1.0f / m.cfg.kappa), 0.0f, 1.0f);
    Tensor probs = sigmoid(m.gate2.forward(relu(m.gate1.forward(norm))));
    SoftMask out;
    out.patch_soft = patch_mean(probs, m.cfg.patch);
    out.token_surrogate = sum_all(out.patch_soft);
    return out;
}

Tensor encode_dense_soft(const SttfModel& m, const Tensor& x, const Tensor& patch_soft) {
    std::vector<uint32_t> all(m.cfg.n_patches());
    for (uint32_t i = 0; i < all.size(); ++i) all[i] = i;
    Tensor emb = add(m.patch_embed.forward(patchify(x, m.cfg.patch)), m.pos_embed);
    for (const auto& blk : m.blocks) emb = nn::block_forward(blk, emb);
    emb = m.encoder_ln.forward(emb);
    return mean_rows(mul_colvec(emb, patch_soft)); // [1,d]
}

struct AncForward {
    Tensor gated;          // [1,feat]
    Tensor gate_surrogate; // scalar
};

AncForward anc_forward_train(AncModel& m, const Tensor& x, const EventFrame& e, float budget,
                             Rng& route_rng) {
    FlopsLedger scratch;
    ComplexityScores scores = estimate_complexity(e, m, scratch);
    RoutingDecision route =
        gumbel_route(scores, m.cfg.temperature, route_rng, RouteMode::train, m.cfg.route_threshold);
    BranchForwardOut bf = branch_forward(x, e, route, m, scratch);
    Tensor pre_h = relu(m.pre.forward(bf.z));
    Tensor shift = scale(add_scalar(Tensor::scalar(budget), -0.5f), m.cfg.budget_slope);
    Tensor ones = Tensor::full({1, m.cfg.feat_dim}, 1.0f);
    Tensor a = sigmoid(add(m.gate.forward(bf.z), scale_by(ones, shift)));
    AncForward out;
    out.gated = mul(a, pre_h);
    out.gate_surrogate = sum_all(a);
    return out;
}

} // namespace

SurrogateReport Trainer::forward_batch(bool update) {
    std::vector<Tensor> task_terms, token_terms, gate_terms;

    if (cfg_.task.kind == ToyTaskKind::token_echo) {
        for (uint32_t b = 0; b < cfg_.batch_size; ++b) {
            const EchoSample& s = echo_train_[cursor_ % echo_train_.size()];
            ++cursor_;
            Tensor emb = embed_prefix(s.tokens, model_.sttf);
            Tensor x = emb;
            Tensor bias = nn::causal_bias(uint32_t(s.tokens.size()));
            for (const auto& blk : model_.sttf.dec_blocks) x = nn::block_forward(blk, x, bias);
            x = model_.sttf.dec_ln.forward(x);
            Tensor logits = model_.sttf.lm_head.forward(x);
            // echo with delay one: position i predicts token i-1
            std::vector<uint32_t> targets(s.tokens.begin(), s.tokens.end() - 1);
            task_terms.push_back(
                cross_entropy_rows(slice_rows(logits, 1, uint32_t(s.tokens.size())), targets));
            token_terms.push_back(Tensor::scalar(0.0f));
            gate_terms.push_back(Tensor::scalar(0.0f));
        }
    } else {
        for (uint32_t b = 0; b < cfg_.batch_size; ++b) {
            const MotionSample& s = train_set_[cursor_ % train_set_.size()];
            ++cursor_;
            SoftMask mask = soft_mask(model_.sttf, s.e);
            Tensor sttf_feat = encode_dense_soft(model_.sttf, s.x, mask.patch_soft);
            AncForward anc = anc_forward_train(model_.anc, s.x, s.e, cfg_.budget, route_rng_);
            Tensor feat = concat_cols(sttf_feat, anc.gated);
            Tensor logits = model_.classifier.forward(feat);
            task_terms.push_back(cross_entropy_rows(logits, {s.label}));
            token_terms.push_back(mask.token_surrogate);
            gate_terms.push_back(anc.gate_surrogate);
        }
    }

    auto mean_of = [&](std::vector<Tensor>& terms) {
        Tensor sum = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) sum = add(sum, terms[i]);
        return scale(sum, 1.0f / float(terms.size()));
    };
    Tensor task = mean_of(task_terms);
    Tensor token = mean_of(token_terms);
    Tensor gate = mean_of(gate_terms);
    Tensor total = composite_loss(task, token, gate, cfg_.loss);

    SurrogateReport rep;
    rep.task_loss = task.item();
    rep.token_l0_relaxed = token.item();
    rep.gate_l0_relaxed = gate.item();
    rep.total = total.item();
    if (!std::isfinite(rep.total)) {
        throw TrainError("training diverged (non-finite loss) at step " + std::to_string(step_count_));
    }
    if (update) {
        total.backward();
        TensorMap params = model_.named_params();
        sgd_step(params, cfg_.lr);
    }
    return rep;
}

StepReport Trainer::step() {
    StepReport rep;
    rep.step = step_count_;
    rep.surrogates = forward_batch(true);
    ++step_count_;
    return rep;
}

std::vector<StepReport> Trainer::run(uint32_t steps) {
    std::vector<StepReport> out;
    out.reserve(steps);
    for (uint32_t i = 0; i < steps; ++i) out.push_back(step());
    return out;
}

double Trainer::val_accuracy() {
    NoGradGuard inference;
    if (val_set_.empty()) return 0.0;
    uint32_t hits = 0;
    Rng frozen_noise(12345);
    for (const auto& s : val_set_) {
        SoftMask mask = soft_mask(model_.sttf, s.e);
        Tensor sttf_feat = encode_dense_soft(model_.sttf, s.x, mask.patch_soft);
        FlopsLedger scratch;
        ComplexityScores scores = estimate_complexity(s.e, model_.anc, scratch);
        RoutingDecision route = gumbel_route(scores, model_.anc.cfg.temperature, frozen_noise,
                                             RouteMode::infer, model_.anc.cfg.route_threshold);
        BranchForwardOut bf = branch_forward(s.x, s.e, route, model_.anc, scratch);
        Tensor pre_h = relu(model_.anc.pre.forward(bf.z));
        Tensor shift = scale(add_scalar(Tensor::scalar(cfg_.budget), -0.5f),
                             model_.anc.cfg.budget_slope);
        Tensor ones = Tensor::full({1, model_.anc.cfg.feat_dim}, 1.0f);
        Tensor a = sigmoid(add(model_.anc.gate.forward(bf.z), scale_by(ones, shift)));
        Tensor logits = model_.classifier.forward(concat_cols(sttf_feat, mul(a, pre_h)));
        uint32_t best = 0;
        for (uint32_t j = 1; j < 4; ++j) {
            if (logits.at(j) > logits.at(best)) best = j;
        }
        hits += best == s.label ? 1 : 0;
    }
    return double(hits) / double(val_set_.size());
}

// ---- gradient suite ------------------------------------------------------------

std::vector<oracle::FdReport> grad_check_all(uint64_t seed) {
    std::vector<oracle::FdReport> out;
    Rng rng(seed);

    // exact case: a single linear layer
    {
        nn::Linear lin = nn::make_linear(6, 5, rng);
        Tensor x = Tensor::randn({1, 6}, rng);
        Tensor proj = Tensor::randn({1, 5}, rng);
        auto engine = [&] { return sum_all(mul(lin.forward(x), proj)); };
        auto oracle_loss = [&] {
            auto y = oracle::linear_fwd(lin, oracle::to_d(x), 1);
            double l = 0.0;
            for (size_t i = 0; i < y.size(); ++i) l += y[i] * double(proj.at(i));
            return l;
        };
        Rng srng(seed + 1);
        out.push_back(oracle::fd_check("linear", engine, oracle_loss, {lin.w, lin.b}, 64, srng));
    }

    SttfConfig scfg;
    scfg.height = scfg.width = 16;
    scfg.patch = 8;
    scfg.dim = 16;
    scfg.depth = 1;
    scfg.dec_layers = 2;
    scfg.vocab = 16;
    scfg.context = 8;
    scfg.seed = seed + 2;
    SttfModel sm = SttfModel::init(scfg);
    // the calibrated gate saturates; randomize it so the check is informative
    {
        Rng wrng(seed + 3);
        for (Tensor* t : {&sm.gate1.w, &sm.gate1.b, &sm.gate2.w, &sm.gate2.b}) {
            for (auto& v : t->data()) v = float(wrng.normal()) * 0.3f;
        }
    }

    // event-gate CNN
    {
        Tensor input = Tensor::rand_uniform({2, 8, 8}, rng, 0.0f, 1.0f);
        Tensor proj = Tensor::randn({1, 64}, rng);
        auto engine = [&] {
            Tensor probs = sigmoid(sm.gate2.forward(relu(sm.gate1.forward(input))));
            return sum_all(mul(reshape(probs, {1, 64}), proj));
        };
        auto oracle_loss = [&] {
            auto probs = oracle::gate_probs_fwd(sm, oracle::to_d(input), 8, 8);
            double l = 0.0;
            for (size_t i = 0; i < probs.size(); ++i) l += probs[i] * double(proj.at(i));
            return l;
        };
        Rng srng(seed + 4);
        out.push_back(oracle::fd_check("gate_cnn", engine, oracle_loss,
                                       {sm.gate1.w, sm.gate1.b, sm.gate2.w, sm.gate2.b}, 24, srng));
    }

    // fusion gate
    {
        Tensor prev_rows = Tensor::randn({5, 16}, rng);
        Tensor curr_rows = Tensor::randn({5, 16}, rng);
        Tensor proj = Tensor::randn({5, 16}, rng);
        auto engine = [&] {
            return sum_all(mul(fuse_blend(prev_rows, curr_rows, sm.fuse_w, sm.fuse_b), proj));
        };
        auto oracle_loss = [&] {
            auto y = oracle::fuse_blend_fwd(sm, oracle::to_d(prev_rows), oracle::to_d(curr_rows), 5, 16);
            double l = 0.0;
            for (size_t i = 0; i < y.size(); ++i) l += y[i] * double(proj.at(i));
            return l;
        };
        Rng srng(seed + 5);
        out.push_back(oracle::fd_check("fusion_gate", engine, oracle_loss, {sm.fuse_w, sm.fuse_b},
                                       48, srng));
    }

    // tau policy through the latency-regularized loss
    {
        std::vector<float> cosines;
        for (int i = 0; i < 12; ++i) cosines.push_back(float(rng.uniform(0.5, 1.0)));
        auto engine = [&] {
            Tensor tau = adapt_tau_t(0.82f, 0.07f, 0.5f, sm);
            return tau_latency_loss(cosines, tau, 1.0f);
        };
        auto oracle_loss = [&] {
            const double tau = oracle::adapt_tau_fwd(sm, 0.82, 0.07, 0.5);
            double l = 0.0;
            for (float c : cosines) l += 1.0 / (1.0 + std::exp(-(tau - double(c)) * 20.0));
            return l;
        };
        Rng srng(seed + 6);
        out.push_back(oracle::fd_check("tau_policy", engine, oracle_loss,
                                       {sm.policy_fc1.w, sm.policy_fc1.b, sm.policy_fc2.w,
                                        sm.policy_fc2.b},
                                       48, srng));
    }

    // router at uniform scores with fixed noise
    {
        Tensor p = Tensor::from_data({1, 3}, {1.0f / 3, 1.0f / 3, 1.0f / 3}, true);
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
        Rng srng(seed + 7);
        out.push_back(oracle::fd_check("router", engine, oracle_loss, {p}, 3, srng));
    }

    AncConfig acfg;
    acfg.height = acfg.width = 16;
    acfg.feat_dim = 16;
    acfg.dec_dim = 16;
    acfg.vocab = 16;
    acfg.context = 8;
    acfg.tiny_ch = 4;
    acfg.small_ch = 6;
    acfg.medium_ch = 8;
    acfg.seed = seed + 8;
    AncModel am = AncModel::init(acfg);

    // budget gate, including the gradient in b itself
    {
        Tensor z = Tensor::randn({1, 16}, rng);
        Tensor h = Tensor::randn({1, 16}, rng);
        Tensor b = Tensor::scalar(0.6f, true);
        Tensor proj = Tensor::randn({1, 16}, rng);
        auto engine = [&] {
            return sum_all(mul(budget_gate_t(z, h, b, am.gate, am.cfg.budget_slope), proj));
        };
        auto oracle_loss = [&] {
            auto a = oracle::budget_gate_fwd(am.gate, oracle::to_d(z), double(b.at(0)),
                                             double(am.cfg.budget_slope));
            double l = 0.0;
            for (size_t i = 0; i < a.size(); ++i) l += a[i] * double(h.at(i)) * double(proj.at(i));
            return l;
        };
        Rng srng(seed + 9);
        out.push_back(
            oracle::fd_check("budget_gate", engine, oracle_loss, {am.gate.w, am.gate.b, b}, 24, srng));
    }

    // decoder (token-bank flavor)
    {
        Tensor h = Tensor::randn({3, 16}, rng);
        Tensor proj = Tensor::randn({1, 16}, rng);
        FlopsLedger scratch;
        auto engine = [&] {
            DecodeOut d = decode(h, {1, 2, 3}, sm, scratch);
            return sum_all(mul(reshape(d.dist, {1, 16}), proj));
        };
        auto oracle_loss = [&] {
            auto dist = oracle::sttf_decode_fwd(sm, oracle::to_d(h), 3);
            double l = 0.0;
            for (size_t i = 0; i < dist.size(); ++i) l += dist[i] * double(proj.at(i));
            return l;
        };
        std::vector<Tensor> params = {sm.lm_head.w, sm.lm_head.b, sm.dec_ln.gamma, sm.dec_ln.beta};
        for (auto& blk : sm.dec_blocks) {
            params.push_back(blk.attn.q.w);
            params.push_back(blk.attn.k.w);
            params.push_back(blk.attn.v.w);
            params.push_back(blk.attn.out.w);
            params.push_back(blk.mlp.fc1.w);
            params.push_back(blk.mlp.fc2.w);
            params.push_back(blk.ln1.gamma);
            params.push_back(blk.ln2.beta);
        }
        Rng srng(seed + 10);
        out.push_back(oracle::fd_check("decoder_sttf", engine, oracle_loss, params, 8, srng));
    }

    // decoder (conditional flavor, full depth)
    {
        Tensor z = Tensor::randn({1, 16}, rng);
        Tensor proj = Tensor::randn({1, 16}, rng);
        FlopsLedger scratch;
        auto engine = [&] {
            AncDecodeOut d = conditional_decode(z, {1, 2}, 2, am, scratch);
            return sum_all(mul(reshape(d.dist, {1, 16}), proj));
        };
        auto oracle_loss = [&] {
            const uint32_t d = am.cfg.dec_dim;
            std::vector<double> seq = oracle::linear_fwd(am.z_proj, oracle::to_d(z), 1);
            seq.resize(3 * d);
            for (uint32_t r = 0; r < 2; ++r) {
                const uint32_t tok = r + 1; // prefix {1,2}
                for (uint32_t j = 0; j < d; ++j) {
                    seq[(r + 1) * d + j] = double(am.tok_embed.at(size_t(tok) * d + j));
                }
            }
            for (uint32_t r = 0; r < 3; ++r)
                for (uint32_t j = 0; j < d; ++j) seq[r * d + j] += double(am.dec_pos.at(size_t(r) * d + j));
            auto dist = oracle::anc_decode_fwd(am, seq, 3, 4);
            double l = 0.0;
            for (size_t i = 0; i < dist.size(); ++i) l += dist[i] * double(proj.at(i));
            return l;
        };
        std::vector<Tensor> params = {am.z_proj.w, am.z_proj.b, am.lm_head.w, am.tok_embed};
        for (auto& blk : am.dec_blocks) {
            params.push_back(blk.attn.q.w);
            params.push_back(blk.mlp.fc1.w);
        }
        Rng srng(seed + 11);
        out.push_back(oracle::fd_check("decoder_anc", engine, oracle_loss, params, 8, srng));
    }

    // complexity estimator end to end
    {
        EventFrame e = voxelize({{5, 3, 3, 1}, {6, 7, 9, 0}, {7, 11, 4, 1}}, 16, 16, 0, 100);
        Tensor proj = Tensor::randn({1, 3}, rng);
        FlopsLedger scratch;
        auto engine = [&] {
            ComplexityScores s = estimate_complexity(e, am, scratch);
            return sum_all(mul(s.p, proj));
        };
        auto oracle_loss = [&] {
            // double replica of the estimator
            std::vector<double> norm = oracle::to_d(e.counts);
            for (auto& v : norm) v = std::clamp(v / double(am.cfg.kappa), 0.0, 1.0);
            double density = 0.0;
            for (double v : norm) density += v;
            density /= double(norm.size());
            std::vector<double> c1(4 * 8 * 8);
            {
                auto w = oracle::to_d(am.est1.w);
                auto b = oracle::to_d(am.est1.b);
                ref::conv2d<double>(norm.data(), w.data(), b.data(), c1.data(), 2, 16, 16, 4, 3, 3, 2, 1);
            }
            oracle::relu_inplace(c1);
            std::vector<double> c2(4 * 4 * 4);
            {
                auto w = oracle::to_d(am.est2.w);
                auto b = oracle::to_d(am.est2.b);
                ref::conv2d<double>(c1.data(), w.data(), b.data(), c2.data(), 4, 8, 8, 4, 3, 3, 2, 1);
            }
            oracle::relu_inplace(c2);
            std::vector<double> feats(5);
            for (int c = 0; c < 4; ++c) {
                double acc = 0.0;
                for (int i = 0; i < 16; ++i) acc += c2[c * 16 + i];
                feats[c] = acc / 16.0;
            }
            feats[4] = density;
            auto logits = oracle::linear_fwd(am.est_head, feats, 1);
            auto p = oracle::softmax_rows_d(std::move(logits), 1);
            double l = 0.0;
            for (int i = 0; i < 3; ++i) l += p[i] * double(proj.at(i));
            return l;
        };
        Rng srng(seed + 12);
        out.push_back(oracle::fd_check("complexity_estimator", engine, oracle_loss,
                                       {am.est1.w, am.est1.b, am.est2.w, am.est2.b, am.est_head.w,
                                        am.est_head.b},
                                       16, srng));
    }

    return out;
}

bool all_pass(const std::vector<oracle::FdReport>& reports) {
    for (const auto& r : reports) {
        if (!r.pass) return false;
    }
    return true;
}

} // namespace tgv

#include "tgv/anc.hpp"

#include <algorithm>
#include <cmath>

#include "tgv/error.hpp"

namespace tgv {

namespace {

const char* kBranchStage[3] = {"branch_tiny", "branch_small", "branch_medium"};

uint32_t row_argmax(const Tensor& row) {
    uint32_t best = 0;
    for (uint32_t j = 1; j < row.numel(); ++j) {
        if (row.at(j) > row.at(best)) best = j;
    }
    return best;
}

} // namespace

uint64_t branch_flops(const AncConfig& cfg, uint32_t channels, uint32_t depth) {
    const uint64_t h4 = cfg.height / 4, w4 = cfg.width / 4;
    const uint64_t hw = h4 * w4;
    uint64_t f = 0;
    // patchify conv 5->c, k4 s4 (+bias, +relu)
    f += 2ull * channels * 5 * 4 * 4 * hw + channels * hw + channels * hw;
    // body convs c->c 3x3 pad1 (+bias, +relu)
    f += depth * (2ull * channels * channels * 9 * hw + channels * hw + channels * hw);
    // global average pool
    f += channels * hw;
    // projection head (+bias)
    f += 2ull * channels * cfg.feat_dim + cfg.feat_dim;
    return f;
}

AncModel AncModel::init(const AncConfig& cfg) {
    if (cfg.height % 4 != 0 || cfg.width % 4 != 0) {
        throw ConfigError("anc: frame dimensions must be divisible by 4");
    }
    AncModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);

    m.est1 = nn::make_conv(2, 4, 3, 2, 1, rng);
    m.est2 = nn::make_conv(4, 4, 3, 2, 1, rng);
    m.est_head = nn::make_linear(5, 3, rng);
    // density-pathway calibration: three linear-in-density logits whose
    // argmax walks Tiny -> Small -> Medium as event density rises
    {
        auto& w = m.est_head.w.data(); // [5,3]
        std::fill(w.begin(), w.end(), 0.0f);
        w[4 * 3 + 0] = -12.0f;
        w[4 * 3 + 1] = 0.0f;
        w[4 * 3 + 2] = 6.0f;
        auto& b = m.est_head.b.data();
        b[0] = 2.5f;
        b[1] = 0.5f;
        b[2] = -2.5f;
    }

    const uint32_t chans[3] = {cfg.tiny_ch, cfg.small_ch, cfg.medium_ch};
    const uint32_t depths[3] = {cfg.tiny_depth, cfg.small_depth, cfg.medium_depth};
    const char* names[3] = {"Tiny", "Small", "Medium"};
    for (int i = 0; i < 3; ++i) {
        AncBranch br;
        br.patchify = nn::make_conv(5, chans[i], 4, 4, 0, rng);
        for (uint32_t d = 0; d < depths[i]; ++d) {
            br.body.push_back(nn::make_conv(chans[i], chans[i], 3, 1, 1, rng));
        }
        br.proj = nn::make_linear(chans[i], cfg.feat_dim, rng);
        uint64_t params = br.patchify.param_count() + br.proj.param_count();
        for (const auto& c : br.body) params += c.param_count();
        m.branches[i] = std::move(br);
        m.specs[i] = BranchSpec{names[i], chans[i], depths[i], params,
                                branch_flops(cfg, chans[i], depths[i])};
    }
    if (!(m.specs[0].flops_per_frame < m.specs[1].flops_per_frame &&
          m.specs[1].flops_per_frame < m.specs[2].flops_per_frame)) {
        throw ConfigError("anc: branch sizes must give FLOPs(Tiny) < FLOPs(Small) < FLOPs(Medium)");
    }

    m.pre = nn::make_linear(cfg.feat_dim, cfg.feat_dim, rng);
    m.gate = nn::make_linear(cfg.feat_dim, cfg.feat_dim, rng);

    m.z_proj = nn::make_linear(cfg.feat_dim, cfg.dec_dim, rng);
    m.tok_embed = Tensor::randn({cfg.vocab, cfg.dec_dim}, rng, 0.02f, true);
    m.dec_pos = Tensor::randn({cfg.context, cfg.dec_dim}, rng, 0.02f, true);
    for (int l = 0; l < 4; ++l) m.dec_blocks.push_back(nn::make_block(cfg.dec_dim, 2 * cfg.dec_dim, rng));
    m.dec_ln = nn::make_layer_norm(cfg.dec_dim);
    m.lm_head = nn::make_linear(cfg.dec_dim, cfg.vocab, rng);
    return m;
}

TensorMap AncModel::named_params() const {
    nn::ParamRegistry reg;
    reg.add("est1", est1);
    reg.add("est2", est2);
    reg.add("est_head", est_head);
    const char* names[3] = {"tiny", "small", "medium"};
    for (int i = 0; i < 3; ++i) {
        reg.add(std::string(names[i]) + ".patchify", branches[i].patchify);
        for (size_t d = 0; d < branches[i].body.size(); ++d) {
            reg.add(std::string(names[i]) + ".body" + std::to_string(d), branches[i].body[d]);
        }
        reg.add(std::string(names[i]) + ".proj", branches[i].proj);
    }
    reg.add("pre", pre);
    reg.add("gate", gate);
    reg.add("z_proj", z_proj);
    reg.add("tok_embed", tok_embed);
    reg.add("dec_pos", dec_pos);
    for (size_t l = 0; l < dec_blocks.size(); ++l) reg.add("dec_block" + std::to_string(l), dec_blocks[l]);
    reg.add("dec_ln", dec_ln);
    reg.add("lm_head", lm_head);
    return reg.params();
}

void AncModel::load_state(const TensorMap& params) {
    nn::ParamRegistry reg;
    TensorMap mine = named_params();
    for (auto& [name, t] : mine) reg.add(name, t);
    reg.load(params);
}

uint32_t ComplexityScores::argmax() const { return row_argmax(p); }

ComplexityScores estimate_complexity(const EventFrame& e, const AncModel& model,
                                     FlopsLedger& ledger) {
    const AncConfig& cfg = model.cfg;
    if (e.counts.ndim() != 3 || e.counts.dim(0) != 2 || e.counts.dim(1) != cfg.height ||
        e.counts.dim(2) != cfg.width) {
        throw ConfigError("estimate_complexity: event frame " + shape_str(e.counts.shape()) +
                          " does not match the model's 2x" + std::to_string(cfg.height) + "x" +
                          std::to_string(cfg.width));
    }
    FlopsScope scope(ledger, "complexity_estimator");
    Tensor norm = clamp(scale(e.counts, 1.0f / cfg.kappa), 0.0f, 1.0f);
    Tensor f1 = relu(model.est1.forward(norm));
    Tensor f2 = relu(model.est2.forward(f1));
    Tensor pooled = reshape(mean_hw(f2), {1, 4});
    Tensor density = reshape(mean_all(norm), {1, 1});
    Tensor features = concat_cols(pooled, density);
    ComplexityScores out;
    out.p = softmax_rows(model.est_head.forward(features));
    return out;
}

RoutingDecision gumbel_route(const ComplexityScores& scores, float temperature, Rng& rng,
                             RouteMode mode, float route_threshold) {
    if (temperature <= 0.0f) {
        throw ParamError("gumbel_route: temperature must be positive, got " +
                         std::to_string(temperature));
    }
    if (scores.p.numel() != 3) throw ShapeError("gumbel_route: expected K=3 scores");

    RoutingDecision out;
    out.temperature = temperature;
    out.noise_seed = rng.state();
    Tensor p2 = reshape(scores.p, {1, 3});
    Tensor logits = log_op(p2);
    if (mode == RouteMode::train) {
        for (int i = 0; i < 3; ++i) out.noise[i] = float(rng.gumbel());
        Tensor noise = Tensor::from_data({1, 3}, {out.noise[0], out.noise[1], out.noise[2]});
        logits = add(logits, noise);
    }
    out.w_t = softmax_rows(scale(logits, 1.0f / temperature));
    for (uint32_t i = 0; i < 3; ++i) {
        out.w[i] = out.w_t.at(i);
        if (out.w[i] > route_threshold) out.active.push_back(i);
    }
    if (out.active.empty()) {
        // softmax over 3 weights has a maximum >= 1/3 > 0.1
        throw Error("gumbel_route: empty active set (unreachable for K=3)");
    }
    return out;
}

Tensor stack_input(const Tensor& x, const EventFrame& e, const AncModel& model,
                   FlopsLedger& ledger) {
    const AncConfig& cfg = model.cfg;
    if (x.ndim() != 3 || x.dim(0) != 3 || x.dim(1) != cfg.height || x.dim(2) != cfg.width) {
        throw ConfigError("anc: rgb frame " + shape_str(x.shape()) + " does not match the model");
    }
    FlopsScope scope(ledger, "input_prep");
    Tensor norm = clamp(scale(e.counts, 1.0f / cfg.kappa), 0.0f, 1.0f);
    std::vector<float> stacked;
    stacked.reserve(size_t(5) * cfg.height * cfg.width);
    stacked.insert(stacked.end(), x.data().begin(), x.data().end());
    stacked.insert(stacked.end(), norm.data().begin(), norm.data().end());
    return Tensor::from_data({5, cfg.height, cfg.width}, std::move(stacked));
}

BranchForwardOut branch_forward(const Tensor& x, const EventFrame& e, const RoutingDecision& route,
                                const AncModel& model, FlopsLedger& ledger) {
    const AncConfig& cfg = model.cfg;
    Tensor input = stack_input(x, e, model, ledger);
    Tensor w_col = transpose(route.w_t); // [3,1]

    BranchForwardOut out;
    out.z = Tensor::zeros({1, cfg.feat_dim});
    for (uint32_t i = 0; i < 3; ++i) {
        const bool active = std::find(route.active.begin(), route.active.end(), i) != route.active.end();
        if (!active) continue;
        FlopsLedger branch_ledger;
        Tensor zi;
        {
            FlopsScope scope(branch_ledger, "branch");
            const AncBranch& br = model.branches[i];
            Tensor f = relu(br.patchify.forward(input));
            for (const auto& conv : br.body) f = relu(conv.forward(f));
            zi = br.proj.forward(reshape(mean_hw(f), {1, model.specs[i].channels}));
        }
        out.raw_flops[i] = branch_ledger.total();
        out.executed[i] = true;
        out.weighted_flops += double(route.w[i]) * double(out.raw_flops[i]);
        ledger.add(kBranchStage[i], uint64_t(std::llround(double(route.w[i]) * double(out.raw_flops[i]))));
        Tensor wi = slice_rows(w_col, i, i + 1); // [1,1]
        out.z = add(out.z, scale_by(zi, reshape(wi, {1})));
    }
    return out;
}

BudgetSignal BudgetSignal::clamped(float v) { return BudgetSignal{std::clamp(v, 0.0f, 1.0f)}; }

Tensor budget_gate_t(const Tensor& h_prev, const Tensor& h, const Tensor& b,
                     const nn::Linear& gate, float slope) {
    if (h_prev.shape() != h.shape()) throw ShapeError("budget_gate: h_prev and h shapes differ");
    Tensor logits = gate.forward(h_prev);
    Tensor shift = scale(add_scalar(b, -0.5f), slope); // [1]
    Tensor ones = Tensor::full({h.dim(0), h.dim(1)}, 1.0f);
    Tensor a = sigmoid(add(logits, scale_by(ones, shift)));
    return mul(a, h);
}

BudgetGateOut budget_gate(const Tensor& h_prev, const Tensor& h, BudgetSignal b,
                          const AncModel& model, FlopsLedger& ledger) {
    FlopsScope scope(ledger, "budget_gate");
    Tensor logits = model.gate.forward(h_prev);
    Tensor shift = scale(add_scalar(Tensor::scalar(b.b), -0.5f), model.cfg.budget_slope);
    Tensor ones = Tensor::full({h.dim(0), h.dim(1)}, 1.0f);
    BudgetGateOut out;
    out.activations = sigmoid(add(logits, scale_by(ones, shift)));
    out.gated = mul(out.activations, h);
    out.active_channels = 0;
    for (size_t i = 0; i < out.activations.numel(); ++i) {
        if (out.activations.at(i) > 0.5f) ++out.active_channels;
    }
    return out;
}

AncDecodeOut conditional_decode(const Tensor& z, const std::vector<uint32_t>& y, uint32_t level,
                                const AncModel& model, FlopsLedger& ledger) {
    const AncConfig& cfg = model.cfg;
    if (level > 2) throw ParamError("conditional_decode: level " + std::to_string(level) + " not in {0,1,2}");
    if (z.ndim() != 2 || z.dim(0) != 1 || z.dim(1) != cfg.feat_dim) {
        throw ShapeError("conditional_decode: z must be [1,feat_dim]");
    }
    if (1 + y.size() > cfg.context) {
        throw ParamError("conditional_decode: prefix length " + std::to_string(y.size()) +
                         " exceeds context " + std::to_string(cfg.context - 1));
    }
    for (uint32_t id : y) {
        if (id >= cfg.vocab) throw VocabError("conditional_decode: token id " + std::to_string(id) + " outside vocab");
    }
    const uint32_t depth = 2 + level;
    FlopsScope scope(ledger, "decoder");
    Tensor seq = model.z_proj.forward(z); // [1, dec_dim]
    if (!y.empty()) seq = concat_rows(seq, gather_rows(model.tok_embed, y));
    const uint32_t L = seq.dim(0);
    seq = add(seq, slice_rows(model.dec_pos, 0, L));
    Tensor bias = nn::causal_bias(L);
    for (uint32_t l = 0; l < depth; ++l) seq = nn::block_forward(model.dec_blocks[l], seq, bias);
    seq = model.dec_ln.forward(seq);
    Tensor logits = model.lm_head.forward(slice_rows(seq, L - 1, L));
    Tensor dist = reshape(softmax_rows(logits), {cfg.vocab});
    AncDecodeOut out;
    out.dist = dist; // keeps the graph when gradients are enabled
    out.token = row_argmax(dist);
    return out;
}

namespace {

AncStepResult anc_step_impl(const AncModel& model, const Tensor& x, const EventFrame& e,
                            const std::vector<uint32_t>& y, BudgetSignal budget, int forced_branch,
                            FlopsLedger& ledger) {
    NoGradGuard inference;
    const auto before = ledger.entries();

    ComplexityScores scores = estimate_complexity(e, model, ledger);
    RoutingDecision route;
    if (forced_branch < 0) {
        Rng rng(0); // infer mode draws no noise
        FlopsScope scope(ledger, "router");
        route = gumbel_route(scores, model.cfg.temperature, rng, RouteMode::infer,
                             model.cfg.route_threshold);
    } else {
        route.temperature = model.cfg.temperature;
        route.w = {0.0f, 0.0f, 0.0f};
        route.w[forced_branch] = 1.0f;
        route.active = {uint32_t(forced_branch)};
        route.w_t = Tensor::from_data({1, 3}, {route.w[0], route.w[1], route.w[2]});
    }

    BranchForwardOut bf = branch_forward(x, e, route, model, ledger);
    Tensor pre_h;
    {
        FlopsScope scope(ledger, "budget_gate");
        pre_h = relu(model.pre.forward(bf.z));
    }
    BudgetGateOut gated = budget_gate(bf.z, pre_h, budget, model, ledger);

    const uint32_t level = forced_branch < 0 ? scores.argmax() : uint32_t(forced_branch);
    AncDecodeOut dec = conditional_decode(gated.gated, y, level, model, ledger);

    AncStepResult res;
    res.token = dec.token;
    res.dist = dec.dist;
    for (int i = 0; i < 3; ++i) {
        res.metrics.p[i] = scores.p.at(i);
        res.metrics.w[i] = route.w[i];
    }
    res.metrics.active_branches = route.active;
    res.metrics.level = level;
    res.metrics.active_channels = gated.active_channels;
    res.metrics.weighted_branch_flops = bf.weighted_flops;
    for (const auto& [stage, count] : ledger.entries()) {
        auto it = before.find(stage);
        const uint64_t delta = count - (it == before.end() ? 0 : it->second);
        if (delta > 0) res.metrics.stage_flops[stage] = delta;
        res.metrics.frame_flops += delta;
    }
    res.flops = double(res.metrics.frame_flops);
    return res;
}

} // namespace

AncStepResult anc_step(const AncModel& model, const Tensor& x, const EventFrame& e,
                       const std::vector<uint32_t>& y, BudgetSignal budget, FlopsLedger& ledger) {
    return anc_step_impl(model, x, e, y, budget, -1, ledger);
}

AncStepResult anc_step_forced(const AncModel& model, const Tensor& x, const EventFrame& e,
                              const std::vector<uint32_t>& y, BudgetSignal budget,
                              uint32_t forced_branch, FlopsLedger& ledger) {
    if (forced_branch > 2) throw ParamError("anc_step_forced: branch index out of range");
    return anc_step_impl(model, x, e, y, budget, int(forced_branch), ledger);
}

} // namespace tgv

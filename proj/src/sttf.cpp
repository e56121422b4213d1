#include "tgv/sttf.hpp"

#include <algorithm>
#include <cmath>

#include "tgv/error.hpp"

namespace tgv {

namespace {

uint64_t fnv1a(uint64_t h, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xFF;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::vector<uint32_t> complement_indices(const std::vector<uint32_t>& sorted_active, uint32_t n) {
    std::vector<uint32_t> out;
    out.reserve(n - sorted_active.size());
    size_t k = 0;
    for (uint32_t i = 0; i < n; ++i) {
        if (k < sorted_active.size() && sorted_active[k] == i) {
            ++k;
        } else {
            out.push_back(i);
        }
    }
    return out;
}

void copy_row(std::vector<float>& dst, const std::vector<float>& src, size_t dst_row,
              size_t src_row, size_t width) {
    std::copy_n(src.data() + src_row * width, width, dst.data() + dst_row * width);
}

double slot_cosine(const std::vector<float>& a, const std::vector<float>& b, size_t row,
                   size_t d) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t j = 0; j < d; ++j) {
        const double av = a[row * d + j];
        const double bv = b[row * d + j];
        dot += av * bv;
        na += av * av;
        nb += bv * bv;
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-8 || nb < 1e-8) return 0.0;
    return dot / (na * nb);
}

struct EncodeResult {
    Tensor tokens;                // [A,d]
    std::vector<Tensor> k_cache;  // depth x [A,d]
    std::vector<Tensor> v_cache;
};

// Shared encoder core. Active rows are queries; when prev is given, stale
// slots contribute cached keys/values (read-only context).
EncodeResult encode_active(const Tensor& pixel_rows, const std::vector<uint32_t>& indices,
                           const TokenBank* prev, const SttfModel& m) {
    EncodeResult res;
    Tensor x = add(m.patch_embed.forward(pixel_rows), gather_rows(m.pos_embed, indices));
    std::vector<uint32_t> stale_idx;
    if (prev != nullptr) stale_idx = complement_indices(indices, m.cfg.n_patches());
    res.k_cache.reserve(m.blocks.size());
    res.v_cache.reserve(m.blocks.size());
    for (size_t l = 0; l < m.blocks.size(); ++l) {
        const nn::Block& blk = m.blocks[l];
        Tensor q_in = blk.ln1.forward(x);
        Tensor k_act = blk.attn.k.forward(q_in);
        Tensor v_act = blk.attn.v.forward(q_in);
        Tensor k_all = k_act;
        Tensor v_all = v_act;
        if (!stale_idx.empty()) {
            k_all = concat_rows(k_act, gather_rows(prev->k_cache[l], stale_idx));
            v_all = concat_rows(v_act, gather_rows(prev->v_cache[l], stale_idx));
        }
        Tensor att = nn::attend_precomputed(blk.attn, q_in, k_all, v_all, {});
        x = add(x, att);
        x = add(x, blk.mlp.forward(blk.ln2.forward(x)));
        res.k_cache.push_back(k_act.detach());
        res.v_cache.push_back(v_act.detach());
    }
    res.tokens = m.encoder_ln.forward(x);
    return res;
}

} // namespace

uint64_t SttfConfig::config_hash() const {
    uint64_t h = 0xCBF29CE484222325ull;
    h = fnv1a(h, height);
    h = fnv1a(h, width);
    h = fnv1a(h, patch);
    h = fnv1a(h, dim);
    h = fnv1a(h, depth);
    h = fnv1a(h, dec_layers);
    h = fnv1a(h, vocab);
    h = fnv1a(h, context);
    return h;
}

SttfModel SttfModel::init(const SttfConfig& cfg) {
    if (cfg.patch == 0 || cfg.height % cfg.patch != 0 || cfg.width % cfg.patch != 0) {
        throw ConfigError("sttf: patch size must divide the frame dimensions");
    }
    SttfModel m;
    m.cfg = cfg;
    Rng rng(cfg.seed);

    // Event gate, calibrated so any event pixel clears the 0.5 threshold
    // while quiet pixels stay well below it: center-tap averaging kernels
    // into a 20x amplifier with a -2 bias.
    m.gate1 = nn::make_conv(2, 8, 3, 1, 1, rng);
    m.gate2 = nn::make_conv(8, 1, 3, 1, 1, rng);
    std::fill(m.gate1.w.data().begin(), m.gate1.w.data().end(), 0.0f);
    std::fill(m.gate2.w.data().begin(), m.gate2.w.data().end(), 0.0f);
    for (uint32_t co = 0; co < 8; ++co)
        for (uint32_t ci = 0; ci < 2; ++ci) m.gate1.w.data()[(co * 2 + ci) * 9 + 4] = 0.5f;
    for (uint32_t ci = 0; ci < 8; ++ci) m.gate2.w.data()[ci * 9 + 4] = 5.0f;
    m.gate2.b.data()[0] = -2.0f;

    const uint32_t pvec = 3 * cfg.patch * cfg.patch;
    m.patch_embed = nn::make_linear(pvec, cfg.dim, rng);
    m.pos_embed = Tensor::randn({cfg.n_patches(), cfg.dim}, rng, 0.02f, true);
    for (uint32_t l = 0; l < cfg.depth; ++l) {
        m.blocks.push_back(nn::make_block(cfg.dim, 2 * cfg.dim, rng));
    }
    m.encoder_ln = nn::make_layer_norm(cfg.dim);

    m.fuse_w = Tensor::randn({2 * cfg.dim, 1}, rng, 0.1f / std::sqrt(float(cfg.dim)), true);
    m.fuse_b = Tensor::zeros({1}, true);

    m.policy_fc1 = nn::make_linear(3, 16, rng);
    m.policy_fc2 = nn::make_linear(16, 1, rng);

    m.cross_ln_q = nn::make_layer_norm(cfg.dim);
    m.cross_ln_kv = nn::make_layer_norm(cfg.dim);
    m.cross = nn::make_attention(cfg.dim, rng);

    m.tok_embed = Tensor::randn({cfg.vocab, cfg.dim}, rng, 0.02f, true);
    m.dec_pos = Tensor::randn({cfg.context, cfg.dim}, rng, 0.02f, true);
    for (uint32_t l = 0; l < cfg.dec_layers; ++l) {
        m.dec_blocks.push_back(nn::make_block(cfg.dim, 2 * cfg.dim, rng));
    }
    m.dec_ln = nn::make_layer_norm(cfg.dim);
    m.lm_head = nn::make_linear(cfg.dim, cfg.vocab, rng);
    return m;
}

TensorMap SttfModel::named_params() const {
    nn::ParamRegistry reg;
    reg.add("gate1", gate1);
    reg.add("gate2", gate2);
    reg.add("patch_embed", patch_embed);
    reg.add("pos_embed", pos_embed);
    for (size_t l = 0; l < blocks.size(); ++l) reg.add("block" + std::to_string(l), blocks[l]);
    reg.add("encoder_ln", encoder_ln);
    reg.add("fuse_w", fuse_w);
    reg.add("fuse_b", fuse_b);
    reg.add("policy_fc1", policy_fc1);
    reg.add("policy_fc2", policy_fc2);
    reg.add("cross_ln_q", cross_ln_q);
    reg.add("cross_ln_kv", cross_ln_kv);
    reg.add("cross", cross);
    reg.add("tok_embed", tok_embed);
    reg.add("dec_pos", dec_pos);
    for (size_t l = 0; l < dec_blocks.size(); ++l) {
        reg.add("dec_block" + std::to_string(l), dec_blocks[l]);
    }
    reg.add("dec_ln", dec_ln);
    reg.add("lm_head", lm_head);
    return reg.params();
}

void SttfModel::load_state(const TensorMap& params) {
    nn::ParamRegistry reg;
    TensorMap mine = named_params();
    for (auto& [name, t] : mine) reg.add(name, t);
    reg.load(params);
}

ChangeMask detect_change_mask(const EventFrame& e, const SttfModel& model, FlopsLedger& ledger) {
    const SttfConfig& cfg = model.cfg;
    if (e.counts.ndim() != 3 || e.counts.dim(0) != 2 || e.counts.dim(1) != cfg.height ||
        e.counts.dim(2) != cfg.width) {
        throw ConfigError("detect_change_mask: event frame " + shape_str(e.counts.shape()) +
                          " does not match the model's 2x" + std::to_string(cfg.height) + "x" +
                          std::to_string(cfg.width));
    }
    Tensor probs;
    {
        FlopsScope scope(ledger, "event_gate");
        Tensor norm = clamp(scale(e.counts, 1.0f / cfg.kappa), 0.0f, 1.0f);
        Tensor h = relu(model.gate1.forward(norm));
        probs = sigmoid(model.gate2.forward(h));
    }
    ChangeMask mask;
    std::vector<float> pix(probs.numel());
    for (size_t i = 0; i < pix.size(); ++i) pix[i] = probs.at(i) > 0.5f ? 1.0f : 0.0f;
    mask.pixel = Tensor::from_data({1, cfg.height, cfg.width}, std::move(pix));

    const uint32_t p = cfg.patch, gw = cfg.grid_w(), gh = cfg.grid_h();
    mask.per_patch.assign(cfg.n_patches(), 0);
    const auto& md = mask.pixel.data();
    for (uint32_t gy = 0; gy < gh; ++gy) {
        for (uint32_t gx = 0; gx < gw; ++gx) {
            double sum = 0.0;
            for (uint32_t yy = 0; yy < p; ++yy)
                for (uint32_t xx = 0; xx < p; ++xx)
                    sum += md[(size_t(gy) * p + yy) * cfg.width + gx * p + xx];
            if (sum / double(p * p) > cfg.theta_patch) {
                mask.per_patch[gy * gw + gx] = 1;
                ++mask.active_count;
            }
        }
    }
    return mask;
}

Tensor patchify(const Tensor& x, uint32_t patch_size) {
    if (x.ndim() != 3 || x.dim(0) != 3) throw ShapeError("patchify: need [3,H,W], got " + shape_str(x.shape()));
    const uint32_t h = x.dim(1), w = x.dim(2), p = patch_size;
    if (p == 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("patchify: patch " + std::to_string(p) + " must divide " +
                         std::to_string(w) + "x" + std::to_string(h));
    }
    const uint32_t gw = w / p, gh = h / p, n = gw * gh, pvec = 3 * p * p;
    std::vector<float> rows(size_t(n) * pvec);
    const auto& xd = x.data();
    for (uint32_t gy = 0; gy < gh; ++gy) {
        for (uint32_t gx = 0; gx < gw; ++gx) {
            float* row = rows.data() + size_t(gy * gw + gx) * pvec;
            size_t k = 0;
            for (uint32_t c = 0; c < 3; ++c)
                for (uint32_t yy = 0; yy < p; ++yy)
                    for (uint32_t xx = 0; xx < p; ++xx)
                        row[k++] = xd[(size_t(c) * h + gy * p + yy) * w + gx * p + xx];
        }
    }
    return Tensor::from_data({n, pvec}, std::move(rows));
}

ActivePatchSet extract_active_patches(const Tensor& x, const ChangeMask& mask, uint32_t patch_size) {
    if (x.ndim() != 3 || x.dim(0) != 3) {
        throw ShapeError("extract_active_patches: need [3,H,W], got " + shape_str(x.shape()));
    }
    const uint32_t h = x.dim(1), w = x.dim(2), p = patch_size;
    if (p == 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("extract_active_patches: patch must divide the frame");
    }
    const uint32_t gw = w / p;
    ActivePatchSet out;
    for (uint32_t i = 0; i < mask.per_patch.size(); ++i) {
        if (mask.per_patch[i]) out.indices.push_back(i);
    }
    if (out.indices.empty()) return out;
    const uint32_t pvec = 3 * p * p;
    std::vector<float> rows(out.indices.size() * pvec);
    const auto& xd = x.data();
    for (size_t r = 0; r < out.indices.size(); ++r) {
        const uint32_t gy = out.indices[r] / gw, gx = out.indices[r] % gw;
        float* row = rows.data() + r * pvec;
        size_t k = 0;
        for (uint32_t c = 0; c < 3; ++c)
            for (uint32_t yy = 0; yy < p; ++yy)
                for (uint32_t xx = 0; xx < p; ++xx)
                    row[k++] = xd[(size_t(c) * h + gy * p + yy) * w + gx * p + xx];
    }
    out.pixels = Tensor::from_data({uint32_t(out.indices.size()), pvec}, std::move(rows));
    return out;
}

TokenBank full_encode(const Tensor& x, const SttfModel& model, FlopsLedger& ledger) {
    const SttfConfig& cfg = model.cfg;
    if (x.ndim() != 3 || x.dim(1) != cfg.height || x.dim(2) != cfg.width) {
        throw ConfigError("full_encode: frame " + shape_str(x.shape()) + " does not match model");
    }
    std::vector<uint32_t> all(cfg.n_patches());
    for (uint32_t i = 0; i < all.size(); ++i) all[i] = i;
    TokenBank bank;
    {
        FlopsScope scope(ledger, "sparse_encoder");
        EncodeResult enc = encode_active(patchify(x, cfg.patch), all, nullptr, model);
        bank.tokens = enc.tokens.detach();
        bank.k_cache = std::move(enc.k_cache);
        bank.v_cache = std::move(enc.v_cache);
    }
    bank.stale_age.assign(cfg.n_patches(), 0);
    bank.frame_index = 0;
    bank.config_hash = cfg.config_hash();
    return bank;
}

TokenBank selective_update(const ActivePatchSet& active, const ChangeMask& mask,
                           const TokenBank& prev, const SttfModel& model, FlopsLedger& ledger) {
    const SttfConfig& cfg = model.cfg;
    const uint32_t n = cfg.n_patches(), d = cfg.dim;
    if (prev.tokens.ndim() != 2 || prev.tokens.dim(0) != n || prev.tokens.dim(1) != d ||
        prev.k_cache.size() != cfg.depth) {
        throw ConfigError("selective_update: token bank " + shape_str(prev.tokens.shape()) +
                          " does not match the model (" + std::to_string(n) + "x" +
                          std::to_string(d) + ", depth " + std::to_string(cfg.depth) + ")");
    }
    if (mask.per_patch.size() != n) throw ConfigError("selective_update: mask patch count mismatch");

    TokenBank bank;
    bank.tokens = prev.tokens.detach();
    bank.k_cache.reserve(cfg.depth);
    bank.v_cache.reserve(cfg.depth);
    for (uint32_t l = 0; l < cfg.depth; ++l) {
        bank.k_cache.push_back(prev.k_cache[l].detach());
        bank.v_cache.push_back(prev.v_cache[l].detach());
    }
    bank.stale_age.resize(n);
    for (uint32_t i = 0; i < n; ++i) bank.stale_age[i] = prev.stale_age[i] + 1;
    bank.frame_index = prev.frame_index + 1;
    bank.config_hash = prev.config_hash;

    if (!active.indices.empty()) {
        FlopsScope scope(ledger, "sparse_encoder");
        EncodeResult enc = encode_active(active.pixels, active.indices, &prev, model);
        for (size_t r = 0; r < active.indices.size(); ++r) {
            const uint32_t slot = active.indices[r];
            copy_row(bank.tokens.data(), enc.tokens.data(), slot, r, d);
            for (uint32_t l = 0; l < cfg.depth; ++l) {
                copy_row(bank.k_cache[l].data(), enc.k_cache[l].data(), slot, r, d);
                copy_row(bank.v_cache[l].data(), enc.v_cache[l].data(), slot, r, d);
            }
            bank.stale_age[slot] = 0;
        }
    }
    return bank;
}

Tensor fuse_blend(const Tensor& prev_rows, const Tensor& curr_rows, const Tensor& gate_w,
                  const Tensor& gate_b) {
    Tensor g = sigmoid(add_rowvec(matmul(concat_cols(prev_rows, curr_rows), gate_w), gate_b));
    return add(prev_rows, mul_colvec(sub(curr_rows, prev_rows), g));
}

uint32_t fuse_tokens(const TokenBank& prev, TokenBank& curr, const FusionConfig& cfg,
                     FlopsLedger& ledger, std::vector<uint32_t>* merged_out) {
    if (prev.tokens.shape() != curr.tokens.shape()) {
        throw ConfigError("fuse_tokens: bank shapes differ");
    }
    const uint32_t d = curr.tokens.dim(1);
    const float tau = cfg.per_layer.empty() ? cfg.tau : cfg.per_layer.back();

    std::vector<uint32_t> merged;
    uint32_t refreshed = 0;
    for (uint32_t i = 0; i < curr.stale_age.size(); ++i) {
        if (curr.stale_age[i] != 0) continue;
        ++refreshed;
        if (slot_cosine(prev.tokens.data(), curr.tokens.data(), i, d) > double(tau)) {
            merged.push_back(i);
        }
    }
    FlopsScope scope(ledger, "fusion");
    FlopsScope::count(uint64_t(refreshed) * (6 * d + 2)); // cosine checks
    if (!merged.empty()) {
        Tensor p = gather_rows(prev.tokens, merged);
        Tensor c = gather_rows(curr.tokens, merged);
        Tensor blended = fuse_blend(p, c, cfg.gate_w, cfg.gate_b);
        for (size_t r = 0; r < merged.size(); ++r) {
            copy_row(curr.tokens.data(), blended.data(), merged[r], r, d);
        }
    }
    if (merged_out != nullptr) *merged_out = merged;
    return uint32_t(merged.size());
}

Tensor adapt_tau_t(float mean_sim, float std_sim, float budget, const SttfModel& model) {
    if (budget < 0.0f || budget > 1.0f) {
        throw ParamError("adapt_tau: budget " + std::to_string(budget) + " outside [0,1]");
    }
    if (!std::isfinite(mean_sim) || !std::isfinite(std_sim)) {
        throw NumericError("adapt_tau: non-finite similarity stats");
    }
    Tensor in = Tensor::from_data({1, 3}, {mean_sim, std_sim, budget});
    Tensor h = relu(model.policy_fc1.forward(in));
    Tensor o = sigmoid(model.policy_fc2.forward(h));
    const float lo = model.cfg.tau_min, hi = model.cfg.tau_max;
    return add_scalar(scale(o, hi - lo), lo);
}

std::vector<float> adapt_tau(const std::vector<std::pair<float, float>>& layer_stats, float budget,
                             const SttfModel& model) {
    std::vector<float> out;
    out.reserve(layer_stats.size());
    for (const auto& [mean_sim, std_sim] : layer_stats) {
        out.push_back(adapt_tau_t(mean_sim, std_sim, budget, model).at(0));
    }
    return out;
}

Tensor temporal_cross_attention(const TokenBank& bank, const Tensor& text_emb,
                                const SttfModel& model, FlopsLedger& ledger, float gamma) {
    const uint32_t n = bank.tokens.dim(0), d = bank.tokens.dim(1);
    if (text_emb.ndim() != 2 || text_emb.dim(1) != d) {
        throw ShapeError("temporal_cross_attention: text width " + shape_str(text_emb.shape()) +
                         " does not match token width " + std::to_string(d));
    }
    const uint32_t L = text_emb.dim(0);
    std::vector<float> bias(size_t(L) * n, 0.0f);
    for (uint32_t j = 0; j < n; ++j) {
        if (bank.stale_age[j] > 0) {
            for (uint32_t i = 0; i < L; ++i) bias[size_t(i) * n + j] = -gamma;
        }
    }
    FlopsScope scope(ledger, "cross_attn");
    Tensor q_in = model.cross_ln_q.forward(text_emb);
    Tensor kv_in = model.cross_ln_kv.forward(bank.tokens);
    Tensor att = nn::attend(model.cross, q_in, kv_in, Tensor::from_data({L, n}, std::move(bias)));
    return add(text_emb, att);
}

Tensor embed_prefix(const std::vector<uint32_t>& prefix, const SttfModel& model) {
    if (prefix.empty()) throw ParamError("embed_prefix: empty prefix");
    if (prefix.size() > model.cfg.context) {
        throw ParamError("embed_prefix: prefix length " + std::to_string(prefix.size()) +
                         " exceeds context " + std::to_string(model.cfg.context));
    }
    for (uint32_t id : prefix) {
        if (id >= model.cfg.vocab) {
            throw VocabError("embed_prefix: token id " + std::to_string(id) + " outside vocab " +
                             std::to_string(model.cfg.vocab));
        }
    }
    Tensor tok = gather_rows(model.tok_embed, prefix);
    Tensor pos = slice_rows(model.dec_pos, 0, uint32_t(prefix.size()));
    return add(tok, pos);
}

DecodeOut decode(const Tensor& h, const std::vector<uint32_t>& y_prefix, const SttfModel& model,
                 FlopsLedger& ledger) {
    if (h.ndim() != 2 || h.dim(0) != y_prefix.size() || h.dim(1) != model.cfg.dim) {
        throw ShapeError("decode: h " + shape_str(h.shape()) + " does not match prefix length " +
                         std::to_string(y_prefix.size()));
    }
    if (y_prefix.size() >= model.cfg.context) {
        throw ParamError("decode: prefix length " + std::to_string(y_prefix.size()) +
                         " must stay below the context limit " + std::to_string(model.cfg.context));
    }
    for (uint32_t id : y_prefix) {
        if (id >= model.cfg.vocab) {
            throw VocabError("decode: token id " + std::to_string(id) + " outside vocab");
        }
    }
    const uint32_t L = h.dim(0);
    FlopsScope scope(ledger, "decoder");
    Tensor bias = nn::causal_bias(L);
    Tensor x = h;
    for (const auto& blk : model.dec_blocks) x = nn::block_forward(blk, x, bias);
    x = model.dec_ln.forward(x);
    Tensor logits = model.lm_head.forward(slice_rows(x, L - 1, L));
    Tensor dist = reshape(softmax_rows(logits), {model.cfg.vocab});
    DecodeOut out;
    out.dist = dist; // keeps the graph when gradients are enabled
    uint32_t best = 0;
    for (uint32_t j = 1; j < model.cfg.vocab; ++j) {
        if (dist.at(j) > dist.at(best)) best = j; // strict: ties keep the lowest index
    }
    out.token = best;
    return out;
}

SttfStepResult sttf_step(const SttfModel& model, const Tensor& x_t, const EventFrame& e_t,
                         const std::vector<uint32_t>& y, const TokenBank* prev,
                         FlopsLedger& ledger) {
    NoGradGuard inference;
    const SttfConfig& cfg = model.cfg;
    if (x_t.ndim() != 3 || x_t.dim(0) != 3 || x_t.dim(1) != cfg.height || x_t.dim(2) != cfg.width) {
        throw ConfigError("sttf_step: frame " + shape_str(x_t.shape()) + " does not match model");
    }
    if (prev != nullptr && prev->config_hash != cfg.config_hash()) {
        throw SessionError("sttf_step: state comes from a different session configuration");
    }

    const auto before = ledger.entries();

    ChangeMask mask = detect_change_mask(e_t, model, ledger);
    ActivePatchSet active = extract_active_patches(x_t, mask, cfg.patch);

    SttfStepResult res;
    float tau_used = cfg.tau;
    if (prev != nullptr) {
        res.state = selective_update(active, mask, *prev, model, ledger);
        res.metrics.active_tokens = uint32_t(active.indices.size());

        FusionConfig fc;
        fc.gate_w = model.fuse_w;
        fc.gate_b = model.fuse_b;
        if (cfg.use_tau_policy) {
            // similarity stats over this frame's refreshed slots
            double sum = 0.0, sq = 0.0;
            uint32_t cnt = 0;
            for (uint32_t i = 0; i < res.state.stale_age.size(); ++i) {
                if (res.state.stale_age[i] != 0) continue;
                const double c = slot_cosine(prev->tokens.data(), res.state.tokens.data(), i, cfg.dim);
                sum += c;
                sq += c * c;
                ++cnt;
            }
            const float mean = cnt ? float(sum / cnt) : 0.0f;
            const float sd = cnt ? float(std::sqrt(std::max(0.0, sq / cnt - (sum / cnt) * (sum / cnt)))) : 0.0f;
            std::vector<std::pair<float, float>> stats(cfg.depth, {mean, sd});
            tau_used = adapt_tau(stats, cfg.tau_budget, model).back();
        }
        fc.tau = tau_used;
        res.metrics.fused_count = fuse_tokens(*prev, res.state, fc, ledger);
    } else {
        res.state = full_encode(x_t, model, ledger);
        res.metrics.active_tokens = cfg.n_patches();
    }
    res.metrics.tau_used = tau_used;

    Tensor text = embed_prefix(y, model);
    Tensor h = temporal_cross_attention(res.state, text, model, ledger, cfg.gamma);
    DecodeOut dec = decode(h, y, model, ledger);
    res.token = dec.token;
    res.dist = dec.dist;

    for (const auto& [stage, count] : ledger.entries()) {
        auto it = before.find(stage);
        const uint64_t delta = count - (it == before.end() ? 0 : it->second);
        if (delta > 0) res.metrics.stage_flops[stage] = delta;
        res.metrics.frame_flops += delta;
    }
    return res;
}

std::vector<uint32_t> greedy_rollout(const SttfModel& model, const TokenBank& bank,
                                     std::vector<uint32_t> prefix, uint32_t steps) {
    NoGradGuard inference;
    FlopsLedger scratch;
    std::vector<uint32_t> out;
    for (uint32_t s = 0; s < steps && prefix.size() < model.cfg.context; ++s) {
        Tensor text = embed_prefix(prefix, model);
        Tensor h = temporal_cross_attention(bank, text, model, scratch, model.cfg.gamma);
        DecodeOut dec = decode(h, prefix, model, scratch);
        out.push_back(dec.token);
        prefix.push_back(dec.token);
    }
    return out;
}

TensorMap bank_to_tensors(const TokenBank& bank) {
    TensorMap m;
    m.emplace("bank.tokens", bank.tokens.detach());
    std::vector<float> ages(bank.stale_age.begin(), bank.stale_age.end());
    const uint32_t n_ages = uint32_t(ages.size());
    m.emplace("bank.stale_age", Tensor::from_data({n_ages}, std::move(ages)));
    // frame index is exact below 2^24 frames
    m.emplace("bank.frame_index", Tensor::scalar(float(bank.frame_index)));
    for (size_t l = 0; l < bank.k_cache.size(); ++l) {
        m.emplace("bank.k_cache" + std::to_string(l), bank.k_cache[l].detach());
        m.emplace("bank.v_cache" + std::to_string(l), bank.v_cache[l].detach());
    }
    return m;
}

TokenBank bank_from_tensors(const TensorMap& tensors, const SttfModel& model) {
    const SttfConfig& cfg = model.cfg;
    auto need = [&](const std::string& name) -> const Tensor& {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw SessionError("session state is missing '" + name + "'");
        return it->second;
    };
    TokenBank bank;
    bank.tokens = need("bank.tokens").detach();
    if (bank.tokens.shape() != Shape{cfg.n_patches(), cfg.dim}) {
        throw SessionError("session state token shape " + shape_str(bank.tokens.shape()) +
                           " does not match the model");
    }
    const Tensor& ages = need("bank.stale_age");
    if (ages.numel() != cfg.n_patches()) throw SessionError("session state stale_age size mismatch");
    bank.stale_age.resize(ages.numel());
    for (size_t i = 0; i < bank.stale_age.size(); ++i) bank.stale_age[i] = uint32_t(ages.at(i));
    bank.frame_index = uint64_t(need("bank.frame_index").item());
    for (uint32_t l = 0; l < cfg.depth; ++l) {
        Tensor k = need("bank.k_cache" + std::to_string(l)).detach();
        Tensor v = need("bank.v_cache" + std::to_string(l)).detach();
        if (k.shape() != Shape{cfg.n_patches(), cfg.dim} || v.shape() != k.shape()) {
            throw SessionError("session state cache shape mismatch at layer " + std::to_string(l));
        }
        bank.k_cache.push_back(std::move(k));
        bank.v_cache.push_back(std::move(v));
    }
    bank.config_hash = cfg.config_hash();
    return bank;
}

} // namespace tgv

#include "tgv/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "tgv/error.hpp"
#include "tgv/ref.hpp"

namespace tgv::oracle {

std::vector<double> to_d(const Tensor& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

std::vector<double> linear_fwd(const nn::Linear& l, const std::vector<double>& x, size_t rows) {
    const uint32_t in = l.w.dim(0), out = l.w.dim(1);
    const std::vector<double> w = to_d(l.w);
    const std::vector<double> b = to_d(l.b);
    std::vector<double> y(rows * out);
    ref::matmul<double>(x.data(), w.data(), y.data(), int(rows), int(in), int(out));
    for (size_t i = 0; i < rows; ++i)
        for (uint32_t j = 0; j < out; ++j) y[i * out + j] += b[j];
    return y;
}

std::vector<double> layer_norm_fwd(const nn::LayerNorm& ln, std::vector<double> x, size_t rows) {
    const std::vector<double> gamma = to_d(ln.gamma);
    const std::vector<double> beta = to_d(ln.beta);
    ref::layer_norm_rows<double>(x.data(), gamma.data(), beta.data(), int(rows),
                                 int(gamma.size()), 1e-5);
    return x;
}

void relu_inplace(std::vector<double>& v) {
    for (auto& e : v) e = std::max(e, 0.0);
}

void sigmoid_inplace(std::vector<double>& v) {
    for (auto& e : v) e = 1.0 / (1.0 + std::exp(-e));
}

std::vector<double> softmax_rows_d(std::vector<double> x, size_t rows) {
    ref::softmax_rows<double>(x.data(), int(rows), int(x.size() / rows));
    return x;
}

std::vector<double> attention_fwd(const nn::Attention& p, const std::vector<double>& q_in,
                                  size_t lq, const std::vector<double>& kv, size_t lk, uint32_t d,
                                  const std::vector<double>* bias) {
    std::vector<double> q = linear_fwd(p.q, q_in, lq);
    std::vector<double> k = linear_fwd(p.k, kv, lk);
    std::vector<double> v = linear_fwd(p.v, kv, lk);
    std::vector<double> scores(lq * lk);
    ref::matmul<double>(q.data(), k.data(), scores.data(), int(lq), int(d), int(lk), false, true);
    const double inv = 1.0 / std::sqrt(double(d));
    for (size_t i = 0; i < scores.size(); ++i) {
        scores[i] *= inv;
        if (bias != nullptr) scores[i] += (*bias)[i];
    }
    scores = softmax_rows_d(std::move(scores), lq);
    std::vector<double> ctx(lq * d);
    ref::matmul<double>(scores.data(), v.data(), ctx.data(), int(lq), int(lk), int(d));
    return linear_fwd(p.out, ctx, lq);
}

std::vector<double> block_fwd(const nn::Block& blk, std::vector<double> x, size_t rows, uint32_t d,
                              const std::vector<double>* bias) {
    std::vector<double> h = layer_norm_fwd(blk.ln1, x, rows);
    std::vector<double> att = attention_fwd(blk.attn, h, rows, h, rows, d, bias);
    for (size_t i = 0; i < x.size(); ++i) x[i] += att[i];
    std::vector<double> m = layer_norm_fwd(blk.ln2, x, rows);
    m = linear_fwd(blk.mlp.fc1, m, rows);
    relu_inplace(m);
    m = linear_fwd(blk.mlp.fc2, m, rows);
    for (size_t i = 0; i < x.size(); ++i) x[i] += m[i];
    return x;
}

std::vector<double> dense_encode(const Tensor& x, const SttfModel& m) {
    const uint32_t n = m.cfg.n_patches(), d = m.cfg.dim;
    std::vector<double> rows = to_d(patchify(x, m.cfg.patch));
    std::vector<double> emb = linear_fwd(m.patch_embed, rows, n);
    const std::vector<double> pos = to_d(m.pos_embed);
    for (size_t i = 0; i < emb.size(); ++i) emb[i] += pos[i];
    for (const auto& blk : m.blocks) emb = block_fwd(blk, std::move(emb), n, d, nullptr);
    return layer_norm_fwd(m.encoder_ln, std::move(emb), n);
}

std::vector<double> cross_attention_fwd(const TokenBank& bank, const Tensor& text_emb,
                                        const SttfModel& m, double gamma) {
    const uint32_t n = bank.tokens.dim(0), d = bank.tokens.dim(1);
    const size_t L = text_emb.dim(0);
    std::vector<double> bias(L * n, 0.0);
    for (uint32_t j = 0; j < n; ++j) {
        if (bank.stale_age[j] > 0) {
            for (size_t i = 0; i < L; ++i) bias[i * n + j] = -gamma;
        }
    }
    std::vector<double> text = to_d(text_emb);
    std::vector<double> q_in = layer_norm_fwd(m.cross_ln_q, text, L);
    std::vector<double> kv = layer_norm_fwd(m.cross_ln_kv, to_d(bank.tokens), n);
    std::vector<double> att = attention_fwd(m.cross, q_in, L, kv, n, d, &bias);
    for (size_t i = 0; i < text.size(); ++i) text[i] += att[i];
    return text;
}

std::array<double, 3> router_weights(const std::array<double, 3>& p,
                                     const std::array<double, 3>& noise, double temperature) {
    std::array<double, 3> logits;
    for (int i = 0; i < 3; ++i) logits[i] = (std::log(p[i]) + noise[i]) / temperature;
    const double mx = std::max({logits[0], logits[1], logits[2]});
    double sum = 0.0;
    std::array<double, 3> w;
    for (int i = 0; i < 3; ++i) {
        w[i] = std::exp(logits[i] - mx);
        sum += w[i];
    }
    for (int i = 0; i < 3; ++i) w[i] /= sum;
    return w;
}

namespace {

std::vector<double> conv_fwd_d(const nn::Conv& c, const std::vector<double>& x, uint32_t cin,
                               uint32_t h, uint32_t w) {
    const uint32_t cout = c.w.dim(0), kh = c.w.dim(2), kw = c.w.dim(3);
    const int ho = (int(h) + 2 * c.pad - int(kh)) / c.stride + 1;
    const int wo = (int(w) + 2 * c.pad - int(kw)) / c.stride + 1;
    const std::vector<double> wt = to_d(c.w);
    const std::vector<double> b = to_d(c.b);
    std::vector<double> y(size_t(cout) * ho * wo);
    ref::conv2d<double>(x.data(), wt.data(), b.data(), y.data(), int(cin), int(h), int(w),
                        int(cout), int(kh), int(kw), c.stride, c.pad);
    return y;
}

} // namespace

std::vector<double> gate_probs_fwd(const SttfModel& m, const std::vector<double>& norm_input,
                                   uint32_t h, uint32_t w) {
    std::vector<double> f1 = conv_fwd_d(m.gate1, norm_input, 2, h, w);
    relu_inplace(f1);
    std::vector<double> f2 = conv_fwd_d(m.gate2, f1, 8, h, w);
    sigmoid_inplace(f2);
    return f2;
}

std::vector<double> fuse_blend_fwd(const SttfModel& m, const std::vector<double>& prev_rows,
                                   const std::vector<double>& curr_rows, size_t rows, uint32_t d) {
    const std::vector<double> w = to_d(m.fuse_w);
    const double b = double(m.fuse_b.at(0));
    std::vector<double> out(rows * d);
    for (size_t i = 0; i < rows; ++i) {
        double logit = b;
        for (uint32_t j = 0; j < d; ++j) logit += prev_rows[i * d + j] * w[j];
        for (uint32_t j = 0; j < d; ++j) logit += curr_rows[i * d + j] * w[d + j];
        const double g = 1.0 / (1.0 + std::exp(-logit));
        for (uint32_t j = 0; j < d; ++j) {
            out[i * d + j] = prev_rows[i * d + j] + g * (curr_rows[i * d + j] - prev_rows[i * d + j]);
        }
    }
    return out;
}

double adapt_tau_fwd(const SttfModel& m, double mean_sim, double std_sim, double budget) {
    std::vector<double> in = {mean_sim, std_sim, budget};
    std::vector<double> h = linear_fwd(m.policy_fc1, in, 1);
    relu_inplace(h);
    std::vector<double> o = linear_fwd(m.policy_fc2, h, 1);
    const double s = 1.0 / (1.0 + std::exp(-o[0]));
    return double(m.cfg.tau_min) + double(m.cfg.tau_max - m.cfg.tau_min) * s;
}

std::vector<double> budget_gate_fwd(const nn::Linear& gate, const std::vector<double>& h_prev,
                                    double b, double slope) {
    std::vector<double> logits = linear_fwd(gate, h_prev, 1);
    for (auto& v : logits) v += slope * (b - 0.5);
    sigmoid_inplace(logits);
    return logits;
}

namespace {

std::vector<double> causal_bias_d(size_t n) {
    std::vector<double> b(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) b[i * n + j] = -1e9;
    return b;
}

} // namespace

std::vector<double> sttf_decode_fwd(const SttfModel& m, const std::vector<double>& h, size_t rows) {
    const std::vector<double> bias = causal_bias_d(rows);
    std::vector<double> x = h;
    for (const auto& blk : m.dec_blocks) x = block_fwd(blk, std::move(x), rows, m.cfg.dim, &bias);
    x = layer_norm_fwd(m.dec_ln, std::move(x), rows);
    std::vector<double> last(x.end() - m.cfg.dim, x.end());
    std::vector<double> logits = linear_fwd(m.lm_head, last, 1);
    return softmax_rows_d(std::move(logits), 1);
}

std::vector<double> anc_decode_fwd(const AncModel& m, const std::vector<double>& seq, size_t rows,
                                   uint32_t depth) {
    const std::vector<double> bias = causal_bias_d(rows);
    std::vector<double> x = seq;
    for (uint32_t l = 0; l < depth; ++l) x = block_fwd(m.dec_blocks[l], std::move(x), rows, m.cfg.dec_dim, &bias);
    x = layer_norm_fwd(m.dec_ln, std::move(x), rows);
    std::vector<double> last(x.end() - m.cfg.dec_dim, x.end());
    std::vector<double> logits = linear_fwd(m.lm_head, last, 1);
    return softmax_rows_d(std::move(logits), 1);
}

namespace {

// One central difference of the oracle loss around the current value of
// p.data()[i], using the exactly realized float32 step.
double central_diff(Tensor& p, size_t i, double h, const std::function<double()>& oracle_loss) {
    const float saved = p.data()[i];
    p.data()[i] = saved + float(h);
    const double hp = double(p.data()[i]) - double(saved);
    const double lp = oracle_loss();
    p.data()[i] = saved - float(h);
    const double hm = double(saved) - double(p.data()[i]);
    const double lm = oracle_loss();
    p.data()[i] = saved;
    return (lp - lm) / (hp + hm);
}

} // namespace

FdReport fd_check(const std::string& component, const std::function<Tensor()>& engine_loss,
                  const std::function<double()>& oracle_loss, std::vector<Tensor> params,
                  size_t max_samples_per_tensor, Rng& rng) {
    FdReport report;
    report.component = component;

    for (auto& p : params) p.zero_grad();
    Tensor loss = engine_loss();
    loss.backward();

    // Pass rule: |a - fd| <= 1e-5 + 1e-3 * max(|a|,|fd|), reported as
    // |a - fd| / (1e-2 + max(|a|,|fd|)) against the 1e-3 threshold.
    // Two step sizes detect points where the step straddles a relu kink
    // (the estimates disagree there and the entry is skipped; a wrong
    // backward still fails because both estimates agree with each other).
    const double h = 1e-4;
    for (auto& p : params) {
        if (!p.has_grad()) {
            // parameter unreachable from the loss: treat as failure
            report.pass = false;
            continue;
        }
        const std::vector<float> analytic = p.grad();
        std::vector<size_t> idx(p.numel());
        for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (idx.size() > max_samples_per_tensor) {
            for (size_t i = 0; i < max_samples_per_tensor; ++i) {
                std::swap(idx[i], idx[i + rng.next_below(idx.size() - i)]);
            }
            idx.resize(max_samples_per_tensor);
        }
        for (size_t i : idx) {
            const double fd1 = central_diff(p, i, h, oracle_loss);
            const double fd2 = central_diff(p, i, h / 2, oracle_loss);
            const double band = 1e-2 + std::max(std::abs(fd1), std::abs(fd2));
            if (std::abs(fd1 - fd2) > 0.1e-3 * band) continue; // non-smooth point
            const double a = double(analytic[i]);
            const double rel = std::abs(a - fd2) / (1e-2 + std::max(std::abs(a), std::abs(fd2)));
            report.max_rel = std::max(report.max_rel, rel);
            ++report.checked;
        }
    }
    for (auto& p : params) p.zero_grad();
    report.pass = report.pass && report.max_rel < 1e-3 && report.checked > 0;
    return report;
}

} // namespace tgv::oracle

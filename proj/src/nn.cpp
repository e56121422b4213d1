#include "tgv/nn.hpp"

#include <cmath>

#include "tgv/error.hpp"

namespace tgv::nn {

Linear make_linear(uint32_t in, uint32_t out, Rng& rng) {
    Linear l;
    l.w = Tensor::randn({in, out}, rng, 1.0f / std::sqrt(float(in)), true);
    l.b = Tensor::zeros({out}, true);
    return l;
}

Conv make_conv(uint32_t cin, uint32_t cout, uint32_t kernel, int stride, int pad, Rng& rng) {
    Conv c;
    const float scale = 1.0f / std::sqrt(float(cin * kernel * kernel));
    c.w = Tensor::randn({cout, cin, kernel, kernel}, rng, scale, true);
    c.b = Tensor::zeros({cout}, true);
    c.stride = stride;
    c.pad = pad;
    return c;
}

LayerNorm make_layer_norm(uint32_t dim) {
    LayerNorm ln;
    ln.gamma = Tensor::full({dim}, 1.0f, true);
    ln.beta = Tensor::zeros({dim}, true);
    return ln;
}

Mlp make_mlp(uint32_t dim, uint32_t hidden, Rng& rng) {
    return Mlp{make_linear(dim, hidden, rng), make_linear(hidden, dim, rng)};
}

Attention make_attention(uint32_t dim, Rng& rng) {
    return Attention{make_linear(dim, dim, rng), make_linear(dim, dim, rng),
                     make_linear(dim, dim, rng), make_linear(dim, dim, rng)};
}

Tensor attend(const Attention& p, const Tensor& queries, const Tensor& kv, const Tensor& bias) {
    return attend_precomputed(p, queries, p.k.forward(kv), p.v.forward(kv), bias);
}

Tensor attend_precomputed(const Attention& p, const Tensor& queries, const Tensor& k_proj,
                          const Tensor& v_proj, const Tensor& bias) {
    const uint32_t d = queries.dim(1);
    Tensor q = p.q.forward(queries);
    Tensor scores = scale(matmul(q, transpose(k_proj)), 1.0f / std::sqrt(float(d)));
    if (bias.defined()) scores = add(scores, bias);
    Tensor probs = softmax_rows(scores);
    return p.out.forward(matmul(probs, v_proj));
}

Block make_block(uint32_t dim, uint32_t mlp_hidden, Rng& rng) {
    return Block{make_layer_norm(dim), make_layer_norm(dim), make_attention(dim, rng),
                 make_mlp(dim, mlp_hidden, rng)};
}

Tensor block_forward(const Block& blk, const Tensor& x, const Tensor& bias) {
    Tensor h = blk.ln1.forward(x);
    Tensor a = attend(blk.attn, h, h, bias);
    Tensor y = add(x, a);
    return add(y, blk.mlp.forward(blk.ln2.forward(y)));
}

Tensor causal_bias(uint32_t n) {
    std::vector<float> b(size_t(n) * n, 0.0f);
    for (uint32_t i = 0; i < n; ++i)
        for (uint32_t j = i + 1; j < n; ++j) b[i * n + j] = -1e9f;
    return Tensor::from_data({n, n}, std::move(b));
}

void ParamRegistry::add(const std::string& name, const Tensor& t) {
    if (!t.defined()) throw ConfigError("param registry: undefined tensor '" + name + "'");
    if (!params_.emplace(name, t).second) {
        throw ConfigError("param registry: duplicate name '" + name + "'");
    }
}

void ParamRegistry::add(const std::string& prefix, const Linear& l) {
    add(prefix + ".w", l.w);
    add(prefix + ".b", l.b);
}

void ParamRegistry::add(const std::string& prefix, const Conv& c) {
    add(prefix + ".w", c.w);
    add(prefix + ".b", c.b);
}

void ParamRegistry::add(const std::string& prefix, const LayerNorm& ln) {
    add(prefix + ".gamma", ln.gamma);
    add(prefix + ".beta", ln.beta);
}

void ParamRegistry::add(const std::string& prefix, const Mlp& m) {
    add(prefix + ".fc1", m.fc1);
    add(prefix + ".fc2", m.fc2);
}

void ParamRegistry::add(const std::string& prefix, const Attention& a) {
    add(prefix + ".q", a.q);
    add(prefix + ".k", a.k);
    add(prefix + ".v", a.v);
    add(prefix + ".out", a.out);
}

void ParamRegistry::add(const std::string& prefix, const Block& b) {
    add(prefix + ".ln1", b.ln1);
    add(prefix + ".ln2", b.ln2);
    add(prefix + ".attn", b.attn);
    add(prefix + ".mlp", b.mlp);
}

void ParamRegistry::load(const TensorMap& from) {
    for (auto& [name, tensor] : params_) {
        auto it = from.find(name);
        if (it == from.end()) throw ConfigError("checkpoint is missing tensor '" + name + "'");
        if (it->second.shape() != tensor.shape()) {
            throw ConfigError("checkpoint tensor '" + name + "' has shape " +
                              shape_str(it->second.shape()) + ", model expects " +
                              shape_str(tensor.shape()));
        }
        for (float v : it->second.data()) {
            if (!std::isfinite(v)) {
                throw NumericError("checkpoint tensor '" + name + "' holds non-finite values");
            }
        }
        tensor.data() = it->second.data();
    }
}

} // namespace tgv::nn

#pragma once

#include <string>
#include <vector>

#include "tgv/checkpoint.hpp"
#include "tgv/rng.hpp"
#include "tgv/tensor.hpp"

namespace tgv::nn {

struct Linear {
    Tensor w; // [in, out]
    Tensor b; // [out]

    Tensor forward(const Tensor& x) const { return add_rowvec(matmul(x, w), b); }
    uint64_t param_count() const { return w.numel() + b.numel(); }
};

Linear make_linear(uint32_t in, uint32_t out, Rng& rng);

struct Conv {
    Tensor w; // [cout, cin, kh, kw]
    Tensor b; // [cout]
    int stride = 1;
    int pad = 0;

    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
    uint64_t param_count() const { return w.numel() + b.numel(); }
};

Conv make_conv(uint32_t cin, uint32_t cout, uint32_t kernel, int stride, int pad, Rng& rng);

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    Tensor forward(const Tensor& x) const { return layer_norm_rows(x, gamma, beta); }
};

LayerNorm make_layer_norm(uint32_t dim);

struct Mlp {
    Linear fc1;
    Linear fc2;

    Tensor forward(const Tensor& x) const { return fc2.forward(relu(fc1.forward(x))); }
};

Mlp make_mlp(uint32_t dim, uint32_t hidden, Rng& rng);

// Single-head scaled dot-product attention parameters.
struct Attention {
    Linear q, k, v, out;
};

Attention make_attention(uint32_t dim, Rng& rng);

// queries [Lq,d] attend over kv [Lk,d]; bias (optional, [Lq,Lk]) is added
// to the logits before softmax.
Tensor attend(const Attention& p, const Tensor& queries, const Tensor& kv, const Tensor& bias);

// As above but with separate key/value inputs (used when keys come from a
// per-layer cache): k_in/v_in are pre-projected [Lk,d] matrices.
Tensor attend_precomputed(const Attention& p, const Tensor& queries, const Tensor& k_proj,
                          const Tensor& v_proj, const Tensor& bias);

// Pre-LN transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
struct Block {
    LayerNorm ln1, ln2;
    Attention attn;
    Mlp mlp;
};

Block make_block(uint32_t dim, uint32_t mlp_hidden, Rng& rng);

// Dense self-attention block forward (all tokens are queries and keys).
Tensor block_forward(const Block& blk, const Tensor& x, const Tensor& causal_bias = {});

// Lower-triangular causal bias [n,n]: 0 on/below the diagonal, -1e9 above.
Tensor causal_bias(uint32_t n);

// Registers every parameter of a module tree under dotted names.
class ParamRegistry {
public:
    void add(const std::string& name, const Tensor& t);
    void add(const std::string& prefix, const Linear& l);
    void add(const std::string& prefix, const Conv& c);
    void add(const std::string& prefix, const LayerNorm& ln);
    void add(const std::string& prefix, const Mlp& m);
    void add(const std::string& prefix, const Attention& a);
    void add(const std::string& prefix, const Block& b);

    const TensorMap& params() const { return params_; }
    TensorMap& params() { return params_; }

    // Copies checkpoint data into the registered tensors (shape-checked).
    void load(const TensorMap& from);

private:
    TensorMap params_;
};

} // namespace tgv::nn

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tgv/error.hpp"
#include "tgv/rng.hpp"

namespace tgv {

using Shape = std::vector<uint32_t>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor;

namespace detail {

// Shared storage + reverse-mode graph node. A leaf has no parents and no
// backward_fn; grads accumulate (+=) into `grad`.
struct Node {
    Shape shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;                 // empty until first touched
    std::vector<Tensor> parents;             // cleared when backward() consumes the graph
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into parents
};

} // namespace detail

// Row-major float32 tensor handle with shared storage. Ops build a
// reverse-mode graph when gradients are enabled and any input requires
// them; backward() walks it once and then releases it.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, bool requires_grad = false);
    static Tensor rand_uniform(Shape shape, Rng& rng, float lo, float hi, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    size_t ndim() const { return shape().size(); }
    uint32_t dim(size_t i) const { return shape().at(i); }
    size_t numel() const;

    std::vector<float>& data();
    const std::vector<float>& data() const;
    float item() const; // numel()==1 only
    float at(size_t flat_index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool value);

    std::vector<float>& grad();            // lazily allocated, zero-filled
    bool has_grad() const;
    void zero_grad();

    // Reverse-mode pass from a scalar; accumulates into leaf grads and
    // consumes the graph.
    void backward();

    // Deep copy with no graph attachment.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    bool is_leaf() const;

    detail::Node* node() const { return node_.get(); }
    static Tensor make_op(Shape shape, std::vector<float> data, std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward_fn);

private:
    std::shared_ptr<detail::Node> node_;
};

// Thread-local gradient mode; inference paths disable graph building.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

// ---- ops -----------------------------------------------------------------
// All ops meter forward FLOPs through the active FlopsScope (see flops.hpp)
// and support reverse mode unless noted.

Tensor add(const Tensor& a, const Tensor& b);          // same shape
Tensor sub(const Tensor& a, const Tensor& b);          // same shape
Tensor mul(const Tensor& a, const Tensor& b);          // same shape
Tensor add_scalar(const Tensor& x, float c);
Tensor scale(const Tensor& x, float c);
Tensor scale_by(const Tensor& x, const Tensor& s);     // s is a 1-element tensor
Tensor neg(const Tensor& x);

Tensor add_rowvec(const Tensor& x, const Tensor& v);   // [m,n] + [n]
Tensor mul_colvec(const Tensor& x, const Tensor& v);   // [m,n] * [m] (or [m,1]) per row

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor log_op(const Tensor& x);
Tensor sqrt_op(const Tensor& x);
Tensor clamp(const Tensor& x, float lo, float hi);

Tensor matmul(const Tensor& a, const Tensor& b);       // [m,k] x [k,n]
Tensor transpose(const Tensor& x);                     // 2-D
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

Tensor softmax_rows(const Tensor& x);                  // 2-D, per row
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       float eps = 1e-5f);

Tensor sum_all(const Tensor& x);                       // -> scalar
Tensor mean_all(const Tensor& x);                      // -> scalar
Tensor mean_rows(const Tensor& x);                     // [m,n] -> [1,n]
Tensor mean_hw(const Tensor& x);                       // [c,h,w] -> [c]
Tensor rowwise_dot(const Tensor& a, const Tensor& b);  // [m,n],[m,n] -> [m,1]

Tensor patch_mean(const Tensor& x, uint32_t patch);   // [1,H,W] -> [N,1], patches row-major

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);  // stack along dim 0
Tensor concat_cols(const Tensor& a, const Tensor& b);  // [m,n1],[m,n2] -> [m,n1+n2]
Tensor slice_rows(const Tensor& x, uint32_t row0, uint32_t row1);
Tensor gather_rows(const Tensor& x, const std::vector<uint32_t>& rows);

// Mean cross entropy of row-wise logits against integer targets.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<uint32_t>& targets);

} // namespace tgv

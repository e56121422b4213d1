#include "tgv/tensor.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <unordered_set>

#include "tgv/flops.hpp"
#include "tgv/kernels.hpp"

namespace tgv {

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (uint32_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<float> data) {
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

std::vector<float>& ensure_grad(detail::Node& n) {
    if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0f);
    return n.grad;
}

bool any_requires_grad(const std::vector<Tensor>& parents) {
    for (const auto& p : parents) {
        if (p.requires_grad()) return true;
    }
    return false;
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ParamError(std::string(op) + ": undefined tensor argument");
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    const size_t n = shape_numel(shape);
    Tensor t = from_data(std::move(shape), std::vector<float>(n, value), requires_grad);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> data, bool requires_grad) {
    const size_t n = shape_numel(shape);
    if (data.empty()) data.assign(n, 0.0f);
    if (data.size() != n) {
        throw ShapeError("from_data: " + std::to_string(data.size()) + " values for shape " +
                         shape_str(shape));
    }
    Tensor t;
    t.node_ = make_node(std::move(shape), std::move(data));
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, bool requires_grad) {
    const size_t n = shape_numel(shape);
    std::vector<float> d(n);
    for (auto& v : d) v = float(rng.normal()) * stddev;
    return from_data(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::rand_uniform(Shape shape, Rng& rng, float lo, float hi, bool requires_grad) {
    const size_t n = shape_numel(shape);
    std::vector<float> d(n);
    for (auto& v : d) v = float(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(d), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw ParamError("shape(): undefined tensor");
    return node_->shape;
}

size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::vector<float>& Tensor::data() {
    if (!node_) throw ParamError("data(): undefined tensor");
    return node_->data;
}

const std::vector<float>& Tensor::data() const {
    if (!node_) throw ParamError("data(): undefined tensor");
    return node_->data;
}

float Tensor::item() const {
    if (numel() != 1) throw ShapeError("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
}

float Tensor::at(size_t flat_index) const {
    if (flat_index >= numel()) throw ShapeError("at(): index out of range");
    return node_->data[flat_index];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
    if (!node_) throw ParamError("set_requires_grad: undefined tensor");
    node_->requires_grad = value;
    return *this;
}

std::vector<float>& Tensor::grad() {
    if (!node_) throw ParamError("grad(): undefined tensor");
    return ensure_grad(*node_);
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

void Tensor::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

bool Tensor::is_leaf() const { return node_ && !node_->backward_fn; }

Tensor Tensor::detach() const {
    if (!node_) return {};
    Tensor t;
    t.node_ = make_node(node_->shape, node_->data);
    return t;
}

Tensor Tensor::make_op(Shape shape, std::vector<float> data, std::vector<Tensor> parents,
                       std::function<void(detail::Node&)> backward_fn) {
    Tensor t = from_data(std::move(shape), std::move(data));
    if (g_grad_enabled && any_requires_grad(parents)) {
        t.node_->requires_grad = true;
        t.node_->parents = std::move(parents);
        t.node_->backward_fn = std::move(backward_fn);
    }
    return t;
}

void Tensor::backward() {
    if (!node_) throw ParamError("backward: undefined tensor");
    if (numel() != 1) {
        throw ParamError("backward: loss must be a scalar, got shape " + shape_str(shape()));
    }

    // Iterative DFS post-order over the graph.
    std::vector<detail::Node*> topo;
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        detail::Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({node_.get(), 0});
    visited.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::Node* p = f.node->parents[f.next_parent++].node();
            if (p != nullptr && visited.insert(p).second) stack.push_back({p, 0});
        } else {
            topo.push_back(f.node);
            stack.pop_back();
        }
    }

    ensure_grad(*node_)[0] += 1.0f;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }

    // Consume the graph; keep leaf grads, drop intermediates.
    for (detail::Node* n : topo) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->grad.clear();
        }
    }
}

// ---- op helpers ------------------------------------------------------------

namespace {

using detail::Node;

Node& parent_node(Node& self, size_t i) { return *self.parents[i].node(); }

// Elementwise unary with derivative expressed from (x, y).
Tensor unary_op(const char* name, const Tensor& x, uint64_t flops_per_elem,
                const std::function<float(float)>& f,
                std::function<float(float, float)> dfdx) {
    check_defined(x, name);
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
    FlopsScope::count(flops_per_elem * xd.size());
    return Tensor::make_op(x.shape(), std::move(out), {x}, [d = std::move(dfdx)](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& gx = ensure_grad(p);
        for (size_t i = 0; i < gx.size(); ++i) gx[i] += d(p.data[i], self.data[i]) * self.grad[i];
    });
}

} // namespace

// ---- arithmetic ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_defined(a, "add");
    check_defined(b, "add");
    check_same_shape(a, b, "add");
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<float> out(ad.size());
    for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + bd[i];
    FlopsScope::count(ad.size());
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (size_t pi = 0; pi < 2; ++pi) {
            Node& p = parent_node(self, pi);
            if (!p.requires_grad) continue;
            auto& g = ensure_grad(p);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_defined(a, "sub");
    check_defined(b, "sub");
    check_same_shape(a, b, "sub");
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<float> out(ad.size());
    for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] - bd[i];
    FlopsScope::count(ad.size());
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent_node(self, 0);
        if (pa.requires_grad) {
            auto& g = ensure_grad(pa);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        Node& pb = parent_node(self, 1);
        if (pb.requires_grad) {
            auto& g = ensure_grad(pb);
            for (size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_defined(a, "mul");
    check_defined(b, "mul");
    check_same_shape(a, b, "mul");
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<float> out(ad.size());
    for (size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * bd[i];
    FlopsScope::count(ad.size());
    return Tensor::make_op(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& pa = parent_node(self, 0);
        Node& pb = parent_node(self, 1);
        if (pa.requires_grad) {
            auto& g = ensure_grad(pa);
            for (size_t i = 0; i < g.size(); ++i) g[i] += pb.data[i] * self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = ensure_grad(pb);
            for (size_t i = 0; i < g.size(); ++i) g[i] += pa.data[i] * self.grad[i];
        }
    });
}

Tensor add_scalar(const Tensor& x, float c) {
    return unary_op("add_scalar", x, 1, [c](float v) { return v + c; },
                    [](float, float) { return 1.0f; });
}

Tensor scale(const Tensor& x, float c) {
    return unary_op("scale", x, 1, [c](float v) { return v * c; },
                    [c](float, float) { return c; });
}

Tensor neg(const Tensor& x) {
    return unary_op("neg", x, 1, [](float v) { return -v; }, [](float, float) { return -1.0f; });
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
    check_defined(x, "scale_by");
    check_defined(s, "scale_by");
    if (s.numel() != 1) throw ShapeError("scale_by: scale must be a 1-element tensor");
    const float sv = s.at(0);
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * sv;
    FlopsScope::count(xd.size());
    return Tensor::make_op(x.shape(), std::move(out), {x, s}, [](Node& self) {
        Node& px = parent_node(self, 0);
        Node& ps = parent_node(self, 1);
        const float sv = ps.data[0];
        if (px.requires_grad) {
            auto& g = ensure_grad(px);
            for (size_t i = 0; i < g.size(); ++i) g[i] += sv * self.grad[i];
        }
        if (ps.requires_grad) {
            double acc = 0.0;
            for (size_t i = 0; i < px.data.size(); ++i) acc += double(px.data[i]) * double(self.grad[i]);
            ensure_grad(ps)[0] += float(acc);
        }
    });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    check_defined(x, "add_rowvec");
    check_defined(v, "add_rowvec");
    if (x.ndim() != 2 || v.numel() != x.dim(1)) {
        throw ShapeError("add_rowvec: need [m,n] + [n], got " + shape_str(x.shape()) + " + " +
                         shape_str(v.shape()));
    }
    const uint32_t m = x.dim(0), n = x.dim(1);
    const auto& xd = x.data();
    const auto& vd = v.data();
    std::vector<float> out(xd.size());
    for (uint32_t i = 0; i < m; ++i)
        for (uint32_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] + vd[j];
    FlopsScope::count(xd.size());
    return Tensor::make_op(x.shape(), std::move(out), {x, v}, [m, n](Node& self) {
        Node& px = parent_node(self, 0);
        Node& pv = parent_node(self, 1);
        if (px.requires_grad) {
            auto& g = ensure_grad(px);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pv.requires_grad) {
            auto& g = ensure_grad(pv);
            for (uint32_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (uint32_t i = 0; i < m; ++i) acc += double(self.grad[i * n + j]);
                g[j] += float(acc);
            }
        }
    });
}

Tensor mul_colvec(const Tensor& x, const Tensor& v) {
    check_defined(x, "mul_colvec");
    check_defined(v, "mul_colvec");
    if (x.ndim() != 2 || v.numel() != x.dim(0)) {
        throw ShapeError("mul_colvec: need [m,n] * [m], got " + shape_str(x.shape()) + " * " +
                         shape_str(v.shape()));
    }
    const uint32_t m = x.dim(0), n = x.dim(1);
    const auto& xd = x.data();
    const auto& vd = v.data();
    std::vector<float> out(xd.size());
    for (uint32_t i = 0; i < m; ++i)
        for (uint32_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] * vd[i];
    FlopsScope::count(xd.size());
    return Tensor::make_op(x.shape(), std::move(out), {x, v}, [m, n](Node& self) {
        Node& px = parent_node(self, 0);
        Node& pv = parent_node(self, 1);
        if (px.requires_grad) {
            auto& g = ensure_grad(px);
            for (uint32_t i = 0; i < m; ++i)
                for (uint32_t j = 0; j < n; ++j) g[i * n + j] += pv.data[i] * self.grad[i * n + j];
        }
        if (pv.requires_grad) {
            auto& g = ensure_grad(pv);
            for (uint32_t i = 0; i < m; ++i) {
                double acc = 0.0;
                for (uint32_t j = 0; j < n; ++j)
                    acc += double(px.data[i * n + j]) * double(self.grad[i * n + j]);
                g[i] += float(acc);
            }
        }
    });
}

// ---- nonlinearities --------------------------------------------------------

Tensor relu(const Tensor& x) {
    return unary_op("relu", x, 1, [](float v) { return v > 0.0f ? v : 0.0f; },
                    [](float xv, float) { return xv > 0.0f ? 1.0f : 0.0f; });
}

Tensor sigmoid(const Tensor& x) {
    // outputs stay strictly inside (0,1) even where float32 would saturate
    return unary_op("sigmoid", x, 1,
                    [](float v) {
                        const float y = float(1.0 / (1.0 + std::exp(-double(v))));
                        if (y <= 0.0f) return std::numeric_limits<float>::min();
                        if (y >= 1.0f) return std::nextafter(1.0f, 0.0f);
                        return y;
                    },
                    [](float, float yv) { return yv * (1.0f - yv); });
}

Tensor exp_op(const Tensor& x) {
    return unary_op("exp", x, 1, [](float v) { return std::exp(v); },
                    [](float, float yv) { return yv; });
}

Tensor log_op(const Tensor& x) {
    return unary_op("log", x, 1, [](float v) { return std::log(v); },
                    [](float xv, float) { return 1.0f / xv; });
}

Tensor sqrt_op(const Tensor& x) {
    return unary_op("sqrt", x, 1, [](float v) { return std::sqrt(v); },
                    [](float, float yv) { return yv > 0.0f ? 0.5f / yv : 0.0f; });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
    return unary_op("clamp", x, 1, [lo, hi](float v) { return std::clamp(v, lo, hi); },
                    [lo, hi](float xv, float) { return (xv >= lo && xv <= hi) ? 1.0f : 0.0f; });
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int m = int(a.dim(0)), k = int(a.dim(1)), n = int(b.dim(1));
    std::vector<float> out(size_t(m) * n);
    kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n, false, false);
    FlopsScope::count(2ull * m * k * n);
    return Tensor::make_op({uint32_t(m), uint32_t(n)}, std::move(out), {a, b}, [m, k, n](Node& self) {
        Node& pa = parent_node(self, 0);
        Node& pb = parent_node(self, 1);
        if (pa.requires_grad) {
            std::vector<float> tmp(size_t(m) * k);
            // da = g x b^T
            kernels::matmul(self.grad.data(), pb.data.data(), tmp.data(), m, n, k, false, true);
            auto& g = ensure_grad(pa);
            for (size_t i = 0; i < g.size(); ++i) g[i] += tmp[i];
        }
        if (pb.requires_grad) {
            std::vector<float> tmp(size_t(k) * n);
            // db = a^T x g
            kernels::matmul(pa.data.data(), self.grad.data(), tmp.data(), k, m, n, true, false);
            auto& g = ensure_grad(pb);
            for (size_t i = 0; i < g.size(); ++i) g[i] += tmp[i];
        }
    });
}

Tensor transpose(const Tensor& x) {
    check_defined(x, "transpose");
    if (x.ndim() != 2) throw ShapeError("transpose: need 2-D, got " + shape_str(x.shape()));
    const uint32_t m = x.dim(0), n = x.dim(1);
    const auto& xd = x.data();
    std::vector<float> out(xd.size());
    for (uint32_t i = 0; i < m; ++i)
        for (uint32_t j = 0; j < n; ++j) out[j * m + i] = xd[i * n + j];
    return Tensor::make_op({n, m}, std::move(out), {x}, [m, n](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (uint32_t i = 0; i < m; ++i)
            for (uint32_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
    });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    check_defined(x, "conv2d");
    check_defined(w, "conv2d");
    if (x.ndim() != 3 || w.ndim() != 4) {
        throw ShapeError("conv2d: need x[c,h,w] and w[co,ci,kh,kw], got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    }
    if (x.dim(0) != w.dim(1)) {
        throw ShapeError("conv2d: input channels " + std::to_string(x.dim(0)) +
                         " != kernel channels " + std::to_string(w.dim(1)));
    }
    const int cin = int(x.dim(0)), h = int(x.dim(1)), win = int(x.dim(2));
    const int cout = int(w.dim(0)), kh = int(w.dim(2)), kw = int(w.dim(3));
    if (bias.defined() && bias.numel() != size_t(cout)) {
        throw ShapeError("conv2d: bias size " + std::to_string(bias.numel()) + " != cout " +
                         std::to_string(cout));
    }
    const int ho = kernels::conv_out_dim(h, kh, stride, pad);
    const int wo = kernels::conv_out_dim(win, kw, stride, pad);
    std::vector<float> out(size_t(cout) * ho * wo);
    kernels::conv2d(x.data().data(), w.data().data(), bias.defined() ? bias.data().data() : nullptr,
                    out.data(), cin, h, win, cout, kh, kw, stride, pad);
    FlopsScope::count(2ull * cout * cin * kh * kw * uint64_t(ho) * wo +
                      (bias.defined() ? uint64_t(cout) * ho * wo : 0));
    std::vector<Tensor> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);
    return Tensor::make_op(
        {uint32_t(cout), uint32_t(ho), uint32_t(wo)}, std::move(out), std::move(parents),
        [cin, h, win, cout, kh, kw, stride, pad, ho, wo](Node& self) {
            Node& px = parent_node(self, 0);
            Node& pw = parent_node(self, 1);
            if (px.requires_grad) {
                kernels::conv2d_dx(pw.data.data(), self.grad.data(), ensure_grad(px).data(), cin, h,
                                   win, cout, kh, kw, stride, pad);
            }
            if (pw.requires_grad) {
                kernels::conv2d_dw(px.data.data(), self.grad.data(), ensure_grad(pw).data(), cin, h,
                                   win, cout, kh, kw, stride, pad);
            }
            if (self.parents.size() == 3) {
                Node& pb = parent_node(self, 2);
                if (pb.requires_grad) {
                    kernels::conv2d_db(self.grad.data(), ensure_grad(pb).data(), cout, ho, wo);
                }
            }
        });
}

// ---- row-structured ops ------------------------------------------------------

Tensor softmax_rows(const Tensor& x) {
    check_defined(x, "softmax_rows");
    if (x.ndim() != 2) throw ShapeError("softmax_rows: need 2-D, got " + shape_str(x.shape()));
    const uint32_t m = x.dim(0), n = x.dim(1);
    std::vector<float> out(x.data());
    for (uint32_t i = 0; i < m; ++i) {
        float* row = out.data() + size_t(i) * n;
        float mx = row[0];
        for (uint32_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (uint32_t j = 0; j < n; ++j) {
            row[j] = float(std::exp(double(row[j] - mx)));
            sum += double(row[j]);
        }
        for (uint32_t j = 0; j < n; ++j) row[j] = float(double(row[j]) / sum);
    }
    FlopsScope::count(5ull * m * n);
    return Tensor::make_op(x.shape(), std::move(out), {x}, [m, n](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (uint32_t i = 0; i < m; ++i) {
            const float* y = self.data.data() + size_t(i) * n;
            const float* gy = self.grad.data() + size_t(i) * n;
            double dot = 0.0;
            for (uint32_t j = 0; j < n; ++j) dot += double(gy[j]) * double(y[j]);
            for (uint32_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - float(dot));
        }
    });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
    check_defined(x, "layer_norm_rows");
    check_defined(gamma, "layer_norm_rows");
    check_defined(beta, "layer_norm_rows");
    if (x.ndim() != 2 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1)) {
        throw ShapeError("layer_norm_rows: need x[m,n], gamma[n], beta[n], got " +
                         shape_str(x.shape()) + ", " + shape_str(gamma.shape()) + ", " +
                         shape_str(beta.shape()));
    }
    const uint32_t m = x.dim(0), n = x.dim(1);
    const auto& xd = x.data();
    const auto& gd = gamma.data();
    const auto& bd = beta.data();
    std::vector<float> out(xd.size());
    std::vector<float> mean(m), inv_std(m);
    for (uint32_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (uint32_t j = 0; j < n; ++j) mu += double(xd[i * n + j]);
        mu /= n;
        double var = 0.0;
        for (uint32_t j = 0; j < n; ++j) {
            const double d = double(xd[i * n + j]) - mu;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + double(eps));
        mean[i] = float(mu);
        inv_std[i] = float(inv);
        for (uint32_t j = 0; j < n; ++j) {
            out[i * n + j] = float((double(xd[i * n + j]) - mu) * inv * double(gd[j]) + double(bd[j]));
        }
    }
    FlopsScope::count(8ull * m * n);
    return Tensor::make_op(
        x.shape(), std::move(out), {x, gamma, beta},
        [m, n, mean = std::move(mean), inv_std = std::move(inv_std)](Node& self) {
            Node& px = parent_node(self, 0);
            Node& pg = parent_node(self, 1);
            Node& pb = parent_node(self, 2);
            for (uint32_t i = 0; i < m; ++i) {
                const float* gy = self.grad.data() + size_t(i) * n;
                const float* xr = px.data.data() + size_t(i) * n;
                // xhat and ghat = dL/dxhat
                std::vector<float> xhat(n), ghat(n);
                for (uint32_t j = 0; j < n; ++j) {
                    xhat[j] = (xr[j] - mean[i]) * inv_std[i];
                    ghat[j] = gy[j] * pg.data[j];
                }
                if (pg.requires_grad) {
                    auto& gg = ensure_grad(pg);
                    for (uint32_t j = 0; j < n; ++j) gg[j] += gy[j] * xhat[j];
                }
                if (pb.requires_grad) {
                    auto& gb = ensure_grad(pb);
                    for (uint32_t j = 0; j < n; ++j) gb[j] += gy[j];
                }
                if (px.requires_grad) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (uint32_t j = 0; j < n; ++j) {
                        mean_g += double(ghat[j]);
                        mean_gx += double(ghat[j]) * double(xhat[j]);
                    }
                    mean_g /= n;
                    mean_gx /= n;
                    auto& gx = ensure_grad(px);
                    for (uint32_t j = 0; j < n; ++j) {
                        gx[i * n + j] += float(double(inv_std[i]) *
                                               (double(ghat[j]) - mean_g - double(xhat[j]) * mean_gx));
                    }
                }
            }
        });
}

// ---- reductions ---------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    check_defined(x, "sum_all");
    double acc = 0.0;
    for (float v : x.data()) acc += double(v);
    FlopsScope::count(x.numel());
    return Tensor::make_op({1}, {float(acc)}, {x}, [](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean_all(const Tensor& x) {
    check_defined(x, "mean_all");
    const size_t n = x.numel();
    double acc = 0.0;
    for (float v : x.data()) acc += double(v);
    FlopsScope::count(n + 1);
    return Tensor::make_op({1}, {float(acc / double(n))}, {x}, [n](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        const float s = self.grad[0] / float(n);
        for (auto& v : g) v += s;
    });
}

Tensor mean_rows(const Tensor& x) {
    check_defined(x, "mean_rows");
    if (x.ndim() != 2) throw ShapeError("mean_rows: need 2-D, got " + shape_str(x.shape()));
    const uint32_t m = x.dim(0), n = x.dim(1);
    const auto& xd = x.data();
    std::vector<float> out(n);
    for (uint32_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (uint32_t i = 0; i < m; ++i) acc += double(xd[i * n + j]);
        out[j] = float(acc / double(m));
    }
    FlopsScope::count(x.numel());
    return Tensor::make_op({1, n}, std::move(out), {x}, [m, n](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (uint32_t i = 0; i < m; ++i)
            for (uint32_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] / float(m);
    });
}

Tensor mean_hw(const Tensor& x) {
    check_defined(x, "mean_hw");
    if (x.ndim() != 3) throw ShapeError("mean_hw: need 3-D, got " + shape_str(x.shape()));
    const uint32_t c = x.dim(0);
    const size_t hw = size_t(x.dim(1)) * x.dim(2);
    const auto& xd = x.data();
    std::vector<float> out(c);
    for (uint32_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (size_t i = 0; i < hw; ++i) acc += double(xd[ch * hw + i]);
        out[ch] = float(acc / double(hw));
    }
    FlopsScope::count(x.numel());
    return Tensor::make_op({c}, std::move(out), {x}, [c, hw](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (uint32_t ch = 0; ch < c; ++ch) {
            const float s = self.grad[ch] / float(hw);
            for (size_t i = 0; i < hw; ++i) g[ch * hw + i] += s;
        }
    });
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
    check_defined(a, "rowwise_dot");
    check_defined(b, "rowwise_dot");
    check_same_shape(a, b, "rowwise_dot");
    if (a.ndim() != 2) throw ShapeError("rowwise_dot: need 2-D, got " + shape_str(a.shape()));
    const uint32_t m = a.dim(0), n = a.dim(1);
    const auto& ad = a.data();
    const auto& bd = b.data();
    std::vector<float> out(m);
    for (uint32_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (uint32_t j = 0; j < n; ++j) acc += double(ad[i * n + j]) * double(bd[i * n + j]);
        out[i] = float(acc);
    }
    FlopsScope::count(2ull * m * n);
    return Tensor::make_op({m, 1}, std::move(out), {a, b}, [m, n](Node& self) {
        Node& pa = parent_node(self, 0);
        Node& pb = parent_node(self, 1);
        if (pa.requires_grad) {
            auto& g = ensure_grad(pa);
            for (uint32_t i = 0; i < m; ++i)
                for (uint32_t j = 0; j < n; ++j) g[i * n + j] += pb.data[i * n + j] * self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = ensure_grad(pb);
            for (uint32_t i = 0; i < m; ++i)
                for (uint32_t j = 0; j < n; ++j) g[i * n + j] += pa.data[i * n + j] * self.grad[i];
        }
    });
}

Tensor patch_mean(const Tensor& x, uint32_t patch) {
    check_defined(x, "patch_mean");
    if (x.ndim() != 3 || x.dim(0) != 1) throw ShapeError("patch_mean: need [1,H,W], got " + shape_str(x.shape()));
    const uint32_t h = x.dim(1), w = x.dim(2), p = patch;
    if (p == 0 || h % p != 0 || w % p != 0) {
        throw ShapeError("patch_mean: patch " + std::to_string(p) + " must divide " +
                         std::to_string(w) + "x" + std::to_string(h));
    }
    const uint32_t gw = w / p, gh = h / p, n = gw * gh;
    const auto& xd = x.data();
    std::vector<float> out(n);
    for (uint32_t gy = 0; gy < gh; ++gy) {
        for (uint32_t gx = 0; gx < gw; ++gx) {
            double acc = 0.0;
            for (uint32_t yy = 0; yy < p; ++yy)
                for (uint32_t xx = 0; xx < p; ++xx) acc += double(xd[(size_t(gy) * p + yy) * w + gx * p + xx]);
            out[gy * gw + gx] = float(acc / double(p * p));
        }
    }
    FlopsScope::count(x.numel());
    return Tensor::make_op({n, 1}, std::move(out), {x}, [gw, gh, p, w](Node& self) {
        Node& px = parent_node(self, 0);
        if (!px.requires_grad) return;
        auto& g = ensure_grad(px);
        for (uint32_t gy = 0; gy < gh; ++gy) {
            for (uint32_t gx = 0; gx < gw; ++gx) {
                const float s = self.grad[gy * gw + gx] / float(p * p);
                for (uint32_t yy = 0; yy < p; ++yy)
                    for (uint32_t xx = 0; xx < p; ++xx) g[(size_t(gy) * p + yy) * w + gx * p + xx] += s;
            }
        }
    });
}

// ---- structure ops --------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
    check_defined(x, "reshape");
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    return Tensor::make_op(std::move(shape), std::vector<float>(x.data()), {x}, [](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    check_defined(a, "concat_rows");
    check_defined(b, "concat_rows");
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1)) {
        throw ShapeError("concat_rows: incompatible " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const uint32_t ma = a.dim(0), mb = b.dim(0), n = a.dim(1);
    std::vector<float> out;
    out.reserve(size_t(ma + mb) * n);
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    return Tensor::make_op({ma + mb, n}, std::move(out), {a, b}, [ma, n](Node& self) {
        Node& pa = parent_node(self, 0);
        Node& pb = parent_node(self, 1);
        const size_t split = size_t(ma) * n;
        if (pa.requires_grad) {
            auto& g = ensure_grad(pa);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            auto& g = ensure_grad(pb);
            for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[split + i];
        }
    });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    check_defined(a, "concat_cols");
    check_defined(b, "concat_cols");
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0)) {
        throw ShapeError("concat_cols: incompatible " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const uint32_t m = a.dim(0), na = a.dim(1), nb = b.dim(1);
    std::vector<float> out(size_t(m) * (na + nb));
    for (uint32_t i = 0; i < m; ++i) {
        std::copy_n(a.data().data() + size_t(i) * na, na, out.data() + size_t(i) * (na + nb));
        std::copy_n(b.data().data() + size_t(i) * nb, nb, out.data() + size_t(i) * (na + nb) + na);
    }
    return Tensor::make_op({m, na + nb}, std::move(out), {a, b}, [m, na, nb](Node& self) {
        Node& pa = parent_node(self, 0);
        Node& pb = parent_node(self, 1);
        const uint32_t n = na + nb;
        if (pa.requires_grad) {
            auto& g = ensure_grad(pa);
            for (uint32_t i = 0; i < m; ++i)
                for (uint32_t j = 0; j < na; ++j) g[i * na + j] += self.grad[i * n + j];
        }
        if (pb.requires_grad) {
            auto& g = ensure_grad(pb);
            for (uint32_t i = 0; i < m; ++i)
                for (uint32_t j = 0; j < nb; ++j) g[i * nb + j] += self.grad[i * n + na + j];
        }
    });
}

Tensor slice_rows(const Tensor& x, uint32_t row0, uint32_t row1) {
    check_defined(x, "slice_rows");
    if (x.ndim() != 2 || row0 > row1 || row1 > x.dim(0)) {
        throw ShapeError("slice_rows: bad range [" + std::to_string(row0) + "," +
                         std::to_string(row1) + ") for " + shape_str(x.shape()));
    }
    const uint32_t n = x.dim(1), rows = row1 - row0;
    std::vector<float> out(x.data().begin() + size_t(row0) * n, x.data().begin() + size_t(row1) * n);
    return Tensor::make_op({rows, n}, std::move(out), {x}, [row0, n](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        const size_t base = size_t(row0) * n;
        for (size_t i = 0; i < self.grad.size(); ++i) g[base + i] += self.grad[i];
    });
}

Tensor gather_rows(const Tensor& x, const std::vector<uint32_t>& rows) {
    check_defined(x, "gather_rows");
    if (x.ndim() != 2) throw ShapeError("gather_rows: need 2-D, got " + shape_str(x.shape()));
    const uint32_t m = x.dim(0), n = x.dim(1);
    for (uint32_t r : rows) {
        if (r >= m) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of " + std::to_string(m));
    }
    std::vector<float> out(rows.size() * n);
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy_n(x.data().data() + size_t(rows[i]) * n, n, out.data() + i * n);
    return Tensor::make_op({uint32_t(rows.size()), n}, std::move(out), {x}, [rows, n](Node& self) {
        Node& p = parent_node(self, 0);
        if (!p.requires_grad) return;
        auto& g = ensure_grad(p);
        for (size_t i = 0; i < rows.size(); ++i)
            for (uint32_t j = 0; j < n; ++j) g[size_t(rows[i]) * n + j] += self.grad[i * n + j];
    });
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<uint32_t>& targets) {
    check_defined(logits, "cross_entropy_rows");
    if (logits.ndim() != 2 || targets.size() != logits.dim(0)) {
        throw ShapeError("cross_entropy_rows: need [m,V] logits and m targets");
    }
    const uint32_t m = logits.dim(0), v = logits.dim(1);
    for (uint32_t t : targets) {
        if (t >= v) throw ParamError("cross_entropy_rows: target " + std::to_string(t) + " out of vocab " + std::to_string(v));
    }
    const auto& zd = logits.data();
    std::vector<float> lse(m), mx(m);
    double loss = 0.0;
    for (uint32_t i = 0; i < m; ++i) {
        const float* row = zd.data() + size_t(i) * v;
        float rmax = row[0];
        for (uint32_t j = 1; j < v; ++j) rmax = std::max(rmax, row[j]);
        double sum = 0.0;
        for (uint32_t j = 0; j < v; ++j) sum += std::exp(double(row[j]) - double(rmax));
        mx[i] = rmax;
        lse[i] = float(double(rmax) + std::log(sum));
        loss += double(lse[i]) - double(row[targets[i]]);
    }
    FlopsScope::count(5ull * m * v + m);
    return Tensor::make_op(
        {1}, {float(loss / double(m))}, {logits},
        [m, v, targets, lse = std::move(lse)](Node& self) {
            Node& p = parent_node(self, 0);
            if (!p.requires_grad) return;
            auto& g = ensure_grad(p);
            const float gs = self.grad[0] / float(m);
            for (uint32_t i = 0; i < m; ++i) {
                const float* row = p.data.data() + size_t(i) * v;
                for (uint32_t j = 0; j < v; ++j) {
                    const float pj = std::exp(row[j] - lse[i]);
                    g[i * v + j] += (pj - (j == targets[i] ? 1.0f : 0.0f)) * gs;
                }
            }
        });
}

} // namespace tgv

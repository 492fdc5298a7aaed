#pragma once

// Dense N-d tensors with reverse-mode automatic differentiation.
// Layout is row-major, 4-D activations are (N, C, H, W). Ops are free
// functions returning new tensors; the graph is recorded through
// shared parent links and replayed in reverse by backward().

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sasr {

struct TensorError : std::runtime_error {
    explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

inline std::int64_t numel_of(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw TensorError("non-positive dimension " + std::to_string(d));
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + ")";
}

template <typename S>
using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

namespace detail {

// Thread-local switch; when false, ops record no parents and produce
// constant nodes (used for discriminator steps on generator outputs).
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <typename S>
struct Node {
    Shape shape;
    Array<S> value;
    Array<S> grad;   // lazily sized; empty means all-zero
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Pulls this node's grad into the parents' grads.
    std::function<void(Node&)> backprop;

    std::int64_t numel() const { return value.size(); }

    Array<S>& grad_ref() {
        if (grad.size() != value.size()) grad = Array<S>::Zero(value.size());
        return grad;
    }
};

// Value-semantic handle onto a graph node.
template <typename S>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<S>> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }

    static Tensor filled(Shape shape, S v, bool requires_grad = false) {
        auto n = std::make_shared<Node<S>>();
        n->value = Array<S>::Constant(numel_of(shape), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
        if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw TensorError("data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node<S>>();
        n->value = Eigen::Map<const Array<S>>(data.data(), static_cast<Eigen::Index>(data.size()));
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    Array<S>& value() { return node_->value; }
    const Array<S>& value() const { return node_->value; }
    S item() const {
        if (numel() != 1) throw TensorError("item() on non-scalar tensor " + shape_str(shape()));
        return node_->value(0);
    }

    const Array<S>& grad() const { return node_->grad_ref(); }
    void zero_grad() {
        if (node_->grad.size() > 0) node_->grad.setZero();
    }

    std::shared_ptr<Node<S>> node() const { return node_; }

    int dim(std::size_t i) const {
        if (i >= shape().size()) throw TensorError("dim index out of range");
        return shape()[i];
    }
    std::size_t ndim() const { return shape().size(); }

private:
    std::shared_ptr<Node<S>> node_;
};

namespace detail {

template <typename S>
Tensor<S> make_result(Shape shape, Array<S> value, std::vector<Tensor<S>> inputs,
                      std::function<void(Node<S>&)> backprop) {
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (grad_enabled()) {
        bool any = false;
        for (const auto& t : inputs) any = any || t.requires_grad() || !t.node()->parents.empty()
                                                || t.node()->backprop != nullptr;
        // Track only nodes that can propagate gradient.
        bool needs = false;
        for (const auto& t : inputs)
            if (t.requires_grad() || t.node()->backprop) needs = true;
        (void)any;
        if (needs) {
            n->parents.reserve(inputs.size());
            for (auto& t : inputs) n->parents.push_back(t.node());
            n->backprop = std::move(backprop);
        }
    }
    return Tensor<S>(n);
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw TensorError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                          " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    auto an = a.node(), bn = b.node();
    return detail::make_result<S>(a.shape(), a.value() + b.value(), {a, b},
        [an, bn](Node<S>& out) {
            an->grad_ref() += out.grad;
            bn->grad_ref() += out.grad;
        });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    auto an = a.node(), bn = b.node();
    return detail::make_result<S>(a.shape(), a.value() - b.value(), {a, b},
        [an, bn](Node<S>& out) {
            an->grad_ref() += out.grad;
            bn->grad_ref() -= out.grad;
        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    auto an = a.node(), bn = b.node();
    return detail::make_result<S>(a.shape(), a.value() * b.value(), {a, b},
        [an, bn](Node<S>& out) {
            an->grad_ref() += out.grad * bn->value;
            bn->grad_ref() += out.grad * an->value;
        });
}

template <typename S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "div");
    auto an = a.node(), bn = b.node();
    return detail::make_result<S>(a.shape(), a.value() / b.value(), {a, b},
        [an, bn](Node<S>& out) {
            an->grad_ref() += out.grad / bn->value;
            bn->grad_ref() -= out.grad * an->value / (bn->value * bn->value);
        });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    auto an = a.node();
    return detail::make_result<S>(a.shape(), a.value() * c, {a},
        [an, c](Node<S>& out) { an->grad_ref() += out.grad * c; });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
    auto an = a.node();
    return detail::make_result<S>(a.shape(), a.value() + c, {a},
        [an](Node<S>& out) { an->grad_ref() += out.grad; });
}

template <typename S>
Tensor<S> square(const Tensor<S>& a) {
    auto an = a.node();
    return detail::make_result<S>(a.shape(), a.value().square(), {a},
        [an](Node<S>& out) { an->grad_ref() += out.grad * S(2) * an->value; });
}

template <typename S>
Tensor<S> sqrt_eps(const Tensor<S>& a, S eps) {
    auto an = a.node();
    Array<S> v = (a.value() + eps).sqrt();
    auto vn = std::make_shared<Array<S>>(v);
    return detail::make_result<S>(a.shape(), std::move(v), {a},
        [an, vn](Node<S>& out) { an->grad_ref() += out.grad / (S(2) * (*vn)); });
}

template <typename S>
Tensor<S> log_(const Tensor<S>& a) {
    auto an = a.node();
    return detail::make_result<S>(a.shape(), a.value().log(), {a},
        [an](Node<S>& out) { an->grad_ref() += out.grad / an->value; });
}

// Values clamp to [lo,hi]; gradient passes only where the input is strictly inside.
template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
    auto an = a.node();
    return detail::make_result<S>(a.shape(), a.value().max(lo).min(hi), {a},
        [an, lo, hi](Node<S>& out) {
            an->grad_ref() += out.grad * ((an->value > lo) && (an->value < hi)).template cast<S>();
        });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
    auto an = a.node();
    return detail::make_result<S>({1}, Array<S>::Constant(1, a.value().sum()), {a},
        [an](Node<S>& out) { an->grad_ref() += out.grad(0); });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
    auto an = a.node();
    const S inv = S(1) / static_cast<S>(a.numel());
    return detail::make_result<S>({1}, Array<S>::Constant(1, a.value().mean()), {a},
        [an, inv](Node<S>& out) { an->grad_ref() += out.grad(0) * inv; });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    auto an = a.node();
    return detail::make_result<S>(a.shape(), a.value().max(S(0)), {a},
        [an](Node<S>& out) {
            an->grad_ref() += out.grad * (an->value > S(0)).template cast<S>();
        });
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& a, S slope) {
    auto an = a.node();
    Array<S> v = (a.value() > S(0)).select(a.value(), a.value() * slope);
    return detail::make_result<S>(a.shape(), std::move(v), {a},
        [an, slope](Node<S>& out) {
            an->grad_ref() += out.grad * (an->value > S(0)).select(
                Array<S>::Ones(an->value.size()), Array<S>::Constant(an->value.size(), slope));
        });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    auto an = a.node();
    Array<S> v = S(1) / (S(1) + (-a.value()).exp());
    auto vn = std::make_shared<Array<S>>(v);
    return detail::make_result<S>(a.shape(), std::move(v), {a},
        [an, vn](Node<S>& out) { an->grad_ref() += out.grad * (*vn) * (S(1) - *vn); });
}

// Softmax along one axis of an arbitrary-rank tensor.
template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
    const Shape& sh = a.shape();
    if (axis < 0 || axis >= static_cast<int>(sh.size()))
        throw TensorError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(sh));
    std::int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < static_cast<int>(sh.size()); ++i) inner *= sh[i];
    for (int i = 0; i < axis; ++i) outer *= sh[i];
    const int K = sh[axis];

    Array<S> v(a.numel());
    const Array<S>& x = a.value();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * K * inner + in;
            S m = x(base);
            for (int k = 1; k < K; ++k) m = std::max(m, x(base + k * inner));
            S z = S(0);
            for (int k = 0; k < K; ++k) {
                S e = std::exp(x(base + k * inner) - m);
                v(base + k * inner) = e;
                z += e;
            }
            for (int k = 0; k < K; ++k) v(base + k * inner) /= z;
        }
    }
    auto an = a.node();
    auto vn = std::make_shared<Array<S>>(v);
    return detail::make_result<S>(sh, std::move(v), {a},
        [an, vn, outer, inner, K](Node<S>& out) {
            Array<S>& ga = an->grad_ref();
            const Array<S>& y = *vn;
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * K * inner + in;
                    S dot = S(0);
                    for (int k = 0; k < K; ++k) dot += out.grad(base + k * inner) * y(base + k * inner);
                    for (int k = 0; k < K; ++k) {
                        const std::int64_t i = base + k * inner;
                        ga(i) += y(i) * (out.grad(i) - dot);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    if (numel_of(shape) != a.numel())
        throw TensorError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                          " changes element count");
    auto an = a.node();
    return detail::make_result<S>(std::move(shape), a.value(), {a},
        [an](Node<S>& out) { an->grad_ref() += out.grad; });
}

template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& xs) {
    if (xs.empty()) throw TensorError("concat_channels: empty input list");
    const Shape& s0 = xs[0].shape();
    if (s0.size() != 4) throw TensorError("concat_channels: expected 4-D tensors");
    const int N = s0[0], H = s0[2], W = s0[3];
    int ctot = 0;
    for (const auto& t : xs) {
        const Shape& s = t.shape();
        if (s.size() != 4 || s[0] != N || s[2] != H || s[3] != W)
            throw TensorError("concat_channels: spatial/batch mismatch " + shape_str(s) +
                              " vs " + shape_str(s0));
        ctot += s[1];
    }
    Array<S> v(static_cast<std::int64_t>(N) * ctot * H * W);
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::int64_t coff = 0;
        for (const auto& t : xs) {
            const int c = t.shape()[1];
            v.segment((static_cast<std::int64_t>(n) * ctot + coff) * hw, c * hw) =
                t.value().segment(static_cast<std::int64_t>(n) * c * hw, c * hw);
            coff += c;
        }
    }
    std::vector<std::shared_ptr<Node<S>>> nodes;
    std::vector<int> chans;
    for (const auto& t : xs) {
        nodes.push_back(t.node());
        chans.push_back(t.shape()[1]);
    }
    return detail::make_result<S>({N, ctot, H, W}, std::move(v), xs,
        [nodes, chans, N, ctot, hw](Node<S>& out) {
            for (int n = 0; n < N; ++n) {
                std::int64_t coff = 0;
                for (std::size_t i = 0; i < nodes.size(); ++i) {
                    const int c = chans[i];
                    nodes[i]->grad_ref().segment(static_cast<std::int64_t>(n) * c * hw, c * hw) +=
                        out.grad.segment((static_cast<std::int64_t>(n) * ctot + coff) * hw, c * hw);
                    coff += c;
                }
            }
        });
}

// Channel slice [c0, c0+c) of a 4-D tensor.
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, int c0, int c) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw TensorError("slice_channels: expected 4-D tensor");
    if (c0 < 0 || c <= 0 || c0 + c > s[1]) throw TensorError("slice_channels: range out of bounds");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    Array<S> v(static_cast<std::int64_t>(N) * c * hw);
    for (int n = 0; n < N; ++n)
        v.segment(static_cast<std::int64_t>(n) * c * hw, c * hw) =
            x.value().segment((static_cast<std::int64_t>(n) * C + c0) * hw, c * hw);
    auto xn = x.node();
    return detail::make_result<S>({N, c, H, W}, std::move(v), {x},
        [xn, N, C, c0, c, hw](Node<S>& out) {
            for (int n = 0; n < N; ++n)
                xn->grad_ref().segment((static_cast<std::int64_t>(n) * C + c0) * hw, c * hw) +=
                    out.grad.segment(static_cast<std::int64_t>(n) * c * hw, c * hw);
        });
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

struct ConvSpec {
    int kernel = 3;
    int stride = 1;
    int padding = 0;
    int in_channels = 1;
    int out_channels = 1;

    int out_size(int in) const {
        return (in + 2 * padding - kernel) / stride + 1;
    }
};

namespace detail {

template <typename S>
using MatrixCM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Unfold one sample (C,H,W) into a (C*k*k) x (Ho*Wo) matrix with zero padding.
template <typename S>
void im2col(const S* x, int C, int H, int W, const ConvSpec& sp, MatrixCM<S>& col) {
    const int Ho = sp.out_size(H), Wo = sp.out_size(W), k = sp.kernel;
    col.setZero(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(Ho) * Wo);
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const int row = (c * k + ky) * k + kx;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * sp.stride + ky - sp.padding;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * sp.stride + kx - sp.padding;
                        if (ix < 0 || ix >= W) continue;
                        col(row, static_cast<Eigen::Index>(oy) * Wo + ox) =
                            x[(static_cast<std::int64_t>(c) * H + iy) * W + ix];
                    }
                }
            }
        }
    }
}

// Scatter-add the column gradient back onto the (C,H,W) input gradient.
template <typename S>
void col2im_add(const MatrixCM<S>& col, int C, int H, int W, const ConvSpec& sp, S* gx) {
    const int Ho = sp.out_size(H), Wo = sp.out_size(W), k = sp.kernel;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const int row = (c * k + ky) * k + kx;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * sp.stride + ky - sp.padding;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * sp.stride + kx - sp.padding;
                        if (ix < 0 || ix >= W) continue;
                        gx[(static_cast<std::int64_t>(c) * H + iy) * W + ix] +=
                            col(row, static_cast<Eigen::Index>(oy) * Wo + ox);
                    }
                }
            }
        }
    }
}

// Shared forward/backward used by conv2d and the dynamic convolution:
// per-sample weights ws[n] as (Cout) x (Cin*k*k) matrices.
template <typename S>
void conv_forward_sample(const S* x, const MatrixCM<S>& wm, const Array<S>* bias,
                         const ConvSpec& sp, int H, int W, S* y) {
    const int Ho = sp.out_size(H), Wo = sp.out_size(W);
    MatrixCM<S> col;
    im2col(x, sp.in_channels, H, W, sp, col);
    Eigen::Map<MatrixCM<S>> out(y, static_cast<Eigen::Index>(Ho) * Wo, sp.out_channels);
    // y laid out (Cout, Ho, Wo) row-major == (Ho*Wo) x Cout column-major view
    out.noalias() = col.transpose() * wm.transpose();
    if (bias)
        for (int co = 0; co < sp.out_channels; ++co) out.col(co).array() += (*bias)(co);
}

}  // namespace detail

inline void validate_conv_args(const Shape& xs, const Shape& ws, const Shape& bs,
                               const ConvSpec& sp) {
    if (xs.size() != 4) throw TensorError("conv2d: input must be 4-D, got " + shape_str(xs));
    if (ws.size() != 4) throw TensorError("conv2d: weights must be 4-D, got " + shape_str(ws));
    if (bs.size() != 1) throw TensorError("conv2d: bias must be 1-D, got " + shape_str(bs));
    if (xs[1] != sp.in_channels)
        throw TensorError("conv2d: input channels " + std::to_string(xs[1]) +
                          " != spec in_channels " + std::to_string(sp.in_channels));
    if (ws[0] != sp.out_channels || ws[1] != sp.in_channels || ws[2] != sp.kernel || ws[3] != sp.kernel)
        throw TensorError("conv2d: weight shape " + shape_str(ws) + " inconsistent with spec (" +
                          std::to_string(sp.out_channels) + "," + std::to_string(sp.in_channels) +
                          "," + std::to_string(sp.kernel) + "," + std::to_string(sp.kernel) + ")");
    if (bs[0] != sp.out_channels)
        throw TensorError("conv2d: bias length " + std::to_string(bs[0]) +
                          " != out_channels " + std::to_string(sp.out_channels));
    if (sp.out_size(xs[2]) < 1 || sp.out_size(xs[3]) < 1)
        throw TensorError("conv2d: output spatial size < 1 for input " + shape_str(xs));
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, const ConvSpec& sp) {
    validate_conv_args(x.shape(), w.shape(), b.shape(), sp);
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int Ho = sp.out_size(H), Wo = sp.out_size(W);
    const std::int64_t in_stride = static_cast<std::int64_t>(sp.in_channels) * H * W;
    const std::int64_t out_stride = static_cast<std::int64_t>(sp.out_channels) * Ho * Wo;

    Array<S> v(static_cast<std::int64_t>(N) * out_stride);
    Eigen::Map<const detail::MatrixCM<S>> wcm(w.value().data(),
        static_cast<Eigen::Index>(sp.kernel) * sp.kernel * sp.in_channels, sp.out_channels);
    // Weights are (Cout,Cin,k,k) row-major; as a column-major map that is
    // (Cin*k*k) x Cout, so wm = map.transpose() gives Cout x (Cin*k*k).
    detail::MatrixCM<S> wm = wcm.transpose();
    for (int n = 0; n < N; ++n)
        detail::conv_forward_sample(x.value().data() + n * in_stride, wm, &b.value(), sp, H, W,
                                    v.data() + n * out_stride);

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return detail::make_result<S>({N, sp.out_channels, Ho, Wo}, std::move(v), {x, w, b},
        [xn, wn, bn, sp, N, H, W, Ho, Wo, in_stride, out_stride](Node<S>& out) {
            Eigen::Map<const detail::MatrixCM<S>> wcm(wn->value.data(),
                static_cast<Eigen::Index>(sp.kernel) * sp.kernel * sp.in_channels, sp.out_channels);
            detail::MatrixCM<S> wm = wcm.transpose();
            Array<S>& gx = xn->grad_ref();
            Array<S>& gw = wn->grad_ref();
            Array<S>& gb = bn->grad_ref();
            Eigen::Map<detail::MatrixCM<S>> gwcm(gw.data(),
                static_cast<Eigen::Index>(sp.kernel) * sp.kernel * sp.in_channels, sp.out_channels);
            detail::MatrixCM<S> col;
            for (int n = 0; n < N; ++n) {
                Eigen::Map<const detail::MatrixCM<S>> go(out.grad.data() + n * out_stride,
                    static_cast<Eigen::Index>(Ho) * Wo, sp.out_channels);
                detail::im2col(xn->value.data() + n * in_stride, sp.in_channels, H, W, sp, col);
                gwcm.noalias() += col * go;
                for (int co = 0; co < sp.out_channels; ++co) gb(co) += go.col(co).sum();
                detail::MatrixCM<S> gcol = wm.transpose() * go.transpose();
                detail::col2im_add(gcol, sp.in_channels, H, W, sp, gx.data() + n * in_stride);
            }
        });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class BnMode { train, eval };

template <typename S>
struct BnState {
    Array<S> running_mean;
    Array<S> running_var;
    S momentum = S(0.1);
    S eps = S(1e-5);

    static BnState init(int channels) {
        BnState st;
        st.running_mean = Array<S>::Zero(channels);
        st.running_var = Array<S>::Ones(channels);
        return st;
    }
};

template <typename S>
Tensor<S> batch_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     BnMode mode, BnState<S>& state) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw TensorError("batch_norm: expected 4-D input, got " + shape_str(s));
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    if (gamma.numel() != C || beta.numel() != C)
        throw TensorError("batch_norm: gamma/beta length must equal channel count " + std::to_string(C));
    const std::int64_t m = static_cast<std::int64_t>(N) * H * W;
    if (mode == BnMode::train && m < 2)
        throw TensorError("batch_norm: train mode needs at least 2 values per channel");
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    const S eps = state.eps;

    Array<S> muv(C), invstd(C);
    if (mode == BnMode::train) {
        for (int c = 0; c < C; ++c) {
            S acc = S(0);
            for (int n = 0; n < N; ++n)
                acc += x.value().segment((static_cast<std::int64_t>(n) * C + c) * hw, hw).sum();
            const S mu = acc / static_cast<S>(m);
            S var = S(0);
            for (int n = 0; n < N; ++n)
                var += (x.value().segment((static_cast<std::int64_t>(n) * C + c) * hw, hw) - mu)
                           .square().sum();
            var /= static_cast<S>(m);
            muv(c) = mu;
            invstd(c) = S(1) / std::sqrt(var + eps);
            const S unbiased = var * static_cast<S>(m) / static_cast<S>(m - 1);
            state.running_mean(c) = (S(1) - state.momentum) * state.running_mean(c) + state.momentum * mu;
            state.running_var(c) = (S(1) - state.momentum) * state.running_var(c) + state.momentum * unbiased;
        }
    } else {
        for (int c = 0; c < C; ++c) {
            muv(c) = state.running_mean(c);
            invstd(c) = S(1) / std::sqrt(state.running_var(c) + eps);
        }
    }

    Array<S> xhat(x.numel()), v(x.numel());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
            xhat.segment(off, hw) = (x.value().segment(off, hw) - muv(c)) * invstd(c);
            v.segment(off, hw) = xhat.segment(off, hw) * gamma.value()(c) + beta.value()(c);
        }
    }

    auto xn = x.node();
    auto gn = gamma.node();
    auto bn = beta.node();
    auto xhatp = std::make_shared<Array<S>>(std::move(xhat));
    auto invstdp = std::make_shared<Array<S>>(std::move(invstd));
    const bool train = (mode == BnMode::train);
    return detail::make_result<S>(s, std::move(v), {x, gamma, beta},
        [xn, gn, bn, xhatp, invstdp, N, C, hw, m, train](Node<S>& out) {
            Array<S>& gx = xn->grad_ref();
            Array<S>& gg = gn->grad_ref();
            Array<S>& gb = bn->grad_ref();
            const Array<S>& xh = *xhatp;
            for (int c = 0; c < C; ++c) {
                S sum_dy = S(0), sum_dy_xh = S(0);
                for (int n = 0; n < N; ++n) {
                    const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
                    sum_dy += out.grad.segment(off, hw).sum();
                    sum_dy_xh += (out.grad.segment(off, hw) * xh.segment(off, hw)).sum();
                }
                gg(c) += sum_dy_xh;
                gb(c) += sum_dy;
                const S g = gn->value(c);
                const S istd = (*invstdp)(c);
                for (int n = 0; n < N; ++n) {
                    const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * hw;
                    if (train) {
                        gx.segment(off, hw) += g * istd / static_cast<S>(m) *
                            (static_cast<S>(m) * out.grad.segment(off, hw) - sum_dy -
                             xh.segment(off, hw) * sum_dy_xh);
                    } else {
                        gx.segment(off, hw) += g * istd * out.grad.segment(off, hw);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> max_pool2(const Tensor<S>& x) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw TensorError("max_pool2: expected 4-D input");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    if (H % 2 != 0 || W % 2 != 0)
        throw TensorError("max_pool2: spatial dims must be even, got " + shape_str(s));
    const int Ho = H / 2, Wo = W / 2;
    Array<S> v(static_cast<std::int64_t>(N) * C * Ho * Wo);
    auto idx = std::make_shared<std::vector<std::int64_t>>(v.size());
    const Array<S>& xv = x.value();
    std::int64_t o = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(n) * C + c) * H * W;
            for (int oy = 0; oy < Ho; ++oy) {
                for (int ox = 0; ox < Wo; ++ox) {
                    S best = xv(base + (2 * oy) * W + 2 * ox);
                    std::int64_t bi = base + (2 * oy) * W + 2 * ox;
                    // ties keep the first index in row-major order
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::int64_t i = base + (2 * oy + dy) * W + (2 * ox + dx);
                            if (xv(i) > best) { best = xv(i); bi = i; }
                        }
                    v(o) = best;
                    (*idx)[o] = bi;
                    ++o;
                }
            }
        }
    }
    auto xn = x.node();
    return detail::make_result<S>({N, C, Ho, Wo}, std::move(v), {x},
        [xn, idx](Node<S>& out) {
            Array<S>& gx = xn->grad_ref();
            for (std::int64_t i = 0; i < out.grad.size(); ++i) gx((*idx)[i]) += out.grad(i);
        });
}

template <typename S>
Tensor<S> upsample_nearest2(const Tensor<S>& x) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw TensorError("upsample_nearest2: expected 4-D input");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    Array<S> v(static_cast<std::int64_t>(N) * C * 4 * H * W);
    const Array<S>& xv = x.value();
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
        const std::int64_t ib = nc * H * W, ob = nc * 4 * H * W;
        for (int y = 0; y < H; ++y)
            for (int xq = 0; xq < W; ++xq) {
                const S val = xv(ib + static_cast<std::int64_t>(y) * W + xq);
                const std::int64_t o = ob + static_cast<std::int64_t>(2 * y) * 2 * W + 2 * xq;
                v(o) = val;
                v(o + 1) = val;
                v(o + 2 * W) = val;
                v(o + 2 * W + 1) = val;
            }
    }
    auto xn = x.node();
    return detail::make_result<S>({N, C, 2 * H, 2 * W}, std::move(v), {x},
        [xn, N, C, H, W](Node<S>& out) {
            Array<S>& gx = xn->grad_ref();
            for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc) {
                const std::int64_t ib = nc * H * W, ob = nc * 4 * H * W;
                for (int y = 0; y < H; ++y)
                    for (int xq = 0; xq < W; ++xq) {
                        const std::int64_t o = ob + static_cast<std::int64_t>(2 * y) * 2 * W + 2 * xq;
                        gx(ib + static_cast<std::int64_t>(y) * W + xq) +=
                            out.grad(o) + out.grad(o + 1) + out.grad(o + 2 * W) + out.grad(o + 2 * W + 1);
                    }
            }
        });
}

// output(n,c,r*h+i,r*w+j) = input(n, c*r*r + i*r + j, h, w)
template <typename S>
Tensor<S> pixel_shuffle(const Tensor<S>& x, int r) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw TensorError("pixel_shuffle: expected 4-D input");
    const int N = s[0], C = s[1], H = s[2], W = s[3];
    if (r < 1 || C % (r * r) != 0)
        throw TensorError("pixel_shuffle: channel count " + std::to_string(C) +
                          " not divisible by r^2=" + std::to_string(r * r));
    const int Co = C / (r * r);
    Array<S> v(x.numel());
    const Array<S>& xv = x.value();
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < r; ++j) {
                            const std::int64_t src =
                                ((static_cast<std::int64_t>(n) * C + co * r * r + i * r + j) * H + h) * W + w;
                            const std::int64_t dst =
                                ((static_cast<std::int64_t>(n) * Co + co) * (static_cast<std::int64_t>(r) * H) +
                                 r * h + i) * (static_cast<std::int64_t>(r) * W) + r * w + j;
                            v(dst) = xv(src);
                        }
    auto xn = x.node();
    return detail::make_result<S>({N, Co, r * H, r * W}, std::move(v), {x},
        [xn, N, C, Co, H, W, r](Node<S>& out) {
            Array<S>& gx = xn->grad_ref();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < Co; ++co)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            for (int i = 0; i < r; ++i)
                                for (int j = 0; j < r; ++j) {
                                    const std::int64_t src =
                                        ((static_cast<std::int64_t>(n) * C + co * r * r + i * r + j) * H + h) * W + w;
                                    const std::int64_t dst =
                                        ((static_cast<std::int64_t>(n) * Co + co) *
                                         (static_cast<std::int64_t>(r) * H) + r * h + i) *
                                        (static_cast<std::int64_t>(r) * W) + r * w + j;
                                    gx(src) += out.grad(dst);
                                }
        });
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
    const Shape& s = x.shape();
    if (s.size() != 4) throw TensorError("global_avg_pool: expected 4-D input");
    const int N = s[0], C = s[1];
    const std::int64_t hw = static_cast<std::int64_t>(s[2]) * s[3];
    Array<S> v(static_cast<std::int64_t>(N) * C);
    for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(N) * C; ++nc)
        v(nc) = x.value().segment(nc * hw, hw).mean();
    auto xn = x.node();
    return detail::make_result<S>({N, C}, std::move(v), {x},
        [xn, hw](Node<S>& out) {
            Array<S>& gx = xn->grad_ref();
            const S inv = S(1) / static_cast<S>(hw);
            for (std::int64_t nc = 0; nc < out.grad.size(); ++nc)
                gx.segment(nc * hw, hw) += out.grad(nc) * inv;
        });
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    const Shape& xs = x.shape();
    const Shape& ws = w.shape();
    if (xs.size() != 2 || ws.size() != 2)
        throw TensorError("linear: expected 2-D input and weights");
    const int N = xs[0], Din = xs[1], Dout = ws[0];
    if (ws[1] != Din)
        throw TensorError("linear: weight inner dim " + std::to_string(ws[1]) +
                          " != input dim " + std::to_string(Din));
    if (b.numel() != Dout)
        throw TensorError("linear: bias length != output dim");
    using RM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RM> xm(x.value().data(), N, Din);
    Eigen::Map<const RM> wm(w.value().data(), Dout, Din);
    RM ym = xm * wm.transpose();
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.value().data(), Dout);
    Array<S> v = Eigen::Map<const Array<S>>(ym.data(), static_cast<std::int64_t>(N) * Dout);
    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return detail::make_result<S>({N, Dout}, std::move(v), {x, w, b},
        [xn, wn, bn, N, Din, Dout](Node<S>& out) {
            Eigen::Map<const RM> xm(xn->value.data(), N, Din);
            Eigen::Map<const RM> wm(wn->value.data(), Dout, Din);
            Eigen::Map<const RM> go(out.grad.data(), N, Dout);
            Eigen::Map<RM> gx(xn->grad_ref().data(), N, Din);
            Eigen::Map<RM> gw(wn->grad_ref().data(), Dout, Din);
            gx.noalias() += go * wm;
            gw.noalias() += go.transpose() * xm;
            bn->grad_ref() += go.colwise().sum().array().transpose();
        });
}

// ---------------------------------------------------------------------------
// Dynamic convolution: per-sample kernel = attention-weighted sum of K banks.
// ---------------------------------------------------------------------------

// x: (N,Cin,H,W); attn: (N,K) rows on the simplex; banks: (K,Cout,Cin,d,d); bias: (Cout)
template <typename S>
Tensor<S> dynamic_conv2d(const Tensor<S>& x, const Tensor<S>& attn, const Tensor<S>& banks,
                         const Tensor<S>& bias, const ConvSpec& sp) {
    const Shape& xs = x.shape();
    const Shape& bs = banks.shape();
    if (xs.size() != 4) throw TensorError("dynamic_conv2d: input must be 4-D");
    if (bs.size() != 5) throw TensorError("dynamic_conv2d: banks must be 5-D (K,Cout,Cin,d,d)");
    const int N = xs[0], K = bs[0];
    if (attn.shape() != Shape{N, K})
        throw TensorError("dynamic_conv2d: attention shape " + shape_str(attn.shape()) +
                          " != (N,K)=(" + std::to_string(N) + "," + std::to_string(K) + ")");
    if (bs[1] != sp.out_channels || bs[2] != sp.in_channels || bs[3] != sp.kernel || bs[4] != sp.kernel)
        throw TensorError("dynamic_conv2d: bank shape " + shape_str(bs) + " inconsistent with spec");
    if (xs[1] != sp.in_channels) throw TensorError("dynamic_conv2d: input channel mismatch");
    const int H = xs[2], W = xs[3];
    const int Ho = sp.out_size(H), Wo = sp.out_size(W);
    const std::int64_t wsize = static_cast<std::int64_t>(sp.out_channels) * sp.in_channels *
                               sp.kernel * sp.kernel;
    const std::int64_t in_stride = static_cast<std::int64_t>(sp.in_channels) * H * W;
    const std::int64_t out_stride = static_cast<std::int64_t>(sp.out_channels) * Ho * Wo;
    const Eigen::Index wrows = static_cast<Eigen::Index>(sp.kernel) * sp.kernel * sp.in_channels;

    Array<S> v(static_cast<std::int64_t>(N) * out_stride);
    for (int n = 0; n < N; ++n) {
        Array<S> wagg = Array<S>::Zero(wsize);
        for (int k = 0; k < K; ++k)
            wagg += attn.value()(static_cast<std::int64_t>(n) * K + k) *
                    banks.value().segment(k * wsize, wsize);
        Eigen::Map<const detail::MatrixCM<S>> wcm(wagg.data(), wrows, sp.out_channels);
        detail::MatrixCM<S> wm = wcm.transpose();
        detail::conv_forward_sample(x.value().data() + n * in_stride, wm, &bias.value(), sp, H, W,
                                    v.data() + n * out_stride);
    }

    auto xn = x.node();
    auto an = attn.node();
    auto kn = banks.node();
    auto bn = bias.node();
    return detail::make_result<S>({N, sp.out_channels, Ho, Wo}, std::move(v),
        {x, attn, banks, bias},
        [xn, an, kn, bn, sp, N, K, H, W, Ho, Wo, wsize, in_stride, out_stride, wrows](Node<S>& out) {
            Array<S>& gx = xn->grad_ref();
            Array<S>& ga = an->grad_ref();
            Array<S>& gk = kn->grad_ref();
            Array<S>& gb = bn->grad_ref();
            detail::MatrixCM<S> col;
            for (int n = 0; n < N; ++n) {
                Array<S> wagg = Array<S>::Zero(wsize);
                for (int k = 0; k < K; ++k)
                    wagg += an->value(static_cast<std::int64_t>(n) * K + k) *
                            kn->value.segment(k * wsize, wsize);
                Eigen::Map<const detail::MatrixCM<S>> wcm(wagg.data(), wrows, sp.out_channels);
                detail::MatrixCM<S> wm = wcm.transpose();

                Eigen::Map<const detail::MatrixCM<S>> go(out.grad.data() + n * out_stride,
                    static_cast<Eigen::Index>(Ho) * Wo, sp.out_channels);
                detail::im2col(xn->value.data() + n * in_stride, sp.in_channels, H, W, sp, col);

                // per-sample weight gradient, then split over banks and attention
                detail::MatrixCM<S> gwm = col * go;  // (Cin*k*k) x Cout
                Eigen::Map<const Array<S>> gwflat(gwm.data(), wsize);
                for (int k = 0; k < K; ++k) {
                    const S a = an->value(static_cast<std::int64_t>(n) * K + k);
                    gk.segment(k * wsize, wsize) += a * gwflat;
                    ga(static_cast<std::int64_t>(n) * K + k) +=
                        (gwflat * kn->value.segment(k * wsize, wsize)).sum();
                }
                for (int co = 0; co < sp.out_channels; ++co) gb(co) += go.col(co).sum();

                detail::MatrixCM<S> gcol = wm.transpose() * go.transpose();
                detail::col2im_add(gcol, sp.in_channels, H, W, sp, gx.data() + n * in_stride);
            }
        });
}

// ---------------------------------------------------------------------------
// Reverse pass
// ---------------------------------------------------------------------------

template <typename S>
void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1)
        throw TensorError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    // Deterministic topological order via iterative post-order DFS.
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    std::vector<std::shared_ptr<Node<S>>> keepalive;  // root handle only; parents own the rest
    stack.emplace_back(loss.node().get(), 0);
    keepalive.push_back(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (seen.count(node)) { stack.pop_back(); continue; }
        if (next < node->parents.size()) {
            Node<S>* p = node->parents[next].get();
            ++next;
            if (!seen.count(p)) stack.emplace_back(p, 0);
        } else {
            seen.insert(node);
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->grad_ref()(0) += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backprop && n->grad.size() == n->value.size()) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

struct GradCheckOptions {
    double step = 1e-5;
    // Cap on probed coordinates per tensor; <=0 probes all. Subsampling is
    // deterministic (evenly strided) so repeated runs agree.
    std::int64_t max_coords = 0;
    // Denominator floor for the relative-error ratio. Central differences on a
    // loss of order one cannot resolve derivatives much below ~1e-8, so
    // coordinates where both gradients are tiny are compared against this
    // floor instead (combined absolute/relative tolerance).
    double denom_floor = 1e-4;
};

// f must rebuild its graph from x's current value on every call and return a scalar.
template <typename S>
double grad_check(const std::function<Tensor<S>(Tensor<S>&)>& f, Tensor<S>& x,
                  const GradCheckOptions& opt = {}) {
    static_assert(std::is_floating_point_v<S>);
    x.set_requires_grad(true);
    x.zero_grad();
    Tensor<S> loss = f(x);
    backward(loss);
    Array<S> analytic = x.grad();

    const std::int64_t n = x.numel();
    std::int64_t count = n, stride = 1;
    if (opt.max_coords > 0 && opt.max_coords < n) {
        count = opt.max_coords;
        stride = n / count;
    }
    const S h = static_cast<S>(opt.step);
    double max_err = 0.0;
    for (std::int64_t j = 0; j < count; ++j) {
        const std::int64_t i = j * stride;
        const S orig = x.value()(i);
        x.value()(i) = orig + h;
        const double fp = static_cast<double>(f(x).item());
        x.value()(i) = orig - h;
        const double fm = static_cast<double>(f(x).item());
        x.value()(i) = orig;
        const double fd = (fp - fm) / (2.0 * static_cast<double>(h));
        const double a = static_cast<double>(analytic(i));
        const double denom = std::max({std::abs(a), std::abs(fd), opt.denom_floor});
        max_err = std::max(max_err, std::abs(a - fd) / denom);
    }
    return max_err;
}

}  // namespace sasr

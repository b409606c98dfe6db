#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "blnet/error.hpp"
#include "blnet/tensor.hpp"

// Reverse-mode autodiff over 4-D tensors. Graphs are built dynamically per
// forward pass; backward() walks the tape in reverse topological order and
// accumulates gradients (call sites zero param grads between steps, the
// optimizer does this after each update). Single-threaded per graph.
namespace blnet::ad {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until needed; same shape as value once allocated
    bool requires_grad = false;
    bool trainable = false;
    std::string name;  // parameter name, or op tag for interior nodes
    std::vector<std::shared_ptr<Node<T>>> inputs;
    std::function<void(Node<T>&)> backward_fn;

    void ensure_grad() {
        if (grad.shape != value.shape || grad.data.size() != value.data.size()) {
            grad = Tensor<T>(value.n(), value.c(), value.h(), value.w());
        }
    }
    void zero_grad() {
        ensure_grad();
        grad.fill(T(0));
    }
};

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> constant(Tensor<T> v, std::string name = "const") {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->name = std::move(name);
    return n;
}

// A named tensor that participates in gradient flow. Grad is allocated and
// zeroed up front so params untouched by a backward pass read as zero-grad.
template <typename T>
NodePtr<T> param(std::string name, Tensor<T> v, bool trainable = true) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->name = std::move(name);
    n->requires_grad = true;
    n->trainable = trainable;
    n->zero_grad();
    return n;
}

namespace detail {

template <typename T>
NodePtr<T> make_op(Tensor<T> value, std::vector<NodePtr<T>> inputs, const char* op,
                   std::function<void(Node<T>&)> backward) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->name = op;
    for (const auto& in : inputs)
        if (in->requires_grad) n->requires_grad = true;
    n->inputs = std::move(inputs);
    if (n->requires_grad) n->backward_fn = std::move(backward);
    return n;
}

template <typename T>
void check_same_shape(const NodePtr<T>& a, const NodePtr<T>& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw ValueError(std::string(op) + ": shape mismatch " + shape_str(a->value.shape) +
                         " vs " + shape_str(b->value.shape));
}

}  // namespace detail

// ---- elementwise binary ops (equal shapes, or one side a 1x1x1x1 scalar) ----

template <typename T, typename FwdBig, typename FwdSc>
NodePtr<T> binary_op(const NodePtr<T>& a, const NodePtr<T>& b, const char* op, FwdBig fwd,
                     FwdSc bwd) {
    const bool a_scalar = a->value.is_scalar();
    const bool b_scalar = b->value.is_scalar();
    if (!a_scalar && !b_scalar) detail::check_same_shape(a, b, op);

    const Tensor<T>& big = b_scalar ? a->value : b->value;
    Tensor<T> out(big.n(), big.c(), big.h(), big.w());
    for (size_t i = 0; i < out.data.size(); ++i) {
        T av = a_scalar ? a->value.data[0] : a->value.data[i];
        T bv = b_scalar ? b->value.data[0] : b->value.data[i];
        out.data[i] = fwd(av, bv);
    }
    return detail::make_op<T>(std::move(out), {a, b}, op, [a, b, a_scalar, b_scalar, bwd](Node<T>& n) {
        for (size_t i = 0; i < n.grad.data.size(); ++i) {
            T av = a_scalar ? a->value.data[0] : a->value.data[i];
            T bv = b_scalar ? b->value.data[0] : b->value.data[i];
            T da, db;
            bwd(av, bv, n.grad.data[i], da, db);
            if (a->requires_grad) {
                a->ensure_grad();
                a->grad.data[a_scalar ? 0 : i] += da;
            }
            if (b->requires_grad) {
                b->ensure_grad();
                b->grad.data[b_scalar ? 0 : i] += db;
            }
        }
    });
}

template <typename T>
NodePtr<T> add(const NodePtr<T>& a, const NodePtr<T>& b) {
    return binary_op<T>(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <typename T>
NodePtr<T> sub(const NodePtr<T>& a, const NodePtr<T>& b) {
    return binary_op<T>(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <typename T>
NodePtr<T> mul(const NodePtr<T>& a, const NodePtr<T>& b) {
    return binary_op<T>(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y, T g, T& da, T& db) { da = g * y; db = g * x; });
}

// ---- elementwise unary ops ----

template <typename T, typename Fwd, typename Bwd>
NodePtr<T> unary_op(const NodePtr<T>& x, const char* op, Fwd fwd, Bwd bwd) {
    Tensor<T> out(x->value.n(), x->value.c(), x->value.h(), x->value.w());
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = fwd(x->value.data[i]);
    return detail::make_op<T>(std::move(out), {x}, op, [x, bwd](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (size_t i = 0; i < n.grad.data.size(); ++i)
            x->grad.data[i] += bwd(x->value.data[i], n.value.data[i]) * n.grad.data[i];
    });
}

template <typename T>
NodePtr<T> relu(const NodePtr<T>& x) {
    return unary_op<T>(
        x, "relu", [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
NodePtr<T> sigmoid(const NodePtr<T>& x) {
    return unary_op<T>(
        x, "sigmoid",
        [](T v) {
            if (v >= T(0)) {
                T e = std::exp(-v);
                return T(1) / (T(1) + e);
            }
            T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
NodePtr<T> exp(const NodePtr<T>& x) {
    return unary_op<T>(
        x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
NodePtr<T> abs(const NodePtr<T>& x) {
    return unary_op<T>(
        x, "abs", [](T v) { return std::abs(v); },
        [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
NodePtr<T> square(const NodePtr<T>& x) {
    return unary_op<T>(
        x, "square", [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
NodePtr<T> scale(const NodePtr<T>& x, T s) {
    return unary_op<T>(
        x, "scale", [s](T v) { return v * s; }, [s](T, T) { return s; });
}

// ---- structure ops ----

template <typename T>
NodePtr<T> concat_channels(const NodePtr<T>& a, const NodePtr<T>& b) {
    const auto& va = a->value;
    const auto& vb = b->value;
    if (va.n() != vb.n() || va.h() != vb.h() || va.w() != vb.w())
        throw ValueError("concat_channels: non-channel dims differ " + shape_str(va.shape) +
                         " vs " + shape_str(vb.shape));
    Tensor<T> out(va.n(), va.c() + vb.c(), va.h(), va.w());
    const int ca = va.c();
    for (int n = 0; n < va.n(); ++n)
        for (int c = 0; c < out.c(); ++c)
            for (int y = 0; y < va.h(); ++y)
                for (int x = 0; x < va.w(); ++x)
                    out.at(n, c, y, x) = c < ca ? va.at(n, c, y, x) : vb.at(n, c - ca, y, x);
    return detail::make_op<T>(std::move(out), {a, b}, "concat_channels", [a, b, ca](Node<T>& n) {
        if (a->requires_grad) a->ensure_grad();
        if (b->requires_grad) b->ensure_grad();
        for (int in = 0; in < n.value.n(); ++in)
            for (int c = 0; c < n.value.c(); ++c)
                for (int y = 0; y < n.value.h(); ++y)
                    for (int x = 0; x < n.value.w(); ++x) {
                        T g = n.grad.at(in, c, y, x);
                        if (c < ca) {
                            if (a->requires_grad) a->grad.at(in, c, y, x) += g;
                        } else if (b->requires_grad) {
                            b->grad.at(in, c - ca, y, x) += g;
                        }
                    }
    });
}

template <typename T>
NodePtr<T> slice_channels(const NodePtr<T>& x, int c0, int c1) {
    const auto& v = x->value;
    if (c0 < 0 || c1 > v.c() || c0 >= c1)
        throw ValueError("slice_channels: bad range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") for " + shape_str(v.shape));
    Tensor<T> out(v.n(), c1 - c0, v.h(), v.w());
    for (int n = 0; n < v.n(); ++n)
        for (int c = c0; c < c1; ++c)
            for (int y = 0; y < v.h(); ++y)
                for (int xx = 0; xx < v.w(); ++xx)
                    out.at(n, c - c0, y, xx) = v.at(n, c, y, xx);
    return detail::make_op<T>(std::move(out), {x}, "slice_channels", [x, c0](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int in = 0; in < n.value.n(); ++in)
            for (int c = 0; c < n.value.c(); ++c)
                for (int y = 0; y < n.value.h(); ++y)
                    for (int xx = 0; xx < n.value.w(); ++xx)
                        x->grad.at(in, c0 + c, y, xx) += n.grad.at(in, c, y, xx);
    });
}

// Tiles the whole channel block `times` times: out channel j = in channel j % c.
template <typename T>
NodePtr<T> repeat_channels(const NodePtr<T>& x, int times) {
    if (times < 1) throw ValueError("repeat_channels: times must be >= 1");
    const auto& v = x->value;
    Tensor<T> out(v.n(), v.c() * times, v.h(), v.w());
    for (int n = 0; n < v.n(); ++n)
        for (int c = 0; c < out.c(); ++c)
            for (int y = 0; y < v.h(); ++y)
                for (int xx = 0; xx < v.w(); ++xx)
                    out.at(n, c, y, xx) = v.at(n, c % v.c(), y, xx);
    return detail::make_op<T>(std::move(out), {x}, "repeat_channels", [x](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const int cin = x->value.c();
        for (int in = 0; in < n.value.n(); ++in)
            for (int c = 0; c < n.value.c(); ++c)
                for (int y = 0; y < n.value.h(); ++y)
                    for (int xx = 0; xx < n.value.w(); ++xx)
                        x->grad.at(in, c % cin, y, xx) += n.grad.at(in, c, y, xx);
    });
}

template <typename T>
NodePtr<T> mean_channels(const NodePtr<T>& x) {
    const auto& v = x->value;
    Tensor<T> out(v.n(), 1, v.h(), v.w());
    const T inv = T(1) / static_cast<T>(v.c());
    for (int n = 0; n < v.n(); ++n)
        for (int y = 0; y < v.h(); ++y)
            for (int xx = 0; xx < v.w(); ++xx) {
                T s = 0;
                for (int c = 0; c < v.c(); ++c) s += v.at(n, c, y, xx);
                out.at(n, 0, y, xx) = s * inv;
            }
    return detail::make_op<T>(std::move(out), {x}, "mean_channels", [x, inv](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int in = 0; in < n.value.n(); ++in)
            for (int y = 0; y < n.value.h(); ++y)
                for (int xx = 0; xx < n.value.w(); ++xx) {
                    T g = n.grad.at(in, 0, y, xx) * inv;
                    for (int c = 0; c < x->value.c(); ++c) x->grad.at(in, c, y, xx) += g;
                }
    });
}

// ---- reductions ----

template <typename T>
NodePtr<T> sum(const NodePtr<T>& x) {
    T s = 0;
    for (T v : x->value.data) s += v;
    return detail::make_op<T>(Tensor<T>::scalar(s), {x}, "sum", [x](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        T g = n.grad.data[0];
        for (auto& gv : x->grad.data) gv += g;
    });
}

template <typename T>
NodePtr<T> mean(const NodePtr<T>& x) {
    T s = 0;
    for (T v : x->value.data) s += v;
    const T inv = T(1) / static_cast<T>(x->value.numel());
    return detail::make_op<T>(Tensor<T>::scalar(s * inv), {x}, "mean", [x, inv](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        T g = n.grad.data[0] * inv;
        for (auto& gv : x->grad.data) gv += g;
    });
}

// ---- spatial ops ----

// Forward differences, zero in the last column (horizontal) / row (vertical);
// output shapes equal the input shape.
template <typename T>
std::pair<NodePtr<T>, NodePtr<T>> spatial_gradients(const NodePtr<T>& x) {
    const auto& v = x->value;
    Tensor<T> dh(v.n(), v.c(), v.h(), v.w());
    Tensor<T> dv(v.n(), v.c(), v.h(), v.w());
    for (int n = 0; n < v.n(); ++n)
        for (int c = 0; c < v.c(); ++c)
            for (int y = 0; y < v.h(); ++y)
                for (int xx = 0; xx < v.w(); ++xx) {
                    dh.at(n, c, y, xx) = xx + 1 < v.w() ? v.at(n, c, y, xx + 1) - v.at(n, c, y, xx) : T(0);
                    dv.at(n, c, y, xx) = y + 1 < v.h() ? v.at(n, c, y + 1, xx) - v.at(n, c, y, xx) : T(0);
                }
    auto h_node = detail::make_op<T>(std::move(dh), {x}, "grad_h", [x](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int in = 0; in < n.value.n(); ++in)
            for (int c = 0; c < n.value.c(); ++c)
                for (int y = 0; y < n.value.h(); ++y)
                    for (int xx = 0; xx + 1 < n.value.w(); ++xx) {
                        T g = n.grad.at(in, c, y, xx);
                        x->grad.at(in, c, y, xx + 1) += g;
                        x->grad.at(in, c, y, xx) -= g;
                    }
    });
    auto v_node = detail::make_op<T>(std::move(dv), {x}, "grad_v", [x](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int in = 0; in < n.value.n(); ++in)
            for (int c = 0; c < n.value.c(); ++c)
                for (int y = 0; y + 1 < n.value.h(); ++y)
                    for (int xx = 0; xx < n.value.w(); ++xx) {
                        T g = n.grad.at(in, c, y, xx);
                        x->grad.at(in, c, y + 1, xx) += g;
                        x->grad.at(in, c, y, xx) -= g;
                    }
    });
    return {h_node, v_node};
}

template <typename T>
NodePtr<T> upsample_nearest(const NodePtr<T>& x, int factor) {
    if (factor < 1) throw ValueError("upsample_nearest: factor must be >= 1");
    const auto& v = x->value;
    Tensor<T> out(v.n(), v.c(), v.h() * factor, v.w() * factor);
    for (int n = 0; n < v.n(); ++n)
        for (int c = 0; c < v.c(); ++c)
            for (int y = 0; y < out.h(); ++y)
                for (int xx = 0; xx < out.w(); ++xx)
                    out.at(n, c, y, xx) = v.at(n, c, y / factor, xx / factor);
    return detail::make_op<T>(std::move(out), {x}, "upsample_nearest", [x, factor](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int in = 0; in < n.value.n(); ++in)
            for (int c = 0; c < n.value.c(); ++c)
                for (int y = 0; y < n.value.h(); ++y)
                    for (int xx = 0; xx < n.value.w(); ++xx)
                        x->grad.at(in, c, y / factor, xx / factor) += n.grad.at(in, c, y, xx);
    });
}

namespace detail {
// Mirror index into [0, dim) without repeating the edge sample (period
// 2*(dim-1)); collapses to 0 when dim == 1. Handles pads larger than dim.
inline int reflect_index(int idx, int dim) {
    if (dim == 1) return 0;
    while (idx < 0 || idx >= dim) {
        if (idx < 0) idx = -idx;
        if (idx >= dim) idx = 2 * dim - 2 - idx;
    }
    return idx;
}
}  // namespace detail

template <typename T>
NodePtr<T> pad_reflect(const NodePtr<T>& x, int top, int bottom, int left, int right) {
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw ValueError("pad_reflect: negative padding");
    const auto& v = x->value;
    Tensor<T> out(v.n(), v.c(), v.h() + top + bottom, v.w() + left + right);
    for (int n = 0; n < v.n(); ++n)
        for (int c = 0; c < v.c(); ++c)
            for (int y = 0; y < out.h(); ++y) {
                int sy = detail::reflect_index(y - top, v.h());
                for (int xx = 0; xx < out.w(); ++xx)
                    out.at(n, c, y, xx) = v.at(n, c, sy, detail::reflect_index(xx - left, v.w()));
            }
    return detail::make_op<T>(std::move(out), {x}, "pad_reflect", [x, top, left](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int in = 0; in < n.value.n(); ++in)
            for (int c = 0; c < n.value.c(); ++c)
                for (int y = 0; y < n.value.h(); ++y) {
                    int sy = detail::reflect_index(y - top, x->value.h());
                    for (int xx = 0; xx < n.value.w(); ++xx)
                        x->grad.at(in, c, sy, detail::reflect_index(xx - left, x->value.w())) +=
                            n.grad.at(in, c, y, xx);
                }
    });
}

template <typename T>
NodePtr<T> crop(const NodePtr<T>& x, int top, int left, int height, int width) {
    const auto& v = x->value;
    if (top < 0 || left < 0 || top + height > v.h() || left + width > v.w())
        throw ValueError("crop: window out of bounds");
    Tensor<T> out(v.n(), v.c(), height, width);
    for (int n = 0; n < v.n(); ++n)
        for (int c = 0; c < v.c(); ++c)
            for (int y = 0; y < height; ++y)
                for (int xx = 0; xx < width; ++xx)
                    out.at(n, c, y, xx) = v.at(n, c, top + y, left + xx);
    return detail::make_op<T>(std::move(out), {x}, "crop", [x, top, left](Node<T>& n) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        for (int in = 0; in < n.value.n(); ++in)
            for (int c = 0; c < n.value.c(); ++c)
                for (int y = 0; y < n.value.h(); ++y)
                    for (int xx = 0; xx < n.value.w(); ++xx)
                        x->grad.at(in, c, top + y, left + xx) += n.grad.at(in, c, y, xx);
    });
}

// ---- convolution ----

namespace detail {

// im2col: rows indexed by (ci, kh, kw), columns by (oh, ow). Row-major so a
// (rows x cols) view matches the weight layout (cout, cin*k*k) directly.
template <typename T>
void im2col(const Tensor<T>& x, int n, int k, int stride, int pad, int oh, int ow,
            Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& col) {
    const int cin = x.c(), h = x.h(), w = x.w();
    col.resize(cin * k * k, oh * ow);
    for (int ci = 0; ci < cin; ++ci)
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
                const int row = (ci * k + kh) * k + kw;
                T* dst = col.data() + static_cast<size_t>(row) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    const int iy = y * stride - pad + kh;
                    for (int xx = 0; xx < ow; ++xx) {
                        const int ix = xx * stride - pad + kw;
                        dst[y * ow + xx] = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                               ? x.at(n, ci, iy, ix)
                                               : T(0);
                    }
                }
            }
}

template <typename T>
void col2im_add(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& col,
                Tensor<T>& gx, int n, int k, int stride, int pad, int oh, int ow) {
    const int cin = gx.c(), h = gx.h(), w = gx.w();
    for (int ci = 0; ci < cin; ++ci)
        for (int kh = 0; kh < k; ++kh)
            for (int kw = 0; kw < k; ++kw) {
                const int row = (ci * k + kh) * k + kw;
                const T* src = col.data() + static_cast<size_t>(row) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    const int iy = y * stride - pad + kh;
                    if (iy < 0 || iy >= h) continue;
                    for (int xx = 0; xx < ow; ++xx) {
                        const int ix = xx * stride - pad + kw;
                        if (ix >= 0 && ix < w) gx.at(n, ci, iy, ix) += src[y * ow + xx];
                    }
                }
            }
}

}  // namespace detail

// Cross-correlation (no kernel flip), zero padding, square kernel.
// x: (n, cin, h, w); w: (cout, cin, k, k); b: (1, cout, 1, 1).
template <typename T>
NodePtr<T> conv2d(const NodePtr<T>& x, const NodePtr<T>& w, const NodePtr<T>& b, int stride = 1,
                  int pad = 0) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using MapMat = Eigen::Map<Mat>;
    using MapConst = Eigen::Map<const Mat>;

    const auto& xv = x->value;
    const auto& wv = w->value;
    const int cout = wv.n(), cin = wv.c(), k = wv.h();
    if (wv.h() != wv.w()) throw ValueError("conv2d: kernel must be square");
    if (cin != xv.c())
        throw ValueError("conv2d: channel mismatch, input has " + std::to_string(xv.c()) +
                         ", kernel expects " + std::to_string(cin));
    if (b->value.c() != cout || b->value.numel() != static_cast<size_t>(cout))
        throw ValueError("conv2d: bias shape must be (1," + std::to_string(cout) + ",1,1)");
    if (stride < 1 || pad < 0) throw ValueError("conv2d: bad stride/pad");
    const int oh = (xv.h() + 2 * pad - k) / stride + 1;
    const int ow = (xv.w() + 2 * pad - k) / stride + 1;
    if (oh < 1 || ow < 1)
        throw ValueError("conv2d: output dims collapse for input " + shape_str(xv.shape));

    Tensor<T> out(xv.n(), cout, oh, ow);
    MapConst wmat(wv.data.data(), cout, cin * k * k);
    Mat col;
    for (int n = 0; n < xv.n(); ++n) {
        detail::im2col(xv, n, k, stride, pad, oh, ow, col);
        MapMat omat(out.data.data() + static_cast<size_t>(n) * cout * oh * ow, cout, oh * ow);
        omat.noalias() = wmat * col;
        for (int co = 0; co < cout; ++co) omat.row(co).array() += b->value.data[co];
    }

    const int stride_c = stride, pad_c = pad;
    return detail::make_op<T>(
        std::move(out), {x, w, b}, "conv2d", [x, w, b, k, stride_c, pad_c, oh, ow](Node<T>& n) {
            using MatB = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            const int cout = w->value.n(), cin = w->value.c();
            Eigen::Map<const MatB> wmat(w->value.data.data(), cout, cin * k * k);
            MatB col;
            for (int in = 0; in < x->value.n(); ++in) {
                Eigen::Map<const MatB> gout(
                    n.grad.data.data() + static_cast<size_t>(in) * cout * oh * ow, cout, oh * ow);
                if (x->requires_grad) {
                    x->ensure_grad();
                    MatB gcol = wmat.transpose() * gout;
                    detail::col2im_add(gcol, x->grad, in, k, stride_c, pad_c, oh, ow);
                }
                if (w->requires_grad || b->requires_grad) {
                    if (w->requires_grad) {
                        w->ensure_grad();
                        detail::im2col(x->value, in, k, stride_c, pad_c, oh, ow, col);
                        Eigen::Map<MatB> gw(w->grad.data.data(), cout, cin * k * k);
                        gw.noalias() += gout * col.transpose();
                    }
                    if (b->requires_grad) {
                        b->ensure_grad();
                        for (int co = 0; co < cout; ++co) b->grad.data[co] += gout.row(co).sum();
                    }
                }
            }
        });
}

// ---- backward ----

template <typename T>
std::vector<Node<T>*> topo_order(const NodePtr<T>& root) {
    std::vector<Node<T>*> order;
    std::unordered_set<const Node<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node<T>*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node<T>* child = node->inputs[next++].get();
            if (!seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // inputs before consumers
}

// Accumulates d(loss)/d(node) into .grad for every requires_grad node
// reachable from the scalar loss.
template <typename T>
void backward(const NodePtr<T>& loss) {
    if (!loss->value.is_scalar())
        throw ValueError("backward: loss must be scalar, got " + shape_str(loss->value.shape));
    auto order = topo_order(loss);
    for (Node<T>* n : order)
        if (n->requires_grad) n->ensure_grad();
    if (!loss->requires_grad) return;  // nothing reachable is trainable
    loss->grad.data[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->requires_grad && (*it)->backward_fn) (*it)->backward_fn(**it);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace blnet::ad

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <thread>
#include <unordered_set>
#include <vector>

#include "smwm/fft.hpp"
#include "smwm/stft.hpp"
#include "smwm/tensor.hpp"

namespace smwm {

// ---------------------------------------------------------------------------
// small deterministic worker split: each output element is written by exactly
// one thread, so results are identical for any worker count.
// ---------------------------------------------------------------------------
inline int& worker_count() {
    static int n = static_cast<int>(std::min(4u, std::max(1u, std::thread::hardware_concurrency())));
    return n;
}

template <class F>
inline void parallel_for(int64_t n, F&& f) {
    const int w = static_cast<int>(std::min<int64_t>(worker_count(), n));
    if (w <= 1) {
        if (n > 0) f(int64_t{0}, n);
        return;
    }
    const int64_t chunk = (n + w - 1) / w;
    std::vector<std::thread> threads;
    threads.reserve(w);
    for (int i = 0; i < w; ++i) {
        const int64_t b = i * chunk;
        const int64_t e = std::min(n, b + chunk);
        if (b < e) threads.emplace_back([b, e, &f] { f(b, e); });
    }
    for (auto& t : threads) t.join();
}

// ---------------------------------------------------------------------------
// value-level kernels (shared by graph forward rules)
// ---------------------------------------------------------------------------
namespace kernels {

struct Conv2dDims {
    int64_t cin, h, w, cout, kh, kw, oh, ow, sh, sw, ph, pw;
};

inline Conv2dDims conv2d_dims(const Tensor& x, const Tensor& weight, int sh, int sw, int ph,
                              int pw) {
    if (x.rank() != 3) throw std::invalid_argument("conv2d: input rank must be 3, got " + x.shape_str());
    if (weight.rank() != 4)
        throw std::invalid_argument("conv2d: weight rank must be 4, got " + weight.shape_str());
    Conv2dDims d{};
    d.cin = x.dim(0);
    d.h = x.dim(1);
    d.w = x.dim(2);
    d.cout = weight.dim(0);
    d.kh = weight.dim(2);
    d.kw = weight.dim(3);
    d.sh = sh;
    d.sw = sw;
    d.ph = ph;
    d.pw = pw;
    if (weight.dim(1) != d.cin)
        throw std::invalid_argument("conv2d: channel mismatch " + x.shape_str() + " vs " +
                                    weight.shape_str());
    if (sh <= 0 || sw <= 0) throw std::invalid_argument("conv2d: stride must be positive");
    d.oh = (d.h + 2 * ph - d.kh) / sh + 1;
    d.ow = (d.w + 2 * pw - d.kw) / sw + 1;
    if (d.oh <= 0 || d.ow <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");
    return d;
}

inline void conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor* bias, int sh,
                           int sw, int ph, int pw, Tensor& out) {
    const Conv2dDims d = conv2d_dims(x, weight, sh, sw, ph, pw);
    if (bias && (bias->rank() != 1 || bias->dim(0) != d.cout))
        throw std::invalid_argument("conv2d: bias shape mismatch");
    out = Tensor({d.cout, d.oh, d.ow});
    parallel_for(d.cout, [&](int64_t b, int64_t e) {
        for (int64_t co = b; co < e; ++co) {
            double* op = out.data.data() + co * d.oh * d.ow;
            if (bias) {
                const double bv = bias->data[co];
                for (int64_t i = 0; i < d.oh * d.ow; ++i) op[i] = bv;
            }
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                const double* xp = x.data.data() + ci * d.h * d.w;
                for (int64_t kh = 0; kh < d.kh; ++kh)
                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                        const double wv =
                            weight.data[((co * d.cin + ci) * d.kh + kh) * d.kw + kw];
                        if (wv == 0.0) continue;
                        if (d.sh == 1 && d.sw == 1) {
                            const int64_t ih0 = kh - ph;  // ih = oh + kh - ph
                            const int64_t oh_lo = std::max<int64_t>(0, -ih0);
                            const int64_t oh_hi = std::min(d.oh, d.h - ih0);
                            const int64_t iw0 = kw - pw;
                            const int64_t ow_lo = std::max<int64_t>(0, -iw0);
                            const int64_t ow_hi = std::min(d.ow, d.w - iw0);
                            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                double* orow = op + oh * d.ow;
                                const double* xrow = xp + (oh + ih0) * d.w + iw0;
                                for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                    orow[ow] += wv * xrow[ow];
                            }
                        } else {
                            for (int64_t oh = 0; oh < d.oh; ++oh) {
                                const int64_t ih = oh * d.sh + kh - ph;
                                if (ih < 0 || ih >= d.h) continue;
                                for (int64_t ow = 0; ow < d.ow; ++ow) {
                                    const int64_t iw = ow * d.sw + kw - pw;
                                    if (iw < 0 || iw >= d.w) continue;
                                    op[oh * d.ow + ow] += wv * xp[ih * d.w + iw];
                                }
                            }
                        }
                    }
            }
        }
    });
}

inline void conv2d_backward_input(const Tensor& weight, const Tensor& gout, const Conv2dDims& d,
                                  Tensor& gin) {
    gin = Tensor({d.cin, d.h, d.w});
    parallel_for(d.cin, [&](int64_t b, int64_t e) {
        for (int64_t ci = b; ci < e; ++ci) {
            double* gp = gin.data.data() + ci * d.h * d.w;
            for (int64_t co = 0; co < d.cout; ++co) {
                const double* go = gout.data.data() + co * d.oh * d.ow;
                for (int64_t kh = 0; kh < d.kh; ++kh)
                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                        const double wv =
                            weight.data[((co * d.cin + ci) * d.kh + kh) * d.kw + kw];
                        if (wv == 0.0) continue;
                        if (d.sh == 1 && d.sw == 1) {
                            // ih = oh + kh - ph  =>  oh = ih - kh + ph
                            const int64_t oh0 = d.ph - kh;
                            const int64_t ih_lo = std::max<int64_t>(0, -oh0);
                            const int64_t ih_hi = std::min(d.h, d.oh - oh0);
                            const int64_t ow0 = d.pw - kw;
                            const int64_t iw_lo = std::max<int64_t>(0, -ow0);
                            const int64_t iw_hi = std::min(d.w, d.ow - ow0);
                            for (int64_t ih = ih_lo; ih < ih_hi; ++ih) {
                                double* grow = gp + ih * d.w;
                                const double* gorow = go + (ih + oh0) * d.ow + ow0;
                                for (int64_t iw = iw_lo; iw < iw_hi; ++iw)
                                    grow[iw] += wv * gorow[iw];
                            }
                        } else {
                            for (int64_t oh = 0; oh < d.oh; ++oh) {
                                const int64_t ih = oh * d.sh + kh - ph;
                                if (ih < 0 || ih >= d.h) continue;
                                for (int64_t ow = 0; ow < d.ow; ++ow) {
                                    const int64_t iw = ow * d.sw + kw - pw;
                                    if (iw < 0 || iw >= d.w) continue;
                                    gp[ih * d.w + iw] += wv * go[oh * d.ow + ow];
                                }
                            }
                        }
                    }
            }
        }
    });
}

inline void conv2d_backward_weight(const Tensor& x, const Tensor& gout, const Conv2dDims& d,
                                   Tensor& gw) {
    gw = Tensor({d.cout, d.cin, d.kh, d.kw});
    parallel_for(d.cout, [&](int64_t b, int64_t e) {
        for (int64_t co = b; co < e; ++co) {
            const double* go = gout.data.data() + co * d.oh * d.ow;
            for (int64_t ci = 0; ci < d.cin; ++ci) {
                const double* xp = x.data.data() + ci * d.h * d.w;
                for (int64_t kh = 0; kh < d.kh; ++kh)
                    for (int64_t kw = 0; kw < d.kw; ++kw) {
                        double acc = 0.0;
                        if (d.sh == 1 && d.sw == 1) {
                            const int64_t ih0 = kh - d.ph;
                            const int64_t oh_lo = std::max<int64_t>(0, -ih0);
                            const int64_t oh_hi = std::min(d.oh, d.h - ih0);
                            const int64_t iw0 = kw - d.pw;
                            const int64_t ow_lo = std::max<int64_t>(0, -iw0);
                            const int64_t ow_hi = std::min(d.ow, d.w - iw0);
                            for (int64_t oh = oh_lo; oh < oh_hi; ++oh) {
                                const double* gorow = go + oh * d.ow;
                                const double* xrow = xp + (oh + ih0) * d.w + iw0;
                                for (int64_t ow = ow_lo; ow < ow_hi; ++ow)
                                    acc += gorow[ow] * xrow[ow];
                            }
                        } else {
                            for (int64_t oh = 0; oh < d.oh; ++oh) {
                                const int64_t ih = oh * d.sh + kh - d.ph;
                                if (ih < 0 || ih >= d.h) continue;
                                for (int64_t ow = 0; ow < d.ow; ++ow) {
                                    const int64_t iw = ow * d.sw + kw - d.pw;
                                    if (iw < 0 || iw >= d.w) continue;
                                    acc += go[oh * d.ow + ow] * xp[ih * d.w + iw];
                                }
                            }
                        }
                        gw.data[((co * d.cin + ci) * d.kh + kh) * d.kw + kw] = acc;
                    }
            }
        }
    });
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// graph nodes
// ---------------------------------------------------------------------------
namespace graph {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // pulls node.grad into parents
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.data.empty()) grad = Tensor(value.shape);
    }
    void accumulate(const Tensor& g) {
        ensure_grad();
        check_same_shape(grad, g, "grad accumulate");
        for (size_t i = 0; i < g.data.size(); ++i) grad.data[i] += g.data[i];
    }
};

inline NodePtr leaf(Tensor v, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

inline NodePtr constant(Tensor v) { return leaf(std::move(v), false); }

inline NodePtr make_node(const char* op, Tensor value, std::vector<NodePtr> parents,
                         std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->value = std::move(value);
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    n->parents = std::move(parents);
    if (rg) n->backward_fn = std::move(bw);
#ifndef NDEBUG
    assert(n->value.all_finite() && "non-finite values produced by graph op");
#endif
    return n;
}

// Reverse topological sweep from a scalar root.
inline void backward(const NodePtr& root) {
    if (!root->value.is_scalar()) throw std::invalid_argument("backward: root must be scalar-valued");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad.data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->requires_grad) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// --------------------------- elementwise / basic ---------------------------

namespace detail {
inline bool scalar_broadcast(const Tensor& a, const Tensor& b) {
    return a.is_scalar() || b.is_scalar();
}
inline void require_compatible(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b) && !scalar_broadcast(a, b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str() + " (only scalar broadcast allowed)");
}
inline void reduce_into(Node& parent, const Tensor& g) {
    if (parent.value.is_scalar() && g.numel() > 1) {
        double acc = 0.0;
        for (double v : g.data) acc += v;
        parent.accumulate(Tensor::scalar(acc));
    } else {
        parent.accumulate(g);
    }
}
}  // namespace detail

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    detail::require_compatible(a->value, b->value, "add");
    const Tensor& big = a->value.numel() >= b->value.numel() ? a->value : b->value;
    Tensor out(big.shape);
    const bool as = a->value.is_scalar(), bs = b->value.is_scalar();
    for (size_t i = 0; i < out.numel(); ++i)
        out.data[i] = a->value.data[as ? 0 : i] + b->value.data[bs ? 0 : i];
    return make_node("add", std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) detail::reduce_into(*n.parents[0], n.grad);
        if (n.parents[1]->requires_grad) detail::reduce_into(*n.parents[1], n.grad);
    });
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
    detail::require_compatible(a->value, b->value, "mul");
    const Tensor& big = a->value.numel() >= b->value.numel() ? a->value : b->value;
    Tensor out(big.shape);
    const bool as = a->value.is_scalar(), bs = b->value.is_scalar();
    for (size_t i = 0; i < out.numel(); ++i)
        out.data[i] = a->value.data[as ? 0 : i] * b->value.data[bs ? 0 : i];
    return make_node("mul", std::move(out), {a, b}, [](Node& n) {
        Node& a = *n.parents[0];
        Node& b = *n.parents[1];
        const bool as = a.value.is_scalar(), bs = b.value.is_scalar();
        if (a.requires_grad) {
            Tensor g(n.grad.shape);
            for (size_t i = 0; i < g.numel(); ++i)
                g.data[i] = n.grad.data[i] * b.value.data[bs ? 0 : i];
            detail::reduce_into(a, g);
        }
        if (b.requires_grad) {
            Tensor g(n.grad.shape);
            for (size_t i = 0; i < g.numel(); ++i)
                g.data[i] = n.grad.data[i] * a.value.data[as ? 0 : i];
            detail::reduce_into(b, g);
        }
    });
}

inline NodePtr div(const NodePtr& a, const NodePtr& b) {
    detail::require_compatible(a->value, b->value, "div");
    const Tensor& big = a->value.numel() >= b->value.numel() ? a->value : b->value;
    Tensor out(big.shape);
    const bool as = a->value.is_scalar(), bs = b->value.is_scalar();
    for (size_t i = 0; i < out.numel(); ++i)
        out.data[i] = a->value.data[as ? 0 : i] / b->value.data[bs ? 0 : i];
    return make_node("div", std::move(out), {a, b}, [](Node& n) {
        Node& a = *n.parents[0];
        Node& b = *n.parents[1];
        const bool as = a.value.is_scalar(), bs = b.value.is_scalar();
        if (a.requires_grad) {
            Tensor g(n.grad.shape);
            for (size_t i = 0; i < g.numel(); ++i)
                g.data[i] = n.grad.data[i] / b.value.data[bs ? 0 : i];
            detail::reduce_into(a, g);
        }
        if (b.requires_grad) {
            Tensor g(n.grad.shape);
            for (size_t i = 0; i < g.numel(); ++i) {
                const double bv = b.value.data[bs ? 0 : i];
                g.data[i] = -n.grad.data[i] * a.value.data[as ? 0 : i] / (bv * bv);
            }
            detail::reduce_into(b, g);
        }
    });
}

template <class Fwd, class Dfn>
inline NodePtr unary_op(const char* name, const NodePtr& x, Fwd fwd, Dfn dfn) {
    Tensor out(x->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] = fwd(x->value.data[i]);
    return make_node(name, std::move(out), {x}, [dfn](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(n.grad.shape);
        for (size_t i = 0; i < g.numel(); ++i)
            g.data[i] = n.grad.data[i] * dfn(p.value.data[i], n.value.data[i]);
        p.accumulate(g);
    });
}

inline NodePtr relu(const NodePtr& x) {
    return unary_op(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });  // subgradient 0 at the kink
}

inline NodePtr sigmoid(const NodePtr& x) {
    return unary_op(
        "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

inline NodePtr tanh_op(const NodePtr& x) {
    return unary_op(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

inline NodePtr abs_op(const NodePtr& x) {
    return unary_op(
        "abs", x, [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline NodePtr neg(const NodePtr& x) {
    return unary_op(
        "neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

// log1p(x / kappa): monotone compression for magnitude inputs
inline NodePtr log_compress(const NodePtr& x, double kappa) {
    return unary_op(
        "log_compress", x, [kappa](double v) { return std::log1p(v / kappa); },
        [kappa](double v, double) { return 1.0 / (kappa + v); });
}

inline NodePtr scale(const NodePtr& x, double c) {
    Tensor out(x->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] = x->value.data[i] * c;
    return make_node("scale", std::move(out), {x}, [c](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(n.grad.shape);
        for (size_t i = 0; i < g.numel(); ++i) g.data[i] = n.grad.data[i] * c;
        p.accumulate(g);
    });
}

// elementwise product with a constant tensor (e.g. the half-band mask)
inline NodePtr mask(const NodePtr& x, const Tensor& m) {
    check_same_shape(x->value, m, "mask");
    Tensor out(x->value.shape);
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] = x->value.data[i] * m.data[i];
    return make_node("mask", std::move(out), {x}, [m](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(n.grad.shape);
        for (size_t i = 0; i < g.numel(); ++i) g.data[i] = n.grad.data[i] * m.data[i];
        p.accumulate(g);
    });
}

inline NodePtr l2_norm(const NodePtr& x) {
    double acc = 0.0;
    for (double v : x->value.data) acc += v * v;
    Tensor out = Tensor::scalar(std::sqrt(acc));
    return make_node("l2_norm", std::move(out), {x}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        const double norm = n.value.data[0];
        const double g0 = n.grad.data[0];
        Tensor g(p.value.shape);
        if (norm > 0.0)
            for (size_t i = 0; i < g.numel(); ++i) g.data[i] = g0 * p.value.data[i] / norm;
        p.accumulate(g);
    });
}

// fixed linear functional: sum_i w_i x_i
inline NodePtr inner(const NodePtr& x, const Tensor& w) {
    check_same_shape(x->value, w, "inner");
    double acc = 0.0;
    for (size_t i = 0; i < w.numel(); ++i) acc += x->value.data[i] * w.data[i];
    return make_node("inner", Tensor::scalar(acc), {x}, [w](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(p.value.shape);
        for (size_t i = 0; i < g.numel(); ++i) g.data[i] = n.grad.data[0] * w.data[i];
        p.accumulate(g);
    });
}

inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + a->value.shape_str() + " vs " +
                                    b->value.shape_str());
    const int64_t m = a->value.dim(0), k = a->value.dim(1), n2 = b->value.dim(1);
    Tensor out({m, n2});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            const double av = a->value.data[i * k + p];
            if (av == 0.0) continue;
            const double* brow = b->value.data.data() + p * n2;
            double* orow = out.data.data() + i * n2;
            for (int64_t j = 0; j < n2; ++j) orow[j] += av * brow[j];
        }
    return make_node("matmul", std::move(out), {a, b}, [m, k, n2](Node& n) {
        Node& a = *n.parents[0];
        Node& b = *n.parents[1];
        if (a.requires_grad) {
            Tensor g({m, k});
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = n.grad.data.data() + i * n2;
                    const double* brow = b.value.data.data() + p * n2;
                    for (int64_t j = 0; j < n2; ++j) acc += grow[j] * brow[j];
                    g.data[i * k + p] = acc;
                }
            a.accumulate(g);
        }
        if (b.requires_grad) {
            Tensor g({k, n2});
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    const double av = a.value.data[i * k + p];
                    if (av == 0.0) continue;
                    const double* grow = n.grad.data.data() + i * n2;
                    double* grow2 = g.data.data() + p * n2;
                    for (int64_t j = 0; j < n2; ++j) grow2[j] += av * grow[j];
                }
            b.accumulate(g);
        }
    });
}

inline NodePtr conv2d(const NodePtr& x, const NodePtr& weight, const NodePtr& bias, int stride_h,
                      int stride_w, int pad_h, int pad_w) {
    Tensor out;
    kernels::conv2d_forward(x->value, weight->value, bias ? &bias->value : nullptr, stride_h,
                            stride_w, pad_h, pad_w, out);
    const auto dims = kernels::conv2d_dims(x->value, weight->value, stride_h, stride_w, pad_h, pad_w);
    std::vector<NodePtr> parents{x, weight};
    if (bias) parents.push_back(bias);
    return make_node("conv2d", std::move(out), std::move(parents), [dims](Node& n) {
        Node& x = *n.parents[0];
        Node& w = *n.parents[1];
        if (x.requires_grad) {
            Tensor gin;
            kernels::conv2d_backward_input(w.value, n.grad, dims, gin);
            x.accumulate(gin);
        }
        if (w.requires_grad) {
            Tensor gw;
            kernels::conv2d_backward_weight(x.value, n.grad, dims, gw);
            w.accumulate(gw);
        }
        if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
            Tensor gb({dims.cout});
            for (int64_t co = 0; co < dims.cout; ++co) {
                double acc = 0.0;
                const double* gp = n.grad.data.data() + co * dims.oh * dims.ow;
                for (int64_t i = 0; i < dims.oh * dims.ow; ++i) acc += gp[i];
                gb.data[co] = acc;
            }
            n.parents[2]->accumulate(gb);
        }
    });
}

inline NodePtr concat(const std::vector<NodePtr>& xs, int axis) {
    if (xs.empty()) throw std::invalid_argument("concat: empty input list");
    const size_t rank = xs[0]->value.rank();
    if (axis < 0 || static_cast<size_t>(axis) >= rank)
        throw std::invalid_argument("concat: bad axis");
    std::vector<int64_t> shape = xs[0]->value.shape;
    int64_t total = 0;
    for (const auto& x : xs) {
        if (x->value.rank() != rank) throw std::invalid_argument("concat: rank mismatch");
        for (size_t i = 0; i < rank; ++i)
            if (static_cast<int>(i) != axis && x->value.shape[i] != shape[i])
                throw std::invalid_argument("concat: shape mismatch " + x->value.shape_str());
        total += x->value.shape[axis];
    }
    shape[axis] = total;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[i];
    for (size_t i = axis + 1; i < rank; ++i) inner *= shape[i];

    Tensor out(shape);
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (const auto& x : xs) {
        offsets.push_back(off);
        const int64_t ax = x->value.shape[axis];
        for (int64_t o = 0; o < outer; ++o)
            std::copy_n(x->value.data.begin() + o * ax * inner, ax * inner,
                        out.data.begin() + (o * total + off) * inner);
        off += ax;
    }
    return make_node("concat", std::move(out), xs,
                     [outer, inner, total, offsets](Node& n) {
                         for (size_t pi = 0; pi < n.parents.size(); ++pi) {
                             Node& p = *n.parents[pi];
                             if (!p.requires_grad) continue;
                             const int64_t ax = p.value.shape.empty() ? 1 : p.value.numel() / (outer * inner);
                             Tensor g(p.value.shape);
                             for (int64_t o = 0; o < outer; ++o)
                                 std::copy_n(n.grad.data.begin() + (o * total + offsets[pi]) * inner,
                                             ax * inner, g.data.begin() + o * ax * inner);
                             p.accumulate(g);
                         }
                     });
}

inline NodePtr softmax(const NodePtr& x, int axis) {
    if (x->value.rank() != 2) throw std::invalid_argument("softmax: rank-2 input required");
    const int64_t rows = x->value.dim(0), cols = x->value.dim(1);
    if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: bad axis");
    Tensor out(x->value.shape);
    const int64_t n_groups = axis == 0 ? cols : rows;
    const int64_t glen = axis == 0 ? rows : cols;
    auto idx = [axis, cols](int64_t group, int64_t i) {
        return axis == 0 ? i * cols + group : group * cols + i;
    };
    for (int64_t g = 0; g < n_groups; ++g) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t i = 0; i < glen; ++i) mx = std::max(mx, x->value.data[idx(g, i)]);
        double denom = 0.0;
        for (int64_t i = 0; i < glen; ++i) denom += std::exp(x->value.data[idx(g, i)] - mx);
        for (int64_t i = 0; i < glen; ++i)
            out.data[idx(g, i)] = std::exp(x->value.data[idx(g, i)] - mx) / denom;
    }
    return make_node("softmax", std::move(out), {x}, [axis, n_groups, glen, idx](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(p.value.shape);
        for (int64_t gr = 0; gr < n_groups; ++gr) {
            double dot = 0.0;
            for (int64_t i = 0; i < glen; ++i)
                dot += n.grad.data[idx(gr, i)] * n.value.data[idx(gr, i)];
            for (int64_t i = 0; i < glen; ++i)
                g.data[idx(gr, i)] =
                    n.value.data[idx(gr, i)] * (n.grad.data[idx(gr, i)] - dot);
        }
        p.accumulate(g);
    });
}

// rows of a (R x C) table selected by index; gradient scatters back additively
inline NodePtr gather_rows(const NodePtr& table, const std::vector<int>& indices) {
    if (table->value.rank() != 2) throw std::invalid_argument("gather_rows: table must be rank 2");
    const int64_t rows = table->value.dim(0), cols = table->value.dim(1);
    for (int id : indices)
        if (id < 0 || id >= rows)
            throw std::invalid_argument("gather_rows: index " + std::to_string(id) +
                                        " out of range [0," + std::to_string(rows) + ")");
    Tensor out({static_cast<int64_t>(indices.size()), cols});
    for (size_t i = 0; i < indices.size(); ++i)
        std::copy_n(table->value.data.begin() + indices[i] * cols, cols,
                    out.data.begin() + i * cols);
    return make_node("gather_rows", std::move(out), {table}, [indices, cols](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(p.value.shape);
        for (size_t i = 0; i < indices.size(); ++i) {
            const double* src = n.grad.data.data() + i * cols;
            double* dst = g.data.data() + indices[i] * cols;
            for (int64_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
        p.accumulate(g);
    });
}

// time-axis gather on (C,F,T): frame drop/duplicate for training jitter
inline NodePtr gather_time(const NodePtr& x, const std::vector<int>& frame_map) {
    if (x->value.rank() != 3) throw std::invalid_argument("gather_time: rank-3 input required");
    const int64_t C = x->value.dim(0), F = x->value.dim(1), T = x->value.dim(2);
    for (int t : frame_map)
        if (t < 0 || t >= T) throw std::invalid_argument("gather_time: frame index out of range");
    const int64_t T2 = static_cast<int64_t>(frame_map.size());
    Tensor out({C, F, T2});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t f = 0; f < F; ++f) {
            const double* src = x->value.data.data() + (c * F + f) * T;
            double* dst = out.data.data() + (c * F + f) * T2;
            for (int64_t t = 0; t < T2; ++t) dst[t] = src[frame_map[t]];
        }
    return make_node("gather_time", std::move(out), {x}, [frame_map, C, F, T, T2](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(p.value.shape);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t f = 0; f < F; ++f) {
                const double* src = n.grad.data.data() + (c * F + f) * T2;
                double* dst = g.data.data() + (c * F + f) * T;
                for (int64_t t = 0; t < T2; ++t) dst[frame_map[t]] += src[t];
            }
        p.accumulate(g);
    });
}

inline NodePtr reshape(const NodePtr& x, std::vector<int64_t> new_shape) {
    if (Tensor::numel_of(new_shape) != x->value.numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(new_shape);
    out.data = x->value.data;
    return make_node("reshape", std::move(out), {x}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(p.value.shape);
        g.data = n.grad.data;
        p.accumulate(g);
    });
}

inline NodePtr transpose2d(const NodePtr& x) {
    if (x->value.rank() != 2) throw std::invalid_argument("transpose2d: rank-2 input required");
    const int64_t r = x->value.dim(0), c = x->value.dim(1);
    Tensor out({c, r});
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) out.data[j * r + i] = x->value.data[i * c + j];
    return make_node("transpose2d", std::move(out), {x}, [r, c](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g({r, c});
        for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < c; ++j) g.data[i * c + j] = n.grad.data[j * r + i];
        p.accumulate(g);
    });
}

// keep frequency rows [f0, f1) of (C,F,T)
inline NodePtr slice_freq(const NodePtr& x, int64_t f0, int64_t f1) {
    if (x->value.rank() != 3) throw std::invalid_argument("slice_freq: rank-3 input required");
    const int64_t C = x->value.dim(0), F = x->value.dim(1), T = x->value.dim(2);
    if (f0 < 0 || f1 > F || f0 >= f1) throw std::invalid_argument("slice_freq: bad range");
    Tensor out({C, f1 - f0, T});
    for (int64_t c = 0; c < C; ++c)
        std::copy_n(x->value.data.begin() + (c * F + f0) * T, (f1 - f0) * T,
                    out.data.begin() + c * (f1 - f0) * T);
    return make_node("slice_freq", std::move(out), {x}, [C, F, T, f0, f1](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(p.value.shape);
        for (int64_t c = 0; c < C; ++c)
            std::copy_n(n.grad.data.begin() + c * (f1 - f0) * T, (f1 - f0) * T,
                        g.data.begin() + (c * F + f0) * T);
        p.accumulate(g);
    });
}

// mean over the frequency axis of (C,F,T) -> (C,T)
inline NodePtr mean_freq(const NodePtr& x) {
    if (x->value.rank() != 3) throw std::invalid_argument("mean_freq: rank-3 input required");
    const int64_t C = x->value.dim(0), F = x->value.dim(1), T = x->value.dim(2);
    Tensor out({C, T});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t f = 0; f < F; ++f) {
            const double* src = x->value.data.data() + (c * F + f) * T;
            double* dst = out.data.data() + c * T;
            for (int64_t t = 0; t < T; ++t) dst[t] += src[t];
        }
    const double inv = 1.0 / static_cast<double>(F);
    for (double& v : out.data) v *= inv;
    return make_node("mean_freq", std::move(out), {x}, [C, F, T, inv](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor g(p.value.shape);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t f = 0; f < F; ++f) {
                double* dst = g.data.data() + (c * F + f) * T;
                const double* src = n.grad.data.data() + c * T;
                for (int64_t t = 0; t < T; ++t) dst[t] = src[t] * inv;
            }
        p.accumulate(g);
    });
}

// mean over frames of -log softmax(logits)[target]; logits (S,T)
inline NodePtr cross_entropy(const NodePtr& logits, const std::vector<int>& targets) {
    if (logits->value.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be rank 2");
    const int64_t S = logits->value.dim(0), T = logits->value.dim(1);
    if (static_cast<int64_t>(targets.size()) != T)
        throw std::invalid_argument("cross_entropy: target length mismatch");
    for (int t : targets)
        if (t < 0 || t >= S)
            throw std::invalid_argument("cross_entropy: target id " + std::to_string(t) +
                                        " out of range [0," + std::to_string(S) + ")");
    double loss = 0.0;
    for (int64_t t = 0; t < T; ++t) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t s = 0; s < S; ++s) mx = std::max(mx, logits->value.data[s * T + t]);
        double denom = 0.0;
        for (int64_t s = 0; s < S; ++s) denom += std::exp(logits->value.data[s * T + t] - mx);
        loss += mx + std::log(denom) - logits->value.data[targets[t] * T + t];
    }
    loss /= static_cast<double>(T);
    return make_node("cross_entropy", Tensor::scalar(loss), {logits}, [targets, S, T](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        const double g0 = n.grad.data[0] / static_cast<double>(T);
        Tensor g(p.value.shape);
        for (int64_t t = 0; t < T; ++t) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t s = 0; s < S; ++s) mx = std::max(mx, p.value.data[s * T + t]);
            double denom = 0.0;
            for (int64_t s = 0; s < S; ++s) denom += std::exp(p.value.data[s * T + t] - mx);
            for (int64_t s = 0; s < S; ++s) {
                const double soft = std::exp(p.value.data[s * T + t] - mx) / denom;
                g.data[s * T + t] = g0 * (soft - (targets[t] == s ? 1.0 : 0.0));
            }
        }
        p.accumulate(g);
    });
}

// Forward applies an opaque same-shape transform; backward is the identity.
inline NodePtr straight_through(const NodePtr& x,
                                const std::function<Tensor(const Tensor&)>& transform) {
    Tensor out = transform(x->value);
    if (!out.same_shape(x->value))
        throw std::invalid_argument("straight-through requires shape preservation");
    return make_node("straight_through", std::move(out), {x}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.accumulate(n.grad);
    });
}

}  // namespace graph
}  // namespace smwm

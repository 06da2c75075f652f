// Reverse-mode autodiff over dense tensors. Define-by-run graph of
// shared_ptr nodes; backward closures accumulate into parent grads.
// Every kernel parallelizes over output elements only (gather style), so
// results are bit-identical for any thread count.
#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "duolift/core.hpp"

namespace duolift::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;                 // lazily allocated, zero-initialized
    bool requires_grad = false;  // leaf flag (parameters, probed inputs)
    bool needs_grad = false;     // participates in backprop
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    const Shape& shape() const { return value.shape(); }
    int64_t size() const { return value.size(); }

    void ensure_grad() {
        if (!grad.same_shape(value)) grad = Tensor(value.shape(), 0.0);
    }
    void zero_grad() {
        if (grad.same_shape(value)) grad.fill(0.0);
    }
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

/// Leaf that accumulates gradient (parameter or probed input).
inline Var leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    n->needs_grad = true;
    return n;
}

inline Var detach(const Var& v) { return constant(v->value); }

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const Var& p : parents)
        if (p->needs_grad) n->needs_grad = true;
    if (n->needs_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
    }
    return n;
}

}  // namespace detail

/// Runs backprop from a scalar root (seed gradient 1).
inline void backward(const Var& root) {
    DUOLIFT_CHECK(root->size() == 1, "backward: root must be scalar, got " << shape_str(root->shape()));
    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            for (const Var& p : n->parents)
                if (p->needs_grad) p->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// ---- elementwise ----

inline Var add(const Var& a, const Var& b) {
    DUOLIFT_CHECK(a->value.same_shape(b->value), "add: shape mismatch "
                  << shape_str(a->shape()) << " vs " << shape_str(b->shape()));
    Tensor out = a->value;
    out += b->value;
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->needs_grad)
            for (int64_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
        if (b->needs_grad)
            for (int64_t i = 0; i < self.size(); ++i) b->grad[i] += self.grad[i];
    });
}

inline Var sub(const Var& a, const Var& b) {
    DUOLIFT_CHECK(a->value.same_shape(b->value), "sub: shape mismatch "
                  << shape_str(a->shape()) << " vs " << shape_str(b->shape()));
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->needs_grad)
            for (int64_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
        if (b->needs_grad)
            for (int64_t i = 0; i < self.size(); ++i) b->grad[i] -= self.grad[i];
    });
}

inline Var mul(const Var& a, const Var& b) {
    DUOLIFT_CHECK(a->value.same_shape(b->value), "mul: shape mismatch "
                  << shape_str(a->shape()) << " vs " << shape_str(b->shape()));
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return detail::make_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a->needs_grad)
            for (int64_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i] * b->value[i];
        if (b->needs_grad)
            for (int64_t i = 0; i < self.size(); ++i) b->grad[i] += self.grad[i] * a->value[i];
    });
}

inline Var scale(const Var& a, real k) {
    Tensor out = a->value;
    out *= k;
    return detail::make_op(std::move(out), {a}, [a, k](Node& self) {
        for (int64_t i = 0; i < self.size(); ++i) a->grad[i] += k * self.grad[i];
    });
}

inline Var square(const Var& a) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= out[i];
    return detail::make_op(std::move(out), {a}, [a](Node& self) {
        for (int64_t i = 0; i < self.size(); ++i) a->grad[i] += 2.0 * a->value[i] * self.grad[i];
    });
}

inline Var absval(const Var& a) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
    return detail::make_op(std::move(out), {a}, [a](Node& self) {
        for (int64_t i = 0; i < self.size(); ++i) {
            real s = a->value[i] > 0 ? 1.0 : (a->value[i] < 0 ? -1.0 : 0.0);
            a->grad[i] += s * self.grad[i];
        }
    });
}

inline Var relu(const Var& a) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], real(0));
    return detail::make_op(std::move(out), {a}, [a](Node& self) {
        for (int64_t i = 0; i < self.size(); ++i)
            if (a->value[i] > 0) a->grad[i] += self.grad[i];
    });
}

inline Var leaky_relu(const Var& a, real slope = 0.2) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i)
        if (out[i] < 0) out[i] *= slope;
    return detail::make_op(std::move(out), {a}, [a, slope](Node& self) {
        for (int64_t i = 0; i < self.size(); ++i)
            a->grad[i] += (a->value[i] > 0 ? 1.0 : slope) * self.grad[i];
    });
}

inline Var sigmoid(const Var& a) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    auto n = detail::make_op(std::move(out), {a}, nullptr);
    if (n->needs_grad) {
        Node* raw = n.get();
        n->backward_fn = [a, raw](Node& self) {
            for (int64_t i = 0; i < self.size(); ++i) {
                real y = raw->value[i];
                a->grad[i] += y * (1.0 - y) * self.grad[i];
            }
        };
    }
    return n;
}

inline Var log_of(const Var& a) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) {
        DUOLIFT_CHECK(out[i] > 0.0, "log: non-positive input " << out[i]);
        out[i] = std::log(out[i]);
    }
    return detail::make_op(std::move(out), {a}, [a](Node& self) {
        for (int64_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i] / a->value[i];
    });
}

/// Clamp with pass-through gradient strictly inside [lo,hi], zero outside.
inline Var clamp(const Var& a, real lo, real hi) {
    Tensor out = a->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lo, hi);
    return detail::make_op(std::move(out), {a}, [a, lo, hi](Node& self) {
        for (int64_t i = 0; i < self.size(); ++i)
            if (a->value[i] > lo && a->value[i] < hi) a->grad[i] += self.grad[i];
    });
}

// ---- reductions ----

inline Var sum(const Var& a) {
    Tensor out = Tensor::scalar(a->value.sum());
    return detail::make_op(std::move(out), {a}, [a](Node& self) {
        real g = self.grad[0];
        for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += g;
    });
}

inline Var mean(const Var& a) {
    DUOLIFT_CHECK(a->size() > 0, "mean: empty tensor");
    Tensor out = Tensor::scalar(a->value.mean());
    int64_t n = a->size();
    return detail::make_op(std::move(out), {a}, [a, n](Node& self) {
        real g = self.grad[0] / static_cast<real>(n);
        for (int64_t i = 0; i < a->size(); ++i) a->grad[i] += g;
    });
}

// ---- structure ----

inline Var reshape(const Var& a, Shape s) {
    Tensor out = a->value.reshaped(std::move(s));
    return detail::make_op(std::move(out), {a}, [a](Node& self) {
        for (int64_t i = 0; i < self.size(); ++i) a->grad[i] += self.grad[i];
    });
}

/// Concatenation along axis 0 (the channel axis for feature maps).
inline Var concat_ch(const std::vector<Var>& parts) {
    DUOLIFT_CHECK(!parts.empty(), "concat_ch: no inputs");
    Shape s = parts[0]->shape();
    int64_t inner = shape_numel(s) / s[0];
    int total_c = 0;
    for (const Var& p : parts) {
        DUOLIFT_CHECK(p->shape().size() == s.size(), "concat_ch: rank mismatch");
        for (size_t i = 1; i < s.size(); ++i)
            DUOLIFT_CHECK(p->shape()[i] == s[i], "concat_ch: spatial mismatch "
                          << shape_str(p->shape()) << " vs " << shape_str(s));
        total_c += p->shape()[0];
    }
    Shape out_shape = s;
    out_shape[0] = total_c;
    Tensor out(out_shape);
    int64_t off = 0;
    for (const Var& p : parts) {
        std::copy(p->value.data(), p->value.data() + p->size(), out.data() + off);
        off += p->size();
    }
    std::vector<Var> parents = parts;
    return detail::make_op(std::move(out), parents, [parents, inner](Node& self) {
        (void)inner;
        int64_t off2 = 0;
        for (const Var& p : parents) {
            if (p->needs_grad)
                for (int64_t i = 0; i < p->size(); ++i) p->grad[i] += self.grad[off2 + i];
            off2 += p->size();
        }
    });
}

/// Channels [c0, c1) of a feature map.
inline Var slice_ch(const Var& a, int c0, int c1) {
    const Shape& s = a->shape();
    DUOLIFT_CHECK(!s.empty() && c0 >= 0 && c1 > c0 && c1 <= s[0],
                  "slice_ch: bad range [" << c0 << "," << c1 << ") for " << shape_str(s));
    int64_t inner = shape_numel(s) / s[0];
    Shape out_shape = s;
    out_shape[0] = c1 - c0;
    Tensor out(out_shape);
    std::copy(a->value.data() + c0 * inner, a->value.data() + c1 * inner, out.data());
    return detail::make_op(std::move(out), {a}, [a, c0, inner](Node& self) {
        int64_t base = c0 * inner;
        for (int64_t i = 0; i < self.size(); ++i) a->grad[base + i] += self.grad[i];
    });
}

/// Permutation of the three spatial axes of a [C,D,H,W] map.
/// perm[i] names which input spatial axis (0=D,1=H,2=W) lands on output axis i.
inline Var permute_spatial(const Var& a, std::array<int, 3> perm) {
    const Shape& s = a->shape();
    DUOLIFT_CHECK(s.size() == 4, "permute_spatial: expected rank 4, got " << shape_str(s));
    int in_sp[3] = {s[1], s[2], s[3]};
    Shape out_shape{s[0], in_sp[perm[0]], in_sp[perm[1]], in_sp[perm[2]]};
    Tensor out(out_shape);
    const int C = s[0];
    int64_t in_stride[3] = {int64_t(s[2]) * s[3], s[3], 1};
    const int o0 = out_shape[1], o1 = out_shape[2], o2 = out_shape[3];
    parallel_for(int64_t(C) * o0, [&](int64_t ci) {
        int i = static_cast<int>(ci % o0);
        int c = static_cast<int>(ci / o0);
        int64_t cbase_in = int64_t(c) * s[1] * s[2] * s[3];
        int64_t cbase_out = int64_t(c) * o0 * o1 * o2 + int64_t(i) * o1 * o2;
        for (int j = 0; j < o1; ++j)
            for (int k = 0; k < o2; ++k) {
                int64_t src = cbase_in + i * in_stride[perm[0]] + j * in_stride[perm[1]] + k * in_stride[perm[2]];
                out[cbase_out + int64_t(j) * o2 + k] = a->value[src];
            }
    });
    return detail::make_op(std::move(out), {a}, [a, perm, s, o0, o1, o2, in_stride](Node& self) {
        const int C = s[0];
        for (int c = 0; c < C; ++c) {
            int64_t cbase_in = int64_t(c) * s[1] * s[2] * s[3];
            int64_t cbase_out = int64_t(c) * o0 * o1 * o2;
            for (int i = 0; i < o0; ++i)
                for (int j = 0; j < o1; ++j)
                    for (int k = 0; k < o2; ++k) {
                        int64_t src = cbase_in + i * in_stride[perm[0]] + j * in_stride[perm[1]] + k * in_stride[perm[2]];
                        a->grad[src] += self.grad[cbase_out + (int64_t(i) * o1 + j) * o2 + k];
                    }
        }
    });
}

// ---- lifting ----

/// Replicates a 2D map [C,H,W] along a new depth axis -> [C,repeats,H,W].
inline Var lift_frontal(const Var& a, int repeats) {
    DUOLIFT_CHECK(repeats >= 1, "lift: repeats must be >= 1, got " << repeats);
    const Shape& s = a->shape();
    DUOLIFT_CHECK(s.size() == 3, "lift_frontal: expected rank 3, got " << shape_str(s));
    const int C = s[0], H = s[1], W = s[2];
    Tensor out(Shape{C, repeats, H, W});
    int64_t plane = int64_t(H) * W;
    parallel_for(int64_t(C) * repeats, [&](int64_t cd) {
        int c = static_cast<int>(cd / repeats);
        std::copy(a->value.data() + c * plane, a->value.data() + (c + 1) * plane,
                  out.data() + cd * plane);
    });
    return detail::make_op(std::move(out), {a}, [a, repeats, plane, C](Node& self) {
        (void)C;
        for (int64_t c = 0; c < a->shape()[0]; ++c)
            for (int d = 0; d < repeats; ++d) {
                const real* g = self.grad.data() + (c * repeats + d) * plane;
                real* dst = a->grad.data() + c * plane;
                for (int64_t i = 0; i < plane; ++i) dst[i] += g[i];
            }
    });
}

/// Replicates a 2D map [C,H,Dcols] along a new width axis, reinterpreting the
/// 2D columns as depth -> [C,Dcols,H,repeats]. out[c,d,h,w] = in[c,h,d].
inline Var lift_lateral(const Var& a, int repeats) {
    DUOLIFT_CHECK(repeats >= 1, "lift: repeats must be >= 1, got " << repeats);
    const Shape& s = a->shape();
    DUOLIFT_CHECK(s.size() == 3, "lift_lateral: expected rank 3, got " << shape_str(s));
    const int C = s[0], H = s[1], D = s[2];
    Tensor out(Shape{C, D, H, repeats});
    parallel_for(int64_t(C) * D, [&](int64_t cd) {
        int d = static_cast<int>(cd % D);
        int c = static_cast<int>(cd / D);
        for (int h = 0; h < H; ++h) {
            real v = a->value[(int64_t(c) * H + h) * D + d];
            real* row = out.data() + ((cd * H) + h) * repeats;
            for (int w = 0; w < repeats; ++w) row[w] = v;
        }
    });
    return detail::make_op(std::move(out), {a}, [a, repeats, C, H, D](Node& self) {
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int d = 0; d < D; ++d) {
                    const real* g = self.grad.data() + ((int64_t(c) * D + d) * H + h) * repeats;
                    real acc = 0;
                    for (int w = 0; w < repeats; ++w) acc += g[w];
                    a->grad[(int64_t(c) * H + h) * D + d] += acc;
                }
    });
}

// ---- convolution ----

namespace detail {

inline int conv_out_dim(int in, int k, int s, int p) {
    int out = (in + 2 * p - k) / s + 1;
    DUOLIFT_CHECK(out >= 1, "conv: output dim < 1 (in=" << in << " k=" << k << " s=" << s << " p=" << p << ")");
    return out;
}

}  // namespace detail

/// 3D convolution. x: [Cin,D,H,W], w: [Cout,Cin,kd,kh,kw], b: [Cout] or null.
inline Var conv3d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 0) {
    const Shape& xs = x->shape();
    const Shape& ws = w->shape();
    DUOLIFT_CHECK(xs.size() == 4 && ws.size() == 5, "conv3d: bad ranks "
                  << shape_str(xs) << ", " << shape_str(ws));
    DUOLIFT_CHECK(xs[0] == ws[1], "conv3d: channel mismatch x " << shape_str(xs) << " w " << shape_str(ws));
    const int Cin = xs[0], D = xs[1], H = xs[2], W = xs[3];
    const int Cout = ws[0], K = ws[2];
    DUOLIFT_CHECK(ws[3] == K && ws[4] == K, "conv3d: kernel must be cubic, got " << shape_str(ws));
    if (b) DUOLIFT_CHECK(b->shape() == Shape{Cout}, "conv3d: bias shape " << shape_str(b->shape()));
    const int OD = detail::conv_out_dim(D, K, stride, pad);
    const int OH = detail::conv_out_dim(H, K, stride, pad);
    const int OW = detail::conv_out_dim(W, K, stride, pad);

    Tensor out(Shape{Cout, OD, OH, OW});
    const real* xp = x->value.data();
    const real* wp = w->value.data();
    parallel_for(int64_t(Cout) * OD, [&](int64_t idx) {
        const int od = static_cast<int>(idx % OD);
        const int oc = static_cast<int>(idx / OD);
        const real bias = b ? b->value[oc] : 0.0;
        for (int oh = 0; oh < OH; ++oh) {
            real* orow = out.data() + ((int64_t(oc) * OD + od) * OH + oh) * OW;
            for (int ow = 0; ow < OW; ++ow) orow[ow] = bias;
            for (int ic = 0; ic < Cin; ++ic)
                for (int kd = 0; kd < K; ++kd) {
                    const int id = od * stride - pad + kd;
                    if (id < 0 || id >= D) continue;
                    for (int kh = 0; kh < K; ++kh) {
                        const int ih = oh * stride - pad + kh;
                        if (ih < 0 || ih >= H) continue;
                        const real* xrow = xp + ((int64_t(ic) * D + id) * H + ih) * W;
                        const real* wrow = wp + (((int64_t(oc) * Cin + ic) * K + kd) * K + kh) * K;
                        for (int kw = 0; kw < K; ++kw) {
                            const real wv = wrow[kw];
                            if (stride == 1) {
                                const int lo = std::max(0, pad - kw);
                                const int hi = std::min(OW, W + pad - kw);
                                const real* xr = xrow + lo - pad + kw;
                                for (int ow = lo; ow < hi; ++ow) orow[ow] += wv * xr[ow - lo];
                            } else {
                                for (int ow = 0; ow < OW; ++ow) {
                                    const int iw = ow * stride - pad + kw;
                                    if (iw >= 0 && iw < W) orow[ow] += wv * xrow[iw];
                                }
                            }
                        }
                    }
                }
        }
    });

    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return detail::make_op(std::move(out), parents,
                           [x, w, b, Cin, D, H, W, Cout, K, OD, OH, OW, stride, pad](Node& self) {
        const real* gp = self.grad.data();
        const real* xp = x->value.data();
        const real* wp = w->value.data();
        if (x->needs_grad) {
            real* dxp = x->grad.data();
            parallel_for(int64_t(Cin) * D, [&](int64_t idx) {
                const int id = static_cast<int>(idx % D);
                const int ic = static_cast<int>(idx / D);
                for (int oc = 0; oc < Cout; ++oc)
                    for (int kd = 0; kd < K; ++kd) {
                        const int t_d = id + pad - kd;
                        if (t_d < 0 || t_d % stride != 0) continue;
                        const int od = t_d / stride;
                        if (od >= OD) continue;
                        for (int kh = 0; kh < K; ++kh) {
                            const real* wrow = wp + (((int64_t(oc) * Cin + ic) * K + kd) * K + kh) * K;
                            for (int ih = 0; ih < H; ++ih) {
                                const int t_h = ih + pad - kh;
                                if (t_h < 0 || t_h % stride != 0) continue;
                                const int oh = t_h / stride;
                                if (oh >= OH) continue;
                                const real* grow = gp + ((int64_t(oc) * OD + od) * OH + oh) * OW;
                                real* dxrow = dxp + ((int64_t(ic) * D + id) * H + ih) * W;
                                for (int kw = 0; kw < K; ++kw) {
                                    const real wv = wrow[kw];
                                    if (stride == 1) {
                                        const int lo = std::max(0, pad - kw);
                                        const int hi = std::min(OW, W + pad - kw);
                                        real* dxr = dxrow + lo - pad + kw;
                                        for (int ow = lo; ow < hi; ++ow) dxr[ow - lo] += wv * grow[ow];
                                    } else {
                                        for (int ow = 0; ow < OW; ++ow) {
                                            const int iw = ow * stride - pad + kw;
                                            if (iw >= 0 && iw < W) dxrow[iw] += wv * grow[ow];
                                        }
                                    }
                                }
                            }
                        }
                    }
            });
        }
        if (w->needs_grad) {
            real* dwp = w->grad.data();
            parallel_for(int64_t(Cout) * Cin, [&](int64_t idx) {
                const int ic = static_cast<int>(idx % Cin);
                const int oc = static_cast<int>(idx / Cin);
                for (int kd = 0; kd < K; ++kd)
                    for (int kh = 0; kh < K; ++kh)
                        for (int kw = 0; kw < K; ++kw) {
                            real acc = 0;
                            for (int od = 0; od < OD; ++od) {
                                const int id = od * stride - pad + kd;
                                if (id < 0 || id >= D) continue;
                                for (int oh = 0; oh < OH; ++oh) {
                                    const int ih = oh * stride - pad + kh;
                                    if (ih < 0 || ih >= H) continue;
                                    const real* grow = gp + ((int64_t(oc) * OD + od) * OH + oh) * OW;
                                    const real* xrow = xp + ((int64_t(ic) * D + id) * H + ih) * W;
                                    if (stride == 1) {
                                        const int lo = std::max(0, pad - kw);
                                        const int hi = std::min(OW, W + pad - kw);
                                        const real* xr = xrow + lo - pad + kw;
                                        for (int ow = lo; ow < hi; ++ow) acc += grow[ow] * xr[ow - lo];
                                    } else {
                                        for (int ow = 0; ow < OW; ++ow) {
                                            const int iw = ow * stride - pad + kw;
                                            if (iw >= 0 && iw < W) acc += grow[ow] * xrow[iw];
                                        }
                                    }
                                }
                            }
                            dwp[(((int64_t(oc) * Cin + ic) * K + kd) * K + kh) * K + kw] += acc;
                        }
            });
        }
        if (b && b->needs_grad) {
            parallel_for(Cout, [&](int64_t oc) {
                real acc = 0;
                const real* g = gp + oc * OD * OH * OW;
                for (int64_t i = 0; i < int64_t(OD) * OH * OW; ++i) acc += g[i];
                b->grad[oc] += acc;
            });
        }
    });
}

/// 2D convolution. x: [Cin,H,W], w: [Cout,Cin,k,k], b: [Cout] or null.
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride = 1, int pad = 0) {
    const Shape& xs = x->shape();
    const Shape& ws = w->shape();
    DUOLIFT_CHECK(xs.size() == 3 && ws.size() == 4, "conv2d: bad ranks "
                  << shape_str(xs) << ", " << shape_str(ws));
    DUOLIFT_CHECK(xs[0] == ws[1], "conv2d: channel mismatch x " << shape_str(xs) << " w " << shape_str(ws));
    const int Cin = xs[0], H = xs[1], W = xs[2];
    const int Cout = ws[0], K = ws[2];
    DUOLIFT_CHECK(ws[3] == K, "conv2d: kernel must be square, got " << shape_str(ws));
    if (b) DUOLIFT_CHECK(b->shape() == Shape{Cout}, "conv2d: bias shape " << shape_str(b->shape()));
    const int OH = detail::conv_out_dim(H, K, stride, pad);
    const int OW = detail::conv_out_dim(W, K, stride, pad);

    Tensor out(Shape{Cout, OH, OW});
    const real* xp = x->value.data();
    const real* wp = w->value.data();
    parallel_for(int64_t(Cout) * OH, [&](int64_t idx) {
        const int oh = static_cast<int>(idx % OH);
        const int oc = static_cast<int>(idx / OH);
        real* orow = out.data() + (int64_t(oc) * OH + oh) * OW;
        for (int ow = 0; ow < OW; ++ow) orow[ow] = b ? b->value[oc] : 0.0;
        for (int ic = 0; ic < Cin; ++ic)
            for (int kh = 0; kh < K; ++kh) {
                const int ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                const real* xrow = xp + (int64_t(ic) * H + ih) * W;
                const real* wrow = wp + ((int64_t(oc) * Cin + ic) * K + kh) * K;
                for (int kw = 0; kw < K; ++kw) {
                    const real wv = wrow[kw];
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < W) orow[ow] += wv * xrow[iw];
                    }
                }
            }
    });

    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return detail::make_op(std::move(out), parents,
                           [x, w, b, Cin, H, W, Cout, K, OH, OW, stride, pad](Node& self) {
        const real* gp = self.grad.data();
        const real* xp = x->value.data();
        const real* wp = w->value.data();
        if (x->needs_grad) {
            real* dxp = x->grad.data();
            parallel_for(int64_t(Cin) * H, [&](int64_t idx) {
                const int ih = static_cast<int>(idx % H);
                const int ic = static_cast<int>(idx / H);
                real* dxrow = dxp + (int64_t(ic) * H + ih) * W;
                for (int oc = 0; oc < Cout; ++oc)
                    for (int kh = 0; kh < K; ++kh) {
                        const int t_h = ih + pad - kh;
                        if (t_h < 0 || t_h % stride != 0) continue;
                        const int oh = t_h / stride;
                        if (oh >= OH) continue;
                        const real* grow = gp + (int64_t(oc) * OH + oh) * OW;
                        const real* wrow = wp + ((int64_t(oc) * Cin + ic) * K + kh) * K;
                        for (int kw = 0; kw < K; ++kw) {
                            const real wv = wrow[kw];
                            for (int ow = 0; ow < OW; ++ow) {
                                const int iw = ow * stride - pad + kw;
                                if (iw >= 0 && iw < W) dxrow[iw] += wv * grow[ow];
                            }
                        }
                    }
            });
        }
        if (w->needs_grad) {
            real* dwp = w->grad.data();
            parallel_for(int64_t(Cout) * Cin, [&](int64_t idx) {
                const int ic = static_cast<int>(idx % Cin);
                const int oc = static_cast<int>(idx / Cin);
                for (int kh = 0; kh < K; ++kh)
                    for (int kw = 0; kw < K; ++kw) {
                        real acc = 0;
                        for (int oh = 0; oh < OH; ++oh) {
                            const int ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= H) continue;
                            const real* grow = gp + (int64_t(oc) * OH + oh) * OW;
                            const real* xrow = xp + (int64_t(ic) * H + ih) * W;
                            for (int ow = 0; ow < OW; ++ow) {
                                const int iw = ow * stride - pad + kw;
                                if (iw >= 0 && iw < W) acc += grow[ow] * xrow[iw];
                            }
                        }
                        dwp[((int64_t(oc) * Cin + ic) * K + kh) * K + kw] += acc;
                    }
            });
        }
        if (b && b->needs_grad) {
            for (int oc = 0; oc < Cout; ++oc) {
                real acc = 0;
                const real* g = gp + int64_t(oc) * OH * OW;
                for (int64_t i = 0; i < int64_t(OH) * OW; ++i) acc += g[i];
                b->grad[oc] += acc;
            }
        }
    });
}

/// Average pooling over [C,D,H,W]; divisor is the full k^3 window (padding
/// counts as zeros).
inline Var avgpool3d(const Var& x, int k, int stride, int pad) {
    const Shape& xs = x->shape();
    DUOLIFT_CHECK(xs.size() == 4, "avgpool3d: expected rank 4, got " << shape_str(xs));
    const int C = xs[0], D = xs[1], H = xs[2], W = xs[3];
    const int OD = detail::conv_out_dim(D, k, stride, pad);
    const int OH = detail::conv_out_dim(H, k, stride, pad);
    const int OW = detail::conv_out_dim(W, k, stride, pad);
    const real inv = 1.0 / (real(k) * k * k);

    Tensor out(Shape{C, OD, OH, OW});
    const real* xp = x->value.data();
    parallel_for(int64_t(C) * OD, [&](int64_t idx) {
        const int od = static_cast<int>(idx % OD);
        const int c = static_cast<int>(idx / OD);
        for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow) {
                real acc = 0;
                for (int kd = 0; kd < k; ++kd) {
                    const int id = od * stride - pad + kd;
                    if (id < 0 || id >= D) continue;
                    for (int kh = 0; kh < k; ++kh) {
                        const int ih = oh * stride - pad + kh;
                        if (ih < 0 || ih >= H) continue;
                        const real* xrow = xp + ((int64_t(c) * D + id) * H + ih) * W;
                        for (int kw = 0; kw < k; ++kw) {
                            const int iw = ow * stride - pad + kw;
                            if (iw >= 0 && iw < W) acc += xrow[iw];
                        }
                    }
                }
                out[((int64_t(c) * OD + od) * OH + oh) * OW + ow] = acc * inv;
            }
    });

    // Valid output window range along one axis for input index i:
    // o*stride - pad <= i <= o*stride - pad + k - 1.
    auto out_range = [stride, pad, k](int i, int on, int& lo, int& hi) {
        int num = i + pad - k + 1;
        lo = num <= 0 ? 0 : (num + stride - 1) / stride;
        hi = std::min(on - 1, (i + pad) / stride);
    };
    return detail::make_op(std::move(out), {x}, [x, C, D, H, W, OD, OH, OW, inv, out_range](Node& self) {
        const real* gp = self.grad.data();
        real* dxp = x->grad.data();
        parallel_for(int64_t(C) * D, [&](int64_t idx) {
            const int id = static_cast<int>(idx % D);
            const int c = static_cast<int>(idx / D);
            int od_lo, od_hi;
            out_range(id, OD, od_lo, od_hi);
            for (int ih = 0; ih < H; ++ih) {
                int oh_lo, oh_hi;
                out_range(ih, OH, oh_lo, oh_hi);
                real* dxrow = dxp + ((int64_t(c) * D + id) * H + ih) * W;
                for (int iw = 0; iw < W; ++iw) {
                    int ow_lo, ow_hi;
                    out_range(iw, OW, ow_lo, ow_hi);
                    real acc = 0;
                    for (int od = od_lo; od <= od_hi; ++od)
                        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                            const real* grow = gp + ((int64_t(c) * OD + od) * OH + oh) * OW;
                            for (int ow = ow_lo; ow <= ow_hi; ++ow) acc += grow[ow];
                        }
                    dxrow[iw] += acc * inv;
                }
            }
        });
    });
}

/// Trilinear resize of [C,D,H,W] with half-pixel centers and edge clamping.
inline Var resize3d(const Var& x, int od, int oh, int ow) {
    const Shape& xs = x->shape();
    DUOLIFT_CHECK(xs.size() == 4, "resize3d: expected rank 4, got " << shape_str(xs));
    const int C = xs[0], D = xs[1], H = xs[2], W = xs[3];
    auto md = std::make_shared<LinearAxisMap>(linear_axis_map(D, od));
    auto mh = std::make_shared<LinearAxisMap>(linear_axis_map(H, oh));
    auto mw = std::make_shared<LinearAxisMap>(linear_axis_map(W, ow));

    Tensor out(Shape{C, od, oh, ow});
    const real* xp = x->value.data();
    parallel_for(int64_t(C) * od, [&](int64_t idx) {
        const int d = static_cast<int>(idx % od);
        const int c = static_cast<int>(idx / od);
        const real wd = md->w1[d];
        const int d0 = md->i0[d], d1 = md->i1[d];
        for (int h = 0; h < oh; ++h) {
            const real wh = mh->w1[h];
            const int h0 = mh->i0[h], h1 = mh->i1[h];
            const real* r00 = xp + ((int64_t(c) * D + d0) * H + h0) * W;
            const real* r01 = xp + ((int64_t(c) * D + d0) * H + h1) * W;
            const real* r10 = xp + ((int64_t(c) * D + d1) * H + h0) * W;
            const real* r11 = xp + ((int64_t(c) * D + d1) * H + h1) * W;
            real* orow = out.data() + ((int64_t(c) * od + d) * oh + h) * ow;
            for (int w = 0; w < ow; ++w) {
                const real ww = mw->w1[w];
                const int w0 = mw->i0[w], w1i = mw->i1[w];
                real v00 = (1 - ww) * r00[w0] + ww * r00[w1i];
                real v01 = (1 - ww) * r01[w0] + ww * r01[w1i];
                real v10 = (1 - ww) * r10[w0] + ww * r10[w1i];
                real v11 = (1 - ww) * r11[w0] + ww * r11[w1i];
                orow[w] = (1 - wd) * ((1 - wh) * v00 + wh * v01) + wd * ((1 - wh) * v10 + wh * v11);
            }
        }
    });

    // Inverse maps for the gather-style backward pass.
    auto invert = [](const LinearAxisMap& m, int in_n) {
        std::vector<std::vector<std::pair<int, real>>> inv(static_cast<size_t>(in_n));
        for (size_t o = 0; o < m.i0.size(); ++o) {
            real w1 = m.w1[o];
            if (m.i0[o] == m.i1[o]) {
                inv[m.i0[o]].push_back({static_cast<int>(o), 1.0});
            } else {
                if (1 - w1 > 0) inv[m.i0[o]].push_back({static_cast<int>(o), 1 - w1});
                if (w1 > 0) inv[m.i1[o]].push_back({static_cast<int>(o), w1});
            }
        }
        return inv;
    };
    auto invd = std::make_shared<std::vector<std::vector<std::pair<int, real>>>>(invert(*md, D));
    auto invh = std::make_shared<std::vector<std::vector<std::pair<int, real>>>>(invert(*mh, H));
    auto invw = std::make_shared<std::vector<std::vector<std::pair<int, real>>>>(invert(*mw, W));

    return detail::make_op(std::move(out), {x}, [x, C, D, H, W, od, oh, ow, invd, invh, invw](Node& self) {
        const real* gp = self.grad.data();
        parallel_for(int64_t(C) * D, [&](int64_t idx) {
            const int id = static_cast<int>(idx % D);
            const int c = static_cast<int>(idx / D);
            for (int ih = 0; ih < H; ++ih)
                for (int iw = 0; iw < W; ++iw) {
                    real acc = 0;
                    for (const auto& [d, wd] : (*invd)[id])
                        for (const auto& [h, wh] : (*invh)[ih]) {
                            const real* grow = gp + ((int64_t(c) * od + d) * oh + h) * ow;
                            for (const auto& [w, ww] : (*invw)[iw]) acc += wd * wh * ww * grow[w];
                        }
                    x->grad[((int64_t(c) * D + id) * H + ih) * W + iw] += acc;
                }
        });
    });
}

/// Per-sample, per-channel normalization over all spatial dims with affine
/// transform. Works for [C,H,W] and [C,D,H,W].
inline Var instance_norm(const Var& x, const Var& gamma, const Var& beta, real eps = 1e-5) {
    const Shape& xs = x->shape();
    DUOLIFT_CHECK(xs.size() >= 2, "instance_norm: need channel + spatial dims, got " << shape_str(xs));
    const int C = xs[0];
    const int64_t N = x->size() / C;
    DUOLIFT_CHECK(gamma->shape() == Shape{C} && beta->shape() == Shape{C},
                  "instance_norm: affine params must be [" << C << "]");

    Tensor out(xs);
    Tensor xhat(xs);            // cached normalized values for backward
    Tensor inv_std(Shape{C});
    const real* xp = x->value.data();
    parallel_for(C, [&](int64_t c) {
        const real* xc = xp + c * N;
        real mu = 0;
        for (int64_t i = 0; i < N; ++i) mu += xc[i];
        mu /= static_cast<real>(N);
        real var = 0;
        for (int64_t i = 0; i < N; ++i) {
            real d = xc[i] - mu;
            var += d * d;
        }
        var /= static_cast<real>(N);
        const real is = 1.0 / std::sqrt(var + eps);
        inv_std[c] = is;
        const real g = gamma->value[c], bt = beta->value[c];
        real* oc = out.data() + c * N;
        real* hc = xhat.data() + c * N;
        for (int64_t i = 0; i < N; ++i) {
            real h = (xc[i] - mu) * is;
            hc[i] = h;
            oc[i] = g * h + bt;
        }
    });

    auto xhat_p = std::make_shared<Tensor>(std::move(xhat));
    auto inv_std_p = std::make_shared<Tensor>(std::move(inv_std));
    return detail::make_op(std::move(out), {x, gamma, beta},
                           [x, gamma, beta, xhat_p, inv_std_p, C, N](Node& self) {
        const real* gp = self.grad.data();
        const real* hp = xhat_p->data();
        parallel_for(C, [&](int64_t c) {
            const real* gc = gp + c * N;
            const real* hc = hp + c * N;
            real sum_g = 0, sum_gh = 0;
            for (int64_t i = 0; i < N; ++i) {
                sum_g += gc[i];
                sum_gh += gc[i] * hc[i];
            }
            if (gamma->needs_grad) gamma->grad[c] += sum_gh;
            if (beta->needs_grad) beta->grad[c] += sum_g;
            if (x->needs_grad) {
                const real g = gamma->value[c];
                const real is = (*inv_std_p)[c];
                const real mean_g = sum_g / static_cast<real>(N);
                const real mean_gh = sum_gh / static_cast<real>(N);
                real* dxc = x->grad.data() + c * N;
                for (int64_t i = 0; i < N; ++i)
                    dxc[i] += g * is * (gc[i] - mean_g - hc[i] * mean_gh);
            }
        });
    });
}

/// Inverted dropout; draws a fresh keep-mask from `rng` (training path only).
inline Var dropout(const Var& x, real p, Rng& rng) {
    DUOLIFT_CHECK(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1), got " << p);
    if (p == 0.0) return x;
    const real keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<Tensor>(x->value.shape());
    for (int64_t i = 0; i < mask->size(); ++i)
        (*mask)[i] = rng.uniform() >= p ? keep_scale : 0.0;
    Tensor out = x->value;
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
    return detail::make_op(std::move(out), {x}, [x, mask](Node& self) {
        for (int64_t i = 0; i < self.size(); ++i) x->grad[i] += (*mask)[i] * self.grad[i];
    });
}

}  // namespace duolift::ad

#include "refcolor/nn/autograd.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace refcolor::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

void Node::accumulate(const Tensor& g) {
    if (grad.data.empty()) grad = Tensor(val.shape);
    for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] += g.data[i];
}

Tensor& Node::ensure_grad() {
    if (grad.data.empty()) grad = Tensor(val.shape);
    return grad;
}

Value constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    return n;
}

Value param(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = true;
    return n;
}

namespace {

Value make_op(Tensor out, std::vector<Value> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->val = std::move(out);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

void topo_visit(const Value& v, std::unordered_set<Node*>& seen, std::vector<Value>& order) {
    // Iterative DFS; graphs can be deep for long sample loops.
    struct Frame {
        Value node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    if (seen.insert(v.get()).second) stack.push_back({v, 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            Value p = f.node->parents[f.next_parent++];
            if (p->requires_grad && seen.insert(p.get()).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
}

}  // namespace

void backward(const Value& root) {
    if (root->val.numel() != 1)
        throw InvalidArgument("backward: root must be scalar");
    if (!root->requires_grad) return;
    std::unordered_set<Node*> seen;
    std::vector<Value> order;
    topo_visit(root, seen, order);
    root->ensure_grad().data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& n = **it;
        if (n.backward_fn && !n.grad.data.empty()) n.backward_fn(n);
    }
}

// ---------------------------------------------------------------- elementwise

Value add(const Value& a, const Value& b) {
    if (!a->val.same_shape(b->val)) throw InvalidArgument("add: shape mismatch");
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->val.data[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
    });
}

Value sub(const Value& a, const Value& b) {
    if (!a->val.same_shape(b->val)) throw InvalidArgument("sub: shape mismatch");
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->val.data[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor g = n.grad;
            for (double& v : g.data) v = -v;
            n.parents[1]->accumulate(g);
        }
    });
}

Value mul(const Value& a, const Value& b) {
    if (!a->val.same_shape(b->val)) throw InvalidArgument("mul: shape mismatch");
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->val.data[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            Tensor g = n.grad;
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= n.parents[1]->val.data[i];
            n.parents[0]->accumulate(g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor g = n.grad;
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= n.parents[0]->val.data[i];
            n.parents[1]->accumulate(g);
        }
    });
}

Value scale(const Value& a, double s) {
    Tensor out = a->val;
    for (double& v : out.data) v *= s;
    return make_op(std::move(out), {a}, [s](Node& n) {
        Tensor g = n.grad;
        for (double& v : g.data) v *= s;
        n.parents[0]->accumulate(g);
    });
}

Value add_scalar(const Value& a, double s) {
    Tensor out = a->val;
    for (double& v : out.data) v += s;
    return make_op(std::move(out), {a},
                   [](Node& n) { n.parents[0]->accumulate(n.grad); });
}

Value exp_op(const Value& a) {
    Tensor out = a->val;
    for (double& v : out.data) v = std::exp(v);
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor g = n.grad;
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] *= n.val.data[i];
        n.parents[0]->accumulate(g);
    });
}

Value silu(const Value& a) {
    Tensor out = a->val;
    for (double& v : out.data) v = v / (1.0 + std::exp(-v));
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor g = n.grad;
        const auto& x = n.parents[0]->val.data;
        for (size_t i = 0; i < g.data.size(); ++i) {
            double sig = 1.0 / (1.0 + std::exp(-x[i]));
            g.data[i] *= sig * (1.0 + x[i] * (1.0 - sig));
        }
        n.parents[0]->accumulate(g);
    });
}

// ------------------------------------------------------------ shape/assembly

Value reshape(const Value& a, std::vector<int> shape) {
    if (Tensor::count(shape) != a->val.numel()) throw InvalidArgument("reshape: numel mismatch");
    Tensor out;
    out.shape = std::move(shape);
    out.data = a->val.data;
    return make_op(std::move(out), {a}, [](Node& n) {
        Tensor g;
        g.shape = n.parents[0]->val.shape;
        g.data = n.grad.data;
        n.parents[0]->accumulate(g);
    });
}

Value concat_channels(const std::vector<Value>& xs) {
    if (xs.empty()) throw InvalidArgument("concat_channels: empty input");
    const int N = xs[0]->val.dim(0), H = xs[0]->val.dim(2), W = xs[0]->val.dim(3);
    int C = 0;
    for (const auto& x : xs) {
        if (x->val.ndim() != 4 || x->val.dim(0) != N || x->val.dim(2) != H || x->val.dim(3) != W)
            throw InvalidArgument("concat_channels: shape mismatch");
        C += x->val.dim(1);
    }
    Tensor out({N, C, H, W});
    const size_t plane = static_cast<size_t>(H) * W;
    size_t c_off = 0;
    for (const auto& x : xs) {
        const int ci = x->val.dim(1);
        for (int n = 0; n < N; ++n)
            std::copy(&x->val.data[static_cast<size_t>(n) * ci * plane],
                      &x->val.data[static_cast<size_t>(n) * ci * plane] + ci * plane,
                      &out.data[(static_cast<size_t>(n) * C + c_off) * plane]);
        c_off += ci;
    }
    return make_op(std::move(out), xs, [N, H, W, C](Node& n) {
        const size_t plane = static_cast<size_t>(H) * W;
        size_t c_off = 0;
        for (auto& p : n.parents) {
            const int ci = p->val.dim(1);
            if (p->requires_grad) {
                Tensor g({N, ci, H, W});
                for (int b = 0; b < N; ++b)
                    std::copy(&n.grad.data[(static_cast<size_t>(b) * C + c_off) * plane],
                              &n.grad.data[(static_cast<size_t>(b) * C + c_off) * plane] +
                                  ci * plane,
                              &g.data[static_cast<size_t>(b) * ci * plane]);
                p->accumulate(g);
            }
            c_off += ci;
        }
    });
}

Value slice_channels(const Value& a, int c_begin, int c_end) {
    const int N = a->val.dim(0), C = a->val.dim(1), H = a->val.dim(2), W = a->val.dim(3);
    if (c_begin < 0 || c_end > C || c_begin >= c_end)
        throw InvalidArgument("slice_channels: bad range");
    const int ci = c_end - c_begin;
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor out({N, ci, H, W});
    for (int n = 0; n < N; ++n)
        std::copy(&a->val.data[(static_cast<size_t>(n) * C + c_begin) * plane],
                  &a->val.data[(static_cast<size_t>(n) * C + c_begin) * plane] + ci * plane,
                  &out.data[static_cast<size_t>(n) * ci * plane]);
    return make_op(std::move(out), {a}, [c_begin, ci, C, plane, N](Node& n) {
        Tensor g(n.parents[0]->val.shape);
        for (int b = 0; b < N; ++b)
            std::copy(&n.grad.data[static_cast<size_t>(b) * ci * plane],
                      &n.grad.data[static_cast<size_t>(b) * ci * plane] + ci * plane,
                      &g.data[(static_cast<size_t>(b) * C + c_begin) * plane]);
        n.parents[0]->accumulate(g);
    });
}

Value nchw_to_ntc(const Value& a) {
    const int N = a->val.dim(0), C = a->val.dim(1), H = a->val.dim(2), W = a->val.dim(3);
    const int T = H * W;
    Tensor out({N, T, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src = &a->val.data[(static_cast<size_t>(n) * C + c) * T];
            for (int t = 0; t < T; ++t) out.data[(static_cast<size_t>(n) * T + t) * C + c] = src[t];
        }
    return make_op(std::move(out), {a}, [N, C, T](Node& n) {
        Tensor g(n.parents[0]->val.shape);
        for (int b = 0; b < N; ++b)
            for (int c = 0; c < C; ++c) {
                double* dst = &g.data[(static_cast<size_t>(b) * C + c) * T];
                for (int t = 0; t < T; ++t)
                    dst[t] = n.grad.data[(static_cast<size_t>(b) * T + t) * C + c];
            }
        n.parents[0]->accumulate(g);
    });
}

Value ntc_to_nchw(const Value& a, int h, int w) {
    const int N = a->val.dim(0), T = a->val.dim(1), C = a->val.dim(2);
    if (T != h * w) throw InvalidArgument("ntc_to_nchw: token count mismatch");
    Tensor out({N, C, h, w});
    for (int n = 0; n < N; ++n)
        for (int t = 0; t < T; ++t)
            for (int c = 0; c < C; ++c)
                out.data[(static_cast<size_t>(n) * C + c) * T + t] =
                    a->val.data[(static_cast<size_t>(n) * T + t) * C + c];
    return make_op(std::move(out), {a}, [N, T, C](Node& n) {
        Tensor g(n.parents[0]->val.shape);
        for (int b = 0; b < N; ++b)
            for (int t = 0; t < T; ++t)
                for (int c = 0; c < C; ++c)
                    g.data[(static_cast<size_t>(b) * T + t) * C + c] =
                        n.grad.data[(static_cast<size_t>(b) * C + c) * T + t];
        n.parents[0]->accumulate(g);
    });
}

// ------------------------------------------------------------ linear algebra

Value matmul(const Value& a, const Value& b) {
    const int M = a->val.dim(0), K = a->val.dim(1);
    if (b->val.dim(0) != K) throw InvalidArgument("matmul: inner dimension mismatch");
    const int N = b->val.dim(1);
    Tensor out({M, N});
    MapM(out.data.data(), M, N).noalias() =
        MapC(a->val.data.data(), M, K) * MapC(b->val.data.data(), K, N);
    return make_op(std::move(out), {a, b}, [M, K, N](Node& n) {
        MapC g(n.grad.data.data(), M, N);
        if (n.parents[0]->requires_grad) {
            Tensor da({M, K});
            MapM(da.data.data(), M, K).noalias() =
                g * MapC(n.parents[1]->val.data.data(), K, N).transpose();
            n.parents[0]->accumulate(da);
        }
        if (n.parents[1]->requires_grad) {
            Tensor db({K, N});
            MapM(db.data.data(), K, N).noalias() =
                MapC(n.parents[0]->val.data.data(), M, K).transpose() * g;
            n.parents[1]->accumulate(db);
        }
    });
}

Value bmm(const Value& a, const Value& b) {
    const int B = a->val.dim(0), M = a->val.dim(1), K = a->val.dim(2);
    if (b->val.dim(0) != B || b->val.dim(1) != K) throw InvalidArgument("bmm: shape mismatch");
    const int N = b->val.dim(2);
    Tensor out({B, M, N});
    for (int i = 0; i < B; ++i)
        MapM(&out.data[static_cast<size_t>(i) * M * N], M, N).noalias() =
            MapC(&a->val.data[static_cast<size_t>(i) * M * K], M, K) *
            MapC(&b->val.data[static_cast<size_t>(i) * K * N], K, N);
    return make_op(std::move(out), {a, b}, [B, M, K, N](Node& n) {
        if (n.parents[0]->requires_grad) {
            Tensor da({B, M, K});
            for (int i = 0; i < B; ++i)
                MapM(&da.data[static_cast<size_t>(i) * M * K], M, K).noalias() =
                    MapC(&n.grad.data[static_cast<size_t>(i) * M * N], M, N) *
                    MapC(&n.parents[1]->val.data[static_cast<size_t>(i) * K * N], K, N)
                        .transpose();
            n.parents[0]->accumulate(da);
        }
        if (n.parents[1]->requires_grad) {
            Tensor db({B, K, N});
            for (int i = 0; i < B; ++i)
                MapM(&db.data[static_cast<size_t>(i) * K * N], K, N).noalias() =
                    MapC(&n.parents[0]->val.data[static_cast<size_t>(i) * M * K], M, K)
                        .transpose() *
                    MapC(&n.grad.data[static_cast<size_t>(i) * M * N], M, N);
            n.parents[1]->accumulate(db);
        }
    });
}

Value transpose_last2(const Value& a) {
    const int B = a->val.dim(0), M = a->val.dim(1), N = a->val.dim(2);
    Tensor out({B, N, M});
    for (int i = 0; i < B; ++i)
        MapM(&out.data[static_cast<size_t>(i) * M * N], N, M) =
            MapC(&a->val.data[static_cast<size_t>(i) * M * N], M, N).transpose();
    return make_op(std::move(out), {a}, [B, M, N](Node& n) {
        Tensor g({B, M, N});
        for (int i = 0; i < B; ++i)
            MapM(&g.data[static_cast<size_t>(i) * M * N], M, N) =
                MapC(&n.grad.data[static_cast<size_t>(i) * M * N], N, M).transpose();
        n.parents[0]->accumulate(g);
    });
}

Value softmax_last(const Value& a) {
    const int C = a->val.dim(a->val.ndim() - 1);
    const int64_t rows = a->val.numel() / C;
    Tensor out = a->val;
    for (int64_t r = 0; r < rows; ++r) {
        double* row = &out.data[static_cast<size_t>(r) * C];
        double mx = row[0];
        for (int i = 1; i < C; ++i) mx = std::max(mx, row[i]);
        double sum = 0.0;
        for (int i = 0; i < C; ++i) {
            row[i] = std::exp(row[i] - mx);
            sum += row[i];
        }
        for (int i = 0; i < C; ++i) row[i] /= sum;
    }
    return make_op(std::move(out), {a}, [C, rows](Node& n) {
        Tensor g = n.grad;
        for (int64_t r = 0; r < rows; ++r) {
            const double* s = &n.val.data[static_cast<size_t>(r) * C];
            double* gr = &g.data[static_cast<size_t>(r) * C];
            double dot = 0.0;
            for (int i = 0; i < C; ++i) dot += gr[i] * s[i];
            for (int i = 0; i < C; ++i) gr[i] = s[i] * (gr[i] - dot);
        }
        n.parents[0]->accumulate(g);
    });
}

// ----------------------------------------------------------------- conv2d

namespace {

void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int pad, int Ho,
            int Wo, double* col) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                double* dst = col + ((static_cast<size_t>(c) * kh + ky) * kw + kx) *
                                        (static_cast<size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + Wo, 0.0);
                        dst += Wo;
                        continue;
                    }
                    const double* src = x + (static_cast<size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        *dst++ = (ix < 0 || ix >= W) ? 0.0 : src[ix];
                    }
                }
            }
}

void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, double* x) {
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const double* src = col + ((static_cast<size_t>(c) * kh + ky) * kw + kx) *
                                              (static_cast<size_t>(Ho) * Wo);
                for (int oy = 0; oy < Ho; ++oy, src += Wo) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    double* dst = x + (static_cast<size_t>(c) * H + iy) * W;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < W) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
    const int N = x->val.dim(0), Cin = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    const int Cout = w->val.dim(0), kh = w->val.dim(2), kw = w->val.dim(3);
    if (w->val.dim(1) != Cin) throw InvalidArgument("conv2d: channel mismatch");
    if (b->val.numel() != Cout) throw InvalidArgument("conv2d: bias size mismatch");
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho < 1 || Wo < 1) throw InvalidArgument("conv2d: output collapses to zero");
    const int K = Cin * kh * kw;
    const size_t plane_out = static_cast<size_t>(Ho) * Wo;

    Tensor out({N, Cout, Ho, Wo});
    std::vector<double> col(static_cast<size_t>(K) * plane_out);
    for (int n = 0; n < N; ++n) {
        im2col(&x->val.data[static_cast<size_t>(n) * Cin * H * W], Cin, H, W, kh, kw, stride, pad,
               Ho, Wo, col.data());
        MapM(&out.data[static_cast<size_t>(n) * Cout * plane_out], Cout,
             static_cast<Eigen::Index>(plane_out))
            .noalias() = MapC(w->val.data.data(), Cout, K) *
                         MapC(col.data(), K, static_cast<Eigen::Index>(plane_out));
        for (int c = 0; c < Cout; ++c) {
            double* dst = &out.data[(static_cast<size_t>(n) * Cout + c) * plane_out];
            const double bias = b->val.data[c];
            for (size_t i = 0; i < plane_out; ++i) dst[i] += bias;
        }
    }

    return make_op(std::move(out), {x, w, b},
                   [N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, plane_out](Node& n) {
        const Value& x = n.parents[0];
        const Value& w = n.parents[1];
        const Value& b = n.parents[2];
        std::vector<double> col(static_cast<size_t>(K) * plane_out);

        Tensor dw, dx;
        const bool need_dw = w->requires_grad;
        const bool need_dx = x->requires_grad;
        if (need_dw) dw = Tensor(w->val.shape);
        if (need_dx) dx = Tensor(x->val.shape);

        for (int s = 0; s < N; ++s) {
            MapC g(&n.grad.data[static_cast<size_t>(s) * Cout * plane_out], Cout,
                   static_cast<Eigen::Index>(plane_out));
            if (need_dw || need_dx)
                im2col(&x->val.data[static_cast<size_t>(s) * Cin * H * W], Cin, H, W, kh, kw,
                       stride, pad, Ho, Wo, col.data());
            if (need_dw)
                MapM(dw.data.data(), Cout, K).noalias() +=
                    g * MapC(col.data(), K, static_cast<Eigen::Index>(plane_out)).transpose();
            if (need_dx) {
                std::vector<double> dcol(static_cast<size_t>(K) * plane_out);
                MapM(dcol.data(), K, static_cast<Eigen::Index>(plane_out)).noalias() =
                    MapC(w->val.data.data(), Cout, K).transpose() * g;
                col2im_add(dcol.data(), Cin, H, W, kh, kw, stride, pad, Ho, Wo,
                           &dx.data[static_cast<size_t>(s) * Cin * H * W]);
            }
        }
        if (need_dw) w->accumulate(dw);
        if (need_dx) x->accumulate(dx);
        if (b->requires_grad) {
            Tensor db(b->val.shape);
            for (int s = 0; s < N; ++s)
                for (int c = 0; c < Cout; ++c) {
                    const double* g = &n.grad.data[(static_cast<size_t>(s) * Cout + c) * plane_out];
                    double acc = 0.0;
                    for (size_t i = 0; i < plane_out; ++i) acc += g[i];
                    db.data[c] += acc;
                }
            b->accumulate(db);
        }
    });
}

Value linear(const Value& x, const Value& w, const Value& b) {
    const int N = x->val.dim(0), D = x->val.dim(1);
    const int Dout = w->val.dim(0);
    if (w->val.dim(1) != D || b->val.numel() != Dout)
        throw InvalidArgument("linear: shape mismatch");
    Tensor out({N, Dout});
    MapM(out.data.data(), N, Dout).noalias() =
        MapC(x->val.data.data(), N, D) * MapC(w->val.data.data(), Dout, D).transpose();
    for (int n = 0; n < N; ++n)
        for (int d = 0; d < Dout; ++d) out.data[static_cast<size_t>(n) * Dout + d] += b->val.data[d];
    return make_op(std::move(out), {x, w, b}, [N, D, Dout](Node& n) {
        MapC g(n.grad.data.data(), N, Dout);
        if (n.parents[0]->requires_grad) {
            Tensor dx({N, D});
            MapM(dx.data.data(), N, D).noalias() =
                g * MapC(n.parents[1]->val.data.data(), Dout, D);
            n.parents[0]->accumulate(dx);
        }
        if (n.parents[1]->requires_grad) {
            Tensor dw({Dout, D});
            MapM(dw.data.data(), Dout, D).noalias() =
                g.transpose() * MapC(n.parents[0]->val.data.data(), N, D);
            n.parents[1]->accumulate(dw);
        }
        if (n.parents[2]->requires_grad) {
            Tensor db(n.parents[2]->val.shape);
            for (int s = 0; s < N; ++s)
                for (int d = 0; d < Dout; ++d) db.data[d] += n.grad.data[static_cast<size_t>(s) * Dout + d];
            n.parents[2]->accumulate(db);
        }
    });
}

Value group_norm(const Value& x, const Value& gamma, const Value& beta, int groups, double eps) {
    const int N = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    if (C % groups != 0) throw InvalidArgument("group_norm: channels not divisible by groups");
    if (gamma->val.numel() != C || beta->val.numel() != C)
        throw InvalidArgument("group_norm: affine size mismatch");
    const int Cg = C / groups;
    const int64_t m = static_cast<int64_t>(Cg) * H * W;
    const size_t plane = static_cast<size_t>(H) * W;

    Tensor out(x->val.shape);
    // Cache per-(n,g) statistics for the backward pass.
    auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(N) * groups * 2);

    for (int n = 0; n < N; ++n)
        for (int g = 0; g < groups; ++g) {
            const size_t base = (static_cast<size_t>(n) * C + static_cast<size_t>(g) * Cg) * plane;
            double mean = 0.0;
            for (int64_t i = 0; i < m; ++i) mean += x->val.data[base + i];
            mean /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = x->val.data[base + i] - mean;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double inv = 1.0 / std::sqrt(var + eps);
            (*stats)[(static_cast<size_t>(n) * groups + g) * 2] = mean;
            (*stats)[(static_cast<size_t>(n) * groups + g) * 2 + 1] = inv;
            for (int c = 0; c < Cg; ++c) {
                const double gm = gamma->val.data[static_cast<size_t>(g) * Cg + c];
                const double bt = beta->val.data[static_cast<size_t>(g) * Cg + c];
                const size_t off = base + static_cast<size_t>(c) * plane;
                for (size_t i = 0; i < plane; ++i)
                    out.data[off + i] = (x->val.data[off + i] - mean) * inv * gm + bt;
            }
        }

    return make_op(std::move(out), {x, gamma, beta}, [N, C, H, W, groups, Cg, m, plane,
                                                      stats](Node& n) {
        const Value& x = n.parents[0];
        const Value& gamma = n.parents[1];
        const Value& beta = n.parents[2];
        Tensor dx, dgamma, dbeta;
        if (x->requires_grad) dx = Tensor(x->val.shape);
        if (gamma->requires_grad) dgamma = Tensor(gamma->val.shape);
        if (beta->requires_grad) dbeta = Tensor(beta->val.shape);

        for (int s = 0; s < N; ++s)
            for (int g = 0; g < groups; ++g) {
                const size_t base =
                    (static_cast<size_t>(s) * C + static_cast<size_t>(g) * Cg) * plane;
                const double mean = (*stats)[(static_cast<size_t>(s) * groups + g) * 2];
                const double inv = (*stats)[(static_cast<size_t>(s) * groups + g) * 2 + 1];

                if (gamma->requires_grad || beta->requires_grad) {
                    for (int c = 0; c < Cg; ++c) {
                        const size_t off = base + static_cast<size_t>(c) * plane;
                        double dg = 0.0, db = 0.0;
                        for (size_t i = 0; i < plane; ++i) {
                            const double xh = (x->val.data[off + i] - mean) * inv;
                            dg += n.grad.data[off + i] * xh;
                            db += n.grad.data[off + i];
                        }
                        if (gamma->requires_grad)
                            dgamma.data[static_cast<size_t>(g) * Cg + c] += dg;
                        if (beta->requires_grad) dbeta.data[static_cast<size_t>(g) * Cg + c] += db;
                    }
                }

                if (x->requires_grad) {
                    // dxh = dy * gamma; dx = inv*(dxh - mean(dxh) - xh*mean(dxh*xh))
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int c = 0; c < Cg; ++c) {
                        const double gm = gamma->val.data[static_cast<size_t>(g) * Cg + c];
                        const size_t off = base + static_cast<size_t>(c) * plane;
                        for (size_t i = 0; i < plane; ++i) {
                            const double dxh = n.grad.data[off + i] * gm;
                            const double xh = (x->val.data[off + i] - mean) * inv;
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                        }
                    }
                    const double mean_dxh = sum_dxh / static_cast<double>(m);
                    const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(m);
                    for (int c = 0; c < Cg; ++c) {
                        const double gm = gamma->val.data[static_cast<size_t>(g) * Cg + c];
                        const size_t off = base + static_cast<size_t>(c) * plane;
                        for (size_t i = 0; i < plane; ++i) {
                            const double dxh = n.grad.data[off + i] * gm;
                            const double xh = (x->val.data[off + i] - mean) * inv;
                            dx.data[off + i] += inv * (dxh - mean_dxh - xh * mean_dxh_xh);
                        }
                    }
                }
            }
        if (x->requires_grad) x->accumulate(dx);
        if (gamma->requires_grad) gamma->accumulate(dgamma);
        if (beta->requires_grad) beta->accumulate(dbeta);
    });
}

Value avg_pool2(const Value& x) {
    const int N = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    if (H % 2 != 0 || W % 2 != 0) throw InvalidArgument("avg_pool2: dims must be even");
    const int Ho = H / 2, Wo = W / 2;
    Tensor out({N, C, Ho, Wo});
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = &x->val.data[static_cast<size_t>(nc) * H * W];
        double* dst = &out.data[static_cast<size_t>(nc) * Ho * Wo];
        for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx)
                dst[y * Wo + xx] = 0.25 * (src[(2 * y) * W + 2 * xx] + src[(2 * y) * W + 2 * xx + 1] +
                                           src[(2 * y + 1) * W + 2 * xx] +
                                           src[(2 * y + 1) * W + 2 * xx + 1]);
    }
    return make_op(std::move(out), {x}, [N, C, H, W, Ho, Wo](Node& n) {
        Tensor g({N, C, H, W});
        for (int nc = 0; nc < N * C; ++nc) {
            const double* src = &n.grad.data[static_cast<size_t>(nc) * Ho * Wo];
            double* dst = &g.data[static_cast<size_t>(nc) * H * W];
            for (int y = 0; y < Ho; ++y)
                for (int xx = 0; xx < Wo; ++xx) {
                    const double v = 0.25 * src[y * Wo + xx];
                    dst[(2 * y) * W + 2 * xx] = v;
                    dst[(2 * y) * W + 2 * xx + 1] = v;
                    dst[(2 * y + 1) * W + 2 * xx] = v;
                    dst[(2 * y + 1) * W + 2 * xx + 1] = v;
                }
        }
        n.parents[0]->accumulate(g);
    });
}

Value upsample_nearest2(const Value& x) {
    const int N = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    const int Ho = H * 2, Wo = W * 2;
    Tensor out({N, C, Ho, Wo});
    for (int nc = 0; nc < N * C; ++nc) {
        const double* src = &x->val.data[static_cast<size_t>(nc) * H * W];
        double* dst = &out.data[static_cast<size_t>(nc) * Ho * Wo];
        for (int y = 0; y < Ho; ++y)
            for (int xx = 0; xx < Wo; ++xx) dst[y * Wo + xx] = src[(y / 2) * W + xx / 2];
    }
    return make_op(std::move(out), {x}, [N, C, H, W, Ho, Wo](Node& n) {
        Tensor g({N, C, H, W});
        for (int nc = 0; nc < N * C; ++nc) {
            const double* src = &n.grad.data[static_cast<size_t>(nc) * Ho * Wo];
            double* dst = &g.data[static_cast<size_t>(nc) * H * W];
            for (int y = 0; y < Ho; ++y)
                for (int xx = 0; xx < Wo; ++xx) dst[(y / 2) * W + xx / 2] += src[y * Wo + xx];
        }
        n.parents[0]->accumulate(g);
    });
}

Value add_sample_channel_bias(const Value& x, const Value& bias) {
    const int N = x->val.dim(0), C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    if (bias->val.ndim() != 2 || bias->val.dim(0) != N || bias->val.dim(1) != C)
        throw InvalidArgument("add_sample_channel_bias: bias must be (N,C)");
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor out = x->val;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double b = bias->val.data[static_cast<size_t>(n) * C + c];
            double* dst = &out.data[(static_cast<size_t>(n) * C + c) * plane];
            for (size_t i = 0; i < plane; ++i) dst[i] += b;
        }
    return make_op(std::move(out), {x, bias}, [N, C, plane](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor db({N, C});
            for (int s = 0; s < N; ++s)
                for (int c = 0; c < C; ++c) {
                    const double* g = &n.grad.data[(static_cast<size_t>(s) * C + c) * plane];
                    double acc = 0.0;
                    for (size_t i = 0; i < plane; ++i) acc += g[i];
                    db.data[static_cast<size_t>(s) * C + c] = acc;
                }
            n.parents[1]->accumulate(db);
        }
    });
}

// ------------------------------------------------------------------ losses

Value mean_all(const Value& a) {
    Tensor out({1});
    double acc = 0.0;
    for (double v : a->val.data) acc += v;
    const double inv_n = 1.0 / static_cast<double>(a->val.numel());
    out.data[0] = acc * inv_n;
    return make_op(std::move(out), {a}, [inv_n](Node& n) {
        Tensor g(n.parents[0]->val.shape);
        const double gv = n.grad.data[0] * inv_n;
        for (double& v : g.data) v = gv;
        n.parents[0]->accumulate(g);
    });
}

Value mse_loss(const Value& a, const Value& b) {
    if (!a->val.same_shape(b->val)) throw InvalidArgument("mse_loss: shape mismatch");
    Tensor out({1});
    const int64_t n = a->val.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = a->val.data[i] - b->val.data[i];
        acc += d * d;
    }
    out.data[0] = acc / static_cast<double>(n);
    return make_op(std::move(out), {a, b}, [n](Node& n_) {
        const double s = 2.0 * n_.grad.data[0] / static_cast<double>(n);
        Tensor g(n_.parents[0]->val.shape);
        for (int64_t i = 0; i < n; ++i)
            g.data[i] = s * (n_.parents[0]->val.data[i] - n_.parents[1]->val.data[i]);
        if (n_.parents[0]->requires_grad) n_.parents[0]->accumulate(g);
        if (n_.parents[1]->requires_grad) {
            for (double& v : g.data) v = -v;
            n_.parents[1]->accumulate(g);
        }
    });
}

Value l1_loss(const Value& a, const Value& b) {
    if (!a->val.same_shape(b->val)) throw InvalidArgument("l1_loss: shape mismatch");
    Tensor out({1});
    const int64_t n = a->val.numel();
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += std::abs(a->val.data[i] - b->val.data[i]);
    out.data[0] = acc / static_cast<double>(n);
    return make_op(std::move(out), {a, b}, [n](Node& n_) {
        const double s = n_.grad.data[0] / static_cast<double>(n);
        Tensor g(n_.parents[0]->val.shape);
        for (int64_t i = 0; i < n; ++i) {
            const double d = n_.parents[0]->val.data[i] - n_.parents[1]->val.data[i];
            g.data[i] = d > 0.0 ? s : (d < 0.0 ? -s : 0.0);
        }
        if (n_.parents[0]->requires_grad) n_.parents[0]->accumulate(g);
        if (n_.parents[1]->requires_grad) {
            for (double& v : g.data) v = -v;
            n_.parents[1]->accumulate(g);
        }
    });
}

}  // namespace refcolor::nn

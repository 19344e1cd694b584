#include "zecon/autodiff.hpp"

#include "zecon/error.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace zecon::ad {

struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    VjpFn vjp;

    void accumulate(const Tensor& g) {
        if (grad.empty() && !value.empty()) grad = Tensor::zeros_like(value);
        for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
};

namespace {

Var make_result(Tensor value, const std::vector<Var>& inputs, VjpFn vjp) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& in : inputs) {
        if (in.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) {
        for (const auto& in : inputs) n->parents.push_back(in.node());
        n->vjp = std::move(vjp);
    }
    return Var(std::move(n));
}

void expect_rank(const Var& v, std::size_t rank, const char* op) {
    if (v.value().rank() != rank) {
        throw Error("autodiff", std::string(op) + " expects rank " + std::to_string(rank) +
                                    ", got " + shape_str(v.shape()));
    }
}

} // namespace

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

const Tensor& Var::value() const { return node_->value; }

Tensor Var::grad() const {
    if (node_->grad.empty()) return Tensor::zeros_like(node_->value);
    return node_->grad;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

void Var::zero_grad() { node_->grad = Tensor(); }

void Var::set_requires_grad(bool on) {
    if (!node_->parents.empty()) throw Error("autodiff", "only leaves can change requires_grad");
    node_->requires_grad = on;
}

void Var::assign(Tensor value) {
    require_same_shape(node_->value, value, "autodiff");
    node_->value = std::move(value);
}

Var custom(const std::vector<Var>& inputs, Tensor value, VjpFn vjp) {
    return make_result(std::move(value), inputs, std::move(vjp));
}

void backward(const Var& root) {
    if (root.value().size() != 1) {
        throw Error("autodiff", "backward needs a scalar root, got " + shape_str(root.shape()));
    }
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order without recursion limits.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    // Interior gradients are transient; only leaves keep them after the pass.
    for (Node* n : order) {
        if (!n->parents.empty()) n->grad = Tensor();
    }
    root.node()->accumulate(Tensor::scalar(1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->parents.empty() || n->grad.empty()) continue;
        auto grads = n->vjp(n->grad);
        for (std::size_t k = 0; k < n->parents.size(); ++k) {
            if (n->parents[k]->requires_grad && !grads[k].empty()) n->parents[k]->accumulate(grads[k]);
        }
        n->grad = Tensor();
    }
}

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "autodiff.add");
    return make_result(a.value() + b.value(), {a, b},
                       [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "autodiff.sub");
    return make_result(a.value() - b.value(), {a, b},
                       [](const Tensor& g) { return std::vector<Tensor>{g, g * -1.0}; });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "autodiff.mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    Tensor av = a.value(), bv = b.value();
    return make_result(std::move(out), {a, b}, [av, bv](const Tensor& g) {
        Tensor ga(g.shape()), gb(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] = g[i] * bv[i];
            gb[i] = g[i] * av[i];
        }
        return std::vector<Tensor>{ga, gb};
    });
}

Var scale(const Var& a, double s) {
    return make_result(a.value() * s, {a},
                       [s](const Tensor& g) { return std::vector<Tensor>{g * s}; });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    auto shape = a.shape();
    return make_result(Tensor::scalar(s), {a}, [shape](const Tensor& g) {
        return std::vector<Tensor>{Tensor(shape, g[0])};
    });
}

Var mean(const Var& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var mse(const Var& a, const Var& b) {
    auto d = sub(a, b);
    return mean(mul(d, d));
}

Var silu(const Var& a) {
    const Tensor& x = a.value();
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / (1.0 + std::exp(-x[i]));
    return make_result(std::move(out), {a}, [x](const Tensor& g) {
        Tensor gx(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            gx[i] = g[i] * s * (1.0 + x[i] * (1.0 - s));
        }
        return std::vector<Tensor>{gx};
    });
}

Var reshape(const Var& a, std::vector<std::size_t> shape) {
    if (numel(shape) != a.value().size()) {
        throw Error("autodiff", "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    auto orig = a.shape();
    return make_result(a.value().reshaped(std::move(shape)), {a}, [orig](const Tensor& g) {
        return std::vector<Tensor>{g.reshaped(orig)};
    });
}

Var slice(const Var& a, std::size_t offset, std::vector<std::size_t> shape) {
    const std::size_t n = numel(shape);
    if (offset + n > a.value().size()) throw Error("autodiff", "slice out of range");
    std::vector<double> data(a.value().vec().begin() + static_cast<long>(offset),
                             a.value().vec().begin() + static_cast<long>(offset + n));
    auto full = a.shape();
    return make_result(Tensor(std::move(shape), std::move(data)), {a}, [full, offset](const Tensor& g) {
        Tensor ga(full);
        for (std::size_t i = 0; i < g.size(); ++i) ga[offset + i] = g[i];
        return std::vector<Tensor>{ga};
    });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
    expect_rank(x, 3, "conv2d");
    expect_rank(weight, 4, "conv2d");
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    const std::size_t O = wv.dim(0), K = wv.dim(2);
    if (wv.dim(1) != C || wv.dim(3) != K) {
        throw Error("autodiff", "conv2d weight " + shape_str(wv.shape()) + " incompatible with input " +
                                    shape_str(xv.shape()));
    }
    if (bias.value().size() != O) throw Error("autodiff", "conv2d bias size mismatch");
    const long hp = static_cast<long>(H) + 2 * padding - static_cast<long>(K);
    const long wp = static_cast<long>(W) + 2 * padding - static_cast<long>(K);
    if (hp < 0 || wp < 0) throw Error("autodiff", "conv2d kernel larger than padded input");
    const std::size_t OH = static_cast<std::size_t>(hp / stride + 1);
    const std::size_t OW = static_cast<std::size_t>(wp / stride + 1);

    // Each output pixel reads input (oy*stride - padding + ky, ox*stride - padding + kx).
    auto in_y = [=](std::size_t oy, std::size_t ky) {
        return static_cast<long>(oy) * stride - padding + static_cast<long>(ky);
    };

    Tensor out({O, OH, OW});
    for (std::size_t o = 0; o < O; ++o) {
        const double b = bias.value()[o];
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                double acc = b;
                for (std::size_t c = 0; c < C; ++c) {
                    const double* wk = wv.data() + ((o * C + c) * K) * K;
                    for (std::size_t ky = 0; ky < K; ++ky) {
                        const long iy = in_y(oy, ky);
                        if (iy < 0 || iy >= static_cast<long>(H)) continue;
                        const double* row = xv.data() + (c * H + static_cast<std::size_t>(iy)) * W;
                        for (std::size_t kx = 0; kx < K; ++kx) {
                            const long ix = in_y(ox, kx);
                            if (ix < 0 || ix >= static_cast<long>(W)) continue;
                            acc += wk[ky * K + kx] * row[ix];
                        }
                    }
                }
                out.at(o, oy, ox) = acc;
            }
        }
    }

    const bool need_x = x.requires_grad();
    const bool need_w = weight.requires_grad() || bias.requires_grad();
    Tensor xs = need_w ? xv : Tensor();
    Tensor ws = need_x ? wv : Tensor();
    auto xshape = xv.shape();
    auto wshape = wv.shape();
    return make_result(std::move(out), {x, weight, bias},
                       [=, xs = std::move(xs), ws = std::move(ws)](const Tensor& g) {
        Tensor gx = need_x ? Tensor(xshape) : Tensor();
        Tensor gw = need_w ? Tensor(wshape) : Tensor();
        Tensor gb = need_w ? Tensor({O}) : Tensor();
        for (std::size_t o = 0; o < O; ++o) {
            for (std::size_t oy = 0; oy < OH; ++oy) {
                for (std::size_t ox = 0; ox < OW; ++ox) {
                    const double go = g.at(o, oy, ox);
                    if (go == 0.0) continue;
                    if (need_w) gb[o] += go;
                    for (std::size_t c = 0; c < C; ++c) {
                        const std::size_t wbase = ((o * C + c) * K) * K;
                        for (std::size_t ky = 0; ky < K; ++ky) {
                            const long iy = in_y(oy, ky);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            const std::size_t rbase = (c * H + static_cast<std::size_t>(iy)) * W;
                            for (std::size_t kx = 0; kx < K; ++kx) {
                                const long ix = in_y(ox, kx);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                const std::size_t xi = rbase + static_cast<std::size_t>(ix);
                                if (need_x) gx[xi] += go * ws[wbase + ky * K + kx];
                                if (need_w) gw[wbase + ky * K + kx] += go * xs[xi];
                            }
                        }
                    }
                }
            }
        }
        return std::vector<Tensor>{gx, gw, gb};
    });
}

Var upsample2x(const Var& x) {
    expect_rank(x, 3, "upsample2x");
    const Tensor& xv = x.value();
    const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < 2 * H; ++y)
            for (std::size_t xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = xv.at(c, y / 2, xx / 2);
    return make_result(std::move(out), {x}, [C, H, W](const Tensor& g) {
        Tensor gx({C, H, W});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < 2 * H; ++y)
                for (std::size_t xx = 0; xx < 2 * W; ++xx) gx.at(c, y / 2, xx / 2) += g.at(c, y, xx);
        return std::vector<Tensor>{gx};
    });
}

Var add_channel_bias(const Var& x, const Var& bias) {
    expect_rank(x, 3, "add_channel_bias");
    const std::size_t C = x.value().dim(0), HW = x.value().dim(1) * x.value().dim(2);
    if (bias.value().size() != C) throw Error("autodiff", "add_channel_bias size mismatch");
    Tensor out = x.value();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) out[c * HW + i] += bias.value()[c];
    return make_result(std::move(out), {x, bias}, [C, HW](const Tensor& g) {
        Tensor gb({C});
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < HW; ++i) gb[c] += g[c * HW + i];
        return std::vector<Tensor>{g, gb};
    });
}

Var matvec(const Var& w, const Var& x) {
    expect_rank(w, 2, "matvec");
    const std::size_t M = w.value().dim(0), N = w.value().dim(1);
    if (x.value().size() != N) throw Error("autodiff", "matvec size mismatch");
    const Tensor& wv = w.value();
    const Tensor& xv = x.value();
    Tensor out({M});
    for (std::size_t m = 0; m < M; ++m) {
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) acc += wv[m * N + n] * xv[n];
        out[m] = acc;
    }
    const bool need_w = w.requires_grad();
    Tensor ws = x.requires_grad() ? wv : Tensor();
    Tensor xs = need_w ? xv : Tensor();
    auto xshape = xv.shape();
    return make_result(std::move(out), {w, x}, [=](const Tensor& g) {
        Tensor gw = need_w ? Tensor({M, N}) : Tensor();
        Tensor gx = ws.empty() ? Tensor() : Tensor(xshape);
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t n = 0; n < N; ++n) {
                if (need_w) gw[m * N + n] = g[m] * xs[n];
                if (!ws.empty()) gx[n] += g[m] * ws[m * N + n];
            }
        }
        return std::vector<Tensor>{gw, gx};
    });
}

Var normalize_rows(const Var& x, double eps) {
    const Tensor& xv = x.value();
    const std::size_t P = xv.rank() == 1 ? 1 : xv.dim(0);
    const std::size_t D = xv.size() / std::max<std::size_t>(P, 1);
    Tensor out(xv.shape());
    std::vector<double> norms(P);
    for (std::size_t p = 0; p < P; ++p) {
        double s = 0.0;
        for (std::size_t d = 0; d < D; ++d) s += xv[p * D + d] * xv[p * D + d];
        const double n = std::sqrt(s) + eps;
        if (n == 0.0) throw Error("autodiff", "cannot normalise a zero-norm vector");
        norms[p] = n;
        for (std::size_t d = 0; d < D; ++d) out[p * D + d] = xv[p * D + d] / n;
    }
    Tensor y = out;
    return make_result(std::move(out), {x}, [y, norms, P, D](const Tensor& g) {
        // d(x/|x|) = (g - y (y.g)) / |x|
        Tensor gx(g.shape());
        for (std::size_t p = 0; p < P; ++p) {
            double yg = 0.0;
            for (std::size_t d = 0; d < D; ++d) yg += y[p * D + d] * g[p * D + d];
            for (std::size_t d = 0; d < D; ++d)
                gx[p * D + d] = (g[p * D + d] - y[p * D + d] * yg) / norms[p];
        }
        return std::vector<Tensor>{gx};
    });
}

Var row_dot(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "autodiff.row_dot");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const std::size_t P = av.rank() == 1 ? 1 : av.dim(0);
    const std::size_t D = av.size() / P;
    Tensor out({P});
    for (std::size_t p = 0; p < P; ++p)
        for (std::size_t d = 0; d < D; ++d) out[p] += av[p * D + d] * bv[p * D + d];
    return make_result(std::move(out), {a, b}, [av, bv, P, D](const Tensor& g) {
        Tensor ga(av.shape()), gb(bv.shape());
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t d = 0; d < D; ++d) {
                ga[p * D + d] = g[p] * bv[p * D + d];
                gb[p * D + d] = g[p] * av[p * D + d];
            }
        return std::vector<Tensor>{ga, gb};
    });
}

Var gather_positions(const Var& x, const std::vector<std::size_t>& positions) {
    expect_rank(x, 3, "gather_positions");
    const std::size_t C = x.value().dim(0), HW = x.value().dim(1) * x.value().dim(2);
    const std::size_t P = positions.size();
    Tensor out({P, C});
    for (std::size_t p = 0; p < P; ++p) {
        if (positions[p] >= HW) throw Error("autodiff", "gather position out of range");
        for (std::size_t c = 0; c < C; ++c) out[p * C + c] = x.value()[c * HW + positions[p]];
    }
    auto shape = x.shape();
    return make_result(std::move(out), {x}, [shape, positions, C, HW, P](const Tensor& g) {
        Tensor gx(shape);
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t c = 0; c < C; ++c) gx[c * HW + positions[p]] += g[p * C + c];
        return std::vector<Tensor>{gx};
    });
}

Var patch_nce(const Var& queries, const Var& keys, double tau) {
    expect_rank(queries, 2, "patch_nce");
    require_same_shape(queries.value(), keys.value(), "autodiff.patch_nce");
    const Tensor& q = queries.value();
    const Tensor& k = keys.value();
    const std::size_t P = q.dim(0), D = q.dim(1);
    if (P < 2) throw Error("autodiff", "patch_nce needs at least one negative");

    // softmax rows are kept for the backward pass
    Tensor prob({P, P});
    double loss = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < P; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < D; ++d) s += q[i * D + d] * k[j * D + d];
            prob[i * P + j] = s / tau;
            mx = std::max(mx, s / tau);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < P; ++j) z += std::exp(prob[i * P + j] - mx);
        const double lse = mx + std::log(z);
        loss += lse - prob[i * P + i];
        for (std::size_t j = 0; j < P; ++j) prob[i * P + j] = std::exp(prob[i * P + j] - lse);
    }
    return make_result(Tensor::scalar(loss), {queries, keys},
                       [q, k, prob, P, D, tau](const Tensor& g) {
        Tensor gq(q.shape()), gk(k.shape());
        for (std::size_t i = 0; i < P; ++i) {
            for (std::size_t j = 0; j < P; ++j) {
                const double c = g[0] * (prob[i * P + j] - (i == j ? 1.0 : 0.0)) / tau;
                for (std::size_t d = 0; d < D; ++d) {
                    gq[i * D + d] += c * k[j * D + d];
                    gk[j * D + d] += c * q[i * D + d];
                }
            }
        }
        return std::vector<Tensor>{gq, gk};
    });
}

SampleMap SampleMap::from_coords(std::size_t in_h, std::size_t in_w, std::size_t out_h,
                                 std::size_t out_w, const std::vector<double>& src_x,
                                 const std::vector<double>& src_y) {
    const std::size_t n = out_h * out_w;
    if (src_x.size() != n || src_y.size() != n) throw Error("autodiff", "sample map coordinate count");
    SampleMap m{in_h, in_w, out_h, out_w, std::vector<std::uint32_t>(4 * n, 0),
                std::vector<double>(4 * n, 0.0)};
    for (std::size_t i = 0; i < n; ++i) {
        // shift to a grid where pixel centres sit on integers
        const double fx = src_x[i] - 0.5, fy = src_y[i] - 0.5;
        const double x0 = std::floor(fx), y0 = std::floor(fy);
        const double ax = fx - x0, ay = fy - y0;
        const long ix[2] = {static_cast<long>(x0), static_cast<long>(x0) + 1};
        const long iy[2] = {static_cast<long>(y0), static_cast<long>(y0) + 1};
        const double wx[2] = {1.0 - ax, ax};
        const double wy[2] = {1.0 - ay, ay};
        for (int t = 0; t < 4; ++t) {
            const long xx = ix[t & 1], yy = iy[t >> 1];
            if (xx < 0 || yy < 0 || xx >= static_cast<long>(in_w) || yy >= static_cast<long>(in_h)) continue;
            m.index[4 * i + t] = static_cast<std::uint32_t>(yy * static_cast<long>(in_w) + xx);
            m.weight[4 * i + t] = wx[t & 1] * wy[t >> 1];
        }
    }
    return m;
}

SampleMap SampleMap::resize(std::size_t in_h, std::size_t in_w, std::size_t out_h, std::size_t out_w) {
    std::vector<double> sx(out_h * out_w), sy(out_h * out_w);
    const double rx = static_cast<double>(in_w) / static_cast<double>(out_w);
    const double ry = static_cast<double>(in_h) / static_cast<double>(out_h);
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
            // clamp into the valid centre range so edges replicate instead of fading
            sx[y * out_w + x] = std::clamp((static_cast<double>(x) + 0.5) * rx, 0.5, in_w - 0.5);
            sy[y * out_w + x] = std::clamp((static_cast<double>(y) + 0.5) * ry, 0.5, in_h - 0.5);
        }
    return from_coords(in_h, in_w, out_h, out_w, sx, sy);
}

Tensor resample(const Tensor& x, const SampleMap& map) {
    if (x.rank() != 3 || x.dim(1) != map.in_h || x.dim(2) != map.in_w) {
        throw Error("autodiff", "resample input " + shape_str(x.shape()) + " does not match map");
    }
    const std::size_t C = x.dim(0), in_hw = map.in_h * map.in_w, n = map.out_h * map.out_w;
    Tensor out({C, map.out_h, map.out_w});
    for (std::size_t c = 0; c < C; ++c) {
        const double* src = x.data() + c * in_hw;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (int t = 0; t < 4; ++t) acc += map.weight[4 * i + t] * src[map.index[4 * i + t]];
            out[c * n + i] = acc;
        }
    }
    return out;
}

Var resample(const Var& x, const SampleMap& map) {
    Tensor out = resample(x.value(), map);
    auto shape = x.shape();
    return make_result(std::move(out), {x}, [shape, map](const Tensor& g) {
        const std::size_t C = shape[0], in_hw = map.in_h * map.in_w, n = map.out_h * map.out_w;
        Tensor gx(shape);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < n; ++i)
                for (int t = 0; t < 4; ++t)
                    gx[c * in_hw + map.index[4 * i + t]] += map.weight[4 * i + t] * g[c * n + i];
        return std::vector<Tensor>{gx};
    });
}

} // namespace zecon::ad

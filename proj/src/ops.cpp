#include "dgcn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace dgcn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

template <typename T>
using NodeT = detail::Node<T>;

// Gradient sink of input i, or an empty span when that input is a constant.
template <typename T>
std::span<T> sink(NodeT<T>& self, std::size_t i) {
    auto& in = *self.inputs[i];
    if (!in.requires_grad) return {};
    return in.grad_buffer();
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                             to_string(b));
    }
}

// Offsets of each broadcast batch in a and b for matmul.
struct BatchPlan {
    Shape out_batch;
    std::vector<std::size_t> a_off, b_off;
};

BatchPlan plan_batches(const Shape& a, const Shape& b, std::size_t a_mat, std::size_t b_mat) {
    std::size_t ra = a.size() - 2, rb = b.size() - 2;
    std::size_t r = std::max(ra, rb);
    BatchPlan plan;
    plan.out_batch.assign(r, 1);
    Shape ea(r, 1), eb(r, 1);
    for (std::size_t i = 0; i < ra; ++i) ea[r - ra + i] = a[i];
    for (std::size_t i = 0; i < rb; ++i) eb[r - rb + i] = b[i];
    for (std::size_t i = 0; i < r; ++i) {
        if (ea[i] != eb[i] && ea[i] != 1 && eb[i] != 1) {
            throw DimensionError("matmul: batch dimensions of " + to_string(a) + " and " +
                                 to_string(b) + " do not broadcast");
        }
        plan.out_batch[i] = std::max(ea[i], eb[i]);
    }
    auto sa = strides_of(ea), sb = strides_of(eb);
    std::size_t nb = numel(plan.out_batch);
    plan.a_off.resize(nb);
    plan.b_off.resize(nb);
    auto so = strides_of(plan.out_batch);
    for (std::size_t flat = 0; flat < nb; ++flat) {
        std::size_t rem = flat, ia = 0, ib = 0;
        for (std::size_t d = 0; d < r; ++d) {
            std::size_t idx = rem / so[d];
            rem %= so[d];
            if (ea[d] != 1) ia += idx * sa[d];
            if (eb[d] != 1) ib += idx * sb[d];
        }
        plan.a_off[flat] = ia * a_mat;
        plan.b_off[flat] = ib * b_mat;
    }
    return plan;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.dim() < 2 || b.dim() < 2) {
        throw DimensionError("matmul needs rank >= 2, got " + to_string(a.shape()) + " and " +
                             to_string(b.shape()));
    }
    std::size_t m = a.shape()[a.dim() - 2], k = a.shape()[a.dim() - 1];
    std::size_t k2 = b.shape()[b.dim() - 2], n = b.shape()[b.dim() - 1];
    if (k != k2) {
        throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
    }
    auto plan = plan_batches(a.shape(), b.shape(), m * k, k * n);
    std::size_t nb = plan.a_off.size();
    Shape out_shape = plan.out_batch;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<T> out(nb * m * n);
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    for (std::size_t i = 0; i < nb; ++i) {
        Map<T>(out.data() + i * m * n, m, n).noalias() =
            MapC<T>(pa + plan.a_off[i], m, k) * MapC<T>(pb + plan.b_off[i], k, n);
    }
    return make_result<T>(
        std::move(out_shape), std::move(out), "matmul", {a, b},
        [plan, m, k, n](NodeT<T>& self) {
            const T* g = self.grad.data();
            const T* va = self.inputs[0]->value.data();
            const T* vb = self.inputs[1]->value.data();
            auto ga = sink(self, 0);
            auto gb = sink(self, 1);
            for (std::size_t i = 0; i < plan.a_off.size(); ++i) {
                MapC<T> dy(g + i * m * n, m, n);
                if (!ga.empty()) {
                    Map<T>(ga.data() + plan.a_off[i], m, k).noalias() +=
                        dy * MapC<T>(vb + plan.b_off[i], k, n).transpose();
                }
                if (!gb.empty()) {
                    Map<T>(gb.data() + plan.b_off[i], k, n).noalias() +=
                        MapC<T>(va + plan.a_off[i], m, k).transpose() * dy;
                }
            }
        });
}

namespace {

struct ConvGeom {
    std::size_t B, C, T, N, Co, kt, kn, To, No, stride, pad;
    std::size_t rows() const { return C * kt * kn; }
    std::size_t cols() const { return To * No; }
    bool pointwise() const { return kt == 1 && kn == 1 && stride == 1 && pad == 0; }
};

// cols[(c,dt,dn), (to,no)] = x[c, to*stride + dt - pad, no + dn]
template <typename T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t dt = 0; dt < g.kt; ++dt)
            for (std::size_t dn = 0; dn < g.kn; ++dn) {
                T* row = cols + ((c * g.kt + dt) * g.kn + dn) * g.cols();
                for (std::size_t to = 0; to < g.To; ++to) {
                    long t = static_cast<long>(to * g.stride + dt) - static_cast<long>(g.pad);
                    T* dst = row + to * g.No;
                    if (t < 0 || t >= static_cast<long>(g.T)) {
                        std::fill(dst, dst + g.No, T(0));
                    } else {
                        const T* src = x + (c * g.T + static_cast<std::size_t>(t)) * g.N + dn;
                        std::copy(src, src + g.No, dst);
                    }
                }
            }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* cols, T* dx) {
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t dt = 0; dt < g.kt; ++dt)
            for (std::size_t dn = 0; dn < g.kn; ++dn) {
                const T* row = cols + ((c * g.kt + dt) * g.kn + dn) * g.cols();
                for (std::size_t to = 0; to < g.To; ++to) {
                    long t = static_cast<long>(to * g.stride + dt) - static_cast<long>(g.pad);
                    if (t < 0 || t >= static_cast<long>(g.T)) continue;
                    T* dst = dx + (c * g.T + static_cast<std::size_t>(t)) * g.N + dn;
                    const T* src = row + to * g.No;
                    for (std::size_t n = 0; n < g.No; ++n) dst[n] += src[n];
                }
            }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, Conv2dOptions opts) {
    if (x.dim() != 4 || kernel.dim() != 4) {
        throw DimensionError("conv2d expects x[B,C,T,N] and kernel[Co,C,kt,kn], got " +
                             to_string(x.shape()) + " and " + to_string(kernel.shape()));
    }
    if (opts.stride_t < 1) throw ValidationError("conv2d: stride must be >= 1");
    ConvGeom g{};
    g.B = x.size(0);
    g.C = x.size(1);
    g.T = x.size(2);
    g.N = x.size(3);
    g.Co = kernel.size(0);
    g.kt = kernel.size(2);
    g.kn = kernel.size(3);
    g.stride = opts.stride_t;
    g.pad = opts.pad_t;
    if (kernel.size(1) != g.C) {
        throw DimensionError("conv2d: input channels of " + to_string(x.shape()) +
                             " do not match kernel " + to_string(kernel.shape()));
    }
    if (g.kt > g.T + 2 * g.pad || g.kn > g.N) {
        throw DimensionError("conv2d: kernel " + to_string(kernel.shape()) +
                             " larger than padded input " + to_string(x.shape()));
    }
    g.To = (g.T + 2 * g.pad - g.kt) / g.stride + 1;
    g.No = g.N - g.kn + 1;

    std::vector<T> out(g.B * g.Co * g.cols());
    std::vector<T> cols(g.pointwise() ? 0 : g.rows() * g.cols());
    const T* px = x.data().data();
    MapC<T> w(kernel.data().data(), g.Co, g.rows());
    for (std::size_t b = 0; b < g.B; ++b) {
        const T* xb = px + b * g.C * g.T * g.N;
        const T* src = xb;
        if (!g.pointwise()) {
            im2col(g, xb, cols.data());
            src = cols.data();
        }
        Map<T>(out.data() + b * g.Co * g.cols(), g.Co, g.cols()).noalias() =
            w * MapC<T>(src, g.rows(), g.cols());
    }
    return make_result<T>(
        {g.B, g.Co, g.To, g.No}, std::move(out), "conv2d", {x, kernel}, [g](NodeT<T>& self) {
            const T* vx = self.inputs[0]->value.data();
            const T* vw = self.inputs[1]->value.data();
            auto gx = sink(self, 0);
            auto gw = sink(self, 1);
            std::vector<T> cols(g.pointwise() ? 0 : g.rows() * g.cols());
            std::vector<T> dcols(g.pointwise() || gx.empty() ? 0 : g.rows() * g.cols());
            MapC<T> w(vw, g.Co, g.rows());
            for (std::size_t b = 0; b < g.B; ++b) {
                MapC<T> dy(self.grad.data() + b * g.Co * g.cols(), g.Co, g.cols());
                const T* xb = vx + b * g.C * g.T * g.N;
                if (!gw.empty()) {
                    const T* src = xb;
                    if (!g.pointwise()) {
                        im2col(g, xb, cols.data());
                        src = cols.data();
                    }
                    Map<T>(gw.data(), g.Co, g.rows()).noalias() +=
                        dy * MapC<T>(src, g.rows(), g.cols()).transpose();
                }
                if (!gx.empty()) {
                    T* dxb = gx.data() + b * g.C * g.T * g.N;
                    if (g.pointwise()) {
                        Map<T>(dxb, g.rows(), g.cols()).noalias() += w.transpose() * dy;
                    } else {
                        Map<T>(dcols.data(), g.rows(), g.cols()).noalias() = w.transpose() * dy;
                        col2im_add(g, dcols.data(), dxb);
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training) {
    if (x.dim() < 2) throw DimensionError("batch_norm needs rank >= 2, got " + to_string(x.shape()));
    std::size_t B = x.size(0), C = x.size(1);
    std::size_t S = x.numel() / (B * C);
    if (gamma.numel() != C || beta.numel() != C || state.running_mean.size() != C ||
        state.running_var.size() != C) {
        throw DimensionError("batch_norm: " + std::to_string(C) + " channels in " +
                             to_string(x.shape()) + " but affine/statistics have " +
                             std::to_string(gamma.numel()));
    }
    const T* px = x.data().data();
    const T* pg = gamma.data().data();
    const T* pb = beta.data().data();
    std::vector<T> mean(C), invstd(C);
    const double M = static_cast<double>(B * S);
    if (training) {
        for (std::size_t c = 0; c < C; ++c) {
            double s = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* row = px + (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i) s += row[i];
            }
            double mu = s / M, ss = 0;
            for (std::size_t b = 0; b < B; ++b) {
                const T* row = px + (b * C + c) * S;
                for (std::size_t i = 0; i < S; ++i) {
                    double d = row[i] - mu;
                    ss += d * d;
                }
            }
            double var = ss / M;
            mean[c] = static_cast<T>(mu);
            invstd[c] = static_cast<T>(1.0 / std::sqrt(var + state.eps));
            double unbiased = M > 1 ? ss / (M - 1) : var;
            state.running_mean[c] =
                static_cast<T>((1 - state.momentum) * state.running_mean[c] + state.momentum * mu);
            state.running_var[c] = static_cast<T>((1 - state.momentum) * state.running_var[c] +
                                                  state.momentum * unbiased);
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            invstd[c] = static_cast<T>(1.0 / std::sqrt(double(state.running_var[c]) + state.eps));
        }
    }
    std::vector<T> out(x.numel());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            const T* row = px + (b * C + c) * S;
            T* dst = out.data() + (b * C + c) * S;
            T a = pg[c] * invstd[c];
            T o = pb[c] - mean[c] * a;
            for (std::size_t i = 0; i < S; ++i) dst[i] = row[i] * a + o;
        }
    return make_result<T>(
        x.shape(), std::move(out), "batch_norm", {x, gamma, beta},
        [B, C, S, M, mean, invstd, training](NodeT<T>& self) {
            const T* vx = self.inputs[0]->value.data();
            const T* vg = self.inputs[1]->value.data();
            const T* dy = self.grad.data();
            auto gx = sink(self, 0);
            auto gg = sink(self, 1);
            auto gb = sink(self, 2);
            for (std::size_t c = 0; c < C; ++c) {
                double sdy = 0, sdyx = 0;
                for (std::size_t b = 0; b < B; ++b) {
                    std::size_t base = (b * C + c) * S;
                    for (std::size_t i = 0; i < S; ++i) {
                        double xh = (vx[base + i] - mean[c]) * invstd[c];
                        sdy += dy[base + i];
                        sdyx += dy[base + i] * xh;
                    }
                }
                if (!gg.empty()) gg[c] += static_cast<T>(sdyx);
                if (!gb.empty()) gb[c] += static_cast<T>(sdy);
                if (gx.empty()) continue;
                double k = double(vg[c]) * invstd[c];
                for (std::size_t b = 0; b < B; ++b) {
                    std::size_t base = (b * C + c) * S;
                    for (std::size_t i = 0; i < S; ++i) {
                        if (training) {
                            double xh = (vx[base + i] - mean[c]) * invstd[c];
                            gx[base + i] +=
                                static_cast<T>(k * (dy[base + i] - sdy / M - xh * sdyx / M));
                        } else {
                            gx[base + i] += static_cast<T>(k * dy[base + i]);
                        }
                    }
                }
            }
        });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(x.numel());
    auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > T(0) ? v[i] : T(0);
    return make_result<T>(x.shape(), std::move(out), "relu", {x}, [](NodeT<T>& self) {
        auto gx = sink(self, 0);
        const auto& v = self.inputs[0]->value;
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (v[i] > T(0)) gx[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
    require_same_shape(x.shape(), y.shape(), "add");
    std::vector<T> out(x.numel());
    auto a = x.data(), b = y.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return make_result<T>(x.shape(), std::move(out), "add", {x, y}, [](NodeT<T>& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto g = sink(self, k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& x, const Tensor<T>& y) {
    require_same_shape(x.shape(), y.shape(), "sub");
    std::vector<T> out(x.numel());
    auto a = x.data(), b = y.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return make_result<T>(x.shape(), std::move(out), "sub", {x, y}, [](NodeT<T>& self) {
        auto ga = sink(self, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
        auto gb = sink(self, 1);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
    require_same_shape(x.shape(), y.shape(), "mul");
    std::vector<T> out(x.numel());
    auto a = x.data(), b = y.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return make_result<T>(x.shape(), std::move(out), "mul", {x, y}, [](NodeT<T>& self) {
        const auto& va = self.inputs[0]->value;
        const auto& vb = self.inputs[1]->value;
        auto ga = sink(self, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * vb[i];
        auto gb = sink(self, 1);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * va[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    std::vector<T> out(x.numel());
    auto a = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return make_result<T>(x.shape(), std::move(out), "scale", {x}, [s](NodeT<T>& self) {
        auto g = sink(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

namespace {

// out[j] = in[src[j]] for a permutation; src is the gather index.
std::vector<std::size_t> permutation_gather(const Shape& in, const std::vector<std::size_t>& axes,
                                            Shape& out_shape) {
    std::size_t r = in.size();
    if (axes.size() != r) {
        throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                             to_string(in));
    }
    std::vector<bool> used(r, false);
    out_shape.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (axes[i] >= r || used[axes[i]]) throw DimensionError("permute: axes are not a permutation");
        used[axes[i]] = true;
        out_shape[i] = in[axes[i]];
    }
    auto in_strides = strides_of(in);
    std::vector<std::size_t> step(r);
    for (std::size_t i = 0; i < r; ++i) step[i] = in_strides[axes[i]];
    std::size_t n = numel(in);
    std::vector<std::size_t> src(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t j = 0; j < n; ++j) {
        src[j] = off;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out_shape[d]) {
                off += step[d];
                break;
            }
            off -= step[d] * (out_shape[d] - 1);
            idx[d] = 0;
        }
    }
    return src;
}

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes) {
    Shape out_shape;
    auto src = permutation_gather(x.shape(), axes, out_shape);
    std::vector<T> out(x.numel());
    auto v = x.data();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = v[src[j]];
    return make_result<T>(std::move(out_shape), std::move(out), "permute", {x},
                          [src = std::move(src)](NodeT<T>& self) {
                              auto g = sink(self, 0);
                              for (std::size_t j = 0; j < src.size(); ++j) g[src[j]] += self.grad[j];
                          });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " +
                             to_string(shape));
    }
    std::vector<T> out(x.data().begin(), x.data().end());
    return make_result<T>(std::move(shape), std::move(out), "reshape", {x}, [](NodeT<T>& self) {
        auto g = sink(self, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> transpose_last(const Tensor<T>& x) {
    if (x.dim() < 2) throw DimensionError("transpose_last needs rank >= 2");
    std::vector<std::size_t> axes(x.dim());
    std::iota(axes.begin(), axes.end(), 0);
    std::swap(axes[x.dim() - 1], axes[x.dim() - 2]);
    return permute(x, axes);
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    double s = 0;
    for (auto v : x.data()) s += v;
    return make_result<T>(Shape{}, {static_cast<T>(s)}, "sum", {x}, [](NodeT<T>& self) {
        auto g = sink(self, 0);
        for (auto& v : g) v += self.grad[0];
    });
}

namespace {

template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& x, std::size_t axis, T factor, const char* op) {
    if (axis >= x.dim()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for " + to_string(x.shape()));
    }
    const auto& s = x.shape();
    std::size_t outer = 1, inner = 1, len = s[axis];
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Shape out_shape;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (i != axis) out_shape.push_back(s[i]);
    std::vector<T> out(outer * inner, T(0));
    auto v = x.data();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l) {
            const T* src = v.data() + (o * len + l) * inner;
            T* dst = out.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    for (auto& o : out) o *= factor;
    return make_result<T>(std::move(out_shape), std::move(out), op, {x},
                          [outer, inner, len, factor](NodeT<T>& self) {
                              auto g = sink(self, 0);
                              for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t l = 0; l < len; ++l) {
                                      T* dst = g.data() + (o * len + l) * inner;
                                      const T* src = self.grad.data() + o * inner;
                                      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * factor;
                                  }
                          });
}

}  // namespace

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
    return reduce_axis(x, axis, T(1), "sum_axis");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.dim()) throw DimensionError("mean: axis out of range for " + to_string(x.shape()));
    return reduce_axis(x, axis, T(1) / static_cast<T>(x.size(axis)), "mean_axis");
}

template <typename T>
Tensor<T> mean_pool_global(const Tensor<T>& x) {
    if (x.dim() < 2) throw DimensionError("mean_pool_global needs rank >= 2, got " + to_string(x.shape()));
    std::size_t B = x.size(0), C = x.size(1);
    std::size_t S = x.numel() / (B * C);
    return reduce_axis(reshape(x, {B, C, S}), 2, T(1) / static_cast<T>(S), "mean_pool_global");
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.dim() != 2 || w.dim() != 2 || b.dim() != 1 || x.size(1) != w.size(1) ||
        b.size(0) != w.size(0)) {
        throw DimensionError("linear: incompatible shapes x" + to_string(x.shape()) + " w" +
                             to_string(w.shape()) + " b" + to_string(b.shape()));
    }
    std::size_t B = x.size(0), F = x.size(1), O = w.size(0);
    std::vector<T> out(B * O);
    Map<T> y(out.data(), B, O);
    y.noalias() = MapC<T>(x.data().data(), B, F) * MapC<T>(w.data().data(), O, F).transpose();
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t o = 0; o < O; ++o) out[i * O + o] += b.data()[o];
    return make_result<T>({B, O}, std::move(out), "linear", {x, w, b}, [B, F, O](NodeT<T>& self) {
        MapC<T> dy(self.grad.data(), B, O);
        auto gx = sink(self, 0);
        auto gw = sink(self, 1);
        auto gb = sink(self, 2);
        if (!gx.empty())
            Map<T>(gx.data(), B, F).noalias() += dy * MapC<T>(self.inputs[1]->value.data(), O, F);
        if (!gw.empty())
            Map<T>(gw.data(), O, F).noalias() +=
                dy.transpose() * MapC<T>(self.inputs[0]->value.data(), B, F);
        if (!gb.empty())
            for (std::size_t i = 0; i < B; ++i)
                for (std::size_t o = 0; o < O; ++o) gb[o] += self.grad[i * O + o];
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    if (x.dim() < 1) throw DimensionError("softmax needs rank >= 1");
    std::size_t L = x.shape().back();
    std::size_t rows = x.numel() / L;
    std::vector<T> out(x.numel());
    auto v = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* src = v.data() + r * L;
        T* dst = out.data() + r * L;
        T mx = *std::max_element(src, src + L);
        double z = 0;
        for (std::size_t i = 0; i < L; ++i) z += std::exp(double(src[i] - mx));
        for (std::size_t i = 0; i < L; ++i) dst[i] = static_cast<T>(std::exp(double(src[i] - mx)) / z);
    }
    return make_result<T>(x.shape(), std::move(out), "softmax", {x}, [rows, L](NodeT<T>& self) {
        auto g = sink(self, 0);
        const auto& y = self.value;
        for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0;
            for (std::size_t i = 0; i < L; ++i) dot += self.grad[r * L + i] * y[r * L + i];
            for (std::size_t i = 0; i < L; ++i)
                g[r * L + i] += static_cast<T>(y[r * L + i] * (self.grad[r * L + i] - dot));
        }
    });
}

template <typename T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps) {
    if (x.dim() < 1) throw DimensionError("l2_normalize_rows needs rank >= 1");
    if (!(eps > T(0))) throw ValidationError("l2_normalize_rows: eps must be positive");
    std::size_t L = x.shape().back();
    std::size_t rows = x.numel() / L;
    std::vector<T> out(x.numel());
    std::vector<T> denom(rows);
    auto v = x.data();
    for (std::size_t r = 0; r < rows; ++r) {
        double ss = 0;
        for (std::size_t i = 0; i < L; ++i) ss += double(v[r * L + i]) * v[r * L + i];
        denom[r] = std::max(static_cast<T>(std::sqrt(ss)), eps);
        for (std::size_t i = 0; i < L; ++i) out[r * L + i] = v[r * L + i] / denom[r];
    }
    return make_result<T>(x.shape(), std::move(out), "l2_normalize_rows", {x},
                          [rows, L, denom, eps](NodeT<T>& self) {
                              auto g = sink(self, 0);
                              const auto& y = self.value;
                              for (std::size_t r = 0; r < rows; ++r) {
                                  const T* dy = self.grad.data() + r * L;
                                  T* dx = g.data() + r * L;
                                  if (denom[r] > eps) {
                                      double dot = 0;
                                      for (std::size_t i = 0; i < L; ++i) dot += dy[i] * y[r * L + i];
                                      for (std::size_t i = 0; i < L; ++i)
                                          dx[i] += static_cast<T>((dy[i] - y[r * L + i] * dot) / denom[r]);
                                  } else {
                                      for (std::size_t i = 0; i < L; ++i) dx[i] += dy[i] / eps;
                                  }
                              }
                          });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    if (logits.dim() != 2) {
        throw DimensionError("softmax_cross_entropy expects logits[B,K], got " +
                             to_string(logits.shape()));
    }
    std::size_t B = logits.size(0), K = logits.size(1);
    if (labels.size() != B) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                             " labels for batch of " + std::to_string(B));
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= K) {
            throw ValidationError("softmax_cross_entropy: label " + std::to_string(l) +
                                  " outside [0," + std::to_string(K) + ")");
        }
    }
    auto v = logits.data();
    std::vector<T> probs(B * K);
    double loss = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const T* z = v.data() + b * K;
        double mx = *std::max_element(z, z + K);
        double s = 0;
        for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - mx);
        double lse = mx + std::log(s);
        loss += lse - z[labels[b]];
        for (std::size_t k = 0; k < K; ++k) probs[b * K + k] = static_cast<T>(std::exp(z[k] - lse));
    }
    std::vector<int> lab(labels.begin(), labels.end());
    return make_result<T>(Shape{}, {static_cast<T>(loss / B)}, "softmax_cross_entropy", {logits},
                          [B, K, probs = std::move(probs), lab = std::move(lab)](NodeT<T>& self) {
                              auto g = sink(self, 0);
                              T up = self.grad[0] / static_cast<T>(B);
                              for (std::size_t b = 0; b < B; ++b)
                                  for (std::size_t k = 0; k < K; ++k) {
                                      T p = probs[b * K + k] - (static_cast<int>(k) == lab[b] ? T(1) : T(0));
                                      g[b * K + k] += p * up;
                                  }
                          });
}

#define DGCN_INSTANTIATE_OPS(T)                                                                 \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, Conv2dOptions);               \
    template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                  BatchNormState<T>&, bool);                                    \
    template Tensor<T> relu(const Tensor<T>&);                                                  \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                 \
    template Tensor<T> scale(const Tensor<T>&, T);                                              \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);              \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                        \
    template Tensor<T> transpose_last(const Tensor<T>&);                                        \
    template Tensor<T> sum(const Tensor<T>&);                                                   \
    template Tensor<T> sum(const Tensor<T>&, std::size_t);                                      \
    template Tensor<T> mean(const Tensor<T>&, std::size_t);                                     \
    template Tensor<T> mean_pool_global(const Tensor<T>&);                                      \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);            \
    template Tensor<T> softmax(const Tensor<T>&);                                               \
    template Tensor<T> l2_normalize_rows(const Tensor<T>&, T);                                  \
    template Tensor<T> softmax_cross_entropy(const Tensor<T>&, std::span<const int>);

DGCN_INSTANTIATE_OPS(float)
DGCN_INSTANTIATE_OPS(double)

}  // namespace dgcn

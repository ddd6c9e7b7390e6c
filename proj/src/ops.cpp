#include "dynfg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace dynfg {

namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
using ImplPtr = std::shared_ptr<detail::TensorImpl>;

std::span<Real> grad_slot(const ImplPtr& t) {
    if (!t || !t->wants_grad()) return {};
    return t->grad_buffer();
}

const Real* raw(const ImplPtr& t) { return t->storage->data(); }

Tensor finish(Shape shape, std::vector<Real> values, const char* op) {
    check_finite(values, op);
    return Tensor::make_result(std::move(shape), std::move(values));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
    if (t.ndim() != rank) {
        std::ostringstream os;
        os << op << ": " << what << " must have rank " << rank << ", got shape " << shape_str(t.shape());
        throw ShapeError(os.str());
    }
}

struct ConvGeom {
    Index batch, in_ch, height, width;
    Index out_ch, kh, kw;
    Index out_h, out_w;
    Index stride, pad;

    Index patch() const { return in_ch * kh * kw; }
    Index pixels() const { return out_h * out_w; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

ConvGeom make_geom(const Shape& in, Index out_ch, Index filt_in, Index kh, Index kw, Conv2dParams p, const char* op) {
    if (p.stride < 1) throw ShapeError(std::string(op) + ": stride must be positive");
    if (p.padding < 0) throw ShapeError(std::string(op) + ": padding must be non-negative");
    ConvGeom g{in[0], in[1], in[2], in[3], out_ch, kh, kw, 0, 0, p.stride, p.padding};
    if (filt_in != g.in_ch) {
        std::ostringstream os;
        os << op << ": filters expect " << filt_in << " input channels, input has " << g.in_ch;
        throw ShapeError(os.str());
    }
    if (kh > g.height + 2 * g.pad || kw > g.width + 2 * g.pad) {
        std::ostringstream os;
        os << op << ": kernel " << kh << "x" << kw << " exceeds padded input " << g.height + 2 * g.pad << "x"
           << g.width + 2 * g.pad;
        throw ShapeError(os.str());
    }
    g.out_h = (g.height + 2 * g.pad - kh) / g.stride + 1;
    g.out_w = (g.width + 2 * g.pad - kw) / g.stride + 1;
    if (g.out_h <= 0 || g.out_w <= 0) throw ShapeError(std::string(op) + ": zero-sized output");
    return g;
}

// Output columns [lo, hi) whose input column ow*stride - pad + j is in range.
std::pair<Index, Index> valid_cols(const ConvGeom& g, Index j) {
    const Index off = j - g.pad;
    Index lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
    Index hi = g.width - 1 - off < 0 ? 0 : (g.width - 1 - off) / g.stride + 1;
    hi = std::min(hi, g.out_w);
    lo = std::min(lo, hi);
    return {lo, hi};
}

// cols is [Cin*kh*kw, out_h*out_w], row-major.
void im2col(const Real* x, const ConvGeom& g, Real* cols) {
    const Index P = g.pixels();
    for (Index c = 0; c < g.in_ch; ++c) {
        const Real* plane = x + c * g.height * g.width;
        for (Index i = 0; i < g.kh; ++i) {
            for (Index j = 0; j < g.kw; ++j) {
                Real* row = cols + ((c * g.kh + i) * g.kw + j) * P;
                const auto [lo, hi] = valid_cols(g, j);
                const Index off = j - g.pad;
                for (Index oh = 0; oh < g.out_h; ++oh) {
                    const Index ih = oh * g.stride - g.pad + i;
                    Real* dst = row + oh * g.out_w;
                    if (ih < 0 || ih >= g.height) {
                        std::fill(dst, dst + g.out_w, Real(0));
                        continue;
                    }
                    const Real* src = plane + ih * g.width + off;
                    std::fill(dst, dst + lo, Real(0));
                    if (g.stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (Index ow = lo; ow < hi; ++ow) dst[ow] = src[ow * g.stride];
                    }
                    std::fill(dst + hi, dst + g.out_w, Real(0));
                }
            }
        }
    }
}

void col2im_add(const Real* cols, const ConvGeom& g, Real* dx) {
    const Index P = g.pixels();
    for (Index c = 0; c < g.in_ch; ++c) {
        Real* plane = dx + c * g.height * g.width;
        for (Index i = 0; i < g.kh; ++i) {
            for (Index j = 0; j < g.kw; ++j) {
                const Real* row = cols + ((c * g.kh + i) * g.kw + j) * P;
                const auto [lo, hi] = valid_cols(g, j);
                const Index off = j - g.pad;
                for (Index oh = 0; oh < g.out_h; ++oh) {
                    const Index ih = oh * g.stride - g.pad + i;
                    if (ih < 0 || ih >= g.height) continue;
                    Real* dst = plane + ih * g.width + off;
                    const Real* src = row + oh * g.out_w;
                    if (g.stride == 1) {
                        for (Index ow = lo; ow < hi; ++ow) dst[ow] += src[ow];
                    } else {
                        for (Index ow = lo; ow < hi; ++ow) dst[ow * g.stride] += src[ow];
                    }
                }
            }
        }
    }
}

// Few output channels make im2col + GEMM memory bound; stride-1 layers of
// that kind accumulate shifted input rows directly instead.
bool use_direct(const ConvGeom& g) { return g.stride == 1 && g.out_ch <= 4 && !g.pointwise(); }

// The direct path works on a zero-padded copy of the input. Output rows are
// computed at the padded row pitch, so each filter tap is one contiguous
// multiply-add over out_h rows; the extra columns are discarded.
struct Padded {
    Index hp, wp, span;
    explicit Padded(const ConvGeom& g)
        : hp(g.height + 2 * g.pad), wp(g.width + 2 * g.pad), span((g.out_h - 1) * (g.width + 2 * g.pad) + g.out_w) {}
};

void pad_input(const Real* x, const ConvGeom& g, const Padded& pd, Real* xp) {
    std::fill(xp, xp + g.in_ch * pd.hp * pd.wp, Real(0));
    for (Index c = 0; c < g.in_ch; ++c)
        for (Index h = 0; h < g.height; ++h) {
            const Real* src = x + (c * g.height + h) * g.width;
            std::copy(src, src + g.width, xp + (c * pd.hp + h + g.pad) * pd.wp + g.pad);
        }
}

void direct_forward(const Real* x, const Real* w, const ConvGeom& g, Real* out) {
    const Padded pd(g);
    std::vector<Real> xp(static_cast<std::size_t>(g.in_ch * pd.hp * pd.wp));
    std::vector<Real> op(static_cast<std::size_t>(g.out_h * pd.wp));
    pad_input(x, g, pd, xp.data());
    for (Index co = 0; co < g.out_ch; ++co) {
        std::fill(op.begin(), op.end(), Real(0));
        Real* dst = op.data();
        for (Index c = 0; c < g.in_ch; ++c)
            for (Index i = 0; i < g.kh; ++i)
                for (Index j = 0; j < g.kw; ++j) {
                    const Real wv = w[((co * g.in_ch + c) * g.kh + i) * g.kw + j];
                    const Real* src = xp.data() + (c * pd.hp + i) * pd.wp + j;
                    for (Index t = 0; t < pd.span; ++t) dst[t] += wv * src[t];
                }
        for (Index oh = 0; oh < g.out_h; ++oh) {
            std::copy(dst + oh * pd.wp, dst + oh * pd.wp + g.out_w, out + (co * g.out_h + oh) * g.out_w);
        }
    }
}

void direct_backward(const Real* x, const Real* w, const Real* dy, const ConvGeom& g, Real* dw, Real* dx) {
    const Padded pd(g);
    std::vector<Real> xp(static_cast<std::size_t>(g.in_ch * pd.hp * pd.wp));
    std::vector<Real> dxp(dx ? xp.size() : 0, Real(0));
    std::vector<Real> gp(static_cast<std::size_t>(g.out_h * pd.wp), Real(0));
    if (dw) pad_input(x, g, pd, xp.data());
    for (Index co = 0; co < g.out_ch; ++co) {
        for (Index oh = 0; oh < g.out_h; ++oh) {
            const Real* src = dy + (co * g.out_h + oh) * g.out_w;
            std::copy(src, src + g.out_w, gp.data() + oh * pd.wp);
        }
        const Real* gy = gp.data();
        for (Index c = 0; c < g.in_ch; ++c)
            for (Index i = 0; i < g.kh; ++i)
                for (Index j = 0; j < g.kw; ++j) {
                    const Index widx = ((co * g.in_ch + c) * g.kh + i) * g.kw + j;
                    const Index base = (c * pd.hp + i) * pd.wp + j;
                    if (dw) {
                        const Real* src = xp.data() + base;
                        dw[widx] += ConstVecMap(gy, pd.span).dot(ConstVecMap(src, pd.span));
                    }
                    if (dx) {
                        const Real wv = w[widx];
                        Real* d = dxp.data() + base;
                        for (Index t = 0; t < pd.span; ++t) d[t] += wv * gy[t];
                    }
                }
    }
    if (dx) {
        for (Index c = 0; c < g.in_ch; ++c)
            for (Index h = 0; h < g.height; ++h) {
                const Real* src = dxp.data() + (c * pd.hp + h + g.pad) * pd.wp + g.pad;
                Real* d = dx + (c * g.height + h) * g.width;
                for (Index t = 0; t < g.width; ++t) d[t] += src[t];
            }
    }
}

// out_b = W * cols(x_b). Shared by conv2d and conv2d_per_sample.
void conv_sample_forward(const Real* x_b, const Real* w, const ConvGeom& g, Real* out_b, std::vector<Real>& cols) {
    if (use_direct(g)) {
        direct_forward(x_b, w, g, out_b);
        return;
    }
    const Index L = g.patch(), P = g.pixels();
    const Real* c = x_b;
    if (!g.pointwise()) {
        im2col(x_b, g, cols.data());
        c = cols.data();
    }
    MatMap(out_b, g.out_ch, P).noalias() = ConstMatMap(w, g.out_ch, L) * ConstMatMap(c, L, P);
}

void conv_sample_backward(const Real* x_b, const Real* w, const Real* dy_b, const ConvGeom& g, Real* dw, Real* dx_b,
                          std::vector<Real>& cols) {
    if (use_direct(g)) {
        direct_backward(x_b, w, dy_b, g, dw, dx_b);
        return;
    }
    const Index L = g.patch(), P = g.pixels();
    ConstMatMap dy(dy_b, g.out_ch, P);
    if (dw) {
        const Real* c = x_b;
        if (!g.pointwise()) {
            im2col(x_b, g, cols.data());
            c = cols.data();
        }
        MatMap(dw, g.out_ch, L).noalias() += dy * ConstMatMap(c, L, P).transpose();
    }
    if (dx_b) {
        if (g.pointwise()) {
            MatMap(dx_b, L, P).noalias() += ConstMatMap(w, g.out_ch, L).transpose() * dy;
        } else {
            MatMap(cols.data(), L, P).noalias() = ConstMatMap(w, g.out_ch, L).transpose() * dy;
            col2im_add(cols.data(), g, dx_b);
        }
    }
}

void add_bias_planes(std::vector<Real>& out, const Real* bias, Index batch, Index ch, Index plane) {
    for (Index b = 0; b < batch; ++b)
        for (Index c = 0; c < ch; ++c) {
            Real* p = out.data() + (b * ch + c) * plane;
            for (Index i = 0; i < plane; ++i) p[i] += bias[c];
        }
}

void bias_grad(std::span<Real> db, std::span<const Real> g, Index batch, Index ch, Index plane) {
    for (Index b = 0; b < batch; ++b)
        for (Index c = 0; c < ch; ++c) {
            const Real* p = g.data() + (b * ch + c) * plane;
            Real s = 0;
            for (Index i = 0; i < plane; ++i) s += p[i];
            db[c] += s;
        }
}

void check_bias(const Tensor& bias, Index channels, const char* op) {
    if (!bias.defined()) return;
    if (bias.ndim() != 1 || bias.dim(0) != channels) {
        std::ostringstream os;
        os << op << ": bias must have shape [" << channels << "], got " << shape_str(bias.shape());
        throw ShapeError(os.str());
    }
}

Tensor conv_impl(const Tensor& input, const Tensor& filters, const Tensor& bias, Conv2dParams p, bool per_sample) {
    const char* op = per_sample ? "conv2d_per_sample" : "conv2d";
    require_rank(input, 4, op, "input");
    require_rank(filters, per_sample ? 5 : 4, op, "filters");
    const Shape& fs = filters.shape();
    const std::size_t o = per_sample ? 1 : 0;
    if (per_sample && fs[0] != input.dim(0)) {
        std::ostringstream os;
        os << op << ": filters carry " << fs[0] << " sample sets but the batch has " << input.dim(0);
        throw ShapeError(os.str());
    }
    const ConvGeom g = make_geom(input.shape(), fs[o], fs[o + 1], fs[o + 2], fs[o + 3], p, op);
    check_bias(bias, g.out_ch, op);

    const Index in_stride = g.in_ch * g.height * g.width;
    const Index out_stride = g.out_ch * g.pixels();
    const Index w_stride = per_sample ? g.out_ch * g.patch() : 0;
    std::vector<Real> out(static_cast<std::size_t>(g.batch * out_stride));
    std::vector<Real> cols((g.pointwise() || use_direct(g)) ? 0 : static_cast<std::size_t>(g.patch() * g.pixels()));
    const Real* x = input.data().data();
    const Real* w = filters.data().data();
    for (Index b = 0; b < g.batch; ++b) {
        conv_sample_forward(x + b * in_stride, w + b * w_stride, g, out.data() + b * out_stride, cols);
    }
    if (bias.defined()) add_bias_planes(out, bias.data().data(), g.batch, g.out_ch, g.pixels());

    Tensor result = finish({g.batch, g.out_ch, g.out_h, g.out_w}, std::move(out), op);
    ImplPtr xi = input.impl(), wi = filters.impl(), bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<Tensor> inputs{input, filters};
    if (bias.defined()) inputs.push_back(bias);
    attach_grad_fn(result, op, inputs, [=](std::span<const Real> gy) {
        auto dx = grad_slot(xi);
        auto dw = grad_slot(wi);
        std::vector<Real> scratch((g.pointwise() || use_direct(g)) ? 0 : static_cast<std::size_t>(g.patch() * g.pixels()));
        for (Index b = 0; b < g.batch; ++b) {
            conv_sample_backward(raw(xi) + b * in_stride, raw(wi) + b * w_stride, gy.data() + b * out_stride, g,
                                 dw.empty() ? nullptr : dw.data() + b * w_stride,
                                 dx.empty() ? nullptr : dx.data() + b * in_stride, scratch);
        }
        if (bi) {
            auto db = grad_slot(bi);
            if (!db.empty()) bias_grad(db, gy, g.batch, g.out_ch, g.pixels());
        }
    });
    return result;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
    auto in = x.data();
    std::vector<Real> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    Tensor result = finish(x.shape(), std::move(out), op);
    ImplPtr xi = x.impl();
    attach_grad_fn(result, op, {x}, [xi, deriv](std::span<const Real> g) {
        auto dx = grad_slot(xi);
        const Real* v = raw(xi);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv(v[i]);
    });
    return result;
}

}  // namespace

Index conv_out_extent(Index in, Index kernel, Index stride, Index padding) {
    return (in + 2 * padding - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& filters, const Tensor& bias, Conv2dParams p) {
    return conv_impl(input, filters, bias, p, false);
}

Tensor conv2d_per_sample(const Tensor& input, const Tensor& filters, const Tensor& bias, Conv2dParams p) {
    return conv_impl(input, filters, bias, p, true);
}

Tensor max_pool2d(const Tensor& input, Index kernel, Index stride) {
    require_rank(input, 4, "max_pool2d", "input");
    const Index B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (kernel < 1 || stride < 1) throw ShapeError("max_pool2d: kernel and stride must be positive");
    if (kernel > H || kernel > W) {
        throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " larger than input " + std::to_string(H) +
                         "x" + std::to_string(W));
    }
    const Index Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
    std::vector<Real> out(static_cast<std::size_t>(B * C * Ho * Wo));
    std::vector<Index> arg(out.size());
    const Real* x = input.data().data();
    std::size_t o = 0;
    for (Index bc = 0; bc < B * C; ++bc) {
        const Real* plane = x + bc * H * W;
        for (Index oh = 0; oh < Ho; ++oh)
            for (Index ow = 0; ow < Wo; ++ow, ++o) {
                Index best = (oh * stride) * W + ow * stride;
                for (Index i = 0; i < kernel; ++i)
                    for (Index j = 0; j < kernel; ++j) {
                        const Index idx = (oh * stride + i) * W + ow * stride + j;
                        if (plane[idx] > plane[best]) best = idx;  // strict: first index wins ties
                    }
                out[o] = plane[best];
                arg[o] = bc * H * W + best;
            }
    }
    Tensor result = finish({B, C, Ho, Wo}, std::move(out), "max_pool2d");
    ImplPtr xi = input.impl();
    attach_grad_fn(result, "max_pool2d", {input}, [xi, arg = std::move(arg)](std::span<const Real> g) {
        auto dx = grad_slot(xi);
        for (std::size_t i = 0; i < g.size(); ++i) dx[static_cast<std::size_t>(arg[i])] += g[i];
    });
    return result;
}

Tensor avg_pool2d(const Tensor& input, Index kernel, Index stride) {
    require_rank(input, 4, "avg_pool2d", "input");
    const Index B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (kernel < 1 || stride < 1) throw ShapeError("avg_pool2d: kernel and stride must be positive");
    if (kernel > H || kernel > W) {
        throw ShapeError("avg_pool2d: kernel " + std::to_string(kernel) + " larger than input " + std::to_string(H) +
                         "x" + std::to_string(W));
    }
    const Index Ho = (H - kernel) / stride + 1, Wo = (W - kernel) / stride + 1;
    const Real inv = Real(1) / static_cast<Real>(kernel * kernel);
    std::vector<Real> out(static_cast<std::size_t>(B * C * Ho * Wo));
    const Real* x = input.data().data();
    std::size_t o = 0;
    for (Index bc = 0; bc < B * C; ++bc) {
        const Real* plane = x + bc * H * W;
        for (Index oh = 0; oh < Ho; ++oh)
            for (Index ow = 0; ow < Wo; ++ow, ++o) {
                Real s = 0;
                for (Index i = 0; i < kernel; ++i)
                    for (Index j = 0; j < kernel; ++j) s += plane[(oh * stride + i) * W + ow * stride + j];
                out[o] = s * inv;
            }
    }
    Tensor result = finish({B, C, Ho, Wo}, std::move(out), "avg_pool2d");
    ImplPtr xi = input.impl();
    attach_grad_fn(result, "avg_pool2d", {input}, [=](std::span<const Real> g) {
        auto dx = grad_slot(xi);
        std::size_t o2 = 0;
        for (Index bc = 0; bc < B * C; ++bc) {
            Real* plane = dx.data() + bc * H * W;
            for (Index oh = 0; oh < Ho; ++oh)
                for (Index ow = 0; ow < Wo; ++ow, ++o2) {
                    const Real v = g[o2] * inv;
                    for (Index i = 0; i < kernel; ++i)
                        for (Index j = 0; j < kernel; ++j) plane[(oh * stride + i) * W + ow * stride + j] += v;
                }
        }
    });
    return result;
}

Tensor upsample_nearest(const Tensor& input, Index factor) {
    require_rank(input, 4, "upsample_nearest", "input");
    if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
    const Index B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const Index Ho = H * factor, Wo = W * factor;
    std::vector<Real> out(static_cast<std::size_t>(B * C * Ho * Wo));
    const Real* x = input.data().data();
    for (Index bc = 0; bc < B * C; ++bc)
        for (Index oh = 0; oh < Ho; ++oh)
            for (Index ow = 0; ow < Wo; ++ow)
                out[(bc * Ho + oh) * Wo + ow] = x[(bc * H + oh / factor) * W + ow / factor];
    Tensor result = finish({B, C, Ho, Wo}, std::move(out), "upsample_nearest");
    ImplPtr xi = input.impl();
    attach_grad_fn(result, "upsample_nearest", {input}, [=](std::span<const Real> g) {
        auto dx = grad_slot(xi);
        for (Index bc = 0; bc < B * C; ++bc)
            for (Index oh = 0; oh < Ho; ++oh)
                for (Index ow = 0; ow < Wo; ++ow)
                    dx[(bc * H + oh / factor) * W + ow / factor] += g[(bc * Ho + oh) * Wo + ow];
    });
    return result;
}

RunningStats RunningStats::fresh(Index channels) {
    return {Tensor::zeros({channels}), Tensor::full({channels}, Real(1))};
}

Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats& stats, Mode mode,
                    BatchNormParams p) {
    require_rank(input, 4, "batch_norm2d", "input");
    const Index B = input.dim(0), C = input.dim(1), HW = input.dim(2) * input.dim(3);
    for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &stats.mean, &stats.var}) {
        if (t->ndim() != 1 || t->dim(0) != C) {
            throw ShapeError("batch_norm2d: per-channel parameter has shape " + shape_str(t->shape()) +
                             ", expected [" + std::to_string(C) + "]");
        }
    }
    const Index n = B * HW;
    if (mode == Mode::Train && n < 2) {
        throw ShapeError("batch_norm2d: train mode needs more than one value per channel (batch " +
                         std::to_string(B) + ", spatial " + std::to_string(HW) + ")");
    }
    const Real* x = input.data().data();
    const Real* gm = gamma.data().data();
    const Real* bt = beta.data().data();

    std::vector<Real> mu(C), invstd(C);
    if (mode == Mode::Train) {
        auto rm = stats.mean.mutable_data();
        auto rv = stats.var.mutable_data();
        for (Index c = 0; c < C; ++c) {
            Real s = 0;
            for (Index b = 0; b < B; ++b) {
                const Real* px = x + (b * C + c) * HW;
                for (Index i = 0; i < HW; ++i) s += px[i];
            }
            const Real m = s / static_cast<Real>(n);
            Real v = 0;
            for (Index b = 0; b < B; ++b) {
                const Real* px = x + (b * C + c) * HW;
                for (Index i = 0; i < HW; ++i) v += (px[i] - m) * (px[i] - m);
            }
            const Real var = v / static_cast<Real>(n);
            mu[c] = m;
            invstd[c] = Real(1) / std::sqrt(var + p.eps);
            rm[c] = (Real(1) - p.momentum) * rm[c] + p.momentum * m;
            rv[c] = (Real(1) - p.momentum) * rv[c] + p.momentum * v / static_cast<Real>(n - 1);
        }
    } else {
        auto rm = stats.mean.data();
        auto rv = stats.var.data();
        for (Index c = 0; c < C; ++c) {
            mu[c] = rm[c];
            invstd[c] = Real(1) / std::sqrt(rv[c] + p.eps);
        }
    }

    std::vector<Real> xhat(input.data().size()), out(input.data().size());
    for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
            const Index off = (b * C + c) * HW;
            for (Index i = 0; i < HW; ++i) {
                xhat[off + i] = (x[off + i] - mu[c]) * invstd[c];
                out[off + i] = gm[c] * xhat[off + i] + bt[c];
            }
        }
    Tensor result = finish(input.shape(), std::move(out), "batch_norm2d");
    ImplPtr xi = input.impl(), gi = gamma.impl(), bi = beta.impl();
    const bool train = mode == Mode::Train;
    attach_grad_fn(result, "batch_norm2d", {input, gamma, beta},
                   [=, xhat = std::move(xhat), invstd = std::move(invstd)](std::span<const Real> g) {
                       auto dx = grad_slot(xi);
                       auto dg = grad_slot(gi);
                       auto db = grad_slot(bi);
                       const Real* gmv = raw(gi);
                       for (Index c = 0; c < C; ++c) {
                           Real sum_g = 0, sum_gx = 0;
                           for (Index b = 0; b < B; ++b) {
                               const Index off = (b * C + c) * HW;
                               for (Index i = 0; i < HW; ++i) {
                                   sum_g += g[off + i];
                                   sum_gx += g[off + i] * xhat[off + i];
                               }
                           }
                           if (!dg.empty()) dg[c] += sum_gx;
                           if (!db.empty()) db[c] += sum_g;
                           if (dx.empty()) continue;
                           const Real k = gmv[c] * invstd[c];
                           for (Index b = 0; b < B; ++b) {
                               const Index off = (b * C + c) * HW;
                               for (Index i = 0; i < HW; ++i) {
                                   if (train) {
                                       dx[off + i] += k * (g[off + i] - sum_g / static_cast<Real>(n) -
                                                           xhat[off + i] * sum_gx / static_cast<Real>(n));
                                   } else {
                                       dx[off + i] += k * g[off + i];
                                   }
                               }
                           }
                       }
                   });
    return result;
}

Tensor relu(const Tensor& x) {
    return unary(
        x, "relu", [](Real v) { return v > 0 ? v : Real(0); }, [](Real v) { return v >= 0 ? Real(1) : Real(0); });
}

Tensor leaky_relu(const Tensor& x, Real slope) {
    return unary(
        x, "leaky_relu", [slope](Real v) { return v > 0 ? v : slope * v; },
        [slope](Real v) { return v >= 0 ? Real(1) : slope; });
}

Tensor sigmoid(const Tensor& x) {
    auto in = x.data();
    std::vector<Real> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        const Real v = in[i];
        if (v >= 0) {
            out[i] = Real(1) / (Real(1) + std::exp(-v));
        } else {
            const Real e = std::exp(v);
            out[i] = e / (Real(1) + e);
        }
    }
    std::vector<Real> saved = out;
    Tensor result = finish(x.shape(), std::move(out), "sigmoid");
    ImplPtr xi = x.impl();
    attach_grad_fn(result, "sigmoid", {x}, [xi, s = std::move(saved)](std::span<const Real> g) {
        auto dx = grad_slot(xi);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * s[i] * (Real(1) - s[i]);
    });
    return result;
}

namespace {

void blocked_product(const Real* a, Index M, Index K, const Real* b, Index N, Real* out, Index block) {
    if (block <= 0) block = M;
    for (Index r = 0; r < M; r += block) {
        const Index h = std::min(block, M - r);
        MatMap(out + r * N, h, N).noalias() = ConstMatMap(a + r * K, h, K) * ConstMatMap(b, K, N);
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Index row_block) {
    require_rank(a, 2, "matmul", "lhs");
    require_rank(b, 2, "matmul", "rhs");
    const Index M = a.dim(0), K = a.dim(1), N = b.dim(1);
    if (b.dim(0) != K) {
        throw ShapeError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<Real> out(static_cast<std::size_t>(M * N));
    blocked_product(a.data().data(), M, K, b.data().data(), N, out.data(), row_block);
    Tensor result = finish({M, N}, std::move(out), "matmul");
    ImplPtr ai = a.impl(), bi = b.impl();
    attach_grad_fn(result, "matmul", {a, b}, [=](std::span<const Real> g) {
        ConstMatMap gy(g.data(), M, N);
        auto da = grad_slot(ai);
        auto db = grad_slot(bi);
        if (!da.empty()) MatMap(da.data(), M, K).noalias() += gy * ConstMatMap(raw(bi), K, N).transpose();
        if (!db.empty()) MatMap(db.data(), K, N).noalias() += ConstMatMap(raw(ai), M, K).transpose() * gy;
    });
    return result;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "linear", "input");
    require_rank(weight, 2, "linear", "weight");
    const Index B = input.dim(0), F = input.dim(1), G = weight.dim(1);
    if (weight.dim(0) != F) {
        throw ShapeError("linear: input width " + std::to_string(F) + " does not match weight " +
                         shape_str(weight.shape()));
    }
    check_bias(bias, G, "linear");
    std::vector<Real> out(static_cast<std::size_t>(B * G));
    blocked_product(input.data().data(), B, F, weight.data().data(), G, out.data(), 1);
    if (bias.defined()) {
        const Real* bv = bias.data().data();
        for (Index r = 0; r < B; ++r)
            for (Index c = 0; c < G; ++c) out[r * G + c] += bv[c];
    }
    Tensor result = finish({B, G}, std::move(out), "linear");
    ImplPtr xi = input.impl(), wi = weight.impl(), bi = bias.defined() ? bias.impl() : nullptr;
    std::vector<Tensor> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    attach_grad_fn(result, "linear", inputs, [=](std::span<const Real> g) {
        ConstMatMap gy(g.data(), B, G);
        auto dx = grad_slot(xi);
        auto dw = grad_slot(wi);
        if (!dx.empty()) MatMap(dx.data(), B, F).noalias() += gy * ConstMatMap(raw(wi), F, G).transpose();
        if (!dw.empty()) MatMap(dw.data(), F, G).noalias() += ConstMatMap(raw(xi), B, F).transpose() * gy;
        if (auto db = grad_slot(bi); !db.empty()) {
            for (Index r = 0; r < B; ++r)
                for (Index c = 0; c < G; ++c) db[c] += g[r * G + c];
        }
    });
    return result;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_rank(a, 3, "bmm", "lhs");
    require_rank(b, 3, "bmm", "rhs");
    const Index B = a.dim(0), N = a.dim(1), M = a.dim(2), P = b.dim(2);
    if (b.dim(0) != B || b.dim(1) != M) {
        throw ShapeError("bmm: incompatible operands " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    std::vector<Real> out(static_cast<std::size_t>(B * N * P));
    const Real* av = a.data().data();
    const Real* bv = b.data().data();
    for (Index s = 0; s < B; ++s) {
        MatMap(out.data() + s * N * P, N, P).noalias() =
            ConstMatMap(av + s * N * M, N, M) * ConstMatMap(bv + s * M * P, M, P);
    }
    Tensor result = finish({B, N, P}, std::move(out), "bmm");
    ImplPtr ai = a.impl(), bi = b.impl();
    attach_grad_fn(result, "bmm", {a, b}, [=](std::span<const Real> g) {
        auto da = grad_slot(ai);
        auto db = grad_slot(bi);
        for (Index s = 0; s < B; ++s) {
            ConstMatMap gy(g.data() + s * N * P, N, P);
            if (!da.empty())
                MatMap(da.data() + s * N * M, N, M).noalias() += gy * ConstMatMap(raw(bi) + s * M * P, M, P).transpose();
            if (!db.empty())
                MatMap(db.data() + s * M * P, M, P).noalias() += ConstMatMap(raw(ai) + s * N * M, N, M).transpose() * gy;
        }
    });
    return result;
}

Tensor log_softmax(const Tensor& logits) {
    require_rank(logits, 2, "log_softmax", "input");
    const Index B = logits.dim(0), C = logits.dim(1);
    const Real* x = logits.data().data();
    std::vector<Real> out(static_cast<std::size_t>(B * C));
    for (Index r = 0; r < B; ++r) {
        const Real* row = x + r * C;
        const Real mx = *std::max_element(row, row + C);
        Real s = 0;
        for (Index c = 0; c < C; ++c) s += std::exp(row[c] - mx);
        const Real lse = mx + std::log(s);
        for (Index c = 0; c < C; ++c) out[r * C + c] = row[c] - lse;
    }
    std::vector<Real> saved = out;
    Tensor result = finish({B, C}, std::move(out), "log_softmax");
    ImplPtr xi = logits.impl();
    attach_grad_fn(result, "log_softmax", {logits}, [=, y = std::move(saved)](std::span<const Real> g) {
        auto dx = grad_slot(xi);
        for (Index r = 0; r < B; ++r) {
            Real gs = 0;
            for (Index c = 0; c < C; ++c) gs += g[r * C + c];
            for (Index c = 0; c < C; ++c) dx[r * C + c] += g[r * C + c] - std::exp(y[r * C + c]) * gs;
        }
    });
    return result;
}

Tensor flatten(const Tensor& x) {
    if (x.ndim() < 2) throw ShapeError("flatten: need a batch axis, got " + shape_str(x.shape()));
    return x.reshape({x.dim(0), x.numel() / x.dim(0)});
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto av = a.data();
    auto bv = b.data();
    std::vector<Real> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    Tensor result = finish(a.shape(), std::move(out), "add");
    ImplPtr ai = a.impl(), bi = b.impl();
    attach_grad_fn(result, "add", {a, b}, [=](std::span<const Real> g) {
        for (const auto& t : {ai, bi}) {
            auto d = grad_slot(t);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
    });
    return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto av = a.data();
    auto bv = b.data();
    std::vector<Real> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    Tensor result = finish(a.shape(), std::move(out), "mul");
    ImplPtr ai = a.impl(), bi = b.impl();
    attach_grad_fn(result, "mul", {a, b}, [=](std::span<const Real> g) {
        auto da = grad_slot(ai);
        auto db = grad_slot(bi);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * raw(bi)[i];
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * raw(ai)[i];
    });
    return result;
}

Tensor scale(const Tensor& x, Real factor) {
    auto xv = x.data();
    std::vector<Real> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
    Tensor result = finish(x.shape(), std::move(out), "scale");
    ImplPtr xi = x.impl();
    attach_grad_fn(result, "scale", {x}, [=](std::span<const Real> g) {
        auto dx = grad_slot(xi);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * factor;
    });
    return result;
}

Tensor sum(const Tensor& x) {
    Real s = 0;
    for (Real v : x.data()) s += v;
    Tensor result = finish({1}, {s}, "sum");
    ImplPtr xi = x.impl();
    attach_grad_fn(result, "sum", {x}, [=](std::span<const Real> g) {
        auto dx = grad_slot(xi);
        for (auto& d : dx) d += g[0];
    });
    return result;
}

Tensor mean(const Tensor& x) { return scale(sum(x), Real(1) / static_cast<Real>(x.numel())); }

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    if (x.ndim() < 2) throw ShapeError("add_channel_bias: need [B,C,...], got " + shape_str(x.shape()));
    const Index B = x.dim(0), C = x.dim(1), plane = x.numel() / (B * C);
    check_bias(bias, C, "add_channel_bias");
    std::vector<Real> out(x.data().begin(), x.data().end());
    add_bias_planes(out, bias.data().data(), B, C, plane);
    Tensor result = finish(x.shape(), std::move(out), "add_channel_bias");
    ImplPtr xi = x.impl(), bi = bias.impl();
    attach_grad_fn(result, "add_channel_bias", {x, bias}, [=](std::span<const Real> g) {
        auto dx = grad_slot(xi);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
        auto db = grad_slot(bi);
        if (!db.empty()) bias_grad(db, g, B, C, plane);
    });
    return result;
}

std::vector<int> argmax_rows(const Tensor& x) {
    require_rank(x, 2, "argmax_rows", "input");
    const Index B = x.dim(0), C = x.dim(1);
    std::vector<int> out(static_cast<std::size_t>(B));
    const Real* v = x.data().data();
    for (Index r = 0; r < B; ++r) {
        const Real* row = v + r * C;
        out[r] = static_cast<int>(std::max_element(row, row + C) - row);
    }
    return out;
}

}  // namespace dynfg

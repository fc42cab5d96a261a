#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "spygr/macs.hpp"
#include "spygr/tensor.hpp"

namespace spygr {

// Plain forward kernels. All are pure; outputs are finite-checked before
// returning. Accumulation is in double even for f32 tensors, always in
// ascending index order, so results are independent of call context.

template <class T>
inline Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.is_matrix() && b.is_matrix(),
            "matmul expects matrix views, got " + a.shape().str() + " and " + b.shape().str());
    const int p = a.rows(), q = a.cols(), q2 = b.rows(), r = b.cols();
    require(q == q2, "matmul inner extents disagree: " + a.shape().str() + " x " + b.shape().str());
    Tensor<T> out = Tensor<T>::matrix(p, r);
    std::vector<double> acc(static_cast<std::size_t>(r));
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int i = 0; i < p; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int k = 0; k < q; ++k) {
            const double aik = static_cast<double>(pa[static_cast<std::int64_t>(i) * q + k]);
            const T* brow = pb + static_cast<std::int64_t>(k) * r;
            for (int j = 0; j < r; ++j) acc[j] += aik * static_cast<double>(brow[j]);
        }
        for (int j = 0; j < r; ++j) po[static_cast<std::int64_t>(i) * r + j] = static_cast<T>(acc[j]);
    }
    count_macs(static_cast<std::uint64_t>(p) * q * r);
    ensure_finite(out, "matmul");
    return out;
}

template <class T>
inline Tensor<T> transpose(const Tensor<T>& m) {
    require(m.is_matrix(), "transpose expects a matrix view, got " + m.shape().str());
    const int r = m.rows(), c = m.cols();
    Tensor<T> out = Tensor<T>::matrix(c, r);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[static_cast<std::int64_t>(j) * r + i] = m[static_cast<std::int64_t>(i) * c + j];
    return out;
}

/// [1,C,H,W] -> [HW x C] matrix; row p = pixel (h*W + w), column = channel.
template <class T>
inline Tensor<T> unfold_hwc(const Tensor<T>& x) {
    require(x.shape().n == 1, "unfold_hwc expects a single batch element, got " + x.shape().str());
    const int c = x.shape().c, h = x.shape().h, w = x.shape().w;
    const int n = h * w;
    Tensor<T> out = Tensor<T>::matrix(n, c);
    for (int ci = 0; ci < c; ++ci)
        for (int p = 0; p < n; ++p)
            out[static_cast<std::int64_t>(p) * c + ci] = x[static_cast<std::int64_t>(ci) * n + p];
    return out;
}

/// Inverse of unfold_hwc.
template <class T>
inline Tensor<T> fold_hwc(const Tensor<T>& m, int c, int h, int w) {
    require(m.is_matrix() && m.rows() == h * w && m.cols() == c,
            "fold_hwc expects [" + std::to_string(h * w) + "x" + std::to_string(c) + "], got " +
                m.shape().str());
    Tensor<T> out(Shape{1, c, h, w});
    const int n = h * w;
    for (int ci = 0; ci < c; ++ci)
        for (int p = 0; p < n; ++p)
            out[static_cast<std::int64_t>(ci) * n + p] = m[static_cast<std::int64_t>(p) * c + ci];
    return out;
}

/// Per-pixel linear map over channels; w is [C_in x C_out].
template <class T>
inline Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w,
                         const std::optional<Tensor<T>>& bias = std::nullopt) {
    require(w.is_matrix(), "conv1x1 weight must be [C_in x C_out], got " + w.shape().str());
    require(x.shape().c == w.rows(), "conv1x1 channel mismatch: input " + x.shape().str() +
                                         " vs weight " + w.shape().str());
    const int nb = x.shape().n, h = x.shape().h, wd = x.shape().w, co = w.cols();
    if (bias)
        require(bias->numel() == co, "conv1x1 bias length " + std::to_string(bias->numel()) +
                                         " vs C_out " + std::to_string(co));
    Tensor<T> out(Shape{nb, co, h, wd});
    for (int b = 0; b < nb; ++b) {
        Tensor<T> xb = x;
        if (nb != 1) {
            xb = Tensor<T>(Shape{1, x.shape().c, h, wd});
            const std::int64_t sz = xb.numel();
            std::copy_n(x.data() + static_cast<std::int64_t>(b) * sz, sz, xb.data());
        }
        Tensor<T> folded = fold_hwc(matmul(unfold_hwc(xb), w), co, h, wd);
        std::copy_n(folded.data(), folded.numel(),
                    out.data() + static_cast<std::int64_t>(b) * folded.numel());
    }
    if (bias) {
        const int n = h * wd;
        for (int b = 0; b < nb; ++b)
            for (int ci = 0; ci < co; ++ci) {
                const T bv = (*bias)[ci];
                T* row = out.data() + (static_cast<std::int64_t>(b) * co + ci) * n;
                for (int p = 0; p < n; ++p) row[p] = static_cast<T>(static_cast<double>(row[p]) + bv);
            }
    }
    ensure_finite(out, "conv1x1");
    return out;
}

inline int conv3x3_out_extent(int in, int pad, int stride) {
    return (in + 2 * pad - 3) / stride + 1;
}

/// Cross-correlation with zero padding; w is [C_out, C_in, 3, 3].
template <class T>
inline Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& w,
                         const std::optional<Tensor<T>>& bias, int stride, int pad) {
    require(pad == 0 || pad == 1, "conv3x3 padding must be 0 or 1");
    require(stride == 1 || stride == 2, "conv3x3 stride must be 1 or 2");
    require(w.shape().h == 3 && w.shape().w == 3,
            "conv3x3 weight must be [C_out,C_in,3,3], got " + w.shape().str());
    require(x.shape().c == w.shape().c, "conv3x3 channel mismatch: input " + x.shape().str() +
                                            " vs weight " + w.shape().str());
    const int nb = x.shape().n, ci = x.shape().c, h = x.shape().h, wd = x.shape().w;
    const int co = w.shape().n;
    const int oh = conv3x3_out_extent(h, pad, stride);
    const int ow = conv3x3_out_extent(wd, pad, stride);
    require(oh >= 1 && ow >= 1, "conv3x3 output extent < 1 for input " + x.shape().str());
    if (bias) require(bias->numel() == co, "conv3x3 bias length mismatch");

    Tensor<T> out(Shape{nb, co, oh, ow});
    std::vector<double> acc(static_cast<std::size_t>(oh) * ow);
    for (int b = 0; b < nb; ++b)
        for (int oc = 0; oc < co; ++oc) {
            std::fill(acc.begin(), acc.end(), bias ? static_cast<double>((*bias)[oc]) : 0.0);
            for (int ic = 0; ic < ci; ++ic) {
                const T* xin = x.data() + (static_cast<std::int64_t>(b) * ci + ic) * h * wd;
                const T* ker = w.data() + (static_cast<std::int64_t>(oc) * ci + ic) * 9;
                for (int kh = 0; kh < 3; ++kh)
                    for (int kw = 0; kw < 3; ++kw) {
                        const double kv = static_cast<double>(ker[kh * 3 + kw]);
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride + kh - pad;
                            if (iy < 0 || iy >= h) continue;
                            double* arow = acc.data() + static_cast<std::size_t>(oy) * ow;
                            const T* xrow = xin + static_cast<std::int64_t>(iy) * wd;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride + kw - pad;
                                if (ix < 0 || ix >= wd) continue;
                                arow[ox] += kv * static_cast<double>(xrow[ix]);
                            }
                        }
                    }
            }
            T* orow = out.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
            for (std::size_t i = 0; i < acc.size(); ++i) orow[i] = static_cast<T>(acc[i]);
        }
    count_macs(static_cast<std::uint64_t>(nb) * co * oh * ow * ci * 9);
    ensure_finite(out, "conv3x3");
    return out;
}

template <class T>
inline Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> out = x;
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    ensure_finite(out, "relu");
    return out;
}

template <class T>
inline Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> out = x;
    for (auto& v : out.values()) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    ensure_finite(out, "sigmoid");
    return out;
}

/// Spatial arithmetic mean per channel: [N,C,H,W] -> [N,C,1,1].
template <class T>
inline Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const int nb = x.shape().n, c = x.shape().c;
    const std::int64_t n = static_cast<std::int64_t>(x.shape().h) * x.shape().w;
    require(n > 0, "global_avg_pool on empty grid " + x.shape().str());
    Tensor<T> out(Shape{nb, c, 1, 1});
    for (int b = 0; b < nb; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const T* p = x.data() + (static_cast<std::int64_t>(b) * c + ci) * n;
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(p[i]);
            out[static_cast<std::int64_t>(b) * c + ci] = static_cast<T>(acc / static_cast<double>(n));
        }
    ensure_finite(out, "global_avg_pool");
    return out;
}

template <class T>
inline Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "add shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> out = a;
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(static_cast<double>(a[i]) + static_cast<double>(b[i]));
    count_macs(static_cast<std::uint64_t>(out.numel()));
    ensure_finite(out, "add");
    return out;
}

template <class T>
inline Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "sub shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> out = a;
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    count_macs(static_cast<std::uint64_t>(out.numel()));
    ensure_finite(out, "sub");
    return out;
}

template <class T>
inline Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require(a.shape() == b.shape(), "mul shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
    Tensor<T> out = a;
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(static_cast<double>(a[i]) * static_cast<double>(b[i]));
    count_macs(static_cast<std::uint64_t>(out.numel()));
    ensure_finite(out, "mul");
    return out;
}

template <class T>
inline Tensor<T> scale(const Tensor<T>& a, double s) {
    Tensor<T> out = a;
    for (auto& v : out.values()) v = static_cast<T>(static_cast<double>(v) * s);
    count_macs(static_cast<std::uint64_t>(out.numel()));
    ensure_finite(out, "scale");
    return out;
}

/// Multiplies row i of m [r x c] by v[i]; v may be any shape with numel r.
template <class T>
inline Tensor<T> scale_rows(const Tensor<T>& m, const Tensor<T>& v) {
    require(m.is_matrix(), "scale_rows expects a matrix, got " + m.shape().str());
    require(v.numel() == m.rows(), "scale_rows vector length " + std::to_string(v.numel()) +
                                       " vs rows " + std::to_string(m.rows()));
    const int r = m.rows(), c = m.cols();
    Tensor<T> out = m;
    for (int i = 0; i < r; ++i) {
        const double s = static_cast<double>(v[i]);
        T* row = out.data() + static_cast<std::int64_t>(i) * c;
        for (int j = 0; j < c; ++j) row[j] = static_cast<T>(static_cast<double>(row[j]) * s);
    }
    count_macs(static_cast<std::uint64_t>(r) * c);
    ensure_finite(out, "scale_rows");
    return out;
}

/// Elementwise 1/sqrt(max(x, floor)). The floor keeps zeroed degrees from
/// blowing up the normalization while leaving strictly positive degrees
/// untouched.
template <class T>
inline Tensor<T> rsqrt_floor(const Tensor<T>& x, double floor) {
    Tensor<T> out = x;
    for (auto& v : out.values()) {
        const double d = std::max(static_cast<double>(v), floor);
        v = static_cast<T>(1.0 / std::sqrt(d));
    }
    ensure_finite(out, "rsqrt_floor");
    return out;
}

inline int ceil_half(int v) { return (v + 1) / 2; }

/// 2x2 max pooling, stride 2, ceil mode: odd extents keep a trailing window
/// of size 1. argmax (flat h*W+w index per output cell, first maximum in
/// scan order) is recorded for gradient routing.
template <class T>
inline Tensor<T> maxpool2x2_ceil(const Tensor<T>& x, std::vector<std::int32_t>* argmax = nullptr) {
    const int nb = x.shape().n, c = x.shape().c, h = x.shape().h, w = x.shape().w;
    require(h >= 1 && w >= 1, "maxpool on empty grid " + x.shape().str());
    const int oh = ceil_half(h), ow = ceil_half(w);
    Tensor<T> out(Shape{nb, c, oh, ow});
    if (argmax) argmax->assign(static_cast<std::size_t>(out.numel()), 0);
    std::int64_t oi = 0;
    for (int b = 0; b < nb; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const T* xin = x.data() + (static_cast<std::int64_t>(b) * c + ci) * h * w;
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox, ++oi) {
                    const int y0 = 2 * oy, x0 = 2 * ox;
                    T best = xin[y0 * w + x0];
                    int besti = y0 * w + x0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const int yy = y0 + dy, xx = x0 + dx;
                            if (yy >= h || xx >= w) continue;
                            const T v = xin[yy * w + xx];
                            if (v > best) {
                                best = v;
                                besti = yy * w + xx;
                            }
                        }
                    out[oi] = best;
                    if (argmax) (*argmax)[oi] = besti;
                }
        }
    count_macs(static_cast<std::uint64_t>(h) * w);
    ensure_finite(out, "maxpool2x2");
    return out;
}

/// Routes each output-cell gradient to its recorded argmax input position.
template <class T>
inline Tensor<T> maxpool2x2_backward(const Tensor<T>& grad_out, const std::vector<std::int32_t>& argmax,
                                     Shape in_shape) {
    const int nb = in_shape.n, c = in_shape.c, h = in_shape.h, w = in_shape.w;
    Tensor<T> gx(in_shape);
    const std::int64_t per_chan_out = static_cast<std::int64_t>(grad_out.shape().h) * grad_out.shape().w;
    std::int64_t oi = 0;
    for (int b = 0; b < nb; ++b)
        for (int ci = 0; ci < c; ++ci) {
            T* gin = gx.data() + (static_cast<std::int64_t>(b) * c + ci) * h * w;
            for (std::int64_t p = 0; p < per_chan_out; ++p, ++oi)
                gin[argmax[oi]] = static_cast<T>(static_cast<double>(gin[argmax[oi]]) +
                                                 static_cast<double>(grad_out[oi]));
        }
    return gx;
}

namespace detail {
struct LerpAxis {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

/// Half-pixel-center sampling: src = (dst + 0.5) * (src_extent / dst_extent) - 0.5.
inline LerpAxis make_lerp_axis(int src, int dst) {
    LerpAxis ax;
    ax.lo.resize(dst);
    ax.hi.resize(dst);
    ax.frac.resize(dst);
    const double ratio = static_cast<double>(src) / static_cast<double>(dst);
    for (int j = 0; j < dst; ++j) {
        double s = (j + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(src - 1));
        const int lo = static_cast<int>(std::floor(s));
        ax.lo[j] = lo;
        ax.hi[j] = std::min(lo + 1, src - 1);
        ax.frac[j] = s - lo;
    }
    return ax;
}
}  // namespace detail

/// Bilinear upsampling to [target_h, target_w], half-pixel centers, clamped.
template <class T>
inline Tensor<T> upsample_bilinear(const Tensor<T>& x, int target_h, int target_w) {
    const int nb = x.shape().n, c = x.shape().c, h = x.shape().h, w = x.shape().w;
    require(target_h >= h && target_w >= w,
            "upsample target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                " smaller than source " + x.shape().str());
    const auto ay = detail::make_lerp_axis(h, target_h);
    const auto ax = detail::make_lerp_axis(w, target_w);
    Tensor<T> out(Shape{nb, c, target_h, target_w});
    for (int b = 0; b < nb; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const T* xin = x.data() + (static_cast<std::int64_t>(b) * c + ci) * h * w;
            T* o = out.data() + (static_cast<std::int64_t>(b) * c + ci) * target_h * target_w;
            for (int oy = 0; oy < target_h; ++oy) {
                const double fy = ay.frac[oy];
                const T* r0 = xin + static_cast<std::int64_t>(ay.lo[oy]) * w;
                const T* r1 = xin + static_cast<std::int64_t>(ay.hi[oy]) * w;
                for (int ox = 0; ox < target_w; ++ox) {
                    const double fx = ax.frac[ox];
                    const double v00 = static_cast<double>(r0[ax.lo[ox]]);
                    const double v01 = static_cast<double>(r0[ax.hi[ox]]);
                    const double v10 = static_cast<double>(r1[ax.lo[ox]]);
                    const double v11 = static_cast<double>(r1[ax.hi[ox]]);
                    const double top = v00 + (v01 - v00) * fx;
                    const double bot = v10 + (v11 - v10) * fx;
                    o[static_cast<std::int64_t>(oy) * target_w + ox] =
                        static_cast<T>(top + (bot - top) * fy);
                }
            }
        }
    count_macs(8ULL * target_h * target_w);
    ensure_finite(out, "upsample_bilinear");
    return out;
}

/// Adjoint of upsample_bilinear: scatters with the same weights.
template <class T>
inline Tensor<T> upsample_bilinear_backward(const Tensor<T>& grad_out, int src_h, int src_w) {
    const int nb = grad_out.shape().n, c = grad_out.shape().c;
    const int th = grad_out.shape().h, tw = grad_out.shape().w;
    const auto ay = detail::make_lerp_axis(src_h, th);
    const auto ax = detail::make_lerp_axis(src_w, tw);
    Tensor<T> gx(Shape{nb, c, src_h, src_w});
    for (int b = 0; b < nb; ++b)
        for (int ci = 0; ci < c; ++ci) {
            const T* g = grad_out.data() + (static_cast<std::int64_t>(b) * c + ci) * th * tw;
            T* o = gx.data() + (static_cast<std::int64_t>(b) * c + ci) * src_h * src_w;
            for (int oy = 0; oy < th; ++oy) {
                const double fy = ay.frac[oy];
                for (int ox = 0; ox < tw; ++ox) {
                    const double fx = ax.frac[ox];
                    const double gv = static_cast<double>(g[static_cast<std::int64_t>(oy) * tw + ox]);
                    const auto bump = [&](int yy, int xx, double wgt) {
                        T& slot = o[static_cast<std::int64_t>(yy) * src_w + xx];
                        slot = static_cast<T>(static_cast<double>(slot) + gv * wgt);
                    };
                    bump(ay.lo[oy], ax.lo[ox], (1 - fy) * (1 - fx));
                    bump(ay.lo[oy], ax.hi[ox], (1 - fy) * fx);
                    bump(ay.hi[oy], ax.lo[ox], fy * (1 - fx));
                    bump(ay.hi[oy], ax.hi[ox], fy * fx);
                }
            }
        }
    return gx;
}

template <class T>
inline double sum_all(const Tensor<T>& x) {
    double acc = 0.0;
    for (const T v : x.values()) acc += static_cast<double>(v);
    return acc;
}

}  // namespace spygr

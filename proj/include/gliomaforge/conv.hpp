#pragma once

// Volumetric operators on N x C x D x H x W tensors: convolution (im2col +
// GEMM, with a direct path for depthwise kernels), transposed convolution,
// channel/global pooling and trilinear resizing.

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "gliomaforge/tensor.hpp"

namespace gliomaforge {

struct Grid3 {
    std::int64_t d = 1, h = 1, w = 1;
    std::int64_t count() const { return d * h * w; }
    bool operator==(const Grid3&) const = default;
};

inline Grid3 spatial_of(const Shape& s) {
    require(s.size() == 5, ErrorKind::shape, "expected N x C x D x H x W, got " + shape_str(s));
    return {s[2], s[3], s[4]};
}

inline std::int64_t conv_out_size(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

namespace detail {

/// Column buffer [C*k^3 x out.count()] for one sample / channel group.
template <typename T>
void im2col(const T* x, std::int64_t channels, Grid3 in, std::int64_t k, std::int64_t stride, std::int64_t pad,
            Grid3 out, T* col) {
    const std::int64_t p = out.count();
    for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t kd = 0; kd < k; ++kd)
            for (std::int64_t kh = 0; kh < k; ++kh)
                for (std::int64_t kw = 0; kw < k; ++kw) {
                    T* dst = col + (((c * k + kd) * k + kh) * k + kw) * p;
                    for (std::int64_t od = 0; od < out.d; ++od) {
                        const std::int64_t id = od * stride - pad + kd;
                        for (std::int64_t oh = 0; oh < out.h; ++oh) {
                            T* row = dst + (od * out.h + oh) * out.w;
                            const std::int64_t ih = oh * stride - pad + kh;
                            if (id < 0 || id >= in.d || ih < 0 || ih >= in.h) {
                                std::fill_n(row, out.w, T(0));
                                continue;
                            }
                            const T* src = x + ((c * in.d + id) * in.h + ih) * in.w;
                            for (std::int64_t ow = 0; ow < out.w; ++ow) {
                                const std::int64_t iw = ow * stride - pad + kw;
                                row[ow] = (iw >= 0 && iw < in.w) ? src[iw] : T(0);
                            }
                        }
                    }
                }
}

/// Adjoint of im2col: scatters (accumulates) columns back into the image.
template <typename T>
void col2im(const T* col, std::int64_t channels, Grid3 in, std::int64_t k, std::int64_t stride, std::int64_t pad,
            Grid3 out, T* x) {
    const std::int64_t p = out.count();
    for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t kd = 0; kd < k; ++kd)
            for (std::int64_t kh = 0; kh < k; ++kh)
                for (std::int64_t kw = 0; kw < k; ++kw) {
                    const T* src = col + (((c * k + kd) * k + kh) * k + kw) * p;
                    for (std::int64_t od = 0; od < out.d; ++od) {
                        const std::int64_t id = od * stride - pad + kd;
                        if (id < 0 || id >= in.d) continue;
                        for (std::int64_t oh = 0; oh < out.h; ++oh) {
                            const std::int64_t ih = oh * stride - pad + kh;
                            if (ih < 0 || ih >= in.h) continue;
                            const T* row = src + (od * out.h + oh) * out.w;
                            T* dst = x + ((c * in.d + id) * in.h + ih) * in.w;
                            for (std::int64_t ow = 0; ow < out.w; ++ow) {
                                const std::int64_t iw = ow * stride - pad + kw;
                                if (iw >= 0 && iw < in.w) dst[iw] += row[ow];
                            }
                        }
                    }
                }
}

/// Valid output range [lo, hi) along one axis for a kernel tap.
inline void tap_range(std::int64_t out_len, std::int64_t in_len, std::int64_t stride, std::int64_t offset,
                      std::int64_t& lo, std::int64_t& hi) {
    // need 0 <= o*stride + offset < in_len
    lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
    hi = in_len - offset <= 0 ? 0 : std::min(out_len, (in_len - offset - 1) / stride + 1);
    if (hi < lo) hi = lo;
}

/// Calls f(out_offset, in_offset) over all valid positions of one tap.
template <typename F>
void for_each_tap(Grid3 in, Grid3 out, std::int64_t stride, std::int64_t pad, std::int64_t kd, std::int64_t kh,
                  std::int64_t kw, F&& f) {
    std::int64_t d0, d1, h0, h1, w0, w1;
    tap_range(out.d, in.d, stride, kd - pad, d0, d1);
    tap_range(out.h, in.h, stride, kh - pad, h0, h1);
    tap_range(out.w, in.w, stride, kw - pad, w0, w1);
    for (std::int64_t od = d0; od < d1; ++od) {
        const std::int64_t id = od * stride + kd - pad;
        for (std::int64_t oh = h0; oh < h1; ++oh) {
            const std::int64_t ih = oh * stride + kh - pad;
            const std::int64_t obase = (od * out.h + oh) * out.w;
            const std::int64_t ibase = (id * in.h + ih) * in.w + kw - pad;
            f(obase, ibase, w0, w1);
        }
    }
}

} // namespace detail

struct ConvOptions {
    std::int64_t stride = 1;
    std::int64_t padding = 0;
    std::int64_t groups = 1;
};

/// Cross-correlation. x: N x C x D x H x W, weight: O x (C/groups) x k x k x k,
/// optional bias: O.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                 ConvOptions opt = {}) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    require(xs.size() == 5 && ws.size() == 5, ErrorKind::shape, "conv3d needs rank-5 input and weight");
    const std::int64_t n = xs[0], c = xs[1], o = ws[0], k = ws[2];
    require(ws[3] == k && ws[4] == k, ErrorKind::shape, "conv3d kernel must be cubic");
    require(opt.groups >= 1 && c % opt.groups == 0 && o % opt.groups == 0, ErrorKind::shape,
            "conv3d channels not divisible by groups");
    require(ws[1] * opt.groups == c, ErrorKind::shape,
            "conv3d weight " + shape_str(ws) + " does not match input channels " + std::to_string(c));
    require(opt.stride >= 1 && opt.padding >= 0, ErrorKind::shape, "conv3d stride/padding invalid");
    const Grid3 in = spatial_of(xs);
    require(in.d + 2 * opt.padding >= k && in.h + 2 * opt.padding >= k && in.w + 2 * opt.padding >= k,
            ErrorKind::shape, "conv3d kernel larger than padded input " + shape_str(xs));
    if (bias) require(bias->numel() == o, ErrorKind::shape, "conv3d bias size differs from output channels");

    const Grid3 out{conv_out_size(in.d, k, opt.stride, opt.padding), conv_out_size(in.h, k, opt.stride, opt.padding),
                    conv_out_size(in.w, k, opt.stride, opt.padding)};
    const std::int64_t g = opt.groups, cg = c / g, og = o / g;
    const std::int64_t kk = k * k * k, K = cg * kk, P = out.count(), S = in.count();
    const bool depthwise = g == c && o == c;
    const bool pointwise = k == 1 && opt.stride == 1 && opt.padding == 0;
    const std::int64_t stride = opt.stride, pad = opt.padding;

    std::vector<T> y(static_cast<std::size_t>(n * o * P), T(0));
    const T* xv = x.values().data();
    const T* wv = weight.values().data();
    if (depthwise) {
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t ch = 0; ch < c; ++ch) {
                const T* src = xv + (b * c + ch) * S;
                T* dst = y.data() + (b * c + ch) * P;
                for (std::int64_t kd = 0; kd < k; ++kd)
                    for (std::int64_t kh = 0; kh < k; ++kh)
                        for (std::int64_t kw = 0; kw < k; ++kw) {
                            const T wt = wv[ch * kk + (kd * k + kh) * k + kw];
                            detail::for_each_tap(in, out, stride, pad, kd, kh, kw,
                                                 [&](std::int64_t ob, std::int64_t ib, std::int64_t w0, std::int64_t w1) {
                                                     for (std::int64_t ow = w0; ow < w1; ++ow)
                                                         dst[ob + ow] += wt * src[ib + ow * stride];
                                                 });
                        }
            }
    } else {
        std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(K * P));
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t gi = 0; gi < g; ++gi) {
                const T* src = xv + (b * c + gi * cg) * S;
                const T* cols = src;
                if (!pointwise) {
                    detail::im2col(src, cg, in, k, stride, pad, out, col.data());
                    cols = col.data();
                }
                gemm<T>(false, false, og, P, K, wv + gi * og * K, cols, y.data() + (b * o + gi * og) * P, false);
            }
    }
    if (bias) {
        const T* bv = bias->values().data();
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t ch = 0; ch < o; ++ch) {
                T* dst = y.data() + (b * o + ch) * P;
                for (std::int64_t i = 0; i < P; ++i) dst[i] += bv[ch];
            }
    }

    std::vector<Tensor<T>> parents{x, weight};
    if (bias) parents.push_back(*bias);
    const bool has_bias = bias.has_value();
    return make_result<T>(
        {n, o, out.d, out.h, out.w}, std::move(y), parents,
        [=](Node<T>& self) {
            const T* xv = self.parents[0]->value.data();
            const T* wv = self.parents[1]->value.data();
            T* gx = self.parent_grad(0);
            T* gw = self.parent_grad(1);
            T* gb = has_bias ? self.parent_grad(2) : nullptr;
            const T* gy = self.grad.data();
            if (gb)
                for (std::int64_t b = 0; b < n; ++b)
                    for (std::int64_t ch = 0; ch < o; ++ch) {
                        const T* src = gy + (b * o + ch) * P;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < P; ++i) acc += src[i];
                        gb[ch] += acc;
                    }
            if (depthwise) {
                for (std::int64_t b = 0; b < n; ++b)
                    for (std::int64_t ch = 0; ch < c; ++ch) {
                        const T* src = xv + (b * c + ch) * S;
                        const T* gdst = gy + (b * c + ch) * P;
                        T* gsrc = gx ? gx + (b * c + ch) * S : nullptr;
                        for (std::int64_t kd = 0; kd < k; ++kd)
                            for (std::int64_t kh = 0; kh < k; ++kh)
                                for (std::int64_t kw = 0; kw < k; ++kw) {
                                    const std::int64_t widx = ch * kk + (kd * k + kh) * k + kw;
                                    const T wt = wv[widx];
                                    T acc = T(0);
                                    detail::for_each_tap(
                                        in, out, stride, pad, kd, kh, kw,
                                        [&](std::int64_t ob, std::int64_t ib, std::int64_t w0, std::int64_t w1) {
                                            for (std::int64_t ow = w0; ow < w1; ++ow) {
                                                acc += gdst[ob + ow] * src[ib + ow * stride];
                                                if (gsrc) gsrc[ib + ow * stride] += wt * gdst[ob + ow];
                                            }
                                        });
                                    if (gw) gw[widx] += acc;
                                }
                    }
                return;
            }
            std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(K * P));
            std::vector<T> dcol(pointwise || !gx ? 0 : static_cast<std::size_t>(K * P));
            for (std::int64_t b = 0; b < n; ++b)
                for (std::int64_t gi = 0; gi < g; ++gi) {
                    const T* src = xv + (b * c + gi * cg) * S;
                    const T* gyg = gy + (b * o + gi * og) * P;
                    if (gw) {
                        const T* cols = src;
                        if (!pointwise) {
                            detail::im2col(src, cg, in, k, stride, pad, out, col.data());
                            cols = col.data();
                        }
                        gemm<T>(false, true, og, K, P, gyg, cols, gw + gi * og * K, true);
                    }
                    if (gx) {
                        T* gxg = gx + (b * c + gi * cg) * S;
                        if (pointwise) {
                            gemm<T>(true, false, K, P, og, wv + gi * og * K, gyg, gxg, true);
                        } else {
                            gemm<T>(true, false, K, P, og, wv + gi * og * K, gyg, dcol.data(), false);
                            detail::col2im(dcol.data(), cg, in, k, stride, pad, out, gxg);
                        }
                    }
                }
        },
        "conv3d");
}

/// Transposed convolution. x: N x Cin x D x H x W, weight: Cin x Cout x k x k x k,
/// optional bias: Cout. Output spatial size is (S - 1) * stride + k - 2 * padding.
/// With shared weights this is the adjoint of conv3d with the same stride and
/// padding.
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& weight, const std::optional<Tensor<T>>& bias,
                           std::int64_t stride, std::int64_t padding = 0) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    require(xs.size() == 5 && ws.size() == 5, ErrorKind::shape, "conv_transpose3d needs rank-5 input and weight");
    const std::int64_t n = xs[0], cin = xs[1], cout = ws[1], k = ws[2];
    require(ws[0] == cin, ErrorKind::shape,
            "conv_transpose3d weight " + shape_str(ws) + " does not match input channels " + std::to_string(cin));
    require(ws[3] == k && ws[4] == k && stride >= 1 && padding >= 0 && 2 * padding < k, ErrorKind::shape,
            "conv_transpose3d geometry invalid");
    if (bias) require(bias->numel() == cout, ErrorKind::shape, "conv_transpose3d bias size mismatch");
    const Grid3 in = spatial_of(xs);
    const std::int64_t grow = k - 2 * padding;
    const Grid3 out{(in.d - 1) * stride + grow, (in.h - 1) * stride + grow, (in.w - 1) * stride + grow};
    const std::int64_t K = cout * k * k * k, P = in.count(), S = out.count();

    std::vector<T> y(static_cast<std::size_t>(n * cout * S), T(0));
    std::vector<T> col(static_cast<std::size_t>(K * P));
    const T* xv = x.values().data();
    const T* wv = weight.values().data();
    for (std::int64_t b = 0; b < n; ++b) {
        gemm<T>(true, false, K, P, cin, wv, xv + b * cin * P, col.data(), false);
        detail::col2im(col.data(), cout, out, k, stride, padding, in, y.data() + b * cout * S);
    }
    if (bias) {
        const T* bv = bias->values().data();
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t ch = 0; ch < cout; ++ch) {
                T* dst = y.data() + (b * cout + ch) * S;
                for (std::int64_t i = 0; i < S; ++i) dst[i] += bv[ch];
            }
    }
    std::vector<Tensor<T>> parents{x, weight};
    if (bias) parents.push_back(*bias);
    const bool has_bias = bias.has_value();
    return make_result<T>(
        {n, cout, out.d, out.h, out.w}, std::move(y), parents,
        [=](Node<T>& self) {
            const T* xv = self.parents[0]->value.data();
            const T* wv = self.parents[1]->value.data();
            T* gx = self.parent_grad(0);
            T* gw = self.parent_grad(1);
            T* gb = has_bias ? self.parent_grad(2) : nullptr;
            const T* gy = self.grad.data();
            std::vector<T> dcol(static_cast<std::size_t>(K * P));
            for (std::int64_t b = 0; b < n; ++b) {
                const T* gyb = gy + b * cout * S;
                if (gb)
                    for (std::int64_t ch = 0; ch < cout; ++ch) {
                        T acc = T(0);
                        for (std::int64_t i = 0; i < S; ++i) acc += gyb[ch * S + i];
                        gb[ch] += acc;
                    }
                if (!gx && !gw) continue;
                detail::im2col(gyb, cout, out, k, stride, padding, in, dcol.data());
                if (gx) gemm<T>(false, false, cin, P, K, wv, dcol.data(), gx + b * cin * P, true);
                if (gw) gemm<T>(false, true, cin, K, P, xv + b * cin * P, dcol.data(), gw, true);
            }
        },
        "conv_transpose3d");
}

// ---------------------------------------------------------------------------
// Pooling.

/// Max over channels, N x C x D x H x W -> N x 1 x D x H x W. The gradient goes
/// to the first channel attaining the maximum.
template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
    const Shape& s = x.shape();
    const Grid3 g = spatial_of(s);
    const std::int64_t n = s[0], c = s[1], S = g.count();
    std::vector<T> y(static_cast<std::size_t>(n * S));
    auto arg = std::make_shared<std::vector<std::int64_t>>(y.size());
    const auto& xv = x.values();
    for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < S; ++i) {
            std::int64_t best = 0;
            T mx = xv[static_cast<std::size_t>(b * c * S + i)];
            for (std::int64_t ch = 1; ch < c; ++ch) {
                const T v = xv[static_cast<std::size_t>((b * c + ch) * S + i)];
                if (v > mx) {
                    mx = v;
                    best = ch;
                }
            }
            y[static_cast<std::size_t>(b * S + i)] = mx;
            (*arg)[static_cast<std::size_t>(b * S + i)] = (b * c + best) * S + i;
        }
    return make_result<T>({n, 1, g.d, g.h, g.w}, std::move(y), {x},
                          [arg](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              for (std::size_t i = 0; i < self.grad.size(); ++i) gx[(*arg)[i]] += self.grad[i];
                          },
                          "channel_max");
}

/// Mean over channels, N x C x D x H x W -> N x 1 x D x H x W.
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
    const Shape& s = x.shape();
    const Grid3 g = spatial_of(s);
    const std::int64_t n = s[0], c = s[1], S = g.count();
    std::vector<T> y(static_cast<std::size_t>(n * S), T(0));
    const auto& xv = x.values();
    const T inv = T(1) / static_cast<T>(c);
    for (std::int64_t b = 0; b < n; ++b) {
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t i = 0; i < S; ++i)
                y[static_cast<std::size_t>(b * S + i)] += xv[static_cast<std::size_t>((b * c + ch) * S + i)];
        for (std::int64_t i = 0; i < S; ++i) y[static_cast<std::size_t>(b * S + i)] *= inv;
    }
    return make_result<T>({n, 1, g.d, g.h, g.w}, std::move(y), {x},
                          [n, c, S, inv](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              for (std::int64_t b = 0; b < n; ++b)
                                  for (std::int64_t ch = 0; ch < c; ++ch)
                                      for (std::int64_t i = 0; i < S; ++i)
                                          gx[(b * c + ch) * S + i] += inv * self.grad[static_cast<std::size_t>(b * S + i)];
                          },
                          "channel_mean");
}

/// Mean over D, H, W: N x C x D x H x W -> N x C.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    const Shape& s = x.shape();
    const Grid3 g = spatial_of(s);
    const std::int64_t nc = s[0] * s[1], S = g.count();
    std::vector<T> y(static_cast<std::size_t>(nc), T(0));
    const auto& xv = x.values();
    const T inv = T(1) / static_cast<T>(S);
    for (std::int64_t r = 0; r < nc; ++r) {
        T acc = T(0);
        for (std::int64_t i = 0; i < S; ++i) acc += xv[static_cast<std::size_t>(r * S + i)];
        y[static_cast<std::size_t>(r)] = acc * inv;
    }
    return make_result<T>({s[0], s[1]}, std::move(y), {x},
                          [nc, S, inv](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              for (std::int64_t r = 0; r < nc; ++r)
                                  for (std::int64_t i = 0; i < S; ++i) gx[r * S + i] += inv * self.grad[static_cast<std::size_t>(r)];
                          },
                          "global_avg_pool");
}

// ---------------------------------------------------------------------------
// Resizing.

namespace detail {

struct AxisTaps {
    std::vector<std::int64_t> i0, i1;
    std::vector<double> w1; // weight of i1; i0 gets 1 - w1
};

/// Half-pixel sampling: output o reads input coordinate (o + 0.5) * in/out - 0.5,
/// clamped to the valid range.
inline AxisTaps axis_taps(std::int64_t in, std::int64_t out) {
    AxisTaps t;
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::int64_t>(std::floor(src));
        const std::int64_t hi = std::min(lo + 1, in - 1);
        t.i0.push_back(lo);
        t.i1.push_back(hi);
        t.w1.push_back(src - static_cast<double>(lo));
    }
    return t;
}

} // namespace detail

template <typename T>
Tensor<T> trilinear_resize(const Tensor<T>& x, Grid3 size) {
    const Shape& s = x.shape();
    const Grid3 in = spatial_of(s);
    require(size.d >= 1 && size.h >= 1 && size.w >= 1, ErrorKind::shape, "resize target must be positive");
    auto td = std::make_shared<detail::AxisTaps>(detail::axis_taps(in.d, size.d));
    auto th = std::make_shared<detail::AxisTaps>(detail::axis_taps(in.h, size.h));
    auto tw = std::make_shared<detail::AxisTaps>(detail::axis_taps(in.w, size.w));
    const std::int64_t nc = s[0] * s[1], S = in.count(), P = size.count();

    // f(out_index, in_index, weight) for the 8 taps of every output voxel
    auto visit = [=](auto&& f) {
        for (std::int64_t r = 0; r < nc; ++r)
            for (std::int64_t od = 0; od < size.d; ++od)
                for (std::int64_t oh = 0; oh < size.h; ++oh)
                    for (std::int64_t ow = 0; ow < size.w; ++ow) {
                        const std::int64_t o = r * P + (od * size.h + oh) * size.w + ow;
                        const std::array<std::int64_t, 2> ds{td->i0[od], td->i1[od]};
                        const std::array<std::int64_t, 2> hs{th->i0[oh], th->i1[oh]};
                        const std::array<std::int64_t, 2> ws{tw->i0[ow], tw->i1[ow]};
                        const std::array<double, 2> wd{1.0 - td->w1[od], td->w1[od]};
                        const std::array<double, 2> wh{1.0 - th->w1[oh], th->w1[oh]};
                        const std::array<double, 2> ww{1.0 - tw->w1[ow], tw->w1[ow]};
                        for (int a = 0; a < 2; ++a)
                            for (int b = 0; b < 2; ++b)
                                for (int c = 0; c < 2; ++c)
                                    f(o, r * S + (ds[a] * in.h + hs[b]) * in.w + ws[c], static_cast<T>(wd[a] * wh[b] * ww[c]));
                    }
    };
    std::vector<T> y(static_cast<std::size_t>(nc * P), T(0));
    const auto& xv = x.values();
    visit([&](std::int64_t o, std::int64_t i, T w) { y[static_cast<std::size_t>(o)] += w * xv[static_cast<std::size_t>(i)]; });
    return make_result<T>({s[0], s[1], size.d, size.h, size.w}, std::move(y), {x},
                          [visit](Node<T>& self) {
                              T* gx = self.parent_grad(0);
                              visit([&](std::int64_t o, std::int64_t i, T w) { gx[i] += w * self.grad[static_cast<std::size_t>(o)]; });
                          },
                          "trilinear_resize");
}

} // namespace gliomaforge

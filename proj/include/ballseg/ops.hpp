#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>

#include "ballseg/parallel.hpp"
#include "ballseg/tensor.hpp"

namespace ballseg {

namespace detail {

inline void fail_shapes(const char* op, const std::string& what,
                        const std::string& a, const std::string& b) {
    std::ostringstream os;
    os << op << ": " << what << " (" << a << " vs " << b << ")";
    throw std::invalid_argument(os.str());
}

// ceil(num / den) for den > 0, correct for negative numerators.
inline int ceil_div(int num, int den) {
    return num > 0 ? (num + den - 1) / den : -((-num) / den);
}

}  // namespace detail

inline std::pair<int, int> conv2d_output_extents(int h, int w, int kh, int kw,
                                                 int stride, int padding) {
    if (h + 2 * padding < kh || w + 2 * padding < kw)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    return {(h + 2 * padding - kh) / stride + 1, (w + 2 * padding - kw) / stride + 1};
}

// Direct 2-D convolution (cross-correlation). Kernels are [outC, inC, kH, kW],
// bias has one entry per output channel (may be empty). The kernel-outer loop
// order keeps the inner loop contiguous over output columns.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& input, const TensorT<T>& kernels,
                  std::span<const T> bias, int stride, int padding) {
    const int B = input.batch(), IC = input.channels(), H = input.height(), W = input.width();
    const int OC = kernels.shape[0], KC = kernels.shape[1];
    const int KH = kernels.shape[2], KW = kernels.shape[3];
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
    if (KC != IC)
        detail::fail_shapes("conv2d", "input channels do not match kernel channels",
                            input.shape_str(), kernels.shape_str());
    if (!bias.empty() && static_cast<int>(bias.size()) != OC)
        throw std::invalid_argument("conv2d: bias size does not match output channels");
    auto [OH, OW] = conv2d_output_extents(H, W, KH, KW, stride, padding);

    TensorT<T> out(B, OC, OH, OW);
    parallel_for(B * OC, [&](int job) {
        const int b = job / OC, oc = job % OC;
        T* out_plane = out.plane(b, oc);
        const T init = bias.empty() ? T(0) : bias[oc];
        std::fill(out_plane, out_plane + static_cast<std::size_t>(OH) * OW, init);
        for (int ic = 0; ic < IC; ++ic) {
            const T* in_plane = input.plane(b, ic);
            for (int ky = 0; ky < KH; ++ky) {
                for (int kx = 0; kx < KW; ++kx) {
                    const T wv = kernels.at(oc, ic, ky, kx);
                    const int off = kx - padding;  // ix = ox * stride + off
                    const int ox_lo = std::max(0, detail::ceil_div(-off, stride));
                    const int ox_hi = std::min(OW, detail::ceil_div(W - off, stride));
                    if (ox_lo >= ox_hi) continue;
                    for (int oy = 0; oy < OH; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= H) continue;
                        const T* in_row = in_plane + static_cast<std::size_t>(iy) * W;
                        T* out_row = out_plane + static_cast<std::size_t>(oy) * OW;
                        if (stride == 1) {
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                out_row[ox] += wv * in_row[ox + off];
                        } else {
                            for (int ox = ox_lo; ox < ox_hi; ++ox)
                                out_row[ox] += wv * in_row[ox * stride + off];
                        }
                    }
                }
            }
        }
    });
    return out;
}

// Gradients of conv2d with respect to input, kernels and bias. The bias
// gradient is shaped [outC,1,1,1] to mirror how models store biases.
template <typename T>
LayerGradientsT<T> conv2d_backward(const TensorT<T>& input, const TensorT<T>& kernels,
                                   const TensorT<T>& upstream, int stride, int padding) {
    const int B = input.batch(), IC = input.channels(), H = input.height(), W = input.width();
    const int OC = kernels.shape[0];
    const int KH = kernels.shape[2], KW = kernels.shape[3];
    if (kernels.shape[1] != IC)
        detail::fail_shapes("conv2d_backward", "input channels do not match kernel channels",
                            input.shape_str(), kernels.shape_str());
    auto [OH, OW] = conv2d_output_extents(H, W, KH, KW, stride, padding);
    if (upstream.batch() != B || upstream.channels() != OC ||
        upstream.height() != OH || upstream.width() != OW) {
        TensorT<T> expected(0, 0, 0, 0);
        expected.shape = {B, OC, OH, OW};
        detail::fail_shapes("conv2d_backward", "upstream gradient has wrong shape",
                            upstream.shape_str(), expected.shape_str());
    }

    LayerGradientsT<T> grads;
    grads.wrt_input = TensorT<T>(B, IC, H, W);
    TensorT<T> d_kernels(OC, IC, KH, KW);
    TensorT<T> d_bias(OC, 1, 1, 1);

    // d/d_input: transpose convolution, scatter form. Parallel over batch so
    // each job owns its input-gradient planes.
    parallel_for(B, [&](int b) {
        for (int oc = 0; oc < OC; ++oc) {
            const T* up_plane = upstream.plane(b, oc);
            for (int ic = 0; ic < IC; ++ic) {
                T* din_plane = grads.wrt_input.plane(b, ic);
                for (int ky = 0; ky < KH; ++ky) {
                    for (int kx = 0; kx < KW; ++kx) {
                        const T wv = kernels.at(oc, ic, ky, kx);
                        const int off = kx - padding;
                        const int ox_lo = std::max(0, detail::ceil_div(-off, stride));
                        const int ox_hi = std::min(OW, detail::ceil_div(W - off, stride));
                        if (ox_lo >= ox_hi) continue;
                        for (int oy = 0; oy < OH; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= H) continue;
                            T* din_row = din_plane + static_cast<std::size_t>(iy) * W;
                            const T* up_row = up_plane + static_cast<std::size_t>(oy) * OW;
                            if (stride == 1) {
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    din_row[ox + off] += wv * up_row[ox];
                            } else {
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    din_row[ox * stride + off] += wv * up_row[ox];
                            }
                        }
                    }
                }
            }
        }
    });

    // d/d_kernels and d/d_bias: parallel over output channels, batch summed
    // inside in index order.
    parallel_for(OC, [&](int oc) {
        double bias_acc = 0.0;
        for (int b = 0; b < B; ++b) {
            const T* up_plane = upstream.plane(b, oc);
            for (std::size_t i = 0; i < static_cast<std::size_t>(OH) * OW; ++i)
                bias_acc += static_cast<double>(up_plane[i]);
            for (int ic = 0; ic < IC; ++ic) {
                const T* in_plane = input.plane(b, ic);
                for (int ky = 0; ky < KH; ++ky) {
                    for (int kx = 0; kx < KW; ++kx) {
                        const int off = kx - padding;
                        const int ox_lo = std::max(0, detail::ceil_div(-off, stride));
                        const int ox_hi = std::min(OW, detail::ceil_div(W - off, stride));
                        if (ox_lo >= ox_hi) continue;
                        T acc = 0;
                        for (int oy = 0; oy < OH; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= H) continue;
                            const T* in_row = in_plane + static_cast<std::size_t>(iy) * W;
                            const T* up_row = up_plane + static_cast<std::size_t>(oy) * OW;
                            if (stride == 1) {
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    acc += in_row[ox + off] * up_row[ox];
                            } else {
                                for (int ox = ox_lo; ox < ox_hi; ++ox)
                                    acc += in_row[ox * stride + off] * up_row[ox];
                            }
                        }
                        d_kernels.at(oc, ic, ky, kx) += acc;
                    }
                }
            }
        }
        d_bias.at(oc, 0, 0, 0) = static_cast<T>(bias_acc);
    });

    grads.wrt_parameters.emplace_back("kernels", std::move(d_kernels));
    grads.wrt_parameters.emplace_back("bias", std::move(d_bias));
    return grads;
}

template <typename T>
TensorT<T> relu(const TensorT<T>& input) {
    TensorT<T> out = input;
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    return out;
}

// Masks the upstream gradient where the forward input was <= 0.
template <typename T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& upstream) {
    if (!input.same_shape(upstream))
        detail::fail_shapes("relu_backward", "shape mismatch",
                            input.shape_str(), upstream.shape_str());
    TensorT<T> out = upstream;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (input.data[i] <= T(0)) out.data[i] = T(0);
    return out;
}

namespace detail {

// Half-pixel-center sample positions: src = (i + 0.5) * (src/target) - 0.5,
// clamped. Constants survive any resize exactly and identity resizes are
// bit-equal copies.
struct LerpAxis {
    std::vector<int> lo, hi;
    std::vector<double> frac;
};

inline LerpAxis lerp_axis(int src, int target) {
    LerpAxis ax;
    ax.lo.resize(target);
    ax.hi.resize(target);
    ax.frac.resize(target);
    const double scale = static_cast<double>(src) / target;
    for (int i = 0; i < target; ++i) {
        double s = (i + 0.5) * scale - 0.5;
        s = std::min(std::max(s, 0.0), static_cast<double>(src - 1));
        int lo = static_cast<int>(std::floor(s));
        ax.lo[i] = lo;
        ax.hi[i] = std::min(lo + 1, src - 1);
        ax.frac[i] = s - lo;
    }
    return ax;
}

}  // namespace detail

template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& input, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1)
        throw std::invalid_argument("resize_bilinear: target extents must be >= 1");
    const int B = input.batch(), C = input.channels(), H = input.height(), W = input.width();
    if (H < 1 || W < 1) throw std::invalid_argument("resize_bilinear: empty input");
    const auto ay = detail::lerp_axis(H, target_h);
    const auto ax = detail::lerp_axis(W, target_w);
    TensorT<T> out(B, C, target_h, target_w);
    parallel_for(B * C, [&](int job) {
        const T* in_plane = input.plane(job / C, job % C);
        T* out_plane = out.plane(job / C, job % C);
        for (int y = 0; y < target_h; ++y) {
            const T* r0 = in_plane + static_cast<std::size_t>(ay.lo[y]) * W;
            const T* r1 = in_plane + static_cast<std::size_t>(ay.hi[y]) * W;
            const T fy = static_cast<T>(ay.frac[y]);
            T* out_row = out_plane + static_cast<std::size_t>(y) * target_w;
            for (int x = 0; x < target_w; ++x) {
                const T fx = static_cast<T>(ax.frac[x]);
                const T top = r0[ax.lo[x]] + fx * (r0[ax.hi[x]] - r0[ax.lo[x]]);
                const T bot = r1[ax.lo[x]] + fx * (r1[ax.hi[x]] - r1[ax.lo[x]]);
                out_row[x] = top + fy * (bot - top);
            }
        }
    });
    return out;
}

// Transpose of resize_bilinear: scatters the upstream gradient back to the
// source grid with the same interpolation weights.
template <typename T>
TensorT<T> resize_bilinear_backward(const TensorT<T>& upstream, int src_h, int src_w) {
    const int B = upstream.batch(), C = upstream.channels();
    const int TH = upstream.height(), TW = upstream.width();
    const auto ay = detail::lerp_axis(src_h, TH);
    const auto ax = detail::lerp_axis(src_w, TW);
    TensorT<T> out(B, C, src_h, src_w);
    parallel_for(B * C, [&](int job) {
        const T* up_plane = upstream.plane(job / C, job % C);
        T* out_plane = out.plane(job / C, job % C);
        for (int y = 0; y < TH; ++y) {
            const T fy = static_cast<T>(ay.frac[y]);
            T* r0 = out_plane + static_cast<std::size_t>(ay.lo[y]) * src_w;
            T* r1 = out_plane + static_cast<std::size_t>(ay.hi[y]) * src_w;
            const T* up_row = up_plane + static_cast<std::size_t>(y) * TW;
            for (int x = 0; x < TW; ++x) {
                const T fx = static_cast<T>(ax.frac[x]);
                const T g = up_row[x];
                r0[ax.lo[x]] += (T(1) - fy) * (T(1) - fx) * g;
                r0[ax.hi[x]] += (T(1) - fy) * fx * g;
                r1[ax.lo[x]] += fy * (T(1) - fx) * g;
                r1[ax.hi[x]] += fy * fx * g;
            }
        }
    });
    return out;
}

// Per-pixel softmax over the channel axis, max-subtracted for stability.
template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& input) {
    const int B = input.batch(), C = input.channels(), H = input.height(), W = input.width();
    if (C < 2) throw std::invalid_argument("softmax_channels: need at least 2 channels");
    TensorT<T> out(B, C, H, W);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int b = 0; b < B; ++b) {
        const T* in_base = input.plane(b, 0);
        T* out_base = out.plane(b, 0);
        for (std::size_t p = 0; p < plane; ++p) {
            T m = in_base[p];
            for (int c = 1; c < C; ++c) m = std::max(m, in_base[c * plane + p]);
            T sum = 0;
            for (int c = 0; c < C; ++c) {
                const T e = std::exp(in_base[c * plane + p] - m);
                out_base[c * plane + p] = e;
                sum += e;
            }
            for (int c = 0; c < C; ++c) out_base[c * plane + p] /= sum;
        }
    }
    return out;
}

namespace detail {

template <typename T>
void check_probs_mask(const char* op, const TensorT<T>& probs, const TensorT<T>& mask) {
    if (probs.channels() != 2)
        throw std::invalid_argument(std::string(op) + ": predicted probabilities must have 2 channels "
                                    "(background, ball), got " + probs.shape_str());
    if (mask.channels() != 1 || mask.batch() != probs.batch() ||
        mask.height() != probs.height() || mask.width() != probs.width())
        fail_shapes(op, "mask shape incompatible with predictions",
                    mask.shape_str(), probs.shape_str());
    for (T v : mask.data)
        if (v != T(0) && v != T(1))
            throw std::invalid_argument(std::string(op) + ": target mask must be binary (0 or 1)");
}

}  // namespace detail

inline constexpr double kCrossEntropyFloor = 1e-7;

// Mean over all pixels of -log p(true class). Channel 0 is background,
// channel 1 is ball; the log argument is floored at 1e-7.
template <typename T>
T cross_entropy_pixel_mean(const TensorT<T>& probs, const TensorT<T>& mask) {
    detail::check_probs_mask("cross_entropy_pixel_mean", probs, mask);
    const int B = probs.batch(), H = probs.height(), W = probs.width();
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    double total = 0.0;
    for (int b = 0; b < B; ++b) {
        const T* p0 = probs.plane(b, 0);
        const T* p1 = probs.plane(b, 1);
        const T* m = mask.plane(b, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            const double p_true = static_cast<double>(m[i] == T(1) ? p1[i] : p0[i]);
            total -= std::log(std::max(p_true, kCrossEntropyFloor));
        }
    }
    return static_cast<T>(total / (static_cast<double>(B) * plane));
}

// Gradient of cross_entropy_pixel_mean(softmax(logits), mask) with respect
// to the logits: (prob - onehot) / pixel_count.
template <typename T>
TensorT<T> cross_entropy_softmax_backward(const TensorT<T>& probs, const TensorT<T>& mask) {
    detail::check_probs_mask("cross_entropy_softmax_backward", probs, mask);
    const int B = probs.batch(), H = probs.height(), W = probs.width();
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const T inv_n = static_cast<T>(1.0 / (static_cast<double>(B) * plane));
    TensorT<T> out = probs;
    for (int b = 0; b < B; ++b) {
        T* g0 = out.plane(b, 0);
        T* g1 = out.plane(b, 1);
        const T* m = mask.plane(b, 0);
        for (std::size_t i = 0; i < plane; ++i) {
            if (m[i] == T(1)) g1[i] -= T(1);
            else g0[i] -= T(1);
            g0[i] *= inv_n;
            g1[i] *= inv_n;
        }
    }
    return out;
}

// Plain SGD, p <- p - lr * g.
template <typename T>
void sgd_update(TensorT<T>& param, const TensorT<T>& grad, T learning_rate) {
    if (!param.same_shape(grad))
        detail::fail_shapes("sgd_update", "parameter/gradient shape mismatch",
                            param.shape_str(), grad.shape_str());
    for (std::size_t i = 0; i < param.data.size(); ++i)
        param.data[i] -= learning_rate * grad.data[i];
}

}  // namespace ballseg

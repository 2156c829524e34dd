#pragma once

// Test-only reference implementations. These stay independent of the library
// paths they check: convolution is the literal six-nested-loop definition,
// resizing is the per-pixel interpolation formula, top-k is a rescan-per-peak
// greedy with an explicit suppression mask, and gradients come from central
// finite differences evaluated in double.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <ballseg/detection.hpp>
#include <ballseg/rng.hpp>
#include <ballseg/tensor.hpp>

namespace oracle {

using ballseg::Tensor;
using ballseg::TensorT;

template <typename T>
TensorT<T> conv_naive(const TensorT<T>& in, const TensorT<T>& k, const std::vector<T>& bias,
                      int stride, int padding) {
    const int B = in.batch(), IC = in.channels(), H = in.height(), W = in.width();
    const int OC = k.shape[0], KH = k.shape[2], KW = k.shape[3];
    const int OH = (H + 2 * padding - KH) / stride + 1;
    const int OW = (W + 2 * padding - KW) / stride + 1;
    TensorT<T> out(B, OC, OH, OW);
    for (int b = 0; b < B; ++b)
        for (int oc = 0; oc < OC; ++oc)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    T acc = bias.empty() ? T(0) : bias[oc];
                    for (int ic = 0; ic < IC; ++ic)
                        for (int ky = 0; ky < KH; ++ky)
                            for (int kx = 0; kx < KW; ++kx) {
                                const int iy = oy * stride - padding + ky;
                                const int ix = ox * stride - padding + kx;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += in.at(b, ic, iy, ix) * k.at(oc, ic, ky, kx);
                            }
                    out.at(b, oc, oy, ox) = acc;
                }
    return out;
}

// Per-pixel bilinear interpolation with half-pixel-center sampling.
inline TensorT<double> resize_ref(const TensorT<double>& in, int th, int tw) {
    const int B = in.batch(), C = in.channels(), H = in.height(), W = in.width();
    TensorT<double> out(B, C, th, tw);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x) {
                    double sy = (y + 0.5) * H / th - 0.5;
                    double sx = (x + 0.5) * W / tw - 0.5;
                    sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
                    sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
                    const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
                    const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                    const double fy = sy - y0, fx = sx - x0;
                    out.at(b, c, y, x) = (1 - fy) * ((1 - fx) * in.at(b, c, y0, x0) + fx * in.at(b, c, y0, x1)) +
                                         fy * ((1 - fx) * in.at(b, c, y1, x0) + fx * in.at(b, c, y1, x1));
                }
    return out;
}

// Softmax + pixel-mean cross entropy straight from the formulas, in double.
inline double ce_softmax_ref(const TensorT<double>& logits, const TensorT<double>& mask) {
    const int B = logits.batch(), H = logits.height(), W = logits.width();
    double total = 0;
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double z0 = logits.at(b, 0, y, x), z1 = logits.at(b, 1, y, x);
                const double m = std::max(z0, z1);
                const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
                const double p_true = (mask.at(b, 0, y, x) == 1.0 ? e1 : e0) / (e0 + e1);
                total -= std::log(p_true);
            }
    return total / (static_cast<double>(B) * H * W);
}

// Central finite differences d f / d x_i, f evaluated in double.
inline std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double eps) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double hi = f(x);
        x[i] = keep - eps;
        const double lo = f(x);
        x[i] = keep;
        g[i] = (hi - lo) / (2 * eps);
    }
    return g;
}

// Checks |analytic - fd| / max(|analytic|, |fd|) < rel_tol wherever the
// magnitude clears min_mag. Returns the number of comparisons that failed.
inline int count_grad_mismatches(const std::vector<float>& analytic, const std::vector<double>& fd,
                                 double rel_tol, double min_mag) {
    int bad = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i];
        const double mag = std::max(std::fabs(a), std::fabs(fd[i]));
        if (mag <= min_mag) continue;
        if (std::fabs(a - fd[i]) / mag >= rel_tol) ++bad;
    }
    return bad;
}

// Rescan-per-peak greedy top-k with an explicit suppression mask. Scan order
// is row-major and strictly-greater comparison keeps the first (smallest
// (y, x)) of tied values.
inline std::vector<ballseg::Detection> topk_brute(const Tensor& map, int k, float tau, int radius) {
    const int H = map.height(), W = map.width();
    std::vector<char> suppressed(static_cast<std::size_t>(H) * W, 0);
    std::vector<ballseg::Detection> out;
    for (int iter = 0; iter < k; ++iter) {
        int best = -1;
        float best_v = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const int i = y * W + x;
                if (suppressed[i]) continue;
                const float v = map.at(0, 0, y, x);
                if (v < tau) continue;
                if (best < 0 || v > best_v) {
                    best = i;
                    best_v = v;
                }
            }
        if (best < 0) break;
        const int by = best / W, bx = best % W;
        out.push_back({bx, by, best_v, iter + 1});
        for (int y = std::max(0, by - radius); y <= std::min(H - 1, by + radius); ++y)
            for (int x = std::max(0, bx - radius); x <= std::min(W - 1, bx + radius); ++x)
                suppressed[static_cast<std::size_t>(y) * W + x] = 1;
    }
    return out;
}

template <typename T>
TensorT<T> random_tensor(int b, int c, int h, int w, ballseg::Rng& rng, double lo = -1.0,
                         double hi = 1.0) {
    TensorT<T> t(b, c, h, w);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

}  // namespace oracle

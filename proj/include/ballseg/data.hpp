#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ballseg/image_io.hpp"
#include "ballseg/ops.hpp"
#include "ballseg/rng.hpp"
#include "ballseg/tensor.hpp"

namespace ballseg {

// One annotated capture: the image of interest, the previous image, and the
// binary ball mask, all [1,C,H,W] with values in [0,1].
struct Scene {
    Tensor image_a;  // [1,3,H,W]
    Tensor image_b;  // [1,3,H,W], captured frame_delay_ms earlier
    Tensor mask;     // [1,1,H,W], 1 = ball
    std::string scene_id;
    std::string arena_id;
    std::string game_id;
    int frame_delay_ms = 33;

    int height() const { return image_a.height(); }
    int width() const { return image_a.width(); }
};

struct CropRect {
    int x = 0, y = 0, w = 0, h = 0;
    bool operator==(const CropRect&) const = default;
};

// One random-crop instance: a rectangle in scene pixels, the scene-to-output
// scale factor, and a mirror flag.
struct CropSpec {
    CropRect rect;
    float scale = 1.0f;  // output pixels per scene pixel
    bool mirror = false;
};

inline CropSpec full_frame_spec(int scene_w, int scene_h) {
    return CropSpec{{0, 0, scene_w, scene_h}, 1.0f, false};
}

// Eq-style network input: channels (R_a, G_a, B_a, |R_a-R_b|, |G_a-G_b|,
// |B_a-B_b|), or just (R_a, G_a, B_a) when use_diff is off.
inline Tensor compose_input(const Tensor& image_a, const Tensor& image_b, bool use_diff) {
    if (!image_a.same_shape(image_b))
        detail::fail_shapes("compose_input", "image pair extents differ",
                            image_a.shape_str(), image_b.shape_str());
    const int H = image_a.height(), W = image_a.width();
    Tensor out(1, use_diff ? 6 : 3, H, W);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < 3; ++c)
        std::copy(image_a.plane(0, c), image_a.plane(0, c) + plane, out.plane(0, c));
    if (use_diff) {
        for (int c = 0; c < 3; ++c) {
            const float* a = image_a.plane(0, c);
            const float* b = image_b.plane(0, c);
            float* d = out.plane(0, c + 3);
            for (std::size_t i = 0; i < plane; ++i) d[i] = std::fabs(a[i] - b[i]);
        }
    }
    return out;
}

inline Tensor make_input(const Scene& scene, bool use_diff = true) {
    return compose_input(scene.image_a, scene.image_b, use_diff);
}

// Bounding box of the mask foreground, as an inclusive pixel rectangle.
struct MaskBounds {
    int min_x, min_y, max_x, max_y;
    int width() const { return max_x - min_x + 1; }
    int height() const { return max_y - min_y + 1; }
};

inline std::optional<MaskBounds> mask_bounds(const Tensor& mask) {
    const int H = mask.height(), W = mask.width();
    MaskBounds b{W, H, -1, -1};
    const float* m = mask.plane(0, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            if (m[static_cast<std::size_t>(y) * W + x] > 0.5f) {
                b.min_x = std::min(b.min_x, x);
                b.min_y = std::min(b.min_y, y);
                b.max_x = std::max(b.max_x, x);
                b.max_y = std::max(b.max_y, y);
            }
    if (b.max_x < 0) return std::nullopt;
    return b;
}

inline constexpr int kMinBallOutputPixels = 15;
inline constexpr int kMaxBallOutputPixels = 45;

// Samples a training crop: the ball stays fully inside the rectangle and its
// scaled diameter lands in [15, 45] output pixels. Mirroring is a fair coin.
inline CropSpec sample_training_crop(const Scene& scene, int out_w, int out_h, Rng& rng) {
    if (out_w < 1 || out_h < 1)
        throw std::invalid_argument("sample_training_crop: target extents must be positive");
    const int W = scene.width(), H = scene.height();
    const auto bounds = mask_bounds(scene.mask);
    if (!bounds) throw std::invalid_argument("sample_training_crop: scene mask has no foreground");
    const int diam = std::max(bounds->width(), bounds->height());

    // diam * out_w / rect_w must lie in [15, 45]; integer bounds keep the
    // guarantee exact after rounding.
    const long long num = static_cast<long long>(diam) * out_w;
    int lo = static_cast<int>((num + kMaxBallOutputPixels - 1) / kMaxBallOutputPixels);
    int hi = static_cast<int>(num / kMinBallOutputPixels);
    lo = std::max({lo, bounds->width(), 1});
    hi = std::min(hi, W);

    auto rect_h_for = [&](int rect_w) {
        return std::max(1, static_cast<int>(std::lround(static_cast<double>(rect_w) * out_h / out_w)));
    };
    // Also respect the vertical constraints (contain the ball, fit the scene).
    while (lo <= hi && (rect_h_for(lo) < bounds->height())) ++lo;
    while (hi >= lo && (rect_h_for(hi) > H)) --hi;
    if (lo > hi) {
        std::ostringstream os;
        os << "sample_training_crop: no feasible crop for ball diameter " << diam
           << "px in a " << W << "x" << H << " scene with " << out_w << "x" << out_h
           << " targets (ball must scale to [" << kMinBallOutputPixels << ","
           << kMaxBallOutputPixels << "] px)";
        throw std::invalid_argument(os.str());
    }

    const int rect_w = rng.uniform_int(lo, hi);
    const int rect_h = rect_h_for(rect_w);
    const int x_lo = std::max(0, bounds->max_x + 1 - rect_w);
    const int x_hi = std::min(bounds->min_x, W - rect_w);
    const int y_lo = std::max(0, bounds->max_y + 1 - rect_h);
    const int y_hi = std::min(bounds->min_y, H - rect_h);
    if (x_lo > x_hi || y_lo > y_hi)
        throw std::invalid_argument("sample_training_crop: ball cannot be contained at the sampled scale");

    CropSpec spec;
    spec.rect = {rng.uniform_int(x_lo, x_hi), rng.uniform_int(y_lo, y_hi), rect_w, rect_h};
    spec.scale = static_cast<float>(static_cast<double>(out_w) / rect_w);
    spec.mirror = rng.bernoulli(0.5);
    return spec;
}

namespace detail {

inline Tensor crop_tensor(const Tensor& t, const CropRect& r) {
    Tensor out(1, t.channels(), r.h, r.w);
    for (int c = 0; c < t.channels(); ++c)
        for (int y = 0; y < r.h; ++y) {
            const float* src = t.plane(0, c) + static_cast<std::size_t>(r.y + y) * t.width() + r.x;
            std::copy(src, src + r.w, out.plane(0, c) + static_cast<std::size_t>(y) * r.w);
        }
    return out;
}

inline void mirror_horizontal(Tensor& t) {
    const int W = t.width();
    for (int b = 0; b < t.batch(); ++b)
        for (int c = 0; c < t.channels(); ++c)
            for (int y = 0; y < t.height(); ++y) {
                float* row = t.plane(b, c) + static_cast<std::size_t>(y) * W;
                std::reverse(row, row + W);
            }
}

inline Tensor resize_nearest(const Tensor& t, int target_h, int target_w) {
    const int H = t.height(), W = t.width();
    Tensor out(t.batch(), t.channels(), target_h, target_w);
    for (int b = 0; b < t.batch(); ++b)
        for (int c = 0; c < t.channels(); ++c) {
            const float* in_plane = t.plane(b, c);
            float* out_plane = out.plane(b, c);
            for (int y = 0; y < target_h; ++y) {
                const int sy = std::clamp(static_cast<int>(std::lround((y + 0.5) * H / target_h - 0.5)), 0, H - 1);
                for (int x = 0; x < target_w; ++x) {
                    const int sx = std::clamp(static_cast<int>(std::lround((x + 0.5) * W / target_w - 0.5)), 0, W - 1);
                    out_plane[static_cast<std::size_t>(y) * target_w + x] =
                        in_plane[static_cast<std::size_t>(sy) * W + sx];
                }
            }
        }
    return out;
}

}  // namespace detail

struct CropResult {
    Tensor input;  // [1, 6|3, out_h, out_w]
    Tensor mask;   // [1, 1, out_h, out_w], re-binarized
};

// Crop, bilinear-resize to the target size, mirror if flagged. The mask uses
// nearest-neighbor resampling and is re-binarized at 0.5.
inline CropResult apply_crop(const Scene& scene, const CropSpec& spec, int out_w, int out_h,
                             bool use_diff = true) {
    const auto& r = spec.rect;
    if (r.x < 0 || r.y < 0 || r.w < 1 || r.h < 1 ||
        r.x + r.w > scene.width() || r.y + r.h > scene.height()) {
        std::ostringstream os;
        os << "apply_crop: rect (" << r.x << "," << r.y << "," << r.w << "," << r.h
           << ") out of bounds for " << scene.width() << "x" << scene.height() << " scene";
        throw std::invalid_argument(os.str());
    }
    Tensor a = resize_bilinear(detail::crop_tensor(scene.image_a, r), out_h, out_w);
    Tensor b = resize_bilinear(detail::crop_tensor(scene.image_b, r), out_h, out_w);
    Tensor m = detail::resize_nearest(detail::crop_tensor(scene.mask, r), out_h, out_w);
    if (spec.mirror) {
        detail::mirror_horizontal(a);
        detail::mirror_horizontal(b);
        detail::mirror_horizontal(m);
    }
    for (float& v : m.data) v = v >= 0.5f ? 1.0f : 0.0f;
    return {compose_input(a, b, use_diff), std::move(m)};
}

inline double crop_iou(const CropSpec& a, const CropSpec& b) {
    const auto &ra = a.rect, &rb = b.rect;
    if (ra.w < 1 || ra.h < 1 || rb.w < 1 || rb.h < 1)
        throw std::invalid_argument("crop_iou: rects must have positive extents");
    const long long ix = std::max(0, std::min(ra.x + ra.w, rb.x + rb.w) - std::max(ra.x, rb.x));
    const long long iy = std::max(0, std::min(ra.y + ra.h, rb.y + rb.h) - std::max(ra.y, rb.y));
    const long long inter = ix * iy;
    const long long uni = static_cast<long long>(ra.w) * ra.h + static_cast<long long>(rb.w) * rb.h - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// Jitters the base crop (offsets up to +/-(1-iou_min)/2 of each extent, scale
// up to +/-min(2%, 1-iou_min)) and rejection-samples against the IoU floor.
inline CropSpec sample_tta_crop(const CropSpec& base, const Scene& scene, double iou_min, Rng& rng) {
    if (!(iou_min > 0.0 && iou_min < 1.0))
        throw std::invalid_argument("sample_tta_crop: iou_min must lie in (0,1)");
    const int W = scene.width(), H = scene.height();
    const double offset_frac = (1.0 - iou_min) / 2.0;
    const double scale_jitter = std::min(0.02, 1.0 - iou_min);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const double u = rng.uniform(1.0 - scale_jitter, 1.0 + scale_jitter);
        const int nw = std::clamp(static_cast<int>(std::lround(base.rect.w * u)), 1, W);
        const int nh = std::clamp(static_cast<int>(std::lround(base.rect.h * u)), 1, H);
        const double cx = base.rect.x + base.rect.w / 2.0 + rng.uniform(-offset_frac, offset_frac) * base.rect.w;
        const double cy = base.rect.y + base.rect.h / 2.0 + rng.uniform(-offset_frac, offset_frac) * base.rect.h;
        CropSpec cand;
        cand.rect = {std::clamp(static_cast<int>(std::lround(cx - nw / 2.0)), 0, W - nw),
                     std::clamp(static_cast<int>(std::lround(cy - nh / 2.0)), 0, H - nh), nw, nh};
        cand.scale = static_cast<float>(base.scale * (static_cast<double>(base.rect.w) / nw));
        cand.mirror = base.mirror;
        if (crop_iou(base, cand) >= iou_min) return cand;
    }
    std::ostringstream os;
    os << "sample_tta_crop: 1000 consecutive rejections against IoU >= " << iou_min
       << " (base rect " << base.rect.w << "x" << base.rect.h << " in " << W << "x" << H << " scene)";
    throw std::runtime_error(os.str());
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

// Generator knobs for one arena's look. Static ball-colored discs are
// deliberately indistinguishable from the ball in a single frame, so the
// difference channels carry the only reliable cue.
struct SynthParams {
    int width = 192, height = 128;
    float ball_radius_min = 9.0f, ball_radius_max = 15.0f;
    float ball_speed_min = 4.0f, ball_speed_max = 12.0f;  // pixels per frame
    int static_discs = 3;    // stationary ball-colored discs
    int moving_blobs = 2;    // moving non-circular distractors
    int texture_blobs = 4;   // soft background blotches
    float luminance_min = 0.35f, luminance_max = 0.75f;
    float contrast_min = 0.7f, contrast_max = 1.0f;
    float noise_level = 0.02f;
    std::array<float, 3> floor_tint = {0.62f, 0.58f, 0.52f};
    std::string arena_id = "arena-0";

    void validate() const {
        if (width < 16 || height < 16)
            throw std::invalid_argument("SynthParams: scene extents too small");
        if (!(ball_radius_min > 0 && ball_radius_max >= ball_radius_min))
            throw std::invalid_argument("SynthParams: empty ball radius range");
        if (!(ball_speed_min >= 0 && ball_speed_max >= ball_speed_min))
            throw std::invalid_argument("SynthParams: empty ball speed range");
        if (!(luminance_max >= luminance_min && contrast_max >= contrast_min))
            throw std::invalid_argument("SynthParams: empty luminance/contrast range");
        if (noise_level < 0 || static_discs < 0 || moving_blobs < 0 || texture_blobs < 0)
            throw std::invalid_argument("SynthParams: negative counts or noise");
        const float margin = ball_radius_max + ball_speed_max + 2;
        if (2 * margin >= std::min(width, height))
            throw std::invalid_argument("SynthParams: ball radius/speed too large for scene extents");
    }
};

namespace detail {

struct Rgb {
    float r, g, b;
};

inline void blend_pixel(Tensor& img, int x, int y, const Rgb& color, float alpha) {
    if (alpha <= 0.0f) return;
    const std::size_t i = static_cast<std::size_t>(y) * img.width() + x;
    const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
    float* d = img.plane(0, 0);
    d[i] += alpha * (color.r - d[i]);
    d[plane + i] += alpha * (color.g - d[plane + i]);
    d[2 * plane + i] += alpha * (color.b - d[2 * plane + i]);
}

// Anti-aliased disc: per-pixel coverage ramps linearly across the rim.
inline void draw_disc(Tensor& img, double cx, double cy, double radius, const Rgb& color) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
    const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + radius + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
    const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + radius + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double d = std::hypot(x - cx, y - cy);
            const float cov = static_cast<float>(std::clamp(radius + 0.5 - d, 0.0, 1.0));
            blend_pixel(img, x, y, color, cov);
        }
}

inline float disc_coverage(double cx, double cy, double radius, int x, int y) {
    return static_cast<float>(std::clamp(radius + 0.5 - std::hypot(x - cx, y - cy), 0.0, 1.0));
}

// Soft-edged axis-aligned rectangle, the moving non-circular distractor.
inline void draw_bar(Tensor& img, double cx, double cy, double half_w, double half_h, const Rgb& color) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - half_w - 1)));
    const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + half_w + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - half_h - 1)));
    const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + half_h + 1)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const float cx_cov = static_cast<float>(std::clamp(half_w + 0.5 - std::fabs(x - cx), 0.0, 1.0));
            const float cy_cov = static_cast<float>(std::clamp(half_h + 0.5 - std::fabs(y - cy), 0.0, 1.0));
            blend_pixel(img, x, y, color, cx_cov * cy_cov);
        }
}

}  // namespace detail

// Ground-truth geometry of a rendered scene, for tests and diagnostics.
struct SynthTruth {
    double ball_x = 0, ball_y = 0, ball_radius = 0;
    double velocity_x = 0, velocity_y = 0;  // pixels from image_b to image_a
};

// Renders one synthetic scene: textured background shared across the pair,
// static ball-colored discs, moving bars, and the ball at p in image_a and
// p - v in image_b. Pixel noise is drawn independently per image.
inline Scene synth_scene(const SynthParams& params, Rng& rng, SynthTruth* truth = nullptr) {
    params.validate();
    const int W = params.width, H = params.height;

    Scene scene;
    scene.arena_id = params.arena_id;
    scene.game_id = params.arena_id + "-g" + std::to_string(rng.uniform_int(0, 1));
    scene.frame_delay_ms = rng.bernoulli(0.5) ? 33 : 40;

    const float contrast = static_cast<float>(rng.uniform(params.contrast_min, params.contrast_max));
    const float lum = static_cast<float>(rng.uniform(params.luminance_min, params.luminance_max));

    // Background: tinted floor plus a horizontal lighting ramp and soft blobs.
    Tensor bg(1, 3, H, W);
    const float ramp = static_cast<float>(rng.uniform(-0.12, 0.12));
    for (int c = 0; c < 3; ++c) {
        float* plane = bg.plane(0, c);
        const float base = lum * params.floor_tint[c];
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                plane[static_cast<std::size_t>(y) * W + x] =
                    std::clamp(base + ramp * (static_cast<float>(x) / W - 0.5f), 0.0f, 1.0f);
    }
    for (int i = 0; i < params.texture_blobs; ++i) {
        const double bx = rng.uniform(0, W), by = rng.uniform(0, H);
        const double br = rng.uniform(0.15, 0.45) * std::min(W, H);
        const detail::Rgb tint{static_cast<float>(lum * rng.uniform(0.7, 1.3)),
                               static_cast<float>(lum * rng.uniform(0.7, 1.3)),
                               static_cast<float>(lum * rng.uniform(0.7, 1.3))};
        const int x0 = std::max(0, static_cast<int>(bx - br)), x1 = std::min(W - 1, static_cast<int>(bx + br));
        const int y0 = std::max(0, static_cast<int>(by - br)), y1 = std::min(H - 1, static_cast<int>(by + br));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const float t = static_cast<float>(std::clamp(1.0 - std::hypot(x - bx, y - by) / br, 0.0, 1.0));
                detail::blend_pixel(bg, x, y, tint, 0.35f * t);
            }
    }

    scene.image_a = bg;
    scene.image_b = std::move(bg);

    auto ball_color = [&] {
        // basketball-orange family; static discs draw from the same family
        return detail::Rgb{std::clamp(static_cast<float>(contrast * (0.80 + rng.uniform(-0.08, 0.08))), 0.0f, 1.0f),
                           std::clamp(static_cast<float>(contrast * (0.45 + rng.uniform(-0.08, 0.08))), 0.0f, 1.0f),
                           std::clamp(static_cast<float>(contrast * (0.18 + rng.uniform(-0.06, 0.06))), 0.0f, 1.0f)};
    };

    const double ball_r = rng.uniform(params.ball_radius_min, params.ball_radius_max);
    const double margin = params.ball_radius_max + params.ball_speed_max + 2;
    const double ball_x = rng.uniform(margin, W - margin);
    const double ball_y = rng.uniform(margin, H - margin);

    // Static discs: identical in both images, kept clear of the ball.
    for (int i = 0; i < params.static_discs; ++i) {
        const double r = rng.uniform(params.ball_radius_min, params.ball_radius_max);
        double dx = 0, dy = 0;
        for (int tries = 0; tries < 50; ++tries) {
            dx = rng.uniform(r + 1, W - r - 1);
            dy = rng.uniform(r + 1, H - r - 1);
            if (std::hypot(dx - ball_x, dy - ball_y) > ball_r + r + 6) break;
        }
        const detail::Rgb color = ball_color();
        detail::draw_disc(scene.image_a, dx, dy, r, color);
        detail::draw_disc(scene.image_b, dx, dy, r, color);
    }

    // Moving bars: long and thin so their shape is nothing like the ball's.
    for (int i = 0; i < params.moving_blobs; ++i) {
        const double half_w = rng.uniform(2.0 * params.ball_radius_min, 2.6 * params.ball_radius_max);
        const double half_h = rng.uniform(0.2 * params.ball_radius_min, 0.4 * params.ball_radius_min);
        const double speed = rng.uniform(params.ball_speed_min, params.ball_speed_max);
        const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        const double vx = speed * std::cos(angle), vy = speed * std::sin(angle);
        const double m = half_w + speed + 2;
        double bx = rng.uniform(m, W - m), by = rng.uniform(m, H - m);
        for (int tries = 0; tries < 50 && std::hypot(bx - ball_x, by - ball_y) < ball_r + half_w + 8; ++tries) {
            bx = rng.uniform(m, W - m);
            by = rng.uniform(m, H - m);
        }
        const detail::Rgb color{static_cast<float>(contrast * rng.uniform(0.25, 0.9)),
                                static_cast<float>(contrast * rng.uniform(0.25, 0.9)),
                                static_cast<float>(contrast * rng.uniform(0.25, 0.9))};
        detail::draw_bar(scene.image_a, bx, by, half_w, half_h, color);
        detail::draw_bar(scene.image_b, bx - vx, by - vy, half_w, half_h, color);
    }

    // The ball, last so nothing occludes it. image_b holds it at p - v.
    const double speed = rng.uniform(params.ball_speed_min, params.ball_speed_max);
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const detail::Rgb bcol = ball_color();
    detail::draw_disc(scene.image_a, ball_x, ball_y, ball_r, bcol);
    detail::draw_disc(scene.image_b, ball_x - speed * std::cos(angle),
                      ball_y - speed * std::sin(angle), ball_r, bcol);
    if (truth)
        *truth = {ball_x, ball_y, ball_r, speed * std::cos(angle), speed * std::sin(angle)};

    // Mask: geometric coverage of the ball in image_a, >= half-covered pixels.
    scene.mask = Tensor(1, 1, H, W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            scene.mask.at(0, 0, y, x) =
                detail::disc_coverage(ball_x, ball_y, ball_r, x, y) >= 0.5f ? 1.0f : 0.0f;

    if (params.noise_level > 0) {
        for (Tensor* img : {&scene.image_a, &scene.image_b})
            for (float& v : img->data)
                v = std::clamp(v + static_cast<float>(rng.uniform(-params.noise_level, params.noise_level)),
                               0.0f, 1.0f);
    }
    return scene;
}

// Deterministic multi-arena dataset: scenes are split into contiguous
// per-arena blocks and every arena gets its own floor tint and lighting
// window, so folds built on arena_id face genuinely distinct looks.
inline std::vector<Scene> generate_synthetic_dataset(const SynthParams& base, int count,
                                                     int arenas, std::uint64_t seed) {
    if (count < 0 || arenas < 1)
        throw std::invalid_argument("generate_synthetic_dataset: bad count/arena numbers");
    std::vector<Scene> scenes;
    scenes.reserve(count);
    std::vector<SynthParams> arena_params(arenas, base);
    for (int a = 0; a < arenas; ++a) {
        Rng ar(mix_seed(seed, 0xa0e0aULL + a));
        auto& p = arena_params[a];
        p.arena_id = "arena-" + std::to_string(a);
        p.floor_tint = {static_cast<float>(ar.uniform(0.45, 0.75)),
                        static_cast<float>(ar.uniform(0.45, 0.75)),
                        static_cast<float>(ar.uniform(0.45, 0.75))};
        const float lum_span = base.luminance_max - base.luminance_min;
        const float lum_lo = base.luminance_min + static_cast<float>(ar.uniform(0.0, 0.4)) * lum_span;
        p.luminance_min = lum_lo;
        p.luminance_max = std::min(base.luminance_max, lum_lo + 0.6f * lum_span);
    }
    for (int i = 0; i < count; ++i) {
        const int arena = std::min(arenas - 1, i * arenas / std::max(count, 1));
        Rng rng(mix_seed(seed, i));
        Scene s = synth_scene(arena_params[arena], rng);
        char id[32];
        std::snprintf(id, sizeof(id), "scene-%04d", i);
        s.scene_id = id;
        scenes.push_back(std::move(s));
    }
    return scenes;
}

// ---------------------------------------------------------------------------
// Dataset manifest: one JSON object per line with scene_id, arena_id,
// game_id, image_a, image_b, mask (paths relative to the manifest) and
// frame_delay_ms.
// ---------------------------------------------------------------------------

inline std::vector<Scene> load_dataset(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + manifest_path.string());
    const auto base = manifest_path.has_parent_path() ? manifest_path.parent_path()
                                                      : std::filesystem::path(".");
    std::vector<Scene> scenes;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error("load_dataset: bad JSON on line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
        Scene s;
        try {
            s.scene_id = j.at("scene_id").get<std::string>();
            s.arena_id = j.at("arena_id").get<std::string>();
            s.game_id = j.at("game_id").get<std::string>();
            s.frame_delay_ms = j.at("frame_delay_ms").get<int>();
            const auto path_a = base / j.at("image_a").get<std::string>();
            const auto path_b = base / j.at("image_b").get<std::string>();
            const auto path_m = base / j.at("mask").get<std::string>();
            s.image_a = tensor_from_image(read_png(path_a, 3));
            s.image_b = tensor_from_image(read_png(path_b, 3));
            s.mask = mask_from_image(read_png(path_m, 1));
        } catch (const std::exception& e) {
            throw std::runtime_error("load_dataset: scene '" +
                                     (s.scene_id.empty() ? ("line " + std::to_string(line_no)) : s.scene_id) +
                                     "': " + e.what());
        }
        if (!s.image_a.same_shape(s.image_b) || s.mask.height() != s.image_a.height() ||
            s.mask.width() != s.image_a.width())
            throw std::runtime_error("load_dataset: scene '" + s.scene_id +
                                     "': extent mismatch between pair and mask (image_a " +
                                     s.image_a.shape_str() + ", image_b " + s.image_b.shape_str() +
                                     ", mask " + s.mask.shape_str() + ")");
        if (!mask_bounds(s.mask))
            throw std::runtime_error("load_dataset: scene '" + s.scene_id +
                                     "': mask has zero foreground pixels");
        for (const auto& other : scenes)
            if (other.scene_id == s.scene_id)
                throw std::runtime_error("load_dataset: duplicate scene_id '" + s.scene_id + "'");
        scenes.push_back(std::move(s));
    }
    return scenes;
}

// Writes scenes in the manifest layout (images/ subdirectory + manifest.jsonl).
// Returns the manifest path.
inline std::filesystem::path write_dataset(const std::vector<Scene>& scenes,
                                           const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir / "images");
    const auto manifest_path = out_dir / "manifest.jsonl";
    std::ofstream manifest(manifest_path);
    if (!manifest) throw std::runtime_error("write_dataset: cannot write " + manifest_path.string());
    for (const auto& s : scenes) {
        if (s.scene_id.empty()) throw std::invalid_argument("write_dataset: scene without scene_id");
        const std::string rel_a = "images/" + s.scene_id + "_a.png";
        const std::string rel_b = "images/" + s.scene_id + "_b.png";
        const std::string rel_m = "images/" + s.scene_id + "_mask.png";
        write_png(out_dir / rel_a, image_from_tensor(s.image_a));
        write_png(out_dir / rel_b, image_from_tensor(s.image_b));
        write_png(out_dir / rel_m, image_from_mask(s.mask));
        nlohmann::json j{{"scene_id", s.scene_id}, {"arena_id", s.arena_id},
                         {"game_id", s.game_id},   {"image_a", rel_a},
                         {"image_b", rel_b},       {"mask", rel_m},
                         {"frame_delay_ms", s.frame_delay_ms}};
        manifest << j.dump() << "\n";
    }
    return manifest_path;
}

}  // namespace ballseg

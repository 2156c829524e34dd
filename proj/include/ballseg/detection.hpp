#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ballseg/data.hpp"
#include "ballseg/model.hpp"
#include "ballseg/rng.hpp"
#include "ballseg/tensor.hpp"

namespace ballseg {

// One ball candidate. Coordinates are pixels in the frame of the heatmap the
// detection was extracted from (scene frame after TTA aggregation).
struct Detection {
    int x = 0, y = 0;
    float score = 0.0f;
    int rank = 0;  // 1-based, by non-increasing score
};

// Greedy top-k: repeatedly take the highest unsuppressed pixel >= tau, then
// ignore everything within Chebyshev distance suppression_radius of it. Ties
// break toward the smallest (y, x). Implemented by sorting the candidate
// pixels once and skipping suppressed ones, which selects exactly the same
// sequence as a rescan-per-peak.
inline std::vector<Detection> topk_detect(const Tensor& heatmap, int k, float tau,
                                          int suppression_radius) {
    if (heatmap.batch() != 1 || heatmap.channels() != 1)
        throw std::invalid_argument("topk_detect: expected a [1,1,H,W] heatmap, got " +
                                    heatmap.shape_str());
    if (k < 1) throw std::invalid_argument("topk_detect: k must be >= 1");
    if (tau < 0.0f || tau > 1.0f) throw std::invalid_argument("topk_detect: tau must lie in [0,1]");
    if (suppression_radius < 0)
        throw std::invalid_argument("topk_detect: suppression radius must be >= 0");

    const int H = heatmap.height(), W = heatmap.width();
    const float* v = heatmap.plane(0, 0);
    struct Candidate {
        float score;
        int y, x;
    };
    std::vector<Candidate> candidates;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const float s = v[static_cast<std::size_t>(y) * W + x];
            if (s >= tau) candidates.push_back({s, y, x});
        }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });

    std::vector<Detection> out;
    for (const auto& c : candidates) {
        if (static_cast<int>(out.size()) == k) break;
        bool suppressed = false;
        for (const auto& d : out)
            if (std::max(std::abs(c.x - d.x), std::abs(c.y - d.y)) <= suppression_radius) {
                suppressed = true;
                break;
            }
        if (!suppressed)
            out.push_back({c.x, c.y, c.score, static_cast<int>(out.size()) + 1});
    }
    return out;
}

// A heatmap expressed in scene coordinates. coverage counts how many crops
// contributed to each pixel; pixels with zero coverage hold value 0.
struct SceneHeatmap {
    Tensor values;    // [1,1,H,W]
    Tensor coverage;  // [1,1,H,W]
    CropSpec frame;   // crop that produced it (identity rect for aggregates)
};

// Places a crop-frame heatmap into scene coordinates: un-mirror, resize back
// to the crop rectangle, paste at the rectangle origin.
inline SceneHeatmap heatmap_to_scene(const Tensor& crop_heatmap, const CropSpec& spec,
                                     int scene_w, int scene_h) {
    if (crop_heatmap.batch() != 1 || crop_heatmap.channels() != 1)
        throw std::invalid_argument("heatmap_to_scene: expected [1,1,H,W], got " +
                                    crop_heatmap.shape_str());
    const auto& r = spec.rect;
    if (r.w < 1 || r.h < 1 || r.x < 0 || r.y < 0 || r.x + r.w > scene_w || r.y + r.h > scene_h) {
        std::ostringstream os;
        os << "heatmap_to_scene: crop rect (" << r.x << "," << r.y << "," << r.w << "," << r.h
           << ") inconsistent with " << scene_w << "x" << scene_h << " scene";
        throw std::invalid_argument(os.str());
    }
    // The heatmap extents must be the crop target size implied by the spec.
    const double implied_w = r.w * static_cast<double>(spec.scale);
    if (std::fabs(implied_w - crop_heatmap.width()) > 1.5) {
        std::ostringstream os;
        os << "heatmap_to_scene: spec implies a " << implied_w << "px wide heatmap but got "
           << crop_heatmap.width() << "px";
        throw std::invalid_argument(os.str());
    }

    Tensor unmirrored = crop_heatmap;
    if (spec.mirror) detail::mirror_horizontal(unmirrored);
    Tensor local = resize_bilinear(unmirrored, r.h, r.w);

    SceneHeatmap out;
    out.values = Tensor(1, 1, scene_h, scene_w);
    out.coverage = Tensor(1, 1, scene_h, scene_w);
    out.frame = spec;
    for (int y = 0; y < r.h; ++y) {
        const float* src = local.plane(0, 0) + static_cast<std::size_t>(y) * r.w;
        float* dst = out.values.plane(0, 0) + static_cast<std::size_t>(r.y + y) * scene_w + r.x;
        float* cov = out.coverage.plane(0, 0) + static_cast<std::size_t>(r.y + y) * scene_w + r.x;
        std::copy(src, src + r.w, dst);
        std::fill(cov, cov + r.w, 1.0f);
    }
    return out;
}

// Coverage-weighted mean of the defined pixels across the contributing maps.
inline SceneHeatmap aggregate_heatmaps(const std::vector<SceneHeatmap>& maps) {
    if (maps.empty()) throw std::invalid_argument("aggregate_heatmaps: empty input list");
    const int H = maps.front().values.height(), W = maps.front().values.width();
    for (const auto& m : maps)
        if (m.values.height() != H || m.values.width() != W)
            detail::fail_shapes("aggregate_heatmaps", "scene extents differ",
                                maps.front().values.shape_str(), m.values.shape_str());
    SceneHeatmap out;
    out.values = Tensor(1, 1, H, W);
    out.coverage = Tensor(1, 1, H, W);
    out.frame = full_frame_spec(W, H);
    const std::size_t n = static_cast<std::size_t>(H) * W;
    for (const auto& m : maps)
        for (std::size_t i = 0; i < n; ++i) {
            out.values.data[i] += m.values.data[i] * m.coverage.data[i];
            out.coverage.data[i] += m.coverage.data[i];
        }
    for (std::size_t i = 0; i < n; ++i)
        out.values.data[i] = out.coverage.data[i] > 0 ? out.values.data[i] / out.coverage.data[i] : 0.0f;
    return out;
}

// Runs the network on n_crops jittered variants of the base crop (each with
// IoU >= iou_min to it), averages the heatmaps in scene coordinates and
// applies the top-k rule to the mean map.
inline std::vector<Detection> tta_detect(const ModelWeights& weights, const Scene& scene,
                                         const CropSpec& base, int n_crops, double iou_min,
                                         int k, float tau, int suppression_radius, Rng& rng) {
    if (n_crops < 1) throw std::invalid_argument("tta_detect: n_crops must be >= 1");
    const int out_w = static_cast<int>(std::lround(base.rect.w * static_cast<double>(base.scale)));
    const int out_h = static_cast<int>(std::lround(base.rect.h * static_cast<double>(base.scale)));
    std::vector<SceneHeatmap> maps;
    maps.reserve(n_crops);
    for (int i = 0; i < n_crops; ++i) {
        const CropSpec spec = sample_tta_crop(base, scene, iou_min, rng);
        const CropResult crop = apply_crop(scene, spec, out_w, out_h, weights.use_diff());
        const Tensor heat = forward(weights, crop.input);
        maps.push_back(heatmap_to_scene(heat, spec, scene.width(), scene.height()));
    }
    return topk_detect(aggregate_heatmaps(maps).values, k, tau, suppression_radius);
}

}  // namespace ballseg

#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ballseg/data.hpp"
#include "ballseg/detection.hpp"
#include "ballseg/model.hpp"
#include "ballseg/parallel.hpp"
#include "ballseg/svg.hpp"

namespace ballseg {

// A detection is a true positive iff it lies inside the surface covered by
// the ball in the annotated mask. Out-of-bounds detections are false.
inline bool classify_detection(const Detection& det, const Tensor& mask) {
    if (det.x < 0 || det.y < 0 || det.x >= mask.width() || det.y >= mask.height()) return false;
    return mask.at(0, 0, det.y, det.x) > 0.5f;
}

// Full candidate list of one scene at tau = 0, so threshold sweeps never
// re-run inference.
struct ScoredScene {
    std::string scene_id;
    std::vector<Detection> detections;  // sorted by rank
    std::shared_ptr<const Tensor> mask;
};

struct RocPoint {
    float tau = 0;
    double tpr = 0;  // fraction of scenes with >= 1 true detection kept
    double fpr = 0;  // mean number of false candidates kept per scene
};

// 101 thresholds, 0.00 to 1.00 in steps of 0.01.
inline std::vector<float> default_tau_grid() {
    std::vector<float> grid(101);
    for (int i = 0; i <= 100; ++i) grid[i] = static_cast<float>(i) / 100.0f;
    return grid;
}

inline std::vector<RocPoint> roc_curve(const std::vector<ScoredScene>& scenes,
                                       const std::vector<float>& tau_grid) {
    if (scenes.empty()) throw std::invalid_argument("roc_curve: no scenes");
    for (std::size_t i = 1; i < tau_grid.size(); ++i)
        if (tau_grid[i] < tau_grid[i - 1])
            throw std::invalid_argument("roc_curve: tau grid must be sorted ascending");

    struct Labeled {
        float score;
        bool tp;
    };
    std::vector<std::vector<Labeled>> labeled(scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i)
        for (const auto& d : scenes[i].detections)
            labeled[i].push_back({d.score, classify_detection(d, *scenes[i].mask)});

    std::vector<RocPoint> out;
    out.reserve(tau_grid.size());
    for (float tau : tau_grid) {
        int scenes_hit = 0;
        long long false_total = 0;
        for (const auto& scene : labeled) {
            bool hit = false;
            for (const auto& d : scene) {
                if (d.score < tau) continue;
                if (d.tp) hit = true;
                else ++false_total;
            }
            if (hit) ++scenes_hit;
        }
        out.push_back({tau, static_cast<double>(scenes_hit) / scenes.size(),
                       static_cast<double>(false_total) / scenes.size()});
    }
    return out;
}

// Predictor seam: anything that maps a crop of a scene to a crop-frame
// heatmap. The model-backed instance is the production path; tests plug in
// oracle predictors (e.g. the mask itself).
using CropPredictor = std::function<Tensor(const Scene&, const CropSpec&, int out_w, int out_h)>;

inline CropPredictor model_predictor(const ModelWeights& weights) {
    return [&weights](const Scene& scene, const CropSpec& spec, int out_w, int out_h) {
        const CropResult crop = apply_crop(scene, spec, out_w, out_h, weights.use_diff());
        return forward(weights, crop.input);
    };
}

// Largest centered crop whose extents are multiples of 8, at scale 1. This is
// the whole scene for generator output.
inline CropSpec eval_base_spec(const Scene& scene) {
    const int w8 = (scene.width() / 8) * 8;
    const int h8 = (scene.height() / 8) * 8;
    if (w8 < 8 || h8 < 8)
        throw std::invalid_argument("eval_base_spec: scene smaller than 8x8");
    return CropSpec{{(scene.width() - w8) / 2, (scene.height() - h8) / 2, w8, h8}, 1.0f, false};
}

struct ScoreOptions {
    int k = 1;
    int suppression_radius = 15;
    int n_crops = 1;       // 1 = plain single pass on the base crop, >1 = TTA mean
    double iou_min = 0.9;  // TTA jitter floor
    std::uint64_t seed = 0;
};

// Candidate list for one scene at tau = 0. With n_crops = 1 the base crop is
// evaluated as-is (deterministic); with n_crops > 1 the detections come from
// the averaged heatmap over jittered crops.
inline ScoredScene score_scene(const CropPredictor& predictor, const Scene& scene,
                               const ScoreOptions& opts) {
    const CropSpec base = eval_base_spec(scene);
    const int out_w = base.rect.w, out_h = base.rect.h;  // scale 1
    SceneHeatmap scene_map;
    if (opts.n_crops <= 1) {
        scene_map = heatmap_to_scene(predictor(scene, base, out_w, out_h), base,
                                     scene.width(), scene.height());
    } else {
        Rng rng(mix_seed(opts.seed, detail::fnv1a(scene.scene_id.data(), scene.scene_id.size())));
        std::vector<SceneHeatmap> maps;
        maps.reserve(opts.n_crops);
        for (int i = 0; i < opts.n_crops; ++i) {
            const CropSpec spec = sample_tta_crop(base, scene, opts.iou_min, rng);
            maps.push_back(heatmap_to_scene(predictor(scene, spec, out_w, out_h), spec,
                                            scene.width(), scene.height()));
        }
        scene_map = aggregate_heatmaps(maps);
    }
    ScoredScene out;
    out.scene_id = scene.scene_id;
    out.detections = topk_detect(scene_map.values, opts.k, 0.0f, opts.suppression_radius);
    out.mask = std::make_shared<Tensor>(scene.mask);
    return out;
}

// Scores a set of scenes (parallel across scenes, deterministic ordering).
inline std::vector<ScoredScene> score_scenes(const CropPredictor& predictor,
                                             const std::vector<Scene>& scenes,
                                             const std::vector<int>& ids,
                                             const ScoreOptions& opts) {
    std::vector<ScoredScene> out(ids.size());
    parallel_for(static_cast<int>(ids.size()),
                 [&](int i) { out[i] = score_scene(predictor, scenes[ids[i]], opts); });
    return out;
}

struct CropEvalOptions {
    int crop_w = 96, crop_h = 64;  // network input size for random crops
    float tau = 0.0f;
    int suppression_radius = 15;
    std::uint64_t seed = 0;
};

// Per-scene fraction of random crops in which the ball is detected by the
// top-k rule, for each requested k. Crops are training-style (ball inside,
// size in range); correctness is judged against the crop's own mask.
struct HitDistribution {
    std::vector<std::string> scene_ids;
    std::vector<int> k_values;
    std::vector<std::vector<double>> fraction;  // [scene][k index]
};

inline HitDistribution crop_hit_distribution(const CropPredictor& predictor,
                                             const std::vector<Scene>& scenes,
                                             const std::vector<int>& ids, int n_crops,
                                             const std::vector<int>& k_values,
                                             const CropEvalOptions& opts) {
    if (n_crops < 1) throw std::invalid_argument("crop_hit_distribution: n_crops must be >= 1");
    if (k_values.empty()) throw std::invalid_argument("crop_hit_distribution: no k values");
    const int k_max = *std::max_element(k_values.begin(), k_values.end());

    HitDistribution dist;
    dist.k_values = k_values;
    dist.scene_ids.resize(ids.size());
    dist.fraction.assign(ids.size(), std::vector<double>(k_values.size(), 0.0));
    parallel_for(static_cast<int>(ids.size()), [&](int i) {
        const Scene& scene = scenes[ids[i]];
        dist.scene_ids[i] = scene.scene_id;
        Rng rng(mix_seed(opts.seed, detail::fnv1a(scene.scene_id.data(), scene.scene_id.size())));
        std::vector<int> hits(k_values.size(), 0);
        for (int c = 0; c < n_crops; ++c) {
            const CropSpec spec = sample_training_crop(scene, opts.crop_w, opts.crop_h, rng);
            const CropResult crop = apply_crop(scene, spec, opts.crop_w, opts.crop_h);
            const Tensor heat = predictor(scene, spec, opts.crop_w, opts.crop_h);
            const auto dets = topk_detect(heat, k_max, opts.tau, opts.suppression_radius);
            int best_tp_rank = 0;  // smallest rank whose detection is a TP
            for (const auto& d : dets)
                if (classify_detection(d, crop.mask)) {
                    best_tp_rank = d.rank;
                    break;
                }
            for (std::size_t ki = 0; ki < k_values.size(); ++ki)
                if (best_tp_rank > 0 && best_tp_rank <= k_values[ki]) ++hits[ki];
        }
        for (std::size_t ki = 0; ki < k_values.size(); ++ki)
            dist.fraction[i][ki] = static_cast<double>(hits[ki]) / n_crops;
    });
    return dist;
}

// Fraction of scenes whose ball is found as top-1 in at least one of the
// first n random crops, for n = 1..max_crops. Non-decreasing by construction.
inline std::vector<double> detection_rate_vs_ncrops(const CropPredictor& predictor,
                                                    const std::vector<Scene>& scenes,
                                                    const std::vector<int>& ids, int max_crops,
                                                    const CropEvalOptions& opts) {
    if (max_crops < 1) throw std::invalid_argument("detection_rate_vs_ncrops: max_crops must be >= 1");
    std::vector<std::vector<char>> hit(ids.size(), std::vector<char>(max_crops, 0));
    parallel_for(static_cast<int>(ids.size()), [&](int i) {
        const Scene& scene = scenes[ids[i]];
        Rng rng(mix_seed(opts.seed, detail::fnv1a(scene.scene_id.data(), scene.scene_id.size())));
        for (int c = 0; c < max_crops; ++c) {
            const CropSpec spec = sample_training_crop(scene, opts.crop_w, opts.crop_h, rng);
            const CropResult crop = apply_crop(scene, spec, opts.crop_w, opts.crop_h);
            const Tensor heat = predictor(scene, spec, opts.crop_w, opts.crop_h);
            const auto dets = topk_detect(heat, 1, opts.tau, opts.suppression_radius);
            hit[i][c] = !dets.empty() && classify_detection(dets.front(), crop.mask) ? 1 : 0;
        }
    });
    std::vector<double> curve(max_crops, 0.0);
    for (int n = 1; n <= max_crops; ++n) {
        int scenes_hit = 0;
        for (const auto& h : hit)
            if (std::any_of(h.begin(), h.begin() + n, [](char c) { return c != 0; })) ++scenes_hit;
        curve[n - 1] = static_cast<double>(scenes_hit) / ids.size();
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Ablation comparison: aligned ROC curves for several trained configurations
// evaluated on the same scenes (same folds, same seeds).
// ---------------------------------------------------------------------------

struct AblationEntry {
    std::string label;
    const ModelWeights* weights = nullptr;
    int n_crops = 1;             // TTA arm if > 1
    std::string fold_signature;  // must match across entries
};

using RocTable = std::vector<std::pair<std::string, std::vector<RocPoint>>>;

inline void write_roc_csv(const std::filesystem::path& path, const RocTable& table) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_roc_csv: cannot write " + path.string());
    os << "config,tau,tpr,fpr\n";
    for (const auto& [label, curve] : table)
        for (const auto& p : curve)
            os << label << "," << p.tau << "," << p.tpr << "," << p.fpr << "\n";
}

inline void write_roc_svg(const std::filesystem::path& path, const RocTable& table,
                          const std::string& title) {
    std::vector<PlotSeries> series;
    for (const auto& [label, curve] : table) {
        PlotSeries s;
        s.label = label;
        for (const auto& p : curve) s.points.emplace_back(p.fpr, p.tpr);
        series.push_back(std::move(s));
    }
    PlotOptions opt;
    opt.title = title;
    opt.x_label = "false positives per scene (mean count, may exceed 1)";
    opt.y_label = "detection rate (fraction of scenes)";
    opt.note = "FPR axis is a mean candidate count per scene, not a probability";
    write_line_plot_svg(path, series, opt);
}

inline RocTable compare_ablations(const std::vector<Scene>& scenes, const std::vector<int>& ids,
                                  const std::vector<AblationEntry>& entries,
                                  const ScoreOptions& base_opts, const std::vector<float>& tau_grid,
                                  const std::filesystem::path& out_dir = {}) {
    if (entries.empty()) throw std::invalid_argument("compare_ablations: no entries");
    for (const auto& e : entries) {
        if (!e.weights) throw std::invalid_argument("compare_ablations: entry without weights");
        if (e.fold_signature != entries.front().fold_signature)
            throw std::invalid_argument("compare_ablations: mismatched fold specs across configs ('" +
                                        entries.front().fold_signature + "' vs '" + e.fold_signature + "')");
    }
    RocTable table;
    for (const auto& e : entries) {
        ScoreOptions opts = base_opts;
        opts.n_crops = e.n_crops;
        const auto scored = score_scenes(model_predictor(*e.weights), scenes, ids, opts);
        table.emplace_back(e.label, roc_curve(scored, tau_grid));
    }
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        write_roc_csv(out_dir / "roc.csv", table);
        write_roc_svg(out_dir / "roc.svg", table, "ROC comparison");
    }
    return table;
}

// Highest detection rate achievable at or below the given false-positive
// budget, over the curve's threshold grid.
inline double tpr_at_fpr(const std::vector<RocPoint>& curve, double fpr_budget) {
    double best = 0.0;
    for (const auto& p : curve)
        if (p.fpr <= fpr_budget) best = std::max(best, p.tpr);
    return best;
}

inline RocPoint roc_point_at(const std::vector<RocPoint>& curve, float tau) {
    for (const auto& p : curve)
        if (std::fabs(p.tau - tau) < 1e-6f) return p;
    throw std::invalid_argument("roc_point_at: tau not on the curve grid");
}

// ---------------------------------------------------------------------------
// Throughput benchmark (forward passes only; the detection rule is timed
// separately to verify it stays negligible).
// ---------------------------------------------------------------------------

// Throughput reported for the reference implementation on an Nvidia GTX
// 1080 Ti at batch size 2. Context for comparisons, never asserted.
struct ReferenceFps {
    const char* shape;
    double fps;
};
inline constexpr ReferenceFps kReferenceFps[] = {
    {"1024x512x3", 38.39}, {"1024x512x6", 24.67}, {"1280x720x6", 12.08}};

struct BenchResult {
    double fps = 0;               // batch * passes / total time
    double mean_fps = 0;          // mean of per-pass fps
    double std_fps = 0;           // sample std of per-pass fps
    double mean_latency_ms = 0;   // per forward pass (whole batch)
    double std_latency_ms = 0;
    double detect_rule_ms = 0;    // mean top-k time per heatmap
    double detect_fraction = 0;   // detect_rule_ms / per-image forward time
};

inline BenchResult benchmark_fps(const ModelWeights& weights, int width, int height, int batch,
                                 int n_warmup, int n_timed, int k = 1, float tau = 0.01f,
                                 int suppression_radius = 15) {
    if (n_timed < 10) throw std::invalid_argument("benchmark_fps: need at least 10 timed passes");
    if (n_warmup < 0 || batch < 1) throw std::invalid_argument("benchmark_fps: bad batch/warmup");

    Tensor input(batch, weights.config.input_channels, height, width);
    Rng rng(0x62656e6368ULL);
    for (float& v : input.data) v = static_cast<float>(rng.uniform());

    using clock = std::chrono::steady_clock;
    Tensor heat;
    for (int i = 0; i < n_warmup; ++i) heat = forward(weights, input);

    std::vector<double> latency_ms(n_timed);
    for (int i = 0; i < n_timed; ++i) {
        const auto t0 = clock::now();
        heat = forward(weights, input);
        const auto t1 = clock::now();
        latency_ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }

    // Time the detection rule on one heatmap from the measured batch.
    Tensor one(1, 1, heat.height(), heat.width());
    std::copy(heat.plane(0, 0), heat.plane(0, 0) + one.size(), one.data.begin());
    const auto d0 = clock::now();
    for (int i = 0; i < n_timed; ++i) {
        volatile std::size_t sink = topk_detect(one, k, tau, suppression_radius).size();
        (void)sink;
    }
    const auto d1 = clock::now();

    BenchResult r;
    const double total_ms = std::accumulate(latency_ms.begin(), latency_ms.end(), 0.0);
    r.mean_latency_ms = total_ms / n_timed;
    double var = 0;
    std::vector<double> fps(n_timed);
    for (int i = 0; i < n_timed; ++i) {
        var += (latency_ms[i] - r.mean_latency_ms) * (latency_ms[i] - r.mean_latency_ms);
        fps[i] = batch * 1000.0 / latency_ms[i];
    }
    r.std_latency_ms = std::sqrt(var / std::max(1, n_timed - 1));
    r.fps = batch * n_timed * 1000.0 / total_ms;
    r.mean_fps = std::accumulate(fps.begin(), fps.end(), 0.0) / n_timed;
    double fvar = 0;
    for (double f : fps) fvar += (f - r.mean_fps) * (f - r.mean_fps);
    r.std_fps = std::sqrt(fvar / std::max(1, n_timed - 1));
    r.detect_rule_ms = std::chrono::duration<double, std::milli>(d1 - d0).count() / n_timed;
    r.detect_fraction = r.detect_rule_ms / (r.mean_latency_ms / batch);
    return r;
}

}  // namespace ballseg

#include <catch_amalgamated.hpp>

#include <cmath>

#include <ballseg/detection.hpp>
#include <ballseg/model.hpp>

#include "oracles.hpp"

using namespace ballseg;

namespace {

Tensor map5x5(std::initializer_list<std::tuple<int, int, float>> peaks) {
    Tensor t(1, 1, 5, 5);
    for (const auto& [y, x, v] : peaks) t.at(0, 0, y, x) = v;
    return t;
}

Tensor random_heatmap(Rng& rng, bool quantized) {
    const int h = rng.uniform_int(1, 64), w = rng.uniform_int(1, 64);
    Tensor t(1, 1, h, w);
    for (auto& v : t.data)
        v = quantized ? static_cast<float>(rng.uniform_int(0, 20)) / 20.0f
                      : static_cast<float>(rng.uniform());
    return t;
}

Scene detection_scene(std::uint64_t seed) {
    SynthParams p;
    p.width = 128;
    p.height = 96;
    p.ball_radius_min = 6.0f;
    p.ball_radius_max = 10.0f;
    p.ball_speed_min = 3.0f;
    p.ball_speed_max = 8.0f;
    p.arena_id = "det";
    Rng rng(seed);
    Scene s = synth_scene(p, rng);
    s.scene_id = "det-" + std::to_string(seed);
    return s;
}

}  // namespace

TEST_CASE("topk_detect examples") {
    Tensor zeros(1, 1, 8, 8);
    CHECK(topk_detect(zeros, 3, 0.01f, 2).empty());

    // two separated peaks
    auto a = map5x5({{1, 1, 0.9f}, {4, 4, 0.8f}});
    auto da = topk_detect(a, 2, 0.5f, 1);
    REQUIRE(da.size() == 2);
    CHECK(da[0].x == 1);
    CHECK(da[0].y == 1);
    CHECK(da[0].score == 0.9f);
    CHECK(da[0].rank == 1);
    CHECK(da[1].x == 4);
    CHECK(da[1].y == 4);
    CHECK(da[1].score == 0.8f);

    // second-highest point suppressed by the first
    auto b = map5x5({{1, 1, 0.9f}, {2, 1, 0.8f}, {4, 4, 0.6f}});
    auto db = topk_detect(b, 2, 0.5f, 1);
    REQUIRE(db.size() == 2);
    CHECK(db[0].y == 1);
    CHECK(db[1].y == 4);
    CHECK(db[1].score == 0.6f);
}

TEST_CASE("topk_detect matches the brute-force greedy oracle exactly") {
    Rng rng(42);
    for (int trial = 0; trial < 250; ++trial) {
        Tensor map = random_heatmap(rng, trial % 2 == 0);
        const int k = rng.uniform_int(1, 5);
        const int radius = rng.uniform_int(0, 10);
        const float tau = static_cast<float>(rng.uniform(0.0, 0.9));
        const auto got = topk_detect(map, k, tau, radius);
        const auto want = oracle::topk_brute(map, k, tau, radius);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            REQUIRE(got[i].x == want[i].x);
            REQUIRE(got[i].y == want[i].y);
            REQUIRE(got[i].score == want[i].score);
            REQUIRE(got[i].rank == want[i].rank);
        }
    }
}

TEST_CASE("topk_detect respects separation, ordering and the threshold") {
    Rng rng(43);
    for (int trial = 0; trial < 60; ++trial) {
        Tensor map = random_heatmap(rng, true);
        const int radius = rng.uniform_int(0, 8);
        const float tau = static_cast<float>(rng.uniform(0.0, 0.8));
        const auto dets = topk_detect(map, 5, tau, radius);
        for (std::size_t i = 0; i < dets.size(); ++i) {
            REQUIRE(dets[i].score >= tau);
            REQUIRE(dets[i].rank == static_cast<int>(i) + 1);
            if (i > 0) REQUIRE(dets[i].score <= dets[i - 1].score);
            for (std::size_t j = 0; j < i; ++j)
                REQUIRE(std::max(std::abs(dets[i].x - dets[j].x),
                                 std::abs(dets[i].y - dets[j].y)) > radius);
        }
    }
}

TEST_CASE("raising tau never adds a detection") {
    Rng rng(44);
    for (int trial = 0; trial < 60; ++trial) {
        Tensor map = random_heatmap(rng, true);
        const int radius = rng.uniform_int(0, 6);
        const auto lo = topk_detect(map, 5, 0.2f, radius);
        const auto hi = topk_detect(map, 5, 0.6f, radius);
        REQUIRE(hi.size() <= lo.size());
        for (const auto& d : hi) {
            bool found = false;
            for (const auto& l : lo)
                if (l.x == d.x && l.y == d.y && l.score == d.score) found = true;
            REQUIRE(found);
        }
    }
}

TEST_CASE("heatmap_to_scene identity keeps values and full coverage") {
    Rng rng(45);
    Tensor heat = oracle::random_tensor<float>(1, 1, 24, 32, rng, 0.0, 1.0);
    const CropSpec identity = full_frame_spec(32, 24);
    SceneHeatmap shm = heatmap_to_scene(heat, identity, 32, 24);
    REQUIRE(shm.values.data == heat.data);
    for (float c : shm.coverage.data) REQUIRE(c == 1.0f);
}

TEST_CASE("mirrored spec applied to a mirrored heatmap recovers the original") {
    Rng rng(46);
    Tensor heat = oracle::random_tensor<float>(1, 1, 16, 24, rng, 0.0, 1.0);
    CropSpec plain = full_frame_spec(24, 16);
    SceneHeatmap direct = heatmap_to_scene(heat, plain, 24, 16);

    Tensor mirrored = heat;
    detail::mirror_horizontal(mirrored);
    CropSpec flip = plain;
    flip.mirror = true;
    SceneHeatmap undone = heatmap_to_scene(mirrored, flip, 24, 16);
    for (std::size_t i = 0; i < direct.values.size(); ++i)
        REQUIRE(std::fabs(direct.values.data[i] - undone.values.data[i]) < 1e-5f);
}

TEST_CASE("a crop-frame peak lands at the expected scene pixel") {
    Rng rng(47);
    int tested = 0;
    while (tested < 40) {
        CropSpec spec;
        spec.rect = {rng.uniform_int(0, 40), rng.uniform_int(0, 30), rng.uniform_int(30, 60),
                     rng.uniform_int(24, 40)};
        // moderate zoom factors, as produced by the crop samplers
        const double zoom = rng.uniform(0.6, 2.2);
        const int out_w = static_cast<int>(std::lround(spec.rect.w * zoom));
        const int out_h = static_cast<int>(std::lround(spec.rect.h * zoom));
        spec.scale = static_cast<float>(static_cast<double>(out_w) / spec.rect.w);
        spec.mirror = false;
        const int scene_w = 128, scene_h = 96;
        if (spec.rect.x + spec.rect.w > scene_w || spec.rect.y + spec.rect.h > scene_h) continue;
        ++tested;

        // a smooth blob, as the network produces (a 1px delta would alias away
        // under bilinear downsampling)
        Tensor heat(1, 1, out_h, out_w);
        const int px = rng.uniform_int(6, out_w - 7), py = rng.uniform_int(6, out_h - 7);
        const double sigma = 2.0 * std::max(1.0, zoom);
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x)
                heat.at(0, 0, y, x) = static_cast<float>(
                    std::exp(-((x - px) * (x - px) + (y - py) * (y - py)) / (2 * sigma * sigma)));
        SceneHeatmap shm = heatmap_to_scene(heat, spec, scene_w, scene_h);
        const auto dets = topk_detect(shm.values, 1, 0.1f, 0);
        REQUIRE(dets.size() == 1);

        // scalar coordinate-transform oracle, half-pixel-center convention
        const double sx = spec.rect.x + (px + 0.5) * (static_cast<double>(spec.rect.w) / out_w) - 0.5;
        const double sy = spec.rect.y + (py + 0.5) * (static_cast<double>(spec.rect.h) / out_h) - 0.5;
        CHECK(std::fabs(dets[0].x - sx) <= 1.0);
        CHECK(std::fabs(dets[0].y - sy) <= 1.0);
    }
}

TEST_CASE("aggregate_heatmaps arithmetic") {
    Rng rng(48);
    Tensor heat = oracle::random_tensor<float>(1, 1, 12, 16, rng, 0.0, 1.0);
    const CropSpec identity = full_frame_spec(16, 12);
    SceneHeatmap one = heatmap_to_scene(heat, identity, 16, 12);

    auto single = aggregate_heatmaps({one});
    REQUIRE(single.values.data == one.values.data);

    auto twice = aggregate_heatmaps({one, one});
    REQUIRE(twice.values.data == one.values.data);
    for (float c : twice.coverage.data) REQUIRE(c == 2.0f);

    SceneHeatmap a = one, b = one;
    std::fill(a.values.data.begin(), a.values.data.end(), 0.2f);
    std::fill(b.values.data.begin(), b.values.data.end(), 0.6f);
    auto mean = aggregate_heatmaps({a, b});
    for (float v : mean.values.data) REQUIRE(v == Catch::Approx(0.4).margin(1e-6));

    REQUIRE_THROWS_AS(aggregate_heatmaps({}), std::invalid_argument);
}

TEST_CASE("aggregated values stay within the contributing range per pixel") {
    Rng rng(49);
    Scene s = detection_scene(7);
    const CropSpec base = full_frame_spec(s.width(), s.height());
    std::vector<SceneHeatmap> maps;
    for (int i = 0; i < 4; ++i) {
        const CropSpec spec = sample_tta_crop(base, s, 0.9, rng);
        Tensor heat = oracle::random_tensor<float>(1, 1, s.height(), s.width(), rng, 0.0, 1.0);
        maps.push_back(heatmap_to_scene(heat, spec, s.width(), s.height()));
    }
    auto agg = aggregate_heatmaps(maps);
    for (int y = 0; y < s.height(); ++y)
        for (int x = 0; x < s.width(); ++x) {
            float lo = 2.0f, hi = -1.0f;
            for (const auto& m : maps)
                if (m.coverage.at(0, 0, y, x) > 0) {
                    lo = std::min(lo, m.values.at(0, 0, y, x));
                    hi = std::max(hi, m.values.at(0, 0, y, x));
                }
            const float v = agg.values.at(0, 0, y, x);
            if (hi < lo) {
                REQUIRE(v == 0.0f);  // uncovered pixel
            } else {
                REQUIRE(v >= lo - 1e-6f);
                REQUIRE(v <= hi + 1e-6f);
            }
        }
}

TEST_CASE("tta_detect with one crop reduces to single-crop detection") {
    Scene s = detection_scene(11);
    NetworkConfig cfg;
    cfg.base_channels = 2;
    ModelWeights w = build_network(cfg, 3);
    const CropSpec base = full_frame_spec(s.width(), s.height());

    Rng rng_a(99);
    const auto got = tta_detect(w, s, base, 1, 0.9, 2, 0.0f, 10, rng_a);

    Rng rng_b(99);
    const CropSpec spec = sample_tta_crop(base, s, 0.9, rng_b);
    const CropResult crop = apply_crop(s, spec, s.width(), s.height(), true);
    const Tensor heat = forward(w, crop.input);
    const auto want = topk_detect(heatmap_to_scene(heat, spec, s.width(), s.height()).values,
                                  2, 0.0f, 10);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        REQUIRE(got[i].x == want[i].x);
        REQUIRE(got[i].y == want[i].y);
        REQUIRE(got[i].score == want[i].score);
    }
}

TEST_CASE("every TTA crop honors the IoU floor against the base") {
    Scene s = detection_scene(12);
    const CropSpec base = full_frame_spec(s.width(), s.height());
    // replicate the sequence tta_detect(..., n_crops=5, seed 17) consumes
    Rng rng(17);
    for (int i = 0; i < 5; ++i) {
        const CropSpec spec = sample_tta_crop(base, s, 0.9, rng);
        REQUIRE(crop_iou(base, spec) >= 0.9);
    }
}

TEST_CASE("averaging rescues the ball from one spurious top-1") {
    // Five crop heatmaps of the same scene: the ball responds at (20, 30) in
    // all of them, one map has a stray stronger peak elsewhere.
    const int W = 64, H = 48;
    const CropSpec identity = full_frame_spec(W, H);
    std::vector<SceneHeatmap> maps;
    for (int i = 0; i < 5; ++i) {
        Tensor heat(1, 1, H, W);
        heat.at(0, 0, 20, 30) = 0.8f;
        if (i == 2) heat.at(0, 0, 5, 50) = 0.95f;  // spurious, inconsistent
        maps.push_back(heatmap_to_scene(heat, identity, W, H));
    }
    // the spurious peak wins in its own map
    const auto single = topk_detect(maps[2].values, 1, 0.01f, 5);
    REQUIRE(single.size() == 1);
    CHECK(single[0].x == 50);

    // but the mean ranks the consistent ball response first
    const auto fused = topk_detect(aggregate_heatmaps(maps).values, 1, 0.01f, 5);
    REQUIRE(fused.size() == 1);
    CHECK(fused[0].x == 30);
    CHECK(fused[0].y == 20);
}

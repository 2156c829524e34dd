// ballseg: synthetic data generation, training, detection, evaluation and
// benchmarking for the ball-segmentation pipeline, as reproducible runs.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <ballseg/ballseg.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ballseg;

namespace {

struct CommonOpts {
    std::uint64_t seed = 0;
    int workers = 0;  // 0 = all available cores
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--seed", opts.seed, "master seed; identical seeds reproduce runs exactly")
        ->capture_default_str();
    cmd->add_option("--workers", opts.workers,
                    "worker threads for scene-parallel stages (0 = all cores)")
        ->envname("BALLSEG_WORKERS")
        ->capture_default_str();
}

void apply_workers(const CommonOpts& opts) {
    int n = opts.workers;
    if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
    set_worker_count(std::max(1, n));
}

void write_config(const fs::path& out_dir, const json& cfg) {
    fs::create_directories(out_dir);
    std::ofstream os(out_dir / "config.json");
    if (!os) throw std::runtime_error("cannot write " + (out_dir / "config.json").string());
    os << cfg.dump(2) << "\n";
}

json common_json(const std::string& subcommand, const CommonOpts& c) {
    return json{{"subcommand", subcommand}, {"seed", c.seed}, {"workers", c.workers}};
}

std::string fold_signature(const FoldSpec& folds, int fold_index, std::uint64_t seed) {
    return "K" + std::to_string(folds.k) + "-fold" + std::to_string(fold_index) + "-seed" +
           std::to_string(seed);
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOpts {
    CommonOpts common;
    std::string out_dir;
    int count = 200;
    int arenas = 10;
    SynthParams params;
};

int run_generate(const GenerateOpts& o) {
    apply_workers(o.common);
    o.params.validate();
    const auto scenes = generate_synthetic_dataset(o.params, o.count, o.arenas, o.common.seed);
    const fs::path out(o.out_dir);
    fs::create_directories(out);
    const auto manifest = write_dataset(scenes, out);
    json cfg = common_json("generate", o.common);
    cfg["count"] = o.count;
    cfg["arenas"] = o.arenas;
    cfg["width"] = o.params.width;
    cfg["height"] = o.params.height;
    cfg["ball_radius"] = {o.params.ball_radius_min, o.params.ball_radius_max};
    cfg["ball_speed"] = {o.params.ball_speed_min, o.params.ball_speed_max};
    cfg["static_discs"] = o.params.static_discs;
    cfg["moving_blobs"] = o.params.moving_blobs;
    cfg["noise_level"] = o.params.noise_level;
    write_config(out, cfg);
    std::cerr << "generate: wrote " << scenes.size() << " scenes to " << manifest << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    std::string manifest, out_dir;
    int folds = 7;
    int fold_index = 0;
    int base_channels = 16;
    bool use_diff = true;
    TrainConfig tc;
};

void write_folds_csv(const fs::path& path, const std::vector<Scene>& scenes, const FoldSpec& folds) {
    std::ofstream os(path);
    os << "scene_id,arena_id,fold\n";
    for (const auto& s : scenes)
        os << s.scene_id << "," << s.arena_id << "," << folds.fold_of(s.scene_id) << "\n";
}

int run_train(const TrainOpts& o) {
    apply_workers(o.common);
    const auto scenes = load_dataset(o.manifest);
    const FoldSpec folds = make_folds(scenes, o.folds, o.common.seed);
    if (o.fold_index < 0 || o.fold_index >= o.folds)
        throw std::invalid_argument("train: --fold-index " + std::to_string(o.fold_index) +
                                    " out of range for K=" + std::to_string(o.folds));

    std::vector<int> rest;
    for (std::size_t i = 0; i < scenes.size(); ++i)
        if (folds.fold_of(scenes[i].scene_id) != o.fold_index) rest.push_back(static_cast<int>(i));
    auto [train_ids, val_ids] = split_train_val(rest, o.common.seed);
    std::cerr << "train: " << train_ids.size() << " train / " << val_ids.size()
              << " validation scenes, test fold " << o.fold_index << " held out\n";

    NetworkConfig nc;
    nc.base_channels = o.base_channels;
    nc.input_channels = o.use_diff ? 6 : 3;
    TrainConfig tc = o.tc;
    tc.seed = o.common.seed;
    tc.use_diff = o.use_diff;

    const fs::path out(o.out_dir);
    fs::create_directories(out);
    std::ofstream history(out / "history.csv");
    history << "epoch,lr,train_loss,val_loss\n";
    TrainResult result = train(scenes, train_ids, val_ids, nc, tc,
                               [&](int epoch, const EpochStats& s) {
                                   history << epoch << "," << s.lr << "," << s.train_loss << ","
                                           << s.val_loss << "\n";
                                   history.flush();
                                   std::cerr << "epoch " << epoch << ": lr " << s.lr
                                             << " train " << s.train_loss << " val " << s.val_loss
                                             << "\n";
                               });
    save_weights(result.best_weights, out / "weights.bsgw");
    write_folds_csv(out / "folds.csv", scenes, folds);

    json cfg = common_json("train", o.common);
    cfg["manifest"] = o.manifest;
    cfg["folds"] = o.folds;
    cfg["fold_index"] = o.fold_index;
    cfg["fold_signature"] = fold_signature(folds, o.fold_index, o.common.seed);
    cfg["base_channels"] = o.base_channels;
    cfg["use_diff"] = o.use_diff;
    cfg["learning_rate"] = tc.learning_rate;
    cfg["decay_factor"] = tc.decay_factor;
    cfg["decay_every"] = tc.decay_every;
    cfg["batch_size"] = tc.batch_size;
    cfg["epochs"] = tc.epochs;
    cfg["crop_width"] = tc.crop_w;
    cfg["crop_height"] = tc.crop_h;
    cfg["best_epoch"] = result.history.best_epoch;
    cfg["best_val_loss"] = result.history.epochs[result.history.best_epoch].val_loss;
    write_config(out, cfg);
    std::cerr << "train: best epoch " << result.history.best_epoch << ", weights at "
              << (out / "weights.bsgw") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// detect
// ---------------------------------------------------------------------------

struct DetectOpts {
    CommonOpts common;
    std::string manifest, weights, out_dir;
    float tau = 0.01f;
    int topk = 1;
    int suppression_radius = 15;
    int n_crops = 1;
    double iou_min = 0.9;
    bool use_diff_flag = false, no_diff_flag = false;
};

void check_channel_mode(const ModelWeights& w, bool use_diff_flag, bool no_diff_flag) {
    if (use_diff_flag && !w.use_diff())
        throw std::invalid_argument("input-channel mismatch: --use-diff requested but the weights "
                                    "expect 3-channel input");
    if (no_diff_flag && w.use_diff())
        throw std::invalid_argument("input-channel mismatch: --no-diff requested but the weights "
                                    "expect 6-channel input");
}

int run_detect(const DetectOpts& o) {
    apply_workers(o.common);
    const auto scenes = load_dataset(o.manifest);
    const ModelWeights weights = load_weights(fs::path(o.weights));
    check_channel_mode(weights, o.use_diff_flag, o.no_diff_flag);

    ScoreOptions so;
    so.k = o.topk;
    so.suppression_radius = o.suppression_radius;
    so.n_crops = o.n_crops;
    so.iou_min = o.iou_min;
    so.seed = o.common.seed;
    std::vector<int> ids(scenes.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    const auto scored = score_scenes(model_predictor(weights), scenes, ids, so);

    const fs::path out(o.out_dir);
    fs::create_directories(out);
    std::ofstream csv(out / "detections.csv");
    csv << "scene_id,rank,x,y,score\n";
    for (const auto& s : scored)
        for (const auto& d : s.detections)
            if (d.score >= o.tau)
                csv << s.scene_id << "," << d.rank << "," << d.x << "," << d.y << "," << d.score
                    << "\n";

    json cfg = common_json("detect", o.common);
    cfg["manifest"] = o.manifest;
    cfg["weights"] = o.weights;
    cfg["tau"] = o.tau;
    cfg["topk"] = o.topk;
    cfg["suppression_radius"] = o.suppression_radius;
    cfg["n_crops"] = o.n_crops;
    cfg["iou_min"] = o.iou_min;
    write_config(out, cfg);
    std::cerr << "detect: scored " << scenes.size() << " scenes into " << (out / "detections.csv")
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOpts {
    CommonOpts common;
    std::string manifest, out_dir;
    std::vector<std::string> weights;  // several files compare configs on one report
    int folds = 7;
    int fold_index = 0;
    int topk = 1;
    int suppression_radius = 15;
    int n_crops = 1;
    double iou_min = 0.9;
    int crop_w = 256, crop_h = 128;
    int hits_crops = 50;
    int max_crops = 20;
    bool use_diff_flag = false, no_diff_flag = false;
};

int run_evaluate(const EvaluateOpts& o) {
    apply_workers(o.common);
    const auto scenes = load_dataset(o.manifest);
    const ModelWeights weights = load_weights(fs::path(o.weights));
    check_channel_mode(weights, o.use_diff_flag, o.no_diff_flag);
    const FoldSpec folds = make_folds(scenes, o.folds, o.common.seed);
    if (o.fold_index < 0 || o.fold_index >= o.folds)
        throw std::invalid_argument("evaluate: --fold-index out of range");

    std::vector<int> test_ids, train_ids;
    for (std::size_t i = 0; i < scenes.size(); ++i)
        (folds.fold_of(scenes[i].scene_id) == o.fold_index ? test_ids : train_ids)
            .push_back(static_cast<int>(i));
    if (test_ids.empty()) throw std::runtime_error("evaluate: test fold is empty");

    ScoreOptions so;
    so.k = o.topk;
    so.suppression_radius = o.suppression_radius;
    so.n_crops = o.n_crops;
    so.iou_min = o.iou_min;
    so.seed = o.common.seed;
    const auto grid = default_tau_grid();
    const auto predictor = model_predictor(weights);

    const fs::path out(o.out_dir);
    fs::create_directories(out);

    // ROC on the held-out fold and, clearly labeled, on the training folds.
    RocTable table;
    table.emplace_back("test-fold", roc_curve(score_scenes(predictor, scenes, test_ids, so), grid));
    if (!train_ids.empty())
        table.emplace_back("train-folds",
                           roc_curve(score_scenes(predictor, scenes, train_ids, so), grid));
    write_roc_csv(out / "roc.csv", table);
    write_roc_svg(out / "roc.svg", table, "top-" + std::to_string(o.topk) + " ROC");

    // Per-scene crop-hit distribution on the test fold.
    CropEvalOptions ce;
    ce.crop_w = o.crop_w;
    ce.crop_h = o.crop_h;
    ce.suppression_radius = o.suppression_radius;
    ce.seed = o.common.seed;
    const std::vector<int> ks{1, 2, 3};
    const auto dist = crop_hit_distribution(predictor, scenes, test_ids, o.hits_crops, ks, ce);
    {
        std::ofstream csv(out / "hits.csv");
        csv << "scene_id,k,hit_fraction\n";
        for (std::size_t i = 0; i < dist.scene_ids.size(); ++i)
            for (std::size_t k = 0; k < ks.size(); ++k)
                csv << dist.scene_ids[i] << "," << ks[k] << "," << dist.fraction[i][k] << "\n";

        std::vector<PlotSeries> series;
        for (std::size_t k = 0; k < ks.size(); ++k) {
            PlotSeries s;
            s.label = "top-" + std::to_string(ks[k]);
            const int bins = 10;
            std::vector<int> count(bins, 0);
            for (std::size_t i = 0; i < dist.fraction.size(); ++i)
                ++count[std::min(bins - 1, static_cast<int>(dist.fraction[i][k] * bins))];
            for (int b = 0; b < bins; ++b)
                s.points.emplace_back((b + 0.5) / bins, count[b]);
            series.push_back(std::move(s));
        }
        PlotOptions po;
        po.title = "crop hit fraction distribution (" + std::to_string(o.hits_crops) + " crops/scene)";
        po.x_label = "fraction of crops with the ball detected";
        po.y_label = "scenes";
        write_line_plot_svg(out / "hits.svg", series, po);
    }

    // Detection rate as a function of the number of random crops considered.
    const auto curve = detection_rate_vs_ncrops(predictor, scenes, test_ids, o.max_crops, ce);
    {
        std::ofstream csv(out / "rate_vs_ncrops.csv");
        csv << "n_crops,detection_rate\n";
        for (std::size_t n = 0; n < curve.size(); ++n) csv << n + 1 << "," << curve[n] << "\n";
        PlotSeries s;
        s.label = "top-1";
        for (std::size_t n = 0; n < curve.size(); ++n) s.points.emplace_back(n + 1.0, curve[n]);
        PlotOptions po;
        po.title = "detection rate vs number of random crops";
        po.x_label = "random crops per scene";
        po.y_label = "fraction of scenes with the ball found";
        write_line_plot_svg(out / "rate_vs_ncrops.svg", {s}, po);
    }

    json cfg = common_json("evaluate", o.common);
    cfg["manifest"] = o.manifest;
    cfg["weights"] = o.weights;
    cfg["folds"] = o.folds;
    cfg["fold_index"] = o.fold_index;
    cfg["fold_signature"] = fold_signature(folds, o.fold_index, o.common.seed);
    cfg["topk"] = o.topk;
    cfg["suppression_radius"] = o.suppression_radius;
    cfg["n_crops"] = o.n_crops;
    cfg["iou_min"] = o.iou_min;
    cfg["crop_width"] = o.crop_w;
    cfg["crop_height"] = o.crop_h;
    cfg["hits_crops"] = o.hits_crops;
    cfg["max_crops"] = o.max_crops;
    write_config(out, cfg);
    std::cerr << "evaluate: report in " << out << " (" << test_ids.size() << " test scenes)\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchOpts {
    CommonOpts common;
    std::string weights, out_dir;
    std::string hardware = "unspecified";
    int width = 1024, height = 512;
    int batch = 2;
    int warmup = 2;
    int reps = 10;
    int topk = 1;
    float tau = 0.01f;
    int suppression_radius = 15;
};

int run_bench(const BenchOpts& o) {
    apply_workers(o.common);
    const ModelWeights weights = load_weights(fs::path(o.weights));
    const auto r = benchmark_fps(weights, o.width, o.height, o.batch, o.warmup, o.reps, o.topk,
                                 o.tau, o.suppression_radius);

    const std::string shape = std::to_string(o.width) + "x" + std::to_string(o.height) + "x" +
                              std::to_string(weights.config.input_channels);
    const fs::path out(o.out_dir);
    fs::create_directories(out);
    std::ofstream csv(out / "bench.csv");
    csv << "shape,batch,mean_fps,std_fps,detect_rule_ms,hardware\n";
    csv << shape << "," << o.batch << "," << r.mean_fps << "," << r.std_fps << ","
        << r.detect_rule_ms << "," << o.hardware << "\n";

    json cfg = common_json("bench", o.common);
    cfg["weights"] = o.weights;
    cfg["shape"] = shape;
    cfg["batch"] = o.batch;
    cfg["warmup"] = o.warmup;
    cfg["reps"] = o.reps;
    cfg["hardware"] = o.hardware;
    write_config(out, cfg);

    std::cerr << "bench: " << shape << " batch " << o.batch << " -> " << r.mean_fps << " +/- "
              << r.std_fps << " fps (" << r.mean_latency_ms << " ms/pass), detection rule "
              << r.detect_rule_ms << " ms/heatmap (" << r.detect_fraction * 100
              << "% of per-image forward time) on " << o.hardware << "\n";
    std::cerr << "bench: reference GPU throughput (GTX 1080 Ti, batch 2) for context only:";
    for (const auto& ref : kReferenceFps) std::cerr << " " << ref.shape << "=" << ref.fps << "fps";
    std::cerr << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ball detection as segmentation: synthetic data, training, detection, "
                 "evaluation and benchmarking"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI config file (flags override file values)");

    GenerateOpts gen;
    auto* cgen = app.add_subcommand("generate", "render a synthetic scene dataset");
    add_common(cgen, gen.common);
    cgen->add_option("--out", gen.out_dir, "output dataset directory")->required();
    cgen->add_option("--count", gen.count, "number of scenes")->capture_default_str();
    cgen->add_option("--arenas", gen.arenas, "number of synthetic arenas")->capture_default_str();
    cgen->add_option("--width", gen.params.width, "scene width (pixels)")->capture_default_str();
    cgen->add_option("--height", gen.params.height, "scene height (pixels)")->capture_default_str();
    cgen->add_option("--ball-radius-min", gen.params.ball_radius_min, "")->capture_default_str();
    cgen->add_option("--ball-radius-max", gen.params.ball_radius_max, "")->capture_default_str();
    cgen->add_option("--ball-speed-min", gen.params.ball_speed_min, "pixels/frame")->capture_default_str();
    cgen->add_option("--ball-speed-max", gen.params.ball_speed_max, "pixels/frame")->capture_default_str();
    cgen->add_option("--static-discs", gen.params.static_discs,
                     "stationary ball-colored discs per scene")->capture_default_str();
    cgen->add_option("--moving-blobs", gen.params.moving_blobs,
                     "moving non-circular distractors per scene")->capture_default_str();
    cgen->add_option("--noise", gen.params.noise_level, "pixel noise amplitude")->capture_default_str();

    TrainOpts tr;
    auto* ctr = app.add_subcommand("train", "train on the non-test folds of a dataset");
    add_common(ctr, tr.common);
    ctr->add_option("--manifest", tr.manifest, "dataset manifest (JSONL)")->required();
    ctr->add_option("--out", tr.out_dir, "run directory")->required();
    ctr->add_option("--folds", tr.folds, "number of arena-disjoint folds")->capture_default_str();
    ctr->add_option("--fold-index", tr.fold_index, "held-out test fold")->capture_default_str();
    ctr->add_option("--base-channels", tr.base_channels, "network width")->capture_default_str();
    ctr->add_flag("--use-diff,!--no-diff", tr.use_diff,
                  "feed image+difference (6ch) instead of image only (3ch)")->capture_default_str();
    ctr->add_option("--lr", tr.tc.learning_rate, "initial learning rate")->capture_default_str();
    ctr->add_option("--decay-factor", tr.tc.decay_factor, "")->capture_default_str();
    ctr->add_option("--decay-every", tr.tc.decay_every, "epochs between decays")->capture_default_str();
    ctr->add_option("--batch-size", tr.tc.batch_size, "")->capture_default_str();
    ctr->add_option("--epochs", tr.tc.epochs, "")->capture_default_str();
    ctr->add_option("--crop-width", tr.tc.crop_w, "training crop width")->capture_default_str();
    ctr->add_option("--crop-height", tr.tc.crop_h, "training crop height")->capture_default_str();

    DetectOpts de;
    auto* cde = app.add_subcommand("detect", "run detection over a dataset");
    add_common(cde, de.common);
    cde->add_option("--manifest", de.manifest, "dataset manifest")->required();
    cde->add_option("--weights", de.weights, "weights file")->required();
    cde->add_option("--out", de.out_dir, "output directory")->required();
    cde->add_option("--tau", de.tau, "detection threshold")->capture_default_str();
    cde->add_option("--topk", de.topk, "candidates per scene")->capture_default_str();
    cde->add_option("--suppression-radius", de.suppression_radius,
                    "Chebyshev suppression radius (pixels)")->capture_default_str();
    cde->add_option("--n-crops", de.n_crops, "crops averaged per scene (1 = no TTA)")->capture_default_str();
    cde->add_option("--iou-min", de.iou_min, "TTA crop IoU floor")->capture_default_str();
    cde->add_flag("--use-diff", de.use_diff_flag, "require 6-channel weights");
    cde->add_flag("--no-diff", de.no_diff_flag, "require 3-channel weights");

    EvaluateOpts ev;
    auto* cev = app.add_subcommand("evaluate", "ROC and crop-consistency report");
    add_common(cev, ev.common);
    cev->add_option("--manifest", ev.manifest, "dataset manifest")->required();
    cev->add_option("--weights", ev.weights, "weights file")->required();
    cev->add_option("--out", ev.out_dir, "report directory")->required();
    cev->add_option("--folds", ev.folds, "number of arena-disjoint folds")->capture_default_str();
    cev->add_option("--fold-index", ev.fold_index, "test fold")->capture_default_str();
    cev->add_option("--topk", ev.topk, "")->capture_default_str();
    cev->add_option("--suppression-radius", ev.suppression_radius, "")->capture_default_str();
    cev->add_option("--n-crops", ev.n_crops, "crops averaged per scene (1 = no TTA)")->capture_default_str();
    cev->add_option("--iou-min", ev.iou_min, "")->capture_default_str();
    cev->add_option("--crop-width", ev.crop_w, "crop size for hit analyses")->capture_default_str();
    cev->add_option("--crop-height", ev.crop_h, "")->capture_default_str();
    cev->add_option("--hits-crops", ev.hits_crops, "crops per scene for hits.csv")->capture_default_str();
    cev->add_option("--max-crops", ev.max_crops, "curve length for rate_vs_ncrops.csv")->capture_default_str();
    cev->add_flag("--use-diff", ev.use_diff_flag, "require 6-channel weights");
    cev->add_flag("--no-diff", ev.no_diff_flag, "require 3-channel weights");

    BenchOpts be;
    auto* cbe = app.add_subcommand("bench", "forward-pass throughput benchmark");
    add_common(cbe, be.common);
    cbe->add_option("--weights", be.weights, "weights file")->required();
    cbe->add_option("--out", be.out_dir, "output directory")->required();
    cbe->add_option("--width", be.width, "input width")->capture_default_str();
    cbe->add_option("--height", be.height, "input height")->capture_default_str();
    cbe->add_option("--batch", be.batch, "batch size")->capture_default_str();
    cbe->add_option("--warmup", be.warmup, "untimed warmup passes")->capture_default_str();
    cbe->add_option("--reps", be.reps, "timed passes (minimum 10)")->capture_default_str();
    cbe->add_option("--hardware", be.hardware, "hardware description recorded in bench.csv")
        ->capture_default_str();
    cbe->add_option("--topk", be.topk, "")->capture_default_str();
    cbe->add_option("--tau", be.tau, "")->capture_default_str();
    cbe->add_option("--suppression-radius", be.suppression_radius, "")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (cgen->parsed()) return run_generate(gen);
        if (ctr->parsed()) return run_train(tr);
        if (cde->parsed()) return run_detect(de);
        if (cev->parsed()) return run_evaluate(ev);
        if (cbe->parsed()) return run_bench(be);
    } catch (const std::exception& e) {
        std::cerr << "ballseg: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

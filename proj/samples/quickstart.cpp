// Minimal library tour: render a synthetic dataset, train a tiny network for
// a few epochs, then detect the ball in a held-out scene with and without
// test-time augmentation.

#include <cstdio>

#include <ballseg/ballseg.hpp>

using namespace ballseg;

int main() {
    // a small dataset across three synthetic arenas
    SynthParams params;
    params.width = 128;
    params.height = 96;
    params.ball_radius_min = 6;
    params.ball_radius_max = 10;
    params.ball_speed_min = 3;
    params.ball_speed_max = 8;
    std::vector<Scene> scenes = generate_synthetic_dataset(params, 24, 3, /*seed=*/1);

    // hold arena-disjoint fold 0 out, split the rest 90/10
    FoldSpec folds = make_folds(scenes, 3, 1);
    std::vector<int> test_ids, rest;
    for (int i = 0; i < static_cast<int>(scenes.size()); ++i)
        (folds.fold_of(scenes[i].scene_id) == 0 ? test_ids : rest).push_back(i);
    auto [train_ids, val_ids] = split_train_val(rest, 1);

    NetworkConfig net;
    net.base_channels = 4;
    TrainConfig cfg;
    cfg.epochs = 25;
    cfg.learning_rate = 0.1f;
    cfg.crop_w = 96;
    cfg.crop_h = 64;
    cfg.seed = 1;
    TrainResult result = train(scenes, train_ids, val_ids, net, cfg,
                               [](int epoch, const EpochStats& s) {
                                   std::printf("epoch %2d  lr %.4f  train %.4f  val %.4f\n", epoch,
                                               s.lr, s.train_loss, s.val_loss);
                               });

    // single forward pass on a test scene
    const Scene& scene = scenes[test_ids.front()];
    Tensor heatmap = forward(result.best_weights, make_input(scene));
    auto dets = topk_detect(heatmap, 1, 0.01f, 15);
    const auto truth = mask_bounds(scene.mask);
    std::printf("\nscene %s: ball bbox x[%d..%d] y[%d..%d]\n", scene.scene_id.c_str(),
                truth->min_x, truth->max_x, truth->min_y, truth->max_y);
    if (!dets.empty())
        std::printf("single pass  -> (%d, %d) score %.3f %s\n", dets[0].x, dets[0].y, dets[0].score,
                    classify_detection(dets[0], scene.mask) ? "[inside the mask]" : "[miss]");

    // five-crop test-time augmentation on the averaged heatmap
    Rng rng(7);
    auto tta = tta_detect(result.best_weights, scene, full_frame_spec(scene.width(), scene.height()),
                          5, 0.9, 1, 0.01f, 15, rng);
    if (!tta.empty())
        std::printf("5-crop mean  -> (%d, %d) score %.3f %s\n", tta[0].x, tta[0].y, tta[0].score,
                    classify_detection(tta[0], scene.mask) ? "[inside the mask]" : "[miss]");
    return 0;
}

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ballseg/data.hpp"
#include "ballseg/model.hpp"
#include "ballseg/ops.hpp"
#include "ballseg/rng.hpp"

namespace ballseg {

// Arena-disjoint K-fold assignment: every arena's scenes live in exactly one
// fold.
struct FoldSpec {
    int k = 0;
    std::map<std::string, int> fold_of_scene;  // scene_id -> fold index

    int fold_of(const std::string& scene_id) const {
        auto it = fold_of_scene.find(scene_id);
        if (it == fold_of_scene.end())
            throw std::invalid_argument("FoldSpec: unknown scene_id '" + scene_id + "'");
        return it->second;
    }
};

// Shuffles arenas by seed, then assigns largest-arena-first into the
// currently lightest fold so scene counts stay balanced.
inline FoldSpec make_folds(const std::vector<Scene>& scenes, int k, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("make_folds: K must be positive");
    std::vector<std::string> arena_order;
    std::map<std::string, std::vector<const Scene*>> by_arena;
    for (const auto& s : scenes) {
        auto [it, inserted] = by_arena.try_emplace(s.arena_id);
        if (inserted) arena_order.push_back(s.arena_id);
        it->second.push_back(&s);
    }
    if (static_cast<int>(arena_order.size()) < k) {
        std::ostringstream os;
        os << "make_folds: need at least K distinct arenas (have " << arena_order.size()
           << " arenas, K=" << k << ")";
        throw std::invalid_argument(os.str());
    }

    Rng rng(mix_seed(seed, 0x666f6c64ULL));
    rng.shuffle(arena_order);
    std::stable_sort(arena_order.begin(), arena_order.end(),
                     [&](const std::string& a, const std::string& b) {
                         return by_arena[a].size() > by_arena[b].size();
                     });

    FoldSpec spec;
    spec.k = k;
    std::vector<std::size_t> load(k, 0);
    for (const auto& arena : arena_order) {
        const int fold = static_cast<int>(std::min_element(load.begin(), load.end()) - load.begin());
        for (const Scene* s : by_arena[arena]) spec.fold_of_scene[s->scene_id] = fold;
        load[fold] += by_arena[arena].size();
    }
    return spec;
}

// 90/10 split by scene count; the validation set takes ceil(0.1 * N).
inline std::pair<std::vector<int>, std::vector<int>> split_train_val(
    const std::vector<int>& scene_indices, std::uint64_t seed) {
    const int n = static_cast<int>(scene_indices.size());
    if (n < 10)
        throw std::invalid_argument("split_train_val: need at least 10 scenes, have " +
                                    std::to_string(n));
    std::vector<int> shuffled = scene_indices;
    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    rng.shuffle(shuffled);
    const int n_val = (n + 9) / 10;
    std::vector<int> val(shuffled.begin(), shuffled.begin() + n_val);
    std::vector<int> train(shuffled.begin() + n_val, shuffled.end());
    return {train, val};
}

struct TrainConfig {
    float learning_rate = 0.001f;
    float decay_factor = 2.0f;
    int decay_every = 40;  // epochs
    int batch_size = 4;
    int epochs = 150;
    std::uint64_t seed = 0;
    bool use_diff = true;
    int crop_w = 256, crop_h = 128;

    void validate() const {
        if (learning_rate <= 0 || decay_factor <= 0 || decay_every <= 0 || batch_size <= 0 ||
            epochs <= 0 || crop_w <= 0 || crop_h <= 0)
            throw std::invalid_argument("TrainConfig: all values must be positive");
    }
};

// lr = learning_rate / decay_factor^floor(epoch / decay_every)
inline float lr_schedule(const TrainConfig& cfg, int epoch) {
    if (epoch < 0) throw std::invalid_argument("lr_schedule: epoch must be >= 0");
    return static_cast<float>(cfg.learning_rate /
                              std::pow(cfg.decay_factor, epoch / cfg.decay_every));
}

struct EpochStats {
    float lr = 0, train_loss = 0, val_loss = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    int best_epoch = 0;   // epoch with the smallest validation loss
    long long updates = 0;  // total parameter updates performed
};

struct TrainResult {
    ModelWeights best_weights;
    TrainHistory history;
};

namespace detail {

struct Batch {
    Tensor input, mask;
};

inline Batch stack_crops(const std::vector<CropResult>& crops) {
    const auto& first = crops.front();
    Batch b{Tensor(static_cast<int>(crops.size()), first.input.channels(),
                   first.input.height(), first.input.width()),
            Tensor(static_cast<int>(crops.size()), 1, first.mask.height(), first.mask.width())};
    for (std::size_t i = 0; i < crops.size(); ++i) {
        std::copy(crops[i].input.data.begin(), crops[i].input.data.end(),
                  b.input.data.begin() + static_cast<std::ptrdiff_t>(i * crops[i].input.size()));
        std::copy(crops[i].mask.data.begin(), crops[i].mask.data.end(),
                  b.mask.data.begin() + static_cast<std::ptrdiff_t>(i * crops[i].mask.size()));
    }
    return b;
}

}  // namespace detail

using EpochCallback = std::function<void(int epoch, const EpochStats&)>;

// SGD training with the step-decay schedule. Every epoch draws fresh random
// crops for the training scenes; validation crops are frozen up front so the
// per-epoch validation losses are comparable. Returns the weights of the
// epoch with the smallest validation loss.
inline TrainResult train(const std::vector<Scene>& scenes, const std::vector<int>& train_ids,
                         const std::vector<int>& val_ids, const NetworkConfig& net_cfg,
                         const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    validate_config(net_cfg);
    if (train_ids.empty() || val_ids.empty())
        throw std::invalid_argument("train: training and validation sets must be non-empty");
    if (static_cast<int>(train_ids.size()) < cfg.batch_size)
        throw std::invalid_argument("train: training set smaller than one batch");
    if (net_cfg.input_channels != (cfg.use_diff ? 6 : 3))
        throw std::invalid_argument("train: input-channel mismatch between network config and use_diff");
    if (cfg.crop_w % 8 != 0 || cfg.crop_h % 8 != 0)
        throw std::invalid_argument("train: crop extents must be multiples of 8");

    ModelWeights weights = build_network(net_cfg, cfg.seed);
    Rng crop_rng(mix_seed(cfg.seed, 0x63726f70ULL));
    Rng order_rng(mix_seed(cfg.seed, 0x6f72646572ULL));
    Rng val_rng(mix_seed(cfg.seed, 0x76616cULL));

    // One deterministic crop per validation scene, fixed for the whole run.
    std::vector<CropResult> val_crops;
    val_crops.reserve(val_ids.size());
    for (int idx : val_ids) {
        const CropSpec spec = sample_training_crop(scenes[idx], cfg.crop_w, cfg.crop_h, val_rng);
        val_crops.push_back(apply_crop(scenes[idx], spec, cfg.crop_w, cfg.crop_h, cfg.use_diff));
    }

    auto validation_loss = [&](const ModelWeights& w) {
        double total = 0.0;
        std::size_t done = 0;
        while (done < val_crops.size()) {
            const std::size_t take = std::min<std::size_t>(cfg.batch_size, val_crops.size() - done);
            std::vector<CropResult> chunk(val_crops.begin() + done, val_crops.begin() + done + take);
            auto batch = detail::stack_crops(chunk);
            Tensor logits = detail::forward_logits_impl<float>(w.config, w.params, batch.input, nullptr);
            Tensor probs = softmax_channels(logits);
            total += static_cast<double>(cross_entropy_pixel_mean(probs, batch.mask)) * take;
            done += take;
        }
        return static_cast<float>(total / val_crops.size());
    };

    TrainResult result;
    float best_val = std::numeric_limits<float>::infinity();
    std::vector<int> order = train_ids;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const float lr = lr_schedule(cfg, epoch);
        order_rng.shuffle(order);
        const int n_batches = static_cast<int>(order.size()) / cfg.batch_size;
        double epoch_loss = 0.0;
        for (int bi = 0; bi < n_batches; ++bi) {
            std::vector<CropResult> crops;
            crops.reserve(cfg.batch_size);
            for (int j = 0; j < cfg.batch_size; ++j) {
                const int idx = order[bi * cfg.batch_size + j];
                const CropSpec spec = sample_training_crop(scenes[idx], cfg.crop_w, cfg.crop_h, crop_rng);
                crops.push_back(apply_crop(scenes[idx], spec, cfg.crop_w, cfg.crop_h, cfg.use_diff));
            }
            auto batch = detail::stack_crops(crops);

            ForwardCache cache;
            Tensor logits = forward_train(weights, batch.input, cache);
            Tensor probs = softmax_channels(logits);
            const float loss = cross_entropy_pixel_mean(probs, batch.mask);
            if (!std::isfinite(loss)) {
                std::ostringstream os;
                os << "train: loss diverged (non-finite) at epoch " << epoch << ", batch " << bi;
                throw std::runtime_error(os.str());
            }
            epoch_loss += loss;

            Tensor dlogits = cross_entropy_softmax_backward(probs, batch.mask);
            auto grads = backward(weights, cache, dlogits);
            for (std::size_t p = 0; p < weights.params.size(); ++p)
                sgd_update(weights.params[p].second, grads[p].second, lr);
            ++result.history.updates;
        }

        EpochStats stats;
        stats.lr = lr;
        stats.train_loss = static_cast<float>(epoch_loss / std::max(1, n_batches));
        stats.val_loss = validation_loss(weights);
        if (!std::isfinite(stats.val_loss)) {
            std::ostringstream os;
            os << "train: validation loss diverged (non-finite) at epoch " << epoch;
            throw std::runtime_error(os.str());
        }
        result.history.epochs.push_back(stats);
        if (stats.val_loss < best_val) {
            best_val = stats.val_loss;
            result.history.best_epoch = epoch;
            result.best_weights = weights;
        }
        if (on_epoch) on_epoch(epoch, stats);
    }
    return result;
}

}  // namespace ballseg

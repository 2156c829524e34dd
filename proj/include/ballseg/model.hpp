#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ballseg/ops.hpp"
#include "ballseg/rng.hpp"
#include "ballseg/tensor.hpp"

namespace ballseg {

// Three-branch multi-scale fully-convolutional segmentation network.
// Branch resolutions are fixed to (1, 1, 1/2): two full-resolution branches
// of different depth plus a deeper branch on a half-resolution copy of the
// input. Branch outputs are fused cascade-style (bilinear upsample, 1x1
// projection, elementwise add) and a final 1x1 conv produces the 2-channel
// (background, ball) logit map at full input resolution.
struct NetworkConfig {
    int base_channels = 16;
    int input_channels = 6;  // 6 with diff channels, 3 in the ablation mode
    int output_classes = 2;
};

inline void validate_config(const NetworkConfig& cfg) {
    if (cfg.base_channels < 1)
        throw std::invalid_argument("NetworkConfig: base_channels must be positive");
    if (cfg.input_channels != 3 && cfg.input_channels != 6)
        throw std::invalid_argument("NetworkConfig: input_channels must be 3 or 6");
    if (cfg.output_classes != 2)
        throw std::invalid_argument("NetworkConfig: output_classes must be 2");
}

struct ModelWeights {
    NetworkConfig config;
    std::vector<std::pair<std::string, Tensor>> params;  // canonical layer order

    const Tensor& param(std::string_view name) const {
        for (const auto& [n, t] : params)
            if (n == name) return t;
        throw std::invalid_argument("ModelWeights: no parameter named '" + std::string(name) + "'");
    }
    Tensor& param(std::string_view name) {
        return const_cast<Tensor&>(static_cast<const ModelWeights*>(this)->param(name));
    }
    bool use_diff() const { return config.input_channels == 6; }
};

namespace detail {

struct ConvDef {
    const char* name;
    int in_ch, out_ch, kernel, stride;
};

// Layer table. a* runs at scale 1 and stops at 1/4 resolution, b* runs at
// scale 1 down to 1/8, c* consumes the half-resolution input and also ends
// at 1/8 of full resolution, so the deepest effective stride stays 8 (the
// alignment the forward pass requires and the granularity of its shift
// covariance). fuse_cb folds c into b, fuse_ba folds the result into a.
inline std::vector<ConvDef> layer_table(const NetworkConfig& cfg) {
    const int c = cfg.base_channels;
    return {
        {"a1", cfg.input_channels, c, 3, 1},
        {"a2", c, 2 * c, 3, 2},
        {"a3", 2 * c, 4 * c, 3, 2},
        {"b1", cfg.input_channels, c, 3, 2},
        {"b2", c, 2 * c, 3, 2},
        {"b3", 2 * c, 4 * c, 3, 2},
        {"b4", 4 * c, 4 * c, 3, 1},
        {"b5", 4 * c, 4 * c, 3, 1},
        {"c1", cfg.input_channels, c, 3, 2},
        {"c2", c, 2 * c, 3, 2},
        {"c3", 2 * c, 4 * c, 3, 1},
        {"c4", 4 * c, 4 * c, 3, 1},
        {"c5", 4 * c, 4 * c, 3, 1},
        {"c6", 4 * c, 4 * c, 3, 1},
        {"c7", 4 * c, 4 * c, 3, 1},
        {"fuse_cb", 4 * c, 4 * c, 1, 1},
        {"fuse_ba", 4 * c, 4 * c, 1, 1},
        {"head", 4 * c, cfg.output_classes, 1, 1},
    };
}

constexpr int kIndexA1 = 0, kIndexA3 = 2;
constexpr int kIndexB1 = 3, kIndexB5 = 7;
constexpr int kIndexC1 = 8, kIndexC7 = 14;
constexpr int kIndexFuseCB = 15, kIndexFuseBA = 16, kIndexHead = 17;

inline std::uint64_t fnv1a(const void* bytes, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t weights_fingerprint(const ModelWeights& w) {
    std::uint64_t h = fnv1a(&w.config, sizeof(w.config));
    for (const auto& [name, t] : w.params) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(t.shape.data(), sizeof(int) * 4, h);
        h = fnv1a(t.data.data(), t.data.size() * sizeof(float), h);
    }
    return h;
}

}  // namespace detail

// Deterministic He-style initialization: kernels ~ N(0, 2 / fan_in), biases
// zero except the head, whose bias starts at the log of a background-heavy
// class prior (ball pixels are a small fraction of any training crop, and
// plain SGD takes thousands of steps to learn that offset from zero).
inline constexpr double kInitialBallPrior = 0.1;

inline ModelWeights build_network(const NetworkConfig& cfg, std::uint64_t seed) {
    validate_config(cfg);
    ModelWeights w;
    w.config = cfg;
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    for (const auto& def : detail::layer_table(cfg)) {
        Tensor kernels(def.out_ch, def.in_ch, def.kernel, def.kernel);
        const double std_dev = std::sqrt(2.0 / (def.in_ch * def.kernel * def.kernel));
        for (float& v : kernels.data) v = static_cast<float>(rng.normal() * std_dev);
        w.params.emplace_back(std::string(def.name) + ".kernels", std::move(kernels));
        Tensor bias(def.out_ch, 1, 1, 1);
        if (std::string_view(def.name) == "head") {
            bias.data[0] = static_cast<float>(std::log(1.0 - kInitialBallPrior));
            bias.data[1] = static_cast<float>(std::log(kInitialBallPrior));
        }
        w.params.emplace_back(std::string(def.name) + ".bias", std::move(bias));
    }
    return w;
}

// Activations recorded by a training forward pass, consumed by backward().
template <typename T>
struct ForwardCacheT {
    struct ConvRecord {
        TensorT<T> input;    // layer input (post-activation of the previous layer)
        TensorT<T> pre_act;  // conv output before ReLU (unused for fusion/head)
    };
    std::vector<ConvRecord> conv;    // aligned with detail::layer_table
    TensorT<T> fuse_cb_sum;          // b5 + projected c, before ReLU
    TensorT<T> fuse_ba_sum;          // a3 + projected (cb fusion), before ReLU
    int input_h = 0, input_w = 0;
    std::uint64_t weights_tag = 0;
};

using ForwardCache = ForwardCacheT<float>;

namespace detail {

template <typename T>
std::span<const T> bias_span(const TensorT<T>& bias) {
    return {bias.data.data(), bias.data.size()};
}

// Shared forward graph. Parameters are passed as a flat list in layer-table
// order (kernels, bias alternating), which lets tests run the same graph in
// double precision. Returns the 2-channel logit map at input resolution.
template <typename T>
TensorT<T> forward_logits_impl(const NetworkConfig& cfg,
                               const std::vector<std::pair<std::string, TensorT<T>>>& params,
                               const TensorT<T>& input, ForwardCacheT<T>* cache) {
    const int H = input.height(), W = input.width();
    if (input.channels() != cfg.input_channels) {
        std::ostringstream os;
        os << "forward: input has " << input.channels() << " channels, network expects "
           << cfg.input_channels;
        throw std::invalid_argument(os.str());
    }
    if (H % 8 != 0 || W % 8 != 0 || H == 0 || W == 0) {
        std::ostringstream os;
        os << "forward: input extents " << H << "x" << W
           << " must be positive multiples of 8 (branch down/upsampling alignment)";
        throw std::invalid_argument(os.str());
    }

    const auto table = layer_table(cfg);
    if (cache) {
        cache->conv.resize(table.size());
        cache->input_h = H;
        cache->input_w = W;
    }

    auto conv_at = [&](int idx, const TensorT<T>& x) {
        const auto& k = params[2 * idx].second;
        const auto& b = params[2 * idx + 1].second;
        const int pad = table[idx].kernel / 2;
        TensorT<T> z = conv2d(x, k, bias_span(b), table[idx].stride, pad);
        if (cache) cache->conv[idx].input = x;
        return z;
    };
    auto conv_relu_at = [&](int idx, const TensorT<T>& x) {
        TensorT<T> z = conv_at(idx, x);
        TensorT<T> a = relu(z);
        if (cache) cache->conv[idx].pre_act = std::move(z);
        return a;
    };

    // Branch a: full resolution, shallow, ends at 1/4.
    TensorT<T> a = input;
    for (int i = kIndexA1; i <= kIndexA3; ++i) a = conv_relu_at(i, a);

    // Branch b: full resolution, ends at 1/8.
    TensorT<T> b = input;
    for (int i = kIndexB1; i <= kIndexB5; ++i) b = conv_relu_at(i, b);

    // Branch c: half-resolution input, deepest, ends at 1/8 of that.
    TensorT<T> h = resize_bilinear(input, H / 2, W / 2);
    for (int i = kIndexC1; i <= kIndexC7; ++i) h = conv_relu_at(i, h);

    // Cascade fusion: c -> b, then (c+b) -> a, then up to full resolution.
    TensorT<T> up_c = resize_bilinear(h, b.height(), b.width());
    TensorT<T> proj_c = conv_at(kIndexFuseCB, up_c);
    TensorT<T> sum_cb = b;
    for (std::size_t i = 0; i < sum_cb.data.size(); ++i) sum_cb.data[i] += proj_c.data[i];
    if (cache) cache->fuse_cb_sum = sum_cb;
    TensorT<T> f1 = relu(sum_cb);

    TensorT<T> up_f1 = resize_bilinear(f1, a.height(), a.width());
    TensorT<T> proj_f1 = conv_at(kIndexFuseBA, up_f1);
    TensorT<T> sum_ba = a;
    for (std::size_t i = 0; i < sum_ba.data.size(); ++i) sum_ba.data[i] += proj_f1.data[i];
    if (cache) cache->fuse_ba_sum = sum_ba;
    TensorT<T> f2 = relu(sum_ba);

    TensorT<T> up_f2 = resize_bilinear(f2, H, W);
    return conv_at(kIndexHead, up_f2);
}

}  // namespace detail

// Training-mode forward: returns the raw 2-channel logits and fills the cache.
inline Tensor forward_train(const ModelWeights& w, const Tensor& input, ForwardCache& cache) {
    validate_config(w.config);
    Tensor logits = detail::forward_logits_impl<float>(w.config, w.params, input, &cache);
    cache.weights_tag = detail::weights_fingerprint(w);
    return logits;
}

// Inference: softmax over the 2-channel logits, background channel removed.
// Output is the ball-probability heatmap [B,1,H,W] with values in [0,1].
inline Tensor forward(const ModelWeights& w, const Tensor& input) {
    validate_config(w.config);
    Tensor logits = detail::forward_logits_impl<float>(w.config, w.params, input, nullptr);
    Tensor probs = softmax_channels(logits);
    const int B = probs.batch(), H = probs.height(), W = probs.width();
    Tensor heat(B, 1, H, W);
    for (int b = 0; b < B; ++b) {
        const float* ball = probs.plane(b, 1);
        std::copy(ball, ball + static_cast<std::size_t>(H) * W, heat.plane(b, 0));
    }
    return heat;
}

// Full backward pass from d(loss)/d(logits) to every named parameter.
// Gradients come back in the same order as ModelWeights::params.
inline std::vector<std::pair<std::string, Tensor>> backward(const ModelWeights& w,
                                                            const ForwardCache& cache,
                                                            const Tensor& dlogits) {
    if (cache.weights_tag != detail::weights_fingerprint(w))
        throw std::invalid_argument("backward: stale cache (weights changed since forward_train)");
    const auto table = detail::layer_table(w.config);
    if (cache.conv.size() != table.size())
        throw std::invalid_argument("backward: cache not produced by forward_train");

    std::vector<std::pair<std::string, Tensor>> grads;
    grads.reserve(w.params.size());
    for (const auto& [name, t] : w.params)
        grads.emplace_back(name, Tensor(t.shape[0], t.shape[1], t.shape[2], t.shape[3]));

    auto conv_back = [&](int idx, const Tensor& upstream) {
        const auto& kernels = w.params[2 * idx].second;
        const int pad = table[idx].kernel / 2;
        LayerGradients g = conv2d_backward(cache.conv[idx].input, kernels, upstream,
                                           table[idx].stride, pad);
        grads[2 * idx].second = std::move(g.wrt_parameters[0].second);
        grads[2 * idx + 1].second = std::move(g.wrt_parameters[1].second);
        return std::move(g.wrt_input);
    };
    auto branch_back = [&](int last, int first, Tensor d_out) {
        for (int i = last; i >= first; --i) {
            Tensor d_pre = relu_backward(cache.conv[i].pre_act, d_out);
            d_out = conv_back(i, d_pre);
        }
        return d_out;  // gradient w.r.t. the branch input (unused for the image)
    };

    using detail::kIndexA1;
    using detail::kIndexA3;
    using detail::kIndexB1;
    using detail::kIndexB5;
    using detail::kIndexC1;
    using detail::kIndexC7;

    // head
    Tensor d_up_f2 = conv_back(detail::kIndexHead, dlogits);
    Tensor d_f2 = resize_bilinear_backward(d_up_f2, cache.fuse_ba_sum.height(),
                                           cache.fuse_ba_sum.width());
    Tensor d_sum_ba = relu_backward(cache.fuse_ba_sum, d_f2);

    // fuse_ba: sum splits into branch a and the projected cb fusion
    Tensor d_proj_f1 = d_sum_ba;
    Tensor d_up_f1 = conv_back(detail::kIndexFuseBA, d_proj_f1);
    Tensor d_f1 = resize_bilinear_backward(d_up_f1, cache.fuse_cb_sum.height(),
                                           cache.fuse_cb_sum.width());
    Tensor d_sum_cb = relu_backward(cache.fuse_cb_sum, d_f1);

    // fuse_cb: sum splits into branch b and the projected branch c
    Tensor d_proj_c = d_sum_cb;
    Tensor d_up_c = conv_back(detail::kIndexFuseCB, d_proj_c);
    Tensor d_c7 = resize_bilinear_backward(d_up_c, cache.conv[kIndexC7].pre_act.height(),
                                           cache.conv[kIndexC7].pre_act.width());

    branch_back(kIndexA3, kIndexA1, d_sum_ba);
    branch_back(kIndexB5, kIndexB1, d_sum_cb);
    branch_back(kIndexC7, kIndexC1, d_c7);

    return grads;
}

// ---------------------------------------------------------------------------
// Weights file format: magic "BSGW", format version (u32 LE), config block
// (base_channels, input_channels, output_classes as u32 LE), parameter count
// (u32 LE), then per parameter: name length (u32 LE) + UTF-8 name, 4 extents
// (u32 LE), raw float32 LE data.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kWeightsFormatVersion = 1;
inline constexpr char kWeightsMagic[4] = {'B', 'S', 'G', 'W'};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(bytes, 4);
}

inline void read_exact(std::istream& is, char* dst, std::size_t n, const char* what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        std::ostringstream os;
        os << "load_weights: truncated payload while reading " << what << " (missing "
           << (n - static_cast<std::size_t>(is.gcount())) << " bytes)";
        throw std::runtime_error(os.str());
    }
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    read_exact(is, reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void save_weights(const ModelWeights& w, std::ostream& os) {
    static_assert(sizeof(float) == 4);
    os.write(kWeightsMagic, 4);
    detail::put_u32(os, kWeightsFormatVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(w.config.base_channels));
    detail::put_u32(os, static_cast<std::uint32_t>(w.config.input_channels));
    detail::put_u32(os, static_cast<std::uint32_t>(w.config.output_classes));
    detail::put_u32(os, static_cast<std::uint32_t>(w.params.size()));
    for (const auto& [name, t] : w.params) {
        detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        for (int e : t.shape) detail::put_u32(os, static_cast<std::uint32_t>(e));
        if constexpr (std::endian::native == std::endian::little) {
            os.write(reinterpret_cast<const char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * 4));
        } else {
            for (float v : t.data) {
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                detail::put_u32(os, bits);
            }
        }
    }
    if (!os) throw std::runtime_error("save_weights: write failed");
}

inline void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_weights: cannot open " + path.string());
    save_weights(w, os);
}

inline ModelWeights load_weights(std::istream& is) {
    char magic[4];
    detail::read_exact(is, magic, 4, "magic");
    if (std::memcmp(magic, kWeightsMagic, 4) != 0)
        throw std::runtime_error("load_weights: not a weights file (bad magic)");
    const std::uint32_t version = detail::get_u32(is, "format version");
    if (version != kWeightsFormatVersion) {
        std::ostringstream os;
        os << "load_weights: unknown format version " << version << " (expected "
           << kWeightsFormatVersion << ")";
        throw std::runtime_error(os.str());
    }
    ModelWeights w;
    w.config.base_channels = static_cast<int>(detail::get_u32(is, "base_channels"));
    w.config.input_channels = static_cast<int>(detail::get_u32(is, "input_channels"));
    w.config.output_classes = static_cast<int>(detail::get_u32(is, "output_classes"));
    validate_config(w.config);
    const std::uint32_t count = detail::get_u32(is, "parameter count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::get_u32(is, "parameter name length");
        std::string name(name_len, '\0');
        detail::read_exact(is, name.data(), name_len, "parameter name");
        std::uint32_t ext[4];
        for (auto& e : ext) e = detail::get_u32(is, "parameter extents");
        Tensor t(static_cast<int>(ext[0]), static_cast<int>(ext[1]),
                 static_cast<int>(ext[2]), static_cast<int>(ext[3]));
        if constexpr (std::endian::native == std::endian::little) {
            detail::read_exact(is, reinterpret_cast<char*>(t.data.data()),
                               t.data.size() * 4, "parameter data");
        } else {
            for (float& v : t.data) {
                const std::uint32_t bits = detail::get_u32(is, "parameter data");
                std::memcpy(&v, &bits, 4);
            }
        }
        w.params.emplace_back(std::move(name), std::move(t));
    }

    // The parameter set must be exactly what the config dictates.
    const auto table = detail::layer_table(w.config);
    if (w.params.size() != table.size() * 2)
        throw std::runtime_error("load_weights: parameter count does not match config");
    for (std::size_t i = 0; i < table.size(); ++i) {
        const auto& def = table[i];
        const auto& [kname, kt] = w.params[2 * i];
        const auto& [bname, bt] = w.params[2 * i + 1];
        if (kname != std::string(def.name) + ".kernels" ||
            kt.shape != std::array<int, 4>{def.out_ch, def.in_ch, def.kernel, def.kernel} ||
            bname != std::string(def.name) + ".bias" ||
            bt.shape != std::array<int, 4>{def.out_ch, 1, 1, 1})
            throw std::runtime_error("load_weights: parameter '" + kname +
                                     "' does not match the declared config");
    }
    return w;
}

inline ModelWeights load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_weights: cannot open " + path.string());
    return load_weights(is);
}

}  // namespace ballseg

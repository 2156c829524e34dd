#include <catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include <ballseg/ops.hpp>
#include <ballseg/parallel.hpp>
#include <ballseg/rng.hpp>

#include "oracles.hpp"

using namespace ballseg;
using oracle::random_tensor;

namespace {

std::vector<float> bias_vec(const Tensor& t) { return t.data; }

double dot_with(const TensorT<double>& t, const std::vector<double>& proj) {
    double s = 0;
    for (std::size_t i = 0; i < t.data.size(); ++i) s += t.data[i] * proj[i];
    return s;
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    Rng rng(1);
    Tensor in = random_tensor<float>(1, 1, 4, 4, rng);
    Tensor k(1, 1, 1, 1);
    k.data[0] = 1.0f;
    std::vector<float> bias{0.0f};
    Tensor out = conv2d(in, k, std::span<const float>(bias), 1, 0);
    REQUIRE(out.shape == in.shape);
    REQUIRE(out.data == in.data);
}

TEST_CASE("conv2d all-ones 3x3 on all-ones input") {
    Tensor in(1, 1, 3, 3, 1.0f);
    Tensor k(1, 1, 3, 3, 1.0f);
    std::vector<float> bias{0.0f};
    Tensor out = conv2d(in, k, std::span<const float>(bias), 1, 1);
    CHECK(out.at(0, 0, 1, 1) == 9.0f);
    CHECK(out.at(0, 0, 0, 0) == 4.0f);
    CHECK(out.at(0, 0, 0, 2) == 4.0f);
    CHECK(out.at(0, 0, 2, 0) == 4.0f);
    CHECK(out.at(0, 0, 2, 2) == 4.0f);
    CHECK(out.at(0, 0, 0, 1) == 6.0f);
}

TEST_CASE("conv2d matches the naive nested-loop oracle") {
    Rng rng(2);
    struct Config {
        int b, ic, h, w, oc, k, stride, pad;
    };
    for (const auto& c : {Config{2, 3, 8, 8, 5, 3, 1, 1}, Config{1, 4, 7, 9, 3, 3, 2, 1},
                          Config{2, 2, 8, 6, 4, 1, 1, 0}, Config{1, 6, 8, 8, 2, 3, 2, 0},
                          Config{3, 1, 5, 5, 2, 5, 1, 2}}) {
        Tensor in = random_tensor<float>(c.b, c.ic, c.h, c.w, rng);
        Tensor k = random_tensor<float>(c.oc, c.ic, c.k, c.k, rng);
        Tensor b = random_tensor<float>(c.oc, 1, 1, 1, rng);
        Tensor out = conv2d(in, k, std::span<const float>(b.data), c.stride, c.pad);
        auto ref = oracle::conv_naive(tensor_cast<double>(in), tensor_cast<double>(k),
                                      std::vector<double>(b.data.begin(), b.data.end()),
                                      c.stride, c.pad);
        REQUIRE(out.size() == ref.size());
        for (std::size_t i = 0; i < out.size(); ++i)
            REQUIRE(std::fabs(out.data[i] - ref.data[i]) < 1e-5);
    }
}

TEST_CASE("conv2d rejects mismatched shapes with both shapes named") {
    Rng rng(3);
    Tensor in = random_tensor<float>(1, 4, 8, 8, rng);
    Tensor k = random_tensor<float>(2, 3, 3, 3, rng);
    std::vector<float> bias(2, 0.0f);
    try {
        conv2d(in, k, std::span<const float>(bias), 1, 1);
        FAIL("expected a shape mismatch error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[1,4,8,8]") != std::string::npos);
        CHECK(msg.find("[2,3,3,3]") != std::string::npos);
    }
}

TEST_CASE("conv2d_backward zero upstream gives zero gradients") {
    Rng rng(4);
    Tensor in = random_tensor<float>(1, 2, 6, 6, rng);
    Tensor k = random_tensor<float>(3, 2, 3, 3, rng);
    Tensor up(1, 3, 6, 6);  // zeros
    auto g = conv2d_backward(in, k, up, 1, 1);
    for (float v : g.wrt_input.data) REQUIRE(v == 0.0f);
    for (const auto& [name, t] : g.wrt_parameters)
        for (float v : t.data) REQUIRE(v == 0.0f);
}

TEST_CASE("conv2d_backward identity kernel passes upstream through") {
    Rng rng(5);
    Tensor in = random_tensor<float>(1, 1, 5, 5, rng);
    Tensor k(1, 1, 1, 1);
    k.data[0] = 1.0f;
    Tensor up = random_tensor<float>(1, 1, 5, 5, rng);
    auto g = conv2d_backward(in, k, up, 1, 0);
    REQUIRE(g.wrt_input.data == up.data);
}

TEST_CASE("conv2d_backward rejects wrong upstream shape") {
    Rng rng(6);
    Tensor in = random_tensor<float>(1, 2, 6, 6, rng);
    Tensor k = random_tensor<float>(3, 2, 3, 3, rng);
    Tensor up(1, 3, 5, 5);
    REQUIRE_THROWS_AS(conv2d_backward(in, k, up, 1, 1), std::invalid_argument);
}

TEST_CASE("conv2d_backward matches finite differences on random layers") {
    Rng rng(7);
    for (int trial = 0; trial < 8; ++trial) {
        const int b = rng.uniform_int(1, 2), ic = rng.uniform_int(1, 3);
        const int h = rng.uniform_int(4, 8), w = rng.uniform_int(4, 8);
        const int oc = rng.uniform_int(1, 3), ks = rng.bernoulli(0.5) ? 3 : 1;
        const int stride = rng.uniform_int(1, 2), pad = ks / 2;
        Tensor in = random_tensor<float>(b, ic, h, w, rng);
        Tensor kr = random_tensor<float>(oc, ic, ks, ks, rng);

        auto [oh, ow] = conv2d_output_extents(h, w, ks, ks, stride, pad);
        Tensor up = random_tensor<float>(b, oc, oh, ow, rng);
        auto g = conv2d_backward(in, kr, up, stride, pad);

        const auto kd = tensor_cast<double>(kr);
        const auto ind = tensor_cast<double>(in);
        const std::vector<double> proj(up.data.begin(), up.data.end());

        auto f_input = [&](const std::vector<double>& x) {
            TensorT<double> t = ind;
            t.data = x;
            return dot_with(oracle::conv_naive(t, kd, {}, stride, pad), proj);
        };
        auto fd_in = oracle::finite_diff(f_input, std::vector<double>(in.data.begin(), in.data.end()), 1e-3);
        REQUIRE(oracle::count_grad_mismatches(g.wrt_input.data, fd_in, 1e-3, 1e-4) == 0);

        auto f_kernel = [&](const std::vector<double>& x) {
            TensorT<double> t = kd;
            t.data = x;
            return dot_with(oracle::conv_naive(ind, t, {}, stride, pad), proj);
        };
        auto fd_k = oracle::finite_diff(f_kernel, std::vector<double>(kr.data.begin(), kr.data.end()), 1e-3);
        REQUIRE(oracle::count_grad_mismatches(g.wrt_parameters[0].second.data, fd_k, 1e-3, 1e-4) == 0);

        // Bias enters the output additively; its gradient is the plane sum.
        auto f_bias = [&](const std::vector<double>& x) {
            return dot_with(oracle::conv_naive(ind, kd, x, stride, pad), proj);
        };
        auto fd_b = oracle::finite_diff(f_bias, std::vector<double>(oc, 0.25), 1e-3);
        REQUIRE(oracle::count_grad_mismatches(g.wrt_parameters[1].second.data, fd_b, 1e-3, 1e-4) == 0);
    }
}

TEST_CASE("relu examples") {
    Tensor in(1, 1, 1, 3);
    in.data = {-1.0f, 0.0f, 2.0f};
    Tensor out = relu(in);
    CHECK(out.data == std::vector<float>{0.0f, 0.0f, 2.0f});

    Tensor neg(1, 2, 2, 2, -0.5f);
    Tensor up(1, 2, 2, 2, 1.0f);
    for (float v : relu(neg).data) CHECK(v == 0.0f);
    for (float v : relu_backward(neg, up).data) CHECK(v == 0.0f);
}

TEST_CASE("relu backward matches finite differences away from the kink") {
    Rng rng(8);
    Tensor in(1, 2, 6, 6);
    for (auto& v : in.data) {
        const double mag = rng.uniform(0.1, 1.0);
        v = static_cast<float>(rng.bernoulli(0.5) ? mag : -mag);
    }
    Tensor up = random_tensor<float>(1, 2, 6, 6, rng);
    Tensor g = relu_backward(in, up);
    const std::vector<double> proj(up.data.begin(), up.data.end());
    auto f = [&](const std::vector<double>& x) {
        double s = 0;
        for (std::size_t i = 0; i < x.size(); ++i) s += std::max(x[i], 0.0) * proj[i];
        return s;
    };
    auto fd = oracle::finite_diff(f, std::vector<double>(in.data.begin(), in.data.end()), 1e-3);
    REQUIRE(oracle::count_grad_mismatches(g.data, fd, 1e-3, 1e-4) == 0);
}

TEST_CASE("resize_bilinear of a constant image is constant") {
    Tensor in(1, 2, 5, 7, 0.37f);
    for (auto [th, tw] : {std::pair{3, 3}, std::pair{10, 14}, std::pair{1, 1}, std::pair{9, 4}}) {
        Tensor out = resize_bilinear(in, th, tw);
        for (float v : out.data) REQUIRE(v == 0.37f);
    }
}

TEST_CASE("resize_bilinear identity is bit-equal") {
    Rng rng(9);
    Tensor in = random_tensor<float>(2, 3, 6, 5, rng);
    Tensor out = resize_bilinear(in, 6, 5);
    REQUIRE(out.data == in.data);
}

TEST_CASE("resize_bilinear down-then-up of a constant reproduces the constant") {
    Tensor in(1, 1, 8, 8, 0.5f);
    Tensor small = resize_bilinear(in, 4, 4);
    Tensor back = resize_bilinear(small, 8, 8);
    for (float v : back.data) REQUIRE(v == 0.5f);
}

TEST_CASE("resize_bilinear matches the scalar reference") {
    Rng rng(10);
    Tensor in = random_tensor<float>(1, 1, 4, 4, rng, 0.0, 1.0);
    Tensor out = resize_bilinear(in, 8, 8);
    auto ref = oracle::resize_ref(tensor_cast<double>(in), 8, 8);
    for (std::size_t i = 0; i < out.size(); ++i)
        REQUIRE(std::fabs(out.data[i] - ref.data[i]) < 1e-5);

    Tensor in2 = random_tensor<float>(2, 3, 7, 5, rng, 0.0, 1.0);
    Tensor out2 = resize_bilinear(in2, 3, 11);
    auto ref2 = oracle::resize_ref(tensor_cast<double>(in2), 3, 11);
    for (std::size_t i = 0; i < out2.size(); ++i)
        REQUIRE(std::fabs(out2.data[i] - ref2.data[i]) < 1e-5);
}

TEST_CASE("resize_bilinear backward matches finite differences") {
    Rng rng(11);
    for (auto [sh, sw, th, tw] : {std::array{4, 6, 8, 12}, std::array{6, 6, 3, 3},
                                  std::array{5, 4, 7, 9}}) {
        Tensor in = random_tensor<float>(1, 2, sh, sw, rng);
        Tensor up = random_tensor<float>(1, 2, th, tw, rng);
        Tensor g = resize_bilinear_backward(up, sh, sw);
        const std::vector<double> proj(up.data.begin(), up.data.end());
        auto f = [&](const std::vector<double>& x) {
            TensorT<double> t(1, 2, sh, sw);
            t.data = x;
            return dot_with(oracle::resize_ref(t, th, tw), proj);
        };
        auto fd = oracle::finite_diff(f, std::vector<double>(in.data.begin(), in.data.end()), 1e-3);
        REQUIRE(oracle::count_grad_mismatches(g.data, fd, 1e-3, 1e-4) == 0);
    }
}

TEST_CASE("softmax_channels closed forms") {
    Tensor in(1, 2, 1, 1);
    in.data = {0.4f, 0.4f};
    Tensor out = softmax_channels(in);
    CHECK(out.data[0] == Catch::Approx(0.5).margin(1e-6));
    CHECK(out.data[1] == Catch::Approx(0.5).margin(1e-6));

    in.data = {0.0f, std::log(3.0f)};
    out = softmax_channels(in);
    CHECK(out.data[0] == Catch::Approx(0.25).margin(1e-6));
    CHECK(out.data[1] == Catch::Approx(0.75).margin(1e-6));
}

TEST_CASE("softmax_channels sums to one and shrugs off logit shifts") {
    Rng rng(12);
    Tensor in = random_tensor<float>(2, 3, 4, 4, rng, -5.0, 5.0);
    Tensor out = softmax_channels(in);
    const std::size_t plane = 16;
    for (int b = 0; b < 2; ++b)
        for (std::size_t p = 0; p < plane; ++p) {
            float sum = 0;
            for (int c = 0; c < 3; ++c) sum += out.plane(b, c)[p];
            REQUIRE(std::fabs(sum - 1.0f) < 1e-5f);
        }

    Tensor shifted = in;
    for (auto& v : shifted.data) v += 100.0f;
    Tensor out2 = softmax_channels(shifted);
    for (std::size_t i = 0; i < out.size(); ++i)
        REQUIRE(std::fabs(out.data[i] - out2.data[i]) < 1e-5f);
}

TEST_CASE("cross entropy closed forms") {
    Tensor probs(1, 2, 2, 2);
    Tensor mask(1, 1, 2, 2);
    // perfect prediction of the true class
    mask.data = {1.0f, 0.0f, 1.0f, 1.0f};
    for (int i = 0; i < 4; ++i) {
        probs.plane(0, 1)[i] = mask.data[i] == 1.0f ? 1.0f : 0.0f;
        probs.plane(0, 0)[i] = 1.0f - probs.plane(0, 1)[i];
    }
    CHECK(cross_entropy_pixel_mean(probs, mask) <= 1e-6f);

    for (float& v : probs.data) v = 0.5f;
    CHECK(cross_entropy_pixel_mean(probs, mask) == Catch::Approx(std::log(2.0)).margin(1e-6));
}

TEST_CASE("cross entropy rejects non-binary masks") {
    Tensor probs(1, 2, 2, 2, 0.5f);
    Tensor mask(1, 1, 2, 2, 0.5f);
    REQUIRE_THROWS_AS(cross_entropy_pixel_mean(probs, mask), std::invalid_argument);
}

TEST_CASE("combined softmax+cross-entropy backward matches finite differences") {
    Rng rng(13);
    Tensor logits = random_tensor<float>(1, 2, 4, 4, rng, -2.0, 2.0);
    Tensor mask(1, 1, 4, 4);
    for (auto& v : mask.data) v = rng.bernoulli(0.4) ? 1.0f : 0.0f;

    Tensor probs = softmax_channels(logits);
    Tensor g = cross_entropy_softmax_backward(probs, mask);

    const auto mask_d = tensor_cast<double>(mask);
    auto f = [&](const std::vector<double>& x) {
        TensorT<double> t(1, 2, 4, 4);
        t.data = x;
        return oracle::ce_softmax_ref(t, mask_d);
    };
    auto fd = oracle::finite_diff(f, std::vector<double>(logits.data.begin(), logits.data.end()), 1e-3);
    REQUIRE(oracle::count_grad_mismatches(g.data, fd, 1e-3, 1e-4) == 0);
}

TEST_CASE("sgd_update") {
    Tensor p(1, 1, 1, 1, 1.0f);
    Tensor g(1, 1, 1, 1, 0.5f);
    sgd_update(p, g, 0.0f);
    CHECK(p.data[0] == 1.0f);
    sgd_update(p, g, 0.001f);
    CHECK(p.data[0] == Catch::Approx(0.9995).margin(1e-7));

    // two steps at lr equal one step at 2*lr (plain SGD is linear in lr)
    Tensor p1(1, 1, 2, 2, 0.3f), p2(1, 1, 2, 2, 0.3f);
    Rng rng(14);
    Tensor grad = random_tensor<float>(1, 1, 2, 2, rng);
    sgd_update(p1, grad, 0.01f);
    sgd_update(p1, grad, 0.01f);
    sgd_update(p2, grad, 0.02f);
    for (std::size_t i = 0; i < p1.size(); ++i)
        REQUIRE(p1.data[i] == Catch::Approx(p2.data[i]).margin(1e-7));
}

TEST_CASE("operations are deterministic across worker counts") {
    Rng rng(15);
    Tensor in = random_tensor<float>(2, 6, 16, 16, rng);
    Tensor k = random_tensor<float>(8, 6, 3, 3, rng);
    Tensor b = random_tensor<float>(8, 1, 1, 1, rng);

    set_worker_count(4);
    Tensor out4 = conv2d(in, k, std::span<const float>(b.data), 2, 1);
    Tensor up = random_tensor<float>(2, 8, 8, 8, rng);
    auto g4 = conv2d_backward(in, k, up, 2, 1);

    set_worker_count(1);
    Tensor out1 = conv2d(in, k, std::span<const float>(b.data), 2, 1);
    auto g1 = conv2d_backward(in, k, up, 2, 1);

    REQUIRE(std::memcmp(out4.data.data(), out1.data.data(), out1.size() * 4) == 0);
    REQUIRE(std::memcmp(g4.wrt_input.data.data(), g1.wrt_input.data.data(),
                        g1.wrt_input.size() * 4) == 0);
    REQUIRE(g4.wrt_parameters[0].second.data == g1.wrt_parameters[0].second.data);
    REQUIRE(g4.wrt_parameters[1].second.data == g1.wrt_parameters[1].second.data);
}

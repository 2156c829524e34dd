#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ballseg {

// Rank-4 array stored row-major in (batch, channel, row, column) order.
// This is the universal carrier for images, feature maps, heatmaps and
// parameter gradients. The float alias is the runtime type; the template
// exists so tests can run reference paths in double.
template <typename T>
struct TensorT {
    std::array<int, 4> shape{0, 0, 0, 0};
    std::vector<T> data;

    TensorT() = default;

    TensorT(int b, int c, int h, int w, T fill = T(0))
        : shape{b, c, h, w} {
        if (b < 0 || c < 0 || h < 0 || w < 0)
            throw std::invalid_argument("tensor extents must be non-negative");
        data.assign(static_cast<std::size_t>(b) * c * h * w, fill);
    }

    int batch() const { return shape[0]; }
    int channels() const { return shape[1]; }
    int height() const { return shape[2]; }
    int width() const { return shape[3]; }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    std::size_t index(int b, int c, int y, int x) const {
        return ((static_cast<std::size_t>(b) * shape[1] + c) * shape[2] + y) * shape[3] + x;
    }

    T& at(int b, int c, int y, int x) { return data[index(b, c, y, x)]; }
    const T& at(int b, int c, int y, int x) const { return data[index(b, c, y, x)]; }

    T* plane(int b, int c) { return data.data() + index(b, c, 0, 0); }
    const T* plane(int b, int c) const { return data.data() + index(b, c, 0, 0); }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[" << shape[0] << "," << shape[1] << "," << shape[2] << "," << shape[3] << "]";
        return os.str();
    }
};

using Tensor = TensorT<float>;

// Gradients produced by one layer's backward pass: the gradient with
// respect to the layer input plus one tensor per named parameter, each
// shaped exactly like the value it differentiates.
template <typename T>
struct LayerGradientsT {
    TensorT<T> wrt_input;
    std::vector<std::pair<std::string, TensorT<T>>> wrt_parameters;
};

using LayerGradients = LayerGradientsT<float>;

template <typename U, typename T>
TensorT<U> tensor_cast(const TensorT<T>& t) {
    TensorT<U> out(t.shape[0], t.shape[1], t.shape[2], t.shape[3]);
    for (std::size_t i = 0; i < t.data.size(); ++i)
        out.data[i] = static_cast<U>(t.data[i]);
    return out;
}

}  // namespace ballseg

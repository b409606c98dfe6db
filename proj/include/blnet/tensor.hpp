#pragma once

#include <array>
#include <cassert>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace blnet {

// Dense 4-D array, layout (batch, channel, height, width), row-major.
// Templated on the scalar so the gradient-check suite can run in double;
// production code uses Tensor<float> (aliased ImageTensor below).
template <typename T>
struct Tensor {
    std::array<int, 4> shape{1, 1, 1, 1};  // n, c, h, w
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n, int c, int h, int w)
        : shape{n, c, h, w}, data(checked_numel(n, c, h, w), T(0)) {}

    static size_t checked_numel(int n, int c, int h, int w) {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw std::invalid_argument("tensor dims must be >= 1");
        return static_cast<size_t>(n) * c * h * w;
    }

    static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
    static Tensor full(int n, int c, int h, int w, T v) {
        Tensor t(n, c, h, w);
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) { return full(1, 1, 1, 1, v); }

    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }
    size_t numel() const { return data.size(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool is_scalar() const { return numel() == 1; }

    T& at(int in, int ic, int ih, int iw) {
        return data[((static_cast<size_t>(in) * shape[1] + ic) * shape[2] + ih) * shape[3] + iw];
    }
    T at(int in, int ic, int ih, int iw) const {
        return data[((static_cast<size_t>(in) * shape[1] + ic) * shape[2] + ih) * shape[3] + iw];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using ImageTensor = Tensor<float>;

inline std::string shape_str(const std::array<int, 4>& s) {
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," +
           std::to_string(s[2]) + "," + std::to_string(s[3]) + ")";
}

// Deterministic RNG used everywhere seeds matter. mt19937's output sequence
// is pinned by the C++ standard; we avoid std::*_distribution (whose mapping
// is implementation-defined) so runs reproduce across toolchains.
class DetRng {
  public:
    explicit DetRng(uint64_t seed) : rng_(static_cast<uint32_t>(seed)) {}

    uint32_t next() { return rng_(); }

    // uniform in [0,1), 24-bit resolution
    double uniform() { return (rng_() >> 8) * (1.0 / 16777216.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n); always consumes exactly one draw
    uint32_t below(uint32_t n) {
        uint32_t r = rng_();
        return n <= 1 ? 0 : r % n;
    }

  private:
    std::mt19937 rng_;
};

}  // namespace blnet

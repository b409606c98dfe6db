#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "blnet/autodiff.hpp"
#include "blnet/error.hpp"
#include "blnet/tensor.hpp"

// Network architectures: decomposition U-Net (image -> reflectance +
// illumination), enhancement U-Net (reflectance + illumination -> brightened
// illumination), and the feature CNN used by the noise/color losses.
namespace blnet::nets {

struct UNetConfig {
    int in_channels = 3;
    int out_channels = 4;
    int base_channels = 16;
    int depth = 4;  // encoder levels
    int kernel = 3;

    static UNetConfig decom() { return {3, 4, 16, 4, 3}; }
    static UNetConfig enhance() { return {4, 1, 16, 4, 3}; }

    int level_channels(int level) const { return base_channels << level; }
    int pad_multiple() const { return 1 << (depth - 1); }
};

struct NCBCConfig {
    int layers = 5;
    int feat_channels = 32;
    int kernel = 3;
    int hidden_channels = 32;
};

// Ordered parameter table; iteration follows creation order, which is also
// the seeded initialization draw order and the checkpoint layout order.
template <typename T>
struct NetParams {
    std::vector<ad::NodePtr<T>> order;
    std::unordered_map<std::string, size_t> index;

    ad::NodePtr<T> add(const std::string& name, Tensor<T> v) {
        if (index.count(name)) throw ValueError("duplicate parameter name: " + name);
        auto node = ad::param<T>(name, std::move(v));
        index.emplace(name, order.size());
        order.push_back(node);
        return node;
    }
    bool has(const std::string& name) const { return index.count(name) != 0; }
    const ad::NodePtr<T>& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw ValueError("unknown parameter: " + name);
        return order[it->second];
    }
    size_t count() const { return order.size(); }
};

// Deep copy: fresh nodes, same names/values, zeroed gradients.
template <typename T>
NetParams<T> clone_params(const NetParams<T>& src) {
    NetParams<T> out;
    for (const auto& node : src.order) out.add(node->name, node->value);
    return out;
}

template <typename T>
struct RetinexPair {
    ad::NodePtr<T> reflectance;   // (b,3,h,w)
    ad::NodePtr<T> illumination;  // (b,1,h,w)
};

namespace detail {

// One conv layer = weight (cout,cin,k,k) + bias (1,cout,1,1), both drawn
// uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)]. Weight elements first
// (row-major), then bias, so the rng stream is pinned by creation order.
template <typename T>
void add_conv(NetParams<T>& p, DetRng& rng, const std::string& name, int cin, int cout, int k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
    Tensor<T> w(cout, cin, k, k);
    for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
    Tensor<T> b(1, cout, 1, 1);
    for (auto& v : b.data) v = static_cast<T>(rng.uniform(-bound, bound));
    p.add(name + ".w", std::move(w));
    p.add(name + ".b", std::move(b));
}

template <typename T>
ad::NodePtr<T> conv(const NetParams<T>& p, const std::string& name, const ad::NodePtr<T>& x,
                    int stride, int pad) {
    return ad::conv2d(x, p.at(name + ".w"), p.at(name + ".b"), stride, pad);
}

template <typename T>
ad::NodePtr<T> conv_relu(const NetParams<T>& p, const std::string& name, const ad::NodePtr<T>& x,
                         int stride, int pad) {
    return ad::relu(conv(p, name, x, stride, pad));
}

}  // namespace detail

template <typename T = float>
NetParams<T> make_unet_params(const UNetConfig& cfg, uint32_t seed) {
    if (cfg.depth < 1) throw ValueError("unet: depth must be >= 1");
    NetParams<T> p;
    DetRng rng(seed);
    const int k = cfg.kernel;
    for (int l = 0; l < cfg.depth; ++l) {
        const int ch = cfg.level_channels(l);
        if (l > 0) detail::add_conv(p, rng, "down" + std::to_string(l), cfg.level_channels(l - 1), ch, k);
        const int cin = l == 0 ? cfg.in_channels : ch;
        detail::add_conv(p, rng, "enc" + std::to_string(l) + "_conv1", cin, ch, k);
        detail::add_conv(p, rng, "enc" + std::to_string(l) + "_conv2", ch, ch, k);
    }
    for (int l = cfg.depth - 1; l >= 1; --l) {
        const int ch = cfg.level_channels(l - 1);
        detail::add_conv(p, rng, "up" + std::to_string(l), cfg.level_channels(l), ch, k);
        detail::add_conv(p, rng, "dec" + std::to_string(l - 1) + "_conv1", ch * 2, ch, k);
        detail::add_conv(p, rng, "dec" + std::to_string(l - 1) + "_conv2", ch, ch, k);
    }
    detail::add_conv(p, rng, "head", cfg.level_channels(0), cfg.out_channels, k);
    return p;
}

template <typename T = float>
NetParams<T> make_ncbc_params(const NCBCConfig& cfg, uint32_t seed) {
    if (cfg.layers < 3) throw ValueError("feature net: needs at least 3 layers");
    NetParams<T> p;
    DetRng rng(seed);
    for (int l = 0; l < cfg.layers; ++l) {
        const int cin = l == 0 ? 3 : cfg.hidden_channels;
        const int cout = l == cfg.layers - 1 ? cfg.feat_channels : cfg.hidden_channels;
        detail::add_conv(p, rng, "layer" + std::to_string(l), cin, cout, cfg.kernel);
    }
    return p;
}

// Shared U-Net body: encoder with stride-2 conv downsampling, decoder with
// nearest upsample + conv and skip concatenation, sigmoid head. Input is
// reflect-padded (bottom/right) to a multiple of 2^(depth-1) and cropped back.
template <typename T>
ad::NodePtr<T> unet_forward(const NetParams<T>& p, const UNetConfig& cfg,
                            const ad::NodePtr<T>& input) {
    if (input->value.c() != cfg.in_channels)
        throw ValueError("unet: expected " + std::to_string(cfg.in_channels) +
                         " input channels, got " + std::to_string(input->value.c()));
    const int h = input->value.h(), w = input->value.w();
    const int m = cfg.pad_multiple();
    const int ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
    const int pd = cfg.kernel / 2;

    auto x = input;
    if (ph != h || pw != w) x = ad::pad_reflect(x, 0, ph - h, 0, pw - w);

    std::vector<ad::NodePtr<T>> skips;
    for (int l = 0; l < cfg.depth; ++l) {
        if (l > 0) x = detail::conv_relu(p, "down" + std::to_string(l), x, 2, pd);
        x = detail::conv_relu(p, "enc" + std::to_string(l) + "_conv1", x, 1, pd);
        x = detail::conv_relu(p, "enc" + std::to_string(l) + "_conv2", x, 1, pd);
        if (l + 1 < cfg.depth) skips.push_back(x);
    }
    for (int l = cfg.depth - 1; l >= 1; --l) {
        x = ad::upsample_nearest(x, 2);
        x = detail::conv_relu(p, "up" + std::to_string(l), x, 1, pd);
        x = ad::concat_channels(skips[l - 1], x);
        x = detail::conv_relu(p, "dec" + std::to_string(l - 1) + "_conv1", x, 1, pd);
        x = detail::conv_relu(p, "dec" + std::to_string(l - 1) + "_conv2", x, 1, pd);
    }
    x = ad::sigmoid(detail::conv(p, "head", x, 1, pd));
    if (ph != h || pw != w) x = ad::crop(x, 0, 0, h, w);
    return x;
}

// Decomposition: image -> 4 sigmoid channels, split 3+1 into R and L.
template <typename T>
RetinexPair<T> decom_forward(const NetParams<T>& p, const UNetConfig& cfg,
                             const ad::NodePtr<T>& s) {
    if (s->value.c() != 3) throw ValueError("decom_forward: input must have 3 channels");
    auto y = unet_forward(p, cfg, s);
    return {ad::slice_channels(y, 0, 3), ad::slice_channels(y, 3, 4)};
}

// Enhancement: concat(R, L) -> single brightened illumination channel.
template <typename T>
ad::NodePtr<T> enhance_forward(const NetParams<T>& p, const UNetConfig& cfg,
                               const ad::NodePtr<T>& r, const ad::NodePtr<T>& l) {
    if (r->value.h() != l->value.h() || r->value.w() != l->value.w() ||
        r->value.n() != l->value.n())
        throw ValueError("enhance_forward: reflectance/illumination dims differ");
    return unet_forward(p, cfg, ad::concat_channels(r, l));
}

// Feature CNN applied identically to every input (one shared parameter set).
template <typename T>
ad::NodePtr<T> ncbc_forward(const NetParams<T>& p, const NCBCConfig& cfg,
                            const ad::NodePtr<T>& x) {
    auto y = x;
    for (int l = 0; l < cfg.layers; ++l)
        y = detail::conv_relu(p, "layer" + std::to_string(l), y, 1, cfg.kernel / 2);
    return y;
}

// S = R * L with the single illumination channel broadcast across RGB.
template <typename T>
ad::NodePtr<T> reconstruct(const ad::NodePtr<T>& r, const ad::NodePtr<T>& l) {
    if (r->value.h() != l->value.h() || r->value.w() != l->value.w())
        throw ValueError("reconstruct: spatial dims differ");
    return ad::mul(r, ad::repeat_channels(l, r->value.c()));
}

}  // namespace blnet::nets

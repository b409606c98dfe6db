#pragma once

#include <string>

#include "blnet/autodiff.hpp"
#include "blnet/nets.hpp"
#include "blnet/tensor.hpp"

// Training losses for both phases. All reductions are per-element means so
// magnitudes are resolution-independent; weighted totals live here so every
// coefficient is pinned in one place.
namespace blnet::losses {

struct LossWeights {
    // reconstruction cross-terms
    double lambda_same = 1.0;
    double lambda_cross = 0.001;
    // exponent weight inside the smoothness term
    double smooth_lambda = 10.0;
    // decomposition total
    double decom_rc = 1.0;
    double decom_smooth = 0.1;
    double decom_equal = 0.01;
    // noise term
    double noise_tv = 0.05;
    double noise_mse = 1.0;
    // feature-module total; `ncbc_noise` is the ablation knob (0.2/0.4/0.7)
    double ncbc_noise = 0.2;
    double ncbc_color = 0.1;
    // enhancement total
    double enhance_rc = 1.0;
    double enhance_bri = 1.0;
    double enhance_per = 1.0;
    double enhance_grad = 1.0;
};

namespace detail {
template <typename T>
ad::NodePtr<T> l1_mean(const ad::NodePtr<T>& a, const ad::NodePtr<T>& b) {
    return ad::mean(ad::abs(ad::sub(a, b)));
}
}  // namespace detail

// ---- decomposition phase ----

// Sum over the four (i,j) pairings of mean|R_i * L_j - S_j|, weighted
// lambda_same on the diagonal and lambda_cross off it.
template <typename T>
ad::NodePtr<T> loss_reconstruction_decom(const ad::NodePtr<T>& r_low, const ad::NodePtr<T>& r_high,
                                         const ad::NodePtr<T>& l_low, const ad::NodePtr<T>& l_high,
                                         const ad::NodePtr<T>& s_low, const ad::NodePtr<T>& s_high,
                                         const LossWeights& w = {}) {
    const ad::NodePtr<T> rs[2] = {r_low, r_high};
    const ad::NodePtr<T> ls[2] = {l_low, l_high};
    const ad::NodePtr<T> ss[2] = {s_low, s_high};
    ad::NodePtr<T> total;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            T lam = static_cast<T>(i == j ? w.lambda_same : w.lambda_cross);
            auto term = ad::scale(detail::l1_mean(nets::reconstruct(rs[i], ls[j]), ss[j]), lam);
            total = total ? ad::add(total, term) : term;
        }
    return total;
}

template <typename T>
ad::NodePtr<T> loss_equal(const ad::NodePtr<T>& r_low, const ad::NodePtr<T>& r_high) {
    return detail::l1_mean(r_low, r_high);
}

// Illumination smoothness: gradients of L damped where the (channel-mean)
// reflectance gradient is strong, accumulated over both inputs and directions.
template <typename T>
ad::NodePtr<T> loss_smooth(const ad::NodePtr<T>& l_low, const ad::NodePtr<T>& l_high,
                           const ad::NodePtr<T>& r_low, const ad::NodePtr<T>& r_high,
                           const LossWeights& w = {}) {
    const T lam = static_cast<T>(w.smooth_lambda);
    ad::NodePtr<T> total;
    const ad::NodePtr<T> ls[2] = {l_low, l_high};
    const ad::NodePtr<T> rs[2] = {r_low, r_high};
    for (int i = 0; i < 2; ++i) {
        auto [lh, lv] = ad::spatial_gradients(ls[i]);
        auto [rh, rv] = ad::spatial_gradients(rs[i]);
        auto wh = ad::exp(ad::scale(ad::mean_channels(rh), -lam));
        auto wv = ad::exp(ad::scale(ad::mean_channels(rv), -lam));
        auto term = ad::add(ad::mean(ad::abs(ad::mul(lh, wh))), ad::mean(ad::abs(ad::mul(lv, wv))));
        total = total ? ad::add(total, term) : term;
    }
    return total;
}

template <typename T>
struct DecomLosses {
    ad::NodePtr<T> rc, smooth, equal, total;
};

template <typename T>
DecomLosses<T> compute_decom_losses(const ad::NodePtr<T>& r_low, const ad::NodePtr<T>& r_high,
                                    const ad::NodePtr<T>& l_low, const ad::NodePtr<T>& l_high,
                                    const ad::NodePtr<T>& s_low, const ad::NodePtr<T>& s_high,
                                    const LossWeights& w = {}) {
    DecomLosses<T> out;
    out.rc = loss_reconstruction_decom(r_low, r_high, l_low, l_high, s_low, s_high, w);
    out.smooth = loss_smooth(l_low, l_high, r_low, r_high, w);
    out.equal = loss_equal(r_low, r_high);
    out.total = ad::add(ad::add(ad::scale(out.rc, static_cast<T>(w.decom_rc)),
                                ad::scale(out.smooth, static_cast<T>(w.decom_smooth))),
                        ad::scale(out.equal, static_cast<T>(w.decom_equal)));
    return out;
}

template <typename T>
ad::NodePtr<T> loss_decom_total(const ad::NodePtr<T>& r_low, const ad::NodePtr<T>& r_high,
                                const ad::NodePtr<T>& l_low, const ad::NodePtr<T>& l_high,
                                const ad::NodePtr<T>& s_low, const ad::NodePtr<T>& s_high,
                                const LossWeights& w = {}) {
    return compute_decom_losses(r_low, r_high, l_low, l_high, s_low, s_high, w).total;
}

// ---- feature-module losses ----

// Squared-L2 of both directional gradients of a feature map.
template <typename T>
ad::NodePtr<T> loss_tv(const ad::NodePtr<T>& feat) {
    auto [dh, dv] = ad::spatial_gradients(feat);
    return ad::add(ad::mean(ad::square(dh)), ad::mean(ad::square(dv)));
}

template <typename T>
ad::NodePtr<T> loss_mse(const ad::NodePtr<T>& a, const ad::NodePtr<T>& b) {
    return ad::mean(ad::square(ad::sub(a, b)));
}

template <typename T>
ad::NodePtr<T> loss_noise(const ad::NodePtr<T>& feat_low, const ad::NodePtr<T>& r_low,
                          const ad::NodePtr<T>& r_high, const LossWeights& w = {}) {
    return ad::add(ad::scale(loss_tv(feat_low), static_cast<T>(w.noise_tv)),
                   ad::scale(loss_mse(r_low, r_high), static_cast<T>(w.noise_mse)));
}

template <typename T>
ad::NodePtr<T> loss_color(const ad::NodePtr<T>& feat_low, const ad::NodePtr<T>& feat_high) {
    return detail::l1_mean(feat_low, feat_high);
}

template <typename T>
struct NcbcLosses {
    ad::NodePtr<T> tv, mse, noise, color, total;
};

template <typename T>
NcbcLosses<T> compute_ncbc_losses(const ad::NodePtr<T>& feat_low, const ad::NodePtr<T>& feat_high,
                                  const ad::NodePtr<T>& r_low, const ad::NodePtr<T>& r_high,
                                  const LossWeights& w = {}) {
    NcbcLosses<T> out;
    out.tv = loss_tv(feat_low);
    out.mse = loss_mse(r_low, r_high);
    out.noise = ad::add(ad::scale(out.tv, static_cast<T>(w.noise_tv)),
                        ad::scale(out.mse, static_cast<T>(w.noise_mse)));
    out.color = loss_color(feat_low, feat_high);
    out.total = ad::add(ad::scale(out.noise, static_cast<T>(w.ncbc_noise)),
                        ad::scale(out.color, static_cast<T>(w.ncbc_color)));
    return out;
}

template <typename T>
ad::NodePtr<T> loss_ncbc_total(const ad::NodePtr<T>& feat_low, const ad::NodePtr<T>& feat_high,
                               const ad::NodePtr<T>& r_low, const ad::NodePtr<T>& r_high,
                               const LossWeights& w = {}) {
    return compute_ncbc_losses(feat_low, feat_high, r_low, r_high, w).total;
}

// ---- enhancement phase ----

template <typename T>
ad::NodePtr<T> loss_rc_enhance(const ad::NodePtr<T>& r_low, const ad::NodePtr<T>& l_output,
                               const ad::NodePtr<T>& s_high) {
    return detail::l1_mean(nets::reconstruct(r_low, l_output), s_high);
}

template <typename T>
ad::NodePtr<T> loss_brighten(const ad::NodePtr<T>& l_output, const ad::NodePtr<T>& l_high) {
    return detail::l1_mean(l_output, l_high);
}

template <typename T>
ad::NodePtr<T> loss_gradient(const ad::NodePtr<T>& out, const ad::NodePtr<T>& s_high) {
    auto [oh, ov] = ad::spatial_gradients(out);
    auto [gh, gv] = ad::spatial_gradients(s_high);
    return ad::add(detail::l1_mean(oh, gh), detail::l1_mean(ov, gv));
}

// ---- perceptual feature distance ----

// Desk-scale stand-in for a deep pretrained feature tap: a fixed, seeded conv
// stack with two stride-2 stages. File-loaded weights (same layer shapes) are
// supported through the checkpoint format.
inline constexpr int kPerceptualLayers = 5;
struct PerceptualLayerSpec {
    int cin, cout, stride;
};
inline constexpr PerceptualLayerSpec kPerceptualSpec[kPerceptualLayers] = {
    {3, 16, 2}, {16, 16, 1}, {16, 32, 2}, {32, 32, 1}, {32, 32, 1}};

template <typename T = float>
struct PerceptualExtractor {
    enum class Mode { fixed_random, file_loaded };
    Mode mode = Mode::fixed_random;
    nets::NetParams<T> params;
    int tap = kPerceptualLayers - 1;  // feature map used by the loss
};

template <typename T = float>
PerceptualExtractor<T> make_perceptual_extractor(uint32_t seed) {
    PerceptualExtractor<T> ex;
    DetRng rng(seed);
    for (int l = 0; l < kPerceptualLayers; ++l)
        nets::detail::add_conv(ex.params, rng, "layer" + std::to_string(l), kPerceptualSpec[l].cin,
                               kPerceptualSpec[l].cout, 3);
    for (auto& p : ex.params.order) {  // frozen: gradients never flow into the extractor
        p->requires_grad = false;
        p->trainable = false;
        p->grad = Tensor<T>();
    }
    return ex;
}

template <typename T>
ad::NodePtr<T> perceptual_forward(const PerceptualExtractor<T>& ex, const ad::NodePtr<T>& x) {
    if (ex.params.count() == 0) throw ValueError("perceptual extractor has no parameters");
    if (ex.tap < 0 || ex.tap >= kPerceptualLayers)
        throw ValueError("perceptual extractor tap out of range");
    auto y = x;
    for (int l = 0; l <= ex.tap; ++l)
        y = nets::detail::conv_relu(ex.params, "layer" + std::to_string(l), y,
                                    kPerceptualSpec[l].stride, 1);
    return y;
}

// Feature-space squared distance normalized by the *input* element count
// (channels x height x width, and batch), not the feature map's.
template <typename T>
ad::NodePtr<T> loss_perceptual(const PerceptualExtractor<T>& ex, const ad::NodePtr<T>& out,
                               const ad::NodePtr<T>& s_high) {
    ad::detail::check_same_shape(out, s_high, "loss_perceptual");
    auto diff = ad::sub(perceptual_forward(ex, out), perceptual_forward(ex, s_high));
    const T inv = T(1) / static_cast<T>(out->value.numel());
    return ad::scale(ad::sum(ad::square(diff)), inv);
}

template <typename T>
struct EnhanceLosses {
    ad::NodePtr<T> rc, bri, per, grad, total;
};

template <typename T>
EnhanceLosses<T> compute_enhance_losses(const ad::NodePtr<T>& r_low,
                                        const ad::NodePtr<T>& l_output,
                                        const ad::NodePtr<T>& l_high, const ad::NodePtr<T>& s_high,
                                        const PerceptualExtractor<T>& ex,
                                        const LossWeights& w = {}) {
    EnhanceLosses<T> out;
    auto enhanced = nets::reconstruct(r_low, l_output);
    out.rc = detail::l1_mean(enhanced, s_high);
    out.bri = loss_brighten(l_output, l_high);
    out.per = loss_perceptual(ex, enhanced, s_high);
    out.grad = loss_gradient(enhanced, s_high);
    out.total = ad::add(ad::add(ad::scale(out.rc, static_cast<T>(w.enhance_rc)),
                                ad::scale(out.bri, static_cast<T>(w.enhance_bri))),
                        ad::add(ad::scale(out.per, static_cast<T>(w.enhance_per)),
                                ad::scale(out.grad, static_cast<T>(w.enhance_grad))));
    return out;
}

template <typename T>
ad::NodePtr<T> loss_enhance_total(const ad::NodePtr<T>& r_low, const ad::NodePtr<T>& l_output,
                                  const ad::NodePtr<T>& l_high, const ad::NodePtr<T>& s_high,
                                  const PerceptualExtractor<T>& ex, const LossWeights& w = {}) {
    return compute_enhance_losses(r_low, l_output, l_high, s_high, ex, w).total;
}

}  // namespace blnet::losses

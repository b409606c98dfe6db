#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "blnet/error.hpp"
#include "blnet/nets.hpp"
#include "doctest.h"
#include "support/helpers.hpp"

using namespace blnet;
using namespace blnet::nets;

namespace {

ad::NodePtr<float> rand_input(DetRng& rng, int n, int c, int h, int w) {
    return ad::constant(testsup::random_image(rng, n, c, h, w), "input");
}

}  // namespace

TEST_CASE("parameter table layout") {
    auto cfg = UNetConfig::decom();
    auto p = make_unet_params<float>(cfg, 1);
    // 21 conv layers at depth 4, each a weight + bias pair
    CHECK(p.count() == 42);
    CHECK(p.has("enc0_conv1.w"));
    CHECK(p.has("down3.b"));
    CHECK(p.has("up1.w"));
    CHECK(p.has("dec0_conv2.b"));
    CHECK(p.has("head.w"));
    CHECK_FALSE(p.has("nope"));
    CHECK_THROWS_AS(p.at("nope"), ValueError);

    // names unique and iteration order matches the index
    std::set<std::string> names;
    for (size_t i = 0; i < p.order.size(); ++i) {
        names.insert(p.order[i]->name);
        CHECK(p.index.at(p.order[i]->name) == i);
    }
    CHECK(names.size() == p.count());

    NetParams<float> dup;
    dup.add("w", Tensor<float>::scalar(1.f));
    CHECK_THROWS_AS(dup.add("w", Tensor<float>::scalar(2.f)), ValueError);

    // head maps the widest-to-narrowest: base channels in, out_channels out
    auto head = p.at("head.w");
    CHECK(head->value.shape == std::array<int, 4>{4, 16, 3, 3});
    auto down1 = p.at("down1.w");
    CHECK(down1->value.shape == std::array<int, 4>{32, 16, 3, 3});
}

TEST_CASE("seeded initialization is deterministic and bounded") {
    auto cfg = UNetConfig::decom();
    auto a = make_unet_params<float>(cfg, 7);
    auto b = make_unet_params<float>(cfg, 7);
    auto c = make_unet_params<float>(cfg, 8);
    REQUIRE(a.count() == b.count());
    bool all_equal = true, any_diff_seed = false;
    for (size_t i = 0; i < a.order.size(); ++i) {
        all_equal &= a.order[i]->value.data == b.order[i]->value.data;
        any_diff_seed |= a.order[i]->value.data != c.order[i]->value.data;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);

    // every tensor obeys the fan-in bound and is not degenerate
    for (const auto& node : a.order) {
        const auto& w = node->value;
        float bound;
        if (node->name.size() > 2 && node->name.substr(node->name.size() - 2) == ".w") {
            bound = 1.f / std::sqrt(static_cast<float>(w.shape[1] * w.shape[2] * w.shape[3]));
        } else {
            // bias bound follows the matching weight's fan-in
            auto wnode = a.at(node->name.substr(0, node->name.size() - 2) + ".w");
            const auto& ws = wnode->value.shape;
            bound = 1.f / std::sqrt(static_cast<float>(ws[1] * ws[2] * ws[3]));
        }
        float mx = 0;
        for (float v : w.data) mx = std::max(mx, std::abs(v));
        CHECK(mx <= bound + 1e-7f);
        CHECK(mx > 0.f);
        CHECK(node->requires_grad);
        CHECK(node->trainable);
        REQUIRE(w.data.size() == node->grad.data.size());
        for (float g : node->grad.data) CHECK(g == 0.f);
    }
}

TEST_CASE("clone produces fresh but identical parameters") {
    auto p = make_ncbc_params<float>(NCBCConfig{}, 5);
    auto q = clone_params(p);
    REQUIRE(q.count() == p.count());
    for (size_t i = 0; i < p.order.size(); ++i) {
        CHECK(q.order[i]->name == p.order[i]->name);
        CHECK(q.order[i]->value.data == p.order[i]->value.data);
        CHECK(q.order[i].get() != p.order[i].get());
    }
    q.order[0]->value.data[0] += 1.f;
    CHECK(q.order[0]->value.data[0] != p.order[0]->value.data[0]);
}

TEST_CASE("decomposition forward shapes and range") {
    auto cfg = UNetConfig::decom();
    cfg.base_channels = 4;
    cfg.depth = 3;
    auto p = make_unet_params<float>(cfg, 3);
    DetRng rng(30);

    // non-multiple-of-4 sizes exercise the pad/crop path
    for (auto [h, w] : {std::pair{13, 9}, std::pair{16, 16}, std::pair{8, 11}}) {
        auto s = rand_input(rng, 2, 3, h, w);
        auto out = decom_forward(p, cfg, s);
        CHECK(out.reflectance->value.shape == std::array<int, 4>{2, 3, h, w});
        CHECK(out.illumination->value.shape == std::array<int, 4>{2, 1, h, w});
        for (float v : out.reflectance->value.data) {
            CHECK(v > 0.f);
            CHECK(v < 1.f);
        }
        for (float v : out.illumination->value.data) {
            CHECK(v > 0.f);
            CHECK(v < 1.f);
        }
    }

    auto bad = rand_input(rng, 1, 4, 8, 8);
    CHECK_THROWS_AS(decom_forward(p, cfg, bad), ValueError);
}

TEST_CASE("zeroed parameters give the sigmoid midpoint") {
    auto cfg = UNetConfig::decom();
    cfg.base_channels = 4;
    cfg.depth = 2;
    auto p = make_unet_params<float>(cfg, 1);
    for (auto& node : p.order) node->value.fill(0.f);
    DetRng rng(31);
    auto out = decom_forward(p, cfg, rand_input(rng, 1, 3, 6, 6));
    for (float v : out.reflectance->value.data) CHECK(v == doctest::Approx(0.5f));
    for (float v : out.illumination->value.data) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("forward pass is a pure deterministic function") {
    auto cfg = UNetConfig::decom();
    cfg.base_channels = 4;
    cfg.depth = 2;
    auto p = make_unet_params<float>(cfg, 9);
    DetRng rng(32);
    Tensor<float> img = testsup::random_image(rng, 1, 3, 10, 10);
    auto a = decom_forward(p, cfg, ad::constant(img));
    auto b = decom_forward(p, cfg, ad::constant(img));
    CHECK(a.reflectance->value.data == b.reflectance->value.data);
    CHECK(a.illumination->value.data == b.illumination->value.data);
}

TEST_CASE("batch items are processed independently") {
    auto cfg = UNetConfig::decom();
    cfg.base_channels = 4;
    cfg.depth = 2;
    auto p = make_unet_params<float>(cfg, 11);
    DetRng rng(33);
    Tensor<float> a = testsup::random_image(rng, 1, 3, 8, 8);
    Tensor<float> b = testsup::random_image(rng, 1, 3, 8, 8);

    Tensor<float> ab(2, 3, 8, 8), ba(2, 3, 8, 8);
    std::copy(a.data.begin(), a.data.end(), ab.data.begin());
    std::copy(b.data.begin(), b.data.end(), ab.data.begin() + a.data.size());
    std::copy(b.data.begin(), b.data.end(), ba.data.begin());
    std::copy(a.data.begin(), a.data.end(), ba.data.begin() + b.data.size());

    auto out_ab = decom_forward(p, cfg, ad::constant(ab));
    auto out_ba = decom_forward(p, cfg, ad::constant(ba));
    const auto& rab = out_ab.reflectance->value;
    const auto& rba = out_ba.reflectance->value;
    size_t half = rab.data.size() / 2;
    for (size_t i = 0; i < half; ++i) {
        CHECK(rab.data[i] == rba.data[half + i]);
        CHECK(rab.data[half + i] == rba.data[i]);
    }
}

TEST_CASE("decom and enhancement nets share topology up to the io layers") {
    auto dcfg = UNetConfig::decom();
    auto ecfg = UNetConfig::enhance();
    auto dp = make_unet_params<float>(dcfg, 1);
    auto ep = make_unet_params<float>(ecfg, 1);
    REQUIRE(dp.count() == ep.count());
    for (size_t i = 0; i < dp.order.size(); ++i) {
        const auto& name = dp.order[i]->name;
        CHECK(ep.order[i]->name == name);
        const auto& ds = dp.order[i]->value.shape;
        const auto& es = ep.order[i]->value.shape;
        if (name == "enc0_conv1.w") {
            CHECK(ds[1] == 3);
            CHECK(es[1] == 4);
        } else if (name == "head.w") {
            CHECK(ds[0] == 4);
            CHECK(es[0] == 1);
        } else if (name == "head.b") {
            CHECK(ds[1] == 4);
            CHECK(es[1] == 1);
        } else {
            CHECK(ds == es);
        }
    }
}

TEST_CASE("enhancement forward") {
    auto cfg = UNetConfig::enhance();
    cfg.base_channels = 4;
    cfg.depth = 2;
    auto p = make_unet_params<float>(cfg, 13);
    DetRng rng(34);
    auto r = rand_input(rng, 1, 3, 9, 9);
    auto l = rand_input(rng, 1, 1, 9, 9);
    auto out = enhance_forward(p, cfg, r, l);
    CHECK(out->value.shape == std::array<int, 4>{1, 1, 9, 9});
    for (float v : out->value.data) {
        CHECK(v > 0.f);
        CHECK(v < 1.f);
    }
    auto lbad = rand_input(rng, 1, 1, 8, 9);
    CHECK_THROWS_AS(enhance_forward(p, cfg, r, lbad), ValueError);
}

TEST_CASE("feature net forward") {
    NCBCConfig cfg;
    cfg.feat_channels = 16;
    cfg.hidden_channels = 16;
    auto p = make_ncbc_params<float>(cfg, 21);
    CHECK(p.count() == 10);  // 5 layers x (w, b)
    CHECK(p.has("layer0.w"));
    CHECK(p.has("layer4.b"));
    CHECK(p.at("layer4.w")->value.shape[0] == 16);

    DetRng rng(35);
    auto x = rand_input(rng, 2, 3, 12, 12);
    auto f = ncbc_forward(p, cfg, x);
    CHECK(f->value.shape == std::array<int, 4>{2, 16, 12, 12});
    for (float v : f->value.data) CHECK(v >= 0.f);  // post-relu

    // siamese by construction: same parameters, same input, same features
    auto f2 = ncbc_forward(p, cfg, x);
    CHECK(f2->value.data == f->value.data);

    NCBCConfig shallow;
    shallow.layers = 2;
    CHECK_THROWS_AS(make_ncbc_params<float>(shallow, 1), ValueError);
}

TEST_CASE("feature net receptive field stays local") {
    NCBCConfig cfg;
    cfg.feat_channels = 8;
    cfg.hidden_channels = 8;
    auto p = make_ncbc_params<float>(cfg, 41);
    DetRng rng(36);
    Tensor<float> img = testsup::random_image(rng, 1, 3, 16, 16);
    auto base = ncbc_forward(p, cfg, ad::constant(img));

    // five 3x3 layers -> radius-5 receptive field: a perturbation 6 pixels
    // away cannot reach the probe, one 3 pixels away lands inside it
    Tensor<float> far = img;
    for (int c = 0; c < 3; ++c) far.at(0, c, 2, 2 + 6) += 10.f;
    auto out_far = ncbc_forward(p, cfg, ad::constant(far));
    for (int c = 0; c < 8; ++c) CHECK(out_far->value.at(0, c, 2, 2) == base->value.at(0, c, 2, 2));

    Tensor<float> near = img;
    for (int c = 0; c < 3; ++c) near.at(0, c, 2, 2 + 3) += 10.f;
    auto out_near = ncbc_forward(p, cfg, ad::constant(near));
    bool changed = false;
    for (int c = 0; c < 8; ++c)
        changed |= out_near->value.at(0, c, 2, 2) != base->value.at(0, c, 2, 2);
    CHECK(changed);
}

TEST_CASE("reflectance-illumination recombination") {
    DetRng rng(37);
    Tensor<float> rv = testsup::random_image(rng, 1, 3, 4, 4);
    Tensor<float> lv(1, 1, 4, 4);
    lv.fill(1.f);
    auto prod = reconstruct(ad::constant(rv), ad::constant(lv));
    CHECK(prod->value.data == rv.data);

    lv.fill(0.5f);
    auto half = reconstruct(ad::constant(rv), ad::constant(lv));
    for (size_t i = 0; i < rv.data.size(); ++i)
        CHECK(half->value.data[i] == doctest::Approx(rv.data[i] * 0.5f));

    Tensor<float> lbad(1, 1, 3, 4);
    CHECK_THROWS_AS(reconstruct(ad::constant(rv), ad::constant(lbad)), ValueError);
}

TEST_CASE("gradients flow to every parameter") {
    auto cfg = UNetConfig::decom();
    cfg.base_channels = 4;
    cfg.depth = 2;
    auto p = make_unet_params<float>(cfg, 17);
    DetRng rng(38);
    auto s = rand_input(rng, 1, 3, 8, 8);
    auto out = decom_forward(p, cfg, s);
    auto loss = ad::mean(ad::square(ad::sub(reconstruct(out.reflectance, out.illumination), s)));
    ad::backward(loss);
    for (const auto& node : p.order) {
        double mag = 0;
        for (float g : node->grad.data) mag += std::abs(g);
        INFO(node->name);
        CHECK(mag > 0.0);
    }
}

#pragma once

// Shared scaffolding for the test binaries: scratch directories, random
// image generators, and a small synthetic paired dataset writer.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "blnet/image_io.hpp"
#include "blnet/tensor.hpp"

namespace testsup {

namespace fs = std::filesystem;

// Unique scratch directory, removed on destruction.
struct TmpDir {
    fs::path path;

    explicit TmpDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               (tag + "-" + std::to_string(static_cast<long>(::getpid())) + "-" +
                std::to_string(counter.fetch_add(1)));
        fs::create_directories(path);
    }
    ~TmpDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    TmpDir(const TmpDir&) = delete;
    TmpDir& operator=(const TmpDir&) = delete;

    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline blnet::ImageTensor random_image(blnet::DetRng& rng, int n, int c, int h, int w,
                                       float lo = 0.0f, float hi = 1.0f) {
    blnet::ImageTensor t(n, c, h, w);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

// Well-exposed synthetic scene: low-frequency color gradients plus a few flat
// rectangles for edges, values kept inside [0.10, 0.95].
inline blnet::ImageTensor make_scene(int h, int w, uint32_t seed) {
    blnet::DetRng rng(seed);
    blnet::ImageTensor img(1, 3, h, w);
    const float tau = 6.2831853f;
    float phase[3] = {static_cast<float>(rng.uniform(0.0, tau)),
                      static_cast<float>(rng.uniform(0.0, tau)),
                      static_cast<float>(rng.uniform(0.0, tau))};
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                float fy = h > 1 ? static_cast<float>(y) / (h - 1) : 0.f;
                float fx = w > 1 ? static_cast<float>(x) / (w - 1) : 0.f;
                float v = 0.50f + 0.22f * std::sin(tau * (0.7f * fx + 0.4f * fy) + phase[c]) +
                          0.13f * std::cos(tau * 1.3f * fy + 0.5f * phase[c]);
                img.at(0, c, y, x) = v;
            }
        }
    }
    for (int r = 0; r < 2; ++r) {
        int ry = static_cast<int>(rng.below(std::max(1u, static_cast<uint32_t>(h / 2))));
        int rx = static_cast<int>(rng.below(std::max(1u, static_cast<uint32_t>(w / 2))));
        int rh = 2 + static_cast<int>(rng.below(std::max(1u, static_cast<uint32_t>(h / 3))));
        int rw = 2 + static_cast<int>(rng.below(std::max(1u, static_cast<uint32_t>(w / 3))));
        float col[3] = {static_cast<float>(rng.uniform(0.3, 0.8)),
                        static_cast<float>(rng.uniform(0.3, 0.8)),
                        static_cast<float>(rng.uniform(0.3, 0.8))};
        // half-blended edges keep the scene easy for a small net to fit
        for (int c = 0; c < 3; ++c)
            for (int y = ry; y < std::min(h, ry + rh); ++y)
                for (int x = rx; x < std::min(w, rx + rw); ++x)
                    img.at(0, c, y, x) = 0.5f * (img.at(0, c, y, x) + col[c]);
    }
    for (auto& v : img.data) v = std::min(0.95f, std::max(0.10f, v));
    return img;
}

// Smooth, dim lighting field in [0.10, 0.35].
inline blnet::ImageTensor make_illumination(int h, int w, uint32_t seed) {
    blnet::DetRng rng(seed);
    blnet::ImageTensor il(1, 1, h, w);
    const float tau = 6.2831853f;
    float phase = static_cast<float>(rng.uniform(0.0, tau));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float fy = h > 1 ? static_cast<float>(y) / (h - 1) : 0.f;
            float fx = w > 1 ? static_cast<float>(x) / (w - 1) : 0.f;
            il.at(0, 0, y, x) =
                0.225f + 0.125f * std::sin(tau * (0.5f * fx + 0.3f * fy) + phase);
        }
    }
    return il;
}

// Dark/bright pair related by a smooth multiplicative lighting field.
inline void make_scene_pair(int h, int w, uint32_t seed, blnet::ImageTensor* low,
                            blnet::ImageTensor* high) {
    *high = make_scene(h, w, seed);
    blnet::ImageTensor il = make_illumination(h, w, seed + 17);
    *low = blnet::ImageTensor(1, 3, h, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                low->at(0, c, y, x) = high->at(0, c, y, x) * il.at(0, 0, y, x);
}

// Writes low/ + high/ subdirectories with pair_000.png, pair_001.png, ...
inline void write_pair_dataset(
    const fs::path& root,
    const std::vector<std::pair<blnet::ImageTensor, blnet::ImageTensor>>& pairs) {
    fs::create_directories(root / "low");
    fs::create_directories(root / "high");
    for (size_t i = 0; i < pairs.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "pair_%03zu.png", i);
        blnet::imgio::save_image(pairs[i].first, (root / "low" / name).string());
        blnet::imgio::save_image(pairs[i].second, (root / "high" / name).string());
    }
}

// Convenience: n scene pairs of size h x w written under root.
inline void write_scene_dataset(const fs::path& root, int n, int h, int w, uint32_t seed) {
    std::vector<std::pair<blnet::ImageTensor, blnet::ImageTensor>> ps;
    for (int i = 0; i < n; ++i) {
        blnet::ImageTensor low, high;
        make_scene_pair(h, w, seed + static_cast<uint32_t>(i) * 101, &low, &high);
        ps.emplace_back(std::move(low), std::move(high));
    }
    write_pair_dataset(root, ps);
}

}  // namespace testsup

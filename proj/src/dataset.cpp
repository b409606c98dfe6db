#include "blnet/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>

#include "blnet/error.hpp"
#include "blnet/image_io.hpp"

namespace fs = std::filesystem;

namespace blnet::imgio {

namespace {

bool supported(const fs::path& p) {
    std::string ext = p.extension().string();
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext == ".png" || ext == ".ppm";
}

}  // namespace

std::map<std::string, std::string> list_images(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError(dir + ": not a directory");
    std::map<std::string, std::string> files;  // filename -> full path, sorted by key
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && supported(entry.path()))
            files[entry.path().filename().string()] = entry.path().string();
    return files;
}

PairedDataset scan_dataset(const std::string& root, std::vector<std::string>* warnings) {
    const fs::path low_dir = fs::path(root) / "low";
    const fs::path high_dir = fs::path(root) / "high";
    if (!fs::is_directory(low_dir)) throw IoError(root + ": missing low/ subdirectory");
    if (!fs::is_directory(high_dir)) throw IoError(root + ": missing high/ subdirectory");

    auto low = list_images(low_dir);
    auto high = list_images(high_dir);

    PairedDataset ds;
    ds.root = root;
    for (const auto& [name, path] : low) {
        auto it = high.find(name);
        if (it == high.end()) {
            if (warnings) warnings->push_back("skipping low/" + name + ": no matching high image");
            continue;
        }
        ds.pairs.emplace_back(path, it->second);
    }
    for (const auto& [name, path] : high)
        if (!low.count(name) && warnings)
            warnings->push_back("skipping high/" + name + ": no matching low image");

    if (ds.pairs.empty()) throw IoError(root + ": no matched low/high pairs");
    return ds;
}

std::pair<ImageTensor, ImageTensor> load_pair(const PairedDataset& ds, size_t index) {
    if (index >= ds.pairs.size()) throw ValueError("pair index out of range");
    ImageTensor low = load_image(ds.pairs[index].first);
    ImageTensor high = load_image(ds.pairs[index].second);
    if (low.h() != high.h() || low.w() != high.w())
        throw ValueError(ds.pairs[index].first + " and its high partner differ in size: " +
                         shape_str(low.shape) + " vs " + shape_str(high.shape));
    return {std::move(low), std::move(high)};
}

PatchBatch sample_patches(const ImageTensor& low, const ImageTensor& high, int patch, int count,
                          uint64_t seed) {
    if (low.n() != 1 || high.n() != 1) throw ValueError("sample_patches expects batch-1 images");
    if (low.h() != high.h() || low.w() != high.w())
        throw ValueError("sample_patches: low/high spatial dims differ");
    if (patch < 1 || count < 1) throw ValueError("sample_patches: patch and count must be >= 1");
    if (low.h() < patch || low.w() < patch)
        throw ValueError("image " + shape_str(low.shape) + " smaller than patch " +
                         std::to_string(patch));

    PatchBatch out;
    out.low = ImageTensor(count, low.c(), patch, patch);
    out.high = ImageTensor(count, high.c(), patch, patch);
    DetRng rng(seed);
    for (int i = 0; i < count; ++i) {
        const int y = static_cast<int>(rng.below(static_cast<uint32_t>(low.h() - patch + 1)));
        const int x = static_cast<int>(rng.below(static_cast<uint32_t>(low.w() - patch + 1)));
        out.offsets.emplace_back(y, x);
        for (int c = 0; c < low.c(); ++c)
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    out.low.at(i, c, py, px) = low.at(0, c, y + py, x + px);
        for (int c = 0; c < high.c(); ++c)
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px)
                    out.high.at(i, c, py, px) = high.at(0, c, y + py, x + px);
    }
    return out;
}

}  // namespace blnet::imgio

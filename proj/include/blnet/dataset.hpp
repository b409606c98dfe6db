#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "blnet/tensor.hpp"

namespace blnet::imgio {

// filename -> full path for every supported image (.png/.ppm) directly in
// dir, sorted by filename. Throws if dir is not a directory.
std::map<std::string, std::string> list_images(const std::string& dir);

// A low/high pair list under a dataset root with `low/` and `high/`
// subdirectories holding equally named files.
struct PairedDataset {
    std::string root;
    std::vector<std::pair<std::string, std::string>> pairs;  // (low_path, high_path)

    size_t size() const { return pairs.size(); }
};

// Scans root/low and root/high, pairing files by identical filename,
// sorted lexicographically. Unmatched files are skipped; a message per skip
// is appended to *warnings when given. Throws on a missing subdirectory or
// when no pair matches.
PairedDataset scan_dataset(const std::string& root, std::vector<std::string>* warnings = nullptr);

// Loads one pair and checks the two images have identical spatial dims.
std::pair<ImageTensor, ImageTensor> load_pair(const PairedDataset& ds, size_t index);

struct PatchBatch {
    ImageTensor low;   // (count, c, patch, patch)
    ImageTensor high;  // same offsets as low
    std::vector<std::pair<int, int>> offsets;  // (y, x) per patch
};

// Draws `count` random crops from one low/high pair, the same offset applied
// to both images. Offset generator, reproducible from the seed alone:
//   rng = mt19937(seed); per patch: y = rng() % (h-patch+1), x = rng() % (w-patch+1).
PatchBatch sample_patches(const ImageTensor& low, const ImageTensor& high, int patch, int count,
                          uint64_t seed);

}  // namespace blnet::imgio

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "blnet/nets.hpp"
#include "blnet/tensor.hpp"

// Binary checkpoint container: magic "BLNT", u32 version, u32 tensor count,
// then per tensor: u32 name length, name bytes, u8 dtype tag (0 = f32,
// 1 = u8), u32 rank, u32 dims, raw little-endian payload. Metadata rides
// along as a reserved u8 tensor named "__meta__" holding key=value lines.
namespace blnet::ckpt {

inline constexpr uint32_t kVersion = 1;
inline constexpr char kMagic[4] = {'B', 'L', 'N', 'T'};

struct NamedTensor {
    std::string name;
    uint8_t dtype = 0;  // 0 = f32, 1 = u8
    std::array<int, 4> shape{1, 1, 1, 1};
    std::vector<float> f32;
    std::vector<uint8_t> u8;

    size_t numel() const {
        return static_cast<size_t>(shape[0]) * shape[1] * shape[2] * shape[3];
    }
};

struct Checkpoint {
    std::vector<NamedTensor> tensors;  // file order; excludes __meta__
    std::map<std::string, std::string> meta;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Appends every parameter of a table under `prefix` (e.g. "decom/").
void append_params(Checkpoint& ck, const std::string& prefix, const nets::NetParams<float>& p);

// Copies values back into an existing table; every parameter must be present
// with an identical shape.
void read_params(const Checkpoint& ck, const std::string& prefix, nets::NetParams<float>& p);

}  // namespace blnet::ckpt

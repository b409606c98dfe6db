#include "blnet/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <memory>

#include "blnet/error.hpp"

namespace blnet::ckpt {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_bytes(std::FILE* f, const void* p, size_t n, const std::string& path) {
    if (std::fwrite(p, 1, n, f) != n) throw IoError("write failed: " + path);
}

void write_u32(std::FILE* f, uint32_t v, const std::string& path) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    write_bytes(f, b, 4, path);
}

void read_bytes(std::FILE* f, void* p, size_t n, const std::string& path) {
    if (std::fread(p, 1, n, f) != n) throw IoError("truncated checkpoint: " + path);
}

uint32_t read_u32(std::FILE* f, const std::string& path) {
    unsigned char b[4];
    read_bytes(f, b, 4, path);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

void write_tensor(std::FILE* f, const NamedTensor& t, const std::string& path) {
    write_u32(f, static_cast<uint32_t>(t.name.size()), path);
    write_bytes(f, t.name.data(), t.name.size(), path);
    write_bytes(f, &t.dtype, 1, path);
    write_u32(f, 4, path);
    for (int d : t.shape) write_u32(f, static_cast<uint32_t>(d), path);
    if (t.dtype == 0) {
        if (t.f32.size() != t.numel()) throw ValueError("tensor " + t.name + ": bad f32 payload");
        write_bytes(f, t.f32.data(), t.f32.size() * sizeof(float), path);
    } else if (t.dtype == 1) {
        if (t.u8.size() != t.numel()) throw ValueError("tensor " + t.name + ": bad u8 payload");
        write_bytes(f, t.u8.data(), t.u8.size(), path);
    } else {
        throw ValueError("tensor " + t.name + ": unknown dtype tag");
    }
}

NamedTensor read_tensor(std::FILE* f, const std::string& path) {
    NamedTensor t;
    uint32_t name_len = read_u32(f, path);
    if (name_len > (1u << 20)) throw IoError("corrupt checkpoint (absurd name length): " + path);
    t.name.resize(name_len);
    read_bytes(f, t.name.data(), name_len, path);
    read_bytes(f, &t.dtype, 1, path);
    if (t.dtype > 1) throw IoError("corrupt checkpoint (unknown dtype tag): " + path);
    uint32_t rank = read_u32(f, path);
    if (rank < 1 || rank > 4) throw IoError("corrupt checkpoint (unsupported rank): " + path);
    t.shape = {1, 1, 1, 1};
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t d = read_u32(f, path);
        if (d == 0 || d > (1u << 28)) throw IoError("corrupt checkpoint (bad dim): " + path);
        t.shape[4 - rank + i] = static_cast<int>(d);  // left-pad with 1s
    }
    size_t n = t.numel();
    if (t.dtype == 0) {
        t.f32.resize(n);
        read_bytes(f, t.f32.data(), n * sizeof(float), path);
    } else {
        t.u8.resize(n);
        read_bytes(f, t.u8.data(), n, path);
    }
    return t;
}

std::string encode_meta(const std::map<std::string, std::string>& meta) {
    std::string out;
    for (const auto& [k, v] : meta) out += k + "=" + v + "\n";
    return out;
}

std::map<std::string, std::string> decode_meta(const std::vector<uint8_t>& bytes) {
    std::map<std::string, std::string> meta;
    std::string line;
    for (size_t i = 0; i <= bytes.size(); ++i) {
        if (i == bytes.size() || bytes[i] == '\n') {
            auto eq = line.find('=');
            if (eq != std::string::npos) meta.emplace(line.substr(0, eq), line.substr(eq + 1));
            line.clear();
        } else {
            line.push_back(static_cast<char>(bytes[i]));
        }
    }
    return meta;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + path);
    write_bytes(f.get(), kMagic, 4, path);
    write_u32(f.get(), kVersion, path);
    const bool has_meta = !ck.meta.empty();
    write_u32(f.get(), static_cast<uint32_t>(ck.tensors.size() + (has_meta ? 1 : 0)), path);
    for (const auto& t : ck.tensors) write_tensor(f.get(), t, path);
    if (has_meta) {
        NamedTensor mt;
        mt.name = "__meta__";
        mt.dtype = 1;
        std::string text = encode_meta(ck.meta);
        mt.shape = {1, 1, 1, static_cast<int>(text.size())};
        mt.u8.assign(text.begin(), text.end());
        write_tensor(f.get(), mt, path);
    }
    if (std::fflush(f.get()) != 0) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    read_bytes(f.get(), magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a checkpoint file (bad magic): " + path);
    uint32_t version = read_u32(f.get(), path);
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    uint32_t count = read_u32(f.get(), path);
    Checkpoint ck;
    for (uint32_t i = 0; i < count; ++i) {
        NamedTensor t = read_tensor(f.get(), path);
        if (t.name == "__meta__" && t.dtype == 1)
            ck.meta = decode_meta(t.u8);
        else
            ck.tensors.push_back(std::move(t));
    }
    // anything after the declared tensor table is corruption
    unsigned char extra;
    if (std::fread(&extra, 1, 1, f.get()) == 1)
        throw IoError("corrupt checkpoint (trailing data): " + path);
    return ck;
}

void append_params(Checkpoint& ck, const std::string& prefix, const nets::NetParams<float>& p) {
    for (const auto& node : p.order) {
        NamedTensor t;
        t.name = prefix + node->name;
        t.dtype = 0;
        t.shape = node->value.shape;
        t.f32 = node->value.data;
        ck.tensors.push_back(std::move(t));
    }
}

void read_params(const Checkpoint& ck, const std::string& prefix, nets::NetParams<float>& p) {
    for (auto& node : p.order) {
        const NamedTensor* t = ck.find(prefix + node->name);
        if (!t) throw ValueError("checkpoint missing tensor: " + prefix + node->name);
        if (t->dtype != 0) throw ValueError("checkpoint tensor " + t->name + " is not f32");
        if (t->shape != node->value.shape)
            throw ValueError("checkpoint tensor " + t->name + " has shape " + shape_str(t->shape) +
                             ", expected " + shape_str(node->value.shape));
        node->value.data = t->f32;
    }
}

}  // namespace blnet::ckpt

#include "blnet/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "blnet/error.hpp"

namespace blnet::imgio {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string lower_ext(const std::string& path) {
    auto dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot);
    for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return ext;
}

ImageTensor from_bytes(const std::vector<unsigned char>& bytes, int channels, int h, int w) {
    ImageTensor img(1, channels, h, w);
    const float inv = 1.0f / 255.0f;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(0, c, y, x) = bytes[(static_cast<size_t>(y) * w + x) * channels + c] * inv;
    return img;
}

// ---- PNG ----

ImageTensor load_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }

    std::vector<unsigned char> bytes;
    int width = 0, height = 0, channels = 0;

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("failed to decode PNG " + path);
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    int bit_depth = png_get_bit_depth(png, info);
    int color_type = png_get_color_type(png, info);

    if (bit_depth > 8) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path + ": unsupported bit depth " + std::to_string(bit_depth) +
                      " (only 8-bit images are supported)");
    }

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path + ": unsupported channel count " + std::to_string(channels));
    }

    bytes.resize(static_cast<size_t>(width) * height * channels);
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y)
        rows[y] = bytes.data() + static_cast<size_t>(y) * width * channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    return from_bytes(bytes, channels, height, width);
}

void save_png(const ImageTensor& img, const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path);

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed");
    }

    const int h = img.h(), w = img.w(), c = img.c();
    std::vector<unsigned char> bytes(static_cast<size_t>(h) * w * c);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                bytes[(static_cast<size_t>(y) * w + x) * c + ch] =
                    static_cast<unsigned char>(quantize_byte(img.at(0, ch, y, x)));

    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed to encode PNG " + path);
    }

    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y)
        rows[y] = bytes.data() + static_cast<size_t>(y) * w * c;
    png_write_image(png, rows.data());
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

// ---- PPM (binary P6) ----

int ppm_token(std::istream& in) {
    // skips whitespace and '#' comments, reads one unsigned decimal
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (std::isspace(ch)) {
            ch = in.get();
        } else {
            break;
        }
    }
    if (ch == EOF || !std::isdigit(ch)) return -1;
    int v = 0;
    while (ch != EOF && std::isdigit(ch)) {
        v = v * 10 + (ch - '0');
        if (v > 1 << 20) return -1;
        ch = in.get();
    }
    return v;
}

ImageTensor load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '6') throw IoError(path + ": not a binary PPM (P6)");

    int w = ppm_token(in), h = ppm_token(in), maxval = ppm_token(in);
    if (w <= 0 || h <= 0 || maxval <= 0) throw IoError(path + ": malformed PPM header");
    if (maxval > 255)
        throw IoError(path + ": unsupported bit depth (maxval " + std::to_string(maxval) + ")");

    // header ends with exactly one whitespace byte, already consumed by ppm_token
    std::vector<unsigned char> bytes(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw IoError(path + ": truncated PPM payload");

    ImageTensor img = from_bytes(bytes, 3, h, w);
    if (maxval != 255) {
        const float scale = 255.0f / static_cast<float>(maxval);
        for (auto& v : img.data) v = std::min(1.0f, v * scale);
    }
    return img;
}

void save_ppm(const ImageTensor& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    const int h = img.h(), w = img.w(), c = img.c();
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                row[static_cast<size_t>(x) * 3 + ch] = static_cast<unsigned char>(
                    quantize_byte(img.at(0, c == 1 ? 0 : ch, y, x)));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace

ImageTensor load_image(const std::string& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") return load_png(path);
    if (ext == ".ppm") return load_ppm(path);
    throw ValueError(path + ": unsupported format (expect .png or .ppm)");
}

void save_image(const ImageTensor& img, const std::string& path) {
    if (img.n() != 1) throw ValueError("save_image expects batch 1, got " + shape_str(img.shape));
    if (img.c() != 1 && img.c() != 3)
        throw ValueError("save_image expects 1 or 3 channels, got " + shape_str(img.shape));
    const std::string ext = lower_ext(path);
    if (ext == ".png")
        save_png(img, path);
    else if (ext == ".ppm")
        save_ppm(img, path);
    else
        throw ValueError(path + ": unsupported format (expect .png or .ppm)");
}

ImageTensor to_gray(const ImageTensor& img) {
    if (img.c() == 1) return img;
    if (img.c() != 3) throw ValueError("to_gray expects 1 or 3 channels");
    ImageTensor out(img.n(), 1, img.h(), img.w());
    for (int n = 0; n < img.n(); ++n)
        for (int y = 0; y < img.h(); ++y)
            for (int x = 0; x < img.w(); ++x)
                out.at(n, 0, y, x) = 0.299f * img.at(n, 0, y, x) + 0.587f * img.at(n, 1, y, x) +
                                     0.114f * img.at(n, 2, y, x);
    return out;
}

}  // namespace blnet::imgio

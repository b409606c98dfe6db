#pragma once

#include <string>

#include "blnet/tensor.hpp"

namespace blnet::imgio {

// Decodes an 8-bit PNG (RGB or gray, palette expanded, alpha stripped) or a
// binary PPM (P6) into a (1,c,h,w) tensor with values byte/255. Gray images
// come back single-channel, color images 3-channel. Bit depths above 8 are
// rejected.
ImageTensor load_image(const std::string& path);

// Clamps to [0,1], quantizes by round(v*255) and writes PNG or PPM depending
// on the file extension. batch must be 1 and channels 1 or 3. A 1-channel
// image saved as .ppm is written as P6 with the gray value replicated (P6 is
// the only PPM flavor we emit).
void save_image(const ImageTensor& img, const std::string& path);

// round(clamp(v)*255) as used by save_image, exposed for tests.
inline int quantize_byte(float v) {
    float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    return static_cast<int>(c * 255.f + 0.5f);
}

// 0.299 R + 0.587 G + 0.114 B. 1-channel input passes through.
ImageTensor to_gray(const ImageTensor& img);

}  // namespace blnet::imgio

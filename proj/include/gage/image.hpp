#pragma once

#include <cstdint>
#include <vector>

namespace gage {

// Plain 2D float grid (row-major); images, heatmaps, crops.
struct Image {
    int h = 0, w = 0;
    std::vector<float> v;

    Image() = default;
    Image(int h_, int w_, float fill = 0.0f) : h(h_), w(w_), v(size_t(h_) * size_t(w_), fill) {}

    float& at(int r, int c) { return v[size_t(r) * w + c]; }
    float at(int r, int c) const { return v[size_t(r) * w + c]; }
    bool empty() const { return v.empty(); }
};

// 8-bit grayscale raster as stored in PGM files.
struct ImageU8 {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    ImageU8() = default;
    ImageU8(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), v(size_t(h_) * size_t(w_), fill) {}

    uint8_t& at(int r, int c) { return v[size_t(r) * w + c]; }
    uint8_t at(int r, int c) const { return v[size_t(r) * w + c]; }

    Image to_float() const {
        Image img(h, w);
        for (size_t i = 0; i < v.size(); ++i) img.v[i] = float(v[i]);
        return img;
    }
};

}  // namespace gage

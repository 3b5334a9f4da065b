#include "gage/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "gage/errors.hpp"

namespace gage {

Image max_intensity_projection(const Tensor& feature_maps) {
    int C, h, w;
    const float* base = feature_maps.data.data();
    if (feature_maps.rank() == 3) {
        C = feature_maps.dim(0);
        h = feature_maps.dim(1);
        w = feature_maps.dim(2);
    } else if (feature_maps.rank() == 4 && feature_maps.dim(0) == 1) {
        C = feature_maps.dim(1);
        h = feature_maps.dim(2);
        w = feature_maps.dim(3);
    } else {
        throw ShapeError("max_intensity_projection expects [C,h,w] or [1,C,h,w] features");
    }
    if (C < 1) throw ShapeError("max_intensity_projection: channel axis is empty");
    Image out(h, w);
    const int64_t plane = int64_t(h) * w;
    for (int64_t i = 0; i < plane; ++i) out.v[size_t(i)] = base[i];
    for (int c = 1; c < C; ++c) {
        const float* p = base + int64_t(c) * plane;
        for (int64_t i = 0; i < plane; ++i)
            if (p[i] > out.v[size_t(i)]) out.v[size_t(i)] = p[i];
    }
    return out;
}

AttentionMap normalize_heatmap(const Image& raw, int source_stride) {
    if (raw.empty()) throw ShapeError("normalize_heatmap: empty grid");
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float x : raw.v) {
        if (std::isnan(x)) throw NumericError("normalize_heatmap: NaN in raw heatmap");
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    AttentionMap map;
    map.source_stride = source_stride;
    map.values = Image(raw.h, raw.w);
    if (hi - lo < 1e-8f) {
        map.degenerate = true;  // all zeros; caller falls back to full image
        return map;
    }
    const float inv = 1.0f / (hi - lo);
    for (size_t i = 0; i < raw.v.size(); ++i) map.values.v[i] = (raw.v[i] - lo) * inv;
    return map;
}

Mask binarize(const AttentionMap& map, float tau) {
    if (!(tau > 0.0f && tau < 1.0f))
        throw ConfigError("binarize: threshold must lie in (0,1), got " + std::to_string(tau));
    Mask m;
    m.h = map.values.h;
    m.w = map.values.w;
    m.tau = tau;
    m.bits.assign(map.values.v.size(), 0);
    for (size_t i = 0; i < m.bits.size(); ++i) {
        if (map.values.v[i] > tau) {
            m.bits[i] = 1;
            ++m.active;
        }
    }
    return m;
}

Box min_perimeter_box(const Mask& mask, float kappa) {
    if (!(kappa > 0.0f && kappa <= 1.0f))
        throw ConfigError("min_perimeter_box: coverage must lie in (0,1], got " +
                          std::to_string(kappa));
    if (mask.active == 0)
        throw NumericError("min_perimeter_box: no-activation (empty mask)");

    const int H = mask.h, W = mask.w;
    int rmin = H, rmax = -1, cmin = W, cmax = -1;
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            if (mask.bit(r, c)) {
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }

    // P[r][c] = count of active pixels in rows < r, cols < c.
    std::vector<int> P(size_t(H + 1) * (W + 1), 0);
    const auto at = [&](int r, int c) -> int& { return P[size_t(r) * (W + 1) + c]; };
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            at(r + 1, c + 1) = at(r, c + 1) + at(r + 1, c) - at(r, c) + (mask.bit(r, c) ? 1 : 0);

    const int need = int(std::ceil(double(kappa) * double(mask.active)));
    using Key = std::tuple<int, int64_t, int, int, int, int>;
    Key best{std::numeric_limits<int>::max(), 0, 0, 0, 0, 0};
    bool found = false;
    Box out;
    for (int r0 = rmin; r0 <= rmax; ++r0) {
        for (int r1 = r0; r1 <= rmax; ++r1) {
            for (int c0 = cmin; c0 <= cmax; ++c0) {
                for (int c1 = c0; c1 <= cmax; ++c1) {
                    const int cnt =
                        at(r1 + 1, c1 + 1) - at(r0, c1 + 1) - at(r1 + 1, c0) + at(r0, c0);
                    if (cnt < need) continue;
                    Box b{r0, c0, r1, c1, BoxSpace::feature};
                    Key k{b.perimeter(), b.area(), r0, c0, r1, c1};
                    if (!found || k < best) {
                        best = k;
                        out = b;
                        found = true;
                    }
                }
            }
        }
    }
    return out;
}

Box box_to_image_space(const Box& box, int stride, int image_size, int min_side) {
    const auto clamp = [&](int v) { return std::clamp(v, 0, image_size - 1); };
    Box b;
    b.space = BoxSpace::image;
    b.r0 = clamp(box.r0 * stride);
    b.c0 = clamp(box.c0 * stride);
    b.r1 = clamp((box.r1 + 1) * stride - 1);
    b.c1 = clamp((box.c1 + 1) * stride - 1);

    const auto grow = [&](int& lo, int& hi) {
        const int side = hi - lo + 1;
        if (side >= min_side) return;
        const int deficit = std::min(min_side, image_size) - side;
        lo -= deficit / 2;
        hi += deficit - deficit / 2;
        if (lo < 0) {
            hi -= lo;
            lo = 0;
        }
        if (hi > image_size - 1) {
            lo -= hi - (image_size - 1);
            hi = image_size - 1;
        }
        lo = std::max(lo, 0);
    };
    grow(b.r0, b.r1);
    grow(b.c0, b.c1);
    return b;
}

Image crop_resize(const Image& image, const Box& box, int out_size) {
    if (box.space != BoxSpace::image)
        throw ConfigError("crop_resize: box must be in image space");
    if (box.r0 < 0 || box.c0 < 0 || box.r1 >= image.h || box.c1 >= image.w || box.r0 > box.r1 ||
        box.c0 > box.c1)
        throw ShapeError("crop_resize: box exceeds image bounds");
    if (out_size < 1) throw ConfigError("crop_resize: out_size must be >= 1");

    const int bh = box.height(), bw = box.width();
    Image out(out_size, out_size);
    // align-corners spacing; a 1-wide axis collapses to its single line
    const double sy = (bh > 1 && out_size > 1) ? double(bh - 1) / double(out_size - 1) : 0.0;
    const double sx = (bw > 1 && out_size > 1) ? double(bw - 1) / double(out_size - 1) : 0.0;
    for (int i = 0; i < out_size; ++i) {
        const double y = box.r0 + i * sy;
        const int y0 = int(std::floor(y));
        const int y1 = std::min(y0 + 1, box.r1);
        const double fy = y - y0;
        for (int j = 0; j < out_size; ++j) {
            const double x = box.c0 + j * sx;
            const int x0 = int(std::floor(x));
            const int x1 = std::min(x0 + 1, box.c1);
            const double fx = x - x0;
            const double v00 = image.at(y0, x0), v01 = image.at(y0, x1);
            const double v10 = image.at(y1, x0), v11 = image.at(y1, x1);
            const double top = v00 + (v01 - v00) * fx;
            const double bot = v10 + (v11 - v10) * fx;
            out.at(i, j) = float(top + (bot - top) * fy);
        }
    }
    return out;
}

RoiResult extract_roi(const Tensor& feature_maps, const Image& image, float tau, float kappa,
                      int stride, int out_size, int min_side) {
    if (image.h != image.w) throw ShapeError("extract_roi: image must be square");
    RoiResult res;
    Image mip = max_intensity_projection(feature_maps);
    if (mip.h * stride != image.h)
        throw ShapeError("extract_roi: feature grid " + std::to_string(mip.h) + " x stride " +
                         std::to_string(stride) + " does not cover image size " +
                         std::to_string(image.h));
    res.map = normalize_heatmap(mip, stride);

    const Box full_image{0, 0, image.h - 1, image.w - 1, BoxSpace::image};
    if (res.map.degenerate) {
        res.fallback = true;
        res.feature_box = Box{0, 0, mip.h - 1, mip.w - 1, BoxSpace::feature};
        res.image_box = full_image;
        res.crop = crop_resize(image, full_image, out_size);
        return res;
    }
    Mask mask = binarize(res.map, tau);
    if (mask.active == 0) {  // unreachable for tau<1, kept for totality
        res.fallback = true;
        res.feature_box = Box{0, 0, mip.h - 1, mip.w - 1, BoxSpace::feature};
        res.image_box = full_image;
        res.crop = crop_resize(image, full_image, out_size);
        return res;
    }
    res.feature_box = min_perimeter_box(mask, kappa);
    res.image_box = box_to_image_space(res.feature_box, stride, image.h, min_side);
    res.crop = crop_resize(image, res.image_box, out_size);
    return res;
}

}  // namespace gage

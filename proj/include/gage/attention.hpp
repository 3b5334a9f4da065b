#pragma once

#include "gage/image.hpp"
#include "gage/tensor.hpp"

namespace gage {

enum class BoxSpace { feature, image };

// Axis-aligned rectangle with inclusive integer bounds.
struct Box {
    int r0 = 0, c0 = 0, r1 = 0, c1 = 0;
    BoxSpace space = BoxSpace::feature;

    int height() const { return r1 - r0 + 1; }
    int width() const { return c1 - c0 + 1; }
    int64_t area() const { return int64_t(height()) * width(); }
    int perimeter() const { return 2 * (height() + width()); }
    bool operator==(const Box& o) const {
        return r0 == o.r0 && c0 == o.c0 && r1 == o.r1 && c1 == o.c1 && space == o.space;
    }
};

// Min-max normalized heatmap at feature resolution. A constant input has no
// usable contrast; it is flagged degenerate (all zeros) and callers fall
// back to the full image.
struct AttentionMap {
    Image values;  // in [0,1] unless degenerate
    int source_stride = 1;
    bool degenerate = false;
};

struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> bits;
    float tau = 0.0f;
    int active = 0;

    bool bit(int r, int c) const { return bits[size_t(r) * w + c] != 0; }
};

// Per-pixel max across the channel axis of [C,h,w] (or [1,C,h,w]) features.
Image max_intensity_projection(const Tensor& feature_maps);

// (x-min)/(max-min); flags the degenerate case (max-min < 1e-8).
// NaN input is an error.
AttentionMap normalize_heatmap(const Image& raw, int source_stride);

// Strict '>' threshold; tau must lie in (0,1).
Mask binarize(const AttentionMap& map, float tau);

// Smallest-perimeter box covering at least ceil(kappa * active) active
// pixels. Exact search over all boxes bounded by the active-pixel extremes,
// O(1) per candidate via a 2D prefix-sum table. Ties break lexicographically
// on (perimeter, area, r0, c0, r1, c1). Empty mask is an error.
Box min_perimeter_box(const Mask& mask, float kappa);

// Feature-grid box -> pixel box: scale by stride, clamp, then grow
// symmetrically to min_side (re-clamped at borders).
Box box_to_image_space(const Box& box, int stride, int image_size, int min_side);

// Bilinear align-corners resample of the boxed region to out_size^2.
// Boxes with a side of 1 degenerate to nearest fill along that axis.
Image crop_resize(const Image& image, const Box& box, int out_size);

struct RoiResult {
    AttentionMap map;
    Box feature_box;  // valid unless fallback
    Box image_box;
    Image crop;
    bool fallback = false;  // degenerate attention -> full-image crop
};

// Full pipeline: MIP -> normalize -> binarize -> min-perimeter box ->
// image space -> crop. Total: every finite feature map yields a valid crop.
RoiResult extract_roi(const Tensor& feature_maps, const Image& image, float tau, float kappa,
                      int stride, int out_size, int min_side);

}  // namespace gage

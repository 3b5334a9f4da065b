#pragma once

#include <vector>

#include "gage/image.hpp"
#include "gage/phantom.hpp"
#include "gage/tensor.hpp"

namespace gage {

// Normalization constants computed on the train split only and carried in
// checkpoint metadata; evaluation always uses the stored values.
struct NormStats {
    double pixel_mean = 0.0;
    double pixel_std = 1.0;
    double age_mean = 0.0;
    double age_std = 1.0;
};

struct LoadedSample {
    int sample_id = 0;
    View view = View::axial;
    double age_days = 0.0;
    SplitTag split = SplitTag::train;
    Box gt_box;
    Image image;  // raw gray levels [0,255]
};

// One view's worth of a dataset, fully resident in memory.
struct ViewDataset {
    View view = View::axial;
    int input_size = 0;
    std::vector<LoadedSample> samples;  // manifest order
    std::vector<int> train_idx, val_idx, test_idx;

    const std::vector<int>& split_indices(SplitTag tag) const;
    static ViewDataset load(const Manifest& manifest, View view, int expect_size);
};

NormStats compute_norm_stats(const ViewDataset& ds);

// [B,1,S,S] batch of normalized pixels for the given sample indices.
TensorPtr make_batch(const ViewDataset& ds, const std::vector<int>& idx, const NormStats& stats);
// Same, from precomputed (already normalized) crop images.
TensorPtr make_batch(const std::vector<Image>& crops, const std::vector<int>& idx);

// z-scored ages as a [B] tensor.
TensorPtr make_age_targets(const ViewDataset& ds, const std::vector<int>& idx,
                           const NormStats& stats);

}  // namespace gage

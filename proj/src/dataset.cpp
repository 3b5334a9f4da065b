#include "gage/dataset.hpp"

#include <cmath>

#include "gage/errors.hpp"
#include "gage/pgm.hpp"

namespace gage {

const std::vector<int>& ViewDataset::split_indices(SplitTag tag) const {
    switch (tag) {
        case SplitTag::train: return train_idx;
        case SplitTag::val: return val_idx;
        default: return test_idx;
    }
}

ViewDataset ViewDataset::load(const Manifest& manifest, View view, int expect_size) {
    ViewDataset ds;
    ds.view = view;
    ds.input_size = expect_size;
    for (const Sample& s : manifest.rows) {
        if (s.view != view) continue;
        LoadedSample ls;
        ls.sample_id = s.sample_id;
        ls.view = s.view;
        ls.age_days = s.age_days;
        ls.split = s.split;
        ls.gt_box = s.gt_box;
        ImageU8 img = read_pgm(manifest.resolve(s));
        if (img.h != expect_size || img.w != expect_size)
            throw IoError("image '" + s.image_path + "' is " + std::to_string(img.w) + "x" +
                          std::to_string(img.h) + ", expected " + std::to_string(expect_size) +
                          "x" + std::to_string(expect_size));
        ls.image = img.to_float();
        const int i = int(ds.samples.size());
        switch (ls.split) {
            case SplitTag::train: ds.train_idx.push_back(i); break;
            case SplitTag::val: ds.val_idx.push_back(i); break;
            case SplitTag::test: ds.test_idx.push_back(i); break;
        }
        ds.samples.push_back(std::move(ls));
    }
    if (ds.samples.empty())
        throw IoError("manifest has no rows for view " + to_string(view));
    return ds;
}

NormStats compute_norm_stats(const ViewDataset& ds) {
    if (ds.train_idx.empty()) throw NumericError("compute_norm_stats: empty train split");
    NormStats st;
    double psum = 0.0, pcount = 0.0;
    for (int i : ds.train_idx) {
        for (float v : ds.samples[size_t(i)].image.v) psum += v;
        pcount += double(ds.samples[size_t(i)].image.v.size());
    }
    st.pixel_mean = psum / pcount;
    double pvar = 0.0;
    for (int i : ds.train_idx)
        for (float v : ds.samples[size_t(i)].image.v)
            pvar += (v - st.pixel_mean) * (v - st.pixel_mean);
    st.pixel_std = std::sqrt(pvar / pcount);

    double asum = 0.0;
    for (int i : ds.train_idx) asum += ds.samples[size_t(i)].age_days;
    st.age_mean = asum / double(ds.train_idx.size());
    double avar = 0.0;
    for (int i : ds.train_idx) {
        const double d = ds.samples[size_t(i)].age_days - st.age_mean;
        avar += d * d;
    }
    st.age_std = std::sqrt(avar / double(ds.train_idx.size()));
    if (st.pixel_std <= 0 || st.age_std <= 0)
        throw NumericError("compute_norm_stats: zero variance in train split");
    return st;
}

TensorPtr make_batch(const ViewDataset& ds, const std::vector<int>& idx, const NormStats& stats) {
    if (idx.empty()) throw ShapeError("make_batch: empty index list");
    const int S = ds.input_size;
    auto x = Tensor::zeros({int(idx.size()), 1, S, S});
    const float mean = float(stats.pixel_mean);
    const float inv = float(1.0 / stats.pixel_std);
    for (size_t b = 0; b < idx.size(); ++b) {
        const Image& img = ds.samples[size_t(idx[b])].image;
        float* dst = x->data.data() + b * size_t(S) * S;
        for (size_t i = 0; i < img.v.size(); ++i) dst[i] = (img.v[i] - mean) * inv;
    }
    return x;
}

TensorPtr make_batch(const std::vector<Image>& crops, const std::vector<int>& idx) {
    if (idx.empty()) throw ShapeError("make_batch: empty index list");
    const int S = crops.at(size_t(idx[0])).h;
    auto x = Tensor::zeros({int(idx.size()), 1, S, S});
    for (size_t b = 0; b < idx.size(); ++b) {
        const Image& img = crops[size_t(idx[b])];
        float* dst = x->data.data() + b * size_t(S) * S;
        for (size_t i = 0; i < img.v.size(); ++i) dst[i] = img.v[i];
    }
    return x;
}

TensorPtr make_age_targets(const ViewDataset& ds, const std::vector<int>& idx,
                           const NormStats& stats) {
    auto t = Tensor::zeros({int(idx.size())});
    for (size_t b = 0; b < idx.size(); ++b)
        t->data[b] = float((ds.samples[size_t(idx[b])].age_days - stats.age_mean) / stats.age_std);
    return t;
}

}  // namespace gage

#include "gage/branches.hpp"

#include <cmath>
#include <cstdio>

#include "gage/ops.hpp"
#include "gage/rng.hpp"

namespace gage {

std::string to_string(BranchMode m) {
    switch (m) {
        case BranchMode::global: return "global";
        case BranchMode::local: return "local";
        case BranchMode::average: return "average";
        default: return "fusion";
    }
}

BranchMode branch_from_string(const std::string& s) {
    if (s == "global") return BranchMode::global;
    if (s == "local") return BranchMode::local;
    if (s == "average") return BranchMode::average;
    if (s == "fusion") return BranchMode::fusion;
    throw ConfigError("unknown branch '" + s + "' (expected global, local, average or fusion)");
}

std::string to_string(MultiViewMode m) {
    return m == MultiViewMode::average ? "average" : "fusion";
}

MultiViewMode multiview_from_string(const std::string& s) {
    if (s == "average") return MultiViewMode::average;
    if (s == "fusion") return MultiViewMode::fusion;
    throw ConfigError("unknown multi-view mode '" + s + "' (expected average or fusion)");
}

const LinearHead& ViewModel::head_for(BranchMode mode) const {
    switch (mode) {
        case BranchMode::global: return global_head;
        case BranchMode::local: return local_head;
        case BranchMode::average: return average_head;
        default: return fusion_head;
    }
}

namespace {

// Sub-stream tags for deterministic per-component init seeds.
constexpr uint64_t kGlobalNetStream = 10;
constexpr uint64_t kLocalNetStream = 11;

float default_tau(Variant v) { return v == Variant::resnet18 ? 0.3f : 0.4f; }

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

ViewModel make_view_model(const Profile& profile, Variant variant, View view, float tau,
                          float kappa, uint64_t seed) {
    ViewModel vm;
    vm.view = view;
    vm.profile = profile;
    vm.variant = variant;
    vm.tau = tau > 0 ? tau : default_tau(variant);
    vm.kappa = kappa;
    vm.seed = seed;
    if (!(vm.tau > 0.0f && vm.tau < 1.0f))
        throw ConfigError("tau must lie in (0,1), got " + std::to_string(vm.tau));
    if (!(vm.kappa > 0.0f && vm.kappa <= 1.0f))
        throw ConfigError("kappa must lie in (0,1], got " + std::to_string(vm.kappa));
    vm.global_net = std::make_unique<Backbone>(profile.backbone_config(variant),
                                               stream_seed(seed, 0, kGlobalNetStream));
    vm.global_head = LinearHead::make(vm.global_net->feature_dim());
    return vm;
}

Checkpoint view_model_to_checkpoint(const ViewModel& vm, BranchMode branch) {
    Checkpoint ck;
    ck.set_meta("profile", vm.profile.name);
    ck.set_meta("variant", to_string(vm.variant));
    ck.set_meta("view", to_string(vm.view));
    ck.set_meta("branch", to_string(branch));
    ck.set_meta("tau", fmt_double(double(vm.tau)));
    ck.set_meta("kappa", fmt_double(double(vm.kappa)));
    ck.set_meta("pixel_mean", fmt_double(vm.stats.pixel_mean));
    ck.set_meta("pixel_std", fmt_double(vm.stats.pixel_std));
    ck.set_meta("age_mean", fmt_double(vm.stats.age_mean));
    ck.set_meta("age_std", fmt_double(vm.stats.age_std));
    ck.set_meta("seed", std::to_string(vm.seed));

    for (const auto& p : vm.global_net->params()) ck.add("global." + p.name, p.tensor);
    ck.add("ghead.w", vm.global_head.w);
    ck.add("ghead.b", vm.global_head.b);
    if (vm.local_net) {
        for (const auto& p : vm.local_net->params()) ck.add("local." + p.name, p.tensor);
        ck.add("lhead.w", vm.local_head.w);
        ck.add("lhead.b", vm.local_head.b);
    }
    if (vm.average_head.valid()) {
        ck.add("ahead.w", vm.average_head.w);
        ck.add("ahead.b", vm.average_head.b);
    }
    if (vm.fusion_head.valid()) {
        ck.add("fhead.w", vm.fusion_head.w);
        ck.add("fhead.b", vm.fusion_head.b);
    }
    return ck;
}

namespace {

void load_backbone(Backbone& net, const Checkpoint& ck, const std::string& prefix) {
    for (auto& p : net.params()) {
        const TensorPtr src = ck.find(prefix + p.name);
        if (!src)
            throw IoError("checkpoint is missing tensor '" + prefix + p.name + "'");
        if (src->dims != p.tensor->dims)
            throw IoError("checkpoint tensor '" + prefix + p.name + "' has mismatched shape");
        p.tensor->data = src->data;
    }
}

LinearHead load_head(const Checkpoint& ck, const std::string& prefix) {
    const TensorPtr w = ck.find(prefix + ".w");
    const TensorPtr b = ck.find(prefix + ".b");
    if (!w || !b) throw IoError("checkpoint is missing head '" + prefix + "'");
    LinearHead h = LinearHead::make(w->dim(1));
    h.w->data = w->data;
    h.b->data = b->data;
    return h;
}

}  // namespace

ViewModel view_model_from_checkpoint(const Checkpoint& ck) {
    const Profile& profile = Profile::by_name(ck.meta_value("profile"));
    const Variant variant = variant_from_string(ck.meta_value("variant"));
    const View view = view_from_string(ck.meta_value("view"));
    const float tau = float(std::stod(ck.meta_value("tau")));
    const float kappa = float(std::stod(ck.meta_value("kappa")));
    const uint64_t seed = std::stoull(ck.meta_value("seed"));

    ViewModel vm = make_view_model(profile, variant, view, tau, kappa, seed);
    vm.stats.pixel_mean = std::stod(ck.meta_value("pixel_mean"));
    vm.stats.pixel_std = std::stod(ck.meta_value("pixel_std"));
    vm.stats.age_mean = std::stod(ck.meta_value("age_mean"));
    vm.stats.age_std = std::stod(ck.meta_value("age_std"));

    load_backbone(*vm.global_net, ck, "global.");
    vm.global_head = load_head(ck, "ghead");
    if (ck.find("local.stem.conv.w")) {
        vm.local_net = std::make_unique<Backbone>(profile.backbone_config(variant),
                                                  stream_seed(seed, 0, kLocalNetStream));
        load_backbone(*vm.local_net, ck, "local.");
        vm.local_head = load_head(ck, "lhead");
    }
    if (ck.find("ahead.w")) vm.average_head = load_head(ck, "ahead");
    if (ck.find("fhead.w")) vm.fusion_head = load_head(ck, "fhead");
    return vm;
}

GlobalOut global_forward(ViewModel& vm, const TensorPtr& batch, bool training) {
    Backbone::Features f = vm.global_net->forward(batch, training);
    GlobalOut out;
    out.feat_maps = f.maps;
    out.feat_vec = f.vec;
    out.y = vm.global_head.forward(f.vec);
    return out;
}

namespace {

// Slice one sample's feature maps / pixels out of a batch tensor.
TensorPtr slice_maps(const TensorPtr& maps, int n) {
    const int C = maps->dim(1), h = maps->dim(2), w = maps->dim(3);
    auto t = Tensor::zeros({C, h, w});
    const float* src = maps->data.data() + size_t(n) * size_t(C) * h * w;
    std::copy(src, src + size_t(C) * h * w, t->data.begin());
    return t;
}

Image slice_image(const TensorPtr& batch, int n) {
    const int S = batch->dim(2);
    Image img(S, S);
    const float* src = batch->data.data() + size_t(n) * size_t(S) * S;
    std::copy(src, src + size_t(S) * S, img.v.begin());
    return img;
}

}  // namespace

LocalOut local_forward(ViewModel& vm, const TensorPtr& batch, const TensorPtr& feature_maps,
                       bool training) {
    if (!vm.local_net) throw ConfigError("local branch has not been trained for this model");
    const int N = batch->dim(0);
    const int S = vm.profile.input_size;
    const int stride = vm.profile.overall_stride();

    auto crops = Tensor::zeros({N, 1, S, S});
    LocalOut out;
    out.boxes.resize(size_t(N));
    out.fallback.resize(size_t(N));
    for (int n = 0; n < N; ++n) {
        // the crop is data, not graph: detach by working on raw buffers
        TensorPtr maps = slice_maps(feature_maps, n);
        Image img = slice_image(batch, n);
        RoiResult roi =
            extract_roi(*maps, img, vm.tau, vm.kappa, stride, S, vm.profile.min_box_side);
        out.boxes[size_t(n)] = roi.image_box;
        out.fallback[size_t(n)] = roi.fallback ? 1 : 0;
        std::copy(roi.crop.v.begin(), roi.crop.v.end(),
                  crops->data.begin() + size_t(n) * size_t(S) * S);
    }
    Backbone::Features f = vm.local_net->forward(crops, training);
    out.feat_vec = f.vec;
    out.y = vm.local_head.forward(f.vec);
    return out;
}

TensorPtr combine_branch(const ViewModel& vm, BranchMode mode, const TensorPtr& f_g,
                         const TensorPtr& f_l) {
    switch (mode) {
        case BranchMode::global:
            return vm.global_head.forward(f_g);
        case BranchMode::local:
            return vm.local_head.forward(f_l);
        case BranchMode::average:
            return vm.average_head.forward(scale(add(f_g, f_l), 0.5f));
        default:
            return vm.fusion_head.forward(concat_cols(f_g, f_l));
    }
}

TensorPtr multiview_average(const std::array<TensorPtr, 3>& per_view_pred) {
    for (const auto& p : per_view_pred)
        if (!p) throw ConfigError("multi-view combination requires all three views");
    return scale(add(add(per_view_pred[0], per_view_pred[1]), per_view_pred[2]),
                 1.0f / 3.0f);
}

TensorPtr multiview_fusion(const std::array<TensorPtr, 3>& per_view_feat, const LinearHead& head) {
    for (const auto& f : per_view_feat)
        if (!f) throw ConfigError("multi-view combination requires all three views");
    return head.forward(concat_cols(concat_cols(per_view_feat[0], per_view_feat[1]),
                                    per_view_feat[2]));
}

CropSet compute_crops(ViewModel& vm, const ViewDataset& ds) {
    NoGradGuard ng;
    const int n = int(ds.samples.size());
    CropSet cs;
    cs.crops.resize(size_t(n));
    cs.boxes.resize(size_t(n));
    cs.fallback.resize(size_t(n));
    constexpr int kChunk = 32;
    for (int start = 0; start < n; start += kChunk) {
        std::vector<int> idx;
        for (int i = start; i < std::min(start + kChunk, n); ++i) idx.push_back(i);
        TensorPtr batch = make_batch(ds, idx, vm.stats);
        Backbone::Features f = vm.global_net->forward(batch, false);
        for (size_t b = 0; b < idx.size(); ++b) {
            TensorPtr maps = slice_maps(f.maps, int(b));
            Image img = slice_image(batch, int(b));
            RoiResult roi = extract_roi(*maps, img, vm.tau, vm.kappa, vm.profile.overall_stride(),
                                        vm.profile.input_size, vm.profile.min_box_side);
            const size_t at = size_t(idx[b]);
            cs.crops[at] = std::move(roi.crop);
            cs.boxes[at] = roi.image_box;
            cs.fallback[at] = roi.fallback ? 1 : 0;
        }
    }
    return cs;
}

}  // namespace gage

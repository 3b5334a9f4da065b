#pragma once

#include <array>
#include <memory>
#include <string>

#include "gage/attention.hpp"
#include "gage/backbone.hpp"
#include "gage/checkpoint.hpp"
#include "gage/dataset.hpp"

namespace gage {

enum class BranchMode { global, local, average, fusion };
enum class MultiViewMode { average, fusion };

std::string to_string(BranchMode m);
BranchMode branch_from_string(const std::string& s);
std::string to_string(MultiViewMode m);
MultiViewMode multiview_from_string(const std::string& s);

// One orientation's model: global backbone (attention source), optional
// attention-cropped local backbone, and the per-branch regression heads.
// Heads appear as the corresponding training stage completes.
struct ViewModel {
    View view = View::axial;
    Profile profile = Profile::desk();
    Variant variant = Variant::resnet18;
    float tau = 0.3f;
    float kappa = 0.95f;
    uint64_t seed = 0;
    NormStats stats;

    std::unique_ptr<Backbone> global_net;
    LinearHead global_head;
    std::unique_ptr<Backbone> local_net;
    LinearHead local_head;
    LinearHead average_head;
    LinearHead fusion_head;

    int feature_dim() const { return global_net ? global_net->feature_dim() : 0; }
    bool has_local() const { return local_net != nullptr; }
    const LinearHead& head_for(BranchMode mode) const;
};

ViewModel make_view_model(const Profile& profile, Variant variant, View view, float tau,
                          float kappa, uint64_t seed);

// Checkpoint round-trip for a view model (tensor names are prefixed
// global./local./ghead./lhead./ahead./fhead.).
Checkpoint view_model_to_checkpoint(const ViewModel& vm, BranchMode branch);
ViewModel view_model_from_checkpoint(const Checkpoint& ck);

struct GlobalOut {
    TensorPtr y;         // [N] prediction, z-scored age units
    TensorPtr feat_vec;  // [N,D]
    TensorPtr feat_maps; // [N,D,g,g]
};
// Mode 1: full image through the global backbone and its head.
GlobalOut global_forward(ViewModel& vm, const TensorPtr& batch, bool training);

struct LocalOut {
    TensorPtr y;
    TensorPtr feat_vec;
    std::vector<Box> boxes;        // image-space crop boxes, one per sample
    std::vector<uint8_t> fallback; // 1 where attention degenerated to full image
};
// Mode 2: attention crop of each (already normalized) input, then the local
// backbone. The crop is a constant input: no gradient flows into the box.
LocalOut local_forward(ViewModel& vm, const TensorPtr& batch, const TensorPtr& feature_maps,
                       bool training);

// Modes 1-4 on precomputed feature vectors.
TensorPtr combine_branch(const ViewModel& vm, BranchMode mode, const TensorPtr& f_g,
                         const TensorPtr& f_l);

// Multi-view average of three per-view scalar predictions.
TensorPtr multiview_average(const std::array<TensorPtr, 3>& per_view_pred);
// Multi-view fusion: concatenated per-view features through a linear head.
TensorPtr multiview_fusion(const std::array<TensorPtr, 3>& per_view_feat, const LinearHead& head);

// Per-sample attention crops from a frozen global backbone (inference mode).
struct CropSet {
    std::vector<Image> crops;      // normalized pixel space, local input size
    std::vector<Box> boxes;        // image space
    std::vector<uint8_t> fallback;
};
CropSet compute_crops(ViewModel& vm, const ViewDataset& ds);

}  // namespace gage

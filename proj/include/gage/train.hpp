#pragma once

#include <array>
#include <string>
#include <vector>

#include "gage/branches.hpp"

namespace gage {

enum class Stage { global, local, combine, multiview };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct TrainConfig {
    std::string profile = "desk";
    Variant variant = Variant::resnet18;
    View view = View::axial;
    BranchMode branch = BranchMode::fusion;  // head trained by the combine stage
    double tau = -1.0;                       // <=0 resolves to 0.3 (resnet18) / 0.4 (resnet50)
    double kappa = 0.95;
    int epochs = 20;
    int batch_size = 16;
    double lr = 1e-3;
    uint64_t seed = 7;
    std::string data_dir;
    bool quiet = false;

    float resolved_tau() const;
    const Profile& get_profile() const { return Profile::by_name(profile); }
    void validate() const;
};

struct StageResult {
    double best_val_r2 = 0.0;
    int best_epoch = 0;
};

// Staged training; each stage freezes everything trained before it and keeps
// the epoch with the best validation R². The caller persists the model.
StageResult train_global_stage(ViewModel& vm, const ViewDataset& ds, const TrainConfig& cfg);
StageResult train_local_stage(ViewModel& vm, const ViewDataset& ds, const TrainConfig& cfg);
StageResult train_combine_stage(ViewModel& vm, const ViewDataset& ds, const TrainConfig& cfg);
StageResult train_multiview_stage(LinearHead& mv_head, const std::array<ViewModel*, 3>& vms,
                                  const std::array<const ViewDataset*, 3>& ds, BranchMode row,
                                  const TrainConfig& cfg);

struct EvalReport {
    double r2 = 0.0;
    double mae_days = 0.0;
    double mean_iou = -1.0;  // < 0 when attention is not part of the evaluated path
    std::vector<double> age_true, age_pred;  // days
    std::string csv() const;                 // "age_true,age_pred" rows, %.6f
};

EvalReport evaluate_view(ViewModel& vm, const ViewDataset& ds, SplitTag split, BranchMode mode);
EvalReport evaluate_multiview(const std::array<ViewModel*, 3>& vms,
                              const std::array<const ViewDataset*, 3>& ds, SplitTag split,
                              MultiViewMode mode, BranchMode row, const LinearHead* mv_head);

// Mean image-space crop area over a split, from the frozen global stage.
double mean_crop_area(ViewModel& vm, const ViewDataset& ds, SplitTag split);

struct SweepPoint {
    double tau = 0.0;
    double r2_test = 0.0;
    double mean_crop_area_test = 0.0;
};

// Retrains the local stage per threshold from the same frozen global model
// and scores each on the test split. Points come back sorted by tau.
std::vector<SweepPoint> threshold_sweep(const Checkpoint& global_ckpt, const ViewDataset& ds,
                                        std::vector<double> taus, const TrainConfig& cfg);

}  // namespace gage

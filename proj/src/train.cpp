#include "gage/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>

#include "gage/adam.hpp"
#include "gage/metrics.hpp"
#include "gage/ops.hpp"
#include "gage/rng.hpp"

namespace gage {

std::string to_string(Stage s) {
    switch (s) {
        case Stage::global: return "global";
        case Stage::local: return "local";
        case Stage::combine: return "combine";
        default: return "multiview";
    }
}

Stage stage_from_string(const std::string& s) {
    if (s == "global") return Stage::global;
    if (s == "local") return Stage::local;
    if (s == "combine") return Stage::combine;
    if (s == "multiview") return Stage::multiview;
    throw ConfigError("unknown stage '" + s + "'");
}

float TrainConfig::resolved_tau() const {
    if (tau > 0.0) return float(tau);
    return variant == Variant::resnet18 ? 0.3f : 0.4f;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch size must be >= 2 (batch-norm train mode)");
    const float t = resolved_tau();
    if (!(t > 0.0f && t < 1.0f)) throw ConfigError("tau must lie in (0,1)");
    if (!(kappa > 0.0 && kappa <= 1.0)) throw ConfigError("kappa must lie in (0,1]");
}

namespace {

constexpr uint64_t kShuffleStream = 20;

void log_line(const TrainConfig& cfg, const char* fmt, ...) {
    if (cfg.quiet) return;
    va_list ap;
    va_start(ap, fmt);
    std::vprintf(fmt, ap);
    va_end(ap);
    std::printf("\n");
    std::fflush(stdout);
}

std::vector<std::vector<int>> make_batches(std::vector<int> idx, int batch_size, SplitMix64& rng) {
    for (size_t i = idx.size(); i > 1; --i) {
        const size_t j = size_t(rng.uniform_int(0, int(i - 1)));
        std::swap(idx[i - 1], idx[j]);
    }
    std::vector<std::vector<int>> batches;
    for (size_t start = 0; start < idx.size(); start += size_t(batch_size)) {
        const size_t end = std::min(start + size_t(batch_size), idx.size());
        if (end - start < 2) continue;  // batch-norm needs >= 2 rows in train mode
        batches.emplace_back(idx.begin() + long(start), idx.begin() + long(end));
    }
    return batches;
}

// Deep copy of every tensor that a stage may mutate (trainable parameters
// and batch-norm running stats), for best-epoch snapshots.
struct Snapshot {
    std::vector<Buf<float>> blobs;
    std::vector<TensorPtr> owners;

    void capture(const std::vector<TensorPtr>& tensors) {
        owners = tensors;
        blobs.clear();
        for (const auto& t : tensors) blobs.push_back(t->data);
    }
    void restore() const {
        for (size_t i = 0; i < owners.size(); ++i) owners[i]->data = blobs[i];
    }
};

std::vector<TensorPtr> stage_tensors(Backbone& net, LinearHead& head) {
    std::vector<TensorPtr> out;
    for (const auto& p : net.params()) out.push_back(p.tensor);  // includes running stats
    out.push_back(head.w);
    out.push_back(head.b);
    return out;
}

// Shared epoch loop: batches from a builder, Adam over the given parameters,
// best-validation-R2 snapshot kept and restored at the end.
StageResult run_training(const TrainConfig& cfg, const char* tag,
                         const std::vector<int>& train_idx,
                         const std::vector<TensorPtr>& trainable,
                         const std::vector<TensorPtr>& snapshot_set,
                         const std::function<TensorPtr(const std::vector<int>&)>& forward_loss,
                         const std::function<double()>& val_score) {
    Adam<float> opt(trainable, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
    Snapshot best;
    best.capture(snapshot_set);
    StageResult res;
    res.best_val_r2 = -std::numeric_limits<double>::infinity();

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        SplitMix64 shuffle(stream_seed(cfg.seed, uint64_t(epoch), kShuffleStream));
        double epoch_loss = 0.0;
        int batches = 0;
        for (const auto& batch : make_batches(train_idx, cfg.batch_size, shuffle)) {
            TensorPtr loss = forward_loss(batch);
            if (!std::isfinite(loss->data[0]))
                throw NumericError(std::string(tag) + ": non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch " + std::to_string(batches) +
                                   " (lr=" + std::to_string(cfg.lr) + ")");
            epoch_loss += double(loss->data[0]);
            ++batches;
            backward(loss);
            opt.step();
            opt.zero_grad();
        }
        const double val_r2 = val_score();
        if (val_r2 > res.best_val_r2) {
            res.best_val_r2 = val_r2;
            res.best_epoch = epoch;
            best.capture(snapshot_set);
        }
        log_line(cfg, "[%s] epoch %d/%d  train_loss=%.4f  val_r2=%.4f%s", tag, epoch, cfg.epochs,
                 batches ? epoch_loss / batches : 0.0, val_r2,
                 epoch == res.best_epoch ? "  (best)" : "");
    }
    best.restore();
    return res;
}

template <class VecA, class VecB>
double val_r2_z(const VecA& pred_z, const VecB& true_z) {
    // R2 is invariant to the shared affine de-normalization, so z-space
    // scoring matches day-space scoring exactly.
    std::vector<double> t(true_z.begin(), true_z.end()), p(pred_z.begin(), pred_z.end());
    return r2_score(t, p);
}

constexpr uint64_t kLocalNetStream = 11;

}  // namespace

StageResult train_global_stage(ViewModel& vm, const ViewDataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (!vm.global_net) throw ConfigError("view model has no global backbone");
    vm.stats = compute_norm_stats(ds);

    std::vector<TensorPtr> trainable = vm.global_net->trainable();
    trainable.push_back(vm.global_head.w);
    trainable.push_back(vm.global_head.b);

    auto forward_loss = [&](const std::vector<int>& batch) {
        TensorPtr x = make_batch(ds, batch, vm.stats);
        TensorPtr z = make_age_targets(ds, batch, vm.stats);
        GlobalOut out = global_forward(vm, x, true);
        return mse_loss(out.y, z);
    };
    auto val_score = [&]() {
        NoGradGuard ng;
        std::vector<float> pred, truth;
        constexpr int kChunk = 32;
        const auto& idx = ds.val_idx;
        for (size_t s = 0; s < idx.size(); s += kChunk) {
            std::vector<int> chunk(idx.begin() + long(s),
                                   idx.begin() + long(std::min(s + kChunk, idx.size())));
            TensorPtr x = make_batch(ds, chunk, vm.stats);
            GlobalOut out = global_forward(vm, x, false);
            for (float v : out.y->data) pred.push_back(v);
            for (float v : make_age_targets(ds, chunk, vm.stats)->data) truth.push_back(v);
        }
        return val_r2_z(pred, truth);
    };

    return run_training(cfg, ("global/" + to_string(vm.view)).c_str(), ds.train_idx, trainable,
                        stage_tensors(*vm.global_net, vm.global_head), forward_loss, val_score);
}

StageResult train_local_stage(ViewModel& vm, const ViewDataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (!vm.global_net) throw ConfigError("local stage requires a trained global checkpoint");
    vm.tau = cfg.resolved_tau();
    vm.kappa = float(cfg.kappa);

    // The global branch is frozen; crops depend only on it and tau/kappa,
    // so compute them once up front.
    CropSet crops = compute_crops(vm, ds);

    vm.local_net = std::make_unique<Backbone>(vm.profile.backbone_config(vm.variant),
                                              stream_seed(cfg.seed, 0, kLocalNetStream));
    vm.local_head = LinearHead::make(vm.local_net->feature_dim());

    std::vector<TensorPtr> trainable = vm.local_net->trainable();
    trainable.push_back(vm.local_head.w);
    trainable.push_back(vm.local_head.b);

    auto forward_loss = [&](const std::vector<int>& batch) {
        TensorPtr x = make_batch(crops.crops, batch);
        TensorPtr z = make_age_targets(ds, batch, vm.stats);
        Backbone::Features f = vm.local_net->forward(x, true);
        return mse_loss(vm.local_head.forward(f.vec), z);
    };
    auto val_score = [&]() {
        NoGradGuard ng;
        std::vector<float> pred, truth;
        constexpr int kChunk = 32;
        const auto& idx = ds.val_idx;
        for (size_t s = 0; s < idx.size(); s += kChunk) {
            std::vector<int> chunk(idx.begin() + long(s),
                                   idx.begin() + long(std::min(s + kChunk, idx.size())));
            TensorPtr x = make_batch(crops.crops, chunk);
            Backbone::Features f = vm.local_net->forward(x, false);
            for (float v : vm.local_head.forward(f.vec)->data) pred.push_back(v);
            for (float v : make_age_targets(ds, chunk, vm.stats)->data) truth.push_back(v);
        }
        return val_r2_z(pred, truth);
    };

    return run_training(cfg, ("local/" + to_string(vm.view)).c_str(), ds.train_idx, trainable,
                        stage_tensors(*vm.local_net, vm.local_head), forward_loss, val_score);
}

namespace {

// Cached per-sample feature vectors from the frozen backbones.
struct FeatureCache {
    int dim = 0;
    std::vector<std::vector<float>> rows;  // indexed like ds.samples
};

FeatureCache cache_features(ViewModel& vm, const ViewDataset& ds, bool local) {
    NoGradGuard ng;
    FeatureCache fc;
    fc.rows.resize(ds.samples.size());
    CropSet crops;
    if (local) crops = compute_crops(vm, ds);
    constexpr int kChunk = 32;
    for (size_t s = 0; s < ds.samples.size(); s += kChunk) {
        std::vector<int> chunk;
        for (size_t i = s; i < std::min(s + kChunk, ds.samples.size()); ++i)
            chunk.push_back(int(i));
        TensorPtr x = local ? make_batch(crops.crops, chunk) : make_batch(ds, chunk, vm.stats);
        Backbone& net = local ? *vm.local_net : *vm.global_net;
        Backbone::Features f = net.forward(x, false);
        fc.dim = f.vec->dim(1);
        for (size_t b = 0; b < chunk.size(); ++b) {
            const float* row = f.vec->data.data() + b * size_t(fc.dim);
            fc.rows[size_t(chunk[b])].assign(row, row + fc.dim);
        }
    }
    return fc;
}

TensorPtr gather_rows(const std::vector<std::vector<float>>& rows, const std::vector<int>& idx,
                      int dim) {
    auto t = Tensor::zeros({int(idx.size()), dim});
    for (size_t b = 0; b < idx.size(); ++b)
        std::copy(rows[size_t(idx[b])].begin(), rows[size_t(idx[b])].end(),
                  t->data.begin() + b * size_t(dim));
    return t;
}

// Head-only training on a fixed design matrix (frozen backbones).
StageResult train_head(LinearHead& head, const std::vector<std::vector<float>>& feat,
                       const std::vector<float>& z_target, const std::vector<int>& train_idx,
                       const std::vector<int>& val_idx, const TrainConfig& cfg, const char* tag) {
    const int dim = head.in_dim();
    auto targets_of = [&](const std::vector<int>& idx) {
        auto t = Tensor::zeros({int(idx.size())});
        for (size_t b = 0; b < idx.size(); ++b) t->data[b] = z_target[size_t(idx[b])];
        return t;
    };
    auto forward_loss = [&](const std::vector<int>& batch) {
        return mse_loss(head.forward(gather_rows(feat, batch, dim)), targets_of(batch));
    };
    auto val_score = [&]() {
        NoGradGuard ng;
        TensorPtr y = head.forward(gather_rows(feat, val_idx, dim));
        std::vector<float> truth;
        for (int i : val_idx) truth.push_back(z_target[size_t(i)]);
        return val_r2_z(y->data, truth);
    };
    return run_training(cfg, tag, train_idx, {head.w, head.b}, {head.w, head.b}, forward_loss,
                        val_score);
}

}  // namespace

StageResult train_combine_stage(ViewModel& vm, const ViewDataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.branch != BranchMode::average && cfg.branch != BranchMode::fusion)
        throw ConfigError("combine stage trains the average or fusion head");
    if (!vm.global_net || !vm.local_net)
        throw ConfigError("combine stage requires a checkpoint with global and local branches");

    FeatureCache fg = cache_features(vm, ds, false);
    FeatureCache fl = cache_features(vm, ds, true);
    const int D = fg.dim;

    std::vector<std::vector<float>> feat(ds.samples.size());
    for (size_t i = 0; i < ds.samples.size(); ++i) {
        if (cfg.branch == BranchMode::average) {
            feat[i].resize(size_t(D));
            for (int j = 0; j < D; ++j) feat[i][size_t(j)] = 0.5f * (fg.rows[i][size_t(j)] +
                                                                     fl.rows[i][size_t(j)]);
        } else {
            feat[i] = fg.rows[i];
            feat[i].insert(feat[i].end(), fl.rows[i].begin(), fl.rows[i].end());
        }
    }
    std::vector<float> z(ds.samples.size());
    for (size_t i = 0; i < z.size(); ++i)
        z[i] = float((ds.samples[i].age_days - vm.stats.age_mean) / vm.stats.age_std);

    LinearHead head = LinearHead::make(cfg.branch == BranchMode::average ? D : 2 * D);
    StageResult res = train_head(head, feat, z, ds.train_idx, ds.val_idx, cfg,
                                 ("combine/" + to_string(cfg.branch)).c_str());
    if (cfg.branch == BranchMode::average)
        vm.average_head = head;
    else
        vm.fusion_head = head;
    return res;
}

namespace {

// Subject-aligned row features for the multi-view stage/eval.
struct MultiViewFeatures {
    std::vector<int> subjects;                  // sorted subject ids
    std::vector<std::vector<float>> rows;       // concatenated 3-view features
    std::vector<float> z_target;                // z-scored with vms[0] stats
    std::vector<int> train_idx, val_idx, test_idx;
    int dim = 0;
};

int branch_feature_dim(const ViewModel& vm, BranchMode row) {
    return row == BranchMode::fusion ? 2 * vm.feature_dim() : vm.feature_dim();
}

std::vector<float> row_feature(const std::vector<float>& g, const std::vector<float>& l,
                               BranchMode row) {
    switch (row) {
        case BranchMode::global: return g;
        case BranchMode::local: return l;
        case BranchMode::average: {
            std::vector<float> out(g.size());
            for (size_t i = 0; i < g.size(); ++i) out[i] = 0.5f * (g[i] + l[i]);
            return out;
        }
        default: {
            std::vector<float> out = g;
            out.insert(out.end(), l.begin(), l.end());
            return out;
        }
    }
}

MultiViewFeatures cache_multiview(const std::array<ViewModel*, 3>& vms,
                                  const std::array<const ViewDataset*, 3>& ds, BranchMode row) {
    const bool needs_local = row != BranchMode::global;
    std::array<FeatureCache, 3> fg, fl;
    for (int v = 0; v < 3; ++v) {
        if (!vms[size_t(v)]) throw ConfigError("multi-view combination requires all three views");
        if (needs_local && !vms[size_t(v)]->local_net)
            throw ConfigError("multi-view row '" + to_string(row) +
                              "' requires local branches in all view checkpoints");
        fg[size_t(v)] = cache_features(*vms[size_t(v)], *ds[size_t(v)], false);
        if (needs_local) fl[size_t(v)] = cache_features(*vms[size_t(v)], *ds[size_t(v)], true);
    }

    MultiViewFeatures mv;
    // Align by subject id; every subject must appear in all three views.
    std::array<std::vector<std::pair<int, int>>, 3> by_subject;  // (subject, row index)
    for (int v = 0; v < 3; ++v) {
        for (size_t i = 0; i < ds[size_t(v)]->samples.size(); ++i)
            by_subject[size_t(v)].push_back({ds[size_t(v)]->samples[i].sample_id, int(i)});
        std::sort(by_subject[size_t(v)].begin(), by_subject[size_t(v)].end());
    }
    for (size_t k = 0; k < by_subject[0].size(); ++k) {
        const int subject = by_subject[0][k].first;
        for (int v = 1; v < 3; ++v)
            if (k >= by_subject[size_t(v)].size() || by_subject[size_t(v)][k].first != subject)
                throw ConfigError("subject " + std::to_string(subject) +
                                  " is missing from view " + to_string(ds[size_t(v)]->view));
        std::vector<float> row_feat;
        for (int v = 0; v < 3; ++v) {
            const int i = by_subject[size_t(v)][k].second;
            const auto g = fg[size_t(v)].rows[size_t(i)];
            const auto l = needs_local ? fl[size_t(v)].rows[size_t(i)] : std::vector<float>{};
            auto rf = row_feature(g, l, row);
            row_feat.insert(row_feat.end(), rf.begin(), rf.end());
        }
        const LoadedSample& s0 = ds[0]->samples[size_t(by_subject[0][k].second)];
        mv.subjects.push_back(subject);
        mv.rows.push_back(std::move(row_feat));
        mv.z_target.push_back(float((s0.age_days - vms[0]->stats.age_mean) /
                                    vms[0]->stats.age_std));
        const int at = int(mv.rows.size()) - 1;
        switch (s0.split) {
            case SplitTag::train: mv.train_idx.push_back(at); break;
            case SplitTag::val: mv.val_idx.push_back(at); break;
            case SplitTag::test: mv.test_idx.push_back(at); break;
        }
    }
    mv.dim = mv.rows.empty() ? 0 : int(mv.rows[0].size());
    return mv;
}

}  // namespace

StageResult train_multiview_stage(LinearHead& mv_head, const std::array<ViewModel*, 3>& vms,
                                  const std::array<const ViewDataset*, 3>& ds, BranchMode row,
                                  const TrainConfig& cfg) {
    cfg.validate();
    MultiViewFeatures mv = cache_multiview(vms, ds, row);
    mv_head = LinearHead::make(mv.dim);
    return train_head(mv_head, mv.rows, mv.z_target, mv.train_idx, mv.val_idx, cfg,
                      ("multiview/" + to_string(row)).c_str());
}

std::string EvalReport::csv() const {
    std::string out = "age_true,age_pred\n";
    char line[96];
    for (size_t i = 0; i < age_true.size(); ++i) {
        std::snprintf(line, sizeof(line), "%.6f,%.6f\n", age_true[i], age_pred[i]);
        out += line;
    }
    return out;
}

EvalReport evaluate_view(ViewModel& vm, const ViewDataset& ds, SplitTag split, BranchMode mode) {
    NoGradGuard ng;
    const std::vector<int>& idx = ds.split_indices(split);
    if (idx.empty()) throw ConfigError("evaluate: split '" + to_string(split) + "' is empty");
    if ((mode == BranchMode::local || mode == BranchMode::average || mode == BranchMode::fusion) &&
        !vm.local_net)
        throw ConfigError("branch '" + to_string(mode) + "' requires a local branch checkpoint");
    if (mode == BranchMode::average && !vm.average_head.valid())
        throw ConfigError("average head missing from checkpoint");
    if (mode == BranchMode::fusion && !vm.fusion_head.valid())
        throw ConfigError("fusion head missing from checkpoint");

    EvalReport rep;
    double iou_sum = 0.0;
    constexpr int kChunk = 32;
    for (size_t s = 0; s < idx.size(); s += kChunk) {
        std::vector<int> chunk(idx.begin() + long(s),
                               idx.begin() + long(std::min(s + kChunk, idx.size())));
        TensorPtr x = make_batch(ds, chunk, vm.stats);
        GlobalOut g = global_forward(vm, x, false);
        TensorPtr y;
        if (mode == BranchMode::global) {
            y = g.y;
        } else {
            LocalOut l = local_forward(vm, x, g.feat_maps, false);
            y = combine_branch(vm, mode, g.feat_vec, l.feat_vec);
        }
        // Attention quality against the ground-truth brain boxes (the crop
        // geometry depends only on the frozen global stage).
        for (size_t b = 0; b < chunk.size(); ++b) {
            TensorPtr maps = Tensor::zeros({g.feat_maps->dim(1), g.feat_maps->dim(2),
                                            g.feat_maps->dim(3)});
            const float* src = g.feat_maps->data.data() + b * maps->data.size();
            std::copy(src, src + maps->data.size(), maps->data.begin());
            Image img(ds.input_size, ds.input_size);
            const float* px = x->data.data() + b * img.v.size();
            std::copy(px, px + img.v.size(), img.v.begin());
            RoiResult roi = extract_roi(*maps, img, vm.tau, vm.kappa,
                                        vm.profile.overall_stride(), vm.profile.input_size,
                                        vm.profile.min_box_side);
            iou_sum += iou(roi.image_box, ds.samples[size_t(chunk[b])].gt_box);
        }
        for (size_t b = 0; b < chunk.size(); ++b) {
            rep.age_true.push_back(ds.samples[size_t(chunk[b])].age_days);
            rep.age_pred.push_back(double(y->data[b]) * vm.stats.age_std + vm.stats.age_mean);
        }
    }
    rep.mean_iou = iou_sum / double(idx.size());
    rep.r2 = r2_score(rep.age_true, rep.age_pred);
    rep.mae_days = mae(rep.age_true, rep.age_pred);
    return rep;
}

EvalReport evaluate_multiview(const std::array<ViewModel*, 3>& vms,
                              const std::array<const ViewDataset*, 3>& ds, SplitTag split,
                              MultiViewMode mode, BranchMode row, const LinearHead* mv_head) {
    NoGradGuard ng;
    EvalReport rep;
    if (mode == MultiViewMode::average) {
        // Mean of per-view day-space predictions, aligned by subject.
        std::array<EvalReport, 3> per;
        for (int v = 0; v < 3; ++v) {
            if (!vms[size_t(v)])
                throw ConfigError("multi-view combination requires all three views");
            per[size_t(v)] = evaluate_view(*vms[size_t(v)], *ds[size_t(v)], split, row);
        }
        for (size_t i = 0; i < per[0].age_true.size(); ++i) {
            rep.age_true.push_back(per[0].age_true[i]);
            rep.age_pred.push_back(
                (per[0].age_pred[i] + per[1].age_pred[i] + per[2].age_pred[i]) / 3.0);
        }
    } else {
        if (!mv_head || !mv_head->valid())
            throw ConfigError("multi-view fusion requires a trained fusion head");
        MultiViewFeatures mv = cache_multiview(vms, ds, row);
        const std::vector<int>& idx = split == SplitTag::train  ? mv.train_idx
                                      : split == SplitTag::val  ? mv.val_idx
                                                                : mv.test_idx;
        if (idx.empty()) throw ConfigError("evaluate: split '" + to_string(split) + "' is empty");
        TensorPtr y = mv_head->forward(gather_rows(mv.rows, idx, mv.dim));
        for (size_t b = 0; b < idx.size(); ++b) {
            rep.age_true.push_back(double(mv.z_target[size_t(idx[b])]) * vms[0]->stats.age_std +
                                   vms[0]->stats.age_mean);
            rep.age_pred.push_back(double(y->data[b]) * vms[0]->stats.age_std +
                                   vms[0]->stats.age_mean);
        }
    }
    rep.r2 = r2_score(rep.age_true, rep.age_pred);
    rep.mae_days = mae(rep.age_true, rep.age_pred);
    return rep;
}

double mean_crop_area(ViewModel& vm, const ViewDataset& ds, SplitTag split) {
    NoGradGuard ng;
    CropSet cs = compute_crops(vm, ds);
    const std::vector<int>& idx = ds.split_indices(split);
    if (idx.empty()) throw ConfigError("mean_crop_area: empty split");
    double sum = 0.0;
    for (int i : idx) sum += double(cs.boxes[size_t(i)].area());
    return sum / double(idx.size());
}

std::vector<SweepPoint> threshold_sweep(const Checkpoint& global_ckpt, const ViewDataset& ds,
                                        std::vector<double> taus, const TrainConfig& cfg) {
    if (taus.empty()) throw ConfigError("threshold_sweep: empty tau list");
    std::sort(taus.begin(), taus.end());
    std::vector<SweepPoint> points;
    for (double tau : taus) {
        ViewModel vm = view_model_from_checkpoint(global_ckpt);
        TrainConfig c = cfg;
        c.tau = tau;
        train_local_stage(vm, ds, c);
        SweepPoint p;
        p.tau = tau;
        p.r2_test = evaluate_view(vm, ds, SplitTag::test, BranchMode::local).r2;
        p.mean_crop_area_test = mean_crop_area(vm, ds, SplitTag::test);
        points.push_back(p);
    }
    return points;
}

}  // namespace gage

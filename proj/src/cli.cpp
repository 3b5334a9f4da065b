#include "gage/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gage/checkpoint.hpp"
#include "gage/errors.hpp"
#include "gage/pgm.hpp"
#include "gage/train.hpp"

namespace fs = std::filesystem;

namespace gage::cli {

namespace {

struct CommonTrainFlags {
    std::string profile = "desk";
    std::string variant = "resnet18";
    std::string view = "axial";
    std::string branch = "fusion";
    double tau = -1.0;
    double kappa = 0.95;
    int epochs = 20;
    int batch = 16;
    double lr = 1e-3;
    uint64_t seed = 7;
    std::string data_dir;
};

void add_train_flags(CLI::App* cmd, CommonTrainFlags& f) {
    cmd->add_option("--data", f.data_dir, "Dataset directory (contains manifest.csv)")
        ->required();
    cmd->add_option("--profile", f.profile, "Size profile: desk or full")
        ->capture_default_str();
    cmd->add_option("--variant", f.variant, "Backbone variant: resnet18 or resnet50")
        ->capture_default_str();
    cmd->add_option("--view", f.view, "View: axial, sagittal or coronal")
        ->capture_default_str();
    cmd->add_option("--tau", f.tau,
                    "Attention threshold in (0,1); -1 selects the default "
                    "(0.3 for resnet18, 0.4 for resnet50)")
        ->capture_default_str();
    cmd->add_option("--kappa", f.kappa, "Box coverage fraction in (0,1]")
        ->capture_default_str();
    cmd->add_option("--epochs", f.epochs, "Training epochs per stage")->capture_default_str();
    cmd->add_option("--batch", f.batch, "Batch size")->capture_default_str();
    cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--seed", f.seed, "Random seed for init and shuffling")
        ->capture_default_str();
}

TrainConfig to_config(const CommonTrainFlags& f) {
    TrainConfig cfg;
    cfg.profile = f.profile;
    cfg.variant = variant_from_string(f.variant);
    cfg.view = view_from_string(f.view);
    cfg.branch = branch_from_string(f.branch);
    cfg.tau = f.tau;
    cfg.kappa = f.kappa;
    cfg.epochs = f.epochs;
    cfg.batch_size = f.batch;
    cfg.lr = f.lr;
    cfg.seed = f.seed;
    cfg.data_dir = f.data_dir;
    return cfg;
}

ViewDataset load_view(const std::string& data_dir, View view, const Profile& profile) {
    Manifest m = Manifest::read((fs::path(data_dir) / "manifest.csv").string());
    return ViewDataset::load(m, view, profile.input_size);
}

void ensure_parent_dir(const std::string& path) {
    const fs::path p = fs::path(path).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

int cmd_gen_data(const std::string& out_dir, int subjects, uint64_t seed,
                 const std::string& profile_name) {
    const Profile& profile = Profile::by_name(profile_name);
    const int n = subjects > 0 ? subjects : profile.default_subjects;
    Manifest m = generate_dataset(n, seed, out_dir, profile);
    std::printf("wrote %zu samples (%d subjects x 3 views) under %s\n", m.rows.size(), n,
                out_dir.c_str());
    return 0;
}

int cmd_train(const CommonTrainFlags& f, const std::string& stage_name, const std::string& init,
              const std::string& out, const std::array<std::string, 3>& view_ckpts) {
    const Stage stage = stage_from_string(stage_name);
    TrainConfig cfg = to_config(f);
    const Profile& profile = cfg.get_profile();
    ensure_parent_dir(out);

    if (stage == Stage::multiview) {
        if (cfg.branch == BranchMode::global) {
            // valid row; nothing special
        }
        std::array<ViewModel, 3> vms_store;
        std::array<ViewModel*, 3> vms{};
        std::array<ViewDataset, 3> ds_store;
        std::array<const ViewDataset*, 3> ds{};
        for (int v = 0; v < 3; ++v) {
            if (view_ckpts[size_t(v)].empty())
                throw ConfigError("multiview stage needs --ckpt-axial, --ckpt-sagittal and "
                                  "--ckpt-coronal");
            vms_store[size_t(v)] =
                view_model_from_checkpoint(Checkpoint::load(view_ckpts[size_t(v)]));
            vms[size_t(v)] = &vms_store[size_t(v)];
            ds_store[size_t(v)] = load_view(cfg.data_dir, vms_store[size_t(v)].view, profile);
            ds[size_t(v)] = &ds_store[size_t(v)];
        }
        LinearHead mv_head;
        StageResult res = train_multiview_stage(mv_head, vms, ds, cfg.branch, cfg);
        Checkpoint ck;
        ck.set_meta("kind", "multiview_head");
        ck.set_meta("branch", to_string(cfg.branch));
        ck.set_meta("profile", profile.name);
        ck.set_meta("seed", std::to_string(cfg.seed));
        ck.add("mvhead.w", mv_head.w);
        ck.add("mvhead.b", mv_head.b);
        ck.save(out);
        std::printf("multiview head saved to %s (best val R2=%.4f at epoch %d)\n", out.c_str(),
                    res.best_val_r2, res.best_epoch);
        return 0;
    }

    ViewDataset ds = load_view(cfg.data_dir, cfg.view, profile);
    ViewModel vm;
    if (stage == Stage::global) {
        vm = make_view_model(profile, cfg.variant, cfg.view, cfg.resolved_tau(),
                             float(cfg.kappa), cfg.seed);
    } else {
        if (init.empty())
            throw ConfigError("stage '" + stage_name + "' needs --init <prerequisite checkpoint>");
        vm = view_model_from_checkpoint(Checkpoint::load(init));
        if (vm.view != cfg.view)
            throw ConfigError("checkpoint view '" + to_string(vm.view) +
                              "' does not match --view " + to_string(cfg.view));
    }

    StageResult res;
    BranchMode save_branch = BranchMode::global;
    switch (stage) {
        case Stage::global:
            res = train_global_stage(vm, ds, cfg);
            save_branch = BranchMode::global;
            break;
        case Stage::local:
            res = train_local_stage(vm, ds, cfg);
            save_branch = BranchMode::local;
            break;
        default:
            res = train_combine_stage(vm, ds, cfg);
            save_branch = cfg.branch;
            break;
    }
    vm.seed = cfg.seed;
    view_model_to_checkpoint(vm, save_branch).save(out);
    std::printf("checkpoint saved to %s (best val R2=%.4f at epoch %d)\n", out.c_str(),
                res.best_val_r2, res.best_epoch);
    return 0;
}

int cmd_eval(const std::string& model, const std::string& data_dir, const std::string& split_name,
             const std::string& branch_name, const std::string& multiview,
             const std::array<std::string, 3>& view_ckpts, const std::string& mv_head_path,
             const std::string& out_dir) {
    const SplitTag split = split_from_string(split_name);
    fs::create_directories(out_dir);
    EvalReport rep;

    if (!multiview.empty()) {
        const MultiViewMode mode = multiview_from_string(multiview);
        const BranchMode row = branch_from_string(branch_name);
        std::array<ViewModel, 3> vms_store;
        std::array<ViewModel*, 3> vms{};
        std::array<ViewDataset, 3> ds_store;
        std::array<const ViewDataset*, 3> ds{};
        for (int v = 0; v < 3; ++v) {
            if (view_ckpts[size_t(v)].empty())
                throw ConfigError("multi-view eval needs --ckpt-axial, --ckpt-sagittal and "
                                  "--ckpt-coronal");
            vms_store[size_t(v)] =
                view_model_from_checkpoint(Checkpoint::load(view_ckpts[size_t(v)]));
            vms[size_t(v)] = &vms_store[size_t(v)];
            ds_store[size_t(v)] = load_view(data_dir, vms_store[size_t(v)].view,
                                            vms_store[size_t(v)].profile);
            ds[size_t(v)] = &ds_store[size_t(v)];
        }
        LinearHead mv_head;
        if (mode == MultiViewMode::fusion) {
            if (mv_head_path.empty())
                throw ConfigError("multi-view fusion eval needs --mv-head");
            Checkpoint hk = Checkpoint::load(mv_head_path);
            const TensorPtr w = hk.find("mvhead.w"), b = hk.find("mvhead.b");
            if (!w || !b) throw IoError(mv_head_path + ": not a multiview head checkpoint");
            mv_head = LinearHead::make(w->dim(1));
            mv_head.w->data = w->data;
            mv_head.b->data = b->data;
        }
        rep = evaluate_multiview(vms, ds, split, mode, row,
                                 mode == MultiViewMode::fusion ? &mv_head : nullptr);
    } else {
        if (model.empty()) throw ConfigError("eval needs --model (or --multiview with view "
                                             "checkpoints)");
        ViewModel vm = view_model_from_checkpoint(Checkpoint::load(model));
        ViewDataset ds = load_view(data_dir, vm.view, vm.profile);
        rep = evaluate_view(vm, ds, split, branch_from_string(branch_name));
    }

    std::printf("R2=%.4f MAE=%.4f days\n", rep.r2, rep.mae_days);
    if (rep.mean_iou >= 0.0) std::printf("IoU=%.4f\n", rep.mean_iou);
    const std::string csv_path = (fs::path(out_dir) / "predictions.csv").string();
    const std::string csv = rep.csv();
    write_file_bytes(csv_path, csv.data(), csv.size());
    std::printf("predictions written to %s\n", csv_path.c_str());
    return 0;
}

int cmd_attend(const std::string& model, const std::string& image_path,
               const std::string& out_prefix) {
    ViewModel vm = view_model_from_checkpoint(Checkpoint::load(model));
    ImageU8 raw = read_pgm(image_path);
    if (raw.h != vm.profile.input_size || raw.w != vm.profile.input_size)
        throw ConfigError("image is " + std::to_string(raw.w) + "x" + std::to_string(raw.h) +
                          " but the model expects " + std::to_string(vm.profile.input_size));

    NoGradGuard ng;
    auto x = Tensor::zeros({1, 1, raw.h, raw.w});
    for (size_t i = 0; i < raw.v.size(); ++i)
        x->data[i] = float((double(raw.v[i]) - vm.stats.pixel_mean) / vm.stats.pixel_std);
    Backbone::Features f = vm.global_net->forward(x, false);

    // Crop geometry comes from the normalized forward; the exported crop
    // itself is taken from the raw gray levels.
    RoiResult roi = extract_roi(*f.maps, raw.to_float(), vm.tau, vm.kappa,
                                vm.profile.overall_stride(), vm.profile.input_size,
                                vm.profile.min_box_side);

    ensure_parent_dir(out_prefix + "x");
    ImageU8 heat(roi.map.values.h, roi.map.values.w);
    for (size_t i = 0; i < heat.v.size(); ++i)
        heat.v[i] = uint8_t(std::lround(double(roi.map.values.v[i]) * 255.0));
    write_pgm(heat, out_prefix + "heatmap.pgm");

    ImageU8 crop(roi.crop.h, roi.crop.w);
    for (size_t i = 0; i < crop.v.size(); ++i)
        crop.v[i] = uint8_t(std::lround(std::min(255.0, std::max(0.0, double(roi.crop.v[i])))));
    write_pgm(crop, out_prefix + "crop.pgm");

    char line[80];
    std::snprintf(line, sizeof(line), "%d %d %d %d\n", roi.image_box.r0, roi.image_box.c0,
                  roi.image_box.r1, roi.image_box.c1);
    write_file_bytes(out_prefix + "box.txt", line, std::strlen(line));
    std::printf("box: %s", line);
    if (roi.fallback) std::printf("(degenerate attention, full-image fallback)\n");
    return 0;
}

int cmd_sweep(const CommonTrainFlags& f, const std::string& global_ckpt,
              const std::string& tau_list, const std::string& out_csv) {
    TrainConfig cfg = to_config(f);
    std::vector<double> taus;
    size_t pos = 0;
    while (pos < tau_list.size()) {
        size_t comma = tau_list.find(',', pos);
        if (comma == std::string::npos) comma = tau_list.size();
        taus.push_back(std::stod(tau_list.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    Checkpoint ck = Checkpoint::load(global_ckpt);
    ViewModel probe = view_model_from_checkpoint(ck);
    ViewDataset ds = load_view(cfg.data_dir, probe.view, probe.profile);

    std::vector<SweepPoint> points = threshold_sweep(ck, ds, taus, cfg);
    std::string csv = "tau,r2_test\n";
    char line[64];
    for (const SweepPoint& p : points) {
        std::snprintf(line, sizeof(line), "%.6f,%.6f\n", p.tau, p.r2_test);
        csv += line;
    }
    ensure_parent_dir(out_csv);
    write_file_bytes(out_csv, csv.data(), csv.size());
    std::printf("sweep written to %s\n", out_csv.c_str());
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"Attention-guided multi-view gestational-age regression pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Optional key=value config file supplying flag defaults");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset");
    std::string gen_out, gen_profile = "desk";
    int gen_subjects = 0;
    uint64_t gen_seed = 7;
    gen->add_option("--out", gen_out, "Output dataset directory")->required();
    gen->add_option("--subjects", gen_subjects,
                    "Subject count (0 = profile default: 300 desk, 741 full)")
        ->capture_default_str();
    gen->add_option("--seed", gen_seed, "Dataset seed")->capture_default_str();
    gen->add_option("--profile", gen_profile, "Size profile: desk or full")
        ->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "Train one pipeline stage");
    CommonTrainFlags tf;
    std::string train_stage_name, train_init, train_out;
    std::array<std::string, 3> train_view_ckpts;
    train->add_option("--stage", train_stage_name,
                      "Stage: global, local, combine or multiview")
        ->required();
    add_train_flags(train, tf);
    train->add_option("--branch", tf.branch,
                      "Branch head for combine stage / feature row for multiview "
                      "(global, local, average, fusion)")
        ->capture_default_str();
    train->add_option("--init", train_init, "Prerequisite checkpoint (local/combine stages)");
    train->add_option("--out", train_out, "Output checkpoint path")->required();
    train->add_option("--ckpt-axial", train_view_ckpts[0], "Axial view checkpoint (multiview)");
    train->add_option("--ckpt-sagittal", train_view_ckpts[1],
                      "Sagittal view checkpoint (multiview)");
    train->add_option("--ckpt-coronal", train_view_ckpts[2],
                      "Coronal view checkpoint (multiview)");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    std::string ev_model, ev_data, ev_split = "test", ev_branch = "global", ev_multiview,
                ev_mv_head, ev_out = "eval";
    std::array<std::string, 3> ev_view_ckpts;
    ev->add_option("--model", ev_model, "View-model checkpoint (single-view eval)");
    ev->add_option("--data", ev_data, "Dataset directory")->required();
    ev->add_option("--split", ev_split, "Split: train, val or test")->capture_default_str();
    ev->add_option("--branch", ev_branch, "Branch: global, local, average or fusion")
        ->capture_default_str();
    ev->add_option("--multiview", ev_multiview, "Multi-view mode: average or fusion");
    ev->add_option("--ckpt-axial", ev_view_ckpts[0], "Axial view checkpoint (multi-view)");
    ev->add_option("--ckpt-sagittal", ev_view_ckpts[1], "Sagittal view checkpoint (multi-view)");
    ev->add_option("--ckpt-coronal", ev_view_ckpts[2], "Coronal view checkpoint (multi-view)");
    ev->add_option("--mv-head", ev_mv_head, "Multi-view fusion head checkpoint");
    ev->add_option("--out", ev_out, "Output directory for predictions.csv")
        ->capture_default_str();

    // attend
    auto* at = app.add_subcommand("attend", "Export attention heatmap, crop and box");
    std::string at_model, at_image, at_prefix;
    at->add_option("--model", at_model, "View-model checkpoint")->required();
    at->add_option("--image", at_image, "Input PGM image")->required();
    at->add_option("--out-prefix", at_prefix,
                   "Output prefix for heatmap.pgm, crop.pgm and box.txt")
        ->required();

    // sweep
    auto* sw = app.add_subcommand("sweep", "Threshold sweep: retrain local stage per tau");
    CommonTrainFlags sf;
    std::string sw_global, sw_taus = "0.05,0.2,0.3,0.5,0.7,0.9", sw_out;
    sw->add_option("--global", sw_global, "Trained global-stage checkpoint")->required();
    add_train_flags(sw, sf);
    sw->add_option("--tau-list", sw_taus, "Comma-separated thresholds")->capture_default_str();
    sw->add_option("--out", sw_out, "Output CSV path (tau,r2_test)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_subjects, gen_seed, gen_profile);
        if (train->parsed())
            return cmd_train(tf, train_stage_name, train_init, train_out, train_view_ckpts);
        if (ev->parsed())
            return cmd_eval(ev_model, ev_data, ev_split, ev_branch, ev_multiview, ev_view_ckpts,
                            ev_mv_head, ev_out);
        if (at->parsed()) return cmd_attend(at_model, at_image, at_prefix);
        if (sw->parsed()) return cmd_sweep(sf, sw_global, sw_taus, sw_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}

}  // namespace gage::cli

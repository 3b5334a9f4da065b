#include "gage/backbone.hpp"

#include <cmath>

namespace gage {

std::string to_string(Variant v) {
    return v == Variant::resnet18 ? "resnet18" : "resnet50";
}

Variant variant_from_string(const std::string& s) {
    if (s == "resnet18") return Variant::resnet18;
    if (s == "resnet50") return Variant::resnet50;
    throw ConfigError("unknown variant '" + s + "' (expected resnet18 or resnet50)");
}

int BackboneConfig::overall_stride() const {
    int s = stem_stride * (stem_pool ? 2 : 1);
    for (int st : stage_strides) s *= st;
    return s;
}

void BackboneConfig::validate() const {
    if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    if (width_multiplier <= 0) throw ConfigError("width_multiplier must be > 0");
    if (stem_stride < 1) throw ConfigError("stem_stride must be >= 1");
    for (int s : stage_strides)
        if (s < 1) throw ConfigError("stage strides must be >= 1");
    const int stride = overall_stride();
    if (input_size % stride != 0)
        throw ConfigError("overall stride " + std::to_string(stride) +
                          " does not divide input size " + std::to_string(input_size));
    if (input_size / stride < 2)
        throw ConfigError("feature grid " + std::to_string(input_size / stride) + "x" +
                          std::to_string(input_size / stride) +
                          " is below the 2x2 minimum needed by attention");
}

BackboneConfig Profile::backbone_config(Variant v, int in_channels) const {
    BackboneConfig cfg;
    cfg.variant = v;
    cfg.in_channels = in_channels;
    cfg.width_multiplier = width;
    cfg.input_size = input_size;
    cfg.stem_kernel = stem_kernel;
    cfg.stem_stride = stem_stride;
    cfg.stem_pool = stem_pool;
    cfg.stage_strides = stage_strides;
    return cfg;
}

int Profile::overall_stride() const {
    int s = stem_stride * (stem_pool ? 2 : 1);
    for (int st : stage_strides) s *= st;
    return s;
}

const Profile& Profile::full() {
    static const Profile p{"full", 224, 7, 2, true, {1, 2, 2, 2}, 1.0, 16, 741};
    return p;
}

const Profile& Profile::desk() {
    static const Profile p{"desk", 96, 3, 1, false, {1, 2, 2, 2}, 0.25, 8, 300};
    return p;
}

const Profile& Profile::by_name(const std::string& name) {
    if (name == "full") return full();
    if (name == "desk") return desk();
    throw ConfigError("unknown profile '" + name + "' (expected full or desk)");
}

LinearHead LinearHead::make(int in_dim) {
    LinearHead h;
    h.w = Tensor::zeros({1, in_dim}, true);
    h.b = Tensor::zeros({1}, true);
    return h;
}

TensorPtr LinearHead::forward(const TensorPtr& feat) const {
    if (!valid()) throw ConfigError("regression head not initialized");
    if (feat->rank() != 2 || feat->dim(1) != in_dim())
        throw ShapeError("regression head expects [N," + std::to_string(in_dim()) +
                         "] features, got [" +
                         (feat->rank() == 2 ? std::to_string(feat->dim(0)) + "," +
                                                  std::to_string(feat->dim(1))
                                            : std::to_string(feat->rank()) + "-rank") +
                         "]");
    return reshape(linear(feat, w, b), {feat->dim(0)});
}

namespace {

int scaled(int base, double width) {
    int c = int(std::lround(base * width));
    return c < 1 ? 1 : c;
}

}  // namespace

Backbone::ConvLayer Backbone::make_conv(const std::string& name, int out_ch, int in_ch, int k,
                                        int stride) {
    ConvLayer l;
    l.w = Tensor::zeros({out_ch, in_ch, k, k}, true);
    l.stride = stride;
    l.pad = k / 2;
    // Kaiming-style fan-in scaling: std = sqrt(2 / (C*kh*kw)).
    const double std = std::sqrt(2.0 / (double(in_ch) * k * k));
    for (auto& v : l.w->data) v = float(init_rng_.normal(0.0, std));
    params_.push_back({name + ".w", l.w, true});
    return l;
}

Backbone::BnLayer Backbone::make_bn(const std::string& name, int ch) {
    BnLayer l;
    l.gamma = Tensor::full({ch}, 1.0f, true);
    l.beta = Tensor::zeros({ch}, true);
    l.rmean = Tensor::zeros({ch});
    l.rvar = Tensor::full({ch}, 1.0f);
    params_.push_back({name + ".gamma", l.gamma, true});
    params_.push_back({name + ".beta", l.beta, true});
    params_.push_back({name + ".rmean", l.rmean, false});
    params_.push_back({name + ".rvar", l.rvar, false});
    return l;
}

TensorPtr Backbone::bn_fwd(const BnLayer& l, const TensorPtr& x, bool training) const {
    return batch_norm2d(x, l.gamma, l.beta, l.rmean, l.rvar, training);
}

Backbone::Backbone(const BackboneConfig& cfg, uint64_t seed) : cfg_(cfg), init_rng_(seed) {
    cfg_.validate();
    const bool bottleneck = cfg.variant == Variant::resnet50;
    const std::array<int, 4> depths =
        bottleneck ? std::array<int, 4>{3, 4, 6, 3} : std::array<int, 4>{2, 2, 2, 2};
    const int expansion = bottleneck ? 4 : 1;
    const std::array<int, 4> planes = {
        scaled(64, cfg.width_multiplier), scaled(128, cfg.width_multiplier),
        scaled(256, cfg.width_multiplier), scaled(512, cfg.width_multiplier)};

    const int stem_out = planes[0];
    stem_ = make_conv("stem.conv", stem_out, cfg.in_channels, cfg.stem_kernel, cfg.stem_stride);
    stem_bn_ = make_bn("stem.bn", stem_out);

    int in_ch = stem_out;
    for (int s = 0; s < 4; ++s) {
        std::vector<Block> stage;
        const int out_ch = planes[size_t(s)] * expansion;
        for (int b = 0; b < depths[size_t(s)]; ++b) {
            const std::string base = "s" + std::to_string(s) + ".b" + std::to_string(b);
            const int stride = (b == 0) ? cfg.stage_strides[size_t(s)] : 1;
            Block blk;
            blk.bottleneck = bottleneck;
            if (bottleneck) {
                const int mid = planes[size_t(s)];
                blk.c1 = make_conv(base + ".conv1", mid, in_ch, 1, 1);
                blk.b1 = make_bn(base + ".bn1", mid);
                blk.c2 = make_conv(base + ".conv2", mid, mid, 3, stride);
                blk.b2 = make_bn(base + ".bn2", mid);
                blk.c3 = make_conv(base + ".conv3", out_ch, mid, 1, 1);
                blk.b3 = make_bn(base + ".bn3", out_ch);
            } else {
                blk.c1 = make_conv(base + ".conv1", out_ch, in_ch, 3, stride);
                blk.b1 = make_bn(base + ".bn1", out_ch);
                blk.c2 = make_conv(base + ".conv2", out_ch, out_ch, 3, 1);
                blk.b2 = make_bn(base + ".bn2", out_ch);
            }
            if (stride != 1 || in_ch != out_ch) {
                blk.has_proj = true;
                blk.proj = make_conv(base + ".proj", out_ch, in_ch, 1, stride);
                blk.bproj = make_bn(base + ".bnproj", out_ch);
            }
            stage.push_back(std::move(blk));
            in_ch = out_ch;
        }
        stages_.push_back(std::move(stage));
    }
    feature_dim_ = in_ch;
}

Backbone::Features Backbone::forward(const TensorPtr& batch, bool training) {
    if (!batch || batch->rank() != 4)
        throw ShapeError("backbone forward expects a [N,C,S,S] batch");
    if (batch->dim(1) != cfg_.in_channels)
        throw ShapeError("backbone forward: channel axis is " + std::to_string(batch->dim(1)) +
                         ", config expects " + std::to_string(cfg_.in_channels));
    if (batch->dim(2) != cfg_.input_size || batch->dim(3) != cfg_.input_size)
        throw ShapeError("backbone forward: spatial size " + std::to_string(batch->dim(2)) + "x" +
                         std::to_string(batch->dim(3)) + " does not match config input_size " +
                         std::to_string(cfg_.input_size) + " (no implicit resize)");

    TensorPtr h = conv2d(batch, stem_.w, TensorPtr{}, stem_.stride, stem_.pad);
    h = relu(bn_fwd(stem_bn_, h, training));
    if (cfg_.stem_pool) h = max_pool2d(h, 2, 2);

    for (auto& stage : stages_) {
        for (auto& blk : stage) {
            TensorPtr identity =
                blk.has_proj ? bn_fwd(blk.bproj, conv2d(h, blk.proj.w, TensorPtr{}, blk.proj.stride,
                                                        blk.proj.pad), training)
                             : h;
            TensorPtr y = relu(bn_fwd(blk.b1, conv2d(h, blk.c1.w, TensorPtr{}, blk.c1.stride,
                                                     blk.c1.pad), training));
            if (blk.bottleneck) {
                y = relu(bn_fwd(blk.b2, conv2d(y, blk.c2.w, TensorPtr{}, blk.c2.stride,
                                               blk.c2.pad), training));
                y = bn_fwd(blk.b3, conv2d(y, blk.c3.w, TensorPtr{}, 1, 0), training);
            } else {
                y = bn_fwd(blk.b2, conv2d(y, blk.c2.w, TensorPtr{}, blk.c2.stride, blk.c2.pad),
                           training);
            }
            h = relu(add(y, identity));
        }
    }

    Features f;
    f.maps = h;
    f.vec = global_avg_pool(h);
    return f;
}

std::vector<TensorPtr> Backbone::trainable() const {
    std::vector<TensorPtr> out;
    for (const auto& p : params_)
        if (p.trainable) out.push_back(p.tensor);
    return out;
}

int64_t Backbone::parameter_count() const {
    int64_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.tensor->numel();
    return n;
}

}  // namespace gage

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gage/ops.hpp"
#include "gage/rng.hpp"

namespace gage {

enum class Variant { resnet18, resnet50 };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct BackboneConfig {
    Variant variant = Variant::resnet18;
    int in_channels = 1;
    double width_multiplier = 1.0;
    int input_size = 224;
    int stem_kernel = 7;
    int stem_stride = 2;
    bool stem_pool = true;  // 2x2/stride-2 max pool after the stem
    std::array<int, 4> stage_strides{1, 2, 2, 2};

    int overall_stride() const;
    // Throws ConfigError when the stride does not divide input_size or the
    // final feature grid falls below 2x2 (attention needs spatial extent).
    void validate() const;
};

// Named size configuration of the whole pipeline.
//   full: 224 input, stride-32 backbone (7x7 grid), width 1.0
//   desk: 96 input, stride-8 backbone (12x12 grid), width 0.25
struct Profile {
    std::string name;
    int input_size;
    int stem_kernel;
    int stem_stride;
    bool stem_pool;
    std::array<int, 4> stage_strides;
    double width;
    int min_box_side;      // ROI expansion floor in pixels
    int default_subjects;  // gen-data default

    BackboneConfig backbone_config(Variant v, int in_channels = 1) const;
    int overall_stride() const;

    static const Profile& full();
    static const Profile& desk();
    static const Profile& by_name(const std::string& name);
};

struct NamedParam {
    std::string name;
    TensorPtr tensor;
    bool trainable;  // running stats ride along in checkpoints but skip the optimizer
};

// Single linear regression head on pooled features; weights and bias start
// at zero so initial predictions sit at the target mean in z-space.
struct LinearHead {
    TensorPtr w;  // [1,D]
    TensorPtr b;  // [1]

    static LinearHead make(int in_dim);
    TensorPtr forward(const TensorPtr& feat) const;  // [N,D] -> [N]
    int in_dim() const { return w ? w->dim(1) : 0; }
    bool valid() const { return w != nullptr; }
};

// ResNet-style feature extractor. Residual blocks are conv-bn-relu with
// identity or 1x1-projection shortcuts; returned feature maps are the
// post-ReLU activations of the last stage.
class Backbone {
  public:
    Backbone(const BackboneConfig& cfg, uint64_t seed);

    struct Features {
        TensorPtr maps;  // [N, C_f, g, g]
        TensorPtr vec;   // [N, C_f] = global average pool of maps
    };
    // batch must be [N, in_channels, input_size, input_size]; no implicit resize.
    Features forward(const TensorPtr& batch, bool training);

    int feature_dim() const { return feature_dim_; }
    int feature_grid() const { return cfg_.input_size / cfg_.overall_stride(); }
    const BackboneConfig& config() const { return cfg_; }

    std::vector<NamedParam>& params() { return params_; }
    const std::vector<NamedParam>& params() const { return params_; }
    std::vector<TensorPtr> trainable() const;
    int64_t parameter_count() const;  // trainable tensors only

  private:
    struct ConvLayer {
        TensorPtr w;
        int stride = 1, pad = 0;
    };
    struct BnLayer {
        TensorPtr gamma, beta, rmean, rvar;
    };
    struct Block {
        bool bottleneck = false;
        ConvLayer c1, c2, c3;  // c3 used by bottleneck blocks only
        BnLayer b1, b2, b3;
        bool has_proj = false;
        ConvLayer proj;
        BnLayer bproj;
    };

    ConvLayer make_conv(const std::string& name, int out_ch, int in_ch, int k, int stride);
    BnLayer make_bn(const std::string& name, int ch);
    TensorPtr bn_fwd(const BnLayer& l, const TensorPtr& x, bool training) const;

    BackboneConfig cfg_;
    int feature_dim_ = 0;
    ConvLayer stem_;
    BnLayer stem_bn_;
    std::vector<std::vector<Block>> stages_;
    std::vector<NamedParam> params_;
    SplitMix64 init_rng_;
};

}  // namespace gage

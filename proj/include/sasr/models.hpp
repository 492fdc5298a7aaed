#pragma once

// MLSR generator (RDN-style backbone + encoder-decoder + dynamic-conv fusion
// head, x2 PixelShuffle output) and the 70x70 PatchGAN discriminator.

#include "sasr/rng.hpp"
#include "sasr/tensor.hpp"

#include <string>
#include <vector>

namespace sasr {

template <typename S>
struct NamedParam {
    std::string name;
    Tensor<S> tensor;
};

// Named buffers (batch-norm running stats) get checkpointed but not optimized.
template <typename S>
struct NamedBuffer {
    std::string name;
    Array<S>* data;
};

namespace init {

// He-uniform fan-in initialization.
template <typename S>
Tensor<S> conv_weight(Rng& rng, int cout, int cin, int k) {
    const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * k * k));
    std::vector<S> w(static_cast<std::size_t>(cout) * cin * k * k);
    for (auto& v : w) v = static_cast<S>(rng.uniform(-bound, bound));
    return Tensor<S>::from({cout, cin, k, k}, std::move(w), true);
}

template <typename S>
Tensor<S> linear_weight(Rng& rng, int dout, int din) {
    const double bound = std::sqrt(6.0 / static_cast<double>(din));
    std::vector<S> w(static_cast<std::size_t>(dout) * din);
    for (auto& v : w) v = static_cast<S>(rng.uniform(-bound, bound));
    return Tensor<S>::from({dout, din}, std::move(w), true);
}

}  // namespace init

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename S>
struct Conv2dLayer {
    ConvSpec spec;
    Tensor<S> w, b;

    Conv2dLayer() = default;
    Conv2dLayer(Rng& rng, int cin, int cout, int k, int stride, int padding) {
        spec = ConvSpec{k, stride, padding, cin, cout};
        w = init::conv_weight<S>(rng, cout, cin, k);
        b = Tensor<S>::zeros({cout}, true);
    }

    Tensor<S> operator()(const Tensor<S>& x) const { return conv2d(x, w, b, spec); }

    void collect(const std::string& prefix, std::vector<NamedParam<S>>& out) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

template <typename S>
struct BatchNorm2dLayer {
    Tensor<S> gamma, beta;
    BnState<S> state;

    BatchNorm2dLayer() = default;
    explicit BatchNorm2dLayer(int channels) {
        gamma = Tensor<S>::filled({channels}, S(1), true);
        beta = Tensor<S>::zeros({channels}, true);
        state = BnState<S>::init(channels);
    }

    Tensor<S> operator()(const Tensor<S>& x, BnMode mode) {
        return batch_norm(x, gamma, beta, mode, state);
    }

    void collect(const std::string& prefix, std::vector<NamedParam<S>>& out) {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
    void collect_buffers(const std::string& prefix, std::vector<NamedBuffer<S>>& out) {
        out.push_back({prefix + ".running_mean", &state.running_mean});
        out.push_back({prefix + ".running_var", &state.running_var});
    }
};

// conv-BN-ReLU x3 with an identity skip (1x1 projection when channels differ).
template <typename S>
struct ResidualModule {
    Conv2dLayer<S> conv1, conv2, conv3;
    BatchNorm2dLayer<S> bn1, bn2, bn3;
    bool project = false;
    Conv2dLayer<S> proj;

    ResidualModule() = default;
    ResidualModule(Rng& rng, int cin, int cout)
        : conv1(rng, cin, cout, 3, 1, 1),
          conv2(rng, cout, cout, 3, 1, 1),
          conv3(rng, cout, cout, 3, 1, 1),
          bn1(cout), bn2(cout), bn3(cout) {
        if (cin != cout) {
            project = true;
            proj = Conv2dLayer<S>(rng, cin, cout, 1, 1, 0);
        }
    }

    Tensor<S> operator()(const Tensor<S>& x, BnMode mode) {
        Tensor<S> y = relu(bn1(conv1(x), mode));
        y = relu(bn2(conv2(y), mode));
        y = bn3(conv3(y), mode);
        Tensor<S> skip = project ? proj(x) : x;
        return relu(add(y, skip));
    }

    void collect(const std::string& p, std::vector<NamedParam<S>>& out) {
        conv1.collect(p + ".conv1", out);
        conv2.collect(p + ".conv2", out);
        conv3.collect(p + ".conv3", out);
        bn1.collect(p + ".bn1", out);
        bn2.collect(p + ".bn2", out);
        bn3.collect(p + ".bn3", out);
        if (project) proj.collect(p + ".proj", out);
    }
    void collect_buffers(const std::string& p, std::vector<NamedBuffer<S>>& out) {
        bn1.collect_buffers(p + ".bn1", out);
        bn2.collect_buffers(p + ".bn2", out);
        bn3.collect_buffers(p + ".bn3", out);
    }
};

// Residual dense block: L growth-rate convs, each eating the concat of the
// block input and every previous layer output, then a 1x1 local fusion and a
// local residual add.
template <typename S>
struct RdbBlock {
    std::vector<Conv2dLayer<S>> layers;
    Conv2dLayer<S> fusion;
    int base = 0, growth = 0;

    RdbBlock() = default;
    RdbBlock(Rng& rng, int base_channels, int growth_rate, int num_layers)
        : base(base_channels), growth(growth_rate) {
        for (int i = 0; i < num_layers; ++i)
            layers.emplace_back(rng, base_channels + i * growth_rate, growth_rate, 3, 1, 1);
        fusion = Conv2dLayer<S>(rng, base_channels + num_layers * growth_rate, base_channels, 1, 1, 0);
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        std::vector<Tensor<S>> feats{x};
        Tensor<S> cur = x;
        for (const auto& layer : layers) {
            feats.push_back(relu(layer(cur)));
            cur = concat_channels(feats);
        }
        return add(fusion(cur), x);
    }

    void collect(const std::string& p, std::vector<NamedParam<S>>& out) {
        for (std::size_t i = 0; i < layers.size(); ++i)
            layers[i].collect(p + ".layer" + std::to_string(i), out);
        fusion.collect(p + ".fusion", out);
    }
};

// SE attention over K kernel banks: GAP -> MLP(ReLU hidden) -> softmax.
template <typename S>
struct DynamicConvLayer {
    Tensor<S> banks;  // (K, Cout, Cin, d, d)
    Tensor<S> bias;   // (Cout)
    Tensor<S> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    ConvSpec spec;
    int num_kernels = 4;

    DynamicConvLayer() = default;
    DynamicConvLayer(Rng& rng, int cin, int cout, int k, int d, int padding) : num_kernels(k) {
        spec = ConvSpec{d, 1, padding, cin, cout};
        const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * d * d));
        std::vector<S> w(static_cast<std::size_t>(k) * cout * cin * d * d);
        for (auto& v : w) v = static_cast<S>(rng.uniform(-bound, bound));
        banks = Tensor<S>::from({k, cout, cin, d, d}, std::move(w), true);
        bias = Tensor<S>::zeros({cout}, true);
        const int hidden = std::max(cin / 4, 4);
        mlp_w1 = init::linear_weight<S>(rng, hidden, cin);
        mlp_b1 = Tensor<S>::zeros({hidden}, true);
        mlp_w2 = init::linear_weight<S>(rng, k, hidden);
        mlp_b2 = Tensor<S>::zeros({k}, true);
    }

    Tensor<S> attention(const Tensor<S>& x) const {
        Tensor<S> pooled = global_avg_pool(x);
        Tensor<S> hidden = relu(linear(pooled, mlp_w1, mlp_b1));
        return softmax(linear(hidden, mlp_w2, mlp_b2), 1);
    }

    Tensor<S> operator()(const Tensor<S>& x) const {
        return dynamic_conv2d(x, attention(x), banks, bias, spec);
    }

    void collect(const std::string& p, std::vector<NamedParam<S>>& out) {
        out.push_back({p + ".banks", banks});
        out.push_back({p + ".bias", bias});
        out.push_back({p + ".mlp_w1", mlp_w1});
        out.push_back({p + ".mlp_b1", mlp_b1});
        out.push_back({p + ".mlp_w2", mlp_w2});
        out.push_back({p + ".mlp_b2", mlp_b2});
    }
};

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

struct GeneratorConfig {
    int base_width = 32;
    int rdb_growth = 16;
    int rdb_layers = 4;
    int num_rdbs = 6;
    int dynamic_kernels = 4;  // K
    int dynamic_kernel_size = 3;
};

template <typename S>
class Generator {
public:
    Generator() = default;
    Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
        const int c = cfg.base_width;
        sfe1_ = Conv2dLayer<S>(rng, 1, c, 3, 1, 1);
        sfe2_ = Conv2dLayer<S>(rng, c, c, 3, 1, 1);
        for (int i = 0; i < cfg.num_rdbs; ++i)
            rdbs_.emplace_back(rng, c, cfg.rdb_growth, cfg.rdb_layers);
        dff_ = Conv2dLayer<S>(rng, c * cfg.num_rdbs, c, 1, 1, 0);

        enc_in_ = ResidualModule<S>(rng, 1, c);
        for (int lvl = 0; lvl < 3; ++lvl) {
            enc1_.emplace_back(rng, c, c);
            enc2_.emplace_back(rng, c, c);
            skip_rdbs_.emplace_back(rng, c, cfg.rdb_growth, cfg.rdb_layers);
            dec_.emplace_back(rng, c, c);
        }
        bottleneck_ = ResidualModule<S>(rng, c, c);

        fusion_dyn_ = DynamicConvLayer<S>(rng, 2 * c, c, cfg.dynamic_kernels,
                                          cfg.dynamic_kernel_size,
                                          cfg.dynamic_kernel_size / 2);
        expand_ = Conv2dLayer<S>(rng, c, 4, 3, 1, 1);  // 1 channel * r^2, r=2
    }

    void set_training(bool t) { training_ = t; }
    bool training() const { return training_; }
    const GeneratorConfig& config() const { return cfg_; }

    // SFENet -> RDB chain -> concat -> 1x1 DFF -> global residual (F_-1).
    Tensor<S> backbone(const Tensor<S>& x) const {
        Tensor<S> f0 = sfe1_(x);
        Tensor<S> f = sfe2_(f0);
        std::vector<Tensor<S>> outs;
        for (const auto& rdb : rdbs_) {
            f = rdb(f);
            outs.push_back(f);
        }
        return add(dff_(concat_channels(outs)), f0);
    }

    // 3 levels of (residual x2 + maxpool) down, (nearest-up + residual) up,
    // encoder features routed through an RDB and added back per level.
    Tensor<S> encoder_decoder(const Tensor<S>& x) {
        const Shape& s = x.shape();
        if (s[2] % 8 != 0 || s[3] % 8 != 0)
            throw TensorError("encoder_decoder: spatial dims must be divisible by 8, got " +
                              shape_str(s));
        const BnMode mode = training_ ? BnMode::train : BnMode::eval;
        Tensor<S> f = enc_in_(x, mode);
        std::vector<Tensor<S>> skips;
        for (int lvl = 0; lvl < 3; ++lvl) {
            f = enc2_[lvl](enc1_[lvl](f, mode), mode);
            skips.push_back(skip_rdbs_[lvl](f));
            f = max_pool2(f);
        }
        f = bottleneck_(f, mode);
        for (int lvl = 2; lvl >= 0; --lvl) {
            f = dec_[lvl](upsample_nearest2(f), mode);
            f = add(f, skips[lvl]);
        }
        return f;
    }

    Tensor<S> fusion_head(const Tensor<S>& f_backbone, const Tensor<S>& f_encdec) const {
        if (f_backbone.shape() != f_encdec.shape())
            throw TensorError("fusion_head: branch shape mismatch " +
                              shape_str(f_backbone.shape()) + " vs " + shape_str(f_encdec.shape()));
        Tensor<S> x = concat_channels<S>({f_backbone, f_encdec});
        Tensor<S> y = relu(fusion_dyn_(x));
        return sigmoid(pixel_shuffle(expand_(y), 2));
    }

    Tensor<S> attention(const Tensor<S>& f_backbone, const Tensor<S>& f_encdec) const {
        return fusion_dyn_.attention(concat_channels<S>({f_backbone, f_encdec}));
    }

    Tensor<S> forward(const Tensor<S>& x_lr) {
        const Shape& s = x_lr.shape();
        if (s.size() != 4 || s[1] != 1)
            throw TensorError("generator: expected (N,1,h,w) input, got " + shape_str(s));
        return fusion_head(backbone(x_lr), encoder_decoder(x_lr));
    }

    std::vector<NamedParam<S>> parameters() {
        std::vector<NamedParam<S>> out;
        sfe1_.collect("g.sfe1", out);
        sfe2_.collect("g.sfe2", out);
        for (std::size_t i = 0; i < rdbs_.size(); ++i)
            rdbs_[i].collect("g.rdb" + std::to_string(i), out);
        dff_.collect("g.dff", out);
        enc_in_.collect("g.enc_in", out);
        for (int lvl = 0; lvl < 3; ++lvl) {
            const std::string p = "g.lvl" + std::to_string(lvl);
            enc1_[lvl].collect(p + ".enc1", out);
            enc2_[lvl].collect(p + ".enc2", out);
            skip_rdbs_[lvl].collect(p + ".skip_rdb", out);
            dec_[lvl].collect(p + ".dec", out);
        }
        bottleneck_.collect("g.bottleneck", out);
        fusion_dyn_.collect("g.fusion_dyn", out);
        expand_.collect("g.expand", out);
        return out;
    }

    std::vector<NamedBuffer<S>> buffers() {
        std::vector<NamedBuffer<S>> out;
        enc_in_.collect_buffers("g.enc_in", out);
        for (int lvl = 0; lvl < 3; ++lvl) {
            const std::string p = "g.lvl" + std::to_string(lvl);
            enc1_[lvl].collect_buffers(p + ".enc1", out);
            enc2_[lvl].collect_buffers(p + ".enc2", out);
            dec_[lvl].collect_buffers(p + ".dec", out);
        }
        bottleneck_.collect_buffers("g.bottleneck", out);
        return out;
    }

private:
    GeneratorConfig cfg_;
    bool training_ = true;
    Conv2dLayer<S> sfe1_, sfe2_, dff_, expand_;
    std::vector<RdbBlock<S>> rdbs_;
    ResidualModule<S> enc_in_, bottleneck_;
    std::vector<ResidualModule<S>> enc1_, enc2_, dec_;
    std::vector<RdbBlock<S>> skip_rdbs_;
    DynamicConvLayer<S> fusion_dyn_;
};

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

struct DiscriminatorConfig {
    int base_width = 32;  // ndf; widths ndf, 2ndf, 4ndf, 8ndf, 1
};

// Five 4x4 convs, strides (2,2,2,1,1), padding 1; BN after layers 2-4,
// LeakyReLU(0.2) after layers 1-4, sigmoid output.
template <typename S>
class Discriminator {
public:
    Discriminator() = default;
    Discriminator(const DiscriminatorConfig& cfg, Rng& rng) {
        const int w = cfg.base_width;
        convs_.emplace_back(rng, 1, w, 4, 2, 1);
        convs_.emplace_back(rng, w, 2 * w, 4, 2, 1);
        convs_.emplace_back(rng, 2 * w, 4 * w, 4, 2, 1);
        convs_.emplace_back(rng, 4 * w, 8 * w, 4, 1, 1);
        convs_.emplace_back(rng, 8 * w, 1, 4, 1, 1);
        bns_.emplace_back(2 * w);
        bns_.emplace_back(4 * w);
        bns_.emplace_back(8 * w);
    }

    void set_training(bool t) { training_ = t; }

    Tensor<S> forward(const Tensor<S>& x) {
        const Shape& s = x.shape();
        if (s.size() != 4 || s[1] != 1)
            throw TensorError("discriminator: expected (N,1,H,W) input, got " + shape_str(s));
        if (s[2] < 70 || s[3] < 70)
            throw TensorError("discriminator: input " + shape_str(s) +
                              " smaller than the 70x70 receptive field");
        const BnMode mode = training_ ? BnMode::train : BnMode::eval;
        const S slope = S(0.2);
        Tensor<S> f = leaky_relu(convs_[0](x), slope);
        f = leaky_relu(bns_[0](convs_[1](f), mode), slope);
        f = leaky_relu(bns_[1](convs_[2](f), mode), slope);
        f = leaky_relu(bns_[2](convs_[3](f), mode), slope);
        return sigmoid(convs_[4](f));
    }

    std::vector<ConvSpec> layer_specs() const {
        std::vector<ConvSpec> out;
        for (const auto& c : convs_) out.push_back(c.spec);
        return out;
    }

    std::vector<NamedParam<S>> parameters() {
        std::vector<NamedParam<S>> out;
        for (std::size_t i = 0; i < convs_.size(); ++i)
            convs_[i].collect("d.conv" + std::to_string(i), out);
        for (std::size_t i = 0; i < bns_.size(); ++i)
            bns_[i].collect("d.bn" + std::to_string(i), out);
        return out;
    }

    std::vector<NamedBuffer<S>> buffers() {
        std::vector<NamedBuffer<S>> out;
        for (std::size_t i = 0; i < bns_.size(); ++i)
            bns_[i].collect_buffers("d.bn" + std::to_string(i), out);
        return out;
    }

private:
    bool training_ = true;
    std::vector<Conv2dLayer<S>> convs_;
    std::vector<BatchNorm2dLayer<S>> bns_;
};

// Backward recurrence r <- r*s + (k - s) from the deepest layer to the input.
inline int compute_receptive_field(const std::vector<ConvSpec>& specs) {
    if (specs.empty()) throw TensorError("compute_receptive_field: empty spec list");
    int r = 1;
    for (auto it = specs.rbegin(); it != specs.rend(); ++it)
        r = r * it->stride + (it->kernel - it->stride);
    return r;
}

}  // namespace sasr

#pragma once

// Semi-supervised SASR training: alternating discriminator/generator steps,
// Adam, step-decay schedule, key=value config files, binary checkpoints.

#include "sasr/imaging.hpp"
#include "sasr/losses.hpp"
#include "sasr/models.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sasr {

struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
    double lr0 = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch = 8;
    int epochs = 300;
    int patch_hr = 96;
    double rot_deg = 10.0;
    double lambda_shrink = 0.05;
    double epsilon_shrink = 1e-12;
    int n_patch = 16;
    LossWeights loss_weights;
    std::uint64_t seed = 1;
    int lr_decay_every = 75;
    double lr_decay_factor = 0.5;
    int checkpoint_every = 0;  // epochs; 0 = final only
    bool supervised_only = false;
    bool invert_sparse_selection = false;
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;

    void validate() const;
};

TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string config_to_text(const TrainConfig& cfg);

double lr_schedule(int epoch, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename S>
struct AdamState {
    std::vector<Array<S>> m, v;
    std::int64_t step = 0;
};

template <typename S>
void adam_step(std::vector<NamedParam<S>>& params, AdamState<S>& state, const TrainConfig& cfg,
               double lr) {
    if (state.m.empty()) {
        for (auto& p : params) {
            state.m.push_back(Array<S>::Zero(p.tensor.numel()));
            state.v.push_back(Array<S>::Zero(p.tensor.numel()));
        }
    }
    if (state.m.size() != params.size())
        throw TrainError("adam_step: state/parameter count mismatch");
    for (auto& p : params)
        if (!p.tensor.grad().isFinite().all())
            throw TrainError("adam_step: non-finite gradient in " + p.name + "; step aborted");
    ++state.step;
    const double b1 = cfg.beta1, b2 = cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Array<S>& g = params[i].tensor.grad();
        state.m[i] = static_cast<S>(b1) * state.m[i] + static_cast<S>(1.0 - b1) * g;
        state.v[i] = static_cast<S>(b2) * state.v[i] + static_cast<S>(1.0 - b2) * g.square();
        Array<S> mhat = state.m[i] / static_cast<S>(bc1);
        Array<S> vhat = state.v[i] / static_cast<S>(bc2);
        params[i].tensor.value() -= static_cast<S>(lr) * mhat / (vhat.sqrt() + static_cast<S>(cfg.adam_eps));
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "SASRCKPT", u32 version, epoch, config text, then
// length-prefixed (name, dims, f32 little-endian data) records.
// ---------------------------------------------------------------------------

struct Checkpoint {
    std::uint32_t version = 1;
    std::uint32_t epoch = 0;
    std::string config_text;
    std::vector<std::pair<std::string, std::pair<Shape, std::vector<float>>>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StepLosses {
    double sr = 0.0;      // lambda-weighted L_MSE + L_SSIM on the synthetic branch
    double adv_g = 0.0;
    double se = 0.0;
    double d = 0.0;
    double total_g = 0.0;
};

struct TrainLogRow {
    std::int64_t step;
    double l_sr, l_adv_g, l_se, l_d;
};

class Trainer {
public:
    Trainer(const TrainConfig& cfg);

    // One discriminator update; generator parameters are frozen (no-grad G forward).
    double train_discriminator_step(const std::vector<PairedSample>& batch);
    // One generator update with the full (or supervised-only) objective.
    StepLosses train_generator_step(const std::vector<PairedSample>& batch);

    void train_loop(const std::vector<PairedSample>& corpus, const std::string& out_dir);

    Generator<float>& generator() { return gen_; }
    Discriminator<float>& discriminator() { return disc_; }
    const TrainConfig& config() const { return cfg_; }
    const std::vector<TrainLogRow>& log() const { return log_; }
    double current_lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    Checkpoint make_checkpoint(int epoch) const;
    void restore(const Checkpoint& ckpt);

    // Crops aligned (HR 2s x 2s, LR s x s) patches and applies the shared
    // rotation augmentation; exposed for tests.
    PairedSample sample_patch(const PairedSample& s, Rng& rng) const;

private:
    void zero_grads(std::vector<NamedParam<float>>& params);
    Tensor<float> batch_tensor(const std::vector<PairedSample>& batch,
                               const ImageGray PairedSample::*member) const;

    TrainConfig cfg_;
    Generator<float> gen_;
    Discriminator<float> disc_;
    std::vector<NamedParam<float>> gen_params_, disc_params_;
    AdamState<float> gen_adam_, disc_adam_;
    double lr_;
    std::vector<TrainLogRow> log_;
    std::int64_t global_step_ = 0;
};

ImageGray tensor_to_image(const Tensor<float>& t, int sample_index = 0);
Tensor<float> image_to_tensor(const ImageGray& img);

// Runs the generator in eval mode on one LR image.
ImageGray infer(Generator<float>& gen, const ImageGray& lr);

}  // namespace sasr

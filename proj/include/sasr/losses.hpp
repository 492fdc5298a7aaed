#pragma once

// Training objective: MSE + SSIM super-resolution loss, the adversarial pair,
// and the sparse edge-aware loss with its hard-shrinkage patch weights.

#include "sasr/imaging.hpp"
#include "sasr/tensor.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

namespace sasr {

struct LossWeights {
    double lambda_mse = 1.0;
    double lambda_ssim = 0.5;
    double lambda_adv = 1.0;
    double lambda_se = 0.1;
};

inline constexpr double kProbClamp = 1e-7;

template <typename S>
Tensor<S> loss_mse(const Tensor<S>& pred, const Tensor<S>& target) {
    if (pred.shape() != target.shape())
        throw TensorError("loss_mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                          shape_str(target.shape()));
    return mean(square(sub(pred, target)));
}

// ---------------------------------------------------------------------------
// SSIM (11x11 Gaussian window, sigma 1.5, c1=(0.01)^2, c2=(0.03)^2 on [0,1])
// ---------------------------------------------------------------------------

template <typename S>
struct SsimWindow {
    Tensor<S> kernel;  // (1,1,11,11), non-grad, normalized to sum 1
    ConvSpec spec;

    SsimWindow() {
        const int k = 11;
        const double sigma = 1.5;
        std::vector<S> w(k * k);
        double total = 0.0;
        for (int y = 0; y < k; ++y)
            for (int x = 0; x < k; ++x) {
                const double dy = y - (k - 1) / 2.0, dx = x - (k - 1) / 2.0;
                const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                w[y * k + x] = static_cast<S>(v);
                total += v;
            }
        for (auto& v : w) v = static_cast<S>(static_cast<double>(v) / total);
        kernel = Tensor<S>::from({1, 1, k, k}, std::move(w), false);
        spec = ConvSpec{k, 1, 0, 1, 1};
    }
};

// Mean of the local SSIM map over valid window positions. Shared by the
// training loss and the evaluation metric.
template <typename S>
Tensor<S> ssim_index(const Tensor<S>& f, const Tensor<S>& g) {
    if (f.shape() != g.shape())
        throw TensorError("ssim: shape mismatch " + shape_str(f.shape()) + " vs " +
                          shape_str(g.shape()));
    if (f.ndim() != 4 || f.dim(1) != 1)
        throw TensorError("ssim: expected (N,1,H,W) input, got " + shape_str(f.shape()));
    if (f.dim(2) < 11 || f.dim(3) < 11)
        throw TensorError("ssim: image smaller than the 11x11 window");
    static const SsimWindow<S> win;
    Tensor<S> zero_bias = Tensor<S>::zeros({1});
    auto blur = [&](const Tensor<S>& t) { return conv2d(t, win.kernel, zero_bias, win.spec); };

    const S c1 = S(0.01 * 0.01), c2 = S(0.03 * 0.03);
    Tensor<S> mu_f = blur(f);
    Tensor<S> mu_g = blur(g);
    Tensor<S> mu_ff = mul(mu_f, mu_f);
    Tensor<S> mu_gg = mul(mu_g, mu_g);
    Tensor<S> mu_fg = mul(mu_f, mu_g);
    Tensor<S> var_f = sub(blur(mul(f, f)), mu_ff);
    Tensor<S> var_g = sub(blur(mul(g, g)), mu_gg);
    Tensor<S> cov = sub(blur(mul(f, g)), mu_fg);

    Tensor<S> num = mul(add_scalar(scale(mu_fg, S(2)), c1), add_scalar(scale(cov, S(2)), c2));
    Tensor<S> den = mul(add_scalar(add(mu_ff, mu_gg), c1), add_scalar(add(var_f, var_g), c2));
    return mean(div(num, den));
}

template <typename S>
Tensor<S> loss_ssim(const Tensor<S>& pred, const Tensor<S>& target) {
    return add_scalar(scale(ssim_index(pred, target), S(-1)), S(1));
}

template <typename S>
Tensor<S> loss_sr(const Tensor<S>& pred, const Tensor<S>& target, const LossWeights& w) {
    return add(scale(loss_mse(pred, target), static_cast<S>(w.lambda_mse)),
               scale(loss_ssim(pred, target), static_cast<S>(w.lambda_ssim)));
}

// ---------------------------------------------------------------------------
// Adversarial losses (probability maps clamped before logs)
// ---------------------------------------------------------------------------

template <typename S>
void check_prob_map(const Tensor<S>& t, const char* who) {
    if ((t.value() < S(0)).any() || (t.value() > S(1)).any())
        throw TensorError(std::string(who) + ": values outside [0,1]");
}

// Discriminator minimizes -E[log D(G(D_LR))] - E[log(1 - D(G(I_LR)))].
template <typename S>
Tensor<S> loss_adv_discriminator(const Tensor<S>& d_on_synth_recon,
                                 const Tensor<S>& d_on_real_recon) {
    check_prob_map(d_on_synth_recon, "loss_adv_discriminator");
    check_prob_map(d_on_real_recon, "loss_adv_discriminator");
    const S lo = S(kProbClamp), hi = S(1) - S(kProbClamp);
    Tensor<S> real_term = mean(log_(clamp(d_on_synth_recon, lo, hi)));
    Tensor<S> fake_term = mean(log_(clamp(add_scalar(scale(d_on_real_recon, S(-1)), S(1)), lo, hi)));
    return scale(add(real_term, fake_term), S(-1));
}

// Non-saturating generator objective -E[log D(G(I_LR))].
template <typename S>
Tensor<S> loss_adv_generator(const Tensor<S>& d_on_real_recon) {
    check_prob_map(d_on_real_recon, "loss_adv_generator");
    const S lo = S(kProbClamp), hi = S(1) - S(kProbClamp);
    return scale(mean(log_(clamp(d_on_real_recon, lo, hi))), S(-1));
}

// ---------------------------------------------------------------------------
// Sparse edge-aware loss
// ---------------------------------------------------------------------------

struct SparseWeightGrid {
    int n = 16;          // patch side on the LR grid
    int grid_h = 0;      // patches per column / row
    int grid_w = 0;
    std::vector<double> d;      // per-patch edge distances
    std::vector<double> w_hat;  // shrinkage weights
    double lambda = 0.05;
    double epsilon = 1e-12;

    int patch_count() const { return grid_h * grid_w; }
};

struct SparseWeightOptions {
    double lambda = 0.05;
    double epsilon = 1e-12;
    // Flips the shrinkage selection: weight patches whose edge distance is
    // SMALL instead of large. The default follows the formula as written.
    bool invert_selection = false;
};

// d(t) = mean squared difference of the n x n edge patches;
// w_hat(t) = max(d - lambda, 0) / (|d - lambda| + epsilon).
inline SparseWeightGrid sparse_weights(const EdgeMap& edges_synth, const EdgeMap& edges_real,
                                       int n, const SparseWeightOptions& opt = {}) {
    if (edges_synth.height != edges_real.height || edges_synth.width != edges_real.width)
        throw ImagingError("sparse_weights: edge maps differ in size");
    if (n <= 0 || edges_synth.height % n != 0 || edges_synth.width % n != 0)
        throw ImagingError("sparse_weights: dims " + std::to_string(edges_synth.height) + "x" +
                           std::to_string(edges_synth.width) + " not divisible by n=" +
                           std::to_string(n));
    SparseWeightGrid grid;
    grid.n = n;
    grid.grid_h = edges_synth.height / n;
    grid.grid_w = edges_synth.width / n;
    grid.lambda = opt.lambda;
    grid.epsilon = opt.epsilon;
    const double area = static_cast<double>(n) * n;
    for (int gy = 0; gy < grid.grid_h; ++gy) {
        for (int gx = 0; gx < grid.grid_w; ++gx) {
            double acc = 0.0;
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    const double diff = static_cast<double>(edges_synth.at(gy * n + y, gx * n + x)) -
                                        static_cast<double>(edges_real.at(gy * n + y, gx * n + x));
                    acc += diff * diff;
                }
            const double dt = acc / area;
            const double arg = opt.invert_selection ? (grid.lambda - dt) : (dt - grid.lambda);
            grid.d.push_back(dt);
            grid.w_hat.push_back(std::max(arg, 0.0) / (std::abs(arg) + grid.epsilon));
        }
    }
    return grid;
}

// Differentiable edge surrogate: Gaussian smoothing, Sobel gradients,
// magnitude normalized by the 4*sqrt(2) bound so outputs stay in [0,1].
template <typename S>
Tensor<S> soft_edge_map(const Tensor<S>& img) {
    if (img.ndim() != 4 || img.dim(1) != 1)
        throw TensorError("soft_edge_map: expected (N,1,H,W), got " + shape_str(img.shape()));
    struct Kernels {
        Tensor<S> gauss, sobel_x, sobel_y, zero;
        ConvSpec gspec, sspec;
        Kernels() {
            const int k = 5;
            const double sigma = 1.4;
            std::vector<S> g(k * k);
            double total = 0.0;
            for (int y = 0; y < k; ++y)
                for (int x = 0; x < k; ++x) {
                    const double dy = y - 2.0, dx = x - 2.0;
                    const double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                    g[y * k + x] = static_cast<S>(v);
                    total += v;
                }
            for (auto& v : g) v = static_cast<S>(static_cast<double>(v) / total);
            gauss = Tensor<S>::from({1, 1, k, k}, std::move(g), false);
            sobel_x = Tensor<S>::from({1, 1, 3, 3},
                {S(-1), S(0), S(1), S(-2), S(0), S(2), S(-1), S(0), S(1)}, false);
            sobel_y = Tensor<S>::from({1, 1, 3, 3},
                {S(-1), S(-2), S(-1), S(0), S(0), S(0), S(1), S(2), S(1)}, false);
            zero = Tensor<S>::zeros({1});
            gspec = ConvSpec{5, 1, 2, 1, 1};
            sspec = ConvSpec{3, 1, 1, 1, 1};
        }
    };
    static const Kernels ks;
    Tensor<S> smooth = conv2d(img, ks.gauss, ks.zero, ks.gspec);
    Tensor<S> gx = conv2d(smooth, ks.sobel_x, ks.zero, ks.sspec);
    Tensor<S> gy = conv2d(smooth, ks.sobel_y, ks.zero, ks.sspec);
    Tensor<S> mag = sqrt_eps(add(square(gx), square(gy)), S(1e-12));
    return scale(mag, S(1.0 / (4.0 * 1.4142135623730951)));
}

// Expands per-patch weights into a per-pixel factor image at HR scale:
// each LR patch of side n covers a 2n x 2n HR patch, and the factor already
// folds in the per-patch mean (w_hat / patch area).
template <typename S>
Tensor<S> sparse_weight_image(const std::vector<SparseWeightGrid>& grids, int hr_h, int hr_w) {
    if (grids.empty()) throw TensorError("sparse_weight_image: no grids");
    const int N = static_cast<int>(grids.size());
    Array<S> v = Array<S>::Zero(static_cast<std::int64_t>(N) * hr_h * hr_w);
    for (int s = 0; s < N; ++s) {
        const SparseWeightGrid& g = grids[s];
        const int side = 2 * g.n;
        if (g.grid_h * side != hr_h || g.grid_w * side != hr_w)
            throw TensorError("sparse_weight_image: grid does not tile the HR image");
        const S inv_area = S(1) / static_cast<S>(side * side);
        for (int gy = 0; gy < g.grid_h; ++gy)
            for (int gx = 0; gx < g.grid_w; ++gx) {
                const S wv = static_cast<S>(g.w_hat[gy * g.grid_w + gx]) * inv_area;
                for (int y = 0; y < side; ++y)
                    for (int x = 0; x < side; ++x)
                        v((static_cast<std::int64_t>(s) * hr_h + gy * side + y) * hr_w +
                          gx * side + x) = wv;
            }
    }
    auto node = std::make_shared<Node<S>>();
    node->shape = {N, 1, hr_h, hr_w};
    node->value = std::move(v);
    return Tensor<S>(node);
}

// L_se = sum_t w_hat(t) * mean squared soft-edge difference of patch t,
// averaged over the batch. Differentiable in recon_real only.
template <typename S>
Tensor<S> loss_sparse_edge(const Tensor<S>& recon_real, const Tensor<S>& reference_hr,
                           const std::vector<SparseWeightGrid>& grids) {
    if (recon_real.shape() != reference_hr.shape())
        throw TensorError("loss_sparse_edge: shape mismatch");
    if (recon_real.dim(0) != static_cast<int>(grids.size()))
        throw TensorError("loss_sparse_edge: need one weight grid per batch sample");
    Tensor<S> w_img = sparse_weight_image<S>(grids, recon_real.dim(2), recon_real.dim(3));
    Tensor<S> e_recon = soft_edge_map(recon_real);
    Tensor<S> e_ref;
    {
        NoGradGuard ng;
        e_ref = soft_edge_map(reference_hr);
    }
    Tensor<S> weighted = mul(square(sub(e_recon, e_ref)), w_img);
    return scale(sum(weighted), S(1) / static_cast<S>(recon_real.dim(0)));
}

template <typename S>
struct LossComponents {
    Tensor<S> mse, ssim, adv, se;
};

template <typename S>
Tensor<S> loss_total(const LossComponents<S>& c, const LossWeights& w) {
    Tensor<S> total = scale(c.mse, static_cast<S>(w.lambda_mse));
    total = add(total, scale(c.ssim, static_cast<S>(w.lambda_ssim)));
    if (c.adv.defined()) total = add(total, scale(c.adv, static_cast<S>(w.lambda_adv)));
    if (c.se.defined()) total = add(total, scale(c.se, static_cast<S>(w.lambda_se)));
    return total;
}

}  // namespace sasr

#pragma once

// Classical image processing: bicubic resampling, Canny edges, patch tiling,
// augmentation, the synthetic degradation pipelines, and the vascular
// phantom generator. Everything here is deterministic given (inputs, seed).

#include "sasr/rng.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sasr {

struct ImagingError : std::runtime_error {
    explicit ImagingError(const std::string& msg) : std::runtime_error(msg) {}
};

// 2-D grayscale image, pixels in [0,1], row-major.
struct ImageGray {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    ImageGray() = default;
    ImageGray(int h, int w, double fill = 0.0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return pixels.size(); }
};

// Binary edge/segmentation map, same dims as its source image.
struct EdgeMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    EdgeMap() = default;
    EdgeMap(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

struct PairedSample {
    ImageGray hr;        // I_HR
    ImageGray synth_lr;  // D_LR, bicubic half of hr
    ImageGray real_lr;   // I_LR, simulated wide-FOV acquisition
    std::uint64_t seed = 0;
};

// Catmull-Rom bicubic (a = -0.5), edge-clamped taps, output clamped to [0,1].
ImageGray bicubic_resize(const ImageGray& img, int out_h, int out_w);

struct CannyOptions {
    double sigma = 1.4;  // 5x5 Gaussian
    double low = 0.1;    // fractions of the max gradient magnitude
    double high = 0.2;
};

EdgeMap canny_edges(const ImageGray& img, const CannyOptions& opt = {});

std::vector<ImageGray> tile_patches(const ImageGray& img, int n);
ImageGray reassemble_patches(const std::vector<ImageGray>& tiles, int h, int w);

ImageGray rotate_random(const ImageGray& img, Rng& rng, double max_deg);
ImageGray rotate(const ImageGray& img, double deg);

ImageGray degrade_to_synthetic_lr(const ImageGray& hr);

struct RealisticLrOptions {
    double max_displacement = 2.0;  // px, smooth elastic warp
    double gamma_lo = 0.8;
    double gamma_hi = 1.2;
    double speckle_sigma = 0.1;  // unit-mean multiplicative noise
};

ImageGray simulate_realistic_lr(const ImageGray& hr, Rng& rng, const RealisticLrOptions& opt = {});

struct Phantom {
    ImageGray image;
    EdgeMap vessel_mask;  // ground truth for segmentation-metric tests
};

Phantom generate_phantom_with_mask(Rng& rng, int h, int w);
ImageGray generate_phantom(Rng& rng, int h, int w);

PairedSample make_paired_sample(std::uint64_t seed, int hr_h, int hr_w);

// 8-bit binary PGM (P5), values mapped linearly 0-255 <-> [0,1].
void write_pgm(const std::string& path, const ImageGray& img);
ImageGray read_pgm(const std::string& path);

}  // namespace sasr

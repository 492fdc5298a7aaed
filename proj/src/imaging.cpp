#include "sasr/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>

namespace sasr {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

int clampi(int v, int lo, int hi) { return std::min(hi, std::max(lo, v)); }

// Keys' cubic kernel with a = -0.5 (Catmull-Rom).
double cubic_kernel(double t) {
    const double a = -0.5;
    t = std::abs(t);
    if (t < 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

ImageGray gaussian_blur(const ImageGray& img, double sigma, int radius) {
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        total += k[i + radius];
    }
    for (auto& v : k) v /= total;
    ImageGray tmp(img.height, img.width), out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * img.at(y, clampi(x + i, 0, img.width - 1));
            tmp.at(y, x) = acc;
        }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += k[i + radius] * tmp.at(clampi(y + i, 0, img.height - 1), x);
            out.at(y, x) = acc;
        }
    return out;
}

}  // namespace

ImageGray bicubic_resize(const ImageGray& img, int out_h, int out_w) {
    if (out_h < 4 || out_w < 4)
        throw ImagingError("bicubic_resize: output dims must be >= 4, got " +
                           std::to_string(out_h) + "x" + std::to_string(out_w));
    if (img.height < 1 || img.width < 1) throw ImagingError("bicubic_resize: empty input");
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;

    // separable: rows first
    ImageGray tmp(img.height, out_w);
    for (int x = 0; x < out_w; ++x) {
        const double src = (x + 0.5) * sx - 0.5;
        const int x0 = static_cast<int>(std::floor(src));
        double w[4];
        for (int i = 0; i < 4; ++i) w[i] = cubic_kernel(src - (x0 - 1 + i));
        for (int y = 0; y < img.height; ++y) {
            double acc = 0.0;
            for (int i = 0; i < 4; ++i)
                acc += w[i] * img.at(y, clampi(x0 - 1 + i, 0, img.width - 1));
            tmp.at(y, x) = acc;
        }
    }
    ImageGray out(out_h, out_w);
    for (int y = 0; y < out_h; ++y) {
        const double src = (y + 0.5) * sy - 0.5;
        const int y0 = static_cast<int>(std::floor(src));
        double w[4];
        for (int i = 0; i < 4; ++i) w[i] = cubic_kernel(src - (y0 - 1 + i));
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int i = 0; i < 4; ++i)
                acc += w[i] * tmp.at(clampi(y0 - 1 + i, 0, img.height - 1), x);
            out.at(y, x) = clamp01(acc);
        }
    }
    return out;
}

EdgeMap canny_edges(const ImageGray& img, const CannyOptions& opt) {
    if (!(0.0 < opt.low && opt.low < opt.high && opt.high <= 1.0))
        throw ImagingError("canny_edges: require 0 < low < high <= 1");
    const int H = img.height, W = img.width;
    ImageGray smooth = gaussian_blur(img, opt.sigma, 2);

    std::vector<double> mag(static_cast<std::size_t>(H) * W, 0.0);
    std::vector<double> gx(mag.size(), 0.0), gy(mag.size(), 0.0);
    double max_mag = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            auto px = [&](int yy, int xx) {
                return smooth.at(clampi(yy, 0, H - 1), clampi(xx, 0, W - 1));
            };
            const double dx = px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1) -
                              px(y - 1, x - 1) - 2 * px(y, x - 1) - px(y + 1, x - 1);
            const double dy = px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1) -
                              px(y - 1, x - 1) - 2 * px(y - 1, x) - px(y - 1, x + 1);
            gx[y * W + x] = dx;
            gy[y * W + x] = dy;
            const double m = std::sqrt(dx * dx + dy * dy);
            mag[y * W + x] = m;
            max_mag = std::max(max_mag, m);
        }
    EdgeMap edges(H, W);
    if (max_mag <= 0.0) return edges;

    // non-maximum suppression with 4-direction quantization
    std::vector<double> nms(mag.size(), 0.0);
    for (int y = 1; y < H - 1; ++y)
        for (int x = 1; x < W - 1; ++x) {
            const double m = mag[y * W + x];
            if (m <= 0.0) continue;
            double angle = std::atan2(gy[y * W + x], gx[y * W + x]) * 180.0 / 3.14159265358979323846;
            if (angle < 0) angle += 180.0;
            double n1, n2;
            if (angle < 22.5 || angle >= 157.5) {
                n1 = mag[y * W + x - 1];
                n2 = mag[y * W + x + 1];
            } else if (angle < 67.5) {
                n1 = mag[(y - 1) * W + x + 1];
                n2 = mag[(y + 1) * W + x - 1];
            } else if (angle < 112.5) {
                n1 = mag[(y - 1) * W + x];
                n2 = mag[(y + 1) * W + x];
            } else {
                n1 = mag[(y - 1) * W + x - 1];
                n2 = mag[(y + 1) * W + x + 1];
            }
            if (m >= n1 && m >= n2) nms[y * W + x] = m;
        }

    // double threshold + hysteresis (8-connectivity)
    const double lo = opt.low * max_mag, hi = opt.high * max_mag;
    std::vector<std::uint8_t> state(mag.size(), 0);  // 0 none, 1 weak, 2 strong
    std::deque<int> queue;
    for (int i = 0; i < H * W; ++i) {
        if (nms[i] >= hi) {
            state[i] = 2;
            queue.push_back(i);
        } else if (nms[i] >= lo) {
            state[i] = 1;
        }
    }
    while (!queue.empty()) {
        const int i = queue.front();
        queue.pop_front();
        const int y = i / W, x = i % W;
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int ny = y + dy, nx = x + dx;
                if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                const int j = ny * W + nx;
                if (state[j] == 1) {
                    state[j] = 2;
                    queue.push_back(j);
                }
            }
    }
    for (int i = 0; i < H * W; ++i) edges.pixels[i] = (state[i] == 2) ? 1 : 0;
    return edges;
}

std::vector<ImageGray> tile_patches(const ImageGray& img, int n) {
    if (n <= 0 || img.height % n != 0 || img.width % n != 0)
        throw ImagingError("tile_patches: " + std::to_string(img.height) + "x" +
                           std::to_string(img.width) + " not divisible by n=" + std::to_string(n));
    std::vector<ImageGray> tiles;
    for (int gy = 0; gy < img.height / n; ++gy)
        for (int gx = 0; gx < img.width / n; ++gx) {
            ImageGray t(n, n);
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) t.at(y, x) = img.at(gy * n + y, gx * n + x);
            tiles.push_back(std::move(t));
        }
    return tiles;
}

ImageGray reassemble_patches(const std::vector<ImageGray>& tiles, int h, int w) {
    if (tiles.empty()) throw ImagingError("reassemble_patches: no tiles");
    const int n = tiles[0].height;
    if (n <= 0 || h % n != 0 || w % n != 0 ||
        static_cast<int>(tiles.size()) != (h / n) * (w / n))
        throw ImagingError("reassemble_patches: tiles do not fit target size");
    ImageGray out(h, w);
    int t = 0;
    for (int gy = 0; gy < h / n; ++gy)
        for (int gx = 0; gx < w / n; ++gx, ++t)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) out.at(gy * n + y, gx * n + x) = tiles[t].at(y, x);
    return out;
}

ImageGray rotate(const ImageGray& img, double deg) {
    if (deg == 0.0) return img;
    const double rad = deg * 3.14159265358979323846 / 180.0;
    const double c = std::cos(rad), s = std::sin(rad);
    const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
    ImageGray out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            // inverse map, bilinear sampling, clamped (nearest border fill)
            const double dy = y - cy, dx = x - cx;
            const double sxf = c * dx + s * dy + cx;
            const double syf = -s * dx + c * dy + cy;
            const int x0 = static_cast<int>(std::floor(sxf));
            const int y0 = static_cast<int>(std::floor(syf));
            const double fx = sxf - x0, fy = syf - y0;
            auto px = [&](int yy, int xx) {
                return img.at(clampi(yy, 0, img.height - 1), clampi(xx, 0, img.width - 1));
            };
            out.at(y, x) = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                           fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
        }
    return out;
}

ImageGray rotate_random(const ImageGray& img, Rng& rng, double max_deg) {
    if (max_deg < 0.0) throw ImagingError("rotate_random: max_deg must be >= 0");
    if (max_deg == 0.0) return img;
    return rotate(img, rng.uniform(-max_deg, max_deg));
}

ImageGray degrade_to_synthetic_lr(const ImageGray& hr) {
    if (hr.height % 2 != 0 || hr.width % 2 != 0)
        throw ImagingError("degrade_to_synthetic_lr: dims must be even, got " +
                           std::to_string(hr.height) + "x" + std::to_string(hr.width));
    return bicubic_resize(hr, hr.height / 2, hr.width / 2);
}

ImageGray simulate_realistic_lr(const ImageGray& hr, Rng& rng, const RealisticLrOptions& opt) {
    if (hr.height % 2 != 0 || hr.width % 2 != 0)
        throw ImagingError("simulate_realistic_lr: dims must be even");
    ImageGray warped = hr;
    if (opt.max_displacement > 0.0) {
        // smooth displacement field from a coarse random grid
        const int gh = std::max(hr.height / 32, 3), gw = std::max(hr.width / 32, 3);
        ImageGray coarse_dy(gh, gw), coarse_dx(gh, gw);
        for (auto& v : coarse_dy.pixels) v = rng.uniform(-1.0, 1.0) * 0.5 + 0.5;
        for (auto& v : coarse_dx.pixels) v = rng.uniform(-1.0, 1.0) * 0.5 + 0.5;
        ImageGray dy = bicubic_resize(coarse_dy, hr.height, hr.width);
        ImageGray dx = bicubic_resize(coarse_dx, hr.height, hr.width);
        for (int y = 0; y < hr.height; ++y)
            for (int x = 0; x < hr.width; ++x) {
                const double ddy = (dy.at(y, x) * 2.0 - 1.0) * opt.max_displacement;
                const double ddx = (dx.at(y, x) * 2.0 - 1.0) * opt.max_displacement;
                const double syf = y + ddy, sxf = x + ddx;
                const int y0 = static_cast<int>(std::floor(syf));
                const int x0 = static_cast<int>(std::floor(sxf));
                const double fy = syf - y0, fx = sxf - x0;
                auto px = [&](int yy, int xx) {
                    return hr.at(clampi(yy, 0, hr.height - 1), clampi(xx, 0, hr.width - 1));
                };
                warped.at(y, x) = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
                                  fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
            }
    }
    const double gamma = rng.uniform(opt.gamma_lo, opt.gamma_hi);
    for (auto& v : warped.pixels) {
        double p = (gamma == 1.0) ? v : std::pow(std::max(v, 0.0), gamma);
        if (opt.speckle_sigma > 0.0) p *= std::max(0.0, 1.0 + opt.speckle_sigma * rng.normal());
        v = clamp01(p);
    }
    return bicubic_resize(warped, hr.height / 2, hr.width / 2);
}

Phantom generate_phantom_with_mask(Rng& rng, int h, int w) {
    if (h < 64 || w < 64 || h % 16 != 0 || w % 16 != 0)
        throw ImagingError("generate_phantom: dims must be >= 64 and divisible by 16");
    ImageGray vessels(h, w, 0.0);
    EdgeMap mask(h, w);
    const double cy = h / 2.0 + rng.uniform(-h * 0.03, h * 0.03);
    const double cx = w / 2.0 + rng.uniform(-w * 0.03, w * 0.03);
    const double faz_r = std::min(h, w) * rng.uniform(0.05, 0.09);

    auto stamp = [&](double py, double px, double width, double amp) {
        const int rad = static_cast<int>(std::ceil(3.0 * width));
        for (int yy = clampi(static_cast<int>(py) - rad, 0, h - 1);
             yy <= clampi(static_cast<int>(py) + rad, 0, h - 1); ++yy)
            for (int xx = clampi(static_cast<int>(px) - rad, 0, w - 1);
                 xx <= clampi(static_cast<int>(px) + rad, 0, w - 1); ++xx) {
                const double d2 = (yy - py) * (yy - py) + (xx - px) * (xx - px);
                const double v = amp * std::exp(-d2 / (2.0 * width * width));
                vessels.at(yy, xx) = std::max(vessels.at(yy, xx), v);
            }
    };

    struct Walker {
        double y, x, dir, width;
        int depth;
    };
    std::vector<Walker> frontier;
    const int trunks = 7 + static_cast<int>(rng.uniform_int(4));
    for (int i = 0; i < trunks; ++i) {
        const double ang = (i + rng.uniform(0.0, 0.8)) * 2.0 * 3.14159265358979323846 / trunks;
        frontier.push_back({cy + (faz_r + 2.0) * std::sin(ang), cx + (faz_r + 2.0) * std::cos(ang),
                            ang, rng.uniform(1.1, 1.8), 0});
    }
    const int max_steps = (h + w) / 2;
    while (!frontier.empty()) {
        Walker wk = frontier.back();
        frontier.pop_back();
        for (int step = 0; step < max_steps; ++step) {
            wk.dir += rng.uniform(-0.28, 0.28);
            wk.y += std::sin(wk.dir);
            wk.x += std::cos(wk.dir);
            if (wk.y < 2 || wk.y >= h - 2 || wk.x < 2 || wk.x >= w - 2) break;
            const double dfaz = std::hypot(wk.y - cy, wk.x - cx);
            if (dfaz < faz_r) break;  // capillary-free zone stays dark
            stamp(wk.y, wk.x, wk.width, 0.95);
            wk.width = std::max(0.7, wk.width * 0.9985);
            if (wk.depth < 3 && rng.uniform() < 0.02) {
                Walker child = wk;
                child.dir += rng.uniform(0.5, 1.1) * (rng.uniform() < 0.5 ? 1.0 : -1.0);
                child.width = std::max(0.7, wk.width * 0.75);
                child.depth = wk.depth + 1;
                frontier.push_back(child);
            }
            if (wk.width <= 0.72 && rng.uniform() < 0.01) break;
        }
    }

    // smooth low-frequency background speckle so the texture survives a x2
    // down/up round trip
    const int gh = h / 8, gw = w / 8;
    ImageGray coarse(gh, gw);
    for (auto& v : coarse.pixels) v = rng.uniform();
    ImageGray background = bicubic_resize(coarse, h, w);

    ImageGray img(h, w);
    double lo = 1e9, hi = -1e9;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = vessels.at(y, x) * 0.9 + background.at(y, x) * 0.18 + 0.05;
            img.at(y, x) = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double span = (hi > lo) ? (hi - lo) : 1.0;
    for (auto& v : img.pixels) v = (v - lo) / span;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mask.at(y, x) = vessels.at(y, x) > 0.5 ? 1 : 0;
    return {std::move(img), std::move(mask)};
}

ImageGray generate_phantom(Rng& rng, int h, int w) {
    return generate_phantom_with_mask(rng, h, w).image;
}

PairedSample make_paired_sample(std::uint64_t seed, int hr_h, int hr_w) {
    Rng rng = Rng::split(seed, 0);
    PairedSample s;
    s.seed = seed;
    s.hr = generate_phantom(rng, hr_h, hr_w);
    s.synth_lr = degrade_to_synthetic_lr(s.hr);
    Rng noise_rng = Rng::split(seed, 1);
    s.real_lr = simulate_realistic_lr(s.hr, noise_rng);
    return s;
}

void write_pgm(const std::string& path, const ImageGray& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImagingError("write_pgm: cannot open " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> buf(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
        buf[i] = static_cast<unsigned char>(std::lround(clamp01(img.pixels[i]) * 255.0));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ImagingError("write_pgm: write failed for " + path);
}

ImageGray read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImagingError("read_pgm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw ImagingError("read_pgm: not a binary PGM (P5): " + path);
    auto next_token = [&]() -> long {
        // skip whitespace and '#' comment lines
        while (true) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        long v;
        if (!(in >> v)) throw ImagingError("read_pgm: malformed header in " + path);
        return v;
    };
    const long w = next_token(), h = next_token(), maxval = next_token();
    if (w <= 0 || h <= 0 || maxval != 255)
        throw ImagingError("read_pgm: unsupported header (need maxval 255) in " + path);
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw ImagingError("read_pgm: truncated pixel data in " + path);
    ImageGray img(static_cast<int>(h), static_cast<int>(w));
    for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = buf[i] / 255.0;
    return img;
}

}  // namespace sasr

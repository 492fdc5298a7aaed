#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sasr/imaging.hpp"
#include "sasr/rng.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace sasr;

namespace {

// Cubic polynomial in (x, y) scaled into (0,1) on [0,s)^2.
double cubic_field(double y, double x, double s) {
    const double u = x / s, v = y / s;
    const double p = 0.15 + 0.1 * u + 0.12 * v + 0.08 * u * u - 0.05 * u * v + 0.06 * v * v +
                     0.04 * u * u * u - 0.03 * u * u * v + 0.05 * u * v * v + 0.07 * v * v * v;
    return p;
}

}  // namespace

TEST_CASE("bicubic x2 downsample reproduces cubic polynomials on the interior") {
    const int s = 32;
    ImageGray img(s, s);
    for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) img.at(y, x) = cubic_field(y, x, s);
    ImageGray lr = bicubic_resize(img, s / 2, s / 2);
    REQUIRE(lr.height == 16);
    REQUIRE(lr.width == 16);
    double worst = 0.0;
    for (int y = 1; y < 15; ++y)
        for (int x = 1; x < 15; ++x) {
            // output pixel centers map to source coordinate 2*i + 0.5
            const double want = cubic_field(2.0 * y + 0.5, 2.0 * x + 0.5, s);
            worst = std::max(worst, std::abs(lr.at(y, x) - want));
        }
    CHECK(worst <= 1e-6);
}

TEST_CASE("bicubic resize shape contract: 304 -> 152") {
    ImageGray img(304, 304, 0.5);
    ImageGray half = bicubic_resize(img, 152, 152);
    CHECK(half.height == 152);
    CHECK(half.width == 152);
    // constants are reproduced exactly (kernel has unit DC gain)
    for (double v : half.pixels) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("bicubic upsample of a constant stays constant and in range") {
    ImageGray img(10, 10, 0.8);
    ImageGray up = bicubic_resize(img, 23, 31);
    for (double v : up.pixels) {
        CHECK(v == doctest::Approx(0.8).epsilon(1e-12));
    }
    Rng rng(1);
    ImageGray noisy(12, 12);
    for (auto& v : noisy.pixels) v = rng.uniform(0.0, 1.0);
    ImageGray up2 = bicubic_resize(noisy, 25, 25);
    for (double v : up2.pixels) {
        CHECK(v >= 0.0);  // output clamp
        CHECK(v <= 1.0);
    }
}

TEST_CASE("degrade_to_synthetic_lr halves even dims and rejects odd ones") {
    ImageGray img(32, 48, 0.3);
    ImageGray lr = degrade_to_synthetic_lr(img);
    CHECK(lr.height == 16);
    CHECK(lr.width == 24);
    ImageGray odd(31, 48, 0.3);
    CHECK_THROWS_AS(degrade_to_synthetic_lr(odd), ImagingError);
}

TEST_CASE("canny finds a vertical step edge and nothing in a constant image") {
    const int s = 32;
    ImageGray img(s, s, 0.1);
    for (int y = 0; y < s; ++y)
        for (int x = s / 2; x < s; ++x) img.at(y, x) = 0.9;
    EdgeMap e = canny_edges(img);
    int on_col = 0, off_col = 0;
    for (int y = 4; y < s - 4; ++y) {
        for (int x = s / 2 - 2; x <= s / 2 + 1; ++x) on_col += e.at(y, x) ? 1 : 0;
        off_col += e.at(y, 4) ? 1 : 0;
        off_col += e.at(y, s - 5) ? 1 : 0;
    }
    CHECK(on_col >= s - 8);  // a thin response along the step
    CHECK(off_col == 0);

    ImageGray flat(s, s, 0.5);
    EdgeMap none = canny_edges(flat);
    int total = 0;
    for (auto v : none.pixels) total += v ? 1 : 0;
    CHECK(total == 0);
}

TEST_CASE("canny is deterministic") {
    Rng rng(2);
    ImageGray img(24, 24);
    for (auto& v : img.pixels) v = rng.uniform(0.0, 1.0);
    EdgeMap a = canny_edges(img);
    EdgeMap b = canny_edges(img);
    CHECK(a.pixels == b.pixels);
}

TEST_CASE("tile and reassemble are exact inverses") {
    Rng rng(3);
    ImageGray img(24, 36);
    for (auto& v : img.pixels) v = rng.uniform(0.0, 1.0);
    auto tiles = tile_patches(img, 12);
    CHECK(tiles.size() == 2 * 3);
    for (const auto& t : tiles) {
        CHECK(t.height == 12);
        CHECK(t.width == 12);
    }
    ImageGray back = reassemble_patches(tiles, 24, 36);
    CHECK(back.pixels == img.pixels);  // bitwise
    CHECK_THROWS_AS(tile_patches(img, 7), ImagingError);
    CHECK_THROWS_AS(reassemble_patches(tiles, 24, 24), ImagingError);
}

TEST_CASE("rotation by zero degrees is the identity") {
    Rng rng(4);
    ImageGray img(20, 20);
    for (auto& v : img.pixels) v = rng.uniform(0.0, 1.0);
    ImageGray r = rotate(img, 0.0);
    CHECK(r.pixels == img.pixels);
}

TEST_CASE("rotation keeps values in range and roughly preserves content") {
    ImageGray img(40, 40, 0.0);
    for (int y = 15; y < 25; ++y)
        for (int x = 15; x < 25; ++x) img.at(y, x) = 1.0;
    ImageGray r = rotate(img, 7.5);
    double mass_in = 0.0, mass_out = 0.0;
    for (double v : img.pixels) mass_in += v;
    for (double v : r.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        mass_out += v;
    }
    // the center block stays inside the frame; bilinear keeps the mass close
    CHECK(mass_out == doctest::Approx(mass_in).epsilon(0.05));
    CHECK(r.at(20, 20) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rotate_random stays within the requested angle budget") {
    ImageGray img(16, 16, 0.0);
    img.at(8, 8) = 1.0;
    Rng rng(5);
    ImageGray a = rotate_random(img, rng, 10.0);
    // the bright pixel cannot travel far for <= 10 degrees around the center
    double best = 0.0;
    int by = 0, bx = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            if (a.at(y, x) > best) { best = a.at(y, x); by = y; bx = x; }
    CHECK(std::abs(by - 8) <= 1);
    CHECK(std::abs(bx - 8) <= 1);
}

TEST_CASE("realistic degradation with degenerate options equals plain degradation") {
    Rng prng(6);
    ImageGray hr = generate_phantom(prng, 64, 64);
    RealisticLrOptions opt;
    opt.max_displacement = 0.0;
    opt.gamma_lo = 1.0;
    opt.gamma_hi = 1.0;
    opt.speckle_sigma = 0.0;
    Rng rng(7);
    ImageGray a = simulate_realistic_lr(hr, rng, opt);
    ImageGray b = degrade_to_synthetic_lr(hr);
    REQUIRE(a.pixels.size() == b.pixels.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        worst = std::max(worst, std::abs(a.pixels[i] - b.pixels[i]));
    CHECK(worst <= 1e-9);
}

TEST_CASE("realistic degradation differs from the synthetic one in general") {
    Rng prng(8);
    ImageGray hr = generate_phantom(prng, 64, 64);
    Rng rng(9);
    ImageGray a = simulate_realistic_lr(hr, rng);
    ImageGray b = degrade_to_synthetic_lr(hr);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        diff += std::abs(a.pixels[i] - b.pixels[i]);
    CHECK(diff / a.pixels.size() > 1e-3);
    for (double v : a.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("phantom statistics over many seeds") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        Phantom ph = generate_phantom_with_mask(rng, 96, 96);
        REQUIRE(ph.image.height == 96);
        REQUIRE(ph.image.width == 96);
        double lo = 1.0, hi = 0.0;
        for (double v : ph.image.pixels) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        CHECK(hi - lo > 0.5);  // real contrast, not a flat field
        int vessels = 0;
        for (auto m : ph.vessel_mask.pixels) vessels += m ? 1 : 0;
        const double frac = static_cast<double>(vessels) / ph.image.size();
        CHECK(frac >= 0.05);
        CHECK(frac <= 0.40);
    }
}

TEST_CASE("phantom generation is deterministic in the seed") {
    Rng a(42), b(42);
    Phantom pa = generate_phantom_with_mask(a, 64, 64);
    Phantom pb = generate_phantom_with_mask(b, 64, 64);
    CHECK(pa.image.pixels == pb.image.pixels);
    CHECK(pa.vessel_mask.pixels == pb.vessel_mask.pixels);
}

TEST_CASE("paired samples line up: synth LR is the bicubic half of HR") {
    PairedSample s = make_paired_sample(123, 96, 96);
    CHECK(s.hr.height == 96);
    CHECK(s.synth_lr.height == 48);
    CHECK(s.real_lr.height == 48);
    ImageGray want = degrade_to_synthetic_lr(s.hr);
    CHECK(s.synth_lr.pixels == want.pixels);
}

TEST_CASE("pgm round trip quantizes to at most half a level") {
    Rng rng(10);
    ImageGray img(17, 23);
    for (auto& v : img.pixels) v = rng.uniform(0.0, 1.0);
    const std::string path = "/tmp/sasr_test_roundtrip.pgm";
    write_pgm(path, img);
    ImageGray back = read_pgm(path);
    REQUIRE(back.height == img.height);
    REQUIRE(back.width == img.width);
    double worst = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        worst = std::max(worst, std::abs(img.pixels[i] - back.pixels[i]));
    CHECK(worst <= 1.0 / 510.0 + 1e-12);

    // a second write/read is bit-stable (quantization is idempotent)
    write_pgm(path, back);
    ImageGray again = read_pgm(path);
    CHECK(again.pixels == back.pixels);
    std::filesystem::remove(path);
}

TEST_CASE("pgm reader rejects malformed files") {
    const std::string path = "/tmp/sasr_test_bad.pgm";
    {
        std::ofstream f(path, std::ios::binary);
        f << "P2\n2 2\n255\n0 0 0 0\n";  // ASCII variant unsupported
    }
    CHECK_THROWS_AS(read_pgm(path), ImagingError);
    {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n4 4\n255\n";
        f.write("\0\0", 2);  // truncated payload
    }
    CHECK_THROWS_AS(read_pgm(path), ImagingError);
    CHECK_THROWS_AS(read_pgm("/tmp/sasr_does_not_exist.pgm"), ImagingError);
    std::filesystem::remove(path);
}

TEST_CASE("pgm reader skips comment lines") {
    const std::string path = "/tmp/sasr_test_comment.pgm";
    {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n# produced by a scanner\n2 1\n255\n";
        const unsigned char px[2] = {0, 255};
        f.write(reinterpret_cast<const char*>(px), 2);
    }
    ImageGray img = read_pgm(path);
    CHECK(img.width == 2);
    CHECK(img.height == 1);
    CHECK(img.at(0, 0) == doctest::Approx(0.0));
    CHECK(img.at(0, 1) == doctest::Approx(1.0));
    std::filesystem::remove(path);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sasr/evaluation.hpp"
#include "sasr/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sasr;

namespace {

// Straight-line reference implementations, deliberately naive.
struct Counts {
    long tp = 0, tn = 0, fp = 0, fn = 0;
};

Counts count_confusion(const BinaryMask& pred, const BinaryMask& gt) {
    Counts c;
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const bool p = pred.pixels[i] != 0, g = gt.pixels[i] != 0;
        if (p && g) ++c.tp;
        else if (!p && !g) ++c.tn;
        else if (p) ++c.fp;
        else ++c.fn;
    }
    return c;
}

double auc_pairs(const std::vector<double>& scores, const BinaryMask& gt) {
    // probability a random positive outranks a random negative, ties count 1/2
    double wins = 0.0;
    long np = 0, nn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!gt.pixels[i]) continue;
        ++np;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (gt.pixels[j]) continue;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    for (std::size_t j = 0; j < scores.size(); ++j)
        if (!gt.pixels[j]) ++nn;
    return wins / (static_cast<double>(np) * nn);
}

double hausdorff_naive(const PointSet& xs, const PointSet& ys) {
    double worst = 0.0;
    for (const auto& [ay, ax] : xs) {
        double best = 1e300;
        for (const auto& [by, bx] : ys)
            best = std::min(best, std::hypot(double(ay - by), double(ax - bx)));
        worst = std::max(worst, best);
    }
    return worst;
}

BinaryMask random_mask(Rng& rng, int h, int w, double p) {
    BinaryMask m(h, w);
    for (auto& v : m.pixels) v = rng.uniform() < p ? 1 : 0;
    return m;
}

}  // namespace

TEST_CASE("psnr closed forms") {
    ImageGray a(8, 8, 0.5), b(8, 8, 0.5);
    CHECK(psnr(a, b) == doctest::Approx(99.0));  // identical images cap
    for (auto& v : b.pixels) v = 0.6;            // MSE = 0.01
    CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(1.0 / 0.01)).epsilon(1e-9));
}

TEST_CASE("ssim metric equals 1 on identical images") {
    Rng rng(1);
    ImageGray a(16, 16);
    for (auto& v : a.pixels) v = rng.uniform(0.0, 1.0);
    CHECK(ssim_metric(a, a) == doctest::Approx(1.0).epsilon(1e-9));
    ImageGray b = a;
    for (auto& v : b.pixels) v = 1.0 - v;
    CHECK(ssim_metric(a, b) < 0.5);
}

TEST_CASE("confusion metrics against the oracle on 1000 random masks") {
    Rng rng(2);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = 2 + static_cast<int>(rng.uniform_int(15));
        const int w = 2 + static_cast<int>(rng.uniform_int(15));
        const double d = rng.uniform(0.05, 0.95);
        BinaryMask pred = random_mask(rng, h, w, d);
        BinaryMask gt = random_mask(rng, h, w, rng.uniform(0.05, 0.95));
        ConfusionMetrics m = confusion_metrics(pred, gt);
        Counts c = count_confusion(pred, gt);
        const double total = static_cast<double>(h) * w;

        if (c.tp + c.fn > 0) {
            REQUIRE(m.sen.has_value());
            CHECK(*m.sen == doctest::Approx(double(c.tp) / (c.tp + c.fn)).epsilon(1e-12));
        } else {
            CHECK(!m.sen.has_value());
        }
        REQUIRE(m.acc.has_value());
        CHECK(*m.acc == doctest::Approx((c.tp + c.tn) / total).epsilon(1e-12));
        if (c.tp + c.fn > 0 && c.tn + c.fp > 0) {
            const double sen = double(c.tp) / (c.tp + c.fn);
            const double spe = double(c.tn) / (c.tn + c.fp);
            REQUIRE(m.g_mean.has_value());
            CHECK(*m.g_mean == doctest::Approx(std::sqrt(sen * spe)).epsilon(1e-12));
        }
        if (c.tp + c.fp > 0) {
            REQUIRE(m.fdr.has_value());
            CHECK(*m.fdr == doctest::Approx(double(c.fp) / (c.tp + c.fp)).epsilon(1e-12));
        }
        if (2 * c.tp + c.fp + c.fn > 0) {
            REQUIRE(m.dice.has_value());
            CHECK(*m.dice ==
                  doctest::Approx(2.0 * c.tp / (2.0 * c.tp + c.fp + c.fn)).epsilon(1e-12));
        }
        // kappa: po = acc, pe from the marginals
        const double po = (c.tp + c.tn) / total;
        const double pe = ((c.tp + c.fn) * (c.tp + c.fp) + (c.tn + c.fp) * (c.tn + c.fn)) /
                          (total * total);
        if (std::abs(1.0 - pe) > 1e-15) {
            REQUIRE(m.kappa.has_value());
            CHECK(*m.kappa == doctest::Approx((po - pe) / (1.0 - pe)).epsilon(1e-9));
        }
        ++checked;
    }
    CHECK(checked == 1000);
}

TEST_CASE("confusion metrics degenerate cases") {
    BinaryMask all1(4, 4), all0(4, 4);
    for (auto& v : all1.pixels) v = 1;
    ConfusionMetrics m = confusion_metrics(all1, all1);
    CHECK(*m.sen == 1.0);
    CHECK(*m.acc == 1.0);
    CHECK(!m.kappa.has_value());  // pe == 1, undefined
    ConfusionMetrics m2 = confusion_metrics(all0, all1);
    CHECK(*m2.sen == 0.0);
    CHECK(!m2.fdr.has_value());  // no positive predictions
    BinaryMask other(3, 3);
    CHECK_THROWS(confusion_metrics(all1, other));
}

TEST_CASE("auc against the pairwise oracle on 1000 random instances") {
    Rng rng(3);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = 2 + static_cast<int>(rng.uniform_int(15));
        const int w = 2 + static_cast<int>(rng.uniform_int(15));
        BinaryMask gt = random_mask(rng, h, w, rng.uniform(0.1, 0.9));
        bool pos = false, neg = false;
        for (auto v : gt.pixels) (v ? pos : neg) = true;
        if (!pos || !neg) { gt.pixels[0] = 1; gt.pixels[1] = 0; }
        std::vector<double> scores(gt.pixels.size());
        // quantized scores force ties to exercise the midrank handling
        for (auto& s : scores) s = std::round(rng.uniform(0.0, 1.0) * 8.0) / 8.0;
        CHECK(auc_score(scores, gt) == doctest::Approx(auc_pairs(scores, gt)).epsilon(1e-10));
    }
    BinaryMask oneclass(2, 2);
    CHECK_THROWS(auc_score({0.1, 0.2, 0.3, 0.4}, oneclass));
}

TEST_CASE("auc of a perfect and of a random scorer") {
    BinaryMask gt(1, 4);
    gt.pixels = {0, 0, 1, 1};
    CHECK(auc_score({0.1, 0.2, 0.8, 0.9}, gt) == doctest::Approx(1.0));
    CHECK(auc_score({0.9, 0.8, 0.2, 0.1}, gt) == doctest::Approx(0.0));
    CHECK(auc_score({0.5, 0.5, 0.5, 0.5}, gt) == doctest::Approx(0.5));
}

TEST_CASE("directed hausdorff against the naive oracle on 1000 random sets") {
    Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = 2 + static_cast<int>(rng.uniform_int(15));
        const int w = 2 + static_cast<int>(rng.uniform_int(15));
        BinaryMask a = random_mask(rng, h, w, 0.3);
        BinaryMask b = random_mask(rng, h, w, 0.3);
        a.pixels[0] = 1;
        b.pixels[b.pixels.size() - 1] = 1;
        PointSet pa = mask_points(a), pb = mask_points(b);
        CHECK(hausdorff_directed(pa, pb) ==
              doctest::Approx(hausdorff_naive(pa, pb)).epsilon(1e-12));
    }
    // asymmetry example: {0} vs {0, 10}
    PointSet xs{{0, 0}};
    PointSet ys{{0, 0}, {0, 10}};
    CHECK(hausdorff_directed(xs, ys) == 0.0);
    CHECK(hausdorff_directed(ys, xs) == doctest::Approx(10.0));
}

TEST_CASE("skeletonize thins a thick bar to a unit-width curve") {
    BinaryMask bar(20, 20);
    for (int y = 8; y < 13; ++y)
        for (int x = 2; x < 18; ++x) bar.at(y, x) = 1;
    BinaryMask sk = skeletonize(bar);
    int count = 0;
    for (int x = 5; x < 15; ++x) {  // thinning erodes a couple of end pixels
        int col = 0;
        for (int y = 0; y < 20; ++y) col += sk.at(y, x) ? 1 : 0;
        CHECK(col == 1);  // exactly one pixel per column in the middle
        count += col;
    }
    CHECK(count >= 10);
    // idempotent: a skeleton survives re-skeletonization
    BinaryMask sk2 = skeletonize(sk);
    CHECK(sk2.pixels == sk.pixels);
}

TEST_CASE("vessel length density of a known bar") {
    BinaryMask bar(20, 20);
    for (int x = 2; x < 18; ++x) bar.at(10, x) = 1;  // 16 skeleton pixels
    BinaryMask all(20, 20);
    for (auto& v : all.pixels) v = 1;
    VesselMetrics vm = vessel_metrics(bar, all);
    CHECK(vm.vld == doctest::Approx(16.0 / 400.0));
}

TEST_CASE("tortuosity of a straight segment is exactly 1") {
    BinaryMask line(24, 24);
    for (int x = 3; x < 21; ++x) line.at(12, x) = 1;
    BinaryMask all(24, 24);
    for (auto& v : all.pixels) v = 1;
    VesselMetrics vm = vessel_metrics(line, all);
    REQUIRE(vm.vt.has_value());
    CHECK(*vm.vt == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("tortuosity of a semicircular arc approaches pi/2") {
    const int s = 129;
    BinaryMask arc(s, s);
    const double r = 50.0, cy = 64.0, cx = 64.0;
    for (int i = 0; i <= 2000; ++i) {
        const double th = 3.14159265358979323846 * i / 2000.0;
        const int y = static_cast<int>(std::lround(cy - r * std::sin(th)));
        const int x = static_cast<int>(std::lround(cx + r * std::cos(th)));
        arc.at(y, x) = 1;
    }
    BinaryMask all(s, s);
    for (auto& v : all.pixels) v = 1;
    VesselMetrics vm = vessel_metrics(skeletonize(arc), all);
    REQUIRE(vm.vt.has_value());
    CHECK(*vm.vt == doctest::Approx(3.14159265358979323846 / 2.0).epsilon(0.03));
}

TEST_CASE("circular analysis region") {
    // the radius is the given fraction of the half-extent: 0.5 * 50 = 25 px
    BinaryMask r = circular_region(100, 100, 0.5);
    CHECK(r.at(50, 50) == 1);
    CHECK(r.at(50, 50 + 24) == 1);
    CHECK(r.at(50, 50 + 26) == 0);
    CHECK(r.at(2, 2) == 0);
}

TEST_CASE("csv report layout and aggregate rows") {
    MetricsReport r1, r2;
    r1.sample_id = "a";
    r1.psnr_db = 30.0;
    r1.ssim = 0.9;
    r2.sample_id = "b";
    r2.psnr_db = 34.0;
    r2.ssim = 0.8;
    r2.auc = 0.75;
    const std::string path = "/tmp/sasr_report_test.csv";
    write_report({r1, r2}, path, ReportFormat::csv);
    std::ifstream in(path);
    std::string header, la, lb, lmean, lstd;
    std::getline(in, header);
    std::getline(in, la);
    std::getline(in, lb);
    std::getline(in, lmean);
    std::getline(in, lstd);
    CHECK(header ==
          "sample,psnr_db,ssim,sen,acc,g_mean,kappa,fdr,dice,auc,hausdorff_px,vld,vt");
    CHECK(la.substr(0, 2) == "a,");
    CHECK(lb.substr(0, 2) == "b,");
    CHECK(lmean.substr(0, 15) == "aggregate_mean,");
    CHECK(lstd.substr(0, 14) == "aggregate_std,");
    // mean psnr is 32, std 2 (population)
    std::stringstream ss(lmean);
    std::string tok;
    std::getline(ss, tok, ',');
    std::getline(ss, tok, ',');
    CHECK(std::stod(tok) == doctest::Approx(32.0));
    std::filesystem::remove(path);
}

TEST_CASE("json report parses back with the same numbers") {
    MetricsReport r;
    r.sample_id = "x";
    r.psnr_db = 28.5;
    r.ssim = 0.77;
    r.vld = 0.12;
    const std::string path = "/tmp/sasr_report_test.json";
    write_report({r}, path, ReportFormat::json);
    std::ifstream in(path);
    nlohmann::json j;
    in >> j;
    REQUIRE(j.contains("samples"));
    REQUIRE(j["samples"].size() == 1);
    CHECK(j["samples"][0]["sample"] == "x");
    CHECK(j["samples"][0]["psnr_db"].get<double>() == doctest::Approx(28.5));
    CHECK(j["samples"][0]["vld"].get<double>() == doctest::Approx(0.12));
    CHECK(j["aggregate"]["psnr_db"]["mean"].get<double>() == doctest::Approx(28.5));
    CHECK(j["aggregate"]["psnr_db"]["std"].get<double>() == doctest::Approx(0.0));
    std::filesystem::remove(path);
}

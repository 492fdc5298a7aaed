#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sasr/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace sasr;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.generator.base_width = 8;
    cfg.generator.rdb_growth = 4;
    cfg.generator.rdb_layers = 2;
    cfg.generator.num_rdbs = 2;
    cfg.discriminator.base_width = 8;
    cfg.batch = 2;
    cfg.epochs = 1;
    cfg.patch_hr = 96;
    cfg.seed = 11;
    return cfg;
}

std::vector<PairedSample> tiny_corpus(int count, int size = 96) {
    std::vector<PairedSample> out;
    for (int i = 0; i < count; ++i) out.push_back(make_paired_sample(100 + i, size, size));
    return out;
}

}  // namespace

TEST_CASE("config parser: defaults, overrides, comments") {
    TrainConfig cfg = parse_config_text(
        "# comment line\n"
        "lr0 = 0.001\n"
        "batch = 4\n"
        "\n"
        "supervised_only = true\n"
        "lambda_se = 0.25\n");
    CHECK(cfg.lr0 == doctest::Approx(0.001));
    CHECK(cfg.batch == 4);
    CHECK(cfg.supervised_only);
    CHECK(cfg.loss_weights.lambda_se == doctest::Approx(0.25));
    CHECK(cfg.epochs == 300);  // untouched default
    CHECK(cfg.beta1 == doctest::Approx(0.9));
}

TEST_CASE("config parser rejects unknown keys and bad values") {
    CHECK_THROWS_AS(parse_config_text("learning_rate = 0.1\n"), TrainError);
    CHECK_THROWS_AS(parse_config_text("lr0 = fast\n"), TrainError);
    CHECK_THROWS_AS(parse_config_text("batch\n"), TrainError);
}

TEST_CASE("config round trips through its text form") {
    TrainConfig cfg = tiny_config();
    cfg.lr0 = 3.5e-4;
    cfg.loss_weights.lambda_adv = 0.7;
    cfg.invert_sparse_selection = true;
    TrainConfig back = parse_config_text(config_to_text(cfg));
    CHECK(back.lr0 == doctest::Approx(cfg.lr0));
    CHECK(back.batch == cfg.batch);
    CHECK(back.loss_weights.lambda_adv == doctest::Approx(0.7));
    CHECK(back.invert_sparse_selection);
    CHECK(back.generator.base_width == 8);
}

TEST_CASE("config validation catches nonsense") {
    TrainConfig cfg = tiny_config();
    cfg.batch = 0;
    CHECK_THROWS_AS(cfg.validate(), TrainError);
    cfg = tiny_config();
    cfg.patch_hr = 50;  // not divisible by the pooling pyramid / patch grid
    CHECK_THROWS_AS(cfg.validate(), TrainError);
    cfg = tiny_config();
    cfg.lr0 = -1.0;
    CHECK_THROWS_AS(cfg.validate(), TrainError);
}

TEST_CASE("learning-rate schedule halves every decay period") {
    TrainConfig cfg;
    cfg.lr0 = 1e-4;
    cfg.lr_decay_every = 75;
    cfg.lr_decay_factor = 0.5;
    CHECK(lr_schedule(0, cfg) == doctest::Approx(1e-4));
    CHECK(lr_schedule(74, cfg) == doctest::Approx(1e-4));
    CHECK(lr_schedule(75, cfg) == doctest::Approx(5e-5));
    CHECK(lr_schedule(149, cfg) == doctest::Approx(5e-5));
    CHECK(lr_schedule(150, cfg) == doctest::Approx(2.5e-5));
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    auto t = Tensor<float>::from({3}, {1.0f, -2.0f, 3.0f}, true);
    t.zero_grad();
    std::vector<NamedParam<float>> ps{{"p", t}};
    AdamState<float> st;
    TrainConfig cfg;
    adam_step(ps, st, cfg, 1e-2);
    CHECK(t.value()(0) == 1.0f);
    CHECK(t.value()(1) == -2.0f);
    CHECK(t.value()(2) == 3.0f);
}

TEST_CASE("adam: first step moves by about lr in the gradient direction") {
    auto t = Tensor<float>::from({2}, {0.0f, 0.0f}, true);
    t.zero_grad();
    t.node()->grad_ref()(0) = 0.5f;
    t.node()->grad_ref()(1) = -3.0f;
    std::vector<NamedParam<float>> ps{{"p", t}};
    AdamState<float> st;
    TrainConfig cfg;
    adam_step(ps, st, cfg, 1e-3);
    // bias-corrected first step is -lr * g/(|g| + eps') ~ -lr * sign(g)
    CHECK(t.value()(0) == doctest::Approx(-1e-3).epsilon(1e-3));
    CHECK(t.value()(1) == doctest::Approx(1e-3).epsilon(1e-3));
}

TEST_CASE("adam aborts on non-finite gradients") {
    auto t = Tensor<float>::from({1}, {0.0f}, true);
    t.zero_grad();
    t.node()->grad_ref()(0) = std::numeric_limits<float>::quiet_NaN();
    std::vector<NamedParam<float>> ps{{"p", t}};
    AdamState<float> st;
    TrainConfig cfg;
    CHECK_THROWS_AS(adam_step(ps, st, cfg, 1e-3), TrainError);
}

TEST_CASE("checkpoint round trip is bit exact") {
    TrainConfig cfg = tiny_config();
    Trainer tr(cfg);
    Checkpoint ck = tr.make_checkpoint(7);
    const std::string path = "/tmp/sasr_test_ckpt.ckpt";
    save_checkpoint(path, ck);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.epoch == 7);
    CHECK(back.config_text == ck.config_text);
    REQUIRE(back.tensors.size() == ck.tensors.size());
    for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
        CHECK(back.tensors[i].first == ck.tensors[i].first);
        CHECK(back.tensors[i].second.first == ck.tensors[i].second.first);
        CHECK(back.tensors[i].second.second == ck.tensors[i].second.second);  // bitwise
    }

    // restoring into a differently seeded trainer reproduces the generator
    TrainConfig cfg2 = cfg;
    cfg2.seed = 999;
    Trainer tr2(cfg2);
    tr2.restore(back);
    auto p1 = tr.generator().parameters();
    auto p2 = tr2.generator().parameters();
    for (std::size_t i = 0; i < p1.size(); ++i)
        CHECK((p1[i].tensor.value() - p2[i].tensor.value()).abs().maxCoeff() == 0.0f);
    fs::remove(path);
}

TEST_CASE("checkpoint loader rejects corrupted files") {
    const std::string path = "/tmp/sasr_test_ckpt_bad.ckpt";
    {
        std::ofstream f(path, std::ios::binary);
        f << "NOTACKPT";
    }
    CHECK_THROWS_AS(load_checkpoint(path), TrainError);
    TrainConfig cfg = tiny_config();
    Trainer tr(cfg);
    save_checkpoint(path, tr.make_checkpoint(0));
    // truncate the file in half
    const auto sz = fs::file_size(path);
    fs::resize_file(path, sz / 2);
    CHECK_THROWS_AS(load_checkpoint(path), TrainError);
    CHECK_THROWS_AS(load_checkpoint("/tmp/sasr_no_such.ckpt"), TrainError);
    fs::remove(path);
}

TEST_CASE("sample_patch produces aligned patch triples") {
    TrainConfig cfg = tiny_config();
    Trainer tr(cfg);
    PairedSample s = make_paired_sample(5, 160, 160);
    Rng rng(3);
    PairedSample p = tr.sample_patch(s, rng);
    CHECK(p.hr.height == 96);
    CHECK(p.hr.width == 96);
    CHECK(p.synth_lr.height == 48);
    CHECK(p.real_lr.height == 48);
    // the synthetic LR patch is exactly the degraded HR patch
    ImageGray want = degrade_to_synthetic_lr(p.hr);
    double worst = 0.0;
    for (std::size_t i = 0; i < want.pixels.size(); ++i)
        worst = std::max(worst, std::abs(want.pixels[i] - p.synth_lr.pixels[i]));
    CHECK(worst <= 1e-12);
}

TEST_CASE("one epoch over 8 samples with batch 8 is exactly one step") {
    TrainConfig cfg = tiny_config();
    cfg.batch = 8;
    cfg.epochs = 1;
    cfg.supervised_only = true;  // keep it fast
    Trainer tr(cfg);
    const std::string dir = "/tmp/sasr_test_run_single";
    fs::create_directories(dir);
    tr.train_loop(tiny_corpus(8), dir);
    CHECK(tr.log().size() == 1);
    fs::remove_all(dir);
}

TEST_CASE("generator steps reduce the supervised loss on a fixed batch") {
    TrainConfig cfg = tiny_config();
    cfg.lr0 = 1e-3;
    cfg.supervised_only = true;
    Trainer tr(cfg);
    tr.set_lr(cfg.lr0);
    auto corpus = tiny_corpus(2);
    StepLosses first = tr.train_generator_step(corpus);
    StepLosses last{};
    for (int i = 0; i < 14; ++i) last = tr.train_generator_step(corpus);
    CHECK(last.sr < first.sr);
}

TEST_CASE("discriminator step returns a finite loss and updates parameters") {
    TrainConfig cfg = tiny_config();
    Trainer tr(cfg);
    tr.set_lr(1e-3);
    auto corpus = tiny_corpus(2);
    auto before = tr.discriminator().parameters();
    std::vector<float> w0(before[0].tensor.value().data(),
                          before[0].tensor.value().data() + before[0].tensor.numel());
    const double d = tr.train_discriminator_step(corpus);
    CHECK(std::isfinite(d));
    bool moved = false;
    for (std::int64_t i = 0; i < before[0].tensor.numel(); ++i)
        if (before[0].tensor.value()(i) != w0[i]) moved = true;
    CHECK(moved);
    // the generator must stay untouched by a discriminator step
    Trainer ref(cfg);
    auto ga = tr.generator().parameters();
    auto gb = ref.generator().parameters();
    for (std::size_t i = 0; i < ga.size(); ++i)
        CHECK((ga[i].tensor.value() - gb[i].tensor.value()).abs().maxCoeff() == 0.0f);
}

TEST_CASE("full objective step reports all loss components") {
    TrainConfig cfg = tiny_config();
    Trainer tr(cfg);
    tr.set_lr(1e-4);
    auto corpus = tiny_corpus(2);
    tr.train_discriminator_step(corpus);
    StepLosses l = tr.train_generator_step(corpus);
    CHECK(std::isfinite(l.sr));
    CHECK(std::isfinite(l.adv_g));
    CHECK(std::isfinite(l.se));
    CHECK(std::isfinite(l.total_g));
    CHECK(l.sr > 0.0);
    CHECK(l.adv_g > 0.0);
}

TEST_CASE("training is bit-deterministic given the seed") {
    auto run = [](const std::string& dir) {
        TrainConfig cfg = tiny_config();
        cfg.epochs = 2;
        Trainer tr(cfg);
        fs::create_directories(dir);
        tr.train_loop(tiny_corpus(4), dir);
        return tr.make_checkpoint(2);
    };
    Checkpoint a = run("/tmp/sasr_test_det_a");
    Checkpoint b = run("/tmp/sasr_test_det_b");
    REQUIRE(a.tensors.size() == b.tensors.size());
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        CHECK(a.tensors[i].first == b.tensors[i].first);
        CHECK(a.tensors[i].second.second == b.tensors[i].second.second);  // bitwise
    }
    fs::remove_all("/tmp/sasr_test_det_a");
    fs::remove_all("/tmp/sasr_test_det_b");
}

TEST_CASE("inference doubles the LR image and writes sane values") {
    TrainConfig cfg = tiny_config();
    Trainer tr(cfg);
    PairedSample s = make_paired_sample(77, 96, 96);
    ImageGray out = infer(tr.generator(), s.real_lr);
    CHECK(out.height == 96);
    CHECK(out.width == 96);
    for (double v : out.pixels) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("image/tensor round trip") {
    Rng rng(4);
    ImageGray img(12, 14);
    for (auto& v : img.pixels) v = rng.uniform(0.0, 1.0);
    Tensor<float> t = image_to_tensor(img);
    CHECK(t.shape() == Shape{1, 1, 12, 14});
    ImageGray back = tensor_to_image(t);
    double worst = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        worst = std::max(worst, std::abs(img.pixels[i] - back.pixels[i]));
    CHECK(worst <= 1e-6);  // float cast only
}

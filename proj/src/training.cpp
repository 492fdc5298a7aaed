#include "sasr/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

namespace sasr {

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (lr0 <= 0 || beta1 <= 0 || beta2 <= 0 || adam_eps <= 0)
        throw TrainError("config: optimizer parameters must be positive");
    if (batch <= 0 || epochs <= 0) throw TrainError("config: batch and epochs must be positive");
    if (patch_hr <= 0 || patch_hr % 16 != 0)
        throw TrainError("config: patch_hr must be a positive multiple of 16");
    if (rot_deg < 0) throw TrainError("config: rot_deg must be >= 0");
    if (lambda_shrink < 0 || epsilon_shrink <= 0)
        throw TrainError("config: shrinkage parameters out of range");
    if (n_patch <= 0 || patch_hr % (2 * n_patch) != 0)
        throw TrainError("config: HR patch must tile by 2*n_patch");
    if (lr_decay_every <= 0 || lr_decay_factor <= 0)
        throw TrainError("config: schedule parameters must be positive");
}

namespace {

struct KeyBinding {
    const char* key;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

std::string fmt_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

const std::vector<KeyBinding>& bindings() {
    static const std::vector<KeyBinding> kBindings = {
        {"lr0", [](TrainConfig& c, const std::string& v) { c.lr0 = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.lr0); }},
        {"beta1", [](TrainConfig& c, const std::string& v) { c.beta1 = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.beta1); }},
        {"beta2", [](TrainConfig& c, const std::string& v) { c.beta2 = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.beta2); }},
        {"adam_eps", [](TrainConfig& c, const std::string& v) { c.adam_eps = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.adam_eps); }},
        {"batch", [](TrainConfig& c, const std::string& v) { c.batch = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.batch); }},
        {"epochs", [](TrainConfig& c, const std::string& v) { c.epochs = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.epochs); }},
        {"patch_hr", [](TrainConfig& c, const std::string& v) { c.patch_hr = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.patch_hr); }},
        {"rot_deg", [](TrainConfig& c, const std::string& v) { c.rot_deg = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.rot_deg); }},
        {"lambda_shrink", [](TrainConfig& c, const std::string& v) { c.lambda_shrink = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.lambda_shrink); }},
        {"epsilon_shrink", [](TrainConfig& c, const std::string& v) { c.epsilon_shrink = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.epsilon_shrink); }},
        {"n_patch", [](TrainConfig& c, const std::string& v) { c.n_patch = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.n_patch); }},
        {"lambda_mse", [](TrainConfig& c, const std::string& v) { c.loss_weights.lambda_mse = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.loss_weights.lambda_mse); }},
        {"lambda_ssim", [](TrainConfig& c, const std::string& v) { c.loss_weights.lambda_ssim = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.loss_weights.lambda_ssim); }},
        {"lambda_adv", [](TrainConfig& c, const std::string& v) { c.loss_weights.lambda_adv = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.loss_weights.lambda_adv); }},
        {"lambda_se", [](TrainConfig& c, const std::string& v) { c.loss_weights.lambda_se = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.loss_weights.lambda_se); }},
        {"seed", [](TrainConfig& c, const std::string& v) { c.seed = std::stoull(v); },
         [](const TrainConfig& c) { return std::to_string(c.seed); }},
        {"lr_decay_every", [](TrainConfig& c, const std::string& v) { c.lr_decay_every = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.lr_decay_every); }},
        {"lr_decay_factor", [](TrainConfig& c, const std::string& v) { c.lr_decay_factor = std::stod(v); },
         [](const TrainConfig& c) { return fmt_double(c.lr_decay_factor); }},
        {"checkpoint_every", [](TrainConfig& c, const std::string& v) { c.checkpoint_every = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.checkpoint_every); }},
        {"supervised_only", [](TrainConfig& c, const std::string& v) { c.supervised_only = (v == "1" || v == "true"); },
         [](const TrainConfig& c) { return c.supervised_only ? "true" : "false"; }},
        {"invert_sparse_selection", [](TrainConfig& c, const std::string& v) { c.invert_sparse_selection = (v == "1" || v == "true"); },
         [](const TrainConfig& c) { return c.invert_sparse_selection ? "true" : "false"; }},
        {"base_width", [](TrainConfig& c, const std::string& v) { c.generator.base_width = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.generator.base_width); }},
        {"rdb_growth", [](TrainConfig& c, const std::string& v) { c.generator.rdb_growth = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.generator.rdb_growth); }},
        {"rdb_layers", [](TrainConfig& c, const std::string& v) { c.generator.rdb_layers = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.generator.rdb_layers); }},
        {"num_rdbs", [](TrainConfig& c, const std::string& v) { c.generator.num_rdbs = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.generator.num_rdbs); }},
        {"dynamic_kernels", [](TrainConfig& c, const std::string& v) { c.generator.dynamic_kernels = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.generator.dynamic_kernels); }},
        {"disc_width", [](TrainConfig& c, const std::string& v) { c.discriminator.base_width = std::stoi(v); },
         [](const TrainConfig& c) { return std::to_string(c.discriminator.base_width); }},
    };
    return kBindings;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw TrainError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool found = false;
        for (const auto& b : bindings())
            if (key == b.key) {
                try {
                    b.set(cfg, value);
                } catch (const std::exception&) {
                    throw TrainError("config line " + std::to_string(lineno) + ": bad value '" +
                                     value + "' for key '" + key + "'");
                }
                found = true;
                break;
            }
        if (!found)
            throw TrainError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TrainError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_to_text(const TrainConfig& cfg) {
    std::ostringstream out;
    for (const auto& b : bindings()) out << b.key << " = " << b.get(cfg) << "\n";
    return out.str();
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw TrainError("lr_schedule: negative epoch");
    return cfg.lr0 * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'A', 'S', 'R', 'C', 'K', 'P', 'T'};

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw TrainError("checkpoint: truncated file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TrainError("checkpoint: cannot open " + path + " for writing");
    out.write(kMagic, 8);
    write_u32(out, ckpt.version);
    write_u32(out, ckpt.epoch);
    write_u32(out, static_cast<std::uint32_t>(ckpt.config_text.size()));
    out.write(ckpt.config_text.data(), static_cast<std::streamsize>(ckpt.config_text.size()));
    write_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, rec] : ckpt.tensors) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(out, static_cast<std::uint32_t>(rec.first.size()));
        for (int d : rec.first) write_u32(out, static_cast<std::uint32_t>(d));
        static_assert(sizeof(float) == 4);
        // data is stored little-endian; this writes raw floats (LE hosts)
        out.write(reinterpret_cast<const char*>(rec.second.data()),
                  static_cast<std::streamsize>(rec.second.size() * 4));
    }
    if (!out) throw TrainError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TrainError("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
        throw TrainError("checkpoint: not a checkpoint file (bad magic): " + path);
    Checkpoint ckpt;
    ckpt.version = read_u32(in);
    if (ckpt.version != 1)
        throw TrainError("checkpoint: unsupported format version " + std::to_string(ckpt.version));
    ckpt.epoch = read_u32(in);
    const std::uint32_t cfg_len = read_u32(in);
    ckpt.config_text.resize(cfg_len);
    in.read(ckpt.config_text.data(), cfg_len);
    if (in.gcount() != static_cast<std::streamsize>(cfg_len))
        throw TrainError("checkpoint: truncated file");
    const std::uint32_t count = read_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len))
            throw TrainError("checkpoint: truncated file");
        const std::uint32_t ndim = read_u32(in);
        Shape shape;
        std::int64_t n = 1;
        for (std::uint32_t d = 0; d < ndim; ++d) {
            shape.push_back(static_cast<int>(read_u32(in)));
            n *= shape.back();
        }
        std::vector<float> data(static_cast<std::size_t>(n));
        in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * 4));
        if (in.gcount() != static_cast<std::streamsize>(n * 4))
            throw TrainError("checkpoint: truncated file");
        ckpt.tensors.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

Rng model_rng(std::uint64_t seed, std::uint64_t stream) { return Rng::split(seed, 0xabc0 + stream); }

}  // namespace

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg), lr_(cfg.lr0) {
    cfg_.validate();
    Rng grng = model_rng(cfg.seed, 0);
    gen_ = Generator<float>(cfg.generator, grng);
    Rng drng = model_rng(cfg.seed, 1);
    disc_ = Discriminator<float>(cfg.discriminator, drng);
    gen_params_ = gen_.parameters();
    disc_params_ = disc_.parameters();
}

Tensor<float> image_to_tensor(const ImageGray& img) {
    std::vector<float> d(img.pixels.begin(), img.pixels.end());
    return Tensor<float>::from({1, 1, img.height, img.width}, std::move(d));
}

ImageGray tensor_to_image(const Tensor<float>& t, int sample_index) {
    const Shape& s = t.shape();
    if (s.size() != 4 || s[1] != 1) throw TrainError("tensor_to_image: expected (N,1,H,W)");
    ImageGray img(s[2], s[3]);
    const std::int64_t off = static_cast<std::int64_t>(sample_index) * s[2] * s[3];
    for (std::size_t i = 0; i < img.size(); ++i)
        img.pixels[i] = std::min(1.0, std::max(0.0, static_cast<double>(t.value()(off + i))));
    return img;
}

Tensor<float> Trainer::batch_tensor(const std::vector<PairedSample>& batch,
                                    const ImageGray PairedSample::*member) const {
    const ImageGray& first = batch.front().*member;
    const int h = first.height, w = first.width;
    std::vector<float> data;
    data.reserve(batch.size() * first.size());
    for (const auto& s : batch) {
        const ImageGray& img = s.*member;
        if (img.height != h || img.width != w)
            throw TrainError("batch images differ in size");
        data.insert(data.end(), img.pixels.begin(), img.pixels.end());
    }
    return Tensor<float>::from({static_cast<int>(batch.size()), 1, h, w}, std::move(data));
}

void Trainer::zero_grads(std::vector<NamedParam<float>>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

double Trainer::train_discriminator_step(const std::vector<PairedSample>& batch) {
    if (batch.empty()) throw TrainError("train_discriminator_step: empty batch");
    gen_.set_training(true);
    disc_.set_training(true);
    Tensor<float> recon_synth, recon_real;
    {
        NoGradGuard ng;  // generator is frozen for this step
        recon_synth = gen_.forward(batch_tensor(batch, &PairedSample::synth_lr));
        recon_real = gen_.forward(batch_tensor(batch, &PairedSample::real_lr));
    }
    Tensor<float> d_synth = disc_.forward(recon_synth);
    Tensor<float> d_real = disc_.forward(recon_real);
    Tensor<float> loss = loss_adv_discriminator(d_synth, d_real);
    zero_grads(disc_params_);
    backward(loss);
    adam_step(disc_params_, disc_adam_, cfg_, lr_);
    return static_cast<double>(loss.item());
}

StepLosses Trainer::train_generator_step(const std::vector<PairedSample>& batch) {
    if (batch.empty()) throw TrainError("train_generator_step: empty batch");
    gen_.set_training(true);
    StepLosses out;

    Tensor<float> hr = batch_tensor(batch, &PairedSample::hr);
    Tensor<float> recon_synth = gen_.forward(batch_tensor(batch, &PairedSample::synth_lr));
    LossComponents<float> comps;
    comps.mse = loss_mse(recon_synth, hr);
    comps.ssim = loss_ssim(recon_synth, hr);

    const bool adversarial = !cfg_.supervised_only &&
                             (cfg_.loss_weights.lambda_adv > 0 || cfg_.loss_weights.lambda_se > 0);
    if (adversarial) {
        Tensor<float> recon_real = gen_.forward(batch_tensor(batch, &PairedSample::real_lr));
        if (cfg_.loss_weights.lambda_adv > 0) {
            disc_.set_training(false);  // D frozen: eval BN, no D gradient used
            Tensor<float> d_out;
            {
                // gradient must flow into G through D's weights, so the D
                // forward stays on the tape; only D's parameter updates are
                // skipped (its grads are cleared before its own next step)
                d_out = disc_.forward(recon_real);
            }
            comps.adv = loss_adv_generator(d_out);
            out.adv_g = static_cast<double>(comps.adv.item());
        }
        if (cfg_.loss_weights.lambda_se > 0) {
            SparseWeightOptions swopt;
            swopt.lambda = cfg_.lambda_shrink;
            swopt.epsilon = cfg_.epsilon_shrink;
            swopt.invert_selection = cfg_.invert_sparse_selection;
            std::vector<SparseWeightGrid> grids;
            for (const auto& s : batch)
                grids.push_back(sparse_weights(canny_edges(s.synth_lr), canny_edges(s.real_lr),
                                               cfg_.n_patch, swopt));
            comps.se = loss_sparse_edge(recon_real, hr, grids);
            out.se = static_cast<double>(comps.se.item());
        }
    }

    Tensor<float> total = loss_total(comps, cfg_.loss_weights);
    zero_grads(gen_params_);
    zero_grads(disc_params_);
    backward(total);
    adam_step(gen_params_, gen_adam_, cfg_, lr_);
    zero_grads(disc_params_);  // discard gradients that leaked into frozen D

    out.sr = static_cast<double>(comps.mse.item()) * cfg_.loss_weights.lambda_mse +
             static_cast<double>(comps.ssim.item()) * cfg_.loss_weights.lambda_ssim;
    out.total_g = static_cast<double>(total.item());
    return out;
}

PairedSample Trainer::sample_patch(const PairedSample& s, Rng& rng) const {
    const int hr_side = cfg_.patch_hr;
    const int lr_side = hr_side / 2;
    if (s.hr.height < hr_side || s.hr.width < hr_side)
        throw TrainError("sample_patch: HR image smaller than patch size");
    // even HR offsets keep the LR patch aligned
    const int max_y = (s.hr.height - hr_side) / 2;
    const int max_x = (s.hr.width - hr_side) / 2;
    const int oy = 2 * static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_y) + 1));
    const int ox = 2 * static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_x) + 1));

    auto crop = [](const ImageGray& img, int y0, int x0, int side) {
        ImageGray out(side, side);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) out.at(y, x) = img.at(y0 + y, x0 + x);
        return out;
    };
    PairedSample patch;
    patch.seed = s.seed;
    patch.hr = crop(s.hr, oy, ox, hr_side);
    patch.real_lr = crop(s.real_lr, oy / 2, ox / 2, lr_side);
    if (cfg_.rot_deg > 0) {
        const double deg = rng.uniform(-cfg_.rot_deg, cfg_.rot_deg);
        patch.hr = rotate(patch.hr, deg);
        patch.real_lr = rotate(patch.real_lr, deg);
    }
    patch.synth_lr = degrade_to_synthetic_lr(patch.hr);
    return patch;
}

void Trainer::train_loop(const std::vector<PairedSample>& corpus, const std::string& out_dir) {
    if (corpus.empty()) throw TrainError("train_loop: empty corpus");
    std::ofstream log_out(out_dir + "/loss_log.csv");
    if (!log_out) throw TrainError("train_loop: cannot open loss log in " + out_dir);
    log_out << "step,l_sr,l_adv_g,l_se,l_d\n";

    const bool adversarial = !cfg_.supervised_only;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
        lr_ = lr_schedule(epoch, cfg_);
        Rng erng = Rng::split(cfg_.seed, 0xe90c + static_cast<std::uint64_t>(epoch));
        std::vector<std::size_t> order(corpus.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        erng.shuffle(order);

        for (std::size_t start = 0; start + cfg_.batch <= order.size() || start == 0;
             start += cfg_.batch) {
            std::vector<PairedSample> batch;
            for (int b = 0; b < cfg_.batch; ++b)
                batch.push_back(sample_patch(corpus[order[(start + b) % order.size()]], erng));
            double d_loss = 0.0;
            if (adversarial) d_loss = train_discriminator_step(batch);
            StepLosses g = train_generator_step(batch);
            ++global_step_;
            log_.push_back({global_step_, g.sr, g.adv_g, g.se, d_loss});
            log_out << global_step_ << "," << g.sr << "," << g.adv_g << "," << g.se << ","
                    << d_loss << "\n";
            if (start + cfg_.batch > order.size()) break;
        }
        log_out.flush();
        if (!log_out) throw TrainError("train_loop: loss log write failed");
        if (cfg_.checkpoint_every > 0 && (epoch + 1) % cfg_.checkpoint_every == 0)
            save_checkpoint(out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) + ".ckpt",
                            make_checkpoint(epoch + 1));
    }
    save_checkpoint(out_dir + "/checkpoint_final.ckpt", make_checkpoint(cfg_.epochs));
}

Checkpoint Trainer::make_checkpoint(int epoch) const {
    Checkpoint ckpt;
    ckpt.epoch = static_cast<std::uint32_t>(epoch);
    ckpt.config_text = config_to_text(cfg_);
    auto add_tensor = [&](const std::string& name, const Shape& shape, const float* data,
                          std::int64_t n) {
        ckpt.tensors.emplace_back(name,
                                  std::make_pair(shape, std::vector<float>(data, data + n)));
    };
    auto& self = const_cast<Trainer&>(*this);
    for (auto& p : self.gen_params_)
        add_tensor(p.name, p.tensor.shape(), p.tensor.value().data(), p.tensor.numel());
    for (auto& p : self.disc_params_)
        add_tensor(p.name, p.tensor.shape(), p.tensor.value().data(), p.tensor.numel());
    for (auto& b : self.gen_.buffers())
        add_tensor(b.name, {static_cast<int>(b.data->size())}, b.data->data(), b.data->size());
    for (auto& b : self.disc_.buffers())
        add_tensor(b.name, {static_cast<int>(b.data->size())}, b.data->data(), b.data->size());
    auto add_adam = [&](const char* prefix, const std::vector<NamedParam<float>>& params,
                        const AdamState<float>& st) {
        if (st.m.empty()) return;
        for (std::size_t i = 0; i < params.size(); ++i) {
            add_tensor(std::string(prefix) + ".m." + params[i].name, params[i].tensor.shape(),
                       st.m[i].data(), st.m[i].size());
            add_tensor(std::string(prefix) + ".v." + params[i].name, params[i].tensor.shape(),
                       st.v[i].data(), st.v[i].size());
        }
        const float step = static_cast<float>(st.step);
        add_tensor(std::string(prefix) + ".step", {1}, &step, 1);
    };
    add_adam("adam.g", gen_params_, gen_adam_);
    add_adam("adam.d", disc_params_, disc_adam_);
    return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
    std::map<std::string, const std::pair<Shape, std::vector<float>>*> by_name;
    for (const auto& [name, rec] : ckpt.tensors) by_name[name] = &rec;

    auto load_into = [&](const std::string& name, float* dst, std::int64_t n, bool required) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            if (required) throw TrainError("checkpoint: missing tensor '" + name + "'");
            return false;
        }
        if (static_cast<std::int64_t>(it->second->second.size()) != n)
            throw TrainError("checkpoint: tensor '" + name + "' has wrong size");
        std::copy(it->second->second.begin(), it->second->second.end(), dst);
        return true;
    };
    for (auto& p : gen_params_) load_into(p.name, p.tensor.value().data(), p.tensor.numel(), true);
    for (auto& p : disc_params_) load_into(p.name, p.tensor.value().data(), p.tensor.numel(), true);
    for (auto& b : gen_.buffers()) load_into(b.name, b.data->data(), b.data->size(), true);
    for (auto& b : disc_.buffers()) load_into(b.name, b.data->data(), b.data->size(), true);

    auto load_adam = [&](const char* prefix, const std::vector<NamedParam<float>>& params,
                         AdamState<float>& st) {
        float step = 0;
        if (!load_into(std::string(prefix) + ".step", &step, 1, false)) return;
        st.step = static_cast<std::int64_t>(step);
        st.m.clear();
        st.v.clear();
        for (const auto& p : params) {
            Array<float> m(p.tensor.numel()), v(p.tensor.numel());
            load_into(std::string(prefix) + ".m." + p.name, m.data(), m.size(), true);
            load_into(std::string(prefix) + ".v." + p.name, v.data(), v.size(), true);
            st.m.push_back(std::move(m));
            st.v.push_back(std::move(v));
        }
    };
    load_adam("adam.g", gen_params_, gen_adam_);
    load_adam("adam.d", disc_params_, disc_adam_);
}

ImageGray infer(Generator<float>& gen, const ImageGray& lr) {
    gen.set_training(false);
    NoGradGuard ng;
    return tensor_to_image(gen.forward(image_to_tensor(lr)));
}

}  // namespace sasr

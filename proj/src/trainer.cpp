#include "blnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "blnet/autodiff.hpp"
#include "blnet/error.hpp"
#include "blnet/optimizer.hpp"

namespace blnet::train {

namespace {

// Seed offsets: each consumer gets its own deterministic stream.
constexpr uint32_t kSeedNcbc = 1;
constexpr uint32_t kSeedEnhance = 2;
constexpr uint32_t kSeedPerceptual = 3;
constexpr uint32_t kSeedBatch = 4;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// Keeps decoded pairs around; FIFO eviction so huge datasets stay bounded.
class PairCache {
  public:
    explicit PairCache(const imgio::PairedDataset& ds, size_t cap = 64) : ds_(ds), cap_(cap) {}

    const std::pair<ImageTensor, ImageTensor>& get(size_t i) {
        auto it = items_.find(i);
        if (it != items_.end()) return it->second;
        if (items_.size() >= cap_) {
            items_.erase(fifo_.front());
            fifo_.erase(fifo_.begin());
        }
        fifo_.push_back(i);
        return items_.emplace(i, imgio::load_pair(ds_, i)).first->second;
    }

  private:
    const imgio::PairedDataset& ds_;
    size_t cap_;
    std::map<size_t, std::pair<ImageTensor, ImageTensor>> items_;
    std::vector<size_t> fifo_;
};

// One batch = `batch` independent draws of (pair, y, x) from a single stream.
void fill_batch(PairCache& cache, const imgio::PairedDataset& ds, DetRng& rng, int patch,
                int batch, ImageTensor& low_out, ImageTensor& high_out) {
    low_out = ImageTensor(batch, 3, patch, patch);
    high_out = ImageTensor(batch, 3, patch, patch);
    for (int b = 0; b < batch; ++b) {
        const size_t idx = rng.below(static_cast<uint32_t>(ds.pairs.size()));
        const auto& [low, high] = cache.get(idx);
        if (low.h() < patch || low.w() < patch)
            throw ValueError("patch " + std::to_string(patch) + " exceeds image " +
                             shape_str(low.shape) + " (" + ds.pairs[idx].first + ")");
        const int y = static_cast<int>(rng.below(static_cast<uint32_t>(low.h() - patch + 1)));
        const int x = static_cast<int>(rng.below(static_cast<uint32_t>(low.w() - patch + 1)));
        for (int c = 0; c < 3; ++c)
            for (int py = 0; py < patch; ++py)
                for (int px = 0; px < patch; ++px) {
                    low_out.at(b, c, py, px) = low.at(0, c, y + py, x + px);
                    high_out.at(b, c, py, px) = high.at(0, c, y + py, x + px);
                }
    }
}

void check_config(const imgio::PairedDataset& data, const TrainConfig& cfg) {
    if (data.pairs.empty()) throw ValueError("training dataset is empty");
    if (cfg.steps < 1) throw ValueError("steps must be >= 1");
    if (cfg.batch < 1) throw ValueError("batch must be >= 1");
    if (cfg.patch < 1) throw ValueError("patch must be >= 1");
    if (cfg.learn_rate <= 0) throw ValueError("learn_rate must be positive");
}

void record_row(LossHistory& hist, int step, std::vector<double> row) {
    for (size_t i = 0; i < row.size(); ++i)
        if (!std::isfinite(row[i]))
            throw Error("non-finite loss at step " + std::to_string(step) + ": " +
                        hist.columns[i] + "=" + fmt_double(row[i]) + "; aborting");
    hist.rows.push_back(std::move(row));
}

void maybe_log(const TrainConfig& cfg, int step, double total) {
    if (cfg.log_every > 0 && (step % cfg.log_every == 0 || step == 1 || step == cfg.steps)) {
        std::printf("step %d/%d  total %.6f\n", step, cfg.steps, total);
        std::fflush(stdout);
    }
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

void freeze(nets::NetParams<float>& p) {
    for (auto& node : p.order) {
        node->requires_grad = false;
        node->trainable = false;
        node->grad = Tensor<float>();
    }
}

}  // namespace

std::string LossHistory::to_csv() const {
    std::string out = "step";
    for (const auto& c : columns) out += "," + c;
    out += "\n";
    for (size_t r = 0; r < rows.size(); ++r) {
        out += std::to_string(r + 1);
        for (double v : rows[r]) out += "," + fmt_double(v);
        out += "\n";
    }
    return out;
}

void LossHistory::save_csv(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::string text = to_csv();
    size_t written = std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
    if (written != text.size()) throw IoError("write failed: " + path);
}

std::map<std::string, std::string> config_meta(const TrainConfig& cfg, int step) {
    return {
        {"phase", cfg.phase},
        {"step", std::to_string(step)},
        {"steps", std::to_string(cfg.steps)},
        {"batch", std::to_string(cfg.batch)},
        {"patch", std::to_string(cfg.patch)},
        {"learn_rate", fmt_double(cfg.learn_rate)},
        {"seed", std::to_string(cfg.seed)},
        {"ncbc_noise_weight", fmt_double(cfg.ncbc_noise_weight)},
        {"base_channels", std::to_string(cfg.base_channels)},
        {"depth", std::to_string(cfg.depth)},
        {"feat_channels", std::to_string(cfg.feat_channels)},
    };
}

void save_phase1_checkpoint(const std::string& path, const nets::NetParams<float>& decom,
                            const nets::NetParams<float>& ncbc,
                            const std::map<std::string, std::string>& meta) {
    ckpt::Checkpoint ck;
    ck.meta = meta;
    ckpt::append_params(ck, "decom/", decom);
    ckpt::append_params(ck, "ncbc/", ncbc);
    ckpt::save_checkpoint(ck, path);
}

void save_phase2_checkpoint(const std::string& path, const nets::NetParams<float>& decom,
                            const nets::NetParams<float>& enh,
                            const std::map<std::string, std::string>& meta) {
    ckpt::Checkpoint ck;
    ck.meta = meta;
    ckpt::append_params(ck, "decom/", decom);
    ckpt::append_params(ck, "enh/", enh);
    ckpt::save_checkpoint(ck, path);
}

nets::UNetConfig unet_config_from_meta(const ckpt::Checkpoint& ck, bool enhance_net) {
    nets::UNetConfig cfg = enhance_net ? nets::UNetConfig::enhance() : nets::UNetConfig::decom();
    auto it = ck.meta.find("base_channels");
    if (it != ck.meta.end()) cfg.base_channels = std::stoi(it->second);
    it = ck.meta.find("depth");
    if (it != ck.meta.end()) cfg.depth = std::stoi(it->second);
    return cfg;
}

void save_perceptual(const std::string& path, const losses::PerceptualExtractor<float>& ex) {
    ckpt::Checkpoint ck;
    ck.meta = {{"kind", "perceptual"}, {"tap", std::to_string(ex.tap)}};
    ckpt::append_params(ck, "perceptual/", ex.params);
    ckpt::save_checkpoint(ck, path);
}

losses::PerceptualExtractor<float> load_perceptual(const std::string& path) {
    auto ck = ckpt::load_checkpoint(path);
    auto ex = losses::make_perceptual_extractor<float>(0);
    ckpt::read_params(ck, "perceptual/", ex.params);
    ex.mode = losses::PerceptualExtractor<float>::Mode::file_loaded;
    auto it = ck.meta.find("tap");
    if (it != ck.meta.end()) ex.tap = std::stoi(it->second);
    return ex;
}

nets::NetParams<float> load_decom_params(const ckpt::Checkpoint& ck, const nets::UNetConfig& cfg) {
    auto p = nets::make_unet_params<float>(cfg, 0);
    ckpt::read_params(ck, "decom/", p);
    return p;
}

nets::NetParams<float> load_ncbc_params(const ckpt::Checkpoint& ck, const nets::NCBCConfig& cfg) {
    auto p = nets::make_ncbc_params<float>(cfg, 0);
    ckpt::read_params(ck, "ncbc/", p);
    return p;
}

nets::NetParams<float> load_enhance_params(const ckpt::Checkpoint& ck,
                                           const nets::UNetConfig& cfg) {
    auto p = nets::make_unet_params<float>(cfg, 0);
    ckpt::read_params(ck, "enh/", p);
    return p;
}

DecomTrainResult train_decomposition(const imgio::PairedDataset& data, const TrainConfig& cfg) {
    check_config(data, cfg);
    const auto dcfg = cfg.decom_config();
    const auto ncfg = cfg.ncbc_config();
    auto decom = nets::make_unet_params<float>(dcfg, cfg.seed);
    auto ncbc = nets::make_ncbc_params<float>(ncfg, cfg.seed + kSeedNcbc);
    if (!cfg.resume_path.empty()) {
        auto ck = ckpt::load_checkpoint(cfg.resume_path);
        ckpt::read_params(ck, "decom/", decom);
        ckpt::read_params(ck, "ncbc/", ncbc);
    }

    losses::LossWeights w;
    w.ncbc_noise = cfg.ncbc_noise_weight;
    opt::AdamState<float> st_decom, st_ncbc;
    DetRng rng(cfg.seed + kSeedBatch);
    PairCache cache(data);

    DecomTrainResult out;
    out.history.columns = {"rc",    "smooth", "equal", "decom_total", "tv",
                           "mse",   "noise",  "color", "ncbc_total",  "total"};

    ImageTensor low, high;
    for (int step = 1; step <= cfg.steps; ++step) {
        fill_batch(cache, data, rng, cfg.patch, cfg.batch, low, high);
        auto s_low = ad::constant(low, "s_low");
        auto s_high = ad::constant(high, "s_high");
        auto [r_low, l_low] = nets::decom_forward(decom, dcfg, s_low);
        auto [r_high, l_high] = nets::decom_forward(decom, dcfg, s_high);
        auto dl = losses::compute_decom_losses(r_low, r_high, l_low, l_high, s_low, s_high, w);
        auto f_low = nets::ncbc_forward(ncbc, ncfg, r_low);
        auto f_high = nets::ncbc_forward(ncbc, ncfg, r_high);
        auto nl = losses::compute_ncbc_losses(f_low, f_high, r_low, r_high, w);
        auto total = ad::add(dl.total, nl.total);

        record_row(out.history, step,
                   {dl.rc->value.data[0], dl.smooth->value.data[0], dl.equal->value.data[0],
                    dl.total->value.data[0], nl.tv->value.data[0], nl.mse->value.data[0],
                    nl.noise->value.data[0], nl.color->value.data[0], nl.total->value.data[0],
                    total->value.data[0]});
        maybe_log(cfg, step, total->value.data[0]);

        ad::backward(total);
        opt::adam_step(decom, st_decom, cfg.learn_rate, cfg.adam_beta1, cfg.adam_beta2,
                       cfg.adam_eps);
        opt::adam_step(ncbc, st_ncbc, cfg.learn_rate, cfg.adam_beta1, cfg.adam_beta2,
                       cfg.adam_eps);

        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
            save_phase1_checkpoint(
                join_path(cfg.out_dir, "decom_step" + std::to_string(step) + ".blnt"), decom, ncbc,
                config_meta(cfg, step));
    }
    if (!cfg.out_dir.empty())
        save_phase1_checkpoint(join_path(cfg.out_dir, "decom.blnt"), decom, ncbc,
                               config_meta(cfg, cfg.steps));
    out.decom = std::move(decom);
    out.ncbc = std::move(ncbc);
    return out;
}

EnhanceTrainResult train_enhancement(const imgio::PairedDataset& data,
                                     const nets::NetParams<float>& decom_in,
                                     const TrainConfig& cfg) {
    check_config(data, cfg);
    const auto dcfg = cfg.decom_config();
    const auto ecfg = cfg.enhance_config();

    auto frozen = nets::clone_params(decom_in);
    freeze(frozen);
    std::vector<std::vector<float>> snapshot;
    snapshot.reserve(frozen.order.size());
    for (const auto& p : frozen.order) snapshot.push_back(p->value.data);

    auto enh = nets::make_unet_params<float>(ecfg, cfg.seed + kSeedEnhance);
    auto ex = cfg.perceptual_path.empty()
                  ? losses::make_perceptual_extractor<float>(cfg.seed + kSeedPerceptual)
                  : load_perceptual(cfg.perceptual_path);

    losses::LossWeights w;
    opt::AdamState<float> st;
    DetRng rng(cfg.seed + kSeedBatch);
    PairCache cache(data);

    EnhanceTrainResult out;
    out.history.columns = {"rc", "bri", "per", "grad", "total"};

    ImageTensor low, high;
    for (int step = 1; step <= cfg.steps; ++step) {
        fill_batch(cache, data, rng, cfg.patch, cfg.batch, low, high);
        auto s_low = ad::constant(low, "s_low");
        auto s_high = ad::constant(high, "s_high");
        // frozen decomposition of both sides, detached from the graph
        auto low_pair = nets::decom_forward(frozen, dcfg, s_low);
        auto high_pair = nets::decom_forward(frozen, dcfg, s_high);
        auto r_low = ad::constant(low_pair.reflectance->value, "r_low");
        auto l_low = ad::constant(low_pair.illumination->value, "l_low");
        auto l_high = ad::constant(high_pair.illumination->value, "l_high");

        auto l_out = nets::enhance_forward(enh, ecfg, r_low, l_low);
        auto el = losses::compute_enhance_losses(r_low, l_out, l_high, s_high, ex, w);

        record_row(out.history, step,
                   {el.rc->value.data[0], el.bri->value.data[0], el.per->value.data[0],
                    el.grad->value.data[0], el.total->value.data[0]});
        maybe_log(cfg, step, el.total->value.data[0]);

        ad::backward(el.total);
        opt::adam_step(enh, st, cfg.learn_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

        if (!cfg.out_dir.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
            save_phase2_checkpoint(
                join_path(cfg.out_dir, "enhance_step" + std::to_string(step) + ".blnt"), frozen,
                enh, config_meta(cfg, step));
    }

    for (size_t i = 0; i < frozen.order.size(); ++i)
        if (frozen.order[i]->value.data != snapshot[i])
            throw Error("frozen decomposition parameters changed during enhancement training");

    if (!cfg.out_dir.empty())
        save_phase2_checkpoint(join_path(cfg.out_dir, "enhance.blnt"), frozen, enh,
                               config_meta(cfg, cfg.steps));
    out.enhance = std::move(enh);
    return out;
}

DecomOutput run_decomposition(const nets::NetParams<float>& decom, const nets::UNetConfig& cfg,
                              const ImageTensor& image) {
    auto s = ad::constant(image, "s");
    auto pair = nets::decom_forward(decom, cfg, s);
    return {pair.reflectance->value, pair.illumination->value};
}

ImageTensor run_enhancement(const nets::NetParams<float>& decom, const nets::UNetConfig& dcfg,
                            const nets::NetParams<float>& enh, const nets::UNetConfig& ecfg,
                            const ImageTensor& low) {
    auto d = run_decomposition(decom, dcfg, low);
    auto r = ad::constant(d.reflectance, "r_low");
    auto l = ad::constant(d.illumination, "l_low");
    auto l_out = nets::enhance_forward(enh, ecfg, r, l);
    return nets::reconstruct(r, l_out)->value;
}

}  // namespace blnet::train

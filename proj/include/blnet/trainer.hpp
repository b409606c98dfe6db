#pragma once

#include <map>
#include <string>
#include <vector>

#include "blnet/checkpoint.hpp"
#include "blnet/dataset.hpp"
#include "blnet/losses.hpp"
#include "blnet/nets.hpp"
#include "blnet/tensor.hpp"

// Two-phase training driver. Phase 1 ("decom") trains the decomposition
// U-Net jointly with the feature-module losses; phase 2 ("enhance") freezes
// decomposition and trains the enhancement U-Net.
namespace blnet::train {

struct TrainConfig {
    std::string phase = "decom";  // "decom" | "enhance"
    int steps = 1000;
    int batch = 4;
    int patch = 64;
    double learn_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    uint32_t seed = 1;
    double ncbc_noise_weight = 0.2;  // ablation knob
    int checkpoint_every = 0;        // 0 = final checkpoint only
    int log_every = 100;             // 0 = silent
    // architecture (desk-scale defaults)
    int base_channels = 16;
    int depth = 4;
    int feat_channels = 32;
    // plumbing
    std::string out_dir;          // empty = write no files
    std::string perceptual_path;  // phase 2: load extractor weights instead of seeding
    std::string resume_path;      // phase 1: continue from an earlier checkpoint

    nets::UNetConfig decom_config() const {
        nets::UNetConfig c = nets::UNetConfig::decom();
        c.base_channels = base_channels;
        c.depth = depth;
        return c;
    }
    nets::UNetConfig enhance_config() const {
        nets::UNetConfig c = nets::UNetConfig::enhance();
        c.base_channels = base_channels;
        c.depth = depth;
        return c;
    }
    nets::NCBCConfig ncbc_config() const {
        nets::NCBCConfig c;
        c.feat_channels = feat_channels;
        return c;
    }
};

// Per-step loss components; one column set per phase, "total" always last.
struct LossHistory {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::string to_csv() const;
    void save_csv(const std::string& path) const;
};

struct DecomTrainResult {
    nets::NetParams<float> decom;
    nets::NetParams<float> ncbc;
    LossHistory history;
};

struct EnhanceTrainResult {
    nets::NetParams<float> enhance;
    LossHistory history;
};

DecomTrainResult train_decomposition(const imgio::PairedDataset& data, const TrainConfig& cfg);

EnhanceTrainResult train_enhancement(const imgio::PairedDataset& data,
                                     const nets::NetParams<float>& decom, const TrainConfig& cfg);

// ---- checkpoint plumbing ----

std::map<std::string, std::string> config_meta(const TrainConfig& cfg, int step);

void save_phase1_checkpoint(const std::string& path, const nets::NetParams<float>& decom,
                            const nets::NetParams<float>& ncbc,
                            const std::map<std::string, std::string>& meta);
void save_phase2_checkpoint(const std::string& path, const nets::NetParams<float>& decom,
                            const nets::NetParams<float>& enh,
                            const std::map<std::string, std::string>& meta);

// Reads architecture fields back out of checkpoint metadata (defaults if absent).
nets::UNetConfig unet_config_from_meta(const ckpt::Checkpoint& ck, bool enhance_net);

// Perceptual extractor weights stored under "perceptual/" in the same format.
void save_perceptual(const std::string& path, const losses::PerceptualExtractor<float>& ex);
losses::PerceptualExtractor<float> load_perceptual(const std::string& path);

nets::NetParams<float> load_decom_params(const ckpt::Checkpoint& ck, const nets::UNetConfig& cfg);
nets::NetParams<float> load_ncbc_params(const ckpt::Checkpoint& ck, const nets::NCBCConfig& cfg);
nets::NetParams<float> load_enhance_params(const ckpt::Checkpoint& ck,
                                           const nets::UNetConfig& cfg);

// ---- inference helpers (single image, batch dim 1) ----

struct DecomOutput {
    ImageTensor reflectance;   // (1,3,h,w)
    ImageTensor illumination;  // (1,1,h,w)
};

DecomOutput run_decomposition(const nets::NetParams<float>& decom, const nets::UNetConfig& cfg,
                              const ImageTensor& image);

// Full pipeline: decompose, brighten illumination, recombine.
ImageTensor run_enhancement(const nets::NetParams<float>& decom, const nets::UNetConfig& dcfg,
                            const nets::NetParams<float>& enh, const nets::UNetConfig& ecfg,
                            const ImageTensor& low);

}  // namespace blnet::train

// Command-line surface: training, inference, evaluation, and the
// finite-difference self-check. Exit codes: 0 success, 1 runtime failure,
// 2 usage error.
#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "blnet/checkpoint.hpp"
#include "blnet/dataset.hpp"
#include "blnet/error.hpp"
#include "blnet/gradcheck.hpp"
#include "blnet/image_io.hpp"
#include "blnet/metrics.hpp"
#include "blnet/nets.hpp"
#include "blnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace blnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int env_threads() {
    const char* raw = std::getenv("BLNET_THREADS");
    if (!raw || !*raw) return 1;
    char* end = nullptr;
    const long v = std::strtol(raw, &end, 10);
    if (end == raw || *end != '\0' || v < 1) {
        std::fprintf(stderr, "warning: ignoring invalid BLNET_THREADS=%s\n", raw);
        return 1;
    }
    return static_cast<int>(std::min<long>(v, 256));
}

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// key=value lines, '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open config file: " + path);
    std::string text;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) text.append(buf, n);
    std::fclose(f);

    std::map<std::string, std::string> out;
    size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    const size_t written = std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
    if (written != text.size()) throw IoError("write failed: " + path);
}

void freeze_all(nets::NetParams<float>& p) {
    for (auto& node : p.order) {
        node->requires_grad = false;
        node->trainable = false;
        node->grad = Tensor<float>();
    }
}

// ---- train ----

struct TrainArgs {
    std::string phase;
    std::string data, out, config, resume, perceptual;
    train::TrainConfig cfg;
};

long to_long(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        long r = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw UsageError("config key " + key + ": not an integer: " + v);
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw UsageError("config key " + key + ": not a number: " + v);
    }
}

// Config file fills in settings the command line left untouched; explicit
// flags always win. Unknown keys are rejected outright.
void apply_config_file(TrainArgs& a, const CLI::App* cmd) {
    if (a.config.empty()) return;
    auto flag_given = [&](const char* flag) { return cmd->count(flag) > 0; };
    for (const auto& [key, value] : read_config_file(a.config)) {
        if (key == "data") {
            if (!flag_given("--data")) a.data = value;
        } else if (key == "out") {
            if (!flag_given("--out")) a.out = value;
        } else if (key == "resume") {
            if (!flag_given("--resume")) a.resume = value;
        } else if (key == "perceptual") {
            if (!flag_given("--perceptual")) a.perceptual = value;
        } else if (key == "steps") {
            if (!flag_given("--steps")) a.cfg.steps = static_cast<int>(to_long(key, value));
        } else if (key == "batch") {
            if (!flag_given("--batch")) a.cfg.batch = static_cast<int>(to_long(key, value));
        } else if (key == "patch") {
            if (!flag_given("--patch")) a.cfg.patch = static_cast<int>(to_long(key, value));
        } else if (key == "seed") {
            if (!flag_given("--seed")) a.cfg.seed = static_cast<uint32_t>(to_long(key, value));
        } else if (key == "lr") {
            if (!flag_given("--lr")) a.cfg.learn_rate = to_double(key, value);
        } else if (key == "ncbc_noise_weight") {
            if (!flag_given("--ncbc-noise-weight"))
                a.cfg.ncbc_noise_weight = to_double(key, value);
        } else if (key == "checkpoint_every") {
            if (!flag_given("--checkpoint-every"))
                a.cfg.checkpoint_every = static_cast<int>(to_long(key, value));
        } else if (key == "log_every") {
            if (!flag_given("--log-every")) a.cfg.log_every = static_cast<int>(to_long(key, value));
        } else if (key == "base_channels") {
            if (!flag_given("--base-channels"))
                a.cfg.base_channels = static_cast<int>(to_long(key, value));
        } else if (key == "depth") {
            if (!flag_given("--depth")) a.cfg.depth = static_cast<int>(to_long(key, value));
        } else if (key == "feat_channels") {
            if (!flag_given("--feat-channels"))
                a.cfg.feat_channels = static_cast<int>(to_long(key, value));
        } else {
            throw UsageError("unknown config key: " + key);
        }
    }
}

void print_train_settings(const TrainArgs& a) {
    std::printf("settings:\n");
    std::printf("  phase = %s\n", a.phase.c_str());
    std::printf("  data = %s\n", a.data.c_str());
    std::printf("  out = %s\n", a.out.c_str());
    std::printf("  steps = %d\n", a.cfg.steps);
    std::printf("  batch = %d\n", a.cfg.batch);
    std::printf("  patch = %d\n", a.cfg.patch);
    std::printf("  lr = %g\n", a.cfg.learn_rate);
    std::printf("  seed = %u\n", a.cfg.seed);
    std::printf("  ncbc_noise_weight = %g\n", a.cfg.ncbc_noise_weight);
    std::printf("  checkpoint_every = %d\n", a.cfg.checkpoint_every);
    std::printf("  log_every = %d\n", a.cfg.log_every);
    std::printf("  base_channels = %d\n", a.cfg.base_channels);
    std::printf("  depth = %d\n", a.cfg.depth);
    std::printf("  feat_channels = %d\n", a.cfg.feat_channels);
    std::printf("  resume = %s\n", a.resume.empty() ? "(none)" : a.resume.c_str());
    std::printf("  perceptual = %s\n", a.perceptual.empty() ? "(seeded)" : a.perceptual.c_str());
    std::fflush(stdout);
}

int cmd_train(TrainArgs& a) {
    if (a.data.empty()) throw UsageError("train: missing --data");
    if (a.out.empty()) throw UsageError("train: missing --out");
    if (a.phase == "enhance" && a.resume.empty())
        throw UsageError("train enhance: missing --resume (phase-1 checkpoint)");

    a.cfg.phase = a.phase;
    a.cfg.out_dir = a.out;
    a.cfg.perceptual_path = a.perceptual;
    print_train_settings(a);

    fs::create_directories(a.out);
    std::vector<std::string> warnings;
    auto data = imgio::scan_dataset(a.data, &warnings);
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::printf("dataset: %zu pairs under %s\n", data.size(), a.data.c_str());

    if (a.phase == "decom") {
        a.cfg.resume_path = a.resume;
        auto result = train::train_decomposition(data, a.cfg);
        const std::string csv = (fs::path(a.out) / "loss_decom.csv").string();
        result.history.save_csv(csv);
        std::printf("wrote %s\n", csv.c_str());
        std::printf("wrote %s\n", (fs::path(a.out) / "decom.blnt").string().c_str());
    } else {
        auto ck = ckpt::load_checkpoint(a.resume);
        const auto dcfg = train::unet_config_from_meta(ck, false);
        a.cfg.base_channels = dcfg.base_channels;  // enhancement net mirrors the scale
        a.cfg.depth = dcfg.depth;
        auto decom = train::load_decom_params(ck, dcfg);
        auto result = train::train_enhancement(data, decom, a.cfg);
        const std::string csv = (fs::path(a.out) / "loss_enhance.csv").string();
        result.history.save_csv(csv);
        std::printf("wrote %s\n", csv.c_str());
        std::printf("wrote %s\n", (fs::path(a.out) / "enhance.blnt").string().c_str());
    }
    return kExitOk;
}

// ---- inference commands ----

// (input path, output path) pairs in lexicographic input order
std::vector<std::pair<std::string, std::string>> plan_io(const std::string& input,
                                                         const std::string& output,
                                                         bool out_is_dir_hint) {
    std::vector<std::pair<std::string, std::string>> plan;
    if (fs::is_directory(input)) {
        auto files = imgio::list_images(input);
        if (files.empty()) throw IoError("no images in " + input);
        fs::create_directories(output);
        for (const auto& [name, path] : files)
            plan.emplace_back(path, (fs::path(output) / name).string());
    } else {
        if (!fs::exists(input)) throw IoError("input not found: " + input);
        std::string out = output;
        if (out_is_dir_hint || fs::is_directory(output)) {
            fs::create_directories(output);
            out = (fs::path(output) / fs::path(input).filename()).string();
        }
        plan.emplace_back(input, out);
    }
    return plan;
}

template <typename Fn>
void for_each_parallel(size_t count, int threads, Fn fn) {
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string message;
    std::mutex mu;
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= count || failed.load()) return;
            try {
                fn(i);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(mu);
                failed.store(true);
                if (message.empty()) message = e.what();
            }
        }
    };
    const int n = std::max(1, std::min<int>(threads, static_cast<int>(count)));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failed.load()) throw Error(message);
}

int cmd_enhance(const std::string& decom_path, const std::string& enh_path,
                const std::string& input, const std::string& output) {
    const int threads = env_threads();
    std::printf("settings:\n  decom = %s\n  enh = %s\n  input = %s\n  output = %s\n  threads = %d\n",
                decom_path.c_str(), enh_path.c_str(), input.c_str(), output.c_str(), threads);

    auto dck = ckpt::load_checkpoint(decom_path);
    const auto dcfg = train::unet_config_from_meta(dck, false);
    auto decom = train::load_decom_params(dck, dcfg);
    freeze_all(decom);

    auto eck = ckpt::load_checkpoint(enh_path);
    auto ecfg = train::unet_config_from_meta(eck, true);
    auto enh = train::load_enhance_params(eck, ecfg);
    freeze_all(enh);

    auto plan = plan_io(input, output, fs::is_directory(input));
    for_each_parallel(plan.size(), threads, [&](size_t i) {
        ImageTensor low = imgio::load_image(plan[i].first);
        if (low.c() != 3) throw ValueError(plan[i].first + ": enhancement needs a color image");
        ImageTensor out = train::run_enhancement(decom, dcfg, enh, ecfg, low);
        imgio::save_image(out, plan[i].second);
    });
    for (const auto& [in, out] : plan) std::printf("%s -> %s\n", in.c_str(), out.c_str());
    return kExitOk;
}

int cmd_decompose(const std::string& decom_path, const std::string& input,
                  const std::string& outdir) {
    const int threads = env_threads();
    std::printf("settings:\n  decom = %s\n  input = %s\n  outdir = %s\n  threads = %d\n",
                decom_path.c_str(), input.c_str(), outdir.c_str(), threads);

    auto dck = ckpt::load_checkpoint(decom_path);
    const auto dcfg = train::unet_config_from_meta(dck, false);
    auto decom = train::load_decom_params(dck, dcfg);
    freeze_all(decom);

    std::vector<std::string> inputs;
    if (fs::is_directory(input)) {
        for (const auto& [name, path] : imgio::list_images(input)) inputs.push_back(path);
        if (inputs.empty()) throw IoError("no images in " + input);
    } else {
        if (!fs::exists(input)) throw IoError("input not found: " + input);
        inputs.push_back(input);
    }
    fs::create_directories(outdir);

    for_each_parallel(inputs.size(), threads, [&](size_t i) {
        ImageTensor img = imgio::load_image(inputs[i]);
        if (img.c() != 3) throw ValueError(inputs[i] + ": decomposition needs a color image");
        auto parts = train::run_decomposition(decom, dcfg, img);
        const fs::path p(inputs[i]);
        const std::string stem = p.stem().string(), ext = p.extension().string();
        imgio::save_image(parts.reflectance, (fs::path(outdir) / (stem + "_r" + ext)).string());
        imgio::save_image(parts.illumination, (fs::path(outdir) / (stem + "_l" + ext)).string());
    });
    for (const auto& in : inputs) std::printf("%s -> %s/\n", in.c_str(), outdir.c_str());
    return kExitOk;
}

int cmd_eval(const std::string& dir_a, const std::string& dir_b, const std::string& report_path) {
    const int threads = env_threads();
    std::printf("settings:\n  dir-a = %s\n  dir-b = %s\n  report = %s\n  threads = %d\n",
                dir_a.c_str(), dir_b.c_str(), report_path.empty() ? "(stdout only)" : report_path.c_str(),
                threads);
    auto report = metrics::evaluate_dirs(dir_a, dir_b, threads);
    if (!report_path.empty()) {
        write_text_file(report_path, report.to_csv());
        std::printf("wrote %s\n", report_path.c_str());
    }
    std::fputs(report.to_text().c_str(), stdout);
    return kExitOk;
}

int cmd_gradcheck(uint32_t seed, const std::string& precision, bool inject_fault) {
    gradcheck::Options opt;
    opt.seed = seed;
    opt.float32 = precision != "double";
    opt.inject_fault = inject_fault;
    const double tol = gradcheck::tolerance_for(opt.float32);
    std::printf("settings:\n  seed = %u\n  precision = %s\n  tolerance = %g\n", seed,
                opt.float32 ? "float" : "double", tol);

    auto results = gradcheck::run_suite(opt);
    int failures = 0;
    for (const auto& r : results) {
        const bool ok = r.max_rel_error < tol;
        if (!ok) ++failures;
        std::printf("%-28s %12.3e  %s\n", r.name.c_str(), r.max_rel_error, ok ? "ok" : "FAIL");
    }
    std::printf("%zu checks, %d failed\n", results.size(), failures);
    return failures == 0 ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retinex-style low-light image enhancement pipeline"};
    app.require_subcommand(1);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "train one phase (decom or enhance)");
    train_cmd->add_option("phase", ta.phase, "training phase: decom | enhance")
        ->required()
        ->check(CLI::IsMember({"decom", "enhance"}));
    train_cmd->add_option("--data", ta.data, "dataset root containing low/ and high/");
    train_cmd->add_option("--out", ta.out, "output directory for checkpoints and CSV");
    train_cmd->add_option("--config", ta.config, "key=value config file (flags override)");
    train_cmd->add_option("--steps", ta.cfg.steps, "training steps");
    train_cmd->add_option("--batch", ta.cfg.batch, "batch size");
    train_cmd->add_option("--patch", ta.cfg.patch, "square crop size in pixels");
    train_cmd->add_option("--seed", ta.cfg.seed, "rng seed");
    train_cmd->add_option("--lr", ta.cfg.learn_rate, "Adam learning rate");
    train_cmd->add_option("--ncbc-noise-weight", ta.cfg.ncbc_noise_weight,
                          "noise-loss coefficient (ablation knob)");
    train_cmd->add_option("--checkpoint-every", ta.cfg.checkpoint_every,
                          "checkpoint cadence in steps (0 = final only)");
    train_cmd->add_option("--log-every", ta.cfg.log_every, "progress print cadence (0 = silent)");
    train_cmd->add_option("--base-channels", ta.cfg.base_channels, "U-Net width at level 0");
    train_cmd->add_option("--depth", ta.cfg.depth, "U-Net encoder levels");
    train_cmd->add_option("--feat-channels", ta.cfg.feat_channels, "feature-CNN output channels");
    train_cmd->add_option("--resume", ta.resume,
                          "checkpoint to start from (required for the enhance phase)");
    train_cmd->add_option("--perceptual", ta.perceptual,
                          "perceptual-extractor checkpoint (default: seeded)");

    std::string en_decom, en_enh, en_input, en_output;
    auto* enhance_cmd = app.add_subcommand("enhance", "brighten images through the full pipeline");
    enhance_cmd->add_option("--decom", en_decom, "decomposition checkpoint")->required();
    enhance_cmd->add_option("--enh", en_enh, "enhancement checkpoint")->required();
    enhance_cmd->add_option("--input", en_input, "input image or directory")->required();
    enhance_cmd->add_option("--output", en_output, "output image or directory")->required();

    std::string de_decom, de_input, de_outdir;
    auto* decompose_cmd =
        app.add_subcommand("decompose", "split images into reflectance and illumination");
    decompose_cmd->add_option("--decom", de_decom, "decomposition checkpoint")->required();
    decompose_cmd->add_option("--input", de_input, "input image or directory")->required();
    decompose_cmd->add_option("--outdir", de_outdir, "directory for _r/_l outputs")->required();

    std::string ev_a, ev_b, ev_report;
    auto* eval_cmd = app.add_subcommand("eval", "compute metrics over matched image pairs");
    eval_cmd->add_option("--dir-a", ev_a, "directory of outputs under test")->required();
    eval_cmd->add_option("--dir-b", ev_b, "directory of references")->required();
    eval_cmd->add_option("--report", ev_report, "CSV report path");

    uint32_t gc_seed = 1;
    std::string gc_precision = "float";
    bool gc_fault = false;
    auto* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference check of all ops and losses");
    gradcheck_cmd->add_option("--seed", gc_seed, "rng seed");
    gradcheck_cmd->add_option("--precision", gc_precision, "float | double")
        ->check(CLI::IsMember({"float", "double"}));
    gradcheck_cmd->add_flag("--inject-fault", gc_fault, "corrupt one gradient (self-test hook)")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (train_cmd->parsed()) {
            apply_config_file(ta, train_cmd);
            return cmd_train(ta);
        }
        if (enhance_cmd->parsed()) return cmd_enhance(en_decom, en_enh, en_input, en_output);
        if (decompose_cmd->parsed()) return cmd_decompose(de_decom, de_input, de_outdir);
        if (eval_cmd->parsed()) return cmd_eval(ev_a, ev_b, ev_report);
        if (gradcheck_cmd->parsed()) return cmd_gradcheck(gc_seed, gc_precision, gc_fault);
        throw UsageError("no command given");
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
}

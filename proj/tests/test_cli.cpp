// End-to-end tests for the command line binary. The test harness passes the
// binary path as the first program argument.
#define DOCTEST_CONFIG_IMPLEMENT
#include <sys/wait.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "blnet/checkpoint.hpp"
#include "blnet/image_io.hpp"
#include "blnet/trainer.hpp"
#include "doctest.h"
#include "support/helpers.hpp"

namespace {

std::string g_cli;                 // binary under test
testsup::TmpDir* g_scratch = nullptr;  // session scratch space

struct RunResult {
    int code = -1;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
    static std::atomic<int> counter{0};
    std::string capture = g_scratch->file("out-" + std::to_string(counter.fetch_add(1)) + ".txt");
    std::string cmd = env_prefix + " \"" + g_cli + "\" " + args + " >" + capture + " 2>&1";
    int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(capture, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// shared across training-dependent cases, built once
struct TrainedFixture {
    testsup::TmpDir data{"cli-data"};
    testsup::TmpDir out{"cli-out"};
    std::string decom_ckpt, enhance_ckpt;

    static const std::string kFlags;

    TrainedFixture() {
        testsup::write_scene_dataset(data.path, 2, 24, 24, 900);
        auto r1 = run_cli("train decom --data " + data.str() + " --out " + out.str() + " " +
                          kFlags);
        REQUIRE_MESSAGE(r1.code == 0, r1.output);
        decom_ckpt = out.file("decom.blnt");
        auto r2 = run_cli("train enhance --data " + data.str() + " --out " + out.str() +
                          " --resume " + decom_ckpt + " " + kFlags);
        REQUIRE_MESSAGE(r2.code == 0, r2.output);
        enhance_ckpt = out.file("enhance.blnt");
    }
};

const std::string TrainedFixture::kFlags =
    "--steps 2 --batch 1 --patch 16 --base-channels 4 --depth 2 --feat-channels 8 "
    "--log-every 0";

TrainedFixture& trained() {
    static TrainedFixture f;
    return f;
}

}  // namespace

TEST_CASE("argument validation exit codes") {
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("frobnicate").code == 2);
    CHECK(run_cli("--help").code == 0);
    CHECK(run_cli("train --help").code == 0);
    CHECK(run_cli("train bogus-phase --data x --out y").code == 2);
    CHECK(run_cli("train decom --out y").code == 2);          // missing --data
    CHECK(run_cli("train decom --data x").code == 2);         // missing --out
    CHECK(run_cli("enhance --input a.png --output b.png").code == 2);  // missing models
    CHECK(run_cli("train decom --data nope-dir --out " + g_scratch->file("o1")).code == 1);

    auto help = run_cli("--help");
    CHECK(help.output.find("train") != std::string::npos);
    CHECK(help.output.find("enhance") != std::string::npos);
    CHECK(help.output.find("decompose") != std::string::npos);
    CHECK(help.output.find("eval") != std::string::npos);
    CHECK(help.output.find("gradcheck") != std::string::npos);
}

TEST_CASE("gradient check command") {
    auto ok = run_cli("gradcheck --seed 3");
    CHECK(ok.code == 0);
    CHECK(ok.output.find("conv2d_s1") != std::string::npos);
    CHECK(ok.output.find(" 0 failed") != std::string::npos);

    auto fault = run_cli("gradcheck --seed 3 --inject-fault");
    CHECK(fault.code == 1);
    CHECK(fault.output.find("FAIL") != std::string::npos);
    CHECK(fault.output.find(" 1 failed") != std::string::npos);

    CHECK(run_cli("gradcheck --precision sideways").code == 2);
}

TEST_CASE("phase 1 training from the command line") {
    auto& f = trained();
    CHECK(std::filesystem::exists(f.decom_ckpt));
    std::string csv = read_file(f.out.file("loss_decom.csv"));
    CHECK(count_lines(csv) == 3);  // header + 2 steps
    CHECK(csv.rfind("step,rc,smooth,equal,decom_total,tv,mse,noise,color,ncbc_total,total\n",
                    0) == 0);

    // effective settings are echoed, including the seed
    auto again = run_cli("train decom --data " + f.data.str() + " --out " +
                         g_scratch->file("echo-out") + " " + TrainedFixture::kFlags);
    CHECK(again.code == 0);
    CHECK(again.output.find("settings:") != std::string::npos);
    CHECK(again.output.find("seed = 1") != std::string::npos);
    CHECK(again.output.find("steps = 2") != std::string::npos);
    CHECK(again.output.find("dataset: 2 pairs") != std::string::npos);

    // identical seeds and settings reproduce the loss file byte for byte
    CHECK(read_file(g_scratch->file("echo-out") + "/loss_decom.csv") == csv);
}

TEST_CASE("config files fill in unset flags only") {
    auto& f = trained();
    std::string cfg_path = g_scratch->file("train.cfg");
    {
        std::ofstream cfg(cfg_path);
        cfg << "# training configuration\n";
        cfg << "steps = 3\n";
        cfg << "batch = 1\n";
        cfg << "patch = 16\n";
        cfg << "base_channels = 4\n";
        cfg << "depth = 2\n";
        cfg << "feat_channels = 8\n";
        cfg << "log_every = 0\n";
        cfg << "seed = 5\n";
    }

    std::string out1 = g_scratch->file("cfg-out1");
    auto r1 = run_cli("train decom --data " + f.data.str() + " --out " + out1 + " --config " +
                      cfg_path);
    CHECK(r1.code == 0);
    CHECK(r1.output.find("steps = 3") != std::string::npos);
    CHECK(r1.output.find("seed = 5") != std::string::npos);
    CHECK(count_lines(read_file(out1 + "/loss_decom.csv")) == 4);

    // explicit flags beat the file
    std::string out2 = g_scratch->file("cfg-out2");
    auto r2 = run_cli("train decom --data " + f.data.str() + " --out " + out2 + " --config " +
                      cfg_path + " --steps 2");
    CHECK(r2.code == 0);
    CHECK(r2.output.find("steps = 2") != std::string::npos);
    CHECK(count_lines(read_file(out2 + "/loss_decom.csv")) == 3);

    std::string bad_key = g_scratch->file("bad1.cfg");
    std::ofstream(bad_key) << "steps = 2\nwat = 7\n";
    CHECK(run_cli("train decom --data " + f.data.str() + " --out " + out2 + " --config " +
                  bad_key)
              .code == 2);

    std::string bad_line = g_scratch->file("bad2.cfg");
    std::ofstream(bad_line) << "steps 2\n";
    CHECK(run_cli("train decom --data " + f.data.str() + " --out " + out2 + " --config " +
                  bad_line)
              .code == 2);

    std::string bad_value = g_scratch->file("bad3.cfg");
    std::ofstream(bad_value) << "steps = banana\n";
    CHECK(run_cli("train decom --data " + f.data.str() + " --out " + out2 + " --config " +
                  bad_value)
              .code == 2);
}

TEST_CASE("phase 2 requires a phase 1 checkpoint") {
    auto& f = trained();
    CHECK(run_cli("train enhance --data " + f.data.str() + " --out " +
                  g_scratch->file("p2-no-resume") + " " + TrainedFixture::kFlags)
              .code == 2);

    CHECK(std::filesystem::exists(f.enhance_ckpt));
    std::string csv = read_file(f.out.file("loss_enhance.csv"));
    CHECK(csv.rfind("step,rc,bri,per,grad,total\n", 0) == 0);
    CHECK(count_lines(csv) == 3);

    // architecture comes from the checkpoint metadata, so conflicting flags
    // on the command line are irrelevant
    auto ck = blnet::ckpt::load_checkpoint(f.enhance_ckpt);
    CHECK(ck.meta.at("base_channels") == "4");
    CHECK(ck.meta.at("depth") == "2");
}

TEST_CASE("single image enhancement") {
    auto& f = trained();
    auto pairs = blnet::imgio::scan_dataset(f.data.str());
    std::string low_path = pairs.pairs[0].first;

    std::string out_path = g_scratch->file("enhanced.png");
    auto r = run_cli("enhance --decom " + f.decom_ckpt + " --enh " + f.enhance_ckpt +
                     " --input " + low_path + " --output " + out_path);
    CHECK(r.code == 0);
    CHECK(r.output.find("-> " + out_path) != std::string::npos);
    REQUIRE(std::filesystem::exists(out_path));

    auto img = blnet::imgio::load_image(out_path);
    CHECK(img.shape[1] == 3);
    CHECK(img.shape[2] == 24);
    CHECK(img.shape[3] == 24);

    // byte-identical on a re-run
    std::string out2 = g_scratch->file("enhanced2.png");
    run_cli("enhance --decom " + f.decom_ckpt + " --enh " + f.enhance_ckpt + " --input " +
            low_path + " --output " + out2);
    CHECK(read_file(out_path) == read_file(out2));

    CHECK(run_cli("enhance --decom " + f.decom_ckpt + " --enh " + f.enhance_ckpt +
                  " --input missing.png --output " + g_scratch->file("x.png"))
              .code == 1);
}

TEST_CASE("directory enhancement keeps names") {
    auto& f = trained();
    std::string outdir = g_scratch->file("enh-dir");
    auto r = run_cli("enhance --decom " + f.decom_ckpt + " --enh " + f.enhance_ckpt +
                     " --input " + f.data.str() + "/low --output " + outdir);
    CHECK(r.code == 0);
    CHECK(std::filesystem::exists(outdir + "/pair_000.png"));
    CHECK(std::filesystem::exists(outdir + "/pair_001.png"));
}

TEST_CASE("decomposition outputs reflectance and illumination images") {
    auto& f = trained();
    auto pairs = blnet::imgio::scan_dataset(f.data.str());
    std::string low_path = pairs.pairs[0].first;
    std::string outdir = g_scratch->file("decom-dir");

    auto r = run_cli("decompose --decom " + f.decom_ckpt + " --input " + low_path +
                     " --outdir " + outdir);
    CHECK(r.code == 0);
    std::string rpath = outdir + "/pair_000_r.png";
    std::string lpath = outdir + "/pair_000_l.png";
    REQUIRE(std::filesystem::exists(rpath));
    REQUIRE(std::filesystem::exists(lpath));

    auto rimg = blnet::imgio::load_image(rpath);
    auto limg = blnet::imgio::load_image(lpath);
    CHECK(rimg.shape[1] == 3);
    CHECK(limg.shape[1] == 1);

    // saved planes multiply back to the in-process decomposition product
    // within quantization error
    auto ck = blnet::ckpt::load_checkpoint(f.decom_ckpt);
    auto dcfg = blnet::train::unet_config_from_meta(ck, false);
    auto params = blnet::train::load_decom_params(ck, dcfg);
    auto low = blnet::imgio::load_image(low_path);
    auto direct = blnet::train::run_decomposition(params, dcfg, low);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x) {
                float expect = direct.reflectance.at(0, c, y, x) * direct.illumination.at(0, 0, y, x);
                float got = rimg.at(0, c, y, x) * limg.at(0, 0, y, x);
                CHECK(std::abs(got - expect) < 0.02f);
            }
}

TEST_CASE("evaluation command") {
    auto& f = trained();
    std::string report = g_scratch->file("report.csv");
    auto r = run_cli("eval --dir-a " + f.data.str() + "/low --dir-b " + f.data.str() +
                     "/high --report " + report);
    CHECK(r.code == 0);
    CHECK(r.output.find("ang_average") != std::string::npos);
    CHECK(r.output.find("mean") != std::string::npos);
    std::string csv = read_file(report);
    CHECK(csv.rfind("name,psnr,ssim,uqi,ang_mean,ang_median,ang_average,delta_e,ge,ce\n", 0) ==
          0);
    CHECK(count_lines(csv) == 4);  // header + 2 pairs + mean

    CHECK(run_cli("eval --dir-a " + f.data.str() + "/low --dir-b " + g_scratch->file("void"))
              .code == 1);

    // orphan files abort the evaluation
    std::string da = g_scratch->file("eval-a"), db = g_scratch->file("eval-b");
    std::filesystem::create_directories(da);
    std::filesystem::create_directories(db);
    blnet::DetRng rng(91);
    blnet::imgio::save_image(testsup::random_image(rng, 1, 3, 16, 16), da + "/x.png");
    blnet::imgio::save_image(testsup::random_image(rng, 1, 3, 16, 16), db + "/x.png");
    blnet::imgio::save_image(testsup::random_image(rng, 1, 3, 16, 16), db + "/y.png");
    auto bad = run_cli("eval --dir-a " + da + " --dir-b " + db);
    CHECK(bad.code == 1);
    CHECK(bad.output.find("y.png") != std::string::npos);
}

TEST_CASE("worker thread override") {
    auto& f = trained();
    auto ok = run_cli("eval --dir-a " + f.data.str() + "/low --dir-b " + f.data.str() + "/high",
                      "BLNET_THREADS=3");
    CHECK(ok.code == 0);
    CHECK(ok.output.find("threads = 3") != std::string::npos);

    auto garbage = run_cli(
        "eval --dir-a " + f.data.str() + "/low --dir-b " + f.data.str() + "/high",
        "BLNET_THREADS=lots");
    CHECK(garbage.code == 0);
    CHECK(garbage.output.find("invalid BLNET_THREADS") != std::string::npos);
    CHECK(garbage.output.find("threads = 1") != std::string::npos);
}

int main(int argc, char** argv) {
    if (argc < 2 || argv[1][0] == '-') {
        std::fprintf(stderr, "usage: test_cli <path-to-binary> [doctest options]\n");
        return 1;
    }
    g_cli = argv[1];
    testsup::TmpDir scratch("cli-scratch");
    g_scratch = &scratch;

    doctest::Context ctx;
    ctx.applyCommandLine(argc - 1, argv + 1);
    return ctx.run();
}

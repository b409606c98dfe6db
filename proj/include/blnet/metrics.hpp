#pragma once

#include <string>
#include <vector>

#include "blnet/tensor.hpp"

// Evaluation metrics. All internal arithmetic in double regardless of the
// image storage type; inputs are expected in [0,1].
namespace blnet::metrics {

// 10*log10(1/MSE) with MAX = 1; identical images give +infinity.
double psnr(const ImageTensor& a, const ImageTensor& b);

// Mean local SSIM on the grayscale image: 11x11 Gaussian window (sigma 1.5),
// valid windows only, C1 = 0.01^2, C2 = 0.03^2.
double ssim(const ImageTensor& a, const ImageTensor& b);

// Universal quality index: the SSIM form with C1 = C2 = 0 over unweighted 8x8
// sliding windows (grayscale); windows with a zero denominator are skipped.
double uqi(const ImageTensor& a, const ImageTensor& b);

struct AngularStats {
    double mean = 0, median = 0, average = 0;  // average = (mean + median) / 2
};

// Per-pixel angle between RGB vectors in degrees; near-black pixels (either
// norm < 1e-6) contribute 0.
AngularStats angular_error(const ImageTensor& out, const ImageTensor& gt);

struct Lab {
    double l = 0, a = 0, b = 0;
};

Lab srgb_to_lab(double r, double g, double b);

// CIEDE2000 with kL = kC = kH = 1.
double ciede2000(const Lab& x, const Lab& y);

// Mean per-pixel CIEDE2000 after sRGB -> Lab (D65 2-degree white).
double delta_e_2000(const ImageTensor& out, const ImageTensor& gt);

struct EntropyStats {
    double ge = 0;  // Shannon entropy (bits) of the 256-bin gray histogram
    double ce = 0;  // sum of the three per-channel entropies
};

EntropyStats entropy(const ImageTensor& img);

struct MetricRow {
    std::string name;
    double psnr = 0, ssim = 0, uqi = 0;
    double ang_mean = 0, ang_median = 0, ang_average = 0;
    double delta_e = 0, ge = 0, ce = 0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    MetricRow aggregate;  // column means, name "mean"

    std::string to_csv() const;   // header + rows + aggregate, 10 columns
    std::string to_text() const;  // aligned table with a definitions note
};

// Computes all metrics for named image pairs (a = output under test, b =
// reference); ge/ce are taken from the `a` side. `threads` > 1 distributes
// pairs across workers with deterministic output order.
MetricReport evaluate_pairs(const std::vector<std::string>& names,
                            const std::vector<std::pair<std::string, std::string>>& paths,
                            int threads = 1);

// Matches files by name across two directories (errors list any orphans) and
// evaluates each pair.
MetricReport evaluate_dirs(const std::string& dir_a, const std::string& dir_b, int threads = 1);

}  // namespace blnet::metrics

#include "blnet/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numbers>
#include <thread>

#include "blnet/dataset.hpp"
#include "blnet/error.hpp"
#include "blnet/image_io.hpp"

namespace blnet::metrics {

namespace {

constexpr double kDeg = 180.0 / std::numbers::pi;

void check_shapes(const ImageTensor& a, const ImageTensor& b, const char* what) {
    if (!a.same_shape(b))
        throw ValueError(std::string(what) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

// Grayscale plane of one batch item as doubles.
std::vector<double> gray_plane(const ImageTensor& img, int n) {
    std::vector<double> g(static_cast<size_t>(img.h()) * img.w());
    if (img.c() == 3) {
        for (int y = 0; y < img.h(); ++y)
            for (int x = 0; x < img.w(); ++x)
                g[static_cast<size_t>(y) * img.w() + x] = 0.299 * img.at(n, 0, y, x) +
                                                          0.587 * img.at(n, 1, y, x) +
                                                          0.114 * img.at(n, 2, y, x);
    } else if (img.c() == 1) {
        for (int y = 0; y < img.h(); ++y)
            for (int x = 0; x < img.w(); ++x)
                g[static_cast<size_t>(y) * img.w() + x] = img.at(n, 0, y, x);
    } else {
        throw ValueError("expected 1 or 3 channels, got " + std::to_string(img.c()));
    }
    return g;
}

// 11-tap Gaussian, sigma 1.5, normalized to sum 1.
std::vector<double> gaussian_kernel() {
    constexpr int kHalf = 5;
    std::vector<double> k(2 * kHalf + 1);
    double sum = 0;
    for (int i = -kHalf; i <= kHalf; ++i) {
        k[i + kHalf] = std::exp(-(i * i) / (2.0 * 1.5 * 1.5));
        sum += k[i + kHalf];
    }
    for (double& v : k) v /= sum;
    return k;
}

// Separable valid-mode filter of an h x w plane with a length-t tap vector:
// output is (h - t + 1) x (w - t + 1).
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::vector<double>& taps, int& oh, int& ow) {
    const int t = static_cast<int>(taps.size());
    const int mw = w - t + 1;
    std::vector<double> horiz(static_cast<size_t>(h) * mw);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < mw; ++x) {
            double s = 0;
            for (int i = 0; i < t; ++i) s += taps[i] * img[static_cast<size_t>(y) * w + x + i];
            horiz[static_cast<size_t>(y) * mw + x] = s;
        }
    oh = h - t + 1;
    ow = mw;
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0;
            for (int i = 0; i < t; ++i) s += taps[i] * horiz[static_cast<size_t>(y + i) * mw + x];
            out[static_cast<size_t>(y) * ow + x] = s;
        }
    return out;
}

double ssim_plane(const std::vector<double>& x, const std::vector<double>& y, int h, int w) {
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const auto taps = gaussian_kernel();
    const size_t n = x.size();
    std::vector<double> xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    int oh = 0, ow = 0;
    auto mx = filter_valid(x, h, w, taps, oh, ow);
    auto my = filter_valid(y, h, w, taps, oh, ow);
    auto mxx = filter_valid(xx, h, w, taps, oh, ow);
    auto myy = filter_valid(yy, h, w, taps, oh, ow);
    auto mxy = filter_valid(xy, h, w, taps, oh, ow);
    double acc = 0;
    for (size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cov = mxy[i] - mx[i] * my[i];
        acc += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    return acc / static_cast<double>(mx.size());
}

// UQI over one plane: unweighted 8x8 windows, population statistics,
// Q = 4*cov*mx*my / ((vx+vy)(mx^2+my^2)); zero-denominator windows skipped.
double uqi_plane(const std::vector<double>& x, const std::vector<double>& y, int h, int w) {
    constexpr int kWin = 8;
    constexpr double kInv = 1.0 / (kWin * kWin);
    double acc = 0;
    long valid = 0;
    for (int wy = 0; wy + kWin <= h; ++wy)
        for (int wx = 0; wx + kWin <= w; ++wx) {
            double sx = 0, sy = 0;
            for (int dy = 0; dy < kWin; ++dy)
                for (int dx = 0; dx < kWin; ++dx) {
                    sx += x[static_cast<size_t>(wy + dy) * w + wx + dx];
                    sy += y[static_cast<size_t>(wy + dy) * w + wx + dx];
                }
            const double mx = sx * kInv, my = sy * kInv;
            // central moments in a second pass: exactly zero for flat windows,
            // so degenerate denominators are skipped instead of dividing noise
            double vx = 0, vy = 0, cov = 0;
            for (int dy = 0; dy < kWin; ++dy)
                for (int dx = 0; dx < kWin; ++dx) {
                    const double da = x[static_cast<size_t>(wy + dy) * w + wx + dx] - mx;
                    const double db = y[static_cast<size_t>(wy + dy) * w + wx + dx] - my;
                    vx += da * da;
                    vy += db * db;
                    cov += da * db;
                }
            vx *= kInv;
            vy *= kInv;
            cov *= kInv;
            const double denom = (vx + vy) * (mx * mx + my * my);
            if (denom == 0.0) continue;
            acc += 4.0 * cov * mx * my / denom;
            ++valid;
        }
    return valid == 0 ? 0.0 : acc / static_cast<double>(valid);
}

double channel_entropy(const ImageTensor& img, int channel) {
    long hist[256] = {};
    long total = 0;
    for (int n = 0; n < img.n(); ++n)
        for (int y = 0; y < img.h(); ++y)
            for (int x = 0; x < img.w(); ++x) {
                int bin = static_cast<int>(std::lround(img.at(n, channel, y, x) * 255.0));
                bin = std::clamp(bin, 0, 255);
                ++hist[bin];
                ++total;
            }
    double e = 0;
    for (long c : hist)
        if (c > 0) {
            const double p = static_cast<double>(c) / static_cast<double>(total);
            e -= p * std::log2(p);
        }
    return e;
}

}  // namespace

double psnr(const ImageTensor& a, const ImageTensor& b) {
    check_shapes(a, b, "psnr");
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        acc += d * d;
    }
    const double mse = acc / static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
    check_shapes(a, b, "ssim");
    if (a.h() < 11 || a.w() < 11)
        throw ValueError("ssim: image " + shape_str(a.shape) + " smaller than the 11x11 window");
    double acc = 0;
    for (int n = 0; n < a.n(); ++n)
        acc += ssim_plane(gray_plane(a, n), gray_plane(b, n), a.h(), a.w());
    return acc / a.n();
}

double uqi(const ImageTensor& a, const ImageTensor& b) {
    check_shapes(a, b, "uqi");
    if (a.h() < 8 || a.w() < 8)
        throw ValueError("uqi: image " + shape_str(a.shape) + " smaller than the 8x8 window");
    double acc = 0;
    for (int n = 0; n < a.n(); ++n)
        acc += uqi_plane(gray_plane(a, n), gray_plane(b, n), a.h(), a.w());
    return acc / a.n();
}

AngularStats angular_error(const ImageTensor& out, const ImageTensor& gt) {
    check_shapes(out, gt, "angular_error");
    if (out.c() != 3) throw ValueError("angular_error: expects 3-channel images");
    std::vector<double> angles;
    angles.reserve(static_cast<size_t>(out.n()) * out.h() * out.w());
    for (int n = 0; n < out.n(); ++n)
        for (int y = 0; y < out.h(); ++y)
            for (int x = 0; x < out.w(); ++x) {
                double dot = 0, na = 0, nb = 0;
                bool identical = true;
                for (int c = 0; c < 3; ++c) {
                    const double va = out.at(n, c, y, x), vb = gt.at(n, c, y, x);
                    identical = identical && va == vb;
                    dot += va * vb;
                    na += va * va;
                    nb += vb * vb;
                }
                if (identical) {
                    angles.push_back(0.0);
                    continue;
                }
                na = std::sqrt(na);
                nb = std::sqrt(nb);
                if (na < 1e-6 || nb < 1e-6) {
                    angles.push_back(0.0);
                    continue;
                }
                const double cosv = std::clamp(dot / (na * nb), -1.0, 1.0);
                angles.push_back(std::acos(cosv) * kDeg);
            }
    AngularStats s;
    double sum = 0;
    for (double v : angles) sum += v;
    s.mean = sum / static_cast<double>(angles.size());
    std::sort(angles.begin(), angles.end());
    const size_t m = angles.size();
    s.median = (m % 2 == 1) ? angles[m / 2] : 0.5 * (angles[m / 2 - 1] + angles[m / 2]);
    s.average = 0.5 * (s.mean + s.median);
    return s;
}

Lab srgb_to_lab(double r, double g, double b) {
    auto lin = [](double c) {
        return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    };
    const double rl = lin(r), gl = lin(g), bl = lin(b);
    const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    auto f = [](double t) {
        constexpr double d = 6.0 / 29.0;
        return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
    };
    const double fx = f(x / 0.95047), fy = f(y / 1.0), fz = f(z / 1.08883);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

double ciede2000(const Lab& x, const Lab& y) {
    constexpr double kPow25_7 = 6103515625.0;  // 25^7
    const double c1 = std::hypot(x.a, x.b);
    const double c2 = std::hypot(y.a, y.b);
    const double cbar = 0.5 * (c1 + c2);
    const double cbar7 = std::pow(cbar, 7.0);
    const double g = 0.5 * (1.0 - std::sqrt(cbar7 / (cbar7 + kPow25_7)));
    const double a1p = (1.0 + g) * x.a, a2p = (1.0 + g) * y.a;
    const double c1p = std::hypot(a1p, x.b), c2p = std::hypot(a2p, y.b);

    auto hue = [](double a, double b) {
        if (a == 0.0 && b == 0.0) return 0.0;
        double h = std::atan2(b, a) * kDeg;
        return h < 0.0 ? h + 360.0 : h;
    };
    const double h1p = hue(a1p, x.b), h2p = hue(a2p, y.b);

    const double dlp = y.l - x.l;
    const double dcp = c2p - c1p;
    double dhp = 0.0;
    if (c1p * c2p != 0.0) {
        dhp = h2p - h1p;
        if (dhp > 180.0)
            dhp -= 360.0;
        else if (dhp < -180.0)
            dhp += 360.0;
    }
    const double dHp = 2.0 * std::sqrt(c1p * c2p) * std::sin(dhp / 2.0 / kDeg);

    const double lbar = 0.5 * (x.l + y.l);
    const double cbarp = 0.5 * (c1p + c2p);
    double hbar = h1p + h2p;
    if (c1p * c2p != 0.0) {
        if (std::abs(h1p - h2p) <= 180.0)
            hbar = 0.5 * (h1p + h2p);
        else if (h1p + h2p < 360.0)
            hbar = 0.5 * (h1p + h2p + 360.0);
        else
            hbar = 0.5 * (h1p + h2p - 360.0);
    }

    const double t = 1.0 - 0.17 * std::cos((hbar - 30.0) / kDeg) +
                     0.24 * std::cos(2.0 * hbar / kDeg) +
                     0.32 * std::cos((3.0 * hbar + 6.0) / kDeg) -
                     0.20 * std::cos((4.0 * hbar - 63.0) / kDeg);
    const double dtheta = 30.0 * std::exp(-((hbar - 275.0) / 25.0) * ((hbar - 275.0) / 25.0));
    const double cbarp7 = std::pow(cbarp, 7.0);
    const double rc = 2.0 * std::sqrt(cbarp7 / (cbarp7 + kPow25_7));
    const double lterm = (lbar - 50.0) * (lbar - 50.0);
    const double sl = 1.0 + 0.015 * lterm / std::sqrt(20.0 + lterm);
    const double sc = 1.0 + 0.045 * cbarp;
    const double sh = 1.0 + 0.015 * cbarp * t;
    const double rt = -std::sin(2.0 * dtheta / kDeg) * rc;

    const double l = dlp / sl, c = dcp / sc, h = dHp / sh;
    return std::sqrt(l * l + c * c + h * h + rt * c * h);
}

double delta_e_2000(const ImageTensor& out, const ImageTensor& gt) {
    check_shapes(out, gt, "delta_e_2000");
    if (out.c() != 3) throw ValueError("delta_e_2000: expects 3-channel images");
    double acc = 0;
    long count = 0;
    for (int n = 0; n < out.n(); ++n)
        for (int y = 0; y < out.h(); ++y)
            for (int x = 0; x < out.w(); ++x) {
                const Lab la =
                    srgb_to_lab(out.at(n, 0, y, x), out.at(n, 1, y, x), out.at(n, 2, y, x));
                const Lab lb = srgb_to_lab(gt.at(n, 0, y, x), gt.at(n, 1, y, x), gt.at(n, 2, y, x));
                acc += ciede2000(la, lb);
                ++count;
            }
    return acc / static_cast<double>(count);
}

EntropyStats entropy(const ImageTensor& img) {
    EntropyStats s;
    ImageTensor gray = imgio::to_gray(img);
    s.ge = channel_entropy(gray, 0);
    if (img.c() == 1) {
        s.ce = s.ge;
    } else {
        for (int c = 0; c < img.c(); ++c) s.ce += channel_entropy(img, c);
    }
    return s;
}

namespace {

MetricRow compute_row(const std::string& name, const ImageTensor& a, const ImageTensor& b) {
    MetricRow r;
    r.name = name;
    r.psnr = psnr(a, b);
    r.ssim = ssim(a, b);
    r.uqi = uqi(a, b);
    const AngularStats ang = angular_error(a, b);
    r.ang_mean = ang.mean;
    r.ang_median = ang.median;
    r.ang_average = ang.average;
    r.delta_e = delta_e_2000(a, b);
    const EntropyStats ent = entropy(a);
    r.ge = ent.ge;
    r.ce = ent.ce;
    return r;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void append_row_csv(std::string& out, const MetricRow& r) {
    out += r.name;
    for (double v : {r.psnr, r.ssim, r.uqi, r.ang_mean, r.ang_median, r.ang_average, r.delta_e,
                     r.ge, r.ce})
        out += "," + fmt(v);
    out += "\n";
}

}  // namespace

std::string MetricReport::to_csv() const {
    std::string out = "name,psnr,ssim,uqi,ang_mean,ang_median,ang_average,delta_e,ge,ce\n";
    for (const auto& r : rows) append_row_csv(out, r);
    append_row_csv(out, aggregate);
    return out;
}

std::string MetricReport::to_text() const {
    std::string out = "# ang_average is defined as (ang_mean + ang_median) / 2\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-24s %9s %7s %7s %8s %8s %8s %8s %7s %8s\n", "name", "psnr",
                  "ssim", "uqi", "ang_mean", "ang_med", "ang_avg", "delta_e", "ge", "ce");
    out += buf;
    auto line = [&](const MetricRow& r) {
        std::snprintf(buf, sizeof(buf),
                      "%-24s %9.4f %7.4f %7.4f %8.4f %8.4f %8.4f %8.4f %7.4f %8.4f\n",
                      r.name.c_str(), r.psnr, r.ssim, r.uqi, r.ang_mean, r.ang_median,
                      r.ang_average, r.delta_e, r.ge, r.ce);
        out += buf;
    };
    for (const auto& r : rows) line(r);
    line(aggregate);
    return out;
}

MetricReport evaluate_pairs(const std::vector<std::string>& names,
                            const std::vector<std::pair<std::string, std::string>>& paths,
                            int threads) {
    if (names.size() != paths.size()) throw ValueError("evaluate_pairs: name/path count mismatch");
    if (names.empty()) throw ValueError("evaluate_pairs: nothing to evaluate");

    MetricReport report;
    report.rows.resize(names.size());
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::string error_msg;
    std::mutex error_mu;

    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= names.size() || failed.load()) return;
            try {
                ImageTensor a = imgio::load_image(paths[i].first);
                ImageTensor b = imgio::load_image(paths[i].second);
                report.rows[i] = compute_row(names[i], a, b);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mu);
                failed.store(true);
                if (error_msg.empty()) error_msg = names[i] + ": " + e.what();
            }
        }
    };

    const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(names.size())));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failed.load()) throw Error("evaluation failed: " + error_msg);

    MetricRow agg;
    agg.name = "mean";
    const double inv = 1.0 / static_cast<double>(report.rows.size());
    for (const auto& r : report.rows) {
        agg.psnr += r.psnr * inv;
        agg.ssim += r.ssim * inv;
        agg.uqi += r.uqi * inv;
        agg.ang_mean += r.ang_mean * inv;
        agg.ang_median += r.ang_median * inv;
        agg.ang_average += r.ang_average * inv;
        agg.delta_e += r.delta_e * inv;
        agg.ge += r.ge * inv;
        agg.ce += r.ce * inv;
    }
    report.aggregate = agg;
    return report;
}

MetricReport evaluate_dirs(const std::string& dir_a, const std::string& dir_b, int threads) {
    auto a = imgio::list_images(dir_a);
    auto b = imgio::list_images(dir_b);
    std::string orphans;
    for (const auto& [name, path] : a)
        if (!b.count(name)) orphans += " " + dir_a + "/" + name;
    for (const auto& [name, path] : b)
        if (!a.count(name)) orphans += " " + dir_b + "/" + name;
    if (!orphans.empty()) throw ValueError("unmatched images:" + orphans);
    if (a.empty()) throw ValueError("no images to evaluate in " + dir_a);

    std::vector<std::string> names;
    std::vector<std::pair<std::string, std::string>> paths;
    for (const auto& [name, path] : a) {
        names.push_back(name);
        paths.emplace_back(path, b.at(name));
    }
    return evaluate_pairs(names, paths, threads);
}

}  // namespace blnet::metrics

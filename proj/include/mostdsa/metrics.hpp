#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "mostdsa/config.hpp"
#include "mostdsa/tensor.hpp"

// Image quality metrics and the timing/memory benchmark harness.

namespace mostdsa {
namespace metrics {

// Mean local SSIM, 11x11 Gaussian window sigma 1.5, C1=(0.01)^2, C2=(0.03)^2,
// dynamic range 1; window fully inside the image (valid mode).
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "ssim");
    const Shape& s = a.shape();
    constexpr int kWin = 11;
    if (s.h < kWin || s.w < kWin)
        throw UsageError("ssim: image " + s.str() + " smaller than the 11x11 window");

    double win[kWin];
    double wsum = 0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - (kWin - 1) / 2.0;
        win[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        wsum += win[i];
    }
    for (int i = 0; i < kWin; ++i) win[i] /= wsum;

    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;

    const int oh = s.h - kWin + 1, ow = s.w - kWin + 1;
    double total = 0;
    std::int64_t count = 0;
    std::vector<double> rowe_a(std::size_t(s.h) * ow), rowe_b(rowe_a.size()),
        rowe_aa(rowe_a.size()), rowe_bb(rowe_a.size()), rowe_ab(rowe_a.size());
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* pa = a.data() + a.idx(n, c, 0, 0);
            const T* pb = b.data() + b.idx(n, c, 0, 0);
            // horizontal pass
            for (int y = 0; y < s.h; ++y)
                for (int x = 0; x < ow; ++x) {
                    double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                    for (int k = 0; k < kWin; ++k) {
                        const double va = pa[std::size_t(y) * s.w + x + k];
                        const double vb = pb[std::size_t(y) * s.w + x + k];
                        sa += win[k] * va;
                        sb += win[k] * vb;
                        saa += win[k] * va * va;
                        sbb += win[k] * vb * vb;
                        sab += win[k] * va * vb;
                    }
                    const std::size_t o = std::size_t(y) * ow + x;
                    rowe_a[o] = sa;
                    rowe_b[o] = sb;
                    rowe_aa[o] = saa;
                    rowe_bb[o] = sbb;
                    rowe_ab[o] = sab;
                }
            // vertical pass + SSIM map
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
                    for (int k = 0; k < kWin; ++k) {
                        const std::size_t o = std::size_t(y + k) * ow + x;
                        mu_a += win[k] * rowe_a[o];
                        mu_b += win[k] * rowe_b[o];
                        saa += win[k] * rowe_aa[o];
                        sbb += win[k] * rowe_bb[o];
                        sab += win[k] * rowe_ab[o];
                    }
                    const double var_a = saa - mu_a * mu_a;
                    const double var_b = sbb - mu_b * mu_b;
                    const double cov = sab - mu_a * mu_b;
                    const double v = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                    total += v;
                    ++count;
                }
        }
    return total / double(count);
}

// 10 log10(1 / MSE) on range [0,1]; identical images report the 100 dB cap.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape(a, b, "psnr");
    double mse = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = double(a.data()[i]) - double(b.data()[i]);
        mse += d * d;
    }
    mse /= double(a.numel());
    if (mse <= 1e-10) return 100.0;
    return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

// Arithmetic mean and population standard deviation.
inline std::pair<double, double> aggregate(const std::vector<double>& xs) {
    if (xs.empty()) throw UsageError("aggregate: empty input");
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= double(xs.size());
    double var = 0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= double(xs.size());
    return {mean, std::sqrt(var)};
}

// One evaluated sequence (or one benchmark row).
struct SequenceRecord {
    std::string id;
    int frames = 0;
    double ssim_mean = 0, ssim_std = 0;
    double psnr_mean = 0, psnr_std = 0;
    double seconds = 0;
    std::size_t peak_bytes = 0;
};

struct EvalReport {
    std::vector<SequenceRecord> sequences;
    double ssim_mean = 0, ssim_std = 0;
    double psnr_mean = 0, psnr_std = 0;

    void finalize() {
        std::vector<double> s, p;
        for (const auto& r : sequences) {
            s.push_back(r.ssim_mean);
            p.push_back(r.psnr_mean);
        }
        auto [sm, ss] = aggregate(s);
        auto [pm, ps] = aggregate(p);
        ssim_mean = sm;
        ssim_std = ss;
        psnr_mean = pm;
        psnr_std = ps;
    }
};

// Line-delimited machine-readable records; one line per sequence.
inline std::string to_records(const EvalReport& rep, bool with_timing = true) {
    std::string out = "# id frames ssim_mean ssim_std psnr_mean psnr_std seconds peak_bytes\n";
    char buf[256];
    for (const auto& r : rep.sequences) {
        std::snprintf(buf, sizeof buf, "%s %d %.6f %.6f %.4f %.4f %.6f %zu\n", r.id.c_str(),
                      r.frames, r.ssim_mean, r.ssim_std, r.psnr_mean, r.psnr_std,
                      with_timing ? r.seconds : 0.0, r.peak_bytes);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "# aggregate ssim %.6f +- %.6f psnr %.4f +- %.4f\n",
                  rep.ssim_mean, rep.ssim_std, rep.psnr_mean, rep.psnr_std);
    out += buf;
    return out;
}

inline std::string to_table(const EvalReport& rep, bool with_timing = true) {
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-14s %7s %12s %10s %12s %10s %10s %12s\n", "sequence",
                  "frames", "SSIM mean", "SSIM std", "PSNR mean", "PSNR std", "time (s)",
                  "peak bytes");
    out += buf;
    for (const auto& r : rep.sequences) {
        std::snprintf(buf, sizeof buf, "%-14s %7d %12.4f %10.4f %12.2f %10.2f %10.3f %12zu\n",
                      r.id.c_str(), r.frames, r.ssim_mean, r.ssim_std, r.psnr_mean, r.psnr_std,
                      with_timing ? r.seconds : 0.0, r.peak_bytes);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "%-14s %7s %12.4f %10.4f %12.2f %10.2f\n", "aggregate", "",
                  rep.ssim_mean, rep.ssim_std, rep.psnr_mean, rep.psnr_std);
    out += buf;
    return out;
}

// Median wall-clock seconds and peak allocation for interpolating a schedule,
// excluding one warm-up run.
template <typename ModelT>
SequenceRecord benchmark(const ModelT& model, const Tensor<float>& i0, const Tensor<float>& i1,
                         const TimeSchedule& sched, int repeats) {
    if (repeats < 1) throw UsageError("benchmark: repeats must be >= 1");
    using clock = std::chrono::steady_clock;

    (void)model.interpolate(i0, i1, sched);  // warm-up, not timed

    std::vector<double> times;
    std::size_t peak = 0;
    for (int rep = 0; rep < repeats; ++rep) {
        const std::size_t base = mem::current();
        mem::reset_peak();
        const auto t0 = clock::now();
        auto frames = model.interpolate(i0, i1, sched);
        const auto t1 = clock::now();
        (void)frames;
        peak = std::max(peak, mem::peak() - base);
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    SequenceRecord rec;
    rec.id = "bench";
    rec.frames = int(sched.size());
    rec.seconds = times[times.size() / 2];
    rec.peak_bytes = peak;
    return rec;
}

}  // namespace metrics
}  // namespace mostdsa

#pragma once

#include <chrono>

#include "mostdsa/data.hpp"
#include "mostdsa/metrics.hpp"
#include "mostdsa/model.hpp"

// Evaluation protocol: per sequence, every sliding group of n_interp+2
// frames is interpolated at the uniform instants; metric values for the k
// interpolated positions are averaged per group, group values averaged per
// sequence, and the aggregate is the mean/STD across sequences.

namespace mostdsa {
namespace eval {

// Interpolator signature: (i0, i1, schedule) -> frames.
template <typename F>
metrics::EvalReport evaluate_with(F&& interpolate, const std::vector<data::Scene>& scenes,
                                  int n_interp) {
    const TimeSchedule sched = TimeSchedule::uniform(n_interp);
    metrics::EvalReport report;
    for (const auto& scene : scenes) {
        auto groups = synth::make_groups(int(scene.frames.size()), n_interp);
        std::vector<double> group_ssim, group_psnr;
        const std::size_t mem_base = mem::current();
        mem::reset_peak();
        const auto t0 = std::chrono::steady_clock::now();
        for (const auto& g : groups) {
            auto outs = interpolate(scene.frames[g.first], scene.frames[g.last], sched);
            double s_acc = 0, p_acc = 0;
            for (int k = 0; k < n_interp; ++k) {
                s_acc += metrics::ssim(outs[k], scene.frames[g.targets[k]]);
                p_acc += metrics::psnr(outs[k], scene.frames[g.targets[k]]);
            }
            group_ssim.push_back(s_acc / n_interp);
            group_psnr.push_back(p_acc / n_interp);
        }
        const auto t1 = std::chrono::steady_clock::now();

        metrics::SequenceRecord rec;
        rec.id = scene.id;
        rec.frames = int(scene.frames.size());
        auto [sm, ss] = metrics::aggregate(group_ssim);
        auto [pm, ps] = metrics::aggregate(group_psnr);
        rec.ssim_mean = sm;
        rec.ssim_std = ss;
        rec.psnr_mean = pm;
        rec.psnr_std = ps;
        rec.seconds = std::chrono::duration<double>(t1 - t0).count();
        rec.peak_bytes = mem::peak() - mem_base;
        report.sequences.push_back(rec);
    }
    report.finalize();
    return report;
}

template <typename T>
metrics::EvalReport evaluate_model(const Model<T>& model, const std::vector<data::Scene>& scenes,
                                   int n_interp) {
    return evaluate_with(
        [&](const Tensor<float>& a, const Tensor<float>& b, const TimeSchedule& s) {
            if constexpr (std::is_same_v<T, float>) {
                return model.interpolate(a, b, s);
            } else {
                auto outs = model.interpolate(a.template cast<T>(), b.template cast<T>(), s);
                std::vector<Tensor<float>> fo;
                for (auto& o : outs) fo.push_back(o.template cast<float>());
                return fo;
            }
        },
        scenes, n_interp);
}

// Frame-average baseline: predicts (I0 + I1) / 2 for every instant.
inline metrics::EvalReport evaluate_average_baseline(const std::vector<data::Scene>& scenes,
                                                     int n_interp) {
    return evaluate_with(
        [](const Tensor<float>& a, const Tensor<float>& b, const TimeSchedule& s) {
            Tensor<float> avg = kernels::affine(kernels::add(a, b), 0.5f, 0.0f);
            return std::vector<Tensor<float>>(s.size(), avg);
        },
        scenes, n_interp);
}

}  // namespace eval
}  // namespace mostdsa

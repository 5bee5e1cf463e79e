#pragma once

#include <atomic>
#include <utility>
#include <vector>

#include "mostdsa/warp_refine.hpp"

namespace mostdsa {

// Everything computed once per frame pair, shared by all decoded times.
template <class V>
struct PairFeaturesT {
    V i0, i1;
    PyramidT<V> pyr0, pyr1;
    MotionStructureT<V> ms;
};

// The interpolation network: owns the parameter store, exposes the one-pass
// feature extraction and the per-time decode, and counts feature passes so
// the single-forward property is checkable.
template <typename T>
class Model {
public:
    explicit Model(Config cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(cfg_.seed * 0x9e3779b97f4a7c15ULL + 17);
        encoder::init_params(store_, cfg_, rng);
        attention::init_params(store_, cfg_, rng);
        flow_decoder::init_params(store_, cfg_, rng);
        warp_refine::init_params(store_, cfg_, rng);
    }

    Model(Config cfg, ParamStore<T> store) : cfg_(std::move(cfg)), store_(std::move(store)) {
        cfg_.validate();
    }

    const Config& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    template <class Ctx>
    PairFeaturesT<typename Ctx::Value> extract_features(Ctx& cx, typename Ctx::Value i0,
                                                        typename Ctx::Value i1) const {
        PairFeaturesT<typename Ctx::Value> f;
        f.i0 = i0;
        f.i1 = i1;
        encoder_passes_.fetch_add(1);
        f.pyr0 = encoder::extract_pyramid(cx, i0);
        f.pyr1 = encoder::extract_pyramid(cx, i1);
        auto t0 = encoder::fuse_frame(cx, f.pyr0);
        auto t1 = encoder::fuse_frame(cx, f.pyr1);
        attention_passes_.fetch_add(1);
        f.ms = attention::most_attention(cx, t0, t1, cfg_);
        return f;
    }

    template <class Ctx>
    typename Ctx::Value decode_frame(Ctx& cx, const PairFeaturesT<typename Ctx::Value>& feats,
                                     double t) const {
        auto fm = flow_decoder::estimate_flow_mask(cx, feats.ms, t, feats.i0, feats.i1);
        auto f_to0 = cx.slice(fm.flow, 1, 0, 2);
        auto f_to1 = cx.slice(fm.flow, 1, 2, 2);
        auto w0 = cx.backwarp(feats.i0, f_to0);
        auto w1 = cx.backwarp(feats.i1, f_to1);
        auto blended = warp_refine::blend_warped(cx, w0, w1, fm.mask);
        auto ot = warp_refine::assemble_ot(cx, feats.i0, feats.i1, w0, w1, fm);

        std::array<std::pair<typename Ctx::Value, typename Ctx::Value>, 3> warped_levels;
        for (int l = 0; l < 3; ++l) {
            auto fl0 = warp_refine::flow_at_level(cx, f_to0, l);
            auto fl1 = warp_refine::flow_at_level(cx, f_to1, l);
            warped_levels[l] = {cx.backwarp(feats.pyr0.levels[l], fl0),
                                cx.backwarp(feats.pyr1.levels[l], fl1)};
        }
        const int gh = feats.ms.grid_h, gw = feats.ms.grid_w;
        auto s0g = cx.tokens_to_grid(cx.slice(feats.ms.structure, 0, 0, 1), gh, gw);
        auto s1g = cx.tokens_to_grid(cx.slice(feats.ms.structure, 0, 1, 1), gh, gw);
        auto ws0 = cx.backwarp(s0g, warp_refine::flow_at_level(cx, f_to0, 2));
        auto ws1 = cx.backwarp(s1g, warp_refine::flow_at_level(cx, f_to1, 2));

        return warp_refine::refine(cx, ot, warped_levels, ws0, ws1, blended);
    }

    // Full pipeline at inference: pad to multiples of 4, extract features
    // once, decode every requested time, crop back.
    std::vector<Tensor<T>> interpolate(const Tensor<T>& i0, const Tensor<T>& i1,
                                       const TimeSchedule& sched) const {
        if (i0.shape() != i1.shape())
            throw ConfigError("interpolate: frame shapes differ, " + i0.shape().str() + " vs " +
                              i1.shape().str());
        if (i0.shape().c != 1 || i0.shape().n != 1)
            throw ConfigError("interpolate: expected single grayscale frames, got " +
                              i0.shape().str());
        if (sched.empty()) throw UsageError("interpolate: empty time schedule");

        const int h = i0.shape().h, w = i0.shape().w;
        const int ph = (h + 3) / 4 * 4, pw = (w + 3) / 4 * 4;

        EvalContext<T> cx(&store_);
        Tensor<T> p0 = (ph != h || pw != w) ? kernels::pad_hw(i0, ph, pw) : i0;
        Tensor<T> p1 = (ph != h || pw != w) ? kernels::pad_hw(i1, ph, pw) : i1;
        auto feats = extract_features(cx, p0, p1);

        std::vector<Tensor<T>> out;
        out.reserve(sched.size());
        for (double t : sched.times()) {
            Tensor<T> frame = decode_frame(cx, feats, t);
            if (ph != h || pw != w)
                frame = kernels::slice(kernels::slice(frame, 2, 0, h), 3, 0, w);
            out.push_back(std::move(frame));
        }
        return out;
    }

    struct PassCounts {
        std::int64_t encoder = 0;
        std::int64_t attention = 0;
    };
    PassCounts pass_counts() const { return {encoder_passes_.load(), attention_passes_.load()}; }
    void reset_pass_counts() const {
        encoder_passes_.store(0);
        attention_passes_.store(0);
    }

private:
    Config cfg_;
    ParamStore<T> store_;
    mutable std::atomic<std::int64_t> encoder_passes_{0};
    mutable std::atomic<std::int64_t> attention_passes_{0};
};

}  // namespace mostdsa

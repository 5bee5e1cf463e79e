#pragma once

#include <vector>

#include "mostdsa/attention.hpp"

// Time mapping and flow/mask estimation. The motion-structure features are
// computed once per pair; this decoder is invoked once per requested time t
// and produces bidirectional flow (4 channels, pixels at full resolution:
// u/v toward frame 0, then u/v toward frame 1) plus an occlusion mask.

namespace mostdsa {

template <class V>
struct FlowMaskT {
    V flow;  // (1, 4, H, W)
    V mask;  // (1, 1, H, W), sigmoid output
    double t = 0.0;
};

namespace flow_decoder {

template <typename T>
void init_params(ParamStore<T>& store, const Config& cfg, Rng& rng) {
    const int v = cfg.token_dim;
    if (v % 4 != 0) throw ConfigError("token_dim must be divisible by 4 for pixel shuffle");
    const int merged_in = v + 2;  // shuffled token features + downsampled frame pair
    nn::conv_init(store, "fme.conv0", cfg.fme_width, merged_in, 3, rng);
    nn::conv_init(store, "fme.conv1", cfg.fme_width, cfg.fme_width, 3, rng);
    nn::conv_init(store, "fme.conv2", cfg.fme_width, cfg.fme_width, 3, rng);
    nn::conv_init(store, "fme.conv3", cfg.fme_width, cfg.fme_width, 3, rng);
    // zero-init head: flow starts identically zero, mask at 0.5
    nn::conv_init(store, "fme.head", 5, cfg.fme_width, 1, rng, /*with_slope=*/false,
                  /*zero=*/true);
}

// M_{0->t} = t * M_0 and M_{1->t} = (1 - t) * M_1.
template <class Ctx>
std::pair<typename Ctx::Value, typename Ctx::Value> map_motion(
    Ctx& cx, const MotionStructureT<typename Ctx::Value>& ms, double t) {
    if (!(t > 0.0 && t < 1.0))
        throw UsageError("map_motion: t = " + std::to_string(t) + " outside (0,1)");
    auto m0 = cx.slice(ms.motion, 0, 0, 1);
    auto m1 = cx.slice(ms.motion, 0, 1, 1);
    return {cx.affine(m0, t, 0.0), cx.affine(m1, 1.0 - t, 0.0)};
}

template <class Ctx>
FlowMaskT<typename Ctx::Value> estimate_flow_mask(Ctx& cx,
                                                  const MotionStructureT<typename Ctx::Value>& ms,
                                                  double t, typename Ctx::Value i0,
                                                  typename Ctx::Value i1) {
    const Shape is = cx.shape(i0);
    if (is.h != ms.grid_h * 4 || is.w != ms.grid_w * 4)
        throw ConfigError("estimate_flow_mask: image " + is.str() +
                          " inconsistent with token grid " + std::to_string(ms.grid_h) + "x" +
                          std::to_string(ms.grid_w));

    auto [m0t, m1t] = map_motion(cx, ms, t);
    auto s0 = cx.slice(ms.structure, 0, 0, 1);
    auto s1 = cx.slice(ms.structure, 0, 1, 1);

    // part a: token features to the grid, upsampled by pixel shuffle
    auto part_a = cx.concat({m0t, m1t, s0, s1}, 3);
    auto a_grid = cx.tokens_to_grid(part_a, ms.grid_h, ms.grid_w);
    auto a_up = cx.pixel_shuffle(a_grid, 2);

    // part b: the frame pair, bilinearly downsampled to meet part a
    auto b_dn = cx.resample(cx.concat({i0, i1}, 1), is.h / 2, is.w / 2);

    auto x = cx.concat({a_up, b_dn}, 1);
    const kernels::ConvSpec same{1, 1, 1};
    x = nn::conv_prelu(cx, x, "fme.conv0", same);
    x = nn::conv_prelu(cx, x, "fme.conv1", same);
    x = nn::conv_prelu(cx, x, "fme.conv2", same);
    x = nn::conv_prelu(cx, x, "fme.conv3", same);
    x = cx.resample(x, is.h, is.w);
    auto head = nn::conv_plain(cx, x, "fme.head", kernels::ConvSpec{1, 0, 1});

    FlowMaskT<typename Ctx::Value> fm;
    fm.flow = cx.slice(head, 1, 0, 4);
    // epsilon clamp keeps the mask inside the open interval even when the
    // sigmoid saturates in single precision
    fm.mask = cx.clamp_range(cx.sigmoid(cx.slice(head, 1, 4, 1)), 1e-6, 1.0 - 1e-6);
    fm.t = t;
    return fm;
}

template <class Ctx>
std::vector<FlowMaskT<typename Ctx::Value>> decode_schedule(
    Ctx& cx, const MotionStructureT<typename Ctx::Value>& ms, const TimeSchedule& sched,
    typename Ctx::Value i0, typename Ctx::Value i1) {
    if (sched.empty()) throw UsageError("decode_schedule: empty time schedule");
    std::vector<FlowMaskT<typename Ctx::Value>> out;
    out.reserve(sched.size());
    for (double t : sched.times()) out.push_back(estimate_flow_mask(cx, ms, t, i0, i1));
    return out;
}

}  // namespace flow_decoder
}  // namespace mostdsa

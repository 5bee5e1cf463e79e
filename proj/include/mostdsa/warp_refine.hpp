#pragma once

#include <array>
#include <vector>

#include "mostdsa/flow_decoder.hpp"

// Backward warping, mask blending, and the residual refiner. The blend is a
// per-pixel convex combination of the two warped frames; the refiner is a
// three-level encoder-decoder whose skip levels absorb the warped pyramid
// features and whose bottleneck absorbs the warped structure tokens.

namespace mostdsa {
namespace warp_refine {

template <typename T>
void init_params(ParamStore<T>& store, const Config& cfg, Rng& rng) {
    const int ot_ch = 9;  // I0, I1, warped I0, warped I1, 4 flow, 1 mask
    nn::conv_init(store, "ref.enc0", cfg.ref_w0, ot_ch + 2 * cfg.c0, 3, rng);
    nn::conv_init(store, "ref.down1", cfg.ref_w1, cfg.ref_w0, 3, rng);
    nn::conv_init(store, "ref.enc1", cfg.ref_w1, cfg.ref_w1 + 2 * cfg.c1, 3, rng);
    nn::conv_init(store, "ref.down2", cfg.ref_w2, cfg.ref_w1, 3, rng);
    nn::conv_init(store, "ref.enc2", cfg.ref_w2, cfg.ref_w2 + 2 * cfg.c2 + 2 * cfg.token_dim, 3,
                  rng);
    nn::conv_init(store, "ref.dec1", cfg.ref_w1, cfg.ref_w2 + cfg.ref_w1, 3, rng);
    nn::conv_init(store, "ref.dec0", cfg.ref_w0, cfg.ref_w1 + cfg.ref_w0, 3, rng);
    // zero-init residual head: untrained refinement is the identity
    nn::conv_init(store, "ref.head", 1, cfg.ref_w0, 3, rng, /*with_slope=*/false, /*zero=*/true);
}

// Warped frames for one time step: source sampled along its flow direction.
template <class Ctx>
std::pair<typename Ctx::Value, typename Ctx::Value> warp_pair(
    Ctx& cx, typename Ctx::Value i0, typename Ctx::Value i1,
    const FlowMaskT<typename Ctx::Value>& fm) {
    auto f0 = cx.slice(fm.flow, 1, 0, 2);
    auto f1 = cx.slice(fm.flow, 1, 2, 2);
    return {cx.backwarp(i0, f0), cx.backwarp(i1, f1)};
}

// mask * warped0 + (1 - mask) * warped1.
template <class Ctx>
typename Ctx::Value blend_warped(Ctx& cx, typename Ctx::Value warped0,
                                 typename Ctx::Value warped1, typename Ctx::Value mask) {
    return cx.add(cx.mul(mask, warped0), cx.mul(cx.affine(mask, -1.0, 1.0), warped1));
}

template <class Ctx>
typename Ctx::Value blend(Ctx& cx, typename Ctx::Value i0, typename Ctx::Value i1,
                          const FlowMaskT<typename Ctx::Value>& fm) {
    auto [w0, w1] = warp_pair(cx, i0, i1, fm);
    return blend_warped(cx, w0, w1, fm.mask);
}

// Channel concatenation I0, I1, warped I0, warped I1, flow, mask.
template <class Ctx>
typename Ctx::Value assemble_ot(Ctx& cx, typename Ctx::Value i0, typename Ctx::Value i1,
                                typename Ctx::Value warped0, typename Ctx::Value warped1,
                                const FlowMaskT<typename Ctx::Value>& fm) {
    return cx.concat({i0, i1, warped0, warped1, fm.flow, fm.mask}, 1);
}

// Flow resampled to a pyramid level, magnitudes rescaled to that level's
// pixel units.
template <class Ctx>
typename Ctx::Value flow_at_level(Ctx& cx, typename Ctx::Value flow, int level) {
    if (level == 0) return flow;
    const Shape fs = cx.shape(flow);
    const double s = 1.0 / double(1 << level);
    auto rs = cx.resample(flow, fs.h >> level, fs.w >> level);
    return cx.affine(rs, s, 0.0);
}

template <class Ctx>
typename Ctx::Value refine(Ctx& cx, typename Ctx::Value ot,
                           const std::array<std::pair<typename Ctx::Value, typename Ctx::Value>, 3>& warped_levels,
                           typename Ctx::Value warped_s0, typename Ctx::Value warped_s1,
                           typename Ctx::Value blended) {
    const kernels::ConvSpec same{1, 1, 1};
    const kernels::ConvSpec down{2, 1, 1};

    auto e0 = nn::conv_prelu(
        cx, cx.concat({ot, warped_levels[0].first, warped_levels[0].second}, 1), "ref.enc0", same);
    auto e1 = nn::conv_prelu(cx, e0, "ref.down1", down);
    e1 = nn::conv_prelu(
        cx, cx.concat({e1, warped_levels[1].first, warped_levels[1].second}, 1), "ref.enc1", same);
    auto e2 = nn::conv_prelu(cx, e1, "ref.down2", down);
    e2 = nn::conv_prelu(
        cx,
        cx.concat({e2, warped_levels[2].first, warped_levels[2].second, warped_s0, warped_s1}, 1),
        "ref.enc2", same);

    const Shape s1 = cx.shape(e1);
    auto d1 = cx.resample(e2, s1.h, s1.w);
    d1 = nn::conv_prelu(cx, cx.concat({d1, e1}, 1), "ref.dec1", same);
    const Shape s0 = cx.shape(e0);
    auto d0 = cx.resample(d1, s0.h, s0.w);
    d0 = nn::conv_prelu(cx, cx.concat({d0, e0}, 1), "ref.dec0", same);

    auto residual = nn::conv_plain(cx, d0, "ref.head", same);
    return cx.clamp01(cx.add(blended, residual));
}

}  // namespace warp_refine
}  // namespace mostdsa

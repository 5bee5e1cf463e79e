#pragma once

#include <array>
#include <string>
#include <vector>

#include "mostdsa/nn.hpp"

// Multi-scale feature extraction and cross-scale feature fusion. A frame is
// encoded into a three-level pyramid (full / half / quarter resolution), the
// levels are brought to quarter resolution by strided atrous convolutions,
// concatenated, linearly mapped to token width, flattened and normalized.

namespace mostdsa {

template <class V>
struct PyramidT {
    std::array<V, 3> levels;  // [0] full res, [1] half, [2] quarter
};

template <class V>
struct FusedTokensT {
    V tokens;  // (1, 1, n, d)
    int grid_h = 0;
    int grid_w = 0;
};

namespace encoder {

// Branch plan for fuse_level: index i in {0,1,2} carries stride 2^i and
// max(1, 2^(i-1)) branches; the n-th branch uses padding = dilation = n.
inline int branch_count(int level_index) { return std::max(1, 1 << (level_index - 1)); }
inline int branch_stride(int level_index) { return 1 << level_index; }

template <typename T>
void init_params(ParamStore<T>& store, const Config& cfg, Rng& rng) {
    // H stack: two conv3x3+PReLU; D: stride-2 conv3x3+PReLU followed by H.
    nn::conv_init(store, "enc.l0.conv0", cfg.c0, 1, 3, rng);
    nn::conv_init(store, "enc.l0.conv1", cfg.c0, cfg.c0, 3, rng);
    nn::conv_init(store, "enc.l1.down", cfg.c1, cfg.c0, 3, rng);
    nn::conv_init(store, "enc.l1.conv0", cfg.c1, cfg.c1, 3, rng);
    nn::conv_init(store, "enc.l1.conv1", cfg.c1, cfg.c1, 3, rng);
    nn::conv_init(store, "enc.l2.down", cfg.c2, cfg.c1, 3, rng);
    nn::conv_init(store, "enc.l2.conv0", cfg.c2, cfg.c2, 3, rng);
    nn::conv_init(store, "enc.l2.conv1", cfg.c2, cfg.c2, 3, rng);

    // Fusion branches, all landing at quarter resolution. Branch width is
    // sized so the concatenation comes out at token_dim.
    const int in_ch[3] = {cfg.c2, cfg.c1, cfg.c0};
    int branches_total = 0;
    for (int i = 0; i < 3; ++i) branches_total += branch_count(i);
    const int fuse_w = cfg.token_dim / branches_total;
    if (fuse_w * branches_total != cfg.token_dim)
        throw ConfigError("token_dim must be divisible by the fusion branch count " +
                          std::to_string(branches_total));
    for (int i = 0; i < 3; ++i)
        for (int b = 0; b < branch_count(i); ++b)
            nn::conv_init(store,
                          "fuse.i" + std::to_string(i) + ".b" + std::to_string(b), fuse_w,
                          in_ch[i], 3, rng);
    nn::conv_init(store, "fuse.map", cfg.token_dim, cfg.token_dim, 1, rng,
                  /*with_slope=*/false);
    store.create("fuse.norm.gamma", Tensor<T>::full(Shape(1, 1, 1, cfg.token_dim), T(1)));
    store.create("fuse.norm.beta", Tensor<T>(Shape(1, 1, 1, cfg.token_dim)));
}

template <class Ctx>
PyramidT<typename Ctx::Value> extract_pyramid(Ctx& cx, typename Ctx::Value frame) {
    const Shape s = cx.shape(frame);
    if (s.c != 1)
        throw ConfigError("extract_pyramid expects a 1-channel frame, got " + s.str());
    if (s.h % 4 != 0 || s.w % 4 != 0)
        throw ConfigError("extract_pyramid: dims of " + s.str() +
                          " must be multiples of 4; pad the frame first");
    const kernels::ConvSpec same{1, 1, 1};
    const kernels::ConvSpec down{2, 1, 1};

    PyramidT<typename Ctx::Value> pyr;
    auto l0 = nn::conv_prelu(cx, frame, "enc.l0.conv0", same);
    pyr.levels[0] = nn::conv_prelu(cx, l0, "enc.l0.conv1", same);
    auto l1 = nn::conv_prelu(cx, pyr.levels[0], "enc.l1.down", down);
    l1 = nn::conv_prelu(cx, l1, "enc.l1.conv0", same);
    pyr.levels[1] = nn::conv_prelu(cx, l1, "enc.l1.conv1", same);
    auto l2 = nn::conv_prelu(cx, pyr.levels[1], "enc.l2.down", down);
    l2 = nn::conv_prelu(cx, l2, "enc.l2.conv0", same);
    pyr.levels[2] = nn::conv_prelu(cx, l2, "enc.l2.conv1", same);
    return pyr;
}

// Applies the atrous branches for one fusion index and concatenates their
// outputs along channels. The caller passes the pyramid level whose
// resolution matches the index (index 0 = quarter-res level ... index 2 =
// full-res level) so every branch lands at quarter resolution.
template <class Ctx>
typename Ctx::Value fuse_level(Ctx& cx, typename Ctx::Value level, int level_index) {
    if (level_index < 0 || level_index > 2)
        throw ConfigError("fuse_level: index must be in {0,1,2}");
    const int stride = branch_stride(level_index);
    std::vector<typename Ctx::Value> outs;
    for (int b = 0; b < branch_count(level_index); ++b) {
        const int dil = b + 1;  // n-th branch: padding = dilation = n
        outs.push_back(nn::conv_prelu(
            cx, level, "fuse.i" + std::to_string(level_index) + ".b" + std::to_string(b),
            kernels::ConvSpec{stride, dil, dil}));
    }
    return outs.size() == 1 ? outs[0] : cx.concat(outs, 1);
}

template <class Ctx>
FusedTokensT<typename Ctx::Value> fuse_frame(Ctx& cx,
                                             const PyramidT<typename Ctx::Value>& pyr) {
    // index i consumes level 2-i: coarse levels need no striding, the
    // full-res level is brought down by stride 4.
    auto f0 = fuse_level(cx, pyr.levels[2], 0);
    auto f1 = fuse_level(cx, pyr.levels[1], 1);
    auto f2 = fuse_level(cx, pyr.levels[0], 2);
    auto cat = cx.concat({f0, f1, f2}, 1);
    auto mapped = nn::conv_plain(cx, cat, "fuse.map", kernels::ConvSpec{1, 0, 1});
    const Shape gs = cx.shape(mapped);
    FusedTokensT<typename Ctx::Value> out;
    out.grid_h = gs.h;
    out.grid_w = gs.w;
    auto tokens = cx.grid_to_tokens(mapped);
    out.tokens = cx.layer_norm(tokens, cx.param("fuse.norm.gamma"), cx.param("fuse.norm.beta"));
    return out;
}

}  // namespace encoder
}  // namespace mostdsa

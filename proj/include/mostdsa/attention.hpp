#pragma once

#include <utility>

#include "mostdsa/encoder.hpp"

// Motion-structure feature extraction via scoped lambda cross-attention.
// Each frame's queries attend to the other frame's keys/values; the context
// is summarized into a global content lambda plus per-position scoped
// lambdas realized convolutionally, so no n x n attention map is ever built.

namespace mostdsa {

template <class V>
struct MotionStructureT {
    V structure;  // (2, 1, n, v): slice 0 = S_0, slice 1 = S_1
    V motion;     // (2, 1, n, v): slice 0 = M_0, slice 1 = M_1
    int grid_h = 0;
    int grid_w = 0;
};

namespace attention {

template <typename T>
void init_params(ParamStore<T>& store, const Config& cfg, Rng& rng) {
    const int d = cfg.token_dim;
    nn::linear_init(store, "attn.wq", d, d, rng);
    nn::linear_init(store, "attn.wk", d, d, rng);
    nn::linear_init(store, "attn.wv", d, d, rng);
    nn::linear_init(store, "attn.pos.map", cfg.pos_basis, d, rng);
    const int r = cfg.effective_r();
    store.create("attn.e", random_normal<T>(Shape(cfg.heads, d / cfg.heads, r, r), rng, 0.0, 0.02));
}

// Fixed sinusoidal grid encoding: per token, sin/cos pairs of both
// normalized coordinates over pos_basis/4 octaves.
template <typename T>
Tensor<T> position_basis(int grid_h, int grid_w, int basis) {
    Tensor<T> out(Shape(1, 1, grid_h * grid_w, basis));
    const int octaves = basis / 4;
    for (int y = 0; y < grid_h; ++y)
        for (int x = 0; x < grid_w; ++x) {
            T* row = out.data() + out.idx(0, 0, y * grid_w + x, 0);
            const double u = (x + 0.5) / grid_w;
            const double v = (y + 0.5) / grid_h;
            for (int o = 0; o < octaves; ++o) {
                const double f = 3.14159265358979323846 * double(1 << o);
                row[4 * o + 0] = static_cast<T>(std::sin(f * u));
                row[4 * o + 1] = static_cast<T>(std::cos(f * u));
                row[4 * o + 2] = static_cast<T>(std::sin(f * v));
                row[4 * o + 3] = static_cast<T>(std::cos(f * v));
            }
        }
    return out;
}

// F_a = C(f0, f1), F_a' = C(f1, f0), stacked on the frame axis so that each
// frame's queries later pair with the other frame's keys and values.
template <class Ctx>
std::pair<typename Ctx::Value, typename Ctx::Value> cross_pair(Ctx& cx, typename Ctx::Value f0,
                                                               typename Ctx::Value f1) {
    if (cx.shape(f0) != cx.shape(f1))
        throw ConfigError("cross_pair: token shapes differ, " + cx.shape(f0).str() + " vs " +
                          cx.shape(f1).str());
    return {cx.concat({f0, f1}, 0), cx.concat({f1, f0}, 0)};
}

// Q from the forward stack, K and V from the reversed stack.
template <class Ctx>
std::array<typename Ctx::Value, 3> qkv(Ctx& cx, typename Ctx::Value fa,
                                       typename Ctx::Value fap) {
    return {cx.matmul(fa, cx.param("attn.wq")), cx.matmul(fap, cx.param("attn.wk")),
            cx.matmul(fap, cx.param("attn.wv"))};
}

// Global content lambda per frame-pair slice and head: softmax-normalized
// keys contracted against values, (k_h x v_h) per slice.
template <class Ctx>
typename Ctx::Value lambda_content(Ctx& cx, typename Ctx::Value k_heads,
                                   typename Ctx::Value v_heads) {
    auto kbar = cx.softmax(k_heads, 2);  // over the token axis
    return cx.matmul(kbar, v_heads, /*ta=*/true, /*tb=*/false);
}

template <class Ctx>
MotionStructureT<typename Ctx::Value> most_attention(Ctx& cx, const FusedTokensT<typename Ctx::Value>& f0,
                                                     const FusedTokensT<typename Ctx::Value>& f1,
                                                     const Config& cfg) {
    const int r = cfg.effective_r();
    if (r % 2 == 0) throw ConfigError("context scope r must be odd");
    const int gh = f0.grid_h, gw = f0.grid_w;

    auto [fa, fap] = cross_pair(cx, f0.tokens, f1.tokens);
    auto qkv_t = qkv(cx, fa, fap);
    auto q = cx.split_heads(qkv_t[0], cfg.heads);
    auto k = cx.split_heads(qkv_t[1], cfg.heads);
    auto v = cx.split_heads(qkv_t[2], cfg.heads);

    auto lc = lambda_content(cx, k, v);
    auto e = cx.param("attn.e");

    // position-information tokens: fixed sinusoidal basis through a learned map
    auto basis = cx.constant(position_basis<typename Ctx::Scalar>(gh, gw, cfg.pos_basis));
    auto p = cx.split_heads(cx.matmul(basis, cx.param("attn.pos.map")), cfg.heads);

    auto s_heads = cx.add(cx.matmul(q, lc), cx.position_lambda(q, v, e, gh, gw));
    auto m_heads = cx.add(cx.matmul(p, lc), cx.position_lambda(p, v, e, gh, gw));

    MotionStructureT<typename Ctx::Value> ms;
    ms.structure = cx.merge_heads(s_heads);
    ms.motion = cx.merge_heads(m_heads);
    ms.grid_h = gh;
    ms.grid_w = gw;
    return ms;
}

}  // namespace attention
}  // namespace mostdsa

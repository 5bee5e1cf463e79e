#pragma once

#include <array>

#include "mostdsa/nn.hpp"

// Training losses: L1 reconstruction, perceptual feature L1, and Gram-matrix
// style loss, combined with an epoch-dependent weight schedule. Perceptual
// features come from a frozen seed-deterministic conv stack; it is a proxy
// with the same loss structure as a pretrained backbone, not a numerical
// equivalent of one.

namespace mostdsa {

struct LossWeights {
    double w1 = 1.0;
    double w_perceptual = 1.0;
    double w_style = 0.0;

    // first epoch (1.0, 1.0, 0.0), afterwards (1.0, 0.25, 40.0)
    static LossWeights for_epoch(int epoch) {
        if (epoch < 0) throw UsageError("epoch must be >= 0");
        if (epoch == 0) return {1.0, 1.0, 0.0};
        return {1.0, 0.25, 40.0};
    }
};

// Frozen 3-stage feature stack. Stage 0 has a 1x1 receptive field; stages 1
// and 2 downsample by 2 with 3x3 kernels. Weights are drawn once from the
// seed and never trained.
template <typename T>
class PerceptualExtractor {
public:
    static constexpr int kStages = 3;

    explicit PerceptualExtractor(std::uint64_t seed) {
        Rng rng(seed * 0x2545f4914f6cdd1dULL + 3);
        w_[0] = he_uniform(Shape(8, 3, 1, 1), rng);
        w_[1] = he_uniform(Shape(16, 8, 3, 3), rng);
        w_[2] = he_uniform(Shape(32, 16, 3, 3), rng);
        for (int s = 0; s < kStages; ++s) {
            b_[s] = Tensor<T>(Shape(1, w_[s].shape().n, 1, 1));
            slope_[s] = Tensor<T>::full(Shape(1, w_[s].shape().n, 1, 1), T(0.2));
        }
    }

    template <class Ctx>
    std::array<typename Ctx::Value, kStages> stages(Ctx& cx, typename Ctx::Value gray) const {
        if (cx.shape(gray).c != 1)
            throw ConfigError("perceptual extractor expects grayscale input, got " +
                              cx.shape(gray).str());
        auto x = cx.concat({gray, gray, gray}, 1);  // replicate to 3 channels
        std::array<typename Ctx::Value, kStages> out;
        const kernels::ConvSpec specs[kStages] = {{1, 0, 1}, {2, 1, 1}, {2, 1, 1}};
        for (int s = 0; s < kStages; ++s) {
            x = cx.conv2d(x, cx.constant(w_[s]), cx.constant(b_[s]), specs[s]);
            x = cx.prelu(x, cx.constant(slope_[s]));
            out[s] = x;
        }
        return out;
    }

private:
    static Tensor<T> he_uniform(Shape s, Rng& rng) {
        const double bound = std::sqrt(6.0 / (double(s.c) * s.h * s.w));
        return random_uniform<T>(s, rng, -bound, bound);
    }

    Tensor<T> w_[kStages];
    Tensor<T> b_[kStages];
    Tensor<T> slope_[kStages];
};

namespace losses {

template <class Ctx>
typename Ctx::Value l1_loss(Ctx& cx, typename Ctx::Value pred, typename Ctx::Value target) {
    if (cx.shape(pred) != cx.shape(target))
        throw ConfigError("l1_loss: shape mismatch " + cx.shape(pred).str() + " vs " +
                          cx.shape(target).str());
    return cx.mean_all(cx.abs_val(cx.add(pred, cx.affine(target, -1.0, 0.0))));
}

template <class Ctx, typename T>
typename Ctx::Value perceptual_loss(Ctx& cx, typename Ctx::Value pred,
                                    typename Ctx::Value target,
                                    const PerceptualExtractor<T>& px) {
    auto fp = px.stages(cx, pred);
    auto ft = px.stages(cx, target);
    typename Ctx::Value total;
    for (int s = 0; s < PerceptualExtractor<T>::kStages; ++s) {
        auto term = cx.mean_all(cx.abs_val(cx.add(fp[s], cx.affine(ft[s], -1.0, 0.0))));
        total = s == 0 ? term : cx.add(total, term);
    }
    return total;
}

// Gram matrix over (pixels x channels) features, normalized by channels x pixels.
template <class Ctx>
typename Ctx::Value gram(Ctx& cx, typename Ctx::Value features) {
    const Shape s = cx.shape(features);
    auto tokens = cx.grid_to_tokens(features);  // (N, 1, HW, C)
    auto g = cx.matmul(tokens, tokens, /*ta=*/true, /*tb=*/false);
    return cx.affine(g, 1.0 / (double(s.c) * s.h * s.w), 0.0);
}

template <class Ctx, typename T>
typename Ctx::Value style_loss(Ctx& cx, typename Ctx::Value pred, typename Ctx::Value target,
                               const PerceptualExtractor<T>& px) {
    auto fp = px.stages(cx, pred);
    auto ft = px.stages(cx, target);
    typename Ctx::Value total;
    for (int s = 0; s < PerceptualExtractor<T>::kStages; ++s) {
        auto d = cx.add(gram(cx, fp[s]), cx.affine(gram(cx, ft[s]), -1.0, 0.0));
        auto term = cx.sum_all(cx.mul(d, d));
        total = s == 0 ? term : cx.add(total, term);
    }
    const Shape s = cx.shape(pred);
    return cx.affine(total, 1.0 / double(s.n), 0.0);
}

template <class Ctx, typename T>
typename Ctx::Value combined_loss(Ctx& cx, typename Ctx::Value pred, typename Ctx::Value target,
                                  int epoch, const PerceptualExtractor<T>& px) {
    const LossWeights w = LossWeights::for_epoch(epoch);
    auto total = cx.affine(l1_loss(cx, pred, target), w.w1, 0.0);
    if (w.w_perceptual != 0.0)
        total = cx.add(total, cx.affine(perceptual_loss(cx, pred, target, px), w.w_perceptual, 0.0));
    if (w.w_style != 0.0)
        total = cx.add(total, cx.affine(style_loss(cx, pred, target, px), w.w_style, 0.0));
    return total;
}

}  // namespace losses
}  // namespace mostdsa

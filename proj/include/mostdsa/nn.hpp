#pragma once

#include <cmath>
#include <string>

#include "mostdsa/autodiff.hpp"
#include "mostdsa/config.hpp"

// Shared building blocks: parameter initializers and the conv+PReLU unit
// used throughout the network.

namespace mostdsa {
namespace nn {

// Fan-in scaled uniform conv weights (He bound, keeps activation scale
// roughly constant through the stacks), zero bias, PReLU slope 0.25.
template <typename T>
void conv_init(ParamStore<T>& store, const std::string& name, int out_c, int in_c, int k,
               Rng& rng, bool with_slope = true, bool zero = false) {
    Tensor<T> w(Shape(out_c, in_c, k, k));
    if (!zero) {
        const double bound = std::sqrt(6.0 / (double(in_c) * k * k));
        for (std::int64_t i = 0; i < w.numel(); ++i)
            w.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    store.create(name + ".w", std::move(w));
    store.create(name + ".b", Tensor<T>(Shape(1, out_c, 1, 1)));
    if (with_slope)
        store.create(name + ".slope", Tensor<T>::full(Shape(1, out_c, 1, 1), T(0.25)));
}

// (1,1,in,out) matrix for token-space linear maps.
template <typename T>
void linear_init(ParamStore<T>& store, const std::string& name, int in_dim, int out_dim,
                 Rng& rng) {
    const double bound = std::sqrt(6.0 / double(in_dim));
    store.create(name, random_uniform<T>(Shape(1, 1, in_dim, out_dim), rng, -bound, bound));
}

template <class Ctx>
typename Ctx::Value conv_prelu(Ctx& cx, typename Ctx::Value x, const std::string& name,
                               const kernels::ConvSpec& spec) {
    auto y = cx.conv2d(x, cx.param(name + ".w"), cx.param(name + ".b"), spec);
    return cx.prelu(y, cx.param(name + ".slope"));
}

template <class Ctx>
typename Ctx::Value conv_plain(Ctx& cx, typename Ctx::Value x, const std::string& name,
                               const kernels::ConvSpec& spec) {
    return cx.conv2d(x, cx.param(name + ".w"), cx.param(name + ".b"), spec);
}

}  // namespace nn
}  // namespace mostdsa

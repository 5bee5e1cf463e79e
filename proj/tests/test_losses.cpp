#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mostdsa/losses.hpp"

using namespace mostdsa;

namespace {

double scalar(EvalContext<double>& cx, const Tensor<double>& v) { return v.data()[0]; }

Tensor<double> rand_img(Shape s, Rng& rng, double lo = 0.0, double hi = 1.0) {
    return random_uniform<double>(s, rng, lo, hi);
}

}  // namespace

TEST_CASE("l1 loss definition and oracle") {
    EvalContext<double> cx;
    Rng rng(90);
    Tensor<double> a = rand_img(Shape(1, 1, 8, 8), rng);
    CHECK(scalar(cx, losses::l1_loss(cx, cx.input(a), cx.input(a))) == 0.0);

    Tensor<double> b = kernels::affine(a, 1.0, 0.1);
    CHECK(scalar(cx, losses::l1_loss(cx, cx.input(a), cx.input(b))) ==
          Catch::Approx(0.1).margin(1e-12));

    Tensor<double> c = rand_img(Shape(1, 1, 8, 8), rng);
    double want = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        want += std::abs(a.data()[i] - c.data()[i]);
    want /= double(a.numel());
    CHECK(scalar(cx, losses::l1_loss(cx, cx.input(a), cx.input(c))) ==
          Catch::Approx(want).margin(1e-12));

    CHECK_THROWS_AS(losses::l1_loss(cx, cx.input(a), cx.input(rand_img(Shape(1, 1, 4, 4), rng))),
                    ConfigError);
}

TEST_CASE("perceptual loss: zero at equality, nonnegative, noise-monotone") {
    EvalContext<double> cx;
    PerceptualExtractor<double> px(7);
    Rng rng(91);
    Tensor<double> img = rand_img(Shape(1, 1, 16, 16), rng);

    CHECK(scalar(cx, losses::perceptual_loss(cx, cx.input(img), cx.input(img), px)) == 0.0);

    for (int i = 0; i < 5; ++i) {
        Tensor<double> other = rand_img(Shape(1, 1, 16, 16), rng);
        CHECK(scalar(cx, losses::perceptual_loss(cx, cx.input(img), cx.input(other), px)) >= 0.0);
    }

    // increasing additive noise amplitude increases the loss
    Rng nz(92);
    Tensor<double> noise(Shape(1, 1, 16, 16));
    for (std::int64_t i = 0; i < noise.numel(); ++i) noise.data()[i] = nz.uniform(-1, 1);
    double prev = 0;
    for (double amp : {0.01, 0.03, 0.1}) {
        Tensor<double> noisy = kernels::add(img, kernels::affine(noise, amp, 0.0));
        const double v =
            scalar(cx, losses::perceptual_loss(cx, cx.input(noisy), cx.input(img), px));
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("style loss: zero at equality, PSD gram, layout-insensitive stage 0") {
    EvalContext<double> cx;
    PerceptualExtractor<double> px(8);
    Rng rng(93);
    Tensor<double> img = rand_img(Shape(1, 1, 16, 16), rng);
    CHECK(scalar(cx, losses::style_loss(cx, cx.input(img), cx.input(img), px)) == 0.0);

    // Gram matrices are symmetric positive semidefinite
    Tensor<double> feats = rand_img(Shape(1, 5, 6, 6), rng, -1.0, 1.0);
    Tensor<double> g = cx.value(losses::gram(cx, cx.input(feats)));
    REQUIRE(g.shape() == Shape(1, 1, 5, 5));
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            CHECK(g.at(0, 0, i, j) == Catch::Approx(g.at(0, 0, j, i)).margin(1e-12));
    for (int trial = 0; trial < 10; ++trial) {
        double quad = 0;
        std::vector<double> x(5);
        for (auto& v : x) v = rng.uniform(-1, 1);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) quad += x[i] * g.at(0, 0, i, j) * x[j];
        CHECK(quad >= -1e-12);
    }

    // stage 0 has a 1x1 receptive field: permuting pixels leaves its Gram
    // unchanged (texture statistics, not layout)
    Tensor<double> perm(img.shape());
    std::vector<int> idx(16 * 16);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = int(i);
    Rng prng(94);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[prng.below(i)]);
    for (int i = 0; i < 16 * 16; ++i)
        perm.data()[i] = img.data()[idx[i]];

    auto g_img = cx.value(losses::gram(cx, px.stages(cx, cx.input(img))[0]));
    auto g_perm = cx.value(losses::gram(cx, px.stages(cx, cx.input(perm))[0]));
    double worst = 0;
    for (std::int64_t i = 0; i < g_img.numel(); ++i)
        worst = std::max(worst, std::abs(g_img.data()[i] - g_perm.data()[i]));
    CHECK(worst < 1e-10);
}

TEST_CASE("extractor is frozen and seed-deterministic") {
    EvalContext<double> cx;
    Rng rng(95);
    Tensor<double> img = rand_img(Shape(1, 1, 16, 16), rng);
    PerceptualExtractor<double> a(123), b(123), c(124);
    auto fa = cx.value(a.stages(cx, cx.input(img))[2]);
    auto fb = cx.value(b.stages(cx, cx.input(img))[2]);
    auto fc = cx.value(c.stages(cx, cx.input(img))[2]);
    double same = 0, diff = 0;
    for (std::int64_t i = 0; i < fa.numel(); ++i) {
        same = std::max(same, std::abs(fa.data()[i] - fb.data()[i]));
        diff = std::max(diff, std::abs(fa.data()[i] - fc.data()[i]));
    }
    CHECK(same == 0.0);
    CHECK(diff > 0.0);
}

TEST_CASE("combined loss weight schedule") {
    EvalContext<double> cx;
    PerceptualExtractor<double> px(9);
    Rng rng(96);
    Tensor<double> a = rand_img(Shape(1, 1, 16, 16), rng);
    Tensor<double> b = rand_img(Shape(1, 1, 16, 16), rng);

    const double l1 = scalar(cx, losses::l1_loss(cx, cx.input(a), cx.input(b)));
    const double pc = scalar(cx, losses::perceptual_loss(cx, cx.input(a), cx.input(b), px));
    const double st = scalar(cx, losses::style_loss(cx, cx.input(a), cx.input(b), px));

    const double e0 = scalar(cx, losses::combined_loss(cx, cx.input(a), cx.input(b), 0, px));
    CHECK(e0 == Catch::Approx(1.0 * l1 + 1.0 * pc).margin(1e-12));  // style excluded exactly

    const double e5 = scalar(cx, losses::combined_loss(cx, cx.input(a), cx.input(b), 5, px));
    CHECK(e5 == Catch::Approx(1.0 * l1 + 0.25 * pc + 40.0 * st).epsilon(1e-12));

    CHECK(scalar(cx, losses::combined_loss(cx, cx.input(a), cx.input(a), 0, px)) == 0.0);
    CHECK(scalar(cx, losses::combined_loss(cx, cx.input(a), cx.input(a), 3, px)) == 0.0);

    CHECK(LossWeights::for_epoch(0).w_style == 0.0);
    CHECK(LossWeights::for_epoch(5).w1 == 1.0);
    CHECK(LossWeights::for_epoch(5).w_perceptual == 0.25);
    CHECK(LossWeights::for_epoch(5).w_style == 40.0);
    CHECK_THROWS_AS(LossWeights::for_epoch(-1), UsageError);
}

TEST_CASE("loss gradients match finite differences") {
    PerceptualExtractor<double> px(11);
    Rng rng(97);
    ParamStore<double> store;
    store.create("pred", rand_img(Shape(1, 1, 16, 16), rng, 0.1, 0.9));
    Tensor<double> target = rand_img(Shape(1, 1, 16, 16), rng, 0.1, 0.9);

    auto check = [&](auto&& build, const char* what) {
        auto rep = grad_check<double>(store, build, "pred", 1e-4, 10);
        INFO(what << " worst " << rep.worst_param << " err " << rep.max_rel_err);
        CHECK(rep.passed);
    };

    check([&](auto& cx) { return losses::l1_loss(cx, cx.param("pred"), cx.input(target)); },
          "l1");
    check(
        [&](auto& cx) {
            return losses::perceptual_loss(cx, cx.param("pred"), cx.input(target), px);
        },
        "perceptual");
    check([&](auto& cx) { return losses::style_loss(cx, cx.param("pred"), cx.input(target), px); },
          "style");
    check(
        [&](auto& cx) {
            return losses::combined_loss(cx, cx.param("pred"), cx.input(target), 2, px);
        },
        "combined");
}

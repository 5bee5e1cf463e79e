#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mostdsa/model.hpp"

using namespace mostdsa;

namespace {

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.shape() == b.shape());
    double m = 0;
    for (std::int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
    return m;
}

Config small_config() {
    Config cfg;
    cfg.r = 3;
    cfg.seed = 61;
    return cfg;
}

template <typename T>
PairFeaturesT<Tensor<T>> features_for(const Model<T>& model, EvalContext<T>& cx,
                                      const Tensor<T>& i0, const Tensor<T>& i1) {
    return model.extract_features(cx, cx.input(i0), cx.input(i1));
}

}  // namespace

TEST_CASE("map_motion scaling and linearity") {
    Model<double> model(small_config());
    EvalContext<double> cx(&model.params());
    Rng rng(62);
    MotionStructureT<Tensor<double>> ms;
    ms.structure = random_uniform<double>(Shape(2, 1, 16, 8), rng, -1, 1);
    ms.motion = random_uniform<double>(Shape(2, 1, 16, 8), rng, -1, 1);
    ms.grid_h = 4;
    ms.grid_w = 4;

    auto [m05a, m05b] = flow_decoder::map_motion(cx, ms, 0.5);
    Tensor<double> half = kernels::affine(kernels::slice(ms.motion, 0, 0, 1), 0.5, 0.0);
    CHECK(max_abs_diff(cx.value(m05a), half) == 0.0);

    // t -> 0 limit: the frame-0 mapping vanishes
    auto [tiny, tiny1] = flow_decoder::map_motion(cx, ms, 1e-9);
    (void)tiny1;
    double mx = 0;
    for (std::int64_t i = 0; i < cx.value(tiny).numel(); ++i)
        mx = std::max(mx, std::abs(cx.value(tiny).data()[i]));
    CHECK(mx < 1e-8);

    // linearity on the M_0 slice: map(0.2) + map(0.3) == map(0.5)
    auto [a, a1] = flow_decoder::map_motion(cx, ms, 0.2);
    auto [b, b1] = flow_decoder::map_motion(cx, ms, 0.3);
    (void)a1;
    (void)b1;
    CHECK(max_abs_diff(kernels::add(cx.value(a), cx.value(b)), cx.value(m05a)) < 1e-12);

    CHECK_THROWS_AS(flow_decoder::map_motion(cx, ms, 0.0), UsageError);
    CHECK_THROWS_AS(flow_decoder::map_motion(cx, ms, 1.0), UsageError);
    CHECK_THROWS_AS(flow_decoder::map_motion(cx, ms, -0.25), UsageError);
}

TEST_CASE("zero-initialized head yields zero flow and 0.5 mask") {
    Model<float> model(small_config());
    EvalContext<float> cx(&model.params());
    Rng rng(63);
    Tensor<float> i0 = random_uniform<float>(Shape(1, 1, 32, 32), rng, 0, 1);
    Tensor<float> i1 = random_uniform<float>(Shape(1, 1, 32, 32), rng, 0, 1);
    auto feats = features_for(model, cx, i0, i1);
    auto fm = flow_decoder::estimate_flow_mask(cx, feats.ms, 0.5, feats.i0, feats.i1);

    const Tensor<float>& flow = cx.value(fm.flow);
    const Tensor<float>& mask = cx.value(fm.mask);
    CHECK(flow.shape() == Shape(1, 4, 32, 32));
    CHECK(mask.shape() == Shape(1, 1, 32, 32));
    for (std::int64_t i = 0; i < flow.numel(); ++i) CHECK(flow.data()[i] == 0.0f);
    for (std::int64_t i = 0; i < mask.numel(); ++i) CHECK(mask.data()[i] == 0.5f);
}

TEST_CASE("flow and mask come out at the input resolution") {
    Model<float> model(small_config());
    EvalContext<float> cx(&model.params());
    Rng rng(64);
    for (int n : {64, 320}) {
        Tensor<float> i0 = random_uniform<float>(Shape(1, 1, n, n), rng, 0, 1);
        Tensor<float> i1 = random_uniform<float>(Shape(1, 1, n, n), rng, 0, 1);
        auto feats = features_for(model, cx, i0, i1);
        auto fm = flow_decoder::estimate_flow_mask(cx, feats.ms, 0.25, feats.i0, feats.i1);
        CHECK(cx.shape(fm.flow) == Shape(1, 4, n, n));
        CHECK(cx.shape(fm.mask) == Shape(1, 1, n, n));
    }
}

TEST_CASE("mask strictly inside (0,1), flow finite, on random weights") {
    Config cfg = small_config();
    cfg.seed = 65;
    Model<float> model(cfg);
    // shake the zero head hard enough that the sigmoid saturates in float
    Rng wr(66);
    auto& head = model.params().at("fme.head.w").value;
    for (std::int64_t i = 0; i < head.numel(); ++i)
        head.data()[i] = float(wr.uniform(-2.0, 2.0));
    EvalContext<float> cx(&model.params());
    Tensor<float> i0 = random_uniform<float>(Shape(1, 1, 32, 32), wr, 0, 1);
    Tensor<float> i1 = random_uniform<float>(Shape(1, 1, 32, 32), wr, 0, 1);
    auto feats = features_for(model, cx, i0, i1);
    auto fm = flow_decoder::estimate_flow_mask(cx, feats.ms, 0.5, feats.i0, feats.i1);
    const Tensor<float>& mask = cx.value(fm.mask);
    for (std::int64_t i = 0; i < mask.numel(); ++i) {
        CHECK(mask.data()[i] > 0.0f);
        CHECK(mask.data()[i] < 1.0f);
    }
    CHECK(cx.value(fm.flow).all_finite());
}

TEST_CASE("decode_schedule: counts, bit-identical reuse, validation") {
    Model<float> model(small_config());
    EvalContext<float> cx(&model.params());
    Rng rng(67);
    Tensor<float> i0 = random_uniform<float>(Shape(1, 1, 32, 32), rng, 0, 1);
    Tensor<float> i1 = random_uniform<float>(Shape(1, 1, 32, 32), rng, 0, 1);
    auto feats = features_for(model, cx, i0, i1);

    auto one = flow_decoder::decode_schedule(cx, feats.ms, TimeSchedule({0.5}), feats.i0, feats.i1);
    CHECK(one.size() == 1);

    auto three = flow_decoder::decode_schedule(cx, feats.ms, TimeSchedule({0.25, 0.5, 0.75}),
                                               feats.i0, feats.i1);
    CHECK(three.size() == 3);
    CHECK(max_abs_diff(cx.value(three[1].flow), cx.value(one[0].flow)) == 0.0);
    CHECK(max_abs_diff(cx.value(three[1].mask), cx.value(one[0].mask)) == 0.0);

    CHECK_THROWS_AS(TimeSchedule({0.5, 0.5}), UsageError);
    CHECK_THROWS_AS(TimeSchedule(std::vector<double>{}), UsageError);
    CHECK_THROWS_AS(TimeSchedule({0.7, 0.3}), UsageError);
}

TEST_CASE("feature extraction runs exactly once per pair regardless of schedule") {
    Model<float> model(small_config());
    Rng rng(68);
    Tensor<float> i0 = random_uniform<float>(Shape(1, 1, 32, 32), rng, 0, 1);
    Tensor<float> i1 = random_uniform<float>(Shape(1, 1, 32, 32), rng, 0, 1);

    for (int k = 1; k <= 3; ++k) {
        model.reset_pass_counts();
        auto frames = model.interpolate(i0, i1, TimeSchedule::uniform(k));
        CHECK(int(frames.size()) == k);
        CHECK(model.pass_counts().encoder == 1);
        CHECK(model.pass_counts().attention == 1);
    }
}

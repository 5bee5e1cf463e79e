#pragma once

#include <iostream>
#include <map>

#include "mostdsa/data.hpp"
#include "mostdsa/losses.hpp"
#include "mostdsa/model.hpp"

// Training: AdamW with linear warm-up and cosine decay, seed-driven
// crop/flip/right-angle-rotation augmentation, multi-frame supervision in a
// single forward pass per group.

namespace mostdsa {
namespace train {

// -- augmentation -----------------------------------------------------------

template <typename T>
Tensor<T> hflip(const Tensor<T>& x) {
    const Shape& s = x.shape();
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx)
                    out.at(n, c, y, xx) = x.at(n, c, y, s.w - 1 - xx);
    return out;
}

template <typename T>
Tensor<T> vflip(const Tensor<T>& x) {
    const Shape& s = x.shape();
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx)
                    out.at(n, c, y, xx) = x.at(n, c, s.h - 1 - y, xx);
    return out;
}

// 90 degrees counterclockwise, `k` times; requires square input for odd k.
template <typename T>
Tensor<T> rot90(const Tensor<T>& x, int k) {
    k = ((k % 4) + 4) % 4;
    if (k == 0) return x;
    const Shape& s = x.shape();
    if (k % 2 == 1 && s.h != s.w)
        throw UsageError("rot90 by odd quarter turns needs a square image");
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) {
                    int sy = y, sx = xx;
                    if (k == 1) {
                        sy = xx;
                        sx = s.w - 1 - y;
                    } else if (k == 2) {
                        sy = s.h - 1 - y;
                        sx = s.w - 1 - xx;
                    } else {
                        sy = s.h - 1 - xx;
                        sx = y;
                    }
                    out.at(n, c, y, xx) = x.at(n, c, sy, sx);
                }
    return out;
}

// Consistent crop + flip + right-angle rotation across a whole frame group.
inline std::vector<Tensor<float>> augment_group(const std::vector<Tensor<float>>& frames,
                                                int crop, Rng& rng) {
    const Shape& s = frames.front().shape();
    const bool do_crop = crop < s.h || crop < s.w;
    int oy = 0, ox = 0;
    if (do_crop) {
        if (crop > s.h || crop > s.w)
            throw UsageError("crop " + std::to_string(crop) + " larger than frame " + s.str());
        oy = int(rng.below(std::uint64_t(s.h - crop + 1)));
        ox = int(rng.below(std::uint64_t(s.w - crop + 1)));
    }
    const bool hf = rng.uniform() < 0.5;
    const bool vf = rng.uniform() < 0.5;
    const bool square = do_crop || s.h == s.w;
    const int k = square ? int(rng.below(4)) : 2 * int(rng.below(2));

    std::vector<Tensor<float>> out;
    out.reserve(frames.size());
    for (const auto& f : frames) {
        Tensor<float> t = f;
        if (do_crop) t = kernels::slice(kernels::slice(t, 2, oy, crop), 3, ox, crop);
        if (hf) t = hflip(t);
        if (vf) t = vflip(t);
        if (k) t = rot90(t, k);
        out.push_back(std::move(t));
    }
    return out;
}

// -- optimizer ---------------------------------------------------------------

class AdamW {
public:
    AdamW(double beta1, double beta2, double weight_decay, double eps = 1e-8)
        : b1_(beta1), b2_(beta2), wd_(weight_decay), eps_(eps) {}

    void step(ParamStore<float>& store, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, double(t_));
        const double bc2 = 1.0 - std::pow(b2_, double(t_));
        for (auto& [name, p] : store) {
            auto& slot = state_[name];
            if (slot.m.empty()) {
                slot.m = Tensor<float>(p.value.shape());
                slot.v = Tensor<float>(p.value.shape());
            }
            float* w = p.value.data();
            const float* g = p.grad.data();
            float* m = slot.m.data();
            float* v = slot.v.data();
            for (std::int64_t i = 0; i < p.value.numel(); ++i) {
                m[i] = float(b1_ * m[i] + (1.0 - b1_) * g[i]);
                v[i] = float(b2_ * v[i] + (1.0 - b2_) * double(g[i]) * g[i]);
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                w[i] = float(w[i] - lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]));
            }
        }
        store.bump_step();
    }

    std::int64_t steps() const { return t_; }

private:
    struct Slot {
        Tensor<float> m, v;
    };
    double b1_, b2_, wd_, eps_;
    std::int64_t t_ = 0;
    std::map<std::string, Slot> state_;
};

// Linear warm-up to lr_peak, then cosine decay to lr_floor.
inline double lr_at(const Config& cfg, std::int64_t step, std::int64_t total_steps) {
    if (step < cfg.warmup_steps)
        return cfg.lr_peak * double(step + 1) / double(cfg.warmup_steps);
    const double span = double(std::max<std::int64_t>(1, total_steps - cfg.warmup_steps));
    const double x = std::min(1.0, double(step - cfg.warmup_steps) / span);
    return cfg.lr_floor +
           0.5 * (cfg.lr_peak - cfg.lr_floor) * (1.0 + std::cos(3.14159265358979323846 * x));
}

// -- training loop -----------------------------------------------------------

struct EpochLog {
    int epoch = 0;
    double median_loss = 0;
    double mean_loss = 0;
    double lr = 0;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
};

inline TrainResult fit(Model<float>& model, const std::vector<data::Scene>& scenes,
                       const Config& cfg, std::ostream* log = nullptr) {
    if (scenes.empty()) throw RuntimeFailure("training dataset is empty");
    const int n_interp = cfg.n_interp;

    struct GroupRef {
        int scene;
        synth::FrameGroup group;
    };
    std::vector<GroupRef> groups;
    for (std::size_t si = 0; si < scenes.size(); ++si)
        for (auto& g : synth::make_groups(int(scenes[si].frames.size()), n_interp))
            groups.push_back({int(si), g});
    if (groups.empty()) throw RuntimeFailure("no training groups available");

    const std::int64_t steps_per_epoch =
        (std::int64_t(groups.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = steps_per_epoch * cfg.epochs;

    PerceptualExtractor<float> px(cfg.perceptual_seed);
    AdamW opt(cfg.beta1, cfg.beta2, cfg.weight_decay);
    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 0xabcdef);
    const TimeSchedule sched = TimeSchedule::uniform(n_interp);

    TrainResult result;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // seeded shuffle of group order
        std::vector<std::size_t> order(groups.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        std::vector<double> losses;
        double lr = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t bend = std::min(order.size(), b + cfg.batch_size);
            model.params().zero_grad();
            for (std::size_t gi = b; gi < bend; ++gi) {
                const GroupRef& ref = groups[order[gi]];
                const auto& frames = scenes[ref.scene].frames;
                std::vector<Tensor<float>> grp;
                grp.push_back(frames[ref.group.first]);
                for (int t : ref.group.targets) grp.push_back(frames[t]);
                grp.push_back(frames[ref.group.last]);
                grp = augment_group(grp, cfg.crop, rng);

                Tape<float> tape(&model.params());
                auto feats =
                    model.extract_features(tape, tape.input(grp.front()), tape.input(grp.back()));
                Var loss;
                for (int k = 0; k < n_interp; ++k) {
                    auto pred = model.decode_frame(tape, feats, sched[k]);
                    auto term =
                        losses::combined_loss(tape, pred, tape.input(grp[1 + k]), epoch, px);
                    loss = k == 0 ? term : tape.add(loss, term);
                }
                const double lval = double(tape.value(loss).data()[0]);
                if (!std::isfinite(lval))
                    throw RuntimeFailure("NaN/Inf loss at epoch " + std::to_string(epoch) +
                                         " step " + std::to_string(step) + " (scene " +
                                         scenes[ref.scene].id + ")");
                losses.push_back(lval);
                // average gradients over the batch
                tape.backward(tape.affine(loss, 1.0 / double(bend - b), 0.0));
            }
            lr = lr_at(cfg, step, total_steps);
            opt.step(model.params(), lr);
            ++step;
        }

        std::vector<double> sorted = losses;
        std::sort(sorted.begin(), sorted.end());
        EpochLog el;
        el.epoch = epoch;
        el.median_loss = sorted[sorted.size() / 2];
        el.mean_loss = 0;
        for (double v : losses) el.mean_loss += v;
        el.mean_loss /= double(losses.size());
        el.lr = lr;
        result.epochs.push_back(el);
        if (log)
            (*log) << "epoch " << epoch << "  median_loss " << el.median_loss << "  mean_loss "
                   << el.mean_loss << "  lr " << el.lr << "\n";
    }
    return result;
}

}  // namespace train
}  // namespace mostdsa

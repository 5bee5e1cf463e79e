#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "mostdsa/tensor.hpp"

// Deterministic synthetic angiography-like sequences: a recursive 3D
// bifurcating vessel tree rendered with anti-aliased signed-distance
// strokes. Three challenge regimes: dense static structure, contrast
// diffusion (an intensity front advancing along arc length), and in-plane
// rotation of the projected 3D tree (self-occlusion). Scene geometry and
// appearance are continuous functions of a real time index, so exact
// intermediate ground truth exists for any t.

namespace mostdsa {
namespace synth {

enum class Regime { structure, diffusion, rotation, mixed };

inline std::string regime_name(Regime r) {
    switch (r) {
        case Regime::structure: return "structure";
        case Regime::diffusion: return "diffusion";
        case Regime::rotation: return "rotation";
        case Regime::mixed: return "mixed";
    }
    return "?";
}

inline Regime parse_regime(const std::string& s) {
    if (s == "structure") return Regime::structure;
    if (s == "diffusion") return Regime::diffusion;
    if (s == "rotation") return Regime::rotation;
    if (s == "mixed") return Regime::mixed;
    throw ConfigError("unknown regime '" + s + "' (structure|diffusion|rotation|mixed)");
}

struct Segment {
    double x0, y0, z0, x1, y1, z1;  // pixel units, z shares the x scale
    double r0, r1;                  // stroke radius at the endpoints
    double arc0, arc1;              // arc length from the root
    int branch_id;
    double brightness;
};

class VesselScene {
public:
    // Per-pixel nearest and second-nearest covering branch ids (-1 = none);
    // used to verify that rotation actually flips occlusion order somewhere.
    struct Occupancy {
        int h = 0, w = 0;
        std::vector<int> front, back;
    };

    VesselScene(std::uint64_t seed, int n_frames, int height, int width, Regime regime)
        : seed_(seed), n_frames_(n_frames), h_(height), w_(width), regime_(regime) {
        if (n_frames < 3) throw ConfigError("a sequence needs at least 3 frames");
        if (height % 4 != 0 || width % 4 != 0 || height < 16 || width < 16)
            throw ConfigError("resolution " + std::to_string(height) + "x" +
                              std::to_string(width) + " must be multiples of 4, at least 16");
        Rng rng(seed * 0x100000001b3ULL + 0x9e3779b9ULL);
        grow(rng);

        const bool rotating = regime == Regime::rotation || regime == Regime::mixed;
        const bool diffusing = regime == Regime::diffusion || regime == Regime::mixed;
        rot_rate_deg_ = rotating ? rng.uniform(1.8, 3.2) * (rng.uniform() < 0.5 ? -1 : 1) : 0.0;
        if (diffusing) {
            front_start_ = 0.12 * arc_total_;
            front_speed_ = 1.05 * arc_total_ / double(n_frames_ - 1);
            front_width_ = 0.06 * arc_total_;
        }
        // diffusion regime keeps brightness uniform so intensity growth is
        // monotone by construction; the others vary it per branch so depth
        // order is visible
        if (regime == Regime::diffusion)
            for (auto& s : segments_) s.brightness = 0.9;
    }

    std::uint64_t seed() const { return seed_; }
    int frames() const { return n_frames_; }
    int height() const { return h_; }
    int width() const { return w_; }
    Regime regime() const { return regime_; }

    Tensor<float> render(double time, Occupancy* occ = nullptr) const {
        Tensor<float> img(Shape(1, 1, h_, w_));
        if (occ) {
            occ->h = h_;
            occ->w = w_;
            occ->front.assign(std::size_t(h_) * w_, -1);
            occ->back.assign(std::size_t(h_) * w_, -1);
        }
        const double theta = rot_rate_deg_ * time * 3.14159265358979323846 / 180.0;
        const double ct = std::cos(theta), st = std::sin(theta);
        const double cx = w_ / 2.0;
        const double front = front_speed_ > 0 ? front_start_ + front_speed_ * time : 1e30;

        struct Proj {
            double x0, y0, x1, y1, z;
            const Segment* seg;
        };
        std::vector<Proj> projs;
        projs.reserve(segments_.size());
        for (const auto& s : segments_) {
            Proj p;
            p.x0 = cx + (s.x0 - cx) * ct + s.z0 * st;
            p.x1 = cx + (s.x1 - cx) * ct + s.z1 * st;
            p.y0 = s.y0;
            p.y1 = s.y1;
            p.z = 0.5 * ((-(s.x0 - cx) * st + s.z0 * ct) + (-(s.x1 - cx) * st + s.z1 * ct));
            p.seg = &s;
            projs.push_back(p);
        }
        // painter's order, far to near; stable for determinism
        std::stable_sort(projs.begin(), projs.end(),
                         [](const Proj& a, const Proj& b) { return a.z > b.z; });

        const double aa = 1.0;
        for (const auto& p : projs) {
            const Segment& s = *p.seg;
            const double rmax = std::max(s.r0, s.r1) + aa;
            const int ylo = std::max(0, int(std::floor(std::min(p.y0, p.y1) - rmax)));
            const int yhi = std::min(h_ - 1, int(std::ceil(std::max(p.y0, p.y1) + rmax)));
            const int xlo = std::max(0, int(std::floor(std::min(p.x0, p.x1) - rmax)));
            const int xhi = std::min(w_ - 1, int(std::ceil(std::max(p.x0, p.x1) + rmax)));
            const double dx = p.x1 - p.x0, dy = p.y1 - p.y0;
            const double len2 = dx * dx + dy * dy;
            for (int y = ylo; y <= yhi; ++y)
                for (int x = xlo; x <= xhi; ++x) {
                    const double px = x - p.x0, py = y - p.y0;
                    double u = len2 > 1e-12 ? (px * dx + py * dy) / len2 : 0.0;
                    u = std::min(1.0, std::max(0.0, u));
                    const double ddx = px - u * dx, ddy = py - u * dy;
                    const double dist = std::sqrt(ddx * ddx + ddy * ddy);
                    const double radius = s.r0 + (s.r1 - s.r0) * u;
                    double alpha = std::min(1.0, std::max(0.0, (radius + 0.5 * aa - dist) / aa));
                    if (alpha <= 1e-4) continue;
                    if (front < 1e29) {
                        const double arc = s.arc0 + (s.arc1 - s.arc0) * u;
                        alpha /= 1.0 + std::exp((arc - front) / front_width_);
                        if (alpha <= 1e-4) continue;
                    }
                    float& pix = img.at(0, 0, y, x);
                    pix = float(alpha * s.brightness + (1.0 - alpha) * pix);
                    if (occ && alpha > 0.3) {
                        const std::size_t o = std::size_t(y) * w_ + x;
                        if (occ->front[o] != s.branch_id) {
                            occ->back[o] = occ->front[o];
                            occ->front[o] = s.branch_id;
                        }
                    }
                }
        }
        return img;
    }

private:
    void grow(Rng& rng) {
        const double m = std::min(h_, w_);
        struct Tip {
            double x, y, z;
            double dx, dy, dz;
            double len, radius, arc;
            int depth;
        };
        const int max_depth = 4 + int(rng.below(3));  // 4..6
        Tip root;
        root.x = w_ * rng.uniform(0.4, 0.6);
        root.y = h_ * 0.96;
        root.z = 0.0;
        const double tilt = rng.uniform(-0.25, 0.25);
        root.dx = std::sin(tilt);
        root.dy = -std::cos(tilt);
        root.dz = rng.uniform(-0.3, 0.3);
        normalize(root);
        root.len = 0.30 * m;
        root.radius = std::max(1.3, m / 34.0);
        root.arc = 0.0;
        root.depth = 0;

        int next_id = 0;
        std::vector<Tip> stack = {root};
        while (!stack.empty()) {
            Tip t = stack.back();
            stack.pop_back();
            const int id = next_id++;
            const double brightness = rng.uniform(0.75, 1.0);
            // draw the branch as three slightly bent sub-segments
            const int subs = 3;
            const double r_end = t.radius * rng.uniform(0.6, 0.8);
            double arc = t.arc;
            double px = t.x, py = t.y, pz = t.z;
            double dx = t.dx, dy = t.dy, dz = t.dz;
            for (int ss = 0; ss < subs; ++ss) {
                bend(rng, dx, dy, dz, 8.0);
                const double sl = t.len / subs;
                const double nx = px + dx * sl, ny = py + dy * sl, nz = pz + dz * sl;
                Segment seg;
                seg.x0 = px;
                seg.y0 = py;
                seg.z0 = pz;
                seg.x1 = nx;
                seg.y1 = ny;
                seg.z1 = nz;
                const double f0 = double(ss) / subs, f1 = double(ss + 1) / subs;
                seg.r0 = t.radius + (r_end - t.radius) * f0;
                seg.r1 = t.radius + (r_end - t.radius) * f1;
                seg.arc0 = arc;
                seg.arc1 = arc + sl;
                seg.branch_id = id;
                seg.brightness = brightness;
                segments_.push_back(seg);
                arc += sl;
                px = nx;
                py = ny;
                pz = nz;
            }
            arc_total_ = std::max(arc_total_, arc);

            if (t.depth + 1 <= max_depth) {
                for (int ch = 0; ch < 2; ++ch) {
                    Tip child;
                    child.x = px;
                    child.y = py;
                    child.z = pz;
                    child.dx = dx;
                    child.dy = dy;
                    child.dz = dz;
                    bend(rng, child.dx, child.dy, child.dz, rng.uniform(15.0, 45.0));
                    child.len = t.len * rng.uniform(0.62, 0.82);
                    child.radius = r_end * rng.uniform(0.75, 0.95);
                    child.arc = arc;
                    child.depth = t.depth + 1;
                    stack.push_back(child);
                }
            }
        }
    }

    template <typename TipT>
    static void normalize(TipT& t) {
        const double n = std::sqrt(t.dx * t.dx + t.dy * t.dy + t.dz * t.dz);
        t.dx /= n;
        t.dy /= n;
        t.dz /= n;
    }

    // rotate (dx,dy,dz) by `deg` degrees around a random perpendicular axis
    static void bend(Rng& rng, double& dx, double& dy, double& dz, double deg) {
        double ax = rng.uniform(-1, 1), ay = rng.uniform(-1, 1), az = rng.uniform(-1, 1);
        // project out the parallel component
        const double dot = ax * dx + ay * dy + az * dz;
        ax -= dot * dx;
        ay -= dot * dy;
        az -= dot * dz;
        double n = std::sqrt(ax * ax + ay * ay + az * az);
        if (n < 1e-9) {
            ax = dy;
            ay = -dx;
            az = 0;
            n = std::sqrt(ax * ax + ay * ay + az * az);
            if (n < 1e-9) {
                ax = 1;
                ay = 0;
                az = 0;
                n = 1;
            }
        }
        ax /= n;
        ay /= n;
        az /= n;
        const double a = deg * 3.14159265358979323846 / 180.0;
        const double c = std::cos(a), s = std::sin(a);
        // Rodrigues rotation; axis is perpendicular to d so the dot term drops
        const double rx = dx * c + (ay * dz - az * dy) * s;
        const double ry = dy * c + (az * dx - ax * dz) * s;
        const double rz = dz * c + (ax * dy - ay * dx) * s;
        dx = rx;
        dy = ry;
        dz = rz;
        const double nn = std::sqrt(dx * dx + dy * dy + dz * dz);
        dx /= nn;
        dy /= nn;
        dz /= nn;
    }

    std::uint64_t seed_;
    int n_frames_, h_, w_;
    Regime regime_;
    std::vector<Segment> segments_;
    double arc_total_ = 0.0;
    double rot_rate_deg_ = 0.0;
    double front_start_ = 0.0, front_speed_ = 0.0, front_width_ = 1.0;
};

inline Tensor<float> analytic_midframe(const VesselScene& scene, double t) {
    return scene.render(t);
}

inline std::vector<Tensor<float>> generate_sequence(const VesselScene& scene) {
    std::vector<Tensor<float>> frames;
    frames.reserve(scene.frames());
    for (int i = 0; i < scene.frames(); ++i) frames.push_back(scene.render(double(i)));
    return frames;
}

inline std::vector<Tensor<float>> generate_sequence(std::uint64_t seed, int n_frames, int h,
                                                    int w, Regime regime) {
    return generate_sequence(VesselScene(seed, n_frames, h, w, regime));
}

// Sliding windows of n_interp+2 consecutive frames, stride 1: first/last are
// inputs, the middle ones are targets.
struct FrameGroup {
    int first = 0;
    int last = 0;
    std::vector<int> targets;
};

inline std::vector<FrameGroup> make_groups(int seq_len, int n_interp) {
    if (n_interp < 1) throw UsageError("make_groups: n_interp must be >= 1");
    if (seq_len < n_interp + 2)
        throw UsageError("make_groups: sequence of " + std::to_string(seq_len) +
                         " frames too short for n_interp = " + std::to_string(n_interp));
    std::vector<FrameGroup> groups;
    for (int i = 0; i + n_interp + 1 < seq_len; ++i) {
        FrameGroup g;
        g.first = i;
        g.last = i + n_interp + 1;
        for (int k = 1; k <= n_interp; ++k) g.targets.push_back(i + k);
        groups.push_back(g);
    }
    return groups;
}

}  // namespace synth
}  // namespace mostdsa

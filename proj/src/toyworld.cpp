// SPDX-License-Identifier: Apache-2.0
#include "syncvp/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace syncvp {

void WorldConfig::validate() const {
    if (n_objects < 1) throw ConfigError("n_objects must be >= 1");
    if (T < 1 || H < 1 || W < 1) throw ConfigError("world geometry must be positive");
    if (radius_min <= 0 || radius_max < radius_min) throw ConfigError("invalid radius range");
    if (2 * radius_max + 1 >= std::min(H, W)) throw ConfigError("objects do not fit in the frame");
    if (speed_min < 0 || speed_max < speed_min) throw ConfigError("invalid speed range");
    if (intensity_min <= 0 || intensity_min > 1) throw ConfigError("intensity_min must be in (0, 1]");
}

namespace {

void reflect(double& pos, double& vel, double lo, double hi) {
    // Repeated folding handles steps longer than the interval.
    for (int guard = 0; guard < 8 && (pos < lo || pos > hi); ++guard) {
        if (pos < lo) {
            pos = 2 * lo - pos;
            vel = -vel;
        } else if (pos > hi) {
            pos = 2 * hi - pos;
            vel = -vel;
        }
    }
    pos = std::clamp(pos, lo, hi);
}

double shade(const DiscObject& o, double x, double y) {
    const double d2 = (x - o.x) * (x - o.x) + (y - o.y) * (y - o.y);
    return o.intensity * std::max(0.0, 1.0 - d2 / (o.radius * o.radius));
}

} // namespace

void SceneState::step() {
    for (DiscObject& o : objects) {
        o.x += o.vx;
        o.y += o.vy;
        reflect(o.x, o.vx, o.radius, W - 1 - o.radius);
        reflect(o.y, o.vy, o.radius, H - 1 - o.radius);
    }
}

SceneState sample_scene(uint64_t seed, const WorldConfig& config) {
    config.validate();
    Rng rng(seed);
    SceneState s;
    s.H = config.H;
    s.W = config.W;
    for (int i = 0; i < config.n_objects; ++i) {
        DiscObject o;
        o.radius = rng.uniform(config.radius_min, config.radius_max);
        o.x = rng.uniform(o.radius, config.W - 1 - o.radius);
        o.y = rng.uniform(o.radius, config.H - 1 - o.radius);
        const double speed = rng.uniform(config.speed_min, config.speed_max);
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        o.vx = speed * std::cos(angle);
        o.vy = speed * std::sin(angle);
        o.intensity = rng.uniform(config.intensity_min, 1.0);
        s.objects.push_back(o);
    }
    return s;
}

double distance_field_value(double x, double y, const Centers& centers, int H, int W) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : centers) best = std::min(best, std::hypot(x - c[0], y - c[1]));
    if (!std::isfinite(best)) return 1.0;
    const double scale = 0.5 * std::max(H, W);
    return std::clamp(2.0 * best / scale - 1.0, -1.0, 1.0);
}

VideoClip render_distance_field(const std::vector<Centers>& centers, int H, int W) {
    const int T = static_cast<int>(centers.size());
    VideoClip b = VideoClip::zeros(T, H, W, 1, Modality::B, Role::Target);
    for (int t = 0; t < T; ++t)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) b.at(t, y, x) = distance_field_value(x, y, centers[t], H, W);
    return b;
}

PairedClip render_scene(SceneState scene, int T) {
    if (T < 1) throw ConfigError("T must be >= 1");
    PairedClip out;
    out.a = VideoClip::zeros(T, scene.H, scene.W, 1, Modality::A, Role::Target);
    for (int t = 0; t < T; ++t) {
        if (t > 0) scene.step();
        Centers c;
        for (const DiscObject& o : scene.objects) c.push_back({o.x, o.y});
        for (int y = 0; y < scene.H; ++y)
            for (int x = 0; x < scene.W; ++x) {
                double v = 0.0;
                for (const DiscObject& o : scene.objects) v = std::max(v, shade(o, x, y));
                out.a.at(t, y, x) = 2.0 * v - 1.0;
            }
        out.centers.push_back(std::move(c));
    }
    out.b = render_distance_field(out.centers, scene.H, scene.W);
    return out;
}

PairedClip generate_clip(uint64_t seed, const WorldConfig& config) {
    return render_scene(sample_scene(seed, config), config.T);
}

// ---------------------------------------------------------------- alignment

Centers estimate_centers(const VideoClip& a, int frame, int n_objects) {
    constexpr double kPeakMin = 0.15; // shading below this counts as background
    constexpr int kWin = 2;           // 5x5 fitting window
    const int H = a.H, W = a.W;
    std::vector<double> v(static_cast<size_t>(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) v[static_cast<size_t>(y) * W + x] = 0.5 * (a.at(frame, y, x) + 1.0);
    std::vector<char> taken(v.size(), 0);

    Centers out;
    for (int k = 0; k < n_objects; ++k) {
        int best = -1;
        double best_v = kPeakMin;
        for (size_t i = 0; i < v.size(); ++i)
            if (!taken[i] && v[i] > best_v) {
                best_v = v[i];
                best = static_cast<int>(i);
            }
        if (best < 0) break;
        const int py = best / W, px = best % W;

        // Shading is a paraboloid in (x, y): fit v = c0 + c1 x + c2 y + c3 (x^2 + y^2).
        std::vector<double> rhs;
        std::vector<std::array<double, 4>> rows;
        double wsum = 0, wx = 0, wy = 0;
        for (int y = py - kWin; y <= py + kWin; ++y)
            for (int x = px - kWin; x <= px + kWin; ++x) {
                if (y < 0 || y >= H || x < 0 || x >= W) continue;
                const size_t i = static_cast<size_t>(y) * W + x;
                if (taken[i] || v[i] <= 0.02) continue;
                const double dx = x - px, dy = y - py;
                rows.push_back({1.0, dx, dy, dx * dx + dy * dy});
                rhs.push_back(v[i]);
                wsum += v[i];
                wx += v[i] * dx;
                wy += v[i] * dy;
            }
        double cx = px + wx / wsum, cy = py + wy / wsum;
        double radius = 4.0;
        if (rows.size() >= 6) {
            Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()), 4);
            Eigen::VectorXd r(static_cast<Eigen::Index>(rows.size()));
            for (size_t i = 0; i < rows.size(); ++i) {
                for (int j = 0; j < 4; ++j) M(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<size_t>(j)];
                r(static_cast<Eigen::Index>(i)) = rhs[i];
            }
            const Eigen::Vector4d c = M.colPivHouseholderQr().solve(r);
            if (c(3) < -1e-6) {
                const double fx = -c(1) / (2 * c(3)), fy = -c(2) / (2 * c(3));
                if (std::abs(fx) <= kWin && std::abs(fy) <= kWin) {
                    cx = px + fx;
                    cy = py + fy;
                    const double apex = c(0) + c(1) * fx + c(2) * fy + c(3) * (fx * fx + fy * fy);
                    radius = std::sqrt(std::max(0.0, -apex / c(3)));
                }
            }
        }
        out.push_back({cx, cy});

        // Suppress this disc's footprint before looking for the next peak.
        const double r_sup = std::clamp(radius, 2.5, 7.0);
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (std::hypot(x - cx, y - cy) <= r_sup) taken[static_cast<size_t>(y) * W + x] = 1;
    }
    return out;
}

AlignmentResult alignment_score(const VideoClip& pred_a, const VideoClip& pred_b, int n_objects) {
    if (!pred_a.same_geometry(pred_b) || pred_a.C != 1) throw ShapeError("alignment_score: geometry mismatch");
    AlignmentResult res;
    std::vector<Centers> centers;
    for (int t = 0; t < pred_a.T; ++t) {
        Centers c = estimate_centers(pred_a, t, n_objects);
        if (c.empty()) {
            res.degenerate = true;
            res.diagnostic = "no object detected in modality-A frame " + std::to_string(t);
            res.score = 0.0;
            return res;
        }
        centers.push_back(std::move(c));
    }
    const VideoClip expected = render_distance_field(centers, pred_a.H, pred_a.W);
    const Eigen::Map<const Vec> e(expected.data.data(), static_cast<Eigen::Index>(expected.size()));
    const Eigen::Map<const Vec> p(pred_b.data.data(), static_cast<Eigen::Index>(pred_b.size()));
    const double spread = (e.array() - e.mean()).matrix().norm();
    if (spread < 1e-12) {
        res.degenerate = true;
        res.diagnostic = "expected modality-B field is constant";
        return res;
    }
    res.score = std::clamp(1.0 - (p - e).norm() / spread, 0.0, 1.0);
    return res;
}

// ---------------------------------------------------------------- splits

uint64_t split_seed(Split split, uint64_t index) {
    if (index >= kSplitRange) throw DomainError("split index exceeds split range");
    return static_cast<uint64_t>(split) * kSplitRange + index;
}

Split split_of(uint64_t seed) {
    const uint64_t k = seed / kSplitRange;
    if (k > 2) throw DomainError("seed outside all splits");
    return static_cast<Split>(k);
}

VideoClip condition_window(const VideoClip& clip, int frames, int T) {
    if (frames < 1 || frames > clip.T) throw DomainError("condition window needs 1..clip.T frames");
    if (T < frames) throw DomainError("condition window longer than codec clip length");
    VideoClip out = clip.frames(clip.T - frames, frames);
    const VideoClip last = clip.frames(clip.T - 1, 1);
    for (int i = frames; i < T; ++i) out.append(last);
    out.role = Role::Condition;
    return out;
}

} // namespace syncvp

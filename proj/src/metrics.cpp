// SPDX-License-Identifier: Apache-2.0
#include "syncvp/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace syncvp {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

std::array<double, kWin> gaussian_taps() {
    std::array<double, kWin> g{};
    double sum = 0;
    for (int i = 0; i < kWin; ++i) {
        const double x = i - kWin / 2;
        g[static_cast<size_t>(i)] = std::exp(-0.5 * x * x / (kSigma * kSigma));
        sum += g[static_cast<size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Separable "valid" filtering of an H x W image.
Mat filter_valid(const Mat& img) {
    static const std::array<double, kWin> g = gaussian_taps();
    const Eigen::Index H = img.rows(), W = img.cols();
    Mat tmp = Mat::Zero(H, W - kWin + 1);
    for (Eigen::Index y = 0; y < H; ++y)
        for (Eigen::Index x = 0; x < tmp.cols(); ++x) {
            double s = 0;
            for (int k = 0; k < kWin; ++k) s += g[static_cast<size_t>(k)] * img(y, x + k);
            tmp(y, x) = s;
        }
    Mat out = Mat::Zero(H - kWin + 1, tmp.cols());
    for (Eigen::Index y = 0; y < out.rows(); ++y)
        for (Eigen::Index x = 0; x < out.cols(); ++x) {
            double s = 0;
            for (int k = 0; k < kWin; ++k) s += g[static_cast<size_t>(k)] * tmp(y + k, x);
            out(y, x) = s;
        }
    return out;
}

void check_pair(const VideoClip& a, const VideoClip& b) {
    if (!a.same_geometry(b)) throw ShapeError("metric inputs differ in geometry");
    if (a.size() == 0) throw ShapeError("metric inputs are empty");
}

Mat frame(const VideoClip& v, int t, int c) {
    Mat m(v.H, v.W);
    for (int y = 0; y < v.H; ++y)
        for (int x = 0; x < v.W; ++x) m(y, x) = v.at(t, y, x, c);
    return m;
}

} // namespace

double ssim_frame(const VideoClip& a, const VideoClip& b, int t, int c) {
    check_pair(a, b);
    if (a.H < kWin || a.W < kWin) throw ShapeError("frames smaller than the 11x11 SSIM window");
    const double C1 = std::pow(0.01 * kDataRange, 2), C2 = std::pow(0.03 * kDataRange, 2);
    const Mat x = frame(a, t, c), y = frame(b, t, c);
    const Mat mx = filter_valid(x), my = filter_valid(y);
    const Mat sxx = filter_valid(x.cwiseProduct(x)) - mx.cwiseProduct(mx);
    const Mat syy = filter_valid(y.cwiseProduct(y)) - my.cwiseProduct(my);
    const Mat sxy = filter_valid(x.cwiseProduct(y)) - mx.cwiseProduct(my);
    const auto num = (2 * mx.array() * my.array() + C1) * (2 * sxy.array() + C2);
    const auto den = (mx.array().square() + my.array().square() + C1) * (sxx.array() + syy.array() + C2);
    return (num / den).mean();
}

double ssim(const VideoClip& a, const VideoClip& b) {
    check_pair(a, b);
    double s = 0;
    for (int t = 0; t < a.T; ++t)
        for (int c = 0; c < a.C; ++c) s += ssim_frame(a, b, t, c);
    return s / (a.T * a.C);
}

double mse(const VideoClip& a, const VideoClip& b) {
    check_pair(a, b);
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    return s / static_cast<double>(a.size());
}

double psnr(const VideoClip& a, const VideoClip& b) {
    const double m = mse(a, b);
    if (m <= 0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(kDataRange * kDataRange / m));
}

double l2x100(const VideoClip& pred, const VideoClip& gt) { return 100.0 * mse(pred, gt); }

EvalReport best_of_k(const std::vector<std::vector<Trajectory>>& samples, const std::vector<Trajectory>& truth,
                     int n_objects) {
    if (samples.size() != truth.size()) throw ShapeError("best_of_k: one ground truth per sample required");
    if (samples.empty()) throw DomainError("best_of_k: no samples");
    EvalReport r;
    r.k = static_cast<int>(samples.front().size());
    r.samples = static_cast<int>(samples.size());
    if (r.k < 1) throw DomainError("best_of_k: K must be >= 1");
    r.has_a = samples.front().front().a.size() > 0;
    r.has_b = samples.front().front().b.size() > 0;
    constexpr double inf = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < samples.size(); ++i) {
        const auto& ks = samples[i];
        if (ks.empty()) throw DomainError("best_of_k: K must be >= 1");
        if (static_cast<int>(ks.size()) != r.k) throw ShapeError("best_of_k: K differs between samples");
        ModalityScores ba{-inf, -inf, inf}, bb{-inf, -inf, inf};
        double best_align = -1;
        bool degenerate = true;
        auto update = [](ModalityScores& best, const VideoClip& pred, const VideoClip& gt) {
            best.ssim = std::max(best.ssim, ssim(pred, gt));
            best.psnr = std::max(best.psnr, psnr(pred, gt));
            best.l2x100 = std::min(best.l2x100, l2x100(pred, gt));
        };
        for (const Trajectory& tr : ks) {
            if ((tr.a.size() > 0) != r.has_a || (tr.b.size() > 0) != r.has_b)
                throw ShapeError("best_of_k: trajectories disagree on predicted modalities");
            if (r.has_a) update(ba, tr.a, truth[i].a);
            if (r.has_b) update(bb, tr.b, truth[i].b);
            if (r.has_a && r.has_b) {
                const AlignmentResult al = alignment_score(tr.a, tr.b, n_objects);
                if (al.score > best_align) {
                    best_align = al.score;
                    degenerate = al.degenerate;
                }
            }
        }
        for (auto [acc, best] : {std::pair{&r.a, &ba}, std::pair{&r.b, &bb}}) {
            acc->ssim += best->ssim;
            acc->psnr += best->psnr;
            acc->l2x100 += best->l2x100;
        }
        r.alignment += best_align;
        r.degenerate += degenerate ? 1 : 0;
    }
    const double n = static_cast<double>(samples.size());
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (auto [m, present] : {std::pair{&r.a, r.has_a}, std::pair{&r.b, r.has_b}}) {
        m->ssim = present ? m->ssim / n : nan;
        m->psnr = present ? m->psnr / n : nan;
        m->l2x100 = present ? m->l2x100 / n : nan;
    }
    if (r.has_a && r.has_b) {
        r.alignment /= n;
    } else {
        r.alignment = nan;
        r.degenerate = 0;
    }
    return r;
}

} // namespace syncvp

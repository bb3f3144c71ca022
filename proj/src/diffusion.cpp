// SPDX-License-Identifier: Apache-2.0
#include "syncvp/diffusion.hpp"

#include <cmath>
#include <numbers>

namespace syncvp {

double NoiseSchedule::abar(int t) const {
    if (t < 0 || t > T) throw DomainError("step " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
    return alpha_bar[static_cast<size_t>(t)];
}

void NoiseSchedule::validate() const {
    if (T < 1) throw InvalidScheduleError("schedule needs at least one step");
    const size_t n = static_cast<size_t>(T) + 1;
    if (beta.size() != n || alpha.size() != n || alpha_bar.size() != n)
        throw InvalidScheduleError("schedule arrays have the wrong length");
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = beta[static_cast<size_t>(t)];
        if (!(b > 0.0 && b < 1.0)) throw InvalidScheduleError("beta_" + std::to_string(t) + " outside (0, 1)");
        prod *= alpha[static_cast<size_t>(t)];
        if (prod != alpha_bar[static_cast<size_t>(t)]) throw InvalidScheduleError("alpha_bar is not the running product");
        if (!(alpha_bar[static_cast<size_t>(t)] < alpha_bar[static_cast<size_t>(t) - 1]))
            throw InvalidScheduleError("alpha_bar not strictly decreasing");
    }
}

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
    NoiseSchedule s;
    s.T = static_cast<int>(betas.size());
    s.beta = {0.0};
    s.alpha = {1.0};
    s.alpha_bar = {1.0};
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw InvalidScheduleError("beta " + std::to_string(b) + " outside (0, 1)");
        s.beta.push_back(b);
        s.alpha.push_back(1.0 - b);
        prod *= 1.0 - b;
        s.alpha_bar.push_back(prod);
    }
    s.validate();
    return s;
}

NoiseSchedule make_schedule(const ScheduleConfig& c) {
    if (c.steps < 1) throw InvalidScheduleError("T_diff must be >= 1");
    std::vector<double> betas(static_cast<size_t>(c.steps));
    if (c.kind == ScheduleKind::Linear) {
        for (int t = 0; t < c.steps; ++t)
            betas[static_cast<size_t>(t)] =
                c.steps == 1 ? c.beta_start : c.beta_start + (c.beta_end - c.beta_start) * t / (c.steps - 1);
    } else {
        auto f = [&](double t) {
            const double u = (t / c.steps + c.cosine_offset) / (1.0 + c.cosine_offset);
            return std::pow(std::cos(u * std::numbers::pi / 2), 2);
        };
        for (int t = 1; t <= c.steps; ++t)
            betas[static_cast<size_t>(t - 1)] = std::min(1.0 - f(t) / f(t - 1), 0.999);
    }
    return schedule_from_betas(betas);
}

Mat forward_diffuse(const Mat& z0, double abar, const Mat& eps) {
    if (z0.rows() != eps.rows() || z0.cols() != eps.cols()) throw ShapeError("forward_diffuse: noise shape differs");
    if (abar < 0.0 || abar > 1.0) throw DomainError("alpha_bar outside [0, 1]");
    return std::sqrt(abar) * z0 + std::sqrt(1.0 - abar) * eps;
}

namespace {

Eigen::Index rows_per_sample(const Mat& z, const std::vector<int>& steps) {
    if (steps.empty() || z.rows() % static_cast<Eigen::Index>(steps.size()) != 0)
        throw ShapeError("latent rows are not a multiple of the batch size");
    return z.rows() / static_cast<Eigen::Index>(steps.size());
}

} // namespace

Mat injected_noise(const Mat& eps, const std::vector<int>& steps, const NoiseSchedule& s) {
    const Eigen::Index L = rows_per_sample(eps, steps);
    Mat out(eps.rows(), eps.cols());
    for (size_t b = 0; b < steps.size(); ++b) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * L;
        out.middleRows(r, L) = std::sqrt(1.0 - s.abar(steps[b])) * eps.middleRows(r, L);
    }
    return out;
}

Mat forward_diffuse(const Mat& z0, const std::vector<int>& steps, const Mat& eps, const NoiseSchedule& s) {
    if (z0.rows() != eps.rows() || z0.cols() != eps.cols()) throw ShapeError("forward_diffuse: noise shape differs");
    const Eigen::Index L = rows_per_sample(z0, steps);
    Mat out = injected_noise(eps, steps, s);
    for (size_t b = 0; b < steps.size(); ++b) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * L;
        out.middleRows(r, L) += std::sqrt(s.abar(steps[b])) * z0.middleRows(r, L);
    }
    return out;
}

Mat noise_residual(const Mat& z_t, const Mat& z0, const std::vector<int>& steps, const NoiseSchedule& s) {
    const Eigen::Index L = rows_per_sample(z0, steps);
    Mat out(z0.rows(), z0.cols());
    for (size_t b = 0; b < steps.size(); ++b) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * L;
        out.middleRows(r, L) = z_t.middleRows(r, L) - std::sqrt(s.abar(steps[b])) * z0.middleRows(r, L);
    }
    return out;
}

Mat sample_shared_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    if (rows < 1 || cols < 1) throw ShapeError("noise shape must be positive");
    return rng.normal_matrix(rows, cols);
}

std::vector<int> sample_steps(int batch, const NoiseSchedule& s, Rng& rng) {
    std::vector<int> steps(static_cast<size_t>(batch));
    for (int& t : steps) t = static_cast<int>(rng.uniform_int(1, s.T));
    return steps;
}

ag::Var noise_loss(const ag::Var& pred, const ag::Var& eps, Eigen::Index batch) {
    return ag::scale(ag::sum_all(ag::mul(ag::sub(pred, eps), ag::sub(pred, eps))), 1.0 / static_cast<double>(batch));
}

double noise_loss(const Mat& pred, const Mat& eps, Eigen::Index batch) {
    return (pred - eps).squaredNorm() / static_cast<double>(batch);
}

JointBatch make_joint_batch(Mat z0_a, Mat z0_b, Mat cond_a, Mat cond_b, int batch, const NoiseSchedule& s,
                            Rng& rng, bool independent_noise, Rng* rng_b) {
    if (z0_a.rows() != z0_b.rows() || z0_a.cols() != z0_b.cols()) throw ShapeError("joint batch: latent shapes differ");
    if (batch < 1 || z0_a.rows() % batch != 0) throw ShapeError("joint batch: rows not divisible by batch size");
    JointBatch jb;
    jb.steps = sample_steps(batch, s, rng);
    jb.eps_a = sample_shared_noise(z0_a.rows(), z0_a.cols(), rng);
    if (independent_noise) {
        if (rng_b == nullptr) throw DomainError("independent noise needs a second generator");
        jb.eps_b = sample_shared_noise(z0_a.rows(), z0_a.cols(), *rng_b);
    } else {
        jb.eps_b = jb.eps_a;
    }
    jb.z0_a = std::move(z0_a);
    jb.z0_b = std::move(z0_b);
    jb.cond_a = std::move(cond_a);
    jb.cond_b = std::move(cond_b);
    return jb;
}

ag::Var single_loss(ag::Tape& t, Denoiser& model, const SingleBatch& batch, const NoiseSchedule& s) {
    const BranchInput in{forward_diffuse(batch.z0, batch.steps, batch.eps, s), batch.cond, batch.steps};
    const ag::Var pred = model.forward(t, in);
    const ag::Var loss = noise_loss(pred, t.constant(batch.eps), in.batch());
    if (!std::isfinite(loss.value()(0, 0))) throw NumericalError("single-branch loss is not finite");
    return loss;
}

JointLoss joint_loss(ag::Tape& t, JointDenoiser& model, const JointBatch& batch, const NoiseSchedule& s) {
    const BranchInput a{forward_diffuse(batch.z0_a, batch.steps, batch.eps_a, s), batch.cond_a, batch.steps};
    const BranchInput b{forward_diffuse(batch.z0_b, batch.steps, batch.eps_b, s), batch.cond_b, batch.steps};
    auto [pa, pb] = model.forward(t, a, b);
    JointLoss l;
    l.a = noise_loss(pa, t.constant(batch.eps_a), a.batch());
    l.b = noise_loss(pb, t.constant(batch.eps_b), b.batch());
    l.total = ag::add(l.a, l.b);
    if (!std::isfinite(l.total.value()(0, 0))) throw NumericalError("joint loss is not finite");
    return l;
}

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1) throw DomainError("DDIM needs at least one step");
    if (steps > T) throw DomainError("DDIM steps (" + std::to_string(steps) + ") exceed T_diff (" + std::to_string(T) + ")");
    std::vector<int> ts;
    for (int i = steps; i >= 1; --i) ts.push_back(static_cast<int>(static_cast<int64_t>(i) * T / steps));
    return ts;
}

std::vector<Mat> ddim_sample(const EpsFn& eps_fn, std::vector<Mat> z, const NoiseSchedule& s, const DdimConfig& cfg,
                             Rng& rng) {
    if (cfg.eta < 0) throw DomainError("eta must be non-negative");
    const std::vector<int> ts = ddim_timesteps(s.T, cfg.steps);
    for (size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int prev = i + 1 < ts.size() ? ts[i + 1] : 0;
        const double a = s.abar(t), ap = s.abar(prev);
        const std::vector<Mat> eps = eps_fn(z, t);
        if (eps.size() != z.size()) throw ShapeError("noise predictor returned the wrong number of latents");
        const double sigma = cfg.eta * std::sqrt((1.0 - ap) / (1.0 - a)) * std::sqrt(1.0 - a / ap);
        const double dir = std::sqrt(std::max(0.0, 1.0 - ap - sigma * sigma));
        for (size_t k = 0; k < z.size(); ++k) {
            if (!eps[k].allFinite()) throw NumericalError("noise prediction is not finite at step " + std::to_string(t));
            const Mat x0 = (z[k] - std::sqrt(1.0 - a) * eps[k]) / std::sqrt(a);
            z[k] = std::sqrt(ap) * x0 + dir * eps[k];
            if (sigma > 0) z[k] += sigma * rng.normal_matrix(z[k].rows(), z[k].cols());
        }
    }
    return z;
}

std::pair<Mat, Mat> ddim_sample(JointDenoiser& model, const Mat& cond_a, const Mat& cond_b, const NoiseSchedule& s,
                                const DdimConfig& cfg, Rng& rng, bool shared_init) {
    const Eigen::Index L = model.branch(Modality::A).layout().L;
    const int batch = static_cast<int>(cond_a.rows() / L);
    std::vector<Mat> z{rng.normal_matrix(cond_a.rows(), cond_a.cols())};
    z.push_back(shared_init ? z[0] : rng.normal_matrix(cond_b.rows(), cond_b.cols()));
    const EpsFn fn = [&](const std::vector<Mat>& zt, int t) {
        const std::vector<int> steps(static_cast<size_t>(batch), t);
        auto [ea, eb] = model.predict({zt[0], cond_a, steps}, {zt[1], cond_b, steps});
        return std::vector<Mat>{std::move(ea), std::move(eb)};
    };
    z = ddim_sample(fn, std::move(z), s, cfg, rng);
    return {std::move(z[0]), std::move(z[1])};
}

RolloutPlan plan_rollout(int total_frames, int frames_per_pass) {
    if (total_frames < 1 || frames_per_pass < 1) throw DomainError("rollout lengths must be positive");
    RolloutPlan p;
    for (int left = total_frames; left > 0; left -= frames_per_pass) {
        p.frames_per_pass.push_back(std::min(left, frames_per_pass));
        ++p.passes;
    }
    return p;
}

Rollout predict_rollout(const PassFn& pass, const VideoClip& past_a, const VideoClip& past_b, int context,
                        int frames_per_pass, int total_frames) {
    if (context < 1) throw DomainError("rollout context must be >= 1");
    if (past_a.T < context || past_b.T < context)
        throw DomainError("rollout needs " + std::to_string(context) + " past frames per modality");
    if (past_a.T != past_b.T) throw DomainError("past clips must have synchronized frame counts");
    const RolloutPlan plan = plan_rollout(total_frames, frames_per_pass);
    VideoClip hist_a = past_a, hist_b = past_b;
    Rollout r;
    r.passes = plan.passes;
    for (int p = 0; p < plan.passes; ++p) {
        const auto [pa, pb] = pass(hist_a.frames(hist_a.T - context, context), hist_b.frames(hist_b.T - context, context));
        const int keep = plan.frames_per_pass[static_cast<size_t>(p)];
        if (pa.T < keep || pb.T < keep) throw ShapeError("pass returned fewer frames than requested");
        const VideoClip ka = pa.frames(0, keep), kb = pb.frames(0, keep);
        hist_a.append(ka);
        hist_b.append(kb);
        if (p == 0) {
            r.a = ka;
            r.b = kb;
        } else {
            r.a.append(ka);
            r.b.append(kb);
        }
    }
    for (int i = 0; i < total_frames; ++i) r.frame_index.push_back(past_a.T + i);
    return r;
}

} // namespace syncvp

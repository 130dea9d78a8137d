// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Losses, schedules, the Adam optimizer, and the multi-view fitting loop.
// Shape parameters are stored unconstrained (pre-squash positions, logits,
// log-sigmas) so the optimizer never needs projections beyond quaternion
// re-normalization.

#ifndef DIFFSPLAT_FIT_HPP
#define DIFFSPLAT_FIT_HPP

#include "diffsplat/geometry.hpp"
#include "diffsplat/grad.hpp"
#include "diffsplat/io.hpp"
#include "diffsplat/metrics.hpp"
#include "diffsplat/render.hpp"
#include "diffsplat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace diffsplat {

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Sum of squared pixel differences; cotangent 2*(pred - target).
inline std::pair<Real, Projection> mse_loss(const Projection& pred, const Projection& target) {
    if (!pred.same_shape(target)) throw DomainError("mse_loss: image shape mismatch");
    Projection cot(pred.rows, pred.cols, pred.channels, pred.modality);
    Real loss = 0.0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const Real d = pred.data[i] - target.data[i];
        loss += d * d;
        cot.data[i] = 2.0 * d;
    }
    return {loss, std::move(cot)};
}

/// Minimum candidate loss with lowest-index tie-break. Only the winner (and
/// the shared shape parameters) may receive gradient for the step.
inline std::pair<int, Real> hindsight_select(const std::vector<Real>& candidate_losses) {
    if (candidate_losses.empty()) throw DomainError("hindsight_select: no candidates");
    int best = 0;
    for (std::size_t k = 0; k < candidate_losses.size(); ++k) {
        if (std::isnan(candidate_losses[k])) throw DomainError("non-finite candidate loss");
        if (candidate_losses[k] < candidate_losses[best]) best = static_cast<int>(k);
    }
    return {best, candidate_losses[best]};
}

/// Angular distillation loss L = 1 - Re(q_s q_t^-1 / |q_s q_t^-1|) with the
/// teacher held constant; returns the gradient w.r.t. the (ambient) student.
/// With canonicalize_teacher_sign the teacher flips sign when the product's
/// real part is negative, so equal rotations score 0 instead of 2.
inline std::pair<Real, Vec4> quat_distill_loss(const Quaternion& student, const Quaternion& teacher,
                                               bool canonicalize_teacher_sign = true) {
    if (student.norm2() == 0.0 || teacher.norm2() == 0.0)
        throw DomainError("quat_distill_loss: zero-norm quaternion");
    Quaternion r = teacher.inverse();
    Quaternion p = quat_mul(student, r);
    if (canonicalize_teacher_sign && p.w < 0.0) {
        r = {-r.w, -r.x, -r.y, -r.z};
        p = {-p.w, -p.x, -p.y, -p.z};
    }
    const Real n = p.norm();
    const Real loss = 1.0 - p.w / n;

    // dL/dp = -e_w/|p| + p.w * p / |p|^3, then back through p = M_R(r) q_s.
    const Real n3 = n * n * n;
    const Vec4 pv = p.as_vec4();
    Vec4 dp = (p.w / n3) * pv;
    dp[0] -= 1.0 / n;
    Vec4 dq;
    dq[0] = dp[0] * r.w + dp[1] * r.x + dp[2] * r.y + dp[3] * r.z;
    dq[1] = -dp[0] * r.x + dp[1] * r.w - dp[2] * r.z + dp[3] * r.y;
    dq[2] = -dp[0] * r.y + dp[1] * r.z + dp[2] * r.w - dp[3] * r.x;
    dq[3] = -dp[0] * r.z - dp[1] * r.y + dp[2] * r.x + dp[3] * r.w;
    return {loss, dq};
}

/// Keeps each point with probability 1 - fraction; never returns an empty
/// mask (resamples, or keeps one random point when fraction >= 1).
inline std::vector<bool> dropout_mask(std::size_t n, Real fraction, Rng& rng) {
    std::vector<bool> mask(n, true);
    if (n == 0 || fraction <= 0.0) return mask;
    if (fraction >= 1.0) {
        std::fill(mask.begin(), mask.end(), false);
        mask[rng.below(n)] = true;
        return mask;
    }
    while (true) {
        bool any = false;
        for (std::size_t i = 0; i < n; ++i) {
            mask[i] = rng.uniform() >= fraction;
            any = any || mask[i];
        }
        if (any) return mask;
    }
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// Piecewise-linear schedules, clamped at both ends. Sigma values are
/// fractions of the grid's world extent.
struct Schedules {
    int total_steps = 1;
    Real dropout_start = 0.9, dropout_end = 0.0;
    Real sigma_start_frac = 0.05, sigma_end_frac = 0.003;
    Real extent = 1.0;
};

/// (dropout fraction, sigma in world units) at step t. The interpolation is
/// written as (1-u)*a + u*b so both endpoints reproduce the configured
/// constants exactly, not just within rounding.
inline std::pair<Real, Real> schedule_eval(const Schedules& s, int t) {
    if (t < 0) throw DomainError("schedule_eval: negative step");
    const Real u = s.total_steps > 0
                       ? std::min<Real>(1.0, static_cast<Real>(t) / s.total_steps)
                       : 1.0;
    const Real dropout = (1.0 - u) * s.dropout_start + u * s.dropout_end;
    const Real sigma = ((1.0 - u) * s.sigma_start_frac + u * s.sigma_end_frac) * s.extent;
    return {dropout, sigma};
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamParams {
    Real lr = 1e-4;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
};

/// First/second moment state for one flat parameter block, with its own
/// 1-based step counter (blocks updated intermittently stay correctly
/// bias-corrected).
struct AdamState {
    std::vector<Real> m, v;
    int t = 0;

    void init(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
};

/// Standard bias-corrected Adam update; increments the state's step counter.
inline void adam_step(std::vector<Real>& params, const std::vector<Real>& grads,
                      AdamState& state, const AdamParams& hp) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw DomainError("adam_step: size mismatch");
    ++state.t;
    const Real c1 = 1.0 - std::pow(hp.beta1, state.t);
    const Real c2 = 1.0 - std::pow(hp.beta2, state.t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grads[i];
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grads[i] * grads[i];
        const Real mh = state.m[i] / c1;
        const Real vh = state.v[i] / c2;
        params[i] -= hp.lr * mh / (std::sqrt(vh) + hp.eps);
    }
}

// ---------------------------------------------------------------------------
// Views and configuration
// ---------------------------------------------------------------------------

struct View {
    Projection target;
    Modality modality = Modality::Silhouette;
    bool has_pose = false;
    Pose pose; // ground truth, supervised mode only
};

struct ViewSet {
    std::vector<View> views;
    CameraModel cam;
    GridSpec grid;

    void validate(bool supervised) const {
        if (views.empty()) throw DomainError("view set is empty");
        if (!supervised && views.size() < 2)
            throw DomainError("pose-free fitting needs at least 2 views");
        for (const View& v : views) {
            if (!v.target.same_shape(views.front().target))
                throw DomainError("view images must share dimensions");
            if (supervised && !v.has_pose)
                throw DomainError("supervised fitting needs a pose per view");
        }
    }
};

struct FitConfig {
    int n_points = 100;
    int K = 4;
    int steps = 1000;
    Real lr = 1e-4;
    SplatPath path = SplatPath::Fast;
    bool supervised = false;
    std::uint64_t seed = 0;
    Schedules schedules; // total_steps / extent synced by fit_views

    int views_per_step = 0;      // 0 = every view, every step
    bool learn_sizes = false;    // optimize per-point sizes instead of the sigma schedule
    SizeKind size_kind = SizeKind::Isotropic;
    Real distill_weight = 1.0;
    bool canonicalize_teacher_sign = true;
    Real candidate_jitter_deg = 10.0;
    Real orbit_distance = 2.0;
    Real init_log_diag = 0.0; // 0 = derived from the sigma schedule start

    std::string trace_path;      // per-step CSV
    std::string selections_path; // per-(step,view) candidate-loss CSV
    std::string dump_prefix;     // diagnostic dump on non-finite loss
};

// ---------------------------------------------------------------------------
// Fit state: unconstrained parameters plus their constrained views
// ---------------------------------------------------------------------------

struct PoseCandidate {
    Quaternion rotation;
    Vec3 translation = Vec3::Zero();
};

/// All optimized parameters. Positions live pre-squash (halfwidth * tanh maps
/// them onto the grid box), scales and colors as logits, sizes as logs.
struct FitState {
    Vec3 halfwidth = Vec3(0.5, 0.5, 0.5);

    std::vector<Real> raw_positions; // 3N
    std::vector<Real> scale_logits;  // N
    std::vector<Real> log_sigma;     // N (isotropic learned sizes)
    std::vector<Real> log_diag;      // 3N (full-covariance learned sizes)
    std::vector<Real> orient;        // 4N quaternion components (full covariance)
    std::vector<Real> color_logits;  // 3N when fitting color

    std::vector<std::vector<PoseCandidate>> candidates; // [view][k]
    std::vector<Quaternion> students;                   // [view]

    AdamState m_positions, m_scales, m_sigma, m_diag, m_orient, m_colors;
    std::vector<AdamState> m_candidates; // per view: 7K flat
    std::vector<AdamState> m_students;   // per view: 4 flat
    int step = 0;
    std::uint64_t seed = 0;

    Real squash(Real raw, int axis) const { return halfwidth[axis] * std::tanh(raw); }
    Real squash_grad(Real raw, int axis) const {
        const Real t = std::tanh(raw);
        return halfwidth[axis] * (1.0 - t * t);
    }

    /// Materializes the constrained point cloud. `scheduled_sigma` applies
    /// when sizes are not learned.
    PointCloud cloud(const FitConfig& cfg, Real scheduled_sigma) const {
        PointCloud pc;
        const std::size_t n = scale_logits.size();
        pc.positions.resize(n);
        pc.sizes.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (int a = 0; a < 3; ++a) pc.positions[i][a] = squash(raw_positions[3 * i + a], a);
            const Real sc = 1.0 / (1.0 + std::exp(-scale_logits[i]));
            if (cfg.learn_sizes && cfg.size_kind == SizeKind::FullCov) {
                Quaternion q(orient[4 * i], orient[4 * i + 1], orient[4 * i + 2],
                             orient[4 * i + 3]);
                pc.sizes[i] = SizeParams::full_cov(
                    sc,
                    Vec3(std::exp(log_diag[3 * i]), std::exp(log_diag[3 * i + 1]),
                         std::exp(log_diag[3 * i + 2])),
                    q);
            } else if (cfg.learn_sizes) {
                pc.sizes[i] = SizeParams::isotropic(sc, std::exp(log_sigma[i]));
            } else {
                pc.sizes[i] = SizeParams::isotropic(sc, scheduled_sigma);
            }
        }
        if (!color_logits.empty()) {
            pc.colors.resize(n);
            for (std::size_t i = 0; i < n; ++i)
                for (int c = 0; c < 3; ++c)
                    pc.colors[i][c] = 1.0 / (1.0 + std::exp(-color_logits[3 * i + c]));
        }
        return pc;
    }
};

/// Fresh state from the init stream: positions spread around the box center,
/// candidates fanned over azimuth with jitter, students at candidate 0.
inline FitState init_fit_state(const ViewSet& views, const FitConfig& cfg, bool with_colors) {
    FitState st;
    st.halfwidth = 0.5 * views.grid.extent;
    st.seed = cfg.seed;
    Rng rng(cfg.seed, Stream::Init);

    const int n = cfg.n_points;
    if (n < 1) throw DomainError("fit: n_points must be >= 1");
    st.raw_positions.resize(3 * n);
    for (Real& v : st.raw_positions) v = 0.4 * rng.normal();
    st.scale_logits.assign(n, 2.0); // sigmoid(2) ~ 0.88: start mostly opaque
    const Real sigma0 = cfg.schedules.sigma_start_frac * cfg.schedules.extent;
    st.log_sigma.assign(n, std::log(std::max(sigma0, 1e-6)));
    if (cfg.learn_sizes && cfg.size_kind == SizeKind::FullCov) {
        const Real d0 = cfg.init_log_diag != 0.0 ? cfg.init_log_diag
                                                 : std::log(std::max(sigma0 * sigma0, 1e-12));
        st.log_diag.assign(3 * n, d0);
        st.orient.assign(4 * n, 0.0);
        for (int i = 0; i < n; ++i) st.orient[4 * i] = 1.0;
    }
    if (with_colors) st.color_logits.assign(3 * n, 0.0);

    if (!cfg.supervised) {
        if (cfg.K < 1) throw DomainError("fit: K must be >= 1");
        st.candidates.resize(views.views.size());
        st.students.resize(views.views.size());
        const Real center_depth =
            views.cam.kind == CameraKind::Perspective ? cfg.orbit_distance : 0.0;
        for (std::size_t v = 0; v < views.views.size(); ++v) {
            for (int k = 0; k < cfg.K; ++k) {
                const Real azim = 360.0 * k / cfg.K +
                                  cfg.candidate_jitter_deg * (2.0 * rng.uniform() - 1.0);
                const Real elev = cfg.candidate_jitter_deg * (2.0 * rng.uniform() - 1.0);
                const Pose p = orbit_pose(azim, elev, cfg.orbit_distance, center_depth);
                st.candidates[v].push_back({p.rotation, p.translation});
            }
            st.students[v] = st.candidates[v][0].rotation;
        }
    }

    st.m_positions.init(st.raw_positions.size());
    st.m_scales.init(st.scale_logits.size());
    st.m_sigma.init(st.log_sigma.size());
    st.m_diag.init(st.log_diag.size());
    st.m_orient.init(st.orient.size());
    st.m_colors.init(st.color_logits.size());
    st.m_candidates.resize(st.candidates.size());
    st.m_students.resize(st.students.size());
    for (std::size_t v = 0; v < st.candidates.size(); ++v) {
        st.m_candidates[v].init(7 * cfg.K);
        st.m_students[v].init(4);
    }
    return st;
}

struct FitResult {
    PointCloud cloud;
    std::vector<std::vector<Pose>> candidates; // pose-free: [view][k]
    std::vector<int> selected;                 // last selected candidate per view
    std::vector<Pose> best_poses;              // selected candidate per view
    std::vector<Pose> students;                // student rotation + winner translation
    std::vector<Real> loss_trace;              // per step, summed over the step's views
    Real final_loss = 0.0;
    int steps_run = 0;
};

namespace detail {

inline void dump_fit_state(const FitState& st, const FitConfig& cfg, Real sigma, int step,
                           const std::string& prefix) {
    if (prefix.empty()) return;
    try {
        io::write_ply(prefix + "_cloud.ply", st.cloud(cfg, sigma));
    } catch (const DomainError&) {
        // best-effort diagnostic; full-covariance clouds have no PLY form
    }
    nlohmann::json j;
    j["format_version"] = 1;
    j["step"] = step;
    for (std::size_t v = 0; v < st.candidates.size(); ++v) {
        nlohmann::json jv;
        for (const PoseCandidate& c : st.candidates[v]) {
            jv.push_back({{"rotation", {c.rotation.w, c.rotation.x, c.rotation.y, c.rotation.z}},
                          {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}}});
        }
        j["candidates"].push_back(jv);
    }
    std::ofstream os(prefix + "_state.json", std::ios::binary);
    os << j.dump(2) << "\n";
}

} // namespace detail

/// Multi-view fitting. Supervised mode optimizes the cloud at the given
/// poses; pose-free mode also optimizes K pose candidates per view under the
/// hindsight loss and distills each view's winner into a student rotation.
inline FitResult fit_views(const ViewSet& views, FitConfig cfg) {
    views.validate(cfg.supervised);
    const std::size_t n_views = views.views.size();
    cfg.schedules.total_steps = cfg.steps;
    cfg.schedules.extent = views.grid.extent.maxCoeff();
    const bool with_colors =
        std::any_of(views.views.begin(), views.views.end(),
                    [](const View& v) { return v.modality == Modality::Color; });
    if (cfg.learn_sizes && cfg.size_kind == SizeKind::FullCov && cfg.path == SplatPath::Fast)
        throw DomainError("fit: full-covariance sizes need the basic path");

    FitState st = init_fit_state(views, cfg, with_colors);
    AdamParams hp;
    hp.lr = cfg.lr;

    const int vps = cfg.views_per_step > 0
                        ? std::min<int>(cfg.views_per_step, static_cast<int>(n_views))
                        : static_cast<int>(n_views);

    std::ofstream trace, selections;
    if (!cfg.trace_path.empty()) {
        trace.open(cfg.trace_path, std::ios::binary);
        trace << "step,hindsight_loss,selected_candidate,student_loss,dropout,sigma\n";
    }
    if (!cfg.selections_path.empty() && !cfg.supervised) {
        selections.open(cfg.selections_path, std::ios::binary);
        selections << "step,view,selected,hindsight";
        for (int k = 0; k < cfg.K; ++k) selections << ",loss_" << k;
        selections << "\n";
    }

    FitResult res;
    res.selected.assign(n_views, 0);

    const std::size_t np = static_cast<std::size_t>(cfg.n_points);
    for (int t = 0; t < cfg.steps; ++t) {
        const auto [drop_frac, sigma] = schedule_eval(cfg.schedules, t);
        const PointCloud pc = st.cloud(cfg, sigma);

        // accumulated shape gradients (constrained space)
        std::vector<Vec3> d_pos(np, Vec3::Zero());
        std::vector<Real> d_scale(np, 0.0);
        std::vector<Real> d_sigma_pt(np, 0.0);
        std::vector<Vec3> d_diag(np, Vec3::Zero());
        std::vector<Vec4> d_orient(np, Vec4::Zero());
        std::vector<Vec3> d_color(np, Vec3::Zero());

        Real step_loss = 0.0, step_student_loss = 0.0;
        int first_selected = -1;

        RenderSettings rs;
        rs.path = cfg.path;

        for (int b = 0; b < vps; ++b) {
            const std::size_t v =
                (static_cast<std::size_t>(t) * vps + b) % n_views; // round robin
            const View& view = views.views[v];
            rs.modality = view.modality;

            Rng mask_rng(splitmix64(cfg.seed ^ (0x9e37ULL * (t + 1))) ^ (v + 1), Stream::Mask);
            const std::vector<bool> mask = dropout_mask(np, drop_frac, mask_rng);

            if (cfg.supervised) {
                const RenderCache rc =
                    render_cached(pc, view.pose, views.cam, views.grid, rs, &mask);
                auto [loss, cot] = mse_loss(rc.image, view.target);
                if (!std::isfinite(loss)) {
                    detail::dump_fit_state(st, cfg, sigma, t, cfg.dump_prefix);
                    throw DomainError("fit: non-finite loss at step " + std::to_string(t));
                }
                step_loss += loss;
                const RenderGradients g = vjp_render(pc, rc, cot, cfg.learn_sizes);
                for (std::size_t i = 0; i < np; ++i) {
                    d_pos[i] += g.d_positions[i];
                    d_scale[i] += g.d_scales[i];
                    d_sigma_pt[i] += g.d_sigmas[i];
                    d_diag[i] += g.d_cov_diag[i];
                    d_orient[i] += g.d_cov_orient[i];
                    if (with_colors) d_color[i] += g.d_colors[i];
                }
                continue;
            }

            // pose-free: render all K candidates on the shared mask
            std::vector<Real> losses(cfg.K);
            std::vector<RenderCache> caches(cfg.K);
            std::vector<Projection> cots(cfg.K);
            for (int k = 0; k < cfg.K; ++k) {
                Pose pose{st.candidates[v][k].rotation, st.candidates[v][k].translation};
                caches[k] = render_cached(pc, pose, views.cam, views.grid, rs, &mask);
                auto [loss, cot] = mse_loss(caches[k].image, view.target);
                losses[k] = loss;
                cots[k] = std::move(cot);
            }
            for (Real l : losses) {
                if (!std::isfinite(l)) {
                    detail::dump_fit_state(st, cfg, sigma, t, cfg.dump_prefix);
                    throw DomainError("fit: non-finite candidate loss at step " +
                                      std::to_string(t));
                }
            }
            const auto [sel, hindsight] = hindsight_select(losses);
            for (Real l : losses) {
                if (hindsight > l) throw DomainError("fit: hindsight dominance violated");
            }
            res.selected[v] = sel;
            if (first_selected < 0) first_selected = sel;
            step_loss += hindsight;
            if (selections.is_open()) {
                selections << t << ',' << v << ',' << sel << ',' << hindsight;
                for (int k = 0; k < cfg.K; ++k) selections << ',' << losses[k];
                selections << '\n';
            }

            // gradient flows only through the winning candidate
            const RenderGradients g = vjp_render(pc, caches[sel], cots[sel], cfg.learn_sizes);
            for (std::size_t i = 0; i < np; ++i) {
                d_pos[i] += g.d_positions[i];
                d_scale[i] += g.d_scales[i];
                d_sigma_pt[i] += g.d_sigmas[i];
                d_diag[i] += g.d_cov_diag[i];
                d_orient[i] += g.d_cov_orient[i];
                if (with_colors) d_color[i] += g.d_colors[i];
            }

            // candidate update (this view only)
            std::vector<Real> cand_grad(7 * cfg.K, 0.0);
            std::vector<Real> cand_par(7 * cfg.K, 0.0);
            for (int k = 0; k < cfg.K; ++k) {
                const PoseCandidate& c = st.candidates[v][k];
                cand_par[7 * k + 0] = c.rotation.w;
                cand_par[7 * k + 1] = c.rotation.x;
                cand_par[7 * k + 2] = c.rotation.y;
                cand_par[7 * k + 3] = c.rotation.z;
                for (int a = 0; a < 3; ++a) cand_par[7 * k + 4 + a] = c.translation[a];
            }
            for (int j = 0; j < 4; ++j) cand_grad[7 * sel + j] = g.d_rotation[j];
            for (int a = 0; a < 3; ++a) cand_grad[7 * sel + 4 + a] = g.d_translation[a];
            adam_step(cand_par, cand_grad, st.m_candidates[v], hp);
            for (int k = 0; k < cfg.K; ++k) {
                PoseCandidate& c = st.candidates[v][k];
                c.rotation = Quaternion(cand_par[7 * k + 0], cand_par[7 * k + 1],
                                        cand_par[7 * k + 2], cand_par[7 * k + 3])
                                 .normalized();
                for (int a = 0; a < 3; ++a) c.translation[a] = cand_par[7 * k + 4 + a];
            }

            // distillation: student chases this view's winner
            const Quaternion teacher = st.candidates[v][sel].rotation;
            auto [dl, dq] = quat_distill_loss(st.students[v], teacher,
                                              cfg.canonicalize_teacher_sign);
            step_student_loss += dl;
            std::vector<Real> sq = {st.students[v].w, st.students[v].x, st.students[v].y,
                                    st.students[v].z};
            std::vector<Real> sg = {cfg.distill_weight * dq[0], cfg.distill_weight * dq[1],
                                    cfg.distill_weight * dq[2], cfg.distill_weight * dq[3]};
            adam_step(sq, sg, st.m_students[v], hp);
            st.students[v] = Quaternion(sq[0], sq[1], sq[2], sq[3]).normalized();
        }

        // shape parameter updates, chained through the squash maps
        {
            std::vector<Real> grad(3 * np);
            for (std::size_t i = 0; i < np; ++i)
                for (int a = 0; a < 3; ++a)
                    grad[3 * i + a] =
                        d_pos[i][a] * st.squash_grad(st.raw_positions[3 * i + a], a);
            adam_step(st.raw_positions, grad, st.m_positions, hp);
        }
        {
            std::vector<Real> grad(np);
            for (std::size_t i = 0; i < np; ++i) {
                const Real s = 1.0 / (1.0 + std::exp(-st.scale_logits[i]));
                grad[i] = d_scale[i] * s * (1.0 - s);
            }
            adam_step(st.scale_logits, grad, st.m_scales, hp);
        }
        if (cfg.learn_sizes && cfg.size_kind == SizeKind::Isotropic) {
            std::vector<Real> grad(np);
            for (std::size_t i = 0; i < np; ++i)
                grad[i] = d_sigma_pt[i] * std::exp(st.log_sigma[i]);
            adam_step(st.log_sigma, grad, st.m_sigma, hp);
        }
        if (cfg.learn_sizes && cfg.size_kind == SizeKind::FullCov) {
            std::vector<Real> gd(3 * np), go(4 * np);
            for (std::size_t i = 0; i < np; ++i) {
                for (int a = 0; a < 3; ++a)
                    gd[3 * i + a] = d_diag[i][a] * std::exp(st.log_diag[3 * i + a]);
                for (int j = 0; j < 4; ++j) go[4 * i + j] = d_orient[i][j];
            }
            adam_step(st.log_diag, gd, st.m_diag, hp);
            adam_step(st.orient, go, st.m_orient, hp);
            for (std::size_t i = 0; i < np; ++i) {
                Quaternion q(st.orient[4 * i], st.orient[4 * i + 1], st.orient[4 * i + 2],
                             st.orient[4 * i + 3]);
                q = q.normalized();
                st.orient[4 * i] = q.w;
                st.orient[4 * i + 1] = q.x;
                st.orient[4 * i + 2] = q.y;
                st.orient[4 * i + 3] = q.z;
            }
        }
        if (with_colors) {
            std::vector<Real> grad(3 * np);
            for (std::size_t i = 0; i < np; ++i)
                for (int c = 0; c < 3; ++c) {
                    const Real s = 1.0 / (1.0 + std::exp(-st.color_logits[3 * i + c]));
                    grad[3 * i + c] = d_color[i][c] * s * (1.0 - s);
                }
            adam_step(st.color_logits, grad, st.m_colors, hp);
        }

        ++st.step;
        res.loss_trace.push_back(step_loss);
        if (trace.is_open()) {
            trace << t << ',' << step_loss << ',' << first_selected << ',' << step_student_loss
                  << ',' << drop_frac << ',' << sigma << '\n';
        }
    }

    const Real final_sigma = schedule_eval(cfg.schedules, cfg.steps).second;
    res.cloud = st.cloud(cfg, final_sigma);
    res.final_loss = res.loss_trace.empty() ? 0.0 : res.loss_trace.back();
    res.steps_run = st.step;
    if (!cfg.supervised) {
        res.candidates.resize(n_views);
        res.students.resize(n_views);
        res.best_poses.resize(n_views);
        for (std::size_t v = 0; v < n_views; ++v) {
            for (const PoseCandidate& c : st.candidates[v])
                res.candidates[v].push_back({c.rotation, c.translation});
            const PoseCandidate& win = st.candidates[v][res.selected[v]];
            res.best_poses[v] = {win.rotation, win.translation};
            res.students[v] = {st.students[v], win.translation};
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Fit config JSON
// ---------------------------------------------------------------------------

inline void write_fit_config(const std::string& path, const FitConfig& cfg) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["n_points"] = cfg.n_points;
    j["K"] = cfg.K;
    j["steps"] = cfg.steps;
    j["lr"] = cfg.lr;
    j["path"] = cfg.path == SplatPath::Fast ? "fast" : "basic";
    j["supervised"] = cfg.supervised;
    j["seed"] = cfg.seed;
    j["schedules"] = {{"dropout_start", cfg.schedules.dropout_start},
                      {"dropout_end", cfg.schedules.dropout_end},
                      {"sigma_start", cfg.schedules.sigma_start_frac},
                      {"sigma_end", cfg.schedules.sigma_end_frac}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DomainError("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

inline FitConfig read_fit_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DomainError("cannot open: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DomainError("fit config: parse error in " + path + ": " + e.what());
    }
    FitConfig cfg;
    auto need = [&](const char* f) -> const nlohmann::json& {
        if (!j.contains(f))
            throw DomainError("fit config: missing field '" + std::string(f) + "' in " + path);
        return j.at(f);
    };
    if (need("format_version").get<int>() != 1)
        throw DomainError("fit config: unsupported format_version in " + path);
    cfg.n_points = need("n_points").get<int>();
    cfg.K = need("K").get<int>();
    cfg.steps = need("steps").get<int>();
    cfg.lr = need("lr").get<Real>();
    const std::string path_kind = need("path").get<std::string>();
    if (path_kind == "fast") cfg.path = SplatPath::Fast;
    else if (path_kind == "basic") cfg.path = SplatPath::Basic;
    else throw DomainError("fit config: field 'path' must be 'fast' or 'basic' in " + path);
    cfg.supervised = need("supervised").get<bool>();
    cfg.seed = need("seed").get<std::uint64_t>();
    if (j.contains("schedules")) {
        const nlohmann::json& s = j.at("schedules");
        if (s.contains("dropout_start")) cfg.schedules.dropout_start = s["dropout_start"].get<Real>();
        if (s.contains("dropout_end")) cfg.schedules.dropout_end = s["dropout_end"].get<Real>();
        if (s.contains("sigma_start")) cfg.schedules.sigma_start_frac = s["sigma_start"].get<Real>();
        if (s.contains("sigma_end")) cfg.schedules.sigma_end_frac = s["sigma_end"].get<Real>();
    }
    return cfg;
}

} // namespace diffsplat

#endif // DIFFSPLAT_FIT_HPP

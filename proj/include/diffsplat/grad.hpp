// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Hand-written reverse-mode adjoints for every render stage. Each vjp_*
// consumes a cotangent shaped like the stage output and returns cotangents
// for the stage inputs; vjp_render chains them across the whole pipeline.
// Quaternion gradients are ambient 4-vectors (the forward normalization is
// part of the chain); re-normalizing stored quaternions is the optimizer's
// job.

#ifndef DIFFSPLAT_GRAD_HPP
#define DIFFSPLAT_GRAD_HPP

#include "diffsplat/geometry.hpp"
#include "diffsplat/parallel.hpp"
#include "diffsplat/render.hpp"
#include "diffsplat/splat.hpp"
#include "diffsplat/volume.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace diffsplat {

inline constexpr Real kSurvivalGuard = 1e-12; // (1 - occ) below this: leave-one-out fallback

/// Subgradient of clip to [0,1]: 1 strictly inside, 0 at and beyond the
/// boundary (saturated cells stop absorbing gradient).
inline Volume clip_adjoint(const Volume& raw, const Volume& d_clipped) {
    Volume out(raw.d1, raw.d2, raw.d3);
    for (std::int64_t i = 0; i < raw.size(); ++i)
        out.data[i] = (raw.data[i] > 0.0 && raw.data[i] < 1.0) ? d_clipped.data[i] : 0.0;
    return out;
}

/// Adjoint of ray_termination. Per ray, with P_k the survival prefix and
/// T_j the suffix sum of downstream cotangent mass,
///   d_occ[j] = d_r[j] * P_j - T_j / (1 - occ[j]);
/// near-opaque cells fall back to direct leave-one-out products.
inline Volume vjp_ray_termination(const Volume& occ, const TerminationVolume& d_term) {
    if (occ.d1 != d_term.d1 || occ.d2 != d_term.d2 || occ.d3 != d_term.d3)
        throw DomainError("vjp_ray_termination: shape mismatch");
    Volume d_occ(occ.d1, occ.d2, occ.d3);
    const int d3 = occ.d3;
    parallel_for(0, static_cast<std::int64_t>(occ.d1) * occ.d2, [&](std::int64_t lo, std::int64_t hi) {
        std::vector<Real> prefix(d3 + 1);
        for (std::int64_t line = lo; line < hi; ++line) {
            const Real* o = occ.data.data() + line * d3;
            const Real* dr = d_term.data.data() + line * (d3 + 1);
            Real* out = d_occ.data.data() + line * d3;

            prefix[0] = 1.0;
            for (int k = 0; k < d3; ++k) prefix[k + 1] = prefix[k] * (1.0 - o[k]);

            Real suffix = dr[d3] * prefix[d3];
            for (int j = d3 - 1; j >= 0; --j) {
                const Real survive = 1.0 - o[j];
                Real downstream;
                if (survive < kSurvivalGuard) {
                    downstream = 0.0;
                    Real loo = prefix[j]; // product over u < j, cell j skipped
                    for (int k = j + 1; k < d3; ++k) {
                        downstream += dr[k] * o[k] * loo;
                        loo *= 1.0 - o[k];
                    }
                    downstream += dr[d3] * loo;
                } else {
                    downstream = suffix / survive;
                }
                out[j] = dr[j] * prefix[j] - downstream;
                suffix += dr[j] * o[j] * prefix[j];
            }
        }
    });
    return d_occ;
}

/// Per-point cotangents of the basic splat, in grid coordinates.
struct SplatPointGrads {
    Real d_scale = 0.0;
    Vec3 d_gpos = Vec3::Zero();
    Real d_sigma_cells = 0.0;           // isotropic points
    Mat3 d_cov_grid = Mat3::Zero();     // full-covariance points
};

/// Core adjoint of the pre-clip Gaussian sum. `e_base` is the cotangent of
/// the density volume; when `e_channels`/`values` are given, each point's
/// effective cotangent also collects the per-channel numerator cotangents
/// weighted by the point's signal, and `d_values` receives signal gradients.
inline std::vector<SplatPointGrads> vjp_splat_points(const std::vector<TransformedPoint>& points,
                                                     const GridSpec& grid, const Volume& e_base,
                                                     const std::vector<Volume>* e_channels = nullptr,
                                                     const std::vector<Vec3>* values = nullptr,
                                                     std::vector<Vec3>* d_values = nullptr) {
    grid.validate();
    if ((e_channels != nullptr) != (values != nullptr))
        throw DomainError("vjp_splat_points: channel cotangents need per-point values");
    if (values && values->size() != points.size())
        throw DomainError("vjp_splat_points: values length mismatch");
    const int channels = e_channels ? static_cast<int>(e_channels->size()) : 0;

    std::vector<SplatPointGrads> out(points.size());
    if (d_values) d_values->assign(points.size(), Vec3::Zero());

    parallel_for(0, static_cast<std::int64_t>(points.size()), [&](std::int64_t lo, std::int64_t hi) {
        std::vector<Real> e1, e2, e3;
        for (std::int64_t i = lo; i < hi; ++i) {
            const TransformedPoint& p = points[i];
            if (p.behind_camera) continue;
            SplatPointGrads& g = out[i];

            if (p.iso) {
                const Real sc = p.iso_sigma_cells;
                const Real inv2s2 = 1.0 / (2.0 * sc * sc);
                e1.resize(grid.d1);
                e2.resize(grid.d2);
                e3.resize(grid.d3);
                for (int k = 0; k < grid.d1; ++k)
                    e1[k] = std::exp(-(k - p.grid_pos.x()) * (k - p.grid_pos.x()) * inv2s2);
                for (int k = 0; k < grid.d2; ++k)
                    e2[k] = std::exp(-(k - p.grid_pos.y()) * (k - p.grid_pos.y()) * inv2s2);
                for (int k = 0; k < grid.d3; ++k)
                    e3[k] = std::exp(-(k - p.grid_pos.z()) * (k - p.grid_pos.z()) * inv2s2);

                Real w_sum = 0.0, d2_sum = 0.0;
                Vec3 delta_sum = Vec3::Zero();
                Vec3 chan_sum = Vec3::Zero();
                std::int64_t cell = 0;
                for (int k1 = 0; k1 < grid.d1; ++k1) {
                    const Real dx = k1 - p.grid_pos.x();
                    for (int k2 = 0; k2 < grid.d2; ++k2) {
                        const Real dy = k2 - p.grid_pos.y();
                        const Real a12 = e1[k1] * e2[k2];
                        const Real dxy2 = dx * dx + dy * dy;
                        for (int k3 = 0; k3 < grid.d3; ++k3, ++cell) {
                            Real comb = e_base.data[cell];
                            if (channels) {
                                for (int c = 0; c < channels; ++c) {
                                    const Real ec = (*e_channels)[c].data[cell];
                                    comb += ec * (*values)[i][c];
                                    chan_sum[c] += ec * a12 * e3[k3];
                                }
                            }
                            if (comb == 0.0) continue;
                            const Real w = comb * a12 * e3[k3];
                            const Real dz = k3 - p.grid_pos.z();
                            w_sum += w;
                            delta_sum.x() += w * dx;
                            delta_sum.y() += w * dy;
                            delta_sum.z() += w * dz;
                            d2_sum += w * (dxy2 + dz * dz);
                        }
                    }
                }
                g.d_scale = w_sum;
                g.d_gpos = (p.scale / (sc * sc)) * delta_sum;
                g.d_sigma_cells = p.scale * d2_sum / (sc * sc * sc);
                if (d_values) (*d_values)[i] = p.scale * chan_sum;
            } else {
                const Mat3 q = p.cov_grid.inverse();
                Real w_sum = 0.0;
                Vec3 delta_sum = Vec3::Zero();
                Mat3 outer_sum = Mat3::Zero();
                Vec3 chan_sum = Vec3::Zero();
                std::int64_t cell = 0;
                for (int k1 = 0; k1 < grid.d1; ++k1) {
                    for (int k2 = 0; k2 < grid.d2; ++k2) {
                        for (int k3 = 0; k3 < grid.d3; ++k3, ++cell) {
                            const Vec3 d(k1 - p.grid_pos.x(), k2 - p.grid_pos.y(),
                                         k3 - p.grid_pos.z());
                            const Real gauss = std::exp(-0.5 * d.dot(q * d));
                            Real comb = e_base.data[cell];
                            if (channels) {
                                for (int c = 0; c < channels; ++c) {
                                    const Real ec = (*e_channels)[c].data[cell];
                                    comb += ec * (*values)[i][c];
                                    chan_sum[c] += ec * gauss;
                                }
                            }
                            if (comb == 0.0) continue;
                            const Real w = comb * gauss;
                            w_sum += w;
                            delta_sum += w * d;
                            outer_sum += w * (d * d.transpose());
                        }
                    }
                }
                g.d_scale = w_sum;
                g.d_gpos = p.scale * (q * delta_sum);
                g.d_cov_grid = 0.5 * p.scale * (q * outer_sum * q);
                if (d_values) (*d_values)[i] = p.scale * chan_sum;
            }
        }
    });
    return out;
}

/// Adjoint of splat_basic (clip included): recomputes the pre-clip volume,
/// applies the clip subgradient, then runs the per-point core pass.
inline std::vector<SplatPointGrads> vjp_splat_basic(const std::vector<TransformedPoint>& points,
                                                    const GridSpec& grid, const Volume& d_occ) {
    const Volume raw = splat_basic_raw(points, grid);
    return vjp_splat_points(points, grid, clip_adjoint(raw, d_occ));
}

/// Adjoint of trilinear_scatter; accumulates into d_amps / d_gp so several
/// channels sharing the same positions can be chained.
inline void vjp_trilinear_scatter(const std::vector<Vec3>& positions,
                                  const std::vector<Real>& amps, const GridSpec& grid,
                                  const Volume& d_scattered, std::vector<Real>& d_amps,
                                  std::vector<Vec3>& d_gp) {
    if (d_amps.size() != positions.size() || d_gp.size() != positions.size())
        throw DomainError("vjp_trilinear_scatter: output buffers not sized");
    parallel_for(0, static_cast<std::int64_t>(positions.size()), [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
            const Vec3& p = positions[i];
            const int b1 = static_cast<int>(std::floor(p.x()));
            const int b2 = static_cast<int>(std::floor(p.y()));
            const int b3 = static_cast<int>(std::floor(p.z()));
            const Real f1 = p.x() - b1, f2 = p.y() - b2, f3 = p.z() - b3;
            Real da = 0.0;
            Vec3 dg = Vec3::Zero();
            for (int c1 = 0; c1 <= 1; ++c1) {
                const int k1 = b1 + c1;
                if (k1 < 0 || k1 >= grid.d1) continue;
                const Real w1 = c1 ? f1 : 1.0 - f1;
                const Real s1 = c1 ? 1.0 : -1.0;
                for (int c2 = 0; c2 <= 1; ++c2) {
                    const int k2 = b2 + c2;
                    if (k2 < 0 || k2 >= grid.d2) continue;
                    const Real w2 = c2 ? f2 : 1.0 - f2;
                    const Real s2 = c2 ? 1.0 : -1.0;
                    for (int c3 = 0; c3 <= 1; ++c3) {
                        const int k3 = b3 + c3;
                        if (k3 < 0 || k3 >= grid.d3) continue;
                        const Real w3 = c3 ? f3 : 1.0 - f3;
                        const Real s3 = c3 ? 1.0 : -1.0;
                        const Real v = d_scattered.at(k1, k2, k3);
                        da += w1 * w2 * w3 * v;
                        dg.x() += s1 * w2 * w3 * v;
                        dg.y() += w1 * s2 * w3 * v;
                        dg.z() += w1 * w2 * s3 * v;
                    }
                }
            }
            d_amps[i] += da;
            d_gp[i] += amps[i] * dg;
        }
    });
}

inline Real volume_dot(const Volume& a, const Volume& b) {
    Real acc = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

/// Cotangents of one fast-path convolution chain, given the cotangent of its
/// pre-clip output. The kernel is symmetric, so each convolution is its own
/// transpose; the sigma term correlates each stage cotangent with the
/// derivative-kernel convolution of that stage's input.
struct FastChainGrads {
    Volume d_scattered;
    Real d_sigma_cells = 0.0;
};

inline FastChainGrads vjp_fast_chain(const FastSplatCache& cache, const Volume& d_raw,
                                     bool size_grads = true) {
    FastChainGrads g;
    const Volume d2 = convolve_axis(d_raw, cache.kernel, 2);
    const Volume d1 = convolve_axis(d2, cache.kernel, 1);
    g.d_scattered = convolve_axis(d1, cache.kernel, 0);
    if (size_grads) {
        const Kernel1D dk = gaussian_kernel_1d_dsigma(cache.kernel);
        g.d_sigma_cells = volume_dot(d_raw, convolve_axis(cache.after_axis01, dk, 2)) +
                          volume_dot(d2, convolve_axis(cache.after_axis0, dk, 1)) +
                          volume_dot(d1, convolve_axis(cache.scattered, dk, 0));
    }
    return g;
}

/// Adjoint of project: image cotangent -> termination (+ signal) cotangents.
struct ProjectAdjoint {
    TerminationVolume d_term;
    SignalVolume d_signal; // color modality only
};

inline ProjectAdjoint vjp_project(const TerminationVolume& term, Modality modality,
                                  const SignalVolume* signal, const Vec3& background_color,
                                  const Projection& d_image) {
    ProjectAdjoint adj;
    adj.d_term = TerminationVolume(term.d1, term.d2, term.d3);
    if (modality == Modality::Color) {
        if (!signal) throw DomainError("vjp_project: color modality needs a signal volume");
        adj.d_signal = SignalVolume(term.d1, term.d2, term.d3, 3);
    }
    const int d3 = term.d3;
    parallel_for(0, static_cast<std::int64_t>(term.d1) * term.d2, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t px = lo; px < hi; ++px) {
            Real* dt = adj.d_term.data.data() + px * (d3 + 1);
            switch (modality) {
            case Modality::Silhouette:
                dt[d3] = -d_image.data[px];
                break;
            case Modality::Depth: {
                const Real di = d_image.data[px];
                for (int k = 0; k < d3; ++k) dt[k] = di * (k + 1) / static_cast<Real>(d3);
                dt[d3] = di * (d3 + 1) / static_cast<Real>(d3);
                break;
            }
            case Modality::Color: {
                const Real* di = d_image.data.data() + px * 3;
                const Real* r = term.data.data() + px * (d3 + 1);
                const Real* sig = signal->data.data() + px * d3 * 3;
                Real* ds = adj.d_signal.data.data() + px * d3 * 3;
                for (int c = 0; c < 3; ++c) dt[d3] += di[c] * background_color[c];
                for (int k = 0; k < d3; ++k) {
                    for (int c = 0; c < 3; ++c) {
                        dt[k] += di[c] * sig[k * 3 + c];
                        ds[k * 3 + c] = di[c] * r[k];
                    }
                }
                break;
            }
            }
        }
    });
    return adj;
}

/// Gradients of one render w.r.t. every input parameter group. Points
/// removed by the dropout mask keep exactly-zero rows. `d_shared_sigma`
/// carries the fast path's single world-sigma derivative; per-point
/// `d_sigmas` / covariance entries are basic-path outputs.
struct RenderGradients {
    std::vector<Vec3> d_positions;
    std::vector<Real> d_scales;
    std::vector<Real> d_sigmas;
    std::vector<Vec3> d_cov_diag;
    std::vector<Vec4> d_cov_orient; // ambient quaternion cotangents
    std::vector<Vec3> d_colors;
    Vec4 d_rotation = Vec4::Zero(); // ambient quaternion cotangent
    Vec3 d_translation = Vec3::Zero();
    Real d_shared_sigma = 0.0;

    static RenderGradients zeros(std::size_t n) {
        RenderGradients g;
        g.d_positions.assign(n, Vec3::Zero());
        g.d_scales.assign(n, 0.0);
        g.d_sigmas.assign(n, 0.0);
        g.d_cov_diag.assign(n, Vec3::Zero());
        g.d_cov_orient.assign(n, Vec4::Zero());
        g.d_colors.assign(n, Vec3::Zero());
        return g;
    }
};

namespace detail {

/// Chain rule through q_hat = q / |q|: pulls a unit-quaternion cotangent
/// back to the ambient parameter.
inline Vec4 ambient_quat_grad(const Quaternion& q_raw, const Vec4& d_unit) {
    const Real n = q_raw.norm();
    const Vec4 qh = q_raw.normalized().as_vec4();
    return (d_unit - qh * qh.dot(d_unit)) / n;
}

} // namespace detail

/// Full-pipeline adjoint operating on the cached primal values of one render.
/// `cloud` must be the cloud the cache was built from.
inline RenderGradients vjp_render(const PointCloud& cloud, const RenderCache& rc,
                                  const Projection& d_image, bool size_grads = true) {
    if (!d_image.same_shape(rc.image)) throw DomainError("vjp_render: cotangent shape mismatch");
    const GridSpec& grid = rc.grid;
    const bool color = rc.settings.modality == Modality::Color;

    RenderGradients g = RenderGradients::zeros(cloud.size());

    // project -> termination -> clip
    const ProjectAdjoint pa = vjp_project(rc.term, rc.settings.modality, color ? &rc.signal : nullptr,
                                          rc.settings.background_color, d_image);
    const Volume d_occ = vjp_ray_termination(rc.occ, pa.d_term);
    Volume e_base = clip_adjoint(rc.raw_volume(), d_occ);

    // signal normalization adjoint: numerator cotangents plus the denominator
    // term folded into the raw-density cotangent (the denominator bypasses
    // the clip).
    std::vector<Volume> e_channels;
    if (color) {
        const Volume& den = rc.raw_volume();
        for (int c = 0; c < 3; ++c) e_channels.emplace_back(grid.d1, grid.d2, grid.d3);
        for (std::int64_t cell = 0; cell < den.size(); ++cell) {
            const Real d = den.data[cell];
            if (d < kSignalEps) continue;
            Real den_cot = 0.0;
            for (int c = 0; c < 3; ++c) {
                const Real ds = pa.d_signal.data[cell * 3 + c];
                e_channels[c].data[cell] = ds / d;
                den_cot += ds * rc.signal.data[cell * 3 + c];
            }
            e_base.data[cell] -= den_cot / d;
        }
    }

    // splat adjoint, giving per-kept-point grid-space cotangents
    const std::size_t n_kept = rc.kept.size();
    std::vector<SplatPointGrads> sp(n_kept);
    std::vector<Vec3> d_vals;
    Real d_sigma_cells_shared = 0.0;

    if (!rc.fast) {
        std::vector<Vec3> values;
        if (color)
            for (std::size_t i : rc.kept) values.push_back(cloud.colors[i]);
        sp = vjp_splat_points(rc.tp, grid, e_base, color ? &e_channels : nullptr,
                              color ? &values : nullptr, color ? &d_vals : nullptr);
    } else {
        // rebuild the compact scatter arrays in the forward's order
        std::vector<Vec3> gp;
        std::vector<Real> sc;
        std::vector<std::size_t> scatter_to_kept;
        for (std::size_t k = 0; k < rc.tp.size(); ++k) {
            if (rc.tp[k].behind_camera) continue;
            gp.push_back(rc.tp[k].grid_pos);
            sc.push_back(rc.tp[k].scale);
            scatter_to_kept.push_back(k);
        }
        std::vector<Real> d_amp_base(gp.size(), 0.0);
        std::vector<Vec3> d_gp(gp.size(), Vec3::Zero());

        const FastChainGrads base = vjp_fast_chain(rc.fast_occ, e_base, size_grads);
        d_sigma_cells_shared += base.d_sigma_cells;
        vjp_trilinear_scatter(gp, sc, grid, base.d_scattered, d_amp_base, d_gp);

        std::vector<std::vector<Real>> d_amp_chan;
        if (color) {
            for (int c = 0; c < 3; ++c) {
                std::vector<Real> amps(gp.size());
                for (std::size_t j = 0; j < gp.size(); ++j)
                    amps[j] = sc[j] * cloud.colors[rc.kept[scatter_to_kept[j]]][c];
                const FastChainGrads ch = vjp_fast_chain(rc.fast_numer[c], e_channels[c], size_grads);
                d_sigma_cells_shared += ch.d_sigma_cells;
                std::vector<Real> d_amp(gp.size(), 0.0);
                vjp_trilinear_scatter(gp, amps, grid, ch.d_scattered, d_amp, d_gp);
                d_amp_chan.push_back(std::move(d_amp));
            }
        }
        for (std::size_t j = 0; j < gp.size(); ++j) {
            SplatPointGrads& s = sp[scatter_to_kept[j]];
            s.d_gpos = d_gp[j];
            s.d_scale = d_amp_base[j];
            if (color) {
                const std::size_t orig = rc.kept[scatter_to_kept[j]];
                Vec3 dv = Vec3::Zero();
                for (int c = 0; c < 3; ++c) {
                    s.d_scale += d_amp_chan[c][j] * cloud.colors[orig][c];
                    dv[c] = d_amp_chan[c][j] * sc[j];
                }
                if (d_vals.empty()) d_vals.assign(n_kept, Vec3::Zero());
                d_vals[scatter_to_kept[j]] = dv;
            }
        }
        g.d_shared_sigma = d_sigma_cells_shared * grid.grid_scale().x();
    }

    // camera transform adjoint: grid cotangents -> world parameters
    const Quaternion qn = rc.pose.rotation.normalized();
    const Mat3 rot = quat_to_matrix(qn);
    const Vec3 gs = grid.grid_scale();
    Mat3 d_rot_mat = Mat3::Zero();
    const bool persp = rc.cam.kind == CameraKind::Perspective;

    for (std::size_t k = 0; k < n_kept; ++k) {
        const std::size_t orig = rc.kept[k];
        const TransformedPoint& tp = rc.tp[k];
        if (tp.behind_camera) continue;
        const Vec3 p_world = cloud.positions[orig];
        const SizeParams sz = cloud.has_sizes() ? cloud.sizes[orig] : SizeParams{};

        const Vec3 d_u = gs.cwiseProduct(sp[k].d_gpos);
        Vec3 d_xc;
        Mat3 jp = Mat3::Identity();
        Vec3 p_cam = Vec3::Zero();
        if (persp) {
            p_cam = rot * p_world + rc.pose.translation;
            jp = perspective_jacobian(rc.cam, grid, p_cam);
            d_xc = jp.transpose() * d_u;
        } else {
            d_xc = d_u;
        }

        if (!tp.iso) {
            // covariance transport Sigma_grid = A Sigma_w A^T, A = diag(gs) J R
            const Mat3& e_cov = sp[k].d_cov_grid;
            const Mat3 b = persp ? Mat3(gs.asDiagonal() * jp) : Mat3(gs.asDiagonal());
            const Mat3 a = b * rot;
            const Mat3 sigma_w = sz.covariance();
            const Mat3 d_a = (e_cov + e_cov.transpose()) * a * sigma_w;
            d_rot_mat += b.transpose() * d_a;
            if (persp) {
                const Mat3 d_j = gs.asDiagonal() * d_a * rot.transpose();
                const Real z = p_cam.z(), f = rc.cam.focal;
                const Real inv_z2 = 1.0 / (z * z);
                d_xc.x() += d_j(0, 2) * (-f * inv_z2);
                d_xc.y() += d_j(1, 2) * (-f * inv_z2);
                d_xc.z() += (-f * inv_z2) * (d_j(0, 0) + d_j(1, 1)) +
                            (2.0 * f * inv_z2 / z) * (p_cam.x() * d_j(0, 2) + p_cam.y() * d_j(1, 2));
            }
            const Mat3 d_sigma_w = a.transpose() * e_cov * a;
            if (sz.kind == SizeKind::Isotropic) {
                g.d_sigmas[orig] += 2.0 * sz.sigma * d_sigma_w.trace();
            } else {
                const Quaternion qo = sz.orientation.normalized();
                const Mat3 r_or = quat_to_matrix(qo);
                const Mat3 d_d = r_or.transpose() * d_sigma_w * r_or;
                g.d_cov_diag[orig] += d_d.diagonal();
                const Mat3 d_r_or =
                    (d_sigma_w + d_sigma_w.transpose()) * r_or * sz.diag.asDiagonal();
                const std::array<Mat3, 4> parts = quat_matrix_partials(qo);
                Vec4 d_unit;
                for (int j = 0; j < 4; ++j) d_unit[j] = (d_r_or.array() * parts[j].array()).sum();
                g.d_cov_orient[orig] += detail::ambient_quat_grad(sz.orientation, d_unit);
            }
        } else {
            g.d_sigmas[orig] += sp[k].d_sigma_cells * gs.x();
        }

        g.d_positions[orig] = rot.transpose() * d_xc;
        g.d_scales[orig] = sp[k].d_scale;
        if (color && !d_vals.empty()) g.d_colors[orig] = d_vals[k];
        d_rot_mat += d_xc * p_world.transpose();
        g.d_translation += d_xc;
    }

    const std::array<Mat3, 4> parts = quat_matrix_partials(qn);
    Vec4 d_unit;
    for (int j = 0; j < 4; ++j) d_unit[j] = (d_rot_mat.array() * parts[j].array()).sum();
    g.d_rotation = detail::ambient_quat_grad(rc.pose.rotation, d_unit);
    return g;
}

/// Convenience overload: runs the forward pass internally.
inline RenderGradients vjp_render(const PointCloud& cloud, const Pose& pose,
                                  const CameraModel& cam, const GridSpec& grid,
                                  const RenderSettings& settings, const Projection& d_image,
                                  const std::vector<bool>* dropout_mask = nullptr,
                                  bool size_grads = true) {
    const RenderCache rc = render_cached(cloud, pose, cam, grid, settings, dropout_mask);
    return vjp_render(cloud, rc, d_image, size_grads);
}

// ---------------------------------------------------------------------------
// Finite-difference verification harness
// ---------------------------------------------------------------------------

struct FdReport {
    Real max_rel_err = 0.0;
    int worst_coordinate = -1;
    Real worst_analytic = 0.0;
    Real worst_numeric = 0.0;
};

/// Central differences per coordinate against a supplied analytic gradient.
/// Step h = h_scale * max(|x_i|, 1); errors are relative to the largest
/// gradient magnitude in the group, so exact zeros (symmetries) don't blow
/// up the ratio.
template <class F>
FdReport finite_diff_check(F&& f, std::vector<Real> x, const std::vector<Real>& analytic,
                           Real h_scale = 1e-4) {
    if (x.size() != analytic.size()) throw DomainError("finite_diff_check: size mismatch");
    std::vector<Real> fd(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Real xi = x[i];
        const Real h = h_scale * std::max(std::abs(xi), 1.0);
        x[i] = xi + h;
        const Real fp = f(x);
        x[i] = xi - h;
        const Real fm = f(x);
        x[i] = xi;
        fd[i] = (fp - fm) / (2.0 * h);
    }
    Real scale = 1e-8;
    for (std::size_t i = 0; i < x.size(); ++i)
        scale = std::max({scale, std::abs(fd[i]), std::abs(analytic[i])});
    FdReport rep;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const Real err = std::abs(fd[i] - analytic[i]) / scale;
        if (err >= rep.max_rel_err) {
            rep.max_rel_err = err;
            rep.worst_coordinate = static_cast<int>(i);
            rep.worst_analytic = analytic[i];
            rep.worst_numeric = fd[i];
        }
    }
    return rep;
}

} // namespace diffsplat

#endif // DIFFSPLAT_GRAD_HPP

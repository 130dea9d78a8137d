// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef DIFFSPLAT_RENDER_HPP
#define DIFFSPLAT_RENDER_HPP

#include "diffsplat/geometry.hpp"
#include "diffsplat/parallel.hpp"
#include "diffsplat/splat.hpp"
#include "diffsplat/volume.hpp"

#include <cstdint>
#include <vector>

namespace diffsplat {

inline constexpr Real kSignalEps = 1e-8; // signal denominators below this render as zero

enum class SplatPath { Basic, Fast };

/// r[k] = occ[k] * prod_{u<k} (1 - occ[u]); the background cell holds the
/// full survival product, so each ray's entries sum to 1 for occ in [0,1].
inline TerminationVolume ray_termination(const Volume& occ) {
    TerminationVolume term(occ.d1, occ.d2, occ.d3);
    const int d3 = occ.d3;
    parallel_for(0, static_cast<std::int64_t>(occ.d1) * occ.d2, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t line = lo; line < hi; ++line) {
            const Real* src = occ.data.data() + line * d3;
            Real* dst = term.data.data() + line * (d3 + 1);
            Real survive = 1.0;
            for (int k = 0; k < d3; ++k) {
                dst[k] = src[k] * survive;
                survive *= 1.0 - src[k];
            }
            dst[d3] = survive;
        }
    });
    return term;
}

/// Per-cell signal y(m) = sum_i y_i f_i(m) / sum_i f_i(m), guarded so cells
/// with denominator below kSignalEps carry the zero vector. `density_raw`
/// must be the pre-clip occupancy sum of the same points.
inline SignalVolume normalize_signal(const std::vector<Volume>& numerators,
                                     const Volume& density_raw) {
    const int channels = static_cast<int>(numerators.size());
    SignalVolume sig(density_raw.d1, density_raw.d2, density_raw.d3, channels);
    parallel_for(0, density_raw.size(), [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t cell = lo; cell < hi; ++cell) {
            const Real den = density_raw.data[cell];
            if (den < kSignalEps) continue; // already zero
            for (int c = 0; c < channels; ++c)
                sig.data[cell * channels + c] = numerators[c].data[cell] / den;
        }
    });
    return sig;
}

/// Brute-force normalized signal over transformed points (basic path).
inline SignalVolume signal_volume(const std::vector<TransformedPoint>& points,
                                  const std::vector<Vec3>& values, const GridSpec& grid) {
    if (points.size() != values.size())
        throw DomainError("signal_volume: points/values length mismatch");
    std::vector<Volume> numer;
    std::vector<Real> e1, e2, e3;
    for (int c = 0; c < 3; ++c) {
        Volume vol(grid.d1, grid.d2, grid.d3);
        for (std::size_t i = 0; i < points.size(); ++i) {
            const TransformedPoint& p = points[i];
            if (p.behind_camera) continue;
            const Real amp = p.scale * values[i][c];
            if (p.iso)
                detail::accumulate_iso_point(vol, p.grid_pos, amp, p.iso_sigma_cells, e1, e2, e3);
            else
                detail::accumulate_cov_point(vol, p.grid_pos, amp, p.cov_grid);
        }
        numer.push_back(std::move(vol));
    }
    return normalize_signal(numer, splat_basic_raw(points, grid));
}

/// Eq.-5-style plane projection along grid axis 3. Depth uses 1-based cell
/// indices scaled by 1/D3, the background contributing (D3+1)/D3. The color
/// background is configurable and defaults to black.
inline Projection project(const TerminationVolume& term, Modality modality,
                          const SignalVolume* signal = nullptr,
                          const Vec3& background_color = Vec3::Zero()) {
    if (modality == Modality::Color && signal == nullptr)
        throw DomainError("project: color modality needs a signal volume");
    const int channels = modality == Modality::Color ? 3 : 1;
    Projection img(term.d1, term.d2, channels, modality);
    const int d3 = term.d3;
    parallel_for(0, static_cast<std::int64_t>(term.d1) * term.d2, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t px = lo; px < hi; ++px) {
            const Real* r = term.data.data() + px * (d3 + 1);
            switch (modality) {
            case Modality::Silhouette:
                img.data[px] = 1.0 - r[d3];
                break;
            case Modality::Depth: {
                Real acc = 0.0;
                for (int k = 0; k < d3; ++k) acc += r[k] * (k + 1);
                img.data[px] = (acc + r[d3] * (d3 + 1)) / d3;
                break;
            }
            case Modality::Color: {
                Real* out = img.data.data() + px * 3;
                for (int c = 0; c < 3; ++c) out[c] = r[d3] * background_color[c];
                const Real* sig = signal->data.data() + px * d3 * 3;
                for (int k = 0; k < d3; ++k)
                    for (int c = 0; c < 3; ++c) out[c] += r[k] * sig[k * 3 + c];
                break;
            }
            }
        }
    });
    return img;
}

struct RenderSettings {
    Modality modality = Modality::Silhouette;
    SplatPath path = SplatPath::Basic;
    Vec3 background_color = Vec3::Zero(); // color modality only
    Real truncation = kKernelTruncation;  // fast-path kernel support, in sigmas
};

/// Every intermediate of one render, kept so the adjoint pass can reuse the
/// primal values instead of recomputing them.
struct RenderCache {
    GridSpec grid;
    CameraModel cam;
    Pose pose;
    RenderSettings settings;

    std::vector<std::size_t> kept; // indices into the caller's cloud after dropout
    std::vector<TransformedPoint> tp;

    bool fast = false;
    Real fast_sigma_cells = 0.0;        // shared kernel width, grid units
    FastSplatCache fast_occ;            // fast path only
    std::vector<FastSplatCache> fast_numer;

    Volume raw; // basic path pre-clip occupancy (fast path keeps it in fast_occ.raw)
    Volume occ;
    TerminationVolume term;
    std::vector<Volume> numer_raw; // basic-path color numerators
    SignalVolume signal;
    Projection image;

    const Volume& raw_volume() const { return fast ? fast_occ.raw : raw; }
};

/// Full pipeline: camera transform, splat, clip, ray termination, plane
/// projection. A dropout mask (true = keep) removes points before splatting.
inline RenderCache render_cached(const PointCloud& cloud, const Pose& pose,
                                 const CameraModel& cam, const GridSpec& grid,
                                 const RenderSettings& settings,
                                 const std::vector<bool>* dropout_mask = nullptr) {
    grid.validate();
    cam.validate();
    if (dropout_mask && dropout_mask->size() != cloud.size())
        throw DomainError("render: dropout mask length mismatch");
    if (settings.modality == Modality::Color && !cloud.has_colors())
        throw DomainError("render: color modality needs per-point colors");

    RenderCache rc;
    rc.grid = grid;
    rc.cam = cam;
    rc.pose = pose;
    rc.settings = settings;

    std::vector<Vec3> positions;
    std::vector<SizeParams> sizes;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        if (dropout_mask && !(*dropout_mask)[i]) continue;
        rc.kept.push_back(i);
        positions.push_back(cloud.positions[i]);
        sizes.push_back(cloud.has_sizes() ? cloud.sizes[i] : SizeParams{});
    }
    if (rc.kept.empty() && settings.modality != Modality::Silhouette)
        throw DomainError("render: empty cloud supported only for silhouettes");

    rc.tp = camera_transform(positions, sizes, pose, cam, grid);
    rc.fast = settings.path == SplatPath::Fast;

    if (rc.fast) {
        for (const SizeParams& s : sizes) {
            if (s.kind != SizeKind::Isotropic || s.sigma != sizes.front().sigma)
                throw DomainError("fast path requires shared sigma");
        }
        if (!grid.uniform_scale())
            throw DomainError("fast path requires a uniform grid scale");
        rc.fast_sigma_cells = sizes.empty() ? 1.0 : sizes.front().sigma * grid.grid_scale().x();
        std::vector<Vec3> gp;
        std::vector<Real> sc;
        for (const TransformedPoint& p : rc.tp) {
            if (p.behind_camera) continue;
            gp.push_back(p.grid_pos);
            sc.push_back(p.scale);
        }
        rc.fast_occ = splat_fast_cached(gp, sc, rc.fast_sigma_cells, grid, settings.truncation);
        rc.occ = clip_unit(rc.fast_occ.raw);
        if (settings.modality == Modality::Color) {
            for (int c = 0; c < 3; ++c) {
                std::vector<Real> amp;
                std::size_t j = 0;
                for (std::size_t k = 0; k < rc.tp.size(); ++k) {
                    if (rc.tp[k].behind_camera) continue;
                    amp.push_back(sc[j++] * cloud.colors[rc.kept[k]][c]);
                }
                rc.fast_numer.push_back(
                    splat_fast_cached(gp, amp, rc.fast_sigma_cells, grid, settings.truncation));
            }
            std::vector<Volume> numer;
            for (const FastSplatCache& f : rc.fast_numer) numer.push_back(f.raw);
            rc.signal = normalize_signal(numer, rc.fast_occ.raw);
        }
    } else {
        rc.raw = splat_basic_raw(rc.tp, grid);
        rc.occ = clip_unit(rc.raw);
        if (settings.modality == Modality::Color) {
            std::vector<Vec3> values;
            for (std::size_t i : rc.kept) values.push_back(cloud.colors[i]);
            std::vector<Real> e1, e2, e3;
            for (int c = 0; c < 3; ++c) {
                Volume vol(grid.d1, grid.d2, grid.d3);
                for (std::size_t k = 0; k < rc.tp.size(); ++k) {
                    const TransformedPoint& p = rc.tp[k];
                    if (p.behind_camera) continue;
                    const Real amp = p.scale * values[k][c];
                    if (p.iso)
                        detail::accumulate_iso_point(vol, p.grid_pos, amp, p.iso_sigma_cells, e1,
                                                     e2, e3);
                    else
                        detail::accumulate_cov_point(vol, p.grid_pos, amp, p.cov_grid);
                }
                rc.numer_raw.push_back(std::move(vol));
            }
            rc.signal = normalize_signal(rc.numer_raw, rc.raw);
        }
    }

    rc.term = ray_termination(rc.occ);
    rc.image = project(rc.term, settings.modality,
                       settings.modality == Modality::Color ? &rc.signal : nullptr,
                       settings.background_color);
    return rc;
}

inline Projection render(const PointCloud& cloud, const Pose& pose, const CameraModel& cam,
                         const GridSpec& grid, const RenderSettings& settings,
                         const std::vector<bool>* dropout_mask = nullptr) {
    return render_cached(cloud, pose, cam, grid, settings, dropout_mask).image;
}

} // namespace diffsplat

#endif // DIFFSPLAT_RENDER_HPP

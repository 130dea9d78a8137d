// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef DIFFSPLAT_SPLAT_HPP
#define DIFFSPLAT_SPLAT_HPP

#include "diffsplat/geometry.hpp"
#include "diffsplat/parallel.hpp"
#include "diffsplat/volume.hpp"

#include <cmath>
#include <vector>

namespace diffsplat {

inline constexpr Real kKernelTruncation = 3.0; // kernel support ends at 3 sigma

/// Elementwise clamp to [0, 1].
inline Volume clip_unit(Volume v) {
    for (Real& x : v.data) x = clamp01(x);
    return v;
}

// ---------------------------------------------------------------------------
// basic path: every per-point Gaussian evaluated on the full grid, O(N*V).
// Cell centers sit at integer continuous grid coordinates, so the offset of
// cell (k1,k2,k3) from a point is simply k - grid_pos.
// ---------------------------------------------------------------------------

namespace detail {

/// Rank-1 accumulation of one isotropic Gaussian, factorized into per-axis
/// exponentials (exact up to rounding; the exponent is separable).
inline void accumulate_iso_point(Volume& vol, const Vec3& pos, Real scale, Real sigma_cells,
                                 std::vector<Real>& e1, std::vector<Real>& e2,
                                 std::vector<Real>& e3) {
    const Real inv2s2 = 1.0 / (2.0 * sigma_cells * sigma_cells);
    e1.resize(vol.d1);
    e2.resize(vol.d2);
    e3.resize(vol.d3);
    for (int k = 0; k < vol.d1; ++k) e1[k] = std::exp(-(k - pos.x()) * (k - pos.x()) * inv2s2);
    for (int k = 0; k < vol.d2; ++k) e2[k] = std::exp(-(k - pos.y()) * (k - pos.y()) * inv2s2);
    for (int k = 0; k < vol.d3; ++k) e3[k] = std::exp(-(k - pos.z()) * (k - pos.z()) * inv2s2);

    Real* out = vol.data.data();
    for (int k1 = 0; k1 < vol.d1; ++k1) {
        const Real a = scale * e1[k1];
        for (int k2 = 0; k2 < vol.d2; ++k2) {
            const Real b = a * e2[k2];
            for (int k3 = 0; k3 < vol.d3; ++k3) *out++ += b * e3[k3];
        }
    }
}

inline void accumulate_cov_point(Volume& vol, const Vec3& pos, Real scale, const Mat3& cov) {
    const Mat3 q = cov.inverse();
    Real* out = vol.data.data();
    for (int k1 = 0; k1 < vol.d1; ++k1) {
        for (int k2 = 0; k2 < vol.d2; ++k2) {
            for (int k3 = 0; k3 < vol.d3; ++k3) {
                const Vec3 d(k1 - pos.x(), k2 - pos.y(), k3 - pos.z());
                *out++ += scale * std::exp(-0.5 * d.dot(q * d));
            }
        }
    }
}

} // namespace detail

/// Pre-clip occupancy sum of Eq-style unnormalized Gaussians.
inline Volume splat_basic_raw(const std::vector<TransformedPoint>& points, const GridSpec& grid) {
    grid.validate();
    Volume vol(grid.d1, grid.d2, grid.d3);
    std::vector<Real> e1, e2, e3;
    for (const TransformedPoint& p : points) {
        if (p.behind_camera) continue;
        if (p.iso)
            detail::accumulate_iso_point(vol, p.grid_pos, p.scale, p.iso_sigma_cells, e1, e2, e3);
        else
            detail::accumulate_cov_point(vol, p.grid_pos, p.scale, p.cov_grid);
    }
    return vol;
}

inline Volume splat_basic(const std::vector<TransformedPoint>& points, const GridSpec& grid) {
    return clip_unit(splat_basic_raw(points, grid));
}

// ---------------------------------------------------------------------------
// fast path: trilinear scatter followed by a shared separable Gaussian
// convolution, O(N + V * kernel_len).
// ---------------------------------------------------------------------------

/// Distributes each point's scale over its 8 neighboring cell centers with
/// trilinear weights; mass falling outside the grid is dropped.
inline Volume trilinear_scatter(const std::vector<Vec3>& positions, const std::vector<Real>& scales,
                                const GridSpec& grid) {
    grid.validate();
    if (positions.size() != scales.size())
        throw DomainError("trilinear_scatter: positions/scales length mismatch");
    Volume vol(grid.d1, grid.d2, grid.d3);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const Vec3& p = positions[i];
        const int b1 = static_cast<int>(std::floor(p.x()));
        const int b2 = static_cast<int>(std::floor(p.y()));
        const int b3 = static_cast<int>(std::floor(p.z()));
        const Real f1 = p.x() - b1, f2 = p.y() - b2, f3 = p.z() - b3;
        for (int d1 = 0; d1 <= 1; ++d1) {
            const int k1 = b1 + d1;
            if (k1 < 0 || k1 >= grid.d1) continue;
            const Real w1 = d1 ? f1 : 1.0 - f1;
            for (int d2 = 0; d2 <= 1; ++d2) {
                const int k2 = b2 + d2;
                if (k2 < 0 || k2 >= grid.d2) continue;
                const Real w12 = w1 * (d2 ? f2 : 1.0 - f2);
                for (int d3 = 0; d3 <= 1; ++d3) {
                    const int k3 = b3 + d3;
                    if (k3 < 0 || k3 >= grid.d3) continue;
                    vol.at(k1, k2, k3) += scales[i] * w12 * (d3 ? f3 : 1.0 - f3);
                }
            }
        }
    }
    return vol;
}

/// Symmetric odd-length 1D kernel with unit peak.
struct Kernel1D {
    std::vector<Real> taps;
    int center = 0;
    Real sigma_cells = 0.0;
    Real truncation = 0.0;

    int radius() const { return center; }
    int length() const { return static_cast<int>(taps.size()); }
};

/// Unnormalized Gaussian taps exp(-j^2 / 2 sigma^2); the peak stays 1 so the
/// convolved bump carries the point's own amplitude. Support is cut at
/// truncation * sigma cells; below one cell the kernel is a single tap.
inline Kernel1D gaussian_kernel_1d(Real sigma_cells, Real truncation = kKernelTruncation) {
    if (sigma_cells <= 0.0) throw DomainError("gaussian_kernel_1d: sigma must be > 0");
    if (truncation <= 0.0) throw DomainError("gaussian_kernel_1d: truncation must be > 0");
    Kernel1D k;
    k.sigma_cells = sigma_cells;
    k.truncation = truncation;
    k.center = static_cast<int>(std::floor(truncation * sigma_cells));
    k.taps.resize(2 * k.center + 1);
    const Real inv2s2 = 1.0 / (2.0 * sigma_cells * sigma_cells);
    for (int j = -k.center; j <= k.center; ++j)
        k.taps[j + k.center] = std::exp(-static_cast<Real>(j) * j * inv2s2);
    return k;
}

/// Kernel of per-tap derivatives d taps / d sigma (same support).
inline Kernel1D gaussian_kernel_1d_dsigma(const Kernel1D& k) {
    Kernel1D d = k;
    const Real s3 = k.sigma_cells * k.sigma_cells * k.sigma_cells;
    for (int j = -k.center; j <= k.center; ++j)
        d.taps[j + k.center] = k.taps[j + k.center] * (static_cast<Real>(j) * j / s3);
    return d;
}

/// 1D convolution along one grid axis with zero padding. The kernels used
/// here are symmetric, so this routine is its own transpose.
inline Volume convolve_axis(const Volume& in, const Kernel1D& kernel, int axis) {
    Volume out(in.d1, in.d2, in.d3);
    const int r = kernel.center;
    const Real* taps = kernel.taps.data();

    if (axis == 2) {
        parallel_for(0, static_cast<std::int64_t>(in.d1) * in.d2, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t line = lo; line < hi; ++line) {
                const Real* src = in.data.data() + line * in.d3;
                Real* dst = out.data.data() + line * in.d3;
                for (int k = 0; k < in.d3; ++k) {
                    Real acc = 0.0;
                    const int o_lo = std::max(-r, -k);
                    const int o_hi = std::min(r, in.d3 - 1 - k);
                    for (int o = o_lo; o <= o_hi; ++o) acc += taps[o + r] * src[k + o];
                    dst[k] = acc;
                }
            }
        });
        return out;
    }

    if (axis == 1) {
        const std::int64_t line = in.d3;
        parallel_for(0, in.d1, [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t k1 = lo; k1 < hi; ++k1) {
                Real* dst_slab = out.data.data() + k1 * in.d2 * line;
                for (int k2 = 0; k2 < in.d2; ++k2) {
                    Real* dst = dst_slab + k2 * line;
                    const int o_lo = std::max(-r, -k2);
                    const int o_hi = std::min(r, in.d2 - 1 - k2);
                    for (int o = o_lo; o <= o_hi; ++o) {
                        const Real w = taps[o + r];
                        const Real* src = in.data.data() + (k1 * in.d2 + (k2 + o)) * line;
                        for (std::int64_t t = 0; t < line; ++t) dst[t] += w * src[t];
                    }
                }
            }
        });
        return out;
    }

    // axis == 0
    const std::int64_t slab = static_cast<std::int64_t>(in.d2) * in.d3;
    parallel_for(0, in.d1, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t k1 = lo; k1 < hi; ++k1) {
            Real* dst = out.data.data() + k1 * slab;
            const int o_lo = std::max(-r, static_cast<int>(-k1));
            const int o_hi = std::min<std::int64_t>(r, in.d1 - 1 - k1);
            for (int o = o_lo; o <= o_hi; ++o) {
                const Real w = taps[o + r];
                const Real* src = in.data.data() + (k1 + o) * slab;
                for (std::int64_t t = 0; t < slab; ++t) dst[t] += w * src[t];
            }
        }
    });
    return out;
}

/// Intermediate volumes of the fast path, kept for the adjoint pass.
struct FastSplatCache {
    Volume scattered;    // after trilinear scatter
    Volume after_axis0;  // after convolution along axis 1
    Volume after_axis01; // after convolution along axes 1 and 2
    Volume raw;          // after all three convolutions, pre-clip
    Kernel1D kernel;
};

inline FastSplatCache splat_fast_cached(const std::vector<Vec3>& positions,
                                        const std::vector<Real>& scales, Real shared_sigma_cells,
                                        const GridSpec& grid,
                                        Real truncation = kKernelTruncation) {
    FastSplatCache c;
    c.kernel = gaussian_kernel_1d(shared_sigma_cells, truncation);
    c.scattered = trilinear_scatter(positions, scales, grid);
    c.after_axis0 = convolve_axis(c.scattered, c.kernel, 0);
    c.after_axis01 = convolve_axis(c.after_axis0, c.kernel, 1);
    c.raw = convolve_axis(c.after_axis01, c.kernel, 2);
    return c;
}

inline Volume splat_fast_raw(const std::vector<Vec3>& positions, const std::vector<Real>& scales,
                             Real shared_sigma_cells, const GridSpec& grid,
                             Real truncation = kKernelTruncation) {
    return splat_fast_cached(positions, scales, shared_sigma_cells, grid, truncation).raw;
}

inline Volume splat_fast(const std::vector<Vec3>& positions, const std::vector<Real>& scales,
                         Real shared_sigma_cells, const GridSpec& grid,
                         Real truncation = kKernelTruncation) {
    return clip_unit(splat_fast_raw(positions, scales, shared_sigma_cells, grid, truncation));
}

} // namespace diffsplat

#endif // DIFFSPLAT_SPLAT_HPP

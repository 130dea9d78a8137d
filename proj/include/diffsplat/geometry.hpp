// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef DIFFSPLAT_GEOMETRY_HPP
#define DIFFSPLAT_GEOMETRY_HPP

#include "diffsplat/common.hpp"

#include <array>
#include <cmath>
#include <vector>

namespace diffsplat {

// ---------------------------------------------------------------------------
// Quaternion (w, x, y, z), Hamilton convention, right-handed frames.
// q and -q encode the same rotation; rotation formulas below are quadratic in
// the components, so the sign flip is bit-invariant.
// ---------------------------------------------------------------------------
struct Quaternion {
    Real w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quaternion() = default;
    Quaternion(Real w_, Real x_, Real y_, Real z_) : w(w_), x(x_), y(y_), z(z_) {}

    static Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }

    Real norm2() const { return w * w + x * x + y * y + z * z; }
    Real norm() const { return std::sqrt(norm2()); }

    Quaternion conjugate() const { return {w, -x, -y, -z}; }

    Quaternion normalized() const {
        const Real n = norm();
        if (n == 0.0) throw DomainError("cannot normalize zero quaternion");
        return {w / n, x / n, y / n, z / n};
    }

    Quaternion inverse() const {
        const Real n2 = norm2();
        if (n2 == 0.0) throw DomainError("cannot invert zero quaternion");
        return {w / n2, -x / n2, -y / n2, -z / n2};
    }

    Vec4 as_vec4() const { return Vec4(w, x, y, z); }
};

/// Hamilton product a*b.
inline Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
    return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

/// Rotation matrix of a unit quaternion.
inline Mat3 quat_to_matrix(const Quaternion& q) {
    const Real w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

/// Rotates v by unit quaternion q (counterclockwise positive about the axis).
inline Vec3 quat_rotate(const Quaternion& q, const Vec3& v) {
    // q v q^-1 expanded via the cross-product form; quadratic in q.
    const Vec3 u(q.x, q.y, q.z);
    const Vec3 t = 2.0 * u.cross(v);
    return v + q.w * t + u.cross(t);
}

inline Quaternion quat_from_axis_angle(const Vec3& axis, Real angle_rad) {
    const Vec3 a = axis.normalized();
    const Real h = 0.5 * angle_rad;
    const Real s = std::sin(h);
    return {std::cos(h), a.x() * s, a.y() * s, a.z() * s};
}

/// Partials of the unit-quaternion rotation matrix w.r.t. each component.
/// Valid for the quadratic formula above (no unit-norm correction terms).
inline std::array<Mat3, 4> quat_matrix_partials(const Quaternion& q) {
    const Real w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3 dw, dx, dy, dz;
    dw << 0, -z, y, z, 0, -x, -y, x, 0;
    dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    return {2.0 * dw, 2.0 * dx, 2.0 * dy, 2.0 * dz};
}

/// Rotation matrix to quaternion (Shepperd's method); returns a unit quaternion.
inline Quaternion quat_from_matrix(const Mat3& r) {
    const Real tr = r.trace();
    Quaternion q;
    if (tr > 0.0) {
        Real s = std::sqrt(tr + 1.0) * 2.0;
        q = {0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        Real s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q = {(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) > r(2, 2)) {
        Real s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q = {(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s};
    } else {
        Real s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q = {(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s};
    }
    return q.normalized();
}

// ---------------------------------------------------------------------------
// Pose and camera
// ---------------------------------------------------------------------------

/// World-to-camera rigid transform: p_cam = R(rotation) * p_world + translation.
struct Pose {
    Quaternion rotation;
    Vec3 translation = Vec3::Zero();
};

enum class CameraKind { Orthographic, Perspective };

struct CameraModel {
    CameraKind kind = CameraKind::Orthographic;
    // Perspective intrinsics; object in the unit cube viewed from distance 2.
    Real focal = 1.875;
    Real near = 1.0;
    Real far = 3.0;

    void validate() const {
        if (kind == CameraKind::Perspective) {
            if (focal <= 0.0) throw DomainError("camera focal must be > 0");
            if (near <= 0.0) throw DomainError("camera near must be > 0");
            if (far <= near) throw DomainError("camera far must be > near");
        }
    }
};

/// Dense grid of D1 x D2 x D3 cells covering a world-extent box centered at
/// the camera-frame origin. The cell center of index k along axis i sits at
/// (k / D_i - 0.5) * extent_i, so continuous grid coordinates place the
/// center of cell k exactly at coordinate k.
struct GridSpec {
    int d1 = 1, d2 = 1, d3 = 1;
    Vec3 extent = Vec3(1.0, 1.0, 1.0);

    static GridSpec cubic(int d, Real extent_w = 1.0) {
        return {d, d, d, Vec3(extent_w, extent_w, extent_w)};
    }

    void validate() const {
        if (d1 < 1 || d2 < 1 || d3 < 1) throw DomainError("grid dims must be >= 1");
        if (extent.minCoeff() <= 0.0) throw DomainError("grid extent must be > 0");
    }

    std::int64_t cells() const {
        return static_cast<std::int64_t>(d1) * d2 * d3;
    }

    int dim(int axis) const { return axis == 0 ? d1 : (axis == 1 ? d2 : d3); }

    /// Camera-frame coordinate -> continuous grid coordinate, per axis.
    Real to_grid(int axis, Real v) const {
        return (v / extent[axis] + 0.5) * dim(axis);
    }
    Real to_world(int axis, Real g) const {
        return (g / dim(axis) - 0.5) * extent[axis];
    }

    /// Diagonal scale of the camera-frame -> grid-coordinate map.
    Vec3 grid_scale() const {
        return Vec3(d1 / extent.x(), d2 / extent.y(), d3 / extent.z());
    }

    /// True when all axes share one cells-per-world-unit scale (required for
    /// an isotropic world sigma to stay isotropic in grid coordinates).
    bool uniform_scale() const {
        const Vec3 s = grid_scale();
        return s.x() == s.y() && s.y() == s.z();
    }
};

// ---------------------------------------------------------------------------
// Point size parameters
// ---------------------------------------------------------------------------

enum class SizeKind { Isotropic, FullCov };

/// Per-point Gaussian parameters: amplitude `scale` plus either an isotropic
/// sigma (world units) or a full covariance given as eigenvalues `diag` and
/// an orientation quaternion (the 7-number parametrization).
struct SizeParams {
    SizeKind kind = SizeKind::Isotropic;
    Real scale = 1.0;
    Real sigma = 0.05;
    Vec3 diag = Vec3(1e-4, 1e-4, 1e-4); // covariance eigenvalues, world units^2
    Quaternion orientation;

    static SizeParams isotropic(Real scale, Real sigma) {
        SizeParams s;
        s.kind = SizeKind::Isotropic;
        s.scale = scale;
        s.sigma = sigma;
        return s;
    }
    static SizeParams full_cov(Real scale, const Vec3& diag, const Quaternion& orientation) {
        SizeParams s;
        s.kind = SizeKind::FullCov;
        s.scale = scale;
        s.diag = diag;
        s.orientation = orientation;
        return s;
    }

    /// Covariance matrix in world units.
    Mat3 covariance() const {
        if (kind == SizeKind::Isotropic) return sigma * sigma * Mat3::Identity();
        const Mat3 r = quat_to_matrix(orientation.normalized());
        return r * diag.asDiagonal() * r.transpose();
    }
};

struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<SizeParams> sizes; // empty = defaults supplied by the consumer
    std::vector<Vec3> colors;      // empty = no signal

    std::size_t size() const { return positions.size(); }
    bool has_colors() const { return !colors.empty(); }
    bool has_sizes() const { return !sizes.empty(); }
};

// ---------------------------------------------------------------------------
// Camera transform: world points -> continuous grid coordinates where the
// projection is orthogonal along axis 3 (grid index 0 nearest the camera).
// ---------------------------------------------------------------------------

/// Transformed per-point state in grid coordinates. `iso_sigma_cells` is set
/// when the grid-space covariance is a scalar multiple of the identity.
struct TransformedPoint {
    Vec3 grid_pos = Vec3::Zero();
    Real scale = 1.0;
    bool behind_camera = false;
    bool iso = true;
    Real iso_sigma_cells = 1.0;
    Mat3 cov_grid = Mat3::Identity(); // valid when !iso
};

/// Jacobian of the perspective frustum-to-cube map at camera-frame point p.
/// Lateral coordinates are divided by depth (scaled by focal); depth is
/// remapped affinely from [near, far] onto the grid's depth extent.
inline Mat3 perspective_jacobian(const CameraModel& cam, const GridSpec& grid, const Vec3& p) {
    const Real z = p.z();
    Mat3 j = Mat3::Zero();
    j(0, 0) = cam.focal / z;
    j(0, 2) = -cam.focal * p.x() / (z * z);
    j(1, 1) = cam.focal / z;
    j(1, 2) = -cam.focal * p.y() / (z * z);
    j(2, 2) = grid.extent.z() / (cam.far - cam.near);
    return j;
}

inline Vec3 frustum_to_cube(const CameraModel& cam, const GridSpec& grid, const Vec3& p) {
    const Real z = p.z();
    return Vec3(cam.focal * p.x() / z, cam.focal * p.y() / z,
                ((z - cam.near) / (cam.far - cam.near) - 0.5) * grid.extent.z());
}

/// Transform rule for covariances: Sigma' = J Sigma J^T with the local
/// Jacobian of the point map evaluated at the point mean.
inline Mat3 push_covariance(const Mat3& sigma, const Mat3& jacobian) {
    return jacobian * sigma * jacobian.transpose();
}

inline std::vector<TransformedPoint> camera_transform(const std::vector<Vec3>& positions,
                                                      const std::vector<SizeParams>& sizes,
                                                      const Pose& pose, const CameraModel& cam,
                                                      const GridSpec& grid) {
    cam.validate();
    grid.validate();
    if (!sizes.empty() && sizes.size() != positions.size())
        throw DomainError("camera_transform: sizes/positions length mismatch");

    const Quaternion q = pose.rotation.normalized();
    const Mat3 r = quat_to_matrix(q);
    const Vec3 gs = grid.grid_scale();
    const bool uniform = grid.uniform_scale();

    std::vector<TransformedPoint> out(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        TransformedPoint& t = out[i];
        const Vec3 p_cam = r * positions[i] + pose.translation;
        const SizeParams sz = sizes.empty() ? SizeParams{} : sizes[i];
        t.scale = sz.scale;

        Vec3 canon;
        if (cam.kind == CameraKind::Perspective) {
            if (p_cam.z() <= 0.0) {
                t.behind_camera = true;
                continue;
            }
            canon = frustum_to_cube(cam, grid, p_cam);
        } else {
            canon = p_cam;
        }
        for (int a = 0; a < 3; ++a) t.grid_pos[a] = grid.to_grid(a, canon[a]);

        if (sz.kind == SizeKind::Isotropic && cam.kind == CameraKind::Orthographic && uniform) {
            t.iso = true;
            t.iso_sigma_cells = sz.sigma * gs.x();
        } else {
            Mat3 j = gs.asDiagonal();
            if (cam.kind == CameraKind::Perspective)
                j = j * perspective_jacobian(cam, grid, p_cam);
            j = j * r;
            t.iso = false;
            t.cov_grid = push_covariance(sz.covariance(), j);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Covariance transport as a public operation (matrix -> 7-number form).
// ---------------------------------------------------------------------------

/// Applies Sigma' = J Sigma J^T and re-expresses the result as eigenvalues +
/// orientation. Numerically non-SPD results are re-symmetrized and their
/// eigenvalues clamped to 1e-12.
inline SizeParams transform_covariance(const SizeParams& size, const Pose& pose,
                                       const Mat3& local_jacobian) {
    const Mat3 r = quat_to_matrix(pose.rotation.normalized());
    const Mat3 j = local_jacobian * r;
    Mat3 sigma = push_covariance(size.covariance(), j);
    sigma = 0.5 * (sigma + sigma.transpose());

    Eigen::SelfAdjointEigenSolver<Mat3> es(sigma);
    Vec3 evals = es.eigenvalues().cwiseMax(1e-12);
    Mat3 evecs = es.eigenvectors();
    if (evecs.determinant() < 0.0) evecs.col(0) = -evecs.col(0);

    return SizeParams::full_cov(size.scale, evals, quat_from_matrix(evecs));
}

// ---------------------------------------------------------------------------
// Orbit poses (used by the synthetic-data generator and candidate init)
// ---------------------------------------------------------------------------

/// Camera on the sphere of radius `distance` at the given azimuth/elevation,
/// looking at the world origin. World up is +y; azimuth 0 looks down -z.
/// Camera axes are (down, right, forward) = grid axes (1, 2, 3). For
/// orthographic cameras pass center_depth = 0 so the look-at point lands at
/// the grid's depth center; for perspective pass center_depth = distance.
inline Pose orbit_pose(Real azim_deg, Real elev_deg, Real distance, Real center_depth) {
    const Real az = deg_to_rad(azim_deg);
    const Real el = deg_to_rad(elev_deg);
    const Vec3 eye = distance * Vec3(std::cos(el) * std::sin(az), std::sin(el),
                                     std::cos(el) * std::cos(az));
    const Vec3 forward = (-eye).normalized();
    const Vec3 up(0.0, 1.0, 0.0);
    Vec3 right = up.cross(forward);
    const Real rn = right.norm();
    if (rn < 1e-12) throw DomainError("orbit_pose: camera aligned with the up axis");
    right /= rn;
    const Vec3 down = right.cross(forward);

    Mat3 r;
    r.row(0) = down;
    r.row(1) = right;
    r.row(2) = forward;

    Pose pose;
    pose.rotation = quat_from_matrix(r);
    pose.translation = -(r * eye) + Vec3(0.0, 0.0, center_depth - distance);
    return pose;
}

} // namespace diffsplat

#endif // DIFFSPLAT_GEOMETRY_HPP

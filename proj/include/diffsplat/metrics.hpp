// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef DIFFSPLAT_METRICS_HPP
#define DIFFSPLAT_METRICS_HPP

#include "diffsplat/geometry.hpp"
#include "diffsplat/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

namespace diffsplat {

// ---------------------------------------------------------------------------
// Exact nearest neighbor over a uniform spatial hash. Ring expansion stops
// once the ring's conservative lower bound exceeds the best hit, so results
// equal brute force bit-for-bit (the minimum squared distance is the same
// value no matter which candidate order finds it).
// ---------------------------------------------------------------------------
class SpatialHash {
public:
    explicit SpatialHash(const std::vector<Vec3>& points) : pts_(points) {
        if (pts_.empty()) throw DomainError("spatial hash needs at least one point");
        Vec3 lo = pts_[0], hi = pts_[0];
        for (const Vec3& p : pts_) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        origin_ = lo;
        const Real diag = (hi - lo).norm();
        const Real target = diag / std::max<Real>(1.0, std::cbrt(static_cast<Real>(pts_.size())));
        cell_ = target > 0.0 ? target : 1.0;
        min_c_ = coord(lo);
        max_c_ = coord(hi);
        for (std::size_t i = 0; i < pts_.size(); ++i)
            buckets_[key(coord(pts_[i]))].push_back(static_cast<int>(i));
    }

    /// Index and squared distance of the exact nearest point.
    std::pair<int, Real> nearest(const Vec3& q) const {
        const Eigen::Vector3i c = coord(q);
        // Occupied cells all lie inside [min_c_, max_c_]; skip empty rings.
        int start = 0, span = 0;
        for (int a = 0; a < 3; ++a) {
            start = std::max({start, min_c_[a] - c[a], c[a] - max_c_[a]});
            span = std::max(span, max_c_[a] - min_c_[a]);
        }
        int best = -1;
        Real best_d2 = std::numeric_limits<Real>::infinity();
        for (int ring = start; ring <= start + span + 1; ++ring) {
            if (best >= 0) {
                const Real bound = (ring - 1) * cell_; // nearest possible point in this ring
                if (bound > 0.0 && bound * bound > best_d2) break;
            }
            scan_ring(q, c, ring, best, best_d2);
        }
        if (best < 0) { // pathological geometry; brute force stays exact
            for (std::size_t i = 0; i < pts_.size(); ++i) {
                const Real d2 = (pts_[i] - q).squaredNorm();
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = static_cast<int>(i);
                }
            }
        }
        return {best, best_d2};
    }

private:
    Eigen::Vector3i coord(const Vec3& p) const {
        return Eigen::Vector3i(static_cast<int>(std::floor((p.x() - origin_.x()) / cell_)),
                               static_cast<int>(std::floor((p.y() - origin_.y()) / cell_)),
                               static_cast<int>(std::floor((p.z() - origin_.z()) / cell_)));
    }
    static std::int64_t key(const Eigen::Vector3i& c) {
        const auto w = [](int v) { return static_cast<std::int64_t>(v) + (1 << 20); };
        return (w(c.x()) << 42) | (w(c.y()) << 21) | w(c.z());
    }
    void scan_ring(const Vec3& q, const Eigen::Vector3i& c, int ring, int& best,
                   Real& best_d2) const {
        for (int dx = -ring; dx <= ring; ++dx) {
            for (int dy = -ring; dy <= ring; ++dy) {
                for (int dz = -ring; dz <= ring; ++dz) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                    const auto it = buckets_.find(key(c + Eigen::Vector3i(dx, dy, dz)));
                    if (it == buckets_.end()) continue;
                    for (int i : it->second) {
                        const Real d2 = (pts_[i] - q).squaredNorm();
                        if (d2 < best_d2) {
                            best_d2 = d2;
                            best = i;
                        }
                    }
                }
            }
        }
    }

    const std::vector<Vec3>& pts_;
    Vec3 origin_ = Vec3::Zero();
    Real cell_ = 1.0;
    Eigen::Vector3i min_c_ = Eigen::Vector3i::Zero(), max_c_ = Eigen::Vector3i::Zero();
    std::unordered_map<std::int64_t, std::vector<int>> buckets_;
};

// ---------------------------------------------------------------------------
// Chamfer distance: precision (pred -> gt) + coverage (gt -> pred), both
// means of non-squared Euclidean nearest distances.
// ---------------------------------------------------------------------------
struct ChamferReport {
    Real precision = 0.0;
    Real coverage = 0.0;
    Real total = 0.0;
};

namespace detail {

inline Real mean_nearest_distance(const std::vector<Vec3>& from, const SpatialHash& to_hash) {
    std::vector<Real> d(from.size());
    parallel_for(0, static_cast<std::int64_t>(from.size()), [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) d[i] = std::sqrt(to_hash.nearest(from[i]).second);
    });
    Real acc = 0.0;
    for (Real v : d) acc += v;
    return acc / static_cast<Real>(from.size());
}

} // namespace detail

inline ChamferReport chamfer(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
    if (pred.empty() || gt.empty()) throw DomainError("chamfer: empty point set");
    const SpatialHash gt_hash(gt);
    const SpatialHash pred_hash(pred);
    ChamferReport r;
    r.precision = detail::mean_nearest_distance(pred, gt_hash);
    r.coverage = detail::mean_nearest_distance(gt, pred_hash);
    r.total = r.precision + r.coverage;
    return r;
}

/// Centers a cloud on its centroid and scales it so the bounding-box
/// diagonal is 1 (degenerate clouds keep scale 1).
inline std::vector<Vec3> normalize_cloud(const std::vector<Vec3>& pts) {
    if (pts.empty()) throw DomainError("normalize_cloud: empty point set");
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : pts) centroid += p;
    centroid /= static_cast<Real>(pts.size());
    Vec3 lo = pts[0], hi = pts[0];
    for (const Vec3& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Real diag = (hi - lo).norm();
    const Real s = diag > 0.0 ? 1.0 / diag : 1.0;
    std::vector<Vec3> out(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) out[i] = (pts[i] - centroid) * s;
    return out;
}

/// Table-style reporting convention: both clouds normalized by the same rule
/// (own centroid, unit bounding-box diagonal), total Chamfer times 100.
inline Real chamfer_normalized_x100(const std::vector<Vec3>& pred, const std::vector<Vec3>& gt) {
    return 100.0 * chamfer(normalize_cloud(pred), normalize_cloud(gt)).total;
}

// ---------------------------------------------------------------------------
// Pose metrics
// ---------------------------------------------------------------------------
struct PoseReport {
    std::vector<Real> errors_deg;
    Real accuracy_30 = 0.0;
    Real median_deg = 0.0;
};

/// Angular distance between two rotations, double-cover safe, in [0, 180].
inline Real pose_angle(const Quaternion& q1, const Quaternion& q2) {
    const Quaternion rel = quat_mul(q1, q2.inverse()).normalized();
    const Real c = std::min<Real>(1.0, std::abs(rel.w));
    return rad_to_deg(2.0 * std::acos(c));
}

inline PoseReport pose_metrics(const std::vector<Real>& errors_deg) {
    if (errors_deg.empty()) throw DomainError("pose_metrics: empty error list");
    PoseReport r;
    r.errors_deg = errors_deg;
    std::size_t within = 0;
    for (Real e : errors_deg)
        if (e <= 30.0) ++within;
    r.accuracy_30 = static_cast<Real>(within) / static_cast<Real>(errors_deg.size());
    std::vector<Real> sorted = errors_deg;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    r.median_deg = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    return r;
}

// ---------------------------------------------------------------------------
// Rigid alignment
// ---------------------------------------------------------------------------
struct RigidTransform {
    Quaternion rotation;
    Vec3 translation = Vec3::Zero();
    Real scale = 1.0;

    Vec3 apply(const Vec3& p) const { return scale * quat_rotate(rotation, p) + translation; }
};

/// Least-squares rigid fit of index-paired correspondences (Kabsch; optional
/// Umeyama uniform scale). Rotation is always proper (det +1).
inline RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                             bool with_scale = false) {
    if (src.size() != dst.size()) throw DomainError("kabsch: correspondence length mismatch");
    if (src.size() < 3) throw DomainError("kabsch: needs at least 3 correspondences");
    Vec3 sc = Vec3::Zero(), dc = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        sc += src[i];
        dc += dst[i];
    }
    sc /= static_cast<Real>(src.size());
    dc /= static_cast<Real>(src.size());

    Mat3 h = Mat3::Zero();
    Real src_var = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
        const Vec3 a = src[i] - sc, b = dst[i] - dc;
        h += a * b.transpose();
        src_var += a.squaredNorm();
    }
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sing = svd.singularValues();
    if (!(sing(1) > 1e-12 * std::max<Real>(sing(0), 1e-300)))
        throw DomainError("kabsch: degenerate correspondence geometry");
    const Real det = (svd.matrixV() * svd.matrixU().transpose()).determinant();
    const Vec3 d(1.0, 1.0, det < 0.0 ? -1.0 : 1.0);
    const Mat3 rot = svd.matrixV() * d.asDiagonal() * svd.matrixU().transpose();

    RigidTransform t;
    t.rotation = quat_from_matrix(rot);
    if (with_scale) {
        if (src_var <= 0.0) throw DomainError("kabsch: degenerate correspondence geometry");
        t.scale = sing.dot(d) / src_var;
        if (t.scale <= 0.0) throw DomainError("kabsch: nonpositive scale fit");
    }
    t.translation = dc - t.scale * (rot * sc);
    return t;
}

struct IcpResult {
    RigidTransform transform;
    Real rms = 0.0;
    std::vector<Real> rms_trace; // one entry per iteration, nonincreasing
    int iterations = 0;
};

/// Alternates nearest-neighbor correspondence with a full Kabsch refit of
/// the ORIGINAL source points, so each iteration's rms is a true alternating
/// minimization step (nonincreasing trace).
inline IcpResult icp_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                           int max_iters = 50, Real tol = 1e-10, bool with_scale = false,
                           const RigidTransform& init = RigidTransform{}) {
    if (src.size() < 3 || dst.size() < 3) throw DomainError("icp: needs at least 3 points");
    const SpatialHash dst_hash(dst);
    IcpResult res;
    res.transform = init;

    Real prev = std::numeric_limits<Real>::infinity();
    std::vector<Vec3> matched(src.size());
    for (int it = 0; it < max_iters; ++it) {
        std::vector<Vec3> moved(src.size());
        for (std::size_t i = 0; i < src.size(); ++i) moved[i] = res.transform.apply(src[i]);
        parallel_for(0, static_cast<std::int64_t>(src.size()), [&](std::int64_t lo, std::int64_t hi) {
            for (std::int64_t i = lo; i < hi; ++i)
                matched[i] = dst[dst_hash.nearest(moved[i]).first];
        });
        res.transform = kabsch(src, matched, with_scale);
        Real sq = 0.0;
        for (std::size_t i = 0; i < src.size(); ++i)
            sq += (res.transform.apply(src[i]) - matched[i]).squaredNorm();
        res.rms = std::sqrt(sq / static_cast<Real>(src.size()));
        res.rms_trace.push_back(res.rms);
        res.iterations = it + 1;
        if (prev - res.rms < tol) break;
        prev = res.rms;
    }
    return res;
}

/// The 24 proper rotations of the cube, as an ICP restart set.
inline std::vector<Quaternion> cube_rotations() {
    std::vector<Quaternion> out;
    int perm[3] = {0, 1, 2};
    std::sort(perm, perm + 3);
    do {
        for (int sx = -1; sx <= 1; sx += 2) {
            for (int sy = -1; sy <= 1; sy += 2) {
                for (int sz = -1; sz <= 1; sz += 2) {
                    Mat3 m = Mat3::Zero();
                    m(0, perm[0]) = sx;
                    m(1, perm[1]) = sy;
                    m(2, perm[2]) = sz;
                    if (m.determinant() > 0.0) out.push_back(quat_from_matrix(m));
                }
            }
        }
    } while (std::next_permutation(perm, perm + 3));
    return out;
}

/// Rotations aligning the principal axes of the two clouds, one per proper
/// sign flip of the eigenvector frame. For a rotated copy one of the four is
/// the exact answer; near-degenerate eigenvalues just make them uninformative
/// extra starts.
inline std::vector<Quaternion> principal_axis_inits(const std::vector<Vec3>& src,
                                                    const std::vector<Vec3>& dst) {
    const auto frame = [](const std::vector<Vec3>& pts) {
        Vec3 mean = Vec3::Zero();
        for (const Vec3& p : pts) mean += p;
        mean /= static_cast<Real>(pts.size());
        Mat3 cov = Mat3::Zero();
        for (const Vec3& p : pts) cov += (p - mean) * (p - mean).transpose();
        Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
        Mat3 v = es.eigenvectors();
        if (v.determinant() < 0.0) v.col(0) = -v.col(0);
        return v;
    };
    const Mat3 vs = frame(src), vd = frame(dst);
    std::vector<Quaternion> out;
    for (int sx = -1; sx <= 1; sx += 2)
        for (int sy = -1; sy <= 1; sy += 2) {
            const int sz = sx * sy; // keep the flip proper
            Mat3 s = Mat3::Zero();
            s(0, 0) = sx, s(1, 1) = sy, s(2, 2) = sz;
            out.push_back(quat_from_matrix(vd * s * vs.transpose()));
        }
    return out;
}

/// ICP from identity plus (optionally) restarts from all 24 cube rotations
/// and the four principal-axis alignments, keeping the lowest final rms. A
/// restart whose matches degenerate (all points snapping to a collinear
/// subset) is skipped; the identity run's errors still propagate.
inline IcpResult icp_align_best(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                                int max_iters = 50, Real tol = 1e-10, bool with_scale = false,
                                bool restarts = true) {
    IcpResult best = icp_align(src, dst, max_iters, tol, with_scale);
    if (!restarts) return best;
    std::vector<Quaternion> inits = cube_rotations();
    const std::vector<Quaternion> pca = principal_axis_inits(src, dst);
    inits.insert(inits.end(), pca.begin(), pca.end());
    for (const Quaternion& q : inits) {
        RigidTransform init;
        init.rotation = q;
        try {
            const IcpResult r = icp_align(src, dst, max_iters, tol, with_scale, init);
            if (r.rms < best.rms) best = r;
        } catch (const DomainError&) {
        }
    }
    return best;
}

} // namespace diffsplat

#endif // DIFFSPLAT_METRICS_HPP

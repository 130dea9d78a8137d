// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "diffsplat/grad.hpp"
#include "diffsplat/gradcheck.hpp"
#include "diffsplat/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace diffsplat;

namespace {

TransformedPoint iso_point(const Vec3& grid_pos, Real scale, Real sigma_cells) {
    TransformedPoint t;
    t.grid_pos = grid_pos;
    t.scale = scale;
    t.iso = true;
    t.iso_sigma_cells = sigma_cells;
    return t;
}

} // namespace

TEST_CASE("clip adjoint convention", "[grad]") {
    Volume raw(1, 1, 5);
    raw.data = {0.5, 1.0, 1.3, 0.0, -0.2};
    Volume cot(1, 1, 5);
    cot.data = {2.0, 2.0, 2.0, 2.0, 2.0};
    const Volume d = clip_adjoint(raw, cot);
    CHECK(d.data[0] == 2.0); // strictly inside: pass through
    CHECK(d.data[1] == 0.0); // exactly at the boundary: blocked
    CHECK(d.data[2] == 0.0); // saturated above
    CHECK(d.data[3] == 0.0); // exactly at zero
    CHECK(d.data[4] == 0.0); // below zero
}

TEST_CASE("termination adjoint closed forms", "[grad]") {
    // all-transparent ray, cotangent on the background cell: d_occ[u] = -1
    Volume occ(1, 1, 4);
    TerminationVolume cot(1, 1, 4);
    cot.at(0, 0, 4) = 1.0;
    const Volume d = vjp_ray_termination(occ, cot);
    for (int k = 0; k < 4; ++k) CHECK(d.at(0, 0, k) == -1.0);

    // occ = (0.5, 0.5), cotangent picking the first cell's r = o_first
    Volume occ2(1, 1, 2);
    occ2.data = {0.5, 0.5};
    TerminationVolume cot2(1, 1, 2);
    cot2.at(0, 0, 0) = 1.0;
    const Volume d2 = vjp_ray_termination(occ2, cot2);
    CHECK(d2.at(0, 0, 0) == 1.0);
    CHECK(d2.at(0, 0, 1) == 0.0);
}

TEST_CASE("termination adjoint matches finite differences", "[grad]") {
    Rng rng(3, Stream::Data);
    for (int trial = 0; trial < 10; ++trial) {
        const int d3 = 2 + static_cast<int>(rng.below(10));
        Volume occ(1, 2, d3);
        // keep occupancies away from 1 so (1 - occ) never underflows in FD
        for (Real& x : occ.data) x = 0.9 * rng.uniform();
        TerminationVolume cot(1, 2, d3);
        for (Real& x : cot.data) x = rng.uniform(-1.0, 1.0);

        const Volume analytic = vjp_ray_termination(occ, cot);
        auto f = [&](const std::vector<Real>& x) {
            Volume o = occ;
            o.data = x;
            const TerminationVolume t = ray_termination(o);
            Real acc = 0.0;
            for (std::size_t i = 0; i < t.data.size(); ++i) acc += t.data[i] * cot.data[i];
            return acc;
        };
        const FdReport rep = finite_diff_check(f, occ.data, analytic.data, 1e-6);
        CHECK(rep.max_rel_err <= 1e-5);
    }
}

TEST_CASE("termination adjoint survives near-opaque cells", "[grad]") {
    // leave-one-out fallback: occ = 1 exactly in the middle of a ray
    Volume occ(1, 1, 3);
    occ.data = {0.3, 1.0, 0.4};
    TerminationVolume cot(1, 1, 3);
    for (Real& x : cot.data) x = 1.0;
    const Volume d = vjp_ray_termination(occ, cot);
    for (Real x : d.data) CHECK(std::isfinite(x));
    // r = (0.3, 0.7, 0, 0); d r_total / d occ0 at the kink still finite:
    // moving occ0 shifts mass between r0 and r1 only, both with cotangent 1
    CHECK(d.at(0, 0, 0) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("splat adjoint: zero cotangent gives zero gradients", "[grad]") {
    GridSpec grid = GridSpec::cubic(8);
    std::vector<TransformedPoint> pts = {iso_point(Vec3(3.2, 4.7, 2.9), 0.5, 1.1),
                                         iso_point(Vec3(5.5, 2.2, 6.1), 0.3, 0.8)};
    Volume cot(8, 8, 8);
    const auto grads = vjp_splat_basic(pts, grid, cot);
    for (const SplatPointGrads& g : grads) {
        CHECK(g.d_scale == 0.0);
        CHECK(g.d_gpos.norm() == 0.0);
        CHECK(g.d_sigma_cells == 0.0);
    }
}

TEST_CASE("splat adjoint: position gradient vanishes at the point's own cell", "[grad]") {
    GridSpec grid = GridSpec::cubic(8);
    std::vector<TransformedPoint> pts = {iso_point(Vec3(4, 4, 4), 0.7, 1.0)};
    Volume cot(8, 8, 8);
    cot.at(4, 4, 4) = 1.0;
    const auto grads = vjp_splat_basic(pts, grid, cot);
    REQUIRE(grads.size() == 1);
    CHECK(grads[0].d_gpos.x() == 0.0);
    CHECK(grads[0].d_gpos.y() == 0.0);
    CHECK(grads[0].d_gpos.z() == 0.0);
    CHECK(grads[0].d_scale == Catch::Approx(1.0).margin(1e-15)); // exp(0)
    CHECK(grads[0].d_sigma_cells == 0.0);
}

TEST_CASE("splat adjoint matches finite differences away from clip kinks", "[grad]") {
    // a broad floor point lifts every pre-clip cell above 1e-3 so the sampled
    // scene satisfies the documented rejection band (no cell within 1e-3 of 0
    // or 1); the remaining points are free parameters for the check
    GridSpec grid = GridSpec::cubic(8);
    Rng rng(17, Stream::Data);
    const int n = 4;

    std::vector<TransformedPoint> pts;
    pts.push_back(iso_point(Vec3(3.5, 3.5, 3.5), 0.05, 30.0)); // floor
    for (int i = 0; i < n; ++i)
        pts.push_back(iso_point(Vec3(2.0 + 4.0 * rng.uniform(), 2.0 + 4.0 * rng.uniform(),
                                     2.0 + 4.0 * rng.uniform()),
                                0.1 + 0.15 * rng.uniform(), 0.9 + 0.6 * rng.uniform()));

    const Volume raw = splat_basic_raw(pts, grid);
    for (Real x : raw.data) {
        REQUIRE(x > 1e-3);
        REQUIRE(x < 1.0 - 1e-3);
    }

    Volume cot(8, 8, 8);
    for (Real& x : cot.data) x = rng.uniform(-1.0, 1.0);
    const auto grads = vjp_splat_basic(pts, grid, cot);

    // pack (position, scale, sigma) per point into one parameter vector
    std::vector<Real> x0, analytic;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (int a = 0; a < 3; ++a) {
            x0.push_back(pts[i].grid_pos[a]);
            analytic.push_back(grads[i].d_gpos[a]);
        }
        x0.push_back(pts[i].scale);
        analytic.push_back(grads[i].d_scale);
        x0.push_back(pts[i].iso_sigma_cells);
        analytic.push_back(grads[i].d_sigma_cells);
    }
    auto f = [&](const std::vector<Real>& x) {
        std::vector<TransformedPoint> p = pts;
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i].grid_pos = Vec3(x[5 * i], x[5 * i + 1], x[5 * i + 2]);
            p[i].scale = x[5 * i + 3];
            p[i].iso_sigma_cells = x[5 * i + 4];
        }
        const Volume v = splat_basic(p, grid);
        Real acc = 0.0;
        for (std::size_t c = 0; c < v.data.size(); ++c) acc += v.data[c] * cot.data[c];
        return acc;
    };
    const FdReport rep = finite_diff_check(f, x0, analytic);
    CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("full-covariance splat adjoint matches finite differences", "[grad]") {
    GridSpec grid = GridSpec::cubic(8);
    Rng rng(29, Stream::Data);
    TransformedPoint p;
    p.grid_pos = Vec3(3.4, 4.2, 3.8);
    p.scale = 0.4;
    p.iso = false;
    Mat3 a;
    for (int k = 0; k < 9; ++k) a(k / 3, k % 3) = rng.normal();
    p.cov_grid = a * a.transpose() + 1.5 * Mat3::Identity();

    Volume cot(8, 8, 8);
    for (Real& x : cot.data) x = rng.uniform(-1.0, 1.0);
    const auto grads = vjp_splat_points({p}, grid, cot);

    // d_cov_grid against finite differences over the 6 unique entries
    std::vector<Real> x0, analytic;
    for (int r = 0; r < 3; ++r)
        for (int c = r; c < 3; ++c) {
            x0.push_back(p.cov_grid(r, c));
            const Real sym = r == c ? grads[0].d_cov_grid(r, c)
                                    : grads[0].d_cov_grid(r, c) + grads[0].d_cov_grid(c, r);
            analytic.push_back(sym);
        }
    auto f = [&](const std::vector<Real>& x) {
        TransformedPoint q = p;
        int idx = 0;
        for (int r = 0; r < 3; ++r)
            for (int c = r; c < 3; ++c) {
                q.cov_grid(r, c) = x[idx];
                q.cov_grid(c, r) = x[idx];
                ++idx;
            }
        const Volume v = splat_basic_raw({q}, grid);
        Real acc = 0.0;
        for (std::size_t i = 0; i < v.data.size(); ++i) acc += v.data[i] * cot.data[i];
        return acc;
    };
    const FdReport rep = finite_diff_check(f, x0, analytic, 1e-5);
    CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("trilinear scatter adjoint matches finite differences", "[grad]") {
    GridSpec grid = GridSpec::cubic(6);
    Rng rng(31, Stream::Data);
    std::vector<Vec3> pos;
    std::vector<Real> amps;
    for (int i = 0; i < 5; ++i) {
        // keep fractional parts away from cell planes (trilinear kinks)
        pos.push_back(Vec3(1.2 + 3.5 * rng.uniform(), 1.2 + 3.5 * rng.uniform(),
                           1.2 + 3.5 * rng.uniform()));
        amps.push_back(0.2 + rng.uniform());
    }
    Volume cot(6, 6, 6);
    for (Real& x : cot.data) x = rng.uniform(-1.0, 1.0);

    std::vector<Real> d_amps(5, 0.0);
    std::vector<Vec3> d_gp(5, Vec3::Zero());
    vjp_trilinear_scatter(pos, amps, grid, cot, d_amps, d_gp);

    std::vector<Real> x0, analytic;
    for (int i = 0; i < 5; ++i) {
        for (int a = 0; a < 3; ++a) {
            x0.push_back(pos[i][a]);
            analytic.push_back(d_gp[i][a]);
        }
        x0.push_back(amps[i]);
        analytic.push_back(d_amps[i]);
    }
    auto f = [&](const std::vector<Real>& x) {
        std::vector<Vec3> p(5);
        std::vector<Real> s(5);
        for (int i = 0; i < 5; ++i) {
            p[i] = Vec3(x[4 * i], x[4 * i + 1], x[4 * i + 2]);
            s[i] = x[4 * i + 3];
        }
        const Volume v = trilinear_scatter(p, s, grid);
        Real acc = 0.0;
        for (std::size_t c = 0; c < v.data.size(); ++c) acc += v.data[c] * cot.data[c];
        return acc;
    };
    const FdReport rep = finite_diff_check(f, x0, analytic, 1e-5);
    CHECK(rep.max_rel_err <= 1e-5);
}

TEST_CASE("render adjoint: zero cotangent gives zero gradients", "[grad]") {
    PointCloud cloud;
    cloud.positions = {Vec3(0.1, -0.05, 0.0), Vec3(-0.1, 0.1, 0.05)};
    cloud.sizes = {SizeParams::isotropic(0.5, 0.05), SizeParams::isotropic(0.4, 0.06)};
    RenderSettings rs;
    const GridSpec grid = GridSpec::cubic(12, 1.0);
    const RenderCache rc = render_cached(cloud, Pose{}, CameraModel{}, grid, rs);
    Projection cot(12, 12, 1, Modality::Silhouette);
    const RenderGradients g = vjp_render(cloud, rc, cot);
    for (const Vec3& v : g.d_positions) CHECK(v.norm() == 0.0);
    for (Real s : g.d_scales) CHECK(s == 0.0);
    for (Real s : g.d_sigmas) CHECK(s == 0.0);
    CHECK(g.d_rotation.norm() == 0.0);
    CHECK(g.d_translation.norm() == 0.0);
}

TEST_CASE("render adjoint: lateral symmetry kills the lateral translation gradient",
          "[grad]") {
    // cloud mirror-symmetric in the image-column axis (grid axis 2 = world y
    // under the identity pose); a symmetric cotangent makes the y-translation
    // gradient cancel. Cell centers 0..15 are symmetric about grid coordinate
    // 7.5, which is world y = -1/32 on this grid, so the cloud mirrors about
    // that axis with dyadic offsets (exactly representable mirror pairs).
    const Real y0 = -0.03125;
    PointCloud cloud;
    cloud.positions = {Vec3(0.12, y0 + 0.25, -0.07), Vec3(0.12, y0 - 0.25, -0.07),
                       Vec3(-0.08, y0, 0.1)};
    cloud.sizes = {SizeParams::isotropic(0.3, 0.07), SizeParams::isotropic(0.3, 0.07),
                   SizeParams::isotropic(0.3, 0.07)};
    RenderSettings rs;
    const GridSpec grid = GridSpec::cubic(16, 1.0);
    const RenderCache rc = render_cached(cloud, Pose{}, CameraModel{}, grid, rs);
    Projection cot(16, 16, 1, Modality::Silhouette);
    for (Real& x : cot.data) x = 1.0;
    const RenderGradients g = vjp_render(cloud, rc, cot);
    CHECK(std::abs(g.d_translation.y()) <= 1e-9);
    // the depth axis is not symmetric, so its component is genuinely nonzero
    CHECK(std::abs(g.d_translation.z()) > 1e-9);
}

TEST_CASE("dropout-masked points get exactly zero gradients", "[grad]") {
    PointCloud cloud;
    Rng rng(43, Stream::Data);
    for (int i = 0; i < 6; ++i) {
        cloud.positions.push_back(Vec3(0.4 * (rng.uniform() - 0.5),
                                       0.4 * (rng.uniform() - 0.5),
                                       0.4 * (rng.uniform() - 0.5)));
        cloud.sizes.push_back(SizeParams::isotropic(0.3, 0.06));
    }
    std::vector<bool> mask = {true, false, true, false, true, true};
    RenderSettings rs;
    const GridSpec grid = GridSpec::cubic(12, 1.0);
    const RenderCache rc = render_cached(cloud, Pose{}, CameraModel{}, grid, rs, &mask);
    Projection cot(12, 12, 1, Modality::Silhouette);
    for (Real& x : cot.data) x = rng.uniform(-1.0, 1.0);
    const RenderGradients g = vjp_render(cloud, rc, cot);
    for (int i = 0; i < 6; ++i) {
        if (mask[i]) continue;
        CHECK(g.d_positions[i].norm() == 0.0);
        CHECK(g.d_scales[i] == 0.0);
        CHECK(g.d_sigmas[i] == 0.0);
    }
    // kept points match a render of the reduced cloud exactly
    PointCloud kept;
    for (int i = 0; i < 6; ++i)
        if (mask[i]) {
            kept.positions.push_back(cloud.positions[i]);
            kept.sizes.push_back(cloud.sizes[i]);
        }
    const RenderCache rck = render_cached(kept, Pose{}, CameraModel{}, grid, rs);
    const RenderGradients gk = vjp_render(kept, rck, cot);
    int j = 0;
    for (int i = 0; i < 6; ++i) {
        if (!mask[i]) continue;
        CHECK(g.d_positions[i] == gk.d_positions[j]);
        CHECK(g.d_scales[i] == gk.d_scales[j]);
        ++j;
    }
}

TEST_CASE("finite_diff_check harness self-test", "[grad]") {
    // linear function: central differences are exact up to roundoff
    std::vector<Real> a = {2.0, -3.0, 0.5};
    auto lin = [&](const std::vector<Real>& x) {
        return a[0] * x[0] + a[1] * x[1] + a[2] * x[2];
    };
    const FdReport lr = finite_diff_check(lin, {0.3, 0.7, -0.2}, a);
    CHECK(lr.max_rel_err <= 1e-10);

    // quadratic at x = 1 with h = 1e-5: derivative 2 within 1e-9
    auto quad = [](const std::vector<Real>& x) { return x[0] * x[0]; };
    const FdReport qr = finite_diff_check(quad, {1.0}, {2.0}, 1e-5);
    CHECK(qr.max_rel_err <= 1e-9);
    CHECK(qr.worst_analytic == 2.0);

    CHECK_THROWS_AS(finite_diff_check(quad, {1.0}, {2.0, 1.0}), DomainError);
}

TEST_CASE("every parameter group passes the pipeline gradient check", "[grad]") {
    // 3 instances per group here; the acceptance gate runs 20
    for (GradGroup group : all_grad_groups()) {
        DYNAMIC_SECTION("group " << grad_group_name(group)) {
            Rng rng(1234, Stream::Data);
            for (int variant = 0; variant < 3; ++variant) {
                const GradCheckScene sc = make_gradcheck_scene(group, rng, variant);
                const FdReport rep = gradcheck_group(sc, group);
                INFO("variant " << variant << " worst coord " << rep.worst_coordinate
                                << " analytic " << rep.worst_analytic << " numeric "
                                << rep.worst_numeric);
                CHECK(rep.max_rel_err <= 1e-4);
            }
        }
    }
}

TEST_CASE("color render gradients match finite differences", "[grad]") {
    // colors flow through the normalized signal; checked per channel
    PointCloud cloud;
    Rng rng(57, Stream::Data);
    for (int i = 0; i < 4; ++i) {
        cloud.positions.push_back(Vec3(0.3 * (rng.uniform() - 0.5),
                                       0.3 * (rng.uniform() - 0.5),
                                       0.3 * (rng.uniform() - 0.5)));
        cloud.sizes.push_back(SizeParams::isotropic(0.3 + 0.3 * rng.uniform(), 0.08));
        cloud.colors.push_back(Vec3(0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform(),
                                    0.2 + 0.6 * rng.uniform()));
    }
    RenderSettings rs;
    rs.modality = Modality::Color;
    const GridSpec grid = GridSpec::cubic(12, 1.0);
    const RenderCache rc = render_cached(cloud, Pose{}, CameraModel{}, grid, rs);
    Projection cot(12, 12, 3, Modality::Color);
    for (Real& x : cot.data) x = rng.uniform(-1.0, 1.0);
    const RenderGradients g = vjp_render(cloud, rc, cot);

    std::vector<Real> x0, analytic;
    for (int i = 0; i < 4; ++i)
        for (int c = 0; c < 3; ++c) {
            x0.push_back(cloud.colors[i][c]);
            analytic.push_back(g.d_colors[i][c]);
        }
    auto f = [&](const std::vector<Real>& x) {
        PointCloud cl = cloud;
        for (int i = 0; i < 4; ++i)
            for (int c = 0; c < 3; ++c) cl.colors[i][c] = x[3 * i + c];
        const Projection img = render(cl, Pose{}, CameraModel{}, grid, rs);
        Real acc = 0.0;
        for (std::size_t p = 0; p < img.data.size(); ++p) acc += img.data[p] * cot.data[p];
        return acc;
    };
    const FdReport rep = finite_diff_check(f, x0, analytic);
    CHECK(rep.max_rel_err <= 1e-4);
}

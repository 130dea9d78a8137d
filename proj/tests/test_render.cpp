// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "diffsplat/parallel.hpp"
#include "diffsplat/render.hpp"
#include "diffsplat/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

using namespace diffsplat;

namespace {

Volume column_volume(const std::vector<Real>& occ) {
    Volume v(1, 1, static_cast<int>(occ.size()));
    v.data = occ;
    return v;
}

PointCloud single_point_cloud(const Vec3& pos, Real scale, Real sigma,
                              const Vec3* color = nullptr) {
    PointCloud c;
    c.positions = {pos};
    c.sizes = {SizeParams::isotropic(scale, sigma)};
    if (color) c.colors = {*color};
    return c;
}

} // namespace

TEST_CASE("ray_termination closed-form columns", "[render]") {
    // empty ray terminates at the background
    TerminationVolume t0 = ray_termination(column_volume({0.0, 0.0}));
    CHECK(t0.at(0, 0, 0) == 0.0);
    CHECK(t0.at(0, 0, 1) == 0.0);
    CHECK(t0.at(0, 0, 2) == 1.0);

    // opaque first cell absorbs everything
    TerminationVolume t1 = ray_termination(column_volume({1.0, 0.5}));
    CHECK(t1.at(0, 0, 0) == 1.0);
    CHECK(t1.at(0, 0, 1) == 0.0);
    CHECK(t1.at(0, 0, 2) == 0.0);

    // half-transparent pair
    TerminationVolume t2 = ray_termination(column_volume({0.5, 0.5}));
    CHECK(t2.at(0, 0, 0) == 0.5);
    CHECK(t2.at(0, 0, 1) == 0.25);
    CHECK(t2.at(0, 0, 2) == 0.25);
}

TEST_CASE("ray termination probabilities sum to one per ray", "[render]") {
    Rng rng(42, Stream::Data);
    for (int trial = 0; trial < 100; ++trial) {
        const int d1 = 1 + static_cast<int>(rng.below(6));
        const int d2 = 1 + static_cast<int>(rng.below(6));
        const int d3 = 1 + static_cast<int>(rng.below(24));
        Volume occ(d1, d2, d3);
        for (Real& x : occ.data) x = rng.uniform();
        const TerminationVolume term = ray_termination(occ);
        for (int k1 = 0; k1 < d1; ++k1)
            for (int k2 = 0; k2 < d2; ++k2) {
                Real sum = 0.0;
                for (int k3 = 0; k3 <= d3; ++k3) sum += term.at(k1, k2, k3);
                CHECK(std::abs(sum - 1.0) <= 1e-6);
            }
    }
}

TEST_CASE("termination matches a per-ray prefix-product oracle", "[render]") {
    Rng rng(7, Stream::Data);
    Volume occ(3, 4, 9);
    for (Real& x : occ.data) x = rng.uniform();
    const TerminationVolume term = ray_termination(occ);
    for (int k1 = 0; k1 < 3; ++k1)
        for (int k2 = 0; k2 < 4; ++k2) {
            Real survive = 1.0;
            for (int k3 = 0; k3 < 9; ++k3) {
                CHECK(term.at(k1, k2, k3) == Catch::Approx(occ.at(k1, k2, k3) * survive)
                                                 .margin(1e-15));
                survive *= 1.0 - occ.at(k1, k2, k3);
            }
            CHECK(term.at(k1, k2, 9) == Catch::Approx(survive).margin(1e-15));
        }
}

TEST_CASE("projection of closed-form terminations", "[render]") {
    // all-background ray: silhouette 0
    const TerminationVolume bg = ray_termination(column_volume({0.0, 0.0}));
    const Projection sil = project(bg, Modality::Silhouette);
    CHECK(sil.at(0, 0) == 0.0);

    // r = (1,0,0) with D3 = 2: depth = 1/2 (1-based index over D3)
    const TerminationVolume front = ray_termination(column_volume({1.0, 0.0}));
    const Projection depth = project(front, Modality::Depth);
    CHECK(depth.at(0, 0) == Catch::Approx(0.5).margin(1e-15));

    // all-background depth = (D3+1)/D3
    const Projection depth_bg = project(bg, Modality::Depth);
    CHECK(depth_bg.at(0, 0) == Catch::Approx(1.5).margin(1e-15));

    // depth of a single opaque cell at k3 (0-based) is (k3+1)/D3
    Volume occ(1, 1, 4);
    occ.at(0, 0, 2) = 1.0;
    const Projection d3 = project(ray_termination(occ), Modality::Depth);
    CHECK(d3.at(0, 0) == Catch::Approx(3.0 / 4.0).margin(1e-15));
}

TEST_CASE("color projection composes signal with termination", "[render]") {
    // saturated red cell in front of an empty column
    Volume occ(1, 1, 2);
    occ.at(0, 0, 0) = 1.0;
    SignalVolume sig(1, 1, 2, 3);
    sig.at(0, 0, 0, 0) = 1.0; // red
    const Projection img = project(ray_termination(occ), Modality::Color, &sig);
    CHECK(img.at(0, 0, 0) == 1.0);
    CHECK(img.at(0, 0, 1) == 0.0);
    CHECK(img.at(0, 0, 2) == 0.0);

    // empty column: background color passes through
    Volume empty(1, 1, 2);
    SignalVolume zsig(1, 1, 2, 3);
    const Projection bgimg =
        project(ray_termination(empty), Modality::Color, &zsig, Vec3(0.2, 0.4, 0.6));
    CHECK(bgimg.at(0, 0, 0) == Catch::Approx(0.2));
    CHECK(bgimg.at(0, 0, 1) == Catch::Approx(0.4));
    CHECK(bgimg.at(0, 0, 2) == Catch::Approx(0.6));

    CHECK_THROWS_AS(project(ray_termination(empty), Modality::Color, nullptr), DomainError);
}

TEST_CASE("signal_volume single point carries its own signal", "[render]") {
    GridSpec grid = GridSpec::cubic(8);
    TransformedPoint p;
    p.grid_pos = Vec3(4, 4, 4);
    p.scale = 0.8;
    p.iso = true;
    p.iso_sigma_cells = 1.0;
    const Vec3 y(0.3, 0.6, 0.9);
    const SignalVolume sig = signal_volume({p}, {y}, grid);
    // every cell with non-eps density carries exactly y (the ratio cancels)
    const Volume den = splat_basic_raw({p}, grid);
    int checked = 0;
    for (int k1 = 0; k1 < 8; ++k1)
        for (int k2 = 0; k2 < 8; ++k2)
            for (int k3 = 0; k3 < 8; ++k3) {
                if (den.at(k1, k2, k3) < kSignalEps) {
                    for (int c = 0; c < 3; ++c) CHECK(sig.at(k1, k2, k3, c) == 0.0);
                    continue;
                }
                ++checked;
                for (int c = 0; c < 3; ++c)
                    CHECK(sig.at(k1, k2, k3, c) == Catch::Approx(y[c]).epsilon(1e-12));
            }
    CHECK(checked > 0);
}

TEST_CASE("signal_volume averages two symmetric points at the midpoint", "[render]") {
    GridSpec grid = GridSpec::cubic(9);
    TransformedPoint a, b;
    a.grid_pos = Vec3(4, 4, 2);
    b.grid_pos = Vec3(4, 4, 6);
    a.scale = b.scale = 0.5;
    a.iso = b.iso = true;
    a.iso_sigma_cells = b.iso_sigma_cells = 1.5;
    const Vec3 y1(1.0, 0.0, 0.2), y2(0.0, 1.0, 0.8);
    const SignalVolume sig = signal_volume({a, b}, {y1, y2}, grid);
    for (int c = 0; c < 3; ++c)
        CHECK(sig.at(4, 4, 4, c) == Catch::Approx(0.5 * (y1[c] + y2[c])).epsilon(1e-12));
}

TEST_CASE("signal_volume matches a scalar reference", "[render]") {
    GridSpec grid = GridSpec::cubic(6);
    Rng rng(19, Stream::Data);
    std::vector<TransformedPoint> pts;
    std::vector<Vec3> vals;
    for (int i = 0; i < 7; ++i) {
        TransformedPoint p;
        p.grid_pos = Vec3(6.0 * rng.uniform(), 6.0 * rng.uniform(), 6.0 * rng.uniform());
        p.scale = 0.2 + 0.6 * rng.uniform();
        p.iso = true;
        p.iso_sigma_cells = 0.6 + 0.8 * rng.uniform();
        pts.push_back(p);
        vals.push_back(Vec3(rng.uniform(), rng.uniform(), rng.uniform()));
    }
    const SignalVolume sig = signal_volume(pts, vals, grid);
    for (int k1 = 0; k1 < 6; ++k1)
        for (int k2 = 0; k2 < 6; ++k2)
            for (int k3 = 0; k3 < 6; ++k3) {
                Real den = 0.0;
                Vec3 num = Vec3::Zero();
                for (std::size_t i = 0; i < pts.size(); ++i) {
                    const Vec3 d(k1 - pts[i].grid_pos.x(), k2 - pts[i].grid_pos.y(),
                                 k3 - pts[i].grid_pos.z());
                    const Real s2 = pts[i].iso_sigma_cells * pts[i].iso_sigma_cells;
                    const Real f = pts[i].scale * std::exp(-0.5 * d.squaredNorm() / s2);
                    den += f;
                    num += f * vals[i];
                }
                const Vec3 want = den < kSignalEps ? Vec3::Zero() : Vec3(num / den);
                for (int c = 0; c < 3; ++c)
                    CHECK(sig.at(k1, k2, k3, c) == Catch::Approx(want[c]).margin(1e-10));
            }
}

TEST_CASE("signal values stay within the contributing signal range", "[render]") {
    GridSpec grid = GridSpec::cubic(6);
    Rng rng(23, Stream::Data);
    std::vector<TransformedPoint> pts;
    std::vector<Vec3> vals;
    Real lo = 1.0, hi = 0.0;
    for (int i = 0; i < 5; ++i) {
        TransformedPoint p;
        p.grid_pos = Vec3(6.0 * rng.uniform(), 6.0 * rng.uniform(), 6.0 * rng.uniform());
        p.scale = 0.5;
        p.iso = true;
        p.iso_sigma_cells = 1.0;
        pts.push_back(p);
        const Real v = rng.uniform();
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        vals.push_back(Vec3(v, v, v));
    }
    const SignalVolume sig = signal_volume(pts, vals, grid);
    for (int k1 = 0; k1 < 6; ++k1)
        for (int k2 = 0; k2 < 6; ++k2)
            for (int k3 = 0; k3 < 6; ++k3) {
                const Real v = sig.at(k1, k2, k3, 0);
                if (v == 0.0) continue; // eps-guarded empty space
                CHECK(v >= lo - 1e-12);
                CHECK(v <= hi + 1e-12);
            }
}

TEST_CASE("render of an empty cloud is a black silhouette", "[render]") {
    PointCloud empty;
    RenderSettings rs;
    const Projection img = render(empty, Pose{}, CameraModel{}, GridSpec::cubic(8), rs);
    CHECK(img.rows == 8);
    CHECK(img.cols == 8);
    for (Real x : img.data) CHECK(x == 0.0);

    rs.modality = Modality::Depth;
    CHECK_THROWS_AS(render(empty, Pose{}, CameraModel{}, GridSpec::cubic(8), rs), DomainError);
}

TEST_CASE("render of a centered opaque point peaks at the image center", "[render]") {
    RenderSettings rs;
    const GridSpec grid = GridSpec::cubic(16, 1.0);
    const PointCloud cloud = single_point_cloud(Vec3::Zero(), 1.0, 0.05);
    const Projection img = render(cloud, Pose{}, CameraModel{}, grid, rs);
    Real peak = 0.0;
    int pr = -1, pc = -1;
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            if (img.at(r, c) > peak) {
                peak = img.at(r, c);
                pr = r;
                pc = c;
            }
    CHECK(peak == Catch::Approx(1.0).epsilon(1e-6));
    CHECK(pr == 8);
    CHECK(pc == 8);
    // compact bright region: faraway pixels are dark
    CHECK(img.at(0, 0) < 1e-6);
    CHECK(img.at(15, 15) < 1e-6);
}

TEST_CASE("silhouette values stay in the unit interval", "[render]") {
    Rng rng(31, Stream::Data);
    RenderSettings rs;
    const GridSpec grid = GridSpec::cubic(12, 1.0);
    PointCloud cloud;
    for (int i = 0; i < 20; ++i) {
        cloud.positions.push_back(Vec3(0.8 * (rng.uniform() - 0.5),
                                       0.8 * (rng.uniform() - 0.5),
                                       0.8 * (rng.uniform() - 0.5)));
        cloud.sizes.push_back(SizeParams::isotropic(0.5 + rng.uniform(), 0.08));
    }
    const Projection img = render(cloud, Pose{}, CameraModel{}, grid, rs);
    for (Real x : img.data) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
    }
}

TEST_CASE("basic and fast renders agree within the splat tolerance", "[render]") {
    Rng rng(47, Stream::Data);
    const GridSpec grid = GridSpec::cubic(32, 1.0);
    PointCloud cloud;
    const Real sigma_world = 3.0 / grid.grid_scale().x(); // 3 cells
    for (int i = 0; i < 8; ++i) {
        cloud.positions.push_back(Vec3(0.3 * (rng.uniform() - 0.5),
                                       0.3 * (rng.uniform() - 0.5),
                                       0.3 * (rng.uniform() - 0.5)));
        cloud.sizes.push_back(SizeParams::isotropic(0.02 + 0.04 * rng.uniform(), sigma_world));
    }
    const Pose pose = orbit_pose(33.0, 12.0, 2.0, 0.0);
    RenderSettings rs;
    rs.path = SplatPath::Basic;
    const Projection basic = render(cloud, pose, CameraModel{}, grid, rs);
    rs.path = SplatPath::Fast;
    const Projection fast = render(cloud, pose, CameraModel{}, grid, rs);
    REQUIRE(basic.same_shape(fast));
    // the splat discrepancy is <= 5e-3 per cell; a ray of D3 cells can
    // accumulate at most a modest multiple of that
    Real worst = 0.0;
    for (std::size_t i = 0; i < basic.data.size(); ++i)
        worst = std::max(worst, std::abs(basic.data[i] - fast.data[i]));
    CHECK(worst <= 5e-2);
}

TEST_CASE("fast path rejects heterogeneous sigma and anisotropy", "[render]") {
    RenderSettings rs;
    rs.path = SplatPath::Fast;
    PointCloud cloud;
    cloud.positions = {Vec3::Zero(), Vec3(0.1, 0, 0)};
    cloud.sizes = {SizeParams::isotropic(1.0, 0.05), SizeParams::isotropic(1.0, 0.07)};
    CHECK_THROWS_WITH(render(cloud, Pose{}, CameraModel{}, GridSpec::cubic(8), rs),
                      "fast path requires shared sigma");

    cloud.sizes[1] = SizeParams::full_cov(1.0, Vec3(1e-3, 1e-3, 1e-3), Quaternion::identity());
    CHECK_THROWS_AS(render(cloud, Pose{}, CameraModel{}, GridSpec::cubic(8), rs), DomainError);

    // non-uniform grid scale cannot host one shared cell-space kernel
    cloud.sizes[1] = cloud.sizes[0];
    GridSpec aniso{8, 8, 16, Vec3(1.0, 1.0, 1.0)};
    CHECK_THROWS_AS(render(cloud, Pose{}, CameraModel{}, aniso, rs), DomainError);
}

TEST_CASE("occlusion: an opaque near cell hides everything behind it", "[render]") {
    // permuting occupancies behind an occ = 1 cell never changes the pixel
    Volume a(1, 1, 4), b(1, 1, 4);
    a.data = {1.0, 0.3, 0.9, 0.1};
    b.data = {1.0, 0.9, 0.1, 0.3};
    const Projection da = project(ray_termination(a), Modality::Depth);
    const Projection db = project(ray_termination(b), Modality::Depth);
    CHECK(da.at(0, 0) == db.at(0, 0));
    const Projection sa = project(ray_termination(a), Modality::Silhouette);
    const Projection sb = project(ray_termination(b), Modality::Silhouette);
    CHECK(sa.at(0, 0) == sb.at(0, 0));
}

TEST_CASE("silhouette is monotone in occupancy", "[render]") {
    Rng rng(59, Stream::Data);
    for (int trial = 0; trial < 20; ++trial) {
        Volume occ(1, 1, 6);
        for (Real& x : occ.data) x = rng.uniform();
        const Projection base = project(ray_termination(occ), Modality::Silhouette);
        Volume bumped = occ;
        const int k = static_cast<int>(rng.below(6));
        bumped.at(0, 0, k) = std::min(1.0, bumped.at(0, 0, k) + 0.2);
        const Projection more = project(ray_termination(bumped), Modality::Silhouette);
        CHECK(more.at(0, 0) >= base.at(0, 0) - 1e-15);
    }
}

TEST_CASE("dropout mask removes exactly the masked points", "[render]") {
    const GridSpec grid = GridSpec::cubic(12, 1.0);
    PointCloud cloud;
    cloud.positions = {Vec3(-0.2, 0, 0), Vec3(0.2, 0, 0)};
    cloud.sizes = {SizeParams::isotropic(1.0, 0.04), SizeParams::isotropic(1.0, 0.04)};
    RenderSettings rs;
    std::vector<bool> keep_first = {true, false};
    const Projection masked = render(cloud, Pose{}, CameraModel{}, grid, rs, &keep_first);
    PointCloud only_first;
    only_first.positions = {cloud.positions[0]};
    only_first.sizes = {cloud.sizes[0]};
    const Projection alone = render(only_first, Pose{}, CameraModel{}, grid, rs);
    REQUIRE(masked.same_shape(alone));
    for (std::size_t i = 0; i < masked.data.size(); ++i)
        CHECK(masked.data[i] == alone.data[i]);

    std::vector<bool> bad = {true};
    CHECK_THROWS_AS(render(cloud, Pose{}, CameraModel{}, grid, rs, &bad), DomainError);
}

TEST_CASE("render is byte-identical across thread counts", "[render]") {
    Rng rng(61, Stream::Data);
    PointCloud cloud;
    for (int i = 0; i < 30; ++i) {
        cloud.positions.push_back(Vec3(0.6 * (rng.uniform() - 0.5),
                                       0.6 * (rng.uniform() - 0.5),
                                       0.6 * (rng.uniform() - 0.5)));
        cloud.sizes.push_back(SizeParams::isotropic(0.8, 0.05));
        cloud.colors.push_back(Vec3(rng.uniform(), rng.uniform(), rng.uniform()));
    }
    const GridSpec grid = GridSpec::cubic(24, 1.0);
    const Pose pose = orbit_pose(120.0, 25.0, 2.0, 0.0);
    for (Modality m : {Modality::Silhouette, Modality::Depth, Modality::Color}) {
        RenderSettings rs;
        rs.modality = m;
        rs.path = SplatPath::Fast;
        set_thread_count(1);
        const Projection serial = render(cloud, pose, CameraModel{}, grid, rs);
        set_thread_count(4);
        const Projection threaded = render(cloud, pose, CameraModel{}, grid, rs);
        set_thread_count(1);
        REQUIRE(serial.data.size() == threaded.data.size());
        for (std::size_t i = 0; i < serial.data.size(); ++i)
            CHECK(serial.data[i] == threaded.data[i]);
    }
}

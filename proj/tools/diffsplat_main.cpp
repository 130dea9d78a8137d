// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// diffsplat command line: render | synth | fit | eval | align | gradcheck |
// bench. Exit codes: 0 success, 1 domain/input error, 2 usage error.

#include "diffsplat/diffsplat.hpp"
#include "diffsplat/gradcheck.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace diffsplat;
using nlohmann::json;

namespace {

struct Common {
    int threads = 0;
    bool deterministic = false;

    void apply() const {
        if (deterministic) set_thread_count(1);
        else if (threads > 0) set_thread_count(threads);
    }
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--threads", c.threads, "Worker thread count (default: all cores)");
    sub->add_flag("--deterministic", c.deterministic,
                  "Single-threaded, bit-reproducible execution");
}

Modality parse_modality(const std::string& s) {
    if (s == "sil") return Modality::Silhouette;
    if (s == "depth") return Modality::Depth;
    if (s == "color") return Modality::Color;
    throw DomainError("unknown modality '" + s + "' (expected sil|depth|color)");
}

SplatPath parse_path(const std::string& s) {
    if (s == "basic") return SplatPath::Basic;
    if (s == "fast") return SplatPath::Fast;
    throw DomainError("unknown path '" + s + "' (expected basic|fast)");
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_image(const std::string& path, const Projection& img) {
    if (ends_with(path, ".png")) io::write_png(path, img);
    else if (ends_with(path, ".pfm")) io::write_pfm(path, img);
    else throw DomainError("unknown image extension (use .png or .pfm): " + path);
}

Projection read_image(const std::string& path) {
    if (ends_with(path, ".png")) return io::read_png(path);
    if (ends_with(path, ".pfm")) return io::read_pfm(path);
    throw DomainError("unknown image extension (use .png or .pfm): " + path);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

struct RenderArgs {
    Common common;
    std::string cloud, camera, out;
    int grid = 64;
    double extent = 1.0;
    std::string modality = "sil";
    std::string path = "fast";
};

int run_render(const RenderArgs& a) {
    a.common.apply();
    const PointCloud cloud = io::read_ply(a.cloud);
    const auto [pose, cam] = io::read_camera_json(a.camera);

    RenderSettings rs;
    rs.modality = parse_modality(a.modality);
    rs.path = parse_path(a.path);
    const GridSpec grid = GridSpec::cubic(a.grid, a.extent);

    const auto t0 = std::chrono::steady_clock::now();
    const Projection img = render(cloud, pose, cam, grid, rs);
    std::fprintf(stderr, "render: %zu points, %dx%dx%d grid, path=%s: %.3f ms\n", cloud.size(),
                 grid.d1, grid.d2, grid.d3, a.path.c_str(), 1e3 * seconds_since(t0));
    write_image(a.out, img);
    return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
    Common common;
    std::string cloud, out;
    int views = 8;
    std::uint64_t seed = 0;
    std::string elev_range = "-20,40";
    std::string azim_range = "0,360";
    int grid = 64;
    double extent = 1.0;
    std::string modality = "sil";
    std::string path = "fast";
    std::string cam_kind = "ortho";
    double focal = 1.875, near = 1.0, far = 3.0;
    double dist = 2.0;
    std::string format = "pfm";
};

std::pair<double, double> parse_range(const std::string& s, const char* what) {
    const auto comma = s.find(',');
    if (comma == std::string::npos)
        throw DomainError(std::string(what) + " must be 'lo,hi', got '" + s + "'");
    try {
        const double lo = std::stod(s.substr(0, comma));
        const double hi = std::stod(s.substr(comma + 1));
        if (hi < lo) throw DomainError(std::string(what) + ": hi < lo in '" + s + "'");
        return {lo, hi};
    } catch (const std::invalid_argument&) {
        throw DomainError(std::string(what) + " must be numeric 'lo,hi', got '" + s + "'");
    }
}

int run_synth(const SynthArgs& a) {
    a.common.apply();
    if (a.views < 1) throw DomainError("synth: --views must be >= 1");
    const PointCloud cloud = io::read_ply(a.cloud);
    const auto [elo, ehi] = parse_range(a.elev_range, "--elev-range");
    const auto [alo, ahi] = parse_range(a.azim_range, "--azim-range");

    CameraModel cam;
    if (a.cam_kind == "persp") cam.kind = CameraKind::Perspective;
    else if (a.cam_kind != "ortho")
        throw DomainError("unknown camera kind '" + a.cam_kind + "' (expected ortho|persp)");
    cam.focal = a.focal;
    cam.near = a.near;
    cam.far = a.far;

    RenderSettings rs;
    rs.modality = parse_modality(a.modality);
    rs.path = parse_path(a.path);
    const GridSpec grid = GridSpec::cubic(a.grid, a.extent);
    const Real center_depth = cam.kind == CameraKind::Perspective ? a.dist : 0.0;

    fs::create_directories(a.out);
    Rng rng(a.seed, Stream::Pose);
    json manifest;
    manifest["format_version"] = 1;
    manifest["views"] = a.views;
    manifest["modality"] = a.modality;
    manifest["seed"] = a.seed;
    manifest["grid"] = a.grid;
    manifest["extent"] = a.extent;
    manifest["distance"] = a.dist;

    for (int v = 0; v < a.views; ++v) {
        const Real azim = alo + (ahi - alo) * rng.uniform();
        const Real elev = elo + (ehi - elo) * rng.uniform();
        const Pose pose = orbit_pose(azim, elev, a.dist, center_depth);
        const Projection img = render(cloud, pose, cam, grid, rs);

        char stem[32];
        std::snprintf(stem, sizeof(stem), "view_%03d", v);
        const std::string base = (fs::path(a.out) / stem).string();
        write_image(base + "." + a.format, img);
        io::write_camera_json(base + ".json", pose, cam);
        std::fprintf(stderr, "synth: %s azim=%.2f elev=%.2f\n", stem, azim, elev);
    }
    std::ofstream mf(fs::path(a.out) / "synth.json", std::ios::binary);
    mf << manifest.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitArgs {
    Common common;
    std::string views, config, out;
    std::int64_t seed_override = -1;
};

int run_fit(const FitArgs& a) {
    a.common.apply();

    FitConfig cfg = read_fit_config(a.config);
    if (a.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed_override);

    // optional keys beyond the core config schema
    json extra;
    {
        std::ifstream is(a.config);
        is >> extra;
    }
    std::string modality_str;
    if (extra.contains("modality")) modality_str = extra["modality"].get<std::string>();
    int grid_depth = extra.value("grid_depth", 0);
    const double extent = extra.value("extent", 1.0);

    // collect views
    std::vector<std::string> stems;
    for (const auto& entry : fs::directory_iterator(a.views)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("view_", 0) == 0 && ends_with(name, ".json"))
            stems.push_back((entry.path().parent_path() / name.substr(0, name.size() - 5)).string());
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw DomainError("fit: no view_*.json files in " + a.views);

    if (modality_str.empty()) {
        const fs::path mf = fs::path(a.views) / "synth.json";
        if (fs::exists(mf)) {
            std::ifstream is(mf);
            json m;
            is >> m;
            if (m.contains("modality")) modality_str = m["modality"].get<std::string>();
        }
    }

    ViewSet vs;
    bool first = true;
    for (const std::string& stem : stems) {
        const auto [pose, cam] = io::read_camera_json(stem + ".json");
        View view;
        if (fs::exists(stem + ".pfm")) view.target = io::read_pfm(stem + ".pfm");
        else if (fs::exists(stem + ".png")) view.target = io::read_png(stem + ".png");
        else throw DomainError("fit: no image (.pfm/.png) next to " + stem + ".json");
        view.modality = !modality_str.empty()
                            ? parse_modality(modality_str)
                            : (view.target.channels == 3 ? Modality::Color : Modality::Silhouette);
        view.target.modality = view.modality;
        view.has_pose = true;
        view.pose = pose;
        if (first) {
            vs.cam = cam;
            first = false;
        } else if (cam.kind != vs.cam.kind || cam.focal != vs.cam.focal ||
                   cam.near != vs.cam.near || cam.far != vs.cam.far) {
            throw DomainError("fit: views disagree on the camera model");
        }
        vs.views.push_back(std::move(view));
    }

    vs.grid.d1 = vs.views.front().target.rows;
    vs.grid.d2 = vs.views.front().target.cols;
    vs.grid.d3 = grid_depth > 0 ? grid_depth : vs.views.front().target.rows;
    vs.grid.extent = Vec3(extent, extent, extent);

    fs::create_directories(a.out);
    cfg.trace_path = (fs::path(a.out) / "trace.csv").string();
    if (!cfg.supervised) cfg.selections_path = (fs::path(a.out) / "selections.csv").string();
    cfg.dump_prefix = (fs::path(a.out) / "dump").string();

    if (extra.contains("views_per_step")) cfg.views_per_step = extra["views_per_step"].get<int>();
    if (extra.contains("learn_sizes")) cfg.learn_sizes = extra["learn_sizes"].get<bool>();
    if (extra.contains("size_kind")) {
        const std::string k = extra["size_kind"].get<std::string>();
        if (k == "iso") cfg.size_kind = SizeKind::Isotropic;
        else if (k == "fullcov") cfg.size_kind = SizeKind::FullCov;
        else throw DomainError("fit config: size_kind must be iso|fullcov");
    }
    if (extra.contains("distill_weight")) cfg.distill_weight = extra["distill_weight"].get<Real>();
    if (extra.contains("canonicalize_teacher_sign"))
        cfg.canonicalize_teacher_sign = extra["canonicalize_teacher_sign"].get<bool>();
    if (extra.contains("candidate_jitter_deg"))
        cfg.candidate_jitter_deg = extra["candidate_jitter_deg"].get<Real>();
    if (extra.contains("orbit_distance")) cfg.orbit_distance = extra["orbit_distance"].get<Real>();

    const auto t0 = std::chrono::steady_clock::now();
    FitResult res;
    try {
        res = fit_views(vs, cfg);
    } catch (const DomainError& e) {
        std::fprintf(stderr, "fit: %s (state dump at %s_*)\n", e.what(), cfg.dump_prefix.c_str());
        throw;
    }
    std::fprintf(stderr, "fit: %d steps in %.1f s, final loss %.6f\n", res.steps_run,
                 seconds_since(t0), res.final_loss);

    io::write_ply((fs::path(a.out) / "cloud.ply").string(), res.cloud);
    for (std::size_t v = 0; v < vs.views.size(); ++v) {
        char name[32];
        if (!cfg.supervised) {
            std::snprintf(name, sizeof(name), "pose_%03zu.json", v);
            io::write_camera_json((fs::path(a.out) / name).string(), res.best_poses[v], vs.cam);
            std::snprintf(name, sizeof(name), "student_%03zu.json", v);
            io::write_camera_json((fs::path(a.out) / name).string(), res.students[v], vs.cam);
        }
    }
    json summary;
    summary["format_version"] = 1;
    summary["steps"] = res.steps_run;
    summary["final_loss"] = res.final_loss;
    summary["supervised"] = cfg.supervised;
    if (!cfg.supervised) summary["selected"] = res.selected;
    std::ofstream os(fs::path(a.out) / "result.json", std::ios::binary);
    os << summary.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
    Common common;
    std::string pred, gt, out;
    std::string pred_poses, gt_poses;
};

std::vector<Quaternion> load_pose_rotations(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (ends_with(entry.path().filename().string(), ".json") &&
            entry.path().filename().string() != "synth.json" &&
            entry.path().filename().string() != "result.json")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    std::vector<Quaternion> out;
    for (const std::string& f : files) out.push_back(io::read_camera_json(f).first.rotation);
    return out;
}

int run_eval(const EvalArgs& a) {
    a.common.apply();
    const PointCloud pred = io::read_ply(a.pred);
    const PointCloud gt = io::read_ply(a.gt);
    const ChamferReport ch = chamfer(pred.positions, gt.positions);
    const Real x100 = chamfer_normalized_x100(pred.positions, gt.positions);

    json j;
    j["format_version"] = 1;
    j["chamfer"] = {{"precision", ch.precision},
                    {"coverage", ch.coverage},
                    {"total", ch.total},
                    {"total_x100_normalized", x100}};
    j["pred_points"] = pred.size();
    j["gt_points"] = gt.size();
    if (!a.pred_poses.empty() || !a.gt_poses.empty()) {
        if (a.pred_poses.empty() || a.gt_poses.empty())
            throw DomainError("eval: --pred-poses and --gt-poses must be given together");
        const std::vector<Quaternion> qp = load_pose_rotations(a.pred_poses);
        const std::vector<Quaternion> qg = load_pose_rotations(a.gt_poses);
        if (qp.size() != qg.size() || qp.empty())
            throw DomainError("eval: pose directories must pair up nonempty");
        std::vector<Real> errs;
        for (std::size_t i = 0; i < qp.size(); ++i) errs.push_back(pose_angle(qp[i], qg[i]));
        const PoseReport pr = pose_metrics(errs);
        j["pose"] = {{"accuracy_30", pr.accuracy_30},
                     {"median_deg", pr.median_deg},
                     {"per_sample", errs}};
    }
    const std::string text = j.dump(2);
    std::printf("%s\n", text.c_str());
    if (!a.out.empty()) {
        std::ofstream os(a.out, std::ios::binary);
        os << text << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// align
// ---------------------------------------------------------------------------

struct AlignArgs {
    Common common;
    std::string src, dst, out;
    int iters = 50;
    double tol = 1e-10;
    bool with_scale = false;
    bool restarts = true;
};

int run_align(const AlignArgs& a) {
    a.common.apply();
    const PointCloud src = io::read_ply(a.src);
    const PointCloud dst = io::read_ply(a.dst);
    const IcpResult r =
        icp_align_best(src.positions, dst.positions, a.iters, a.tol, a.with_scale, a.restarts);

    json j;
    j["format_version"] = 1;
    j["rotation"] = {r.transform.rotation.w, r.transform.rotation.x, r.transform.rotation.y,
                     r.transform.rotation.z};
    j["translation"] = {r.transform.translation.x(), r.transform.translation.y(),
                        r.transform.translation.z()};
    j["scale"] = r.transform.scale;
    j["rms"] = r.rms;
    j["iterations"] = r.iterations;
    const std::string text = j.dump(2);
    std::printf("%s\n", text.c_str());
    if (!a.out.empty()) {
        std::ofstream os(a.out, std::ios::binary);
        os << text << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckArgs {
    Common common;
    std::uint64_t seed = 0;
    int instances = 20;
    double tol = 1e-4;
    std::string out;
    std::string groups; // comma list; empty = all
};

int run_gradcheck(const GradcheckArgs& a) {
    a.common.apply();
    std::vector<GradGroup> groups;
    if (a.groups.empty()) {
        groups = all_grad_groups();
    } else {
        std::string rest = a.groups;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const std::string name = rest.substr(0, comma);
            rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
            bool found = false;
            for (GradGroup g : all_grad_groups()) {
                if (name == grad_group_name(g)) {
                    groups.push_back(g);
                    found = true;
                }
            }
            if (!found) throw DomainError("gradcheck: unknown group '" + name + "'");
        }
    }

    json j;
    j["format_version"] = 1;
    j["tol"] = a.tol;
    j["instances"] = a.instances;
    bool all_pass = true;
    for (GradGroup g : groups) {
        Rng rng(a.seed, Stream::Data);
        Real worst = 0.0;
        int worst_instance = -1;
        for (int i = 0; i < a.instances; ++i) {
            const GradCheckScene sc = make_gradcheck_scene(g, rng, i);
            const FdReport rep = gradcheck_group(sc, g);
            if (rep.max_rel_err > worst) {
                worst = rep.max_rel_err;
                worst_instance = i;
            }
        }
        const bool pass = worst <= a.tol;
        all_pass = all_pass && pass;
        j["groups"][grad_group_name(g)] = {
            {"max_rel_err", worst}, {"worst_instance", worst_instance}, {"pass", pass}};
        std::fprintf(stderr, "gradcheck: %-18s max_rel_err=%.3e %s\n", grad_group_name(g), worst,
                     pass ? "ok" : "FAIL");
    }
    j["pass"] = all_pass;
    const std::string text = j.dump(2);
    std::printf("%s\n", text.c_str());
    if (!a.out.empty()) {
        std::ofstream os(a.out, std::ios::binary);
        os << text << "\n";
    }
    return all_pass ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    Common common;
    std::string out;
    std::string sizes = "1000,2000,4000,8000";
    std::string paths = "basic,fast";
    int grid = 32;
    int reps = 3;
    std::uint64_t seed = 0;
};

int run_bench(const BenchArgs& a) {
    a.common.apply();
    std::vector<int> sizes;
    {
        std::string rest = a.sizes;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            sizes.push_back(std::stoi(rest.substr(0, comma)));
            rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
        }
    }
    std::vector<std::string> paths;
    {
        std::string rest = a.paths;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            paths.push_back(rest.substr(0, comma));
            rest = comma == std::string::npos ? "" : rest.substr(comma + 1);
        }
    }

    const GridSpec grid = GridSpec::cubic(a.grid, 1.0);
    const std::int64_t v_cells =
        static_cast<std::int64_t>(a.grid) * a.grid * a.grid;
    std::FILE* f = a.out.empty() ? stdout : std::fopen(a.out.c_str(), "wb");
    if (!f) throw DomainError("bench: cannot open " + a.out);
    std::fprintf(f, "path,n,grid,v_cells,seconds,peak_bytes_estimate\n");

    for (const std::string& path_name : paths) {
        const SplatPath path = parse_path(path_name);
        for (int n : sizes) {
            Rng rng(a.seed, Stream::Data);
            PointCloud cloud;
            for (int i = 0; i < n; ++i) {
                cloud.positions.push_back(Vec3(0.7 * (rng.uniform() - 0.5),
                                               0.7 * (rng.uniform() - 0.5),
                                               0.7 * (rng.uniform() - 0.5)));
                cloud.sizes.push_back(SizeParams::isotropic(0.6, 0.05));
            }
            RenderSettings rs;
            rs.path = path;
            const Pose pose;
            const CameraModel cam;

            double best = 1e300;
            for (int r = 0; r < a.reps; ++r) {
                const auto t0 = std::chrono::steady_clock::now();
                const Projection img = render(cloud, pose, cam, grid, rs);
                const double dt = seconds_since(t0);
                best = std::min(best, dt);
                if (img.data.empty()) throw DomainError("bench: empty projection");
            }
            // dominant transient buffers: splat volume + termination volume
            // (+ scatter and two conv stages on the fast path), all doubles
            const std::int64_t volumes = path == SplatPath::Fast ? 5 : 2;
            const std::int64_t peak =
                volumes * v_cells * 8 + static_cast<std::int64_t>(n) * 96;
            std::fprintf(f, "%s,%d,%d,%lld,%.6f,%lld\n", path_name.c_str(), n, a.grid,
                         static_cast<long long>(v_cells), best, static_cast<long long>(peak));
        }
    }
    if (f != stdout) std::fclose(f);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Differentiable point-cloud splatting, rendering and fitting", "diffsplat"};
    app.require_subcommand(1);

    RenderArgs ra;
    CLI::App* render_cmd = app.add_subcommand("render", "Render a point cloud to an image");
    render_cmd->add_option("--cloud", ra.cloud, "Input PLY point cloud")->required();
    render_cmd->add_option("--camera", ra.camera, "Camera JSON (pose + model)")->required();
    render_cmd->add_option("--grid", ra.grid, "Cubic grid resolution (default 64)");
    render_cmd->add_option("--extent", ra.extent, "World extent of the grid (default 1.0)");
    render_cmd->add_option("--modality", ra.modality, "sil|depth|color (default sil)");
    render_cmd->add_option("--path", ra.path, "basic|fast (default fast)");
    render_cmd->add_option("--out", ra.out, "Output image (.png or .pfm)")->required();
    add_common(render_cmd, ra.common);

    SynthArgs sa;
    CLI::App* synth_cmd =
        app.add_subcommand("synth", "Render a view set with random orbit poses");
    synth_cmd->add_option("--cloud", sa.cloud, "Input PLY point cloud")->required();
    synth_cmd->add_option("--views", sa.views, "Number of views (default 8)");
    synth_cmd->add_option("--seed", sa.seed, "Pose sampling seed (default 0)");
    synth_cmd->add_option("--elev-range", sa.elev_range, "Elevation degrees lo,hi (default -20,40)");
    synth_cmd->add_option("--azim-range", sa.azim_range, "Azimuth degrees lo,hi (default 0,360)");
    synth_cmd->add_option("--grid", sa.grid, "Cubic grid resolution (default 64)");
    synth_cmd->add_option("--extent", sa.extent, "World extent of the grid (default 1.0)");
    synth_cmd->add_option("--modality", sa.modality, "sil|depth|color (default sil)");
    synth_cmd->add_option("--path", sa.path, "basic|fast (default fast)");
    synth_cmd->add_option("--cam", sa.cam_kind, "ortho|persp (default ortho)");
    synth_cmd->add_option("--focal", sa.focal, "Perspective focal (default 1.875)");
    synth_cmd->add_option("--near", sa.near, "Perspective near plane (default 1.0)");
    synth_cmd->add_option("--far", sa.far, "Perspective far plane (default 3.0)");
    synth_cmd->add_option("--dist", sa.dist, "Orbit distance (default 2.0)");
    synth_cmd->add_option("--format", sa.format, "Image format pfm|png (default pfm)");
    synth_cmd->add_option("--out", sa.out, "Output directory")->required();
    add_common(synth_cmd, sa.common);

    FitArgs fa;
    CLI::App* fit_cmd = app.add_subcommand("fit", "Fit a point cloud (and poses) to views");
    fit_cmd->add_option("--views", fa.views, "Directory of view_*.json + images")->required();
    fit_cmd->add_option("--config", fa.config, "Fit config JSON")->required();
    fit_cmd->add_option("--out", fa.out, "Output directory")->required();
    fit_cmd->add_option("--seed", fa.seed_override, "Override the config seed");
    add_common(fit_cmd, fa.common);

    EvalArgs ea;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Chamfer metrics between two clouds");
    eval_cmd->add_option("--pred", ea.pred, "Predicted PLY")->required();
    eval_cmd->add_option("--gt", ea.gt, "Ground-truth PLY")->required();
    eval_cmd->add_option("--pred-poses", ea.pred_poses, "Directory of predicted camera JSONs");
    eval_cmd->add_option("--gt-poses", ea.gt_poses, "Directory of ground-truth camera JSONs");
    eval_cmd->add_option("--out", ea.out, "Metrics JSON output path");
    add_common(eval_cmd, ea.common);

    AlignArgs aa;
    CLI::App* align_cmd = app.add_subcommand("align", "Rigid ICP alignment of two clouds");
    align_cmd->add_option("--src", aa.src, "Source PLY (moved)")->required();
    align_cmd->add_option("--dst", aa.dst, "Destination PLY (fixed)")->required();
    align_cmd->add_option("--iters", aa.iters, "Max ICP iterations (default 50)");
    align_cmd->add_option("--tol", aa.tol, "Convergence tolerance on rms improvement");
    align_cmd->add_flag("--scale", aa.with_scale, "Also fit a uniform scale");
    align_cmd->add_flag("!--no-restarts", aa.restarts, "Disable 24-rotation restarts");
    align_cmd->add_option("--out", aa.out, "Alignment JSON output path");
    add_common(align_cmd, aa.common);

    GradcheckArgs ga;
    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "Finite-difference check of the render adjoint");
    gradcheck_cmd->add_option("--seed", ga.seed, "Scene sampling seed (default 0)");
    gradcheck_cmd->add_option("--instances", ga.instances, "Scenes per group (default 20)");
    gradcheck_cmd->add_option("--tol", ga.tol, "Max relative error (default 1e-4)");
    gradcheck_cmd->add_option("--groups", ga.groups, "Comma list of groups (default all)");
    gradcheck_cmd->add_option("--out", ga.out, "Report JSON output path");
    add_common(gradcheck_cmd, ga.common);

    BenchArgs ba;
    CLI::App* bench_cmd = app.add_subcommand("bench", "Wall-time scaling of both splat paths");
    bench_cmd->add_option("--sizes", ba.sizes, "Comma list of point counts");
    bench_cmd->add_option("--paths", ba.paths, "Comma list of paths (default basic,fast)");
    bench_cmd->add_option("--grid", ba.grid, "Cubic grid resolution (default 32)");
    bench_cmd->add_option("--reps", ba.reps, "Repetitions, best-of (default 3)");
    bench_cmd->add_option("--seed", ba.seed, "Cloud sampling seed (default 0)");
    bench_cmd->add_option("--out", ba.out, "CSV output path (default stdout)");
    add_common(bench_cmd, ba.common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(render_cmd)) return run_render(ra);
        if (app.got_subcommand(synth_cmd)) return run_synth(sa);
        if (app.got_subcommand(fit_cmd)) return run_fit(fa);
        if (app.got_subcommand(eval_cmd)) return run_eval(ea);
        if (app.got_subcommand(align_cmd)) return run_align(aa);
        if (app.got_subcommand(gradcheck_cmd)) return run_gradcheck(ga);
        if (app.got_subcommand(bench_cmd)) return run_bench(ba);
    } catch (const DomainError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}

// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Readers and writers for point clouds (ASCII PLY), images (8-bit PNG,
// 32-bit PFM), cameras (JSON), and volume dumps (raw f32 + JSON sidecar).
// Every pair is idempotent after one round trip and all binary formats are
// little-endian regardless of host.

#ifndef DIFFSPLAT_IO_HPP
#define DIFFSPLAT_IO_HPP

#include "diffsplat/geometry.hpp"
#include "diffsplat/volume.hpp"

#include <json.hpp>
#include <png.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace diffsplat {
namespace io {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Little-endian scalar helpers
// ---------------------------------------------------------------------------
inline void put_f32_le(std::ostream& os, float v) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                       static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
    os.write(b, 4);
}

inline float get_f32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                            (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) |
                            (static_cast<std::uint32_t>(b[3]) << 24);
    return std::bit_cast<float>(u);
}

// ---------------------------------------------------------------------------
// ASCII PLY point clouds. Properties: x y z (float32), optional red green
// blue (uint8), optional sigma scale (float32). Floats print as %.9g so a
// second round trip is byte-identical.
// ---------------------------------------------------------------------------
namespace detail {

inline std::string fmt_f32(float v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

[[noreturn]] inline void ply_error(const std::string& path, int line, const std::string& what) {
    throw DomainError("ply parse error: " + path + ":" + std::to_string(line) + ": " + what);
}

} // namespace detail

inline void write_ply(const std::string& path, const PointCloud& cloud) {
    const bool colors = cloud.has_colors();
    const bool sizes = cloud.has_sizes();
    if (colors && cloud.colors.size() != cloud.size())
        throw DomainError("write_ply: colors length mismatch");
    if (sizes)
        for (const SizeParams& s : cloud.sizes)
            if (s.kind != SizeKind::Isotropic)
                throw DomainError("write_ply: PLY carries isotropic sizes only");

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DomainError("cannot open for writing: " + path);
    os << "ply\nformat ascii 1.0\ncomment diffsplat point cloud\n";
    os << "element vertex " << cloud.size() << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    if (colors) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    if (sizes) os << "property float sigma\nproperty float scale\n";
    os << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        os << detail::fmt_f32(static_cast<float>(p.x())) << ' '
           << detail::fmt_f32(static_cast<float>(p.y())) << ' '
           << detail::fmt_f32(static_cast<float>(p.z()));
        if (colors) {
            for (int c = 0; c < 3; ++c) {
                const int v = static_cast<int>(std::floor(255.0 * clamp01(cloud.colors[i][c]) + 0.5));
                os << ' ' << v;
            }
        }
        if (sizes) {
            os << ' ' << detail::fmt_f32(static_cast<float>(cloud.sizes[i].sigma)) << ' '
               << detail::fmt_f32(static_cast<float>(cloud.sizes[i].scale));
        }
        os << '\n';
    }
    if (!os) throw DomainError("write failed: " + path);
}

struct PlyDefaults {
    Real sigma = 0.05;
    Real scale = 1.0;
};

/// Reads the PLY subset written above (any property order inside the vertex
/// element). Absent optional properties stay absent in the returned cloud:
/// no colors -> empty colors, no sigma/scale -> sizes built from `defaults`
/// only when one of the two is present.
inline PointCloud read_ply(const std::string& path, const PlyDefaults& defaults = {}) {
    std::ifstream is(path);
    if (!is) throw DomainError("cannot open: " + path);
    std::string line;
    int lineno = 0;
    auto next_line = [&]() -> bool {
        while (std::getline(is, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            return true;
        }
        return false;
    };

    if (!next_line() || line != "ply") detail::ply_error(path, lineno, "expected 'ply' magic");
    if (!next_line() || line != "format ascii 1.0")
        detail::ply_error(path, lineno, "only 'format ascii 1.0' is supported");

    long count = -1;
    std::vector<std::string> props;
    while (true) {
        if (!next_line()) detail::ply_error(path, lineno, "unexpected end of header");
        if (line == "end_header") break;
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "comment" || tok.empty()) continue;
        if (tok == "element") {
            std::string name;
            ss >> name >> count;
            if (name != "vertex" || count < 0)
                detail::ply_error(path, lineno, "only a 'element vertex N' element is supported");
            continue;
        }
        if (tok == "property") {
            std::string type, name;
            ss >> type >> name;
            const bool f32 = type == "float" || type == "float32";
            const bool u8 = type == "uchar" || type == "uint8";
            const bool coord = name == "x" || name == "y" || name == "z" || name == "sigma" ||
                               name == "scale";
            const bool color = name == "red" || name == "green" || name == "blue";
            if (!((f32 && coord) || (u8 && color)))
                detail::ply_error(path, lineno, "unsupported property '" + type + " " + name + "'");
            props.push_back(name);
            continue;
        }
        detail::ply_error(path, lineno, "unrecognized header line '" + line + "'");
    }
    if (count < 0) detail::ply_error(path, lineno, "missing 'element vertex' declaration");
    auto has = [&](const char* n) {
        for (const std::string& p : props)
            if (p == n) return true;
        return false;
    };
    if (!has("x") || !has("y") || !has("z"))
        detail::ply_error(path, lineno, "vertex element must declare x, y, z");
    const bool with_colors = has("red") || has("green") || has("blue");
    const bool with_sizes = has("sigma") || has("scale");

    PointCloud cloud;
    cloud.positions.reserve(count);
    for (long i = 0; i < count; ++i) {
        if (!next_line())
            detail::ply_error(path, lineno, "vertex count mismatch: expected " +
                                                std::to_string(count) + ", got " + std::to_string(i));
        std::istringstream ss(line);
        Vec3 pos = Vec3::Zero(), col(1.0, 1.0, 1.0);
        SizeParams sz = SizeParams::isotropic(defaults.scale, defaults.sigma);
        for (const std::string& name : props) {
            std::string tok;
            if (!(ss >> tok)) detail::ply_error(path, lineno, "too few values on vertex line");
            if (name == "red" || name == "green" || name == "blue") {
                char* end = nullptr;
                const long v = std::strtol(tok.c_str(), &end, 10);
                if (end == tok.c_str() || *end != '\0' || v < 0 || v > 255)
                    detail::ply_error(path, lineno, "invalid uchar value '" + tok + "'");
                col[name == "red" ? 0 : (name == "green" ? 1 : 2)] = static_cast<Real>(v) / 255.0;
            } else {
                char* end = nullptr;
                const float v = std::strtof(tok.c_str(), &end);
                if (end == tok.c_str() || *end != '\0')
                    detail::ply_error(path, lineno, "invalid float value '" + tok + "'");
                if (name == "x") pos.x() = v;
                else if (name == "y") pos.y() = v;
                else if (name == "z") pos.z() = v;
                else if (name == "sigma") sz.sigma = v;
                else sz.scale = v;
            }
        }
        std::string extra;
        if (ss >> extra) detail::ply_error(path, lineno, "trailing values on vertex line");
        cloud.positions.push_back(pos);
        if (with_colors) cloud.colors.push_back(col);
        if (with_sizes) cloud.sizes.push_back(sz);
    }
    return cloud;
}

// ---------------------------------------------------------------------------
// PNG images, 8-bit gray or RGB. Quantization: floor(255*clamp(p,0,1)+0.5)
// (round half up); values read back as v/255.
// ---------------------------------------------------------------------------
inline void write_png(const std::string& path, const Projection& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DomainError("write_png: 1 or 3 channels required");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw DomainError("cannot open for writing: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    std::vector<png_byte> row(static_cast<std::size_t>(img.cols) * img.channels);
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        std::fclose(fp);
        throw DomainError("png write failed: " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.cols, img.rows, 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < img.rows; ++r) {
        for (int c = 0; c < img.cols; ++c)
            for (int ch = 0; ch < img.channels; ++ch)
                row[static_cast<std::size_t>(c) * img.channels + ch] = static_cast<png_byte>(
                    std::floor(255.0 * clamp01(img.at(r, c, ch)) + 0.5));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline Projection read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DomainError("cannot open: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    std::vector<png_byte> pixels;
    std::vector<png_bytep> rows;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        std::fclose(fp);
        throw DomainError("png read failed: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_packing(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = static_cast<int>(png_get_channels(png, info));
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw DomainError("png read: unsupported channel count in " + path);
    }
    pixels.assign(static_cast<std::size_t>(w) * h * ch, 0);
    rows.resize(h);
    for (int r = 0; r < h; ++r) rows[r] = pixels.data() + static_cast<std::size_t>(r) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);

    Projection img(h, w, ch, ch == 1 ? Modality::Silhouette : Modality::Color);
    for (std::size_t i = 0; i < pixels.size(); ++i)
        img.data[i] = static_cast<Real>(pixels[i]) / 255.0;
    return img;
}

// ---------------------------------------------------------------------------
// PFM float images ("Pf" gray / "PF" color), little-endian (negative scale),
// rows stored bottom-up. Round trips are bit-exact at 32-bit precision.
// ---------------------------------------------------------------------------
inline void write_pfm(const std::string& path, const Projection& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DomainError("write_pfm: 1 or 3 channels required");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DomainError("cannot open for writing: " + path);
    os << (img.channels == 1 ? "Pf" : "PF") << "\n" << img.cols << " " << img.rows << "\n-1.0\n";
    for (int r = img.rows - 1; r >= 0; --r)
        for (int c = 0; c < img.cols; ++c)
            for (int ch = 0; ch < img.channels; ++ch)
                put_f32_le(os, static_cast<float>(img.at(r, c, ch)));
    if (!os) throw DomainError("write failed: " + path);
}

inline Projection read_pfm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DomainError("cannot open: " + path);
    std::string magic;
    int w = 0, h = 0;
    double scale = 0.0;
    is >> magic >> w >> h >> scale;
    if ((magic != "Pf" && magic != "PF") || w <= 0 || h <= 0 || scale == 0.0 || !is)
        throw DomainError("pfm parse error: bad header in " + path);
    is.get(); // single whitespace after the scale line
    const int ch = magic == "Pf" ? 1 : 3;
    Projection img(h, w, ch, ch == 1 ? Modality::Depth : Modality::Color);
    for (int r = h - 1; r >= 0; --r) {
        for (int c = 0; c < w; ++c) {
            for (int k = 0; k < ch; ++k) {
                float v = get_f32_le(is);
                if (scale > 0.0) { // big-endian file: swap
                    auto u = std::bit_cast<std::uint32_t>(v);
                    u = ((u & 0xff) << 24) | ((u & 0xff00) << 8) | ((u >> 8) & 0xff00) | (u >> 24);
                    v = std::bit_cast<float>(u);
                }
                img.at(r, c, k) = v;
            }
        }
    }
    if (!is) throw DomainError("pfm parse error: truncated data in " + path);
    return img;
}

// ---------------------------------------------------------------------------
// Camera JSON
// ---------------------------------------------------------------------------
namespace detail {

inline const json& need(const json& j, const char* field, const std::string& path) {
    if (!j.contains(field))
        throw DomainError("camera json: missing field '" + std::string(field) + "' in " + path);
    return j.at(field);
}

} // namespace detail

inline void write_camera_json(const std::string& path, const Pose& pose, const CameraModel& cam) {
    json j;
    j["format_version"] = 1;
    j["rotation"] = {pose.rotation.w, pose.rotation.x, pose.rotation.y, pose.rotation.z};
    j["translation"] = {pose.translation.x(), pose.translation.y(), pose.translation.z()};
    j["camera"] = {{"kind", cam.kind == CameraKind::Orthographic ? "ortho" : "persp"},
                   {"focal", cam.focal},
                   {"near", cam.near},
                   {"far", cam.far}};
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DomainError("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

inline std::pair<Pose, CameraModel> read_camera_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DomainError("cannot open: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw DomainError("camera json: parse error in " + path + ": " + e.what());
    }
    if (detail::need(j, "format_version", path).get<int>() != 1)
        throw DomainError("camera json: unsupported format_version in " + path);
    const json& rot = detail::need(j, "rotation", path);
    const json& tr = detail::need(j, "translation", path);
    if (!rot.is_array() || rot.size() != 4)
        throw DomainError("camera json: field 'rotation' must be [w,x,y,z] in " + path);
    if (!tr.is_array() || tr.size() != 3)
        throw DomainError("camera json: field 'translation' must be [x,y,z] in " + path);
    Pose pose;
    pose.rotation = {rot[0].get<Real>(), rot[1].get<Real>(), rot[2].get<Real>(),
                     rot[3].get<Real>()};
    pose.translation = Vec3(tr[0].get<Real>(), tr[1].get<Real>(), tr[2].get<Real>());

    const json& c = detail::need(j, "camera", path);
    const std::string kind = detail::need(c, "kind", path).get<std::string>();
    CameraModel cam;
    if (kind == "ortho") cam.kind = CameraKind::Orthographic;
    else if (kind == "persp") cam.kind = CameraKind::Perspective;
    else throw DomainError("camera json: field 'camera.kind' must be 'ortho' or 'persp' in " + path);
    if (c.contains("focal")) cam.focal = c.at("focal").get<Real>();
    if (c.contains("near")) cam.near = c.at("near").get<Real>();
    if (c.contains("far")) cam.far = c.at("far").get<Real>();
    cam.validate();
    return {pose, cam};
}

// ---------------------------------------------------------------------------
// Volume dump: raw 32-bit little-endian floats (k1 slowest) plus a JSON
// sidecar at <path>.json declaring dims and layout.
// ---------------------------------------------------------------------------
inline void write_volume(const std::string& path, const Volume& vol) {
    {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DomainError("cannot open for writing: " + path);
        for (std::int64_t i = 0; i < vol.size(); ++i)
            put_f32_le(os, static_cast<float>(vol.data[i]));
        if (!os) throw DomainError("write failed: " + path);
    }
    json j;
    j["format_version"] = 1;
    j["dims"] = {vol.d1, vol.d2, vol.d3};
    j["layout"] = "k1-slowest";
    std::ofstream os(path + ".json", std::ios::binary);
    if (!os) throw DomainError("cannot open for writing: " + path + ".json");
    os << j.dump(2) << "\n";
}

inline Volume read_volume(const std::string& path) {
    json j;
    {
        std::ifstream is(path + ".json");
        if (!is) throw DomainError("cannot open: " + path + ".json");
        try {
            is >> j;
        } catch (const json::exception& e) {
            throw DomainError("volume sidecar: parse error in " + path + ".json: " + e.what());
        }
    }
    if (!j.contains("dims") || !j.at("dims").is_array() || j.at("dims").size() != 3)
        throw DomainError("volume sidecar: field 'dims' must be [D1,D2,D3] in " + path + ".json");
    if (!j.contains("layout") || j.at("layout").get<std::string>() != "k1-slowest")
        throw DomainError("volume sidecar: field 'layout' must be 'k1-slowest' in " + path +
                          ".json");
    Volume vol(j["dims"][0].get<int>(), j["dims"][1].get<int>(), j["dims"][2].get<int>());
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DomainError("cannot open: " + path);
    for (std::int64_t i = 0; i < vol.size(); ++i) vol.data[i] = get_f32_le(is);
    if (!is) throw DomainError("volume dump: truncated data in " + path);
    is.get();
    if (!is.eof()) throw DomainError("volume dump: trailing data in " + path);
    return vol;
}

} // namespace io
} // namespace diffsplat

#endif // DIFFSPLAT_IO_HPP

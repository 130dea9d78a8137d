// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef DIFFSPLAT_VOLUME_HPP
#define DIFFSPLAT_VOLUME_HPP

#include "diffsplat/common.hpp"
#include "diffsplat/geometry.hpp"

#include <cstdint>
#include <vector>

namespace diffsplat {

/// Dense D1 x D2 x D3 scalar grid, row-major with axis 1 slowest and axis 3
/// fastest.
struct Volume {
    int d1 = 0, d2 = 0, d3 = 0;
    std::vector<Real> data;

    Volume() = default;
    Volume(int d1_, int d2_, int d3_) : d1(d1_), d2(d2_), d3(d3_) {
        data.assign(static_cast<std::size_t>(d1) * d2 * d3, 0.0);
    }
    static Volume zeros_like(const GridSpec& g) { return Volume(g.d1, g.d2, g.d3); }

    std::int64_t size() const { return static_cast<std::int64_t>(d1) * d2 * d3; }

    std::int64_t index(int k1, int k2, int k3) const {
        return (static_cast<std::int64_t>(k1) * d2 + k2) * d3 + k3;
    }
    Real& at(int k1, int k2, int k3) { return data[index(k1, k2, k3)]; }
    Real at(int k1, int k2, int k3) const { return data[index(k1, k2, k3)]; }

    bool same_dims(const Volume& o) const { return d1 == o.d1 && d2 == o.d2 && d3 == o.d3; }
};

/// Per-ray termination probabilities; D3+1 cells along the last axis, the
/// extra one being the background cell.
struct TerminationVolume {
    int d1 = 0, d2 = 0, d3 = 0; // d3 counts occupancy cells, storage has d3+1
    std::vector<Real> data;

    TerminationVolume() = default;
    TerminationVolume(int d1_, int d2_, int d3_) : d1(d1_), d2(d2_), d3(d3_) {
        data.assign(static_cast<std::size_t>(d1) * d2 * (d3 + 1), 0.0);
    }

    std::int64_t index(int k1, int k2, int k3) const {
        return (static_cast<std::int64_t>(k1) * d2 + k2) * (d3 + 1) + k3;
    }
    Real& at(int k1, int k2, int k3) { return data[index(k1, k2, k3)]; }
    Real at(int k1, int k2, int k3) const { return data[index(k1, k2, k3)]; }
};

/// D1 x D2 x D3 x C signal grid (channel fastest).
struct SignalVolume {
    int d1 = 0, d2 = 0, d3 = 0, channels = 0;
    std::vector<Real> data;

    SignalVolume() = default;
    SignalVolume(int d1_, int d2_, int d3_, int c) : d1(d1_), d2(d2_), d3(d3_), channels(c) {
        data.assign(static_cast<std::size_t>(d1) * d2 * d3 * c, 0.0);
    }

    std::int64_t index(int k1, int k2, int k3, int c) const {
        return ((static_cast<std::int64_t>(k1) * d2 + k2) * d3 + k3) * channels + c;
    }
    Real& at(int k1, int k2, int k3, int c) { return data[index(k1, k2, k3, c)]; }
    Real at(int k1, int k2, int k3, int c) const { return data[index(k1, k2, k3, c)]; }
};

enum class Modality { Silhouette, Depth, Color };

/// D1 x D2 image of a declared modality; row = grid axis 1, column = axis 2.
struct Projection {
    int rows = 0, cols = 0, channels = 1;
    Modality modality = Modality::Silhouette;
    std::vector<Real> data;

    Projection() = default;
    Projection(int r, int c, int ch, Modality m) : rows(r), cols(c), channels(ch), modality(m) {
        data.assign(static_cast<std::size_t>(r) * c * ch, 0.0);
    }

    std::int64_t index(int r, int c, int ch = 0) const {
        return (static_cast<std::int64_t>(r) * cols + c) * channels + ch;
    }
    Real& at(int r, int c, int ch = 0) { return data[index(r, c, ch)]; }
    Real at(int r, int c, int ch = 0) const { return data[index(r, c, ch)]; }

    bool same_shape(const Projection& o) const {
        return rows == o.rows && cols == o.cols && channels == o.channels;
    }
};

} // namespace diffsplat

#endif // DIFFSPLAT_VOLUME_HPP

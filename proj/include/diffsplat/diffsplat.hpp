// Copyright Contributors to the diffsplat Project
// SPDX-License-Identifier: Apache-2.0

#ifndef DIFFSPLAT_DIFFSPLAT_HPP
#define DIFFSPLAT_DIFFSPLAT_HPP

#include "diffsplat/common.hpp"
#include "diffsplat/fit.hpp"
#include "diffsplat/geometry.hpp"
#include "diffsplat/grad.hpp"
#include "diffsplat/gradcheck.hpp"
#include "diffsplat/io.hpp"
#include "diffsplat/metrics.hpp"
#include "diffsplat/parallel.hpp"
#include "diffsplat/render.hpp"
#include "diffsplat/rng.hpp"
#include "diffsplat/splat.hpp"
#include "diffsplat/volume.hpp"

#endif // DIFFSPLAT_DIFFSPLAT_HPP

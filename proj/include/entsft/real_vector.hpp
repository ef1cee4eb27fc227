// SPDX-License-Identifier: Apache-2.0
//
// Heap storage for real arrays that Eigen maps over. A fixed base alignment
// keeps vectorized reductions, and therefore their rounding, independent of
// where the allocator placed the buffer.
#pragma once

#include <vector>

#include <Eigen/Core>

namespace entsft {

using RealVector = std::vector<double, Eigen::aligned_allocator<double>>;

}  // namespace entsft

// SPDX-License-Identifier: Apache-2.0
//
// Numerical verification suites. Each suite checks one mathematical claim
// against an independent oracle and reports the worst residual it measured.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "entsft/config.hpp"

namespace entsft {

struct CheckRecord {
    std::string suite;
    std::string claim;
    double tolerance = 0.0;
    double measured = 0.0;  // worst residual (or count, for counting claims)
    bool passed = false;
    std::size_t cases = 0;
    double seconds = 0.0;
};

Json to_json(const CheckRecord& r);

/// monotonicity, kl-uniform, search, projection, gradients, ema, gate
const std::vector<std::string>& suite_names();

/// Throws ConfigError for an unknown suite name.
std::vector<CheckRecord> run_suite(const std::string& name, std::uint64_t seed = 2024);

std::vector<CheckRecord> run_all_suites(std::uint64_t seed = 2024);

}  // namespace entsft

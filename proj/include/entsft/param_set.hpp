// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "entsft/real_vector.hpp"

namespace entsft {

struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    RealVector data;

    std::size_t rows() const noexcept { return shape.empty() ? 0 : shape.front(); }
    std::size_t cols() const noexcept { return shape.size() < 2 ? 1 : shape[1]; }
};

/// Ordered collection of named real arrays. Order is fixed at construction
/// and is the serialization order.
class ParamSet {
public:
    std::size_t add(std::string name, std::vector<std::size_t> shape, double fill = 0.0);

    std::size_t size() const noexcept { return params_.size(); }
    Param& operator[](std::size_t i) { return params_[i]; }
    const Param& operator[](std::size_t i) const { return params_[i]; }

    /// Index of a named parameter; throws DomainError when absent.
    std::size_t index_of(const std::string& name) const;
    Param& at(const std::string& name) { return params_[index_of(name)]; }
    const Param& at(const std::string& name) const { return params_[index_of(name)]; }

    auto begin() noexcept { return params_.begin(); }
    auto end() noexcept { return params_.end(); }
    auto begin() const noexcept { return params_.begin(); }
    auto end() const noexcept { return params_.end(); }

    std::size_t element_count() const noexcept;

    /// Same names and shapes, all values zero.
    ParamSet zeros_like() const;
    bool same_layout(const ParamSet& other) const noexcept;
    /// Throws DomainError unless the layouts match.
    void require_same_layout(const ParamSet& other, const char* context) const;

    void axpy(double a, const ParamSet& x);  // this += a * x
    void scale(double s);
    double squared_norm() const;
    bool all_finite() const;

    friend bool operator==(const ParamSet& a, const ParamSet& b);

private:
    std::vector<Param> params_;
};

}  // namespace entsft

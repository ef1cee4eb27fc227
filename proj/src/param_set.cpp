// SPDX-License-Identifier: Apache-2.0
#include "entsft/param_set.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "entsft/errors.hpp"

namespace entsft {

std::size_t ParamSet::add(std::string name, std::vector<std::size_t> shape, double fill) {
    const std::size_t n =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    params_.push_back({std::move(name), std::move(shape), RealVector(n, fill)});
    return params_.size() - 1;
}

std::size_t ParamSet::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == name) {
            return i;
        }
    }
    throw DomainError("no parameter named '" + name + "'");
}

std::size_t ParamSet::element_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) {
        n += p.data.size();
    }
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (const auto& p : params_) {
        out.add(p.name, p.shape, 0.0);
    }
    return out;
}

bool ParamSet::same_layout(const ParamSet& other) const noexcept {
    if (other.params_.size() != params_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name != other.params_[i].name || params_[i].shape != other.params_[i].shape) {
            return false;
        }
    }
    return true;
}

void ParamSet::require_same_layout(const ParamSet& other, const char* context) const {
    if (!same_layout(other)) {
        throw DomainError(std::string(context) + ": parameter shapes do not match");
    }
}

void ParamSet::axpy(double a, const ParamSet& x) {
    require_same_layout(x, "axpy");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& d = params_[i].data;
        const auto& s = x.params_[i].data;
        for (std::size_t j = 0; j < d.size(); ++j) {
            d[j] += a * s[j];
        }
    }
}

void ParamSet::scale(double s) {
    for (auto& p : params_) {
        for (double& v : p.data) {
            v *= s;
        }
    }
}

double ParamSet::squared_norm() const {
    double acc = 0.0;
    for (const auto& p : params_) {
        for (double v : p.data) {
            acc += v * v;
        }
    }
    return acc;
}

bool ParamSet::all_finite() const {
    for (const auto& p : params_) {
        for (double v : p.data) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
    }
    return true;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
    if (!a.same_layout(b)) {
        return false;
    }
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
        if (a.params_[i].data != b.params_[i].data) {
            return false;
        }
    }
    return true;
}

}  // namespace entsft

#pragma once

#include <cmath>
#include <string>

#include "vgat/autodiff.hpp"
#include "vgat/rng.hpp"

namespace vgat::init {

inline Parameter normal(std::string name, std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.normal(0.0, stddev);
    return {std::move(name), std::move(m)};
}

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default.
inline Parameter fan_in_uniform(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix m(rows, cols);
    for (double& v : m.values()) v = rng.uniform(-bound, bound);
    return {std::move(name), std::move(m)};
}

inline Parameter constant(std::string name, std::size_t rows, std::size_t cols, double value) {
    return {std::move(name), Matrix(rows, cols, value)};
}

}  // namespace vgat::init

#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace kalign {

// Index of the largest entry; ties resolve to the lowest index.
template <typename Derived>
std::size_t argmax(const Eigen::DenseBase<Derived>& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = i;
    return static_cast<std::size_t>(best);
}

template <typename Derived>
std::size_t argmin(const Eigen::DenseBase<Derived>& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) < v(best)) best = i;
    return static_cast<std::size_t>(best);
}

}  // namespace kalign

#pragma once

#include <cstddef>

#include "kalign/shape.hpp"

namespace kalign {

// Landmark roles needed by the global pose statistics.
struct PoseLandmarks {
    std::size_t left_eye = 0;
    std::size_t right_eye = 1;
    std::size_t nose = 2;
};

// Signed left/right width asymmetry: offset of the nose from the eye midpoint along the
// inter-ocular axis, in units of the inter-ocular distance. Grows with yaw; invariant to
// roll, translation and scale.
double yaw_proxy(const Shape& shape, const PoseLandmarks& roles);

// Angle of the inter-ocular segment in radians.
double roll_proxy(const Shape& shape, const PoseLandmarks& roles);

}  // namespace kalign

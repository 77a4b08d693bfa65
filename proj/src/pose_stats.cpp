#include "kalign/pose_stats.hpp"

#include <cmath>

#include "kalign/error.hpp"

namespace kalign {

double yaw_proxy(const Shape& shape, const PoseLandmarks& roles) {
    const Point2 l = shape.point(roles.left_eye);
    const Point2 r = shape.point(roles.right_eye);
    const Point2 n = shape.point(roles.nose);
    const double ux = r.x - l.x;
    const double uy = r.y - l.y;
    const double len2 = ux * ux + uy * uy;
    if (len2 <= 0.0) fail(ErrorKind::Contract, "coincident eye landmarks");
    return ((2.0 * n.x - l.x - r.x) * ux + (2.0 * n.y - l.y - r.y) * uy) / len2;
}

double roll_proxy(const Shape& shape, const PoseLandmarks& roles) {
    const Point2 l = shape.point(roles.left_eye);
    const Point2 r = shape.point(roles.right_eye);
    return std::atan2(r.y - l.y, r.x - l.x);
}

}  // namespace kalign

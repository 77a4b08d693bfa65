#include "kalign/shape.hpp"

#include <cmath>

#include "kalign/error.hpp"

namespace kalign {

double BBox::diagonal() const { return std::sqrt(w * w + h * h); }

Point2 BBox::center() const { return {x + 0.5 * w, y + 0.5 * h}; }

bool BBox::valid() const {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) && std::isfinite(h) && w > 0.0 &&
           h > 0.0;
}

Shape::Shape(std::size_t n_points) : coords_(Eigen::VectorXd::Zero(2 * static_cast<Eigen::Index>(n_points))) {}

Shape::Shape(const std::vector<Point2>& points) : Shape(points.size()) {
    for (std::size_t i = 0; i < points.size(); ++i) set_point(i, points[i]);
}

Shape::Shape(Eigen::VectorXd stacked) : coords_(std::move(stacked)) {
    if (coords_.size() % 2 != 0) fail(ErrorKind::Schema, "stacked shape vector has odd length");
}

std::vector<Point2> Shape::points() const {
    std::vector<Point2> out(n_points());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = point(i);
    return out;
}

FlipPermutation::FlipPermutation(std::vector<std::size_t> perm) : perm_(std::move(perm)) {
    for (std::size_t i = 0; i < perm_.size(); ++i) {
        if (perm_[i] >= perm_.size() || perm_[perm_[i]] != i)
            fail(ErrorKind::Config, "flip permutation is not an involution at index " + std::to_string(i));
    }
}

FlipPermutation FlipPermutation::identity(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    return FlipPermutation(std::move(p));
}

Point2 to_canonical(Point2 pixel, const BBox& bbox) {
    const Point2 c = bbox.center();
    const double d = bbox.diagonal();
    return {(pixel.x - c.x) / d, (pixel.y - c.y) / d};
}

Point2 to_pixel(Point2 canonical, const BBox& bbox) {
    const Point2 c = bbox.center();
    const double d = bbox.diagonal();
    return {canonical.x * d + c.x, canonical.y * d + c.y};
}

Shape normalize_points(std::span<const Point2> points, const BBox& bbox) {
    if (!bbox.valid()) fail(ErrorKind::InvalidAnnotation, "bounding box must have positive finite extent");
    Shape out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!std::isfinite(points[i].x) || !std::isfinite(points[i].y))
            fail(ErrorKind::InvalidAnnotation, "non-finite landmark coordinate at index " + std::to_string(i));
        out.set_point(i, to_canonical(points[i], bbox));
    }
    return out;
}

Shape normalize_shape(const RawAnnotation& raw) { return normalize_points(raw.points, raw.bbox); }

std::vector<Point2> denormalize_shape(const Shape& shape, const BBox& bbox) {
    if (!bbox.valid()) fail(ErrorKind::InvalidAnnotation, "bounding box must have positive finite extent");
    std::vector<Point2> out(shape.n_points());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_pixel(shape.point(i), bbox);
    return out;
}

double shape_distance(const Shape& a, const Shape& b) {
    if (a.n_points() != b.n_points())
        fail(ErrorKind::Schema, "shape landmark counts differ: " + std::to_string(a.n_points()) + " vs " +
                                    std::to_string(b.n_points()));
    return (a.stacked() - b.stacked()).norm();
}

Shape flip_shape(const Shape& shape, const FlipPermutation& perm) {
    if (perm.size() != shape.n_points()) fail(ErrorKind::Config, "flip permutation length does not match shape");
    Shape out(shape.n_points());
    for (std::size_t i = 0; i < shape.n_points(); ++i) {
        const Point2 p = shape.point(perm[i]);
        out.set_point(i, {-p.x, p.y});
    }
    return out;
}

Shape mean_shape(std::span<const Shape> shapes) {
    if (shapes.empty()) fail(ErrorKind::Contract, "mean of an empty shape list");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(shapes.front().stacked().size());
    for (const auto& s : shapes) {
        if (s.n_points() != shapes.front().n_points()) fail(ErrorKind::Schema, "shapes differ in landmark count");
        acc += s.stacked();
    }
    return Shape(Eigen::VectorXd(acc / static_cast<double>(shapes.size())));
}

}  // namespace kalign

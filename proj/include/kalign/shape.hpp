#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace kalign {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

inline bool operator==(const Point2& a, const Point2& b) { return a.x == b.x && a.y == b.y; }

// Axis-aligned detection window in pixels; (x, y) is the top-left corner.
struct BBox {
    double x = 0.0;
    double y = 0.0;
    double w = 1.0;
    double h = 1.0;

    double diagonal() const;
    Point2 center() const;
    bool valid() const;
};

inline bool operator==(const BBox& a, const BBox& b) {
    return a.x == b.x && a.y == b.y && a.w == b.w && a.h == b.h;
}

// N landmarks stored as a stacked 2N vector (x0, y0, x1, y1, ...).
class Shape {
public:
    Shape() = default;
    explicit Shape(std::size_t n_points);
    explicit Shape(const std::vector<Point2>& points);
    explicit Shape(Eigen::VectorXd stacked);

    std::size_t n_points() const { return static_cast<std::size_t>(coords_.size() / 2); }
    Point2 point(std::size_t i) const { return {coords_[2 * i], coords_[2 * i + 1]}; }
    void set_point(std::size_t i, Point2 p) {
        coords_[2 * i] = p.x;
        coords_[2 * i + 1] = p.y;
    }
    std::vector<Point2> points() const;

    const Eigen::VectorXd& stacked() const { return coords_; }
    Eigen::VectorXd& stacked() { return coords_; }

    bool all_finite() const { return coords_.allFinite(); }

    friend bool operator==(const Shape& a, const Shape& b) { return a.coords_ == b.coords_; }

private:
    Eigen::VectorXd coords_;
};

struct RawAnnotation {
    std::vector<Point2> points;
    BBox bbox;
    std::string image_ref;
};

// Pairs left/right landmarks. Must be an involution.
class FlipPermutation {
public:
    FlipPermutation() = default;
    explicit FlipPermutation(std::vector<std::size_t> perm);

    static FlipPermutation identity(std::size_t n);

    std::size_t size() const { return perm_.size(); }
    std::size_t operator[](std::size_t i) const { return perm_[i]; }
    const std::vector<std::size_t>& indices() const { return perm_; }

private:
    std::vector<std::size_t> perm_;
};

Shape normalize_shape(const RawAnnotation& raw);
Shape normalize_points(std::span<const Point2> points, const BBox& bbox);
std::vector<Point2> denormalize_shape(const Shape& shape, const BBox& bbox);
Point2 to_canonical(Point2 pixel, const BBox& bbox);
Point2 to_pixel(Point2 canonical, const BBox& bbox);

double shape_distance(const Shape& a, const Shape& b);

// Mirrors about x = 0 and reorders landmarks so semantic indices are preserved.
Shape flip_shape(const Shape& shape, const FlipPermutation& perm);

Shape mean_shape(std::span<const Shape> shapes);

}  // namespace kalign

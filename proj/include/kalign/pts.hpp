#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "kalign/shape.hpp"

namespace kalign {

// IBUG .pts documents:
//   version: 1
//   n_points: <int>
//   {
//   <x> <y>      (n_points rows)
//   }
// Parse errors carry the offending line number.
std::vector<Point2> parse_pts(std::string_view text);
std::string serialize_pts(const std::vector<Point2>& points);

std::vector<Point2> read_pts(const std::filesystem::path& path);
void write_pts(const std::filesystem::path& path, const std::vector<Point2>& points);

}  // namespace kalign

#pragma once

#include <filesystem>
#include <vector>

#include "kalign/shape.hpp"

namespace kalign {

// Grayscale raster, row-major, intensities in [0, 1].
// Pixel (c, r) covers [c, c+1) x [r, r+1); its center is at (c + 0.5, r + 0.5).
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, float fill = 0.0f);

    float at(int col, int row) const { return pixels[static_cast<std::size_t>(row) * width + col]; }
    float& at(int col, int row) { return pixels[static_cast<std::size_t>(row) * width + col]; }
    bool empty() const { return pixels.empty(); }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

// Bilinear sample at continuous pixel coordinates; outside the raster the nearest edge value is used.
float sample_bilinear(const GrayImage& image, double x, double y);

GrayImage mirror_horizontal(const GrayImage& image);

// Resamples the window to a size x size raster.
GrayImage crop_window(const GrayImage& image, const BBox& window, int size);

// 8-bit binary PGM (P5). Values are quantized to k/255 on write.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

}  // namespace kalign

#include "kalign/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "kalign/error.hpp"

namespace kalign {

GrayImage::GrayImage(int w, int h, float fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {
    if (w <= 0 || h <= 0) fail(ErrorKind::Config, "image dimensions must be positive");
}

float sample_bilinear(const GrayImage& image, double x, double y) {
    const double fx = std::clamp(x - 0.5, 0.0, static_cast<double>(image.width - 1));
    const double fy = std::clamp(y - 0.5, 0.0, static_cast<double>(image.height - 1));
    const int x0 = static_cast<int>(std::floor(fx));
    const int y0 = static_cast<int>(std::floor(fy));
    const int x1 = std::min(x0 + 1, image.width - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ax = fx - x0;
    const double ay = fy - y0;
    const double top = (1.0 - ax) * image.at(x0, y0) + ax * image.at(x1, y0);
    const double bottom = (1.0 - ax) * image.at(x0, y1) + ax * image.at(x1, y1);
    return static_cast<float>((1.0 - ay) * top + ay * bottom);
}

GrayImage mirror_horizontal(const GrayImage& image) {
    GrayImage out(image.width, image.height);
    for (int r = 0; r < image.height; ++r)
        for (int c = 0; c < image.width; ++c) out.at(c, r) = image.at(image.width - 1 - c, r);
    return out;
}

GrayImage crop_window(const GrayImage& image, const BBox& window, int size) {
    if (!window.valid()) fail(ErrorKind::InvalidAnnotation, "crop window must have positive extent");
    GrayImage out(size, size);
    const double sx = window.w / size;
    const double sy = window.h / size;
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
            out.at(c, r) = sample_bilinear(image, window.x + (c + 0.5) * sx, window.y + (r + 0.5) * sy);
    return out;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    os << "P5\n" << image.width << " " << image.height << "\n255\n";
    std::string row(static_cast<std::size_t>(image.width), '\0');
    for (int r = 0; r < image.height; ++r) {
        for (int c = 0; c < image.width; ++c) {
            const double v = std::clamp(static_cast<double>(image.at(c, r)), 0.0, 1.0);
            row[static_cast<std::size_t>(c)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
        }
        os.write(row.data(), static_cast<std::streamsize>(row.size()));
    }
    if (!os) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

namespace {

int read_header_int(std::istream& is, const std::filesystem::path& path) {
    is >> std::ws;
    while (is.peek() == '#') {
        std::string comment;
        std::getline(is, comment);
        is >> std::ws;
    }
    int v = 0;
    if (!(is >> v)) fail(ErrorKind::Parse, "malformed PGM header in '" + path.string() + "'");
    return v;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    std::string magic;
    is >> magic;
    if (magic != "P5") fail(ErrorKind::Parse, "'" + path.string() + "' is not a binary PGM");
    const int w = read_header_int(is, path);
    const int h = read_header_int(is, path);
    const int maxval = read_header_int(is, path);
    if (w <= 0 || h <= 0 || maxval != 255)
        fail(ErrorKind::Parse, "unsupported PGM geometry or depth in '" + path.string() + "'");
    is.get();
    GrayImage out(w, h);
    std::string buf(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), '\0');
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() != static_cast<std::streamsize>(buf.size()))
        fail(ErrorKind::Parse, "truncated PGM payload in '" + path.string() + "'");
    for (std::size_t i = 0; i < buf.size(); ++i)
        out.pixels[i] = static_cast<float>(static_cast<unsigned char>(buf[i])) / 255.0f;
    return out;
}

}  // namespace kalign

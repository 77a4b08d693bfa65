#include "kalign/pts.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "kalign/error.hpp"

namespace kalign {
namespace {

struct Line {
    std::size_t number;
    std::vector<std::string_view> tokens;
};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v'; }

// Splits into non-blank lines of whitespace-separated tokens.
std::vector<Line> tokenize(std::string_view text) {
    std::vector<Line> lines;
    std::size_t number = 1;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view raw = text.substr(pos, end - pos);
        Line line{number, {}};
        std::size_t i = 0;
        while (i < raw.size()) {
            while (i < raw.size() && is_space(raw[i])) ++i;
            std::size_t j = i;
            while (j < raw.size() && !is_space(raw[j])) ++j;
            if (j > i) line.tokens.push_back(raw.substr(i, j - i));
            i = j;
        }
        if (!line.tokens.empty()) lines.push_back(std::move(line));
        ++number;
        pos = end + 1;
    }
    return lines;
}

[[noreturn]] void parse_error(std::size_t line, const std::string& what) {
    fail(ErrorKind::Parse, "pts line " + std::to_string(line) + ": " + what);
}

double to_double(std::string_view tok, std::size_t line) {
    double v = 0.0;
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    if (!tok.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) parse_error(line, "non-numeric token '" + std::string(tok) + "'");
    return v;
}

// Accepts "key: value" written as one or two tokens.
std::string_view header_value(const Line& line, std::string_view key) {
    const std::string want = std::string(key) + ":";
    if (line.tokens.size() == 2 && line.tokens[0] == want) return line.tokens[1];
    if (line.tokens.size() == 1 && line.tokens[0].starts_with(want)) return line.tokens[0].substr(want.size());
    parse_error(line.number, "missing header '" + std::string(key) + "'");
}

}  // namespace

std::vector<Point2> parse_pts(std::string_view text) {
    const auto lines = tokenize(text);
    if (lines.empty()) parse_error(1, "missing header 'version'");
    std::size_t li = 0;
    header_value(lines[li++], "version");
    if (li >= lines.size()) parse_error(lines.back().number + 1, "missing header 'n_points'");
    const Line& count_line = lines[li++];
    const std::string_view count_tok = header_value(count_line, "n_points");
    long n = 0;
    auto [ptr, ec] = std::from_chars(count_tok.data(), count_tok.data() + count_tok.size(), n);
    if (ec != std::errc() || ptr != count_tok.data() + count_tok.size() || n < 0)
        parse_error(count_line.number, "invalid point count '" + std::string(count_tok) + "'");
    if (li >= lines.size() || lines[li].tokens.size() != 1 || lines[li].tokens[0] != "{")
        parse_error(li < lines.size() ? lines[li].number : count_line.number + 1, "missing opening brace");
    ++li;
    std::vector<Point2> points;
    points.reserve(static_cast<std::size_t>(n));
    while (li < lines.size() && !(lines[li].tokens.size() == 1 && lines[li].tokens[0] == "}")) {
        const Line& row = lines[li++];
        if (row.tokens.size() != 2) parse_error(row.number, "expected two coordinates");
        points.push_back({to_double(row.tokens[0], row.number), to_double(row.tokens[1], row.number)});
    }
    if (li >= lines.size()) parse_error(lines.back().number + 1, "missing closing brace");
    if (points.size() != static_cast<std::size_t>(n))
        parse_error(lines[li].number, "point count mismatch: header says " + std::to_string(n) + ", found " +
                                          std::to_string(points.size()));
    if (li + 1 != lines.size()) parse_error(lines[li + 1].number, "trailing content after closing brace");
    return points;
}

namespace {

void append_double(std::string& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) fail(ErrorKind::Contract, "cannot format coordinate");
    out.append(buf, ptr);
}

}  // namespace

std::string serialize_pts(const std::vector<Point2>& points) {
    std::string out = "version: 1\nn_points: " + std::to_string(points.size()) + "\n{\n";
    for (const auto& p : points) {
        append_double(out, p.x);
        out.push_back(' ');
        append_double(out, p.y);
        out.push_back('\n');
    }
    out += "}\n";
    return out;
}

std::vector<Point2> read_pts(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail(ErrorKind::Io, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    try {
        return parse_pts(ss.str());
    } catch (const Error& e) {
        fail(e.kind(), path.string() + ": " + e.what());
    }
}

void write_pts(const std::filesystem::path& path, const std::vector<Point2>& points) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail(ErrorKind::Io, "cannot open '" + path.string() + "' for writing");
    os << serialize_pts(points);
    if (!os) fail(ErrorKind::Io, "write failed for '" + path.string() + "'");
}

}  // namespace kalign

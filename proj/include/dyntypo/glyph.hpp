#pragma once

// Closed cubic-Bezier glyph outlines: SVG path-data parsing, canvas
// normalization, de Casteljau subdivision and serialization.

#include "dyntypo/error.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dyntypo {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
    friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
    friend Point operator*(double s, Point p) { return {s * p.x, s * p.y}; }
    friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct CanvasSize {
    double width = 256.0;
    double height = 256.0;

    friend bool operator==(const CanvasSize&, const CanvasSize&) = default;
};

/// One closed outline. Points are [P0, c1, c2, P1, c1, c2, P2, ...]; segment
/// i uses points 3i .. 3i+3 (indices modulo the point count), so the last
/// segment ends back at P0.
struct Subpath {
    std::vector<Point> points;

    std::size_t segment_count() const noexcept { return points.size() / 3; }
    Point at(std::size_t i) const { return points[i % points.size()]; }
    std::array<Point, 4> segment(std::size_t s) const {
        return {at(3 * s), at(3 * s + 1), at(3 * s + 2), at(3 * s + 3)};
    }
};

struct GlyphPath {
    std::vector<Subpath> subpaths;
    CanvasSize canvas;

    std::size_t point_count() const {
        std::size_t n = 0;
        for (const auto& s : subpaths) n += s.points.size();
        return n;
    }

    std::size_t segment_count() const { return point_count() / 3; }

    /// All control points, subpath after subpath.
    std::vector<Point> flat_points() const {
        std::vector<Point> out;
        out.reserve(point_count());
        for (const auto& s : subpaths) out.insert(out.end(), s.points.begin(), s.points.end());
        return out;
    }

    /// Same topology, new coordinates (in flat_points order).
    GlyphPath with_points(const std::vector<Point>& pts) const {
        if (pts.size() != point_count()) throw GeometryError("with_points: point count mismatch");
        GlyphPath g = *this;
        std::size_t k = 0;
        for (auto& s : g.subpaths)
            for (auto& p : s.points) p = pts[k++];
        return g;
    }

    /// Point count of each subpath, in order.
    std::vector<std::size_t> topology() const {
        std::vector<std::size_t> t;
        for (const auto& s : subpaths) t.push_back(s.points.size());
        return t;
    }
};

inline Point bezier_point(const std::array<Point, 4>& c, double t) {
    const double u = 1.0 - t;
    const double b0 = u * u * u, b1 = 3.0 * u * u * t, b2 = 3.0 * u * t * t, b3 = t * t * t;
    return {b0 * c[0].x + b1 * c[1].x + b2 * c[2].x + b3 * c[3].x,
            b0 * c[0].y + b1 * c[1].y + b2 * c[2].y + b3 * c[3].y};
}

inline Point quadratic_point(Point p0, Point q, Point p1, double t) {
    const double u = 1.0 - t;
    return {u * u * p0.x + 2 * u * t * q.x + t * t * p1.x, u * u * p0.y + 2 * u * t * q.y + t * t * p1.y};
}

/// Degree elevation of a quadratic to the identical cubic.
inline std::array<Point, 4> elevate_quadratic(Point p0, Point q, Point p1) {
    return {p0, p0 + (2.0 / 3.0) * (q - p0), p1 + (2.0 / 3.0) * (q - p1), p1};
}

inline std::array<Point, 4> line_as_cubic(Point a, Point b) {
    return {a, a + (1.0 / 3.0) * (b - a), a + (2.0 / 3.0) * (b - a), b};
}

inline void validate(const GlyphPath& g) {
    if (!(g.canvas.width > 0.0) || !(g.canvas.height > 0.0)) throw GeometryError("canvas must be positive");
    if (g.subpaths.empty()) throw GeometryError("glyph has no subpaths");
    for (const auto& s : g.subpaths) {
        if (s.points.empty() || s.points.size() % 3 != 0)
            throw GeometryError("subpath point count must be a positive multiple of 3");
        for (const auto& p : s.points)
            if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw GeometryError("non-finite coordinate");
    }
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class PathLexer {
public:
    explicit PathLexer(std::string_view s) : s_(s) {}

    void skip_separators() {
        while (pos_ < s_.size() && (std::isspace(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == ','))
            ++pos_;
    }

    bool at_end() {
        skip_separators();
        return pos_ >= s_.size();
    }

    bool at_number() {
        skip_separators();
        if (pos_ >= s_.size()) return false;
        const char c = s_[pos_];
        return std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.';
    }

    std::size_t offset() const noexcept { return pos_; }

    char command() {
        skip_separators();
        const char c = s_[pos_];
        if (!std::isalpha(static_cast<unsigned char>(c)))
            throw ParseError(std::string("expected a path command, found '") + c + "'", pos_);
        ++pos_;
        return c;
    }

    double number() {
        skip_separators();
        const std::size_t start = pos_;
        if (pos_ >= s_.size()) throw ParseError("expected a number, found end of input", pos_);
        std::size_t i = pos_;
        if (s_[i] == '+' || s_[i] == '-') ++i;
        std::size_t digits = 0;
        while (i < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i]))) ++i, ++digits;
        if (i < s_.size() && s_[i] == '.') {
            ++i;
            while (i < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i]))) ++i, ++digits;
        }
        if (digits == 0) throw ParseError("malformed numeric token", start);
        if (i < s_.size() && (s_[i] == 'e' || s_[i] == 'E')) {
            ++i;
            if (i < s_.size() && (s_[i] == '+' || s_[i] == '-')) ++i;
            std::size_t exp_digits = 0;
            while (i < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i]))) ++i, ++exp_digits;
            if (exp_digits == 0) throw ParseError("unterminated exponent in numeric token", start);
        }
        const std::string token(s_.substr(start, i - start));
        pos_ = i;
        return std::stod(token);
    }

    Point point() {
        const double x = number();
        const double y = number();
        return {x, y};
    }

private:
    std::string_view s_;
    std::size_t pos_ = 0;
};

class SubpathBuilder {
public:
    void start(Point p) {
        points_.clear();
        start_ = p;
        current_ = p;
        open_ = true;
    }

    bool open() const noexcept { return open_; }
    Point current() const noexcept { return current_; }

    void cubic(const std::array<Point, 4>& c) {
        if (points_.empty()) points_.push_back(c[0]);
        points_.push_back(c[1]);
        points_.push_back(c[2]);
        points_.push_back(c[3]);
        current_ = c[3];
    }

    /// Closes with a line when the end point differs from the start. The
    /// final on-curve point is the start point itself and is not stored.
    void close(std::vector<Subpath>& out) {
        if (!open_) return;
        open_ = false;
        if (points_.empty()) {
            current_ = start_;
            return;
        }
        if (!(current_ == start_)) cubic(line_as_cubic(current_, start_));
        points_.pop_back();
        out.push_back(Subpath{points_});
        current_ = start_;
    }

private:
    std::vector<Point> points_;
    Point start_{}, current_{};
    bool open_ = false;
};

} // namespace detail

/// Parses SVG path data restricted to M/L/C/Q/Z (either case). Lines and
/// quadratics become cubics; unclosed subpaths get an implicit closing line.
inline GlyphPath parse_path(std::string_view text, CanvasSize canvas = {}) {
    detail::PathLexer lex(text);
    detail::SubpathBuilder sub;
    std::vector<Subpath> out;
    Point current{0.0, 0.0};
    Point start{0.0, 0.0};
    bool have_point = false;

    while (!lex.at_end()) {
        const std::size_t cmd_offset = lex.offset();
        const char cmd = lex.command();
        const bool rel = std::islower(static_cast<unsigned char>(cmd)) != 0;
        const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(cmd)));
        auto resolve = [&](Point p) { return rel ? current + p : p; };

        switch (up) {
        case 'M': {
            sub.close(out);
            Point p = lex.point();
            if (rel && have_point) p = current + p;
            current = start = p;
            have_point = true;
            sub.start(p);
            // Extra coordinate pairs after a moveto are implicit linetos.
            while (lex.at_number()) {
                const Point q = resolve(lex.point());
                sub.cubic(line_as_cubic(current, q));
                current = q;
            }
            break;
        }
        case 'L':
        case 'C':
        case 'Q': {
            if (!have_point) throw ParseError(std::string("command '") + cmd + "' before any moveto", cmd_offset);
            if (!sub.open()) sub.start(current);
            do {
                if (up == 'L') {
                    const Point q = resolve(lex.point());
                    sub.cubic(line_as_cubic(current, q));
                    current = q;
                } else if (up == 'C') {
                    const Point c1 = resolve(lex.point());
                    const Point c2 = resolve(lex.point());
                    const Point e = resolve(lex.point());
                    sub.cubic({current, c1, c2, e});
                    current = e;
                } else {
                    const Point q = resolve(lex.point());
                    const Point e = resolve(lex.point());
                    sub.cubic(elevate_quadratic(current, q, e));
                    current = e;
                }
            } while (lex.at_number());
            break;
        }
        case 'Z':
            sub.close(out);
            current = start;
            break;
        default:
            throw ParseError(std::string("unsupported path command '") + cmd + "'", cmd_offset);
        }
    }
    sub.close(out);
    if (out.empty()) throw ParseError("empty path", 0);
    GlyphPath g{std::move(out), canvas};
    validate(g);
    return g;
}

// ---------------------------------------------------------------------------
// Canvas normalization

struct BoundingBox {
    double min_x, min_y, max_x, max_y;
    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
};

/// Bounding box of the control points.
inline BoundingBox bounding_box(const GlyphPath& g) {
    BoundingBox b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                  -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& s : g.subpaths)
        for (const auto& p : s.points) {
            b.min_x = std::min(b.min_x, p.x);
            b.min_y = std::min(b.min_y, p.y);
            b.max_x = std::max(b.max_x, p.x);
            b.max_y = std::max(b.max_y, p.y);
        }
    return b;
}

/// Uniform scale plus offset: p' = scale * p + offset.
struct SimilarityMap {
    double scale = 1.0;
    Point offset{};

    Point operator()(Point p) const { return {scale * p.x + offset.x, scale * p.y + offset.y}; }

    GlyphPath apply(const GlyphPath& g, CanvasSize canvas) const {
        GlyphPath out = g;
        out.canvas = canvas;
        for (auto& s : out.subpaths)
            for (auto& p : s.points) p = (*this)(p);
        return out;
    }
};

/// The map that fits g's bounding box into the central 80% of `target`.
inline SimilarityMap normalization_map(const GlyphPath& g, CanvasSize target) {
    const BoundingBox b = bounding_box(g);
    const double w = b.width(), h = b.height();
    if (w <= 0.0 && h <= 0.0) throw GeometryError("degenerate bounding box");
    const double sx = w > 0.0 ? 0.8 * target.width / w : std::numeric_limits<double>::infinity();
    const double sy = h > 0.0 ? 0.8 * target.height / h : std::numeric_limits<double>::infinity();
    const double s = std::min(sx, sy);
    const Point center{0.5 * (b.min_x + b.max_x), 0.5 * (b.min_y + b.max_y)};
    return {s, {0.5 * target.width - s * center.x, 0.5 * target.height - s * center.y}};
}

inline GlyphPath normalize_canvas(const GlyphPath& g, CanvasSize target) {
    validate(g);
    return normalization_map(g, target).apply(g, target);
}

// ---------------------------------------------------------------------------
// Subdivision

/// de Casteljau split at t = 0.5.
inline std::pair<std::array<Point, 4>, std::array<Point, 4>> split_half(const std::array<Point, 4>& c) {
    const Point p01 = 0.5 * (c[0] + c[1]);
    const Point p12 = 0.5 * (c[1] + c[2]);
    const Point p23 = 0.5 * (c[2] + c[3]);
    const Point a = 0.5 * (p01 + p12);
    const Point b = 0.5 * (p12 + p23);
    const Point m = 0.5 * (a + b);
    return {{c[0], p01, a, m}, {m, b, p23, c[3]}};
}

/// Splits the longest-chord segment (lowest global index on ties) until the
/// glyph has at least `min_points` control points.
inline GlyphPath subdivide(const GlyphPath& g, std::size_t min_points) {
    GlyphPath out = g;
    while (out.point_count() < min_points) {
        std::size_t best_sub = 0, best_seg = 0;
        double best = -1.0;
        for (std::size_t si = 0; si < out.subpaths.size(); ++si) {
            const Subpath& s = out.subpaths[si];
            for (std::size_t k = 0; k < s.segment_count(); ++k) {
                const auto seg = s.segment(k);
                const double chord = distance(seg[0], seg[3]);
                if (chord > best) {
                    best = chord;
                    best_sub = si;
                    best_seg = k;
                }
            }
        }
        Subpath& s = out.subpaths[best_sub];
        const auto [left, right] = split_half(s.segment(best_seg));
        // Replace the segment's interior controls (3k+1, 3k+2) with
        // left.c1, left.c2, mid, right.c1, right.c2.
        const auto pos = s.points.begin() + static_cast<std::ptrdiff_t>(3 * best_seg + 1);
        s.points.erase(pos, pos + 2);
        s.points.insert(s.points.begin() + static_cast<std::ptrdiff_t>(3 * best_seg + 1),
                        {left[1], left[2], left[3], right[1], right[2]});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string format_coord(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s(buf);
    if (s == "-0.000000") s = "0.000000";
    return s;
}

/// Absolute M/C/Z path data with 6 decimals.
inline std::string serialize_path(const GlyphPath& g) {
    std::string out;
    for (const auto& s : g.subpaths) {
        if (!out.empty()) out += ' ';
        out += "M " + format_coord(s.points[0].x) + ' ' + format_coord(s.points[0].y);
        for (std::size_t k = 0; k < s.segment_count(); ++k) {
            const auto seg = s.segment(k);
            out += " C";
            for (int j = 1; j < 4; ++j) out += ' ' + format_coord(seg[j].x) + ' ' + format_coord(seg[j].y);
        }
        out += " Z";
    }
    return out;
}

// ---------------------------------------------------------------------------
// SVG documents

/// Path data of every <path d="..."> element concatenated, or nullopt when
/// the text is not an SVG document.
inline std::optional<std::string> extract_path_data(const std::string& svg) {
    if (svg.find("<path") == std::string::npos) return std::nullopt;
    static const std::regex path_el(R"(<path\b[^>]*?\sd\s*=\s*["']([^"']*)["'])");
    std::string d;
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), path_el); it != std::sregex_iterator(); ++it) {
        if (!d.empty()) d += ' ';
        d += (*it)[1].str();
    }
    return d;
}

inline std::optional<CanvasSize> extract_view_box(const std::string& svg) {
    static const std::regex vb(R"(viewBox\s*=\s*["']\s*([-+.\deE]+)[\s,]+([-+.\deE]+)[\s,]+([-+.\deE]+)[\s,]+([-+.\deE]+)\s*["'])");
    std::smatch m;
    if (!std::regex_search(svg, m, vb)) return std::nullopt;
    return CanvasSize{std::stod(m[3].str()), std::stod(m[4].str())};
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Parses an SVG document or bare path data. The document's viewBox, when
/// present, overrides `canvas`.
inline GlyphPath load_glyph_text(const std::string& text, CanvasSize canvas = {}) {
    if (auto d = extract_path_data(text)) {
        if (auto vb = extract_view_box(text)) canvas = *vb;
        return parse_path(*d, canvas);
    }
    return parse_path(text, canvas);
}

/// `spec` is a file name when such a file exists, otherwise inline path data.
inline GlyphPath load_glyph(const std::string& spec, CanvasSize canvas = {}) {
    std::ifstream probe(spec);
    if (probe.good()) return load_glyph_text(read_text_file(spec), canvas);
    return load_glyph_text(spec, canvas);
}

} // namespace dyntypo

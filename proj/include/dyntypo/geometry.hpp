#pragma once

// Delaunay triangulation of control points and triangle-angle extraction.

#include "dyntypo/autodiff.hpp"
#include "dyntypo/error.hpp"
#include "dyntypo/glyph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace dyntypo {

/// Fixed triangle connectivity over a point set of size `vertex_count`.
/// Triangles are stored counter-clockwise in the math sense (positive cross
/// product) with the smallest index first, and the list is sorted.
struct TriMesh {
    std::vector<std::array<std::size_t, 3>> triangles;
    std::size_t vertex_count = 0;

    std::size_t size() const noexcept { return triangles.size(); }
};

inline double orient2d(Point a, Point b, Point c) {
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

/// True iff p is strictly inside the circumcircle of abc.
inline bool in_circumcircle(Point a, Point b, Point c, Point p) {
    const double o = orient2d(a, b, c);
    if (std::abs(o) <= 2e-12) throw GeometryError("in_circumcircle: collinear triangle");
    const double adx = a.x - p.x, ady = a.y - p.y;
    const double bdx = b.x - p.x, bdy = b.y - p.y;
    const double cdx = c.x - p.x, cdy = c.y - p.y;
    const double det = (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) -
                       (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady) +
                       (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
    return (o > 0 ? det : -det) > 0.0;
}

namespace detail {

// Bowyer-Watson with the three super-triangle vertices treated as points at
// infinity along fixed generic directions. Circumcircles through infinite
// vertices degenerate to half-planes, which keeps every hull triangle.
class BowyerWatson {
public:
    explicit BowyerWatson(const std::vector<Point>& pts) : pts_(pts), n_(pts.size()) {
        for (int i = 0; i < 3; ++i) {
            const double ang = 1.1 + 2.0 * std::numbers::pi * i / 3.0;
            dir_[i] = {std::cos(ang), std::sin(ang)};
        }
    }

    std::vector<std::array<std::size_t, 3>> run() {
        tris_.push_back({n_, n_ + 1, n_ + 2});
        for (std::size_t p = 0; p < n_; ++p) insert(p);
        std::vector<std::array<std::size_t, 3>> out;
        for (const auto& t : tris_)
            if (t[0] < n_ && t[1] < n_ && t[2] < n_) out.push_back(t);
        return out;
    }

private:
    bool infinite(std::size_t v) const { return v >= n_; }

    bool conflicts(const std::array<std::size_t, 3>& t, Point p) const {
        std::array<std::size_t, 3> fin{}, inf{};
        int nf = 0, ni = 0;
        for (auto v : t) (infinite(v) ? inf[ni++] : fin[nf++]) = v;
        if (ni == 0) {
            const Point a = pts_[fin[0]], b = pts_[fin[1]], c = pts_[fin[2]];
            const double o = orient2d(a, b, c);
            if (o == 0.0) return false;
            return in_circumcircle(a, b, c, p);
        }
        if (ni == 3) return true;
        if (ni == 1) {
            const Point a = pts_[fin[0]], b = pts_[fin[1]];
            const Point d = dir_[inf[0] - n_];
            const double side = orient2d(a, b, a + d);
            const double op = orient2d(a, b, p);
            if (op == 0.0) {
                // Collinear: inside iff strictly within the chord.
                const double t = ((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) /
                                 ((b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y));
                return t > 0.0 && t < 1.0;
            }
            return (side > 0) == (op > 0);
        }
        // Two infinite vertices: half-plane through the finite vertex, facing
        // the bisector of the two directions.
        const Point a = pts_[fin[0]];
        const Point m = dir_[inf[0] - n_] + dir_[inf[1] - n_];
        return (p.x - a.x) * m.x + (p.y - a.y) * m.y > 0.0;
    }

    void insert(std::size_t pi) {
        const Point p = pts_[pi];
        std::vector<std::array<std::size_t, 3>> keep;
        std::map<std::pair<std::size_t, std::size_t>, int> edges;
        std::vector<std::pair<std::size_t, std::size_t>> order;
        for (const auto& t : tris_) {
            if (!conflicts(t, p)) {
                keep.push_back(t);
                continue;
            }
            for (int e = 0; e < 3; ++e) {
                std::size_t u = t[e], v = t[(e + 1) % 3];
                if (u > v) std::swap(u, v);
                if (edges[{u, v}]++ == 0) order.emplace_back(u, v);
            }
        }
        if (keep.size() == tris_.size()) throw GeometryError("delaunay: point outside every circumcircle");
        for (const auto& [u, v] : order)
            if (edges[{u, v}] == 1) keep.push_back({u, v, pi});
        tris_ = std::move(keep);
    }

    const std::vector<Point>& pts_;
    std::size_t n_;
    std::array<Point, 3> dir_{};
    std::vector<std::array<std::size_t, 3>> tris_;
};

} // namespace detail

inline TriMesh delaunay(const std::vector<Point>& points) {
    const std::size_t n = points.size();
    if (n < 3) throw GeometryError("delaunay: need at least 3 points");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (distance(points[i], points[j]) <= 1e-9)
                throw GeometryError("delaunay: coincident points " + std::to_string(i) + " and " + std::to_string(j));
    bool all_collinear = true;
    for (std::size_t k = 2; k < n && all_collinear; ++k)
        if (std::abs(orient2d(points[0], points[1], points[k])) > 1e-12) all_collinear = false;
    if (all_collinear) throw GeometryError("delaunay: all points collinear");

    auto raw = detail::BowyerWatson(points).run();
    TriMesh mesh;
    mesh.vertex_count = n;
    for (auto t : raw) {
        const double o = orient2d(points[t[0]], points[t[1]], points[t[2]]);
        if (std::abs(o) * 0.5 <= 1e-9) continue;
        if (o < 0) std::swap(t[1], t[2]);
        std::rotate(t.begin(), std::min_element(t.begin(), t.end()), t.end());
        mesh.triangles.push_back(t);
    }
    std::sort(mesh.triangles.begin(), mesh.triangles.end());
    return mesh;
}

/// Unsigned interior angles at a, b, c.
inline std::array<double, 3> triangle_angles(Point a, Point b, Point c) {
    if (std::abs(orient2d(a, b, c)) * 0.5 <= 1e-12) throw GeometryError("triangle_angles: degenerate triangle");
    auto angle = [](Point o, Point p, Point q) {
        const Point u = p - o, v = q - o;
        return std::atan2(std::abs(u.x * v.y - u.y * v.x), u.x * v.x + u.y * v.y);
    };
    return {angle(a, b, c), angle(b, c, a), angle(c, a, b)};
}

namespace detail {

// Signed angle at o between u = p - o and v = q - o, with the squared norm
// product clamped so edges shorter than 1e-6 cannot blow up the adjoint.
struct AngleJet {
    double value;
    Point du, dv; // d angle / d u, d angle / d v
};

inline AngleJet signed_angle(Point u, Point v) {
    const double cr = u.x * v.y - u.y * v.x;
    const double dt = u.x * v.x + u.y * v.y;
    const double uu = std::max(u.x * u.x + u.y * u.y, 1e-12);
    const double vv = std::max(v.x * v.x + v.y * v.y, 1e-12);
    const double r2 = uu * vv;
    const double value = (cr == 0.0 && dt == 0.0) ? 0.0 : std::atan2(cr, dt);
    // dθ = (D dC - C dD) / r2
    const Point du{(dt * v.y - cr * v.x) / r2, (-dt * v.x - cr * v.y) / r2};
    const Point dv{(-dt * u.y - cr * u.x) / r2, (dt * u.x - cr * u.y) / r2};
    return {value, du, dv};
}

} // namespace detail

/// Signed angles (relative to the mesh's stored orientation) for each
/// triangle, evaluated at arbitrary positions.
inline Tensor mesh_angle_values(const TriMesh& mesh, const std::vector<Point>& pts) {
    if (pts.size() != mesh.vertex_count) throw GeometryError("mesh_angle_values: point count mismatch");
    Tensor out(mesh.size(), 3);
    for (std::size_t i = 0; i < mesh.size(); ++i) {
        const auto& t = mesh.triangles[i];
        for (int c = 0; c < 3; ++c) {
            const Point o = pts[t[c]], p = pts[t[(c + 1) % 3]], q = pts[t[(c + 2) % 3]];
            out(i, static_cast<std::size_t>(c)) = detail::signed_angle(p - o, q - o).value;
        }
    }
    return out;
}

inline std::vector<Point> to_points(const Tensor& t) {
    std::vector<Point> pts(t.rows);
    for (std::size_t i = 0; i < t.rows; ++i) pts[i] = {t(i, 0), t(i, 1)};
    return pts;
}

inline Tensor to_tensor(const std::vector<Point>& pts) {
    Tensor t(pts.size(), 2);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        t(i, 0) = pts[i].x;
        t(i, 1) = pts[i].y;
    }
    return t;
}

/// Maps an angle to (-pi, pi].
inline double wrap_angle(double a) {
    const double r = std::remainder(a, 2.0 * M_PI);
    return r <= -M_PI ? r + 2.0 * M_PI : r;
}

/// Elementwise wrap of angle differences; the derivative is 1 away from
/// the branch cut. Keeps a sliver whose obtuse angle crosses pi from
/// reading as a full-turn change.
inline ad::Var wrap_angle(ad::Var d) {
    Tensor out = d.value();
    for (double& v : out.data) v = wrap_angle(v);
    const std::size_t ix = d.id();
    return d.tape()->record(std::move(out), {d}, [ix](ad::Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Tensor* gx = t.grad_slot(ix);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    });
}

/// Differentiable m x 3 angle matrix of `points` (N x 2) under the mesh.
inline ad::Var mesh_angles(const TriMesh& mesh, ad::Var points) {
    const Tensor& P = points.value();
    if (P.rows != mesh.vertex_count || P.cols != 2) throw GeometryError("mesh_angles: points must be N x 2");
    Tensor out = mesh_angle_values(mesh, to_points(P));
    const std::size_t ip = points.id();
    return points.tape()->record(std::move(out), {points}, [ip, tris = mesh.triangles](ad::Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        const Tensor& P = t.value(ip);
        Tensor* gp = t.grad_slot(ip);
        for (std::size_t i = 0; i < tris.size(); ++i)
            for (std::size_t c = 0; c < 3; ++c) {
                const double up = g(i, c);
                if (up == 0.0) continue;
                const std::size_t io = tris[i][c], iu = tris[i][(c + 1) % 3], iv = tris[i][(c + 2) % 3];
                const Point o{P(io, 0), P(io, 1)};
                const Point u = Point{P(iu, 0), P(iu, 1)} - o;
                const Point v = Point{P(iv, 0), P(iv, 1)} - o;
                const auto jet = detail::signed_angle(u, v);
                (*gp)(iu, 0) += up * jet.du.x;
                (*gp)(iu, 1) += up * jet.du.y;
                (*gp)(iv, 0) += up * jet.dv.x;
                (*gp)(iv, 1) += up * jet.dv.y;
                (*gp)(io, 0) -= up * (jet.du.x + jet.dv.x);
                (*gp)(io, 1) -= up * (jet.du.y + jet.dv.y);
            }
    });
}

/// One "i j k" triple per line.
inline void write_mesh(const TriMesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& t : mesh.triangles) out << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    if (!out) throw IoError("write failed: " + path);
}

} // namespace dyntypo

#include "dyntypo/geometry.hpp"
#include "dyntypo/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace dyntypo;

namespace {

/// Circumcircle containment computed from the explicit circumcenter, kept
/// separate from the determinant predicate under test.
bool strictly_inside_circumcircle(Point a, Point b, Point c, Point p, double slack) {
    const double d = 2 * (a.x * (b.y - c.y) + b.x * (c.y - a.y) + c.x * (a.y - b.y));
    const double a2 = a.x * a.x + a.y * a.y, b2 = b.x * b.x + b.y * b.y, c2 = c.x * c.x + c.y * c.y;
    const Point o{(a2 * (b.y - c.y) + b2 * (c.y - a.y) + c2 * (a.y - b.y)) / d,
                  (a2 * (c.x - b.x) + b2 * (a.x - c.x) + c2 * (b.x - a.x)) / d};
    const double r = distance(o, a);
    return distance(o, p) < r - slack;
}

std::vector<Point> random_points(Rng& rng, std::size_t n) {
    std::vector<Point> pts;
    while (pts.size() < n) {
        const Point p{rng.uniform(0, 100), rng.uniform(0, 100)};
        bool far = true;
        for (const auto& q : pts) far = far && distance(p, q) > 1e-3;
        if (far) pts.push_back(p);
    }
    return pts;
}

std::set<std::array<std::size_t, 3>> as_set(const TriMesh& m) {
    std::set<std::array<std::size_t, 3>> s;
    for (auto t : m.triangles) {
        std::sort(t.begin(), t.end());
        s.insert(t);
    }
    return s;
}

double area(Point a, Point b, Point c) { return 0.5 * std::abs((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)); }

} // namespace

TEST(Circumcircle, Examples) {
    const Point a{0, 0}, b{1, 0}, c{0, 1};
    EXPECT_TRUE(in_circumcircle(a, b, c, {0.25, 0.25}));
    EXPECT_FALSE(in_circumcircle(a, b, c, {2, 2}));
    EXPECT_FALSE(in_circumcircle(a, b, c, {1, 1}));
    // Orientation of abc does not matter.
    EXPECT_TRUE(in_circumcircle(a, c, b, {0.25, 0.25}));
}

TEST(Circumcircle, CollinearIsError) { EXPECT_THROW(in_circumcircle({0, 0}, {1, 1}, {2, 2}, {0, 1}), GeometryError); }

TEST(Delaunay, UnitSquareTwoTrianglesSharingDiagonal) {
    const std::vector<Point> pts{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    const TriMesh m = delaunay(pts);
    ASSERT_EQ(m.size(), 2u);
    const auto s = as_set(m);
    const bool diag02 = s == std::set<std::array<std::size_t, 3>>{{0, 1, 2}, {0, 2, 3}};
    const bool diag13 = s == std::set<std::array<std::size_t, 3>>{{0, 1, 3}, {1, 2, 3}};
    EXPECT_TRUE(diag02 || diag13);
    // Every produced triangle is empty under the brute-force oracle.
    for (const auto& t : m.triangles)
        for (std::size_t p = 0; p < 4; ++p)
            if (p != t[0] && p != t[1] && p != t[2])
                EXPECT_FALSE(strictly_inside_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[p], 1e-9));
}

TEST(Delaunay, EquilateralSingleTriangle) {
    const TriMesh m = delaunay({{0, 0}, {1, 0}, {0.5, std::sqrt(3.0) / 2}});
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(as_set(m), (std::set<std::array<std::size_t, 3>>{{0, 1, 2}}));
}

TEST(Delaunay, TwelveRandomPointsEmptyCircumcircles) {
    Rng rng(12);
    const auto pts = random_points(rng, 12);
    const TriMesh m = delaunay(pts);
    for (const auto& t : m.triangles)
        for (std::size_t p = 0; p < pts.size(); ++p)
            if (p != t[0] && p != t[1] && p != t[2])
                EXPECT_FALSE(strictly_inside_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[p], 1e-9));
}

TEST(Delaunay, MatchesBruteForceEnumeration) {
    // In general position the Delaunay triangulation is unique: it is the set
    // of all triples whose circumcircle is empty.
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Rng rng(seed);
        const std::size_t n = 4 + seed % 8;
        const auto pts = random_points(rng, n);
        std::set<std::array<std::size_t, 3>> brute;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                for (std::size_t k = j + 1; k < n; ++k) {
                    if (area(pts[i], pts[j], pts[k]) < 1e-9) continue;
                    bool empty = true;
                    for (std::size_t p = 0; p < n && empty; ++p)
                        if (p != i && p != j && p != k)
                            empty = !strictly_inside_circumcircle(pts[i], pts[j], pts[k], pts[p], -1e-9);
                    if (empty) brute.insert({i, j, k});
                }
        EXPECT_EQ(as_set(delaunay(pts)), brute) << "seed " << seed;
    }
}

TEST(Delaunay, CoversConvexHullArea) {
    Rng rng(5);
    const auto pts = random_points(rng, 16);
    const TriMesh m = delaunay(pts);
    double total = 0;
    for (const auto& t : m.triangles) total += area(pts[t[0]], pts[t[1]], pts[t[2]]);
    // Hull area via monotone chain.
    auto sorted = pts;
    std::sort(sorted.begin(), sorted.end(), [](Point a, Point b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    std::vector<Point> hull;
    for (int pass = 0; pass < 2; ++pass) {
        const std::size_t start = hull.size();
        for (const auto& p : sorted) {
            while (hull.size() >= start + 2 && orient2d(hull[hull.size() - 2], hull.back(), p) <= 0) hull.pop_back();
            hull.push_back(p);
        }
        hull.pop_back();
        std::reverse(sorted.begin(), sorted.end());
    }
    double hull_area = 0;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Point a = hull[i], b = hull[(i + 1) % hull.size()];
        hull_area += a.x * b.y - b.x * a.y;
    }
    EXPECT_NEAR(total, std::abs(hull_area) / 2, 1e-9 * std::abs(hull_area));
}

TEST(Delaunay, SortedPositiveAndDeterministic) {
    Rng rng(9);
    const auto pts = random_points(rng, 15);
    const TriMesh a = delaunay(pts), b = delaunay(pts);
    EXPECT_EQ(a.triangles, b.triangles);
    EXPECT_TRUE(std::is_sorted(a.triangles.begin(), a.triangles.end()));
    for (const auto& t : a.triangles) {
        EXPECT_LT(t[0], t[1]);
        EXPECT_LT(t[0], t[2]);
        EXPECT_GT(area(pts[t[0]], pts[t[1]], pts[t[2]]), 1e-9);
        EXPECT_GT(orient2d(pts[t[0]], pts[t[1]], pts[t[2]]), 0);
    }
}

TEST(Delaunay, Errors) {
    EXPECT_THROW(delaunay({{0, 0}, {1, 1}}), GeometryError);
    EXPECT_THROW(delaunay({{0, 0}, {1, 1}, {2, 2}, {3, 3}}), GeometryError);
    EXPECT_THROW(delaunay({{0, 0}, {1, 0}, {0, 1}, {1e-12, 0}}), GeometryError);
}

TEST(Angles, KnownTriangles) {
    const auto r = triangle_angles({0, 0}, {1, 0}, {0, 1});
    EXPECT_NEAR(r[0], M_PI / 2, 1e-12);
    EXPECT_NEAR(r[1], M_PI / 4, 1e-12);
    EXPECT_NEAR(r[2], M_PI / 4, 1e-12);
    const auto e = triangle_angles({0, 0}, {1, 0}, {0.5, std::sqrt(3.0) / 2});
    for (double v : e) EXPECT_NEAR(v, M_PI / 3, 1e-12);
    EXPECT_THROW(triangle_angles({0, 0}, {1, 0}, {2, 0}), GeometryError);
}

TEST(Angles, SumToPi) {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const Point a{rng.uniform(), rng.uniform()}, b{rng.uniform(), rng.uniform()}, c{rng.uniform(), rng.uniform()};
        if (area(a, b, c) < 1e-6) continue;
        const auto r = triangle_angles(a, b, c);
        EXPECT_NEAR(r[0] + r[1] + r[2], M_PI, 1e-9);
        for (double v : r) {
            EXPECT_GT(v, 0);
            EXPECT_LT(v, M_PI);
        }
    }
}

TEST(MeshAngles, BuildPointsGiveBuildAngles) {
    Rng rng(4);
    const auto pts = random_points(rng, 10);
    const TriMesh m = delaunay(pts);
    const Tensor a = mesh_angle_values(m, pts);
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto& t = m.triangles[i];
        const auto ref = triangle_angles(pts[t[0]], pts[t[1]], pts[t[2]]);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a(i, c), ref[c], 1e-12);
    }
}

TEST(MeshAngles, SimilarityInvariant) {
    Rng rng(6);
    const auto pts = random_points(rng, 12);
    const TriMesh m = delaunay(pts);
    const Tensor a = mesh_angle_values(m, pts);
    const double th = 0.7, s = 2.0;
    std::vector<Point> moved;
    for (const auto& p : pts)
        moved.push_back({s * (std::cos(th) * p.x - std::sin(th) * p.y) + 13, s * (std::sin(th) * p.x + std::cos(th) * p.y) - 4});
    EXPECT_LT(max_abs_diff(a, mesh_angle_values(m, moved)), 1e-9);
    std::vector<Point> scaled;
    for (const auto& p : pts) scaled.push_back(2.0 * p);
    EXPECT_LT(max_abs_diff(a, mesh_angle_values(m, scaled)), 1e-9);
}

TEST(MeshAngles, GradientMatchesFiniteDifferences) {
    Rng rng(8);
    const auto pts = random_points(rng, 6);
    const TriMesh m = delaunay(pts);
    Tensor x = to_tensor(pts);
    for (double& v : x.data) v += rng.uniform(-1, 1);
    const Tensor w = [&] {
        Tensor t(m.size(), 3);
        for (double& v : t.data) v = rng.uniform(-1, 1);
        return t;
    }();
    // Weighted sum so the (constant) plain angle sum does not hide errors.
    auto f = [&](const Tensor& p) {
        const Tensor a = mesh_angle_values(m, to_points(p));
        double s = 0;
        for (std::size_t i = 0; i < a.size(); ++i) s += w[i] * a[i];
        return s;
    };
    ad::Tape tape;
    ad::Var v = tape.variable(x);
    tape.backward(ad::sum(mesh_angles(m, v) * tape.constant(w)));
    const Tensor g = tape.gradient(v);
    const double eps = 1e-5;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor p = x, q = x;
        p[i] += eps;
        q[i] -= eps;
        const double num = (f(p) - f(q)) / (2 * eps);
        EXPECT_LT(std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-8}), 1e-3);
    }
}

TEST(MeshAngles, DegenerateTriangleStaysFinite) {
    const TriMesh m = delaunay({{0, 0}, {1, 0}, {0, 1}});
    ad::Tape tape;
    ad::Var v = tape.variable(Tensor(3, 2, 0.0));
    ad::Var a = mesh_angles(m, v);
    EXPECT_TRUE(a.value().all_finite());
    tape.backward(ad::sum(a));
    EXPECT_TRUE(tape.gradient(v).all_finite());
}

TEST(MeshAngles, InvertedTriangleGoesNegative) {
    const TriMesh m = delaunay({{0, 0}, {1, 0}, {0, 1}});
    const std::vector<Point> flipped{{0, 0}, {1, 0}, {0, -1}};
    const Tensor a = mesh_angle_values(m, flipped);
    for (double v : a.data) EXPECT_LT(v, 0);
}

TEST(MeshAngles, WrapAngle) {
    EXPECT_NEAR(wrap_angle(3 * M_PI / 2), -M_PI / 2, 1e-12);
    EXPECT_NEAR(wrap_angle(-3 * M_PI / 2), M_PI / 2, 1e-12);
    EXPECT_NEAR(wrap_angle(M_PI), M_PI, 1e-12);
    EXPECT_NEAR(wrap_angle(-M_PI), M_PI, 1e-12);
    EXPECT_NEAR(wrap_angle(0.3), 0.3, 1e-15);
}

TEST(MeshDump, OneTriplePerLine) {
    const TriMesh m = delaunay({{0, 0}, {1, 0}, {1, 1}, {0, 1}});
    const auto path = std::filesystem::temp_directory_path() / "dyntypo_mesh_dump.txt";
    write_mesh(m, path.string());
    std::ifstream in(path);
    std::size_t i, j, k, lines = 0;
    while (in >> i >> j >> k) {
        EXPECT_EQ((std::array<std::size_t, 3>{i, j, k}), m.triangles[lines]);
        ++lines;
    }
    EXPECT_EQ(lines, m.size());
}

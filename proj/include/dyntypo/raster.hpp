#pragma once

// Differentiable even-odd rasterization of closed outlines.
//
// Coverage of a pixel is smoothstep(-d / softness), where d is the signed
// distance from the pixel centre to the flattened outline (negative inside by
// crossing parity) and smoothstep(u) = clamp(0.5 + 0.75u - 0.25u^3) on
// [-1, 1]. Only pixels within one softness width of the outline have a
// non-zero adjoint, which flows to the endpoints of their nearest edge.

#include "dyntypo/autodiff.hpp"
#include "dyntypo/glyph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace dyntypo {

/// Grayscale coverage image, rows = height, cols = width, values in [0, 1].
using Raster = Tensor;

struct RasterOptions {
    std::size_t height = 256;
    std::size_t width = 256;
    double pixel_size = 1.0; // canvas units per pixel
    double softness = 1.0;   // edge half-width in pixels
    int flatten_n = 8;       // samples per cubic segment

    static RasterOptions square(std::size_t res, CanvasSize canvas = {256, 256}) {
        RasterOptions o;
        o.height = o.width = res;
        o.pixel_size = canvas.width / static_cast<double>(res);
        return o;
    }
};

inline double smoothstep_coverage(double u) {
    if (u <= -1.0) return 0.0;
    if (u >= 1.0) return 1.0;
    return 0.5 + 0.75 * u - 0.25 * u * u * u;
}

inline double smoothstep_slope(double u) {
    if (u <= -1.0 || u >= 1.0) return 0.0;
    return 0.75 - 0.75 * u * u;
}

// ---------------------------------------------------------------------------
// Flattening

/// Polygon vertex layout produced by flattening: subpath s owns vertices
/// [offsets[s], offsets[s + 1]).
struct PolygonLayout {
    std::vector<std::size_t> offsets;

    std::size_t vertex_count() const { return offsets.empty() ? 0 : offsets.back(); }
    std::size_t polygon_count() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

struct Flattening {
    Tensor basis; // M x N Bernstein weights
    PolygonLayout layout;
};

/// Each cubic sampled at t = i / n, i = 0 .. n-1; the segment end point is
/// the next segment's first sample.
inline Flattening flattening(const std::vector<std::size_t>& topology, int flatten_n) {
    if (flatten_n < 2) throw Error("flatten_n must be at least 2");
    std::size_t n_points = 0, n_vertices = 0;
    for (std::size_t c : topology) {
        n_points += c;
        n_vertices += (c / 3) * static_cast<std::size_t>(flatten_n);
    }
    Flattening f{Tensor(n_vertices, n_points), {}};
    f.layout.offsets.push_back(0);
    std::size_t point_base = 0, row = 0;
    for (std::size_t c : topology) {
        const std::size_t segs = c / 3;
        for (std::size_t s = 0; s < segs; ++s)
            for (int i = 0; i < flatten_n; ++i) {
                const double t = static_cast<double>(i) / flatten_n, u = 1.0 - t;
                const double w[4] = {u * u * u, 3 * u * u * t, 3 * u * t * t, t * t * t};
                for (std::size_t j = 0; j < 4; ++j) f.basis(row, point_base + (3 * s + j) % c) += w[j];
                ++row;
            }
        point_base += c;
        f.layout.offsets.push_back(row);
    }
    return f;
}

inline ad::Var flatten(ad::Var points, const Flattening& f) {
    return ad::matmul(points.tape()->constant(f.basis), points);
}

inline Tensor flatten_values(const Tensor& points, const Flattening& f) {
    ad::Tape tape;
    return flatten(tape.constant(points), f).value();
}

// ---------------------------------------------------------------------------
// Rasterization kernel

namespace detail {

struct BandSample {
    std::uint32_t pixel;
    std::uint32_t edge; // index of the edge's first vertex
    std::uint32_t edge_end;
    double t;           // closest-point parameter on the edge
    double nx, ny;      // (closest - centre) / distance
    double dcov_ddist;  // d coverage / d unsigned distance
};

struct RasterKernel {
    Tensor image;
    std::vector<BandSample> band;
};

inline double polygon_area(const Tensor& v, std::size_t begin, std::size_t end) {
    double a = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
        const std::size_t j = (i + 1 < end) ? i + 1 : begin;
        a += v(i, 0) * v(j, 1) - v(j, 0) * v(i, 1);
    }
    return 0.5 * a;
}

inline RasterKernel rasterize_kernel(const Tensor& verts, const PolygonLayout& layout, const RasterOptions& opt) {
    const std::size_t H = opt.height, W = opt.width;
    const double ps = opt.pixel_size;
    const double soft = opt.softness * ps;
    RasterKernel k{Tensor(H, W), {}};

    struct Edge {
        std::uint32_t a, b;
    };
    std::vector<Edge> edges;
    for (std::size_t p = 0; p < layout.polygon_count(); ++p) {
        const std::size_t lo = layout.offsets[p], hi = layout.offsets[p + 1];
        if (hi - lo < 3 || std::abs(polygon_area(verts, lo, hi)) < 1e-9) continue;
        for (std::size_t i = lo; i < hi; ++i)
            edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1 < hi ? i + 1 : lo)});
    }
    if (edges.empty()) return k;

    std::vector<double> best_d2(H * W, soft * soft);
    std::vector<std::int64_t> best_edge(H * W, -1);
    std::vector<double> best_t(H * W, 0.0);

    for (std::size_t e = 0; e < edges.size(); ++e) {
        const double ax = verts(edges[e].a, 0), ay = verts(edges[e].a, 1);
        const double bx = verts(edges[e].b, 0), by = verts(edges[e].b, 1);
        const double ex = bx - ax, ey = by - ay;
        const double len2 = ex * ex + ey * ey;
        const auto lo_j = static_cast<std::int64_t>(std::floor((std::min(ax, bx) - soft) / ps - 0.5));
        const auto hi_j = static_cast<std::int64_t>(std::ceil((std::max(ax, bx) + soft) / ps - 0.5));
        const auto lo_i = static_cast<std::int64_t>(std::floor((std::min(ay, by) - soft) / ps - 0.5));
        const auto hi_i = static_cast<std::int64_t>(std::ceil((std::max(ay, by) + soft) / ps - 0.5));
        for (std::int64_t i = std::max<std::int64_t>(lo_i, 0); i <= std::min<std::int64_t>(hi_i, H - 1); ++i) {
            const double qy = (static_cast<double>(i) + 0.5) * ps;
            for (std::int64_t j = std::max<std::int64_t>(lo_j, 0); j <= std::min<std::int64_t>(hi_j, W - 1); ++j) {
                const double qx = (static_cast<double>(j) + 0.5) * ps;
                double t = len2 > 0.0 ? ((qx - ax) * ex + (qy - ay) * ey) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double cx = ax + t * ex - qx, cy = ay + t * ey - qy;
                const double d2 = cx * cx + cy * cy;
                const std::size_t pix = static_cast<std::size_t>(i) * W + static_cast<std::size_t>(j);
                if (d2 < best_d2[pix]) {
                    best_d2[pix] = d2;
                    best_edge[pix] = static_cast<std::int64_t>(e);
                    best_t[pix] = t;
                }
            }
        }
    }

    std::vector<double> crossings;
    for (std::size_t i = 0; i < H; ++i) {
        const double qy = (static_cast<double>(i) + 0.5) * ps;
        crossings.clear();
        for (const Edge& e : edges) {
            const double ay = verts(e.a, 1), by = verts(e.b, 1);
            if ((ay > qy) != (by > qy)) {
                const double ax = verts(e.a, 0), bx = verts(e.b, 0);
                crossings.push_back(ax + (qy - ay) * (bx - ax) / (by - ay));
            }
        }
        std::sort(crossings.begin(), crossings.end());
        std::size_t left = 0; // crossings with x <= qx
        for (std::size_t j = 0; j < W; ++j) {
            const double qx = (static_cast<double>(j) + 0.5) * ps;
            while (left < crossings.size() && crossings[left] <= qx) ++left;
            const bool inside = ((crossings.size() - left) & 1U) != 0;
            const std::size_t pix = i * W + j;
            if (best_edge[pix] < 0) {
                k.image[pix] = inside ? 1.0 : 0.0;
                continue;
            }
            const double d = std::sqrt(best_d2[pix]);
            const double u = (inside ? d : -d) / soft;
            k.image[pix] = smoothstep_coverage(u);
            if (d == 0.0) continue;
            const Edge& e = edges[static_cast<std::size_t>(best_edge[pix])];
            const double t = best_t[pix];
            const double cx = verts(e.a, 0) + t * (verts(e.b, 0) - verts(e.a, 0)) - qx;
            const double cy = verts(e.a, 1) + t * (verts(e.b, 1) - verts(e.a, 1)) - qy;
            k.band.push_back({static_cast<std::uint32_t>(pix), e.a, e.b, t, cx / d, cy / d,
                              smoothstep_slope(u) * (inside ? 1.0 : -1.0) / soft});
        }
    }
    return k;
}

} // namespace detail

/// Plain (tape-free) rasterization of polygon vertices.
inline Raster rasterize_values(const Tensor& verts, const PolygonLayout& layout, const RasterOptions& opt) {
    return detail::rasterize_kernel(verts, layout, opt).image;
}

/// Differentiable rasterization of flattened polygons (M x 2 vertices).
inline ad::Var rasterize(ad::Var verts, const PolygonLayout& layout, const RasterOptions& opt) {
    auto kernel = detail::rasterize_kernel(verts.value(), layout, opt);
    const std::size_t iv = verts.id();
    return verts.tape()->record(std::move(kernel.image), {verts},
                                [iv, band = std::move(kernel.band)](ad::Tape& t, std::size_t self) {
                                    const Tensor& g = t.upstream(self);
                                    Tensor* gv = t.grad_slot(iv);
                                    for (const auto& s : band) {
                                        const double up = g[s.pixel] * s.dcov_ddist;
                                        if (up == 0.0) continue;
                                        const double wa = up * (1.0 - s.t), wb = up * s.t;
                                        (*gv)(s.edge, 0) += wa * s.nx;
                                        (*gv)(s.edge, 1) += wa * s.ny;
                                        (*gv)(s.edge_end, 0) += wb * s.nx;
                                        (*gv)(s.edge_end, 1) += wb * s.ny;
                                    }
                                });
}

/// Control points (N x 2) -> coverage image.
inline ad::Var rasterize_points(ad::Var points, const Flattening& f, const RasterOptions& opt) {
    return rasterize(flatten(points, f), f.layout, opt);
}

/// Frame-major (k * N) x 2 control points -> k images.
inline std::vector<ad::Var> rasterize_video(ad::Var frames, std::size_t k, const Flattening& f,
                                            const RasterOptions& opt) {
    const std::size_t n = frames.rows() / k;
    std::vector<ad::Var> out;
    out.reserve(k);
    for (std::size_t t = 0; t < k; ++t) out.push_back(rasterize_points(ad::slice_rows(frames, t * n, n), f, opt));
    return out;
}

inline Raster render(const GlyphPath& g, const RasterOptions& opt) {
    const Flattening f = flattening(g.topology(), opt.flatten_n);
    Tensor pts(g.point_count(), 2);
    std::size_t r = 0;
    for (const auto& s : g.subpaths)
        for (const auto& p : s.points) {
            pts(r, 0) = p.x;
            pts(r, 1) = p.y;
            ++r;
        }
    return rasterize_values(flatten_values(pts, f), f.layout, opt);
}

} // namespace dyntypo

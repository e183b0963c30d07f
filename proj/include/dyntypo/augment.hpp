#pragma once

// Random crop + mild perspective applied identically to every frame through
// bilinear resampling.

#include "dyntypo/autodiff.hpp"
#include "dyntypo/glyph.hpp"
#include "dyntypo/raster.hpp"
#include "dyntypo/rng.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

namespace dyntypo {

struct AugmentConfig {
    bool enabled = true;
    double min_crop_scale = 0.85;
    double max_corner_jitter = 0.05; // fraction of the side
};

struct AugmentParams {
    double crop_scale = 1.0;
    Point crop_origin{0.0, 0.0};  // unit coordinates of the crop window corner
    std::array<Point, 4> jitter{}; // corner offsets (unit coordinates of the window)

    static AugmentParams identity() { return {}; }
};

/// Draws crop (scale, x, y) then perspective (4 corners x 2).
inline AugmentParams sample_augment(Rng& rng, const AugmentConfig& cfg) {
    AugmentParams p;
    p.crop_scale = rng.uniform(cfg.min_crop_scale, 1.0);
    p.crop_origin.x = rng.uniform(0.0, 1.0 - p.crop_scale);
    p.crop_origin.y = rng.uniform(0.0, 1.0 - p.crop_scale);
    for (auto& j : p.jitter) {
        j.x = rng.uniform(-cfg.max_corner_jitter, cfg.max_corner_jitter);
        j.y = rng.uniform(-cfg.max_corner_jitter, cfg.max_corner_jitter);
    }
    return p;
}

/// 3x3 projective map, row-major, h[8] == 1.
using Homography = std::array<double, 9>;

inline Point apply(const Homography& h, Point p) {
    const double w = h[6] * p.x + h[7] * p.y + h[8];
    return {(h[0] * p.x + h[1] * p.y + h[2]) / w, (h[3] * p.x + h[4] * p.y + h[5]) / w};
}

/// Homography taking the unit square corners (0,0), (1,0), (1,1), (0,1) to `dst`.
inline Homography square_to_quad(const std::array<Point, 4>& dst) {
    const std::array<Point, 4> src{Point{0, 0}, Point{1, 0}, Point{1, 1}, Point{0, 1}};
    double A[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
        double* r0 = A[2 * i];
        double* r1 = A[2 * i + 1];
        r0[0] = x, r0[1] = y, r0[2] = 1, r0[6] = -u * x, r0[7] = -u * y, r0[8] = u;
        r1[3] = x, r1[4] = y, r1[5] = 1, r1[6] = -v * x, r1[7] = -v * y, r1[8] = v;
    }
    for (int c = 0; c < 8; ++c) {
        int piv = c;
        for (int r = c + 1; r < 8; ++r)
            if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
        if (std::abs(A[piv][c]) < 1e-14) throw GeometryError("degenerate perspective quad");
        for (int k = 0; k < 9; ++k) std::swap(A[c][k], A[piv][k]);
        for (int r = 0; r < 8; ++r) {
            if (r == c) continue;
            const double f = A[r][c] / A[c][c];
            for (int k = c; k < 9; ++k) A[r][k] -= f * A[c][k];
        }
    }
    Homography h{};
    for (int i = 0; i < 8; ++i) h[static_cast<std::size_t>(i)] = A[i][8] / A[i][i];
    h[8] = 1.0;
    return h;
}

/// Precomputed bilinear gather: output pixel i reads up to four input pixels.
struct WarpPlan {
    std::size_t height = 0, width = 0;
    std::vector<std::array<std::uint32_t, 4>> index;
    std::vector<std::array<double, 4>> weight;
};

inline WarpPlan make_warp(const AugmentParams& p, std::size_t H, std::size_t W) {
    std::array<Point, 4> quad{Point{0, 0}, Point{1, 0}, Point{1, 1}, Point{0, 1}};
    for (std::size_t i = 0; i < 4; ++i) quad[i] = quad[i] + p.jitter[i];
    const Homography h = square_to_quad(quad);
    WarpPlan plan{H, W, std::vector<std::array<std::uint32_t, 4>>(H * W), std::vector<std::array<double, 4>>(H * W)};
    for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
            const Point unit{(static_cast<double>(j) + 0.5) / static_cast<double>(W),
                             (static_cast<double>(i) + 0.5) / static_cast<double>(H)};
            const Point q = apply(h, unit);
            const double sx = (p.crop_origin.x + p.crop_scale * q.x) * static_cast<double>(W) - 0.5;
            const double sy = (p.crop_origin.y + p.crop_scale * q.y) * static_cast<double>(H) - 0.5;
            const double fx = std::floor(sx), fy = std::floor(sy);
            const double ax = sx - fx, ay = sy - fy;
            const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
            const std::size_t o = i * W + j;
            const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
            const std::int64_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
            const double ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
            for (int c = 0; c < 4; ++c) {
                const bool in = xs[c] >= 0 && ys[c] >= 0 && xs[c] < static_cast<std::int64_t>(W) &&
                                ys[c] < static_cast<std::int64_t>(H);
                plan.index[o][static_cast<std::size_t>(c)] =
                    in ? static_cast<std::uint32_t>(ys[c] * static_cast<std::int64_t>(W) + xs[c]) : 0U;
                plan.weight[o][static_cast<std::size_t>(c)] = in ? ws[c] : 0.0;
            }
        }
    return plan;
}

inline Raster warp_values(const Raster& img, const WarpPlan& plan) {
    Raster out(plan.height, plan.width);
    for (std::size_t o = 0; o < out.size(); ++o)
        for (std::size_t c = 0; c < 4; ++c) out[o] += plan.weight[o][c] * img[plan.index[o][c]];
    return out;
}

/// Differentiable warp of one H x W image.
inline ad::Var warp(ad::Var img, std::shared_ptr<const WarpPlan> plan) {
    if (img.rows() != plan->height || img.cols() != plan->width) throw Error("warp: image size mismatch");
    Raster out = warp_values(img.value(), *plan);
    const std::size_t ix = img.id();
    return img.tape()->record(std::move(out), {img}, [ix, plan](ad::Tape& t, std::size_t self) {
        const Tensor& g = t.upstream(self);
        Tensor* gx = t.grad_slot(ix);
        for (std::size_t o = 0; o < g.size(); ++o)
            for (std::size_t c = 0; c < 4; ++c) (*gx)[plan->index[o][c]] += plan->weight[o][c] * g[o];
    });
}

/// Applies one sampled augmentation to all frames (identity when disabled).
inline std::vector<ad::Var> augment(const std::vector<ad::Var>& frames, const AugmentParams& p, bool enabled) {
    if (!enabled || frames.empty()) return frames;
    auto plan = std::make_shared<const WarpPlan>(make_warp(p, frames[0].rows(), frames[0].cols()));
    std::vector<ad::Var> out;
    out.reserve(frames.size());
    for (const ad::Var& f : frames) out.push_back(warp(f, plan));
    return out;
}

} // namespace dyntypo

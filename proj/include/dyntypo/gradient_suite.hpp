#pragma once

// Finite-difference checks of the differentiable pipeline stages on a
// small seeded problem (a ring glyph at 32 x 32).

#include "dyntypo/autodiff.hpp"
#include "dyntypo/fields.hpp"
#include "dyntypo/geometry.hpp"
#include "dyntypo/glyph.hpp"
#include "dyntypo/losses.hpp"
#include "dyntypo/raster.hpp"
#include "dyntypo/rng.hpp"

#include <chrono>
#include <cmath>
#include <string>
#include <vector>

namespace dyntypo {

struct SuiteResult {
    std::string name;
    ad::GradCheckReport report;
    double seconds = 0.0;
};

namespace detail {

/// Two concentric cubic circles, even-odd filled.
inline GlyphPath ring_glyph(double size, double outer, double inner) {
    constexpr double k = 0.5522847498307936;
    auto circle = [&](double r, bool reverse) {
        const double c = 0.5 * size;
        const double s = reverse ? -1.0 : 1.0;
        Subpath sp;
        for (int q = 0; q < 4; ++q) {
            const double a0 = s * q * M_PI / 2, a1 = s * (q + 1) * M_PI / 2;
            const Point p0{c + r * std::cos(a0), c + r * std::sin(a0)};
            const Point p1{c + r * std::cos(a1), c + r * std::sin(a1)};
            const Point t0{-std::sin(a0) * s, std::cos(a0) * s}, t1{-std::sin(a1) * s, std::cos(a1) * s};
            sp.points.push_back(p0);
            sp.points.push_back(p0 + (k * r) * t0);
            sp.points.push_back(p1 - (k * r) * t1);
        }
        return sp;
    };
    GlyphPath g;
    g.canvas = {size, size};
    g.subpaths = {circle(outer, false), circle(inner, true)};
    return g;
}

inline Tensor jitter(const Tensor& t, double amount, Rng& rng) {
    Tensor out = t;
    for (double& v : out.data) v += rng.uniform(-amount, amount);
    return out;
}

inline Tensor random_tensor(std::size_t r, std::size_t c, double scale, Rng& rng) {
    Tensor t(r, c);
    for (double& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

struct SuiteProblem {
    GlyphPath glyph;
    Flattening flat;
    RasterOptions opt;
    Tensor points;
    TriMesh mesh;
};

inline SuiteProblem suite_problem(Rng& rng) {
    SuiteProblem p;
    p.glyph = subdivide(ring_glyph(32.0, 12.0, 6.5), 40);
    p.flat = flattening(p.glyph.topology(), 8);
    p.opt = RasterOptions::square(32, p.glyph.canvas);
    p.opt.softness = 1.5;
    p.points = jitter(to_tensor(p.glyph.flat_points()), 0.3, rng);
    p.mesh = delaunay(to_points(p.points));
    return p;
}

template <class F>
SuiteResult timed(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    SuiteResult r{name, f(), 0.0};
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

/// Replaces every parameter (including the zero output layer) with small
/// random values so that all of them carry gradient.
inline void randomize(Mlp& m, double scale, Rng& rng) {
    for (Tensor& t : m.params) t = random_tensor(t.rows, t.cols, scale, rng);
}

} // namespace detail

/// Rasterizer: random pixel weighting of the soft image w.r.t. control points.
inline SuiteResult check_raster_gradients(std::uint64_t seed = 1, std::size_t coords = 64) {
    Rng rng(seed);
    const auto p = detail::suite_problem(rng);
    const Tensor w = detail::random_tensor(p.opt.height, p.opt.width, 1.0, rng);
    return detail::timed("raster", [&] {
        return ad::finite_diff_check(
            [&](ad::Tape& t, std::span<const ad::Var> v) {
                return ad::sum(rasterize_points(v[0], p.flat, p.opt) * t.constant(w));
            },
            {p.points}, 1e-6, seed, coords);
    });
}

/// Legibility proxy of a perturbed base shape against the clean letter.
inline SuiteResult check_legibility_gradients(std::uint64_t seed = 2, std::size_t coords = 64) {
    Rng rng(seed);
    const auto p = detail::suite_problem(rng);
    const Raster letter = render(p.glyph, p.opt);
    const Tensor base = detail::jitter(p.points, 1.0, rng);
    return detail::timed("legibility", [&] {
        return ad::finite_diff_check(
            [&](ad::Tape&, std::span<const ad::Var> v) { return legibility_loss(v[0], letter, p.flat, p.opt); },
            {base}, 1e-6, seed, coords);
    });
}

/// Structure loss w.r.t. base and frame points.
inline SuiteResult check_structure_gradients(std::uint64_t seed = 3, std::size_t coords = 64) {
    Rng rng(seed);
    const auto p = detail::suite_problem(rng);
    const Tensor letter_angles = mesh_angle_values(p.mesh, to_points(p.points));
    const std::size_t k = 3;
    const Tensor base = detail::jitter(p.points, 0.5, rng);
    Tensor frames(k * p.points.rows, 2);
    for (std::size_t f = 0; f < k; ++f) {
        const Tensor fr = detail::jitter(base, 0.5, rng);
        std::copy(fr.data.begin(), fr.data.end(), frames.data.begin() + static_cast<std::ptrdiff_t>(f * fr.size()));
    }
    return detail::timed("structure", [&] {
        return ad::finite_diff_check(
            [&](ad::Tape&, std::span<const ad::Var> v) {
                return structure_loss(letter_angles, v[0], v[1], k, p.mesh, 1e3, 1e4);
            },
            {base, frames}, 1e-6, seed, coords);
    });
}

inline FieldParams suite_fields(Rng& rng) {
    FieldConfig cfg;
    cfg.spatial_bands = 3;
    cfg.time_bands = 2;
    cfg.hidden = 8;
    cfg.global_hidden = 6;
    FieldParams fp = FieldParams::create(cfg, rng);
    detail::randomize(fp.base_net, 0.5, rng);
    detail::randomize(fp.local_net, 0.5, rng);
    detail::randomize(fp.global_net, 0.5, rng);
    return fp;
}

/// Base field output, randomly weighted, w.r.t. base-net parameters.
inline SuiteResult check_base_field_gradients(std::uint64_t seed = 4, std::size_t coords = 64) {
    Rng rng(seed);
    const auto p = detail::suite_problem(rng);
    const FieldParams fp = suite_fields(rng);
    const Tensor w = detail::random_tensor(p.points.rows, 2, 1.0, rng);
    return detail::timed("base_field", [&] {
        return ad::finite_diff_check(
            [&](ad::Tape& t, std::span<const ad::Var> v) {
                FieldParams q = fp;
                FieldVars vars = FieldVars::bind(t, q, false);
                vars.base.assign(v.begin(), v.end());
                return ad::sum(base_field_forward(q, vars, t.constant(p.points), p.glyph.canvas) * t.constant(w));
            },
            fp.base_net.params, 1e-5, seed, coords);
    });
}

/// Motion field output at a partially annealed step, w.r.t. the local and
/// global parameters.
inline SuiteResult check_motion_field_gradients(std::uint64_t seed = 5, std::size_t coords = 64) {
    Rng rng(seed);
    const auto p = detail::suite_problem(rng);
    const FieldParams fp = suite_fields(rng);
    const std::size_t k = 3;
    const Tensor w = detail::random_tensor(k * p.points.rows, 2, 1.0, rng);
    std::vector<Tensor> params = fp.local_net.params;
    params.insert(params.end(), fp.global_net.params.begin(), fp.global_net.params.end());
    const std::size_t nl = fp.local_net.params.size();
    return detail::timed("motion_field", [&] {
        return ad::finite_diff_check(
            [&](ad::Tape& t, std::span<const ad::Var> v) {
                FieldVars vars = FieldVars::bind(t, fp, false);
                vars.local.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(nl));
                vars.global.assign(v.begin() + static_cast<std::ptrdiff_t>(nl), v.end());
                const MotionOutput m = motion_field_forward(fp, vars, t.constant(p.points), k, p.glyph.canvas, 7.0, 10.0);
                return ad::sum(m.frames * t.constant(w));
            },
            params, 1e-5, seed, coords);
    });
}

/// Suites grouped as the CLI exposes them: raster, losses, fields, all.
inline std::vector<SuiteResult> run_gradient_suites(const std::string& module) {
    std::vector<SuiteResult> out;
    const bool all = module == "all";
    if (!all && module != "raster" && module != "losses" && module != "fields")
        throw ConfigError("unknown gradient module '" + module + "'");
    if (all || module == "raster") out.push_back(check_raster_gradients());
    if (all || module == "losses") {
        out.push_back(check_legibility_gradients());
        out.push_back(check_structure_gradients());
    }
    if (all || module == "fields") {
        out.push_back(check_base_field_gradients());
        out.push_back(check_motion_field_gradients());
    }
    return out;
}

} // namespace dyntypo

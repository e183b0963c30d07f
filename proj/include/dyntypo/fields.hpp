#pragma once

// Coordinate networks: sinusoidal encoding with coarse-to-fine annealing, the
// base displacement field and the motion field (local + global affine).

#include "dyntypo/autodiff.hpp"
#include "dyntypo/glyph.hpp"
#include "dyntypo/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace dyntypo {

// ---------------------------------------------------------------------------
// Encoding

/// Band weights w_j = (1 - cos(pi * clamp(alpha - j, 0, 1))) / 2 with
/// alpha = L * iter / anneal_n.
inline std::vector<double> anneal_weights(double iter, double anneal_n, int bands) {
    const double alpha = bands * iter / anneal_n;
    std::vector<double> w(static_cast<std::size_t>(bands));
    for (int j = 0; j < bands; ++j)
        w[static_cast<std::size_t>(j)] = (1.0 - std::cos(std::numbers::pi * std::clamp(alpha - j, 0.0, 1.0))) / 2.0;
    return w;
}

struct EncodingConfig {
    int bands = 6;
    int anneal_n = 500;
    int current_iter = 0;
};

/// gamma(p) per coordinate, ordered (sin_0, cos_0, sin_1, cos_1, ...), with
/// optional annealing weights.
inline std::vector<double> positional_encode(std::span<const double> p, const EncodingConfig& cfg, bool annealed) {
    const auto L = static_cast<std::size_t>(cfg.bands);
    std::vector<double> w(L, 1.0);
    if (annealed) w = anneal_weights(cfg.current_iter, cfg.anneal_n, cfg.bands);
    std::vector<double> out;
    out.reserve(2 * L * p.size());
    for (double x : p)
        for (std::size_t j = 0; j < L; ++j) {
            const double f = std::ldexp(std::numbers::pi, static_cast<int>(j));
            out.push_back(w[j] * std::sin(f * x));
            out.push_back(w[j] * std::cos(f * x));
        }
    return out;
}

/// Differentiable encoding of an n x d input; column c uses bands[c] bands
/// scaled by weights[c] (one weight per band).
inline ad::Var positional_encode(ad::Var x, std::vector<int> bands, std::vector<std::vector<double>> weights) {
    const Tensor& X = x.value();
    if (bands.size() != X.cols || weights.size() != X.cols) throw Error("positional_encode: band spec mismatch");
    std::size_t width = 0;
    for (std::size_t c = 0; c < X.cols; ++c) width += 2 * static_cast<std::size_t>(bands[c]);
    Tensor out(X.rows, width);
    for (std::size_t r = 0; r < X.rows; ++r) {
        std::size_t o = 0;
        for (std::size_t c = 0; c < X.cols; ++c)
            for (int j = 0; j < bands[c]; ++j) {
                const double f = std::ldexp(std::numbers::pi, j);
                const double w = weights[c][static_cast<std::size_t>(j)];
                out(r, o++) = w * std::sin(f * X(r, c));
                out(r, o++) = w * std::cos(f * X(r, c));
            }
    }
    const std::size_t ix = x.id();
    return x.tape()->record(std::move(out), {x}, [ix, bands = std::move(bands), weights = std::move(weights),
                                                  width](ad::Tape& t, std::size_t self) {
        const Tensor& G = t.upstream(self);
        const Tensor& X = t.value(ix);
        Tensor* gx = t.grad_slot(ix);
        for (std::size_t r = 0; r < X.rows; ++r) {
            std::size_t o = 0;
            for (std::size_t c = 0; c < X.cols; ++c) {
                double acc = 0.0;
                for (int j = 0; j < bands[c]; ++j) {
                    const double f = std::ldexp(std::numbers::pi, j);
                    const double w = weights[c][static_cast<std::size_t>(j)];
                    acc += G[r * width + o] * w * f * std::cos(f * X(r, c));
                    acc -= G[r * width + o + 1] * w * f * std::sin(f * X(r, c));
                    o += 2;
                }
                (*gx)(r, c) += acc;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Networks

/// Fully connected tanh network with a linear output layer. Parameters are
/// stored as [W0, b0, W1, b1, ...], W as in x out.
struct Mlp {
    std::vector<Tensor> params;

    std::size_t layer_count() const { return params.size() / 2; }
    std::size_t input_width() const { return params.front().rows; }
    std::size_t output_width() const { return params.back().cols; }

    /// Glorot-uniform hidden layers; the output layer starts at zero so the
    /// network's displacement is identically zero.
    static Mlp create(std::span<const std::size_t> widths, Rng& rng) {
        Mlp m;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
            Tensor W(widths[l], widths[l + 1]);
            Tensor b(1, widths[l + 1]);
            if (l + 2 < widths.size()) {
                const double a = std::sqrt(6.0 / static_cast<double>(widths[l] + widths[l + 1]));
                for (double& v : W.data) v = rng.uniform(-a, a);
            }
            m.params.push_back(std::move(W));
            m.params.push_back(std::move(b));
        }
        return m;
    }
};

inline ad::Var mlp_forward(std::span<const ad::Var> params, ad::Var x) {
    const std::size_t layers = params.size() / 2;
    ad::Var h = x;
    for (std::size_t l = 0; l < layers; ++l) {
        h = ad::matmul(h, params[2 * l]) + params[2 * l + 1];
        if (l + 1 < layers) h = ad::tanh(h);
    }
    return h;
}

/// Multipliers mapping raw network outputs to affine parameters.
struct GlobalScaling {
    double translation = 2.0;
    double rotation = 1e-2;
    double scale = 5e-2;
    double shear = 1e-1;
};

struct FieldConfig {
    int spatial_bands = 6;
    int time_bands = 4;
    std::size_t hidden = 128;
    std::size_t global_hidden = 64;
    GlobalScaling scaling;
};

/// Raw per-frame global parameters, in this order.
enum GlobalSlot : std::size_t { kDx = 0, kDy, kRot, kSx, kSy, kShx, kShy, kGlobalSlots };

struct FieldParams {
    FieldConfig config;
    Mlp base_net;
    Mlp local_net;
    Mlp global_net;

    static FieldParams create(const FieldConfig& cfg, Rng& rng) {
        FieldParams fp;
        fp.config = cfg;
        const std::size_t h = cfg.hidden;
        const auto sb = static_cast<std::size_t>(cfg.spatial_bands), tb = static_cast<std::size_t>(cfg.time_bands);
        const std::array<std::size_t, 5> base{4 * sb, h, h, h, 2};
        const std::array<std::size_t, 5> local{4 * sb + 2 * tb, h, h, h, 2};
        const std::array<std::size_t, 3> global{2 * tb, cfg.global_hidden, kGlobalSlots};
        fp.base_net = Mlp::create(base, rng);
        fp.local_net = Mlp::create(local, rng);
        fp.global_net = Mlp::create(global, rng);
        return fp;
    }
};

/// Tape bindings of FieldParams for one optimization step.
struct FieldVars {
    std::vector<ad::Var> base, local, global;

    static FieldVars bind(ad::Tape& tape, const FieldParams& p, bool trainable = true) {
        FieldVars v;
        auto put = [&](const Mlp& m, std::vector<ad::Var>& out) {
            for (const Tensor& t : m.params) out.push_back(trainable ? tape.variable(t) : tape.constant(t));
        };
        put(p.base_net, v.base);
        put(p.local_net, v.local);
        put(p.global_net, v.global);
        return v;
    }
};

// ---------------------------------------------------------------------------
// Field evaluation

/// Maps canvas coordinates linearly to [-1, 1].
inline ad::Var canvas_to_unit(ad::Var pts, CanvasSize canvas) {
    ad::Tape& t = *pts.tape();
    ad::Var scale = t.constant(Tensor(1, 2, {2.0 / canvas.width, 2.0 / canvas.height}));
    return pts * scale - 1.0;
}

/// P_B = P_letter + base_net(gamma(P_letter)), full-weight encoding.
inline ad::Var base_field_forward(const FieldParams& params, const FieldVars& vars, ad::Var letter,
                                  CanvasSize canvas) {
    const int L = params.config.spatial_bands;
    const std::vector<double> ones(static_cast<std::size_t>(L), 1.0);
    ad::Var enc = positional_encode(canvas_to_unit(letter, canvas), {L, L}, {ones, ones});
    return letter + mlp_forward(vars.base, enc);
}

/// Global displacement of one point (canvas-centred coordinates):
/// [[sx, shx*sy, dx], [shy*sx, sy, dy]] * [[cos r, sin r], [-sin r, cos r]] * p - p.
inline Point global_transform(const std::array<double, kGlobalSlots>& raw, const GlobalScaling& s, Point p) {
    const double dx = s.translation * raw[kDx], dy = s.translation * raw[kDy];
    const double rot = s.rotation * raw[kRot];
    const double sx = 1.0 + s.scale * raw[kSx], sy = 1.0 + s.scale * raw[kSy];
    const double shx = s.shear * raw[kShx], shy = s.shear * raw[kShy];
    const double u = std::cos(rot) * p.x + std::sin(rot) * p.y;
    const double v = -std::sin(rot) * p.x + std::cos(rot) * p.y;
    return {sx * u + shx * sy * v + dx - p.x, shy * sx * u + sy * v + dy - p.y};
}

/// Differentiable version over rows: raw is n x 7, pts is n x 2 (centred).
inline ad::Var global_transform(ad::Var raw, const GlobalScaling& s, ad::Var pts) {
    using namespace ad;
    Var x = column(pts, 0), y = column(pts, 1);
    Var dx = column(raw, kDx) * s.translation, dy = column(raw, kDy) * s.translation;
    Var rot = column(raw, kRot) * s.rotation;
    Var sx = column(raw, kSx) * s.scale + 1.0, sy = column(raw, kSy) * s.scale + 1.0;
    Var shx = column(raw, kShx) * s.shear, shy = column(raw, kShy) * s.shear;
    Var c = cos(rot), sn = sin(rot);
    Var u = c * x + sn * y;
    Var v = c * y - sn * x;
    Var gx = sx * u + shx * sy * v + dx - x;
    Var gy = shy * sx * u + sy * v + dy - y;
    return concat_cols({gx, gy});
}

/// Normalized frame times t_f = f / (k - 1), or 0 for a single frame.
inline std::vector<double> frame_times(std::size_t k) {
    std::vector<double> t(k, 0.0);
    if (k > 1)
        for (std::size_t f = 0; f < k; ++f) t[f] = static_cast<double>(f) / static_cast<double>(k - 1);
    return t;
}

struct MotionOutput {
    ad::Var frames;     // (k * N) x 2, frame-major
    ad::Var local;      // (k * N) x 2
    ad::Var global_raw; // k x 7
};

/// P_V[t] = P_B + local(gamma(x, y, t)) + global(gamma(t)) with annealed
/// encodings at training iteration `iter` of horizon `anneal_n`.
inline MotionOutput motion_field_forward(const FieldParams& params, const FieldVars& vars, ad::Var base,
                                         std::size_t k, CanvasSize canvas, double iter, double anneal_n) {
    using namespace ad;
    if (k == 0) throw Error("motion_field_forward: frame count must be positive");
    Tape& tape = *base.tape();
    const std::size_t n = base.rows();
    const int Ls = params.config.spatial_bands, Lt = params.config.time_bands;
    const auto ws = anneal_weights(iter, anneal_n, Ls);
    const auto wt = anneal_weights(iter, anneal_n, Lt);
    const auto times = frame_times(k);

    Var tiled = tile_rows(base, k);
    Tensor tcol(k * n, 1);
    for (std::size_t f = 0; f < k; ++f)
        for (std::size_t i = 0; i < n; ++i) tcol[f * n + i] = times[f];
    Var local_in = positional_encode(concat_cols({canvas_to_unit(tiled, canvas), tape.constant(tcol)}),
                                     {Ls, Ls, Lt}, {ws, ws, wt});
    Var local = mlp_forward(vars.local, local_in);

    Tensor tframe(k, 1, times);
    Var global_in = positional_encode(tape.constant(tframe), {Lt}, {wt});
    Var raw = mlp_forward(vars.global, global_in);
    Var center = tape.constant(Tensor(1, 2, {0.5 * canvas.width, 0.5 * canvas.height}));
    Var global = global_transform(repeat_each_row(raw, n), params.config.scaling, tiled - center);

    return {tiled + local + global, local, raw};
}

} // namespace dyntypo

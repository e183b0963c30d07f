#pragma once

// Legibility and structure-preservation regularizers and total-loss assembly.

#include "dyntypo/autodiff.hpp"
#include "dyntypo/geometry.hpp"
#include "dyntypo/raster.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace dyntypo {

struct LossWeights {
    double w_legibility = 5e3;
    double lambda1 = 1e3;
    double lambda2 = 1e4;
    double w_sds = 1.0;
};

inline constexpr std::array<std::size_t, 4> kProxyScales{1, 2, 4, 8};

/// Average pooling with s x s blocks; trailing partial blocks average over
/// the pixels they contain.
inline ad::Var avg_pool(ad::Var img, std::size_t s) {
    if (s == 1) return img;
    const Tensor& X = img.value();
    const std::size_t H = X.rows, W = X.cols;
    const std::size_t h = (H + s - 1) / s, w = (W + s - 1) / s;
    std::vector<double> inv_count(h * w);
    Tensor out(h, w);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const std::size_t ih = std::min(H, (i + 1) * s), jh = std::min(W, (j + 1) * s);
            double acc = 0.0;
            for (std::size_t a = i * s; a < ih; ++a)
                for (std::size_t b = j * s; b < jh; ++b) acc += X(a, b);
            inv_count[i * w + j] = 1.0 / static_cast<double>((ih - i * s) * (jh - j * s));
            out(i, j) = acc * inv_count[i * w + j];
        }
    const std::size_t ix = img.id();
    return img.tape()->record(std::move(out), {img}, [ix, s, w, inv_count = std::move(inv_count)](ad::Tape& t,
                                                                                                 std::size_t self) {
        const Tensor& g = t.upstream(self);
        Tensor* gx = t.grad_slot(ix);
        for (std::size_t a = 0; a < gx->rows; ++a)
            for (std::size_t b = 0; b < gx->cols; ++b) {
                const std::size_t o = (a / s) * w + b / s;
                (*gx)(a, b) += g[o] * inv_count[o];
            }
    });
}

/// Multi-scale blurred L2: mean over scales {1, 2, 4, 8} of the mean squared
/// difference of average-pooled images.
inline ad::Var perceptual_proxy(ad::Var a, ad::Var b) {
    if (!a.value().same_shape(b.value())) throw Error("perceptual_proxy: resolution mismatch");
    ad::Var total;
    for (std::size_t s : kProxyScales) {
        ad::Var d = avg_pool(a, s) - avg_pool(b, s);
        ad::Var term = ad::sum_squares(d) * (1.0 / static_cast<double>(d.value().size()));
        total = total.valid() ? total + term : term;
    }
    return total * (1.0 / static_cast<double>(kProxyScales.size()));
}

inline double perceptual_proxy(const Raster& a, const Raster& b) {
    ad::Tape tape;
    return perceptual_proxy(tape.constant(a), tape.constant(b)).item();
}

/// Perceptual distance between the rendered base shape and the letter image.
inline ad::Var legibility_loss(ad::Var base_points, const Raster& letter_image, const Flattening& f,
                               const RasterOptions& opt) {
    ad::Var img = rasterize_points(base_points, f, opt);
    return perceptual_proxy(img, base_points.tape()->constant(letter_image));
}

/// lambda1 * mean_i ||T_letter - T_B||^2
///   + lambda2 / (k m) * sum_{t=1..k} sum_i ||T_{t+1} - T_t||^2,
/// where frame k + 1 is the base shape. Angle differences are wrapped to
/// (-pi, pi].
inline ad::Var structure_loss(const Tensor& letter_angles, ad::Var base, ad::Var frames, std::size_t k,
                              const TriMesh& mesh, double lambda1, double lambda2) {
    if (k == 0) throw Error("structure_loss: frame count must be positive");
    ad::Tape& tape = *base.tape();
    const std::size_t n = base.rows();
    const double m = static_cast<double>(mesh.size());
    if (mesh.size() == 0) throw Error("structure_loss: empty mesh");
    ad::Var base_angles = mesh_angles(mesh, base);
    ad::Var term1 = ad::sum_squares(wrap_angle(tape.constant(letter_angles) - base_angles)) * (lambda1 / m);

    std::vector<ad::Var> angles;
    angles.reserve(k + 1);
    for (std::size_t t = 0; t < k; ++t) angles.push_back(mesh_angles(mesh, ad::slice_rows(frames, t * n, n)));
    angles.push_back(base_angles);
    std::vector<ad::Var> diffs;
    diffs.reserve(k);
    for (std::size_t t = 0; t < k; ++t) diffs.push_back(wrap_angle(angles[t + 1] - angles[t]));
    ad::Var term2 = ad::sum_squares(ad::concat_rows(diffs)) * (lambda2 / (static_cast<double>(k) * m));
    return term1 + term2;
}

/// Linear ramp over the first half of training.
inline double legibility_ramp(double iter, double total_iters) {
    if (total_iters <= 0.0) return 1.0;
    return std::clamp(iter / (0.5 * total_iters), 0.0, 1.0);
}

inline ad::Var total_loss(ad::Var sds_term, ad::Var legibility, ad::Var structure, const LossWeights& w,
                          double iter, double total_iters) {
    return sds_term * w.w_sds + legibility * (legibility_ramp(iter, total_iters) * w.w_legibility) + structure;
}

} // namespace dyntypo

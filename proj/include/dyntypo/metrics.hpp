#pragma once

// Desk-scale evaluation proxies. Their absolute values are not comparable
// with pretrained-network metrics; use them for relative comparisons.

#include "dyntypo/error.hpp"
#include "dyntypo/geometry.hpp"
#include "dyntypo/losses.hpp"

#include <cmath>
#include <vector>

namespace dyntypo {

inline double mse(const Raster& a, const Raster& b) {
    if (!a.same_shape(b)) throw Error("mse: resolution mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

/// Mean over frames of exp(-perceptual_proxy(frame, letter)); 1 = identical.
inline double conformity_proxy(const std::vector<Raster>& frames, const Raster& letter) {
    if (frames.empty()) throw Error("conformity_proxy: no frames");
    double s = 0.0;
    for (const Raster& f : frames) s += std::exp(-perceptual_proxy(f, letter));
    return s / static_cast<double>(frames.size());
}

/// Mean adjacent-frame MSE; 0 = static.
inline double temporal_consistency_proxy(const std::vector<Raster>& frames) {
    if (frames.size() < 2) throw Error("temporal_consistency_proxy: need at least 2 frames");
    double s = 0.0;
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) s += mse(frames[t], frames[t + 1]);
    return s / static_cast<double>(frames.size() - 1);
}

/// Mean absolute angle difference (radians) between each frame's mesh
/// angles and the reference angles, differences wrapped to (-pi, pi].
inline double mean_angle_deviation(const std::vector<Tensor>& frame_angles, const Tensor& reference) {
    if (frame_angles.empty()) throw Error("mean_angle_deviation: no frames");
    double s = 0.0;
    std::size_t n = 0;
    for (const Tensor& a : frame_angles) {
        if (!a.same_shape(reference)) throw Error("mean_angle_deviation: shape mismatch");
        for (std::size_t i = 0; i < a.size(); ++i, ++n) s += std::abs(wrap_angle(a[i] - reference[i]));
    }
    return s / static_cast<double>(n);
}

} // namespace dyntypo

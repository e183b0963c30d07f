#pragma once

// Score-distillation guidance: diffusion noising, the pixel-gradient backend
// contract, the closed-form surrogate backend and the external wire client.

#include "dyntypo/autodiff.hpp"
#include "dyntypo/error.hpp"
#include "dyntypo/net.hpp"
#include "dyntypo/raster.hpp"
#include "dyntypo/rng.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dyntypo {

using FrameBatch = std::vector<Raster>;

struct NoiseSchedule {
    int steps = 1000;
    double alpha_bar_first = 0.9999;
    double alpha_bar_last = 0.01;
    double tau_min_fraction = 0.05;
    double tau_max_fraction = 0.95;

    void check(int tau) const {
        if (tau < 1 || tau > steps) throw Error("diffusion step " + std::to_string(tau) + " outside [1, T]");
    }

    /// Cumulative signal retention, linear in tau.
    double alpha_bar(int tau) const {
        check(tau);
        if (steps == 1) return alpha_bar_first;
        return alpha_bar_first + (alpha_bar_last - alpha_bar_first) * (tau - 1) / static_cast<double>(steps - 1);
    }
    double alpha(int tau) const { return std::sqrt(alpha_bar(tau)); }
    double sigma(int tau) const { return std::sqrt(1.0 - alpha_bar(tau)); }

    int tau_min() const { return static_cast<int>(std::ceil(tau_min_fraction * steps)); }
    int tau_max() const { return static_cast<int>(std::floor(tau_max_fraction * steps)); }
    int sample_tau(Rng& rng) const { return static_cast<int>(rng.uniform_int(tau_min(), tau_max())); }
};

enum class TauWeighting { unit, sigma_squared };

inline double tau_weight(TauWeighting w, const NoiseSchedule& s, int tau) {
    return w == TauWeighting::unit ? 1.0 : s.sigma(tau) * s.sigma(tau);
}

/// z = alpha_tau x + sigma_tau eps.
inline Raster noise_image(const Raster& x, int tau, const NoiseSchedule& sched, const Raster& eps) {
    if (!x.same_shape(eps)) throw Error("noise_image: noise shape mismatch");
    const double a = sched.alpha(tau), s = sched.sigma(tau);
    Raster z(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = a * x[i] + s * eps[i];
    return z;
}

/// The noise that maps `target` to z: (z - alpha target) / sigma.
inline Raster surrogate_denoiser(const Raster& z, int tau, const NoiseSchedule& sched, const Raster& target) {
    if (!z.same_shape(target)) throw Error("surrogate_denoiser: target shape mismatch");
    const double a = sched.alpha(tau), s = sched.sigma(tau);
    if (s == 0.0) throw Error("surrogate_denoiser: sigma is zero");
    Raster e(z.rows, z.cols);
    for (std::size_t i = 0; i < z.size(); ++i) e[i] = (z[i] - a * target[i]) / s;
    return e;
}

/// d L_SDS / d pixel for each frame, weighting already applied.
struct GuidanceGrad {
    FrameBatch grads;
    std::string backend;
    int tau = 0;
};

/// Per-request inputs beyond the frames.
struct GuidanceContext {
    std::string prompt;
    std::optional<int> tau;       // engine-chosen step, or nullopt to delegate
    const FrameBatch* noise = nullptr;
    std::uint64_t seed = 0;
    // Geometric view applied to the frames before guidance; backends that
    // hold reference imagery apply it to their references as well.
    std::function<Raster(const Raster&)> view;
};

class GuidanceBackend {
public:
    virtual ~GuidanceBackend() = default;
    virtual std::string id() const = 0;
    /// True when the engine must supply epsilon draws (local backends).
    virtual bool wants_noise() const = 0;
    virtual GuidanceGrad pixel_grad(const FrameBatch& frames, const GuidanceContext& ctx) = 0;
};

/// Closed-form stand-in for a frozen denoiser: predicts the noise that would
/// have produced z from a fixed target video, so w (eps_hat - eps) equals
/// w (alpha / sigma) (x - target).
class SurrogateBackend : public GuidanceBackend {
public:
    SurrogateBackend(FrameBatch targets, NoiseSchedule sched = {}, TauWeighting weighting = TauWeighting::unit)
        : targets_(std::move(targets)), sched_(sched), weighting_(weighting) {}

    /// Adds zero-mean Gaussian error of standard deviation `stddev` to every
    /// predicted noise value, drawn from a private stream seeded with `seed`.
    /// Mimics an imperfect denoiser; 0 keeps the prediction exact.
    void set_prediction_noise(double stddev, std::uint64_t seed) {
        prediction_noise_ = stddev;
        noise_rng_ = Rng(seed);
    }

    std::string id() const override { return "surrogate"; }
    bool wants_noise() const override { return true; }
    const FrameBatch& targets() const { return targets_; }

    GuidanceGrad pixel_grad(const FrameBatch& frames, const GuidanceContext& ctx) override {
        if (!ctx.tau) throw Error("surrogate backend requires an engine-chosen tau");
        if (!ctx.noise || ctx.noise->size() != frames.size()) throw Error("surrogate backend requires noise per frame");
        if (frames.size() != targets_.size()) throw Error("surrogate backend: frame count does not match target");
        const int tau = *ctx.tau;
        const double w = tau_weight(weighting_, sched_, tau);
        GuidanceGrad out{{}, id(), tau};
        for (std::size_t f = 0; f < frames.size(); ++f) {
            const Raster target = ctx.view ? ctx.view(targets_[f]) : targets_[f];
            const Raster& eps = (*ctx.noise)[f];
            const Raster z = noise_image(frames[f], tau, sched_, eps);
            const Raster eps_hat = surrogate_denoiser(z, tau, sched_, target);
            Raster g(eps.rows, eps.cols);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double err = prediction_noise_ > 0.0 ? prediction_noise_ * noise_rng_.normal() : 0.0;
                g[i] = w * (eps_hat[i] + err - eps[i]);
            }
            out.grads.push_back(std::move(g));
        }
        return out;
    }

private:
    FrameBatch targets_;
    NoiseSchedule sched_;
    TauWeighting weighting_;
    double prediction_noise_ = 0.0;
    Rng noise_rng_{0};
};

// ---------------------------------------------------------------------------
// Wire protocol: one JSON object per line.

namespace wire {

inline constexpr int kVersion = 1;

inline void append_number(std::string& out, float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    out += buf;
}

inline void append_array(std::string& out, const FrameBatch& frames) {
    out += '[';
    bool first = true;
    for (const Raster& f : frames)
        for (double v : f.data) {
            if (!first) out += ',';
            first = false;
            append_number(out, static_cast<float>(v));
        }
    out += ']';
}

inline std::string shape_text(std::size_t k, std::size_t h, std::size_t w) {
    return "[" + std::to_string(k) + "," + std::to_string(h) + "," + std::to_string(w) + "]";
}

struct Request {
    std::string prompt;
    std::size_t k = 0, height = 0, width = 0;
    FrameBatch frames;
    std::optional<int> tau;
    std::uint64_t seed = 0;
};

struct Response {
    std::size_t k = 0, height = 0, width = 0;
    FrameBatch grads;
    int tau_used = 0;
    std::string backend;
};

inline std::string encode_request(const FrameBatch& frames, const std::string& prompt, std::optional<int> tau,
                                  std::uint64_t seed) {
    if (frames.empty()) throw ProtocolError("encode_request: no frames");
    const std::size_t h = frames[0].rows, w = frames[0].cols;
    for (const Raster& f : frames)
        if (f.rows != h || f.cols != w) throw ProtocolError("encode_request: frames differ in size");
    std::string out = "{\"version\":" + std::to_string(kVersion) + ",\"prompt\":" + nlohmann::json(prompt).dump() +
                      ",\"shape\":" + shape_text(frames.size(), h, w) + ",\"frames\":";
    append_array(out, frames);
    out += ",\"tau\":";
    out += tau ? std::to_string(*tau) : "null";
    out += ",\"seed\":" + std::to_string(seed) + "}";
    return out;
}

inline std::string encode_response(const FrameBatch& grads, int tau_used, const std::string& backend) {
    if (grads.empty()) throw ProtocolError("encode_response: no frames");
    std::string out = "{\"version\":" + std::to_string(kVersion) + ",\"shape\":" +
                      shape_text(grads.size(), grads[0].rows, grads[0].cols) + ",\"grads\":";
    append_array(out, grads);
    out += ",\"tau_used\":" + std::to_string(tau_used) + ",\"backend\":" + nlohmann::json(backend).dump() + "}";
    return out;
}

inline std::string encode_error(const std::string& message) {
    return "{\"version\":" + std::to_string(kVersion) + ",\"error\":" + nlohmann::json(message).dump() + "}";
}

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j, const char* name, const std::string& raw) {
    if (!j.is_object() || !j.contains(name)) throw ProtocolError(std::string("missing field '") + name + "'", raw);
    return j.at(name);
}

inline nlohmann::json parse(const std::string& line) {
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ProtocolError(std::string("malformed message: ") + e.what(), line);
    }
}

inline std::array<std::size_t, 3> shape(const nlohmann::json& j, const std::string& raw) {
    const auto& s = field(j, "shape", raw);
    if (!s.is_array() || s.size() != 3) throw ProtocolError("field 'shape' must be [k,H,W]", raw);
    std::array<std::size_t, 3> out{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!s[i].is_number_integer() || s[i].get<long long>() <= 0)
            throw ProtocolError("field 'shape' must hold positive integers", raw);
        out[i] = s[i].get<std::size_t>();
    }
    return out;
}

inline FrameBatch frames(const nlohmann::json& arr, std::array<std::size_t, 3> shp, const char* name,
                         const std::string& raw) {
    if (!arr.is_array()) throw ProtocolError(std::string("field '") + name + "' must be an array", raw);
    const std::size_t per = shp[1] * shp[2];
    if (arr.size() != shp[0] * per)
        throw ProtocolError(std::string("field '") + name + "' length does not match shape", raw);
    FrameBatch out(shp[0], Raster(shp[1], shp[2]));
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) throw ProtocolError(std::string("non-numeric entry in '") + name + "'", raw);
        const double v = static_cast<double>(static_cast<float>(arr[i].get<double>()));
        if (!std::isfinite(v)) throw ProtocolError(std::string("non-finite entry in '") + name + "'", raw);
        out[i / per][i % per] = v;
    }
    return out;
}

inline void check_version(const nlohmann::json& j, const std::string& raw) {
    const auto& v = field(j, "version", raw);
    if (!v.is_number_integer() || v.get<int>() != kVersion) throw ProtocolError("unsupported protocol version", raw);
}

} // namespace detail

inline Request decode_request(const std::string& line) {
    const auto j = detail::parse(line);
    detail::check_version(j, line);
    Request r;
    const auto& prompt = detail::field(j, "prompt", line);
    if (!prompt.is_string()) throw ProtocolError("field 'prompt' must be a string", line);
    r.prompt = prompt.get<std::string>();
    const auto shp = detail::shape(j, line);
    r.k = shp[0], r.height = shp[1], r.width = shp[2];
    r.frames = detail::frames(detail::field(j, "frames", line), shp, "frames", line);
    const auto& tau = detail::field(j, "tau", line);
    if (!tau.is_null()) {
        if (!tau.is_number_integer()) throw ProtocolError("field 'tau' must be an integer or null", line);
        r.tau = tau.get<int>();
    }
    const auto& seed = detail::field(j, "seed", line);
    if (!seed.is_number_integer()) throw ProtocolError("field 'seed' must be an integer", line);
    r.seed = seed.get<std::uint64_t>();
    return r;
}

/// Decodes a reply; `expected` is the submitted [k, H, W] and must be echoed.
inline Response decode_response(const std::string& line, std::optional<std::array<std::size_t, 3>> expected = {}) {
    const auto j = detail::parse(line);
    if (j.is_object() && j.contains("error")) throw ProtocolError("backend error: " + j["error"].dump(), line);
    detail::check_version(j, line);
    Response r;
    const auto shp = detail::shape(j, line);
    if (expected && *expected != shp) throw ProtocolError("response shape does not match request", line);
    r.k = shp[0], r.height = shp[1], r.width = shp[2];
    r.grads = detail::frames(detail::field(j, "grads", line), shp, "grads", line);
    const auto& tau = detail::field(j, "tau_used", line);
    if (!tau.is_number_integer()) throw ProtocolError("field 'tau_used' must be an integer", line);
    r.tau_used = tau.get<int>();
    const auto& backend = detail::field(j, "backend", line);
    if (!backend.is_string()) throw ProtocolError("field 'backend' must be a string", line);
    r.backend = backend.get<std::string>();
    return r;
}

} // namespace wire

/// Client for a guidance server speaking the line protocol.
class ExternalBackend : public GuidanceBackend {
public:
    ExternalBackend(std::string host, int port, std::chrono::milliseconds timeout = std::chrono::seconds(120))
        : host_(std::move(host)), port_(port), timeout_(timeout) {}

    std::string id() const override { return "external:" + host_ + ":" + std::to_string(port_); }
    bool wants_noise() const override { return false; }

    GuidanceGrad pixel_grad(const FrameBatch& frames, const GuidanceContext& ctx) override {
        if (!sock_.valid()) sock_ = net::Socket::connect(host_, port_, timeout_);
        sock_.send_line(wire::encode_request(frames, ctx.prompt, ctx.tau, ctx.seed));
        std::string line;
        if (!sock_.recv_line(line)) {
            sock_.close();
            throw ProtocolError("guidance server closed the connection");
        }
        const std::array<std::size_t, 3> shape{frames.size(), frames[0].rows, frames[0].cols};
        auto resp = wire::decode_response(line, shape);
        return {std::move(resp.grads), resp.backend, resp.tau_used};
    }

private:
    std::string host_;
    int port_;
    std::chrono::milliseconds timeout_;
    net::Socket sock_;
};

/// Protocol-conformance server: replies with zeros, a constant, or the
/// submitted frames themselves ("echo").
struct MockGuidance {
    enum class Mode { zero, constant, echo };
    Mode mode = Mode::zero;
    double value = 0.0;

    std::string handle(const std::string& line) const {
        wire::Request req;
        try {
            req = wire::decode_request(line);
        } catch (const ProtocolError& e) {
            return wire::encode_error(e.what());
        }
        FrameBatch out = req.frames;
        if (mode != Mode::echo)
            for (Raster& f : out) std::fill(f.data.begin(), f.data.end(), mode == Mode::zero ? 0.0 : value);
        return wire::encode_response(out, req.tau.value_or(0), "mock");
    }

    /// Serves connections one at a time until `max_connections` have closed
    /// (0 = forever).
    void serve(net::Listener& listener, std::size_t max_connections = 0) const {
        for (std::size_t served = 0; max_connections == 0 || served < max_connections; ++served) {
            net::Socket conn = listener.accept();
            std::string line;
            try {
                while (conn.recv_line(line)) conn.send_line(handle(line));
            } catch (const ProtocolError&) {
                // Peer went away mid-message; wait for the next connection.
            }
        }
    }
};

/// Samples tau and the noise (or a noise seed for remote backends) from
/// `rng` in that order and returns the backend's pixel gradient.
struct SdsRequest {
    int tau = 0;
    FrameBatch noise;
    std::uint64_t seed = 0;
};

inline SdsRequest draw_sds_request(const FrameBatch& frames, const GuidanceBackend& backend,
                                   const NoiseSchedule& sched, Rng& rng) {
    SdsRequest r;
    r.tau = sched.sample_tau(rng);
    if (backend.wants_noise()) {
        for (const Raster& f : frames) {
            Raster e(f.rows, f.cols);
            for (double& v : e.data) v = rng.normal();
            r.noise.push_back(std::move(e));
        }
    } else {
        r.seed = rng.next_u64() >> 1;
    }
    return r;
}

inline GuidanceGrad sds_pixel_grad(const FrameBatch& frames, GuidanceBackend& backend, const std::string& prompt,
                                   const SdsRequest& req, std::function<Raster(const Raster&)> view = {},
                                   bool delegate_tau = false) {
    GuidanceContext ctx;
    ctx.prompt = prompt;
    if (!delegate_tau) ctx.tau = req.tau;
    ctx.noise = req.noise.empty() ? nullptr : &req.noise;
    ctx.seed = req.seed;
    ctx.view = std::move(view);
    GuidanceGrad g = backend.pixel_grad(frames, ctx);
    if (g.grads.size() != frames.size()) throw ProtocolError("guidance returned the wrong frame count");
    for (std::size_t f = 0; f < frames.size(); ++f) {
        if (!g.grads[f].same_shape(frames[f])) throw ProtocolError("guidance returned the wrong frame shape");
        if (!g.grads[f].all_finite()) throw ProtocolError("guidance returned non-finite gradients");
    }
    return g;
}

inline GuidanceGrad sds_pixel_grad(const FrameBatch& frames, GuidanceBackend& backend, const std::string& prompt,
                                   const NoiseSchedule& sched, Rng& rng) {
    return sds_pixel_grad(frames, backend, prompt, draw_sds_request(frames, backend, sched, rng));
}

/// A scalar node of value zero whose adjoint adds upstream * grad to x, so
/// an externally computed gradient enters the backward pass without touching
/// the loss value.
inline ad::Var inject_gradient(ad::Var x, Tensor grad) {
    if (!grad.same_shape(x.value())) throw Error("inject_gradient: shape mismatch");
    const std::size_t ix = x.id();
    return x.tape()->record(Tensor::scalar(0.0), {x}, [ix, grad = std::move(grad)](ad::Tape& t, std::size_t self) {
        const double up = t.upstream(self)[0];
        Tensor* gx = t.grad_slot(ix);
        for (std::size_t i = 0; i < grad.size(); ++i) (*gx)[i] += up * grad[i];
    });
}

} // namespace dyntypo

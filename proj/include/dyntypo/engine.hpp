#pragma once

// Joint optimization of the base and motion fields under score-distillation
// guidance plus legibility and structure regularization.
//
// Per iteration (1-based number n):
//   base field -> motion field -> rasterize frames -> draw tau, eps
//   -> draw crop, perspective -> augment -> inject SDS pixel gradients
//   -> legibility(base) + structure -> backward -> Adam.
// Odd n update base + local; even n update base + global.

#include "dyntypo/adam.hpp"
#include "dyntypo/augment.hpp"
#include "dyntypo/fields.hpp"
#include "dyntypo/geometry.hpp"
#include "dyntypo/guidance.hpp"
#include "dyntypo/io_export.hpp"
#include "dyntypo/losses.hpp"
#include "dyntypo/metrics.hpp"
#include "dyntypo/raster.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dyntypo {

struct GuidanceConfig {
    std::string backend = "surrogate"; // surrogate | external
    std::string target;                // surrogate: target glyph (file or path data)
    std::string host = "127.0.0.1";
    int port = 0;
    double timeout_s = 120.0;
    bool delegate_tau = false;
    std::string weighting = "unit"; // unit | sigma2
    NoiseSchedule schedule;
};

struct EncodingSettings {
    int spatial_bands = 6;
    int time_bands = 4;
    int anneal_n = 0; // 0: half of the iterations
};

struct TrainConfig {
    int iterations = 1000;
    int frames = 24;
    int resolution = 256;
    double lr_base = 5e-3;
    double lr_local = 5e-3;
    double lr_global = 1e-3;
    AdamConfig adam;
    LossWeights weights;
    EncodingSettings encoding;
    std::size_t hidden = 128;
    std::size_t global_hidden = 64;
    GlobalScaling scaling;
    std::uint64_t seed = 0;
    std::string prompt;
    GuidanceConfig guidance;
    AugmentConfig augmentation;
    int checkpoint_interval = 0; // 0: only the final checkpoint
    std::size_t min_points = 75;
    double softness = 1.0;
    int flatten_n = 8;

    /// 64 x 64, 8 frames, 300 iterations, 4 bands.
    static TrainConfig desk_scale() {
        TrainConfig c;
        c.iterations = 300;
        c.frames = 8;
        c.resolution = 64;
        c.encoding.spatial_bands = 4;
        c.encoding.time_bands = 4;
        return c;
    }

    int anneal_horizon() const { return encoding.anneal_n > 0 ? encoding.anneal_n : std::max(1, iterations / 2); }

    void validate() const {
        if (iterations < 1) throw ConfigError("iterations must be >= 1");
        if (frames < 1) throw ConfigError("frames must be >= 1");
        if (resolution < 8) throw ConfigError("resolution must be >= 8");
        if (!(lr_base > 0 && lr_local > 0 && lr_global > 0)) throw ConfigError("learning rates must be > 0");
        if (weights.w_legibility < 0 || weights.lambda1 < 0 || weights.lambda2 < 0 || weights.w_sds < 0)
            throw ConfigError("loss weights must be >= 0");
        if (encoding.spatial_bands < 1 || encoding.time_bands < 1) throw ConfigError("band counts must be >= 1");
        if (!(softness > 0)) throw ConfigError("softness must be > 0");
        if (flatten_n < 2) throw ConfigError("flatten_n must be >= 2");
        if (guidance.backend != "surrogate" && guidance.backend != "external")
            throw ConfigError("guidance.backend must be 'surrogate' or 'external'");
        if (guidance.weighting != "unit" && guidance.weighting != "sigma2")
            throw ConfigError("guidance.weighting must be 'unit' or 'sigma2'");
    }
};

// ---------------------------------------------------------------------------
// Config (de)serialization. Keys mirror the struct field names.

namespace detail {

using json = nlohmann::json;

template <class T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : keys) known = known || it.key() == k;
        if (!known) throw ConfigError("unknown config key '" + where + it.key() + "'");
    }
}

} // namespace detail

inline nlohmann::json to_json(const TrainConfig& c) {
    const auto& s = c.guidance.schedule;
    return {{"iterations", c.iterations},
            {"frames", c.frames},
            {"resolution", c.resolution},
            {"lr_base", c.lr_base},
            {"lr_local", c.lr_local},
            {"lr_global", c.lr_global},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
            {"weights",
             {{"w_legibility", c.weights.w_legibility},
              {"lambda1", c.weights.lambda1},
              {"lambda2", c.weights.lambda2},
              {"w_sds", c.weights.w_sds}}},
            {"encoding",
             {{"spatial_bands", c.encoding.spatial_bands},
              {"time_bands", c.encoding.time_bands},
              {"anneal_n", c.encoding.anneal_n}}},
            {"hidden", c.hidden},
            {"global_hidden", c.global_hidden},
            {"scaling",
             {{"translation", c.scaling.translation},
              {"rotation", c.scaling.rotation},
              {"scale", c.scaling.scale},
              {"shear", c.scaling.shear}}},
            {"seed", c.seed},
            {"prompt", c.prompt},
            {"guidance",
             {{"backend", c.guidance.backend},
              {"target", c.guidance.target},
              {"host", c.guidance.host},
              {"port", c.guidance.port},
              {"timeout_s", c.guidance.timeout_s},
              {"delegate_tau", c.guidance.delegate_tau},
              {"weighting", c.guidance.weighting},
              {"schedule",
               {{"steps", s.steps},
                {"alpha_bar_first", s.alpha_bar_first},
                {"alpha_bar_last", s.alpha_bar_last},
                {"tau_min_fraction", s.tau_min_fraction},
                {"tau_max_fraction", s.tau_max_fraction}}}}},
            {"augmentation",
             {{"enabled", c.augmentation.enabled},
              {"min_crop_scale", c.augmentation.min_crop_scale},
              {"max_corner_jitter", c.augmentation.max_corner_jitter}}},
            {"checkpoint_interval", c.checkpoint_interval},
            {"min_points", c.min_points},
            {"softness", c.softness},
            {"flatten_n", c.flatten_n}};
}

/// Overlays the keys present in `j` onto `base`.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    using detail::take;
    try {
        detail::reject_unknown(j,
                               {"iterations", "frames", "resolution", "lr_base", "lr_local", "lr_global", "adam",
                                "weights", "encoding", "hidden", "global_hidden", "scaling", "seed", "prompt",
                                "guidance", "augmentation", "checkpoint_interval", "min_points", "softness",
                                "flatten_n"},
                               "");
        take(j, "iterations", c.iterations);
        take(j, "frames", c.frames);
        take(j, "resolution", c.resolution);
        take(j, "lr_base", c.lr_base);
        take(j, "lr_local", c.lr_local);
        take(j, "lr_global", c.lr_global);
        if (j.contains("adam")) {
            const auto& a = j["adam"];
            detail::reject_unknown(a, {"beta1", "beta2", "eps"}, "adam.");
            take(a, "beta1", c.adam.beta1);
            take(a, "beta2", c.adam.beta2);
            take(a, "eps", c.adam.eps);
        }
        if (j.contains("weights")) {
            const auto& w = j["weights"];
            detail::reject_unknown(w, {"w_legibility", "lambda1", "lambda2", "w_sds"}, "weights.");
            take(w, "w_legibility", c.weights.w_legibility);
            take(w, "lambda1", c.weights.lambda1);
            take(w, "lambda2", c.weights.lambda2);
            take(w, "w_sds", c.weights.w_sds);
        }
        if (j.contains("encoding")) {
            const auto& e = j["encoding"];
            detail::reject_unknown(e, {"spatial_bands", "time_bands", "anneal_n"}, "encoding.");
            take(e, "spatial_bands", c.encoding.spatial_bands);
            take(e, "time_bands", c.encoding.time_bands);
            take(e, "anneal_n", c.encoding.anneal_n);
        }
        take(j, "hidden", c.hidden);
        take(j, "global_hidden", c.global_hidden);
        if (j.contains("scaling")) {
            const auto& s = j["scaling"];
            detail::reject_unknown(s, {"translation", "rotation", "scale", "shear"}, "scaling.");
            take(s, "translation", c.scaling.translation);
            take(s, "rotation", c.scaling.rotation);
            take(s, "scale", c.scaling.scale);
            take(s, "shear", c.scaling.shear);
        }
        take(j, "seed", c.seed);
        take(j, "prompt", c.prompt);
        if (j.contains("guidance")) {
            const auto& g = j["guidance"];
            detail::reject_unknown(g, {"backend", "target", "host", "port", "timeout_s", "delegate_tau", "weighting",
                                       "schedule"},
                                   "guidance.");
            take(g, "backend", c.guidance.backend);
            take(g, "target", c.guidance.target);
            take(g, "host", c.guidance.host);
            take(g, "port", c.guidance.port);
            take(g, "timeout_s", c.guidance.timeout_s);
            take(g, "delegate_tau", c.guidance.delegate_tau);
            take(g, "weighting", c.guidance.weighting);
            if (g.contains("schedule")) {
                const auto& s = g["schedule"];
                detail::reject_unknown(s, {"steps", "alpha_bar_first", "alpha_bar_last", "tau_min_fraction",
                                           "tau_max_fraction"},
                                       "guidance.schedule.");
                auto& d = c.guidance.schedule;
                take(s, "steps", d.steps);
                take(s, "alpha_bar_first", d.alpha_bar_first);
                take(s, "alpha_bar_last", d.alpha_bar_last);
                take(s, "tau_min_fraction", d.tau_min_fraction);
                take(s, "tau_max_fraction", d.tau_max_fraction);
            }
        }
        if (j.contains("augmentation")) {
            const auto& a = j["augmentation"];
            detail::reject_unknown(a, {"enabled", "min_crop_scale", "max_corner_jitter"}, "augmentation.");
            take(a, "enabled", c.augmentation.enabled);
            take(a, "min_crop_scale", c.augmentation.min_crop_scale);
            take(a, "max_corner_jitter", c.augmentation.max_corner_jitter);
        }
        take(j, "checkpoint_interval", c.checkpoint_interval);
        take(j, "min_points", c.min_points);
        take(j, "softness", c.softness);
        take(j, "flatten_n", c.flatten_n);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return c;
}

inline TrainConfig load_config(const std::string& path, TrainConfig base = {}) {
    try {
        return config_from_json(nlohmann::json::parse(read_text_file(path)), base);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Inputs

struct PreparedGlyph {
    GlyphPath glyph;     // normalized and subdivided
    SimilarityMap map;   // original -> canvas coordinates
};

/// Normalizes onto a resolution-sized canvas and subdivides to the budget.
inline PreparedGlyph prepare_glyph(const GlyphPath& raw, const TrainConfig& cfg) {
    const CanvasSize canvas{static_cast<double>(cfg.resolution), static_cast<double>(cfg.resolution)};
    const SimilarityMap map = normalization_map(raw, canvas);
    return {subdivide(map.apply(raw, canvas), cfg.min_points), map};
}

inline RasterOptions raster_options(const TrainConfig& cfg, CanvasSize canvas) {
    RasterOptions o = RasterOptions::square(static_cast<std::size_t>(cfg.resolution), canvas);
    o.softness = cfg.softness;
    o.flatten_n = cfg.flatten_n;
    return o;
}

/// k copies of the rendered target glyph.
inline FrameBatch static_targets(const GlyphPath& target, const TrainConfig& cfg) {
    const Raster img = render(target, raster_options(cfg, target.canvas));
    return FrameBatch(static_cast<std::size_t>(cfg.frames), img);
}

inline TauWeighting tau_weighting(const TrainConfig& cfg) {
    return cfg.guidance.weighting == "sigma2" ? TauWeighting::sigma_squared : TauWeighting::unit;
}

/// The guidance backend named by the config. A surrogate target is placed
/// with the letter's normalization map so both share one frame of reference.
inline std::unique_ptr<GuidanceBackend> make_backend(const TrainConfig& cfg, const PreparedGlyph& letter) {
    if (cfg.guidance.backend == "external") {
        if (cfg.guidance.port <= 0) throw ConfigError("guidance.port must be set for the external backend");
        return std::make_unique<ExternalBackend>(
            cfg.guidance.host, cfg.guidance.port,
            std::chrono::milliseconds(static_cast<long long>(cfg.guidance.timeout_s * 1000.0)));
    }
    if (cfg.guidance.target.empty()) throw ConfigError("guidance.target must name a glyph for the surrogate backend");
    const GlyphPath raw = load_glyph(cfg.guidance.target);
    const GlyphPath target = letter.map.apply(raw, letter.glyph.canvas);
    return std::make_unique<SurrogateBackend>(static_targets(target, cfg), cfg.guidance.schedule, tau_weighting(cfg));
}

// ---------------------------------------------------------------------------
// Results

struct StepLog {
    int iteration = 0; // 1-based
    double total = 0.0;
    double legibility = 0.0;
    double structure = 0.0;
    double ramp = 0.0;
    int tau = 0;
    bool local_phase = true;
};

struct TrainResult {
    FieldParams params;
    Tensor base_points;               // N x 2
    std::vector<Tensor> frame_points; // k x (N x 2)
    GlyphPath base_glyph;
    std::vector<GlyphPath> frame_glyphs;
    Raster letter_image;
    Raster base_image;
    std::vector<Raster> frame_images;
    double legibility = 0.0;
    double structure = 0.0;
    double conformity = 0.0;
    double temporal_consistency = 0.0;
    double angle_deviation = 0.0; // mean |T_t - T_B| over frames
    int iterations = 0;
    std::vector<StepLog> history;
};

// ---------------------------------------------------------------------------
// Checkpoints: "GLYF" + u32 version + payload, little-endian host order.

namespace detail {

inline constexpr char kCheckpointMagic[4] = {'G', 'L', 'Y', 'F'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class BlobWriter {
public:
    template <class T>
    void pod(const T& v) {
        const char* p = reinterpret_cast<const char*>(&v);
        bytes.append(p, sizeof(T));
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        bytes += s;
    }
    void tensor(const Tensor& t) {
        pod<std::uint64_t>(t.rows);
        pod<std::uint64_t>(t.cols);
        bytes.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
    }
    std::string bytes;
};

class BlobReader {
public:
    explicit BlobReader(std::string b) : bytes_(std::move(b)) {}
    template <class T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Tensor tensor() {
        const auto r = pod<std::uint64_t>(), c = pod<std::uint64_t>();
        need(r * c * sizeof(double));
        Tensor t(r, c);
        std::memcpy(t.data.data(), bytes_.data() + pos_, r * c * sizeof(double));
        pos_ += r * c * sizeof(double);
        return t;
    }
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
    }

private:
    std::string bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

// ---------------------------------------------------------------------------
// Trainer

class Trainer {
public:
    /// `letter` must already be normalized and subdivided (see prepare_glyph).
    Trainer(GlyphPath letter, TrainConfig cfg, GuidanceBackend& backend)
        : cfg_(std::move(cfg)), backend_(backend), letter_(std::move(letter)), rng_(cfg_.seed) {
        validate(letter_);
        k_ = static_cast<std::size_t>(cfg_.frames);
        ropt_ = raster_options(cfg_, letter_.canvas);
        flat_ = flattening(letter_.topology(), cfg_.flatten_n);
        letter_points_ = to_tensor(letter_.flat_points());
        mesh_ = delaunay(letter_.flat_points());
        letter_angles_ = mesh_angle_values(mesh_, letter_.flat_points());
        letter_image_ = rasterize_values(flatten_values(letter_points_, flat_), flat_.layout, ropt_);
        FieldConfig fc;
        fc.spatial_bands = cfg_.encoding.spatial_bands;
        fc.time_bands = cfg_.encoding.time_bands;
        fc.hidden = cfg_.hidden;
        fc.global_hidden = cfg_.global_hidden;
        fc.scaling = cfg_.scaling;
        params_ = FieldParams::create(fc, rng_);
        for (std::size_t i = 0; i < total_params(); ++i) adam_.emplace_back();
    }

    const TrainConfig& config() const { return cfg_; }
    const FieldParams& params() const { return params_; }
    FieldParams& mutable_params() { return params_; }
    const TriMesh& mesh() const { return mesh_; }
    const Raster& letter_image() const { return letter_image_; }
    const GlyphPath& letter() const { return letter_; }
    const Flattening& flattening_plan() const { return flat_; }
    const RasterOptions& raster_opts() const { return ropt_; }
    int iteration() const { return iter_; }
    const std::vector<StepLog>& history() const { return history_; }

    /// One optimization iteration.
    StepLog step() {
        const int number = iter_ + 1;
        const double s = iter_;
        ad::Tape tape;
        FieldVars vars = FieldVars::bind(tape, params_);
        ad::Var letter = tape.constant(letter_points_);
        ad::Var base = base_field_forward(params_, vars, letter, letter_.canvas);
        MotionOutput motion =
            motion_field_forward(params_, vars, base, k_, letter_.canvas, s, cfg_.anneal_horizon());
        std::vector<ad::Var> frames = rasterize_video(motion.frames, k_, flat_, ropt_);

        FrameBatch shapes;
        shapes.reserve(k_);
        for (const auto& f : frames) shapes.push_back(f.value());
        const SdsRequest req = draw_sds_request(shapes, backend_, cfg_.guidance.schedule, rng_);

        const bool aug_on = cfg_.augmentation.enabled;
        std::function<Raster(const Raster&)> view;
        std::vector<ad::Var> seen = frames;
        if (aug_on) {
            const AugmentParams ap = sample_augment(rng_, cfg_.augmentation);
            auto plan = std::make_shared<const WarpPlan>(make_warp(ap, ropt_.height, ropt_.width));
            seen.clear();
            for (const auto& f : frames) seen.push_back(warp(f, plan));
            view = [plan](const Raster& r) { return warp_values(r, *plan); };
        }
        FrameBatch seen_values;
        seen_values.reserve(k_);
        for (const auto& f : seen) seen_values.push_back(f.value());

        GuidanceGrad g;
        if (cfg_.weights.w_sds > 0.0) {
            g = sds_pixel_grad(seen_values, backend_, cfg_.prompt, req, view, cfg_.guidance.delegate_tau);
        } else {
            g.tau = req.tau;
            for (const auto& f : seen_values) g.grads.emplace_back(f.rows, f.cols);
        }
        ad::Var sds = inject_gradient(seen[0], g.grads[0]);
        for (std::size_t f = 1; f < k_; ++f) sds = sds + inject_gradient(seen[f], g.grads[f]);

        ad::Var leg = legibility_loss(base, letter_image_, flat_, ropt_);
        ad::Var str = structure_loss(letter_angles_, base, motion.frames, k_, mesh_, cfg_.weights.lambda1,
                                     cfg_.weights.lambda2);
        ad::Var loss = total_loss(sds, leg, str, cfg_.weights, s, cfg_.iterations);
        if (!std::isfinite(loss.item()))
            throw NumericError("non-finite loss at iteration " + std::to_string(number), loss.id());
        tape.backward(loss);

        const bool local_phase = (number % 2) == 1;
        // Validate everything first so a failure leaves the parameters untouched.
        check_finite(tape, vars.base, "base_net");
        check_finite(tape, local_phase ? vars.local : vars.global, local_phase ? "local_net" : "global_net");
        update_group(tape, vars.base, params_.base_net, 0, cfg_.lr_base, "base_net");
        if (local_phase)
            update_group(tape, vars.local, params_.local_net, params_.base_net.params.size(), cfg_.lr_local,
                         "local_net");
        else
            update_group(tape, vars.global, params_.global_net,
                         params_.base_net.params.size() + params_.local_net.params.size(), cfg_.lr_global,
                         "global_net");

        ++iter_;
        StepLog log{number, loss.item(), leg.item(), str.item(), legibility_ramp(s, cfg_.iterations), g.tau,
                    local_phase};
        history_.push_back(log);
        return log;
    }

    /// Runs until the configured iteration count, checkpointing into
    /// `checkpoint_dir` (if non-empty) every checkpoint_interval iterations
    /// and before rethrowing any failure. A failed step leaves the state
    /// as it was after the previous step.
    void run(const std::function<void(const StepLog&)>& on_step = {}, const fs::path& checkpoint_dir = {}) {
        while (iter_ < cfg_.iterations) {
            StepLog log;
            try {
                log = step();
            } catch (const Error&) {
                if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir / "checkpoint_abort.glyf");
                throw;
            }
            if (on_step) on_step(log);
            if (!checkpoint_dir.empty() && cfg_.checkpoint_interval > 0 && iter_ % cfg_.checkpoint_interval == 0)
                save_checkpoint(checkpoint_dir / ("checkpoint_" + std::to_string(iter_) + ".glyf"));
        }
    }

    /// Forward evaluation of the current parameters (no augmentation).
    TrainResult evaluate() const {
        ad::Tape tape;
        FieldVars vars = FieldVars::bind(tape, params_, false);
        ad::Var letter = tape.constant(letter_points_);
        ad::Var base = base_field_forward(params_, vars, letter, letter_.canvas);
        MotionOutput motion =
            motion_field_forward(params_, vars, base, k_, letter_.canvas, iter_, cfg_.anneal_horizon());
        TrainResult r;
        r.params = params_;
        r.iterations = iter_;
        r.history = history_;
        r.letter_image = letter_image_;
        r.base_points = base.value();
        r.base_glyph = letter_.with_points(to_points(r.base_points));
        r.base_image = rasterize_values(flatten_values(r.base_points, flat_), flat_.layout, ropt_);
        const std::size_t n = letter_points_.rows;
        const Tensor base_angles = mesh_angle_values(mesh_, to_points(r.base_points));
        std::vector<Tensor> frame_angles;
        for (std::size_t t = 0; t < k_; ++t) {
            Tensor pts(n, 2);
            std::copy_n(motion.frames.value().data.begin() + static_cast<std::ptrdiff_t>(t * n * 2), n * 2,
                        pts.data.begin());
            r.frame_glyphs.push_back(letter_.with_points(to_points(pts)));
            r.frame_images.push_back(rasterize_values(flatten_values(pts, flat_), flat_.layout, ropt_));
            frame_angles.push_back(mesh_angle_values(mesh_, to_points(pts)));
            r.frame_points.push_back(std::move(pts));
        }
        r.legibility = perceptual_proxy(r.base_image, letter_image_);
        r.structure = structure_loss(letter_angles_, base, motion.frames, k_, mesh_, cfg_.weights.lambda1,
                                     cfg_.weights.lambda2)
                          .item();
        r.conformity = conformity_proxy(r.frame_images, letter_image_);
        r.temporal_consistency = k_ >= 2 ? temporal_consistency_proxy(r.frame_images) : 0.0;
        r.angle_deviation = mean_angle_deviation(frame_angles, base_angles);
        return r;
    }

    void save_checkpoint(const fs::path& path) const {
        detail::BlobWriter w;
        w.bytes.append(detail::kCheckpointMagic, 4);
        w.pod(detail::kCheckpointVersion);
        w.pod<std::int64_t>(iter_);
        w.str(rng_.state());
        const auto all = param_refs();
        w.pod<std::uint64_t>(all.size());
        for (std::size_t i = 0; i < all.size(); ++i) {
            w.tensor(*all[i]);
            w.tensor(adam_[i].m);
            w.tensor(adam_[i].v);
            w.pod<std::uint64_t>(adam_[i].step);
        }
        if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
        write_bytes(path, w.bytes);
    }

    void load_checkpoint(const fs::path& path) {
        detail::BlobReader r(read_text_file(path.string()));
        char magic[4];
        for (char& c : magic) c = r.pod<char>();
        if (std::memcmp(magic, detail::kCheckpointMagic, 4) != 0) throw IoError(path.string() + ": not a checkpoint");
        if (r.pod<std::uint32_t>() != detail::kCheckpointVersion)
            throw IoError(path.string() + ": unsupported checkpoint version");
        const auto iter = r.pod<std::int64_t>();
        const std::string rng_state = r.str();
        auto all = param_refs();
        if (r.pod<std::uint64_t>() != all.size()) throw IoError(path.string() + ": parameter count mismatch");
        std::vector<Tensor> values;
        std::vector<AdamState> states;
        for (std::size_t i = 0; i < all.size(); ++i) {
            Tensor p = r.tensor();
            if (!p.same_shape(*all[i])) throw IoError(path.string() + ": parameter shape mismatch");
            AdamState st;
            st.m = r.tensor();
            st.v = r.tensor();
            st.step = r.pod<std::uint64_t>();
            values.push_back(std::move(p));
            states.push_back(std::move(st));
        }
        for (std::size_t i = 0; i < all.size(); ++i) *all[i] = std::move(values[i]);
        adam_ = std::move(states);
        iter_ = static_cast<int>(iter);
        rng_.restore(rng_state);
    }

private:
    std::size_t total_params() const {
        return params_.base_net.params.size() + params_.local_net.params.size() + params_.global_net.params.size();
    }

    std::vector<Tensor*> param_refs() const {
        std::vector<Tensor*> out;
        auto& p = const_cast<FieldParams&>(params_);
        for (Mlp* m : {&p.base_net, &p.local_net, &p.global_net})
            for (Tensor& t : m->params) out.push_back(&t);
        return out;
    }

    static void check_finite(const ad::Tape& tape, const std::vector<ad::Var>& vars, const std::string& name) {
        for (std::size_t i = 0; i < vars.size(); ++i)
            if (!tape.gradient(vars[i]).all_finite())
                throw NumericError("non-finite gradient in parameter " + name + "." + std::to_string(i), vars[i].id());
    }

    void update_group(const ad::Tape& tape, const std::vector<ad::Var>& vars, Mlp& net, std::size_t state_offset,
                      double lr, const std::string& name) {
        for (std::size_t i = 0; i < vars.size(); ++i)
            adam_step(net.params[i], tape.gradient(vars[i]), adam_[state_offset + i], lr, cfg_.adam,
                      name + "." + std::to_string(i));
    }

    TrainConfig cfg_;
    GuidanceBackend& backend_;
    GlyphPath letter_;
    Rng rng_;
    std::size_t k_ = 0;
    RasterOptions ropt_;
    Flattening flat_;
    Tensor letter_points_;
    TriMesh mesh_;
    Tensor letter_angles_;
    Raster letter_image_;
    FieldParams params_;
    std::vector<AdamState> adam_;
    int iter_ = 0;
    std::vector<StepLog> history_;
};

// ---------------------------------------------------------------------------
// Artifact bundle

/// Writes frames (SVG + P5), the base shape, the final checkpoint and the
/// manifest into out_dir. Returns the manifest path.
inline fs::path write_artifacts(const Trainer& trainer, const TrainResult& r, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    std::vector<fs::path> files = write_svg_frames(r.frame_glyphs, out_dir);
    for (std::size_t i = 0; i < r.frame_images.size(); ++i) {
        const fs::path p = out_dir / frame_name(i, "ppm");
        write_ppm(r.frame_images[i], p);
        files.push_back(p);
    }
    write_bytes(out_dir / "base.svg", frame_svg(r.base_glyph));
    files.push_back(out_dir / "base.svg");
    write_ppm(r.base_image, out_dir / "base.ppm");
    files.push_back(out_dir / "base.ppm");
    trainer.save_checkpoint(out_dir / "final.glyf");
    files.push_back(out_dir / "final.glyf");

    RunManifest m;
    m.config = to_json(trainer.config());
    m.seed = trainer.config().seed;
    m.losses = {{"legibility", r.legibility},
                {"structure", r.structure},
                {"final_total", r.history.empty() ? 0.0 : r.history.back().total}};
    m.metrics = {{"conformity_proxy", r.conformity},
                 {"temporal_consistency_proxy", r.temporal_consistency},
                 {"mean_angle_deviation", r.angle_deviation},
                 {"iterations", r.iterations}};
    m.files = files;
    const fs::path manifest = out_dir / "manifest.json";
    write_manifest(m, manifest);
    return manifest;
}

} // namespace dyntypo

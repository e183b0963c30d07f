#include "dyntypo/engine.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace dyntypo;

namespace {

std::string sample(const char* name) { return std::string(DYNTYPO_SAMPLES) + "/" + name; }

TrainConfig small_config() {
    TrainConfig c = TrainConfig::desk_scale();
    c.resolution = 32;
    c.frames = 3;
    c.iterations = 10;
    c.hidden = 24;
    c.global_hidden = 8;
    c.min_points = 24;
    return c;
}

struct Problem {
    TrainConfig cfg;
    PreparedGlyph letter;
    std::unique_ptr<GuidanceBackend> backend;

    explicit Problem(TrainConfig c, const char* target = "ring_o_shifted.svg")
        : cfg(std::move(c)), letter(prepare_glyph(load_glyph(sample("ring_o.svg")), cfg)) {
        cfg.guidance.target = sample(target);
        backend = make_backend(cfg, letter);
    }
};

std::vector<Tensor> flat_params(const FieldParams& p) {
    std::vector<Tensor> out;
    for (const Mlp* m : {&p.base_net, &p.local_net, &p.global_net})
        for (const Tensor& t : m->params) out.push_back(t);
    return out;
}

/// Backend that always returns NaN pixels.
class BrokenBackend : public GuidanceBackend {
public:
    std::string id() const override { return "broken"; }
    bool wants_noise() const override { return false; }
    GuidanceGrad pixel_grad(const FrameBatch& frames, const GuidanceContext& ctx) override {
        GuidanceGrad g{frames, id(), ctx.tau.value_or(0)};
        for (Raster& r : g.grads) std::fill(r.data.begin(), r.data.end(), std::numeric_limits<double>::quiet_NaN());
        return g;
    }
};

fs::path temp_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("dyntypo_test_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

} // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
    Tensor x = Tensor::scalar(1.0);
    AdamState st;
    adam_step(x, Tensor::scalar(0.3), st, 5e-3, AdamConfig{});
    // Bias-corrected moments give lr * g / (|g| + eps) on the first step.
    EXPECT_NEAR(x[0], 1.0 - 5e-3 * 0.3 / (0.3 + 1e-8), 1e-15);
    Tensor y = Tensor::scalar(1.0);
    AdamState sy;
    adam_step(y, Tensor::scalar(-20.0), sy, 5e-3, AdamConfig{});
    EXPECT_NEAR(y[0], 1.0 + 5e-3 * 20.0 / (20.0 + 1e-8), 1e-15);
}

TEST(Adam, ZeroGradsKeepParamsAndDecayMoments) {
    Tensor x(1, 2, {1.0, -2.0});
    AdamState st;
    adam_step(x, Tensor(1, 2, {1.0, 1.0}), st, 1e-2, AdamConfig{});
    const Tensor after_one = x;
    const Tensor m1 = st.m, v1 = st.v;
    // A zero gradient still applies the (decayed) momentum, so check a
    // fresh state for "unchanged" and the used state for decay.
    Tensor z(1, 2, {1.0, -2.0});
    AdamState fresh;
    adam_step(z, Tensor(1, 2, 0.0), fresh, 1e-2, AdamConfig{});
    EXPECT_EQ(z, Tensor(1, 2, {1.0, -2.0}));
    adam_step(x, Tensor(1, 2, 0.0), st, 1e-2, AdamConfig{});
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_DOUBLE_EQ(st.m[i], 0.9 * m1[i]);
        EXPECT_DOUBLE_EQ(st.v[i], 0.999 * v1[i]);
    }
    EXPECT_NE(x, after_one);
}

TEST(Adam, QuadraticBowlConverges) {
    Tensor x = Tensor::scalar(1.0);
    AdamState st;
    for (int i = 0; i < 2000; ++i) adam_step(x, Tensor::scalar(2 * x[0]), st, 5e-3, AdamConfig{});
    EXPECT_LT(std::abs(x[0]), 1e-3);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
    Tensor x = Tensor::scalar(1.0);
    AdamState st;
    try {
        adam_step(x, Tensor::scalar(std::nan("")), st, 1e-3, AdamConfig{}, "local_net.3");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("local_net.3"), std::string::npos);
    }
    EXPECT_EQ(x[0], 1.0);
}

TEST(Config, DefaultsMatchPublishedSettings) {
    const TrainConfig c;
    EXPECT_EQ(c.iterations, 1000);
    EXPECT_EQ(c.frames, 24);
    EXPECT_EQ(c.resolution, 256);
    EXPECT_EQ(c.lr_base, 5e-3);
    EXPECT_EQ(c.lr_local, 5e-3);
    EXPECT_EQ(c.lr_global, 1e-3);
    EXPECT_EQ(c.anneal_horizon(), 500);
    const TrainConfig d = TrainConfig::desk_scale();
    EXPECT_EQ(d.iterations, 300);
    EXPECT_EQ(d.frames, 8);
    EXPECT_EQ(d.resolution, 64);
}

TEST(Config, JsonRoundTrip) {
    TrainConfig c = small_config();
    c.seed = 77;
    c.prompt = "a letter O that bounces";
    c.weights.lambda2 = 123.5;
    c.guidance.backend = "external";
    c.guidance.port = 9000;
    c.augmentation.enabled = false;
    const nlohmann::json j = to_json(c);
    EXPECT_EQ(to_json(config_from_json(j)), j);
}

TEST(Config, OverlayAndRejectUnknownKeys) {
    const TrainConfig c = config_from_json(nlohmann::json::parse(R"({"frames": 5, "weights": {"lambda1": 2}})"));
    EXPECT_EQ(c.frames, 5);
    EXPECT_EQ(c.weights.lambda1, 2.0);
    EXPECT_EQ(c.weights.lambda2, 1e4);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"framez": 5})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"weights": {"lambda3": 1}})")), ConfigError);
    EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"frames": "many"})")), ConfigError);
}

TEST(Config, LoadsSampleFile) {
    const TrainConfig c = load_config(sample("quick.json"));
    EXPECT_EQ(c.iterations, 20);
    EXPECT_EQ(c.frames, 4);
    EXPECT_NO_THROW(c.validate());
    EXPECT_THROW(load_config(sample("ring_o.svg")), ConfigError);
}

TEST(Config, ValidateRejectsBadValues) {
    TrainConfig c;
    c.iterations = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.frames = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lr_global = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.guidance.backend = "oracle";
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Trainer, NoIterationsMeansLetterEverywhere) {
    Problem p(small_config());
    Trainer t(p.letter.glyph, p.cfg, *p.backend);
    const TrainResult r = t.evaluate();
    const Tensor letter = to_tensor(p.letter.glyph.flat_points());
    EXPECT_EQ(r.base_points, letter);
    for (const Tensor& f : r.frame_points) EXPECT_EQ(f, letter);
    EXPECT_EQ(r.conformity, 1.0);
    EXPECT_EQ(r.temporal_consistency, 0.0);
}

TEST(Trainer, TargetEqualsLetterStaysPut) {
    TrainConfig c = TrainConfig::desk_scale();
    c.frames = 4;
    c.iterations = 50;
    Problem p(c, "ring_o.svg");
    Trainer t(p.letter.glyph, p.cfg, *p.backend);
    t.run();
    EXPECT_LT(std::abs(t.history().front().total), 1e-9);
    const TrainResult r = t.evaluate();
    for (const Raster& f : r.frame_images) EXPECT_LT(perceptual_proxy(f, r.letter_image), 1e-3);
}

TEST(Trainer, DeterministicTrajectories) {
    Problem a(small_config()), b(small_config());
    Trainer ta(a.letter.glyph, a.cfg, *a.backend), tb(b.letter.glyph, b.cfg, *b.backend);
    for (int i = 0; i < 10; ++i) {
        ta.step();
        tb.step();
        EXPECT_EQ(flat_params(ta.params()), flat_params(tb.params())) << "iteration " << i + 1;
    }
    TrainConfig other = small_config();
    other.seed = 1;
    Problem c(other);
    Trainer tc(c.letter.glyph, c.cfg, *c.backend);
    tc.run();
    EXPECT_NE(flat_params(tc.params()), flat_params(ta.params()));
}

TEST(Trainer, InterleavedUpdates) {
    Problem p(small_config());
    Trainer t(p.letter.glyph, p.cfg, *p.backend);
    for (int i = 1; i <= 6; ++i) {
        const FieldParams before = t.params();
        const StepLog log = t.step();
        EXPECT_EQ(log.iteration, i);
        EXPECT_EQ(log.local_phase, i % 2 == 1);
        EXPECT_NE(t.params().base_net.params, before.base_net.params);
        if (i % 2 == 1) {
            EXPECT_EQ(t.params().global_net.params, before.global_net.params);
            EXPECT_NE(t.params().local_net.params, before.local_net.params);
        } else {
            EXPECT_EQ(t.params().local_net.params, before.local_net.params);
            EXPECT_NE(t.params().global_net.params, before.global_net.params);
        }
    }
}

TEST(Trainer, CheckpointResumeIsExact) {
    const fs::path dir = temp_dir("ckpt");
    Problem p(small_config());
    Trainer full(p.letter.glyph, p.cfg, *p.backend);
    for (int i = 0; i < 6; ++i) full.step();
    full.save_checkpoint(dir / "mid.glyf");
    full.run();

    Problem q(small_config());
    Trainer resumed(q.letter.glyph, q.cfg, *q.backend);
    resumed.load_checkpoint(dir / "mid.glyf");
    EXPECT_EQ(resumed.iteration(), 6);
    resumed.run();
    EXPECT_EQ(flat_params(resumed.params()), flat_params(full.params()));

    write_bytes(dir / "bad.glyf", "NOPE");
    EXPECT_THROW(resumed.load_checkpoint(dir / "bad.glyf"), IoError);
    const std::string blob = read_text_file((dir / "mid.glyf").string());
    EXPECT_EQ(blob.substr(0, 4), "GLYF");
    write_bytes(dir / "short.glyf", blob.substr(0, blob.size() / 2));
    EXPECT_THROW(resumed.load_checkpoint(dir / "short.glyf"), IoError);
}

TEST(Trainer, PeriodicCheckpoints) {
    const fs::path dir = temp_dir("periodic");
    TrainConfig c = small_config();
    c.iterations = 6;
    c.checkpoint_interval = 3;
    Problem p(c);
    Trainer t(p.letter.glyph, p.cfg, *p.backend);
    t.run({}, dir);
    EXPECT_TRUE(fs::exists(dir / "checkpoint_3.glyf"));
    EXPECT_TRUE(fs::exists(dir / "checkpoint_6.glyf"));
}

TEST(Trainer, InjectedGradientMatchesExplicitScalar) {
    TrainConfig c = small_config();
    c.resolution = 16;
    c.frames = 2;
    c.augmentation.enabled = false;
    Problem p(c);
    auto& surrogate = dynamic_cast<SurrogateBackend&>(*p.backend);
    Trainer t(p.letter.glyph, p.cfg, *p.backend);
    Rng perturb(3);
    for (Tensor& w : t.mutable_params().local_net.params)
        for (double& v : w.data) v += perturb.uniform(-0.05, 0.05);
    const FieldParams& params = t.params();
    const Tensor letter_pts = to_tensor(p.letter.glyph.flat_points());
    const NoiseSchedule& sched = c.guidance.schedule;

    for (int tau : {120, 500, 880}) {
        auto forward = [&](ad::Tape& tape, FieldVars& vars) {
            vars = FieldVars::bind(tape, params);
            ad::Var base = base_field_forward(params, vars, tape.constant(letter_pts), p.letter.glyph.canvas);
            ad::Var frames = motion_field_forward(params, vars, base, 2, p.letter.glyph.canvas, 5, 10).frames;
            return rasterize_video(frames, 2, t.flattening_plan(), t.raster_opts());
        };
        ad::Tape t1;
        FieldVars v1;
        const auto imgs = forward(t1, v1);
        FrameBatch values{imgs[0].value(), imgs[1].value()};
        Rng rng(tau);
        SdsRequest req{tau, {}, 0};
        for (const Raster& f : values) {
            Raster e(f.rows, f.cols);
            for (double& x : e.data) x = rng.normal();
            req.noise.push_back(e);
        }
        const GuidanceGrad g = sds_pixel_grad(values, surrogate, "", req);
        t1.backward(inject_gradient(imgs[0], g.grads[0]) + inject_gradient(imgs[1], g.grads[1]));

        ad::Tape t2;
        FieldVars v2;
        const auto imgs2 = forward(t2, v2);
        const double coef = 0.5 * sched.alpha(tau) / sched.sigma(tau);
        ad::Var explicit_loss = ad::sum_squares(imgs2[0] - t2.constant(surrogate.targets()[0])) * coef +
                                ad::sum_squares(imgs2[1] - t2.constant(surrogate.targets()[1])) * coef;
        t2.backward(explicit_loss);

        double worst = 0;
        for (const auto& [a, b] : {std::pair{&v1.base, &v2.base}, std::pair{&v1.local, &v2.local},
                                   std::pair{&v1.global, &v2.global}})
            for (std::size_t i = 0; i < a->size(); ++i) {
                const Tensor ga = t1.gradient((*a)[i]), gb = t2.gradient((*b)[i]);
                double diff = 0, ref = 0;
                for (std::size_t j = 0; j < ga.size(); ++j) {
                    diff = std::max(diff, std::abs(ga[j] - gb[j]));
                    ref = std::max(ref, std::abs(gb[j]));
                }
                if (ref > 0) worst = std::max(worst, diff / ref);
            }
        EXPECT_LT(worst, 1e-6) << "tau " << tau;
    }
}

TEST(Trainer, LegibilityAloneRestoresLetter) {
    TrainConfig c = small_config();
    c.iterations = 300;
    c.weights.w_sds = 0;
    c.weights.lambda1 = c.weights.lambda2 = 0;
    c.frames = 2;
    Problem p(c);
    Trainer t(p.letter.glyph, p.cfg, *p.backend);
    Rng rng(4);
    for (double& v : t.mutable_params().base_net.params.back().data) v = rng.uniform(-1.5, 1.5);
    std::vector<double> window;
    window.push_back(t.evaluate().legibility);
    t.run([&](const StepLog& l) {
        if (l.iteration % 100 == 0) window.push_back(t.evaluate().legibility);
    });
    ASSERT_EQ(window.size(), 4u);
    EXPECT_GT(window[0], 0.0);
    for (std::size_t i = 1; i < window.size(); ++i) EXPECT_LE(window[i], window[i - 1]) << "window " << i;
    EXPECT_LT(window.back(), window.front());
}

TEST(Trainer, DescentStepTowardTarget) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        TrainConfig c = small_config();
        c.seed = seed;
        c.weights.w_legibility = 0;
        c.weights.lambda1 = c.weights.lambda2 = 0;
        c.augmentation.enabled = false;
        Problem p(c);
        const Raster& target = dynamic_cast<SurrogateBackend&>(*p.backend).targets()[0];
        Trainer t(p.letter.glyph, p.cfg, *p.backend);
        auto distance = [&] {
            const TrainResult r = t.evaluate();
            double d = 0;
            for (const Raster& f : r.frame_images) d += mse(f, target);
            return d;
        };
        const double before = distance();
        t.step();
        EXPECT_LT(distance(), before) << "seed " << seed;
    }
}

TEST(Trainer, GuidanceFailureAbortsWithCheckpoint) {
    const fs::path dir = temp_dir("abort");
    Problem p(small_config());
    BrokenBackend broken;
    Trainer t(p.letter.glyph, p.cfg, broken);
    EXPECT_THROW(t.run({}, dir), ProtocolError);
    EXPECT_TRUE(fs::exists(dir / "checkpoint_abort.glyf"));
    EXPECT_EQ(t.iteration(), 0);
}

TEST(Trainer, NonFiniteLossAborts) {
    const fs::path dir = temp_dir("nan");
    TrainConfig c = small_config();
    c.weights.w_legibility = std::numeric_limits<double>::infinity();
    Problem p(c);
    Trainer t(p.letter.glyph, p.cfg, *p.backend);
    EXPECT_THROW(t.run({}, dir), NumericError);
    EXPECT_TRUE(fs::exists(dir / "checkpoint_abort.glyf"));
}

TEST(Trainer, ArtifactBundle) {
    const fs::path dir = temp_dir("bundle");
    TrainConfig c = small_config();
    c.iterations = 4;
    Problem p(c);
    Trainer t(p.letter.glyph, p.cfg, *p.backend);
    t.run();
    const fs::path manifest = write_artifacts(t, t.evaluate(), dir);
    EXPECT_TRUE(verify_manifest(manifest).empty());
    for (const char* f : {"frame_0000.svg", "frame_0002.svg", "frame_0000.ppm", "base.svg", "final.glyf"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    const auto j = nlohmann::json::parse(read_text_file(manifest.string()));
    EXPECT_EQ(j["seed"], 0);
    EXPECT_TRUE(j["metrics"].contains("conformity_proxy"));
}

TEST(Backend, ExternalNeedsPort) {
    TrainConfig c = small_config();
    c.guidance.backend = "external";
    const PreparedGlyph g = prepare_glyph(load_glyph(sample("ring_o.svg")), c);
    EXPECT_THROW(make_backend(c, g), ConfigError);
    c.guidance.backend = "surrogate";
    c.guidance.target = "";
    EXPECT_THROW(make_backend(c, g), ConfigError);
}

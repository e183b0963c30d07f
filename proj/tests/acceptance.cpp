// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "dyntypo/dyntypo.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

using namespace dyntypo;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void report(const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
        o = check();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string sample(const char* name) { return std::string(DYNTYPO_SAMPLES) + "/" + name; }

// -- gradient suite ---------------------------------------------------------

Outcome gradient_suite() {
    const auto t0 = Clock::now();
    const auto results = run_gradient_suites("all");
    const double elapsed = seconds_since(t0);
    double worst = 0;
    std::string names;
    bool ok = results.size() == 5;
    for (const auto& r : results) {
        worst = std::max(worst, r.report.max_rel_error);
        ok = ok && r.report.coords_checked == 64 && r.report.max_rel_error < 1e-3;
        names += fmt(" %s=%.2e", r.name.c_str(), r.report.max_rel_error);
    }
    ok = ok && elapsed < 300;
    return {ok, fmt("worst %.2e, %.1fs;", worst, elapsed) + names};
}

// -- Delaunay ---------------------------------------------------------------

std::size_t hull_size(std::vector<Point> p) {
    std::sort(p.begin(), p.end(), [](Point a, Point b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    std::vector<Point> h(2 * p.size());
    std::size_t k = 0;
    auto cross = [](Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); };
    for (std::size_t i = 0; i < p.size(); ++i) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    return k - 1;
}

Outcome delaunay_oracle() {
    std::size_t violations = 0, incomplete = 0, triangles = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(1000 + seed);
        const auto n = static_cast<std::size_t>(rng.uniform_int(3, 16));
        std::vector<Point> pts;
        while (pts.size() < n) {
            const Point p{rng.uniform(0, 100), rng.uniform(0, 100)};
            bool far = true;
            for (const Point& q : pts) far = far && distance(p, q) > 1e-3;
            if (far) pts.push_back(p);
        }
        const TriMesh m = delaunay(pts);
        triangles += m.size();
        violations += oracle::empty_circle_violations(pts, m.triangles);
        // A full triangulation of points in general position has 2n - h - 2 faces.
        if (m.size() != 2 * n - hull_size(pts) - 2) ++incomplete;
    }
    return {violations == 0 && incomplete == 0,
            fmt("200 sets, %zu triangles, %zu violations, %zu incomplete", triangles, violations, incomplete)};
}

// -- rasterizer -------------------------------------------------------------

Outcome rasterizer_oracle() {
    double worst_agree = 1.0, worst_band = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const GlyphPath g = oracle::glyph_like(seed, 128);
        RasterOptions o;
        o.height = o.width = 128;
        const Raster soft = render(g, o);
        const Tensor hard = oracle::scanline(g, 128, 128, 1.0);
        const auto outline = oracle::dense_outline(g);
        std::size_t agree = 0;
        for (std::size_t i = 0; i < 128; ++i)
            for (std::size_t j = 0; j < 128; ++j) {
                if ((soft(i, j) >= 0.5) == (hard(i, j) >= 0.5)) {
                    ++agree;
                    continue;
                }
                worst_band = std::max(worst_band, oracle::distance_to_outline(outline, {j + 0.5, i + 0.5}));
            }
        worst_agree = std::min(worst_agree, agree / (128.0 * 128.0));
    }
    return {worst_agree >= 0.99 && worst_band <= 2.0,
            fmt("min agreement %.4f, farthest disagreement %.2f px from outline", worst_agree, worst_band)};
}

// -- annealing and encoding -------------------------------------------------

double anneal_closed_form(double iter, double n, int bands, int j) {
    const double a = bands * iter / n;
    if (a < j) return 0.0;
    if (a >= j + 1) return 1.0;
    return 0.5 * (1.0 - std::cos(std::numbers::pi * (a - j)));
}

Outcome annealing_exactness() {
    Rng rng(77);
    double worst = 0;
    for (int s = 0; s < 1000; ++s) {
        const int bands = static_cast<int>(rng.uniform_int(1, 10));
        const double n = static_cast<double>(rng.uniform_int(10, 2000));
        const double iter = std::floor(rng.uniform(0, 1.3 * n));
        const int j = static_cast<int>(rng.uniform_int(0, bands - 1));
        worst = std::max(worst, std::abs(anneal_weights(iter, n, bands)[static_cast<std::size_t>(j)] -
                                         anneal_closed_form(iter, n, bands, j)));
    }
    bool dims = true;
    for (int L = 1; L <= 12; ++L)
        for (std::size_t d = 1; d <= 3; ++d) {
            const std::vector<double> p(d, 0.3);
            EncodingConfig c;
            c.bands = L;
            dims = dims && positional_encode(p, c, false).size() == 2 * static_cast<std::size_t>(L) * d;
            ad::Tape tape;
            const ad::Var e = positional_encode(tape.constant(Tensor(4, d, 0.3)), std::vector<int>(d, L),
                                                std::vector<std::vector<double>>(d, std::vector<double>(L, 1.0)));
            dims = dims && e.value().cols == 2 * static_cast<std::size_t>(L) * d;
        }
    return {worst <= 1e-12 && dims, fmt("max |w - closed form| %.1e over 1000 pairs; dimension %s for L=1..12, dim=1..3",
                                        worst, dims ? "2*L*dim" : "WRONG")};
}

// -- surrogate problems -----------------------------------------------------

struct Translation {
    TrainConfig cfg;
    PreparedGlyph letter;
    FrameBatch targets;
};

/// Ring letter against the same ring moved 20 px to the right on the canvas.
Translation translation_problem(std::uint64_t seed) {
    Translation p;
    p.cfg = TrainConfig::desk_scale();
    p.cfg.seed = seed;
    p.letter = prepare_glyph(load_glyph(sample("ring_o.svg")), p.cfg);
    std::vector<Point> moved = p.letter.glyph.flat_points();
    for (Point& q : moved) q.x += 20.0;
    p.targets = static_targets(p.letter.glyph.with_points(moved), p.cfg);
    return p;
}

double mean_mse(const std::vector<Raster>& frames, const FrameBatch& targets) {
    double s = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) s += mse(frames[f], targets[f]);
    return s / static_cast<double>(frames.size());
}

TrainResult train(const Translation& p, const TrainConfig& cfg) {
    SurrogateBackend be(p.targets, cfg.guidance.schedule, tau_weighting(cfg));
    Trainer t(p.letter.glyph, cfg, be);
    t.run();
    return t.evaluate();
}

Outcome translation_run() {
    const auto t0 = Clock::now();
    const Translation p = translation_problem(0);
    SurrogateBackend be(p.targets, p.cfg.guidance.schedule);
    Trainer t(p.letter.glyph, p.cfg, be);
    const double initial = mean_mse(t.evaluate().frame_images, p.targets);
    t.run();
    const TrainResult r = t.evaluate();
    const double final_mse = mean_mse(r.frame_images, p.targets);
    const double elapsed = seconds_since(t0);
    const bool ok = final_mse < 0.1 * initial && r.angle_deviation < 0.1 && elapsed < 600;
    return {ok, fmt("MSE %.3e -> %.3e (%.2f%% of initial), angle deviation %.4f rad, %.1fs", initial, final_mse,
                    100 * final_mse / initial, r.angle_deviation, elapsed)};
}

Outcome ablation() {
    int temporal_votes = 0, conformity_votes = 0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const Translation p = translation_problem(seed);
        const TrainResult full = train(p, p.cfg);
        TrainConfig no_structure = p.cfg;
        no_structure.weights.lambda1 = no_structure.weights.lambda2 = 0.0;
        const TrainResult ns = train(p, no_structure);
        TrainConfig no_legibility = p.cfg;
        no_legibility.weights.w_legibility = 0.0;
        const TrainResult nl = train(p, no_legibility);
        const double temporal_rise = ns.temporal_consistency / std::max(full.temporal_consistency, 1e-300) - 1.0;
        const double conformity_drop = 1.0 - nl.conformity / full.conformity;
        temporal_votes += temporal_rise >= 0.2;
        conformity_votes += conformity_drop >= 0.1;
        detail += fmt(" [seed %llu: temporal %.2e -> %.2e (%+.0f%%), conformity %.4f -> %.4f (%+.2f%%)]",
                      static_cast<unsigned long long>(seed), full.temporal_consistency, ns.temporal_consistency,
                      100 * temporal_rise, full.conformity, nl.conformity, -100 * conformity_drop);
    }
    return {temporal_votes >= 2 && conformity_votes >= 2,
            fmt("structure-off raises temporal >=20%% on %d/3 seeds, legibility-off lowers conformity >=10%% on %d/3;",
                temporal_votes, conformity_votes) +
                detail};
}

// -- determinism ------------------------------------------------------------

std::string manifest_without_timestamp(const fs::path& dir) {
    TrainConfig c = TrainConfig::desk_scale();
    c.iterations = 40;
    c.seed = 11;
    c.guidance.target = sample("ring_o_shifted.svg");
    const PreparedGlyph g = prepare_glyph(load_glyph(sample("ring_o.svg")), c);
    auto be = make_backend(c, g);
    Trainer t(g.glyph, c, *be);
    t.run();
    fs::remove_all(dir);
    auto j = nlohmann::json::parse(read_text_file(write_artifacts(t, t.evaluate(), dir).string()));
    j.erase("created");
    return j.dump();
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "dyntypo_acceptance";
    const std::string a = manifest_without_timestamp(root / "a"), b = manifest_without_timestamp(root / "b");
    const auto files = nlohmann::json::parse(a)["files"].size();
    return {a == b && files > 0, fmt("%s over %zu hashed files", a == b ? "identical" : "DIFFERENT", files)};
}

// -- SDS algebra ------------------------------------------------------------

Outcome sds_algebra() {
    TrainConfig c = TrainConfig::desk_scale();
    c.resolution = 16;
    c.frames = 3;
    c.hidden = 24;
    c.global_hidden = 8;
    c.min_points = 24;
    const PreparedGlyph letter = prepare_glyph(load_glyph(sample("ring_o.svg")), c);
    std::vector<Point> moved = letter.glyph.flat_points();
    for (Point& q : moved) q.x += 3.0;
    const FrameBatch targets = static_targets(letter.glyph.with_points(moved), c);

    // Frames from a perturbed motion field, so x differs per frame.
    SurrogateBackend unit(targets, c.guidance.schedule, TauWeighting::unit);
    SurrogateBackend weighted(targets, c.guidance.schedule, TauWeighting::sigma_squared);
    Trainer t(letter.glyph, c, unit);
    Rng perturb(5);
    for (Tensor& w : t.mutable_params().local_net.params)
        for (double& v : w.data) v += perturb.uniform(-0.1, 0.1);
    const std::vector<Raster> frames = t.evaluate().frame_images;
    const FrameBatch batch(frames.begin(), frames.end());

    const NoiseSchedule& s = c.guidance.schedule;
    double worst = 0;
    Rng rng(9);
    for (int tau : {83, 467, 902}) {
        SdsRequest req{tau, {}, 0};
        for (std::size_t f = 0; f < batch.size(); ++f) {
            Raster e(16, 16);
            for (double& v : e.data) v = rng.normal();
            req.noise.push_back(e);
        }
        for (auto* be : {&unit, &weighted}) {
            const double w = be == &unit ? 1.0 : s.sigma(tau) * s.sigma(tau);
            const GuidanceGrad g = sds_pixel_grad(batch, *be, "", req);
            for (std::size_t f = 0; f < batch.size(); ++f)
                for (std::size_t i = 0; i < batch[f].size(); ++i) {
                    const double expect = w * s.alpha(tau) / s.sigma(tau) * (batch[f][i] - targets[f][i]);
                    const double err = std::abs(g.grads[f][i] - expect) / std::max(std::abs(expect), 1e-12);
                    if (std::abs(expect) > 1e-12 || std::abs(g.grads[f][i]) > 1e-12) worst = std::max(worst, err);
                }
        }
    }
    return {worst <= 1e-6, fmt("max relative error %.2e at tau 83/467/902, 16x16, unit and sigma^2 weighting", worst)};
}

} // namespace

int main() {
    std::printf("dyntypo acceptance suite\n");
    report("gradient-suite", gradient_suite);
    report("delaunay-oracle", delaunay_oracle);
    report("rasterizer-oracle", rasterizer_oracle);
    report("annealing-encoding", annealing_exactness);
    report("surrogate-translation", translation_run);
    report("ablation-trends", ablation);
    report("determinism", determinism);
    report("sds-algebra", sds_algebra);
    std::printf("%d failed\n", failures);
    return failures == 0 ? 0 : 1;
}

// dyntypo: animate a vector letter, plus the verification harnesses.

#include "dyntypo/dyntypo.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

using namespace dyntypo;

namespace {

struct GuidanceSpec {
    std::string kind; // surrogate | external
    std::string target;
    std::string host;
    int port = 0;
};

GuidanceSpec parse_guidance(const std::string& text) {
    GuidanceSpec g;
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw ConfigError("--guidance must be surrogate:<svg> or external:<host:port>");
    g.kind = text.substr(0, colon);
    const std::string rest = text.substr(colon + 1);
    if (g.kind == "surrogate") {
        if (rest.empty()) throw ConfigError("--guidance surrogate: needs a target glyph");
        g.target = rest;
    } else if (g.kind == "external") {
        const auto c = rest.rfind(':');
        if (c == std::string::npos || c == 0) throw ConfigError("--guidance external: needs host:port");
        g.host = rest.substr(0, c);
        try {
            g.port = std::stoi(rest.substr(c + 1));
        } catch (const std::exception&) {
            throw ConfigError("--guidance external: bad port '" + rest.substr(c + 1) + "'");
        }
    } else {
        throw ConfigError("unknown guidance kind '" + g.kind + "'");
    }
    return g;
}

struct AnimateArgs {
    std::string glyph, prompt, config, guidance, out = "out", resume;
    std::optional<std::uint64_t> seed;
};

int run_animate(const AnimateArgs& a) {
    TrainConfig cfg = a.config.empty() ? TrainConfig{} : load_config(a.config);
    cfg.prompt = a.prompt;
    if (a.seed) cfg.seed = *a.seed;
    if (!a.guidance.empty()) {
        const GuidanceSpec g = parse_guidance(a.guidance);
        cfg.guidance.backend = g.kind;
        if (g.kind == "surrogate") cfg.guidance.target = g.target;
        else cfg.guidance.host = g.host, cfg.guidance.port = g.port;
    }
    if (cfg.guidance.backend == "surrogate" && cfg.guidance.target.empty()) cfg.guidance.target = a.glyph;
    cfg.validate();

    const PreparedGlyph letter = prepare_glyph(load_glyph(a.glyph), cfg);
    auto backend = make_backend(cfg, letter);
    Trainer trainer(letter.glyph, cfg, *backend);
    if (!a.resume.empty()) trainer.load_checkpoint(a.resume);
    std::cerr << "animating " << letter.glyph.point_count() << " points, " << cfg.frames << " frames at "
              << cfg.resolution << "x" << cfg.resolution << " with " << backend->id() << "\n";
    trainer.run(
        [](const StepLog& l) {
            std::fprintf(stderr, "iter %d loss %.6g legibility %.6g structure %.6g tau %d %s\n", l.iteration,
                         l.total, l.legibility, l.structure, l.tau, l.local_phase ? "local" : "global");
        },
        a.out);
    const TrainResult r = trainer.evaluate();
    const fs::path manifest = write_artifacts(trainer, r, a.out);
    std::cout << "manifest " << manifest.string() << "\n";
    std::cout << "conformity_proxy " << r.conformity << "\n";
    std::cout << "temporal_consistency_proxy " << r.temporal_consistency << "\n";
    return 0;
}

int run_triangulate(const std::string& glyph, std::size_t points, const std::string& out) {
    const GlyphPath raw = load_glyph(glyph);
    const GlyphPath g = subdivide(normalize_canvas(raw, raw.canvas), points);
    const TriMesh mesh = delaunay(g.flat_points());
    if (!out.empty()) {
        if (const fs::path dir = fs::path(out).parent_path(); !dir.empty()) fs::create_directories(dir);
        write_mesh(mesh, out);
    }
    else
        for (const auto& t : mesh.triangles) std::cout << t[0] << " " << t[1] << " " << t[2] << "\n";
    std::cout << "vertices " << mesh.vertex_count << "\n";
    std::cout << "triangles " << mesh.size() << "\n";
    return 0;
}

int run_rasterize(const std::string& glyph, std::size_t res, double softness, const std::string& out) {
    const GlyphPath g = load_glyph(glyph);
    RasterOptions opt = RasterOptions::square(res, g.canvas);
    opt.softness = softness;
    if (const fs::path dir = fs::path(out).parent_path(); !dir.empty()) fs::create_directories(dir);
    write_ppm(render(g, opt), out);
    std::cerr << "wrote " << out << "\n";
    return 0;
}

int run_check_grad(const std::string& module) {
    bool ok = true;
    for (const SuiteResult& r : run_gradient_suites(module)) {
        std::printf("%s: max relative error %.3e over %zu coordinates (%.2fs)\n", r.name.c_str(),
                    r.report.max_rel_error, r.report.coords_checked, r.seconds);
        ok = ok && r.report.max_rel_error < 1e-3;
    }
    return ok ? 0 : 1;
}

/// Frames from a directory: frame_*.ppm if present, else frame_*.svg
/// rendered at their own canvas size.
std::vector<Raster> load_frames(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
    std::vector<fs::path> ppm, svg;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (name.rfind("frame_", 0) != 0) continue;
        if (e.path().extension() == ".ppm") ppm.push_back(e.path());
        if (e.path().extension() == ".svg") svg.push_back(e.path());
    }
    std::sort(ppm.begin(), ppm.end());
    std::sort(svg.begin(), svg.end());
    std::vector<Raster> frames;
    if (!ppm.empty()) {
        for (const auto& p : ppm) frames.push_back(read_ppm(p));
    } else {
        for (const auto& p : svg) {
            const GlyphPath g = load_glyph(p.string());
            frames.push_back(render(g, RasterOptions::square(static_cast<std::size_t>(g.canvas.width), g.canvas)));
        }
    }
    if (frames.empty()) throw IoError("no frame_*.ppm or frame_*.svg files in " + dir.string());
    return frames;
}

int run_eval(const std::string& frames_dir, const std::string& letter_path) {
    const std::vector<Raster> frames = load_frames(frames_dir);
    const std::size_t res = frames[0].rows;
    const CanvasSize canvas{static_cast<double>(res), static_cast<double>(frames[0].cols)};
    const GlyphPath letter = normalize_canvas(load_glyph(letter_path), canvas);
    RasterOptions opt;
    opt.height = res;
    opt.width = frames[0].cols;
    const Raster letter_img = render(letter, opt);
    std::cout << "frames " << frames.size() << "\n";
    std::cout << "conformity_proxy " << conformity_proxy(frames, letter_img) << "\n";
    if (frames.size() >= 2) std::cout << "temporal_consistency_proxy " << temporal_consistency_proxy(frames) << "\n";
    else std::cout << "temporal_consistency_proxy n/a (single frame)\n";
    return 0;
}

int run_mock(int port, const std::string& mode, double value, std::size_t max_connections) {
    MockGuidance mock;
    if (mode == "zero") mock.mode = MockGuidance::Mode::zero;
    else if (mode == "constant") mock.mode = MockGuidance::Mode::constant;
    else if (mode == "echo") mock.mode = MockGuidance::Mode::echo;
    else throw ConfigError("unknown mock mode '" + mode + "'");
    mock.value = value;
    net::Listener listener(port);
    std::cout << "listening on 127.0.0.1:" << listener.port() << std::endl;
    mock.serve(listener, max_connections);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dyntypo: animate vector letters with score-distillation guidance"};
    app.require_subcommand(1);

    AnimateArgs an;
    auto* animate = app.add_subcommand("animate", "Optimize an animation and write the artifact bundle");
    animate->add_option("--glyph", an.glyph, "SVG file or inline path data")->required();
    animate->add_option("--prompt", an.prompt, "Text prompt forwarded to the guidance backend")->required();
    animate->add_option("--config", an.config, "JSON training config (keys overlay the defaults)");
    animate->add_option("--guidance", an.guidance, "surrogate:<target.svg> or external:<host:port>");
    animate->add_option("--out", an.out, "Output directory")->capture_default_str();
    animate->add_option("--seed", an.seed, "Override the config seed");
    animate->add_option("--resume", an.resume, "Checkpoint to resume from");

    std::string tri_glyph, tri_out;
    std::size_t tri_points = 75;
    auto* triangulate = app.add_subcommand("triangulate", "Delaunay mesh of the subdivided control points");
    triangulate->add_option("--glyph", tri_glyph, "SVG file or inline path data")->required();
    triangulate->add_option("--points", tri_points, "Minimum control-point count")->capture_default_str();
    triangulate->add_option("--out", tri_out, "Write the mesh here instead of standard output");

    std::string ras_glyph, ras_out;
    std::size_t ras_res = 256;
    double ras_soft = 1.0;
    auto* rasterize = app.add_subcommand("rasterize", "Render a glyph to a binary PGM/PPM (P5) file");
    rasterize->add_option("--glyph", ras_glyph, "SVG file or inline path data")->required();
    rasterize->add_option("--res", ras_res, "Square output resolution")->check(CLI::PositiveNumber)->capture_default_str();
    rasterize->add_option("--softness", ras_soft, "Edge softness in pixels")->check(CLI::PositiveNumber)->capture_default_str();
    rasterize->add_option("--out", ras_out, "Output file")->required();

    std::string grad_module = "all";
    auto* check = app.add_subcommand("check-grad", "Finite-difference gradient suites");
    check->add_option("--module", grad_module, "Suite to run")
        ->check(CLI::IsMember({"raster", "losses", "fields", "all"}))
        ->capture_default_str();

    std::string ev_frames, ev_letter;
    auto* eval = app.add_subcommand("eval", "Conformity and temporal-consistency proxies of a frame directory");
    eval->add_option("--frames", ev_frames, "Directory of frame_*.ppm or frame_*.svg")->required();
    eval->add_option("--letter", ev_letter, "Input letter (SVG file or path data)")->required();

    int mock_port = 0;
    std::string mock_mode = "zero";
    double mock_value = 0.0;
    std::size_t mock_max = 0;
    auto* mock = app.add_subcommand("mock-guidance", "Serve the deterministic mock guidance backend");
    mock->add_option("--port", mock_port, "TCP port on 127.0.0.1 (0 picks a free port)")->capture_default_str();
    mock->add_option("--mode", mock_mode, "Reply mode")->check(CLI::IsMember({"zero", "constant", "echo"}))->capture_default_str();
    mock->add_option("--value", mock_value, "Gradient value in constant mode")->capture_default_str();
    mock->add_option("--max-connections", mock_max, "Exit after this many connections (0 = never)")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*animate) return run_animate(an);
        if (*triangulate) return run_triangulate(tri_glyph, tri_points, tri_out);
        if (*rasterize) return run_rasterize(ras_glyph, ras_res, ras_soft, ras_out);
        if (*check) return run_check_grad(grad_module);
        if (*eval) return run_eval(ev_frames, ev_letter);
        if (*mock) return run_mock(mock_port, mock_mode, mock_value, mock_max);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

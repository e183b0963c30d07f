#pragma once

// Animation artifacts: per-frame SVG documents, binary PGM-style (P5)
// rasters and a JSON run manifest with content hashes.

#include "dyntypo/error.hpp"
#include "dyntypo/glyph.hpp"
#include "dyntypo/raster.hpp"

#include "json.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace dyntypo {

namespace fs = std::filesystem;

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_text_file(p.string())); }

inline void write_bytes(const fs::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

/// Standalone SVG 1.1 document: black even-odd fill on white.
inline std::string frame_svg(const GlyphPath& g) {
    const std::string w = format_coord(g.canvas.width), h = format_coord(g.canvas.height);
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
           "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + w + "\" height=\"" + h +
           "\" viewBox=\"0 0 " + w + " " + h + "\">\n"
           "  <rect width=\"" + w + "\" height=\"" + h + "\" fill=\"white\"/>\n"
           "  <path fill=\"black\" fill-rule=\"evenodd\" d=\"" + serialize_path(g) + "\"/>\n"
           "</svg>\n";
}

inline std::string frame_name(std::size_t index, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.%s", index, ext);
    return buf;
}

inline std::vector<fs::path> write_svg_frames(const std::vector<GlyphPath>& frames, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    std::vector<fs::path> files;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const fs::path p = out_dir / frame_name(i, "svg");
        write_bytes(p, frame_svg(frames[i]));
        files.push_back(p);
    }
    return files;
}

/// Binary P5, maxval 255, byte = floor(255 * coverage + 0.5).
inline std::string encode_ppm(const Raster& r) {
    std::string out = "P5\n" + std::to_string(r.cols) + " " + std::to_string(r.rows) + "\n255\n";
    out.reserve(out.size() + r.size());
    for (double v : r.data) {
        const double q = std::floor(255.0 * std::clamp(v, 0.0, 1.0) + 0.5);
        out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
    return out;
}

inline void write_ppm(const Raster& r, const fs::path& path) { write_bytes(path, encode_ppm(r)); }

inline Raster read_ppm(const fs::path& path) {
    const std::string bytes = read_text_file(path.string());
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(start, pos - start);
    };
    if (token() != "P5") throw IoError(path.string() + ": not a P5 file");
    const std::size_t w = std::stoul(token()), h = std::stoul(token());
    if (token() != "255") throw IoError(path.string() + ": unsupported maxval");
    ++pos;
    if (bytes.size() - pos != w * h) throw IoError(path.string() + ": truncated pixel data");
    Raster r(h, w);
    for (std::size_t i = 0; i < w * h; ++i) r[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
    return r;
}

/// Everything a manifest records about a run.
struct RunManifest {
    nlohmann::json config;
    std::uint64_t seed = 0;
    nlohmann::json losses;
    nlohmann::json metrics;
    std::vector<fs::path> files; // hashed relative to the manifest directory
};

inline nlohmann::json manifest_json(const RunManifest& run, const fs::path& manifest_dir) {
    nlohmann::json inventory = nlohmann::json::array();
    for (const auto& f : run.files) {
        const fs::path full = f.is_absolute() ? f : manifest_dir / f;
        inventory.push_back({{"path", fs::relative(full, manifest_dir).generic_string()},
                             {"bytes", fs::file_size(full)},
                             {"sha256", sha256_file(full)}});
    }
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return {{"format", "dyntypo-run"},
            {"version", 1},
            {"created", stamp},
            {"seed", run.seed},
            {"config", run.config},
            {"losses", run.losses},
            {"metrics", run.metrics},
            {"files", inventory}};
}

inline void write_manifest(const RunManifest& run, const fs::path& path) {
    const nlohmann::json j = manifest_json(run, path.parent_path().empty() ? fs::path(".") : path.parent_path());
    write_bytes(path, j.dump(2) + "\n");
}

/// Paths whose current hash differs from the manifest (or that are missing).
inline std::vector<std::string> verify_manifest(const fs::path& path) {
    const auto j = nlohmann::json::parse(read_text_file(path.string()));
    const fs::path dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    std::vector<std::string> bad;
    for (const auto& f : j.at("files")) {
        const fs::path p = dir / f.at("path").get<std::string>();
        if (!fs::exists(p) || sha256_file(p) != f.at("sha256").get<std::string>()) bad.push_back(p.string());
    }
    return bad;
}

} // namespace dyntypo

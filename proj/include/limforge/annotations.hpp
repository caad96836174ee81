#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstddef>
#include <filesystem>
#include <future>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "limforge/common.hpp"
#include "limforge/geometry.hpp"

namespace limforge {

/// Boxes with |shoelace area| at or below this are rejected as degenerate.
inline constexpr double kDegenerateAreaPx2 = 1e-9;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// One oriented-box annotation: 4 vertices in pixel coordinates, as given in
/// the source file (no reordering), plus the class token.
struct OrientedBox {
    std::array<Vec2, 4> vertices{};
    std::string class_label;
    std::optional<int> difficulty;

    std::vector<Vec2> polygon() const {
        return {vertices[0], vertices[1], vertices[2], vertices[3]};
    }
    double area() const { return polygon_area(polygon()); }
};

struct SceneAnnotation {
    std::string image_id;
    int width = 0;
    int height = 0;
    std::optional<double> gsd;  // meters/pixel
    std::vector<OrientedBox> boxes;

    // Manifest-sourced plumbing (empty when the scene was parsed standalone).
    std::string dataset;
    std::string image_file;
};

struct Corpus {
    std::string name;
    std::vector<SceneAnnotation> scenes;
    std::vector<std::string> class_set;  // sorted union of box labels

    std::size_t instance_count() const {
        std::size_t n = 0;
        for (const auto& s : scenes) n += s.boxes.size();
        return n;
    }
};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ParseError : Error {
    enum class Kind { MalformedLine, DegenerateBox, OutOfBounds };

    ParseError(Kind k, int line_no, const std::string& detail)
        : Error("line " + std::to_string(line_no) + ": " + detail),
          kind(k),
          line(line_no) {}

    Kind kind;
    int line;
};

/// Aggregated per-file failures from load_corpus.
struct LoadError : Error {
    explicit LoadError(const std::vector<std::string>& msgs)
        : Error(join(msgs)), messages(msgs) {}
    std::vector<std::string> messages;

private:
    static std::string join(const std::vector<std::string>& msgs) {
        std::string out;
        for (const auto& m : msgs) {
            if (!out.empty()) out += "\n";
            out += m;
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// DOTA-style OBB text
// ---------------------------------------------------------------------------

enum class OobPolicy { Clamp, Reject };

namespace detail {

inline bool parse_double_token(std::string_view tok, double& out) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [p, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && p == last && std::isfinite(out);
}

inline bool parse_int_token(std::string_view tok, int& out) {
    const char* first = tok.data();
    const char* last = tok.data() + tok.size();
    auto [p, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && p == last;
}

inline std::vector<std::string> split_ws(std::string_view line) {
    std::vector<std::string> toks;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) toks.emplace_back(line.substr(i, j - i));
        i = j;
    }
    return toks;
}

}  // namespace detail

/// Parse DOTA-style OBB text: one box per line as
///   x1 y1 x2 y2 x3 y3 x4 y4 class [difficulty]
/// with optional "imagesource:..." / "gsd:..." header lines. Vertex order is
/// preserved. Out-of-bounds vertices are clamped to the image (default) or
/// rejected; a box that is degenerate (area <= 1e-9 px^2) after that step
/// raises DegenerateBox.
inline SceneAnnotation parse_dota_obb(std::string_view text,
                                      const std::string& image_id,
                                      int width, int height,
                                      OobPolicy policy = OobPolicy::Clamp,
                                      std::size_t* clamped_vertices = nullptr) {
    if (width < 1 || height < 1) throw Error("image dimensions must be >= 1");
    SceneAnnotation scene;
    scene.image_id = image_id;
    scene.width = width;
    scene.height = height;

    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos
                                                      ? text.size() - pos
                                                      : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        auto toks = detail::split_ws(line);
        if (toks.empty()) continue;

        if (line.rfind("imagesource", 0) == 0) continue;
        if (line.rfind("gsd", 0) == 0) {
            // "gsd:0.5" or "gsd: 0.5"; unparseable values (e.g. "gsd:null")
            // leave the field unset.
            auto colon = line.find(':');
            if (colon != std::string_view::npos) {
                std::string_view val = line.substr(colon + 1);
                while (!val.empty() && val.front() == ' ') val.remove_prefix(1);
                double g;
                if (detail::parse_double_token(val, g) && g > 0) scene.gsd = g;
            }
            continue;
        }

        if (toks.size() != 9 && toks.size() != 10) {
            throw ParseError(ParseError::Kind::MalformedLine, line_no,
                             "expected 9 or 10 tokens, got " + std::to_string(toks.size()));
        }

        OrientedBox box;
        for (int v = 0; v < 4; ++v) {
            double x, y;
            if (!detail::parse_double_token(toks[2 * v], x) ||
                !detail::parse_double_token(toks[2 * v + 1], y)) {
                throw ParseError(ParseError::Kind::MalformedLine, line_no,
                                 "unparseable coordinate");
            }
            box.vertices[v] = {x, y};
        }
        box.class_label = toks[8];
        if (toks.size() == 10) {
            int d;
            if (!detail::parse_int_token(toks[9], d)) {
                throw ParseError(ParseError::Kind::MalformedLine, line_no,
                                 "unparseable difficulty flag");
            }
            box.difficulty = d;
        }

        for (auto& v : box.vertices) {
            double cx = std::clamp(v.x, 0.0, static_cast<double>(width));
            double cy = std::clamp(v.y, 0.0, static_cast<double>(height));
            if (cx != v.x || cy != v.y) {
                if (policy == OobPolicy::Reject) {
                    throw ParseError(ParseError::Kind::OutOfBounds, line_no,
                                     "vertex outside image bounds");
                }
                if (clamped_vertices) ++*clamped_vertices;
                v = {cx, cy};
            }
        }

        if (box.area() <= kDegenerateAreaPx2) {
            throw ParseError(ParseError::Kind::DegenerateBox, line_no,
                             "box area below 1e-9 px^2");
        }
        scene.boxes.push_back(std::move(box));
    }
    return scene;
}

/// Inverse of parse_dota_obb. Coordinates are written with 6 decimals, so
/// parse(serialize(s)) reproduces s to 1e-6.
inline std::string serialize_dota_obb(const SceneAnnotation& scene) {
    std::string out;
    if (scene.gsd) {
        out += "gsd:";
        out += format_shortest(*scene.gsd);
        out += "\n";
    }
    for (const auto& b : scene.boxes) {
        for (int v = 0; v < 4; ++v) {
            out += format_fixed(b.vertices[v].x);
            out += ' ';
            out += format_fixed(b.vertices[v].y);
            out += ' ';
        }
        out += b.class_label;
        if (b.difficulty) {
            out += ' ';
            out += std::to_string(*b.difficulty);
        }
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Corpus manifest
// ---------------------------------------------------------------------------

struct LoadOptions {
    OobPolicy oob = OobPolicy::Clamp;
    unsigned threads = 0;  // 0 = hardware_concurrency
};

struct LoadStats {
    std::size_t scenes = 0;
    std::size_t boxes = 0;
    std::size_t clamped_vertices = 0;
};

/// Load a corpus manifest: a JSON array of scene records
///   {image_id, width, height, annotation_file, [image_file], [gsd], [dataset]}
/// with file paths relative to the manifest. Annotation files are parsed in
/// parallel; output order follows the manifest. All per-file failures are
/// aggregated into one LoadError.
inline Corpus load_corpus(const std::filesystem::path& manifest_path,
                          const LoadOptions& options = {},
                          LoadStats* stats = nullptr) {
    namespace fs = std::filesystem;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw LoadError({manifest_path.string() + ": " + e.what()});
    }
    if (!doc.is_array()) {
        throw LoadError({manifest_path.string() + ": manifest must be a JSON array"});
    }

    Corpus corpus;
    corpus.name = manifest_path.stem().string();
    const fs::path base = manifest_path.parent_path();

    struct Record {
        std::string image_id;
        int width = 0, height = 0;
        fs::path annotation_file;
        std::string image_file;
        std::optional<double> gsd;
        std::string dataset;
    };
    std::vector<Record> records;
    std::vector<std::string> errors;

    std::set<std::string> seen_ids;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const auto& r = doc[i];
        try {
            Record rec;
            rec.image_id = r.at("image_id").get<std::string>();
            rec.width = r.at("width").get<int>();
            rec.height = r.at("height").get<int>();
            rec.annotation_file = base / r.at("annotation_file").get<std::string>();
            if (r.contains("image_file"))
                rec.image_file = (base / r["image_file"].get<std::string>()).string();
            if (r.contains("gsd")) rec.gsd = r["gsd"].get<double>();
            rec.dataset = r.value("dataset", corpus.name);
            if (rec.image_id.empty()) throw Error("image_id must be non-empty");
            if (rec.width < 1 || rec.height < 1) throw Error("width/height must be >= 1");
            if (!seen_ids.insert(rec.image_id).second)
                throw Error("duplicate image_id '" + rec.image_id + "'");
            records.push_back(std::move(rec));
        } catch (const std::exception& e) {
            errors.push_back(manifest_path.string() + "[" + std::to_string(i) + "]: " +
                             e.what());
        }
    }
    if (!errors.empty()) throw LoadError(errors);

    struct SceneResult {
        std::optional<SceneAnnotation> scene;
        std::string error;
        std::size_t clamped = 0;
    };
    std::vector<SceneResult> results(records.size());

    auto parse_one = [&](std::size_t i) {
        const Record& rec = records[i];
        SceneResult& res = results[i];
        try {
            std::string text = read_text_file(rec.annotation_file);
            SceneAnnotation scene = parse_dota_obb(text, rec.image_id, rec.width,
                                                   rec.height, options.oob, &res.clamped);
            if (rec.gsd) scene.gsd = rec.gsd;  // manifest value wins
            scene.dataset = rec.dataset;
            scene.image_file = rec.image_file;
            res.scene = std::move(scene);
        } catch (const std::exception& e) {
            res.error = rec.annotation_file.string() + ": " + e.what();
        }
    };

    unsigned threads = options.threads ? options.threads
                                       : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, std::max<std::size_t>(records.size(), 1));
    if (threads <= 1 || records.size() <= 1) {
        for (std::size_t i = 0; i < records.size(); ++i) parse_one(i);
    } else {
        std::vector<std::future<void>> futs;
        futs.reserve(threads);
        for (unsigned t = 0; t < threads; ++t) {
            futs.push_back(std::async(std::launch::async, [&, t] {
                for (std::size_t i = t; i < records.size(); i += threads) parse_one(i);
            }));
        }
        for (auto& f : futs) f.get();
    }

    std::set<std::string> classes;
    std::size_t total_boxes = 0, total_clamped = 0;
    for (auto& res : results) {
        if (!res.error.empty()) {
            errors.push_back(res.error);
            continue;
        }
        total_clamped += res.clamped;
        total_boxes += res.scene->boxes.size();
        for (const auto& b : res.scene->boxes) classes.insert(b.class_label);
        corpus.scenes.push_back(std::move(*res.scene));
    }
    if (!errors.empty()) throw LoadError(errors);

    corpus.class_set.assign(classes.begin(), classes.end());
    if (stats) {
        stats->scenes = corpus.scenes.size();
        stats->boxes = total_boxes;
        stats->clamped_vertices = total_clamped;
    }
    return corpus;
}

}  // namespace limforge

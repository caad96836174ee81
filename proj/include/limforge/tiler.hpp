#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "limforge/annotations.hpp"
#include "limforge/geometry.hpp"
#include "limforge/raster.hpp"

namespace limforge {

struct TileConfig {
    int window = 1024;
    int overlap = 256;  // 0 for validation-style tiling
    std::uint8_t pad_value = 0;
    bool keep_empty = false;
    // Minimum retained fraction of a clipped box's original area for the box
    // to keep its label in a patch.
    double min_box_area_ratio = 0.3;

    void validate() const {
        if (window < 1) throw Error("tile window must be >= 1");
        if (overlap < 0 || overlap >= window)
            throw Error("tile overlap must satisfy 0 <= overlap < window");
        if (min_box_area_ratio < 0 || min_box_area_ratio > 1)
            throw Error("min_box_area_ratio must be in [0, 1]");
    }
};

struct Patch {
    std::string parent_id;
    int x = 0, y = 0;  // origin in parent coordinates
    Image pixels;      // window x window
    std::vector<OrientedBox> annotations;  // patch coordinates
    bool padded = false;

    std::string stem() const {
        return parent_id + "__" + std::to_string(x) + "_" + std::to_string(y);
    }
};

struct RasterMismatchError : Error {
    using Error::Error;
};
struct CoverageGapError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Origin enumeration
// ---------------------------------------------------------------------------

namespace detail {

/// Origins along one axis: 0, stride, 2*stride, ...; an origin whose window
/// would overrun the image clamps to max(0, dim - window), so border patches
/// overlap more instead of spilling into padding.
inline std::vector<int> axis_origins(int dim, int window, int stride) {
    std::vector<int> out;
    int o = 0;
    while (true) {
        if (o + window >= dim) {
            out.push_back(std::max(0, dim - window));
            break;
        }
        out.push_back(o);
        o += stride;
    }
    if (out.size() >= 2 && out[out.size() - 1] == out[out.size() - 2]) out.pop_back();
    return out;
}

}  // namespace detail

/// Row-major patch origins covering a width x height image.
inline std::vector<std::pair<int, int>> tile_origins(int width, int height,
                                                     const TileConfig& cfg) {
    cfg.validate();
    if (width < 1 || height < 1) throw Error("tile_origins: empty image");
    const int stride = cfg.window - cfg.overlap;
    std::vector<int> xs = detail::axis_origins(width, cfg.window, stride);
    std::vector<int> ys = detail::axis_origins(height, cfg.window, stride);
    std::vector<std::pair<int, int>> out;
    out.reserve(xs.size() * ys.size());
    for (int y : ys)
        for (int x : xs) out.emplace_back(x, y);
    return out;
}

// ---------------------------------------------------------------------------
// Scene tiling
// ---------------------------------------------------------------------------

namespace detail {

inline bool box_inside_window(const OrientedBox& box, double x0, double y0,
                              double x1, double y1) {
    for (const auto& v : box.vertices)
        if (v.x < x0 || v.x > x1 || v.y < y0 || v.y > y1) return false;
    return true;
}

/// Clip a box to the window; re-fit the minimum-area rectangle to the clipped
/// polygon when the box was cut. Returns false when the retained area falls
/// below the configured fraction of the original.
inline bool clip_box_to_window(const OrientedBox& box, int ox, int oy, int window,
                               double min_ratio, OrientedBox* out) {
    const double x0 = ox, y0 = oy, x1 = ox + window, y1 = oy + window;
    *out = box;
    if (box_inside_window(box, x0, y0, x1, y1)) {
        for (auto& v : out->vertices) v = {v.x - x0, v.y - y0};
        return true;
    }
    std::vector<Vec2> clipped = clip_to_rect(box.polygon(), x0, y0, x1, y1);
    if (clipped.size() < 3) return false;
    double kept = polygon_area(clipped);
    if (kept <= kDegenerateAreaPx2) return false;
    if (kept < min_ratio * box.area()) return false;

    auto corners = min_area_rect(clipped).corners();
    for (int i = 0; i < 4; ++i) {
        // The refit rectangle can poke slightly past the window even though
        // the clipped polygon cannot; clamp to keep vertices in-bounds.
        out->vertices[i] = {std::clamp(corners[i].x - x0, 0.0, static_cast<double>(window)),
                            std::clamp(corners[i].y - y0, 0.0, static_cast<double>(window))};
    }
    return true;
}

}  // namespace detail

/// Crop a scene into window x window patches: pad with pad_value where the
/// image is smaller than the window, re-project annotations into patch
/// coordinates, and (unless keep_empty) drop patches without any retained box.
inline std::vector<Patch> tile_scene(const SceneAnnotation& scene, const Image& raster,
                                     const TileConfig& cfg) {
    cfg.validate();
    if (raster.width != scene.width || raster.height != scene.height)
        throw RasterMismatchError("raster is " + std::to_string(raster.width) + "x" +
                                  std::to_string(raster.height) + " but scene " +
                                  scene.image_id + " declares " +
                                  std::to_string(scene.width) + "x" +
                                  std::to_string(scene.height));

    std::vector<Patch> patches;
    for (auto [ox, oy] : tile_origins(scene.width, scene.height, cfg)) {
        Patch patch;
        patch.parent_id = scene.image_id;
        patch.x = ox;
        patch.y = oy;
        patch.padded = ox + cfg.window > raster.width || oy + cfg.window > raster.height;

        patch.pixels = Image(cfg.window, cfg.window, raster.channels, cfg.pad_value);
        const int copy_h = std::min(cfg.window, raster.height - oy);
        const int copy_w = std::min(cfg.window, raster.width - ox);
        for (int y = 0; y < copy_h; ++y) {
            const std::uint8_t* src =
                &raster.pixels[(static_cast<std::size_t>(oy + y) * raster.width + ox) *
                               raster.channels];
            std::uint8_t* dst =
                &patch.pixels.pixels[static_cast<std::size_t>(y) * cfg.window *
                                     raster.channels];
            std::copy(src, src + static_cast<std::size_t>(copy_w) * raster.channels, dst);
        }

        for (const auto& box : scene.boxes) {
            OrientedBox projected;
            if (detail::clip_box_to_window(box, ox, oy, cfg.window,
                                           cfg.min_box_area_ratio, &projected))
                patch.annotations.push_back(std::move(projected));
        }

        if (patch.annotations.empty() && !cfg.keep_empty) continue;
        patches.push_back(std::move(patch));
    }
    return patches;
}

// ---------------------------------------------------------------------------
// Stitch-back validation (inverse check for overlap-0 tilings)
// ---------------------------------------------------------------------------

/// Reassemble overlap-0 patches of a single parent. The result equals the
/// pad_value-extended parent bit-exactly; any uncovered pixel of the padded
/// extent raises CoverageGapError.
inline Image stitch_validate(const std::vector<Patch>& patches, const TileConfig& cfg) {
    if (patches.empty()) throw CoverageGapError("no patches to stitch");
    const int window = cfg.window;
    int ext_w = 0, ext_h = 0;
    for (const auto& p : patches) {
        if (p.parent_id != patches[0].parent_id)
            throw Error("stitch_validate: patches from different parents");
        if (p.pixels.width != window || p.pixels.height != window)
            throw Error("stitch_validate: patch raster is not window-sized");
        ext_w = std::max(ext_w, p.x + window);
        ext_h = std::max(ext_h, p.y + window);
    }

    Image out(ext_w, ext_h, patches[0].pixels.channels, cfg.pad_value);
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(ext_w) * ext_h, 0);
    for (const auto& p : patches) {
        for (int y = 0; y < window; ++y) {
            for (int x = 0; x < window; ++x) {
                covered[static_cast<std::size_t>(p.y + y) * ext_w + (p.x + x)] = 1;
                for (int c = 0; c < out.channels; ++c)
                    out.at(p.y + y, p.x + x, c) = p.pixels.at(y, x, c);
            }
        }
    }
    for (std::size_t i = 0; i < covered.size(); ++i) {
        if (!covered[i])
            throw CoverageGapError("pixel (" + std::to_string(i % ext_w) + "," +
                                   std::to_string(i / ext_w) + ") not covered");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Patch output: raster + DOTA-style text per patch + a tiling manifest
// ---------------------------------------------------------------------------

inline nlohmann::json write_tiles(const std::filesystem::path& out_dir,
                                  const SceneAnnotation& scene,
                                  const std::vector<Patch>& patches,
                                  const TileConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    nlohmann::json origins = nlohmann::json::array();
    for (const auto& p : patches) {
        std::string stem = p.stem();
        write_pnm(p.pixels, out_dir / (stem + (p.pixels.channels == 1 ? ".pgm" : ".ppm")));

        SceneAnnotation pscene;
        pscene.image_id = stem;
        pscene.width = pscene.height = cfg.window;
        pscene.gsd = scene.gsd;
        pscene.boxes = p.annotations;
        write_text_file(out_dir / (stem + ".txt"), serialize_dota_obb(pscene));
        origins.push_back({p.x, p.y});
    }

    int ext_w = 0, ext_h = 0;
    for (const auto& p : patches) {
        ext_w = std::max(ext_w, p.x + cfg.window);
        ext_h = std::max(ext_h, p.y + cfg.window);
    }
    nlohmann::json manifest = {
        {"parent_id", scene.image_id},
        {"window", cfg.window},
        {"overlap", cfg.overlap},
        {"origins", origins},
        {"padded_extent", {ext_w, ext_h}},
    };
    write_text_file(out_dir / (scene.image_id + "__tiles.json"), manifest.dump(2) + "\n");
    return manifest;
}

}  // namespace limforge

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "limforge/common.hpp"

namespace limforge {

/// 8-bit raster, 1 (grayscale) or 3 (RGB) interleaved channels.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, fill) {}

    std::uint8_t& at(int y, int x, int c = 0) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t at(int y, int x, int c = 0) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    bool operator==(const Image&) const = default;
};

/// Binary PGM (P5) / PPM (P6), maxval <= 255.
inline Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFileError(path);

    auto next_token = [&in, &path]() {
        std::string tok;
        int ch;
        while ((ch = in.get()) != EOF) {
            if (ch == '#') {  // comment to end of line
                while ((ch = in.get()) != EOF && ch != '\n') {}
                continue;
            }
            if (std::isspace(ch)) {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(static_cast<char>(ch));
        }
        if (tok.empty()) throw Error("truncated PNM header: " + path.string());
        return tok;
    };

    std::string magic = next_token();
    int channels;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw Error("unsupported raster format '" + magic + "' in " + path.string() +
                    " (binary P5/P6 expected)");
    }
    int w = std::stoi(next_token());
    int h = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (w < 1 || h < 1) throw Error("bad PNM dimensions in " + path.string());
    if (maxval < 1 || maxval > 255)
        throw Error("unsupported PNM maxval in " + path.string());

    Image img(w, h, channels);
    in.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw Error("truncated PNM payload: " + path.string());
    return img;
}

inline void write_pnm(const Image& img, const std::filesystem::path& path) {
    if (img.channels != 1 && img.channels != 3)
        throw Error("write_pnm: only 1- or 3-channel rasters");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write: " + path.string());
    out << (img.channels == 1 ? "P5" : "P6") << "\n"
        << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
}

}  // namespace limforge

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>

#include "lspt/errors.hpp"

namespace lspt {

// Renders a normalized grid as an 8-bit binary PGM (P5), scaled so the
// largest bin maps to 255. An all-zero grid renders black.
inline std::string render_pgm(std::span<const double> grid, int width, int height) {
    if (width <= 0 || height <= 0 || grid.size() != static_cast<size_t>(width) * height)
        throw ConfigError("pgm: grid size does not match dimensions");
    double maxv = 0.0;
    for (double v : grid) maxv = std::max(maxv, v);
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.reserve(out.size() + grid.size());
    for (double v : grid) {
        int pix = maxv > 0.0 ? static_cast<int>(std::lround(255.0 * v / maxv)) : 0;
        out.push_back(static_cast<char>(std::clamp(pix, 0, 255)));
    }
    return out;
}

inline void write_pgm(const std::string& path, std::span<const double> grid, int width,
                      int height) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("pgm: cannot open '" + path + "'");
    const std::string bytes = render_pgm(grid, width, height);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace lspt

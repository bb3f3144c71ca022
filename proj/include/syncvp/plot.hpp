// SPDX-License-Identifier: Apache-2.0
#pragma once

// Raster images, PNG output and simple line plots.

#include "syncvp/triplane_codec.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace syncvp {

using Rgb = std::array<uint8_t, 3>;

struct Image {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb; // row-major, 3 bytes per pixel

    static Image blank(int width, int height, Rgb fill = {255, 255, 255});
    void set(int x, int y, Rgb c);
    Rgb get(int x, int y) const;
    void line(int x0, int y0, int x1, int y1, Rgb c);
    void rect(int x0, int y0, int x1, int y1, Rgb c); // filled, inclusive
    /// Upper-case 3x5 bitmap text; unknown characters render as blanks.
    void text(int x, int y, const std::string& s, Rgb c, int scale = 2);
};

void write_png(const std::string& path, const Image& img);

/// One row per clip, one column per frame; values in [-1, 1] map to grey.
Image frame_grid(const std::vector<VideoClip>& rows, int scale = 4);

struct Series {
    std::string label;
    std::vector<double> x, y;
    Rgb color{0, 0, 0};
};

Image line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                const std::string& y_label, int width = 720, int height = 440);

/// Trailing moving average, for noisy loss curves.
std::vector<double> smooth(const std::vector<double>& v, int window);

const std::vector<Rgb>& palette();

} // namespace syncvp

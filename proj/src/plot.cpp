// SPDX-License-Identifier: Apache-2.0
#include "syncvp/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace syncvp {

namespace {

// 3x5 glyphs, 15 bits, top row in the high bits.
const std::map<char, uint16_t>& glyphs() {
    static const std::map<char, uint16_t> g = [] {
        const std::vector<std::pair<char, const char*>> rows{
            {'0', "111101101101111"}, {'1', "010110010010111"}, {'2', "111001111100111"}, {'3', "111001111001111"},
            {'4', "101101111001001"}, {'5', "111100111001111"}, {'6', "111100111101111"}, {'7', "111001001001001"},
            {'8', "111101111101111"}, {'9', "111101111001111"}, {'A', "010101111101101"}, {'B', "110101110101110"},
            {'C', "011100100100011"}, {'D', "110101101101110"}, {'E', "111100110100111"}, {'F', "111100110100100"},
            {'G', "011100101101011"}, {'H', "101101111101101"}, {'I', "111010010010111"}, {'J', "001001001101010"},
            {'K', "101101110101101"}, {'L', "100100100100111"}, {'M', "101111111101101"}, {'N', "110101101101101"},
            {'O', "010101101101010"}, {'P', "110101110100100"}, {'Q', "010101101110011"}, {'R', "110101110101101"},
            {'S', "011100010001110"}, {'T', "111010010010010"}, {'U', "101101101101111"}, {'V', "101101101101010"},
            {'W', "101101111111101"}, {'X', "101101010101101"}, {'Y', "101101010010010"}, {'Z', "111001010100111"},
            {'.', "000000000000010"}, {'-', "000000111000000"}, {'_', "000000000000111"}, {':', "000010000010000"},
            {'=', "000111000111000"}, {'/', "001001010100100"}, {'(', "010100100100010"}, {')', "010001001001010"},
            {'+', "000010111010000"}, {',', "000000000010100"}, {'%', "101001010100101"}, {'<', "001010100010001"},
            {'>', "100010001010100"},
        };
        std::map<char, uint16_t> out;
        for (const auto& [c, bits] : rows) out[c] = static_cast<uint16_t>(std::stoi(bits, nullptr, 2));
        return out;
    }();
    return g;
}

std::string fmt(double v) {
    std::ostringstream os;
    const double a = std::abs(v);
    if (a != 0 && (a >= 1e4 || a < 1e-2)) os << std::scientific << std::setprecision(1) << v;
    else os << std::setprecision(3) << v;
    return os.str();
}

} // namespace

Image Image::blank(int width, int height, Rgb fill) {
    Image img;
    img.width = width;
    img.height = height;
    img.rgb.resize(static_cast<size_t>(width) * height * 3);
    for (size_t i = 0; i < img.rgb.size(); i += 3) std::copy(fill.begin(), fill.end(), img.rgb.begin() + static_cast<long>(i));
    return img;
}

void Image::set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const size_t i = (static_cast<size_t>(y) * width + x) * 3;
    rgb[i] = c[0];
    rgb[i + 1] = c[1];
    rgb[i + 2] = c[2];
}

Rgb Image::get(int x, int y) const {
    const size_t i = (static_cast<size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void Image::line(int x0, int y0, int x1, int y1, Rgb c) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
        set(x0, y0, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void Image::rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
        for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

void Image::text(int x, int y, const std::string& s, Rgb c, int scale) {
    const auto& g = glyphs();
    for (char ch : s) {
        const auto it = g.find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
        if (it != g.end())
            for (int r = 0; r < 5; ++r)
                for (int k = 0; k < 3; ++k)
                    if (it->second & (1u << (14 - (r * 3 + k)))) rect(x + k * scale, y + r * scale, x + k * scale + scale - 1, y + r * scale + scale - 1, c);
        x += 4 * scale;
    }
}

void write_png(const std::string& path, const Image& img) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw Error("cannot write '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw Error("libpng failed writing '" + path + "'");
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y)
        png_write_row(png, const_cast<png_bytep>(img.rgb.data() + static_cast<size_t>(y) * img.width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image frame_grid(const std::vector<VideoClip>& rows, int scale) {
    int cols = 0, fh = 0, fw = 0;
    for (const VideoClip& c : rows) {
        cols = std::max(cols, c.T);
        fh = std::max(fh, c.H);
        fw = std::max(fw, c.W);
    }
    constexpr int gap = 2;
    Image img = Image::blank(cols * (fw * scale + gap) + gap, static_cast<int>(rows.size()) * (fh * scale + gap) + gap,
                             {40, 40, 40});
    for (size_t r = 0; r < rows.size(); ++r) {
        const VideoClip& c = rows[r];
        for (int t = 0; t < c.T; ++t)
            for (int y = 0; y < c.H; ++y)
                for (int x = 0; x < c.W; ++x) {
                    const auto v = static_cast<uint8_t>(std::lround(std::clamp((c.at(t, y, x) + 1.0) * 127.5, 0.0, 255.0)));
                    const int x0 = gap + t * (fw * scale + gap) + x * scale;
                    const int y0 = gap + static_cast<int>(r) * (fh * scale + gap) + y * scale;
                    img.rect(x0, y0, x0 + scale - 1, y0 + scale - 1, {v, v, v});
                }
    }
    return img;
}

const std::vector<Rgb>& palette() {
    static const std::vector<Rgb> p{{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14},
                                    {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {23, 190, 207}};
    return p;
}

std::vector<double> smooth(const std::vector<double>& v, int window) {
    std::vector<double> out;
    double acc = 0;
    for (size_t i = 0; i < v.size(); ++i) {
        acc += v[i];
        if (i >= static_cast<size_t>(window)) acc -= v[i - static_cast<size_t>(window)];
        out.push_back(acc / static_cast<double>(std::min(i + 1, static_cast<size_t>(window))));
    }
    return out;
}

Image line_plot(const std::vector<Series>& series, const std::string& title, const std::string& x_label,
                const std::string& y_label, int width, int height) {
    Image img = Image::blank(width, height);
    const int left = 80, right = width - 20, top = 40, bottom = height - 50;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const Series& s : series)
        for (size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (right - left))); };
    auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (bottom - top))); };

    const Rgb axis{0, 0, 0}, grid{225, 225, 225};
    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0, xv = xmin + (xmax - xmin) * i / 4.0;
        img.line(left, py(yv), right, py(yv), grid);
        img.line(px(xv), top, px(xv), bottom, grid);
        img.text(4, py(yv) - 5, fmt(yv), axis);
        const std::string xs = fmt(xv);
        img.text(px(xv) - static_cast<int>(xs.size()) * 4, bottom + 8, xs, axis);
    }
    img.line(left, bottom, right, bottom, axis);
    img.line(left, top, left, bottom, axis);
    img.text(left, 10, title, axis, 3);
    img.text((left + right) / 2 - static_cast<int>(x_label.size()) * 4, height - 20, x_label, axis);
    img.text(left + 6, top + 4, y_label, {90, 90, 90});

    for (const Series& s : series) {
        int lx = -1, ly = -1;
        for (size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            const int x = px(s.x[i]), y = py(s.y[i]);
            if (lx >= 0) img.line(lx, ly, x, y, s.color);
            if (s.x.size() <= 16) img.rect(x - 2, y - 2, x + 2, y + 2, s.color);
            lx = x;
            ly = y;
        }
    }
    int ly = top + 20;
    for (const Series& s : series) {
        img.rect(right - 190, ly, right - 180, ly + 9, s.color);
        img.text(right - 174, ly, s.label, axis);
        ly += 16;
    }
    return img;
}

} // namespace syncvp

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "msq/common.hpp"

namespace msq {

// RGB image, row-major (y, x, channel), values in [0, 1].
struct Image {
    int h = 0;
    int w = 0;
    std::vector<double> rgb;

    Image() = default;
    Image(int h_, int w_, double fill = 1.0)
        : h(h_), w(w_), rgb(static_cast<size_t>(h_) * w_ * 3, fill) {}

    double& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }

    static Image from_flat(const std::vector<double>& flat, int h, int w) {
        if (flat.size() != static_cast<size_t>(h) * w * 3)
            throw DimensionError("Image::from_flat: size mismatch");
        Image img(h, w);
        img.rgb = flat;
        return img;
    }
};

// Binary PPM (P6, maxval 255). Bit-exact: the byte stream is a pure function
// of the quantized pixels.
inline void write_ppm(std::ostream& os, const Image& img) {
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<uint8_t> bytes;
    bytes.reserve(img.rgb.size());
    for (double v : img.rgb) {
        const double c = std::clamp(v, 0.0, 1.0);
        bytes.push_back(static_cast<uint8_t>(std::floor(c * 255.0 + 0.5)));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
}

inline void write_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open for writing: " + path);
    write_ppm(f, img);
    if (!f) throw LoadError("write failed: " + path);
}

inline Image read_ppm(std::istream& is) {
    std::string magic;
    is >> magic;
    if (magic != "P6") throw ParseError("not a P6 PPM");
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w < 1 || h < 1) throw ParseError("bad PPM header");
    if (maxval != 255) throw ParseError("unsupported PPM maxval");
    is.get();  // single whitespace after header
    std::vector<uint8_t> bytes(static_cast<size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (is.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw ParseError("truncated PPM payload");
    Image img(h, w);
    for (size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = bytes[i] / 255.0;
    return img;
}

inline Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LoadError("cannot open: " + path);
    return read_ppm(f);
}

}  // namespace msq

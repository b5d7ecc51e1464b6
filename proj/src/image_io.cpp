#include "patchforge/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <png.h>

namespace patchforge {

namespace {

std::string lower_ext(const std::string& path) {
    std::size_t dot = path.find_last_of('.');
    if (dot == std::string::npos) return "";
    std::string ext = path.substr(dot + 1);
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext;
}

// Skips whitespace and '#' comment lines between PGM header tokens.
int next_pgm_token(std::istream& is, const std::string& path) {
    while (true) {
        int c = is.peek();
        if (c == EOF) throw std::runtime_error("truncated header in " + path);
        if (std::isspace(c)) {
            is.get();
            continue;
        }
        if (c == '#') {
            std::string line;
            std::getline(is, line);
            continue;
        }
        break;
    }
    int value;
    if (!(is >> value)) throw std::runtime_error("bad header token in " + path);
    return value;
}

} // namespace

RasterImage read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    char p, kind;
    is.get(p);
    is.get(kind);
    if (p != 'P' || (kind != '2' && kind != '5'))
        throw std::runtime_error("not a PGM file: " + path);

    int w = next_pgm_token(is, path);
    int h = next_pgm_token(is, path);
    int maxval = next_pgm_token(is, path);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535)
        throw std::runtime_error("bad PGM dimensions in " + path);

    RasterImage img;
    img.width = w;
    img.height = h;
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    float scale = 1.0f / static_cast<float>(maxval);

    if (kind == '2') {
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            int v;
            if (!(is >> v)) throw std::runtime_error("truncated pixel data in " + path);
            img.pixels[i] = static_cast<float>(v) * scale;
        }
    } else {
        is.get(); // single whitespace after maxval
        if (maxval < 256) {
            std::vector<unsigned char> raw(img.pixels.size());
            if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
                throw std::runtime_error("truncated pixel data in " + path);
            for (std::size_t i = 0; i < raw.size(); ++i)
                img.pixels[i] = static_cast<float>(raw[i]) * scale;
        } else {
            std::vector<unsigned char> raw(img.pixels.size() * 2);
            if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
                throw std::runtime_error("truncated pixel data in " + path);
            for (std::size_t i = 0; i < img.pixels.size(); ++i) {
                int v = (raw[2 * i] << 8) | raw[2 * i + 1]; // big-endian per the format
                img.pixels[i] = static_cast<float>(v) * scale;
            }
        }
    }
    return img;
}

void write_pgm(const std::string& path, const RasterImage& img) {
    if (img.empty()) throw std::invalid_argument("write_pgm: empty image");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        float v = std::clamp(img.pixels[i], 0.0f, 1.0f);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw std::runtime_error("write failed: " + path);
}

RasterImage read_png(const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("malformed PNG: " + path);
    }

    png_init_io(png, fp);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    // normalize everything to 8-bit RGB or gray
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    color = png_get_color_type(png, info);
    std::size_t channels = (color == PNG_COLOR_TYPE_GRAY) ? 1 : 3;
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * channels);

    RasterImage img;
    img.width = static_cast<int>(w);
    img.height = static_cast<int>(h);
    img.pixels.resize(static_cast<std::size_t>(w) * h);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x) {
            float v;
            if (channels == 1) {
                v = row[x] / 255.0f;
            } else {
                v = (0.299f * row[3 * x] + 0.587f * row[3 * x + 1] + 0.114f * row[3 * x + 2]) /
                    255.0f;
            }
            img.pixels[static_cast<std::size_t>(y) * w + x] = v;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

RasterImage read_image(const std::string& path) {
    std::string ext = lower_ext(path);
    if (ext == "pgm") return read_pgm(path);
    if (ext == "png") return read_png(path);
    throw std::runtime_error("unsupported image type: " + path);
}

} // namespace patchforge

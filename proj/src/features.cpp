#include "patchforge/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "patchforge/binary_io.hpp"

namespace patchforge {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

void GridConfig::validate() const {
    if (patch_size < 1) throw std::invalid_argument("grid: patch_size must be >= 1");
    if (step_size < 1) throw std::invalid_argument("grid: step_size must be >= 1");
    if (max_edge < 1) throw std::invalid_argument("grid: max_edge must be >= 1");
    if (orientation_bins < 1) throw std::invalid_argument("grid: orientation_bins must be >= 1");
    if (spatial_cells < 1) throw std::invalid_argument("grid: spatial_cells must be >= 1");
    if (patch_size % spatial_cells != 0)
        throw std::invalid_argument("grid: patch_size must be a multiple of spatial_cells");
}

RasterImage resize_max_edge(const RasterImage& img, int max_edge) {
    if (img.empty()) throw std::invalid_argument("resize_max_edge: empty image");
    if (max_edge < 1) throw std::invalid_argument("resize_max_edge: max_edge must be >= 1");

    int longest = std::max(img.width, img.height);
    if (longest <= max_edge) return img;

    double scale = static_cast<double>(max_edge) / longest;
    int out_w, out_h;
    if (img.width >= img.height) {
        out_w = max_edge;
        out_h = std::max(1, static_cast<int>(std::llround(img.height * scale)));
    } else {
        out_h = max_edge;
        out_w = std::max(1, static_cast<int>(std::llround(img.width * scale)));
    }

    RasterImage out;
    out.width = out_w;
    out.height = out_h;
    out.pixels.resize(static_cast<std::size_t>(out_w) * out_h);

    double sx = static_cast<double>(img.width) / out_w;
    double sy = static_cast<double>(img.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, img.height - 1);
        int yb = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, img.width - 1);
            int xb = std::clamp(x0 + 1, 0, img.width - 1);
            double top = (1.0 - wx) * img.at(ya, xa) + wx * img.at(ya, xb);
            double bot = (1.0 - wx) * img.at(yb, xa) + wx * img.at(yb, xb);
            out.at(y, x) = static_cast<float>((1.0 - wy) * top + wy * bot);
        }
    }
    return out;
}

std::vector<PatchDescriptor> extract_dense(const RasterImage& img, const GridConfig& cfg,
                                           std::uint32_t image_id) {
    cfg.validate();
    if (img.empty()) throw std::invalid_argument("extract_dense: empty image");

    std::vector<PatchDescriptor> out;
    if (img.width < cfg.patch_size || img.height < cfg.patch_size) return out;

    const int w = img.width;
    const int h = img.height;

    // Central-difference gradients, clamped at the image border.
    std::vector<double> gx(static_cast<std::size_t>(w) * h);
    std::vector<double> gy(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
            int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
            gx[static_cast<std::size_t>(y) * w + x] = 0.5 * (img.at(y, xr) - img.at(y, xl));
            gy[static_cast<std::size_t>(y) * w + x] = 0.5 * (img.at(yd, x) - img.at(yu, x));
        }
    }

    const int bins = cfg.orientation_bins;
    const int cells = cfg.spatial_cells;
    const int cell_px = cfg.patch_size / cells;
    const int dim = cfg.descriptor_dim();

    const int rows = (h - cfg.patch_size) / cfg.step_size + 1;
    const int cols = (w - cfg.patch_size) / cfg.step_size + 1;
    out.reserve(static_cast<std::size_t>(rows) * cols);

    std::vector<double> hist(static_cast<std::size_t>(dim));
    for (int gr = 0; gr < rows; ++gr) {
        for (int gc = 0; gc < cols; ++gc) {
            const int py = gr * cfg.step_size;
            const int px = gc * cfg.step_size;
            std::fill(hist.begin(), hist.end(), 0.0);

            for (int dy = 0; dy < cfg.patch_size; ++dy) {
                for (int dx = 0; dx < cfg.patch_size; ++dx) {
                    std::size_t idx = static_cast<std::size_t>(py + dy) * w + (px + dx);
                    double vx = gx[idx], vy = gy[idx];
                    double mag = std::sqrt(vx * vx + vy * vy);
                    if (mag <= 0.0) continue;
                    double theta = std::atan2(vy, vx);
                    if (theta < 0.0) theta += kTwoPi;
                    double p = theta * bins / kTwoPi;
                    if (p >= bins) p -= bins;
                    int b0 = static_cast<int>(p);
                    double frac = p - b0;
                    int b1 = (b0 + 1) % bins;
                    int cell = (dy / cell_px) * cells + (dx / cell_px);
                    hist[static_cast<std::size_t>(cell) * bins + b0] += mag * (1.0 - frac);
                    hist[static_cast<std::size_t>(cell) * bins + b1] += mag * frac;
                }
            }

            double norm2 = 0.0;
            for (double v : hist) norm2 += v * v;
            PatchDescriptor d;
            d.image_id = image_id;
            d.row = static_cast<std::uint32_t>(py);
            d.col = static_cast<std::uint32_t>(px);
            d.values.resize(dim);
            if (norm2 > 0.0) {
                double inv = 1.0 / std::sqrt(norm2);
                for (int i = 0; i < dim; ++i) d.values[i] = static_cast<float>(hist[i] * inv);
            }
            out.push_back(std::move(d));
        }
    }
    return out;
}

void save_descriptors(const std::string& path,
                      const std::vector<std::vector<PatchDescriptor>>& per_image) {
    std::uint32_t dim = 0;
    for (const auto& img : per_image)
        for (const auto& p : img) {
            dim = static_cast<std::uint32_t>(p.values.size());
            break;
        }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    write_magic(os, "PFD1");
    write_u32(os, dim);
    write_u32(os, static_cast<std::uint32_t>(per_image.size()));
    for (const auto& img : per_image) {
        write_u32(os, static_cast<std::uint32_t>(img.size()));
        for (const auto& p : img) {
            if (p.values.size() != dim)
                throw std::invalid_argument("save_descriptors: inconsistent descriptor dim");
            write_u32(os, p.row);
            write_u32(os, p.col);
            for (float v : p.values) write_f32(os, v);
        }
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<std::vector<PatchDescriptor>> load_descriptors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    expect_magic(is, "PFD1", "descriptor");
    std::uint32_t dim = read_u32(is, path + ": dim");
    std::uint32_t image_count = read_u32(is, path + ": image count");

    std::vector<std::vector<PatchDescriptor>> out(image_count);
    for (std::uint32_t i = 0; i < image_count; ++i) {
        std::string where = path + ": image " + std::to_string(i);
        std::uint32_t n = read_u32(is, where + " patch count");
        out[i].resize(n);
        for (std::uint32_t j = 0; j < n; ++j) {
            std::string rec = where + " patch " + std::to_string(j);
            PatchDescriptor& d = out[i][j];
            d.image_id = i;
            d.row = read_u32(is, rec + " row");
            d.col = read_u32(is, rec + " col");
            d.values.resize(dim);
            for (std::uint32_t k = 0; k < dim; ++k) {
                float v = read_f32(is, rec + " value " + std::to_string(k));
                if (!std::isfinite(v))
                    throw std::runtime_error("non-finite descriptor value in " + rec);
                d.values[k] = v;
            }
        }
    }
    return out;
}

} // namespace patchforge

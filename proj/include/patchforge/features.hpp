#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace patchforge {

// Row-major grayscale image, intensities in [0, 1].
struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;

    float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    bool empty() const { return width <= 0 || height <= 0 || pixels.empty(); }
};

struct GridConfig {
    int patch_size = 8;
    int step_size = 4;
    int max_edge = 300;
    int orientation_bins = 8;
    int spatial_cells = 4; // cells per patch side; patch_size must divide evenly

    int descriptor_dim() const { return spatial_cells * spatial_cells * orientation_bins; }
    void validate() const; // throws std::invalid_argument
};

struct PatchDescriptor {
    std::uint32_t image_id = 0;
    std::uint32_t row = 0; // top-left pixel of the patch
    std::uint32_t col = 0;
    std::vector<float> values;
};

// Downscale so the longest edge equals max_edge (bilinear, aspect kept,
// short edge rounded to nearest pixel but at least 1). Images already small
// enough come back unchanged.
RasterImage resize_max_edge(const RasterImage& img, int max_edge);

// Dense grid of gradient-orientation histogram descriptors. Each patch is
// divided into spatial_cells x spatial_cells cells; gradient magnitudes vote
// into orientation_bins bins with linear interpolation between the two
// nearest bins, and the concatenated histogram is L2-normalized. A patch
// with no gradient energy stays the zero vector. Images smaller than one
// patch yield an empty list.
std::vector<PatchDescriptor> extract_dense(const RasterImage& img, const GridConfig& cfg,
                                           std::uint32_t image_id = 0);

// Descriptor file, magic "PFD1", little-endian:
//   u32 dim, u32 image_count
//   per image: u32 patch_count, then per patch u32 row, u32 col, dim x f32
std::vector<std::vector<PatchDescriptor>> load_descriptors(const std::string& path);
void save_descriptors(const std::string& path,
                      const std::vector<std::vector<PatchDescriptor>>& per_image);

} // namespace patchforge

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchforge/features.hpp"
#include "patchforge/forest.hpp"

namespace patchforge {

struct Document {
    std::uint32_t id = 0;
    std::int32_t label = -1; // ground-truth class
    std::string path;
};

struct Corpus {
    std::vector<Document> docs;
    std::vector<std::string> class_names;
    std::vector<char> is_train;
    std::vector<char> is_test;
    std::vector<char> is_labeled; // subset of is_train visible to training

    void validate() const;
};

struct SplitConfig {
    double train_fraction = 0.7;
    double labeled_fraction = 1.0; // of the training docs, per class
    std::uint64_t seed = 0;
};

// Corpus plus decoded pixels; object_masks mark the class-texture region and
// are only filled by the synthetic generator.
struct LoadedCorpus {
    Corpus corpus;
    std::vector<RasterImage> images;
    std::vector<std::vector<std::uint8_t>> object_masks;
};

// Layout: root/<class_name>/*.png|pgm. Classes are the subdirectories in
// alphabetical order, files sorted by name within each class. Splits are
// stratified per class with a seeded shuffle. Throws on a class directory
// with no images or an unreadable file.
LoadedCorpus load_folder_corpus(const std::string& root, const SplitConfig& split);

struct ClassTexture {
    double angle_deg = 0.0;
    double frequency = 0.25; // stripe cycles per pixel
};

struct SyntheticSpec {
    std::uint32_t num_classes = 3;
    std::uint32_t images_per_class = 60;
    std::uint32_t image_size = 64;
    std::vector<ClassTexture> textures; // empty = angles spread over [0, 180)
    double background_fraction = 0.4;
    double noise_sigma = 0.05;
    double stripe_amplitude = 0.45;
    std::uint64_t seed = 0;

    void validate() const;
    ClassTexture texture_for(std::uint32_t cls) const;
};

// Oriented-stripe class textures over a uniform-noise background band at a
// random vertical offset, plus additive Gaussian pixel noise. Pure function
// of the spec, so equal specs give byte-equal corpora. Per-pixel object
// masks record where the class texture is.
LoadedCorpus generate_synthetic(const SyntheticSpec& spec, const SplitConfig& split);

// A patch counts as object when at least half of its pixels are masked.
std::vector<std::uint8_t> patch_object_truth(const std::vector<std::uint8_t>& mask, int width,
                                             int height, const GridConfig& grid);

struct LeafPurity {
    std::uint32_t codeword = 0;
    std::uint32_t routed = 0;
    std::uint32_t majority_class = 0;
    double purity = 0.0; // routed patches that are object patches of the majority class
};

struct PurityReport {
    std::vector<LeafPurity> leaves; // leaves that received at least one patch
    double mean_purity = 0.0; // patch-weighted mean over those leaves
};

// How well leaves isolate class textures: every patch is routed down every
// tree, and each leaf is scored by the share of its patches that are object
// patches of its most frequent object class.
PurityReport patch_label_purity(const ForestCodebook& forest,
                                const std::vector<std::vector<PatchDescriptor>>& patches_per_doc,
                                const std::vector<std::int32_t>& doc_class,
                                const std::vector<std::vector<std::uint8_t>>& object_truth,
                                std::uint32_t num_classes);

} // namespace patchforge

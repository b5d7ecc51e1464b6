#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patchforge/forest.hpp"
#include "patchforge/matrix.hpp"
#include "patchforge/plsa.hpp"

namespace patchforge {

// Dominant topic sets, one sorted id list per class.
struct DominantTopicMap {
    std::vector<std::vector<std::uint32_t>> sets;
    std::uint32_t topic_count = 0;

    std::size_t num_classes() const { return sets.size(); }
};

// Class-conditional topic distribution. doc_class[n] is the class of
// document n or -1 for documents that carry no label. Row k of the returned
// K x M matrix is the per-class share of topic k, normalized across classes;
// rows with no mass anywhere fall back to uniform. Throws if some class in
// [0, num_classes) has no labeled document.
Mat class_topic_distribution(const PlsaModel& model, const std::vector<std::int32_t>& doc_class,
                             std::uint32_t num_classes);

// Topics whose share of class m exceeds 1/K (strictly). An empty set falls
// back to the argmax topic, ties to the lowest id.
DominantTopicMap dominant_topics(const Mat& class_topic);

struct ImageSoftLabels {
    Mat probs; // M x N, columns sum to 1
    std::vector<std::uint32_t> degenerate_docs; // columns that fell back to uniform
};

// Per-document class distribution: unnormalized score of class m is the
// summed p(z | d) mass over its dominant topics, then scores are normalized
// across classes. A document with zero total score gets the uniform
// distribution and is flagged.
ImageSoftLabels image_soft_labels(const PlsaModel& model, const DominantTopicMap& topics);

// Same rule applied to a single topic distribution (a folded-in document or
// a patch). degenerate, when given, reports the uniform fallback.
std::vector<double> classify_soft_label(const std::vector<double>& topic_dist,
                                        const DominantTopicMap& topics,
                                        bool* degenerate = nullptr);

// Patch topic distribution: mixes the per-word topic posterior rows of the
// patch's document with the patch's codeword weights,
//   p(z_k | x) = sum_j p(z_k | w_j, d) p(w_j | x).
std::vector<double> patch_topic_distribution(
    const Mat& posterior_rows, const std::vector<std::pair<std::uint32_t, double>>& quantized);

// Soft labels for one document's patches; out_degenerate counts uniform
// fallbacks.
std::vector<std::vector<double>> patch_soft_labels(
    const std::vector<std::vector<double>>& patch_topics, const DominantTopicMap& topics,
    std::size_t* out_degenerate = nullptr);

// Renormalize a soft label into a training histogram. Valid distributions
// pass through unchanged; an all-zero input becomes uniform.
ClassHistogram feedback_histogram(const std::vector<double>& soft_label);

struct PatchSoftLabels {
    std::uint32_t num_classes = 0;
    // per document, patch-major: num_classes values per patch
    std::vector<std::vector<double>> probs;
    // per document, (row, col) pixel position of each patch
    std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> positions;
    std::size_t degenerate_patches = 0;
};

// Per-class probability planes sampled on the patch grid.
struct SoftLabelGrid {
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint32_t classes = 0;
    std::vector<float> planes; // class-major, rows x cols each

    float at(std::uint32_t cls, std::uint32_t r, std::uint32_t c) const {
        return planes[(static_cast<std::size_t>(cls) * rows + r) * cols + c];
    }
};

// Arrange one document's patch soft labels on their grid. Grid coordinates
// are the ranks of the distinct row/col pixel positions; cells with no patch
// stay zero.
SoftLabelGrid make_soft_label_grid(
    const std::vector<double>& patch_probs, std::uint32_t num_classes,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& positions);

// Grid snapshot, magic "PFS1": u32 rows, cols, classes then one f32 plane
// per class.
void save_soft_label_grid(const std::string& path, const SoftLabelGrid& grid);
SoftLabelGrid load_soft_label_grid(const std::string& path);

} // namespace patchforge

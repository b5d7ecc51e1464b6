#pragma once

// Shared builders for the test binaries: random descriptor sets, random
// count matrices, and a few metrics the suites compare against.

#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

#include "patchforge/bow.hpp"
#include "patchforge/forest.hpp"
#include "patchforge/plsa.hpp"
#include "patchforge/rng.hpp"

namespace testutil {

inline std::vector<patchforge::PatchDescriptor> random_descriptors(patchforge::Rng& rng,
                                                                   std::size_t n,
                                                                   std::size_t dim) {
    std::vector<patchforge::PatchDescriptor> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].image_id = 0;
        out[i].row = static_cast<std::uint32_t>(i);
        out[i].col = 0;
        out[i].values.resize(dim);
        for (auto& v : out[i].values) v = static_cast<float>(rng.uniform());
    }
    return out;
}

inline std::vector<int> random_labels(patchforge::Rng& rng, std::size_t n, int num_classes) {
    std::vector<int> out(n);
    for (auto& l : out) l = static_cast<int>(rng.index(static_cast<std::size_t>(num_classes)));
    return out;
}

// Sparse random counts with every document nonempty.
inline patchforge::BowMatrix random_counts(patchforge::Rng& rng, std::size_t words,
                                           std::size_t docs, double density = 0.5,
                                           double max_count = 9.0) {
    patchforge::BowMatrix bow;
    bow.counts = patchforge::Mat(words, docs);
    for (std::size_t d = 0; d < docs; ++d) {
        bool any = false;
        for (std::size_t w = 0; w < words; ++w) {
            if (rng.uniform() < density) {
                bow.counts(w, d) = 1.0 + std::floor(rng.uniform() * max_count);
                any = true;
            }
        }
        if (!any) bow.counts(rng.index(words), d) = 1.0;
    }
    return bow;
}

// log p(data | factors), the quantity the EM trace reports
inline double model_log_likelihood(const patchforge::BowMatrix& bow,
                                   const patchforge::PlsaModel& model) {
    double ll = 0.0;
    for (std::size_t d = 0; d < bow.counts.cols; ++d) {
        for (std::size_t w = 0; w < bow.counts.rows; ++w) {
            double c = bow.counts(w, d);
            if (c <= 0.0) continue;
            double s = 0.0;
            for (std::size_t k = 0; k < model.topic_count(); ++k)
                s += model.word_topic(w, k) * model.doc_topic(d, k);
            ll += c * std::log(s);
        }
    }
    return ll;
}

inline double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s;
}

inline bool nodes_bitwise_equal(const patchforge::TreeNode& a, const patchforge::TreeNode& b) {
    return a.feature == b.feature && a.left == b.left && a.right == b.right &&
           a.codeword == b.codeword &&
           std::bit_cast<std::uint32_t>(a.threshold) == std::bit_cast<std::uint32_t>(b.threshold);
}

inline bool trees_bitwise_equal(const patchforge::DecisionTree& a,
                                const patchforge::DecisionTree& b) {
    if (a.nodes.size() != b.nodes.size()) return false;
    for (std::size_t i = 0; i < a.nodes.size(); ++i)
        if (!nodes_bitwise_equal(a.nodes[i], b.nodes[i])) return false;
    return true;
}

} // namespace testutil

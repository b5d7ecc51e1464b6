#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "patchforge/bow.hpp"
#include "patchforge/matrix.hpp"

namespace patchforge {

struct EmConfig {
    std::uint32_t max_iters = 500;
    double rel_tol = 1e-6;
    std::uint64_t rng_seed = 0;
    double smoothing_eps = 1e-10; // added to M-step numerators

    void validate() const;
};

// Two-factor topic model of a count matrix:
//   p(w, d) proportional to sum_k p(w | z_k) p(z_k | d)
struct PlsaModel {
    Mat word_topic; // J x K, each column a distribution over words
    Mat doc_topic;  // N x K, row n is p(z | d_n)

    std::uint32_t word_count() const { return static_cast<std::uint32_t>(word_topic.rows); }
    std::uint32_t topic_count() const { return static_cast<std::uint32_t>(word_topic.cols); }
    std::uint32_t doc_count() const { return static_cast<std::uint32_t>(doc_topic.rows); }

    // log-likelihood after each EM iteration, first entry is the
    // initialization's value
    std::vector<double> log_likelihood_trace;
};

// EM until the relative log-likelihood change drops below rel_tol or
// max_iters is hit. Factors are initialized from seeded uniform-random
// positives and column-normalized. The trace never decreases (up to
// round-off). Throws if the matrix has no nonzero entry or K < 1.
PlsaModel train_plsa(const BowMatrix& bow, std::uint32_t topics, const EmConfig& cfg);

// Same EM from caller-supplied factors (word_topic J x K columns summing to
// 1, doc_topic N x K rows summing to 1).
PlsaModel train_plsa_from_init(const BowMatrix& bow, Mat word_topic0, Mat doc_topic0,
                               const EmConfig& cfg);

struct FoldInResult {
    std::vector<double> topic_dist;
    bool degenerate = false; // all-zero document, fell back to uniform
    std::uint32_t iters = 0;
};

// Infer p(z | d) for a held-out document from its codeword counts, keeping
// word_topic frozen. Starts from the uniform topic distribution.
FoldInResult fold_in(const PlsaModel& model, const std::vector<double>& word_counts,
                     const EmConfig& cfg);

struct TopicPosterior {
    Mat rows; // J x K, row j is p(z | w_j, d)
    std::size_t uniform_rows = 0; // rows whose denominator was zero
};

// Per-word topic posterior for one training document:
//   p(z_k | w_j, d) = p(w_j | z_k) p(z_k | d) / sum_k' ...
TopicPosterior topic_posterior(const PlsaModel& model, std::size_t doc_index);

// Model snapshot, magic "PFP1": u32 J, K, N then word_topic and doc_topic
// as column-major f64 (logical shapes J x K and K x N). The log-likelihood
// trace goes to a JSON sidecar at path + ".trace.json".
void save_plsa(const std::string& path, const PlsaModel& model);
PlsaModel load_plsa(const std::string& path);

} // namespace patchforge

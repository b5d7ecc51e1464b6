#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "patchforge/features.hpp"

namespace patchforge {

// Probability histogram over the class set. Entries are >= 0 and sum to 1;
// an aggregate over zero weight is represented as the uniform histogram.
struct ClassHistogram {
    std::vector<double> probs;

    std::size_t num_classes() const { return probs.size(); }
    void validate() const; // throws std::invalid_argument

    static ClassHistogram one_hot(std::size_t cls, std::size_t num_classes);
    static ClassHistogram uniform(std::size_t num_classes);
};

// Shannon entropy in bits, 0 log 0 taken as 0.
double shannon_entropy(const ClassHistogram& h);
double shannon_entropy(const double* probs, std::size_t n);

struct LabeledPatch {
    PatchDescriptor descriptor;
    ClassHistogram label;
    double weight = 1.0;
};

// Weight-weighted entropy reduction of a two-way partition:
//   E(parent) - w_left/w * E(left) - w_right/w * E(right)
// where node histograms are weight sums of member labels and a side with
// zero weight contributes nothing. Throws on an empty parent or if sizes of
// the sides do not add up.
double information_gain(const std::vector<LabeledPatch>& parent,
                        const std::vector<LabeledPatch>& left,
                        const std::vector<LabeledPatch>& right);

struct TreeNode {
    std::int32_t feature = -1; // -1 marks a leaf
    float threshold = 0.0f;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint32_t codeword = 0; // set on leaves

    bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
    std::vector<TreeNode> nodes; // index 0 is the root
    std::vector<double> split_gains; // realized gain per applied split (diagnostics, not saved)

    // Route a descriptor to its leaf; x must have the training dimension.
    // Feature value < threshold goes left.
    const TreeNode& route(const float* x) const;
    std::size_t leaf_count() const;
};

struct ForestConfig {
    std::uint32_t num_trees = 10;
    std::uint32_t max_leaves = 100;
    std::uint32_t candidate_features = 0; // 0 = ceil(sqrt(dim))
    std::uint32_t candidate_thresholds = 10;
    double min_node_size = 2.0; // minimum node weight to keep splitting
    double bagging_fraction = 1.0;
    std::uint64_t rng_seed = 0;

    void validate() const;
    std::uint32_t effective_candidate_features(std::uint32_t dim) const;
};

struct ForestCodebook {
    std::vector<DecisionTree> trees;
    std::uint32_t leaves_per_tree = 0; // the configured budget S
    std::uint32_t descriptor_dim = 0;
    std::uint32_t num_classes = 0;
    ForestConfig config;

    // Tree r owns codeword ids [r*S, (r+1)*S); ids of unrealized leaves are
    // simply never produced.
    std::uint32_t codeword_count() const {
        return static_cast<std::uint32_t>(trees.size()) * leaves_per_tree;
    }
};

// Grows num_trees axis-aligned trees best-first until the leaf budget is
// reached. Each tree draws its own bagged sample (with replacement) and RNG
// stream from rng_seed + tree index. Candidate splits are
// candidate_features random dimensions x candidate_thresholds thresholds
// drawn uniformly between the node's min and max on that dimension; the best
// is chosen by information gain with ties broken by lowest
// (feature, threshold). A split that leaves either side empty is discarded.
ForestCodebook train_forest(const std::vector<LabeledPatch>& patches, const ForestConfig& cfg);

// One leaf per tree, as (codeword, 1/num_trees) pairs summing to 1.
std::vector<std::pair<std::uint32_t, double>> quantize(const ForestCodebook& forest,
                                                       const PatchDescriptor& patch);

// Codeword ids only, in tree order.
std::vector<std::uint32_t> leaf_codewords(const ForestCodebook& forest, const float* x);
std::vector<std::vector<std::uint32_t>> leaf_assignments(const ForestCodebook& forest,
                                                         const std::vector<PatchDescriptor>& xs);

// Forest snapshot, magic "PFF1", little-endian. Config block then per tree a
// node count and preorder records: u8 kind (0 split, 1 leaf), split records
// carry u32 feature + f32 threshold, leaf records u32 codeword. Loading
// reproduces routing exactly.
void save_forest(const std::string& path, const ForestCodebook& forest);
ForestCodebook load_forest(const std::string& path);

} // namespace patchforge

#include "patchforge/forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <stdexcept>

#include "patchforge/binary_io.hpp"
#include "patchforge/parallel.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

void ClassHistogram::validate() const {
    if (probs.empty()) throw std::invalid_argument("class histogram: no classes");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("class histogram: negative or NaN entry");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("class histogram: entries must sum to 1");
}

ClassHistogram ClassHistogram::one_hot(std::size_t cls, std::size_t num_classes) {
    ClassHistogram h;
    h.probs.assign(num_classes, 0.0);
    h.probs.at(cls) = 1.0;
    return h;
}

ClassHistogram ClassHistogram::uniform(std::size_t num_classes) {
    ClassHistogram h;
    h.probs.assign(num_classes, 1.0 / static_cast<double>(num_classes));
    return h;
}

double shannon_entropy(const double* probs, std::size_t n) {
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double p = probs[i];
        if (p > 0.0) e -= p * std::log2(p);
    }
    return e;
}

double shannon_entropy(const ClassHistogram& h) {
    h.validate();
    return shannon_entropy(h.probs.data(), h.probs.size());
}

namespace {

// Entropy of a weighted class-mass vector with total weight w_total.
double entropy_from_weights(const double* mass, std::size_t m, double w_total) {
    if (w_total <= 0.0) return 0.0;
    double e = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (mass[i] > 0.0) {
            double p = mass[i] / w_total;
            e -= p * std::log2(p);
        }
    }
    return e;
}

struct NodeStats {
    std::vector<double> mass; // weight-summed label histograms
    double weight = 0.0;

    void accumulate(const LabeledPatch& p) {
        for (std::size_t i = 0; i < mass.size(); ++i) mass[i] += p.weight * p.label.probs[i];
        weight += p.weight;
    }
};

} // namespace

double information_gain(const std::vector<LabeledPatch>& parent,
                        const std::vector<LabeledPatch>& left,
                        const std::vector<LabeledPatch>& right) {
    if (parent.empty()) throw std::invalid_argument("information_gain: empty parent");
    if (left.size() + right.size() != parent.size())
        throw std::invalid_argument("information_gain: sides do not partition the parent");

    std::size_t m = parent.front().label.num_classes();
    NodeStats p{std::vector<double>(m), 0.0};
    NodeStats l{std::vector<double>(m), 0.0};
    NodeStats r{std::vector<double>(m), 0.0};
    for (const auto& x : parent) {
        if (x.label.num_classes() != m)
            throw std::invalid_argument("information_gain: inconsistent class count");
        p.accumulate(x);
    }
    for (const auto& x : left) l.accumulate(x);
    for (const auto& x : right) r.accumulate(x);
    if (p.weight <= 0.0) throw std::invalid_argument("information_gain: parent has zero weight");

    double gain = entropy_from_weights(p.mass.data(), m, p.weight);
    if (l.weight > 0.0)
        gain -= (l.weight / p.weight) * entropy_from_weights(l.mass.data(), m, l.weight);
    if (r.weight > 0.0)
        gain -= (r.weight / p.weight) * entropy_from_weights(r.mass.data(), m, r.weight);
    return gain;
}

void ForestConfig::validate() const {
    if (num_trees < 1) throw std::invalid_argument("forest: num_trees must be >= 1");
    if (max_leaves < 1) throw std::invalid_argument("forest: max_leaves must be >= 1");
    if (candidate_thresholds < 1)
        throw std::invalid_argument("forest: candidate_thresholds must be >= 1");
    if (!(min_node_size >= 1.0)) throw std::invalid_argument("forest: min_node_size must be >= 1");
    if (!(bagging_fraction > 0.0 && bagging_fraction <= 1.0))
        throw std::invalid_argument("forest: bagging_fraction must be in (0, 1]");
}

std::uint32_t ForestConfig::effective_candidate_features(std::uint32_t dim) const {
    std::uint32_t k = candidate_features;
    if (k == 0) k = static_cast<std::uint32_t>(std::ceil(std::sqrt(static_cast<double>(dim))));
    return std::min(k, dim);
}

namespace {

struct BestSplit {
    double gain = -std::numeric_limits<double>::infinity();
    std::int32_t feature = -1;
    float threshold = 0.0f;
};

struct TreeBuilder {
    const std::vector<LabeledPatch>& patches;
    const ForestConfig& cfg;
    std::uint32_t dim;
    std::uint32_t num_classes;
    Rng rng;

    std::vector<TreeNode> nodes;
    std::vector<double> split_gains;
    std::vector<std::vector<std::uint32_t>> members; // per node, indices into patches
    std::vector<BestSplit> best; // per node

    TreeBuilder(const std::vector<LabeledPatch>& p, const ForestConfig& c, std::uint32_t d,
                std::uint32_t m, std::uint64_t seed)
        : patches(p), cfg(c), dim(d), num_classes(m), rng(seed) {}

    float value(std::uint32_t patch, std::uint32_t feature) const {
        return patches[patch].descriptor.values[feature];
    }

    // Evaluate the best candidate split of a node. Draw order is fixed:
    // the feature subset first, then candidate_thresholds uniforms per
    // feature whether or not the feature turns out to be constant.
    BestSplit evaluate(const std::vector<std::uint32_t>& mem) {
        BestSplit out;
        const std::uint32_t t_count = cfg.candidate_thresholds;
        const std::uint32_t f_count = cfg.effective_candidate_features(dim);

        std::vector<double> total_mass(num_classes, 0.0);
        double total_weight = 0.0;
        for (std::uint32_t i : mem) {
            const LabeledPatch& p = patches[i];
            for (std::uint32_t c = 0; c < num_classes; ++c)
                total_mass[c] += p.weight * p.label.probs[c];
            total_weight += p.weight;
        }
        if (total_weight <= 0.0) return out;
        double parent_entropy = entropy_from_weights(total_mass.data(), num_classes, total_weight);

        // feature subset without replacement (partial Fisher-Yates)
        std::vector<std::uint32_t> feats(dim);
        for (std::uint32_t i = 0; i < dim; ++i) feats[i] = i;
        for (std::uint32_t i = 0; i < f_count; ++i) {
            std::size_t j = i + rng.index(dim - i);
            std::swap(feats[i], feats[j]);
        }

        std::vector<float> thresholds(t_count);
        std::vector<float> sorted_thr(t_count);
        std::vector<double> bucket_mass((t_count + 1) * num_classes);
        std::vector<double> bucket_weight(t_count + 1);
        std::vector<double> left_mass(num_classes);

        for (std::uint32_t fi = 0; fi < f_count; ++fi) {
            std::uint32_t f = feats[fi];
            float fmin = std::numeric_limits<float>::max();
            float fmax = std::numeric_limits<float>::lowest();
            for (std::uint32_t i : mem) {
                float v = value(i, f);
                fmin = std::min(fmin, v);
                fmax = std::max(fmax, v);
            }
            for (std::uint32_t t = 0; t < t_count; ++t) {
                double u = rng.uniform();
                thresholds[t] = static_cast<float>(
                    static_cast<double>(fmin) +
                    u * (static_cast<double>(fmax) - static_cast<double>(fmin)));
            }
            if (fmax <= fmin) continue; // constant feature, nothing can go left

            sorted_thr = thresholds;
            std::sort(sorted_thr.begin(), sorted_thr.end());

            // Members fall into buckets by how many thresholds are <= value;
            // the left side of threshold j is then the prefix sum of buckets
            // 0..j.
            std::fill(bucket_mass.begin(), bucket_mass.end(), 0.0);
            std::fill(bucket_weight.begin(), bucket_weight.end(), 0.0);
            for (std::uint32_t i : mem) {
                float v = value(i, f);
                std::size_t b =
                    std::upper_bound(sorted_thr.begin(), sorted_thr.end(), v) - sorted_thr.begin();
                const LabeledPatch& p = patches[i];
                double* bm = bucket_mass.data() + b * num_classes;
                for (std::uint32_t c = 0; c < num_classes; ++c)
                    bm[c] += p.weight * p.label.probs[c];
                bucket_weight[b] += p.weight;
            }

            std::fill(left_mass.begin(), left_mass.end(), 0.0);
            double left_weight = 0.0;
            for (std::uint32_t j = 0; j < t_count; ++j) {
                const double* bm = bucket_mass.data() + j * num_classes;
                for (std::uint32_t c = 0; c < num_classes; ++c) left_mass[c] += bm[c];
                left_weight += bucket_weight[j];

                double right_weight = total_weight - left_weight;
                if (left_weight <= 0.0 || right_weight <= 0.0) continue;

                double el = entropy_from_weights(left_mass.data(), num_classes, left_weight);
                double er = 0.0;
                {
                    double e = 0.0;
                    for (std::uint32_t c = 0; c < num_classes; ++c) {
                        double w = total_mass[c] - left_mass[c];
                        if (w > 0.0) {
                            double p = w / right_weight;
                            e -= p * std::log2(p);
                        }
                    }
                    er = e;
                }
                double gain = parent_entropy - (left_weight / total_weight) * el -
                              (right_weight / total_weight) * er;

                float thr = sorted_thr[j];
                bool better = gain > out.gain ||
                              (gain == out.gain &&
                               (static_cast<std::int32_t>(f) < out.feature ||
                                (static_cast<std::int32_t>(f) == out.feature && thr < out.threshold)));
                if (better) {
                    out.gain = gain;
                    out.feature = static_cast<std::int32_t>(f);
                    out.threshold = thr;
                }
            }
        }
        return out;
    }

    double node_weight(const std::vector<std::uint32_t>& mem) const {
        double w = 0.0;
        for (std::uint32_t i : mem) w += patches[i].weight;
        return w;
    }

    // Creates a node, evaluates its candidate split and returns its id.
    std::uint32_t make_node(std::vector<std::uint32_t> mem) {
        std::uint32_t id = static_cast<std::uint32_t>(nodes.size());
        nodes.emplace_back();
        BestSplit b;
        if (node_weight(mem) >= cfg.min_node_size) b = evaluate(mem);
        best.push_back(b);
        members.push_back(std::move(mem));
        return id;
    }

    void grow(std::vector<std::uint32_t> bag) {
        struct HeapEntry {
            double gain;
            std::uint32_t node_id;
            bool operator<(const HeapEntry& o) const {
                if (gain != o.gain) return gain < o.gain;
                return node_id > o.node_id; // earlier node wins ties
            }
        };
        std::priority_queue<HeapEntry> heap;

        std::uint32_t root = make_node(std::move(bag));
        if (best[root].gain > 0.0) heap.push({best[root].gain, root});
        std::uint32_t leaves = 1;

        while (leaves < cfg.max_leaves && !heap.empty()) {
            HeapEntry top = heap.top();
            heap.pop();
            std::uint32_t id = top.node_id;
            const BestSplit& b = best[id];

            std::vector<std::uint32_t> left_mem, right_mem;
            for (std::uint32_t i : members[id]) {
                if (value(i, static_cast<std::uint32_t>(b.feature)) < b.threshold)
                    left_mem.push_back(i);
                else
                    right_mem.push_back(i);
            }
            members[id].clear();
            members[id].shrink_to_fit();

            nodes[id].feature = b.feature;
            nodes[id].threshold = b.threshold;
            split_gains.push_back(b.gain);

            std::uint32_t lid = make_node(std::move(left_mem));
            std::uint32_t rid = make_node(std::move(right_mem));
            nodes[id].left = static_cast<std::int32_t>(lid);
            nodes[id].right = static_cast<std::int32_t>(rid);
            ++leaves;

            if (best[lid].gain > 0.0) heap.push({best[lid].gain, lid});
            if (best[rid].gain > 0.0) heap.push({best[rid].gain, rid});
        }
    }
};

// Leaves get codewords in preorder so the numbering matches the snapshot
// layout.
void assign_codewords(DecisionTree& tree, std::uint32_t base) {
    std::uint32_t next = base;
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        std::int32_t id = stack.back();
        stack.pop_back();
        TreeNode& n = tree.nodes[static_cast<std::size_t>(id)];
        if (n.is_leaf()) {
            n.codeword = next++;
        } else {
            stack.push_back(n.right);
            stack.push_back(n.left);
        }
    }
}

} // namespace

const TreeNode& DecisionTree::route(const float* x) const {
    const TreeNode* n = &nodes[0];
    while (!n->is_leaf()) {
        n = x[n->feature] < n->threshold ? &nodes[static_cast<std::size_t>(n->left)]
                                         : &nodes[static_cast<std::size_t>(n->right)];
    }
    return *n;
}

std::size_t DecisionTree::leaf_count() const {
    std::size_t c = 0;
    for (const auto& n : nodes)
        if (n.is_leaf()) ++c;
    return c;
}

ForestCodebook train_forest(const std::vector<LabeledPatch>& patches, const ForestConfig& cfg) {
    cfg.validate();
    if (patches.size() < 2) throw std::invalid_argument("train_forest: need at least 2 patches");

    const std::uint32_t dim = static_cast<std::uint32_t>(patches.front().descriptor.values.size());
    if (dim == 0) throw std::invalid_argument("train_forest: zero-dimensional descriptors");
    const std::uint32_t m = static_cast<std::uint32_t>(patches.front().label.num_classes());
    for (const auto& p : patches) {
        if (p.descriptor.values.size() != dim)
            throw std::invalid_argument("train_forest: descriptor dimension mismatch");
        if (p.label.num_classes() != m)
            throw std::invalid_argument("train_forest: class count mismatch");
        if (!(p.weight >= 0.0)) throw std::invalid_argument("train_forest: negative patch weight");
        p.label.validate();
    }

    ForestCodebook forest;
    forest.trees.resize(cfg.num_trees);
    forest.leaves_per_tree = cfg.max_leaves;
    forest.descriptor_dim = dim;
    forest.num_classes = m;
    forest.config = cfg;

    const std::size_t n = patches.size();
    std::size_t draws = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(cfg.bagging_fraction * static_cast<double>(n))));

    parallel_for(cfg.num_trees, [&](std::size_t r) {
        TreeBuilder builder(patches, cfg, dim, m, cfg.rng_seed + static_cast<std::uint64_t>(r));
        std::vector<std::uint32_t> bag(draws);
        for (std::size_t i = 0; i < draws; ++i)
            bag[i] = static_cast<std::uint32_t>(builder.rng.index(n));
        builder.grow(std::move(bag));

        DecisionTree& tree = forest.trees[r];
        tree.nodes = std::move(builder.nodes);
        tree.split_gains = std::move(builder.split_gains);
        assign_codewords(tree, static_cast<std::uint32_t>(r) * cfg.max_leaves);
    });
    return forest;
}

std::vector<std::uint32_t> leaf_codewords(const ForestCodebook& forest, const float* x) {
    std::vector<std::uint32_t> out(forest.trees.size());
    for (std::size_t r = 0; r < forest.trees.size(); ++r) out[r] = forest.trees[r].route(x).codeword;
    return out;
}

std::vector<std::pair<std::uint32_t, double>> quantize(const ForestCodebook& forest,
                                                       const PatchDescriptor& patch) {
    if (patch.values.size() != forest.descriptor_dim)
        throw std::invalid_argument("quantize: descriptor dimension mismatch");
    double share = 1.0 / static_cast<double>(forest.trees.size());
    std::vector<std::pair<std::uint32_t, double>> out;
    out.reserve(forest.trees.size());
    for (const auto& tree : forest.trees)
        out.emplace_back(tree.route(patch.values.data()).codeword, share);
    return out;
}

std::vector<std::vector<std::uint32_t>> leaf_assignments(const ForestCodebook& forest,
                                                         const std::vector<PatchDescriptor>& xs) {
    std::vector<std::vector<std::uint32_t>> out(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) {
        if (xs[i].values.size() != forest.descriptor_dim)
            throw std::invalid_argument("leaf_assignments: descriptor dimension mismatch");
        out[i] = leaf_codewords(forest, xs[i].values.data());
    });
    return out;
}

namespace {

void write_subtree(std::ostream& os, const DecisionTree& tree, std::int32_t id) {
    const TreeNode& n = tree.nodes[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
        write_u8(os, 1);
        write_u32(os, n.codeword);
    } else {
        write_u8(os, 0);
        write_u32(os, static_cast<std::uint32_t>(n.feature));
        write_f32(os, n.threshold);
        write_subtree(os, tree, n.left);
        write_subtree(os, tree, n.right);
    }
}

std::int32_t read_subtree(std::istream& is, DecisionTree& tree, const std::string& where,
                          std::uint32_t dim, std::uint32_t cw_lo, std::uint32_t cw_hi) {
    std::uint8_t kind = read_u8(is, where + " node kind");
    std::int32_t id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (kind == 1) {
        std::uint32_t cw = read_u32(is, where + " codeword");
        if (cw < cw_lo || cw >= cw_hi)
            throw std::runtime_error(where + ": codeword out of the tree's range");
        tree.nodes[static_cast<std::size_t>(id)].codeword = cw;
    } else if (kind == 0) {
        std::uint32_t f = read_u32(is, where + " feature");
        if (f >= dim) throw std::runtime_error(where + ": split feature out of range");
        float thr = read_f32(is, where + " threshold");
        tree.nodes[static_cast<std::size_t>(id)].feature = static_cast<std::int32_t>(f);
        tree.nodes[static_cast<std::size_t>(id)].threshold = thr;
        std::int32_t l = read_subtree(is, tree, where, dim, cw_lo, cw_hi);
        std::int32_t r = read_subtree(is, tree, where, dim, cw_lo, cw_hi);
        tree.nodes[static_cast<std::size_t>(id)].left = l;
        tree.nodes[static_cast<std::size_t>(id)].right = r;
    } else {
        throw std::runtime_error(where + ": unknown node kind");
    }
    return id;
}

} // namespace

void save_forest(const std::string& path, const ForestCodebook& forest) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    write_magic(os, "PFF1");
    write_u32(os, forest.descriptor_dim);
    write_u32(os, static_cast<std::uint32_t>(forest.trees.size()));
    write_u32(os, forest.leaves_per_tree);
    write_u32(os, forest.num_classes);
    write_u32(os, forest.config.candidate_features);
    write_u32(os, forest.config.candidate_thresholds);
    write_f64(os, forest.config.min_node_size);
    write_f64(os, forest.config.bagging_fraction);
    write_u64(os, forest.config.rng_seed);
    for (const auto& tree : forest.trees) {
        write_u32(os, static_cast<std::uint32_t>(tree.nodes.size()));
        write_subtree(os, tree, 0);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

ForestCodebook load_forest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    expect_magic(is, "PFF1", "forest");

    ForestCodebook forest;
    forest.descriptor_dim = read_u32(is, path + ": dim");
    std::uint32_t num_trees = read_u32(is, path + ": tree count");
    forest.leaves_per_tree = read_u32(is, path + ": leaf budget");
    forest.num_classes = read_u32(is, path + ": class count");
    forest.config.num_trees = num_trees;
    forest.config.max_leaves = forest.leaves_per_tree;
    forest.config.candidate_features = read_u32(is, path + ": candidate features");
    forest.config.candidate_thresholds = read_u32(is, path + ": candidate thresholds");
    forest.config.min_node_size = read_f64(is, path + ": min node size");
    forest.config.bagging_fraction = read_f64(is, path + ": bagging fraction");
    forest.config.rng_seed = read_u64(is, path + ": rng seed");
    if (forest.descriptor_dim == 0) throw std::runtime_error(path + ": zero descriptor dim");
    if (num_trees == 0 || forest.leaves_per_tree == 0)
        throw std::runtime_error(path + ": empty forest");

    forest.trees.resize(num_trees);
    for (std::uint32_t r = 0; r < num_trees; ++r) {
        std::string where = path + ": tree " + std::to_string(r);
        std::uint32_t count = read_u32(is, where + " node count");
        forest.trees[r].nodes.reserve(count);
        read_subtree(is, forest.trees[r], where, forest.descriptor_dim,
                     r * forest.leaves_per_tree, (r + 1) * forest.leaves_per_tree);
        if (forest.trees[r].nodes.size() != count)
            throw std::runtime_error(where + ": node count does not match the tree layout");
    }
    return forest;
}

} // namespace patchforge

#pragma once

// Reference forest trainer working from plain integer class labels. Node
// statistics are per-class counts rather than summed label mass; everything
// else (bagging, candidate drawing, bucketed split scoring, best-first
// growth, preorder codewords) follows the same contract as the library
// trainer, so a forest grown from weight-1 one-hot labels must come out
// identical down to the last bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "patchforge/features.hpp"
#include "patchforge/forest.hpp"
#include "patchforge/rng.hpp"

namespace testutil {

namespace refdetail {

inline double count_entropy(const double* cnt, std::size_t m, double total) {
    if (total <= 0.0) return 0.0;
    double e = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (cnt[i] > 0.0) {
            double p = cnt[i] / total;
            e -= p * std::log2(p);
        }
    }
    return e;
}

struct RefSplit {
    double gain = -std::numeric_limits<double>::infinity();
    std::int32_t feature = -1;
    float threshold = 0.0f;
};

struct RefBuilder {
    const std::vector<patchforge::PatchDescriptor>& xs;
    const std::vector<int>& labels;
    const patchforge::ForestConfig& cfg;
    std::uint32_t dim;
    std::uint32_t num_classes;
    patchforge::Rng rng;

    std::vector<patchforge::TreeNode> nodes;
    std::vector<std::vector<std::uint32_t>> members;
    std::vector<RefSplit> best;

    RefBuilder(const std::vector<patchforge::PatchDescriptor>& x, const std::vector<int>& y,
               const patchforge::ForestConfig& c, std::uint32_t d, std::uint32_t m,
               std::uint64_t seed)
        : xs(x), labels(y), cfg(c), dim(d), num_classes(m), rng(seed) {}

    float value(std::uint32_t i, std::uint32_t f) const { return xs[i].values[f]; }

    RefSplit score_node(const std::vector<std::uint32_t>& mem) {
        RefSplit out;
        const std::uint32_t t_count = cfg.candidate_thresholds;
        const std::uint32_t f_count = cfg.effective_candidate_features(dim);

        std::vector<double> total_cnt(num_classes, 0.0);
        double total_n = 0.0;
        for (std::uint32_t i : mem) {
            total_cnt[static_cast<std::size_t>(labels[i])] += 1.0;
            total_n += 1.0;
        }
        if (total_n <= 0.0) return out;
        double parent_entropy = count_entropy(total_cnt.data(), num_classes, total_n);

        std::vector<std::uint32_t> feats(dim);
        for (std::uint32_t i = 0; i < dim; ++i) feats[i] = i;
        for (std::uint32_t i = 0; i < f_count; ++i) {
            std::size_t j = i + rng.index(dim - i);
            std::swap(feats[i], feats[j]);
        }

        std::vector<float> thr(t_count);
        std::vector<float> sorted_thr(t_count);
        std::vector<double> bucket_cnt((t_count + 1) * num_classes);
        std::vector<double> bucket_n(t_count + 1);
        std::vector<double> left_cnt(num_classes);

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
                thr[t] = static_cast<float>(
                    static_cast<double>(fmin) +
                    u * (static_cast<double>(fmax) - static_cast<double>(fmin)));
            }
            if (fmax <= fmin) continue;

            sorted_thr = thr;
            std::sort(sorted_thr.begin(), sorted_thr.end());

            std::fill(bucket_cnt.begin(), bucket_cnt.end(), 0.0);
            std::fill(bucket_n.begin(), bucket_n.end(), 0.0);
            for (std::uint32_t i : mem) {
                float v = value(i, f);
                std::size_t b =
                    std::upper_bound(sorted_thr.begin(), sorted_thr.end(), v) - sorted_thr.begin();
                bucket_cnt[b * num_classes + static_cast<std::size_t>(labels[i])] += 1.0;
                bucket_n[b] += 1.0;
            }

            std::fill(left_cnt.begin(), left_cnt.end(), 0.0);
            double left_n = 0.0;
            for (std::uint32_t j = 0; j < t_count; ++j) {
                const double* bc = bucket_cnt.data() + j * num_classes;
                for (std::uint32_t c = 0; c < num_classes; ++c) left_cnt[c] += bc[c];
                left_n += bucket_n[j];

                double right_n = total_n - left_n;
                if (left_n <= 0.0 || right_n <= 0.0) continue;

                double el = count_entropy(left_cnt.data(), num_classes, left_n);
                double er = 0.0;
                {
                    double e = 0.0;
                    for (std::uint32_t c = 0; c < num_classes; ++c) {
                        double w = total_cnt[c] - left_cnt[c];
                        if (w > 0.0) {
                            double p = w / right_n;
                            e -= p * std::log2(p);
                        }
                    }
                    er = e;
                }
                double gain = parent_entropy - (left_n / total_n) * el - (right_n / total_n) * er;

                float t = sorted_thr[j];
                bool better = gain > out.gain ||
                              (gain == out.gain &&
                               (static_cast<std::int32_t>(f) < out.feature ||
                                (static_cast<std::int32_t>(f) == out.feature && t < out.threshold)));
                if (better) {
                    out.gain = gain;
                    out.feature = static_cast<std::int32_t>(f);
                    out.threshold = t;
                }
            }
        }
        return out;
    }

    std::uint32_t add_node(std::vector<std::uint32_t> mem) {
        std::uint32_t id = static_cast<std::uint32_t>(nodes.size());
        nodes.emplace_back();
        RefSplit b;
        if (static_cast<double>(mem.size()) >= cfg.min_node_size) b = score_node(mem);
        best.push_back(b);
        members.push_back(std::move(mem));
        return id;
    }

    void grow(std::vector<std::uint32_t> bag) {
        struct Entry {
            double gain;
            std::uint32_t node_id;
            bool operator<(const Entry& o) const {
                if (gain != o.gain) return gain < o.gain;
                return node_id > o.node_id;
            }
        };
        std::priority_queue<Entry> heap;

        std::uint32_t root = add_node(std::move(bag));
        if (best[root].gain > 0.0) heap.push({best[root].gain, root});
        std::uint32_t leaves = 1;

        while (leaves < cfg.max_leaves && !heap.empty()) {
            Entry top = heap.top();
            heap.pop();
            std::uint32_t id = top.node_id;
            const RefSplit& b = best[id];

            std::vector<std::uint32_t> lm, rm;
            for (std::uint32_t i : members[id]) {
                if (value(i, static_cast<std::uint32_t>(b.feature)) < b.threshold)
                    lm.push_back(i);
                else
                    rm.push_back(i);
            }
            members[id].clear();

            nodes[id].feature = b.feature;
            nodes[id].threshold = b.threshold;

            std::uint32_t lid = add_node(std::move(lm));
            std::uint32_t rid = add_node(std::move(rm));
            nodes[id].left = static_cast<std::int32_t>(lid);
            nodes[id].right = static_cast<std::int32_t>(rid);
            ++leaves;

            if (best[lid].gain > 0.0) heap.push({best[lid].gain, lid});
            if (best[rid].gain > 0.0) heap.push({best[rid].gain, rid});
        }
    }
};

inline void number_leaves(std::vector<patchforge::TreeNode>& nodes, std::uint32_t base) {
    std::uint32_t next = base;
    std::vector<std::int32_t> stack{0};
    while (!stack.empty()) {
        std::int32_t id = stack.back();
        stack.pop_back();
        patchforge::TreeNode& n = nodes[static_cast<std::size_t>(id)];
        if (n.is_leaf()) {
            n.codeword = next++;
        } else {
            stack.push_back(n.right);
            stack.push_back(n.left);
        }
    }
}

} // namespace refdetail

// Train a forest from hard labels. Descriptor i carries class labels[i],
// weight 1.
inline std::vector<patchforge::DecisionTree> train_reference_forest(
    const std::vector<patchforge::PatchDescriptor>& xs, const std::vector<int>& labels,
    int num_classes, const patchforge::ForestConfig& cfg) {
    const std::uint32_t dim = static_cast<std::uint32_t>(xs.front().values.size());
    const std::size_t n = xs.size();
    const std::size_t draws = static_cast<std::size_t>(
        std::max<long long>(1, std::llround(cfg.bagging_fraction * static_cast<double>(n))));

    std::vector<patchforge::DecisionTree> trees(cfg.num_trees);
    for (std::uint32_t r = 0; r < cfg.num_trees; ++r) {
        refdetail::RefBuilder builder(xs, labels, cfg, dim,
                                      static_cast<std::uint32_t>(num_classes),
                                      cfg.rng_seed + static_cast<std::uint64_t>(r));
        std::vector<std::uint32_t> bag(draws);
        for (std::size_t i = 0; i < draws; ++i)
            bag[i] = static_cast<std::uint32_t>(builder.rng.index(n));
        builder.grow(std::move(bag));
        trees[r].nodes = std::move(builder.nodes);
        refdetail::number_leaves(trees[r].nodes, r * cfg.max_leaves);
    }
    return trees;
}

} // namespace testutil

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "patchforge/forest.hpp"
#include "patchforge/parallel.hpp"
#include "patchforge/rng.hpp"
#include "support/helpers.hpp"
#include "support/reference_forest.hpp"

using namespace patchforge;
using namespace testutil;

namespace {

std::vector<LabeledPatch> one_hot_patches(const std::vector<PatchDescriptor>& xs,
                                          const std::vector<int>& labels, int num_classes) {
    std::vector<LabeledPatch> out;
    out.reserve(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        out.push_back({xs[i],
                       ClassHistogram::one_hot(static_cast<std::size_t>(labels[i]),
                                               static_cast<std::size_t>(num_classes)),
                       1.0});
    return out;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("class histograms validate their mass") {
    CHECK_NOTHROW(ClassHistogram::one_hot(1, 3).validate());
    CHECK_NOTHROW(ClassHistogram::uniform(7).validate());
    ClassHistogram h;
    h.probs = {0.5, 0.4}; // short 0.1
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
    h.probs = {1.2, -0.2};
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
    h.probs = {};
    CHECK_THROWS_AS(h.validate(), std::invalid_argument);
}

TEST_CASE("entropy hits the textbook anchors") {
    CHECK(shannon_entropy(ClassHistogram::one_hot(0, 4)) == 0.0);
    CHECK(shannon_entropy(ClassHistogram::uniform(2)) == doctest::Approx(1.0));
    CHECK(shannon_entropy(ClassHistogram::uniform(8)) == doctest::Approx(3.0));
    ClassHistogram h;
    h.probs = {0.25, 0.75};
    CHECK(shannon_entropy(h) == doctest::Approx(0.8112781244591328).epsilon(1e-12));
}

TEST_CASE("information gain of a perfect split recovers the parent entropy") {
    ClassHistogram a = ClassHistogram::one_hot(0, 2);
    ClassHistogram b = ClassHistogram::one_hot(1, 2);
    PatchDescriptor d;
    d.values = {0.0f};
    std::vector<LabeledPatch> left = {{d, a, 1.0}, {d, a, 1.0}};
    std::vector<LabeledPatch> right = {{d, b, 1.0}, {d, b, 1.0}};
    std::vector<LabeledPatch> parent = left;
    parent.insert(parent.end(), right.begin(), right.end());
    CHECK(information_gain(parent, left, right) == doctest::Approx(1.0).epsilon(1e-12));
    // a useless split of an already pure node gains nothing
    CHECK(information_gain(left, {left[0]}, {left[1]}) == doctest::Approx(0.0));
}

TEST_CASE("information gain validates the partition") {
    PatchDescriptor d;
    d.values = {0.0f};
    std::vector<LabeledPatch> parent = {{d, ClassHistogram::uniform(2), 1.0}};
    CHECK_THROWS_AS(information_gain({}, {}, {}), std::invalid_argument);
    CHECK_THROWS_AS(information_gain(parent, parent, parent), std::invalid_argument);
}

TEST_CASE("entropy and gain match a brute-force reference on random data") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t m = 2 + rng.index(5);
        std::vector<double> p(m);
        double s = 0.0;
        for (auto& v : p) {
            v = rng.uniform();
            s += v;
        }
        for (auto& v : p) v /= s;
        double direct = 0.0;
        for (double v : p)
            if (v > 0.0) direct -= v * std::log2(v);
        CHECK(shannon_entropy(p.data(), m) == doctest::Approx(direct).epsilon(1e-12));
    }
}

TEST_CASE("forest config validates its knobs") {
    ForestConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    ForestConfig bad = cfg;
    bad.num_trees = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.bagging_fraction = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.bagging_fraction = 1.5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    CHECK(cfg.effective_candidate_features(128) == 12); // ceil(sqrt(128))
    cfg.candidate_features = 1000;
    CHECK(cfg.effective_candidate_features(128) == 128);
}

TEST_CASE("training rejects malformed patch sets") {
    ForestConfig cfg;
    cfg.num_trees = 1;
    Rng rng(3);
    auto xs = random_descriptors(rng, 4, 5);
    auto patches = one_hot_patches(xs, {0, 1, 0, 1}, 2);

    CHECK_THROWS_AS(train_forest({patches[0]}, cfg), std::invalid_argument);

    auto mixed = patches;
    mixed[2].descriptor.values.pop_back();
    CHECK_THROWS_AS(train_forest(mixed, cfg), std::invalid_argument);

    auto negw = patches;
    negw[1].weight = -0.5;
    CHECK_THROWS_AS(train_forest(negw, cfg), std::invalid_argument);

    auto badl = patches;
    badl[3].label.probs = {0.9, 0.2};
    CHECK_THROWS_AS(train_forest(badl, cfg), std::invalid_argument);
}

TEST_CASE("a grown forest respects the leaf budget and codeword ranges") {
    Rng rng(21);
    auto xs = random_descriptors(rng, 300, 16);
    auto labels = random_labels(rng, 300, 3);
    ForestConfig cfg;
    cfg.num_trees = 5;
    cfg.max_leaves = 24;
    cfg.rng_seed = 404;

    ForestCodebook forest = train_forest(one_hot_patches(xs, labels, 3), cfg);
    CHECK(forest.trees.size() == 5);
    CHECK(forest.codeword_count() == 5 * 24);

    for (std::size_t r = 0; r < forest.trees.size(); ++r) {
        const auto& tree = forest.trees[r];
        std::size_t leaves = tree.leaf_count();
        CHECK(leaves <= 24);
        CHECK(tree.nodes.size() == 2 * leaves - 1);
        std::set<std::uint32_t> seen;
        for (const auto& n : tree.nodes) {
            if (!n.is_leaf()) continue;
            CHECK(n.codeword >= r * 24);
            CHECK(n.codeword < (r + 1) * 24);
            CHECK(seen.insert(n.codeword).second); // no duplicates
        }
    }
}

TEST_CASE("leaves receive codewords in depth-first left-to-right order") {
    Rng rng(8);
    auto xs = random_descriptors(rng, 120, 8);
    auto labels = random_labels(rng, 120, 2);
    ForestConfig cfg;
    cfg.num_trees = 1;
    cfg.max_leaves = 10;
    ForestCodebook forest = train_forest(one_hot_patches(xs, labels, 2), cfg);

    // walk the tree depth first and collect leaf codewords
    std::vector<std::uint32_t> order;
    std::vector<std::int32_t> stack{0};
    const auto& nodes = forest.trees[0].nodes;
    while (!stack.empty()) {
        std::int32_t id = stack.back();
        stack.pop_back();
        if (nodes[static_cast<std::size_t>(id)].is_leaf()) {
            order.push_back(nodes[static_cast<std::size_t>(id)].codeword);
        } else {
            stack.push_back(nodes[static_cast<std::size_t>(id)].right);
            stack.push_back(nodes[static_cast<std::size_t>(id)].left);
        }
    }
    for (std::size_t i = 0; i < order.size(); ++i) CHECK(order[i] == i);
}

TEST_CASE("splits actually separate on the chosen feature") {
    Rng rng(31);
    auto xs = random_descriptors(rng, 200, 6);
    auto labels = random_labels(rng, 200, 2);
    ForestConfig cfg;
    cfg.num_trees = 2;
    cfg.max_leaves = 16;
    ForestCodebook forest = train_forest(one_hot_patches(xs, labels, 2), cfg);
    for (const auto& p : xs) {
        for (const auto& tree : forest.trees) {
            const TreeNode* n = &tree.nodes[0];
            while (!n->is_leaf()) {
                bool goes_left = p.values[static_cast<std::size_t>(n->feature)] < n->threshold;
                n = &tree.nodes[static_cast<std::size_t>(goes_left ? n->left : n->right)];
            }
            CHECK(n->is_leaf());
        }
    }
}

TEST_CASE("quantization spreads unit mass over one leaf per tree") {
    Rng rng(77);
    auto xs = random_descriptors(rng, 150, 10);
    auto labels = random_labels(rng, 150, 4);
    ForestConfig cfg;
    cfg.num_trees = 8;
    cfg.max_leaves = 12;
    ForestCodebook forest = train_forest(one_hot_patches(xs, labels, 4), cfg);

    auto q = quantize(forest, xs[0]);
    REQUIRE(q.size() == 8);
    double total = 0.0;
    for (std::size_t r = 0; r < q.size(); ++r) {
        CHECK(q[r].first >= r * 12);
        CHECK(q[r].first < (r + 1) * 12);
        CHECK(q[r].second == doctest::Approx(1.0 / 8.0));
        total += q[r].second;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    auto cws = leaf_codewords(forest, xs[0].values.data());
    for (std::size_t r = 0; r < cws.size(); ++r) CHECK(cws[r] == q[r].first);
}

TEST_CASE("training twice with one seed gives the identical forest") {
    Rng rng(55);
    auto xs = random_descriptors(rng, 250, 12);
    auto labels = random_labels(rng, 250, 3);
    ForestConfig cfg;
    cfg.num_trees = 4;
    cfg.max_leaves = 20;
    cfg.rng_seed = 999;
    auto patches = one_hot_patches(xs, labels, 3);

    ForestCodebook a = train_forest(patches, cfg);
    ForestCodebook b = train_forest(patches, cfg);
    REQUIRE(a.trees.size() == b.trees.size());
    for (std::size_t r = 0; r < a.trees.size(); ++r)
        CHECK(trees_bitwise_equal(a.trees[r], b.trees[r]));
}

TEST_CASE("thread count does not change the trained forest") {
    Rng rng(56);
    auto xs = random_descriptors(rng, 250, 12);
    auto labels = random_labels(rng, 250, 3);
    ForestConfig cfg;
    cfg.num_trees = 6;
    cfg.rng_seed = 1234;
    auto patches = one_hot_patches(xs, labels, 3);

    set_max_threads(1);
    ForestCodebook a = train_forest(patches, cfg);
    set_max_threads(4);
    ForestCodebook b = train_forest(patches, cfg);
    set_max_threads(0);
    for (std::size_t r = 0; r < a.trees.size(); ++r)
        CHECK(trees_bitwise_equal(a.trees[r], b.trees[r]));
}

TEST_CASE("one-hot soft labels reproduce the hard-label reference forest bit for bit") {
    Rng rng(60);
    auto xs = random_descriptors(rng, 180, 9);
    auto labels = random_labels(rng, 180, 3);
    ForestConfig cfg;
    cfg.num_trees = 3;
    cfg.max_leaves = 15;
    cfg.bagging_fraction = 0.8;
    cfg.rng_seed = 31337;

    ForestCodebook soft = train_forest(one_hot_patches(xs, labels, 3), cfg);
    auto hard = train_reference_forest(xs, labels, 3, cfg);
    REQUIRE(soft.trees.size() == hard.size());
    for (std::size_t r = 0; r < hard.size(); ++r)
        CHECK(trees_bitwise_equal(soft.trees[r], hard[r]));
}

TEST_CASE("a single-class corpus leaves nothing to split") {
    Rng rng(62);
    auto xs = random_descriptors(rng, 50, 4);
    std::vector<LabeledPatch> patches;
    for (const auto& x : xs) patches.push_back({x, ClassHistogram::one_hot(0, 1), 1.0});
    ForestConfig cfg;
    cfg.num_trees = 2;
    ForestCodebook forest = train_forest(patches, cfg);
    // every node is already pure, every candidate gain is exactly zero
    for (const auto& tree : forest.trees) {
        CHECK(tree.nodes.size() == 1);
        CHECK(tree.nodes[0].is_leaf());
    }
}

TEST_CASE("forest files round-trip exactly") {
    Rng rng(70);
    auto xs = random_descriptors(rng, 100, 7);
    auto labels = random_labels(rng, 100, 2);
    ForestConfig cfg;
    cfg.num_trees = 3;
    cfg.max_leaves = 9;
    cfg.rng_seed = 2024;
    ForestCodebook forest = train_forest(one_hot_patches(xs, labels, 2), cfg);

    std::string path = temp_path("pf_test_forest.pff");
    save_forest(path, forest);
    ForestCodebook loaded = load_forest(path);

    CHECK(loaded.descriptor_dim == forest.descriptor_dim);
    CHECK(loaded.num_classes == forest.num_classes);
    CHECK(loaded.leaves_per_tree == forest.leaves_per_tree);
    CHECK(loaded.config.rng_seed == forest.config.rng_seed);
    REQUIRE(loaded.trees.size() == forest.trees.size());
    // the file stores nodes in preorder, so compare shape and routing rather
    // than array order
    for (std::size_t r = 0; r < loaded.trees.size(); ++r) {
        CHECK(loaded.trees[r].nodes.size() == forest.trees[r].nodes.size());
        CHECK(loaded.trees[r].leaf_count() == forest.trees[r].leaf_count());
    }
    for (const auto& x : xs)
        CHECK(leaf_codewords(loaded, x.values.data()) == leaf_codewords(forest, x.values.data()));

    // a second save of the loaded forest reproduces the file byte for byte
    std::string path2 = temp_path("pf_test_forest2.pff");
    save_forest(path2, loaded);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("forest loader rejects corrupted bytes") {
    Rng rng(71);
    auto xs = random_descriptors(rng, 60, 5);
    auto labels = random_labels(rng, 60, 2);
    ForestConfig cfg;
    cfg.num_trees = 1;
    ForestCodebook forest = train_forest(one_hot_patches(xs, labels, 2), cfg);
    std::string path = temp_path("pf_test_forest_bad.pff");
    save_forest(path, forest);

    // truncate the file and expect a named failure
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    CHECK_THROWS(load_forest(path));
    std::remove(path.c_str());
}

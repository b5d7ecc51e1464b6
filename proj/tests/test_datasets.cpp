#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "patchforge/datasets.hpp"
#include "patchforge/image_io.hpp"

using namespace patchforge;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_png_gray(const std::string& path, const RasterImage& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    REQUIRE(fp != nullptr);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    REQUIRE(setjmp(png_jmpbuf(png)) == 0);
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<std::size_t>(img.width));
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            row[static_cast<std::size_t>(x)] =
                static_cast<png_byte>(std::lround(img.at(y, x) * 255.0f));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

} // namespace

TEST_CASE("pgm files round-trip through the 8-bit quantization") {
    RasterImage img;
    img.width = 5;
    img.height = 3;
    for (int i = 0; i < 15; ++i) img.pixels.push_back(static_cast<float>(i * 17 % 256) / 255.0f);

    fs::path dir = fresh_dir("pf_pgm_test");
    std::string path = (dir / "img.pgm").string();
    write_pgm(path, img);
    RasterImage back = read_pgm(path);
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));
    fs::remove_all(dir);
}

TEST_CASE("ascii pgm with comments parses") {
    fs::path dir = fresh_dir("pf_pgm_ascii");
    std::string path = (dir / "a.pgm").string();
    std::ofstream os(path);
    os << "P2\n# a comment line\n3 2\n# another\n255\n0 128 255\n64 32 16\n";
    os.close();
    RasterImage img = read_pgm(path);
    CHECK(img.width == 3);
    CHECK(img.height == 2);
    CHECK(img.at(0, 1) == doctest::Approx(128.0 / 255.0));
    CHECK(img.at(1, 2) == doctest::Approx(16.0 / 255.0));
    fs::remove_all(dir);
}

TEST_CASE("grayscale png decodes to the same pixels") {
    RasterImage img;
    img.width = 7;
    img.height = 4;
    for (int i = 0; i < 28; ++i) img.pixels.push_back(static_cast<float>(i * 9 % 256) / 255.0f);

    fs::path dir = fresh_dir("pf_png_test");
    std::string path = (dir / "img.png").string();
    write_png_gray(path, img);
    RasterImage back = read_image(path);
    CHECK(back.width == img.width);
    CHECK(back.height == img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));
    fs::remove_all(dir);
}

TEST_CASE("unsupported image extensions are rejected by name") {
    try {
        read_image("/nonexistent/img.tiff");
        FAIL("expected a throw");
    } catch (const std::exception& e) {
        CHECK(std::string(e.what()).find("tiff") != std::string::npos);
    }
}

TEST_CASE("synthetic corpora are pure functions of their spec") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.images_per_class = 4;
    spec.image_size = 32;
    spec.seed = 99;
    SplitConfig split;
    split.seed = 5;

    LoadedCorpus a = generate_synthetic(spec, split);
    LoadedCorpus b = generate_synthetic(spec, split);
    REQUIRE(a.images.size() == 8);
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i].pixels == b.images[i].pixels);
        CHECK(a.object_masks[i] == b.object_masks[i]);
    }
    CHECK(a.corpus.is_train == b.corpus.is_train);

    SyntheticSpec other = spec;
    other.seed = 100;
    LoadedCorpus c = generate_synthetic(other, split);
    CHECK(a.images[0].pixels != c.images[0].pixels);
}

TEST_CASE("the object band covers the configured share of rows") {
    SyntheticSpec spec;
    spec.num_classes = 1;
    spec.images_per_class = 3;
    spec.image_size = 40;
    spec.background_fraction = 0.4;
    spec.noise_sigma = 0.0;
    LoadedCorpus corpus = generate_synthetic(spec, {});

    for (const auto& mask : corpus.object_masks) {
        std::size_t on = 0;
        for (std::uint8_t v : mask) on += v;
        CHECK(on == 24u * 40u); // 60% of 40 rows, full width
    }

    SyntheticSpec all_bg = spec;
    all_bg.background_fraction = 1.0;
    LoadedCorpus bg = generate_synthetic(all_bg, {});
    for (const auto& mask : bg.object_masks)
        for (std::uint8_t v : mask) CHECK(v == 0);
}

TEST_CASE("pixels stay inside the unit interval") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.images_per_class = 2;
    spec.image_size = 24;
    spec.noise_sigma = 0.8; // strong noise forces the clamp
    LoadedCorpus corpus = generate_synthetic(spec, {});
    for (const auto& img : corpus.images)
        for (float v : img.pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
}

TEST_CASE("splits are stratified and rounded per class") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.images_per_class = 10;
    spec.image_size = 16;
    SplitConfig split;
    split.train_fraction = 0.7;
    split.labeled_fraction = 0.25;
    split.seed = 42;
    LoadedCorpus corpus = generate_synthetic(spec, split);

    for (int c = 0; c < 3; ++c) {
        int train = 0, test = 0, labeled = 0;
        for (std::size_t i = 0; i < corpus.corpus.docs.size(); ++i) {
            if (corpus.corpus.docs[i].label != c) continue;
            train += corpus.corpus.is_train[i];
            test += corpus.corpus.is_test[i];
            labeled += corpus.corpus.is_labeled[i];
        }
        CHECK(train == 7);
        CHECK(test == 3);
        CHECK(labeled == 2); // round(0.25 * 7)
    }
    CHECK_NOTHROW(corpus.corpus.validate());
}

TEST_CASE("corpus validation catches inconsistent masks") {
    Corpus corpus;
    corpus.class_names = {"a"};
    corpus.docs.push_back({0, 0, "x"});
    corpus.is_train = {1};
    corpus.is_test = {1}; // both sides at once
    corpus.is_labeled = {0};
    CHECK_THROWS_AS(corpus.validate(), std::invalid_argument);

    corpus.is_test = {0};
    corpus.is_train = {0};
    corpus.is_labeled = {1}; // labeled but not training
    CHECK_THROWS_AS(corpus.validate(), std::invalid_argument);
}

TEST_CASE("folder corpora read classes alphabetically and stratify") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.images_per_class = 5;
    spec.image_size = 20;
    spec.seed = 1;
    LoadedCorpus src = generate_synthetic(spec, {});

    fs::path root = fresh_dir("pf_folder_corpus");
    fs::create_directories(root / "zebra");
    fs::create_directories(root / "apple");
    for (std::size_t i = 0; i < src.images.size(); ++i) {
        const char* cls = src.corpus.docs[i].label == 0 ? "apple" : "zebra";
        char name[32];
        std::snprintf(name, sizeof(name), "img_%02zu.pgm", i);
        write_pgm((root / cls / name).string(), src.images[i]);
    }

    SplitConfig split;
    split.train_fraction = 0.8;
    LoadedCorpus loaded = load_folder_corpus(root.string(), split);
    CHECK(loaded.corpus.class_names == std::vector<std::string>{"apple", "zebra"});
    CHECK(loaded.corpus.docs.size() == 10);
    CHECK(loaded.images.size() == 10);
    // class 0 documents come first and carry the apple label
    CHECK(loaded.corpus.docs[0].label == 0);
    CHECK(loaded.corpus.docs[9].label == 1);
    int train = 0;
    for (char t : loaded.corpus.is_train) train += t;
    CHECK(train == 8);
    fs::remove_all(root);
}

TEST_CASE("an empty class directory is an error") {
    fs::path root = fresh_dir("pf_folder_empty");
    fs::create_directories(root / "good");
    fs::create_directories(root / "hollow");
    RasterImage img;
    img.width = img.height = 4;
    img.pixels.assign(16, 0.5f);
    write_pgm((root / "good" / "a.pgm").string(), img);
    CHECK_THROWS(load_folder_corpus(root.string(), {}));
    fs::remove_all(root);
}

TEST_CASE("patch truth marks patches with a masked majority") {
    GridConfig grid;
    grid.patch_size = 4;
    grid.step_size = 4;
    grid.spatial_cells = 2;

    // 8x4 mask: left half fully on, right half one pixel shy of half
    std::vector<std::uint8_t> mask(32, 0);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) mask[static_cast<std::size_t>(y) * 8 + x] = 1;
    for (int i = 0; i < 7; ++i) mask[static_cast<std::size_t>(i / 4) * 8 + 4 + (i % 4)] = 1;

    auto truth = patch_object_truth(mask, 8, 4, grid);
    REQUIRE(truth.size() == 2);
    CHECK(truth[0] == 1); // 16 of 16
    CHECK(truth[1] == 0); // 7 of 16

    // exactly half counts as object
    for (int i = 0; i < 8; ++i) mask[static_cast<std::size_t>(i / 4) * 8 + 4 + (i % 4)] = 1;
    truth = patch_object_truth(mask, 8, 4, grid);
    CHECK(truth[1] == 1);

    CHECK_THROWS_AS(patch_object_truth(mask, 5, 4, grid), std::invalid_argument);
}

TEST_CASE("leaf purity scores a hand-built quantizer") {
    // one tree: value < 0.3 -> leaf 0, < 0.7 -> leaf 1, else leaf 2
    ForestCodebook forest;
    forest.descriptor_dim = 1;
    forest.num_classes = 2;
    forest.leaves_per_tree = 3;
    DecisionTree tree;
    tree.nodes.resize(5);
    tree.nodes[0] = {0, 0.3f, 1, 2, 0};
    tree.nodes[1] = {-1, 0.0f, -1, -1, 0};
    tree.nodes[2] = {0, 0.7f, 3, 4, 0};
    tree.nodes[3] = {-1, 0.0f, -1, -1, 1};
    tree.nodes[4] = {-1, 0.0f, -1, -1, 2};
    forest.trees.push_back(tree);

    auto patch = [](float v) {
        PatchDescriptor d;
        d.values = {v};
        return d;
    };
    std::vector<std::vector<PatchDescriptor>> docs = {
        {patch(0.1f), patch(0.5f), patch(0.1f)}, // class 0: two objects, one background
        {patch(0.9f), patch(0.5f), patch(0.9f)}, // class 1
    };
    std::vector<std::int32_t> doc_class = {0, 1};
    std::vector<std::vector<std::uint8_t>> truth = {{1, 0, 1}, {1, 0, 1}};

    PurityReport report = patch_label_purity(forest, docs, doc_class, truth, 2);
    REQUIRE(report.leaves.size() == 3);
    CHECK(report.leaves[0].codeword == 0);
    CHECK(report.leaves[0].routed == 2);
    CHECK(report.leaves[0].purity == doctest::Approx(1.0));
    CHECK(report.leaves[0].majority_class == 0);
    CHECK(report.leaves[1].purity == doctest::Approx(0.0)); // only background lands here
    CHECK(report.leaves[2].purity == doctest::Approx(1.0));
    CHECK(report.leaves[2].majority_class == 1);
    CHECK(report.mean_purity == doctest::Approx(4.0 / 6.0));

    CHECK_THROWS_AS(patch_label_purity(forest, docs, {0}, truth, 2), std::invalid_argument);
}

#include "patchforge/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "patchforge/image_io.hpp"
#include "patchforge/rng.hpp"

namespace fs = std::filesystem;

namespace patchforge {

void Corpus::validate() const {
    std::size_t n = docs.size();
    if (is_train.size() != n || is_test.size() != n || is_labeled.size() != n)
        throw std::invalid_argument("corpus: mask length mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        if (is_train[i] && is_test[i])
            throw std::invalid_argument("corpus: document in both train and test");
        if (is_labeled[i] && !is_train[i])
            throw std::invalid_argument("corpus: labeled document outside the train split");
        if (docs[i].label < 0 ||
            static_cast<std::size_t>(docs[i].label) >= class_names.size())
            throw std::invalid_argument("corpus: document label out of range");
    }
}

namespace {

// Stratified split: within each class the documents are shuffled with a
// class-specific stream, the first round(train_fraction * n) go to train and
// the first round(labeled_fraction * n_train) of those are marked labeled.
void apply_split(Corpus& corpus, const SplitConfig& split) {
    if (!(split.train_fraction > 0.0 && split.train_fraction <= 1.0))
        throw std::invalid_argument("split: train_fraction must be in (0, 1]");
    if (!(split.labeled_fraction >= 0.0 && split.labeled_fraction <= 1.0))
        throw std::invalid_argument("split: labeled_fraction must be in [0, 1]");

    std::size_t n = corpus.docs.size();
    corpus.is_train.assign(n, 0);
    corpus.is_test.assign(n, 0);
    corpus.is_labeled.assign(n, 0);

    for (std::size_t c = 0; c < corpus.class_names.size(); ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i)
            if (corpus.docs[i].label == static_cast<std::int32_t>(c)) members.push_back(i);
        if (members.empty()) continue;

        Rng rng(mix_seed(split.seed ^ (0x53504C49ULL + c)));
        for (std::size_t i = members.size(); i > 1; --i)
            std::swap(members[i - 1], members[rng.index(i)]);

        std::size_t n_train = static_cast<std::size_t>(std::clamp<long long>(
            std::llround(split.train_fraction * static_cast<double>(members.size())), 0,
            static_cast<long long>(members.size())));
        std::size_t n_labeled = static_cast<std::size_t>(std::clamp<long long>(
            std::llround(split.labeled_fraction * static_cast<double>(n_train)), 0,
            static_cast<long long>(n_train)));

        for (std::size_t i = 0; i < members.size(); ++i) {
            if (i < n_train) {
                corpus.is_train[members[i]] = 1;
                if (i < n_labeled) corpus.is_labeled[members[i]] = 1;
            } else {
                corpus.is_test[members[i]] = 1;
            }
        }
    }
}

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return ext == ".png" || ext == ".pgm";
}

} // namespace

LoadedCorpus load_folder_corpus(const std::string& root, const SplitConfig& split) {
    if (!fs::is_directory(root)) throw std::runtime_error("corpus root is not a directory: " + root);

    std::vector<fs::path> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw std::runtime_error("no class directories under " + root);

    LoadedCorpus out;
    for (std::size_t c = 0; c < class_dirs.size(); ++c) {
        out.corpus.class_names.push_back(class_dirs[c].filename().string());
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(class_dirs[c]))
            if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw std::runtime_error("class directory has no images: " + class_dirs[c].string());

        for (const auto& f : files) {
            Document d;
            d.id = static_cast<std::uint32_t>(out.corpus.docs.size());
            d.label = static_cast<std::int32_t>(c);
            d.path = f.string();
            out.corpus.docs.push_back(d);
            out.images.push_back(read_image(f.string()));
        }
    }
    apply_split(out.corpus, split);
    out.corpus.validate();
    return out;
}

void SyntheticSpec::validate() const {
    if (num_classes < 1) throw std::invalid_argument("synthetic: num_classes must be >= 1");
    if (images_per_class < 1)
        throw std::invalid_argument("synthetic: images_per_class must be >= 1");
    if (image_size < 1) throw std::invalid_argument("synthetic: image_size must be >= 1");
    if (!(background_fraction >= 0.0 && background_fraction <= 1.0))
        throw std::invalid_argument("synthetic: background_fraction must be in [0, 1]");
    if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synthetic: noise_sigma must be >= 0");
    if (!textures.empty() && textures.size() != num_classes)
        throw std::invalid_argument("synthetic: need one texture per class");
}

ClassTexture SyntheticSpec::texture_for(std::uint32_t cls) const {
    if (!textures.empty()) return textures[cls];
    ClassTexture t;
    t.angle_deg = 180.0 * cls / static_cast<double>(num_classes);
    t.frequency = 0.25;
    return t;
}

LoadedCorpus generate_synthetic(const SyntheticSpec& spec, const SplitConfig& split) {
    spec.validate();
    constexpr double kTwoPi = 6.283185307179586476925286766559;

    LoadedCorpus out;
    const int size = static_cast<int>(spec.image_size);
    const int band = static_cast<int>(std::llround((1.0 - spec.background_fraction) * size));

    for (std::uint32_t c = 0; c < spec.num_classes; ++c)
        out.corpus.class_names.push_back("class_" + std::to_string(c));

    for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
        ClassTexture tex = spec.texture_for(c);
        double theta = tex.angle_deg * kTwoPi / 360.0;
        double ux = std::cos(theta), uy = std::sin(theta);

        for (std::uint32_t i = 0; i < spec.images_per_class; ++i) {
            Rng rng(mix_seed(mix_seed(spec.seed ^ c) ^ (0x494D47ULL + i)));
            int offset = band >= size ? 0 : static_cast<int>(rng.index(size - band + 1));
            double phase = rng.uniform(0.0, kTwoPi);

            RasterImage img;
            img.width = size;
            img.height = size;
            img.pixels.resize(static_cast<std::size_t>(size) * size);
            std::vector<std::uint8_t> mask(img.pixels.size(), 0);

            for (int y = 0; y < size; ++y) {
                bool object_row = y >= offset && y < offset + band;
                for (int x = 0; x < size; ++x) {
                    double v;
                    if (object_row) {
                        v = 0.5 + spec.stripe_amplitude *
                                      std::sin(kTwoPi * tex.frequency * (x * ux + y * uy) + phase);
                        mask[static_cast<std::size_t>(y) * size + x] = 1;
                    } else {
                        v = rng.uniform();
                    }
                    if (spec.noise_sigma > 0.0) v += rng.normal(0.0, spec.noise_sigma);
                    img.pixels[static_cast<std::size_t>(y) * size + x] =
                        static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }

            Document d;
            d.id = static_cast<std::uint32_t>(out.corpus.docs.size());
            d.label = static_cast<std::int32_t>(c);
            d.path = "synthetic/class_" + std::to_string(c) + "/img_" + std::to_string(i);
            out.corpus.docs.push_back(d);
            out.images.push_back(std::move(img));
            out.object_masks.push_back(std::move(mask));
        }
    }
    apply_split(out.corpus, split);
    out.corpus.validate();
    return out;
}

std::vector<std::uint8_t> patch_object_truth(const std::vector<std::uint8_t>& mask, int width,
                                             int height, const GridConfig& grid) {
    grid.validate();
    if (static_cast<std::size_t>(width) * height != mask.size())
        throw std::invalid_argument("patch_object_truth: mask size mismatch");

    std::vector<std::uint8_t> out;
    if (width < grid.patch_size || height < grid.patch_size) return out;
    const int rows = (height - grid.patch_size) / grid.step_size + 1;
    const int cols = (width - grid.patch_size) / grid.step_size + 1;
    const int area = grid.patch_size * grid.patch_size;
    out.reserve(static_cast<std::size_t>(rows) * cols);

    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            int py = r * grid.step_size, px = c * grid.step_size;
            int hits = 0;
            for (int dy = 0; dy < grid.patch_size; ++dy)
                for (int dx = 0; dx < grid.patch_size; ++dx)
                    hits += mask[static_cast<std::size_t>(py + dy) * width + (px + dx)];
            out.push_back(2 * hits >= area ? 1 : 0);
        }
    }
    return out;
}

PurityReport patch_label_purity(const ForestCodebook& forest,
                                const std::vector<std::vector<PatchDescriptor>>& patches_per_doc,
                                const std::vector<std::int32_t>& doc_class,
                                const std::vector<std::vector<std::uint8_t>>& object_truth,
                                std::uint32_t num_classes) {
    if (patches_per_doc.size() != doc_class.size() || patches_per_doc.size() != object_truth.size())
        throw std::invalid_argument("patch_label_purity: per-document list length mismatch");

    const std::uint32_t J = forest.codeword_count();
    std::vector<std::uint32_t> routed(J, 0);
    std::vector<std::uint32_t> object_count(static_cast<std::size_t>(J) * num_classes, 0);

    for (std::size_t d = 0; d < patches_per_doc.size(); ++d) {
        if (patches_per_doc[d].size() != object_truth[d].size())
            throw std::invalid_argument("patch_label_purity: truth length mismatch in document " +
                                        std::to_string(d));
        std::int32_t cls = doc_class[d];
        if (cls < 0 || static_cast<std::uint32_t>(cls) >= num_classes)
            throw std::invalid_argument("patch_label_purity: bad class for document " +
                                        std::to_string(d));
        for (std::size_t i = 0; i < patches_per_doc[d].size(); ++i) {
            for (std::uint32_t cw : leaf_codewords(forest, patches_per_doc[d][i].values.data())) {
                ++routed[cw];
                if (object_truth[d][i])
                    ++object_count[static_cast<std::size_t>(cw) * num_classes +
                                   static_cast<std::uint32_t>(cls)];
            }
        }
    }

    PurityReport report;
    std::uint64_t pure_total = 0, routed_total = 0;
    for (std::uint32_t cw = 0; cw < J; ++cw) {
        if (routed[cw] == 0) continue;
        LeafPurity leaf;
        leaf.codeword = cw;
        leaf.routed = routed[cw];
        const std::uint32_t* counts = object_count.data() + static_cast<std::size_t>(cw) * num_classes;
        std::uint32_t best = 0;
        for (std::uint32_t c = 1; c < num_classes; ++c)
            if (counts[c] > counts[best]) best = c;
        leaf.majority_class = best;
        leaf.purity = static_cast<double>(counts[best]) / leaf.routed;
        pure_total += counts[best];
        routed_total += leaf.routed;
        report.leaves.push_back(leaf);
    }
    report.mean_purity =
        routed_total == 0 ? 0.0 : static_cast<double>(pure_total) / static_cast<double>(routed_total);
    return report;
}

} // namespace patchforge

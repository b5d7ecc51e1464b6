#include "patchforge/softlabel.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "patchforge/binary_io.hpp"

namespace patchforge {

Mat class_topic_distribution(const PlsaModel& model, const std::vector<std::int32_t>& doc_class,
                             std::uint32_t num_classes) {
    if (num_classes == 0) throw std::invalid_argument("class_topic_distribution: no classes");
    if (doc_class.size() != model.doc_count())
        throw std::invalid_argument("class_topic_distribution: label list length mismatch");

    const std::size_t K = model.topic_count();
    Mat czd(K, num_classes);
    std::vector<std::size_t> docs_per_class(num_classes, 0);

    for (std::size_t n = 0; n < doc_class.size(); ++n) {
        std::int32_t c = doc_class[n];
        if (c < 0) continue;
        if (static_cast<std::uint32_t>(c) >= num_classes)
            throw std::invalid_argument("class_topic_distribution: label out of range");
        ++docs_per_class[static_cast<std::size_t>(c)];
        const double* theta = model.doc_topic.row(n);
        for (std::size_t k = 0; k < K; ++k) czd(k, static_cast<std::size_t>(c)) += theta[k];
    }
    for (std::uint32_t m = 0; m < num_classes; ++m)
        if (docs_per_class[m] == 0)
            throw std::invalid_argument("class_topic_distribution: class " + std::to_string(m) +
                                        " has no labeled documents");

    for (std::size_t k = 0; k < K; ++k) {
        double sum = 0.0;
        for (std::uint32_t m = 0; m < num_classes; ++m) sum += czd(k, m);
        if (sum > 0.0) {
            for (std::uint32_t m = 0; m < num_classes; ++m) czd(k, m) /= sum;
        } else {
            for (std::uint32_t m = 0; m < num_classes; ++m)
                czd(k, m) = 1.0 / static_cast<double>(num_classes);
        }
    }
    return czd;
}

DominantTopicMap dominant_topics(const Mat& class_topic) {
    if (class_topic.empty()) throw std::invalid_argument("dominant_topics: empty matrix");
    const std::size_t K = class_topic.rows;
    const std::size_t M = class_topic.cols;
    const double floor = 1.0 / static_cast<double>(K);

    DominantTopicMap map;
    map.topic_count = static_cast<std::uint32_t>(K);
    map.sets.resize(M);
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t k = 0; k < K; ++k)
            if (class_topic(k, m) > floor) map.sets[m].push_back(static_cast<std::uint32_t>(k));
        if (map.sets[m].empty()) {
            // fall back to the single best topic, lowest id on ties
            std::size_t arg = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (class_topic(k, m) > class_topic(arg, m)) arg = k;
            map.sets[m].push_back(static_cast<std::uint32_t>(arg));
        }
    }
    return map;
}

std::vector<double> classify_soft_label(const std::vector<double>& topic_dist,
                                        const DominantTopicMap& topics, bool* degenerate) {
    const std::size_t M = topics.num_classes();
    if (M == 0) throw std::invalid_argument("soft label: no classes");
    std::vector<double> out(M, 0.0);
    double total = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
        double s = 0.0;
        for (std::uint32_t k : topics.sets[m]) {
            if (k >= topic_dist.size())
                throw std::invalid_argument("soft label: topic id out of range");
            s += topic_dist[k];
        }
        out[m] = s;
        total += s;
    }
    if (degenerate) *degenerate = false;
    if (total > 0.0) {
        for (double& v : out) v /= total;
    } else {
        for (double& v : out) v = 1.0 / static_cast<double>(M);
        if (degenerate) *degenerate = true;
    }
    return out;
}

ImageSoftLabels image_soft_labels(const PlsaModel& model, const DominantTopicMap& topics) {
    const std::size_t M = topics.num_classes();
    const std::size_t N = model.doc_count();
    ImageSoftLabels out;
    out.probs = Mat(M, N);
    std::vector<double> theta(model.topic_count());
    for (std::size_t n = 0; n < N; ++n) {
        const double* row = model.doc_topic.row(n);
        theta.assign(row, row + model.topic_count());
        bool degenerate = false;
        std::vector<double> p = classify_soft_label(theta, topics, &degenerate);
        for (std::size_t m = 0; m < M; ++m) out.probs(m, n) = p[m];
        if (degenerate) out.degenerate_docs.push_back(static_cast<std::uint32_t>(n));
    }
    return out;
}

std::vector<double> patch_topic_distribution(
    const Mat& posterior_rows, const std::vector<std::pair<std::uint32_t, double>>& quantized) {
    const std::size_t K = posterior_rows.cols;
    if (quantized.empty()) throw std::invalid_argument("patch_topic_distribution: empty support");
    std::vector<double> out(K, 0.0);
    for (const auto& [w, p] : quantized) {
        if (w >= posterior_rows.rows)
            throw std::invalid_argument("patch_topic_distribution: codeword out of range");
        const double* row = posterior_rows.row(w);
        for (std::size_t k = 0; k < K; ++k) out[k] += p * row[k];
    }
    // posterior rows are distributions and codeword weights sum to 1, so
    // this is a convex mixture; renormalize only to absorb round-off
    double sum = 0.0;
    for (double v : out) sum += v;
    if (sum > 0.0)
        for (double& v : out) v /= sum;
    return out;
}

std::vector<std::vector<double>> patch_soft_labels(
    const std::vector<std::vector<double>>& patch_topics, const DominantTopicMap& topics,
    std::size_t* out_degenerate) {
    std::vector<std::vector<double>> out(patch_topics.size());
    std::size_t degenerate_count = 0;
    for (std::size_t i = 0; i < patch_topics.size(); ++i) {
        bool degenerate = false;
        out[i] = classify_soft_label(patch_topics[i], topics, &degenerate);
        if (degenerate) ++degenerate_count;
    }
    if (out_degenerate) *out_degenerate = degenerate_count;
    return out;
}

ClassHistogram feedback_histogram(const std::vector<double>& soft_label) {
    if (soft_label.empty()) throw std::invalid_argument("feedback_histogram: empty label");
    ClassHistogram h;
    h.probs.resize(soft_label.size());
    double sum = 0.0;
    for (double v : soft_label) {
        if (!(v >= 0.0)) throw std::invalid_argument("feedback_histogram: negative entry");
        sum += v;
    }
    if (sum > 0.0) {
        for (std::size_t i = 0; i < soft_label.size(); ++i) h.probs[i] = soft_label[i] / sum;
    } else {
        for (double& v : h.probs) v = 1.0 / static_cast<double>(soft_label.size());
    }
    return h;
}

SoftLabelGrid make_soft_label_grid(
    const std::vector<double>& patch_probs, std::uint32_t num_classes,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& positions) {
    if (num_classes == 0) throw std::invalid_argument("soft label grid: no classes");
    if (positions.empty() || patch_probs.size() != positions.size() * num_classes)
        throw std::invalid_argument("soft label grid: probability/position size mismatch");

    std::vector<std::uint32_t> row_vals, col_vals;
    for (const auto& [r, c] : positions) {
        row_vals.push_back(r);
        col_vals.push_back(c);
    }
    std::sort(row_vals.begin(), row_vals.end());
    row_vals.erase(std::unique(row_vals.begin(), row_vals.end()), row_vals.end());
    std::sort(col_vals.begin(), col_vals.end());
    col_vals.erase(std::unique(col_vals.begin(), col_vals.end()), col_vals.end());

    SoftLabelGrid grid;
    grid.rows = static_cast<std::uint32_t>(row_vals.size());
    grid.cols = static_cast<std::uint32_t>(col_vals.size());
    grid.classes = num_classes;
    grid.planes.assign(static_cast<std::size_t>(grid.rows) * grid.cols * num_classes, 0.0f);

    for (std::size_t i = 0; i < positions.size(); ++i) {
        std::size_t gr = std::lower_bound(row_vals.begin(), row_vals.end(), positions[i].first) -
                         row_vals.begin();
        std::size_t gc = std::lower_bound(col_vals.begin(), col_vals.end(), positions[i].second) -
                         col_vals.begin();
        for (std::uint32_t m = 0; m < num_classes; ++m) {
            grid.planes[(static_cast<std::size_t>(m) * grid.rows + gr) * grid.cols + gc] =
                static_cast<float>(patch_probs[i * num_classes + m]);
        }
    }
    return grid;
}

void save_soft_label_grid(const std::string& path, const SoftLabelGrid& grid) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    write_magic(os, "PFS1");
    write_u32(os, grid.rows);
    write_u32(os, grid.cols);
    write_u32(os, grid.classes);
    for (float v : grid.planes) write_f32(os, v);
    if (!os) throw std::runtime_error("write failed: " + path);
}

SoftLabelGrid load_soft_label_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    expect_magic(is, "PFS1", "soft label grid");
    SoftLabelGrid grid;
    grid.rows = read_u32(is, path + ": rows");
    grid.cols = read_u32(is, path + ": cols");
    grid.classes = read_u32(is, path + ": classes");
    std::size_t n = static_cast<std::size_t>(grid.rows) * grid.cols * grid.classes;
    grid.planes.resize(n);
    for (std::size_t i = 0; i < n; ++i) grid.planes[i] = read_f32(is, path + ": plane value");
    return grid;
}

} // namespace patchforge

#include "patchforge/plsa.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "patchforge/binary_io.hpp"
#include "patchforge/parallel.hpp"
#include "patchforge/rng.hpp"

namespace patchforge {

void EmConfig::validate() const {
    if (max_iters < 1) throw std::invalid_argument("em: max_iters must be >= 1");
    if (!(rel_tol > 0.0)) throw std::invalid_argument("em: rel_tol must be > 0");
    if (!(smoothing_eps >= 0.0)) throw std::invalid_argument("em: smoothing_eps must be >= 0");
}

namespace {

// Documents are processed in fixed-size blocks and block results merged in
// block order, so the numbers do not depend on how many threads ran.
constexpr std::size_t kDocBlock = 8;

struct SparseDoc {
    std::vector<std::uint32_t> words;
    std::vector<double> counts;
};

std::vector<SparseDoc> sparsify(const BowMatrix& bow) {
    std::vector<SparseDoc> docs(bow.counts.cols);
    for (std::size_t d = 0; d < bow.counts.cols; ++d) {
        for (std::size_t w = 0; w < bow.counts.rows; ++w) {
            double c = bow.counts(w, d);
            if (c < 0.0) throw std::invalid_argument("plsa: negative count");
            if (c > 0.0) {
                docs[d].words.push_back(static_cast<std::uint32_t>(w));
                docs[d].counts.push_back(c);
            }
        }
    }
    return docs;
}

void normalize_columns(Mat& m) {
    for (std::size_t c = 0; c < m.cols; ++c) {
        double sum = 0.0;
        for (std::size_t r = 0; r < m.rows; ++r) sum += m(r, c);
        for (std::size_t r = 0; r < m.rows; ++r) m(r, c) /= sum;
    }
}

void normalize_rows(Mat& m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < m.cols; ++c) sum += m(r, c);
        for (std::size_t c = 0; c < m.cols; ++c) m(r, c) /= sum;
    }
}

PlsaModel run_em(const BowMatrix& bow, Mat word_topic, Mat doc_topic, const EmConfig& cfg) {
    const std::size_t J = word_topic.rows;
    const std::size_t K = word_topic.cols;
    const std::size_t N = doc_topic.rows;
    const std::vector<SparseDoc> docs = sparsify(bow);

    bool any = false;
    for (const auto& d : docs) any = any || !d.words.empty();
    if (!any) throw std::invalid_argument("plsa: count matrix has no nonzero entry");

    PlsaModel model;
    model.word_topic = std::move(word_topic);
    model.doc_topic = std::move(doc_topic);

    const std::size_t blocks = (N + kDocBlock - 1) / kDocBlock;
    std::vector<Mat> block_word_acc(blocks);
    for (auto& m : block_word_acc) m = Mat(J, K);
    std::vector<double> block_ll(blocks);
    Mat doc_acc(N, K);
    Mat word_acc(J, K);

    const double eps = cfg.smoothing_eps;
    double prev_ll = 0.0;

    for (std::uint32_t iter = 0; iter < cfg.max_iters; ++iter) {
        // E-step plus log-likelihood of the current factors
        parallel_for(blocks, [&](std::size_t b) {
            Mat& wacc = block_word_acc[b];
            wacc.fill(0.0);
            double ll = 0.0;
            std::vector<double> q(K);
            std::size_t lo = b * kDocBlock;
            std::size_t hi = std::min(lo + kDocBlock, N);
            for (std::size_t n = lo; n < hi; ++n) {
                const SparseDoc& doc = docs[n];
                const double* theta = model.doc_topic.row(n);
                double* dacc = doc_acc.row(n);
                for (std::size_t k = 0; k < K; ++k) dacc[k] = 0.0;
                for (std::size_t i = 0; i < doc.words.size(); ++i) {
                    std::uint32_t w = doc.words[i];
                    double c = doc.counts[i];
                    const double* phi = model.word_topic.row(w);
                    double s = 0.0;
                    for (std::size_t k = 0; k < K; ++k) {
                        q[k] = phi[k] * theta[k];
                        s += q[k];
                    }
                    if (s > 0.0) {
                        ll += c * std::log(s);
                        double inv = c / s;
                        double* wrow = wacc.row(w);
                        for (std::size_t k = 0; k < K; ++k) {
                            double mass = q[k] * inv;
                            wrow[k] += mass;
                            dacc[k] += mass;
                        }
                    } else {
                        // cannot happen with positive init + smoothing; keep
                        // the update defined anyway
                        ll += c * std::log(std::numeric_limits<double>::min());
                        double share = c / static_cast<double>(K);
                        double* wrow = wacc.row(w);
                        for (std::size_t k = 0; k < K; ++k) {
                            wrow[k] += share;
                            dacc[k] += share;
                        }
                    }
                }
            }
            block_ll[b] = ll;
        });

        double ll = 0.0;
        for (std::size_t b = 0; b < blocks; ++b) ll += block_ll[b];
        model.log_likelihood_trace.push_back(ll);

        bool converged =
            iter > 0 && std::abs(ll - prev_ll) <= cfg.rel_tol * std::abs(prev_ll);
        prev_ll = ll;
        // Stop before the M-step so the reported factors are the ones the
        // last trace entry was computed from.
        if (converged || iter + 1 == cfg.max_iters) break;

        // M-step
        word_acc.fill(0.0);
        for (std::size_t b = 0; b < blocks; ++b) {
            const Mat& wacc = block_word_acc[b];
            for (std::size_t i = 0; i < word_acc.v.size(); ++i) word_acc.v[i] += wacc.v[i];
        }
        for (std::size_t k = 0; k < K; ++k) {
            double denom = 0.0;
            for (std::size_t j = 0; j < J; ++j) denom += eps + word_acc(j, k);
            for (std::size_t j = 0; j < J; ++j)
                model.word_topic(j, k) = (eps + word_acc(j, k)) / denom;
        }
        for (std::size_t n = 0; n < N; ++n) {
            double denom = 0.0;
            const double* dacc = doc_acc.row(n);
            for (std::size_t k = 0; k < K; ++k) denom += eps + dacc[k];
            double* theta = model.doc_topic.row(n);
            if (denom > 0.0) {
                for (std::size_t k = 0; k < K; ++k) theta[k] = (eps + dacc[k]) / denom;
            } else {
                // document with no counts
                for (std::size_t k = 0; k < K; ++k) theta[k] = 1.0 / static_cast<double>(K);
            }
        }
    }
    return model;
}

} // namespace

PlsaModel train_plsa(const BowMatrix& bow, std::uint32_t topics, const EmConfig& cfg) {
    cfg.validate();
    if (topics < 1) throw std::invalid_argument("plsa: need at least 1 topic");
    if (bow.counts.rows == 0 || bow.counts.cols == 0)
        throw std::invalid_argument("plsa: empty count matrix");

    const std::size_t J = bow.counts.rows;
    const std::size_t N = bow.counts.cols;
    Rng rng(cfg.rng_seed);

    Mat word_topic(J, topics);
    for (std::size_t k = 0; k < topics; ++k)
        for (std::size_t j = 0; j < J; ++j) word_topic(j, k) = 1e-6 + rng.uniform();
    normalize_columns(word_topic);

    Mat doc_topic(N, topics);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < topics; ++k) doc_topic(n, k) = 1e-6 + rng.uniform();
    normalize_rows(doc_topic);

    return run_em(bow, std::move(word_topic), std::move(doc_topic), cfg);
}

PlsaModel train_plsa_from_init(const BowMatrix& bow, Mat word_topic0, Mat doc_topic0,
                               const EmConfig& cfg) {
    cfg.validate();
    if (word_topic0.rows != bow.counts.rows || doc_topic0.rows != bow.counts.cols ||
        word_topic0.cols != doc_topic0.cols || word_topic0.cols == 0)
        throw std::invalid_argument("plsa: init factor shapes do not match the matrix");
    return run_em(bow, std::move(word_topic0), std::move(doc_topic0), cfg);
}

FoldInResult fold_in(const PlsaModel& model, const std::vector<double>& word_counts,
                     const EmConfig& cfg) {
    cfg.validate();
    const std::size_t J = model.word_count();
    const std::size_t K = model.topic_count();
    if (word_counts.size() != J) throw std::invalid_argument("fold_in: word count length mismatch");

    FoldInResult res;
    res.topic_dist.assign(K, 1.0 / static_cast<double>(K));

    std::vector<std::uint32_t> words;
    std::vector<double> counts;
    for (std::size_t j = 0; j < J; ++j) {
        if (word_counts[j] < 0.0) throw std::invalid_argument("fold_in: negative count");
        if (word_counts[j] > 0.0) {
            words.push_back(static_cast<std::uint32_t>(j));
            counts.push_back(word_counts[j]);
        }
    }
    if (words.empty()) {
        res.degenerate = true;
        return res;
    }

    const double eps = cfg.smoothing_eps;
    std::vector<double> acc(K);
    double prev_ll = 0.0;
    for (std::uint32_t iter = 0; iter < cfg.max_iters; ++iter) {
        std::fill(acc.begin(), acc.end(), 0.0);
        double ll = 0.0;
        for (std::size_t i = 0; i < words.size(); ++i) {
            const double* phi = model.word_topic.row(words[i]);
            double s = 0.0;
            for (std::size_t k = 0; k < K; ++k) s += phi[k] * res.topic_dist[k];
            if (s > 0.0) {
                ll += counts[i] * std::log(s);
                double inv = counts[i] / s;
                for (std::size_t k = 0; k < K; ++k) acc[k] += phi[k] * res.topic_dist[k] * inv;
            } else {
                ll += counts[i] * std::log(std::numeric_limits<double>::min());
                for (std::size_t k = 0; k < K; ++k) acc[k] += counts[i] / static_cast<double>(K);
            }
        }
        res.iters = iter + 1;
        bool converged = iter > 0 && std::abs(ll - prev_ll) <= cfg.rel_tol * std::abs(prev_ll);
        prev_ll = ll;
        if (converged) break;
        double denom = 0.0;
        for (std::size_t k = 0; k < K; ++k) denom += eps + acc[k];
        for (std::size_t k = 0; k < K; ++k) res.topic_dist[k] = (eps + acc[k]) / denom;
    }
    return res;
}

TopicPosterior topic_posterior(const PlsaModel& model, std::size_t doc_index) {
    if (doc_index >= model.doc_count())
        throw std::invalid_argument("topic_posterior: document index out of range");
    const std::size_t J = model.word_count();
    const std::size_t K = model.topic_count();

    TopicPosterior post;
    post.rows = Mat(J, K);
    const double* theta = model.doc_topic.row(doc_index);
    for (std::size_t j = 0; j < J; ++j) {
        const double* phi = model.word_topic.row(j);
        double* out = post.rows.row(j);
        double s = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            out[k] = phi[k] * theta[k];
            s += out[k];
        }
        if (s > 0.0) {
            for (std::size_t k = 0; k < K; ++k) out[k] /= s;
        } else {
            for (std::size_t k = 0; k < K; ++k) out[k] = 1.0 / static_cast<double>(K);
            ++post.uniform_rows;
        }
    }
    return post;
}

void save_plsa(const std::string& path, const PlsaModel& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    const std::size_t J = model.word_count();
    const std::size_t K = model.topic_count();
    const std::size_t N = model.doc_count();
    write_magic(os, "PFP1");
    write_u32(os, static_cast<std::uint32_t>(J));
    write_u32(os, static_cast<std::uint32_t>(K));
    write_u32(os, static_cast<std::uint32_t>(N));
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < J; ++j) write_f64(os, model.word_topic(j, k));
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < K; ++k) write_f64(os, model.doc_topic(n, k));
    if (!os) throw std::runtime_error("write failed: " + path);

    nlohmann::json side;
    side["log_likelihood_trace"] = model.log_likelihood_trace;
    std::ofstream js(path + ".trace.json");
    if (!js) throw std::runtime_error("cannot open for write: " + path + ".trace.json");
    js << side.dump(2) << '\n';
}

PlsaModel load_plsa(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    expect_magic(is, "PFP1", "topic model");
    std::uint32_t J = read_u32(is, path + ": word count");
    std::uint32_t K = read_u32(is, path + ": topic count");
    std::uint32_t N = read_u32(is, path + ": doc count");
    if (J == 0 || K == 0 || N == 0) throw std::runtime_error(path + ": degenerate dimensions");

    PlsaModel model;
    model.word_topic = Mat(J, K);
    model.doc_topic = Mat(N, K);
    for (std::uint32_t k = 0; k < K; ++k)
        for (std::uint32_t j = 0; j < J; ++j)
            model.word_topic(j, k) = read_f64(is, path + ": word factor");
    for (std::uint32_t n = 0; n < N; ++n)
        for (std::uint32_t k = 0; k < K; ++k)
            model.doc_topic(n, k) = read_f64(is, path + ": doc factor");

    std::ifstream js(path + ".trace.json");
    if (js) {
        nlohmann::json side = nlohmann::json::parse(js, nullptr, false);
        if (!side.is_discarded() && side.contains("log_likelihood_trace"))
            model.log_likelihood_trace = side["log_likelihood_trace"].get<std::vector<double>>();
    }
    return model;
}

} // namespace patchforge

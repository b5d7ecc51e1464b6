#include "patchforge/bow.hpp"

#include <cinttypes>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace patchforge {

BowMatrix build_bow(const std::vector<std::vector<std::uint32_t>>& codewords_per_doc,
                    std::uint32_t codeword_count, const std::vector<std::uint32_t>* doc_ids) {
    if (codeword_count == 0) throw std::invalid_argument("build_bow: codeword_count must be >= 1");
    const std::size_t n = codewords_per_doc.size();
    if (doc_ids && doc_ids->size() != n)
        throw std::invalid_argument("build_bow: doc_ids length mismatch");

    BowMatrix bow;
    bow.counts = Mat(codeword_count, n);
    bow.doc_ids.resize(n);
    for (std::size_t d = 0; d < n; ++d) {
        bow.doc_ids[d] = doc_ids ? (*doc_ids)[d] : static_cast<std::uint32_t>(d);
        for (std::uint32_t w : codewords_per_doc[d]) {
            if (w >= codeword_count)
                throw std::invalid_argument("build_bow: codeword index " + std::to_string(w) +
                                            " out of range in document " + std::to_string(d));
            bow.counts(w, d) += 1.0;
        }
    }
    return bow;
}

BowMatrix column_normalize(const BowMatrix& bow) {
    BowMatrix out = bow;
    for (std::size_t d = 0; d < out.counts.cols; ++d) {
        double sum = 0.0;
        for (std::size_t w = 0; w < out.counts.rows; ++w) sum += out.counts(w, d);
        if (sum > 0.0)
            for (std::size_t w = 0; w < out.counts.rows; ++w) out.counts(w, d) /= sum;
    }
    return out;
}

void export_sparse(const BowMatrix& bow, std::ostream& os) {
    std::size_t nnz = 0;
    for (double v : bow.counts.v)
        if (v != 0.0) ++nnz;
    os << bow.counts.rows << ' ' << bow.counts.cols << ' ' << nnz << '\n';
    char line[64];
    for (std::size_t w = 0; w < bow.counts.rows; ++w) {
        for (std::size_t d = 0; d < bow.counts.cols; ++d) {
            double v = bow.counts(w, d);
            if (v == 0.0) continue;
            std::snprintf(line, sizeof(line), "%zu %zu %.17g\n", w, d, v);
            os << line;
        }
    }
}

} // namespace patchforge

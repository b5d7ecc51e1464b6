#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "patchforge/matrix.hpp"

namespace patchforge {

// Codeword-by-document count matrix. Rows are codewords (possibly including
// ids no tree ever produced, which stay all-zero), columns are documents.
struct BowMatrix {
    Mat counts; // J x N
    std::vector<std::uint32_t> doc_ids;

    std::uint32_t codeword_count() const { return static_cast<std::uint32_t>(counts.rows); }
    std::size_t doc_count() const { return counts.cols; }
};

// Tally codeword assignments per document. codewords_per_doc[d] holds every
// assignment of document d (all patches, all trees, order irrelevant).
// Throws if an index reaches codeword_count.
BowMatrix build_bow(const std::vector<std::vector<std::uint32_t>>& codewords_per_doc,
                    std::uint32_t codeword_count,
                    const std::vector<std::uint32_t>* doc_ids = nullptr);

// Scale every nonzero column to sum 1; all-zero columns stay zero.
BowMatrix column_normalize(const BowMatrix& bow);

// Sparse text form: header "J N nnz", then one "w d value" line per nonzero
// in row-major order, indices 0-based.
void export_sparse(const BowMatrix& bow, std::ostream& os);

} // namespace patchforge

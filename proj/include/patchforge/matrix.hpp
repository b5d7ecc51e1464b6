#pragma once

#include <cstddef>
#include <vector>

namespace patchforge {

// Dense row-major matrix of doubles. Just enough for the factor models and
// histograms used here; no algebra beyond element access.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }

    double* row(std::size_t r) { return v.data() + r * cols; }
    const double* row(std::size_t r) const { return v.data() + r * cols; }

    void fill(double x) { v.assign(rows * cols, x); }
    bool empty() const { return rows == 0 || cols == 0; }
};

} // namespace patchforge

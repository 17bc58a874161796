#include "gvalign/matrix.hpp"

#include <cmath>

#include "gvalign/errors.hpp"

namespace gvalign {

std::string shape_message(const std::string& what, std::size_t expected, std::size_t actual) {
    return what + ": expected " + std::to_string(expected) + ", got " + std::to_string(actual);
}

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols()) throw ShapeError(shape_message("row length", m.cols(), rows[r].size()));
        for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = rows[r][c];
    }
    return m;
}

void Matrix::fill(double v) {
    for (double& x : data_) x = v;
}

bool Matrix::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= rows_) throw ShapeError(shape_message("row index bound", rows_, indices[k]));
        const auto src = row(indices[k]);
        auto dst = out.row(k);
        for (std::size_t c = 0; c < cols_; ++c) dst[c] = src[c];
    }
    return out;
}

double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (double x : m.values()) acc += x * x;
    return std::sqrt(acc);
}

}  // namespace gvalign

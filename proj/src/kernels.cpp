#include "gvalign/kernels.hpp"

#include <atomic>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "gvalign/errors.hpp"
#include "gvalign/random.hpp"

namespace gvalign::kernels {

namespace {

std::atomic<Mode> g_mode{Mode::automatic};

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

bool use_parallel(std::size_t rows, std::size_t work) {
    switch (g_mode.load(std::memory_order_relaxed)) {
        case Mode::serial: return false;
        case Mode::parallel: return true;
        case Mode::automatic: break;
    }
    return openmp_enabled() && rows > 1 && work >= kParallelWork;
}

void check_affine(const Matrix& a, const Matrix& w, std::span<const double> bias) {
    if (a.cols() != w.cols()) throw ShapeError(shape_message("affine input columns", w.cols(), a.cols()));
    if (!bias.empty() && bias.size() != w.rows())
        throw ShapeError(shape_message("affine bias length", w.rows(), bias.size()));
}

inline void affine_row(const Matrix& a, const Matrix& w, std::span<const double> bias, Matrix& out,
                       std::size_t b) {
    const auto x = a.row(b);
    auto y = out.row(b);
    for (std::size_t o = 0; o < w.rows(); ++o) {
        const auto wr = w.row(o);
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * wr[i];
        y[o] = bias.empty() ? acc : acc + bias[o];
    }
}

inline void nn_row(const Matrix& g, const Matrix& w, Matrix& out, std::size_t b) {
    auto y = out.row(b);
    for (double& v : y) v = 0.0;
    const auto gr = g.row(b);
    for (std::size_t o = 0; o < w.rows(); ++o) {
        const double go = gr[o];
        if (go == 0.0) continue;
        const auto wr = w.row(o);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += go * wr[i];
    }
}

inline void tn_row(const Matrix& g, const Matrix& a, Matrix& out, std::size_t o) {
    auto y = out.row(o);
    for (double& v : y) v = 0.0;
    for (std::size_t b = 0; b < g.rows(); ++b) {
        const double gb = g(b, o);
        if (gb == 0.0) continue;
        const auto ar = a.row(b);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += gb * ar[i];
    }
}

inline double column_sum(const Matrix& g, std::size_t c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < g.rows(); ++r) acc += g(r, c);
    return acc;
}

inline std::size_t argmax_row(const Matrix& m, std::size_t r) {
    const auto x = m.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < x.size(); ++j)
        if (x[j] > x[best]) best = j;
    return best;
}

inline void gaussian_block(const Matrix& means, const Matrix& chol, std::size_t n,
                           std::span<const std::uint64_t> seeds, bool zero_covariance, Matrix& out,
                           std::size_t c) {
    const std::size_t d = means.cols();
    const auto mu = means.row(c);
    if (zero_covariance) {
        for (std::size_t s = 0; s < n; ++s) {
            auto y = out.row(c * n + s);
            for (std::size_t i = 0; i < d; ++i) y[i] = mu[i];
        }
        return;
    }
    Rng rng(seeds[c]);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> z(d);
    for (std::size_t s = 0; s < n; ++s) {
        for (double& v : z) v = normal(rng);
        auto y = out.row(c * n + s);
        for (std::size_t i = 0; i < d; ++i) {
            double acc = mu[i];
            for (std::size_t j = 0; j <= i; ++j) acc += chol(i, j) * z[j];
            y[i] = acc;
        }
    }
}

void check_gaussian(const Matrix& means, const Matrix& chol, std::span<const std::uint64_t> seeds) {
    if (seeds.size() != means.rows()) throw ShapeError(shape_message("gaussian seeds", means.rows(), seeds.size()));
    if (chol.rows() != means.cols() || chol.cols() != means.cols())
        throw ShapeError(shape_message("gaussian factor dimension", means.cols(), chol.rows()));
}

}  // namespace

void set_mode(Mode m) { g_mode.store(m, std::memory_order_relaxed); }
Mode mode() { return g_mode.load(std::memory_order_relaxed); }

bool openmp_enabled() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace serial {

void affine_nt(const Matrix& a, const Matrix& w, std::span<const double> bias, Matrix& out) {
    check_affine(a, w, bias);
    out = Matrix(a.rows(), w.rows());
    for (std::size_t b = 0; b < a.rows(); ++b) affine_row(a, w, bias, out, b);
}

void matmul_nn(const Matrix& g, const Matrix& w, Matrix& out) {
    if (g.cols() != w.rows()) throw ShapeError(shape_message("matmul_nn inner dimension", w.rows(), g.cols()));
    out = Matrix(g.rows(), w.cols());
    for (std::size_t b = 0; b < g.rows(); ++b) nn_row(g, w, out, b);
}

void matmul_tn(const Matrix& g, const Matrix& a, Matrix& out) {
    if (g.rows() != a.rows()) throw ShapeError(shape_message("matmul_tn batch rows", g.rows(), a.rows()));
    out = Matrix(g.cols(), a.cols());
    for (std::size_t o = 0; o < g.cols(); ++o) tn_row(g, a, out, o);
}

void column_sums(const Matrix& g, std::vector<double>& out) {
    out.assign(g.cols(), 0.0);
    for (std::size_t c = 0; c < g.cols(); ++c) out[c] = column_sum(g, c);
}

void row_argmax(const Matrix& m, std::vector<std::size_t>& out) {
    out.assign(m.rows(), 0);
    if (m.cols() == 0) return;
    for (std::size_t r = 0; r < m.rows(); ++r) out[r] = argmax_row(m, r);
}

void gaussian_blocks(const Matrix& means, const Matrix& chol, std::size_t n,
                     std::span<const std::uint64_t> seeds, bool zero_covariance, Matrix& out) {
    check_gaussian(means, chol, seeds);
    out = Matrix(means.rows() * n, means.cols());
    for (std::size_t c = 0; c < means.rows(); ++c) gaussian_block(means, chol, n, seeds, zero_covariance, out, c);
}

}  // namespace serial

namespace omp {

void affine_nt(const Matrix& a, const Matrix& w, std::span<const double> bias, Matrix& out) {
    check_affine(a, w, bias);
    out = Matrix(a.rows(), w.rows());
    const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < rows; ++b) affine_row(a, w, bias, out, static_cast<std::size_t>(b));
}

void matmul_nn(const Matrix& g, const Matrix& w, Matrix& out) {
    if (g.cols() != w.rows()) throw ShapeError(shape_message("matmul_nn inner dimension", w.rows(), g.cols()));
    out = Matrix(g.rows(), w.cols());
    const auto rows = static_cast<std::ptrdiff_t>(g.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < rows; ++b) nn_row(g, w, out, static_cast<std::size_t>(b));
}

void matmul_tn(const Matrix& g, const Matrix& a, Matrix& out) {
    if (g.rows() != a.rows()) throw ShapeError(shape_message("matmul_tn batch rows", g.rows(), a.rows()));
    out = Matrix(g.cols(), a.cols());
    const auto rows = static_cast<std::ptrdiff_t>(g.cols());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t o = 0; o < rows; ++o) tn_row(g, a, out, static_cast<std::size_t>(o));
}

void column_sums(const Matrix& g, std::vector<double>& out) {
    out.assign(g.cols(), 0.0);
    const auto cols = static_cast<std::ptrdiff_t>(g.cols());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < cols; ++c)
        out[static_cast<std::size_t>(c)] = column_sum(g, static_cast<std::size_t>(c));
}

void row_argmax(const Matrix& m, std::vector<std::size_t>& out) {
    out.assign(m.rows(), 0);
    if (m.cols() == 0) return;
    const auto rows = static_cast<std::ptrdiff_t>(m.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r)
        out[static_cast<std::size_t>(r)] = argmax_row(m, static_cast<std::size_t>(r));
}

void gaussian_blocks(const Matrix& means, const Matrix& chol, std::size_t n,
                     std::span<const std::uint64_t> seeds, bool zero_covariance, Matrix& out) {
    check_gaussian(means, chol, seeds);
    out = Matrix(means.rows() * n, means.cols());
    const auto blocks = static_cast<std::ptrdiff_t>(means.rows());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t c = 0; c < blocks; ++c)
        gaussian_block(means, chol, n, seeds, zero_covariance, out, static_cast<std::size_t>(c));
}

}  // namespace omp

void affine_nt(const Matrix& a, const Matrix& w, std::span<const double> bias, Matrix& out) {
    if (use_parallel(a.rows(), a.rows() * w.rows() * w.cols())) omp::affine_nt(a, w, bias, out);
    else serial::affine_nt(a, w, bias, out);
}

void matmul_nn(const Matrix& g, const Matrix& w, Matrix& out) {
    if (use_parallel(g.rows(), g.rows() * w.rows() * w.cols())) omp::matmul_nn(g, w, out);
    else serial::matmul_nn(g, w, out);
}

void matmul_tn(const Matrix& g, const Matrix& a, Matrix& out) {
    if (use_parallel(g.cols(), g.rows() * g.cols() * a.cols())) omp::matmul_tn(g, a, out);
    else serial::matmul_tn(g, a, out);
}

void column_sums(const Matrix& g, std::vector<double>& out) {
    if (use_parallel(g.cols(), g.size())) omp::column_sums(g, out);
    else serial::column_sums(g, out);
}

void row_argmax(const Matrix& m, std::vector<std::size_t>& out) {
    if (use_parallel(m.rows(), m.size())) omp::row_argmax(m, out);
    else serial::row_argmax(m, out);
}

void gaussian_blocks(const Matrix& means, const Matrix& chol, std::size_t n,
                     std::span<const std::uint64_t> seeds, bool zero_covariance, Matrix& out) {
    const std::size_t d = means.cols();
    if (use_parallel(means.rows(), means.rows() * n * d * (d + 8))) omp::gaussian_blocks(means, chol, n, seeds, zero_covariance, out);
    else serial::gaussian_blocks(means, chol, n, seeds, zero_covariance, out);
}

}  // namespace gvalign::kernels

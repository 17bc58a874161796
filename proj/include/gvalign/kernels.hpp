#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "gvalign/matrix.hpp"

// Dense kernels behind the network, evaluation and pseudo-sampling code.
//
// Every kernel has a serial reference in `kernels::serial` and an OpenMP
// version in `kernels::omp`. The OpenMP versions split work over output rows
// only and keep the reduction order of the serial loop inside each row, so
// both produce bitwise-identical results for any thread count. The tests rely
// on that; so does run-to-run determinism of the experiment driver.
//
// The unqualified functions in `kernels` dispatch according to `mode()`.

namespace gvalign::kernels {

enum class Mode { automatic, serial, parallel };

void set_mode(Mode m);
Mode mode();
bool openmp_enabled();
int max_threads();

namespace serial {

/// out[b, o] = sum_i a[b, i] * w[o, i] + bias[o]   (bias may be empty)
void affine_nt(const Matrix& a, const Matrix& w, std::span<const double> bias, Matrix& out);
/// out[b, i] = sum_o g[b, o] * w[o, i]
void matmul_nn(const Matrix& g, const Matrix& w, Matrix& out);
/// out[o, i] = sum_b g[b, o] * a[b, i]
void matmul_tn(const Matrix& g, const Matrix& a, Matrix& out);
void column_sums(const Matrix& g, std::vector<double>& out);
void row_argmax(const Matrix& m, std::vector<std::size_t>& out);
/// Block c of `out` (rows c*n .. c*n+n-1) is means.row(c) + chol * z, z ~ N(0, I),
/// drawn from an rng seeded with seeds[c]. With `zero_covariance` the rows are the
/// means exactly and the rng is not consulted.
void gaussian_blocks(const Matrix& means, const Matrix& chol, std::size_t n,
                     std::span<const std::uint64_t> seeds, bool zero_covariance, Matrix& out);

}  // namespace serial

namespace omp {

void affine_nt(const Matrix& a, const Matrix& w, std::span<const double> bias, Matrix& out);
void matmul_nn(const Matrix& g, const Matrix& w, Matrix& out);
void matmul_tn(const Matrix& g, const Matrix& a, Matrix& out);
void column_sums(const Matrix& g, std::vector<double>& out);
void row_argmax(const Matrix& m, std::vector<std::size_t>& out);
void gaussian_blocks(const Matrix& means, const Matrix& chol, std::size_t n,
                     std::span<const std::uint64_t> seeds, bool zero_covariance, Matrix& out);

}  // namespace omp

void affine_nt(const Matrix& a, const Matrix& w, std::span<const double> bias, Matrix& out);
void matmul_nn(const Matrix& g, const Matrix& w, Matrix& out);
void matmul_tn(const Matrix& g, const Matrix& a, Matrix& out);
void column_sums(const Matrix& g, std::vector<double>& out);
void row_argmax(const Matrix& m, std::vector<std::size_t>& out);
void gaussian_blocks(const Matrix& means, const Matrix& chol, std::size_t n,
                     std::span<const std::uint64_t> seeds, bool zero_covariance, Matrix& out);

}  // namespace gvalign::kernels

#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "doctest.h"
#include "gvalign/errors.hpp"
#include "gvalign/kernels.hpp"

using namespace gvalign;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Matrix m(r, c);
    for (double& v : m.values()) v = u(rng);
    return m;
}

struct ThreadGuard {
    ThreadGuard() {
#ifdef _OPENMP
        saved = omp_get_max_threads();
        omp_set_num_threads(4);
#endif
    }
    ~ThreadGuard() {
#ifdef _OPENMP
        omp_set_num_threads(saved);
#endif
    }
    int saved = 1;
};

}  // namespace

TEST_CASE("affine_nt matches a naive triple loop") {
    std::mt19937_64 rng(3);
    const Matrix a = random_matrix(7, 5, rng);
    const Matrix w = random_matrix(4, 5, rng);
    const std::vector<double> bias{0.5, -1.0, 2.0, 0.0};
    Matrix out;
    kernels::serial::affine_nt(a, w, bias, out);
    for (std::size_t b = 0; b < 7; ++b)
        for (std::size_t o = 0; o < 4; ++o) {
            double s = bias[o];
            for (std::size_t i = 0; i < 5; ++i) s += a(b, i) * w(o, i);
            CHECK(out(b, o) == doctest::Approx(s).epsilon(1e-13));
        }
}

TEST_CASE("matmul_tn and matmul_nn match naive loops") {
    std::mt19937_64 rng(5);
    const Matrix g = random_matrix(6, 3, rng);
    const Matrix a = random_matrix(6, 4, rng);
    const Matrix w = random_matrix(3, 4, rng);
    Matrix tn, nn;
    kernels::serial::matmul_tn(g, a, tn);
    kernels::serial::matmul_nn(g, w, nn);
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t b = 0; b < 6; ++b) s += g(b, o) * a(b, i);
            CHECK(tn(o, i) == doctest::Approx(s).epsilon(1e-13));
        }
    for (std::size_t b = 0; b < 6; ++b)
        for (std::size_t i = 0; i < 4; ++i) {
            double s = 0.0;
            for (std::size_t o = 0; o < 3; ++o) s += g(b, o) * w(o, i);
            CHECK(nn(b, i) == doctest::Approx(s).epsilon(1e-13));
        }
}

TEST_CASE("OpenMP kernels are bitwise identical to the serial reference") {
    ThreadGuard threads;
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t b = 1 + rng() % 70, in = 1 + rng() % 40, out = 1 + rng() % 30;
        const Matrix a = random_matrix(b, in, rng);
        const Matrix w = random_matrix(out, in, rng);
        const Matrix g = random_matrix(b, out, rng);
        std::vector<double> bias(out);
        for (double& v : bias) v = static_cast<double>(rng() % 100) / 7.0;

        Matrix s1, p1, s2, p2, s3, p3;
        kernels::serial::affine_nt(a, w, bias, s1);
        kernels::omp::affine_nt(a, w, bias, p1);
        CHECK(s1 == p1);
        kernels::serial::matmul_nn(g, w, s2);
        kernels::omp::matmul_nn(g, w, p2);
        CHECK(s2 == p2);
        kernels::serial::matmul_tn(g, a, s3);
        kernels::omp::matmul_tn(g, a, p3);
        CHECK(s3 == p3);

        std::vector<double> cs, cp;
        kernels::serial::column_sums(g, cs);
        kernels::omp::column_sums(g, cp);
        CHECK(cs == cp);
        std::vector<std::size_t> as, ap;
        kernels::serial::row_argmax(g, as);
        kernels::omp::row_argmax(g, ap);
        CHECK(as == ap);
    }
}

TEST_CASE("gaussian_blocks: parallel equals serial, zero covariance returns means") {
    ThreadGuard threads;
    std::mt19937_64 rng(2);
    const Matrix means = random_matrix(9, 3, rng);
    Matrix chol(3, 3);
    chol(0, 0) = 1.0;
    chol(1, 0) = 0.3;
    chol(1, 1) = 2.0;
    chol(2, 1) = -0.5;
    chol(2, 2) = 0.7;
    std::vector<std::uint64_t> seeds(9);
    for (auto& s : seeds) s = rng();
    Matrix s_out, p_out;
    kernels::serial::gaussian_blocks(means, chol, 17, seeds, false, s_out);
    kernels::omp::gaussian_blocks(means, chol, 17, seeds, false, p_out);
    CHECK(s_out == p_out);
    CHECK(s_out.rows() == 9 * 17);

    kernels::serial::gaussian_blocks(means, chol, 4, seeds, true, s_out);
    for (std::size_t c = 0; c < 9; ++c)
        for (std::size_t s = 0; s < 4; ++s)
            for (std::size_t i = 0; i < 3; ++i) CHECK(s_out(c * 4 + s, i) == means(c, i));
}

TEST_CASE("dispatch honours the forced mode") {
    std::mt19937_64 rng(8);
    const Matrix a = random_matrix(200, 64, rng);
    const Matrix w = random_matrix(64, 64, rng);
    Matrix auto_out, ser, par;
    kernels::affine_nt(a, w, {}, auto_out);
    kernels::set_mode(kernels::Mode::serial);
    kernels::affine_nt(a, w, {}, ser);
    kernels::set_mode(kernels::Mode::parallel);
    kernels::affine_nt(a, w, {}, par);
    kernels::set_mode(kernels::Mode::automatic);
    CHECK(auto_out == ser);
    CHECK(ser == par);
}

TEST_CASE("shape errors name the dimensions") {
    Matrix a(2, 3), w(4, 5), out;
    CHECK_THROWS_AS(kernels::affine_nt(a, w, {}, out), ShapeError);
    try {
        kernels::affine_nt(a, w, {}, out);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("expected 5, got 3") != std::string::npos);
    }
}

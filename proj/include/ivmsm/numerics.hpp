#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ivmsm/errors.hpp"

namespace ivmsm {

// Dense row-major matrix. Problem dimensions in this library are tiny (<= ~10),
// so there is no attempt at general-purpose linear algebra here.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;  // row-major, rows*cols entries

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

Matrix matmul(const Matrix& A, const Matrix& B);
std::vector<double> matvec(const Matrix& A, const std::vector<double>& x);
Matrix transpose(const Matrix& A);

// Standard normal distribution. normal_cdf is accurate to <= 1e-12 absolute
// (rational erfc approximation, validated against std::erfc); it saturates
// strictly inside (0,1) for extreme arguments. normal_cdf_pdf computes both
// values sharing a single exp(-x^2/2), which is what makes the pooled
// likelihood loops affordable on one core.
double normal_cdf(double x);
double normal_pdf(double x);
void normal_cdf_pdf(double x, double& cdf, double& pdf);
double normal_quantile(double p);

// Gaussian elimination with partial pivoting; a pivot below 1e-12 relative to
// the matrix scale raises SingularMatrix.
std::vector<double> solve_linear(const Matrix& A, std::vector<double> b);
Matrix inverse(const Matrix& A);
// 1-norm condition estimate; +inf when the inverse does not exist.
double cond_1norm(const Matrix& A);

struct Eig2 {
    double lambda1 = 0.0;  // |lambda1| >= |lambda2|
    double lambda2 = 0.0;
};

// Real eigenvalues of a 2x2 matrix: tr/2 +- sqrt(tr^2/4 - det). A discriminant
// below -1e-12 raises ComplexSpectrum.
Eig2 eig2x2(const Matrix& M);

struct NewtonConfig {
    double tolerance = 1e-8;  // gradient sup-norm
    int max_iterations = 100;
    int step_halvings = 30;
};

// Damped Newton ascent for log-likelihoods: full step solved from the
// information matrix, halved until the objective does not decrease.
std::vector<double> newton_maximize(
    const std::function<double(const std::vector<double>&)>& loglik,
    const std::function<std::vector<double>(const std::vector<double>&)>& score,
    const std::function<Matrix(const std::vector<double>&)>& information,
    std::vector<double> init, const NewtonConfig& cfg = {});

}  // namespace ivmsm

#include "ivmsm/numerics.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

namespace ivmsm {

Matrix matmul(const Matrix& A, const Matrix& B) {
    Matrix C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = A(i, k);
            for (std::size_t j = 0; j < B.cols; ++j) C(i, j) += aik * B(k, j);
        }
    return C;
}

std::vector<double> matvec(const Matrix& A, const std::vector<double>& x) {
    std::vector<double> y(A.rows, 0.0);
    for (std::size_t i = 0; i < A.rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < A.cols; ++j) s += A(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

Matrix transpose(const Matrix& A) {
    Matrix T(A.cols, A.rows);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t j = 0; j < A.cols; ++j) T(j, i) = A(i, j);
    return T;
}

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;
constexpr double kInvSqrtPi = 0.5641895835477562869480795;
constexpr double kSqrt2 = 1.4142135623730950488016887;

// Rational erfc on t = |x|/sqrt(2), reusing e2 = exp(-x^2/2) = exp(-t^2).
// Coefficients are the classic Chebyshev-economized rationals for erf/erfc
// (three regions, double-precision relative error ~1e-16).
double erfc_from_e2(double t, double e2) {
    if (t <= 0.46875) {
        static const double a[5] = {3.16112374387056560e0, 1.13864154151050156e2,
                                    3.77485237685302021e2, 3.20937758913846947e3,
                                    1.85777706184603153e-1};
        static const double b[4] = {2.36012909523441209e1, 2.44024637934444173e2,
                                    1.28261652607737228e3, 2.84423683343917062e3};
        const double z = t * t;
        double xnum = a[4] * z;
        double xden = z;
        for (int i = 0; i < 3; ++i) {
            xnum = (xnum + a[i]) * z;
            xden = (xden + b[i]) * z;
        }
        return 1.0 - t * (xnum + a[3]) / (xden + b[3]);
    }
    if (t <= 4.0) {
        static const double c[9] = {5.64188496988670089e-1, 8.88314979438837594e0,
                                    6.61191906371416295e1,  2.98635138197400131e2,
                                    8.81952221241769090e2,  1.71204761263407058e3,
                                    2.05107837782607147e3,  1.23033935479799725e3,
                                    2.15311535474403846e-8};
        static const double d[8] = {1.57449261107098347e1, 1.17693950891312499e2,
                                    5.37181101862009858e2, 1.62138957456669019e3,
                                    3.29079923573345963e3, 4.36261909014324716e3,
                                    3.43936767414372164e3, 1.23033935480374942e3};
        double xnum = c[8] * t;
        double xden = t;
        for (int i = 0; i < 7; ++i) {
            xnum = (xnum + c[i]) * t;
            xden = (xden + d[i]) * t;
        }
        return e2 * (xnum + c[7]) / (xden + d[7]);
    }
    static const double p[6] = {3.05326634961232344e-1, 3.60344899949804439e-1,
                                1.25781726111229246e-1, 1.60837851487422766e-2,
                                6.58749161529837803e-4, 1.63153871373020978e-2};
    static const double q[5] = {2.56852019228982242e0,  1.87295284992346047e0,
                                5.27905102951428412e-1, 6.05183413124413191e-2,
                                2.33520497626869185e-3};
    if (t > 38.5) return 0.0;  // erfc underflows; caller saturates
    const double z = 1.0 / (t * t);
    double xnum = p[5] * z;
    double xden = z;
    for (int i = 0; i < 4; ++i) {
        xnum = (xnum + p[i]) * z;
        xden = (xden + q[i]) * z;
    }
    double r = z * (xnum + p[4]) / (xden + q[4]);
    return e2 * (kInvSqrtPi - r) / t;
}

double saturate01(double v) {
    if (v <= 0.0) return std::numeric_limits<double>::denorm_min();
    if (v >= 1.0) return 0x1.fffffffffffffp-1;  // largest double below 1
    return v;
}

}  // namespace

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

void normal_cdf_pdf(double x, double& cdf, double& pdf) {
    const double t = std::abs(x) / kSqrt2;
    const double e2 = std::exp(-0.5 * x * x);
    pdf = kInvSqrt2Pi * e2;
    const double ec = erfc_from_e2(t, e2);
    cdf = saturate01(x >= 0.0 ? 1.0 - 0.5 * ec : 0.5 * ec);
}

double normal_cdf(double x) {
    double c, p;
    normal_cdf_pdf(x, c, p);
    return c;
}

// Wichura's PPND16 rational approximation for the normal quantile.
double normal_quantile(double p) {
    const double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        const double num =
            q * (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                      6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                    1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                  1.3314166789178437745e2) * r + 3.3871328727963666080e0);
        const double den =
            (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                  3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
              4.2313330701600911252e1) * r + 1.0);
        return num / den;
    }
    double r = q < 0.0 ? p : 1.0 - p;
    if (r <= 0.0) return q < 0.0 ? -38.5 : 38.5;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        const double num =
            (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                  2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
              4.63033784615654529590e0) * r + 1.42343711074968357734e0);
        const double den =
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                  1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
              2.05319162663775882187e0) * r + 1.0);
        val = num / den;
    } else {
        r -= 5.0;
        const double num =
            (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
              5.46378491116411436990e0) * r + 6.65790464350110377720e0);
        const double den =
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                  1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
              5.99832206555887937690e-1) * r + 1.0);
        val = num / den;
    }
    return q < 0.0 ? -val : val;
}

std::vector<double> solve_linear(const Matrix& A, std::vector<double> b) {
    if (A.rows != A.cols || A.rows != b.size())
        throw InvalidParams("solve_linear: dimension mismatch");
    const std::size_t n = A.rows;
    Matrix M = A;
    double scale = 0.0;
    for (double v : M.a) scale = std::max(scale, std::abs(v));
    const double thresh = 1e-12 * std::max(1.0, scale);
    std::vector<std::size_t> piv(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t imax = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(M(i, k)) > std::abs(M(imax, k))) imax = i;
        if (std::abs(M(imax, k)) < thresh)
            throw SingularMatrix("solve_linear: pivot below threshold");
        if (imax != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(M(k, j), M(imax, j));
            std::swap(b[k], b[imax]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = M(i, k) / M(k, k);
            if (f == 0.0) continue;
            for (std::size_t j = k; j < n; ++j) M(i, j) -= f * M(k, j);
            b[i] -= f * b[k];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t j = i + 1; j < n; ++j) s -= M(i, j) * x[j];
        x[i] = s / M(i, i);
    }
    return x;
}

Matrix inverse(const Matrix& A) {
    const std::size_t n = A.rows;
    Matrix inv(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> e(n, 0.0);
        e[j] = 1.0;
        std::vector<double> col = solve_linear(A, e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
    }
    return inv;
}

double cond_1norm(const Matrix& A) {
    auto norm1 = [](const Matrix& M) {
        double best = 0.0;
        for (std::size_t j = 0; j < M.cols; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < M.rows; ++i) s += std::abs(M(i, j));
            best = std::max(best, s);
        }
        return best;
    };
    try {
        return norm1(A) * norm1(inverse(A));
    } catch (const SingularMatrix&) {
        return std::numeric_limits<double>::infinity();
    }
}

Eig2 eig2x2(const Matrix& M) {
    if (M.rows != 2 || M.cols != 2) throw InvalidParams("eig2x2: matrix not 2x2");
    const double tr = M(0, 0) + M(1, 1);
    const double det = M(0, 0) * M(1, 1) - M(0, 1) * M(1, 0);
    double disc = 0.25 * tr * tr - det;
    const double tol = 1e-12 * std::max(1.0, 0.25 * tr * tr + std::abs(det));
    if (disc < -tol) throw ComplexSpectrum("eig2x2: complex eigenvalues");
    if (disc < 0.0) disc = 0.0;
    const double root = std::sqrt(disc);
    double l1 = 0.5 * tr + root;
    double l2 = 0.5 * tr - root;
    if (std::abs(l2) > std::abs(l1)) std::swap(l1, l2);
    return {l1, l2};
}

std::vector<double> newton_maximize(
    const std::function<double(const std::vector<double>&)>& loglik,
    const std::function<std::vector<double>(const std::vector<double>&)>& score,
    const std::function<Matrix(const std::vector<double>&)>& information,
    std::vector<double> theta, const NewtonConfig& cfg) {
    double ll = loglik(theta);
    if (!std::isfinite(ll)) throw InvalidParams("newton_maximize: init outside domain");
    for (int it = 0; it < cfg.max_iterations; ++it) {
        const std::vector<double> s = score(theta);
        double snorm = 0.0;
        for (double v : s) snorm = std::max(snorm, std::abs(v));
        if (snorm <= cfg.tolerance) return theta;
        std::vector<double> step;
        try {
            step = solve_linear(information(theta), s);
        } catch (const SingularMatrix& e) {
            throw SingularInformation(e.what());
        }
        double lambda = 1.0;
        bool moved = false;
        for (int h = 0; h <= cfg.step_halvings; ++h, lambda *= 0.5) {
            std::vector<double> cand = theta;
            for (std::size_t j = 0; j < cand.size(); ++j) cand[j] += lambda * step[j];
            const double llc = loglik(cand);
            if (std::isfinite(llc) && llc >= ll) {
                theta = std::move(cand);
                ll = llc;
                moved = true;
                break;
            }
        }
        if (!moved) throw NoConvergence("newton_maximize: step halving exhausted");
    }
    throw NoConvergence("newton_maximize: max iterations reached");
}

}  // namespace ivmsm

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "deepesn/errors.hpp"
#include "deepesn/matrix.hpp"

namespace deepesn {

struct IterationControl {
    double tol = 1e-10;           // relative
    std::size_t max_iter = 10000; // exhaustion throws ConvergenceError
};

namespace detail {

constexpr double eps = std::numeric_limits<double>::epsilon();

inline void require_tol(double tol) {
    if (!(tol > 0.0)) throw InputError("tolerance must be positive");
}

// Householder reduction to upper Hessenberg form; orthogonal similarity, so
// the spectrum is preserved.
inline Matrix hessenberg(Matrix a) {
    const std::size_t n = a.rows();
    std::vector<double> v(n);
    for (std::size_t k = 0; k + 2 < n; ++k) {
        double alpha = 0.0;
        for (std::size_t i = k + 1; i < n; ++i) alpha += a(i, k) * a(i, k);
        alpha = std::sqrt(alpha);
        if (alpha == 0.0) continue;
        if (a(k + 1, k) > 0) alpha = -alpha;
        std::fill(v.begin(), v.end(), 0.0);
        v[k + 1] = a(k + 1, k) - alpha;
        for (std::size_t i = k + 2; i < n; ++i) v[i] = a(i, k);
        double vnorm2 = 0.0;
        for (std::size_t i = k + 1; i < n; ++i) vnorm2 += v[i] * v[i];
        if (vnorm2 == 0.0) continue;
        // A <- (I - 2vv'/v'v) A (I - 2vv'/v'v)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = k + 1; i < n; ++i) s += v[i] * a(i, j);
            s *= 2.0 / vnorm2;
            for (std::size_t i = k + 1; i < n; ++i) a(i, j) -= s * v[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) s += a(i, j) * v[j];
            s *= 2.0 / vnorm2;
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= s * v[j];
        }
        for (std::size_t i = k + 2; i < n; ++i) a(i, k) = 0.0;
    }
    return a;
}

// All eigenvalues of a real square matrix: Hessenberg reduction followed by
// single-shift complex QR sweeps with Wilkinson shifts and deflation.
// max_sweeps bounds the total number of QR sweeps.
inline std::vector<std::complex<double>> eigenvalues(const Matrix& m, std::size_t max_sweeps) {
    using cd = std::complex<double>;
    const std::size_t n = m.rows();
    std::vector<cd> eig(n);
    if (n == 0) return eig;

    const Matrix hr = hessenberg(m);
    std::vector<cd> h(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) h[i * n + j] = hr(i, j);
    auto at = [&](std::size_t i, std::size_t j) -> cd& { return h[i * n + j]; };

    double anorm = 0.0;
    for (double v : hr.entries()) anorm = std::max(anorm, std::abs(v));

    std::vector<cd> cs(n), sn(n);
    std::size_t hi = n - 1;
    std::size_t sweeps = 0;
    std::size_t since_deflation = 0;
    while (true) {
        // Deflate negligible subdiagonals.
        std::size_t lo = hi;
        while (lo > 0) {
            double s = std::abs(at(lo - 1, lo - 1)) + std::abs(at(lo, lo));
            if (s == 0.0) s = anorm;
            if (std::abs(at(lo, lo - 1)) <= eps * s) {
                at(lo, lo - 1) = 0.0;
                break;
            }
            --lo;
        }
        if (lo == hi) {
            eig[hi] = at(hi, hi);
            if (hi == 0) break;
            --hi;
            since_deflation = 0;
            continue;
        }
        if (++sweeps > max_sweeps) {
            double best = 0.0;
            for (std::size_t i = 0; i < n; ++i) best = std::max(best, std::abs(at(i, i)));
            throw ConvergenceError("eigenvalue QR iteration did not converge after " +
                                   std::to_string(max_sweeps) + " sweeps",
                                   best);
        }

        cd shift;
        ++since_deflation;
        if (since_deflation % 11 == 0) {
            // Exceptional shift to break cycles.
            shift = at(hi, hi) + 0.75 * std::abs(at(hi, hi - 1));
        } else {
            const cd a = at(hi - 1, hi - 1), b = at(hi - 1, hi), c = at(hi, hi - 1), d = at(hi, hi);
            const cd half_tr = 0.5 * (a + d);
            const cd disc = std::sqrt(half_tr * half_tr - (a * d - b * c));
            const cd mu1 = half_tr + disc, mu2 = half_tr - disc;
            shift = std::abs(mu1 - d) < std::abs(mu2 - d) ? mu1 : mu2;
        }

        for (std::size_t k = lo; k <= hi; ++k) at(k, k) -= shift;
        // H - mu I = QR via Givens rotations on rows...
        for (std::size_t k = lo; k < hi; ++k) {
            const cd x = at(k, k), y = at(k + 1, k);
            const double r = std::hypot(std::abs(x), std::abs(y));
            cd c = 1.0, s = 0.0;
            if (r != 0.0) {
                c = x / r;
                s = y / r;
            }
            cs[k] = c;
            sn[k] = s;
            for (std::size_t j = k; j <= hi; ++j) {
                const cd p = at(k, j), q = at(k + 1, j);
                at(k, j) = std::conj(c) * p + std::conj(s) * q;
                at(k + 1, j) = -s * p + c * q;
            }
        }
        // ...then RQ by applying the adjoint rotations on columns.
        for (std::size_t k = lo; k < hi; ++k) {
            const cd c = cs[k], s = sn[k];
            const std::size_t last = std::min(k + 2, hi);
            for (std::size_t i = lo; i <= last; ++i) {
                const cd p = at(i, k), q = at(i, k + 1);
                at(i, k) = c * p + s * q;
                at(i, k + 1) = -std::conj(s) * p + std::conj(c) * q;
            }
        }
        for (std::size_t k = lo; k <= hi; ++k) at(k, k) += shift;
    }
    return eig;
}

// Cyclic Jacobi eigenvalues of a symmetric matrix.
struct SymmetricEigen {
    std::vector<double> values; // unsorted
    Matrix vectors;             // columns are eigenvectors
};

inline SymmetricEigen symmetric_eigen(Matrix a, std::size_t max_sweeps = 100) {
    const std::size_t n = a.rows();
    Matrix v = Matrix::identity(n);
    for (std::size_t sweep = 0;; ++sweep) {
        double off = 0.0, total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += a(i, j) * a(i, j);
                if (i != j) off += a(i, j) * a(i, j);
            }
        if (off <= eps * eps * total || off == 0.0) break;
        if (sweep == max_sweeps)
            throw ConvergenceError("Jacobi eigen sweep cap exhausted", std::sqrt(off));
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    SymmetricEigen out{std::vector<double>(n), std::move(v)};
    for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);
    return out;
}

// Gram matrix of the smaller side: m'm if cols <= rows, else mm'.
inline Matrix small_gram(const Matrix& m) {
    const bool by_cols = m.cols() <= m.rows();
    const std::size_t n = by_cols ? m.cols() : m.rows();
    Matrix g(n, n);
    if (by_cols) {
        for (std::size_t r = 0; r < m.rows(); ++r) {
            auto row = m.row(r);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = i; j < n; ++j) g(i, j) += row[i] * row[j];
        }
    } else {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                auto a = m.row(i), b = m.row(j);
                double s = 0.0;
                for (std::size_t k = 0; k < m.cols(); ++k) s += a[k] * b[k];
                g(i, j) = s;
            }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
    return g;
}

// In-place Cholesky (lower). Returns false if a pivot is not safely positive.
inline bool cholesky(Matrix& a) {
    const std::size_t n = a.rows();
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
    const double floor = static_cast<double>(n) * eps * max_diag;
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
        if (!(d > floor)) return false;
        d = std::sqrt(d);
        a(j, j) = d;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= a(i, k) * a(j, k);
            a(i, j) = s / d;
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) a(i, j) = 0.0;
    return true;
}

// Solves (L L') X = B in place, B is n x k.
inline void cholesky_solve(const Matrix& l, Matrix& b) {
    const std::size_t n = l.rows();
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = b(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * b(k, c);
            b(i, c) = s / l(i, i);
        }
        for (std::size_t i = n; i-- > 0;) {
            double s = b(i, c);
            for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * b(k, c);
            b(i, c) = s / l(i, i);
        }
    }
}

// Pseudo-inverse solve of a symmetric PSD system G X = B via its
// eigendecomposition, discarding eigenvalues below n * eps * max.
inline Matrix pinv_solve(const Matrix& g, const Matrix& b) {
    const SymmetricEigen e = symmetric_eigen(g);
    const std::size_t n = g.rows();
    double top = 0.0;
    for (double v : e.values) top = std::max(top, std::abs(v));
    const double cut = static_cast<double>(n) * eps * top;
    Matrix x(n, b.cols());
    for (std::size_t k = 0; k < n; ++k) {
        if (!(e.values[k] > cut)) continue;
        for (std::size_t c = 0; c < b.cols(); ++c) {
            double proj = 0.0;
            for (std::size_t i = 0; i < n; ++i) proj += e.vectors(i, k) * b(i, c);
            proj /= e.values[k];
            for (std::size_t i = 0; i < n; ++i) x(i, c) += proj * e.vectors(i, k);
        }
    }
    return x;
}

inline Matrix solve_spd_or_pinv(Matrix g, const Matrix& b) {
    Matrix l = g;
    if (cholesky(l)) {
        Matrix x = b;
        cholesky_solve(l, x);
        if (x.all_finite()) return x;
    }
    return pinv_solve(g, b);
}

} // namespace detail

// Largest eigenvalue modulus. Computed from the full spectrum (Hessenberg +
// shifted QR), which is accurate to working precision, so any tol > 0 is met;
// ctl.max_iter caps the total number of QR sweeps.
inline double spectral_radius(const Matrix& m, IterationControl ctl = {}) {
    detail::require_tol(ctl.tol);
    if (!m.square())
        throw DimensionError("spectral_radius: matrix is " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + ", not square");
    double rho = 0.0;
    for (const auto& ev : detail::eigenvalues(m, ctl.max_iter)) rho = std::max(rho, std::abs(ev));
    return rho;
}

inline double spectral_radius(const Matrix& m, double tol) { return spectral_radius(m, {tol, 10000}); }

// Largest singular value by power iteration on the smaller Gram matrix.
// Stops once the relative eigen-residual ||G v - mu v|| / mu drops below tol.
// If the cap is reached, the Gram spectrum is taken from a Jacobi
// eigendecomposition instead; that route throws if it also fails to converge.
inline double spectral_norm(const Matrix& m, IterationControl ctl = {}) {
    detail::require_tol(ctl.tol);
    if (m.empty()) return 0.0;
    const Matrix g = detail::small_gram(m);
    const std::size_t n = g.rows();

    // Irregular deterministic start so no structured vector is orthogonal to it.
    std::vector<double> v(n), w(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = 1.0 + std::fmod(0.6180339887498949 * static_cast<double>(i + 1), 1.0);

    auto normalize = [](std::vector<double>& x) {
        double s = 0.0;
        for (double e : x) s += e * e;
        s = std::sqrt(s);
        if (s > 0.0)
            for (double& e : x) e /= s;
        return s;
    };
    normalize(v);

    double mu = 0.0;
    for (std::size_t it = 0; it < ctl.max_iter; ++it) {
        multiply_into(g, v, w);
        mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += v[i] * w[i];
        if (mu <= 0.0) {
            // v is in the null space; for a PSD Gram this means G == 0 along v.
            double wn = 0.0;
            for (double e : w) wn += e * e;
            if (wn == 0.0) {
                double gn = 0.0;
                for (double e : g.entries()) gn = std::max(gn, std::abs(e));
                if (gn == 0.0) return 0.0;
            }
            break;
        }
        double res = 0.0;
        for (std::size_t i = 0; i < n; ++i) res += (w[i] - mu * v[i]) * (w[i] - mu * v[i]);
        if (std::sqrt(res) <= ctl.tol * mu) return std::sqrt(mu);
        v = w;
        normalize(v);
    }

    const auto e = detail::symmetric_eigen(g);
    double top = 0.0;
    for (double x : e.values) top = std::max(top, x);
    return std::sqrt(std::max(top, 0.0));
}

inline double spectral_norm(const Matrix& m, double tol) { return spectral_norm(m, {tol, 10000}); }

// W (targets.rows x states.rows) minimizing ||W X - T||^2 + lambda ||W||^2,
// with X = states (D x S, one column per sample) and T = targets (N_Y x S).
// Normal equations W = T X' (X X' + lambda I)^-1, solved by Cholesky; when
// S < D the equivalent S x S system W = T (X'X + lambda I)^-1 X' is used.
// A singular system (lambda = 0, rank-deficient X) falls back to the
// pseudo-inverse, i.e. the minimum-norm minimizer.
inline Matrix ridge_solve(const Matrix& states, const Matrix& targets, double lambda) {
    if (states.cols() != targets.cols())
        throw DimensionError("ridge_solve: states have " + std::to_string(states.cols()) +
                             " samples, targets have " + std::to_string(targets.cols()));
    if (!(lambda >= 0.0)) throw InputError("ridge_solve: lambda must be >= 0");
    const std::size_t d = states.rows(), s = states.cols();
    if (d == 0 || s == 0) throw DimensionError("ridge_solve: empty design matrix");

    if (d <= s) {
        Matrix g = states * states.transposed();
        for (std::size_t i = 0; i < d; ++i) g(i, i) += lambda;
        const Matrix rhs = states * targets.transposed(); // D x N_Y
        return detail::solve_spd_or_pinv(std::move(g), rhs).transposed();
    }
    Matrix k = states.transposed() * states;
    for (std::size_t i = 0; i < s; ++i) k(i, i) += lambda;
    const Matrix a = detail::solve_spd_or_pinv(std::move(k), targets.transposed()); // S x N_Y
    return (states * a).transposed();
}

} // namespace deepesn

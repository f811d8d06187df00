#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace eltrack {

using Vec = std::vector<double>;

struct dimension_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major matrix. All matrices in this project are small (at most a
/// few tens of rows), so no effort is made to be clever about storage.
struct Mat {
    std::size_t rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}
    Mat(std::initializer_list<std::initializer_list<double>> init) {
        rows = init.size();
        cols = rows ? init.begin()->size() : 0;
        a.reserve(rows * cols);
        for (const auto& row : init) {
            if (row.size() != cols) throw dimension_error("ragged initializer");
            a.insert(a.end(), row.begin(), row.end());
        }
    }

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Mat diagonal(const Vec& d) {
        Mat m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }
};

// ---------------------------------------------------------------------------
// Vector helpers

inline Vec operator+(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw dimension_error("vector size mismatch");
    Vec z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] + y[i];
    return z;
}
inline Vec operator-(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw dimension_error("vector size mismatch");
    Vec z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] - y[i];
    return z;
}
inline Vec operator*(double s, const Vec& x) {
    Vec z(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) z[i] = s * x[i];
    return z;
}
inline Vec operator-(const Vec& x) { return -1.0 * x; }
inline Vec& operator+=(Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw dimension_error("vector size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
    return x;
}

inline double dot(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw dimension_error("vector size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}
inline double norm(const Vec& x) { return std::sqrt(dot(x, x)); }

inline bool all_finite(const Vec& x) {
    return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Matrix helpers

inline Vec operator*(const Mat& m, const Vec& x) {
    if (m.cols != x.size()) throw dimension_error("matrix-vector size mismatch");
    Vec y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) y[i] += m(i, j) * x[j];
    return y;
}
inline Mat operator*(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw dimension_error("matrix-matrix size mismatch");
    Mat z(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double xik = x(i, k);
            for (std::size_t j = 0; j < y.cols; ++j) z(i, j) += xik * y(k, j);
        }
    return z;
}
inline Mat operator*(double s, const Mat& m) {
    Mat z = m;
    for (double& v : z.a) v *= s;
    return z;
}
inline Mat operator+(const Mat& x, const Mat& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw dimension_error("matrix size mismatch");
    Mat z = x;
    for (std::size_t i = 0; i < z.a.size(); ++i) z.a[i] += y.a[i];
    return z;
}
inline Mat operator-(const Mat& x, const Mat& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw dimension_error("matrix size mismatch");
    Mat z = x;
    for (std::size_t i = 0; i < z.a.size(); ++i) z.a[i] -= y.a[i];
    return z;
}
inline Mat transpose(const Mat& m) {
    Mat t(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
    return t;
}
inline Mat kron(const Mat& x, const Mat& y) {
    Mat z(x.rows * y.rows, x.cols * y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j)
            for (std::size_t k = 0; k < y.rows; ++k)
                for (std::size_t l = 0; l < y.cols; ++l)
                    z(i * y.rows + k, j * y.cols + l) = x(i, j) * y(k, l);
    return z;
}

inline bool is_symmetric(const Mat& m, double tol) {
    if (m.rows != m.cols) return false;
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = i + 1; j < m.cols; ++j)
            if (std::abs(m(i, j) - m(j, i)) > tol * (1.0 + std::abs(m(i, j)))) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Cholesky / positive definiteness

namespace detail {
/// In-place lower Cholesky. Returns false as soon as a pivot drops below
/// `pivot_floor`. In semidefinite mode a pivot in (-tol, tol] is treated as
/// zero and its column skipped.
inline bool cholesky(Mat& m, double tol, bool semidefinite) {
    const std::size_t n = m.rows;
    for (std::size_t j = 0; j < n; ++j) {
        double d = m(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= m(j, k) * m(j, k);
        if (d > tol) {
            m(j, j) = std::sqrt(d);
            for (std::size_t i = j + 1; i < n; ++i) {
                double s = m(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= m(i, k) * m(j, k);
                m(i, j) = s / m(j, j);
            }
        } else if (semidefinite && d > -tol) {
            m(j, j) = 0.0;
            for (std::size_t i = j + 1; i < n; ++i) m(i, j) = 0.0;
        } else {
            return false;
        }
    }
    return true;
}
}  // namespace detail

/// True iff `m` (square, symmetric within `tol`) is positive definite: every
/// Cholesky pivot exceeds `tol`. With `semidefinite` set, pivots down to -tol
/// are accepted.
inline bool chol_pd(const Mat& m, double tol = 1e-12, bool semidefinite = false) {
    if (m.rows != m.cols) throw dimension_error("chol_pd: matrix not square");
    if (!is_symmetric(m, std::max(tol, 1e-9))) throw dimension_error("chol_pd: matrix not symmetric");
    Mat work = m;
    return detail::cholesky(work, tol, semidefinite);
}

/// Solve m*y = b for symmetric positive-definite m via Cholesky.
inline Vec solve_spd(const Mat& m, const Vec& b) {
    if (m.rows != m.cols || m.rows != b.size()) throw dimension_error("solve_spd: size mismatch");
    Mat l = m;
    if (!detail::cholesky(l, 0.0, false)) throw numerical_error("solve_spd: matrix not positive definite");
    const std::size_t n = b.size();
    Vec y = b;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < i; ++k) y[i] -= l(i, k) * y[k];
        y[i] /= l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t k = ii + 1; k < n; ++k) y[ii] -= l(k, ii) * y[k];
        y[ii] /= l(ii, ii);
    }
    return y;
}

/// General dense solve via partially pivoted LU (used for the Lyapunov
/// equation, whose Kronecker system is not symmetric).
inline Vec lu_solve(Mat m, Vec b) {
    if (m.rows != m.cols || m.rows != b.size()) throw dimension_error("lu_solve: size mismatch");
    const std::size_t n = m.rows;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(m(i, k)) > std::abs(m(p, k))) p = i;
        if (m(p, k) == 0.0) throw numerical_error("lu_solve: singular matrix");
        if (p != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(m(k, j), m(p, j));
            std::swap(b[k], b[p]);
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = m(i, k) / m(k, k);
            m(i, k) = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) m(i, j) -= f * m(k, j);
            b[i] -= f * b[k];
        }
    }
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t j = ii + 1; j < n; ++j) b[ii] -= m(ii, j) * b[j];
        b[ii] /= m(ii, ii);
    }
    return b;
}

// ---------------------------------------------------------------------------
// Eigenvalues: Householder Hessenberg reduction + Francis double-shift QR.

namespace detail {

inline void hessenberg(Mat& h) {
    const std::size_t n = h.rows;
    if (n < 3) return;
    for (std::size_t k = 0; k + 2 < n; ++k) {
        double scale = 0.0;
        for (std::size_t i = k + 1; i < n; ++i) scale += std::abs(h(i, k));
        if (scale == 0.0) continue;
        Vec v(n, 0.0);
        double sq = 0.0;
        for (std::size_t i = k + 1; i < n; ++i) {
            v[i] = h(i, k) / scale;
            sq += v[i] * v[i];
        }
        const double alpha = (v[k + 1] >= 0 ? -1.0 : 1.0) * std::sqrt(sq);
        v[k + 1] -= alpha;
        double vnorm2 = 0.0;
        for (std::size_t i = k + 1; i < n; ++i) vnorm2 += v[i] * v[i];
        if (vnorm2 == 0.0) continue;
        // H := (I - 2vv'/v'v) H (I - 2vv'/v'v)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = k + 1; i < n; ++i) s += v[i] * h(i, j);
            s *= 2.0 / vnorm2;
            for (std::size_t i = k + 1; i < n; ++i) h(i, j) -= s * v[i];
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) s += h(i, j) * v[j];
            s *= 2.0 / vnorm2;
            for (std::size_t j = k + 1; j < n; ++j) h(i, j) -= s * v[j];
        }
    }
}

inline void eig2x2(double a, double b, double c, double d, std::vector<std::complex<double>>& out) {
    const double tr = a + d;
    const double det = a * d - b * c;
    const double disc = tr * tr / 4.0 - det;
    if (disc >= 0.0) {
        const double r = std::sqrt(disc);
        out.emplace_back(tr / 2.0 + r, 0.0);
        out.emplace_back(tr / 2.0 - r, 0.0);
    } else {
        const double im = std::sqrt(-disc);
        out.emplace_back(tr / 2.0, im);
        out.emplace_back(tr / 2.0, -im);
    }
}

}  // namespace detail

/// All eigenvalues of a square matrix. Iteration cap: 100 * n QR sweeps.
inline std::vector<std::complex<double>> eigenvalues(const Mat& m) {
    if (m.rows != m.cols) throw dimension_error("eigenvalues: matrix not square");
    for (double v : m.a)
        if (!std::isfinite(v)) throw dimension_error("eigenvalues: non-finite entry");
    const std::size_t n = m.rows;
    std::vector<std::complex<double>> out;
    if (n == 0) return out;
    Mat h = m;
    detail::hessenberg(h);

    const double eps = 1e-15;
    std::size_t hi = n - 1;  // active block is rows 0..hi
    std::size_t iters = 0, since_deflation = 0;
    const std::size_t cap = 100 * n;
    while (true) {
        // deflate negligible subdiagonals
        for (std::size_t i = hi; i > 0; --i) {
            const double s = std::abs(h(i - 1, i - 1)) + std::abs(h(i, i));
            if (std::abs(h(i, i - 1)) <= eps * std::max(s, 1e-300)) h(i, i - 1) = 0.0;
        }
        // peel converged eigenvalues off the bottom
        while (true) {
            if (hi == 0) {
                out.emplace_back(h(0, 0), 0.0);
                return out;
            }
            if (h(hi, hi - 1) == 0.0) {
                out.emplace_back(h(hi, hi), 0.0);
                --hi;
                since_deflation = 0;
                continue;
            }
            if (hi == 1 || h(hi - 1, hi - 2) == 0.0) {
                detail::eig2x2(h(hi - 1, hi - 1), h(hi - 1, hi), h(hi, hi - 1), h(hi, hi), out);
                if (hi == 1) return out;
                hi -= 2;
                since_deflation = 0;
                continue;
            }
            break;
        }
        if (++iters > cap)
            throw numerical_error("eigenvalues: QR iteration did not converge after " +
                                  std::to_string(iters - 1) + " sweeps");
        // lowest l such that rows l..hi form an unreduced Hessenberg block
        std::size_t lo = hi - 1;
        while (lo > 0 && h(lo, lo - 1) != 0.0) --lo;

        // Francis double-shift from the trailing 2x2, exceptional shift on stall
        double s = h(hi - 1, hi - 1) + h(hi, hi);
        double t = h(hi - 1, hi - 1) * h(hi, hi) - h(hi - 1, hi) * h(hi, hi - 1);
        if (++since_deflation % 11 == 0) {
            const double w = std::abs(h(hi, hi - 1)) + std::abs(h(hi - 1, hi - 2));
            s = 1.5 * w;
            t = w * w;
        }
        double x = h(lo, lo) * h(lo, lo) + h(lo, lo + 1) * h(lo + 1, lo) - s * h(lo, lo) + t;
        double y = h(lo + 1, lo) * (h(lo, lo) + h(lo + 1, lo + 1) - s);
        double z = (lo + 2 <= hi) ? h(lo + 1, lo) * h(lo + 2, lo + 1) : 0.0;

        // Chase the bulge down the block. At k = hi-1 the reflector shrinks
        // from three rows to two.
        for (std::size_t k = lo; k + 1 <= hi; ++k) {
            const std::size_t nv = std::min<std::size_t>(2, hi - k);  // extra rows beyond k
            if (nv == 1) z = 0.0;
            const double nrm = std::sqrt(x * x + y * y + z * z);
            if (nrm != 0.0) {
                const double alpha = (x >= 0 ? -nrm : nrm);
                const double vv[3] = {x - alpha, y, z};
                const double vnorm2 = vv[0] * vv[0] + vv[1] * vv[1] + vv[2] * vv[2];
                if (vnorm2 > 0.0) {
                    // rows k..k+nv
                    for (std::size_t j = (k > lo ? k - 1 : lo); j < n; ++j) {
                        double sum = 0.0;
                        for (std::size_t i = 0; i <= nv; ++i) sum += vv[i] * h(k + i, j);
                        sum *= 2.0 / vnorm2;
                        for (std::size_t i = 0; i <= nv; ++i) h(k + i, j) -= sum * vv[i];
                    }
                    // columns k..k+nv
                    const std::size_t rmax = std::min(hi, k + 3);
                    for (std::size_t i = 0; i <= rmax; ++i) {
                        double sum = 0.0;
                        for (std::size_t j = 0; j <= nv; ++j) sum += vv[j] * h(i, k + j);
                        sum *= 2.0 / vnorm2;
                        for (std::size_t j = 0; j <= nv; ++j) h(i, k + j) -= sum * vv[j];
                    }
                }
            }
            if (k + 1 <= hi) {
                x = h(k + 1, k);
                y = (k + 2 <= hi) ? h(k + 2, k) : 0.0;
                z = (k + 3 <= hi) ? h(k + 3, k) : 0.0;
            }
        }
    }
}

/// Maximum real part over all eigenvalues (the Hurwitz test statistic).
inline double max_real_eig(const Mat& m) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& ev : eigenvalues(m)) best = std::max(best, ev.real());
    return best;
}

/// Minimum eigenvalue of a symmetric matrix.
inline double min_eig_sym(const Mat& m) { return -max_real_eig(-1.0 * m); }
/// Maximum eigenvalue of a symmetric matrix.
inline double max_eig_sym(const Mat& m) { return max_real_eig(m); }

/// Spectral norm via the symmetric eigenproblem of M'M.
inline double norm2(const Mat& m) {
    const Mat g = transpose(m) * m;
    return std::sqrt(std::max(0.0, max_eig_sym(g)));
}

/// Solve A'P + PA = -Q0 for symmetric P (Kronecker vectorization + LU).
inline Mat lyapunov_solve(const Mat& a, const Mat& q0) {
    if (a.rows != a.cols || q0.rows != a.rows || q0.cols != a.cols)
        throw dimension_error("lyapunov_solve: size mismatch");
    const std::size_t n = a.rows;
    const Mat at = transpose(a);
    // (I (x) A' + A' (x) I) vec(P) = -vec(Q0), with vec stacking columns
    Mat k = kron(Mat::identity(n), at) + kron(at, Mat::identity(n));
    Vec rhs(n * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) rhs[j * n + i] = -q0(i, j);
    Vec sol = lu_solve(std::move(k), std::move(rhs));
    Mat p(n, n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) p(i, j) = sol[j * n + i];
    // symmetrize away the LU round-off
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = 0.5 * (p(i, j) + p(j, i));
            p(i, j) = p(j, i) = s;
        }
    return p;
}

}  // namespace eltrack

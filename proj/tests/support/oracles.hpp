// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reference implementations used only by tests. They avoid the library's code paths and Eigen.

#include <cmath>
#include <utility>
#include <vector>

#include "tavid/core/rng.hpp"

namespace tavid::test {

using Matrix = std::vector<std::vector<double>>;

inline Matrix mat_mul(const Matrix& a, const Matrix& b) {
    const std::size_t n = a.size(), m = b[0].size(), k = b.size();
    Matrix c(n, std::vector<double>(m, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t l = 0; l < k; ++l) c[i][j] += a[i][l] * b[l][j];
    return c;
}

inline Matrix mat_transpose(const Matrix& a) {
    Matrix t(a[0].size(), std::vector<double>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
    return t;
}

/// Cyclic Jacobi rotations on a symmetric matrix. Returns (eigenvalues, eigenvectors as columns).
inline std::pair<std::vector<double>, Matrix> jacobi_eigen(Matrix a) {
    const std::size_t n = a.size();
    Matrix v(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
        if (off < 1e-30) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                if (a[p][q] == 0.0) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<double> ev(n);
    for (std::size_t i = 0; i < n; ++i) ev[i] = a[i][i];
    return {ev, v};
}

/// PSD square root through Jacobi diagonalization.
inline Matrix sqrt_psd(const Matrix& a) {
    const auto [ev, v] = jacobi_eigen(a);
    Matrix d(a.size(), std::vector<double>(a.size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i) d[i][i] = std::sqrt(std::max(0.0, ev[i]));
    return mat_mul(mat_mul(v, d), mat_transpose(v));
}

/// Frechet distance with Tr((Sa Sb)^{1/2}) = Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}).
inline double frechet_oracle(const std::vector<double>& ma, const Matrix& sa, const std::vector<double>& mb,
                             const Matrix& sb) {
    double dm = 0.0, tr = 0.0;
    for (std::size_t i = 0; i < ma.size(); ++i) {
        dm += (ma[i] - mb[i]) * (ma[i] - mb[i]);
        tr += sa[i][i] + sb[i][i];
    }
    const Matrix ra = sqrt_psd(sa);
    const auto [ev, _] = jacobi_eigen(mat_mul(mat_mul(ra, sb), ra));
    for (double e : ev) tr -= 2.0 * std::sqrt(std::max(0.0, e));
    return dm + tr;
}

/// G G^T / n + 0.1 I with Gaussian G.
inline Matrix random_spd(std::size_t n, Rng& rng) {
    Matrix g(n, std::vector<double>(n));
    for (auto& row : g)
        for (auto& x : row) x = rng.normal();
    Matrix s = mat_mul(g, mat_transpose(g));
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& x : s[i]) x /= static_cast<double>(n);
        s[i][i] += 0.1;
    }
    return s;
}

}  // namespace tavid::test

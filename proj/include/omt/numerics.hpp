#pragma once

#include "omt/types.hpp"

#include <cmath>
#include <string>

namespace omt {

/// Principal square root of an SPD matrix via symmetric eigendecomposition.
inline SpdMatrix sym_sqrt(const SpdMatrix& s) {
    Eigen::SelfAdjointEigenSolver<Mat> es(s.mat());
    const Vec& ev = es.eigenvalues();
    if (ev.minCoeff() <= 0.0)
        throw DomainError("sym_sqrt: eigenvalue " + std::to_string(ev.minCoeff()) +
                          " is not positive");
    Mat r = es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
    return SpdMatrix(std::move(r));
}

/// Principal inverse square root, same eigendecomposition route.
inline SpdMatrix spd_inv_sqrt(const SpdMatrix& s) {
    Eigen::SelfAdjointEigenSolver<Mat> es(s.mat());
    const Vec& ev = es.eigenvalues();
    if (ev.minCoeff() <= 0.0)
        throw DomainError("spd_inv_sqrt: eigenvalue " + std::to_string(ev.minCoeff()) +
                          " is not positive");
    Mat r = es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal() *
            es.eigenvectors().transpose();
    return SpdMatrix(std::move(r));
}

namespace detail {

// Lyapunov solve on raw symmetric storage, shared by the validated public
// entry point and the integrator hot loops.
inline Mat lyapunov_raw(const Mat& sigma_sym, const Mat& v_sym) {
    Eigen::SelfAdjointEigenSolver<Mat> es(sigma_sym);
    const Vec& lam = es.eigenvalues();
    if (!(lam.minCoeff() > 1e-12 * std::max(lam.maxCoeff(), 0.0)))
        throw DomainError("lyapunov_solve: coefficient matrix eigenvalue " +
                          std::to_string(lam.minCoeff()) + " is not positive");
    const Mat& u = es.eigenvectors();
    Mat vt = u.transpose() * v_sym * u;
    for (int i = 0; i < vt.rows(); ++i)
        for (int j = 0; j < vt.cols(); ++j)
            vt(i, j) /= lam(i) + lam(j);
    Mat a = u * vt * u.transpose();
    return 0.5 * (a + a.transpose());
}

} // namespace detail

/// Unique symmetric solution A of A*Sigma + Sigma*A = V, computed in the
/// eigenbasis of Sigma as A~_ij = V~_ij / (lambda_i + lambda_j).
inline SymMatrix lyapunov_solve(const SpdMatrix& sigma, const SymMatrix& v) {
    if (sigma.dim() != v.dim())
        throw UsageError("lyapunov_solve: dimension mismatch (" +
                         std::to_string(sigma.dim()) + " vs " + std::to_string(v.dim()) + ")");
    return SymMatrix(detail::lyapunov_raw(sigma.mat(), v.mat()));
}

/// exp(W) for skew-symmetric W. Lands in SO(n): exp(W)^T exp(W) = I, det = 1.
/// n = 2 uses the closed rotation form; otherwise scaling-and-squaring on the
/// exponential series.
inline TransportFactor skew_exp(const SkewMatrix& w) {
    const int n = w.dim();
    const Mat& m = w.mat();
    if (n == 2) {
        const double theta = m(0, 1);
        Mat r(2, 2);
        r << std::cos(theta), std::sin(theta), -std::sin(theta), std::cos(theta);
        return TransportFactor(std::move(r));
    }
    const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
    int squarings = 0;
    double scale = 1.0;
    while (norm * scale > 0.5) {
        scale *= 0.5;
        ++squarings;
    }
    Mat x = scale * m;
    Mat term = Mat::Identity(n, n);
    Mat sum = term;
    for (int k = 1; k <= 20; ++k) {
        term = (term * x / static_cast<double>(k)).eval();
        sum += term;
        if (term.cwiseAbs().maxCoeff() < 1e-18) break;
    }
    for (int k = 0; k < squarings; ++k) sum = (sum * sum).eval();
    return TransportFactor(std::move(sum));
}

/// Principal logarithm of a special orthogonal matrix, returned as the skew
/// generator. Real Schur form reduces R to 2x2 rotation blocks and +-1 entries;
/// an eigenvalue -1 has no principal skew logarithm and is rejected.
inline SkewMatrix so_log(const Mat& r, double ortho_tol = 1e-8) {
    detail::check_square(r, "so_log");
    const int n = static_cast<int>(r.rows());
    const double ortho = (r.transpose() * r - Mat::Identity(n, n)).cwiseAbs().maxCoeff();
    if (ortho > ortho_tol)
        throw DomainError("so_log: matrix is not orthogonal (deviation " +
                          std::to_string(ortho) + ")");
    if (n == 2) {
        const double theta = std::atan2(r(0, 1) - r(1, 0), r(0, 0) + r(1, 1));
        Mat w(2, 2);
        w << 0.0, theta, -theta, 0.0;
        return SkewMatrix(std::move(w));
    }
    Eigen::RealSchur<Mat> schur(r);
    const Mat& t = schur.matrixT();
    const Mat& q = schur.matrixU();
    Mat logt = Mat::Zero(n, n);
    int i = 0;
    while (i < n) {
        const bool has_block = i + 1 < n && std::abs(t(i + 1, i)) > 1e-12;
        if (has_block) {
            const double theta = std::atan2(t(i, i + 1) - t(i + 1, i), t(i, i) + t(i + 1, i + 1));
            logt(i, i + 1) = theta;
            logt(i + 1, i) = -theta;
            i += 2;
        } else {
            if (t(i, i) < 0.0)
                throw DomainError("so_log: eigenvalue -1, principal logarithm undefined");
            i += 1;
        }
    }
    Mat w = q * logt * q.transpose();
    w = 0.5 * (w - w.transpose()).eval();
    return SkewMatrix(std::move(w));
}

/// Matrix congruence Phi # Sigma = Phi * Sigma * Phi^T, symmetrized.
inline SpdMatrix congruence(const Mat& phi, const SpdMatrix& sigma) {
    if (phi.rows() != sigma.dim() || phi.cols() != sigma.dim())
        throw UsageError("congruence: dimension mismatch");
    Mat r = phi * sigma.mat() * phi.transpose();
    r = 0.5 * (r + r.transpose()).eval();
    return SpdMatrix(std::move(r));
}

inline SpdMatrix congruence(const TransportFactor& phi, const SpdMatrix& sigma) {
    return congruence(phi.mat(), sigma);
}

} // namespace omt

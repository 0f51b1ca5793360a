#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace omt {

/// Dense real matrix used throughout. Row-major to match the on-disk
/// layout of configs and result tables; sizes stay small (n <= ~8).
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Invalid call: dimension mismatch, malformed input, broken precondition.
class UsageError : public std::invalid_argument {
public:
    explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

/// Input outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
public:
    explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Iterative solver failed to reach its tolerance.
class NonconvergenceError : public std::runtime_error {
public:
    NonconvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

/// The state-transition factor left GL+(n) during integration.
class IntegrationBreakdown : public std::runtime_error {
public:
    IntegrationBreakdown(const std::string& what, double time)
        : std::runtime_error(what), time_(time) {}
    double time() const { return time_; }

private:
    double time_;
};

namespace detail {

inline double entry_scale(const Mat& m) {
    return std::max(1.0, m.cwiseAbs().maxCoeff());
}

inline void check_square(const Mat& m, const char* what) {
    if (m.rows() != m.cols() || m.rows() < 1)
        throw UsageError(std::string(what) + ": expected a square matrix, got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

inline void check_symmetric(const Mat& m, const char* what) {
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * entry_scale(m))
        throw UsageError(std::string(what) + ": matrix is not symmetric (asymmetry " +
                         std::to_string(asym) + ")");
}

} // namespace detail

/// Symmetric positive definite covariance. Stored symmetrized; positivity is
/// validated at construction (eigenvalue > 1e-12 * largest eigenvalue).
class SpdMatrix {
public:
    explicit SpdMatrix(Mat m) {
        detail::check_square(m, "SpdMatrix");
        detail::check_symmetric(m, "SpdMatrix");
        m_ = 0.5 * (m + m.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Mat> es(m_, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        if (!(lo > 1e-12 * std::max(hi, 0.0)))
            throw DomainError("SpdMatrix: eigenvalue " + std::to_string(lo) +
                              " is not positive");
    }

    static SpdMatrix identity(int n) { return SpdMatrix(Mat::Identity(n, n)); }

    int dim() const { return static_cast<int>(m_.rows()); }
    const Mat& mat() const { return m_; }

private:
    Mat m_;
};

/// Symmetric matrix (tangent vectors, controls A_t). Stored symmetrized.
class SymMatrix {
public:
    explicit SymMatrix(Mat m) {
        detail::check_square(m, "SymMatrix");
        detail::check_symmetric(m, "SymMatrix");
        m_ = 0.5 * (m + m.transpose()).eval();
    }

    static SymMatrix zero(int n) { return SymMatrix(Mat::Zero(n, n)); }

    int dim() const { return static_cast<int>(m_.rows()); }
    const Mat& mat() const { return m_; }

private:
    Mat m_;
};

/// Skew-symmetric matrix (fiber directions, holonomy generators).
class SkewMatrix {
public:
    explicit SkewMatrix(Mat m) {
        detail::check_square(m, "SkewMatrix");
        const double dev = (m + m.transpose()).cwiseAbs().maxCoeff();
        if (dev > 1e-12 * detail::entry_scale(m))
            throw UsageError("SkewMatrix: matrix is not skew-symmetric (deviation " +
                             std::to_string(dev) + ")");
        m_ = 0.5 * (m - m.transpose()).eval();
    }

    static SkewMatrix zero(int n) { return SkewMatrix(Mat::Zero(n, n)); }

    int dim() const { return static_cast<int>(m_.rows()); }
    const Mat& mat() const { return m_; }

private:
    Mat m_;
};

/// Point on GL+(n): a particle state-transition factor with det > 0.
class TransportFactor {
public:
    explicit TransportFactor(Mat m) : m_(std::move(m)) {
        detail::check_square(m_, "TransportFactor");
        const double det = m_.determinant();
        if (!(det > 0.0))
            throw DomainError("TransportFactor: determinant " + std::to_string(det) +
                              " is not positive");
    }

    static TransportFactor identity(int n) { return TransportFactor(Mat::Identity(n, n)); }

    int dim() const { return static_cast<int>(m_.rows()); }
    const Mat& mat() const { return m_; }

private:
    Mat m_;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

} // namespace omt

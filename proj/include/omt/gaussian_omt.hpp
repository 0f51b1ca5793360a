#pragma once

#include "omt/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace omt {

/// Optimal (Monge) transport map between zero-mean Gaussians:
///   Phi* = Sigma0^{-1/2} (Sigma0^{1/2} Sigma1 Sigma0^{1/2})^{1/2} Sigma0^{-1/2}.
/// Phi* is SPD and pushes Sigma0 to Sigma1 under congruence.
inline SpdMatrix monge_map(const SpdMatrix& sigma0, const SpdMatrix& sigma1) {
    if (sigma0.dim() != sigma1.dim())
        throw UsageError("monge_map: dimension mismatch");
    const Mat rt = sym_sqrt(sigma0).mat();
    const Mat irt = spd_inv_sqrt(sigma0).mat();
    const Mat inner = sym_sqrt(SpdMatrix(rt * sigma1.mat() * rt.transpose())).mat();
    Mat phi = irt * inner * irt;
    return SpdMatrix(0.5 * (phi + phi.transpose()));
}

/// Algebraically equivalent evaluation route,
///   Phi* = Sigma1^{1/2} (Sigma1^{1/2} Sigma0 Sigma1^{1/2})^{-1/2} Sigma1^{1/2},
/// kept as an independent cross-check of monge_map.
inline SpdMatrix monge_map_alt(const SpdMatrix& sigma0, const SpdMatrix& sigma1) {
    if (sigma0.dim() != sigma1.dim())
        throw UsageError("monge_map_alt: dimension mismatch");
    const Mat rt = sym_sqrt(sigma1).mat();
    const Mat inner = spd_inv_sqrt(SpdMatrix(rt * sigma0.mat() * rt.transpose())).mat();
    Mat phi = rt * inner * rt;
    return SpdMatrix(0.5 * (phi + phi.transpose()));
}

/// Squared Bures-Wasserstein distance between zero-mean Gaussians,
///   trace(Sigma0 + Sigma1 - 2 (Sigma0^{1/2} Sigma1 Sigma0^{1/2})^{1/2}).
inline double w2_squared(const SpdMatrix& sigma0, const SpdMatrix& sigma1) {
    if (sigma0.dim() != sigma1.dim())
        throw UsageError("w2_squared: dimension mismatch");
    const Mat rt = sym_sqrt(sigma0).mat();
    Eigen::SelfAdjointEigenSolver<Mat> es(rt * sigma1.mat() * rt.transpose(),
                                          Eigen::EigenvaluesOnly);
    const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double v = sigma0.mat().trace() + sigma1.mat().trace() - 2.0 * cross;
    return std::max(v, 0.0);
}

/// Maximal open parameter interval around [0,1] on which a McCann geodesic
/// extrapolates, i.e. on which I + t(Phi* - I) stays invertible. `degenerate`
/// flags unit eigenvalues of Phi* (no flow along those directions; they
/// impose no constraint on the interval).
struct ExtensionInterval {
    double t_min = -kInf;
    double t_max = kInf;
    bool degenerate = false;

    bool contains(double t) const { return t > t_min && t < t_max; }
};

/// McCann displacement interpolation between two covariances, carried by the
/// Monge map: Sigma_t = ((1-t) I + t Phi*) # Sigma0.
class MccannGeodesic {
public:
    MccannGeodesic(SpdMatrix sigma0, SpdMatrix sigma1)
        : sigma_start_(std::move(sigma0)),
          sigma_end_(std::move(sigma1)),
          monge_(monge_map(sigma_start_, sigma_end_)) {}

    const SpdMatrix& sigma_start() const { return sigma_start_; }
    const SpdMatrix& sigma_end() const { return sigma_end_; }
    const SpdMatrix& monge() const { return monge_; }

    int dim() const { return sigma_start_.dim(); }

private:
    SpdMatrix sigma_start_;
    SpdMatrix sigma_end_;
    SpdMatrix monge_;
};

/// Invertibility interval of I + t(Phi* - I) from the eigenvalues of Phi*:
/// an eigenvalue phi != 1 pins a singular time 1/(1 - phi), negative for
/// phi > 1 (lower bound) and greater than one for phi < 1 (upper bound).
inline ExtensionInterval extension_interval(const MccannGeodesic& g) {
    Eigen::SelfAdjointEigenSolver<Mat> es(g.monge().mat(), Eigen::EigenvaluesOnly);
    ExtensionInterval out;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        const double phi = es.eigenvalues()(i);
        if (std::abs(phi - 1.0) <= 1e-10) {
            out.degenerate = true;
            continue;
        }
        const double t_sing = 1.0 / (1.0 - phi);
        if (phi > 1.0)
            out.t_min = std::max(out.t_min, t_sing);
        else
            out.t_max = std::min(out.t_max, t_sing);
    }
    return out;
}

/// Covariance along the geodesic: Sigma_t = ((1-t) I + t Phi*) # Sigma0.
inline SpdMatrix mccann_point(const MccannGeodesic& g, double t) {
    const ExtensionInterval iv = extension_interval(g);
    if (!iv.contains(t))
        throw DomainError("mccann_point: t = " + std::to_string(t) +
                          " outside the extension interval (" + std::to_string(iv.t_min) +
                          ", " + std::to_string(iv.t_max) + ")");
    const int n = g.dim();
    const Mat blend = Mat::Identity(n, n) + t * (g.monge().mat() - Mat::Identity(n, n));
    return congruence(blend, g.sigma_start());
}

/// Potential-force control along the geodesic,
///   A_t = (Phi* - I)(I + t(Phi* - I))^{-1},
/// the symmetric matrix with A_t Sigma_t + Sigma_t A_t = dSigma_t/dt.
inline SymMatrix mccann_velocity(const MccannGeodesic& g, double t) {
    const int n = g.dim();
    const Mat m = g.monge().mat() - Mat::Identity(n, n);
    const Eigen::MatrixXd blend = Mat::Identity(n, n) + t * m;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(blend);
    if (!lu.isInvertible())
        throw DomainError("mccann_velocity: I + t(Phi* - I) singular at t = " +
                          std::to_string(t));
    Mat a = m * Mat(lu.inverse());
    return SymMatrix(0.5 * (a + a.transpose()));
}

/// Holonomy of the Gaussian triangle with the given vertices: the composition
/// of the three edge Monge maps. Fixes Sigma1 under congruence and has unit
/// determinant, but is generally not the identity (mixing).
inline TransportFactor triangle_holonomy(const SpdMatrix& sigma1, const SpdMatrix& sigma2,
                                         const SpdMatrix& sigma3) {
    const Mat theta = monge_map(sigma3, sigma1).mat() * monge_map(sigma2, sigma3).mat() *
                      monge_map(sigma1, sigma2).mat();
    return TransportFactor(theta);
}

} // namespace omt

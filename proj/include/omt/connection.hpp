#pragma once

#include "omt/gaussian_omt.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace omt {

/// Reference covariance fixing the bundle projection pi(Phi) = Phi # Sigma_ref.
struct BundleContext {
    SpdMatrix sigma_ref;

    static BundleContext standard(int n) { return BundleContext{SpdMatrix::identity(n)}; }

    int dim() const { return sigma_ref.dim(); }
};

/// Uniformly sampled covariance curve on [0,1]. `knots` lists interior sample
/// indices where the curve is continuous but not C1 (e.g. polygon vertices);
/// derivative stencils and integration steps never cross a knot.
class CovCurve {
public:
    explicit CovCurve(std::vector<SpdMatrix> samples, std::vector<int> knots = {})
        : samples_(std::move(samples)), knots_(std::move(knots)) {
        if (samples_.size() < 2)
            throw UsageError("CovCurve: need at least two samples");
        const int k = segments();
        for (const auto& s : samples_)
            if (s.dim() != samples_.front().dim())
                throw UsageError("CovCurve: samples of mixed dimension");
        int prev = 0;
        for (int idx : knots_) {
            if (idx <= prev || idx >= k)
                throw UsageError("CovCurve: knots must be strictly increasing interior indices");
            prev = idx;
        }
        grid_.resize(samples_.size());
        for (std::size_t i = 0; i < grid_.size(); ++i)
            grid_[i] = static_cast<double>(i) / k;
    }

    int dim() const { return samples_.front().dim(); }
    int segments() const { return static_cast<int>(samples_.size()) - 1; }
    double step() const { return 1.0 / segments(); }

    const std::vector<double>& grid() const { return grid_; }
    const std::vector<SpdMatrix>& samples() const { return samples_; }
    const std::vector<int>& knots() const { return knots_; }

    /// Loop test: ||Sigma_K - Sigma_0||_F <= 1e-8 ||Sigma_0||_F.
    bool is_closed() const {
        return (samples_.back().mat() - samples_.front().mat()).norm() <=
               1e-8 * samples_.front().mat().norm();
    }

    /// Piece boundaries {0, knots..., K}.
    std::vector<int> piece_bounds() const {
        std::vector<int> b{0};
        b.insert(b.end(), knots_.begin(), knots_.end());
        b.push_back(segments());
        return b;
    }

private:
    std::vector<SpdMatrix> samples_;
    std::vector<int> knots_;
    std::vector<double> grid_;
};

/// A horizontal curve of factors above a covariance curve, with the symmetric
/// controls realizing it. factors[k] projects onto samples[k].
struct HorizontalLift {
    CovCurve curve;
    std::vector<TransportFactor> factors;
    std::vector<SymMatrix> controls;
    double max_projection_residual = 0.0;
};

/// Bundle projection pi(Phi) = Phi Sigma_ref Phi^T.
inline SpdMatrix project(const BundleContext& ctx, const TransportFactor& phi) {
    return congruence(phi, ctx.sigma_ref);
}

inline SpdMatrix project(const BundleContext& ctx, const Mat& phi) {
    return congruence(phi, ctx.sigma_ref);
}

/// Wasserstein-Otto metric on the base space:
///   G(Sigma; V1, V2) = trace(L_Sigma(V1) Sigma L_Sigma(V2)).
inline double otto_metric(const SpdMatrix& sigma, const SymMatrix& v1, const SymMatrix& v2) {
    if (sigma.dim() != v1.dim() || sigma.dim() != v2.dim())
        throw UsageError("otto_metric: dimension mismatch");
    const Mat a1 = lyapunov_solve(sigma, v1).mat();
    const Mat a2 = lyapunov_solve(sigma, v2).mat();
    return (a1 * sigma.mat() * a2).trace();
}

/// Sub-Riemannian inner product on factors: trace(Phidot1 Sigma_ref Phidot2^T).
inline double sr_metric(const BundleContext& ctx, const Mat& phidot1, const Mat& phidot2) {
    if (phidot1.rows() != ctx.dim() || phidot2.rows() != ctx.dim() ||
        phidot1.cols() != ctx.dim() || phidot2.cols() != ctx.dim())
        throw UsageError("sr_metric: dimension mismatch");
    return (phidot1 * ctx.sigma_ref.mat() * phidot2.transpose()).trace();
}

/// Flat L2 distance on factors: sqrt(trace((Phi1-Phi2) Sigma_ref (Phi1-Phi2)^T)).
inline double l2_distance(const BundleContext& ctx, const TransportFactor& phi1,
                          const TransportFactor& phi2) {
    const Mat d = phi1.mat() - phi2.mat();
    return std::sqrt(std::max(0.0, (d * ctx.sigma_ref.mat() * d.transpose()).trace()));
}

namespace detail {

// Nodal time derivatives on one smooth piece [a, b]: centered stencils in the
// interior, one-sided at the piece ends. Pieces with at least five nodes use
// the 4th-order five-point formulas (the lift integrator needs 4th-order
// derivative data to keep its step-halving order); short pieces fall back to
// the classical 2nd-order three-point scheme.
inline void piece_derivatives(const std::vector<SpdMatrix>& s, int a, int b, double h,
                              std::vector<Mat>& out) {
    const int avail = b - a + 1;
    if (avail == 2) {
        out[a] = (s[b].mat() - s[a].mat()) / h;
        out[b] = out[a];
        return;
    }
    if (avail < 5) {
        out[a] = (-3.0 * s[a].mat() + 4.0 * s[a + 1].mat() - s[a + 2].mat()) / (2.0 * h);
        out[b] = (3.0 * s[b].mat() - 4.0 * s[b - 1].mat() + s[b - 2].mat()) / (2.0 * h);
        for (int k = a + 1; k < b; ++k)
            out[k] = (s[k + 1].mat() - s[k - 1].mat()) / (2.0 * h);
        return;
    }
    const double d = 12.0 * h;
    out[a] = (-25.0 * s[a].mat() + 48.0 * s[a + 1].mat() - 36.0 * s[a + 2].mat() +
              16.0 * s[a + 3].mat() - 3.0 * s[a + 4].mat()) /
             d;
    out[a + 1] = (-3.0 * s[a].mat() - 10.0 * s[a + 1].mat() + 18.0 * s[a + 2].mat() -
                  6.0 * s[a + 3].mat() + s[a + 4].mat()) /
                 d;
    out[b - 1] = (3.0 * s[b].mat() + 10.0 * s[b - 1].mat() - 18.0 * s[b - 2].mat() +
                  6.0 * s[b - 3].mat() - s[b - 4].mat()) /
                 d;
    out[b] = (25.0 * s[b].mat() - 48.0 * s[b - 1].mat() + 36.0 * s[b - 2].mat() -
              16.0 * s[b - 3].mat() + 3.0 * s[b - 4].mat()) /
             d;
    for (int k = a + 2; k <= b - 2; ++k)
        out[k] = (s[k - 2].mat() - 8.0 * s[k - 1].mat() + 8.0 * s[k + 1].mat() -
                  s[k + 2].mat()) /
                 d;
}

// Lagrange basis values and derivatives at x for a small node set.
inline void lagrange_weights(const double* xs, int m, double x, double* wv, double* wd) {
    for (int i = 0; i < m; ++i) {
        double v = 1.0;
        for (int j = 0; j < m; ++j)
            if (j != i) v *= (x - xs[j]) / (xs[i] - xs[j]);
        double dsum = 0.0;
        for (int j = 0; j < m; ++j)
            if (j != i) dsum += 1.0 / (x - xs[j]);
        wv[i] = v;
        wd[i] = v * dsum;
    }
}

// Curve value and derivative between nodes, from the Lagrange polynomial
// through up to five samples of the containing smooth piece.
inline void interp_mid(const CovCurve& curve, int a, int b, int k, double t, Mat& value,
                       Mat& deriv) {
    const auto& s = curve.samples();
    const auto& g = curve.grid();
    const int avail = b - a + 1;
    const int m = std::min(5, avail);
    int j0 = std::min(std::max(k - 2, a), b - (m - 1));
    double xs[5], wv[5], wd[5];
    for (int i = 0; i < m; ++i) xs[i] = g[j0 + i];
    lagrange_weights(xs, m, t, wv, wd);
    value = wv[0] * s[j0].mat();
    deriv = wd[0] * s[j0].mat();
    for (int i = 1; i < m; ++i) {
        value += wv[i] * s[j0 + i].mat();
        deriv += wd[i] * s[j0 + i].mat();
    }
}

inline SymMatrix control_at(const SpdMatrix& sigma, const Mat& sigma_dot) {
    return SymMatrix(lyapunov_raw(sigma.mat(), 0.5 * (sigma_dot + sigma_dot.transpose())));
}

} // namespace detail

/// Integrates the horizontal lift of `curve` starting at phi_in: the linear
/// flow dPhi/dt = A_t Phi with A_t the Lyapunov solve of (Sigma_t, dSigma_t/dt),
/// one classical 4th-order step per grid interval. Midpoint data comes from
/// local polynomial interpolation of the samples, so the scheme is exact (up
/// to the integrator order) on McCann arcs, whose covariances are quadratic
/// in t.
inline HorizontalLift horizontal_lift(const BundleContext& ctx, const CovCurve& curve,
                                      const TransportFactor& phi_in) {
    if (ctx.dim() != curve.dim() || phi_in.dim() != curve.dim())
        throw UsageError("horizontal_lift: dimension mismatch");
    const double fiber_residual =
        (project(ctx, phi_in).mat() - curve.samples().front().mat()).norm();
    const double fiber_scale = std::max(1.0, curve.samples().front().mat().norm());
    if (fiber_residual > 1e-8 * fiber_scale)
        throw UsageError("horizontal_lift: phi_in off the fiber of Sigma_0 (residual " +
                         std::to_string(fiber_residual) + ")");

    const double h = curve.step();
    const auto& s = curve.samples();
    const auto bounds = curve.piece_bounds();

    std::vector<TransportFactor> factors;
    factors.reserve(s.size());
    factors.push_back(phi_in);
    std::vector<SymMatrix> controls(s.size(), SymMatrix::zero(curve.dim()));

    double max_res = fiber_residual;
    Mat phi = phi_in.mat();
    std::vector<Mat> sdot(s.size());
    std::vector<Mat> a_node(s.size());
    Mat value, deriv;
    for (std::size_t p = 0; p + 1 < bounds.size(); ++p) {
        const int a = bounds[p];
        const int b = bounds[p + 1];
        detail::piece_derivatives(s, a, b, h, sdot);
        for (int k = a; k <= b; ++k) {
            a_node[k] = detail::lyapunov_raw(s[k].mat(),
                                             0.5 * (sdot[k] + sdot[k].transpose()));
            // pieces are processed in order, so a knot ends up holding its
            // outgoing control
            controls[k] = SymMatrix(a_node[k]);
        }
        for (int k = a; k < b; ++k) {
            detail::interp_mid(curve, a, b, k, curve.grid()[k] + 0.5 * h, value, deriv);
            const Mat a_mid = detail::lyapunov_raw(0.5 * (value + value.transpose()),
                                                   0.5 * (deriv + deriv.transpose()));
            const Mat k1 = a_node[k] * phi;
            const Mat k2 = a_mid * (phi + 0.5 * h * k1);
            const Mat k3 = a_mid * (phi + 0.5 * h * k2);
            const Mat k4 = a_node[k + 1] * (phi + h * k3);
            phi += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            factors.emplace_back(phi);
            max_res = std::max(max_res, (project(ctx, phi).mat() - s[k + 1].mat()).norm());
        }
    }
    return HorizontalLift{curve, std::move(factors), std::move(controls), max_res};
}

/// Parallel transport map of a covariance curve: the factor Phi_1 with
/// Par[Sigma.](Phi_in) = Phi_1 Phi_in, independent of the starting fiber point.
inline TransportFactor parallel_transport(const BundleContext& ctx, const CovCurve& curve) {
    const Mat phi_in =
        sym_sqrt(curve.samples().front()).mat() * spd_inv_sqrt(ctx.sigma_ref).mat();
    const HorizontalLift lift = horizontal_lift(ctx, curve, TransportFactor(phi_in));
    Mat par = lift.factors.back().mat() * phi_in.inverse();
    return TransportFactor(std::move(par));
}

/// Otto length of a covariance curve: trapezoid quadrature of the metric speed
/// sqrt(G(Sigma_k; Sigmadot_k, Sigmadot_k)), piecewise between knots.
inline double curve_length(const BundleContext& ctx, const CovCurve& curve) {
    if (ctx.dim() != curve.dim()) throw UsageError("curve_length: dimension mismatch");
    const double h = curve.step();
    const auto& s = curve.samples();
    const auto bounds = curve.piece_bounds();
    double total = 0.0;
    for (std::size_t p = 0; p + 1 < bounds.size(); ++p) {
        const int a = bounds[p];
        const int b = bounds[p + 1];
        std::vector<Mat> local(s.size());
        detail::piece_derivatives(s, a, b, h, local);
        double acc = 0.0;
        for (int k = a; k <= b; ++k) {
            const SymMatrix v(0.5 * (local[k] + local[k].transpose()));
            const double speed = std::sqrt(std::max(0.0, otto_metric(s[k], v, v)));
            const double w = (k == a || k == b) ? 0.5 : 1.0;
            acc += w * speed;
        }
        total += acc * h;
    }
    return total;
}

/// Dimension of span{A} + span{BC - CB} over a basis of Sym(n), the
/// bracket-generation certificate for the horizontal sub-bundle. Equals n^2.
inline int bracket_span_rank(int n) {
    if (n < 2) throw UsageError("bracket_span_rank: need n >= 2");
    std::vector<Mat> basis;
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            Mat e = Mat::Zero(n, n);
            e(i, j) = 1.0;
            e(j, i) = 1.0;
            basis.push_back(std::move(e));
        }
    const int m = static_cast<int>(basis.size());
    Eigen::MatrixXd stacked(m + m * (m - 1) / 2, n * n);
    int row = 0;
    for (const Mat& s : basis) {
        stacked.row(row++) = Eigen::Map<const Eigen::VectorXd>(s.data(), n * n);
    }
    for (int a = 0; a < m; ++a)
        for (int b = a + 1; b < m; ++b) {
            const Mat c = basis[a] * basis[b] - basis[b] * basis[a];
            stacked.row(row++) = Eigen::Map<const Eigen::VectorXd>(c.data(), n * n);
        }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(stacked);
    return static_cast<int>(qr.rank());
}

/// Uniformly sample a McCann geodesic into a covariance curve.
inline CovCurve sample_mccann(const MccannGeodesic& g, int k) {
    if (k < 1) throw UsageError("sample_mccann: need at least one segment");
    std::vector<SpdMatrix> samples;
    samples.reserve(k + 1);
    for (int i = 0; i <= k; ++i)
        samples.push_back(mccann_point(g, static_cast<double>(i) / k));
    return CovCurve(std::move(samples));
}

/// Closed Gaussian-triangle curve: three McCann edges traversed on equal time
/// thirds, with knots at the corners. k is rounded up to a multiple of 3.
inline CovCurve sample_triangle(const SpdMatrix& sigma1, const SpdMatrix& sigma2,
                                const SpdMatrix& sigma3, int k) {
    const int per_edge = std::max(1, (k + 2) / 3);
    const MccannGeodesic e12(sigma1, sigma2);
    const MccannGeodesic e23(sigma2, sigma3);
    const MccannGeodesic e31(sigma3, sigma1);
    std::vector<SpdMatrix> samples;
    samples.reserve(3 * per_edge + 1);
    for (int i = 0; i <= per_edge; ++i)
        samples.push_back(mccann_point(e12, static_cast<double>(i) / per_edge));
    for (int i = 1; i <= per_edge; ++i)
        samples.push_back(mccann_point(e23, static_cast<double>(i) / per_edge));
    for (int i = 1; i <= per_edge; ++i)
        samples.push_back(mccann_point(e31, static_cast<double>(i) / per_edge));
    return CovCurve(std::move(samples), {per_edge, 2 * per_edge});
}

/// Concatenate curves end-to-start into one curve with knots at the joins.
/// Endpoints must match to `tol` relative to the magnitude of the join.
inline CovCurve concatenate(const std::vector<CovCurve>& parts, double tol = 1e-8) {
    if (parts.empty()) throw UsageError("concatenate: no curves");
    std::vector<SpdMatrix> samples = parts.front().samples();
    std::vector<int> knots = parts.front().knots();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Mat& tail = samples.back().mat();
        const Mat& head = parts[p].samples().front().mat();
        if ((tail - head).norm() > tol * std::max(1.0, tail.norm()))
            throw UsageError("concatenate: curve " + std::to_string(p) +
                             " does not start where the previous one ends");
        const int offset = static_cast<int>(samples.size()) - 1;
        knots.push_back(offset);
        for (int idx : parts[p].knots()) knots.push_back(offset + idx);
        for (std::size_t i = 1; i < parts[p].samples().size(); ++i)
            samples.push_back(parts[p].samples()[i]);
    }
    return CovCurve(std::move(samples), std::move(knots));
}

} // namespace omt

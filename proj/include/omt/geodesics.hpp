#pragma once

#include "omt/connection.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace omt {

/// State/costate pair (Phi_t, Lambda_t) of the normal-geodesic Hamiltonian
/// flow. Lambda is a general n x n matrix; nothing in the flow requires it to
/// stay invertible.
struct GeodesicState {
    Mat phi;
    Mat lambda;
};

namespace detail {

inline Mat geodesic_control_raw(const BundleContext& ctx, const Mat& phi, const Mat& lambda) {
    Mat sigma = phi * ctx.sigma_ref.mat() * phi.transpose();
    sigma = 0.5 * (sigma + sigma.transpose()).eval();
    const Mat rhs = -0.5 * (phi * lambda.transpose() + lambda * phi.transpose());
    return lyapunov_raw(sigma, 0.5 * (rhs + rhs.transpose()));
}

} // namespace detail

/// Optimal control of the geodesic flow,
///   A = -1/2 L_{pi(Phi)}(Phi Lambda^T + Lambda Phi^T).
inline SymMatrix geodesic_control(const BundleContext& ctx, const GeodesicState& state) {
    if (state.phi.rows() != ctx.dim() || state.lambda.rows() != ctx.dim())
        throw UsageError("geodesic_control: dimension mismatch");
    return SymMatrix(detail::geodesic_control_raw(ctx, state.phi, state.lambda));
}

/// Hamiltonian trace(A Phi Sigma_ref Phi^T A + Lambda^T A Phi) at the optimal
/// control; conserved along geodesic_flow.
inline double hamiltonian(const BundleContext& ctx, const GeodesicState& state) {
    const Mat a = detail::geodesic_control_raw(ctx, state.phi, state.lambda);
    const Mat sigma = state.phi * ctx.sigma_ref.mat() * state.phi.transpose();
    return (a * sigma * a).trace() + (state.lambda.transpose() * a * state.phi).trace();
}

/// Costate from the momentum split of the proof of the IMT necessary
/// conditions: Pi = -1/2 (Phi Lambda^T + Lambda Phi^T) (symmetric, equals
/// dSigma/dt) and Omega = 1/2 (Phi Lambda^T - Lambda Phi^T) (skew, conserved).
inline Mat costate_from_momenta(const TransportFactor& phi0, const SymMatrix& pi0,
                                const SkewMatrix& omega0) {
    if (phi0.dim() != pi0.dim() || phi0.dim() != omega0.dim())
        throw UsageError("costate_from_momenta: dimension mismatch");
    const Mat inv_t = phi0.mat().inverse().transpose();
    return (-pi0.mat() - omega0.mat()) * inv_t;
}

/// Inverse split: recover (Pi, Omega) from a state/costate pair.
inline std::pair<SymMatrix, SkewMatrix> momenta_from_costate(const GeodesicState& state) {
    const Mat pl = state.phi * state.lambda.transpose();
    return {SymMatrix(-0.5 * (pl + pl.transpose())), SkewMatrix(0.5 * (pl - pl.transpose()))};
}

namespace detail {

struct FlowRhs {
    const BundleContext& ctx;

    void operator()(const Mat& phi, const Mat& lambda, Mat& dphi, Mat& dlambda) const {
        const Mat a = geodesic_control_raw(ctx, phi, lambda);
        dphi = a * phi;
        dlambda = -a * (lambda + 2.0 * a * phi * ctx.sigma_ref.mat());
    }
};

// RK4 over [0,1]; on_node is called with (k, phi, lambda) after every node
// including the initial one. Throws IntegrationBreakdown when det(Phi) falls
// below 1e-10.
template <typename NodeFn>
inline void integrate_flow(const BundleContext& ctx, const Mat& phi0, const Mat& lambda0,
                           int steps, NodeFn&& on_node) {
    if (steps < 1) throw UsageError("geodesic_flow: need at least one step");
    const double h = 1.0 / steps;
    const FlowRhs rhs{ctx};
    Mat phi = phi0, lambda = lambda0;
    Mat k1p, k1l, k2p, k2l, k3p, k3l, k4p, k4l;
    on_node(0, phi, lambda);
    for (int k = 0; k < steps; ++k) {
        rhs(phi, lambda, k1p, k1l);
        rhs(phi + 0.5 * h * k1p, lambda + 0.5 * h * k1l, k2p, k2l);
        rhs(phi + 0.5 * h * k2p, lambda + 0.5 * h * k2l, k3p, k3l);
        rhs(phi + h * k3p, lambda + h * k3l, k4p, k4l);
        phi += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        lambda += h / 6.0 * (k1l + 2.0 * k2l + 2.0 * k3l + k4l);
        const double t = static_cast<double>(k + 1) * h;
        if (!(phi.determinant() > 1e-10))
            throw IntegrationBreakdown(
                "geodesic_flow: det(Phi) = " + std::to_string(phi.determinant()) +
                    " at t = " + std::to_string(t) + ", factor left GL+(n)",
                t);
        on_node(k + 1, phi, lambda);
    }
}

} // namespace detail

/// Integrates the normal-geodesic equations
///   dPhi/dt = A Phi,  dLambda/dt = -A (Lambda + 2 A Phi Sigma_ref)
/// with fixed-step classical RK4 over [0,1].
inline std::vector<GeodesicState> geodesic_flow(const BundleContext& ctx,
                                                const TransportFactor& phi0, const Mat& lambda0,
                                                int steps) {
    if (phi0.dim() != ctx.dim() || lambda0.rows() != ctx.dim() || lambda0.cols() != ctx.dim())
        throw UsageError("geodesic_flow: dimension mismatch");
    std::vector<GeodesicState> out;
    out.reserve(steps + 1);
    detail::integrate_flow(ctx, phi0.mat(), lambda0, steps,
                           [&](int, const Mat& p, const Mat& l) {
                               out.push_back(GeodesicState{p, l});
                           });
    return out;
}

/// Isoparallel mass transport data: connect sigma_in to sigma_fn by a minimal
/// length covariance curve whose parallel transport is phi_des.
struct ImtProblem {
    SpdMatrix sigma_in;
    SpdMatrix sigma_fn;
    TransportFactor phi_des;
    BundleContext ctx;
    int steps = 1000;
    int continuation_steps = 10;
    double tol = 1e-8;
    int max_iters = 60;
};

struct ImtSolution {
    HorizontalLift lift;
    Mat lambda0;
    SkewMatrix omega;
    double length = 0.0;
    double residual = 0.0;
};

namespace detail {

// Packing of the shooting unknowns (Pi, Omega) into a flat vector:
// symmetric upper triangle first, then the strict upper triangle of Omega.
struct MomentaCoords {
    int n;

    int size() const { return n * n; }

    Vec pack(const Mat& pi, const Mat& omega) const {
        Vec theta(size());
        int idx = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) theta(idx++) = pi(i, j);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) theta(idx++) = omega(i, j);
        return theta;
    }

    void unpack(const Vec& theta, Mat& pi, Mat& omega) const {
        pi = Mat::Zero(n, n);
        omega = Mat::Zero(n, n);
        int idx = 0;
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                pi(i, j) = theta(idx);
                pi(j, i) = theta(idx);
                ++idx;
            }
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                omega(i, j) = theta(idx);
                omega(j, i) = -theta(idx);
                ++idx;
            }
    }
};

struct ShootOutcome {
    bool ok = false;
    double norm = kInf;
    Vec residual;
    Mat phi_end;
};

inline ShootOutcome shoot(const BundleContext& ctx, const Mat& phi_in, const Vec& theta,
                          const MomentaCoords& coords, const Mat& target, int steps) {
    ShootOutcome out;
    Mat pi, omega;
    coords.unpack(theta, pi, omega);
    const Mat lambda0 = (-pi - omega) * phi_in.inverse().transpose();
    Mat phi_end, lambda_end;
    try {
        integrate_flow(ctx, phi_in, lambda0, steps, [&](int, const Mat& p, const Mat&) {
            phi_end = p;
        });
    } catch (const IntegrationBreakdown&) {
        return out;  // rejected trial point
    }
    const Mat diff = phi_end - target;
    out.ok = true;
    out.residual = Eigen::Map<const Eigen::VectorXd>(diff.data(), diff.size());
    out.norm = out.residual.norm();
    out.phi_end = phi_end;
    return out;
}

// Levenberg-Marquardt with a forward-difference Jacobian on the shooting
// residual F(theta) = Phi_1(theta) - target.
inline Vec levenberg_solve(const BundleContext& ctx, const Mat& phi_in,
                           const MomentaCoords& coords, const Mat& target, int steps, Vec theta,
                           double tol, int max_iters, int stage, double* out_norm) {
    ShootOutcome base = shoot(ctx, phi_in, theta, coords, target, steps);
    if (!base.ok)
        throw NonconvergenceError("imt_solve: integration breakdown at the start of stage " +
                                      std::to_string(stage),
                                  kInf);
    double lambda_damp = 1e-3;
    const int m = coords.size();
    Eigen::MatrixXd jac(m, m);
    for (int iter = 0; iter < max_iters; ++iter) {
        if (base.norm <= tol) break;
        const double fd_step = 1e-6 * (1.0 + theta.norm());
        for (int c = 0; c < m; ++c) {
            Vec probe = theta;
            probe(c) += fd_step;
            const ShootOutcome col = shoot(ctx, phi_in, probe, coords, target, steps);
            if (!col.ok)
                throw NonconvergenceError(
                    "imt_solve: integration breakdown while differencing, stage " +
                        std::to_string(stage),
                    base.norm);
            jac.col(c) = (col.residual - base.residual) / fd_step;
        }
        const Eigen::MatrixXd jtj = jac.transpose() * jac;
        const Vec jtf = jac.transpose() * base.residual;
        bool accepted = false;
        for (int attempt = 0; attempt < 24; ++attempt) {
            Eigen::MatrixXd damped = jtj;
            damped.diagonal().array() += lambda_damp;
            const Vec delta = damped.ldlt().solve(-jtf);
            const ShootOutcome trial = shoot(ctx, phi_in, theta + delta, coords, target, steps);
            if (trial.ok && trial.norm < base.norm) {
                theta += delta;
                base = trial;
                lambda_damp = std::max(lambda_damp / 10.0, 1e-14);
                accepted = true;
                break;
            }
            lambda_damp *= 10.0;
            if (lambda_damp > 1e14) break;
        }
        if (!accepted) break;
    }
    *out_norm = base.norm;
    return theta;
}

} // namespace detail

/// Shooting solver for the isoparallel mass transport problem: finds momenta
/// (Pi_0, Omega_0) whose geodesic flow from the fiber of sigma_in ends at
/// phi_des * Phi_in. The fiber-rotation gap between phi_des and the Monge map
/// is closed by continuation along its one-parameter rotation ray, starting
/// from the McCann initializer (Pi_0 = dSigma/dt at 0, Omega_0 = 0).
inline ImtSolution imt_solve(const ImtProblem& problem) {
    const int n = problem.sigma_in.dim();
    if (problem.sigma_fn.dim() != n || problem.phi_des.dim() != n || problem.ctx.dim() != n)
        throw UsageError("imt_solve: dimension mismatch");
    if (problem.continuation_steps < 1)
        throw UsageError("imt_solve: continuation_steps must be positive");
    const double push_res =
        (congruence(problem.phi_des, problem.sigma_in).mat() - problem.sigma_fn.mat()).norm();
    if (push_res > 1e-8 * std::max(1.0, problem.sigma_fn.mat().norm()))
        throw UsageError("imt_solve: phi_des does not push sigma_in to sigma_fn (residual " +
                         std::to_string(push_res) + ")");

    const Mat phi_in =
        sym_sqrt(problem.sigma_in).mat() * spd_inv_sqrt(problem.ctx.sigma_ref).mat();
    const Mat phi_star = monge_map(problem.sigma_in, problem.sigma_fn).mat();

    // Holonomy gap phi_des * phi_star^{-1}, expressed as a rotation ray in the
    // isotropy group of sigma_fn.
    const Mat fn_rt = sym_sqrt(problem.sigma_fn).mat();
    const Mat fn_irt = spd_inv_sqrt(problem.sigma_fn).mat();
    Mat gap_ortho = fn_irt * problem.phi_des.mat() * phi_star.inverse() * fn_rt;
    {
        // snap to the nearest rotation; the input tolerance allows ~1e-8 drift
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(gap_ortho,
                                              Eigen::ComputeFullU | Eigen::ComputeFullV);
        gap_ortho = svd.matrixU() * svd.matrixV().transpose();
    }
    const Mat gap_log = so_log(gap_ortho, 1e-6).mat();
    const double gap_size = gap_log.norm();

    // McCann initializer: Pi_0 = dSigma/dt(0) of the McCann geodesic.
    const Mat a0 = phi_star - Mat::Identity(n, n);
    Mat pi0 = a0 * problem.sigma_in.mat() + problem.sigma_in.mat() * a0;
    Mat omega0 = Mat::Zero(n, n);

    const detail::MomentaCoords coords{n};
    Vec theta = coords.pack(pi0, omega0);

    const int stages = (gap_size > 1e-12) ? problem.continuation_steps : 0;
    double norm = kInf;
    for (int j = 0; j <= stages; ++j) {
        const double s = (stages == 0) ? 1.0 : static_cast<double>(j) / stages;
        const Mat rot = fn_rt * skew_exp(SkewMatrix(s * gap_log)).mat() * fn_irt;
        const Mat target = rot * phi_star * phi_in;
        if (j == 1 && theta.head(n * (n + 1) / 2).norm() < 1e-6) {
            // The zero-momentum point is a stationary trap for isoholonomic
            // data (sigma_in = sigma_fn): anisotropic Pi is needed before the
            // endpoint can respond to Omega. Seed it deterministically.
            Mat seed = Mat::Zero(n, n);
            seed(0, 0) = 1.0;
            seed(1, 1) = -1.0;
            const Mat scaled = sym_sqrt(problem.sigma_in).mat() * seed *
                               sym_sqrt(problem.sigma_in).mat();
            theta = coords.pack(0.5 * scaled, omega0);
        }
        theta = detail::levenberg_solve(problem.ctx, phi_in, coords, target, problem.steps,
                                        theta, problem.tol, problem.max_iters, j, &norm);
        if (norm > problem.tol)
            throw NonconvergenceError("imt_solve: continuation stage " + std::to_string(j) +
                                          "/" + std::to_string(stages) +
                                          " stalled at residual " + std::to_string(norm),
                                      norm);
    }

    // Assemble the solution lift from the converged momenta.
    Mat pi_fin, omega_fin;
    coords.unpack(theta, pi_fin, omega_fin);
    const Mat lambda0 = (-pi_fin - omega_fin) * phi_in.inverse().transpose();

    std::vector<SpdMatrix> samples;
    std::vector<TransportFactor> factors;
    std::vector<SymMatrix> controls;
    samples.reserve(problem.steps + 1);
    factors.reserve(problem.steps + 1);
    controls.reserve(problem.steps + 1);
    detail::integrate_flow(problem.ctx, phi_in, lambda0, problem.steps,
                           [&](int, const Mat& p, const Mat& l) {
                               samples.emplace_back(congruence(p, problem.ctx.sigma_ref));
                               factors.emplace_back(p);
                               controls.emplace_back(
                                   detail::geodesic_control_raw(problem.ctx, p, l));
                           });
    const Mat final_target = problem.phi_des.mat() * phi_in;
    const double final_res = (factors.back().mat() - final_target).norm();

    double length = 0.0;
    const double h = 1.0 / problem.steps;
    for (int k = 0; k <= problem.steps; ++k) {
        const double speed = std::sqrt(std::max(
            0.0, (controls[k].mat() * samples[k].mat() * controls[k].mat()).trace()));
        length += ((k == 0 || k == problem.steps) ? 0.5 : 1.0) * speed * h;
    }

    HorizontalLift lift{CovCurve(std::move(samples)), std::move(factors), std::move(controls),
                        0.0};
    return ImtSolution{std::move(lift), lambda0, SkewMatrix(omega_fin), length, final_res};
}

/// Max interior defect of the reference-free necessary conditions
///   d2Sigma/dt2 - (Sigma L(dSigma/dt)^2 + L(dSigma/dt)^2 Sigma)
///     = Omega L(dSigma/dt) - L(dSigma/dt) Omega,
/// with both time derivatives taken by centered differences.
inline double necessary_conditions_residual(const CovCurve& curve, const SkewMatrix& omega) {
    if (curve.dim() != omega.dim())
        throw UsageError("necessary_conditions_residual: dimension mismatch");
    const auto& s = curve.samples();
    const double h = curve.step();
    const auto bounds = curve.piece_bounds();
    double worst = 0.0;
    for (std::size_t p = 0; p + 1 < bounds.size(); ++p) {
        for (int k = bounds[p] + 1; k < bounds[p + 1]; ++k) {
            const Mat sdot = (s[k + 1].mat() - s[k - 1].mat()) / (2.0 * h);
            const Mat sddot = (s[k + 1].mat() - 2.0 * s[k].mat() + s[k - 1].mat()) / (h * h);
            const Mat a = detail::lyapunov_raw(s[k].mat(), 0.5 * (sdot + sdot.transpose()));
            const Mat a2 = a * a;
            const Mat lhs = sddot - (s[k].mat() * a2 + a2 * s[k].mat());
            const Mat rhs = omega.mat() * a - a * omega.mat();
            worst = std::max(worst, (lhs - rhs).norm());
        }
    }
    return worst;
}

inline double necessary_conditions_residual(const ImtSolution& solution) {
    return necessary_conditions_residual(solution.lift.curve, solution.omega);
}

/// Pointwise congruence of an isoholonomic solution curve by an element of
/// the isotropy group of its (common) endpoint; preserves Otto length and the
/// necessary-conditions residual across the one-parameter solution family.
inline CovCurve isoholonomic_transform(const ImtSolution& solution,
                                       const TransportFactor& theta) {
    const CovCurve& curve = solution.lift.curve;
    if (theta.dim() != curve.dim())
        throw UsageError("isoholonomic_transform: dimension mismatch");
    if (!curve.is_closed())
        throw UsageError("isoholonomic_transform: solution curve is not a loop "
                         "(isoholonomic setup requires sigma_in = sigma_fn)");
    const SpdMatrix& sigma_in = curve.samples().front();
    const double fix_res = (congruence(theta, sigma_in).mat() - sigma_in.mat()).norm();
    if (fix_res > 1e-8 * std::max(1.0, sigma_in.mat().norm()))
        throw UsageError("isoholonomic_transform: theta does not fix sigma_in (residual " +
                         std::to_string(fix_res) + ")");
    std::vector<SpdMatrix> samples;
    samples.reserve(curve.samples().size());
    for (const auto& sk : curve.samples()) samples.push_back(congruence(theta, sk));
    return CovCurve(std::move(samples), curve.knots());
}

} // namespace omt

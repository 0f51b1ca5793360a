#pragma once

#include "omt/geodesics.hpp"

#include <optional>
#include <string>
#include <vector>

namespace omt {

/// Registration of sigma_i to sigma_j through a reference covariance:
/// the composition monge(ref -> j) * monge(i -> ref). Pushes sigma_i to
/// sigma_j but is generally not symmetric.
inline TransportFactor registration_map(const SpdMatrix& sigma_i, const SpdMatrix& sigma_j,
                                        const SpdMatrix& sigma_ref) {
    Mat m = monge_map(sigma_ref, sigma_j).mat() * monge_map(sigma_i, sigma_ref).mat();
    return TransportFactor(std::move(m));
}

/// Prescribed parallel transport for the polygon edge (i, j); the value that
/// makes the i -> ref -> j -> i triangle mixing-free. Same map as
/// registration_map, named for intent.
inline TransportFactor edge_target(const SpdMatrix& sigma_i, const SpdMatrix& sigma_j,
                                   const SpdMatrix& sigma_ref) {
    return registration_map(sigma_i, sigma_j, sigma_ref);
}

/// Two-matrix geometric mean gm2 = Si^{1/2} (Si^{1/2} Sj^{-1} Si^{1/2})^{-1/2} Si^{1/2}.
inline SpdMatrix gm2(const SpdMatrix& sigma_i, const SpdMatrix& sigma_j) {
    if (sigma_i.dim() != sigma_j.dim()) throw UsageError("gm2: dimension mismatch");
    const Mat rt = sym_sqrt(sigma_i).mat();
    const Mat inner =
        spd_inv_sqrt(SpdMatrix(rt * sigma_j.mat().inverse() * rt.transpose())).mat();
    Mat m = rt * inner * rt;
    return SpdMatrix(0.5 * (m + m.transpose()));
}

/// Wasserstein barycenter of the vertices with uniform weights: fixed point of
///   Sigma <- Sigma^{-1/2} ((1/N) sum_i (Sigma^{1/2} Sigma_i Sigma^{1/2})^{1/2})^2 Sigma^{-1/2},
/// started at the arithmetic mean.
inline SpdMatrix ac_barycenter(const std::vector<SpdMatrix>& vertices, double tol = 1e-12,
                               int max_iters = 200) {
    if (vertices.empty()) throw UsageError("ac_barycenter: need at least one vertex");
    const int n = vertices.front().dim();
    for (const auto& v : vertices)
        if (v.dim() != n) throw UsageError("ac_barycenter: vertices of mixed dimension");
    if (vertices.size() == 1) return vertices.front();

    Mat mean = Mat::Zero(n, n);
    for (const auto& v : vertices) mean += v.mat();
    SpdMatrix bary(mean / static_cast<double>(vertices.size()));

    double move = kInf;
    for (int iter = 0; iter < max_iters; ++iter) {
        const Mat rt = sym_sqrt(bary).mat();
        const Mat irt = spd_inv_sqrt(bary).mat();
        Mat acc = Mat::Zero(n, n);
        for (const auto& v : vertices)
            acc += sym_sqrt(SpdMatrix(rt * v.mat() * rt.transpose())).mat();
        acc /= static_cast<double>(vertices.size());
        SpdMatrix next(irt * acc * acc * irt);
        move = (next.mat() - bary.mat()).norm();
        bary = std::move(next);
        if (move < tol) return bary;
    }
    throw NonconvergenceError("ac_barycenter: no fixed point after " +
                                  std::to_string(max_iters) + " iterations (last move " +
                                  std::to_string(move) + ")",
                              move);
}

/// Ando-Li-Mathias geometric mean: each tuple slot is replaced by the mean of
/// the other N-1 matrices (gm2 for a pair) until the tuple collapses.
inline SpdMatrix alm_mean(const std::vector<SpdMatrix>& vertices, double tol = 1e-12,
                          int max_iters = 200) {
    if (vertices.size() < 2) throw UsageError("alm_mean: need at least two matrices");
    const int n = vertices.front().dim();
    for (const auto& v : vertices)
        if (v.dim() != n) throw UsageError("alm_mean: vertices of mixed dimension");
    if (vertices.size() == 2) return gm2(vertices[0], vertices[1]);

    std::vector<SpdMatrix> tuple = vertices;
    double diameter = kInf;
    for (int iter = 0; iter < max_iters; ++iter) {
        std::vector<SpdMatrix> next;
        next.reserve(tuple.size());
        for (std::size_t i = 0; i < tuple.size(); ++i) {
            std::vector<SpdMatrix> others;
            others.reserve(tuple.size() - 1);
            for (std::size_t j = 1; j < tuple.size(); ++j)
                others.push_back(tuple[(i + j) % tuple.size()]);
            next.push_back(others.size() == 2 ? gm2(others[0], others[1])
                                              : alm_mean(others, tol, max_iters));
        }
        tuple = std::move(next);
        diameter = 0.0;
        for (std::size_t i = 0; i < tuple.size(); ++i)
            for (std::size_t j = i + 1; j < tuple.size(); ++j)
                diameter = std::max(diameter, (tuple[i].mat() - tuple[j].mat()).norm());
        if (diameter < tol) return tuple.front();
    }
    throw NonconvergenceError("alm_mean: tuple diameter " + std::to_string(diameter) +
                                  " after " + std::to_string(max_iters) + " iterations",
                              diameter);
}

enum class RefPolicy { explicit_ref, agueh_carlier, ando_li_mathias };

/// A mixing-free transportation cycle through the given vertices. The
/// reference covariance registers particle positions between stops; each edge
/// is an isoparallel transport problem.
struct PolygonSpec {
    std::vector<SpdMatrix> vertices;
    RefPolicy policy = RefPolicy::agueh_carlier;
    std::optional<SpdMatrix> sigma_ref;  // required for RefPolicy::explicit_ref
    int steps_per_edge = 1000;
    int continuation_steps = 10;
    double tol = 1e-8;
    int max_iters = 60;
    double holonomy_tol = 1e-3;
};

struct PolygonSolution {
    std::vector<ImtSolution> edges;
    SpdMatrix sigma_ref;
    double perimeter = 0.0;
    TransportFactor total_holonomy;
    double holonomy_deviation = 0.0;
    bool holonomy_ok = false;
};

/// Solves the polygon: resolves the reference covariance, solves one edge IMT
/// problem per consecutive vertex pair (wrapping N -> 1), sums the Otto
/// lengths, and verifies that parallel transport around the concatenated loop
/// is the identity. A verification failure is flagged, never silently passed.
inline PolygonSolution solve_polygon(const PolygonSpec& spec) {
    const std::size_t n_vertices = spec.vertices.size();
    if (n_vertices < 3) throw UsageError("solve_polygon: need at least three vertices");
    const int n = spec.vertices.front().dim();
    for (const auto& v : spec.vertices)
        if (v.dim() != n) throw UsageError("solve_polygon: vertices of mixed dimension");

    SpdMatrix sigma_ref = [&] {
        switch (spec.policy) {
            case RefPolicy::explicit_ref:
                if (!spec.sigma_ref)
                    throw UsageError("solve_polygon: explicit policy needs sigma_ref");
                return *spec.sigma_ref;
            case RefPolicy::agueh_carlier:
                return ac_barycenter(spec.vertices);
            case RefPolicy::ando_li_mathias:
                return alm_mean(spec.vertices);
        }
        throw UsageError("solve_polygon: unknown reference policy");
    }();

    const BundleContext ctx{sigma_ref};
    std::vector<ImtSolution> edges;
    edges.reserve(n_vertices);
    double perimeter = 0.0;
    for (std::size_t i = 0; i < n_vertices; ++i) {
        const std::size_t j = (i + 1) % n_vertices;
        ImtProblem problem{spec.vertices[i],
                           spec.vertices[j],
                           edge_target(spec.vertices[i], spec.vertices[j], sigma_ref),
                           ctx,
                           spec.steps_per_edge,
                           spec.continuation_steps,
                           spec.tol,
                           spec.max_iters};
        try {
            edges.push_back(imt_solve(problem));
        } catch (const NonconvergenceError& e) {
            throw NonconvergenceError("solve_polygon: edge " + std::to_string(i + 1) + "->" +
                                          std::to_string(j + 1) + " failed: " + e.what(),
                                      e.residual());
        }
        perimeter += edges.back().length;
    }

    std::vector<CovCurve> parts;
    parts.reserve(edges.size());
    for (const auto& e : edges) parts.push_back(e.lift.curve);
    const CovCurve loop = concatenate(parts, 1e-5);
    const TransportFactor par = parallel_transport(ctx, loop);
    const double deviation = (par.mat() - Mat::Identity(n, n)).norm();

    return PolygonSolution{std::move(edges),   std::move(sigma_ref),        perimeter,
                           par,                deviation,                   deviation <= spec.holonomy_tol};
}

} // namespace omt

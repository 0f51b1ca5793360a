#include "omt/connection.hpp"

#include "support/generators.hpp"

#include <catch_amalgamated.hpp>

using namespace omt;

namespace {

Mat diag2(double a, double b) {
    Mat m = Mat::Zero(2, 2);
    m(0, 0) = a;
    m(1, 1) = b;
    return m;
}

SpdMatrix paper_sigma_in() {
    Mat m(2, 2);
    m << 3.0, 2.0, 2.0, 3.0;
    return SpdMatrix(m);
}

SpdMatrix paper_sigma_fn() {
    Mat m(2, 2);
    m << 3.0, -2.0, -2.0, 3.0;
    return SpdMatrix(m);
}

std::vector<SpdMatrix> cycle_vertices() {
    Mat v1(2, 2), v2(2, 2), v3(2, 2);
    v1 << 0.3, 0.0, 0.0, 1.0;
    v2 << 1.6, 0.6, 0.6, 0.9;
    v3 << 2.3, -1.2, -1.2, 0.8;
    return {SpdMatrix(v1), SpdMatrix(v2), SpdMatrix(v3)};
}

/// Fiber element of SO(n, sigma_ref) built by conjugating a rotation.
TransportFactor isotropy_element(const SpdMatrix& sigma_ref, const SkewMatrix& w) {
    return TransportFactor(sym_sqrt(sigma_ref).mat() * skew_exp(w).mat() *
                           spd_inv_sqrt(sigma_ref).mat());
}

double lift_terminal_error(const BundleContext& ctx, const MccannGeodesic& g, int k) {
    const Mat phi_in = sym_sqrt(g.sigma_start()).mat() * spd_inv_sqrt(ctx.sigma_ref).mat();
    const HorizontalLift lift = horizontal_lift(ctx, sample_mccann(g, k),
                                                TransportFactor(phi_in));
    const Mat par = lift.factors.back().mat() * phi_in.inverse();
    return (par - g.monge().mat()).norm();
}

// Same geodesic traversed with a smoothstep clock. Parallel transport is
// parameterization-invariant, so the Monge map stays the oracle, but the lift
// flow is no longer affine in t and the integrator shows its true order.
double reparam_lift_terminal_error(const BundleContext& ctx, const MccannGeodesic& g, int k) {
    std::vector<SpdMatrix> samples;
    samples.reserve(k + 1);
    for (int i = 0; i <= k; ++i) {
        const double t = static_cast<double>(i) / k;
        samples.push_back(mccann_point(g, t * t * (3.0 - 2.0 * t)));
    }
    const Mat phi_in = sym_sqrt(g.sigma_start()).mat() * spd_inv_sqrt(ctx.sigma_ref).mat();
    const HorizontalLift lift =
        horizontal_lift(ctx, CovCurve(std::move(samples)), TransportFactor(phi_in));
    const Mat par = lift.factors.back().mat() * phi_in.inverse();
    return (par - g.monge().mat()).norm();
}

} // namespace

TEST_CASE("project basics and fiber invariance") {
    const BundleContext ctx = BundleContext::standard(2);
    CHECK((project(ctx, TransportFactor::identity(2)).mat() - Mat::Identity(2, 2)).norm() <
          1e-15);
    CHECK((project(ctx, TransportFactor(diag2(2.0, 1.0))).mat() - diag2(4.0, 1.0)).norm() <
          1e-15);

    std::mt19937 rng(21);
    for (int rep = 0; rep < 40; ++rep) {
        const BundleContext rctx{testing::random_spd(rng, 3)};
        const Mat phi = testing::random_gaussian(rng, 3, 3) + 3.0 * Mat::Identity(3, 3);
        const TransportFactor theta = isotropy_element(rctx.sigma_ref,
                                                       testing::random_skew(rng, 3));
        const Mat lhs = project(rctx, Mat(phi * theta.mat())).mat();
        const Mat rhs = project(rctx, phi).mat();
        CHECK((lhs - rhs).norm() < 1e-12 * std::max(1.0, rhs.norm()));
    }
}

TEST_CASE("horizontal_lift of a constant curve is constant") {
    const BundleContext ctx = BundleContext::standard(2);
    const SpdMatrix sigma(diag2(2.0, 0.5));
    std::vector<SpdMatrix> samples(11, sigma);
    const Mat phi_in = sym_sqrt(sigma).mat();
    const HorizontalLift lift =
        horizontal_lift(ctx, CovCurve(std::move(samples)), TransportFactor(phi_in));
    for (const auto& f : lift.factors) CHECK((f.mat() - phi_in).norm() < 1e-14);
    for (const auto& c : lift.controls) CHECK(c.mat().norm() < 1e-14);
}

TEST_CASE("horizontal_lift integrates the scalar McCann flow") {
    const BundleContext ctx = BundleContext::standard(2);
    const MccannGeodesic g(SpdMatrix::identity(2), SpdMatrix(diag2(4.0, 4.0)));
    const HorizontalLift lift =
        horizontal_lift(ctx, sample_mccann(g, 1000), TransportFactor::identity(2));
    CHECK((lift.factors.back().mat() - 2.0 * Mat::Identity(2, 2)).norm() < 1e-8);
}

TEST_CASE("parallel transport along a McCann geodesic is the Monge map") {
    const BundleContext ctx = BundleContext::standard(2);
    const MccannGeodesic g(paper_sigma_in(), paper_sigma_fn());
    CHECK(lift_terminal_error(ctx, g, 1000) < 1e-6);
}

TEST_CASE("lift error decays at fourth order in the step") {
    const BundleContext ctx = BundleContext::standard(2);
    const MccannGeodesic g(paper_sigma_in(), paper_sigma_fn());
    // On the geodesic's own affine clock the lift flow is linear in t and the
    // integrator reproduces it to roundoff at any K.
    CHECK(lift_terminal_error(ctx, g, 50) < 1e-12);

    const double e50 = reparam_lift_terminal_error(ctx, g, 50);
    const double e100 = reparam_lift_terminal_error(ctx, g, 100);
    const double e200 = reparam_lift_terminal_error(ctx, g, 200);
    CHECK(e50 / e100 >= 8.0);
    CHECK(e100 / e200 >= 8.0);
}

TEST_CASE("horizontal_lift rejects an initial point off the fiber") {
    const BundleContext ctx = BundleContext::standard(2);
    const MccannGeodesic g(paper_sigma_in(), paper_sigma_fn());
    try {
        horizontal_lift(ctx, sample_mccann(g, 10), TransportFactor::identity(2));
        FAIL("expected UsageError");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("residual") != std::string::npos);
    }
}

TEST_CASE("lift controls match the closed-form McCann velocity at the nodes") {
    const BundleContext ctx = BundleContext::standard(2);
    const MccannGeodesic g(paper_sigma_in(), paper_sigma_fn());
    const int k = 100;
    const HorizontalLift lift = horizontal_lift(
        ctx, sample_mccann(g, k),
        TransportFactor(sym_sqrt(g.sigma_start()).mat()));
    for (int i = 0; i <= k; i += 10) {
        const Mat expect = mccann_velocity(g, static_cast<double>(i) / k).mat();
        CHECK((lift.controls[i].mat() - expect).norm() < 1e-10 * std::max(1.0, expect.norm()));
    }
}

TEST_CASE("parallel_transport of a constant curve is the identity") {
    const BundleContext ctx = BundleContext::standard(3);
    std::mt19937 rng(22);
    std::vector<SpdMatrix> samples(6, testing::random_spd(rng, 3));
    CHECK((parallel_transport(ctx, CovCurve(std::move(samples))).mat() -
           Mat::Identity(3, 3))
              .norm() < 1e-12);
}

TEST_CASE("loop holonomy lies in SO(n, Sigma_0)") {
    const BundleContext ctx = BundleContext::standard(2);
    std::mt19937 rng(23);
    const SpdMatrix s0 = testing::random_spd(rng, 2);
    const SpdMatrix s1 = testing::random_spd(rng, 2);
    const CovCurve loop = concatenate(
        {sample_mccann(MccannGeodesic(s0, s1), 400),
         sample_mccann(MccannGeodesic(s1, s0), 400)});
    REQUIRE(loop.is_closed());
    const TransportFactor theta = parallel_transport(ctx, loop);
    CHECK((congruence(theta, s0).mat() - s0.mat()).norm() < 1e-8);
    CHECK(std::abs(theta.mat().determinant() - 1.0) < 1e-10);
}

TEST_CASE("integrated triangle holonomy matches the closed-form composition") {
    const BundleContext ctx = BundleContext::standard(2);
    const auto v = cycle_vertices();
    const CovCurve tri = sample_triangle(v[0], v[1], v[2], 3000);
    REQUIRE(tri.is_closed());
    const Mat ode = parallel_transport(ctx, tri).mat();
    const Mat closed = triangle_holonomy(v[0], v[1], v[2]).mat();
    CHECK((ode - closed).norm() < 1e-6);
}

TEST_CASE("parallel transport is equivariant under the right action") {
    const BundleContext ctx = BundleContext::standard(2);
    std::mt19937 rng(24);
    const auto v = cycle_vertices();
    const CovCurve tri = sample_triangle(v[0], v[1], v[2], 300);
    const Mat base = sym_sqrt(v[0]).mat();
    const TransportFactor theta = isotropy_element(ctx.sigma_ref, testing::random_skew(rng, 2));
    const HorizontalLift l0 = horizontal_lift(ctx, tri, TransportFactor(base));
    const HorizontalLift l1 =
        horizontal_lift(ctx, tri, TransportFactor(Mat(base * theta.mat())));
    const Mat lhs = l1.factors.back().mat();
    const Mat rhs = l0.factors.back().mat() * theta.mat();
    CHECK((lhs - rhs).norm() < 1e-10 * std::max(1.0, rhs.norm()));

    // transport itself does not depend on the starting fiber point
    const Mat par0 = l0.factors.back().mat() * base.inverse();
    const Mat par1 = l1.factors.back().mat() * (base * theta.mat()).inverse();
    CHECK((par0 - par1).norm() < 1e-10 * std::max(1.0, par0.norm()));
}

TEST_CASE("otto_metric closed forms and bilinearity") {
    std::mt19937 rng(25);
    const SymMatrix s = testing::random_sym(rng, 2);
    const SymMatrix two_s(2.0 * s.mat());
    CHECK(otto_metric(SpdMatrix::identity(2), two_s, two_s) ==
          Catch::Approx((s.mat() * s.mat()).trace()).margin(1e-12));

    const SymMatrix two_i(2.0 * Mat::Identity(2, 2));
    CHECK(otto_metric(SpdMatrix::identity(2), two_i, two_i) == Catch::Approx(2.0).margin(1e-12));

    const SpdMatrix sigma = testing::random_spd(rng, 3);
    const SymMatrix v1 = testing::random_sym(rng, 3);
    const SymMatrix v2 = testing::random_sym(rng, 3);
    const double a = 3.7;
    CHECK(otto_metric(sigma, SymMatrix(a * v1.mat()), v2) ==
          Catch::Approx(a * otto_metric(sigma, v1, v2)).margin(1e-10));
    CHECK(otto_metric(sigma, v1, v2) == Catch::Approx(otto_metric(sigma, v2, v1)).margin(1e-12));
    CHECK(otto_metric(sigma, v1, v1) > 0.0);
}

TEST_CASE("sr_metric agrees with the Otto metric on horizontal vectors") {
    std::mt19937 rng(26);
    const BundleContext ctx = BundleContext::standard(2);
    CHECK(sr_metric(ctx, Mat::Identity(2, 2), Mat::Identity(2, 2)) ==
          Catch::Approx(2.0).margin(1e-14));

    for (int rep = 0; rep < 40; ++rep) {
        const BundleContext rctx{testing::random_spd(rng, 3)};
        const Mat phi = testing::random_gaussian(rng, 3, 3) + 3.0 * Mat::Identity(3, 3);
        const Mat a = testing::random_sym(rng, 3).mat();
        const Mat phidot = a * phi;
        const SpdMatrix sigma = project(rctx, phi);
        // d(pi)(phidot) = A Sigma + Sigma A
        const SymMatrix v(a * sigma.mat() + sigma.mat() * a);
        const double lhs = sr_metric(rctx, phidot, phidot);
        CHECK(lhs == Catch::Approx((a * sigma.mat() * a).trace()).epsilon(1e-12));
        CHECK(lhs == Catch::Approx(otto_metric(sigma, v, v)).epsilon(1e-9));
    }
}

TEST_CASE("curve_length: constant, geodesic, reparameterization") {
    const BundleContext ctx = BundleContext::standard(2);
    std::vector<SpdMatrix> constant(9, SpdMatrix(diag2(3.0, 0.25)));
    CHECK(curve_length(ctx, CovCurve(std::move(constant))) < 1e-12);

    const MccannGeodesic g(paper_sigma_in(), paper_sigma_fn());
    const double len = curve_length(ctx, sample_mccann(g, 2000));
    CHECK(std::abs(len - std::sqrt(w2_squared(g.sigma_start(), g.sigma_end()))) < 1e-5);

    std::vector<SpdMatrix> warped;
    const int k = 2000;
    for (int i = 0; i <= k; ++i) {
        const double t = static_cast<double>(i) / k;
        warped.push_back(mccann_point(g, t * t));
    }
    const double len_warped = curve_length(ctx, CovCurve(std::move(warped)));
    CHECK(std::abs(len_warped - len) < 1e-5);
}

TEST_CASE("l2_distance basics and the lower bound of the distance sandwich") {
    const BundleContext ctx = BundleContext::standard(2);
    CHECK(l2_distance(ctx, TransportFactor::identity(2), TransportFactor::identity(2)) <
          1e-15);
    CHECK(l2_distance(ctx, TransportFactor::identity(2),
                      TransportFactor(2.0 * Mat::Identity(2, 2))) ==
          Catch::Approx(std::sqrt(2.0)).margin(1e-14));

    std::mt19937 rng(27);
    for (int rep = 0; rep < 40; ++rep) {
        const SpdMatrix s0 = testing::random_spd(rng, 2);
        const SpdMatrix s1 = testing::random_spd(rng, 2);
        const MccannGeodesic g(s0, s1);
        const CovCurve curve = sample_mccann(g, 200);
        const Mat phi_in = sym_sqrt(s0).mat() * spd_inv_sqrt(ctx.sigma_ref).mat();
        const HorizontalLift lift = horizontal_lift(ctx, curve, TransportFactor(phi_in));
        const double d_r = l2_distance(ctx, lift.factors.front(), lift.factors.back());
        CHECK(d_r <= curve_length(ctx, curve) + 1e-8);
    }
}

TEST_CASE("bracket_span_rank certifies bracket generation") {
    CHECK(bracket_span_rank(2) == 4);
    CHECK(bracket_span_rank(3) == 9);
    CHECK(bracket_span_rank(4) == 16);
}

TEST_CASE("curve length does not depend on the bundle reference") {
    std::mt19937 rng(28);
    const MccannGeodesic g(testing::random_spd(rng, 2), testing::random_spd(rng, 2));
    const CovCurve curve = sample_mccann(g, 200);
    const double l_std = curve_length(BundleContext::standard(2), curve);
    const double l_ref = curve_length(BundleContext{testing::random_spd(rng, 2)}, curve);
    CHECK(std::abs(l_std - l_ref) < 1e-10 * std::max(1.0, l_std));
}

TEST_CASE("cov curve validation") {
    CHECK_THROWS_AS(CovCurve({SpdMatrix::identity(2)}), UsageError);
    std::vector<SpdMatrix> two(2, SpdMatrix::identity(2));
    CHECK_THROWS_AS(CovCurve(two, {0}), UsageError);
    CHECK_THROWS_AS(CovCurve(two, {5}), UsageError);
}

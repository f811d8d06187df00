#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "eltrack/reference.hpp"
#include "eltrack/rng.hpp"

using namespace eltrack;

TEST_CASE("sinusoid reference values and k_delta") {
    SECTION("zero amplitude") {
        const Reference r = make_sinusoid_ref({0.0}, {1.0}, {0.0});
        CHECK(r.k_delta == 0.0);
        const RefPoint p = r.eval(3.7);
        CHECK(p.q[0] == 0.0);
        CHECK(p.v[0] == 0.0);
    }
    SECTION("unit sinusoid") {
        const Reference r = make_sinusoid_ref({1.0}, {1.0}, {0.0});
        CHECK_THAT(r.k_delta, Catch::Matchers::WithinAbs(1.0, 1e-14));
        const RefPoint p = r.eval(0.4);
        CHECK_THAT(p.q[0], Catch::Matchers::WithinAbs(std::sin(0.4), 1e-14));
        CHECK_THAT(p.v[0], Catch::Matchers::WithinAbs(std::cos(0.4), 1e-14));
        CHECK_THAT(p.a[0], Catch::Matchers::WithinAbs(-std::sin(0.4), 1e-14));
        CHECK_THAT(p.j[0], Catch::Matchers::WithinAbs(-std::cos(0.4), 1e-14));
    }
    SECTION("frequency 2 dominates via acceleration") {
        const Reference r = make_sinusoid_ref({1.0}, {2.0}, {0.5});
        CHECK_THAT(r.k_delta, Catch::Matchers::WithinAbs(4.0, 1e-14));
    }
    SECTION("k_delta dominates a dense grid sup") {
        const Reference r = make_sinusoid_ref({1.5, 0.5}, {0.7, 3.0}, {0.1, 2.0});
        double sup = 0.0;
        for (int i = 0; i <= 5000; ++i) {
            const RefPoint p = r.eval(i * 0.004);
            sup = std::max({sup, norm(p.q), norm(p.v), norm(p.a)});
        }
        CHECK(sup <= r.k_delta);
    }
}

TEST_CASE("unforced reference solves the unforced dynamics") {
    const ELModel pend = make_pendulum();
    const Reference r = make_unforced_ref(pend, {0.5}, {0.0}, 10.0);
    CHECK(r.kind == "unforced");

    SECTION("dynamics residual along the reference") {
        for (int i = 0; i <= 1000; ++i) {
            const double t = 10.0 * i / 1000.0;
            const RefPoint p = r.eval(t);
            // D a + C v + g = 0
            const Vec res = pend.inertia(p.q) * p.a + pend.coriolis(p.q, p.v) * p.v + pend.gravity(p.q);
            REQUIRE(norm(res) <= 1e-6);
        }
    }
    SECTION("energy drift below 1e-6") {
        const double e0 = el_energy(pend, {0.5}, {0.0});
        double drift = 0.0;
        for (int i = 0; i <= 2000; ++i) {
            const RefPoint p = r.eval(10.0 * i / 2000.0);
            drift = std::max(drift, std::abs(el_energy(pend, p.q, p.v) - e0));
        }
        CHECK(drift < 1e-6);
    }
    SECTION("k_delta dominates a 10x finer grid") {
        double sup = 0.0;
        for (int i = 0; i <= 100000; ++i) {
            const RefPoint p = r.eval(10.0 * i / 100000.0);
            sup = std::max({sup, norm(p.q), norm(p.v), norm(p.a)});
        }
        CHECK(sup <= r.k_delta);
    }
    SECTION("jerk matches finite differences of acceleration") {
        const double eps = 1e-4;
        for (double t : {1.0, 3.3, 7.2}) {
            const RefPoint p = r.eval(t);
            const Vec ap = r.eval(t + eps).a, am = r.eval(t - eps).a;
            const double fd = (ap[0] - am[0]) / (2 * eps);
            REQUIRE_THAT(p.j[0], Catch::Matchers::WithinAbs(fd, 1e-4 * (1.0 + std::abs(fd))));
        }
    }
}

TEST_CASE("equilibrium unforced reference is identically zero") {
    const ELModel pend = make_pendulum();
    const Reference r = make_unforced_ref(pend, {0.0}, {0.0}, 2.0);
    for (double t : {0.0, 0.5, 1.7}) {
        const RefPoint p = r.eval(t);
        CHECK(norm(p.q) <= 1e-15);
        CHECK(norm(p.v) <= 1e-15);
        CHECK(norm(p.a) <= 1e-15);
    }
    CHECK(r.k_delta == 0.0);
}

TEST_CASE("unforced reference for the flexible-joint link uses the combined gravity") {
    const FlexJointModel fj = make_flexjoint(make_pendulum(), {25.0}, {0.5});
    const FlexJointChain fc = flexjoint_to_chain(fj);
    const Reference r = make_unforced_ref(fc.chain.base, {0.3}, {0.0}, 5.0);
    // residual of D a + C v + gbar + K q = 0
    for (double t : {0.4, 2.0, 4.9}) {
        const RefPoint p = r.eval(t);
        const Vec res = fc.chain.base.inertia(p.q) * p.a + fc.chain.base.gravity(p.q);
        REQUIRE(norm(res) <= 1e-6);
    }
}

TEST_CASE("two-link unforced reference residual") {
    const ELModel m = make_two_link();
    const Reference r = make_unforced_ref(m, {0.2, -0.1}, {0.1, 0.0}, 3.0);
    for (int i = 0; i <= 300; ++i) {
        const RefPoint p = r.eval(3.0 * i / 300.0);
        const Vec res = m.inertia(p.q) * p.a + m.coriolis(p.q, p.v) * p.v + m.gravity(p.q);
        REQUIRE(norm(res) <= 1e-6);
    }
}

TEST_CASE("reference horizon is enforced") {
    const Reference r = make_unforced_ref(make_pendulum(), {0.1}, {0.0}, 1.0);
    CHECK_THROWS_AS(r.eval(1.5), reference_invalid_error);
    CHECK_NOTHROW(r.eval(1.0));
}

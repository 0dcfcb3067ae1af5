#include <doctest.h>

#include <cmath>

#include "gearlab/stage1.hpp"

using namespace gearlab;

TEST_CASE("noiseless localization recovers the peg") {
    Rng rng(1);
    const Vec3 peg{0.013, -0.021, 0.47};
    const Vec3 est = localize_peg(peg, CameraIntrinsics{}, NoiseModel{0.0, 0.0}, rng);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(est[i] - peg[i]) < 1e-12);
}

TEST_CASE("pixel noise gives the linearized lateral spread") {
    // sigma_px * depth / fx = 4 * 0.5 / 600 m per axis.
    const double expected = 4.0 * 0.5 / 600.0;
    const Vec3 offset{0.02, -0.01, 0.0};
    const Vec3 peg{-0.02, 0.01, 0.5};  // platform on the optical axis
    Rng rng(SeedSpec{3}.stream(0));
    const int n = 10000;
    double sx = 0, sy = 0, mx = 0, my = 0;
    for (int i = 0; i < n; ++i) {
        const Vec3 e = localize_peg(peg, CameraIntrinsics{}, NoiseModel{4.0, 0.0}, rng, offset);
        const double dx = e[0] - peg[0], dy = e[1] - peg[1];
        mx += dx;
        my += dy;
        sx += dx * dx;
        sy += dy * dy;
    }
    mx /= n;
    my /= n;
    const double stdx = std::sqrt(sx / n - mx * mx), stdy = std::sqrt(sy / n - my * my);
    CHECK(stdx == doctest::Approx(expected).epsilon(0.10));
    CHECK(stdy == doctest::Approx(expected).epsilon(0.10));
}

TEST_CASE("depth noise alone shows up as z error") {
    Rng rng(7);
    const Vec3 peg{-0.02, 0.01, 0.5};
    const int n = 10000;
    double s = 0, m = 0;
    for (int i = 0; i < n; ++i) {
        const double dz = localize_peg(peg, CameraIntrinsics{}, NoiseModel{0.0, 0.003}, rng)[2] - peg[2];
        m += dz;
        s += dz * dz;
    }
    m /= n;
    CHECK(std::sqrt(s / n - m * m) == doctest::Approx(0.003).epsilon(0.05));
}

TEST_CASE("descent stops at the first step above the force threshold") {
    ContactParams c;
    c.surface_z = 0.0;
    auto r = descend_until_contact(10.0, c);
    CHECK(r.final_z == doctest::Approx(-2.5));
    CHECK(r.fz == doctest::Approx(2.5));
    c.f_z_threshold = 0.1;
    r = descend_until_contact(10.0, c);
    CHECK(r.final_z == doctest::Approx(-0.5));
    CHECK_THROWS_AS(descend_until_contact(-1.0, c), ContractViolation);
    CHECK_THROWS_AS(descend_until_contact(0.0, c), ContractViolation);
}

TEST_CASE("descent step count bound") {
    Rng rng(4);
    for (int i = 0; i < 2000; ++i) {
        ContactParams c;
        c.surface_z = rng.uniform(-5, 5);
        c.f_z_threshold = rng.uniform(0.05, 5);
        c.stiffness = rng.uniform(0.2, 3);
        c.descent_step = rng.uniform(0.05, 2);
        const double start = c.surface_z + rng.uniform(0.01, 20);
        const auto r = descend_until_contact(start, c);
        const int bound = static_cast<int>(std::ceil((start - c.surface_z) / c.descent_step) +
                                           std::ceil(c.f_z_threshold / (c.stiffness * c.descent_step)));
        REQUIRE(r.steps <= bound);
        REQUIRE(r.fz > c.f_z_threshold);
    }
}

TEST_CASE("missing surface times out") {
    ContactParams c;
    c.surface_present = false;
    c.max_steps = 50;
    CHECK_THROWS_AS(descend_until_contact(5.0, c), Stage1Timeout);
}

TEST_CASE("stage 2 start mapping") {
    GridMap map;
    const Vec2Mm peg{100, 200};
    CHECK(stage2_start(peg, peg, map) == map.target());
    CHECK(stage2_start(peg, peg + Vec2Mm{5, -3}, map) == Vec2Mm{22.5, 12.0});
    CHECK(stage2_start(peg, peg + Vec2Mm{100, 0}, map) == Vec2Mm{34.0, 15.0});
}

TEST_CASE("default stage 1 noise keeps starts inside the map") {
    GridMap map;
    Stage1Config s;
    Rng rng(SeedSpec{11}.stream(0));
    int inside = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        const Vec3 e = localize_peg(s.true_peg, s.camera, s.noise, rng, s.platform_offset);
        const Vec2Mm err{(e[0] - s.true_peg[0]) * 1000.0, (e[1] - s.true_peg[1]) * 1000.0};
        if (in_bounds(map.target() + err, map)) ++inside;
    }
    CHECK(inside >= 0.99 * n);
}

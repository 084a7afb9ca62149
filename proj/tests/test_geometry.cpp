#include "czsr/geometry.hpp"
#include "czsr/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using czsr::Box;
using czsr::GeomEmbedConfig;
using czsr::geometry_feature;
using czsr::sinusoidal_embed;

TEST(GeometryFeature, IdenticalSizesAndUnitOffsets) {
    // Offsets equal the subject size and the sizes match: all ratios are 1.
    const auto g = geometry_feature({0, 0, 2, 2}, {2, 2, 2, 2}, 1e-3);
    for (double v : g) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(GeometryFeature, HandComputedValues) {
    const auto g = geometry_feature({0, 0, 1, 1}, {3, 0, 2, 4}, 1e-3);
    EXPECT_NEAR(g[0], std::log(3.0), 1e-12);
    EXPECT_NEAR(g[1], std::log(1e-3), 1e-12);
    EXPECT_NEAR(g[2], std::log(2.0), 1e-12);
    EXPECT_NEAR(g[3], std::log(4.0), 1e-12);
}

TEST(GeometryFeature, RejectsDegenerateBoxes) {
    EXPECT_THROW(geometry_feature({0, 0, 0, 1}, {0, 0, 1, 1}, 1e-3), std::invalid_argument);
    EXPECT_THROW(geometry_feature({0, 0, 1, 1}, {0, 0, 1, -2}, 1e-3), std::invalid_argument);
    EXPECT_THROW(geometry_feature({0, 0, 1, 1}, {0, 0, 1, 1}, 0.0), std::invalid_argument);
    const double nan = std::nan("");
    EXPECT_THROW(geometry_feature({nan, 0, 1, 1}, {0, 0, 1, 1}, 1e-3), std::invalid_argument);
}

TEST(GeometryFeature, TranslationInvariantBitExact) {
    auto rng = czsr::make_stream(7, "test.geom");
    std::uniform_real_distribution<double> pos(-300.0, 300.0);
    std::uniform_real_distribution<double> size(1.0, 200.0);
    for (int trial = 0; trial < 10000; ++trial) {
        Box a{pos(rng), pos(rng), size(rng), size(rng)};
        Box b{pos(rng), pos(rng), size(rng), size(rng)};
        const double dx = pos(rng), dy = pos(rng);
        Box a2{a.x + dx, a.y + dy, a.w, a.h};
        Box b2{b.x + dx, b.y + dy, b.w, b.h};
        const auto g = geometry_feature(a, b, 1e-3);
        const auto g2 = geometry_feature(a2, b2, 1e-3);
        for (int i = 0; i < 4; ++i) {
            ASSERT_NEAR(g[i], g2[i], 1e-9);
        }
    }
}

TEST(GeometryFeature, ScaleInvariant) {
    auto rng = czsr::make_stream(8, "test.geom");
    std::uniform_real_distribution<double> pos(-300.0, 300.0);
    std::uniform_real_distribution<double> size(1.0, 200.0);
    std::uniform_real_distribution<double> scale(0.1, 50.0);
    for (int trial = 0; trial < 10000; ++trial) {
        Box a{pos(rng), pos(rng), size(rng), size(rng)};
        Box b{pos(rng), pos(rng), size(rng), size(rng)};
        const double s = scale(rng);
        Box a2{a.x * s, a.y * s, a.w * s, a.h * s};
        Box b2{b.x * s, b.y * s, b.w * s, b.h * s};
        const auto g = geometry_feature(a, b, 1e-3);
        const auto g2 = geometry_feature(a2, b2, 1e-3);
        for (int i = 0; i < 4; ++i) {
            ASSERT_NEAR(g[i], g2[i], 1e-9);
        }
    }
}

TEST(GeometryFeature, ClampEngagesExactlyBelowEpsTimesSize) {
    const double eps = 1e-3;
    // Offset just below eps * w_i: clamp engages.
    Box a{0, 0, 10, 10};
    Box below{a.x + eps * a.w * 0.999, 0, 10, 10};
    auto g = geometry_feature(a, below, eps);
    EXPECT_DOUBLE_EQ(g[0], std::log(eps));
    // Offset just above: the raw value passes through.
    Box above{a.x + eps * a.w * 1.001, 0, 10, 10};
    g = geometry_feature(a, above, eps);
    EXPECT_DOUBLE_EQ(g[0], std::log(eps * 1.001));
}

TEST(SinusoidalEmbed, ZeroInput) {
    GeomEmbedConfig cfg;
    cfg.dims_per_component = 8;
    const czsr::Vector out = sinusoidal_embed({0, 0, 0, 0}, cfg);
    ASSERT_EQ(out.size(), 32);
    for (int i = 0; i < out.size(); i += 2) {
        EXPECT_DOUBLE_EQ(out[i], 0.0);      // sin slots
        EXPECT_DOUBLE_EQ(out[i + 1], 1.0);  // cos slots
    }
}

TEST(SinusoidalEmbed, HandComputedSlots) {
    GeomEmbedConfig cfg;
    cfg.dims_per_component = 4;
    cfg.wavelength_base = 10000.0;
    const czsr::Vector out = sinusoidal_embed({1, 0, 0, 0}, cfg);
    ASSERT_EQ(out.size(), 16);
    EXPECT_NEAR(out[0], std::sin(1.0), 1e-12);
    EXPECT_NEAR(out[1], std::cos(1.0), 1e-12);
    EXPECT_NEAR(out[2], std::sin(0.01), 1e-12);
    EXPECT_NEAR(out[3], std::cos(0.01), 1e-12);
    EXPECT_NEAR(out[0], 0.8415, 5e-5);
    EXPECT_NEAR(out[1], 0.5403, 5e-5);
    EXPECT_NEAR(out[2], 0.0100, 5e-5);
    EXPECT_NEAR(out[3], 1.0000, 5e-5);
}

TEST(SinusoidalEmbed, BoundedByOne) {
    GeomEmbedConfig cfg;
    cfg.dims_per_component = 16;
    auto rng = czsr::make_stream(9, "test.embed");
    std::uniform_real_distribution<double> val(-50.0, 50.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const czsr::Vector out =
            sinusoidal_embed({val(rng), val(rng), val(rng), val(rng)}, cfg);
        EXPECT_LE(out.cwiseAbs().maxCoeff(), 1.0);
    }
}

TEST(SinusoidalEmbed, LipschitzForUnitWavelengths) {
    // All wavelengths are >= 1 for base > 1, so a perturbation of delta moves
    // every output by at most delta.
    GeomEmbedConfig cfg;
    cfg.dims_per_component = 16;
    auto rng = czsr::make_stream(10, "test.embed");
    std::uniform_real_distribution<double> val(-10.0, 10.0);
    std::uniform_real_distribution<double> pert(-0.1, 0.1);
    for (int trial = 0; trial < 1000; ++trial) {
        std::array<double, 4> g{val(rng), val(rng), val(rng), val(rng)};
        std::array<double, 4> g2 = g;
        double delta = 0.0;
        for (int i = 0; i < 4; ++i) {
            const double p = pert(rng);
            g2[i] += p;
            delta = std::max(delta, std::abs(p));
        }
        const czsr::Vector a = sinusoidal_embed(g, cfg);
        const czsr::Vector b = sinusoidal_embed(g2, cfg);
        EXPECT_LE((a - b).cwiseAbs().maxCoeff(), delta + 1e-12);
    }
}

TEST(SinusoidalEmbed, ConfigValidation) {
    GeomEmbedConfig odd;
    odd.dims_per_component = 3;
    EXPECT_THROW(sinusoidal_embed({0, 0, 0, 0}, odd), std::invalid_argument);
    GeomEmbedConfig small_base;
    small_base.wavelength_base = 1.0;
    EXPECT_THROW(sinusoidal_embed({0, 0, 0, 0}, small_base), std::invalid_argument);
    GeomEmbedConfig bad_eps;
    bad_eps.clamp_eps = 0.0;
    EXPECT_THROW(sinusoidal_embed({0, 0, 0, 0}, bad_eps), std::invalid_argument);
}

}  // namespace

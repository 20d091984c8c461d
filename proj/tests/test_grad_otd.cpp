// Correlated-adjoint gradient: quadrature, per-step partials and assembly.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <vector>

#include <gtest/gtest.h>

#include "rtegrad/grad_otd.hpp"

using namespace rtegrad;

namespace
{
SpatialDomain<1> const d1({-2.0}, {2.0});

SimulationConfig<1> inverse_config(std::size_t n, std::size_t steps, std::uint64_t seed)
{
    return {d1,
            SigmaField<1>::constant(2.0),
            InitialDistribution<1>::gaussian(2.0 / std::sqrt(std::numbers::pi), 4.0),
            n,
            0.01,
            steps,
            MasterSeed{seed},
            1};
}

Objective<1> bump_objective()
{
    return Objective<1>::control_weight(ControlWeight<1>(
        d1, ControlWeight<1>::Speed::first_component_squared, ControlWeight<1>::Bump{{0.5}, {0.25}, 0.05}));
}
}  // namespace

TEST(AssignAdjointWeights, Examples)
{
    std::vector<PhaseParticle<1>> fin{{{0.5}, {0.5}}, {{-1.0}, {0.1}}};
    auto const zero = adjoint_final_condition(Objective<1>::control_weight(ControlWeight<1>::constant(d1, 0.0)));
    for (double g : assign_adjoint_weights<1>(fin, zero))
        EXPECT_EQ(g, 0.0);

    ControlWeight<1> r(d1, ControlWeight<1>::Speed::first_component_squared, std::nullopt);
    auto const w = assign_adjoint_weights<1>(fin, adjoint_final_condition(Objective<1>::control_weight(r)));
    EXPECT_DOUBLE_EQ(w[0], -0.25);
}

TEST(AssignAdjointWeights, MatchedDataGivesZero)
{
    auto cfg = inverse_config(20000, 20, 4);
    GridSpec<1> g(d1, {40});
    auto const fin = simulate(cfg);
    auto const rho = spatial_density_histogram<1>(fin, g, cfg.mass_weight());
    auto const w = otd_weights<1>(fin, Objective<1>::inverse(Measurement<1>::gridded(rho)), g, cfg.mass_weight());
    for (double x : w)
        ASSERT_EQ(x, 0.0);
}

TEST(VelocityIntegral, ConstantsExact)
{
    auto s = derive_stream(MasterSeed{1}, 0);
    for (std::size_t k : {1, 2, 5, 40, 500})
    {
        std::vector<QuadratureNode> q1, q2;
        for (std::size_t i = 0; i < k; ++i)
        {
            q1.push_back({2 * s.uniform01() - 1, 1.7});
            q2.push_back({std::numbers::pi * (2 * s.uniform01() - 1), 1.7});
        }
        EXPECT_NEAR(velocity_integral_g<1>(q1), 1.7 * 2.0, 1e-14) << k;
        EXPECT_NEAR(velocity_integral_g<2>(q2), 1.7 * 2.0 * std::numbers::pi, 1e-13) << k;
    }
    std::vector<QuadratureNode> none;
    EXPECT_EQ(velocity_integral_g<1>(none), 0.0);
}

TEST(VelocityIntegral, LinearOnSymmetricNodes)
{
    std::vector<QuadratureNode> q{{1.0, 1.0}, {-1.0, -1.0}, {0.0, 0.0}};
    EXPECT_NEAR(velocity_integral_g<1>(q), 0.0, 1e-15);
}

TEST(VelocityIntegral, PeriodicTrapezoidOnCircle)
{
    // cos(theta) on equispaced angles integrates to 0, constant 1 to 2 pi
    std::vector<QuadratureNode> q;
    for (int i = 0; i < 16; ++i)
    {
        double const t = -std::numbers::pi + (i + 0.25) * std::numbers::pi / 8;
        q.push_back({t, std::cos(t)});
    }
    EXPECT_NEAR(velocity_integral_g<2>(q), 0.0, 1e-13);
}

TEST(BucketSort, MatchesStdSort)
{
    auto s = derive_stream(MasterSeed{2}, 0);
    std::vector<QuadratureNode> scratch;
    std::vector<std::uint32_t> offsets;
    for (std::size_t k : {0, 1, 7, 31, 32, 33, 1000, 20000})
    {
        std::vector<QuadratureNode> a(k);
        for (auto& q : a)
            q = {2 * s.uniform01() - 1, std::floor(10 * s.uniform01())};
        // Duplicate nodes exercise the tie-break on g
        if (k > 4)
            a[1].node = a[3].node;
        auto b = a;
        detail::bucket_sort_nodes(a, -1.0, 1.0, scratch, offsets);
        std::sort(b.begin(), b.end());
        for (std::size_t i = 0; i < k; ++i)
        {
            ASSERT_EQ(a[i].node, b[i].node);
            ASSERT_EQ(a[i].g, b[i].g);
        }
    }
}

TEST(AccumulateOtd, Examples)
{
    GridSpec<1> g(SpatialDomain<1>({0.0}, {1.0}), {10});
    std::vector<PhaseParticle<1>> states(10, PhaseParticle<1>{{0.95}, {0.2}});
    for (std::size_t i = 1; i < 10; ++i)
        states[i].x[0] = 0.05;
    std::vector<double> w(10, 0.0);
    w[0] = 2.0;
    std::vector<StepOutcome> out(10);
    StepView<1> view{1, states, out, 1};
    auto const p = accumulate_otd(view, w, g);
    EXPECT_DOUBLE_EQ(p.fg[9], 2.0);
    EXPECT_DOUBLE_EQ(p.f[9], 1.0);
    EXPECT_EQ(p.fg[0], 0.0);
    EXPECT_EQ(p.fg[5], 0.0);
    EXPECT_EQ(p.g[5], 0.0);

    std::vector<double> zero(10, 0.0);
    auto const z = accumulate_otd(view, zero, g);
    for (std::size_t c = 0; c < 10; ++c)
    {
        EXPECT_EQ(z.fg[c], 0.0);
        EXPECT_EQ(z.g[c], 0.0);
    }
}

TEST(AccumulateOtd, ConstantWeightsCancelPerCell)
{
    auto cfg = inverse_config(50000, 1, 3);
    auto const fin = simulate(cfg);
    GridSpec<1> g(d1, {40});
    std::vector<double> w(fin.size(), -0.37);
    std::vector<StepOutcome> out(fin.size());
    auto const p = accumulate_otd<1>({1, fin, out, 1}, w, g);
    for (std::size_t c = 0; c < g.size(); ++c)
        EXPECT_NEAR(p.combined<1>(c), 0.0, 1e-12);
}

TEST(AssembleOtd, MatchedDataIsExactlyZero)
{
    auto cfg = inverse_config(20000, 50, 8);
    GridSpec<1> g(d1, {40});
    auto const rho = spatial_density_histogram<1>(simulate(cfg), g, cfg.mass_weight());
    auto const grad = assemble_gradient_otd(cfg, Objective<1>::inverse(Measurement<1>::gridded(rho)), g);
    for (double v : grad.values)
        ASSERT_EQ(v, 0.0);
}

TEST(AssembleOtd, ConstantControlWeightVanishes)
{
    auto cfg = inverse_config(50000, 50, 9);
    GridSpec<1> g(d1, {40});
    auto const grad = assemble_gradient_otd(cfg, Objective<1>::control_weight(ControlWeight<1>::constant(d1, 3.0)), g);
    for (double v : grad.values)
        EXPECT_NEAR(v, 0.0, 1e-12);

    SpatialDomain<2> d2({-1.0, -1.0}, {1.0, 1.0});
    SimulationConfig<2> c2{d2, SigmaField<2>::constant(2.0), InitialDistribution<2>::gaussian(4.0 / std::numbers::pi, 4.0),
                           20000, 0.01, 20, MasterSeed{9}, 1};
    GridSpec<2> g2(d2, {10, 10});
    auto const grad2 = assemble_gradient_otd(c2, Objective<2>::control_weight(ControlWeight<2>::constant(d2, 3.0)), g2);
    for (double v : grad2.values)
        EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(AssembleOtd, DeterministicAcrossThreadsAndDenseStore)
{
    auto cfg = inverse_config(30000, 40, 10);
    GridSpec<1> g(d1, {40});
    auto const obj = bump_objective();
    auto const a = assemble_gradient_otd(cfg, obj, g);
    auto const b = assemble_gradient_otd(cfg, obj, g);
    cfg.threads = 4;
    auto const c = assemble_gradient_otd(cfg, obj, g);
    auto const d = assemble_gradient_otd(cfg, obj, g, ReplayMode::dense);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.values, c.values);
    EXPECT_EQ(a.values, d.values);

    auto const data = Objective<1>::inverse(Measurement<1>::unit_gaussian(5.0, {0.6}));
    cfg.threads = 1;
    auto const e = assemble_gradient_otd(cfg, data, g);
    auto const f = assemble_gradient_otd(cfg, data, g, ReplayMode::dense);
    EXPECT_EQ(e.values, f.values);
}

TEST(AssembleOtd, MassWeightScalesLinearly)
{
    auto cfg = inverse_config(10000, 20, 2);
    GridSpec<1> g(d1, {40});
    auto const obj = bump_objective();
    auto const a = assemble_gradient_otd(cfg, obj, g);
    cfg.initial = InitialDistribution<1>::gaussian(4.0 / std::sqrt(std::numbers::pi), 4.0);
    auto const b = assemble_gradient_otd(cfg, obj, g);
    for (std::size_t c = 0; c < g.size(); ++c)
        EXPECT_NEAR(b.values[c], 2 * a.values[c], 1e-12 * (1 + std::abs(a.values[c])));
}

TEST(AssembleOtd, NearLinearWallTime)
{
    GridSpec<1> g(d1, {40});
    auto const obj = Objective<1>::inverse(Measurement<1>::unit_gaussian(5.0, {0.6}));
    auto per_particle = [&](std::size_t n) {
        auto cfg = inverse_config(n, 10, 1);
        auto const t0 = std::chrono::steady_clock::now();
        auto const grad = assemble_gradient_otd(cfg, obj, g);
        auto const t1 = std::chrono::steady_clock::now();
        EXPECT_TRUE(std::isfinite(grad.values[0]));
        return std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(n);
    };
    per_particle(100000);  // warm-up
    double const small = per_particle(100000);
    double const large = per_particle(1000000);
    EXPECT_LT(large / small, 1.5) << small << " " << large;
}

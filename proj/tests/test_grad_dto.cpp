// Score-function gradient.
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "rtegrad/grad_dto.hpp"

using namespace rtegrad;

namespace
{
SpatialDomain<1> const d1({-2.0}, {2.0});

SimulationConfig<1> control_config(std::size_t n, double dt, std::uint64_t seed)
{
    return {d1,
            SigmaField<1>::constant(2.0),
            InitialDistribution<1>::gaussian(2.0 / std::sqrt(std::numbers::pi), 4.0),
            n,
            dt,
            static_cast<std::size_t>(std::lround(0.5 / dt)),
            MasterSeed{seed},
            1};
}

Objective<1> bump_objective()
{
    return Objective<1>::control_weight(ControlWeight<1>(
        d1, ControlWeight<1>::Speed::first_component_squared, ControlWeight<1>::Bump{{0.5}, {0.25}, 0.05}));
}

struct SeedStats
{
    std::vector<double> mean;
    std::vector<double> se;
    std::vector<double> var;
};

SeedStats seed_stats(std::vector<std::vector<double>> const& runs)
{
    std::size_t const cells = runs.front().size();
    double const s = static_cast<double>(runs.size());
    SeedStats out{std::vector<double>(cells, 0.0), std::vector<double>(cells, 0.0), std::vector<double>(cells, 0.0)};
    for (auto const& r : runs)
        for (std::size_t c = 0; c < cells; ++c)
            out.mean[c] += r[c] / s;
    for (auto const& r : runs)
        for (std::size_t c = 0; c < cells; ++c)
            out.var[c] += (r[c] - out.mean[c]) * (r[c] - out.mean[c]) / (s - 1);
    for (std::size_t c = 0; c < cells; ++c)
        out.se[c] = std::sqrt(out.var[c] / s);
    return out;
}
}  // namespace

TEST(ScoreFactor, Examples)
{
    EXPECT_EQ(score_factor({false, std::exp(-0.02)}), -1.0);
    double const a = std::exp(-0.02);
    EXPECT_NEAR(score_factor({true, a}), a / (1 - a), 1e-12);
    EXPECT_NEAR(score_factor({true, a}), 49.50166665555553, 1e-9);
    for (double alpha : {0.01, 0.3, 0.9, 0.999})
        EXPECT_NEAR(alpha * score_factor({false, alpha}) + (1 - alpha) * score_factor({true, alpha}), 0.0, 1e-12);
    EXPECT_THROW(score_factor({true, 1.0}), std::logic_error);
}

TEST(AssembleDto, ZeroPayoffGivesZero)
{
    auto cfg = control_config(20000, 0.005, 1);
    GridSpec<1> g(d1, {40});
    auto const grad = assemble_gradient_dto(cfg, Objective<1>::control_weight(ControlWeight<1>::constant(d1, 0.0)), g);
    for (double v : grad.values)
        ASSERT_EQ(v, 0.0);
}

TEST(AssembleDto, InverseObjectiveUnsupported)
{
    auto cfg = control_config(100, 0.005, 1);
    GridSpec<1> g(d1, {40});
    auto const obj = Objective<1>::inverse(Measurement<1>::unit_gaussian(5.0, {0.6}));
    EXPECT_THROW(assemble_gradient_dto(cfg, obj, g), UnsupportedObjective);
    EXPECT_THROW(assemble_control_gradients(cfg, obj, g), ConfigError);
}

TEST(AssembleDto, ConstantPayoffHasZeroMean)
{
    GridSpec<1> g(d1, {40});
    auto const obj = Objective<1>::control_weight(ControlWeight<1>::constant(d1, 1.0));
    std::vector<std::vector<double>> runs;
    std::vector<std::vector<double>> totals;
    for (std::uint64_t seed = 1; seed <= 50; ++seed)
    {
        auto cfg = control_config(100000, 0.005, seed);
        auto const grad = assemble_gradient_dto(cfg, obj, g);
        runs.push_back(grad.values);
        double total = 0;
        for (double v : grad.values)
            total += v;
        totals.push_back({total});
    }
    auto const st = seed_stats(runs);
    for (std::size_t c = 0; c < g.size(); ++c)
        EXPECT_LE(std::abs(st.mean[c]), 3 * st.se[c]) << "cell " << c;
    auto const tot = seed_stats(totals);
    EXPECT_LE(std::abs(tot.mean[0]), 3 * tot.se[0]);
}

TEST(AssembleDto, ScatterScoreGrowsWhileVarianceStaysBounded)
{
    // The scatter score scales like 1 / (sigma dt), but dt * xi stays O(1 / sigma) and the number of
    // scatters per path does not grow, so the estimator variance has a finite dt -> 0 limit.
    for (double dt : {0.01, 0.005, 0.0025})
    {
        double const a = std::exp(-2.0 * dt);
        double const a2 = std::exp(-dt);
        double const ratio = score_factor({true, a2}) / score_factor({true, a});
        EXPECT_GT(ratio, 2.0);
        EXPECT_LT(ratio, 2.05);
        EXPECT_LT(dt * score_factor({true, a}), 0.5);
    }
    GridSpec<1> g(d1, {40});
    auto const obj = bump_objective();
    auto total_variance = [&](double dt) {
        std::vector<std::vector<double>> runs;
        for (std::uint64_t seed = 1; seed <= 20; ++seed)
            runs.push_back(assemble_gradient_dto(control_config(20000, dt, seed), obj, g).values);
        auto const st = seed_stats(runs);
        double sum = 0;
        for (double v : st.var)
            sum += v;
        return sum;
    };
    double const coarse = total_variance(0.01);
    double const finer = total_variance(0.0025);
    EXPECT_GT(finer / coarse, 0.5);
    EXPECT_LT(finer / coarse, 2.0);
}

TEST(AssembleDto, DeterministicAcrossThreadsAndDenseStore)
{
    GridSpec<1> g(d1, {40});
    auto const obj = bump_objective();
    auto cfg = control_config(30000, 0.005, 5);
    auto const a = assemble_gradient_dto(cfg, obj, g);
    auto const b = assemble_gradient_dto(cfg, obj, g, ReplayMode::dense);
    cfg.threads = 3;
    auto const c = assemble_gradient_dto(cfg, obj, g);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.values, c.values);
}

TEST(AssembleDto, SharedPassesMatchSeparateRuns)
{
    GridSpec<1> g(d1, {40});
    auto const obj = bump_objective();
    auto const cfg = control_config(20000, 0.005, 6);
    auto const both = assemble_control_gradients(cfg, obj, g);
    EXPECT_EQ(both.dto.values, assemble_gradient_dto(cfg, obj, g).values);
    EXPECT_EQ(both.otd.values, assemble_gradient_otd(cfg, obj, g).values);
}

TEST(AssembleDto, AgreesWithOtdOnControlSetup)
{
    GridSpec<1> g(d1, {40});
    auto const obj = bump_objective();
    std::vector<std::vector<double>> otd, dto;
    for (std::uint64_t seed = 1; seed <= 20; ++seed)
    {
        auto const both = assemble_control_gradients(control_config(100000, 0.005, seed), obj, g);
        otd.push_back(both.otd.values);
        dto.push_back(both.dto.values);
    }
    auto const so = seed_stats(otd);
    auto const sd = seed_stats(dto);
    // Per cell the 2 SE band is a two-sided test with a few percent false-alarm rate, so a handful of
    // the 40 cells may sit outside it. None may sit outside 4 SE.
    std::size_t outside = 0;
    for (std::size_t c = 0; c < g.size(); ++c)
    {
        double const diff = std::abs(so.mean[c] - sd.mean[c]);
        double const band = std::max(so.se[c], sd.se[c]);
        if (diff > 2 * band)
            ++outside;
        EXPECT_LE(diff, 4 * band) << "cell " << c;
    }
    EXPECT_LE(outside, 4u);
}

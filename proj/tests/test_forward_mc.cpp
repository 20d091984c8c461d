// Particle solver: kernels, sampling, replay and density estimators.
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <gtest/gtest.h>

#include "rtegrad/forward_mc.hpp"

using namespace rtegrad;

namespace
{
SpatialDomain<1> const d1({-2.0}, {2.0});
SpatialDomain<2> const d2({-1.0, -1.0}, {1.0, 1.0});

// Returns a fixed sequence of draws
struct ScriptedStream
{
    std::vector<double> draws;
    std::size_t next{0};
    double uniform01() { return draws.at(next++); }
};

SimulationConfig<1> base_config(std::size_t n, double dt, std::size_t steps, std::uint64_t seed)
{
    return {d1,
            SigmaField<1>::constant(2.0),
            InitialDistribution<1>::gaussian(2.0 / std::sqrt(std::numbers::pi), 4.0),
            n,
            dt,
            steps,
            MasterSeed{seed},
            1};
}

struct Recorder
{
    std::vector<StepRecord<1>> records;
    std::vector<PhaseParticle<1>> final_state;
    void on_step(StepView<1> const& view)
    {
        for (std::size_t n = 0; n < view.size(); ++n)
            records.push_back(view.record(n));
    }
    void on_final(std::span<PhaseParticle<1> const> fin) { final_state.assign(fin.begin(), fin.end()); }
};

struct ThrowingVisitor
{
    void on_step(StepView<1> const& view)
    {
        if (view.step == 3)
            throw VisitorError(17, "boom");
    }
    void on_final(std::span<PhaseParticle<1> const>) {}
};
}  // namespace

TEST(SampleInitial, GaussianMoments1D)
{
    auto const f = InitialDistribution<1>::gaussian(2.0 / std::sqrt(std::numbers::pi), 4.0);
    auto const e = sample_initial(f, d1, 1000000, MasterSeed{1});
    double m = 0, m2 = 0;
    for (auto const& p : e)
    {
        m += p.x[0];
        m2 += p.x[0] * p.x[0];
    }
    m /= 1e6;
    m2 /= 1e6;
    EXPECT_NEAR(m, 0.0, 3.0 * std::sqrt(1.0 / 8.0) / 1e3);
    EXPECT_NEAR(m2 - m * m, 0.125, 0.002);
}

TEST(SampleInitial, GaussianMean2D)
{
    auto const f = InitialDistribution<2>::gaussian(4.0 / std::numbers::pi, 4.0);
    auto const e = sample_initial(f, d2, 1000000, MasterSeed{2});
    double m1 = 0, m2 = 0;
    for (auto const& p : e)
    {
        m1 += p.x[0];
        m2 += p.x[1];
    }
    EXPECT_NEAR(m1 / 1e6, 0.0, 3.0 * std::sqrt(1.0 / 8.0) / 1e3);
    EXPECT_NEAR(m2 / 1e6, 0.0, 3.0 * std::sqrt(1.0 / 8.0) / 1e3);
}

TEST(SampleInitial, VelocityUniformForGaussianData)
{
    auto const f = InitialDistribution<1>::gaussian(1.0, 4.0);
    auto const e = sample_initial(f, d1, 200000, MasterSeed{3});
    double m = 0, m2 = 0;
    for (auto const& p : e)
    {
        m += p.v.value;
        m2 += p.v.value * p.v.value;
    }
    EXPECT_NEAR(m / 2e5, 0.0, 3.0 / std::sqrt(3.0) / std::sqrt(2e5));
    EXPECT_NEAR(m2 / 2e5, 1.0 / 3.0, 0.003);
}

TEST(TransportStep, Examples)
{
    EXPECT_NEAR(transport_step<1>({{0.0}, {1.0}}, 0.01, d1).x[0], 0.01, 1e-15);
    EXPECT_NEAR(transport_step<1>({{1.995}, {1.0}}, 0.01, d1).x[0], -1.995, 1e-12);
    PhaseParticle<1> still{{0.7}, {0.0}};
    EXPECT_EQ(transport_step(still, 0.01, d1), still);
}

TEST(TransportStep, VelocityUnchanged)
{
    PhaseParticle<2> p{{0.9, -0.95}, Velocity<2>::from_angle(2.0)};
    auto const q = transport_step(p, 0.1, d2);
    EXPECT_EQ(q.v.theta, p.v.theta);
    EXPECT_GE(q.x[0], -1.0);
    EXPECT_LT(q.x[1], 1.0);
}

TEST(CollisionStep, FreeTransportNeverScatters)
{
    auto s = derive_stream(MasterSeed{4}, 0);
    auto const sigma = SigmaField<1>::constant(0.0);
    for (int i = 0; i < 100000; ++i)
    {
        auto [q, out] = collision_step<1>({{0.1}, {0.5}}, sigma, 0.01, s);
        ASSERT_FALSE(out.scattered);
        ASSERT_EQ(out.alpha, 1.0);
        ASSERT_EQ(q.v.value, 0.5);
    }
}

TEST(CollisionStep, ScatterFraction)
{
    auto const sigma = SigmaField<1>::constant(2.0);
    double const alpha = std::exp(-0.02);
    std::size_t scattered = 0;
    std::size_t const n = 1000000;
    for (std::size_t i = 0; i < n; ++i)
    {
        auto s = derive_stream(MasterSeed{5}, i);
        auto [q, out] = collision_step<1>({{0.0}, {0.5}}, sigma, 0.01, s);
        EXPECT_DOUBLE_EQ(out.alpha, alpha);
        scattered += out.scattered;
    }
    EXPECT_NEAR(static_cast<double>(scattered) / 1e6, 1.0 - alpha, 3.0 * std::sqrt(alpha * (1 - alpha)) / 1e3);
}

TEST(CollisionStep, ForcedDrawAboveAlphaScatters)
{
    auto const sigma = SigmaField<1>::constant(2.0);
    ScriptedStream s{{0.99, 0.75}};
    auto [q, out] = collision_step<1>({{0.0}, {0.1}}, sigma, 0.01, s);
    EXPECT_TRUE(out.scattered);
    EXPECT_DOUBLE_EQ(q.v.value, 0.5);

    ScriptedStream keep{{0.5}};
    auto [q2, out2] = collision_step<1>({{0.0}, {0.1}}, sigma, 0.01, keep);
    EXPECT_FALSE(out2.scattered);
    EXPECT_EQ(q2.v.value, 0.1);
}

TEST(CollisionStep, AlphaUsesNewPosition)
{
    SpatialDomain<1> d({0.0}, {2.0});
    GridSpec<1> g(d, {2});
    auto const sigma = SigmaField<1>::piecewise(g, {0.0, 5.0});
    auto moved = transport_step<1>({{0.99}, {1.0}}, 0.02, d);
    ScriptedStream s{{0.5, 0.5}};
    auto [q, out] = collision_step(moved, sigma, 0.02, s);
    EXPECT_DOUBLE_EQ(out.alpha, std::exp(-0.1));
}

TEST(Simulate, ZeroStepsReturnsInitialSample)
{
    auto cfg = base_config(5000, 0.01, 0, 7);
    auto const fin = simulate(cfg);
    auto const init = sample_initial(cfg.initial, cfg.domain, cfg.particles, cfg.seed);
    EXPECT_EQ(fin, init);
}

TEST(Simulate, BallisticPointMass)
{
    auto cfg = base_config(10, 0.01, 150, 1);
    cfg.sigma = SigmaField<1>::constant(0.0);
    cfg.initial = InitialDistribution<1>::point({0.3}, {0.8});
    auto const fin = simulate(cfg);
    for (auto const& p : fin)
    {
        // 0.3 + 1.2 = 1.5
        EXPECT_NEAR(p.x[0], 1.5, 1e-12);
        EXPECT_EQ(p.v.value, 0.8);
    }
}

TEST(Simulate, HistogramMassEqualsMassWeight)
{
    auto cfg = base_config(100000, 0.01, 200, 3);
    auto const fin = simulate(cfg);
    ASSERT_EQ(fin.size(), cfg.particles);
    GridSpec<1> g(d1, {40});
    auto const f = phase_density_histogram<1>(fin, g, cfg.mass_weight());
    double total = 0;
    for (double v : f.values)
        total += v * g.cell_volume();
    EXPECT_NEAR(total, cfg.mass_weight(), 1e-12 * cfg.mass_weight());
}

TEST(Simulate, ReplayReproducesRecords)
{
    auto cfg = base_config(3000, 0.01, 30, 11);
    Recorder a, b;
    simulate(cfg, a);
    cfg.threads = 3;
    simulate(cfg, b);
    ASSERT_EQ(a.records.size(), 3000u * 30u);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i)
    {
        ASSERT_EQ(a.records[i].state, b.records[i].state);
        ASSERT_EQ(a.records[i].outcome.scattered, b.records[i].outcome.scattered);
        ASSERT_EQ(a.records[i].outcome.alpha, b.records[i].outcome.alpha);
    }
    EXPECT_EQ(a.final_state, b.final_state);
}

TEST(Simulate, VelocityConstantBetweenScatters)
{
    auto cfg = base_config(2000, 0.01, 50, 12);
    Recorder r;
    simulate(cfg, r);
    auto const init = sample_initial(cfg.initial, cfg.domain, cfg.particles, cfg.seed);
    std::vector<double> v(cfg.particles);
    for (std::size_t n = 0; n < cfg.particles; ++n)
        v[n] = init[n].v.value;
    for (auto const& rec : r.records)
    {
        if (!rec.outcome.scattered)
        {
            ASSERT_EQ(rec.state.v.value, v[rec.particle]);
        }
        v[rec.particle] = rec.state.v.value;
        ASSERT_GT(rec.outcome.alpha, 0.0);
        ASSERT_LE(rec.outcome.alpha, 1.0);
    }
}

TEST(Simulate, VisitorFailureNamesParticleAndStep)
{
    auto cfg = base_config(100, 0.01, 5, 1);
    ThrowingVisitor v;
    try
    {
        simulate(cfg, v);
        FAIL() << "expected SimulationError";
    }
    catch (SimulationError const& e)
    {
        std::string const msg = e.what();
        EXPECT_NE(msg.find("particle 17"), std::string::npos) << msg;
        EXPECT_NE(msg.find("step 3"), std::string::npos) << msg;
    }
}

TEST(Simulate, InvalidConfigRejected)
{
    auto cfg = base_config(100, 0.0, 5, 1);
    EXPECT_THROW(simulate(cfg), ConfigError);
    cfg = base_config(0, 0.01, 5, 1);
    EXPECT_THROW(simulate(cfg), ConfigError);
}

TEST(TrajectoryStore, ReplayMatchesLiveRun)
{
    auto cfg = base_config(1000, 0.01, 20, 5);
    TrajectoryStore<1> store(cfg.particles, cfg.steps);
    Recorder live;
    simulate(cfg, store);
    simulate(cfg, live);
    Recorder replayed;
    store.replay(replayed);
    ASSERT_EQ(live.records.size(), replayed.records.size());
    for (std::size_t i = 0; i < live.records.size(); ++i)
        ASSERT_EQ(live.records[i].state, replayed.records[i].state);
    EXPECT_EQ(live.final_state, replayed.final_state);
    EXPECT_THROW(TrajectoryStore<1>(1000000, 200), ConfigError);
}

TEST(DensityHistogram, SingleCellAndEmpty)
{
    GridSpec<1> g(d1, {40});
    std::vector<PhaseParticle<1>> ps(1000, PhaseParticle<1>{{0.05}, {0.3}});
    auto const f = phase_density_histogram<1>(ps, g, 1.0);
    for (std::size_t j = 0; j < g.size(); ++j)
        EXPECT_DOUBLE_EQ(f.values[j], j == 20 ? 1.0 / g.width(0) : 0.0);
    auto const rho = spatial_density_histogram<1>(ps, g, 1.0);
    EXPECT_DOUBLE_EQ(rho.values[20], 0.5 / g.width(0));
    EXPECT_THROW(phase_density_histogram<1>(ps, GridSpec<1>(), 1.0), ConfigError);
}

TEST(DensityHistogram, UniformParticles)
{
    GridSpec<1> g(d1, {40});
    auto const f = InitialDistribution<1>::uniform(0.25);
    auto const e = sample_initial(f, d1, 1000000, MasterSeed{6});
    auto const h = phase_density_histogram<1>(e, g, 1.0);
    for (double v : h.values)
        EXPECT_NEAR(v, 0.25, 0.01);
}

TEST(Concentration, SeedSpreadScalesAsRootN)
{
    // Spread of (1/N) sum cos(pi x / 2) over 50 seeds at N = 1e3, 1e4, 1e5
    std::vector<double> logn, logsd;
    for (std::size_t n : {1000, 10000, 100000})
    {
        double s1 = 0, s2 = 0;
        int const seeds = 50;
        for (int seed = 1; seed <= seeds; ++seed)
        {
            auto cfg = base_config(n, 0.02, 25, static_cast<std::uint64_t>(seed) + 1000);
            auto const fin = simulate(cfg);
            double q = 0;
            for (auto const& p : fin)
                q += std::cos(std::numbers::pi * p.x[0] / 2);
            q /= static_cast<double>(n);
            s1 += q;
            s2 += q * q;
        }
        double const mean = s1 / seeds;
        logn.push_back(std::log10(static_cast<double>(n)));
        logsd.push_back(0.5 * std::log10((s2 - seeds * mean * mean) / (seeds - 1)));
    }
    double const mx = (logn[0] + logn[1] + logn[2]) / 3;
    double const my = (logsd[0] + logsd[1] + logsd[2]) / 3;
    double num = 0, den = 0;
    for (int i = 0; i < 3; ++i)
    {
        num += (logn[i] - mx) * (logsd[i] - my);
        den += (logn[i] - mx) * (logn[i] - mx);
    }
    double const slope = num / den;
    EXPECT_GE(slope, -0.65);
    EXPECT_LE(slope, -0.35);
}

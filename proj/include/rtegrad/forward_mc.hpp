//---------------------------------------------------------------------------//
//! \file forward_mc.hpp
//! Particle Monte Carlo solver for the forward RTE with streaming visitors and
//! deterministic seed replay.
//---------------------------------------------------------------------------//
#pragma once

#include <cmath>
#include <concepts>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "objectives.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace rtegrad
{
template<int D>
using Ensemble = std::vector<PhaseParticle<D>>;

//---------------------------------------------------------------------------//
//! Everything a forward particle run depends on.
template<int D>
struct SimulationConfig
{
    SpatialDomain<D> domain;
    SigmaField<D> sigma;
    InitialDistribution<D> initial = InitialDistribution<D>::uniform(1.0);
    std::size_t particles{1};
    double dt{0.01};
    std::size_t steps{1};
    MasterSeed seed{};
    unsigned threads{1};

    double final_time() const { return dt * static_cast<double>(steps); }
    double mass_weight() const { return initial.mass(domain); }

    void validate() const
    {
        if (!(dt > 0) || !std::isfinite(dt))
            throw ConfigError("time step must be positive");
        if (particles == 0)
            throw ConfigError("particle count must be positive");
    }
};

//! Result of the collision test for one particle at one step.
struct StepOutcome
{
    bool scattered{false};
    double alpha{1.0};  //!< exp(-sigma(x^{m+1}) dt)
};

//! One particle's state after step m (0-based step index m -> time m+1).
template<int D>
struct StepRecord
{
    std::size_t particle;
    std::size_t step;  //!< Time index of the post-step state, in 1..M
    PhaseParticle<D> state;
    StepOutcome outcome;
};

//---------------------------------------------------------------------------//
/*!
 * All particle records at one time index, handed to visitors once per step.
 *
 * Each particle appears exactly once per view, and views arrive in increasing
 * step order.
 */
template<int D>
struct StepView
{
    std::size_t step;  //!< Time index in 1..M
    std::span<PhaseParticle<D> const> states;
    std::span<StepOutcome const> outcomes;
    unsigned threads{1};

    std::size_t size() const { return states.size(); }
    StepRecord<D> record(std::size_t n) const { return {n, step, states[n], outcomes[n]}; }
};

template<class V, int D>
concept StepVisitor = requires(V& v, StepView<D> const& view, std::span<PhaseParticle<D> const> fin) {
    v.on_step(view);
    v.on_final(fin);
};

template<int D>
struct NullVisitor
{
    void on_step(StepView<D> const&) {}
    void on_final(std::span<PhaseParticle<D> const>) {}
};

//! Thrown by a visitor to report which particle it failed on.
class VisitorError : public std::runtime_error
{
  public:
    VisitorError(std::size_t particle, std::string const& what)
        : std::runtime_error(what), particle_(particle)
    {
    }
    std::size_t particle() const { return particle_; }

  private:
    std::size_t particle_;
};

//! Visitor failure surfaced by simulate(), naming (particle, step).
class SimulationError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

//---------------------------------------------------------------------------//
// Single-particle kernels
//---------------------------------------------------------------------------//
//! x' = wrap(x + dt v); v unchanged.
template<int D>
PhaseParticle<D> transport_step(PhaseParticle<D> p, double dt, SpatialDomain<D> const& domain)
{
    for (int i = 0; i < D; ++i)
        p.x[i] += dt * p.v.component(i);
    p.x = wrap_periodic(p.x, domain);
    return p;
}

//! Collision test with a precomputed survival probability alpha.
template<int D, class Stream>
std::pair<PhaseParticle<D>, StepOutcome>
collision_with_alpha(PhaseParticle<D> p, double alpha, Stream& stream)
{
    StepOutcome out{false, alpha};
    if (stream.uniform01() >= alpha)
    {
        p.v = uniform_velocity_sample<D>(stream);
        out.scattered = true;
    }
    return {p, out};
}

//! Rejection test at the (already transported) position of p.
template<int D, class Stream>
std::pair<PhaseParticle<D>, StepOutcome>
collision_step(PhaseParticle<D> const& p, SigmaField<D> const& sigma, double dt, Stream& stream)
{
    return collision_with_alpha(p, std::exp(-sigma(p.x) * dt), stream);
}

namespace detail
{
//---------------------------------------------------------------------------//
//! Survival probability lookup with constant and piecewise fast paths.
template<int D>
class AlphaTable
{
  public:
    AlphaTable(SigmaField<D> const& sigma, double dt) : sigma_(&sigma), dt_(dt)
    {
        if (auto const* c = sigma.as_constant())
        {
            constant_ = std::exp(-c->value * dt);
        }
        else if (auto const* pw = sigma.as_piecewise())
        {
            grid_ = &pw->grid;
            for (double s : pw->values)
                table_.push_back(std::exp(-s * dt));
        }
    }

    double operator()(Point<D> const& x) const
    {
        if (constant_ >= 0)
            return constant_;
        if (grid_)
            return table_[grid_->cell_index(wrap_periodic(x, grid_->domain()))];
        return std::exp(-(*sigma_)(x)*dt_);
    }

  private:
    SigmaField<D> const* sigma_;
    double dt_;
    double constant_{-1};
    GridSpec<D> const* grid_{nullptr};
    std::vector<double> table_;
};
}  // namespace detail

//---------------------------------------------------------------------------//
/*!
 * Draw N particles i.i.d. from f_in / rho_tot; particle n uses stream (seed, n).
 *
 * The streams are returned positioned after the initial draws so the time
 * loop continues them.
 */
template<int D>
Ensemble<D> sample_initial(InitialDistribution<D> const& f_in,
                           SpatialDomain<D> const& domain,
                           std::size_t n,
                           MasterSeed seed,
                           std::vector<ParticleStream>* streams = nullptr,
                           unsigned threads = 1)
{
    Ensemble<D> out(n);
    if (streams)
        streams->resize(n);
    parallel_blocks(n, threads, [&](std::size_t, BlockRange r) {
        for (std::size_t i = r.begin; i < r.end; ++i)
        {
            auto s = derive_stream(seed, i);
            out[i] = f_in.sample(domain, s);
            if (streams)
                (*streams)[i] = s;
        }
    });
    return out;
}

//---------------------------------------------------------------------------//
/*!
 * Run M steps of transport followed by the collision test for every particle.
 *
 * The visitor sees every time index m = 1..M once, then the final state. The
 * result is a pure function of the configuration (including the seed) and
 * does not depend on `threads`.
 */
template<int D, StepVisitor<D> V>
Ensemble<D> simulate(SimulationConfig<D> const& cfg, V& visitor)
{
    cfg.validate();
    std::size_t const n = cfg.particles;
    std::vector<ParticleStream> streams;
    Ensemble<D> states = sample_initial(cfg.initial, cfg.domain, n, cfg.seed, &streams, cfg.threads);
    std::vector<StepOutcome> outcomes(n);
    detail::AlphaTable<D> const alpha(cfg.sigma, cfg.dt);

    for (std::size_t m = 0; m < cfg.steps; ++m)
    {
        parallel_blocks(n, cfg.threads, [&](std::size_t, BlockRange r) {
            for (std::size_t i = r.begin; i < r.end; ++i)
            {
                auto moved = transport_step(states[i], cfg.dt, cfg.domain);
                auto [next, out] = collision_with_alpha(moved, alpha(moved.x), streams[i]);
                states[i] = next;
                outcomes[i] = out;
            }
        });
        StepView<D> view{m + 1, states, outcomes, cfg.threads};
        try
        {
            visitor.on_step(view);
        }
        catch (VisitorError const& e)
        {
            throw SimulationError("visitor failed at particle " + std::to_string(e.particle())
                                  + ", step " + std::to_string(m + 1) + ": " + e.what());
        }
        catch (std::exception const& e)
        {
            throw SimulationError("visitor failed at step " + std::to_string(m + 1) + ": "
                                  + e.what());
        }
    }
    visitor.on_final(std::span<PhaseParticle<D> const>(states));
    return states;
}

template<int D>
Ensemble<D> simulate(SimulationConfig<D> const& cfg)
{
    NullVisitor<D> v;
    return simulate(cfg, v);
}

//---------------------------------------------------------------------------//
/*!
 * Dense storage of every particle state, for cross-checking the streaming
 * replay path. Limited to N * M <= 1e7.
 */
template<int D>
class TrajectoryStore
{
  public:
    static constexpr std::size_t max_entries = 10'000'000;

    explicit TrajectoryStore(std::size_t particles, std::size_t steps)
    {
        if (particles * steps > max_entries)
            throw ConfigError("dense trajectory storage is limited to N*M <= 1e7");
        states_.reserve(particles * steps);
        outcomes_.reserve(particles * steps);
    }

    void on_step(StepView<D> const& view)
    {
        if (particles_ == 0)
            particles_ = view.size();
        states_.insert(states_.end(), view.states.begin(), view.states.end());
        outcomes_.insert(outcomes_.end(), view.outcomes.begin(), view.outcomes.end());
        ++steps_;
    }
    void on_final(std::span<PhaseParticle<D> const> fin) { final_.assign(fin.begin(), fin.end()); }

    std::size_t steps() const { return steps_; }

    StepView<D> view(std::size_t m, unsigned threads = 1) const
    {
        std::size_t const off = (m - 1) * particles_;
        return {m,
                std::span<PhaseParticle<D> const>(states_.data() + off, particles_),
                std::span<StepOutcome const>(outcomes_.data() + off, particles_),
                threads};
    }

    //! Feed the stored trajectory to a visitor exactly as simulate() would.
    template<StepVisitor<D> V>
    void replay(V& visitor, unsigned threads = 1) const
    {
        for (std::size_t m = 1; m <= steps_; ++m)
            visitor.on_step(this->view(m, threads));
        visitor.on_final(std::span<PhaseParticle<D> const>(final_));
    }

  private:
    std::size_t particles_{0};
    std::size_t steps_{0};
    std::vector<PhaseParticle<D>> states_;
    std::vector<StepOutcome> outcomes_;
    Ensemble<D> final_;
};

//---------------------------------------------------------------------------//
// Density estimators
//---------------------------------------------------------------------------//
//! Particle count per cell.
template<int D>
std::vector<std::size_t> cell_counts(std::span<PhaseParticle<D> const> particles, GridSpec<D> const& grid)
{
    if (grid.empty())
        throw ConfigError("density histogram needs a non-empty grid");
    std::vector<std::size_t> counts(grid.size(), 0);
    for (auto const& p : particles)
        ++counts[grid.cell_index(p.x)];
    return counts;
}

/*!
 * Velocity-integrated density <f>_v(xbar) = mass * count / (N |Q|).
 */
template<int D>
DensityField<D> phase_density_histogram(std::span<PhaseParticle<D> const> particles,
                                        GridSpec<D> const& grid,
                                        double mass_weight)
{
    auto const counts = cell_counts(particles, grid);
    DensityField<D> out(grid, mass_weight);
    if (particles.empty())
        return out;
    double const scale
        = mass_weight / (static_cast<double>(particles.size()) * grid.cell_volume());
    for (std::size_t j = 0; j < counts.size(); ++j)
        out.values[j] = scale * static_cast<double>(counts[j]);
    return out;
}

/*!
 * Spatial density rho(xbar) = |Omega|^-1 <f>_v(xbar).
 */
template<int D>
DensityField<D> spatial_density_histogram(std::span<PhaseParticle<D> const> particles,
                                          GridSpec<D> const& grid,
                                          double mass_weight)
{
    auto out = phase_density_histogram(particles, grid, mass_weight);
    for (auto& v : out.values)
        v /= velocity_measure<D>();
    return out;
}

//---------------------------------------------------------------------------//
}  // namespace rtegrad

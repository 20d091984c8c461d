//---------------------------------------------------------------------------//
//! \file grad_dto.hpp
//! Score-function (likelihood ratio) particle gradient of terminal linear
//! objectives, differentiating the particle scheme itself.
//---------------------------------------------------------------------------//
#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "forward_mc.hpp"
#include "grad_otd.hpp"
#include "objectives.hpp"
#include "parallel.hpp"

namespace rtegrad
{
//! The requested objective has no score-function estimator.
class UnsupportedObjective : public ConfigError
{
  public:
    using ConfigError::ConfigError;
};

/*!
 * Per-step score weight xi: d log(kappa)/d sigma divided by dt.
 *
 * -1 when the velocity survived, alpha / (1 - alpha) when it was resampled.
 */
inline double score_factor(StepOutcome const& outcome)
{
    if (!outcome.scattered)
        return -1.0;
    if (!(outcome.alpha < 1.0))
        throw std::logic_error("scatter recorded with alpha = 1 (sigma = 0)");
    return outcome.alpha / (1.0 - outcome.alpha);
}

//! Terminal payoff r(x_n^M, v_n^M) for every particle.
template<int D>
std::vector<double> terminal_payoff(std::span<PhaseParticle<D> const> final_states,
                                    ControlWeight<D> const& r)
{
    std::vector<double> out(final_states.size());
    for (std::size_t n = 0; n < out.size(); ++n)
        out[n] = r(final_states[n].x, final_states[n].v);
    return out;
}

//---------------------------------------------------------------------------//
/*!
 * Replay visitor scattering r_n * xi_n^m into the cell of x_n^m, m = 1..M.
 *
 * Partial sums are kept per fixed particle block and reduced in tree order.
 */
template<int D>
class DtoAccumulator
{
  public:
    DtoAccumulator(GridSpec<D> grid, std::vector<double> payoff, double dt, double mass_weight)
        : grid_(std::move(grid))
        , payoff_(std::move(payoff))
        , dt_(dt)
        , mass_(mass_weight)
        , partials_(block_count(payoff_.size()), std::vector<double>(grid_.size(), 0.0))
    {
    }

    void on_step(StepView<D> const& view)
    {
        if (view.size() != payoff_.size())
            throw VisitorError(std::min(view.size(), payoff_.size()),
                               "payoff count does not match the ensemble");
        parallel_blocks(view.size(), view.threads, [&](std::size_t b, BlockRange r) {
            auto& part = partials_[b];
            for (std::size_t i = r.begin; i < r.end; ++i)
            {
                double const xi = score_factor(view.outcomes[i]);
                part[grid_.cell_index(view.states[i].x)] += payoff_[i] * xi;
            }
        });
    }
    void on_final(std::span<PhaseParticle<D> const>) {}

    GradientField<D> result() const
    {
        auto sum = tree_reduce(partials_);
        double const scale = mass_ * dt_
                             / (static_cast<double>(payoff_.size()) * grid_.cell_volume());
        GradientField<D> out(grid_, mass_);
        for (std::size_t c = 0; c < sum.size(); ++c)
            out.values[c] = scale * sum[c];
        return out;
    }

  private:
    GridSpec<D> grid_;
    std::vector<double> payoff_;
    double dt_;
    double mass_;
    std::vector<std::vector<double>> partials_;
};

//---------------------------------------------------------------------------//
/*!
 * P-DTO gradient of a terminal linear objective on the given grid.
 */
template<int D>
GradientField<D> assemble_gradient_dto(SimulationConfig<D> const& cfg,
                                       Objective<D> const& objective,
                                       GridSpec<D> const& grid,
                                       ReplayMode mode = ReplayMode::streaming)
{
    if (objective.kind != ObjectiveKind::control)
        throw UnsupportedObjective("the score-function gradient supports terminal linear (J2) objectives only");
    auto const& r = objective.weight();
    double const mass = cfg.mass_weight();
    if (mode == ReplayMode::dense)
    {
        TrajectoryStore<D> store(cfg.particles, cfg.steps);
        auto const fin = simulate(cfg, store);
        DtoAccumulator<D> acc(grid, terminal_payoff<D>(fin, r), cfg.dt, mass);
        store.replay(acc, cfg.threads);
        return acc.result();
    }
    auto const fin = simulate(cfg);
    DtoAccumulator<D> acc(grid, terminal_payoff<D>(fin, r), cfg.dt, mass);
    simulate(cfg, acc);
    return acc.result();
}

//! Both particle gradients of a J2 objective from one shared pair of passes.
template<int D>
struct ControlGradients
{
    GradientField<D> otd;
    GradientField<D> dto;
};

template<int D>
ControlGradients<D> assemble_control_gradients(SimulationConfig<D> const& cfg,
                                               Objective<D> const& objective,
                                               GridSpec<D> const& grid)
{
    if (objective.kind != ObjectiveKind::control)
        throw UnsupportedObjective("joint OTD/DTO assembly needs a J2 objective");
    double const mass = cfg.mass_weight();
    auto const fin = simulate(cfg);
    auto payoff = terminal_payoff<D>(fin, objective.weight());
    AdjointWeights g(payoff.size());
    for (std::size_t n = 0; n < g.size(); ++n)
        g[n] = -payoff[n];

    struct Both
    {
        OtdAccumulator<D> otd;
        DtoAccumulator<D> dto;
        void on_step(StepView<D> const& v)
        {
            otd.on_step(v);
            dto.on_step(v);
        }
        void on_final(std::span<PhaseParticle<D> const>) {}
    } both{OtdAccumulator<D>(grid, std::move(g), cfg.dt, mass),
           DtoAccumulator<D>(grid, std::move(payoff), cfg.dt, mass)};
    simulate(cfg, both);
    return {both.otd.result(), both.dto.result()};
}

//---------------------------------------------------------------------------//
}  // namespace rtegrad

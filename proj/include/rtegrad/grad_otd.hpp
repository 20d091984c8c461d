//---------------------------------------------------------------------------//
//! \file grad_otd.hpp
//! Correlated-adjoint particle gradient: adjoint values are carried as
//! constants along the forward trajectories and assembled per cell.
//---------------------------------------------------------------------------//
#pragma once

#include <algorithm>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "core.hpp"
#include "forward_mc.hpp"
#include "objectives.hpp"
#include "parallel.hpp"

namespace rtegrad
{
//! Per-particle adjoint value g_n = psi(x_n^M, v_n^M), fixed for all m.
using AdjointWeights = std::vector<double>;

template<int D>
AdjointWeights assign_adjoint_weights(std::span<PhaseParticle<D> const> final_states,
                                      AdjointCondition<D> const& psi)
{
    AdjointWeights g(final_states.size());
    for (std::size_t n = 0; n < g.size(); ++n)
        g[n] = psi(final_states[n]);
    return g;
}

//! A resident particle seen by the velocity quadrature.
struct QuadratureNode
{
    double node;  //!< v in 1D, theta in 2D
    double g;

    friend bool operator<(QuadratureNode const& a, QuadratureNode const& b)
    {
        return a.node < b.node || (a.node == b.node && a.g < b.g);
    }
};

namespace detail
{
//---------------------------------------------------------------------------//
/*!
 * Sort nodes by (node, g) using buckets over [lo, hi) followed by insertion
 * sort, expected linear time for roughly uniform nodes. The resulting order
 * is the unique lexicographic order, so it matches std::sort exactly.
 */
inline void bucket_sort_nodes(std::span<QuadratureNode> nodes,
                              double lo,
                              double hi,
                              std::vector<QuadratureNode>& scratch,
                              std::vector<std::uint32_t>& offsets)
{
    std::size_t const k = nodes.size();
    if (k < 32)
    {
        std::sort(nodes.begin(), nodes.end());
        return;
    }
    double const scale = static_cast<double>(k) / (hi - lo);
    auto bucket = [&](double x) {
        double const b = std::floor((x - lo) * scale);
        return static_cast<std::size_t>(std::clamp(b, 0.0, static_cast<double>(k - 1)));
    };
    offsets.assign(k + 1, 0);
    for (auto const& q : nodes)
        ++offsets[bucket(q.node) + 1];
    for (std::size_t b = 0; b < k; ++b)
        offsets[b + 1] += offsets[b];
    scratch.resize(k);
    {
        std::vector<std::uint32_t> fill(offsets.begin(), offsets.end() - 1);
        for (auto const& q : nodes)
            scratch[fill[bucket(q.node)]++] = q;
    }
    for (std::size_t b = 0; b < k; ++b)
    {
        auto first = scratch.begin() + offsets[b];
        auto last = scratch.begin() + offsets[b + 1];
        for (auto it = first; it != last; ++it)
        {
            auto tmp = *it;
            auto j = it;
            while (j != first && tmp < *(j - 1))
            {
                *j = *(j - 1);
                --j;
            }
            *j = tmp;
        }
    }
    std::copy(scratch.begin(), scratch.end(), nodes.begin());
}

//! Trapezoid on sorted nodes; weights normalized to sum to |Omega|.
template<int D>
double trapezoid_sorted(std::span<QuadratureNode const> q)
{
    std::size_t const k = q.size();
    if (k == 0)
        return 0;
    constexpr double measure = velocity_measure<D>();
    if (k == 1)
        return measure * q[0].g;

    double weighted = 0;
    double total = 0;
    for (std::size_t i = 0; i < k; ++i)
    {
        double w;
        if constexpr (D == 1)
        {
            // Endpoint extension: nearest node value held out to -1 and +1
            if (i == 0)
                w = (q[0].node + 1.0) + 0.5 * (q[1].node - q[0].node);
            else if (i + 1 == k)
                w = (1.0 - q[k - 1].node) + 0.5 * (q[k - 1].node - q[k - 2].node);
            else
                w = 0.5 * (q[i + 1].node - q[i - 1].node);
        }
        else
        {
            // Periodic trapezoid on the circle
            constexpr double two_pi = 2.0 * std::numbers::pi;
            double const prev = i == 0 ? q[k - 1].node - two_pi : q[i - 1].node;
            double const next = i + 1 == k ? q[0].node + two_pi : q[i + 1].node;
            w = 0.5 * (next - prev);
        }
        weighted += w * q[i].g;
        total += w;
    }
    return weighted * (measure / total);
}
}  // namespace detail

//---------------------------------------------------------------------------//
/*!
 * Scattered-node trapezoid estimate of <g>_v = int g dv over the residents
 * of one cell. Nodes are sorted in place.
 *
 * 1D: trapezoid on [-1, 1] with the end values extended to the interval
 * ends. 2D: periodic trapezoid in theta. Weights sum to |Omega|, so a
 * constant g = c gives c |Omega|. An empty cell gives 0.
 */
template<int D>
double velocity_integral_g(std::span<QuadratureNode> residents)
{
    std::vector<QuadratureNode> scratch;
    std::vector<std::uint32_t> offsets;
    if constexpr (D == 1)
        detail::bucket_sort_nodes(residents, -1.0, 1.0, scratch, offsets);
    else
        detail::bucket_sort_nodes(residents, -std::numbers::pi, std::numbers::pi, scratch, offsets);
    return detail::trapezoid_sorted<D>(residents);
}

//! Per-cell estimates for one time index.
struct OtdStepPartials
{
    std::vector<double> fg;  //!< <f g>_v(xbar)
    std::vector<double> f;  //!< <f>_v(xbar)
    std::vector<double> g;  //!< <g>_v(xbar)

    //! <f g>_v - |Omega|^-1 <f>_v <g>_v for one cell
    template<int D>
    double combined(std::size_t c) const
    {
        return fg[c] - f[c] * g[c] / velocity_measure<D>();
    }
};

//---------------------------------------------------------------------------//
/*!
 * Reusable per-step assembly of the normalized-ensemble estimators:
 *   <f g>_v = (1/(|Q| N)) sum_n 1{x_n in Q} g_n
 *   <f>_v   = (1/(|Q| N)) sum_n 1{x_n in Q}
 *   <g>_v   = velocity trapezoid over the residents of Q
 */
template<int D>
class OtdStepAssembler
{
  public:
    explicit OtdStepAssembler(GridSpec<D> grid) : grid_(std::move(grid)) {}

    OtdStepPartials operator()(std::span<PhaseParticle<D> const> states,
                               std::span<double const> weights,
                               unsigned threads = 1)
    {
        std::size_t const n = states.size();
        std::size_t const cells = grid_.size();
        cell_of_.resize(n);
        parallel_blocks(n, threads, [&](std::size_t, BlockRange r) {
            for (std::size_t i = r.begin; i < r.end; ++i)
                cell_of_[i] = static_cast<std::uint32_t>(grid_.cell_index(states[i].x));
        });
        offsets_.assign(cells + 1, 0);
        for (auto c : cell_of_)
            ++offsets_[c + 1];
        for (std::size_t c = 0; c < cells; ++c)
            offsets_[c + 1] += offsets_[c];
        nodes_.resize(n);
        fill_.assign(offsets_.begin(), offsets_.end() - 1);
        for (std::size_t i = 0; i < n; ++i)
            nodes_[fill_[cell_of_[i]]++] = {states[i].v.node(), weights[i]};

        OtdStepPartials out{std::vector<double>(cells, 0.0),
                            std::vector<double>(cells, 0.0),
                            std::vector<double>(cells, 0.0)};
        double const norm = 1.0 / (grid_.cell_volume() * static_cast<double>(n));
        parallel_for(cells, threads, [&](std::size_t c) {
            std::span<QuadratureNode> res(nodes_.data() + offsets_[c], offsets_[c + 1] - offsets_[c]);
            if (res.empty())
                return;
            // Sum in particle order before the quadrature reorders the nodes
            double sum_g = 0;
            for (auto const& q : res)
                sum_g += q.g;
            out.fg[c] = norm * sum_g;
            out.f[c] = norm * static_cast<double>(res.size());
            out.g[c] = velocity_integral_g<D>(res);
        });
        return out;
    }

    GridSpec<D> const& grid() const { return grid_; }

  private:
    GridSpec<D> grid_;
    std::vector<std::uint32_t> cell_of_;
    std::vector<std::uint32_t> offsets_;
    std::vector<std::uint32_t> fill_;
    std::vector<QuadratureNode> nodes_;
};

//! One-shot per-step accumulation for the given time index.
template<int D>
OtdStepPartials accumulate_otd(StepView<D> const& view,
                               std::span<double const> weights,
                               GridSpec<D> const& grid)
{
    OtdStepAssembler<D> assemble(grid);
    return assemble(view.states, weights, view.threads);
}

//---------------------------------------------------------------------------//
/*!
 * Replay visitor summing dt * (<fg>_v - |Omega|^-1 <f>_v <g>_v) over m = 1..M.
 */
template<int D>
class OtdAccumulator
{
  public:
    OtdAccumulator(GridSpec<D> grid, AdjointWeights weights, double dt, double mass_weight)
        : assemble_(grid)
        , weights_(std::move(weights))
        , dt_(dt)
        , mass_(mass_weight)
        , sum_(grid.size(), 0.0)
    {
    }

    void on_step(StepView<D> const& view)
    {
        if (view.size() != weights_.size())
            throw VisitorError(std::min(view.size(), weights_.size()),
                               "adjoint weight count does not match the ensemble");
        auto parts = assemble_(view.states, weights_, view.threads);
        for (std::size_t c = 0; c < sum_.size(); ++c)
            sum_[c] += parts.template combined<D>(c);
    }
    void on_final(std::span<PhaseParticle<D> const>) {}

    GradientField<D> result() const
    {
        GradientField<D> out(assemble_.grid(), mass_);
        for (std::size_t c = 0; c < sum_.size(); ++c)
            out.values[c] = mass_ * dt_ * sum_[c];
        return out;
    }

  private:
    OtdStepAssembler<D> assemble_;
    AdjointWeights weights_;
    double dt_;
    double mass_;
    std::vector<double> sum_;
};

//! How the second pass obtains the forward trajectories.
enum class ReplayMode
{
    streaming,  //!< re-run the simulation from the seed
    dense  //!< store every state in memory (N*M <= 1e7)
};

/*!
 * Final-time adjoint weights from a first forward pass. J1's density estimate
 * is taken on the gradient grid.
 */
template<int D>
AdjointWeights otd_weights(std::span<PhaseParticle<D> const> final_states,
                           Objective<D> const& objective,
                           GridSpec<D> const& grid,
                           double mass_weight)
{
    std::optional<DensityField<D>> rho;
    if (objective.kind == ObjectiveKind::inverse)
        rho = spatial_density_histogram(final_states, grid, mass_weight);
    auto const psi = adjoint_final_condition(objective, std::move(rho));
    return assign_adjoint_weights(final_states, psi);
}

//---------------------------------------------------------------------------//
/*!
 * P-OTD gradient on the given grid: pass 1 fixes g_n from the final states,
 * pass 2 replays the trajectories and accumulates the per-cell estimators.
 */
template<int D>
GradientField<D> assemble_gradient_otd(SimulationConfig<D> const& cfg,
                                       Objective<D> const& objective,
                                       GridSpec<D> const& grid,
                                       ReplayMode mode = ReplayMode::streaming)
{
    double const mass = cfg.mass_weight();
    if (mode == ReplayMode::dense)
    {
        TrajectoryStore<D> store(cfg.particles, cfg.steps);
        auto const fin = simulate(cfg, store);
        OtdAccumulator<D> acc(grid, otd_weights<D>(fin, objective, grid, mass), cfg.dt, mass);
        store.replay(acc, cfg.threads);
        return acc.result();
    }
    auto const fin = simulate(cfg);
    OtdAccumulator<D> acc(grid, otd_weights<D>(fin, objective, grid, mass), cfg.dt, mass);
    simulate(cfg, acc);
    return acc.result();
}

//---------------------------------------------------------------------------//
}  // namespace rtegrad

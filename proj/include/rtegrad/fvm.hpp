//---------------------------------------------------------------------------//
//! \file fvm.hpp
//! First-order upwind finite-volume RTE solver, its discrete adjoint and the
//! discrete gradient with respect to cell values of sigma.
//---------------------------------------------------------------------------//
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "objectives.hpp"

namespace rtegrad
{
//---------------------------------------------------------------------------//
/*!
 * Phase-space and time grid of the finite-volume scheme.
 *
 * Velocity cells are uniform on Omega with midpoint nodes:
 * v_j = -1 + (j + 1/2) dv in 1D and theta_j = -pi + (j + 1/2) dtheta in 2D.
 */
template<int D>
struct FvmGrid
{
    GridSpec<D> space;
    std::size_t velocity_cells{1};
    double dt{0.01};
    std::size_t steps{1};

    double dv() const { return velocity_measure<D>() / static_cast<double>(velocity_cells); }
    double node(std::size_t j) const
    {
        double const lo = D == 1 ? -1.0 : -std::numbers::pi;
        return lo + (static_cast<double>(j) + 0.5) * this->dv();
    }
    Velocity<D> velocity(std::size_t j) const
    {
        if constexpr (D == 1)
            return Velocity<1>{this->node(j)};
        else
            return Velocity<2>::from_angle(this->node(j));
    }
    std::size_t phase_size() const { return space.size() * velocity_cells; }

    //! dt * max_j sum_a |v_a,j| / dx_a
    double cfl() const
    {
        double worst = 0;
        for (std::size_t j = 0; j < velocity_cells; ++j)
        {
            auto const v = this->velocity(j);
            double s = 0;
            for (int a = 0; a < D; ++a)
                s += std::abs(v.component(a)) / space.width(a);
            worst = std::max(worst, s);
        }
        return dt * worst;
    }

    void validate() const
    {
        if (space.empty() || velocity_cells == 0)
            throw ConfigError("FVM grid sizes must be positive");
        if (!(dt > 0))
            throw ConfigError("FVM time step must be positive");
        if (double const c = this->cfl(); !(c <= 1.0))
            throw ConfigError("FVM CFL condition violated: dt*max|v|/dx = " + std::to_string(c));
    }
};

//! f[i][j] ~ f(t^m, x_i, v_j) stored cell-major (index i * Nv + j).
template<int D>
struct FvmState
{
    std::vector<double> values;

    double& at(std::size_t i, std::size_t j, std::size_t nv) { return values[i * nv + j]; }
    double at(std::size_t i, std::size_t j, std::size_t nv) const { return values[i * nv + j]; }
};

//! States at every time index 0..M.
template<int D>
struct FvmHistory
{
    FvmGrid<D> grid;
    std::vector<FvmState<D>> states;

    FvmState<D> const& terminal() const { return states.back(); }
};

//---------------------------------------------------------------------------//
/*!
 * Explicit upwind solver with periodic boundaries.
 *
 * Forward step, per axis a with c_a = dt/dx_a:
 *   f' = f - c_a v+ (f_i - f_{i-1}) - c_a v- (f_{i+1} - f_i)
 *          + sigma_i dt (|Omega|^-1 <f>_i - f)
 * with <f>_i = sum_j f_ij dv. The adjoint step is the exact transpose.
 */
template<int D>
class FvmSolver
{
  public:
    FvmSolver(FvmGrid<D> grid, SigmaField<D> const& sigma) : grid_(std::move(grid))
    {
        grid_.validate();
        sigma_.resize(grid_.space.size());
        for (std::size_t i = 0; i < sigma_.size(); ++i)
            sigma_[i] = sigma(grid_.space.center(i));
        this->setup();
    }

    FvmSolver(FvmGrid<D> grid, std::vector<double> sigma_cells)
        : grid_(std::move(grid)), sigma_(std::move(sigma_cells))
    {
        grid_.validate();
        if (sigma_.size() != grid_.space.size())
            throw ConfigError("FVM sigma needs one value per spatial cell");
        for (double s : sigma_)
            if (!(s >= 0) || !std::isfinite(s))
                throw ConfigError("FVM sigma values must be finite and nonnegative");
        this->setup();
    }

    FvmGrid<D> const& grid() const { return grid_; }
    std::vector<double> const& sigma() const { return sigma_; }

    FvmState<D> initial_state(InitialDistribution<D> const& f_in) const
    {
        FvmState<D> s{std::vector<double>(grid_.phase_size())};
        std::size_t const nv = grid_.velocity_cells;
        for (std::size_t i = 0; i < grid_.space.size(); ++i)
        {
            double const val = f_in.density(grid_.space.center(i));
            for (std::size_t j = 0; j < nv; ++j)
                s.at(i, j, nv) = val;
        }
        return s;
    }

    //! One forward step f^m -> f^{m+1}.
    void forward_step(FvmState<D> const& f, FvmState<D>& out) const
    {
        this->apply(f.values, out.values, false);
    }

    //! One adjoint step g^{m+1} -> g^m (transpose of forward_step).
    void adjoint_step(FvmState<D> const& g_next, FvmState<D>& out) const
    {
        this->apply(g_next.values, out.values, true);
    }

    FvmHistory<D> forward(FvmState<D> initial) const
    {
        FvmHistory<D> h{grid_, {}};
        h.states.reserve(grid_.steps + 1);
        h.states.push_back(std::move(initial));
        for (std::size_t m = 0; m < grid_.steps; ++m)
        {
            FvmState<D> next{std::vector<double>(grid_.phase_size())};
            this->forward_step(h.states.back(), next);
            h.states.push_back(std::move(next));
        }
        return h;
    }

    FvmHistory<D> forward(InitialDistribution<D> const& f_in) const
    {
        return this->forward(this->initial_state(f_in));
    }

    //! Final state only, holding two buffers.
    FvmState<D> terminal(FvmState<D> state) const
    {
        FvmState<D> next{std::vector<double>(grid_.phase_size())};
        for (std::size_t m = 0; m < grid_.steps; ++m)
        {
            this->forward_step(state, next);
            std::swap(state, next);
        }
        return state;
    }

    //! Discrete mass sum_ij f_ij |Q| dv
    double mass(FvmState<D> const& s) const
    {
        double sum = 0;
        for (double v : s.values)
            sum += v;
        return sum * grid_.space.cell_volume() * grid_.dv();
    }

    //! <f>_i = sum_j f_ij dv for every spatial cell
    std::vector<double> velocity_average(FvmState<D> const& s) const
    {
        std::size_t const nv = grid_.velocity_cells;
        std::vector<double> avg(grid_.space.size(), 0.0);
        for (std::size_t i = 0; i < avg.size(); ++i)
        {
            double a = 0;
            for (std::size_t j = 0; j < nv; ++j)
                a += s.at(i, j, nv);
            avg[i] = a * grid_.dv();
        }
        return avg;
    }

  private:
    void setup()
    {
        std::size_t const cells = grid_.space.size();
        for (int a = 0; a < D; ++a)
        {
            prev_[a].resize(cells);
            next_[a].resize(cells);
            for (std::size_t id = 0; id < cells; ++id)
            {
                auto idx = grid_.space.unflatten(id);
                auto shifted = [&](std::size_t k) {
                    auto s = idx;
                    s[a] = k;
                    std::size_t out = 0;
                    for (int b = 0; b < D; ++b)
                        out = out * grid_.space.count(b) + s[b];
                    return out;
                };
                std::size_t const n = grid_.space.count(a);
                prev_[a][id] = shifted((idx[a] + n - 1) % n);
                next_[a][id] = shifted((idx[a] + 1) % n);
            }
            courant_[a] = grid_.dt / grid_.space.width(a);
            vplus_[a].resize(grid_.velocity_cells);
            vminus_[a].resize(grid_.velocity_cells);
            for (std::size_t j = 0; j < grid_.velocity_cells; ++j)
            {
                double const v = grid_.velocity(j).component(a);
                vplus_[a][j] = std::max(v, 0.0);
                vminus_[a][j] = std::min(v, 0.0);
            }
        }
    }

    void apply(std::vector<double> const& in, std::vector<double>& out, bool transpose) const
    {
        std::size_t const nv = grid_.velocity_cells;
        std::size_t const cells = grid_.space.size();
        double const dv = grid_.dv();
        constexpr double inv_measure = 1.0 / velocity_measure<D>();
        out.resize(in.size());
        for (std::size_t i = 0; i < cells; ++i)
        {
            double const* fi = in.data() + i * nv;
            double avg = 0;
            for (std::size_t j = 0; j < nv; ++j)
                avg += fi[j];
            avg *= dv;
            double const sdt = sigma_[i] * grid_.dt;
            double* oi = out.data() + i * nv;
            for (std::size_t j = 0; j < nv; ++j)
                oi[j] = fi[j] + sdt * (inv_measure * avg - fi[j]);
            for (int a = 0; a < D; ++a)
            {
                // Forward: upwind neighbors; transpose: the mirrored stencil
                double const* fp = in.data() + prev_[a][i] * nv;
                double const* fn = in.data() + next_[a][i] * nv;
                double const c = courant_[a];
                auto const& vp = vplus_[a];
                auto const& vm = vminus_[a];
                if (!transpose)
                {
                    for (std::size_t j = 0; j < nv; ++j)
                        oi[j] -= c * (vp[j] * (fi[j] - fp[j]) + vm[j] * (fn[j] - fi[j]));
                }
                else
                {
                    for (std::size_t j = 0; j < nv; ++j)
                        oi[j] -= c * (vp[j] * (fi[j] - fn[j]) + vm[j] * (fp[j] - fi[j]));
                }
            }
        }
    }

    FvmGrid<D> grid_;
    std::vector<double> sigma_;
    std::array<std::vector<std::size_t>, D> prev_;
    std::array<std::vector<std::size_t>, D> next_;
    std::array<double, D> courant_{};
    std::array<std::vector<double>, D> vplus_;
    std::array<std::vector<double>, D> vminus_;
};

//---------------------------------------------------------------------------//
// Free-function interface
//---------------------------------------------------------------------------//
template<int D>
FvmHistory<D> fvm_forward(FvmSolver<D> const& solver, InitialDistribution<D> const& f_in)
{
    return solver.forward(f_in);
}

//! Discrete objective on the terminal state.
template<int D>
double fvm_objective(FvmSolver<D> const& solver, FvmState<D> const& terminal, Objective<D> const& objective)
{
    auto const& g = solver.grid();
    std::size_t const nv = g.velocity_cells;
    double const vol = g.space.cell_volume();
    if (objective.kind == ObjectiveKind::inverse)
    {
        auto const avg = solver.velocity_average(terminal);
        auto const& d = objective.data();
        double sum = 0;
        for (std::size_t i = 0; i < avg.size(); ++i)
        {
            double const diff = d(g.space.center(i)) - avg[i] / velocity_measure<D>();
            sum += diff * diff;
        }
        return 0.5 * vol * sum;
    }
    auto const& r = objective.weight();
    double sum = 0;
    for (std::size_t i = 0; i < g.space.size(); ++i)
    {
        auto const x = g.space.center(i);
        for (std::size_t j = 0; j < nv; ++j)
            sum += r(x, g.velocity(j)) * terminal.at(i, j, nv);
    }
    return vol * g.dv() * sum;
}

/*!
 * Final adjoint state g^M = -(1/(|Q| dv)) dJ/df^M:
 * J1: |Omega|^-1 (d_i - |Omega|^-1 <f^M>_i); J2: -r(x_i, v_j).
 */
template<int D>
FvmState<D> fvm_final_condition(FvmSolver<D> const& solver,
                                FvmState<D> const& terminal,
                                Objective<D> const& objective)
{
    auto const& g = solver.grid();
    std::size_t const nv = g.velocity_cells;
    FvmState<D> out{std::vector<double>(g.phase_size())};
    constexpr double measure = velocity_measure<D>();
    if (objective.kind == ObjectiveKind::inverse)
    {
        auto const avg = solver.velocity_average(terminal);
        auto const& d = objective.data();
        for (std::size_t i = 0; i < avg.size(); ++i)
        {
            double const val = (d(g.space.center(i)) - avg[i] / measure) / measure;
            for (std::size_t j = 0; j < nv; ++j)
                out.at(i, j, nv) = val;
        }
        return out;
    }
    auto const& r = objective.weight();
    for (std::size_t i = 0; i < g.space.size(); ++i)
    {
        auto const x = g.space.center(i);
        for (std::size_t j = 0; j < nv; ++j)
            out.at(i, j, nv) = -r(x, g.velocity(j));
    }
    return out;
}

//! Backward sweep g^{M-1}, ..., g^0 from a final condition.
template<int D>
FvmHistory<D> fvm_adjoint(FvmSolver<D> const& solver, FvmHistory<D> const& forward, FvmState<D> final_condition)
{
    auto const& g = solver.grid();
    if (forward.states.size() != g.steps + 1)
        throw ConfigError("FVM adjoint needs the full forward history");
    if (final_condition.values.size() != g.phase_size())
        throw ConfigError("FVM adjoint final condition has the wrong size");
    FvmHistory<D> adj{g, std::vector<FvmState<D>>(g.steps + 1)};
    adj.states[g.steps] = std::move(final_condition);
    for (std::size_t m = g.steps; m-- > 0;)
        solver.adjoint_step(adj.states[m + 1], adj.states[m]);
    return adj;
}

template<int D>
FvmHistory<D> fvm_adjoint(FvmSolver<D> const& solver, FvmHistory<D> const& forward, Objective<D> const& objective)
{
    return fvm_adjoint(solver, forward, fvm_final_condition(solver, forward.terminal(), objective));
}

namespace detail
{
//! Adds sum_j f_ij (g_ij - |Omega|^-1 <g>_i) into acc_i for one time index.
template<int D>
void add_gradient_term(FvmGrid<D> const& g,
                       std::vector<double> const& f,
                       std::vector<double> const& a,
                       std::vector<double>& acc)
{
    std::size_t const nv = g.velocity_cells;
    double const dv = g.dv();
    constexpr double inv_measure = 1.0 / velocity_measure<D>();
    for (std::size_t i = 0; i < g.space.size(); ++i)
    {
        double avg = 0;
        for (std::size_t j = 0; j < nv; ++j)
            avg += a[i * nv + j];
        avg *= dv * inv_measure;
        double s = 0;
        for (std::size_t j = 0; j < nv; ++j)
            s += f[i * nv + j] * (a[i * nv + j] - avg);
        acc[i] += s;
    }
}
}  // namespace detail

/*!
 * Cell values of the discrete gradient,
 *   dJ/dsigma(x_i) = dv dt sum_{m=0}^{M-1} sum_j f^m_ij (g^{m+1}_ij - |Omega|^-1 <g^{m+1}>_i),
 * i.e. the derivative with respect to sigma_i divided by |Q|.
 */
template<int D>
GradientField<D> fvm_gradient(FvmSolver<D> const& solver,
                              FvmHistory<D> const& forward,
                              FvmHistory<D> const& adjoint,
                              double mass_weight = 1.0)
{
    auto const& g = solver.grid();
    if (!(forward.grid.space == g.space) || !(adjoint.grid.space == g.space)
        || forward.states.size() != adjoint.states.size() || forward.states.size() != g.steps + 1)
    {
        throw ConfigError("FVM gradient needs forward and adjoint histories on the same grid");
    }
    GradientField<D> out(g.space, mass_weight);
    for (std::size_t m = 0; m < g.steps; ++m)
        detail::add_gradient_term(g, forward.states[m].values, adjoint.states[m + 1].values, out.values);
    for (auto& v : out.values)
        v *= g.dv() * g.dt;
    return out;
}

//! Objective value and gradient from one forward and one adjoint sweep.
template<int D>
struct FvmResult
{
    double objective;
    GradientField<D> gradient;
    double initial_mass;
    double final_mass;
};

/*!
 * Objective and gradient with checkpointed recomputation: the forward sweep
 * keeps every K-th state (K ~ sqrt(M)) and each segment is recomputed during
 * the backward sweep. Matches the full-history path up to summation order.
 */
template<int D>
FvmResult<D> fvm_solve(FvmSolver<D> const& solver,
                       InitialDistribution<D> const& f_in,
                       Objective<D> const& objective)
{
    auto const& g = solver.grid();
    std::size_t const steps = g.steps;
    auto const stride = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(steps)))));

    std::vector<FvmState<D>> checkpoints;
    FvmState<D> cur = solver.initial_state(f_in);
    double const initial_mass = solver.mass(cur);
    FvmState<D> next{std::vector<double>(g.phase_size())};
    for (std::size_t m = 0; m < steps; ++m)
    {
        if (m % stride == 0)
            checkpoints.push_back(cur);
        solver.forward_step(cur, next);
        std::swap(cur, next);
    }
    FvmState<D> const terminal = cur;

    FvmState<D> adj = fvm_final_condition(solver, terminal, objective);
    FvmState<D> adj_prev{std::vector<double>(g.phase_size())};
    GradientField<D> grad(g.space, initial_mass);
    std::vector<FvmState<D>> segment;
    for (std::size_t s = checkpoints.size(); s-- > 0;)
    {
        std::size_t const begin = s * stride;
        std::size_t const end = std::min(steps, begin + stride);
        segment.assign(1, checkpoints[s]);
        for (std::size_t m = begin + 1; m < end; ++m)
        {
            FvmState<D> nxt{std::vector<double>(g.phase_size())};
            solver.forward_step(segment.back(), nxt);
            segment.push_back(std::move(nxt));
        }
        for (std::size_t m = end; m-- > begin;)
        {
            detail::add_gradient_term(g, segment[m - begin].values, adj.values, grad.values);
            solver.adjoint_step(adj, adj_prev);
            std::swap(adj, adj_prev);
        }
    }
    for (auto& v : grad.values)
        v *= g.dv() * g.dt;
    return {fvm_objective(solver, terminal, objective), std::move(grad), initial_mass,
            solver.mass(terminal)};
}

//---------------------------------------------------------------------------//
}  // namespace rtegrad

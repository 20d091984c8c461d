//---------------------------------------------------------------------------//
//! \file core.hpp
//! Geometry, fields and phase-space primitives shared by all solvers.
//---------------------------------------------------------------------------//
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace rtegrad
{
//---------------------------------------------------------------------------//
// Errors
//---------------------------------------------------------------------------//
//! Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

//! A numerical guard tripped during a run (CLI exit code 3).
class NumericalGuard : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

template<int D>
using Point = std::array<double, D>;

//---------------------------------------------------------------------------//
/*!
 * Wrap a scalar coordinate into the half-open interval [lower, upper).
 *
 * Points already inside the interval are returned unchanged, which makes the
 * map idempotent bit-for-bit.
 */
inline double wrap_coordinate(double x, double lower, double upper)
{
    if (x >= lower && x < upper)
        return x;
    double const length = upper - lower;
    double r = x - length * std::floor((x - lower) / length);
    if (r >= upper)
        r -= length;
    if (r < lower)
        r += length;
    // Rounding can still land exactly on the right edge
    if (!(r >= lower && r < upper))
        r = lower;
    return r;
}

//---------------------------------------------------------------------------//
/*!
 * Axis-aligned periodic box D = prod [a_i, b_i).
 */
template<int D>
class SpatialDomain
{
    static_assert(D == 1 || D == 2, "only 1D and 2D geometries are supported");

  public:
    SpatialDomain() = default;

    SpatialDomain(Point<D> lower, Point<D> upper)
        : lower_(lower), upper_(upper)
    {
        for (int i = 0; i < D; ++i)
        {
            if (!(upper_[i] > lower_[i]) || !std::isfinite(lower_[i])
                || !std::isfinite(upper_[i]))
            {
                throw ConfigError("domain bounds must satisfy upper > lower on axis "
                                  + std::to_string(i));
            }
        }
    }

    Point<D> const& lower() const { return lower_; }
    Point<D> const& upper() const { return upper_; }
    double lower(int axis) const { return lower_[axis]; }
    double upper(int axis) const { return upper_[axis]; }
    double length(int axis) const { return upper_[axis] - lower_[axis]; }

    double volume() const
    {
        double v = 1;
        for (int i = 0; i < D; ++i)
            v *= this->length(i);
        return v;
    }

    bool operator==(SpatialDomain const&) const = default;

  private:
    Point<D> lower_{};
    Point<D> upper_{};
};

//! Map every real coordinate into the periodic box.
template<int D>
Point<D> wrap_periodic(std::type_identity_t<Point<D>> x, SpatialDomain<D> const& domain)
{
    for (int i = 0; i < D; ++i)
        x[i] = wrap_coordinate(x[i], domain.lower(i), domain.upper(i));
    return x;
}

//---------------------------------------------------------------------------//
// Velocity space
//---------------------------------------------------------------------------//
//! Lebesgue measure |Omega|: 2 for [-1,1], 2 pi for the unit circle.
template<int D>
constexpr double velocity_measure()
{
    if constexpr (D == 1)
        return 2.0;
    else
        return 2.0 * std::numbers::pi;
}

template<int D>
struct Velocity;

//! Velocity on the interval [-1, 1].
template<>
struct Velocity<1>
{
    double value{0};

    double component(int) const { return value; }
    //! Coordinate used to order velocity quadrature nodes
    double node() const { return value; }
    //! Map a uniform draw u in [0,1) onto [-1, 1)
    static Velocity from_uniform(double u) { return {2.0 * u - 1.0}; }

    bool operator==(Velocity const&) const = default;
};

//! Unit velocity on the circle, stored as an angle with cached components.
template<>
struct Velocity<2>
{
    double theta{0};
    double cos_theta{1};
    double sin_theta{0};

    static Velocity from_angle(double theta)
    {
        return {theta, std::cos(theta), std::sin(theta)};
    }
    double component(int axis) const { return axis == 0 ? cos_theta : sin_theta; }
    double node() const { return theta; }
    //! Map a uniform draw u in [0,1) onto theta in [-pi, pi)
    static Velocity from_uniform(double u)
    {
        return from_angle(-std::numbers::pi + 2.0 * std::numbers::pi * u);
    }

    bool operator==(Velocity const&) const = default;
};

//! One photon sample in phase space.
template<int D>
struct PhaseParticle
{
    Point<D> x{};
    Velocity<D> v{};

    bool operator==(PhaseParticle const&) const = default;
};

//---------------------------------------------------------------------------//
/*!
 * Uniform cell grid over a spatial domain.
 *
 * Cells are left-closed and right-open; flattened ids are row-major with the
 * last axis varying fastest.
 */
template<int D>
class GridSpec
{
  public:
    using Counts = std::array<std::size_t, D>;

    GridSpec() = default;

    GridSpec(SpatialDomain<D> domain, Counts counts)
        : domain_(domain), counts_(counts)
    {
        for (int i = 0; i < D; ++i)
        {
            if (counts_[i] == 0)
                throw ConfigError("grid cell count must be positive");
            width_[i] = domain_.length(i) / static_cast<double>(counts_[i]);
        }
    }

    SpatialDomain<D> const& domain() const { return domain_; }
    Counts const& counts() const { return counts_; }
    std::size_t count(int axis) const { return counts_[axis]; }
    double width(int axis) const { return width_[axis]; }

    std::size_t size() const
    {
        std::size_t n = 1;
        for (auto c : counts_)
            n *= c;
        return n;
    }

    bool empty() const { return this->size() == 0; }

    //! Volume |Q| of one cell
    double cell_volume() const
    {
        double v = 1;
        for (int i = 0; i < D; ++i)
            v *= width_[i];
        return v;
    }

    //! Index along one axis of an already wrapped coordinate
    std::size_t axis_index(int axis, double x) const
    {
        double const s = (x - domain_.lower(axis)) / width_[axis];
        auto const last = static_cast<double>(counts_[axis] - 1);
        // Clamp covers the rounding cases at the two domain edges
        double const c = std::clamp(std::floor(s), 0.0, last);
        return static_cast<std::size_t>(c);
    }

    //! Flattened id of the cell containing an already wrapped point
    std::size_t cell_index(Point<D> const& x) const
    {
        std::size_t id = 0;
        for (int i = 0; i < D; ++i)
            id = id * counts_[i] + this->axis_index(i, x[i]);
        return id;
    }

    //! Per-axis indices of a flattened id
    Counts unflatten(std::size_t id) const
    {
        Counts idx{};
        for (int i = D - 1; i >= 0; --i)
        {
            idx[i] = id % counts_[i];
            id /= counts_[i];
        }
        return idx;
    }

    double center(int axis, std::size_t i) const
    {
        return domain_.lower(axis) + (static_cast<double>(i) + 0.5) * width_[axis];
    }

    Point<D> center(std::size_t id) const
    {
        auto const idx = this->unflatten(id);
        Point<D> c{};
        for (int i = 0; i < D; ++i)
            c[i] = this->center(i, idx[i]);
        return c;
    }

    bool operator==(GridSpec const& other) const
    {
        return domain_ == other.domain_ && counts_ == other.counts_;
    }

  private:
    SpatialDomain<D> domain_{};
    Counts counts_{};
    Point<D> width_{};
};

//! Cell id of a point after periodic wrapping.
template<int D>
std::size_t cell_index(std::type_identity_t<Point<D>> const& x, GridSpec<D> const& grid)
{
    return grid.cell_index(x);
}

//---------------------------------------------------------------------------//
/*!
 * Scattering coefficient sigma(x) >= 0.
 *
 * Evaluation wraps the argument into the domain of the field's grid (for
 * piecewise-constant fields) before lookup.
 */
template<int D>
class SigmaField
{
  public:
    struct Constant
    {
        double value;
    };
    struct Piecewise
    {
        GridSpec<D> grid;
        std::vector<double> values;
    };
    struct Analytic
    {
        std::function<double(Point<D> const&)> fn;
    };

    SigmaField() : rep_(Constant{0.0}) {}

    static SigmaField constant(double value)
    {
        if (!(value >= 0) || !std::isfinite(value))
            throw ConfigError("sigma must be finite and nonnegative");
        SigmaField s;
        s.rep_ = Constant{value};
        return s;
    }

    static SigmaField piecewise(GridSpec<D> grid, std::vector<double> values)
    {
        if (values.size() != grid.size())
            throw ConfigError("piecewise sigma needs one value per grid cell");
        for (double v : values)
        {
            if (!(v >= 0) || !std::isfinite(v))
                throw ConfigError("piecewise sigma values must be finite and nonnegative");
        }
        SigmaField s;
        s.rep_ = Piecewise{std::move(grid), std::move(values)};
        return s;
    }

    //! Callables are checked for sign at evaluation time only.
    static SigmaField analytic(std::function<double(Point<D> const&)> fn)
    {
        SigmaField s;
        s.rep_ = Analytic{std::move(fn)};
        return s;
    }

    double operator()(Point<D> const& x) const
    {
        return std::visit(
            [&x](auto const& r) -> double {
                using R = std::decay_t<decltype(r)>;
                if constexpr (std::is_same_v<R, Constant>)
                {
                    return r.value;
                }
                else if constexpr (std::is_same_v<R, Piecewise>)
                {
                    auto const& dom = r.grid.domain();
                    return r.values[r.grid.cell_index(wrap_periodic(x, dom))];
                }
                else
                {
                    double const v = r.fn(x);
                    if (!(v >= 0) || !std::isfinite(v))
                        throw NumericalGuard("analytic sigma returned a negative or non-finite value");
                    return v;
                }
            },
            rep_);
    }

    bool is_constant() const { return std::holds_alternative<Constant>(rep_); }
    Constant const* as_constant() const { return std::get_if<Constant>(&rep_); }
    Piecewise const* as_piecewise() const { return std::get_if<Piecewise>(&rep_); }

  private:
    std::variant<Constant, Piecewise, Analytic> rep_;
};

template<int D>
double sigma_eval(SigmaField<D> const& field, std::type_identity_t<Point<D>> const& x)
{
    return field(x);
}

//---------------------------------------------------------------------------//
/*!
 * One scalar per grid cell, with the total initial mass carried alongside.
 */
template<int D>
struct CellField
{
    GridSpec<D> grid;
    std::vector<double> values;
    double mass_weight{1.0};

    CellField() = default;
    CellField(GridSpec<D> g, double mass = 1.0)
        : grid(std::move(g)), values(grid.size(), 0.0), mass_weight(mass)
    {
    }
    CellField(GridSpec<D> g, std::vector<double> v, double mass)
        : grid(std::move(g)), values(std::move(v)), mass_weight(mass)
    {
        if (values.size() != grid.size())
            throw ConfigError("cell field value count does not match grid");
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }
};

template<int D>
using DensityField = CellField<D>;
template<int D>
using GradientField = CellField<D>;

//---------------------------------------------------------------------------//
/*!
 * Restrict a field on a fine grid to a coarser grid that it refines exactly,
 * by averaging the fine values inside each coarse cell.
 */
template<int D>
CellField<D> restrict_average(CellField<D> const& fine, GridSpec<D> const& coarse)
{
    auto const& fg = fine.grid;
    if (!(fg.domain() == coarse.domain()))
        throw ConfigError("restriction needs grids over the same domain");
    std::array<std::size_t, D> ratio{};
    for (int i = 0; i < D; ++i)
    {
        if (fg.count(i) % coarse.count(i) != 0)
            throw ConfigError("fine grid does not refine the coarse grid");
        ratio[i] = fg.count(i) / coarse.count(i);
    }
    CellField<D> out(coarse, fine.mass_weight);
    for (std::size_t id = 0; id < fg.size(); ++id)
    {
        auto idx = fg.unflatten(id);
        std::size_t cid = 0;
        for (int i = 0; i < D; ++i)
            cid = cid * coarse.count(i) + idx[i] / ratio[i];
        out.values[cid] += fine.values[id];
    }
    double per = 1;
    for (auto r : ratio)
        per *= static_cast<double>(r);
    for (auto& v : out.values)
        v /= per;
    return out;
}

//---------------------------------------------------------------------------//
}  // namespace rtegrad

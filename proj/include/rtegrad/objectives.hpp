//---------------------------------------------------------------------------//
//! \file objectives.hpp
//! Initial data, measurements, control weights, the J1/J2 objectives and the
//! adjoint final conditions they induce.
//---------------------------------------------------------------------------//
#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>

#include "core.hpp"
#include "rng.hpp"

namespace rtegrad
{
//---------------------------------------------------------------------------//
/*!
 * Velocity-independent initial phase-space density f_in.
 *
 * - gaussian: amplitude * exp(-rate |x - center|^2) on D x Omega
 * - uniform: amplitude on D x Omega
 * - point: all mass `amplitude` at (center, velocity)
 */
template<int D>
class InitialDistribution
{
  public:
    enum class Shape
    {
        gaussian,
        uniform,
        point
    };

    static InitialDistribution gaussian(double amplitude, double rate, Point<D> center = {})
    {
        if (!(amplitude > 0) || !(rate > 0))
            throw ConfigError("gaussian initial data needs positive amplitude and rate");
        InitialDistribution d;
        d.shape_ = Shape::gaussian;
        d.amplitude_ = amplitude;
        d.rate_ = rate;
        d.center_ = center;
        return d;
    }

    static InitialDistribution uniform(double amplitude)
    {
        if (!(amplitude > 0))
            throw ConfigError("uniform initial data needs positive amplitude");
        InitialDistribution d;
        d.shape_ = Shape::uniform;
        d.amplitude_ = amplitude;
        return d;
    }

    static InitialDistribution point(Point<D> x, Velocity<D> v, double mass = 1.0)
    {
        if (!(mass > 0))
            throw ConfigError("point initial data needs positive mass");
        InitialDistribution d;
        d.shape_ = Shape::point;
        d.amplitude_ = mass;
        d.center_ = x;
        d.velocity_ = v;
        return d;
    }

    Shape shape() const { return shape_; }
    double amplitude() const { return amplitude_; }
    double rate() const { return rate_; }
    Point<D> const& center() const { return center_; }

    //! Total mass rho_tot of f_in restricted to D x Omega (closed form).
    double mass(SpatialDomain<D> const& domain) const
    {
        switch (shape_)
        {
            case Shape::gaussian: {
                double m = amplitude_ * velocity_measure<D>();
                double const s = std::sqrt(rate_);
                for (int i = 0; i < D; ++i)
                {
                    m *= 0.5 * std::sqrt(std::numbers::pi / rate_)
                         * (std::erf(s * (domain.upper(i) - center_[i]))
                            - std::erf(s * (domain.lower(i) - center_[i])));
                }
                return m;
            }
            case Shape::uniform:
                return amplitude_ * domain.volume() * velocity_measure<D>();
            case Shape::point:
                return amplitude_;
        }
        return 0;
    }

    //! Pointwise value f_in(x, .), used to initialize grid solvers.
    double density(Point<D> const& x) const
    {
        switch (shape_)
        {
            case Shape::gaussian: {
                double r2 = 0;
                for (int i = 0; i < D; ++i)
                    r2 += (x[i] - center_[i]) * (x[i] - center_[i]);
                return amplitude_ * std::exp(-rate_ * r2);
            }
            case Shape::uniform:
                return amplitude_;
            case Shape::point:
                break;
        }
        throw ConfigError("point-mass initial data has no grid representation");
    }

    //! Draw one particle from f_in / rho_tot.
    template<class Stream>
    PhaseParticle<D> sample(SpatialDomain<D> const& domain, Stream& stream) const
    {
        PhaseParticle<D> p;
        switch (shape_)
        {
            case Shape::point:
                p.x = wrap_periodic(center_, domain);
                p.v = velocity_;
                return p;
            case Shape::uniform:
                for (int i = 0; i < D; ++i)
                    p.x[i] = wrap_coordinate(domain.lower(i) + domain.length(i) * stream.uniform01(),
                                             domain.lower(i), domain.upper(i));
                break;
            case Shape::gaussian: {
                // Truncated normal per axis by rejection; std dev 1/sqrt(2 rate)
                double const scale = 1.0 / std::sqrt(2.0 * rate_);
                for (int i = 0; i < D; ++i)
                {
                    for (;;)
                    {
                        double const u1 = 1.0 - stream.uniform01();  // (0, 1]
                        double const u2 = stream.uniform01();
                        double const z = std::sqrt(-2.0 * std::log(u1))
                                         * std::cos(2.0 * std::numbers::pi * u2);
                        double const xi = center_[i] + scale * z;
                        if (xi >= domain.lower(i) && xi < domain.upper(i))
                        {
                            p.x[i] = xi;
                            break;
                        }
                    }
                }
                break;
            }
        }
        p.v = uniform_velocity_sample<D>(stream);
        return p;
    }

  private:
    Shape shape_{Shape::uniform};
    double amplitude_{1};
    double rate_{0};
    Point<D> center_{};
    Velocity<D> velocity_{};
};

//---------------------------------------------------------------------------//
/*!
 * Measured spatial density d(x): an analytic unit-mass gaussian or values on a
 * grid (piecewise constant).
 */
template<int D>
class Measurement
{
  public:
    static Measurement gaussian(double amplitude, double rate, Point<D> center)
    {
        if (!(amplitude > 0) || !(rate > 0))
            throw ConfigError("gaussian measurement needs positive amplitude and rate");
        Measurement m;
        m.amplitude_ = amplitude;
        m.rate_ = rate;
        m.center_ = center;
        return m;
    }

    //! Unit-mass gaussian (rate/pi)^(D/2) exp(-rate |x - center|^2)
    static Measurement unit_gaussian(double rate, Point<D> center)
    {
        return gaussian(std::pow(rate / std::numbers::pi, 0.5 * D), rate, center);
    }

    static Measurement gridded(DensityField<D> values)
    {
        Measurement m;
        m.grid_ = std::move(values);
        return m;
    }

    bool is_gridded() const { return grid_.has_value(); }
    DensityField<D> const* grid_values() const { return grid_ ? &*grid_ : nullptr; }

    double operator()(Point<D> const& x) const
    {
        if (grid_)
        {
            auto const& g = grid_->grid;
            return grid_->values[g.cell_index(wrap_periodic(x, g.domain()))];
        }
        double r2 = 0;
        for (int i = 0; i < D; ++i)
            r2 += (x[i] - center_[i]) * (x[i] - center_[i]);
        return amplitude_ * std::exp(-rate_ * r2);
    }

    /*!
     * Midpoint quadrature of the analytic profile over its own support box
     * (center +/- 10/sqrt(rate)); throws unless the mass is 1 within tol.
     */
    void check_unit_mass(double tol = 1e-6) const
    {
        if (grid_)
            return;
        double const half = 10.0 / std::sqrt(rate_);
        std::size_t const n = D == 1 ? 10000 : 2000;
        double const h = 2 * half / static_cast<double>(n);
        double sum = 0;
        if constexpr (D == 1)
        {
            for (std::size_t i = 0; i < n; ++i)
                sum += (*this)({center_[0] - half + (static_cast<double>(i) + 0.5) * h});
            sum *= h;
        }
        else
        {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    sum += (*this)({center_[0] - half + (static_cast<double>(i) + 0.5) * h,
                                    center_[1] - half + (static_cast<double>(j) + 0.5) * h});
            sum *= h * h;
        }
        if (!(std::abs(sum - 1) <= tol))
            throw ConfigError("measurement density does not have unit mass (got "
                              + std::to_string(sum) + ")");
    }

  private:
    double amplitude_{0};
    double rate_{1};
    Point<D> center_{};
    std::optional<DensityField<D>> grid_;
};

//---------------------------------------------------------------------------//
/*!
 * Control weight r(x, v) = scale * s(v) * I_E(x).
 *
 * I_E is a periodic product of logistic ramps: per axis with displacement
 * delta = wrap(x - center) in [-L/2, L/2),
 *   ramp((half_width + delta) / width) * ramp((half_width - delta) / width).
 */
template<int D>
class ControlWeight
{
  public:
    enum class Speed
    {
        unit,  //!< s(v) = 1
        first_component_squared  //!< s(v) = v^2 (1D), |v_1|^2 (2D)
    };

    struct Bump
    {
        Point<D> center{};
        Point<D> half_width{};
        double width{0.05};
    };

    ControlWeight() = default;
    ControlWeight(SpatialDomain<D> domain, Speed speed, std::optional<Bump> bump, double scale = 1.0)
        : domain_(domain), speed_(speed), bump_(bump), scale_(scale)
    {
        if (bump_)
        {
            if (!(bump_->width > 0))
                throw ConfigError("control bump width must be positive");
            for (int i = 0; i < D; ++i)
                if (!(bump_->half_width[i] > 0))
                    throw ConfigError("control bump half width must be positive");
        }
    }

    //! r(x, v) = c everywhere.
    static ControlWeight constant(SpatialDomain<D> domain, double c)
    {
        return ControlWeight(domain, Speed::unit, std::nullopt, c);
    }

    double speed_weight(Velocity<D> const& v) const
    {
        if (speed_ == Speed::unit)
            return 1.0;
        double const v1 = v.component(0);
        return v1 * v1;
    }

    double indicator(Point<D> const& x) const
    {
        if (!bump_)
            return 1.0;
        double out = 1.0;
        for (int i = 0; i < D; ++i)
        {
            double const len = domain_.length(i);
            double delta = x[i] - bump_->center[i];
            delta -= len * std::floor(delta / len + 0.5);
            double const h = bump_->half_width[i];
            out *= logistic((h + delta) / bump_->width) * logistic((h - delta) / bump_->width);
        }
        return out;
    }

    double operator()(Point<D> const& x, Velocity<D> const& v) const
    {
        return scale_ * this->speed_weight(v) * this->indicator(x);
    }

    Speed speed() const { return speed_; }
    std::optional<Bump> const& bump() const { return bump_; }
    double scale() const { return scale_; }

  private:
    static double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

    SpatialDomain<D> domain_{};
    Speed speed_{Speed::unit};
    std::optional<Bump> bump_;
    double scale_{1.0};
};

//---------------------------------------------------------------------------//
//! Which objective functional a run differentiates.
enum class ObjectiveKind
{
    inverse,  //!< J1 = 1/2 int |rho_T - d|^2 dx
    control  //!< J2 = int int r f(T) dx dv
};

template<int D>
struct Objective
{
    ObjectiveKind kind{ObjectiveKind::inverse};
    std::optional<Measurement<D>> measurement;
    std::optional<ControlWeight<D>> control;

    static Objective inverse(Measurement<D> d) { return {ObjectiveKind::inverse, std::move(d), {}}; }
    static Objective control_weight(ControlWeight<D> r)
    {
        return {ObjectiveKind::control, {}, std::move(r)};
    }

    Measurement<D> const& data() const
    {
        if (!measurement)
            throw ConfigError("inverse objective has no measurement");
        return *measurement;
    }
    ControlWeight<D> const& weight() const
    {
        if (!control)
            throw ConfigError("control objective has no control weight");
        return *control;
    }
};

inline char const* to_string(ObjectiveKind k)
{
    return k == ObjectiveKind::inverse ? "J1" : "J2";
}

//---------------------------------------------------------------------------//
/*!
 * Midpoint rule value of J1 = 1/2 sum_j (rho_T(xbar_j) - d(xbar_j))^2 |Q_j|.
 */
template<int D>
double eval_J1(DensityField<D> const& rho_T, Measurement<D> const& d)
{
    if (auto const* g = d.grid_values(); g && !(g->grid == rho_T.grid))
        throw ConfigError("J1: measurement grid does not match the density grid");
    double sum = 0;
    auto const& grid = rho_T.grid;
    for (std::size_t j = 0; j < grid.size(); ++j)
    {
        double const diff = rho_T.values[j] - d(grid.center(j));
        sum += diff * diff;
    }
    return 0.5 * sum * grid.cell_volume();
}

//! Monte Carlo quadrature mass_weight * (1/N) sum_n r(x_n^M, v_n^M).
template<int D>
double eval_J2_mc(std::span<PhaseParticle<D> const> ensemble,
                  ControlWeight<D> const& r,
                  double mass_weight)
{
    if (ensemble.empty())
        return 0;
    double sum = 0;
    for (auto const& p : ensemble)
        sum += r(p.x, p.v);
    return mass_weight * (sum / static_cast<double>(ensemble.size()));
}

//---------------------------------------------------------------------------//
/*!
 * Adjoint final condition psi(x, v) = -dJ/df(T).
 *
 * J1: |Omega|^-1 (d(x) - rho_T(cell of x)), read back piecewise constant from
 * the density estimate. J2: -r(x, v).
 */
template<int D>
class AdjointCondition
{
  public:
    AdjointCondition(Objective<D> objective, std::optional<DensityField<D>> rho_T)
        : objective_(std::move(objective)), rho_T_(std::move(rho_T))
    {
        if (objective_.kind == ObjectiveKind::inverse)
        {
            objective_.data();
            if (!rho_T_)
                throw ConfigError("J1 adjoint condition needs a density estimate");
        }
        else
        {
            objective_.weight();
        }
    }

    double operator()(Point<D> const& x, Velocity<D> const& v) const
    {
        if (objective_.kind == ObjectiveKind::inverse)
        {
            auto const& g = rho_T_->grid;
            double const rho = rho_T_->values[g.cell_index(wrap_periodic(x, g.domain()))];
            return (objective_.data()(x) - rho) / velocity_measure<D>();
        }
        return -(*objective_.control)(x, v);
    }

    double operator()(PhaseParticle<D> const& p) const { return (*this)(p.x, p.v); }

  private:
    Objective<D> objective_;
    std::optional<DensityField<D>> rho_T_;
};

template<int D>
AdjointCondition<D> adjoint_final_condition(Objective<D> const& objective,
                                            std::optional<DensityField<D>> rho_T = std::nullopt)
{
    return AdjointCondition<D>(objective, std::move(rho_T));
}

template<int D>
AdjointCondition<D> adjoint_final_condition(Objective<D> const& objective, DensityField<D> rho_T)
{
    return AdjointCondition<D>(objective, std::move(rho_T));
}

//---------------------------------------------------------------------------//
}  // namespace rtegrad

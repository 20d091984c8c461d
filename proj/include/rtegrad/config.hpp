//---------------------------------------------------------------------------//
//! \file config.hpp
//! Experiment configuration: JSON documents, named preset profiles and the
//! typed solver setup they expand to.
//---------------------------------------------------------------------------//
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "forward_mc.hpp"
#include "fvm.hpp"
#include "objectives.hpp"

namespace rtegrad
{
//---------------------------------------------------------------------------//
/*!
 * Declarative description of one experiment.
 *
 * Field names mirror the JSON keys, with nested objects for the dotted
 * groups (e.g. `fvm.velocity_cells`).
 */
struct ExperimentConfig
{
    std::string name{"custom"};
    int dim{1};
    std::vector<double> lower{-2.0};
    std::vector<double> upper{2.0};
    double final_time{2.0};
    double step{0.01};

    // sigma: "constant" uses sigma_value, "piecewise" uses sigma_values on
    // the gradient grid
    std::string sigma_kind{"constant"};
    double sigma_value{2.0};
    std::vector<double> sigma_values;

    std::string initial_shape{"gaussian"};
    double initial_amplitude{2.0 / std::sqrt(std::numbers::pi)};
    double initial_rate{4.0};
    std::vector<double> initial_center{0.0};

    std::string objective{"J1"};

    //! Gaussian d; amplitude 0 means "normalize to unit mass"
    double measurement_rate{5.0};
    std::vector<double> measurement_center{0.6};
    double measurement_amplitude{0.0};

    std::string control_speed{"v1_squared"};  //!< "v1_squared" or "unit"
    bool control_indicator{true};
    std::vector<double> control_center{0.5};
    std::vector<double> control_half_width{0.25};
    double control_sharpness{20.0};  //!< inverse logistic ramp width
    double control_scale{1.0};

    std::vector<std::size_t> grid_cells{40};
    std::vector<std::size_t> fvm_cells{400};
    std::size_t fvm_velocity_cells{64};
    double fvm_step{0.0};  //!< 0: same as the particle step

    //! Reference FVM used by convergence studies; zero entries fall back to fvm
    std::vector<std::size_t> oracle_cells;
    std::size_t oracle_velocity_cells{0};
    double oracle_step{0.0};

    std::string method{"otd"};
    std::size_t particles{100000};
    std::vector<std::uint64_t> seeds{1};
    unsigned threads{1};
    std::string output_dir{"out"};

    std::vector<std::size_t> converge_particles{1000, 10000, 100000, 1000000};
    std::string converge_norm{"euclidean"};  //!< "euclidean" or "scaled"

    double optimize_step{1.0};
    std::size_t optimize_iterations{10};
    double optimize_true_sigma{-1.0};  //!< >= 0: synthesize data from this sigma
    double optimize_initial_sigma{-1.0};  //!< >= 0: overrides the sigma block

    //! Number of time steps M; T must be an integer multiple of the step.
    std::size_t steps() const { return steps_for(step, "time.step"); }
    std::size_t fvm_steps() const { return steps_for(this->fvm_dt(), "fvm.step"); }
    double fvm_dt() const { return fvm_step > 0 ? fvm_step : step; }

    std::size_t steps_for(double dt, char const* key) const
    {
        if (!(dt > 0) || !std::isfinite(dt))
            throw ConfigError(std::string(key) + ": step must be positive");
        if (!(final_time >= 0) || !std::isfinite(final_time))
            throw ConfigError("time.final: must be finite and nonnegative");
        double const ratio = final_time / dt;
        auto const m = static_cast<std::size_t>(std::llround(ratio));
        if (std::abs(static_cast<double>(m) * dt - final_time) > 1e-12 * std::max(1.0, final_time))
            throw ConfigError(std::string(key) + ": time.final is not an integer multiple of the step");
        return m;
    }

    void validate() const;
};

namespace detail
{
using nlohmann::json;

inline json config_to_json(ExperimentConfig const& c)
{
    json j;
    j["name"] = c.name;
    j["dim"] = c.dim;
    j["domain"] = {{"lower", c.lower}, {"upper", c.upper}};
    j["time"] = {{"final", c.final_time}, {"step", c.step}};
    j["sigma"] = {{"kind", c.sigma_kind}, {"value", c.sigma_value}, {"values", c.sigma_values}};
    j["initial"] = {{"shape", c.initial_shape},
                    {"amplitude", c.initial_amplitude},
                    {"rate", c.initial_rate},
                    {"center", c.initial_center}};
    j["objective"] = c.objective;
    j["measurement"] = {{"rate", c.measurement_rate},
                        {"center", c.measurement_center},
                        {"amplitude", c.measurement_amplitude}};
    j["control"] = {{"speed", c.control_speed},
                    {"indicator", c.control_indicator},
                    {"center", c.control_center},
                    {"half_width", c.control_half_width},
                    {"sharpness", c.control_sharpness},
                    {"scale", c.control_scale}};
    j["grid"] = {{"cells", c.grid_cells}};
    j["fvm"] = {{"cells", c.fvm_cells},
                {"velocity_cells", c.fvm_velocity_cells},
                {"step", c.fvm_step}};
    j["oracle"] = {{"cells", c.oracle_cells},
                   {"velocity_cells", c.oracle_velocity_cells},
                   {"step", c.oracle_step}};
    j["method"] = c.method;
    j["particles"] = c.particles;
    j["seeds"] = c.seeds;
    j["threads"] = c.threads;
    j["output"] = {{"dir", c.output_dir}};
    j["converge"] = {{"particles", c.converge_particles}, {"norm", c.converge_norm}};
    j["optimize"] = {{"step", c.optimize_step},
                     {"iterations", c.optimize_iterations},
                     {"true_sigma", c.optimize_true_sigma},
                     {"initial_sigma", c.optimize_initial_sigma}};
    return j;
}

//! Read one key, reporting the dotted path on a type mismatch.
template<class T>
void read_key(json const& j, std::string const& path, T& out)
{
    json const* node = &j;
    std::size_t start = 0;
    while (true)
    {
        auto const dot = path.find('.', start);
        auto const part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        auto it = node->find(part);
        if (it == node->end())
            return;
        node = &*it;
        if (dot == std::string::npos)
            break;
        start = dot + 1;
    }
    try
    {
        out = node->get<T>();
    }
    catch (json::exception const& e)
    {
        throw ConfigError(path + ": " + e.what());
    }
}

inline ExperimentConfig config_from_json(json const& j)
{
    ExperimentConfig c;
    read_key(j, "name", c.name);
    read_key(j, "dim", c.dim);
    read_key(j, "domain.lower", c.lower);
    read_key(j, "domain.upper", c.upper);
    read_key(j, "time.final", c.final_time);
    read_key(j, "time.step", c.step);
    read_key(j, "sigma.kind", c.sigma_kind);
    read_key(j, "sigma.value", c.sigma_value);
    read_key(j, "sigma.values", c.sigma_values);
    read_key(j, "initial.shape", c.initial_shape);
    read_key(j, "initial.amplitude", c.initial_amplitude);
    read_key(j, "initial.rate", c.initial_rate);
    read_key(j, "initial.center", c.initial_center);
    read_key(j, "objective", c.objective);
    read_key(j, "measurement.rate", c.measurement_rate);
    read_key(j, "measurement.center", c.measurement_center);
    read_key(j, "measurement.amplitude", c.measurement_amplitude);
    read_key(j, "control.speed", c.control_speed);
    read_key(j, "control.indicator", c.control_indicator);
    read_key(j, "control.center", c.control_center);
    read_key(j, "control.half_width", c.control_half_width);
    read_key(j, "control.sharpness", c.control_sharpness);
    read_key(j, "control.scale", c.control_scale);
    read_key(j, "grid.cells", c.grid_cells);
    read_key(j, "fvm.cells", c.fvm_cells);
    read_key(j, "fvm.velocity_cells", c.fvm_velocity_cells);
    read_key(j, "fvm.step", c.fvm_step);
    read_key(j, "oracle.cells", c.oracle_cells);
    read_key(j, "oracle.velocity_cells", c.oracle_velocity_cells);
    read_key(j, "oracle.step", c.oracle_step);
    read_key(j, "method", c.method);
    read_key(j, "particles", c.particles);
    read_key(j, "seeds", c.seeds);
    read_key(j, "threads", c.threads);
    read_key(j, "output.dir", c.output_dir);
    read_key(j, "converge.particles", c.converge_particles);
    read_key(j, "converge.norm", c.converge_norm);
    read_key(j, "optimize.step", c.optimize_step);
    read_key(j, "optimize.iterations", c.optimize_iterations);
    read_key(j, "optimize.true_sigma", c.optimize_true_sigma);
    read_key(j, "optimize.initial_sigma", c.optimize_initial_sigma);
    return c;
}

//! Reject any key of `patch` that the schema of `reference` does not have.
inline void check_known_keys(json const& patch, json const& reference, std::string const& prefix)
{
    if (!patch.is_object())
        throw ConfigError((prefix.empty() ? std::string("config") : prefix) + ": expected an object");
    for (auto it = patch.begin(); it != patch.end(); ++it)
    {
        std::string const path = prefix.empty() ? it.key() : prefix + "." + it.key();
        auto ref = reference.find(it.key());
        if (ref == reference.end())
            throw ConfigError("unknown config key: " + path);
        if (ref->is_object())
            check_known_keys(*it, *ref, path);
    }
}

template<class T>
void require_axes(std::vector<T> const& v, int dim, char const* key)
{
    if (v.size() != static_cast<std::size_t>(dim))
        throw ConfigError(std::string(key) + ": expected " + std::to_string(dim) + " entries");
}
}  // namespace detail

inline void ExperimentConfig::validate() const
{
    if (dim != 1 && dim != 2)
        throw ConfigError("dim: must be 1 or 2");
    detail::require_axes(lower, dim, "domain.lower");
    detail::require_axes(upper, dim, "domain.upper");
    for (int i = 0; i < dim; ++i)
        if (!(upper[i] > lower[i]))
            throw ConfigError("domain.upper: must exceed domain.lower on every axis");
    this->steps();
    this->fvm_steps();
    if (sigma_kind != "constant" && sigma_kind != "piecewise")
        throw ConfigError("sigma.kind: must be \"constant\" or \"piecewise\"");
    if (!(sigma_value >= 0))
        throw ConfigError("sigma.value: must be nonnegative");
    if (initial_shape != "gaussian" && initial_shape != "uniform")
        throw ConfigError("initial.shape: must be \"gaussian\" or \"uniform\"");
    if (initial_shape == "gaussian")
        detail::require_axes(initial_center, dim, "initial.center");
    if (objective != "J1" && objective != "J2")
        throw ConfigError("objective: must be \"J1\" or \"J2\"");
    if (objective == "J1")
        detail::require_axes(measurement_center, dim, "measurement.center");
    if (control_speed != "v1_squared" && control_speed != "unit")
        throw ConfigError("control.speed: must be \"v1_squared\" or \"unit\"");
    if (objective == "J2" && control_indicator)
    {
        detail::require_axes(control_center, dim, "control.center");
        detail::require_axes(control_half_width, dim, "control.half_width");
        if (!(control_sharpness > 0))
            throw ConfigError("control.sharpness: must be positive");
    }
    detail::require_axes(grid_cells, dim, "grid.cells");
    detail::require_axes(fvm_cells, dim, "fvm.cells");
    if (!oracle_cells.empty())
        detail::require_axes(oracle_cells, dim, "oracle.cells");
    if (oracle_step > 0)
        this->steps_for(oracle_step, "oracle.step");
    if (method != "otd" && method != "dto" && method != "fvm")
        throw ConfigError("method: must be \"otd\", \"dto\" or \"fvm\"");
    if (particles == 0)
        throw ConfigError("particles: must be positive");
    if (seeds.empty())
        throw ConfigError("seeds: at least one seed is required");
    if (threads == 0)
        throw ConfigError("threads: must be positive");
    if (converge_norm != "euclidean" && converge_norm != "scaled")
        throw ConfigError("converge.norm: must be \"euclidean\" or \"scaled\"");
    for (auto n : converge_particles)
        if (n == 0)
            throw ConfigError("converge.particles: entries must be positive");
}

//---------------------------------------------------------------------------//
// Serialization
//---------------------------------------------------------------------------//
//! Canonical JSON text (sorted keys, shortest round-trip numbers).
inline std::string to_json_text(ExperimentConfig const& c, int indent = -1)
{
    return detail::config_to_json(c).dump(indent);
}

//! Apply a JSON document on top of a base config; unknown keys are rejected.
inline ExperimentConfig apply_json(ExperimentConfig const& base, std::string const& text)
{
    nlohmann::json patch;
    try
    {
        patch = nlohmann::json::parse(text);
    }
    catch (nlohmann::json::parse_error const& e)
    {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    auto full = detail::config_to_json(base);
    detail::check_known_keys(patch, full, "");
    full.merge_patch(patch);
    auto out = detail::config_from_json(full);
    out.validate();
    return out;
}

inline ExperimentConfig parse_config(std::string const& text)
{
    return apply_json(ExperimentConfig{}, text);
}

inline std::string read_text_file(std::string const& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

//! 64-bit FNV-1a of the canonical JSON text.
inline std::uint64_t config_hash(ExperimentConfig const& c)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json_text(c))
    {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/*!
 * Parse a seed list such as "1,2,7-9" (ranges inclusive).
 */
inline std::vector<std::uint64_t> parse_seed_list(std::string const& text)
{
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    auto to_u64 = [&](std::string const& t) -> std::uint64_t {
        if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
            throw ConfigError("seeds: invalid entry \"" + t + "\"");
        try
        {
            return std::stoull(t);
        }
        catch (std::exception const&)
        {
            throw ConfigError("seeds: entry out of range \"" + t + "\"");
        }
    };
    while (std::getline(ss, item, ','))
    {
        auto const dash = item.find('-');
        if (dash == std::string::npos)
        {
            out.push_back(to_u64(item));
            continue;
        }
        auto const lo = to_u64(item.substr(0, dash));
        auto const hi = to_u64(item.substr(dash + 1));
        if (hi < lo)
            throw ConfigError("seeds: descending range \"" + item + "\"");
        for (auto s = lo; s <= hi; ++s)
            out.push_back(s);
    }
    if (out.empty())
        throw ConfigError("seeds: empty list");
    return out;
}

//---------------------------------------------------------------------------//
// Preset profiles
//---------------------------------------------------------------------------//
inline std::vector<std::string> profile_names()
{
    return {"inverse-1d", "inverse-2d", "control-1d", "control-2d"};
}

/*!
 * Named experiment presets. Physical parameters (domains, T, dt, sigma, f_in,
 * d, s(v)) are fixed by the experiments they reproduce; grids, the indicator
 * bump and sample sizes are declared choices.
 */
inline ExperimentConfig profile(std::string const& name)
{
    ExperimentConfig c;
    c.name = name;
    c.sigma_kind = "constant";
    c.sigma_value = 2.0;
    c.seeds = {1, 2, 3, 4, 5};
    c.particles = 1000000;
    if (name == "inverse-1d" || name == "control-1d")
    {
        c.dim = 1;
        c.lower = {-2.0};
        c.upper = {2.0};
        c.initial_amplitude = 2.0 / std::sqrt(std::numbers::pi);
        c.initial_rate = 4.0;
        c.initial_center = {0.0};
        c.grid_cells = {40};
        if (name == "inverse-1d")
        {
            c.final_time = 2.0;
            c.step = 0.01;
            c.objective = "J1";
            c.measurement_rate = 5.0;
            c.measurement_center = {0.6};
            c.fvm_cells = {400};
            c.fvm_velocity_cells = 64;
            c.oracle_cells = {3200};
            c.oracle_velocity_cells = 128;
            c.oracle_step = 0.00125;
        }
        else
        {
            c.final_time = 0.5;
            c.step = 0.005;
            c.objective = "J2";
            c.control_speed = "v1_squared";
            c.control_center = {0.5};
            c.control_half_width = {0.25};
            c.control_sharpness = 20.0;
            c.fvm_cells = {800};
            c.fvm_velocity_cells = 128;
            c.oracle_cells = {3200};
            c.oracle_velocity_cells = 256;
            c.oracle_step = 0.00125;
        }
    }
    else if (name == "inverse-2d")
    {
        c.dim = 2;
        c.lower = {-1.0, -1.0};
        c.upper = {1.0, 1.0};
        c.final_time = 0.5;
        c.step = 0.01;
        c.initial_amplitude = 4.0 / std::numbers::pi;
        c.initial_rate = 4.0;
        c.initial_center = {0.0, 0.0};
        c.objective = "J1";
        c.measurement_rate = 5.0;
        c.measurement_center = {0.3, -0.3};
        c.grid_cells = {20, 20};
        c.fvm_cells = {100, 100};
        c.fvm_velocity_cells = 32;
    }
    else if (name == "control-2d")
    {
        c.dim = 2;
        c.lower = {-1.5, -1.5};
        c.upper = {1.5, 1.5};
        c.final_time = 0.2;
        c.step = 0.005;
        c.initial_amplitude = 4.0 / std::numbers::pi;
        c.initial_rate = 4.0;
        c.initial_center = {0.0, 0.0};
        c.objective = "J2";
        c.control_speed = "v1_squared";
        c.control_center = {0.5, 0.5};
        c.control_half_width = {0.25, 0.25};
        c.control_sharpness = 20.0;
        c.grid_cells = {30, 30};
        c.fvm_cells = {150, 150};
        c.fvm_velocity_cells = 32;
    }
    else
    {
        throw ConfigError("unknown profile: " + name);
    }
    c.validate();
    return c;
}

//---------------------------------------------------------------------------//
/*!
 * Typed solver inputs for one dimension.
 */
template<int D>
struct ExperimentSetup
{
    SpatialDomain<D> domain;
    GridSpec<D> grid;  //!< gradient grid of the particle methods
    SigmaField<D> sigma;
    InitialDistribution<D> initial = InitialDistribution<D>::uniform(1.0);
    Objective<D> objective;
    FvmGrid<D> fvm;
    FvmGrid<D> oracle;

    //! Particle configuration for one (N, seed).
    SimulationConfig<D> simulation(ExperimentConfig const& c, std::size_t particles, std::uint64_t seed) const
    {
        SimulationConfig<D> s;
        s.domain = domain;
        s.sigma = sigma;
        s.initial = initial;
        s.particles = particles;
        s.dt = c.step;
        s.steps = c.steps();
        s.seed = MasterSeed{seed};
        s.threads = c.threads;
        return s;
    }
};

namespace detail
{
template<int D>
Point<D> to_point(std::vector<double> const& v)
{
    Point<D> p{};
    for (int i = 0; i < D && i < static_cast<int>(v.size()); ++i)
        p[i] = v[i];
    return p;
}

template<int D>
typename GridSpec<D>::Counts to_counts(std::vector<std::size_t> const& v)
{
    typename GridSpec<D>::Counts n{};
    for (int i = 0; i < D; ++i)
        n[i] = v[i];
    return n;
}
}  // namespace detail

template<int D>
ExperimentSetup<D> build_setup(ExperimentConfig const& c)
{
    c.validate();
    if (c.dim != D)
        throw ConfigError("dim: config dimension does not match the requested solver");
    ExperimentSetup<D> s;
    s.domain = SpatialDomain<D>(detail::to_point<D>(c.lower), detail::to_point<D>(c.upper));
    s.grid = GridSpec<D>(s.domain, detail::to_counts<D>(c.grid_cells));

    if (c.sigma_kind == "constant")
    {
        s.sigma = SigmaField<D>::constant(c.sigma_value);
    }
    else
    {
        try
        {
            s.sigma = SigmaField<D>::piecewise(s.grid, c.sigma_values);
        }
        catch (ConfigError const& e)
        {
            throw ConfigError(std::string("sigma.values: ") + e.what());
        }
    }

    try
    {
        if (c.initial_shape == "gaussian")
            s.initial = InitialDistribution<D>::gaussian(c.initial_amplitude, c.initial_rate,
                                                         detail::to_point<D>(c.initial_center));
        else
            s.initial = InitialDistribution<D>::uniform(c.initial_amplitude);
    }
    catch (ConfigError const& e)
    {
        throw ConfigError(std::string("initial: ") + e.what());
    }

    if (c.objective == "J1")
    {
        auto const center = detail::to_point<D>(c.measurement_center);
        auto d = c.measurement_amplitude > 0
                     ? Measurement<D>::gaussian(c.measurement_amplitude, c.measurement_rate, center)
                     : Measurement<D>::unit_gaussian(c.measurement_rate, center);
        try
        {
            d.check_unit_mass();
        }
        catch (ConfigError const& e)
        {
            throw ConfigError(std::string("measurement: ") + e.what());
        }
        s.objective = Objective<D>::inverse(std::move(d));
    }
    else
    {
        auto const speed = c.control_speed == "unit" ? ControlWeight<D>::Speed::unit
                                                     : ControlWeight<D>::Speed::first_component_squared;
        std::optional<typename ControlWeight<D>::Bump> bump;
        if (c.control_indicator)
        {
            bump = typename ControlWeight<D>::Bump{detail::to_point<D>(c.control_center),
                                                   detail::to_point<D>(c.control_half_width),
                                                   1.0 / c.control_sharpness};
        }
        try
        {
            s.objective = Objective<D>::control_weight(ControlWeight<D>(s.domain, speed, bump, c.control_scale));
        }
        catch (ConfigError const& e)
        {
            throw ConfigError(std::string("control: ") + e.what());
        }
    }

    auto make_fvm = [&](std::vector<std::size_t> const& cells, std::size_t nv, double dt, char const* key) {
        FvmGrid<D> g{GridSpec<D>(s.domain, detail::to_counts<D>(cells)), nv, dt, c.steps_for(dt, key)};
        try
        {
            g.validate();
        }
        catch (ConfigError const& e)
        {
            throw ConfigError(std::string(key) + ": " + e.what());
        }
        return g;
    };
    s.fvm = make_fvm(c.fvm_cells, c.fvm_velocity_cells, c.fvm_dt(), "fvm");
    s.oracle = make_fvm(c.oracle_cells.empty() ? c.fvm_cells : c.oracle_cells,
                        c.oracle_velocity_cells > 0 ? c.oracle_velocity_cells : c.fvm_velocity_cells,
                        c.oracle_step > 0 ? c.oracle_step : c.fvm_dt(),
                        "oracle");
    return s;
}

//---------------------------------------------------------------------------//
}  // namespace rtegrad

//---------------------------------------------------------------------------//
//! \file harness.hpp
//! Experiment drivers: gradient runs, convergence studies, a gradient-descent
//! demonstration, result tables and plot-data emission.
//---------------------------------------------------------------------------//
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "core.hpp"
#include "forward_mc.hpp"
#include "fvm.hpp"
#include "grad_dto.hpp"
#include "grad_otd.hpp"

namespace rtegrad
{
inline constexpr char const* version_string = "1.0.0";
inline constexpr char const* results_schema = "rtegrad-results/1";
inline constexpr char const* manifest_schema = "rtegrad-manifest/1";

//! Shortest text that round-trips through strtod for typical values: 17 digits.
inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

//---------------------------------------------------------------------------//
// Result tables
//---------------------------------------------------------------------------//
struct ResultRow
{
    std::string experiment;
    std::string method;
    int dim{1};
    std::size_t particles{0};
    std::string seed;  //!< decimal seed, or "mean"
    std::string quantity;  //!< gradient, l2_error, fit_slope, objective, ...
    std::size_t index{0};  //!< cell id, iteration, or 0
    double x1{0};
    double x2{0};
    double value{0};
};

/*!
 * Long-format CSV of experiment outputs. The first line is a schema comment,
 * the second the column header.
 */
struct ResultTable
{
    std::vector<ResultRow> rows;

    static constexpr char const* header = "experiment,method,dim,particles,seed,quantity,index,x1,x2,value";

    void append(ResultTable const& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

    std::string to_csv() const
    {
        std::ostringstream os;
        os << "# schema " << results_schema << '\n' << header << '\n';
        for (auto const& r : rows)
        {
            os << r.experiment << ',' << r.method << ',' << r.dim << ',' << r.particles << ',' << r.seed
               << ',' << r.quantity << ',' << r.index << ',' << format_double(r.x1) << ','
               << format_double(r.x2) << ',' << format_double(r.value) << '\n';
        }
        return os.str();
    }

    static ResultTable from_csv(std::string const& text)
    {
        std::istringstream is(text);
        std::string line;
        ResultTable t;
        if (!std::getline(is, line) || line != std::string("# schema ") + results_schema)
            throw ConfigError("results table: missing or unsupported schema line");
        if (!std::getline(is, line) || line != header)
            throw ConfigError("results table: unexpected column header");
        while (std::getline(is, line))
        {
            if (line.empty())
                continue;
            std::vector<std::string> f;
            std::stringstream ls(line);
            std::string cell;
            while (std::getline(ls, cell, ','))
                f.push_back(cell);
            if (f.size() != 10)
                throw ConfigError("results table: malformed row: " + line);
            ResultRow r;
            try
            {
                r.experiment = f[0];
                r.method = f[1];
                r.dim = std::stoi(f[2]);
                r.particles = std::stoull(f[3]);
                r.seed = f[4];
                r.quantity = f[5];
                r.index = std::stoull(f[6]);
                r.x1 = std::stod(f[7]);
                r.x2 = std::stod(f[8]);
                r.value = std::stod(f[9]);
            }
            catch (std::exception const&)
            {
                throw ConfigError("results table: malformed row: " + line);
            }
            t.rows.push_back(std::move(r));
        }
        return t;
    }
};

inline void write_text_file(std::filesystem::path const& path, std::string const& text)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ConfigError("cannot write output file: " + path.string());
    out << text;
}

//---------------------------------------------------------------------------//
// Field CSVs
//---------------------------------------------------------------------------//
//! Cell-centered field as CSV: cell_center(s), then one value column.
template<int D>
std::string field_csv(CellField<D> const& field, char const* value_column)
{
    std::ostringstream os;
    if constexpr (D == 1)
        os << "cell_center," << value_column << '\n';
    else
        os << "cell_center_x1,cell_center_x2," << value_column << '\n';
    for (std::size_t c = 0; c < field.size(); ++c)
    {
        auto const x = field.grid.center(c);
        for (int i = 0; i < D; ++i)
            os << format_double(x[i]) << ',';
        os << format_double(field.values[c]) << '\n';
    }
    return os.str();
}

template<int D>
std::string gradient_csv(GradientField<D> const& g)
{
    return field_csv(g, "gradient_value");
}

template<int D>
std::string density_csv(DensityField<D> const& rho)
{
    return field_csv(rho, "density");
}

template<int D>
void check_finite(CellField<D> const& f, std::string const& what)
{
    for (double v : f.values)
        if (!std::isfinite(v))
            throw NumericalGuard(what + " produced a non-finite value");
}

template<int D>
void append_field_rows(ResultTable& t,
                       ExperimentConfig const& c,
                       std::string const& method,
                       std::size_t particles,
                       std::string const& seed,
                       std::string const& quantity,
                       CellField<D> const& f)
{
    for (std::size_t id = 0; id < f.size(); ++id)
    {
        auto const x = f.grid.center(id);
        t.rows.push_back({c.name, method, D, particles, seed, quantity, id, x[0], D == 2 ? x[D - 1] : 0.0,
                          f.values[id]});
    }
}

//---------------------------------------------------------------------------//
// Gradient runs
//---------------------------------------------------------------------------//
//! FVM gradient on the given phase grid, averaged onto the gradient grid.
template<int D>
GradientField<D> fvm_reference(ExperimentSetup<D> const& s, FvmGrid<D> const& fvm)
{
    FvmSolver<D> solver(fvm, s.sigma);
    auto res = fvm_solve(solver, s.initial, s.objective);
    return restrict_average(res.gradient, s.grid);
}

//! One particle gradient for (method, N, seed).
template<int D>
GradientField<D> particle_gradient(ExperimentConfig const& c,
                                   ExperimentSetup<D> const& s,
                                   std::string const& method,
                                   std::size_t particles,
                                   std::uint64_t seed)
{
    auto const sim = s.simulation(c, particles, seed);
    if (method == "otd")
        return assemble_gradient_otd(sim, s.objective, s.grid);
    if (method == "dto")
        return assemble_gradient_dto(sim, s.objective, s.grid);
    throw ConfigError("method: \"" + method + "\" is not a particle method");
}

template<int D>
struct GradientRun
{
    GradientField<D> mean;
    std::vector<GradientField<D>> per_seed;
    ResultTable table;
};

//! Element-wise mean of fields on a common grid, in the given order.
template<int D>
GradientField<D> field_mean(std::vector<GradientField<D>> const& fields)
{
    GradientField<D> out(fields.front().grid, fields.front().mass_weight);
    for (auto const& f : fields)
        for (std::size_t c = 0; c < out.size(); ++c)
            out.values[c] += f.values[c];
    for (auto& v : out.values)
        v /= static_cast<double>(fields.size());
    return out;
}

/*!
 * Dispatch to the configured method. Particle methods average over the seed
 * list; the FVM runs once.
 */
template<int D>
GradientRun<D> run_gradient(ExperimentConfig const& c, ExperimentSetup<D> const& s, std::string const& method)
{
    GradientRun<D> run;
    if (method == "fvm")
    {
        run.mean = fvm_reference(s, s.fvm);
        check_finite(run.mean, "fvm gradient");
        append_field_rows(run.table, c, method, 0, "none", "gradient", run.mean);
        return run;
    }
    for (auto seed : c.seeds)
    {
        run.per_seed.push_back(particle_gradient(c, s, method, c.particles, seed));
        check_finite(run.per_seed.back(), method + " gradient");
        append_field_rows(run.table, c, method, c.particles, std::to_string(seed), "gradient", run.per_seed.back());
    }
    run.mean = field_mean(run.per_seed);
    append_field_rows(run.table, c, method, c.particles, "mean", "gradient_mean", run.mean);
    return run;
}

//---------------------------------------------------------------------------//
// Convergence study
//---------------------------------------------------------------------------//
struct ConvergencePoint
{
    std::size_t particles;
    std::vector<double> errors;  //!< one per seed
    double mean_error;
};

struct LineFit
{
    double slope;
    double intercept;  //!< log10 error at N = 1
};

//! Least-squares fit of y = intercept + slope * x.
inline LineFit fit_line(std::vector<double> const& x, std::vector<double> const& y)
{
    double const n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
    {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    double const slope = sxy / sxx;
    return {slope, my - slope * mx};
}

struct ConvergenceResult
{
    std::vector<ConvergencePoint> points;
    bool exact_match{false};
    LineFit fit{0, 0};
    double root_n_constant{0};  //!< C of the fixed-slope law error = C / sqrt(N)
    ResultTable table;

    double predicted_error(double particles) const { return root_n_constant / std::sqrt(particles); }
};

template<int D>
double field_distance(CellField<D> const& a, CellField<D> const& b, bool scaled)
{
    double s = 0;
    for (std::size_t c = 0; c < a.size(); ++c)
        s += (a.values[c] - b.values[c]) * (a.values[c] - b.values[c]);
    if (scaled)
        s *= a.grid.cell_volume();
    return std::sqrt(s);
}

/*!
 * Mean over seeds of ||G_method - G_oracle||_2 for each N, and the log-log
 * least-squares slope. The oracle is the FVM on the oracle grid.
 */
template<int D>
ConvergenceResult convergence_study(ExperimentConfig const& c,
                                    ExperimentSetup<D> const& s,
                                    std::string const& method,
                                    std::vector<std::size_t> const& particle_counts,
                                    std::vector<std::uint64_t> const& seeds)
{
    if (particle_counts.size() < 3)
        throw ConfigError("converge.particles: a slope fit needs at least 3 particle counts");
    if (seeds.empty())
        throw ConfigError("seeds: at least one seed is required");
    bool const scaled = c.converge_norm == "scaled";
    auto const oracle = fvm_reference(s, s.oracle);
    check_finite(oracle, "fvm oracle");

    ConvergenceResult out;
    std::vector<double> lx, ly;
    bool all_zero = true;
    for (auto n : particle_counts)
    {
        ConvergencePoint p{n, {}, 0};
        for (auto seed : seeds)
        {
            auto const g = method == "fvm" ? fvm_reference(s, s.oracle) : particle_gradient(c, s, method, n, seed);
            check_finite(g, method + " gradient");
            double const e = field_distance(g, oracle, scaled);
            p.errors.push_back(e);
            out.table.rows.push_back({c.name, method, D, n, std::to_string(seed), "l2_error", 0, 0, 0, e});
        }
        for (double e : p.errors)
            p.mean_error += e;
        p.mean_error /= static_cast<double>(p.errors.size());
        out.table.rows.push_back({c.name, method, D, n, "mean", "l2_error_mean", 0, 0, 0, p.mean_error});
        all_zero = all_zero && p.mean_error == 0;
        if (p.mean_error > 0)
        {
            lx.push_back(std::log10(static_cast<double>(n)));
            ly.push_back(std::log10(p.mean_error));
        }
        out.points.push_back(std::move(p));
    }
    out.exact_match = all_zero;
    if (out.exact_match)
    {
        out.table.rows.push_back({c.name, method, D, 0, "mean", "exact_match", 0, 0, 0, 1.0});
        return out;
    }
    if (lx.size() < 3)
        throw NumericalGuard("convergence fit: fewer than 3 particle counts with nonzero error");
    out.fit = fit_line(lx, ly);
    double lc = 0;
    for (std::size_t i = 0; i < lx.size(); ++i)
        lc += ly[i] + 0.5 * lx[i];
    out.root_n_constant = std::pow(10.0, lc / static_cast<double>(lx.size()));
    out.table.rows.push_back({c.name, method, D, 0, "mean", "fit_slope", 0, 0, 0, out.fit.slope});
    out.table.rows.push_back({c.name, method, D, 0, "mean", "fit_intercept", 0, 0, 0, out.fit.intercept});
    out.table.rows.push_back({c.name, method, D, 0, "mean", "root_n_constant", 0, 0, 0, out.root_n_constant});
    return out;
}

//---------------------------------------------------------------------------//
// Gradient descent demonstration
//---------------------------------------------------------------------------//
struct DescentHistory
{
    std::vector<std::vector<double>> sigma;  //!< iterate k on the gradient grid
    std::vector<double> objective;  //!< FVM objective at iterate k
    ResultTable table;
};

/*!
 * Objective with synthetic data: when optimize.true_sigma is set, J1's
 * measurement is replaced by the FVM density at that sigma.
 */
template<int D>
Objective<D> descent_objective(ExperimentConfig const& c, ExperimentSetup<D> const& s)
{
    if (c.optimize_true_sigma < 0)
        return s.objective;
    if (s.objective.kind != ObjectiveKind::inverse)
        throw ConfigError("optimize.true_sigma: synthetic data needs the J1 objective");
    FvmSolver<D> truth(s.fvm, SigmaField<D>::constant(c.optimize_true_sigma));
    auto const fwd = truth.forward(s.initial);
    auto avg = truth.velocity_average(fwd.terminal());
    DensityField<D> rho(s.fvm.space, truth.mass(fwd.states.front()));
    for (std::size_t i = 0; i < avg.size(); ++i)
        rho.values[i] = avg[i] / velocity_measure<D>();
    return Objective<D>::inverse(Measurement<D>::gridded(std::move(rho)));
}

/*!
 * sigma_{k+1} = max(0, sigma_k - step * G(sigma_k)) with sigma piecewise
 * constant on the gradient grid. Aborts after 5 consecutive increases of J.
 */
template<int D>
DescentHistory gd_demo(ExperimentConfig const& c,
                       ExperimentSetup<D> const& s,
                       std::string const& method,
                       double step,
                       std::size_t iterations)
{
    auto objective = descent_objective(c, s);
    std::vector<double> sigma(s.grid.size(), c.sigma_value);
    if (c.optimize_initial_sigma >= 0)
        std::fill(sigma.begin(), sigma.end(), c.optimize_initial_sigma);
    else if (c.sigma_kind == "piecewise")
        sigma = c.sigma_values;

    DescentHistory h;
    auto record = [&](std::size_t k, double j) {
        h.sigma.push_back(sigma);
        h.objective.push_back(j);
        h.table.rows.push_back({c.name, method, D, c.particles, "none", "objective", k, 0, 0, j});
        for (std::size_t id = 0; id < sigma.size(); ++id)
        {
            auto const x = s.grid.center(id);
            h.table.rows.push_back({c.name, method, D, c.particles, "none", "sigma_" + std::to_string(k), id,
                                    x[0], D == 2 ? x[D - 1] : 0.0, sigma[id]});
        }
    };

    std::size_t increases = 0;
    for (std::size_t k = 0;; ++k)
    {
        auto const field = SigmaField<D>::piecewise(s.grid, sigma);
        FvmSolver<D> solver(s.fvm, field);
        auto const res = fvm_solve(solver, s.initial, objective);
        if (!std::isfinite(res.objective))
            throw NumericalGuard("optimize: objective became non-finite at iterate " + std::to_string(k));
        if (!h.objective.empty())
        {
            increases = res.objective > h.objective.back() ? increases + 1 : 0;
            if (increases >= 5)
                throw NumericalGuard("optimize: objective increased 5 consecutive iterates");
        }
        record(k, res.objective);
        if (k == iterations)
            break;

        GradientField<D> g;
        if (method == "fvm")
        {
            g = restrict_average(res.gradient, s.grid);
        }
        else
        {
            auto sim = s.simulation(c, c.particles, c.seeds.front() + k);
            sim.sigma = field;
            g = method == "otd" ? assemble_gradient_otd(sim, objective, s.grid)
                                : assemble_gradient_dto(sim, objective, s.grid);
        }
        check_finite(g, "optimize gradient");
        for (std::size_t i = 0; i < sigma.size(); ++i)
            sigma[i] = std::max(0.0, sigma[i] - step * g.values[i]);
    }
    return h;
}

//---------------------------------------------------------------------------//
// Plot data
//---------------------------------------------------------------------------//
/*!
 * Write plot-ready CSV files from a result table into `dir`:
 * gradients as (cell_center, value) or (x1, x2, value); convergence as
 * (log10_N, log10_error) plus the fitted line endpoints; objective histories
 * as (iteration, objective). Returns the written paths in creation order.
 */
inline std::vector<std::filesystem::path> emit_plotdata(ResultTable const& table, std::filesystem::path const& dir)
{
    std::vector<std::filesystem::path> written;
    // Keyed, ordered outputs keep file contents independent of row order
    std::map<std::string, std::string> files;
    std::map<std::string, std::pair<double, double>> fits;
    std::map<std::string, std::pair<double, double>> ranges;

    for (auto const& r : table.rows)
    {
        std::string const stem = r.experiment + "_" + r.method;
        if (r.quantity == "gradient_mean" || (r.quantity == "gradient" && r.method == "fvm"))
        {
            auto const key = stem + (r.particles ? "_N" + std::to_string(r.particles) : "") + "_gradient.csv";
            auto& f = files[key];
            if (f.empty())
                f = r.dim == 1 ? "cell_center,value\n" : "x1,x2,value\n";
            f += format_double(r.x1) + ",";
            if (r.dim == 2)
                f += format_double(r.x2) + ",";
            f += format_double(r.value) + "\n";
        }
        else if (r.quantity == "l2_error_mean" && r.value > 0)
        {
            auto& f = files[stem + "_convergence.csv"];
            if (f.empty())
                f = "log10_N,log10_error\n";
            double const lx = std::log10(static_cast<double>(r.particles));
            f += format_double(lx) + "," + format_double(std::log10(r.value)) + "\n";
            auto [it, fresh] = ranges.try_emplace(stem, lx, lx);
            if (!fresh)
                it->second = {std::min(it->second.first, lx), std::max(it->second.second, lx)};
        }
        else if (r.quantity == "fit_slope")
        {
            fits[stem].first = r.value;
        }
        else if (r.quantity == "fit_intercept")
        {
            fits[stem].second = r.value;
        }
        else if (r.quantity == "objective")
        {
            auto& f = files[stem + "_objective.csv"];
            if (f.empty())
                f = "iteration,objective\n";
            f += std::to_string(r.index) + "," + format_double(r.value) + "\n";
        }
    }
    for (auto const& [stem, fit] : fits)
    {
        auto r = ranges.find(stem);
        if (r == ranges.end())
            continue;
        std::string f = "log10_N,log10_error_fit\n";
        for (double lx : {r->second.first, r->second.second})
            f += format_double(lx) + "," + format_double(fit.second + fit.first * lx) + "\n";
        files[stem + "_convergence_fit.csv"] = f;
    }
    for (auto const& [name, text] : files)
    {
        write_text_file(dir / name, text);
        written.push_back(dir / name);
    }
    return written;
}

//---------------------------------------------------------------------------//
// Manifest
//---------------------------------------------------------------------------//
/*!
 * Run manifest: tool version, command, config hash and canonical config,
 * seeds, thread count and the output files. Contains no timestamps.
 */
inline std::string manifest_json(std::string const& command,
                                 ExperimentConfig const& c,
                                 std::vector<std::string> const& outputs,
                                 nlohmann::json extra = nlohmann::json::object())
{
    char hash[20];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(c)));
    nlohmann::json j;
    j["schema"] = manifest_schema;
    j["version"] = version_string;
    j["command"] = command;
    j["config_hash"] = std::string("fnv1a64:") + hash;
    j["config"] = nlohmann::json::parse(to_json_text(c));
    j["seeds"] = c.seeds;
    j["seed"] = c.seeds.front();
    j["threads"] = c.threads;
    j["outputs"] = outputs;
    j["results_schema"] = results_schema;
    if (!extra.empty())
        j["summary"] = std::move(extra);
    return j.dump(2) + "\n";
}

//---------------------------------------------------------------------------//
}  // namespace rtegrad

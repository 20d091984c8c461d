//---------------------------------------------------------------------------//
//! \file rtegrad_cli.cpp
//! Command-line driver: forward runs, the three gradients, convergence
//! studies, the descent demo and plot-data emission.
//---------------------------------------------------------------------------//
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rtegrad/rtegrad.hpp"

namespace fs = std::filesystem;
using namespace rtegrad;

namespace
{
enum ExitCode
{
    exit_ok = 0,
    exit_failure = 1,
    exit_config = 2,
    exit_guard = 3
};

struct GlobalOptions
{
    std::string config_path;
    std::string profile_name;
    std::uint64_t seed{0};
    bool have_seed{false};
    std::string seeds;
    unsigned threads{0};
    std::string out_dir;
    std::size_t particles{0};
    bool full{false};
};

struct CommandOptions
{
    std::string method;
    double step{0};
    std::size_t iterations{0};
    bool have_iterations{false};
    std::string input;
};

ExperimentConfig load_config(GlobalOptions const& g, std::string const& command)
{
    ExperimentConfig c = g.profile_name.empty() ? ExperimentConfig{} : profile(g.profile_name);
    if (!g.config_path.empty())
        c = apply_json(c, read_text_file(g.config_path));
    if (g.full && c.dim == 2)
    {
        // Long-running seed averages of the 2D figures
        std::size_t const count = command == "grad-dto" ? 300 : 100;
        c.seeds.clear();
        for (std::size_t s = 1; s <= count; ++s)
            c.seeds.push_back(s);
    }
    if (!g.seeds.empty())
        c.seeds = parse_seed_list(g.seeds);
    if (g.have_seed)
        c.seeds = {g.seed};
    if (g.threads > 0)
        c.threads = g.threads;
    if (!g.out_dir.empty())
        c.output_dir = g.out_dir;
    if (g.particles > 0)
        c.particles = g.particles;
    c.validate();
    return c;
}

void finish(std::string const& command,
            ExperimentConfig const& c,
            std::vector<std::string> const& outputs,
            nlohmann::json summary = nlohmann::json::object())
{
    auto all = outputs;
    all.push_back("manifest.json");
    write_text_file(fs::path(c.output_dir) / "manifest.json", manifest_json(command, c, all, std::move(summary)));
    for (auto const& o : all)
        std::cout << (fs::path(c.output_dir) / o).string() << '\n';
}

template<int D>
int run_command(std::string const& command, ExperimentConfig const& c, CommandOptions const& opt)
{
    fs::path const out(c.output_dir);
    if (command == "emit-plot")
    {
        std::string const input = opt.input.empty() ? (out / "results.csv").string() : opt.input;
        auto table = ResultTable::from_csv(read_text_file(input));
        auto written = emit_plotdata(table, out / "plot");
        std::vector<std::string> names;
        for (auto const& p : written)
            names.push_back(fs::relative(p, out).string());
        finish(command, c, names);
        return exit_ok;
    }

    auto const setup = build_setup<D>(c);
    if (command == "forward")
    {
        auto const sim = setup.simulation(c, c.particles, c.seeds.front());
        auto const fin = simulate(sim);
        auto const rho = spatial_density_histogram<D>(fin, setup.grid, sim.mass_weight());
        check_finite(rho, "forward density");
        write_text_file(out / "forward.csv", density_csv(rho));
        finish(command, c, {"forward.csv"});
        return exit_ok;
    }
    if (command == "grad-otd" || command == "grad-dto" || command == "grad-fvm")
    {
        std::string const method = command.substr(5);
        auto const run = run_gradient(c, setup, method);
        std::string const name = "gradient_" + method + ".csv";
        write_text_file(out / name, gradient_csv(run.mean));
        write_text_file(out / "results.csv", run.table.to_csv());
        finish(command, c, {name, "results.csv"});
        return exit_ok;
    }
    if (command == "converge")
    {
        std::string const method = opt.method.empty() ? c.method : opt.method;
        auto const res = convergence_study(c, setup, method, c.converge_particles, c.seeds);
        std::string csv = "particles,mean_error\n";
        for (auto const& p : res.points)
            csv += std::to_string(p.particles) + "," + format_double(p.mean_error) + "\n";
        write_text_file(out / "convergence.csv", csv);
        write_text_file(out / "results.csv", res.table.to_csv());
        nlohmann::json summary;
        summary["method"] = method;
        summary["exact_match"] = res.exact_match;
        if (!res.exact_match)
        {
            summary["slope"] = res.fit.slope;
            summary["intercept_log10"] = res.fit.intercept;
            summary["root_n_constant"] = res.root_n_constant;
            std::cout << "slope " << format_double(res.fit.slope) << " intercept "
                      << format_double(res.fit.intercept) << '\n';
        }
        else
        {
            std::cout << "exact-match: error is zero at every N\n";
        }
        finish(command, c, {"convergence.csv", "results.csv"}, summary);
        return exit_ok;
    }
    if (command == "optimize")
    {
        std::string const method = opt.method.empty() ? std::string("fvm") : opt.method;
        double const step = opt.step > 0 ? opt.step : c.optimize_step;
        std::size_t const iters = opt.have_iterations ? opt.iterations : c.optimize_iterations;
        auto const h = gd_demo(c, setup, method, step, iters);
        std::string csv = "iteration,objective\n";
        for (std::size_t k = 0; k < h.objective.size(); ++k)
            csv += std::to_string(k) + "," + format_double(h.objective[k]) + "\n";
        write_text_file(out / "optimize.csv", csv);
        GradientField<D> sigma(setup.grid, h.sigma.back(), 1.0);
        write_text_file(out / "sigma_final.csv", field_csv(sigma, "sigma"));
        write_text_file(out / "results.csv", h.table.to_csv());
        finish(command, c, {"optimize.csv", "sigma_final.csv", "results.csv"});
        return exit_ok;
    }
    throw ConfigError("unknown command: " + command);
}
}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Gradients of radiative-transfer objectives by particle and finite-volume methods"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    CommandOptions opt;
    app.add_option("--config", g.config_path, "JSON config applied on top of the profile");
    app.add_option("--profile", g.profile_name, "Preset profile")
        ->check(CLI::IsMember(profile_names()));
    auto* seed_opt = app.add_option("--seed", g.seed, "Single master seed");
    app.add_option("--seeds", g.seeds, "Seed list, e.g. 1,2,5-9");
    app.add_option("--threads", g.threads, "Worker threads");
    app.add_option("--out", g.out_dir, "Output directory");
    app.add_option("--particles", g.particles, "Particle count N");
    app.add_flag("--full", g.full, "Use the long 2D seed averages (100 OTD / 300 DTO runs)");

    std::vector<std::pair<std::string, std::string>> const commands = {
        {"forward", "Run the particle solver and write the final spatial density"},
        {"grad-otd", "Correlated-adjoint particle gradient"},
        {"grad-dto", "Score-function particle gradient (J2 only)"},
        {"grad-fvm", "Finite-volume discrete-adjoint gradient"},
        {"converge", "Particle gradient error against the FVM oracle versus N"},
        {"optimize", "Projected gradient descent on piecewise-constant sigma"},
        {"emit-plot", "Turn a results table into plot-ready CSV files"},
    };
    for (auto const& [name, help] : commands)
    {
        auto* sub = app.add_subcommand(name, help);
        if (name == "converge" || name == "optimize")
            sub->add_option("--method", opt.method, "otd, dto or fvm")->check(CLI::IsMember({"otd", "dto", "fvm"}));
        if (name == "optimize")
        {
            sub->add_option("--step", opt.step, "Descent step size");
            sub->add_option("--iterations", opt.iterations, "Number of iterations");
        }
        if (name == "emit-plot")
            sub->add_option("--input", opt.input, "Results table (default <out>/results.csv)");
    }

    try
    {
        app.parse(argc, argv);
    }
    catch (CLI::ParseError const& e)
    {
        int const code = app.exit(e);
        return code == 0 ? exit_ok : exit_config;
    }
    g.have_seed = seed_opt->count() > 0;
    std::string const command = app.get_subcommands().front()->get_name();
    if (auto* sub = app.get_subcommand(command); sub->get_option_no_throw("--iterations"))
        opt.have_iterations = sub->get_option("--iterations")->count() > 0;

    try
    {
        auto const c = load_config(g, command);
        return c.dim == 1 ? run_command<1>(command, c, opt) : run_command<2>(command, c, opt);
    }
    catch (ConfigError const& e)
    {
        std::cerr << "config error: " << e.what() << '\n';
        return exit_config;
    }
    catch (NumericalGuard const& e)
    {
        std::cerr << "numerical guard: " << e.what() << '\n';
        return exit_guard;
    }
    catch (std::exception const& e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
}

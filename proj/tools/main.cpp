#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tdac/io.hpp"
#include "tdac/sim.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<int> k;
    std::optional<std::uint64_t> seed;
    std::optional<double> sigma;
    std::optional<std::string> m_csv;
    std::optional<int> replicates;
    std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key=value config file");
    cmd->add_option("--k", args.k, "discretization depth");
    cmd->add_option("--seed", args.seed, "master seed");
    cmd->add_option("--sigma", args.sigma, "noise standard deviation");
    cmd->add_option("--m", args.m_csv, "observation count(s), comma separated");
    cmd->add_option("--replicates", args.replicates, "Monte-Carlo replicates");
    cmd->add_option("--out", args.out_dir, "output directory");
}

tdac::io::RunConfig resolve(const CommonArgs& args) {
    tdac::io::RunConfig config;
    if (!args.config_path.empty()) config = tdac::io::load_config(args.config_path);
    tdac::io::Overrides overrides;
    overrides.k = args.k;
    overrides.seed = args.seed;
    overrides.sigma = args.sigma;
    overrides.replicates = args.replicates;
    if (args.out_dir) overrides.out_dir = *args.out_dir;
    if (args.m_csv) {
        std::vector<int> ms;
        std::stringstream ss(*args.m_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) ms.push_back(std::stoi(tok));
        if (ms.empty()) throw std::runtime_error("--m: expected at least one integer");
        overrides.m_list = ms;
    }
    tdac::io::apply(overrides, config);
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transdermal alcohol diffusion-model calibration"};
    app.require_subcommand(1);

    CommonArgs est_args, sim_args, mc_args, gamma_args;
    std::string tac_path, brac_path, gamma_tac, gamma_brac;

    CLI::App* estimate = app.add_subcommand("estimate", "fit q to a session and report inference");
    estimate->add_option("--tac", tac_path, "TAC CSV (time_hours,tac_mg_dl)")->required();
    estimate->add_option("--brac", brac_path, "BrAC CSV (time_hours,brac_pct)")->required();
    add_common(estimate, est_args);

    CLI::App* simulate = app.add_subcommand("simulate", "write a synthetic session");
    add_common(simulate, sim_args);

    CLI::App* mc_table = app.add_subcommand("mc-table", "Monte-Carlo study over observation counts");
    add_common(mc_table, mc_args);

    CLI::App* gamma = app.add_subcommand("gamma", "information matrix and asymptotic covariance");
    gamma->add_option("--tac", gamma_tac, "optional session TAC CSV for the empirical Gamma_n");
    gamma->add_option("--brac", gamma_brac, "optional session BrAC CSV");
    add_common(gamma, gamma_args);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (estimate->parsed())
            return tdac::io::cmd_estimate(resolve(est_args), tac_path, brac_path);
        if (simulate->parsed()) return tdac::io::cmd_simulate(resolve(sim_args));
        if (mc_table->parsed()) return tdac::io::cmd_mc_table(resolve(mc_args));
        if (gamma->parsed()) {
            std::optional<std::filesystem::path> tac, brac;
            if (!gamma_tac.empty()) tac = gamma_tac;
            if (!gamma_brac.empty()) brac = gamma_brac;
            if (tac.has_value() != brac.has_value())
                throw std::runtime_error("gamma: --tac and --brac must be given together");
            return tdac::io::cmd_gamma(resolve(gamma_args), tac, brac);
        }
    } catch (const tdac::sim::McAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

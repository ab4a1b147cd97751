#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

// vendored single-header nlohmann/json
#include "json.hpp"

#include "tdac/estim.hpp"
#include "tdac/sim.hpp"

namespace tdac::io {

using nlohmann::json;

/// Everything the CLI can configure: discretization, optimizer, noise model,
/// drinking diary, and study sizes. Loaded from a flat `key = value` file
/// and overridable by command-line flags (flags win).
struct RunConfig {
    int k = 32;
    int brac_subintervals = 300;

    estim::FitSettings fit;
    diffusion::ParamQ init{1.0, 1.0};

    double sigma = 0.01;
    std::uint64_t seed = 20260809;

    // "pde" (discretize at depth k), "demo" (two-state demo system), or
    // "file:<path>" with explicit D, E, F, C matrices in JSON.
    std::string template_spec = "pde";

    double horizon_T = 1.0;
    std::vector<int> m_list = {20, 60, 100};
    int replicates = 100;
    diffusion::ParamQ q0{1.0, 1.0};

    sim::MMParams mm;
    int mm_grid = 600;
    int gamma_nodes = 10000;
    int threads = 0;
    std::filesystem::path out_dir = ".";
};

/// Parses the flat key-value config grammar; throws std::runtime_error with
/// a line number on malformed input or unknown keys.
RunConfig load_config(const std::filesystem::path& path);

/// Flag values that override the config when present.
struct Overrides {
    std::optional<int> k;
    std::optional<std::uint64_t> seed;
    std::optional<double> sigma;
    std::optional<std::vector<int>> m_list;
    std::optional<int> replicates;
    std::optional<std::filesystem::path> out_dir;
};

void apply(const Overrides& overrides, RunConfig& config);

/// Builds the system template selected by config.template_spec.
diffusion::SystemTemplate build_template(const RunConfig& config);

struct LoadedSession {
    estim::Session session;
    std::vector<std::string> warnings;
};

/// Reads the two-table session format (TAC: time_hours,tac_mg_dl; BrAC:
/// time_hours,brac_pct), resamples BrAC onto config.brac_subintervals uniform
/// subintervals of [0, T] by endpoint interpolation, and returns the session.
/// T is the last observation time across both tables. Rows are sorted with a
/// warning if needed; malformed rows raise with their line number.
LoadedSession load_session(const std::filesystem::path& tac_path,
                           const std::filesystem::path& brac_path, const RunConfig& config);

json report_to_json(const estim::FitResult& fit, const RunConfig& config,
                    const std::vector<std::string>& notes);
json mc_report_to_json(const sim::McReport& report);

void write_text(const std::filesystem::path& path, const std::string& content);
void write_replicates_csv(const std::filesystem::path& path,
                          const std::vector<sim::McReport>& reports);

/// CLI entry points. Exit codes: 0 success, 1 input/config error,
/// 2 numerical non-convergence.
int cmd_estimate(const RunConfig& config, const std::filesystem::path& tac_path,
                 const std::filesystem::path& brac_path);
int cmd_simulate(const RunConfig& config);
int cmd_mc_table(const RunConfig& config);
int cmd_gamma(const RunConfig& config, const std::optional<std::filesystem::path>& tac_path,
              const std::optional<std::filesystem::path>& brac_path);

}  // namespace tdac::io

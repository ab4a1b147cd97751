#include "tdac/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace tdac::io {

using diffusion::BracCurve;
using estim::Session;

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(where + ": expected a number, got '" + s + "'");
    }
}

long parse_int(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const long v = std::stol(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw std::runtime_error(where + ": expected an integer, got '" + s + "'");
    }
}

bool parse_bool(const std::string& s, const std::string& where) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw std::runtime_error(where + ": expected true/false, got '" + s + "'");
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

json matrix_to_json(const Eigen::Ref<const Mat>& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(row);
    }
    return rows;
}

struct TableRow {
    double time;
    double value;
};

// Reads a two-column CSV with the given header; raises with file:line on any
// malformed content.
std::vector<TableRow> read_table(const std::filesystem::path& path,
                                 const std::string& expected_header,
                                 std::vector<std::string>& warnings) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty file");
    ++line_no;
    {
        auto cols = split(line, ',');
        auto expected = split(expected_header, ',');
        if (cols != expected)
            throw std::runtime_error(path.string() + ":1: expected header '" + expected_header +
                                     "', got '" + trim(line) + "'");
    }

    std::vector<TableRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto where = path.string() + ":" + std::to_string(line_no);
        const auto cols = split(line, ',');
        if (cols.size() != 2) throw std::runtime_error(where + ": expected 2 columns, got " +
                                                       std::to_string(cols.size()));
        TableRow row{parse_double(cols[0], where), parse_double(cols[1], where)};
        if (!std::isfinite(row.time) || !std::isfinite(row.value))
            throw std::runtime_error(where + ": non-finite value");
        if (row.time < 0.0) throw std::runtime_error(where + ": negative time");
        rows.push_back(row);
    }
    if (rows.size() < 2)
        throw std::runtime_error(path.string() + ": needs at least 2 data rows, got " +
                                 std::to_string(rows.size()));
    if (!std::is_sorted(rows.begin(), rows.end(),
                        [](const TableRow& a, const TableRow& b) { return a.time < b.time; })) {
        std::stable_sort(rows.begin(), rows.end(), [](const TableRow& a, const TableRow& b) {
            return a.time < b.time;
        });
        warnings.push_back(path.string() + ": rows were not sorted by time; sorted on load");
    }
    return rows;
}

// Piecewise-linear interpolant of the sample points, zero before the first
// sample (observation starts at or before first intake) and constant after
// the last.
double interp_brac(const std::vector<TableRow>& samples, double t) {
    if (t < samples.front().time) return 0.0;
    if (t >= samples.back().time) return samples.back().value;
    auto it = std::upper_bound(samples.begin(), samples.end(), t,
                               [](double v, const TableRow& r) { return v < r.time; });
    const TableRow& hi = *it;
    const TableRow& lo = *(it - 1);
    const double w = (t - lo.time) / (hi.time - lo.time);
    return lo.value + w * (hi.value - lo.value);
}

Mat json_to_matrix(const json& j, const std::string& name) {
    if (!j.is_array() || j.empty())
        throw std::runtime_error("template file: '" + name + "' must be a nonempty 2d array");
    const auto rows = j.size();
    const auto cols = j.at(0).size();
    Mat m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!j.at(i).is_array() || j.at(i).size() != cols)
            throw std::runtime_error("template file: ragged rows in '" + name + "'");
        for (std::size_t c = 0; c < cols; ++c) m(i, c) = j.at(i).at(c).get<double>();
    }
    return m;
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto where = path.string() + ":" + std::to_string(line_no);
        std::string body = line;
        if (const auto hash = body.find('#'); hash != std::string::npos) body.erase(hash);
        body = trim(body);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw std::runtime_error(where + ": expected 'key = value'");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));

        if (key == "k") cfg.k = static_cast<int>(parse_int(value, where));
        else if (key == "brac_subintervals")
            cfg.brac_subintervals = static_cast<int>(parse_int(value, where));
        else if (key == "tol") cfg.fit.tol = parse_double(value, where);
        else if (key == "max_iter") cfg.fit.max_iter = static_cast<int>(parse_int(value, where));
        else if (key == "q1_min") cfg.fit.q1_min = parse_double(value, where);
        else if (key == "q2_min") cfg.fit.q2_min = parse_double(value, where);
        else if (key == "multistart") cfg.fit.multistart = parse_bool(value, where);
        else if (key == "init_q1") cfg.init.q1 = parse_double(value, where);
        else if (key == "init_q2") cfg.init.q2 = parse_double(value, where);
        else if (key == "sigma") cfg.sigma = parse_double(value, where);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(value, where));
        else if (key == "template") cfg.template_spec = value;
        else if (key == "T") cfg.horizon_T = parse_double(value, where);
        else if (key == "m") {
            cfg.m_list.clear();
            for (const auto& tok : split(value, ','))
                cfg.m_list.push_back(static_cast<int>(parse_int(tok, where)));
        } else if (key == "replicates")
            cfg.replicates = static_cast<int>(parse_int(value, where));
        else if (key == "q0_1") cfg.q0.q1 = parse_double(value, where);
        else if (key == "q0_2") cfg.q0.q2 = parse_double(value, where);
        else if (key == "mm_dose_times") {
            cfg.mm.dose_times.clear();
            for (const auto& tok : split(value, ','))
                cfg.mm.dose_times.push_back(parse_double(tok, where));
        } else if (key == "mm_dose_amount") cfg.mm.dose_amount = parse_double(value, where);
        else if (key == "mm_absorption_rate") cfg.mm.absorption_rate = parse_double(value, where);
        else if (key == "mm_vmax") cfg.mm.vmax = parse_double(value, where);
        else if (key == "mm_km") cfg.mm.km = parse_double(value, where);
        else if (key == "mm_grid") cfg.mm_grid = static_cast<int>(parse_int(value, where));
        else if (key == "gamma_nodes") cfg.gamma_nodes = static_cast<int>(parse_int(value, where));
        else if (key == "threads") cfg.threads = static_cast<int>(parse_int(value, where));
        else if (key == "out") cfg.out_dir = value;
        else throw std::runtime_error(where + ": unknown key '" + key + "'");
    }
    if (cfg.k < 2) throw std::runtime_error(path.string() + ": k must be >= 2");
    if (cfg.brac_subintervals < 1)
        throw std::runtime_error(path.string() + ": brac_subintervals must be >= 1");
    if (!(cfg.fit.tol > 0.0)) throw std::runtime_error(path.string() + ": tol must be > 0");
    return cfg;
}

void apply(const Overrides& overrides, RunConfig& config) {
    if (overrides.k) config.k = *overrides.k;
    if (overrides.seed) config.seed = *overrides.seed;
    if (overrides.sigma) config.sigma = *overrides.sigma;
    if (overrides.m_list) config.m_list = *overrides.m_list;
    if (overrides.replicates) config.replicates = *overrides.replicates;
    if (overrides.out_dir) config.out_dir = *overrides.out_dir;
}

diffusion::SystemTemplate build_template(const RunConfig& config) {
    if (config.template_spec == "pde") return diffusion::discretize_pde(config.k);
    if (config.template_spec == "demo") return sim::demo_template();
    if (config.template_spec.rfind("file:", 0) == 0) {
        const std::filesystem::path path = config.template_spec.substr(5);
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open template file " + path.string());
        json j;
        in >> j;
        diffusion::SystemTemplate tpl;
        tpl.D = json_to_matrix(j.at("D"), "D");
        tpl.E = json_to_matrix(j.at("E"), "E");
        tpl.F = json_to_matrix(j.at("F"), "F");
        tpl.C = json_to_matrix(j.at("C"), "C");
        tpl.k = static_cast<int>(tpl.D.rows());
        tpl.validate();
        return tpl;
    }
    throw std::runtime_error("unknown template '" + config.template_spec +
                             "' (expected pde, demo, or file:<path>)");
}

LoadedSession load_session(const std::filesystem::path& tac_path,
                           const std::filesystem::path& brac_path, const RunConfig& config) {
    std::vector<std::string> warnings;
    const auto tac = read_table(tac_path, "time_hours,tac_mg_dl", warnings);
    const auto brac = read_table(brac_path, "time_hours,brac_pct", warnings);
    for (const TableRow& r : brac)
        if (r.value < 0.0)
            throw std::runtime_error(brac_path.string() + ": negative BrAC value");

    const double horizon = std::max(tac.back().time, brac.back().time);
    const int n = config.brac_subintervals;
    std::vector<double> levels(n);
    for (int i = 0; i < n; ++i) {
        const double a = horizon * static_cast<double>(i) / n;
        const double b = horizon * static_cast<double>(i + 1) / n;
        levels[i] = 0.5 * (interp_brac(brac, a) + interp_brac(brac, b));
    }
    BracCurve curve = BracCurve::from_uniform_grid(horizon, std::move(levels));

    std::vector<double> times(tac.size()), values(tac.size());
    for (std::size_t j = 0; j < tac.size(); ++j) {
        times[j] = tac[j].time;
        values[j] = tac[j].value;
    }
    return {estim::Session(horizon, std::move(times), std::move(values), std::move(curve)),
            std::move(warnings)};
}

json report_to_json(const estim::FitResult& fit, const RunConfig& config,
                    const std::vector<std::string>& notes) {
    json j;
    j["q_hat"] = {fit.q_hat.q1, fit.q_hat.q2};
    j["sigma2_hat"] = fit.sigma2_hat;
    j["objective_value"] = fit.objective_value;
    j["iterations"] = fit.iterations;
    j["converged"] = fit.converged;
    j["gradient_norm"] = fit.gradient_norm;
    j["observations"] = fit.observations;
    j["gamma_hat"] = matrix_to_json(fit.gamma_hat);
    j["gamma_condition"] = fit.gamma_condition;
    j["identifiable"] = fit.identifiable;
    if (fit.identifiable) {
        j["covariance"] = matrix_to_json(fit.cov_qhat);
        const auto ellipse = estim::confidence_ellipse(
            Eigen::Vector2d(fit.q_hat.q1, fit.q_hat.q2), fit.cov_qhat);
        j["ellipse"] = {{"center", {ellipse.center(0), ellipse.center(1)}},
                        {"axes", matrix_to_json(ellipse.axes)},
                        {"radii", {ellipse.radii(0), ellipse.radii(1)}},
                        {"level", ellipse.level},
                        {"chi2_quantile", ellipse.chi2_quantile}};
    } else {
        j["covariance"] = nullptr;
        j["ellipse"] = nullptr;
    }
    j["config"] = {{"k", config.k},
                   {"brac_subintervals", config.brac_subintervals},
                   {"tol", config.fit.tol},
                   {"max_iter", config.fit.max_iter}};
    j["notes"] = notes;
    return j;
}

json mc_report_to_json(const sim::McReport& report) {
    json j;
    j["m"] = report.m;
    j["replicates"] = report.replicates;
    j["failures"] = report.failures;
    j["sigma"] = report.sigma;
    j["mean_qhat"] = {report.mean_qhat(0), report.mean_qhat(1)};
    j["sd_qhat"] = {report.sd_qhat(0), report.sd_qhat(1)};
    j["scaled_cov"] = matrix_to_json(report.scaled_cov);
    j["theoretical_sigma"] = matrix_to_json(report.theoretical_sigma);
    if (std::isfinite(report.mahalanobis_ks_pvalue))
        j["mahalanobis_ks_pvalue"] = report.mahalanobis_ks_pvalue;
    else
        j["mahalanobis_ks_pvalue"] = nullptr;
    j["mean_sigma2_hat"] = report.mean_sigma2_hat;
    return j;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

void write_replicates_csv(const std::filesystem::path& path,
                          const std::vector<sim::McReport>& reports) {
    std::string csv = "m,replicate,seed,q1_hat,q2_hat,sigma2_hat,converged\n";
    for (const sim::McReport& report : reports) {
        for (std::size_t r = 0; r < report.rows.size(); ++r) {
            const sim::ReplicateRow& row = report.rows[r];
            csv += std::to_string(report.m) + "," + std::to_string(r) + "," +
                   std::to_string(row.seed) + "," + fmt(row.q1_hat) + "," + fmt(row.q2_hat) +
                   "," + fmt(row.sigma2_hat) + "," + (row.converged ? "1" : "0") + "\n";
        }
    }
    write_text(path, csv);
}

int cmd_estimate(const RunConfig& config, const std::filesystem::path& tac_path,
                 const std::filesystem::path& brac_path) {
    LoadedSession loaded = [&] {
        return load_session(tac_path, brac_path, config);
    }();
    for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";

    const auto tpl = build_template(config);
    const estim::Dataset data{{loaded.session}};
    const estim::FitResult result = estim::fit(tpl, data, config.init, config.fit);

    std::vector<std::string> notes = {
        "brac interpolated onto " + std::to_string(config.brac_subintervals) +
        " uniform subintervals from time zero; model state starts at zero, so tac observations "
        "preceding the first brac sample are fitted against the zero-input response"};
    if (!result.identifiable)
        notes.push_back("gamma_hat is numerically singular; covariance and ellipse omitted");

    json report = report_to_json(result, config, notes);

    // plot-ready fitted curve at the observation times
    const auto fitted = diffusion::tac_profile(diffusion::realize(tpl, result.q_hat),
                                               loaded.session.brac, loaded.session.times);
    std::string csv = "time_hours,tac_observed,tac_fitted\n";
    json residuals = json::array();
    for (std::size_t jdx = 0; jdx < fitted.size(); ++jdx) {
        csv += fmt(loaded.session.times[jdx]) + "," + fmt(loaded.session.tac_values[jdx]) + "," +
               fmt(fitted[jdx]) + "\n";
        residuals.push_back(loaded.session.tac_values[jdx] - fitted[jdx]);
    }
    report["residuals"] = residuals;

    std::filesystem::create_directories(config.out_dir);
    write_text(config.out_dir / "report.json", report.dump(2) + "\n");
    write_text(config.out_dir / "fit_curve.csv", csv);

    std::cout << "q_hat = (" << result.q_hat.q1 << ", " << result.q_hat.q2 << ")"
              << "  sigma2_hat = " << result.sigma2_hat << "  converged = " << std::boolalpha
              << result.converged << "\n";
    return result.converged ? 0 : 2;
}

int cmd_simulate(const RunConfig& config) {
    const auto tpl = build_template(config);
    const BracCurve mu = sim::mm_brac(config.mm, config.horizon_T, config.mm_grid);
    const int m = config.m_list.empty() ? 100 : config.m_list.front();
    const Session session = sim::synthesize(tpl, config.q0, mu, m, config.sigma, config.seed);

    std::string tac_csv = "time_hours,tac_mg_dl\n";
    for (std::size_t j = 0; j < session.times.size(); ++j)
        tac_csv += fmt(session.times[j]) + "," + fmt(session.tac_values[j]) + "\n";

    std::string brac_csv = "time_hours,brac_pct\n";
    const double h = mu.horizon() / static_cast<double>(mu.segments());
    for (std::size_t i = 0; i < mu.segments(); ++i)
        brac_csv += fmt(mu.breakpoints()[i] + 0.5 * h) + "," + fmt(mu.levels()[i]) + "\n";

    std::filesystem::create_directories(config.out_dir);
    write_text(config.out_dir / "tac.csv", tac_csv);
    write_text(config.out_dir / "brac.csv", brac_csv);
    std::cout << "wrote " << (config.out_dir / "tac.csv").string() << " (" << m << " rows) and "
              << (config.out_dir / "brac.csv").string() << "\n";
    return 0;
}

namespace {

std::string matrix_inline(const Eigen::Matrix2d& m) {
    std::ostringstream os;
    os << "[[" << m(0, 0) << ", " << m(0, 1) << "], [" << m(1, 0) << ", " << m(1, 1) << "]]";
    return os.str();
}

}  // namespace

int cmd_mc_table(const RunConfig& config) {
    const auto tpl = build_template(config);
    const BracCurve mu = sim::mm_brac(config.mm, config.horizon_T, config.mm_grid);

    sim::McSettings settings;
    settings.fit = config.fit;
    settings.fit_init = config.init;
    settings.gamma_nodes = config.gamma_nodes;
    settings.threads = config.threads;

    std::vector<sim::McReport> reports;
    for (const int m : config.m_list) {
        const sim::McReport report = sim::monte_carlo(tpl, config.q0, mu, m, config.sigma,
                                                      config.replicates, config.seed, settings);
        reports.push_back(report);

        const double n_ok = report.replicates - report.failures;
        const Eigen::Vector2d halfwidth = 1.96 * report.sd_qhat / std::sqrt(n_ok);
        std::cout << "m = " << m << "  (replicates " << report.replicates << ", failures "
                  << report.failures << ")\n"
                  << "  mean q_hat = (" << report.mean_qhat(0) << " +/- " << halfwidth(0) << ", "
                  << report.mean_qhat(1) << " +/- " << halfwidth(1)
                  << ")   [95% half-width of the mean]\n"
                  << "  scaled covariance (m * sample cov) = " << matrix_inline(report.scaled_cov)
                  << "\n"
                  << "  ks p-value (mahalanobis vs chi-square_2) = "
                  << report.mahalanobis_ks_pvalue << "\n";
    }
    if (!reports.empty())
        std::cout << "theoretical sigma^2 Gamma^{-1} (quadrature) = "
                  << matrix_inline(reports.front().theoretical_sigma) << "\n";

    json j = json::array();
    for (const auto& report : reports) j.push_back(mc_report_to_json(report));
    std::filesystem::create_directories(config.out_dir);
    write_text(config.out_dir / "mc_report.json", j.dump(2) + "\n");
    write_replicates_csv(config.out_dir / "mc_replicates.csv", reports);
    return 0;
}

int cmd_gamma(const RunConfig& config, const std::optional<std::filesystem::path>& tac_path,
              const std::optional<std::filesystem::path>& brac_path) {
    const auto tpl = build_template(config);

    std::optional<estim::Session> session;
    if (tac_path && brac_path) {
        LoadedSession loaded = load_session(*tac_path, *brac_path, config);
        for (const auto& w : loaded.warnings) std::cerr << "warning: " << w << "\n";
        session.emplace(std::move(loaded.session));
    }

    const BracCurve mu =
        session ? session->brac : sim::mm_brac(config.mm, config.horizon_T, config.mm_grid);
    const Eigen::Matrix2d gamma = estim::gamma_limit(tpl, config.q0, mu, config.gamma_nodes);

    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(gamma);
    if (!(es.eigenvalues()(0) > 0.0) || es.eigenvalues()(1) / es.eigenvalues()(0) > 1e12) {
        std::cerr << "error: Gamma is numerically singular; the BrAC curve carries no "
                     "information about q (zero BrAC?)\n";
        return 1;
    }
    const Eigen::Matrix2d sigma_matrix = config.sigma * config.sigma * gamma.inverse();

    std::cout << "Gamma (quadrature, " << config.gamma_nodes
              << " nodes) = " << matrix_inline(gamma) << "\n"
              << "sigma^2 Gamma^{-1} = " << matrix_inline(sigma_matrix) << "\n";

    json j;
    j["gamma"] = matrix_to_json(gamma);
    j["sigma2_gamma_inverse"] = matrix_to_json(sigma_matrix);
    if (session) {
        const Eigen::Matrix2d empirical = estim::gamma_n(tpl, {{*session}}, config.q0);
        std::cout << "empirical Gamma_n (session) = " << matrix_inline(empirical) << "\n";
        j["gamma_n"] = matrix_to_json(empirical);
    }
    std::filesystem::create_directories(config.out_dir);
    write_text(config.out_dir / "gamma.json", j.dump(2) + "\n");
    return 0;
}

}  // namespace tdac::io

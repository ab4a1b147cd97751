// Regenerates data/sample_session: a synthetic single-episode session with
// the cadence of a lab-collected biosensor data set (27 BrAC rows from the
// session start, 29 TAC rows starting 67 minutes later, both at roughly
// 10-minute spacing with jitter, values quantized to instrument resolution).
//
//   make_sample_session <output-dir>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "tdac/diffusion.hpp"
#include "tdac/rng.hpp"
#include "tdac/sim.hpp"

namespace {

double round_to(double v, int decimals) {
    const double s = std::pow(10.0, decimals);
    return std::round(v * s) / s;
}

std::string row(double t, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f,%.3f\n", t, v);
    return buf;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: make_sample_session <output-dir>\n");
        return 1;
    }
    const std::filesystem::path out_dir = argv[1];
    std::filesystem::create_directories(out_dir);

    const double horizon = 6.3;
    tdac::sim::MMParams mm;
    mm.dose_times = {0.1, 0.4, 0.7};
    mm.dose_amount = 1.0;
    mm.vmax = 0.024;  // BrAC back to 0.000 inside the sampled window

    // Fine grid for generation; the estimate command re-interpolates the
    // sampled BrAC onto its own coarser grid, as it would for real data.
    const tdac::diffusion::BracCurve curve = tdac::sim::mm_brac(mm, horizon, 6300);

    tdac::RandomStream rng(0x5E551011u);

    std::string brac_csv = "time_hours,brac_pct\n";
    double t = 0.0;
    for (int j = 0; j < 27; ++j) {
        brac_csv += row(t, round_to(curve.level_at(t), 3));
        t += (10.0 + 2.5 * rng.normal()) / 60.0;
    }

    const tdac::diffusion::ParamQ q_true{0.6341, 782.6};  // gain in mg/dl per % alcohol
    const auto tpl = tdac::diffusion::discretize_pde(32);
    const auto sys = tdac::diffusion::realize(tpl, q_true);

    std::vector<double> tac_times;
    t = 67.0 / 60.0;
    for (int j = 0; j < 29; ++j) {
        tac_times.push_back(round_to(std::min(t, horizon), 4));
        t += (10.7 + 1.5 * rng.normal()) / 60.0;
    }
    tac_times.back() = horizon;

    const auto f = tdac::diffusion::tac_profile(sys, curve, tac_times);
    std::string tac_csv = "time_hours,tac_mg_dl\n";
    const double noise_sd = 0.75;  // mg/dl
    for (std::size_t j = 0; j < tac_times.size(); ++j) {
        const double y = std::max(0.0, f[j] + noise_sd * rng.normal());
        tac_csv += row(tac_times[j], round_to(y, 3));
    }

    const auto write = [](const std::filesystem::path& p, const std::string& s) {
        FILE* fp = std::fopen(p.c_str(), "wb");
        if (!fp) throw std::runtime_error("cannot write " + p.string());
        std::fwrite(s.data(), 1, s.size(), fp);
        std::fclose(fp);
    };
    write(out_dir / "brac.csv", brac_csv);
    write(out_dir / "tac.csv", tac_csv);
    std::printf("wrote %s and %s\n", (out_dir / "brac.csv").c_str(), (out_dir / "tac.csv").c_str());
    return 0;
}

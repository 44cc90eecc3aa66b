#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "epigp/control.hpp"
#include "epigp/epimodel.hpp"
#include "epigp/posynomial.hpp"

namespace testing {

inline double rel_err(double a, double b)
{
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

inline std::vector<epigp::VarId> make_vars(std::size_t n, const std::string& prefix = "x")
{
    std::vector<epigp::VarId> v;
    for (std::size_t i = 0; i < n; ++i) {
        v.emplace_back(prefix + std::to_string(i));
    }
    return v;
}

// Random posynomial with up to max_terms terms over a subset of vars.
inline epigp::Posynomial random_posynomial(std::mt19937_64& rng, const std::vector<epigp::VarId>& vars,
                                           std::size_t max_terms = 4, double exp_range = 2.0)
{
    std::uniform_int_distribution<std::size_t> nterms(1, max_terms);
    std::uniform_real_distribution<double> coeff(0.1, 3.0);
    std::uniform_real_distribution<double> ex(-exp_range, exp_range);
    std::bernoulli_distribution use(0.6);
    std::vector<epigp::Monomial> terms;
    const std::size_t n = nterms(rng);
    for (std::size_t i = 0; i < n; ++i) {
        epigp::Monomial::Exponents e;
        for (auto v : vars) {
            if (use(rng)) {
                e.emplace_back(v, ex(rng));
            }
        }
        terms.emplace_back(coeff(rng), std::move(e));
    }
    return epigp::Posynomial(std::move(terms));
}

inline epigp::Assignment random_assignment(std::mt19937_64& rng, const std::vector<epigp::VarId>& vars,
                                           double lo = 0.2, double hi = 5.0)
{
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    epigp::Assignment a;
    for (auto v : vars) {
        a[v] = std::exp(u(rng));
    }
    return a;
}

inline epigp::GlobalParams random_globals(std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> r(0.02, 0.45);
    epigp::GlobalParams g;
    g.rho_EI = r(rng);
    g.rho_EA = r(rng);
    g.rho_IR = r(rng);
    g.rho_IH = r(rng) * 0.3;
    g.rho_AR = r(rng);
    g.rho_HR = r(rng);
    g.alpha_D = r(rng);
    return g;
}

/// One-category region with a growing outbreak, two weekly control blocks.
inline epigp::ControlConfig toy_control()
{
    epigp::ControlConfig c;
    c.T = 14;
    c.week_length = 7;
    c.c = {1.0};
    c.u_lower = {0.3};
    c.u_upper = {1.2};
    c.global = {0.25, 0.2, 0.12, 0.04, 0.12, 0.1, 0.25};
    c.mobility_map.theta = {6e-7};
    c.mobility_map.alpha = {1.3};
    c.mobility_map.b = 2e-8;
    c.mobility_map.gamma_A = 0.5;
    c.mobility_map.categories = {"retail_and_recreation"};
    c.init = {1e6, 400, 300, 250, 20, 100, 10};
    return c;
}

inline std::vector<epigp::MobilityVector> block_schedule(const epigp::ControlConfig& c, double a, double b)
{
    std::vector<epigp::MobilityVector> s;
    for (std::size_t t = 0; t < c.T; ++t) {
        s.push_back({{c.block_of(t) == 0 ? a : b}});
    }
    return s;
}

inline double peak_H(const epigp::Trajectory& tr, std::size_t from = 1)
{
    double p = 0.0;
    for (std::size_t t = from; t < tr.states.size(); ++t) {
        p = std::max(p, tr.states[t].H);
    }
    return p;
}

inline double schedule_cost(const epigp::ControlConfig& c, const std::vector<epigp::MobilityVector>& s)
{
    double total = 0.0;
    for (std::size_t t = 0; t < s.size(); ++t) {
        total += c.day_weight(t) * epigp::cost_term(s[t], c);
    }
    return total;
}

struct GridOptimum {
    double value = std::numeric_limits<double>::infinity();
    double a = 0.0;
    double b = 0.0;
};

/// Exhaustive 2-D search over [lo, hi]^2 (n points per axis), then repeated
/// finer grids around the incumbent. f returns +inf at infeasible points.
inline GridOptimum grid_search(const std::function<double(double, double)>& f, double lo, double hi,
                               int n = 200, int refinements = 4)
{
    GridOptimum best;
    double alo = lo, ahi = hi, blo = lo, bhi = hi;
    for (int round = 0; round <= refinements; ++round) {
        const double da = (ahi - alo) / (n - 1), db = (bhi - blo) / (n - 1);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const double a = alo + da * i, b = blo + db * j;
                const double v = f(a, b);
                if (v < best.value) {
                    best = {v, a, b};
                }
            }
        }
        alo = std::max(lo, best.a - 2 * da);
        ahi = std::min(hi, best.a + 2 * da);
        blo = std::max(lo, best.b - 2 * db);
        bhi = std::min(hi, best.b + 2 * db);
        n = 41;
    }
    return best;
}

inline std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    out << text;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("epigp_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

struct RunResult {
    int exit_code = -1;
    std::string output; // stdout + stderr
};

inline RunResult run(const std::string& command)
{
    RunResult r;
    std::string cmd = command + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) {
        return r;
    }
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) {
        r.output.append(buf, n);
    }
    int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

inline std::string q(const std::filesystem::path& p)
{
    return "'" + p.string() + "'";
}

} // namespace testing

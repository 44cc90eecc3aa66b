#include "epigp/learn.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <numeric>
#include <ostream>
#include <thread>

#include "epigp/csv.hpp"
#include "epigp/errors.hpp"

namespace epigp {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// Natural-parameter gradient slots for the globals, in struct order.
enum GlobalSlot { kEI, kEA, kIR, kIH, kAR, kHR, kAD };

double sigmoid(double z)
{
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    double e = std::exp(z);
    return e / (1.0 + e);
}

double logit(double p, const char* name)
{
    if (!(p > 0.0 && p < 1.0)) {
        throw DomainError(std::string(name) + " must lie strictly inside (0, 1) to be learned");
    }
    return std::log(p / (1.0 - p));
}

// Exit probabilities of a 3-way softmax whose first (stay) logit is 0.
std::pair<double, double> softmax_exits(double z1, double z2)
{
    double m = std::max({0.0, z1, z2});
    double e0 = std::exp(-m);
    double e1 = std::exp(z1 - m);
    double e2 = std::exp(z2 - m);
    double s = e0 + e1 + e2;
    return {e1 / s, e2 / s};
}

std::pair<double, double> encode_exits(double p1, double p2, const char* name)
{
    double stay = 1.0 - p1 - p2;
    if (!(p1 > 0.0 && p2 > 0.0 && stay > 0.0)) {
        throw DomainError(std::string(name) + " exit rates and stay fraction must be positive to be learned");
    }
    return {std::log(p1 / stay), std::log(p2 / stay)};
}

double positive_log(double v, const char* name)
{
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw DomainError(std::string(name) + " must be positive to be learned");
    }
    return std::log(v);
}

void require_days(const RegionDataset& d, std::size_t days)
{
    if (d.days() < days) {
        throw InputError("region " + d.region_id + " has " + std::to_string(d.days()) + " days, need " +
                         std::to_string(days));
    }
}

std::vector<const RegionDataset*> pointers(std::span<const RegionDataset> data)
{
    std::vector<const RegionDataset*> out;
    out.reserve(data.size());
    for (const auto& d : data) {
        out.push_back(&d);
    }
    return out;
}

// Loss contribution weight * sum_{t=1..T} ((X(t) - D(t)) / N)^2 of one region.
// When dglob/dlocal are given, the natural-parameter gradient is accumulated
// into them (dlocal uses the coordinate layout of coords::encode_local).
double region_loss(const GlobalParams& g, const RegionParams& r, const RegionDataset& d, std::span<const double> X,
                   std::size_t T, double weight, std::array<double, 7>* dglob, std::vector<double>* dlocal)
{
    const auto& map = r.mobility_map;
    const std::size_t K = map.num_categories();
    if (d.num_categories() != K) {
        throw ShapeError("region " + d.region_id + ": mobility map has " + std::to_string(K) +
                         " categories, data has " + std::to_string(d.num_categories()));
    }
    const double S0 = r.init.S0;
    const double gA = map.gamma_A;
    const double N = d.population;
    const double cE = 1.0 - g.rho_EI - g.rho_EA;
    const double cI = 1.0 - g.rho_IR - g.rho_IH;
    const double cA = 1.0 - g.rho_AR;
    const double cH = 1.0 - g.rho_HR;

    std::vector<EpiState> s(T + 1);
    std::vector<double> beta(T);
    std::vector<double> pw(T * K); // m_k(t)^alpha_k
    s[0] = EpiState::from(r.init);
    for (std::size_t t = 0; t < T; ++t) {
        double b = map.b;
        for (std::size_t k = 0; k < K; ++k) {
            double p = std::pow(d.mobility[t][k], map.alpha[k]);
            pw[t * K + k] = p;
            b += map.theta[k] * p;
        }
        beta[t] = b;
        const EpiState& c = s[t];
        EpiState& n = s[t + 1];
        n.E = cE * c.E + S0 * b * (gA * c.A + c.I);
        n.I = cI * c.I + g.rho_EI * c.E;
        n.A = cA * c.A + g.rho_EA * c.E;
        n.H = cH * c.H + g.rho_IH * c.I;
        n.R = c.R + g.rho_IR * c.I + g.rho_AR * c.A + (1.0 - g.alpha_D) * g.rho_HR * c.H;
        n.D = c.D + g.alpha_D * g.rho_HR * c.H;
    }

    double total = 0.0;
    for (std::size_t t = 1; t <= T; ++t) {
        double r_t = (X[t] - s[t].D) / N;
        total += r_t * r_t;
    }
    total *= weight;
    if (dglob == nullptr) {
        return total;
    }

    auto& G = *dglob;
    auto& L = *dlocal;
    const std::size_t ib = 2 * K;
    const std::size_t igA = ib + 1;
    const std::size_t iS0 = ib + 2;
    const std::size_t iE0 = ib + 3;

    // Adjoints of state t+1, starting from the terminal loss term.
    double lE = 0.0, lI = 0.0, lA = 0.0, lH = 0.0;
    double lD = -2.0 * weight * (X[T] - s[T].D) / (N * N);
    for (std::size_t t = T; t-- > 0;) {
        const EpiState& c = s[t];
        const double b = beta[t];

        G[kEI] += (lI - lE) * c.E;
        G[kEA] += (lA - lE) * c.E;
        G[kIR] -= lI * c.I;
        G[kIH] += (lH - lI) * c.I;
        G[kAR] -= lA * c.A;
        G[kHR] += (g.alpha_D * lD - lH) * c.H;
        G[kAD] += lD * g.rho_HR * c.H;

        const double infectious = gA * c.A + c.I;
        L[iS0] += lE * b * infectious;
        L[igA] += lE * S0 * b * c.A;
        const double dbeta = lE * S0 * infectious;
        L[ib] += dbeta;
        for (std::size_t k = 0; k < K; ++k) {
            double p = pw[t * K + k];
            L[k] += dbeta * p;
            L[K + k] += dbeta * map.theta[k] * p * std::log(d.mobility[t][k]);
        }

        double nE = cE * lE + g.rho_EI * lI + g.rho_EA * lA;
        double nI = S0 * b * lE + cI * lI + g.rho_IH * lH;
        double nA = S0 * b * gA * lE + cA * lA;
        double nH = cH * lH + g.alpha_D * g.rho_HR * lD;
        double nD = lD;
        if (t >= 1) {
            nD += -2.0 * weight * (X[t] - c.D) / (N * N);
        }
        lE = nE;
        lI = nI;
        lA = nA;
        lH = nH;
        lD = nD;
    }
    L[iE0] += lE;
    L[iE0 + 1] += lI;
    L[iE0 + 2] += lA;
    L[iE0 + 3] += lH;
    // R0 does not reach the loss.
    L[iE0 + 5] += lD;
    return total;
}

// Chain rule from natural parameters to coordinates.
std::vector<double> global_to_coords(const GlobalParams& g, const std::array<double, 7>& G)
{
    std::vector<double> z(coords::kGlobal);
    auto softmax_back = [](double p1, double p2, double g1, double g2, double& z1, double& z2) {
        double mean = g1 * p1 + g2 * p2;
        z1 = p1 * (g1 - mean);
        z2 = p2 * (g2 - mean);
    };
    softmax_back(g.rho_EI, g.rho_EA, G[kEI], G[kEA], z[0], z[1]);
    softmax_back(g.rho_IR, g.rho_IH, G[kIR], G[kIH], z[2], z[3]);
    z[4] = G[kAR] * g.rho_AR * (1.0 - g.rho_AR);
    z[5] = G[kHR] * g.rho_HR * (1.0 - g.rho_HR);
    z[6] = G[kAD] * g.alpha_D * (1.0 - g.alpha_D);
    return z;
}

void local_to_coords(const RegionParams& r, std::vector<double>& L, bool learn_S0)
{
    const auto& map = r.mobility_map;
    const std::size_t K = map.num_categories();
    for (std::size_t k = 0; k < K; ++k) {
        L[k] *= map.theta[k];
    }
    const auto& in = r.init;
    const double scale[9] = {map.b, map.gamma_A, in.S0, in.E0, in.I0, in.A0, in.H0, in.R0, in.D0};
    for (std::size_t i = 0; i < 9; ++i) {
        L[2 * K + i] *= scale[i];
    }
    if (!learn_S0) {
        L[2 * K + 2] = 0.0;
    }
}

struct Gradients {
    double loss = 0.0;
    std::vector<double> global;
    std::vector<std::vector<double>> local; // aligned with the region list
};

Gradients batch_gradient(const ParamSet& p, const std::vector<const RegionDataset*>& regions,
                         const std::vector<std::vector<double>>& targets, std::size_t T, bool learn_S0)
{
    Gradients out;
    std::array<double, 7> G{};
    const double weight = 1.0 / (static_cast<double>(regions.size()) * static_cast<double>(T));
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const RegionDataset& d = *regions[i];
        const RegionParams& r = p.region(d.region_id);
        std::vector<double> L(coords::local_size(r.mobility_map.num_categories()), 0.0);
        out.loss += region_loss(p.global, r, d, targets[i], T, weight, &G, &L);
        local_to_coords(r, L, learn_S0);
        out.local.push_back(std::move(L));
    }
    out.global = global_to_coords(p.global, G);
    return out;
}

bool all_finite(const std::vector<double>& v)
{
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct Adam {
    std::vector<double> m;
    std::vector<double> v;
    std::size_t steps = 0;

    explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    void step(std::vector<double>& x, const std::vector<double>& g, double lr, double scale)
    {
        ++steps;
        const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(steps));
        const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(steps));
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double gi = g[i] * scale;
            m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gi;
            v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gi * gi;
            x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + kAdamEps);
        }
    }
};

double mean_test_loss(const ParamSet& p, std::span<const RegionDataset> data, std::size_t train_T,
                      std::size_t test_T)
{
    auto per_region = evaluate_test(p, data, train_T, test_T);
    double sum = 0.0;
    for (const auto& d : data) {
        sum += per_region.at(d.region_id);
    }
    return sum / static_cast<double>(data.size());
}

struct TrialOutcome {
    TrialReport report;
    ParamSet params;
};

TrialOutcome run_trial(std::span<const RegionDataset> data, const std::vector<std::vector<double>>& targets,
                       const TrainConfig& cfg, std::size_t trial, double loss_scale)
{
    TrialOutcome out;
    out.report.trial = trial;
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(trial)};
    std::mt19937_64 rng(seq);
    ParamSet p = init_params(data, rng, cfg.init, cfg.learn_S0);

    const std::size_t M = data.size();
    const std::size_t T = cfg.train_days;
    const std::size_t batch = cfg.effective_batch_size(M);
    std::vector<std::string> cats(M);
    std::vector<std::size_t> K(M);
    std::vector<double> zg = coords::encode_global(p.global);
    std::vector<std::vector<double>> zl(M);
    Adam adam_g(zg.size());
    std::vector<Adam> adam_l;
    for (std::size_t i = 0; i < M; ++i) {
        zl[i] = coords::encode_local(p.region(data[i].region_id));
        K[i] = data[i].num_categories();
        adam_l.emplace_back(zl[i].size());
    }

    auto record = [&](std::size_t epoch) {
        double tr = loss(p, data, T);
        double te = mean_test_loss(p, data, T, cfg.test_days);
        out.report.history.push_back({epoch, tr, te});
        if (!std::isfinite(tr) || !std::isfinite(te)) {
            throw TrainingError("non-finite loss at epoch " + std::to_string(epoch));
        }
    };

    try {
        record(0);
        std::vector<std::size_t> order(M);
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t start = 0; start < M; start += batch) {
                const std::size_t stop = std::min(M, start + batch);
                std::vector<const RegionDataset*> regions;
                std::vector<std::vector<double>> batch_targets;
                for (std::size_t j = start; j < stop; ++j) {
                    regions.push_back(&data[order[j]]);
                    batch_targets.push_back(targets[order[j]]);
                }
                Gradients gr = batch_gradient(p, regions, batch_targets, T, cfg.learn_S0);
                bool finite = std::isfinite(gr.loss) && all_finite(gr.global);
                for (const auto& l : gr.local) {
                    finite = finite && all_finite(l);
                }
                if (!finite) {
                    throw TrainingError("non-finite loss or gradient at epoch " + std::to_string(epoch));
                }
                adam_g.step(zg, gr.global, cfg.learning_rate, 1.0 / loss_scale);
                p.global = coords::decode_global(zg);
                for (std::size_t j = start; j < stop; ++j) {
                    const std::size_t i = order[j];
                    adam_l[i].step(zl[i], gr.local[j - start], cfg.learning_rate, 1.0 / loss_scale);
                    const auto& id = data[i].region_id;
                    p.per_region[id] = coords::decode_local(zl[i], K[i], data[i].categories);
                }
                p.global.validate();
            }
            if (epoch % cfg.report_every == 0 || epoch == cfg.epochs) {
                record(epoch);
            }
        }
        out.report.train_loss = out.report.history.back().train_loss;
        out.report.test_loss = out.report.history.back().test_loss;
    }
    catch (const Error& e) {
        out.report.failed = true;
        out.report.failure = e.what();
    }
    out.params = std::move(p);
    return out;
}

} // namespace

void InitIntervals::validate() const
{
    const std::pair<const Interval*, const char*> all[] = {{&rho_EI, "rho_EI"}, {&rho_EA, "rho_EA"},
                                                           {&rho_IR, "rho_IR"}, {&rho_IH, "rho_IH"},
                                                           {&rho_AR, "rho_AR"}, {&rho_HR, "rho_HR"},
                                                           {&alpha_D, "alpha_D"}};
    for (const auto& [iv, name] : all) {
        if (!(iv->first > 0.0 && iv->first <= iv->second && iv->second < 1.0)) {
            throw ValidationError(std::string("init interval for ") + name + " must satisfy 0 < lo <= hi < 1");
        }
    }
    if (!(rho_EI.second + rho_EA.second < 1.0) || !(rho_IR.second + rho_IH.second < 1.0)) {
        throw ValidationError("init intervals allow paired exit rates summing to 1 or more");
    }
}

std::size_t TrainConfig::effective_batch_size(std::size_t regions) const
{
    return batch_size == 0 ? std::min<std::size_t>(4, regions) : batch_size;
}

void TrainConfig::validate(std::size_t regions) const
{
    if (regions == 0) {
        throw InputError("no training regions");
    }
    if (trials == 0) {
        throw ValidationError("trials must be positive");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ValidationError("learning_rate must be positive");
    }
    if (train_days == 0 || test_days == 0) {
        throw ValidationError("train_days and test_days must be positive");
    }
    if (report_every == 0) {
        throw ValidationError("report_every must be positive");
    }
    if (effective_batch_size(regions) > regions) {
        throw ValidationError("batch_size " + std::to_string(batch_size) + " exceeds the number of regions (" +
                              std::to_string(regions) + ")");
    }
    init.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    auto iv = [](const Interval& i) { return nlohmann::json::array({i.first, i.second}); };
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"trials", c.trials},
                       {"rng_seed", c.seed},
                       {"train_days", c.train_days},
                       {"test_days", c.test_days},
                       {"learn_S0", c.learn_S0},
                       {"report_every", c.report_every},
                       {"workers", c.workers},
                       {"init_intervals",
                        {{"rho_EI", iv(c.init.rho_EI)},
                         {"rho_EA", iv(c.init.rho_EA)},
                         {"rho_IR", iv(c.init.rho_IR)},
                         {"rho_IH", iv(c.init.rho_IH)},
                         {"rho_AR", iv(c.init.rho_AR)},
                         {"rho_HR", iv(c.init.rho_HR)},
                         {"alpha_D", iv(c.init.alpha_D)}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    const TrainConfig d;
    // json would silently wrap a negative number into a huge count.
    auto count = [&](const char* key, auto fallback) {
        auto it = j.find(key);
        if (it == j.end()) {
            return fallback;
        }
        if (!it->is_number_unsigned()) {
            throw ValidationError(std::string("train config '") + key + "' must be a nonnegative integer");
        }
        return it->get<decltype(fallback)>();
    };
    c.epochs = count("epochs", d.epochs);
    c.batch_size = count("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.trials = count("trials", d.trials);
    c.seed = count("rng_seed", d.seed);
    c.train_days = count("train_days", d.train_days);
    c.test_days = count("test_days", d.test_days);
    c.learn_S0 = j.value("learn_S0", d.learn_S0);
    c.report_every = count("report_every", d.report_every);
    c.workers = count("workers", d.workers);
    c.init = d.init;
    if (auto it = j.find("init_intervals"); it != j.end()) {
        auto read = [&](const char* key, Interval& iv) {
            if (auto f = it->find(key); f != it->end()) {
                auto v = f->get<std::vector<double>>();
                if (v.size() != 2) {
                    throw ValidationError(std::string("init interval ") + key + " needs two values");
                }
                iv = {v[0], v[1]};
            }
        };
        read("rho_EI", c.init.rho_EI);
        read("rho_EA", c.init.rho_EA);
        read("rho_IR", c.init.rho_IR);
        read("rho_IH", c.init.rho_IH);
        read("rho_AR", c.init.rho_AR);
        read("rho_HR", c.init.rho_HR);
        read("alpha_D", c.init.alpha_D);
    }
}

std::vector<double> rolling7(std::span<const double> series)
{
    if (series.empty()) {
        throw InputError("rolling average of an empty series");
    }
    std::vector<double> out(series.size());
    for (std::size_t t = 0; t < series.size(); ++t) {
        const std::size_t lo = t >= 6 ? t - 6 : 0;
        double sum = 0.0;
        for (std::size_t i = lo; i <= t; ++i) {
            sum += series[i];
        }
        out[t] = sum / static_cast<double>(t - lo + 1);
    }
    return out;
}

std::vector<double> fitting_target(const RegionDataset& d)
{
    if (d.deaths.empty()) {
        throw InputError("region " + d.region_id + " has no death counts");
    }
    std::vector<double> x(d.deaths.size());
    double running = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t) {
        running = std::max(running, d.deaths[t]);
        x[t] = running;
    }
    return d.deaths_smoothed ? x : rolling7(x);
}

double loss(const ParamSet& params, std::span<const RegionDataset> data, std::size_t T)
{
    if (data.empty()) {
        throw InputError("loss over zero regions");
    }
    if (T == 0) {
        throw InputError("loss over an empty time window");
    }
    const double weight = 1.0 / (static_cast<double>(data.size()) * static_cast<double>(T));
    double total = 0.0;
    for (const auto& d : data) {
        require_days(d, T + 1);
        const RegionParams& r = params.region(d.region_id);
        auto beta_series = observed_beta(d, r.mobility_map, T);
        Trajectory traj = rollout(r.init, params.global, r.mobility_map.gamma_A, beta_series, T);
        auto X = fitting_target(d);
        double sum = 0.0;
        for (std::size_t t = 1; t <= T; ++t) {
            double res = (X[t] - traj.states[t].D) / d.population;
            sum += res * res;
        }
        total += weight * sum;
    }
    return total;
}

namespace coords {

std::vector<double> encode_global(const GlobalParams& g)
{
    g.validate();
    auto [e1, e2] = encode_exits(g.rho_EI, g.rho_EA, "rho_EI/rho_EA");
    auto [i1, i2] = encode_exits(g.rho_IR, g.rho_IH, "rho_IR/rho_IH");
    return {e1, e2, i1, i2, logit(g.rho_AR, "rho_AR"), logit(g.rho_HR, "rho_HR"), logit(g.alpha_D, "alpha_D")};
}

GlobalParams decode_global(std::span<const double> z)
{
    if (z.size() != kGlobal) {
        throw ShapeError("global coordinate vector must have 7 entries");
    }
    GlobalParams g;
    std::tie(g.rho_EI, g.rho_EA) = softmax_exits(z[0], z[1]);
    std::tie(g.rho_IR, g.rho_IH) = softmax_exits(z[2], z[3]);
    g.rho_AR = sigmoid(z[4]);
    g.rho_HR = sigmoid(z[5]);
    g.alpha_D = sigmoid(z[6]);
    return g;
}

std::vector<double> encode_local(const RegionParams& r)
{
    const auto& map = r.mobility_map;
    const std::size_t K = map.num_categories();
    std::vector<double> z;
    z.reserve(local_size(K));
    for (double th : map.theta) {
        z.push_back(positive_log(th, "theta"));
    }
    z.insert(z.end(), map.alpha.begin(), map.alpha.end());
    const auto& in = r.init;
    z.push_back(positive_log(map.b, "b"));
    z.push_back(positive_log(map.gamma_A, "gamma_A"));
    z.push_back(positive_log(in.S0, "S0"));
    z.push_back(positive_log(in.E0, "E0"));
    z.push_back(positive_log(in.I0, "I0"));
    z.push_back(positive_log(in.A0, "A0"));
    z.push_back(positive_log(in.H0, "H0"));
    z.push_back(positive_log(in.R0, "R0"));
    z.push_back(positive_log(in.D0, "D0"));
    return z;
}

RegionParams decode_local(std::span<const double> z, std::size_t K, const std::vector<std::string>& categories)
{
    if (z.size() != local_size(K)) {
        throw ShapeError("local coordinate vector has " + std::to_string(z.size()) + " entries, expected " +
                         std::to_string(local_size(K)));
    }
    RegionParams r;
    auto& map = r.mobility_map;
    for (std::size_t k = 0; k < K; ++k) {
        map.theta.push_back(std::exp(z[k]));
        map.alpha.push_back(z[K + k]);
    }
    map.categories = categories;
    const double* tail = z.data() + 2 * K;
    map.b = std::exp(tail[0]);
    map.gamma_A = std::exp(tail[1]);
    r.init = {std::exp(tail[2]), std::exp(tail[3]), std::exp(tail[4]), std::exp(tail[5]),
              std::exp(tail[6]), std::exp(tail[7]), std::exp(tail[8])};
    map.validate();
    r.init.validate();
    return r;
}

} // namespace coords

LossGradient loss_gradient(const ParamSet& params, std::span<const RegionDataset> data, std::size_t T,
                           bool learn_S0)
{
    if (data.empty()) {
        throw InputError("loss over zero regions");
    }
    if (T == 0) {
        throw InputError("loss over an empty time window");
    }
    params.global.validate();
    std::vector<std::vector<double>> targets;
    for (const auto& d : data) {
        require_days(d, T + 1);
        targets.push_back(fitting_target(d));
    }
    Gradients g = batch_gradient(params, pointers(data), targets, T, learn_S0);
    LossGradient out;
    out.loss = g.loss;
    out.global = std::move(g.global);
    for (std::size_t i = 0; i < data.size(); ++i) {
        out.regions[data[i].region_id] = std::move(g.local[i]);
    }
    return out;
}

ParamSet init_params(std::span<const RegionDataset> data, std::mt19937_64& rng, const InitIntervals& iv,
                     bool learn_S0)
{
    iv.validate();
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto log_uniform = [&](double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); };
    auto draw = [&](const Interval& i) { return i.first == i.second ? i.first : uniform(i.first, i.second); };

    ParamSet p;
    p.global.rho_EI = draw(iv.rho_EI);
    p.global.rho_EA = draw(iv.rho_EA);
    p.global.rho_IR = draw(iv.rho_IR);
    p.global.rho_IH = draw(iv.rho_IH);
    p.global.rho_AR = draw(iv.rho_AR);
    p.global.rho_HR = draw(iv.rho_HR);
    p.global.alpha_D = draw(iv.alpha_D);

    for (const auto& d : data) {
        d.validate();
        const double N = d.population;
        const std::size_t K = d.num_categories();
        RegionParams r;
        r.init.S0 = learn_S0 ? 0.5 * N : N;
        auto& map = r.mobility_map;
        map.categories = d.categories;
        for (std::size_t k = 0; k < K; ++k) {
            map.theta.push_back(log_uniform(0.05, 0.5) / static_cast<double>(K) / r.init.S0);
            map.alpha.push_back(uniform(0.5, 2.0));
        }
        map.b = log_uniform(1e-3, 1e-2) / r.init.S0;
        map.gamma_A = uniform(0.2, 1.0);
        r.init.E0 = N * log_uniform(1e-5, 1e-3);
        r.init.I0 = N * log_uniform(1e-5, 1e-3);
        r.init.A0 = N * log_uniform(1e-5, 1e-3);
        r.init.H0 = N * log_uniform(1e-6, 1e-4);
        r.init.R0 = N * log_uniform(1e-4, 1e-2);
        r.init.D0 = std::max(fitting_target(d).front(), 1e-3);
        p.per_region[d.region_id] = std::move(r);
    }
    return p;
}

std::map<std::string, double> evaluate_test(const ParamSet& params, std::span<const RegionDataset> data,
                                            std::size_t train_T, std::size_t test_T)
{
    if (test_T == 0) {
        throw InputError("empty test window");
    }
    const std::size_t horizon = train_T + test_T;
    std::map<std::string, double> out;
    for (const auto& d : data) {
        require_days(d, horizon + 1);
        const RegionParams& r = params.region(d.region_id);
        auto beta_series = observed_beta(d, r.mobility_map, horizon);
        Trajectory traj = rollout(r.init, params.global, r.mobility_map.gamma_A, beta_series, horizon);
        auto X = fitting_target(d);
        double sum = 0.0;
        for (std::size_t t = train_T + 1; t <= horizon; ++t) {
            double res = (X[t] - traj.states[t].D) / d.population;
            sum += res * res;
        }
        out[d.region_id] = sum / static_cast<double>(test_T);
    }
    return out;
}

TrainResult train(std::span<const RegionDataset> data, const TrainConfig& config)
{
    config.validate(data.size());
    std::vector<std::vector<double>> targets;
    double scale = 0.0;
    for (const auto& d : data) {
        d.validate();
        require_days(d, config.train_days + config.test_days + 1);
        targets.push_back(fitting_target(d));
        for (std::size_t t = 1; t <= config.train_days; ++t) {
            double x = targets.back()[t] / d.population;
            scale += x * x;
        }
    }
    scale /= static_cast<double>(data.size() * config.train_days);
    // All-zero targets: fall back to the raw loss.
    if (!(scale > 0.0)) {
        scale = 1.0;
    }

    std::vector<TrialOutcome> outcomes(config.trials);
    std::size_t workers = config.workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.workers;
    workers = std::min(workers, config.trials);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t k = next++; k < config.trials; k = next++) {
            outcomes[k] = run_trial(data, targets, config, k, scale);
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 1; w < workers; ++w) {
            pool.emplace_back(work);
        }
        work();
    }

    TrainResult result;
    bool found = false;
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
        const auto& rep = outcomes[k].report;
        if (!rep.failed && (!found || rep.test_loss < outcomes[result.best_trial].report.test_loss)) {
            result.best_trial = k;
            found = true;
        }
        result.trials.push_back(rep);
    }
    if (!found) {
        throw TrainingError("all " + std::to_string(config.trials) + " training trials diverged; first failure: " +
                            outcomes.front().report.failure);
    }
    result.best = std::move(outcomes[result.best_trial].params);
    return result;
}

void write_report_csv(std::ostream& out, const TrainResult& result)
{
    out << "trial,epoch,train_loss,test_loss\n";
    for (const auto& rep : result.trials) {
        for (const auto& rec : rep.history) {
            out << rep.trial << ',' << rec.epoch << ',' << csv::format_real(rec.train_loss) << ','
                << csv::format_real(rec.test_loss) << '\n';
        }
    }
}

Trajectory predict(const ParamSet& params, const RegionDataset& data, std::size_t horizon)
{
    if (data.mobility.empty()) {
        throw InputError("region " + data.region_id + " has no mobility data");
    }
    const RegionParams& r = params.region(data.region_id);
    std::vector<double> beta_series(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
        beta_series[t] = beta(data.mobility[std::min(t, data.mobility.size() - 1)], r.mobility_map);
    }
    return rollout(r.init, params.global, r.mobility_map.gamma_A, beta_series, horizon);
}

} // namespace epigp

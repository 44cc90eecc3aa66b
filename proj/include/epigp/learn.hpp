#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "epigp/dataset.hpp"

namespace epigp {

using Interval = std::pair<double, double>;

/// Sampling intervals for the clinical rates at initialization.
struct InitIntervals {
    Interval rho_EI{0.1, 0.4};
    Interval rho_EA{0.1, 0.4};
    Interval rho_IR{0.05, 0.2};
    Interval rho_IH{0.01, 0.1};
    Interval rho_AR{0.05, 0.2};
    Interval rho_HR{0.05, 0.2};
    Interval alpha_D{0.1, 0.4};

    void validate() const;
};

struct TrainConfig {
    std::size_t epochs = 2000;
    std::size_t batch_size = 0; // 0: min(4, number of regions)
    double learning_rate = 1e-2;
    std::size_t trials = 10;
    std::uint64_t seed = 0;
    std::size_t train_days = 60;
    std::size_t test_days = 21;
    bool learn_S0 = true; // false: S0 pinned to the census population
    std::size_t report_every = 100;
    std::size_t workers = 0; // 0: hardware concurrency
    InitIntervals init;

    std::size_t effective_batch_size(std::size_t regions) const;
    void validate(std::size_t regions) const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Trailing 7-day mean; the first six outputs average the available prefix.
std::vector<double> rolling7(std::span<const double> series);

/// Cumulative deaths made nondecreasing by running maximum, then smoothed
/// with rolling7 unless the dataset is already smooth.
std::vector<double> fitting_target(const RegionDataset& d);

/// Normalized mean squared error of predicted cumulative deaths,
/// (1/MT) sum_i sum_{t=1..T} ((X_i(t) - D_i(t)) / N_i)^2.
/// Day 0 is the initial-condition day, so each region needs T + 1 days.
double loss(const ParamSet& params, std::span<const RegionDataset> data, std::size_t T);

/// Unconstrained coordinates for a ParamSet.
///
/// Globals: softmax logits over {stay, exit1, exit2} for E and I, logits for
/// rho_AR, rho_HR and alpha_D (7 values). Locals per region: log theta (K),
/// alpha (K), then log of b, gamma_A, S0, E0, I0, A0, H0, R0, D0.
namespace coords {
constexpr std::size_t kGlobal = 7;
inline std::size_t local_size(std::size_t K) { return 2 * K + 9; }

std::vector<double> encode_global(const GlobalParams& g);
GlobalParams decode_global(std::span<const double> z);
std::vector<double> encode_local(const RegionParams& r);
RegionParams decode_local(std::span<const double> z, std::size_t K, const std::vector<std::string>& categories);
} // namespace coords

struct LossGradient {
    double loss = 0.0;
    std::vector<double> global;                           // d loss / d global coordinates
    std::map<std::string, std::vector<double>> regions;   // d loss / d local coordinates
};

/// Exact gradient of loss() in the coordinates above, by reverse-mode
/// sweep through the rollout. With learn_S0 false the S0 component is 0.
LossGradient loss_gradient(const ParamSet& params, std::span<const RegionDataset> data, std::size_t T,
                           bool learn_S0 = true);

/// Globals uniform over the configured intervals, locals randomized around
/// data-derived scales.
ParamSet init_params(std::span<const RegionDataset> data, std::mt19937_64& rng, const InitIntervals& intervals = {},
                     bool learn_S0 = true);

/// Per-region MSE on days train_T+1 .. train_T+test_T of a rollout from day 0
/// driven by observed mobility.
std::map<std::string, double> evaluate_test(const ParamSet& params, std::span<const RegionDataset> data,
                                            std::size_t train_T, std::size_t test_T);

struct EpochRecord {
    std::size_t epoch;
    double train_loss;
    double test_loss;
};

struct TrialReport {
    std::size_t trial = 0;
    bool failed = false;
    std::string failure;
    double train_loss = 0.0;
    double test_loss = 0.0;
    std::vector<EpochRecord> history;
};

struct TrainResult {
    ParamSet best;
    std::size_t best_trial = 0;
    std::vector<TrialReport> trials;
};

/// Multi-trial Adam on region mini-batches; keeps the trial with the lowest
/// held-out loss. Throws TrainingError if every trial diverges.
TrainResult train(std::span<const RegionDataset> data, const TrainConfig& config);

/// `trial,epoch,train_loss,test_loss`
void write_report_csv(std::ostream& out, const TrainResult& result);

/// Rollout of a fitted region over `horizon` days; mobility past the end of
/// the data is held at its last observed value.
Trajectory predict(const ParamSet& params, const RegionDataset& data, std::size_t horizon);

} // namespace epigp

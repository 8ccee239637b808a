#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "arlk/agents.hpp"
#include "arlk/config.hpp"
#include "arlk/env.hpp"

namespace arlk::evaluation {

struct Metrics {
    double rmse = 0.0;   // sqrt(mean d^2), population convention
    double nrmse = 0.0;  // rmse / lane_width
    double sigma = 0.0;  // population standard deviation of d, two-pass
};

// Lateral-error statistics over one trajectory. Throws std::invalid_argument
// when the series has fewer than two samples.
Metrics compute_metrics(const std::vector<double>& d_series, double lane_width);

struct RouteEval {
    std::uint64_t route_seed = 0;
    Metrics m;
    bool completed = false;  // reached route end (vs departure / timeout)
    int steps = 0;
    double ret = 0.0;
    std::vector<double> delta_action;  // per-step ||a_t - a_{t-1}||
};

struct EvalOptions {
    int routes = 20;
    double friction = 0.35;
    double alpha = 0.0;  // adversary weight during evaluation
    std::uint64_t seed = 9000;
};

struct EvalReport {
    std::string variant;
    EvalOptions opts;
    std::vector<RouteEval> per_route;
    double mean_rmse = 0.0;
    double rmse_std_sample = 0.0;      // n-1 convention across routes
    double rmse_std_population = 0.0;  // n convention across routes
    double rmse_ci95 = 0.0;            // NaN when n == 1 (undefined)
    double mean_nrmse = 0.0;
    double mean_sigma = 0.0;
    double completion_rate = 0.0;
    double p99_delta_action = 0.0;  // pooled over all evaluation steps
};

// Route seed for the i-th evaluation episode; every variant evaluated with
// the same options sees the same routes, so comparisons are paired.
std::uint64_t route_seed(std::uint64_t eval_seed, int index);

// Deterministic rollouts with exploration noise off and the agent's
// adversary weight set to opts.alpha (it is left at that value afterwards).
EvalReport evaluate(agents::Agent& agent, const config::Config& cfg, const EvalOptions& opts,
                    env::CoeffPredictor predictor = nullptr);

// Mean paired difference a - b on common route seeds, with its standard
// error. Positive mean_gap means a has the larger RMSE.
struct PairedGap {
    double mean_gap = 0.0;
    double paired_se = 0.0;
    int n = 0;
};
PairedGap paired_gap_rmse(const EvalReport& a, const EvalReport& b);

void write_report_csv(const std::string& path, const EvalReport& r);
nlohmann::json report_json(const EvalReport& r);
// Aggregates several variants' reports and adds paired gaps vs the "ddpg"
// entry when present.
nlohmann::json combined_json(const std::vector<EvalReport>& reports);
std::string format_table(const std::vector<EvalReport>& reports);

}  // namespace arlk::evaluation

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"

#include "arlk/evaluation.hpp"
#include "arlk/rng.hpp"

using namespace arlk;
namespace fs = std::filesystem;

namespace {

// Pathological hand-written policy: hard left, constant throttle. Useful to
// check that the evaluator counts departures and pools action gaps honestly.
class HardLeftAgent final : public agents::Agent {
  public:
    agents::Variant variant() const override { return agents::Variant::ddpg; }
    const agents::AgentConfig& config() const override { return cfg_; }
    void set_alpha(double) override {}
    void begin_episode(int) override {}
    agents::ActOutput act(const env::Obs&, bool) override {
        agents::ActOutput out;
        out.executed = out.mu = out.adv = vehicle::Action{1.0, 0.3};
        return out;
    }
    void observe(const env::LaneKeepEnv&, const vehicle::VehicleState&, const env::Obs&,
                 const agents::ActOutput&, const env::StepOutcome&) override {}
    void end_episode() override {}
    agents::UpdateStats update(int) override { return {}; }
    void save(Checkpoint&) override {}
    std::int64_t train_steps() const override { return 0; }

  private:
    agents::AgentConfig cfg_;
};

config::Config eval_config() {
    config::Config cfg;
    cfg.env.max_steps = 30;
    cfg.agent.hidden = 16;
    return cfg;
}

evaluation::Metrics oracle_metrics(const std::vector<double>& d, double lane_width) {
    long double sum = 0.0L, sq = 0.0L;
    for (double x : d) sum += x;
    const long double mean = sum / static_cast<long double>(d.size());
    long double var = 0.0L;
    for (double x : d) {
        sq += static_cast<long double>(x) * x;
        var += (x - mean) * (x - mean);
    }
    evaluation::Metrics m;
    m.rmse = std::sqrt(static_cast<double>(sq / static_cast<long double>(d.size())));
    m.sigma = std::sqrt(static_cast<double>(var / static_cast<long double>(d.size())));
    m.nrmse = m.rmse / lane_width;
    return m;
}

}  // namespace

TEST_SUITE("evaluation") {
    TEST_CASE("metric definitions on hand examples") {
        const auto m = evaluation::compute_metrics({0.3, -0.3}, 3.5);
        CHECK(m.rmse == doctest::Approx(0.3).epsilon(1e-15));
        CHECK(m.sigma == doctest::Approx(0.3).epsilon(1e-15));
        CHECK(m.nrmse == doctest::Approx(0.3 / 3.5).epsilon(1e-15));

        const auto c = evaluation::compute_metrics({0.5, 0.5, 0.5}, 3.5);
        CHECK(c.rmse == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(c.sigma == doctest::Approx(0.0));

        CHECK_THROWS_AS(evaluation::compute_metrics({0.1}, 3.5), std::invalid_argument);
        CHECK_THROWS_AS(evaluation::compute_metrics({}, 3.5), std::invalid_argument);
        CHECK_THROWS_AS(evaluation::compute_metrics({0.1, 0.2}, 0.0), std::invalid_argument);
    }

    TEST_CASE("metrics agree with a long-double two-pass oracle") {
        Rng rng(11);
        for (int trial = 0; trial < 300; ++trial) {
            const int n = rng.uniform_int(2, 200);
            std::vector<double> d(n);
            const double offset = rng.uniform(-2.0, 2.0);
            for (auto& x : d) x = offset + rng.normal() * rng.uniform(0.01, 1.5);
            const auto got = evaluation::compute_metrics(d, 3.5);
            const auto want = oracle_metrics(d, 3.5);
            CHECK(got.rmse == doctest::Approx(want.rmse).epsilon(1e-12));
            CHECK(got.sigma == doctest::Approx(want.sigma).epsilon(1e-12));
            CHECK(got.nrmse == doctest::Approx(want.nrmse).epsilon(1e-12));
        }
    }

    TEST_CASE("route seeds are shared across variants and distinct across indices") {
        CHECK(evaluation::route_seed(9000, 0) == evaluation::route_seed(9000, 0));
        CHECK(evaluation::route_seed(9000, 0) != evaluation::route_seed(9000, 1));
        CHECK(evaluation::route_seed(9000, 0) != evaluation::route_seed(9001, 0));
    }

    TEST_CASE("evaluation is deterministic and aggregates match per-route data") {
        config::Config cfg = eval_config();
        auto agent = agents::make_agent(agents::Variant::ar_ddpg, cfg.agent, 77, cfg.env);
        evaluation::EvalOptions opts;
        opts.routes = 5;
        opts.friction = 0.5;
        const auto r1 = evaluation::evaluate(*agent, cfg, opts);
        const auto r2 = evaluation::evaluate(*agent, cfg, opts);
        REQUIRE(r1.per_route.size() == 5);
        for (std::size_t i = 0; i < 5; ++i) {
            CHECK(r1.per_route[i].m.rmse == r2.per_route[i].m.rmse);
            CHECK(r1.per_route[i].route_seed == evaluation::route_seed(opts.seed, static_cast<int>(i)));
        }

        double mean = 0.0;
        int completed = 0;
        std::vector<double> pooled;
        for (const auto& pr : r1.per_route) {
            mean += pr.m.rmse;
            completed += pr.completed ? 1 : 0;
            pooled.insert(pooled.end(), pr.delta_action.begin(), pr.delta_action.end());
        }
        mean /= 5.0;
        CHECK(r1.mean_rmse == doctest::Approx(mean).epsilon(1e-12));
        double var_s = 0.0;
        for (const auto& pr : r1.per_route) var_s += (pr.m.rmse - mean) * (pr.m.rmse - mean);
        const double sd_sample = std::sqrt(var_s / 4.0);
        CHECK(r1.rmse_std_sample == doctest::Approx(sd_sample).epsilon(1e-12));
        CHECK(r1.rmse_std_population == doctest::Approx(std::sqrt(var_s / 5.0)).epsilon(1e-12));
        CHECK(r1.rmse_ci95 == doctest::Approx(1.96 * sd_sample / std::sqrt(5.0)).epsilon(1e-12));
        CHECK(r1.completion_rate == doctest::Approx(completed / 5.0));

        REQUIRE(!pooled.empty());
        std::sort(pooled.begin(), pooled.end());
        const std::size_t idx =
            static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(pooled.size()))) - 1;
        CHECK(r1.p99_delta_action == doctest::Approx(pooled[idx]).epsilon(1e-12));
    }

    TEST_CASE("a hard-left policy departs nearly every route") {
        config::Config cfg = eval_config();
        cfg.env.max_steps = 200;
        HardLeftAgent agent;
        evaluation::EvalOptions opts;
        opts.routes = 12;
        opts.friction = 0.6;
        const auto r = evaluation::evaluate(agent, cfg, opts);
        int departures = 0;
        for (const auto& pr : r.per_route) departures += pr.completed ? 0 : 1;
        CHECK(departures >= 11);  // >= 95% of 12 routes fail
        CHECK(r.completion_rate <= 1.0 / 12.0 + 1e-12);
        CHECK(r.p99_delta_action == 0.0);  // constant action sequence
        CHECK(r.mean_rmse > 0.3);
    }

    TEST_CASE("paired gaps use common route seeds") {
        evaluation::EvalReport a, b;
        auto mk = [](std::uint64_t seed, double rmse) {
            evaluation::RouteEval r;
            r.route_seed = seed;
            r.m.rmse = rmse;
            return r;
        };
        a.per_route = {mk(1, 0.50), mk(2, 0.70), mk(3, 0.60)};
        b.per_route = {mk(2, 0.40), mk(3, 0.55), mk(4, 0.90)};
        const auto gap = evaluation::paired_gap_rmse(a, b);
        CHECK(gap.n == 2);  // seeds 2 and 3
        const double d1 = 0.70 - 0.40, d2 = 0.60 - 0.55;
        const double mean = 0.5 * (d1 + d2);
        CHECK(gap.mean_gap == doctest::Approx(mean).epsilon(1e-12));
        const double sd = std::sqrt((d1 - mean) * (d1 - mean) + (d2 - mean) * (d2 - mean));  // n-1 = 1
        CHECK(gap.paired_se == doctest::Approx(sd / std::sqrt(2.0)).epsilon(1e-12));

        evaluation::EvalReport c;
        c.per_route = {mk(99, 0.1)};
        CHECK_THROWS(evaluation::paired_gap_rmse(a, c));
    }

    TEST_CASE("report CSV has the documented schema") {
        config::Config cfg = eval_config();
        auto agent = agents::make_agent(agents::Variant::ddpg, cfg.agent, 5, cfg.env);
        evaluation::EvalOptions opts;
        opts.routes = 3;
        const auto r = evaluation::evaluate(*agent, cfg, opts);
        const fs::path path = fs::temp_directory_path() / "arlk_eval_report_test.csv";
        evaluation::write_report_csv(path.string(), r);
        std::ifstream in(path);
        std::string line;
        REQUIRE(std::getline(in, line));
        CHECK(line == "variant,route_seed,rmse,nrmse,sigma,completed");
        int rows = 0;
        while (std::getline(in, line)) {
            if (!line.empty()) ++rows;
        }
        CHECK(rows == 3);
        fs::remove(path);

        const auto j = evaluation::report_json(r);
        CHECK(j.at("variant") == "ddpg");
        CHECK(j.at("per_route").size() == 3);
        const auto combined = evaluation::combined_json({r});
        CHECK(combined.at("variants").size() == 1);
        CHECK(combined.contains("paired_vs_ddpg"));
    }
}

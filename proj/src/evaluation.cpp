#include "arlk/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "arlk/rng.hpp"

namespace arlk::evaluation {

Metrics compute_metrics(const std::vector<double>& d, double lane_width) {
    if (d.size() < 2) throw std::invalid_argument("compute_metrics: need at least two samples");
    if (lane_width <= 0.0) throw std::invalid_argument("compute_metrics: lane_width must be > 0");
    const double n = static_cast<double>(d.size());
    double sq = 0.0, mean = 0.0;
    for (double x : d) {
        sq += x * x;
        mean += x;
    }
    mean /= n;
    double var = 0.0;
    for (double x : d) var += (x - mean) * (x - mean);
    Metrics m;
    m.rmse = std::sqrt(sq / n);
    m.nrmse = m.rmse / lane_width;
    m.sigma = std::sqrt(var / n);
    return m;
}

std::uint64_t route_seed(std::uint64_t eval_seed, int index) {
    return Rng(eval_seed).child("eval.route").child(static_cast<std::uint64_t>(index)).next_u64();
}

namespace {

double percentile99(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t idx = std::min(v.size() - 1, static_cast<std::size_t>(std::ceil(0.99 * v.size())) - 1);
    return v[idx];
}

}  // namespace

EvalReport evaluate(agents::Agent& agent, const config::Config& cfg, const EvalOptions& opts,
                    env::CoeffPredictor predictor) {
    if (opts.routes <= 0) throw std::invalid_argument("evaluate: routes must be > 0");
    env::EnvConfig env_cfg = cfg.env;
    env_cfg.friction = opts.friction;
    env_cfg.need_image = (agent.variant() == agents::Variant::ar_cadpg);
    env_cfg.perception_obs = (cfg.observation == "perception");
    env::LaneKeepEnv e(env_cfg);
    if (env_cfg.perception_obs) {
        if (!predictor) throw std::invalid_argument("perception observations need a coefficient regressor");
        e.set_coeff_predictor(predictor);
    }
    agent.set_alpha(opts.alpha);

    EvalReport rep;
    rep.variant = agents::to_string(agent.variant());
    rep.opts = opts;
    std::vector<double> pooled_da;
    for (int i = 0; i < opts.routes; ++i) {
        RouteEval re;
        re.route_seed = route_seed(opts.seed, i);
        env::Obs obs = e.reset(re.route_seed);
        agent.begin_episode(0);
        std::vector<double> d_series{e.last_err().d};
        bool have_prev = false;
        vehicle::Action prev{};
        vehicle::Termination verdict = vehicle::Termination::running;
        while (!e.done()) {
            const agents::ActOutput act = agent.act(obs, false);
            env::StepOutcome out = e.step(act.executed);
            d_series.push_back(out.err.d);
            if (have_prev) {
                const double ds = act.executed.steer - prev.steer;
                const double dt = act.executed.throttle - prev.throttle;
                re.delta_action.push_back(std::sqrt(ds * ds + dt * dt));
            }
            prev = act.executed;
            have_prev = true;
            re.ret += out.reward;
            verdict = out.verdict;
            obs = std::move(out.obs);
            ++re.steps;
        }
        agent.end_episode();
        re.m = compute_metrics(d_series, cfg.env.graph.lane_width);
        re.completed = (verdict == vehicle::Termination::route_complete);
        pooled_da.insert(pooled_da.end(), re.delta_action.begin(), re.delta_action.end());
        rep.per_route.push_back(std::move(re));
    }

    const double n = static_cast<double>(rep.per_route.size());
    for (const auto& r : rep.per_route) {
        rep.mean_rmse += r.m.rmse;
        rep.mean_nrmse += r.m.nrmse;
        rep.mean_sigma += r.m.sigma;
        rep.completion_rate += r.completed ? 1.0 : 0.0;
    }
    rep.mean_rmse /= n;
    rep.mean_nrmse /= n;
    rep.mean_sigma /= n;
    rep.completion_rate /= n;
    double var = 0.0;
    for (const auto& r : rep.per_route) var += (r.m.rmse - rep.mean_rmse) * (r.m.rmse - rep.mean_rmse);
    rep.rmse_std_population = std::sqrt(var / n);
    if (rep.per_route.size() > 1) {
        rep.rmse_std_sample = std::sqrt(var / (n - 1.0));
        rep.rmse_ci95 = 1.96 * rep.rmse_std_sample / std::sqrt(n);
    } else {
        rep.rmse_std_sample = std::numeric_limits<double>::quiet_NaN();
        rep.rmse_ci95 = std::numeric_limits<double>::quiet_NaN();
    }
    rep.p99_delta_action = percentile99(pooled_da);
    return rep;
}

PairedGap paired_gap_rmse(const EvalReport& a, const EvalReport& b) {
    PairedGap g;
    std::vector<double> diffs;
    for (const auto& ra : a.per_route) {
        for (const auto& rb : b.per_route) {
            if (ra.route_seed == rb.route_seed) {
                diffs.push_back(ra.m.rmse - rb.m.rmse);
                break;
            }
        }
    }
    g.n = static_cast<int>(diffs.size());
    if (g.n == 0) throw std::invalid_argument("paired_gap_rmse: no common route seeds");
    for (double d : diffs) g.mean_gap += d;
    g.mean_gap /= g.n;
    if (g.n > 1) {
        double var = 0.0;
        for (double d : diffs) var += (d - g.mean_gap) * (d - g.mean_gap);
        g.paired_se = std::sqrt(var / (g.n - 1.0)) / std::sqrt(static_cast<double>(g.n));
    } else {
        g.paired_se = std::numeric_limits<double>::quiet_NaN();
    }
    return g;
}

void write_report_csv(const std::string& path, const EvalReport& rep) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw std::runtime_error("cannot write " + path);
    std::fputs("variant,route_seed,rmse,nrmse,sigma,completed\n", f);
    for (const auto& r : rep.per_route) {
        std::fprintf(f, "%s,%llu,%.17g,%.17g,%.17g,%d\n", rep.variant.c_str(),
                     static_cast<unsigned long long>(r.route_seed), r.m.rmse, r.m.nrmse, r.m.sigma,
                     r.completed ? 1 : 0);
    }
    std::fclose(f);
}

namespace {

nlohmann::json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

}  // namespace

nlohmann::json report_json(const EvalReport& r) {
    nlohmann::json per = nlohmann::json::array();
    for (const auto& re : r.per_route) {
        per.push_back({{"route_seed", re.route_seed},
                       {"rmse", re.m.rmse},
                       {"nrmse", re.m.nrmse},
                       {"sigma", re.m.sigma},
                       {"completed", re.completed},
                       {"steps", re.steps},
                       {"return", re.ret}});
    }
    return {{"variant", r.variant},
            {"routes", r.opts.routes},
            {"friction", r.opts.friction},
            {"alpha", r.opts.alpha},
            {"eval_seed", r.opts.seed},
            {"rmse",
             {{"mean", r.mean_rmse},
              {"ci95", finite_or_null(r.rmse_ci95)},
              {"std_sample", finite_or_null(r.rmse_std_sample)},
              {"std_population", r.rmse_std_population}}},
            {"nrmse_mean", r.mean_nrmse},
            {"sigma_mean", r.mean_sigma},
            {"completion_rate", r.completion_rate},
            {"p99_delta_action", r.p99_delta_action},
            {"per_route", per}};
}

nlohmann::json combined_json(const std::vector<EvalReport>& reports) {
    nlohmann::json out;
    out["variants"] = nlohmann::json::array();
    const EvalReport* base = nullptr;
    for (const auto& r : reports) {
        out["variants"].push_back(report_json(r));
        if (r.variant == "ddpg") base = &r;
    }
    if (base != nullptr) {
        nlohmann::json gaps;
        for (const auto& r : reports) {
            if (&r == base) continue;
            const PairedGap g = paired_gap_rmse(r, *base);
            gaps[r.variant] = {{"rmse_gap_mean", g.mean_gap}, {"paired_se", finite_or_null(g.paired_se)},
                               {"n", g.n}};
        }
        out["paired_vs_ddpg"] = gaps;
    }
    return out;
}

std::string format_table(const std::vector<EvalReport>& reports) {
    char buf[256];
    std::string s;
    std::snprintf(buf, sizeof(buf), "%-10s %8s %8s %8s %10s %10s\n", "variant", "rmse", "nrmse", "sigma", "complete",
                  "p99|da|");
    s += buf;
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof(buf), "%-10s %8.4f %8.4f %8.4f %9.0f%% %10.4f\n", r.variant.c_str(), r.mean_rmse,
                      r.mean_nrmse, r.mean_sigma, 100.0 * r.completion_rate, r.p99_delta_action);
        s += buf;
    }
    return s;
}

}  // namespace arlk::evaluation

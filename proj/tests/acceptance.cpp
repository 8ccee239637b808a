// Release gate. Runs ten end-to-end checks against the built library and the
// shipped experiment configs, printing exactly one PASS/FAIL line per
// criterion and exiting non-zero if any fail. Every tolerance and budget is
// pinned below; nothing is read from the environment.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "arlk/agents.hpp"
#include "arlk/config.hpp"
#include "arlk/evaluation.hpp"
#include "arlk/gradcheck.hpp"
#include "arlk/nn.hpp"
#include "arlk/perception.hpp"
#include "arlk/rng.hpp"
#include "arlk/training.hpp"

#ifndef ARLK_CONFIG_DIR
#error "ARLK_CONFIG_DIR must point at the shipped configs"
#endif

namespace {

using namespace arlk;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// --- pinned tolerances and budgets ------------------------------------------------
constexpr int kGradSeeds = 20;
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSec = 60.0;

constexpr int kMixAlphas = 11;  // 0.0, 0.1, ..., 1.0
constexpr int kMixPairs = 100;
constexpr double kMixTol = 1e-15;

constexpr double kTargetTol = 1e-12;
constexpr double kTauRatioTol = 1e-12;

constexpr double kNegationTol = 1e-10;

constexpr double kMetricsTol = 1e-12;

constexpr double kSmokeFraction = 0.8;  // of the per-step ceiling w_v * max_steps
constexpr double kSmokeBudgetSec = 600.0;

constexpr double kRobustBudgetSec = 3600.0;
// The visual variant re-renders replayed frames inside every update, so it
// trains with a smaller minibatch and fewer updates per episode to keep the
// whole comparison inside the budget on one core.
constexpr int kCadpgBatch = 16;
constexpr int kCadpgUpdates = 25;

constexpr double kOverfitMse = 1e-4;  // normalized train MSE on a tiny set
constexpr double kSunnySignAcc = 0.90;
constexpr double kSnowySignAcc = 0.70;

constexpr double kP99ActionGap = 0.5;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double elapsed_sec(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof(buf), f, ap);
    va_end(ap);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path work_dir(const std::string& tag) {
    const fs::path p = fs::temp_directory_path() / ("arlk_gate_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void note(const std::string& msg) { std::fprintf(stderr, "[gate] %s\n", msg.c_str()); }

// Artifacts shared between the learning smoke check and the smoothness check.
struct SmokeArtifacts {
    bool ready = false;
    config::Config cfg;
    std::string checkpoint;
};

// 1. Analytic gradients of every layer kind agree with central finite
//    differences across random instantiations, quickly.
Outcome c1_gradcheck() {
    const auto t0 = Clock::now();
    const auto entries = nn::run_gradcheck_suite(kGradSeeds, kGradTol);
    const double dt = elapsed_sec(t0);
    double worst = 0.0;
    std::string worst_layer = "-";
    bool all = !entries.empty();
    for (const auto& e : entries) {
        all = all && e.pass;
        if (e.max_rel_err > worst) {
            worst = e.max_rel_err;
            worst_layer = e.layer;
        }
    }
    const bool in_time = dt < kGradBudgetSec;
    return {all && in_time, fmt("%zu layer kinds x %d seeds, worst %.2e (%s), tol %.0e, %.1fs/%.0fs", entries.size(),
                                kGradSeeds, worst, worst_layer.c_str(), kGradTol, dt, kGradBudgetSec)};
}

// 2. The executed action is the clamped convex mixture of the policy and
//    adversary proposals at every mixing weight.
Outcome c2_mixing() {
    Rng rng(20250101);
    auto clamp1 = [](double x) { return std::clamp(x, -1.0, 1.0); };
    double worst = 0.0;
    for (int ai = 0; ai < kMixAlphas; ++ai) {
        const double alpha = ai / double(kMixAlphas - 1);
        for (int k = 0; k < kMixPairs; ++k) {
            const vehicle::Action mu{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
            const vehicle::Action adv{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
            const vehicle::Action got = agents::mix_actions(mu, adv, alpha);
            const double es = clamp1((1 - alpha) * mu.steer + alpha * adv.steer);
            const double et = clamp1((1 - alpha) * mu.throttle + alpha * adv.throttle);
            worst = std::max({worst, std::abs(got.steer - es), std::abs(got.throttle - et)});
            if (std::abs(got.steer) > 1 || std::abs(got.throttle) > 1) worst = 1.0;
            if (alpha == 0.0 && got.steer != clamp1(mu.steer)) worst = 1.0;
            if (alpha == 1.0 && got.throttle != clamp1(adv.throttle)) worst = 1.0;
        }
    }
    return {worst <= kMixTol,
            fmt("%d alphas x %d pairs, worst |err| %.2e, tol %.0e", kMixAlphas, kMixPairs, worst, kMixTol)};
}

// 3. TD target arithmetic and target-network tracking: y = r + g(1-done)q,
//    tau = 1 copies exactly, small tau decays parameter gaps geometrically.
Outcome c3_targets() {
    Rng rng(3);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double r = rng.uniform(-10, 10), q = rng.uniform(-50, 50), g = rng.uniform(0, 0.999);
        const bool done = rng.bernoulli(0.3);
        const double want = r + g * (done ? 0.0 : 1.0) * q;
        worst = std::max(worst, std::abs(agents::critic_target(r, q, g, done) - want));
    }

    nn::Mlp online({4, 8, 2}, true, rng), target({4, 8, 2}, true, rng);
    nn::Mlp copy({4, 8, 2}, true, rng);
    nn::soft_update(copy.params(""), online.params(""), 1.0);
    bool copied = true;
    {
        auto po = online.params(""), pc = copy.params("");
        for (std::size_t i = 0; i < po.size(); ++i) copied = copied && pc[i].t->values() == po[i].t->values();
    }

    // gap_k = gap_0 * (1 - tau)^k, checked parameter-wise after 25 steps.
    const double tau = 0.02;
    const int steps = 25;
    auto po = online.params(""), pt = target.params("");
    std::vector<double> gap0;
    for (std::size_t i = 0; i < po.size(); ++i) {
        for (std::size_t j = 0; j < po[i].t->values().size(); ++j) gap0.push_back((*pt[i].t)[j] - (*po[i].t)[j]);
    }
    for (int k = 0; k < steps; ++k) nn::soft_update(target.params(""), online.params(""), tau);
    const double shrink = std::pow(1.0 - tau, steps);
    double worst_ratio = 0.0;
    std::size_t at = 0;
    for (std::size_t i = 0; i < po.size(); ++i) {
        for (std::size_t j = 0; j < po[i].t->values().size(); ++j, ++at) {
            const double want = gap0[at] * shrink;
            const double got = (*pt[i].t)[j] - (*po[i].t)[j];
            worst_ratio = std::max(worst_ratio, std::abs(got - want) / std::max(std::abs(want), 1e-9));
        }
    }
    const bool pass = worst <= kTargetTol && copied && worst_ratio <= kTauRatioTol;
    return {pass, fmt("target err %.2e (tol %.0e), tau=1 copy %s, decay err %.2e (tol %.0e)", worst, kTargetTol,
                      copied ? "exact" : "BROKEN", worst_ratio, kTauRatioTol)};
}

// 4. The adversary's raw policy gradient is the exact negation of the
//    actor's on identical features and critic.
Outcome c4_negation() {
    Rng rng(4);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        nn::Mlp head({3, 16, 2}, true, rng);
        nn::Mlp critic({5, 16, 1}, false, rng);
        Tensor feats({8, 3});
        for (auto& v : feats.values()) v = rng.normal();
        const auto ga = agents::policy_raw_grad(head, critic, feats, -1.0);
        const auto gd = agents::policy_raw_grad(head, critic, feats, +1.0);
        for (std::size_t i = 0; i < ga.size(); ++i) worst = std::max(worst, std::abs(ga[i] + gd[i]));
    }
    return {worst <= kNegationTol, fmt("20 random nets, max |g_actor + g_adv| %.2e, tol %.0e", worst, kNegationTol)};
}

// 5. Trajectory metrics match a long-double two-pass oracle, and nRMSE is
//    exactly RMSE / lane width.
Outcome c5_metrics() {
    Rng rng(5);
    double worst = 0.0;
    bool nrmse_exact = true;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = rng.uniform_int(2, 400);
        std::vector<double> d(n);
        const double off = rng.uniform(-2, 2);
        for (auto& x : d) x = off + rng.normal() * rng.uniform(0.01, 2.0);
        const double lane = rng.uniform(2.5, 5.0);
        const auto m = evaluation::compute_metrics(d, lane);

        long double sum = 0, sq = 0;
        for (double x : d) {
            sum += x;
            sq += static_cast<long double>(x) * x;
        }
        const long double mean = sum / n;
        long double var = 0;
        for (double x : d) var += (x - mean) * (x - mean);
        const double rmse = std::sqrt(static_cast<double>(sq / n));
        const double sigma = std::sqrt(static_cast<double>(var / n));
        worst = std::max(worst, std::abs(m.rmse - rmse) / std::max(rmse, 1e-12));
        worst = std::max(worst, std::abs(m.sigma - sigma) / std::max(sigma, 1e-12));
        nrmse_exact = nrmse_exact && m.nrmse == m.rmse / lane;
    }
    return {worst <= kMetricsTol && nrmse_exact,
            fmt("500 series, worst rel err %.2e (tol %.0e), nrmse exact: %s", worst, kMetricsTol,
                nrmse_exact ? "yes" : "NO")};
}

// 6. A plain learner actually learns: on the shipped smoke config the final
//    20-episode moving average reaches 80% of the reward ceiling in budget.
Outcome c6_smoke(SmokeArtifacts& smoke) {
    const auto cfg = config::parse_file(std::string(ARLK_CONFIG_DIR) + "/smoke.cfg");
    const fs::path dir = work_dir("smoke");
    note("training smoke policy (" + cfg.variant + ", " + std::to_string(cfg.episodes) + " episodes)");
    const auto t0 = Clock::now();
    const auto res = training::train(cfg, dir.string());
    const double dt = elapsed_sec(t0);
    if (res.aborted || res.moving_avg.empty()) {
        return {false, fmt("training aborted after %d episodes", res.episodes_done)};
    }
    const double ceiling = cfg.env.rewardw.w_v * cfg.env.max_steps;
    const double bar = kSmokeFraction * ceiling;
    const double got = res.moving_avg.back();
    smoke.ready = true;
    smoke.cfg = cfg;
    smoke.checkpoint = res.final_checkpoint;
    const bool pass = got >= bar && dt < kSmokeBudgetSec;
    return {pass, fmt("final MA20 %.1f vs bar %.1f (= %.0f%% of %.0f), %.0fs/%.0fs", got, bar,
                      100 * kSmokeFraction, ceiling, dt, kSmokeBudgetSec)};
}

// 7. Action-robust training pays off under a friction shift: on shared
//    packed-snow routes the adversarially trained variants beat the plain
//    learner by more than the paired standard error, and the visual variant
//    is no worse than the recurrent one.
Outcome c7_robustness() {
    const auto base = config::parse_file(std::string(ARLK_CONFIG_DIR) + "/robustness.cfg");
    const auto t0 = Clock::now();

    const std::vector<std::string> names = {"ddpg", "ar-ddpg", "ar-rdpg", "ar-cadpg"};
    std::vector<evaluation::EvalReport> reports;
    for (const auto& name : names) {
        config::Config cfg = base;
        cfg.variant = name;
        if (name == "ar-cadpg") {
            cfg.agent.batch = kCadpgBatch;
            cfg.agent.updates_per_episode = kCadpgUpdates;
        }
        const fs::path dir = work_dir("robust_" + name);
        note("training " + name + " (" + std::to_string(cfg.episodes) + " episodes)");
        const auto res = training::train(cfg, dir.string());
        if (res.aborted) return {false, name + " training aborted on non-finite values"};

        env::EnvConfig envc = cfg.env;
        envc.need_image = name == "ar-cadpg";
        auto agent = agents::load_agent(Checkpoint::load(res.final_checkpoint), envc);
        evaluation::EvalOptions opts;
        opts.routes = cfg.eval_routes;
        opts.friction = cfg.eval_friction;
        opts.alpha = cfg.eval_alpha;
        opts.seed = cfg.eval_seed;
        reports.push_back(evaluation::evaluate(*agent, cfg, opts));
        note(name + fmt(" eval: rmse %.3f, completion %.0f%%", reports.back().mean_rmse,
                        100 * reports.back().completion_rate));
        fs::remove_all(dir);
    }
    const double dt = elapsed_sec(t0);

    const auto& ddpg = reports[0];
    const auto g_add = evaluation::paired_gap_rmse(ddpg, reports[1]);   // ddpg - ar-ddpg
    const auto g_rdpg = evaluation::paired_gap_rmse(ddpg, reports[2]);  // ddpg - ar-rdpg
    const auto g_cadpg = evaluation::paired_gap_rmse(ddpg, reports[3]); // ddpg - ar-cadpg
    const auto g_cr = evaluation::paired_gap_rmse(reports[3], reports[2]);  // ar-cadpg - ar-rdpg

    const bool add_ok = g_add.mean_gap > g_add.paired_se;
    const bool rdpg_ok = g_rdpg.mean_gap > g_rdpg.paired_se;
    const bool cadpg_ok = g_cadpg.mean_gap > g_cadpg.paired_se;
    const bool cr_ok = g_cr.mean_gap <= g_cr.paired_se;  // no-worse-than, SE slack
    const bool in_time = dt < kRobustBudgetSec;
    const bool pass = add_ok && rdpg_ok && cadpg_ok && cr_ok && in_time;
    return {pass, fmt("rmse d/a/r/c %.3f/%.3f/%.3f/%.3f; gap-se a %.3f-%.3f r %.3f-%.3f c %.3f-%.3f; "
                      "c-r %.3f<=%.3f; %.0fs/%.0fs",
                      ddpg.mean_rmse, reports[1].mean_rmse, reports[2].mean_rmse, reports[3].mean_rmse,
                      g_add.mean_gap, g_add.paired_se, g_rdpg.mean_gap, g_rdpg.paired_se, g_cadpg.mean_gap,
                      g_cadpg.paired_se, g_cr.mean_gap, g_cr.paired_se, dt, kRobustBudgetSec)};
}

// 8. The centerline regressor can (a) drive its training loss into the floor
//    on a tiny set and (b) learn the sign of the lateral offset well on
//    clean frames and acceptably on degraded ones.
Outcome c8_perception() {
    // (a) overfit
    const auto tiny = perception::build_dataset(4, 2, 8101);
    Rng r1(81);
    perception::Regressor small(64, 64, r1);
    const auto fit = perception::train_regressor(small, tiny, 300, 6, 1e-3, 811);
    const double train_floor = fit.train_mse.empty() ? 1.0 : fit.train_mse.back();
    const bool overfit_ok = !fit.diverged && train_floor < kOverfitMse;

    // (b) sign generalization on fresh frames
    const auto train_set = perception::build_dataset(80, 80, 8201);
    Rng r2(82);
    perception::Regressor model(64, 64, r2);
    (void)perception::train_regressor(model, train_set, 40, 16, 1e-3, 821);
    const auto eval_set = perception::build_dataset(40, 40, 8301);
    int sunny_hit = 0, sunny_n = 0, snowy_hit = 0, snowy_n = 0;
    for (const auto& f : eval_set) {
        const auto c = model.predict(f.image);
        const bool hit = std::signbit(c.c0) == std::signbit(f.coeffs[0]);
        if (f.snowy) {
            ++snowy_n;
            snowy_hit += hit ? 1 : 0;
        } else {
            ++sunny_n;
            sunny_hit += hit ? 1 : 0;
        }
    }
    const double sunny_acc = double(sunny_hit) / sunny_n;
    const double snowy_acc = double(snowy_hit) / snowy_n;
    const bool sign_ok = sunny_acc >= kSunnySignAcc && snowy_acc >= kSnowySignAcc;
    return {overfit_ok && sign_ok,
            fmt("overfit mse %.2e (tol %.0e); sign acc sunny %.0f%% (need %.0f%%), degraded %.0f%% (need %.0f%%)",
                train_floor, kOverfitMse, 100 * sunny_acc, 100 * kSunnySignAcc, 100 * snowy_acc,
                100 * kSnowySignAcc)};
}

// 9. Bit-for-bit determinism: identical configs give identical artifacts,
//    and an interrupted + resumed run is indistinguishable from a straight
//    one. Checked for a flat and a recurrent variant.
Outcome c9_determinism() {
    for (const std::string variant : {std::string("ar-ddpg"), std::string("ar-rdpg")}) {
        config::Config cfg;
        cfg.variant = variant;
        cfg.episodes = 6;
        cfg.checkpoint_every = 2;
        cfg.env.max_steps = 30;
        cfg.agent.batch = 8;
        cfg.agent.hidden = 16;
        cfg.agent.rnn_hidden = 8;
        cfg.agent.seq_batch = 2;
        cfg.agent.bptt = 4;

        const fs::path a = work_dir("det_a_" + variant), b = work_dir("det_b_" + variant),
                       c = work_dir("det_c_" + variant);
        (void)training::train(cfg, a.string());
        (void)training::train(cfg, b.string());
        config::Config half = cfg;
        half.episodes = 3;
        (void)training::train(half, c.string());
        (void)training::train(cfg, c.string(), true);  // resume to 6

        const bool fresh_eq = slurp(a / "final.ckpt") == slurp(b / "final.ckpt") &&
                              slurp(a / "curve.csv") == slurp(b / "curve.csv");
        const bool resume_eq = slurp(a / "final.ckpt") == slurp(c / "final.ckpt") &&
                               slurp(a / "curve.csv") == slurp(c / "curve.csv");
        fs::remove_all(a);
        fs::remove_all(b);
        fs::remove_all(c);
        if (!fresh_eq || !resume_eq) {
            return {false, variant + ": fresh twin " + (fresh_eq ? "identical" : "DIFFERS") + ", resumed " +
                               (resume_eq ? "identical" : "DIFFERS")};
        }
    }
    return {true, "ar-ddpg and ar-rdpg: fresh twin and resumed runs byte-identical (ckpt + curve)"};
}

// 10. The learned smoke policy is smooth: the 99th percentile of per-step
//     action changes stays under the pinned limit at nominal grip.
Outcome c10_smoothness(const SmokeArtifacts& smoke) {
    if (!smoke.ready) return {false, "smoke artifacts unavailable (criterion 6 did not produce a checkpoint)"};
    env::EnvConfig envc = smoke.cfg.env;
    auto agent = agents::load_agent(Checkpoint::load(smoke.checkpoint), envc);
    evaluation::EvalOptions opts;
    opts.routes = smoke.cfg.eval_routes;
    opts.friction = smoke.cfg.eval_friction;
    opts.alpha = smoke.cfg.eval_alpha;
    opts.seed = smoke.cfg.eval_seed;
    const auto rep = evaluation::evaluate(*agent, smoke.cfg, opts);
    const bool pass = rep.p99_delta_action < kP99ActionGap;
    return {pass, fmt("p99 ||da|| %.3f over %d routes (limit %.2f), completion %.0f%%", rep.p99_delta_action,
                      opts.routes, kP99ActionGap, 100 * rep.completion_rate)};
}

}  // namespace

int main() {
    SmokeArtifacts smoke;
    struct Row {
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Row> rows = {
        {"gradient-check", c1_gradcheck},
        {"action-mixing", c2_mixing},
        {"td-target", c3_targets},
        {"grad-negation", c4_negation},
        {"metrics-oracle", c5_metrics},
        {"learning-smoke", [&] { return c6_smoke(smoke); }},
        {"robustness-order", c7_robustness},
        {"perception", c8_perception},
        {"determinism", c9_determinism},
        {"action-smoothness", [&] { return c10_smoothness(smoke); }},
    };
    int failures = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Outcome out;
        try {
            out = rows[i].run();
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        failures += out.pass ? 0 : 1;
        std::printf("%s %2zu/10 %-18s %s\n", out.pass ? "PASS" : "FAIL", i + 1, rows[i].name, out.detail.c_str());
        std::fflush(stdout);
    }
    if (smoke.ready) fs::remove_all(fs::path(smoke.checkpoint).parent_path());
    std::printf("acceptance: %d/10 criteria passed\n", 10 - failures);
    return failures == 0 ? 0 : 1;
}

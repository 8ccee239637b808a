#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "arlk/agents.hpp"
#include "arlk/checkpoint.hpp"
#include "arlk/config.hpp"
#include "arlk/evaluation.hpp"
#include "arlk/gradcheck.hpp"
#include "arlk/perception.hpp"
#include "arlk/training.hpp"

namespace fs = std::filesystem;
using namespace arlk;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

const std::vector<std::string> kVariants = {"ddpg", "ar-ddpg", "ar-rdpg", "ar-cadpg"};

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "run";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string variant;
    double friction = 0.0;
    bool friction_set = false;
    double alpha = 0.0;
    bool alpha_set = false;
};

env::CoeffPredictor load_predictor(const std::string& path) {
    auto model = std::make_shared<perception::Regressor>(perception::Regressor::load(Checkpoint::load(path)));
    return perception::make_predictor(model);
}

int cmd_train(const CommonOpts& o, int episodes_override, bool resume, const std::string& perception_path,
              bool quiet) {
    config::Config cfg = config::parse_file(o.config_path);
    if (o.seed_set) cfg.seed = o.seed;
    if (!o.variant.empty()) cfg.variant = o.variant;
    if (o.friction_set) cfg.env.friction = o.friction;
    if (o.alpha_set) cfg.agent.alpha = o.alpha;
    if (episodes_override >= 0) cfg.episodes = episodes_override;
    config::validate(cfg);

    env::CoeffPredictor pred;
    if (cfg.observation == "perception") {
        if (perception_path.empty()) {
            throw config::ConfigError("run.observation = perception needs --perception <model.ckpt>");
        }
        pred = load_predictor(perception_path);
    }

    const training::TrainResult res = training::train(cfg, o.out_dir, resume, pred, quiet ? nullptr : &std::cout);
    if (res.aborted) {
        std::cerr << "training aborted after " << res.episodes_done << " episodes (non-finite values); "
                  << "last checkpoint kept at " << res.final_checkpoint << "\n";
        return kExitFailure;
    }
    const double last_ma = res.moving_avg.empty() ? 0.0 : res.moving_avg.back();
    std::cout << "trained " << res.episodes_done << " episodes; final moving-average return " << last_ma << "\n"
              << "artifacts in " << o.out_dir << "\n";
    return kExitOk;
}

int cmd_eval(const CommonOpts& o, const std::vector<std::string>& checkpoints, int routes,
             const std::string& perception_path) {
    config::Config cfg = config::parse_file(o.config_path);
    if (o.seed_set) cfg.eval_seed = o.seed;
    if (o.friction_set) cfg.eval_friction = o.friction;
    if (o.alpha_set) cfg.eval_alpha = o.alpha;
    if (routes > 0) cfg.eval_routes = routes;
    config::validate(cfg);

    evaluation::EvalOptions opts;
    opts.routes = cfg.eval_routes;
    opts.friction = cfg.eval_friction;
    opts.alpha = cfg.eval_alpha;
    opts.seed = cfg.eval_seed;

    env::CoeffPredictor pred;
    if (cfg.observation == "perception") {
        if (perception_path.empty()) {
            throw config::ConfigError("run.observation = perception needs --perception <model.ckpt>");
        }
        pred = load_predictor(perception_path);
    }

    fs::create_directories(o.out_dir);
    std::vector<evaluation::EvalReport> reports;
    for (const auto& path : checkpoints) {
        const Checkpoint ck = Checkpoint::load(path);
        std::unique_ptr<agents::Agent> agent = agents::load_agent(ck, cfg.env);
        evaluation::EvalReport rep = evaluation::evaluate(*agent, cfg, opts, pred);
        evaluation::write_report_csv(o.out_dir + "/report_" + rep.variant + ".csv", rep);
        reports.push_back(std::move(rep));
    }
    {
        std::ofstream jf(o.out_dir + "/report.json", std::ios::binary | std::ios::trunc);
        if (!jf) throw std::runtime_error("cannot write " + o.out_dir + "/report.json");
        jf << evaluation::combined_json(reports).dump(2) << "\n";
    }
    std::cout << evaluation::format_table(reports);
    return kExitOk;
}

int cmd_gradcheck(int seeds, double tol, const std::string& break_layer) {
    const auto entries = nn::run_gradcheck_suite(seeds, tol, break_layer);
    bool all_pass = true;
    for (const auto& e : entries) {
        std::printf("%-18s max_rel_err %.3e  %s\n", e.layer.c_str(), e.max_rel_err, e.pass ? "pass" : "FAIL");
        all_pass = all_pass && e.pass;
    }
    std::printf("gradcheck: %s\n", all_pass ? "all layers pass" : "FAILURES detected");
    return all_pass ? kExitOk : kExitFailure;
}

int cmd_render_dataset(const CommonOpts& o, int sunny, int snowy) {
    const std::uint64_t seed = o.seed_set ? o.seed : 1;
    const auto frames = perception::build_dataset(sunny, snowy, seed);
    fs::create_directories(o.out_dir);
    std::FILE* f = std::fopen((o.out_dir + "/labels.csv").c_str(), "wb");
    if (f == nullptr) throw std::runtime_error("cannot write " + o.out_dir + "/labels.csv");
    std::fputs("index,snowy,c0,c1,c2,c3\n", f);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "frame_%04zu.pgm", i);
        snow::write_pgm(o.out_dir + "/" + name, frames[i].image);
        std::fprintf(f, "%zu,%d,%.17g,%.17g,%.17g,%.17g\n", i, frames[i].snowy ? 1 : 0, frames[i].coeffs[0],
                     frames[i].coeffs[1], frames[i].coeffs[2], frames[i].coeffs[3]);
    }
    std::fclose(f);
    std::cout << "wrote " << frames.size() << " frames to " << o.out_dir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Action-robust lane-keeping workbench"};
    app.require_subcommand(1);

    CommonOpts o;
    int episodes_override = -1;
    bool resume = false;
    bool quiet = false;
    std::string perception_path;
    std::vector<std::string> checkpoints;
    int routes = 0;
    int gc_seeds = 20;
    double gc_tol = 1e-4;
    std::string break_layer;
    int sunny = 8, snowy = 8;

    CLI::App* train = app.add_subcommand("train", "Train an agent");
    train->add_option("--config", o.config_path, "Run configuration file")->required();
    train->add_option("--seed", o.seed, "Override run.seed")->each([&](const std::string&) { o.seed_set = true; });
    train->add_option("--variant", o.variant, "Agent variant")->check(CLI::IsMember(kVariants));
    train->add_option("--friction", o.friction, "Override env.friction")
        ->each([&](const std::string&) { o.friction_set = true; });
    train->add_option("--alpha", o.alpha, "Override agent.alpha")
        ->each([&](const std::string&) { o.alpha_set = true; });
    train->add_option("--episodes", episodes_override, "Override run.episodes");
    train->add_option("--out", o.out_dir, "Output directory");
    train->add_option("--perception", perception_path, "Coefficient-regressor checkpoint");
    train->add_flag("--resume", resume, "Continue from <out>/last.ckpt");
    train->add_flag("--quiet", quiet, "Suppress per-episode logging");

    CLI::App* eval = app.add_subcommand("eval", "Evaluate checkpoints over fresh routes");
    eval->add_option("--config", o.config_path, "Run configuration file")->required();
    eval->add_option("--checkpoint", checkpoints, "Agent checkpoint(s)")->required()->expected(-1);
    eval->add_option("--routes", routes, "Override eval.routes");
    eval->add_option("--seed", o.seed, "Override eval.seed")->each([&](const std::string&) { o.seed_set = true; });
    eval->add_option("--friction", o.friction, "Override eval.friction")
        ->each([&](const std::string&) { o.friction_set = true; });
    eval->add_option("--alpha", o.alpha, "Override eval.alpha")
        ->each([&](const std::string&) { o.alpha_set = true; });
    eval->add_option("--out", o.out_dir, "Output directory");
    eval->add_option("--perception", perception_path, "Coefficient-regressor checkpoint");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
    gradcheck->add_option("--seeds", gc_seeds, "Random instantiations per layer kind");
    gradcheck->add_option("--tol", gc_tol, "Maximum relative error");
    gradcheck->add_option("--inject-broken", break_layer, "Corrupt a layer's analytic gradient (self-test)")
        ->group("");  // hidden

    CLI::App* render = app.add_subcommand("render-dataset", "Write labeled raster frames");
    render->add_option("--sunny", sunny, "Clear-weather frame count");
    render->add_option("--snowy", snowy, "Snow-degraded frame count");
    render->add_option("--seed", o.seed, "Dataset seed")->each([&](const std::string&) { o.seed_set = true; });
    render->add_option("--out", o.out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the message
        return kExitUsage;
    }

    try {
        if (train->parsed()) return cmd_train(o, episodes_override, resume, perception_path, quiet);
        if (eval->parsed()) return cmd_eval(o, checkpoints, routes, perception_path);
        if (gradcheck->parsed()) return cmd_gradcheck(gc_seeds, gc_tol, break_layer);
        if (render->parsed()) return cmd_render_dataset(o, sunny, snowy);
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "filesystem error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid argument: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

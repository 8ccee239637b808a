#include "arlk/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "arlk/checkpoint.hpp"
#include "arlk/rng.hpp"

namespace arlk::training {

namespace fs = std::filesystem;

std::vector<double> moving_average(const std::vector<double>& x, int window) {
    if (window <= 0) throw std::invalid_argument("moving_average: window must be > 0");
    std::vector<double> out(x.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc += x[i];
        if (i >= static_cast<std::size_t>(window)) acc -= x[i - window];
        const std::size_t n = std::min<std::size_t>(i + 1, window);
        out[i] = acc / static_cast<double>(n);
    }
    return out;
}

std::uint64_t episode_seed(std::uint64_t run_seed, int episode_index) {
    return Rng(run_seed).child("episode").child(static_cast<std::uint64_t>(episode_index)).next_u64();
}

EpisodeResult run_episode(env::LaneKeepEnv& e, agents::Agent& agent, std::uint64_t seed, int episode_index,
                          bool learn, agents::UpdateStats* stats) {
    EpisodeResult res;
    env::Obs obs = e.reset(seed);
    agent.begin_episode(episode_index);
    while (!e.done()) {
        const agents::ActOutput act = agent.act(obs, learn);
        const vehicle::VehicleState prev_state = e.state();
        env::StepOutcome out = e.step(act.executed);
        if (learn) agent.observe(e, prev_state, obs, act, out);
        res.ret += out.reward;
        res.verdict = out.verdict;
        obs = std::move(out.obs);
        ++res.steps;
    }
    agent.end_episode();
    if (learn) {
        const agents::UpdateStats st = agent.update(res.steps);
        if (stats != nullptr) *stats = st;
    }
    return res;
}

namespace {

void write_curve(const std::string& path, const std::vector<double>& returns, int window) {
    const std::vector<double> ma = moving_average(returns, window);
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (f == nullptr) throw std::runtime_error("cannot write " + path);
    std::fputs("episode,return,moving_avg\n", f);
    for (std::size_t i = 0; i < returns.size(); ++i) {
        std::fprintf(f, "%zu,%.17g,%.17g\n", i, returns[i], ma[i]);
    }
    std::fclose(f);
}

void save_run_checkpoint(agents::Agent& agent, const std::vector<double>& returns, int next_episode,
                         const std::string& path) {
    Checkpoint ck;
    agent.save(ck);
    Tensor curve({static_cast<std::int64_t>(returns.size())});
    std::copy(returns.begin(), returns.end(), curve.values().begin());
    ck.put_tensor("trainer.returns", curve);
    ck.put_u64("trainer.episode", {static_cast<std::uint64_t>(next_episode)});
    const std::string tmp = path + ".tmp";
    ck.save(tmp);
    fs::rename(tmp, path);
}

void write_status(const std::string& dir, const std::string& status, int episodes_done) {
    nlohmann::json j = {{"status", status}, {"episodes_done", episodes_done}};
    std::ofstream f(dir + "/status.json", std::ios::binary | std::ios::trunc);
    f << j.dump(2) << "\n";
}

char hex_digit(unsigned v) { return v < 10 ? static_cast<char>('0' + v) : static_cast<char>('a' + v - 10); }

std::string hash_hex(std::uint64_t h) {
    std::string s = "0x";
    for (int i = 15; i >= 0; --i) s += hex_digit(static_cast<unsigned>((h >> (4 * i)) & 0xf));
    return s;
}

}  // namespace

TrainResult train(const config::Config& cfg, const std::string& out_dir, bool resume, env::CoeffPredictor predictor,
                  std::ostream* log) {
    config::validate(cfg);
    const auto variant = agents::variant_from_string(cfg.variant);
    if (!variant) throw std::invalid_argument("unknown variant: " + cfg.variant);

    env::EnvConfig env_cfg = cfg.env;
    env_cfg.need_image = (*variant == agents::Variant::ar_cadpg);
    env_cfg.perception_obs = (cfg.observation == "perception");
    if (env_cfg.perception_obs && !predictor) {
        throw std::invalid_argument("perception observations need a trained coefficient regressor");
    }

    fs::create_directories(out_dir);
    const std::string manifest_path = out_dir + "/manifest.json";
    const std::uint64_t hash = config::config_hash(cfg);
    // Resume compatibility ignores the episode target so a finished run can
    // be extended; everything else must match the original run exactly.
    config::Config sans = cfg;
    sans.episodes = 0;
    const std::uint64_t resume_hash = config::config_hash(sans);

    std::unique_ptr<agents::Agent> agent;
    std::vector<double> returns;
    int start_episode = 0;

    if (resume) {
        std::ifstream mf(manifest_path, std::ios::binary);
        if (!mf) throw std::runtime_error("resume: missing " + manifest_path);
        nlohmann::json manifest = nlohmann::json::parse(mf);
        if (manifest.at("resume_hash").get<std::string>() != hash_hex(resume_hash)) {
            throw std::runtime_error("resume: config does not match the original run");
        }
        Checkpoint ck = Checkpoint::load(out_dir + "/last.ckpt");
        agent = agents::load_agent(ck, env_cfg);
        start_episode = static_cast<int>(ck.u64("trainer.episode")[0]);
        const Tensor& curve = ck.tensor("trainer.returns");
        returns.assign(curve.values().begin(), curve.values().end());
    } else {
        nlohmann::json manifest = {{"format", "arlk-run"},
                                   {"variant", cfg.variant},
                                   {"observation", cfg.observation},
                                   {"seed", cfg.seed},
                                   {"episodes", cfg.episodes},
                                   {"config_hash", hash_hex(hash)},
                                   {"resume_hash", hash_hex(resume_hash)}};
        std::ofstream mf(manifest_path, std::ios::binary | std::ios::trunc);
        if (!mf) throw std::runtime_error("cannot write " + manifest_path);
        mf << manifest.dump(2) << "\n";
        std::ofstream cf(out_dir + "/config.cfg", std::ios::binary | std::ios::trunc);
        cf << config::canonical(cfg);
        agent = agents::make_agent(*variant, cfg.agent, cfg.seed, env_cfg);
    }

    env::LaneKeepEnv e(env_cfg);
    if (env_cfg.perception_obs) e.set_coeff_predictor(predictor);

    TrainResult result;
    result.returns = returns;
    result.episodes_done = start_episode;

    // An initial checkpoint so even a zero-episode run leaves a loadable
    // artifact, and so an abort on the very first episodes has a fallback.
    if (!resume) save_run_checkpoint(*agent, returns, 0, out_dir + "/last.ckpt");

    bool aborted = false;
    for (int ep = start_episode; ep < cfg.episodes; ++ep) {
        agents::UpdateStats stats;
        const EpisodeResult er = run_episode(e, *agent, episode_seed(cfg.seed, ep), ep, true, &stats);
        if (!std::isfinite(er.ret) || !stats.finite) {
            aborted = true;
            result.episodes_done = ep;
            if (log != nullptr) {
                *log << "episode " << ep << ": non-finite training state, aborting; last checkpoint kept\n";
            }
            break;
        }
        result.returns.push_back(er.ret);
        result.episodes_done = ep + 1;
        if (log != nullptr) {
            *log << "episode " << ep << " return " << er.ret << " steps " << er.steps << " critic_loss "
                 << stats.critic_loss << "\n";
        }
        if ((ep + 1) % cfg.checkpoint_every == 0 || ep + 1 == cfg.episodes) {
            save_run_checkpoint(*agent, result.returns, ep + 1, out_dir + "/last.ckpt");
            write_curve(out_dir + "/curve.csv", result.returns, cfg.curve_window);
        }
    }

    result.moving_avg = moving_average(result.returns, cfg.curve_window);
    write_curve(out_dir + "/curve.csv", result.returns, cfg.curve_window);
    result.aborted = aborted;
    if (!aborted) {
        save_run_checkpoint(*agent, result.returns, result.episodes_done, out_dir + "/final.ckpt");
        result.final_checkpoint = out_dir + "/final.ckpt";
        write_status(out_dir, "ok", result.episodes_done);
    } else {
        result.final_checkpoint = out_dir + "/last.ckpt";
        write_status(out_dir, "nan-abort", result.episodes_done);
    }
    return result;
}

}  // namespace arlk::training

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "arlk/agents.hpp"
#include "arlk/config.hpp"
#include "arlk/env.hpp"

namespace arlk::training {

// Trailing mean over a window: out[i] = mean(x[max(0, i-w+1) .. i]).
std::vector<double> moving_average(const std::vector<double>& x, int window);

struct EpisodeResult {
    double ret = 0.0;  // undiscounted return
    int steps = 0;
    vehicle::Termination verdict = vehicle::Termination::running;
};

// Roll out one episode. When `learn` is set the agent acts with exploration
// noise, records transitions, and runs its update pass afterwards.
EpisodeResult run_episode(env::LaneKeepEnv& e, agents::Agent& agent, std::uint64_t episode_seed, int episode_index,
                          bool learn, agents::UpdateStats* stats = nullptr);

struct TrainResult {
    std::vector<double> returns;
    std::vector<double> moving_avg;
    int episodes_done = 0;
    bool aborted = false;  // non-finite parameters or loss; last checkpoint kept
    std::string final_checkpoint;
};

// Train per the config into out_dir. Writes manifest.json and config.cfg up
// front, curve.csv and a rolling last.ckpt at the checkpoint cadence, and
// final.ckpt on normal completion. With resume = true, continues from
// out_dir/last.ckpt; the finished run is bit-identical to an uninterrupted
// one with the same config. `predictor` is required when the config selects
// perception observations.
TrainResult train(const config::Config& cfg, const std::string& out_dir, bool resume = false,
                  env::CoeffPredictor predictor = nullptr, std::ostream* log = nullptr);

// Episode seed derivation shared by training and tests.
std::uint64_t episode_seed(std::uint64_t run_seed, int episode_index);

}  // namespace arlk::training

#pragma once

#include <array>
#include <cstdint>
#include <functional>

#include "arlk/reward.hpp"
#include "arlk/snow.hpp"
#include "arlk/track.hpp"
#include "arlk/vehicle.hpp"

namespace arlk::env {

struct ObsScales {
    double d = 1.75;                  // half lane width
    double phi = 0.7853981633974483;  // pi/4
    double v = 15.0;                  // max speed
};

struct EnvConfig {
    track::GraphSpec graph;
    vehicle::VehicleParams vparams;
    reward::RewardWeights rewardw;
    snow::OcclusionSampling occ_sampling;
    snow::RenderParams render;
    bool occlusion = true;
    double friction = 0.6;
    int max_steps = 400;
    double start_speed = 5.0;
    double start_d_jitter = 0.3;    // m
    double start_phi_jitter = 0.1;  // rad
    int min_route_edges = 3;
    ObsScales scales;
    bool need_image = false;      // visual agents receive frames in Obs
    bool perception_obs = false;  // estimate d/phi from rendered frames
};

struct Obs {
    std::array<double, 3> kin{};  // normalized [d, phi, v]
    snow::RasterImage image;      // populated when cfg.need_image
};

struct StepOutcome {
    Obs obs;
    double reward = 0.0;
    vehicle::Termination verdict = vehicle::Termination::running;
    bool done = false;
    double bootstrap_cut = 0.0;  // 1 when the successor state is absorbing
    track::LaneFrameError err;   // ground-truth lane frame at the new state
};

// Deterministic route from an episode seed: procedural circuit, then a
// start/goal pair uniform over nodes at least min_edges apart.
track::Route make_route(std::uint64_t seed, const track::GraphSpec& spec, int min_edges);

using CoeffPredictor = std::function<track::CenterlineCoeffs(const snow::RasterImage&)>;

class LaneKeepEnv {
  public:
    explicit LaneKeepEnv(EnvConfig cfg);

    Obs reset(std::uint64_t episode_seed);
    StepOutcome step(const vehicle::Action& a);

    const EnvConfig& config() const { return cfg_; }
    const track::Route& route() const { return route_; }
    const vehicle::VehicleState& state() const { return state_; }
    const snow::OcclusionConfig& occlusion() const { return occ_; }
    std::uint64_t route_seed() const { return route_seed_; }
    std::uint64_t frame_index() const { return frame_; }
    int step_index() const { return step_; }
    const track::LaneFrameError& last_err() const { return last_err_; }
    bool done() const { return done_; }

    // Required before reset when perception_obs is on.
    void set_coeff_predictor(CoeffPredictor p) { predictor_ = std::move(p); }

  private:
    Obs make_obs();

    EnvConfig cfg_;
    track::Route route_;
    vehicle::VehicleState state_;
    snow::OcclusionConfig occ_;
    std::uint64_t route_seed_ = 0;
    std::uint64_t frame_ = 0;
    int step_ = 0;
    double s_hint_ = 0.0;
    track::LaneFrameError last_err_;
    bool done_ = true;
    CoeffPredictor predictor_;
};

}  // namespace arlk::env

#pragma once

#include <cmath>

#include "arlk/track.hpp"
#include "arlk/vehicle.hpp"

namespace arlk::reward {

struct RewardWeights {
    double w_d = 1.0;            // lateral deviation penalty
    double w_phi = 0.5;          // heading error penalty
    double w_v = 0.5;            // forward progress weight
    double lambda1 = 0.1;        // action smoothness penalty
    double lambda2 = 0.05;       // throttle magnitude penalty
    double crash_penalty = 10.0; // terminal lane departure
};

// Shaped per-step reward: progress along the lane minus quadratic penalties
// on deviation, heading error, action roughness, and throttle effort, with a
// terminal penalty on lane departure. The per-step maximum is w_v (centered,
// aligned, at max speed, repeated action, zero throttle).
inline double step_reward(const track::LaneFrameError& err, const vehicle::VehicleState& state,
                          const vehicle::Action& action, const vehicle::Action& prev_action,
                          vehicle::Termination verdict, const RewardWeights& w, double lane_width,
                          double max_speed) {
    const double d_norm = err.d / (0.5 * lane_width);
    const double dsteer = action.steer - prev_action.steer;
    const double dthrottle = action.throttle - prev_action.throttle;
    double r = w.w_v * (state.v / max_speed) * std::cos(err.phi);
    r -= w.w_d * d_norm * d_norm;
    r -= w.w_phi * err.phi * err.phi;
    r -= w.lambda1 * (dsteer * dsteer + dthrottle * dthrottle);
    r -= w.lambda2 * action.throttle * action.throttle;
    if (verdict == vehicle::Termination::lane_departure) r -= w.crash_penalty;
    return r;
}

}  // namespace arlk::reward

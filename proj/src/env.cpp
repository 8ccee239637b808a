#include "arlk/env.hpp"

#include <cmath>
#include <stdexcept>

#include "arlk/rng.hpp"

namespace arlk::env {

track::Route make_route(std::uint64_t seed, const track::GraphSpec& spec, int min_edges) {
    const track::RouteGraph graph = track::generate_graph(seed, spec);
    const int n = static_cast<int>(graph.nodes.size());
    if (min_edges < 1 || min_edges > n - 1) throw std::invalid_argument("min_route_edges out of range");
    Rng rng = Rng(seed).child("env.route");
    const int start = rng.uniform_int(0, n - 1);
    const int ahead = rng.uniform_int(min_edges, n - 1);
    return track::plan_route(graph, start, (start + ahead) % n);
}

LaneKeepEnv::LaneKeepEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.friction <= 0.0 || cfg_.friction > 1.0) throw std::invalid_argument("friction must be in (0, 1]");
    if (cfg_.max_steps <= 0) throw std::invalid_argument("max_steps must be positive");
}

Obs LaneKeepEnv::reset(std::uint64_t episode_seed) {
    if (cfg_.perception_obs && !predictor_) {
        throw std::logic_error("perception observations requested without a coefficient predictor");
    }
    route_seed_ = episode_seed;
    route_ = make_route(episode_seed, cfg_.graph, cfg_.min_route_edges);

    Rng rng = Rng(episode_seed).child("env.start");
    const track::Pose p0 = route_.pose_at(0.0);
    const double d0 = rng.uniform(-cfg_.start_d_jitter, cfg_.start_d_jitter);
    const double phi0 = rng.uniform(-cfg_.start_phi_jitter, cfg_.start_phi_jitter);
    const track::Vec2 pos = route_.offset_point(0.0, d0);
    state_ = vehicle::VehicleState{pos.x, pos.y, wrap_angle(p0.heading + phi0), cfg_.start_speed, {}};

    occ_ = snow::OcclusionConfig{};
    if (cfg_.occlusion) {
        snow::OcclusionSampling s = cfg_.occ_sampling;
        s.route_length = route_.s_total;
        occ_ = snow::sample_occlusion(Rng(episode_seed).child("env.occ").next_u64(), s);
    }

    frame_ = 0;
    step_ = 0;
    done_ = false;
    const auto err = track::lane_frame({{state_.x, state_.y}, state_.yaw}, route_);
    if (!err) throw std::logic_error("vehicle spawned outside the corridor");
    last_err_ = *err;
    s_hint_ = err->s;
    return make_obs();
}

StepOutcome LaneKeepEnv::step(const vehicle::Action& a) {
    if (done_) throw std::logic_error("step called on a finished episode");
    const vehicle::Action prev = state_.last_action;
    state_ = vehicle::step(state_, a, cfg_.friction, cfg_.vparams);
    ++step_;
    ++frame_;

    StepOutcome out;
    const auto err = track::lane_frame({{state_.x, state_.y}, state_.yaw}, route_, s_hint_);
    if (err) {
        last_err_ = *err;
        s_hint_ = err->s;
        out.verdict = vehicle::check_termination(err->d, err->s, route_.lane_width, route_.s_total,
                                                 cfg_.vparams.departure_margin, step_, cfg_.max_steps);
    } else {
        // Out of the searchable corridor entirely; treat as a departure at
        // the corridor edge for reward purposes.
        last_err_.d = std::copysign(3.0 * route_.lane_width, last_err_.d == 0.0 ? 1.0 : last_err_.d);
        out.verdict = vehicle::Termination::lane_departure;
    }
    out.err = last_err_;
    out.reward = reward::step_reward(last_err_, state_, state_.last_action, prev, out.verdict, cfg_.rewardw,
                                     route_.lane_width, cfg_.vparams.max_speed);
    done_ = out.verdict != vehicle::Termination::running;
    out.done = done_;
    out.bootstrap_cut = (out.verdict == vehicle::Termination::lane_departure ||
                         out.verdict == vehicle::Termination::route_complete)
                            ? 1.0
                            : 0.0;
    out.obs = make_obs();
    return out;
}

Obs LaneKeepEnv::make_obs() {
    Obs o;
    double d_hat = last_err_.d;
    double phi_hat = last_err_.phi;
    if (cfg_.need_image || cfg_.perception_obs) {
        o.image = snow::render(state_, route_, occ_, frame_, cfg_.render);
    }
    if (cfg_.perception_obs) {
        // The centerline sits at y ~ -d in the vehicle frame, so the fitted
        // offset estimates -d and its slope estimates -tan(phi).
        const track::CenterlineCoeffs c = predictor_(o.image);
        d_hat = -c.c0;
        phi_hat = -std::atan(c.c1);
    }
    o.kin = {d_hat / cfg_.scales.d, phi_hat / cfg_.scales.phi, state_.v / cfg_.scales.v};
    if (!cfg_.need_image) o.image = snow::RasterImage{};
    return o;
}

}  // namespace arlk::env
